//! Configuration, orchestration of the full recipe, run logging, and the
//! determinism/resume guarantees.
//!
//! Every stage writes plain files into the output directory, so any teacher
//! can be replaced by an externally supplied run file and any stage can be
//! rerun in isolation. All randomness flows from the single `seed` through
//! named sub-streams; together with the per-iteration checkpoint files this
//! makes (config, seed) determine every byte of the triplet files and
//! checkpoints, and makes stop-and-resume at iteration boundaries equal to a
//! straight run.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{crop_corpus, mix_queries, CroppingConfig, MixConfig, PseudoQueryGenerator};
use crate::corpus::{
    load_corpus, read_query_file, validate_query_sources, write_query_file, Corpus, FileFormat,
    QueryRecord,
};
use crate::encoder::{DualEncoderParams, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, load_qrels, write_eval_report, write_qrels, write_run, EvalConfig, EvalReport, Qrels,
};
use crate::seeds::{sub_seed, substream};
use crate::supervision::{
    fuse_pool, FusionConfig, SamplerConfig, Schedule, Strategy, SupervisionPool, FUSED_TEACHER_ID,
};
use crate::teachers::{import_run_file, teacher_run, Bm25Params, Run, Teacher};
use crate::training::{train_schedule, TrainEvent};

use rand::Rng;

/// Input and evaluation file locations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    /// Training queries; required when `augment.mode = "imported"`.
    pub queries: Option<PathBuf>,
    /// Held-out evaluation queries (plain or augmented TSV).
    pub eval_queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
}

/// How training queries are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Cropped,
    Generated,
    Mixed,
    Imported,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    /// Pseudo-queries per passage (generated / mixed modes).
    pub per_passage: usize,
    /// Requested size of the mixed pool; 0 means twice the smaller side.
    pub total: usize,
    pub cropped_fraction: f64,
    pub cropping: CroppingConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Cropped,
            per_passage: 1,
            total: 0,
            cropped_fraction: 0.5,
            cropping: CroppingConfig::default(),
        }
    }
}

/// One teacher of the trajectory, in supervision order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: TeacherKindSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherKindSpec {
    Bm25 {
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// A frozen randomly initialized (or checkpointed) dual encoder. With
    /// `tied = true` both sides share one random table, making the teacher a
    /// random-projection lexical matcher instead of unstructured noise.
    DenseHash {
        seed: u64,
        #[serde(default = "default_hash_buckets")]
        hash_buckets: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        tied: bool,
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
    RunImport {
        path: PathBuf,
    },
}

fn default_k1() -> f64 {
    Bm25Params::default().k1
}

fn default_b() -> f64 {
    Bm25Params::default().b
}

fn default_hash_buckets() -> usize {
    crate::encoder::DEFAULT_HASH_BUCKETS
}

fn default_dim() -> usize {
    crate::encoder::DEFAULT_DIM
}

/// The whole recipe in one file. CLI flags override individual fields;
/// precedence is flags > file > defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub strategy: Strategy,
    pub paths: PathsConfig,
    pub trajectory: Vec<TeacherSpec>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parse a TOML config, resolving relative paths against the file's
    /// directory. Validation is separate so callers can apply overrides
    /// first.
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::invalid("config", format!("{display}: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.output_dir);
        resolve(&mut self.paths.corpus);
        for p in [
            self.paths.queries.as_mut(),
            self.paths.eval_queries.as_mut(),
            self.paths.qrels.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        for spec in &mut self.trajectory {
            match &mut spec.kind {
                TeacherKindSpec::RunImport { path } => resolve(path),
                TeacherKindSpec::DenseHash {
                    checkpoint: Some(path),
                    ..
                } => resolve(path),
                _ => {}
            }
        }
    }

    /// Collect every validation problem at once.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();

        if self.trajectory.is_empty() {
            problems.push("trajectory must have at least one teacher".into());
        }
        let mut seen = std::collections::HashSet::new();
        for spec in &self.trajectory {
            if spec.id == FUSED_TEACHER_ID {
                problems.push(format!("teacher id `{FUSED_TEACHER_ID}` is reserved"));
            }
            if !seen.insert(&spec.id) {
                problems.push(format!("duplicate teacher id `{}`", spec.id));
            }
            match &spec.kind {
                TeacherKindSpec::Bm25 { k1, b } => {
                    if !k1.is_finite() || *k1 < 0.0 || !b.is_finite() || !(0.0..=1.0).contains(b) {
                        problems.push(format!("teacher `{}`: bad bm25 parameters", spec.id));
                    }
                }
                TeacherKindSpec::DenseHash {
                    hash_buckets,
                    dim,
                    checkpoint,
                    ..
                } => {
                    if *hash_buckets == 0 || *dim == 0 {
                        problems.push(format!(
                            "teacher `{}`: hash_buckets and dim must be at least 1",
                            spec.id
                        ));
                    }
                    if let Some(p) = checkpoint {
                        if !p.exists() {
                            problems.push(format!(
                                "teacher `{}`: checkpoint `{}` not found",
                                spec.id,
                                p.display()
                            ));
                        }
                    }
                }
                TeacherKindSpec::RunImport { path } => {
                    if !path.exists() {
                        problems.push(format!(
                            "teacher `{}`: run file `{}` not found",
                            spec.id,
                            path.display()
                        ));
                    }
                }
            }
        }

        if !self.paths.corpus.exists() {
            problems.push(format!(
                "corpus `{}` not found",
                self.paths.corpus.display()
            ));
        }
        match (&self.augment.mode, &self.paths.queries) {
            (AugmentMode::Imported, None) => {
                problems.push("augment.mode = \"imported\" requires paths.queries".into());
            }
            (AugmentMode::Imported, Some(p)) if !p.exists() => {
                problems.push(format!("queries `{}` not found", p.display()));
            }
            _ => {}
        }
        if matches!(self.augment.mode, AugmentMode::Generated | AugmentMode::Mixed)
            && self.augment.per_passage == 0
        {
            problems.push("augment.per_passage must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.augment.cropped_fraction) {
            problems.push("augment.cropped_fraction must lie in [0, 1]".into());
        }
        if let Err(e) = self.augment.cropping.validate() {
            problems.push(e.to_string());
        }

        for p in [&self.paths.eval_queries, &self.paths.qrels].into_iter().flatten() {
            if !p.exists() {
                problems.push(format!("`{}` not found", p.display()));
            }
        }
        if self.paths.eval_queries.is_some() != self.paths.qrels.is_some() {
            problems.push("paths.eval_queries and paths.qrels must be set together".into());
        }
        if self.paths.eval_queries.is_some() && self.eval.holdout > 0 {
            problems.push("set either paths.eval_queries or eval.holdout, not both".into());
        }

        if let Err(e) = self.sampler.validate() {
            problems.push(e.to_string());
        }
        problems.extend(self.schedule.validate());
        if self.schedule.depth < self.sampler.neg_rank_hi {
            problems.push(format!(
                "schedule.depth ({}) must be at least sampler.neg_rank_hi ({})",
                self.schedule.depth, self.sampler.neg_rank_hi
            ));
        }
        problems.extend(self.train.validate());
        if self.strategy == Strategy::Fused {
            let ids: Vec<String> = self.trajectory.iter().map(|t| t.id.clone()).collect();
            if let Err(e) = self.fusion.validate(&ids) {
                problems.push(e.to_string());
            }
        }
        for (name, k) in [
            ("eval.retrieve_k", self.eval.retrieve_k),
            ("eval.mrr_k", self.eval.mrr_k),
            ("eval.recall_k", self.eval.recall_k),
            ("eval.ndcg_k", self.eval.ndcg_k),
            ("eval.success_k", self.eval.success_k),
        ] {
            if k == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        problems
    }

    /// Validate, or return one error listing every problem.
    pub fn validated(self) -> Result<Self> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config { problems })
        }
    }
}

/// Append-only JSONL run log with monotone step numbers.
pub struct RunLog {
    writer: BufWriter<File>,
    path: PathBuf,
    step: u64,
}

#[derive(Serialize)]
struct LogRecord<'a> {
    step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
    kind: &'a str,
    detail: serde_json::Value,
}

impl RunLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(Self {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
            step: 0,
        })
    }

    pub fn record(
        &mut self,
        iteration: Option<usize>,
        kind: &str,
        detail: serde_json::Value,
    ) -> Result<()> {
        self.step += 1;
        let record = LogRecord {
            step: self.step,
            iteration,
            kind,
            detail,
        };
        serde_json::to_writer(&mut self.writer, &record)
            .map_err(|e| Error::invalid("run log", e.to_string()))?;
        self.writer
            .write_all(b"\n")
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::io(self.path.display().to_string(), e))
    }
}

/// SHA-256 of a file, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Build the configured teachers against a corpus.
pub fn build_teachers(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<Teacher>> {
    let mut teachers = Vec::with_capacity(cfg.trajectory.len());
    for spec in &cfg.trajectory {
        let teacher = match &spec.kind {
            TeacherKindSpec::Bm25 { k1, b } => {
                Teacher::bm25(&spec.id, corpus, Bm25Params { k1: *k1, b: *b })?
            }
            TeacherKindSpec::DenseHash {
                seed,
                hash_buckets,
                dim,
                tied,
                checkpoint,
            } => {
                let params = match (checkpoint, tied) {
                    (Some(path), _) => DualEncoderParams::load(path)?,
                    (None, true) => DualEncoderParams::init_tied(*hash_buckets, *dim, *seed),
                    (None, false) => DualEncoderParams::init(*hash_buckets, *dim, *seed),
                };
                Teacher::dense_hash(&spec.id, corpus, params)
            }
            TeacherKindSpec::RunImport { path } => {
                Teacher::run_import(&spec.id, import_run_file(path, &spec.id)?)
            }
        };
        teachers.push(teacher);
    }
    Ok(teachers)
}

/// Produce the training queries for the configured augmentation mode.
pub fn augment_queries(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<QueryRecord>> {
    let queries = match cfg.augment.mode {
        AugmentMode::Cropped => crop_corpus(corpus, &cfg.augment.cropping)?,
        AugmentMode::Generated => {
            let generator = PseudoQueryGenerator::from_corpus(corpus);
            generator.generate_corpus(corpus, cfg.augment.per_passage, sub_seed(cfg.seed, &["generate"]))
        }
        AugmentMode::Mixed => {
            let cropped = crop_corpus(corpus, &cfg.augment.cropping)?;
            let generator = PseudoQueryGenerator::from_corpus(corpus);
            let generated =
                generator.generate_corpus(corpus, cfg.augment.per_passage, sub_seed(cfg.seed, &["generate"]));
            let mix_cfg = MixConfig {
                cropped_fraction: cfg.augment.cropped_fraction,
                seed: sub_seed(cfg.seed, &["mix"]),
            };
            let total = if cfg.augment.total == 0 {
                None
            } else {
                Some(cfg.augment.total)
            };
            mix_queries(&cropped, &generated, &mix_cfg, total)?
        }
        AugmentMode::Imported => {
            let path = cfg.paths.queries.as_ref().expect("validated");
            read_query_file(path)?
        }
    };
    validate_query_sources(&queries, corpus)?;
    Ok(queries)
}

/// Deterministically split off `holdout` queries that carry a source passage;
/// their gold qrels mark the source passage relevant.
pub fn split_holdout(
    queries: Vec<QueryRecord>,
    holdout: usize,
    seed: u64,
) -> Result<(Vec<QueryRecord>, Vec<QueryRecord>, Qrels)> {
    let eligible: Vec<usize> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| q.source_passage_id.is_some())
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < holdout {
        return Err(Error::invalid(
            "holdout",
            format!(
                "requested {holdout} held-out queries, only {} have a source passage",
                eligible.len()
            ),
        ));
    }
    let mut rng = substream(seed, &["holdout"]);
    let mut picked = eligible;
    for i in 0..holdout {
        let j = rng.gen_range(i..picked.len());
        picked.swap(i, j);
    }
    let held: std::collections::HashSet<usize> = picked[..holdout].iter().copied().collect();

    let mut train = Vec::with_capacity(queries.len() - holdout);
    let mut eval_queries = Vec::with_capacity(holdout);
    let mut qrels = Qrels::new();
    for (i, q) in queries.into_iter().enumerate() {
        if held.contains(&i) {
            qrels.insert(&q.id, q.source_passage_id.clone().expect("eligible"), 1);
            eval_queries.push(q);
        } else {
            train.push(q);
        }
    }
    eval_queries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, eval_queries, qrels))
}

/// Label a query set with every teacher, building the supervision pool.
/// Existing run files are reused (their format round-trips exactly);
/// otherwise the run is computed and written.
pub fn label_queries(
    teachers: &[Teacher],
    queries: &[QueryRecord],
    depth: usize,
    runs_dir: &Path,
    log: &mut Option<&mut RunLog>,
) -> Result<SupervisionPool> {
    fs::create_dir_all(runs_dir).map_err(|e| Error::io(runs_dir.display().to_string(), e))?;
    let mut pool = SupervisionPool::new(teachers.iter().map(|t| t.id.clone()).collect(), depth)?;
    for teacher in teachers {
        let path = runs_dir.join(format!("{}.run", teacher.id));
        let run: Run = if path.exists() {
            import_run_file(&path, &teacher.id)?
        } else {
            let run = teacher_run(teacher, queries, depth);
            write_run(&run, &path)?;
            run
        };
        if let Some(log) = log.as_deref_mut() {
            log.record(
                None,
                "label",
                serde_json::json!({
                    "teacher": teacher.id,
                    "queries": run.len(),
                    "artifact": path.display().to_string(),
                    "sha256": sha256_file(&path)?,
                }),
            )?;
        }
        for (_, list) in run {
            pool.insert(list)?;
        }
    }
    Ok(pool)
}

/// Everything a finished recipe leaves behind.
pub struct RecipeOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub triplet_files: Vec<PathBuf>,
    pub student_run: Option<PathBuf>,
    pub report: Option<EvalReport>,
    pub train_query_count: usize,
    pub skipped_draws: usize,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Execute the full recipe: augment -> label -> (fuse) -> train per
/// iteration -> retrieve -> eval. Intermediate artifacts are persisted under
/// `output_dir`; training resumes from the last contiguous per-iteration
/// checkpoint.
pub fn run_recipe(cfg: &PipelineConfig) -> Result<RecipeOutcome> {
    run_stages(cfg, true)
}

/// The recipe up to and including training; the evaluation split is still
/// computed (it shapes the training set) but retrieval and evaluation are
/// skipped.
pub fn run_training(cfg: &PipelineConfig) -> Result<RecipeOutcome> {
    run_stages(cfg, false)
}

fn run_stages(cfg: &PipelineConfig, do_eval: bool) -> Result<RecipeOutcome> {
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(cfg.output_dir.display().to_string(), e))?;
    let mut log = RunLog::open(&cfg.output_dir.join("run_log.jsonl"))?;
    log.record(None, "recipe_start", serde_json::json!({ "seed": cfg.seed }))?;

    // Corpus.
    let corpus = stage(
        "load-corpus",
        load_corpus(&cfg.paths.corpus, FileFormat::from_path(&cfg.paths.corpus)),
    )?;
    log.record(None, "corpus", serde_json::json!({ "passages": corpus.len() }))?;

    // Query augmentation.
    let all_queries = stage("augment", augment_queries(cfg, &corpus))?;

    // Evaluation split: explicit files, a deterministic holdout, or none.
    let (train_queries, eval_set) = if let (Some(qpath), Some(rpath)) =
        (&cfg.paths.eval_queries, &cfg.paths.qrels)
    {
        let eval_queries = stage("eval-split", read_query_file(qpath))?;
        let qrels = stage("eval-split", load_qrels(rpath))?;
        (all_queries, Some((eval_queries, qrels)))
    } else if cfg.eval.holdout > 0 {
        let (train, eval_queries, qrels) = stage(
            "eval-split",
            split_holdout(all_queries, cfg.eval.holdout, cfg.seed),
        )?;
        stage(
            "eval-split",
            write_query_file(&eval_queries, &cfg.output_dir.join("holdout_queries.tsv")),
        )?;
        stage(
            "eval-split",
            write_qrels(&qrels, &cfg.output_dir.join("holdout_qrels.txt")),
        )?;
        (train, Some((eval_queries, qrels)))
    } else {
        (all_queries, None)
    };
    stage(
        "augment",
        write_query_file(&train_queries, &cfg.output_dir.join("train_queries.tsv")),
    )?;
    log.record(
        None,
        "queries",
        serde_json::json!({
            "train": train_queries.len(),
            "eval": eval_set.as_ref().map(|(q, _)| q.len()).unwrap_or(0),
        }),
    )?;

    // Labeling.
    let teachers = stage("label", build_teachers(cfg, &corpus))?;
    let mut pool = stage(
        "label",
        label_queries(
            &teachers,
            &train_queries,
            cfg.schedule.depth,
            &cfg.output_dir.join("runs"),
            &mut Some(&mut log),
        ),
    )?;

    // Fusion.
    if cfg.strategy == Strategy::Fused {
        stage("fuse", fuse_pool(&mut pool, &cfg.fusion))?;
        let mut fused_run = Run::new();
        for qid in pool.query_ids() {
            if let Some(list) = pool.get(qid, FUSED_TEACHER_ID) {
                fused_run.insert(qid.to_string(), list.clone());
            }
        }
        let path = cfg.output_dir.join("runs").join("fused.run");
        stage("fuse", write_run(&fused_run, &path))?;
        log.record(
            None,
            "fuse",
            serde_json::json!({
                "artifact": path.display().to_string(),
                "sha256": sha256_file(&path)?,
            }),
        )?;
    }

    // Training with per-iteration checkpoints and resume.
    let iterations = pool.teacher_count();
    let checkpoint_path = |t: usize| cfg.output_dir.join(format!("checkpoint-iter{t}.bin"));
    let triplet_path = |t: usize| cfg.output_dir.join(format!("triplets-iter{t}.tsv"));

    let mut start_iteration = 1;
    let mut params = DualEncoderParams::init(cfg.train.hash_buckets, cfg.train.dim, cfg.seed);
    while start_iteration <= iterations && checkpoint_path(start_iteration).exists() {
        params = stage("train", DualEncoderParams::load(&checkpoint_path(start_iteration)))?;
        log.record(
            Some(start_iteration),
            "resume",
            serde_json::json!({
                "checkpoint": checkpoint_path(start_iteration).display().to_string(),
            }),
        )?;
        start_iteration += 1;
    }
    // Triplet files for already-checkpointed iterations are regenerated only
    // if missing; emission is independent of the parameters.
    for t in 1..start_iteration {
        if !triplet_path(t).exists() {
            let mut triplets = Vec::new();
            for epoch in 1..=cfg.schedule.epochs_per_iteration {
                let (ts, _) = crate::supervision::emit_epoch_triplets(
                    &pool,
                    &train_queries,
                    cfg.strategy,
                    &cfg.sampler,
                    cfg.schedule.triplets_per_query_per_epoch,
                    cfg.seed,
                    t,
                    epoch,
                );
                triplets.extend(ts);
            }
            stage("train", crate::supervision::write_triplets(&triplets, &triplet_path(t)))?;
        }
    }

    let mut skipped_draws = 0usize;
    if start_iteration <= iterations {
        let (trained, _) = stage(
            "train",
            train_schedule(
                &corpus,
                &train_queries,
                &pool,
                cfg.strategy,
                &cfg.schedule,
                &cfg.sampler,
                &cfg.train,
                cfg.seed,
                params,
                start_iteration,
                0,
                |event| match event {
                    TrainEvent::Skip(skip) => {
                        skipped_draws += 1;
                        log.record(
                            Some(skip.iteration),
                            "skip",
                            serde_json::json!({
                                "epoch": skip.epoch,
                                "query": skip.query_id,
                                "reason": skip.reason,
                            }),
                        )
                    }
                    TrainEvent::Step { iteration, epoch, report } => log.record(
                        Some(iteration),
                        "train_step",
                        serde_json::json!({
                            "epoch": epoch,
                            "step": report.step,
                            "loss": report.mean_loss,
                            "gradient_norm": report.gradient_norm,
                        }),
                    ),
                    TrainEvent::EpochEnd { iteration, epoch, mean_loss, steps } => log.record(
                        Some(iteration),
                        "epoch_end",
                        serde_json::json!({
                            "epoch": epoch,
                            "mean_loss": mean_loss,
                            "steps": steps,
                        }),
                    ),
                    TrainEvent::IterationEnd { iteration, params, triplets } => {
                        params.save(&checkpoint_path(iteration))?;
                        crate::supervision::write_triplets(triplets, &triplet_path(iteration))?;
                        log.record(
                            Some(iteration),
                            "checkpoint",
                            serde_json::json!({
                                "checkpoint": checkpoint_path(iteration).display().to_string(),
                                "checkpoint_sha256": sha256_file(&checkpoint_path(iteration))?,
                                "triplets": triplet_path(iteration).display().to_string(),
                                "triplets_sha256": sha256_file(&triplet_path(iteration))?,
                            }),
                        )
                    }
                },
            ),
        )?;
        params = trained;
    }

    // Retrieval and evaluation over the eval split, when present.
    let mut student_run = None;
    let mut report = None;
    if let (true, Some((eval_queries, qrels))) = (do_eval, &eval_set) {
        let run = crate::eval::retrieve_run(
            &params,
            &corpus,
            eval_queries,
            cfg.eval.retrieve_k,
            "student",
        );
        let run_path = cfg.output_dir.join("student.run");
        stage("retrieve", write_run(&run, &run_path))?;
        log.record(
            None,
            "retrieve",
            serde_json::json!({
                "artifact": run_path.display().to_string(),
                "sha256": sha256_file(&run_path)?,
            }),
        )?;
        student_run = Some(run_path);

        let eval_report = evaluate(&run, qrels, &cfg.eval);
        let eval_path = cfg.output_dir.join("eval.tsv");
        stage("eval", write_eval_report(&eval_report, &eval_path))?;
        log.record(
            None,
            "eval",
            serde_json::json!({
                "metrics": eval_report.metrics,
                "artifact": eval_path.display().to_string(),
            }),
        )?;
        report = Some(eval_report);
    }

    log.record(None, "recipe_end", serde_json::json!({}))?;
    Ok(RecipeOutcome {
        checkpoints: (1..=iterations).map(checkpoint_path).collect(),
        final_checkpoint: checkpoint_path(iterations),
        triplet_files: (1..=iterations).map(triplet_path).collect(),
        student_run,
        report,
        train_query_count: train_queries.len(),
        skipped_draws,
    })
}

/// Grid-search fusion weights over {0, step, 2*step, ..., 1} per teacher,
/// maximizing MRR@`mrr_k` of the fused lists against `qrels`. Among ties the
/// lexicographically greatest weight vector (in trajectory order) wins,
/// making the choice deterministic under the score-scale invariance of
/// fusion.
pub fn tune_fusion(
    pool: &SupervisionPool,
    qrels: &Qrels,
    grid_step: f64,
    mrr_k: usize,
) -> Result<(FusionConfig, f64)> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::invalid("tune-fusion", "grid step must lie in (0, 1]"));
    }
    let levels = (1.0 / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=levels).map(|i| (i as f64) * grid_step).collect();
    let teachers = pool.teachers().to_vec();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut assignment = vec![0usize; teachers.len()];
    loop {
        let weights: Vec<f64> = assignment.iter().map(|&i| grid[i]).collect();
        if weights.iter().any(|&w| w > 0.0) {
            let cfg = FusionConfig {
                weights: teachers
                    .iter()
                    .cloned()
                    .zip(weights.iter().copied())
                    .collect(),
            };
            let mut run = Run::new();
            for qid in pool.query_ids() {
                let lists: Vec<&crate::teachers::RankedList> = teachers
                    .iter()
                    .filter_map(|t| pool.get(qid, t))
                    .collect();
                if lists.is_empty() {
                    continue;
                }
                run.insert(
                    qid.to_string(),
                    crate::supervision::fuse_lists(&lists, &cfg, pool.depth())?,
                );
            }
            let mrr = crate::eval::mrr_at_k(&run, qrels, mrr_k);
            let better = match &best {
                None => true,
                // Ascending lexicographic enumeration, so replacing on ties
                // keeps the lexicographically greatest vector.
                Some((_, best_mrr)) => mrr >= *best_mrr,
            };
            if better {
                best = Some((weights, mrr));
            }
        }
        // Odometer over the grid, rightmost digit fastest.
        let mut pos = assignment.len();
        loop {
            if pos == 0 {
                let (weights, mrr) = best.expect("grid contains a nonzero assignment");
                let cfg = FusionConfig {
                    weights: teachers.into_iter().zip(weights).collect(),
                };
                return Ok((cfg, mrr));
            }
            pos -= 1;
            if assignment[pos] < levels {
                assignment[pos] += 1;
                for a in &mut assignment[pos + 1..] {
                    *a = 0;
                }
                break;
            }
        }
    }
}

/// Write a tuned fusion config as a TOML fragment.
pub fn write_fusion_weights(cfg: &FusionConfig, mrr: f64, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut w =
        BufWriter::new(File::create(path).map_err(|e| Error::io(display.clone(), e))?);
    writeln!(w, "# dev MRR@10: {mrr}").map_err(|e| Error::io(display.clone(), e))?;
    writeln!(w, "[fusion.weights]").map_err(|e| Error::io(display.clone(), e))?;
    for (teacher, weight) in &cfg.weights {
        writeln!(w, "{teacher} = {weight}").map_err(|e| Error::io(display.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(display, e))
}

/// Serialize a config back to TOML (used by config round-trip checks and
/// `--dump-config`).
pub fn config_to_toml(cfg: &PipelineConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::invalid("config", e.to_string()))
}
