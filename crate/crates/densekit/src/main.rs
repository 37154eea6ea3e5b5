use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use densekit::augment::{crop_corpus, mix_queries, CroppingConfig, MixConfig, PseudoQueryGenerator};
use densekit::corpus::{load_corpus, read_query_file, write_query_file, FileFormat};
use densekit::encoder::DualEncoderParams;
use densekit::error::Error;
use densekit::eval::{evaluate, load_qrels, retrieve_run, write_eval_report, write_run, EvalConfig};
use densekit::pipeline::{
    augment_queries, build_teachers, label_queries, run_recipe, run_training, sha256_file,
    tune_fusion, write_fusion_weights, PipelineConfig, RunLog,
};
use densekit::supervision::{
    emit_epoch_triplets, fuse_pool, positive_probability, supervision_diversity, write_triplets,
    Strategy, SupervisionPool, FUSED_TEACHER_ID,
};
use densekit::teachers::{build_inverted_index, Run};

/// Dense retrieval training and evaluation toolkit.
#[derive(Parser)]
#[command(name = "densekit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by config-driven subcommands. Flags override config
/// fields; precedence is flags > file > defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the supervision strategy (fused|uniform|progressive).
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override the labeling depth K.
    #[arg(long)]
    depth: Option<usize>,
    /// Override epochs per iteration.
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(strategy) = self.strategy {
            cfg.strategy = strategy;
        }
        if let Some(depth) = self.depth {
            cfg.schedule.depth = depth;
        }
        if let Some(epochs) = self.epochs {
            cfg.schedule.epochs_per_iteration = epochs;
        }
        Ok(cfg.validated()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Crop corpus passages into sentence queries.
    Crop {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 3)]
        min_tokens: usize,
        #[arg(long, default_value_t = 64)]
        max_tokens: usize,
    },
    /// Generate pseudo-queries from corpus passages.
    Generate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 1)]
        per_passage: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mix cropped and generated query files.
    Mix {
        #[arg(long)]
        cropped: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        cropped_fraction: f64,
        /// Requested total; 0 means twice the smaller pool.
        #[arg(long, default_value_t = 0)]
        total: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build and serialize the inverted index of a corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
    /// Label training queries with every trajectory teacher (one run file
    /// per teacher).
    Label(ConfigArgs),
    /// Fuse the labeled runs into a single run file.
    Fuse(ConfigArgs),
    /// Emit per-iteration triplet files without training.
    Sample(ConfigArgs),
    /// Train the student encoder, checkpointing per iteration.
    Train(ConfigArgs),
    /// Retrieve top-k with a student checkpoint.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long, default_value = "student")]
        tag: String,
    },
    /// Evaluate a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Output TSV; prints to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        mrr_k: usize,
        #[arg(long, default_value_t = 1000)]
        recall_k: usize,
        #[arg(long, default_value_t = 10)]
        ndcg_k: usize,
        #[arg(long, default_value_t = 5)]
        success_k: usize,
    },
    /// Positive-sampling probabilities for one query at iteration T.
    Prob {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        query_id: String,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Mean size of the union of top-k positives over the first T teachers.
    Diversity {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Grid-search fusion weights on the dev queries, maximizing MRR@10.
    TuneFusion {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0.1)]
        grid_step: f64,
        /// Output TOML fragment; prints to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Execute the full recipe: augment, label, fuse, train, retrieve, eval.
    Run(ConfigArgs),
}

fn parse_format(path: &std::path::Path, flag: &Option<String>) -> Result<FileFormat> {
    Ok(match flag {
        Some(s) => s.parse::<FileFormat>()?,
        None => FileFormat::from_path(path),
    })
}

/// Rebuild the supervision pool from the run files a previous `label` left in
/// the output directory.
fn pool_from_runs(cfg: &PipelineConfig) -> Result<SupervisionPool> {
    let runs_dir = cfg.output_dir.join("runs");
    let mut pool = SupervisionPool::new(
        cfg.trajectory.iter().map(|t| t.id.clone()).collect(),
        cfg.schedule.depth,
    )?;
    for spec in &cfg.trajectory {
        let path = runs_dir.join(format!("{}.run", spec.id));
        if !path.exists() {
            bail!(
                "run file `{}` not found; run `densekit label` first",
                path.display()
            );
        }
        for (_, list) in densekit::teachers::import_run_file(&path, &spec.id)? {
            pool.insert(list)?;
        }
    }
    Ok(pool)
}

fn train_queries_for(cfg: &PipelineConfig) -> Result<Vec<densekit::corpus::QueryRecord>> {
    let path = cfg.output_dir.join("train_queries.tsv");
    if path.exists() {
        Ok(read_query_file(&path)?)
    } else {
        let corpus = load_corpus(&cfg.paths.corpus, FileFormat::from_path(&cfg.paths.corpus))?;
        Ok(augment_queries(cfg, &corpus)?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Surface the failing stage name for recipe errors.
            if let Some(Error::Stage { stage, .. }) = err.downcast_ref::<Error>() {
                eprintln!("failed stage: {stage}");
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Crop {
            corpus,
            output,
            format,
            min_tokens,
            max_tokens,
        } => {
            let format = parse_format(&corpus, &format)?;
            let corpus = load_corpus(&corpus, format)?;
            let cfg = CroppingConfig {
                min_tokens,
                max_tokens,
                ..CroppingConfig::default()
            };
            let queries = crop_corpus(&corpus, &cfg)?;
            write_query_file(&queries, &output)?;
            println!("crop: {} queries -> {}", queries.len(), output.display());
            Ok(())
        }
        Command::Generate {
            corpus,
            output,
            format,
            per_passage,
            seed,
        } => {
            let format = parse_format(&corpus, &format)?;
            let corpus = load_corpus(&corpus, format)?;
            let generator = PseudoQueryGenerator::from_corpus(&corpus);
            let queries = generator.generate_corpus(&corpus, per_passage, seed);
            write_query_file(&queries, &output)?;
            println!("generate: {} queries -> {}", queries.len(), output.display());
            Ok(())
        }
        Command::Mix {
            cropped,
            generated,
            output,
            cropped_fraction,
            total,
            seed,
        } => {
            let cropped = read_query_file(&cropped)?;
            let generated = read_query_file(&generated)?;
            let cfg = MixConfig {
                cropped_fraction,
                seed,
            };
            let total = if total == 0 { None } else { Some(total) };
            let mixed = mix_queries(&cropped, &generated, &cfg, total)?;
            write_query_file(&mixed, &output)?;
            println!("mix: {} queries -> {}", mixed.len(), output.display());
            Ok(())
        }
        Command::Index {
            corpus,
            output,
            format,
        } => {
            let format = parse_format(&corpus, &format)?;
            let corpus = load_corpus(&corpus, format)?;
            let index = build_inverted_index(&corpus)?;
            let json = serde_json::to_string(&index).context("serialize index")?;
            std::fs::write(&output, json).with_context(|| output.display().to_string())?;
            println!(
                "index: {} passages, {} terms -> {}",
                index.doc_count,
                index.postings.len(),
                output.display()
            );
            Ok(())
        }
        Command::Label(args) => {
            let cfg = args.load()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let corpus = load_corpus(&cfg.paths.corpus, FileFormat::from_path(&cfg.paths.corpus))?;
            let queries = augment_queries(&cfg, &corpus)?;
            write_query_file(&queries, &cfg.output_dir.join("train_queries.tsv"))?;
            let teachers = build_teachers(&cfg, &corpus)?;
            let mut log = RunLog::open(&cfg.output_dir.join("run_log.jsonl"))?;
            let pool = label_queries(
                &teachers,
                &queries,
                cfg.schedule.depth,
                &cfg.output_dir.join("runs"),
                &mut Some(&mut log),
            )?;
            println!(
                "label: {} teachers x {} queries, {} lists",
                teachers.len(),
                queries.len(),
                pool.list_count()
            );
            Ok(())
        }
        Command::Fuse(args) => {
            let cfg = args.load()?;
            let mut pool = pool_from_runs(&cfg)?;
            fuse_pool(&mut pool, &cfg.fusion)?;
            let mut fused = Run::new();
            for qid in pool.query_ids() {
                if let Some(list) = pool.get(qid, FUSED_TEACHER_ID) {
                    fused.insert(qid.to_string(), list.clone());
                }
            }
            let path = cfg.output_dir.join("runs").join("fused.run");
            write_run(&fused, &path)?;
            println!("fuse: {} queries -> {}", fused.len(), path.display());
            Ok(())
        }
        Command::Sample(args) => {
            let cfg = args.load()?;
            let pool = pool_from_runs(&cfg)?;
            let queries = train_queries_for(&cfg)?;
            let mut total = 0;
            for iteration in 1..=pool.teacher_count() {
                let mut triplets = Vec::new();
                for epoch in 1..=cfg.schedule.epochs_per_iteration {
                    let (ts, _) = emit_epoch_triplets(
                        &pool,
                        &queries,
                        cfg.strategy,
                        &cfg.sampler,
                        cfg.schedule.triplets_per_query_per_epoch,
                        cfg.seed,
                        iteration,
                        epoch,
                    );
                    triplets.extend(ts);
                }
                let path = cfg.output_dir.join(format!("triplets-iter{iteration}.tsv"));
                write_triplets(&triplets, &path)?;
                total += triplets.len();
                println!(
                    "sample: iteration {iteration}: {} triplets -> {}",
                    triplets.len(),
                    path.display()
                );
            }
            println!("sample: {total} triplets total");
            Ok(())
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let outcome = run_training(&cfg)?;
            println!(
                "trained on {} queries ({} skipped draws)",
                outcome.train_query_count, outcome.skipped_draws
            );
            for path in &outcome.checkpoints {
                println!("checkpoint: {} sha256={}", path.display(), sha256_file(path)?);
            }
            Ok(())
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let outcome = run_recipe(&cfg)?;
            println!(
                "trained on {} queries ({} skipped draws)",
                outcome.train_query_count, outcome.skipped_draws
            );
            for path in &outcome.checkpoints {
                println!("checkpoint: {} sha256={}", path.display(), sha256_file(path)?);
            }
            if let Some(report) = &outcome.report {
                for (metric, value) in &report.metrics {
                    println!("{metric}\t{value:.5}");
                }
            }
            Ok(())
        }
        Command::Retrieve {
            checkpoint,
            corpus,
            queries,
            output,
            k,
            tag,
        } => {
            let params = DualEncoderParams::load(&checkpoint)?;
            let corpus = load_corpus(&corpus, FileFormat::from_path(&corpus))?;
            let queries = read_query_file(&queries)?;
            let run = retrieve_run(&params, &corpus, &queries, k, &tag);
            write_run(&run, &output)?;
            println!("retrieve: {} queries -> {}", run.len(), output.display());
            Ok(())
        }
        Command::Eval {
            run,
            qrels,
            output,
            mrr_k,
            recall_k,
            ndcg_k,
            success_k,
        } => {
            let run = densekit::teachers::import_run_file(&run, "run")?;
            let qrels = load_qrels(&qrels)?;
            let cfg = EvalConfig {
                mrr_k,
                recall_k,
                ndcg_k,
                success_k,
                ..EvalConfig::default()
            };
            let report = evaluate(&run, &qrels, &cfg);
            match output {
                Some(path) => write_eval_report(&report, &path)?,
                None => {
                    for (metric, value) in &report.metrics {
                        println!("{metric}\t{value}");
                    }
                }
            }
            Ok(())
        }
        Command::Prob {
            config,
            query_id,
            iteration,
            k,
        } => {
            let cfg = config.load()?;
            let pool = pool_from_runs(&cfg)?;
            for (passage_id, probability) in positive_probability(&pool, &query_id, iteration, k) {
                println!("{passage_id}\t{probability}");
            }
            Ok(())
        }
        Command::Diversity {
            config,
            iteration,
            k,
        } => {
            let cfg = config.load()?;
            let pool = pool_from_runs(&cfg)?;
            println!("{}", supervision_diversity(&pool, iteration, k));
            Ok(())
        }
        Command::TuneFusion {
            config,
            grid_step,
            output,
        } => {
            let cfg = config.load()?;
            let Some((dev_path, qrels_path)) = cfg
                .paths
                .eval_queries
                .as_ref()
                .zip(cfg.paths.qrels.as_ref())
            else {
                bail!("tune-fusion needs paths.eval_queries and paths.qrels");
            };
            let corpus = load_corpus(&cfg.paths.corpus, FileFormat::from_path(&cfg.paths.corpus))?;
            let dev_queries = read_query_file(dev_path)?;
            let qrels = load_qrels(qrels_path)?;
            let teachers = build_teachers(&cfg, &corpus)?;
            let pool = label_queries(
                &teachers,
                &dev_queries,
                cfg.schedule.depth,
                &cfg.output_dir.join("dev_runs"),
                &mut None,
            )?;
            let (weights, mrr) = tune_fusion(&pool, &qrels, grid_step, cfg.eval.mrr_k)?;
            match output {
                Some(path) => {
                    write_fusion_weights(&weights, mrr, &path)?;
                    println!("tune-fusion: MRR@{} = {mrr:.5} -> {}", cfg.eval.mrr_k, path.display());
                }
                None => {
                    println!("# dev MRR@{}: {mrr}", cfg.eval.mrr_k);
                    println!("[fusion.weights]");
                    for (teacher, weight) in &weights.weights {
                        println!("{teacher} = {weight}");
                    }
                }
            }
            Ok(())
        }
    }
}
