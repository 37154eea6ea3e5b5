//! The training loop: drives the supervision stream through SGD steps,
//! iteration by iteration, with hooks for checkpointing and logging.
//!
//! Randomness comes only from named sub-streams of the global seed, keyed by
//! (iteration, epoch, query), so an iteration's work depends solely on the
//! parameters it starts from plus the configuration. That is what makes
//! stop-and-resume at iteration boundaries byte-equivalent to a straight run.

use std::collections::HashMap;

use crate::corpus::{tokenize, Corpus, QueryRecord, TokenSequence, PASSAGE_MAX_TOKENS, QUERY_MAX_TOKENS};
use crate::encoder::{train_step, DualEncoderParams, LossReport, ResolvedTriplet, TrainConfig};
use crate::error::{Error, Result};
use crate::supervision::{
    emit_epoch_triplets, SamplerConfig, Schedule, SkipRecord, Strategy, SupervisionPool, Triplet,
};

/// Progress callbacks from [`train_schedule`].
pub enum TrainEvent<'a> {
    /// One SGD step finished.
    Step {
        iteration: usize,
        epoch: usize,
        report: &'a LossReport,
    },
    /// A query produced no triplet this epoch.
    Skip(&'a SkipRecord),
    EpochEnd {
        iteration: usize,
        epoch: usize,
        mean_loss: f64,
        steps: usize,
    },
    /// An iteration finished; `params` is the state to checkpoint and
    /// `triplets` the full stream it consumed.
    IterationEnd {
        iteration: usize,
        params: &'a DualEncoderParams,
        triplets: &'a [Triplet],
    },
}

/// Resolves triplet ids to token sequences, caching per distinct text.
struct Resolver<'a> {
    corpus: &'a Corpus,
    queries: HashMap<&'a str, &'a QueryRecord>,
    query_tokens: HashMap<String, TokenSequence>,
    passage_tokens: HashMap<String, TokenSequence>,
}

impl<'a> Resolver<'a> {
    fn new(corpus: &'a Corpus, queries: &'a [QueryRecord]) -> Self {
        Self {
            corpus,
            queries: queries.iter().map(|q| (q.id.as_str(), q)).collect(),
            query_tokens: HashMap::new(),
            passage_tokens: HashMap::new(),
        }
    }

    fn resolve(&mut self, triplet: &Triplet) -> Result<ResolvedTriplet> {
        let query = self
            .queries
            .get(triplet.query_id.as_str())
            .ok_or_else(|| Error::invalid("triplet", format!("unknown query `{}`", triplet.query_id)))?;
        if !self.query_tokens.contains_key(&triplet.query_id) {
            self.query_tokens.insert(
                triplet.query_id.clone(),
                tokenize(&query.text, QUERY_MAX_TOKENS),
            );
        }
        for id in [&triplet.positive_id, &triplet.negative_id] {
            if !self.passage_tokens.contains_key(id) {
                let passage = self
                    .corpus
                    .get(id)
                    .ok_or_else(|| Error::invalid("triplet", format!("unknown passage `{id}`")))?;
                self.passage_tokens
                    .insert(id.clone(), tokenize(&passage.text, PASSAGE_MAX_TOKENS));
            }
        }
        Ok(ResolvedTriplet {
            query_id: triplet.query_id.clone(),
            positive_id: triplet.positive_id.clone(),
            negative_id: triplet.negative_id.clone(),
            query_tokens: self.query_tokens[&triplet.query_id].clone(),
            positive_tokens: self.passage_tokens[&triplet.positive_id].clone(),
            negative_tokens: self.passage_tokens[&triplet.negative_id].clone(),
        })
    }
}

/// Train the student over iterations `start_iteration..=pool.teacher_count()`
/// starting from `params`, emitting [`TrainEvent`]s along the way. Returns
/// the final parameters and the global step count.
///
/// Passing `start_iteration > 1` with the checkpoint of iteration
/// `start_iteration - 1` resumes a run; the result is identical to training
/// straight through.
#[allow(clippy::too_many_arguments)]
pub fn train_schedule(
    corpus: &Corpus,
    queries: &[QueryRecord],
    pool: &SupervisionPool,
    strategy: Strategy,
    schedule: &Schedule,
    sampler: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut params: DualEncoderParams,
    start_iteration: usize,
    first_step: usize,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(DualEncoderParams, usize)> {
    sampler.validate()?;
    let mut resolver = Resolver::new(corpus, queries);
    let mut step = first_step;
    for iteration in start_iteration..=pool.teacher_count() {
        let mut iteration_triplets: Vec<Triplet> = Vec::new();
        for epoch in 1..=schedule.epochs_per_iteration {
            let (triplets, skips) = emit_epoch_triplets(
                pool,
                queries,
                strategy,
                sampler,
                schedule.triplets_per_query_per_epoch,
                seed,
                iteration,
                epoch,
            );
            for skip in &skips {
                on_event(TrainEvent::Skip(skip))?;
            }
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0usize;
            for chunk in triplets.chunks(cfg.batch_size) {
                let batch: Vec<ResolvedTriplet> = chunk
                    .iter()
                    .map(|t| resolver.resolve(t))
                    .collect::<Result<_>>()?;
                step += 1;
                let report = train_step(&batch, &mut params, cfg, step)?;
                epoch_loss += report.mean_loss;
                epoch_steps += 1;
                on_event(TrainEvent::Step {
                    iteration,
                    epoch,
                    report: &report,
                })?;
            }
            on_event(TrainEvent::EpochEnd {
                iteration,
                epoch,
                mean_loss: if epoch_steps == 0 {
                    0.0
                } else {
                    epoch_loss / epoch_steps as f64
                },
                steps: epoch_steps,
            })?;
            iteration_triplets.extend(triplets);
        }
        on_event(TrainEvent::IterationEnd {
            iteration,
            params: &params,
            triplets: &iteration_triplets,
        })?;
    }
    Ok((params, step))
}

/// Train with no observers; the plain library entry point.
#[allow(clippy::too_many_arguments)]
pub fn train(
    corpus: &Corpus,
    queries: &[QueryRecord],
    pool: &SupervisionPool,
    strategy: Strategy,
    schedule: &Schedule,
    sampler: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DualEncoderParams> {
    let params = DualEncoderParams::init(cfg.hash_buckets, cfg.dim, seed);
    let (params, _) = train_schedule(
        corpus, queries, pool, strategy, schedule, sampler, cfg, seed, params, 1, 0, |_| Ok(()),
    )?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, Passage};
    use crate::teachers::{Bm25Params, Teacher};

    fn tiny_world() -> (Corpus, Vec<QueryRecord>, SupervisionPool) {
        let mut corpus = Corpus::new();
        let texts = [
            "alpha beta gamma delta epsilon",
            "zeta eta theta iota kappa",
            "lambda mu nu xi omicron",
            "pi rho sigma tau upsilon",
            "phi chi psi omega alpha",
            "beta delta zeta theta lambda",
            "mu xi pi sigma upsilon phi",
            "gamma iota nu rho tau",
            "epsilon kappa omicron chi omega",
            "alpha zeta lambda pi phi beta",
            "eta mu rho chi gamma",
            "delta iota xi tau omega",
        ];
        for (i, text) in texts.iter().enumerate() {
            corpus
                .push(Passage {
                    id: format!("d{i:02}"),
                    text: text.to_string(),
                })
                .unwrap();
        }
        let queries: Vec<QueryRecord> = corpus
            .iter()
            .map(|p| QueryRecord {
                id: format!("{}#s1", p.id),
                text: p.text.clone(),
                origin: Origin::Cropped,
                source_passage_id: Some(p.id.clone()),
            })
            .collect();

        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        let mut pool = SupervisionPool::new(vec!["sparse".into()], 12).unwrap();
        for q in &queries {
            pool.insert(teacher.retrieve(q, 12)).unwrap();
        }
        (corpus, queries, pool)
    }

    fn small_cfg() -> (Schedule, SamplerConfig, TrainConfig) {
        let schedule = Schedule {
            epochs_per_iteration: 2,
            triplets_per_query_per_epoch: 1,
            depth: 12,
        };
        // Lists are depth 12 >= pos_top_k + 5, so negatives come from the tail.
        let sampler = SamplerConfig {
            pos_top_k: 3,
            neg_rank_lo: 8,
            neg_rank_hi: 12,
        };
        let train_cfg = TrainConfig {
            batch_size: 4,
            hash_buckets: 1 << 10,
            dim: 16,
            ..TrainConfig::default()
        };
        (schedule, sampler, train_cfg)
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (corpus, queries, pool) = tiny_world();
        let (schedule, sampler, cfg) = small_cfg();
        let a = train(&corpus, &queries, &pool, Strategy::Progressive, &schedule, &sampler, &cfg, 5)
            .unwrap();
        let b = train(&corpus, &queries, &pool, Strategy::Progressive, &schedule, &sampler, &cfg, 5)
            .unwrap();
        assert_eq!(a, b);
        let c = train(&corpus, &queries, &pool, Strategy::Progressive, &schedule, &sampler, &cfg, 6)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn seeded_run_reduces_loss() {
        let (corpus, queries, pool) = tiny_world();
        let (mut schedule, sampler, cfg) = small_cfg();
        schedule.epochs_per_iteration = 25;
        let mut first = None;
        let mut last = 0.0;
        let params = DualEncoderParams::init(cfg.hash_buckets, cfg.dim, 5);
        train_schedule(
            &corpus,
            &queries,
            &pool,
            Strategy::Progressive,
            &schedule,
            &sampler,
            &cfg,
            5,
            params,
            1,
            0,
            |event| {
                if let TrainEvent::Step { report, .. } = event {
                    if first.is_none() {
                        first = Some(report.mean_loss);
                    }
                    last = report.mean_loss;
                }
                Ok(())
            },
        )
        .unwrap();
        assert!(
            last < first.unwrap(),
            "loss did not drop: {} -> {last}",
            first.unwrap()
        );
    }

    #[test]
    fn resume_at_iteration_boundary_matches_straight_run() {
        let (corpus, queries, mut pool_src) = tiny_world();
        // Two-teacher pool: duplicate the sparse lists under a second id.
        let mut pool = SupervisionPool::new(vec!["sparse".into(), "copy".into()], 12).unwrap();
        let ids: Vec<String> = pool_src.query_ids().map(|s| s.to_string()).collect();
        for qid in &ids {
            let list = pool_src.get(qid, "sparse").unwrap().clone();
            let mut copy = list.clone();
            copy.teacher_id = "copy".into();
            pool.insert(list).unwrap();
            pool.insert(copy).unwrap();
        }
        pool_src = pool;

        let (schedule, sampler, cfg) = small_cfg();
        let seed = 17;
        let init = DualEncoderParams::init(cfg.hash_buckets, cfg.dim, seed);

        // Straight run, capturing the checkpoint after iteration 1.
        let mut after_iter1 = None;
        let (straight, steps) = train_schedule(
            &corpus,
            &queries,
            &pool_src,
            Strategy::Progressive,
            &schedule,
            &sampler,
            &cfg,
            seed,
            init.clone(),
            1,
            0,
            |event| {
                if let TrainEvent::IterationEnd { iteration: 1, params, .. } = event {
                    after_iter1 = Some(params.clone());
                }
                Ok(())
            },
        )
        .unwrap();

        // Resume from the captured checkpoint; the step counter offset does
        // not influence parameters.
        let (resumed, _) = train_schedule(
            &corpus,
            &queries,
            &pool_src,
            Strategy::Progressive,
            &schedule,
            &sampler,
            &cfg,
            seed,
            after_iter1.unwrap(),
            2,
            0,
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(straight, resumed);
        assert!(steps > 0);
    }
}
