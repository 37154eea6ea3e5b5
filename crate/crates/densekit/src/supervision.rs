//! Turning N teacher ranked lists per query into training triplets.
//!
//! A [`SupervisionPool`] holds, for each query, up to one depth-K ranked list
//! per teacher, with the teachers in trajectory order. Supervision for a
//! query is chosen per draw by one of three strategies:
//!
//! * fused — a precomputed weighted fusion of all teacher lists;
//! * uniform — one teacher sampled uniformly from all N;
//! * progressive — one teacher sampled uniformly from the first T, where T is
//!   the current training iteration, so later teachers' labels only appear in
//!   later iterations.
//!
//! From the chosen list a triplet is formed by sampling a positive uniformly
//! from the top ranks and a hard negative uniformly from a deeper rank
//! window.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::error::{Error, Result};
use crate::seeds::substream;
use crate::teachers::RankedList;

/// Reserved teacher id for fused lists.
pub const FUSED_TEACHER_ID: &str = "fused";

/// Per-query collection of teacher ranked lists at depth K, in trajectory
/// order.
#[derive(Debug, Clone)]
pub struct SupervisionPool {
    teachers: Vec<String>,
    depth: usize,
    lists: HashMap<(String, String), RankedList>,
    query_ids: BTreeSet<String>,
}

impl SupervisionPool {
    /// Create an empty pool for a trajectory. Teacher ids must be distinct
    /// and none may be the reserved id `fused`.
    pub fn new(teachers: Vec<String>, depth: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &teachers {
            if t == FUSED_TEACHER_ID {
                return Err(Error::invalid(
                    "trajectory",
                    format!("`{FUSED_TEACHER_ID}` is a reserved teacher id"),
                ));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::DuplicateId {
                    what: "teacher",
                    id: t.clone(),
                });
            }
        }
        if teachers.is_empty() {
            return Err(Error::invalid("trajectory", "no teachers"));
        }
        if depth == 0 {
            return Err(Error::invalid("pool", "depth must be at least 1"));
        }
        Ok(Self {
            teachers,
            depth,
            lists: HashMap::new(),
            query_ids: BTreeSet::new(),
        })
    }

    pub fn teachers(&self) -> &[String] {
        &self.teachers
    }

    /// Number of teachers N.
    pub fn teacher_count(&self) -> usize {
        self.teachers.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Store a list, truncating it to the pool depth. The teacher must be in
    /// the trajectory (or `fused`).
    pub fn insert(&mut self, list: RankedList) -> Result<()> {
        if list.teacher_id != FUSED_TEACHER_ID
            && !self.teachers.contains(&list.teacher_id)
        {
            return Err(Error::UnknownTeacher {
                id: list.teacher_id.clone(),
            });
        }
        list.validate()?;
        let list = list.truncated(self.depth);
        self.query_ids.insert(list.query_id.clone());
        self.lists
            .insert((list.query_id.clone(), list.teacher_id.clone()), list);
        Ok(())
    }

    pub fn get(&self, query_id: &str, teacher_id: &str) -> Option<&RankedList> {
        self.lists
            .get(&(query_id.to_string(), teacher_id.to_string()))
    }

    /// All query ids with at least one stored list, in sorted order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.query_ids.iter().map(|s| s.as_str())
    }

    pub fn list_count(&self) -> usize {
        self.lists.len()
    }
}

/// Positive / hard-negative rank windows for triplet sampling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub pos_top_k: usize,
    pub neg_rank_lo: usize,
    pub neg_rank_hi: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            pos_top_k: 10,
            neg_rank_lo: 46,
            neg_rank_hi: 50,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.pos_top_k
            && self.pos_top_k < self.neg_rank_lo
            && self.neg_rank_lo <= self.neg_rank_hi)
        {
            return Err(Error::invalid(
                "sampler config",
                format!(
                    "need 1 <= pos_top_k < neg_rank_lo <= neg_rank_hi, got {} / {} / {}",
                    self.pos_top_k, self.neg_rank_lo, self.neg_rank_hi
                ),
            ));
        }
        Ok(())
    }
}

/// Linear-fusion weights per teacher.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FusionConfig {
    pub weights: BTreeMap<String, f64>,
}

impl FusionConfig {
    /// Weights must cover every fused teacher, be non-negative, and at least
    /// one must be positive.
    pub fn validate(&self, teachers: &[String]) -> Result<()> {
        for t in teachers {
            match self.weights.get(t) {
                None => {
                    return Err(Error::invalid(
                        "fusion config",
                        format!("no weight for teacher `{t}`"),
                    ));
                }
                Some(w) if !w.is_finite() || *w < 0.0 => {
                    return Err(Error::invalid(
                        "fusion config",
                        format!("weight for `{t}` must be finite and >= 0"),
                    ));
                }
                _ => {}
            }
        }
        if !teachers.iter().any(|t| self.weights[t] > 0.0) {
            return Err(Error::invalid("fusion config", "all weights are zero"));
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query_id: String,
    pub positive_id: String,
    pub negative_id: String,
    /// Teacher id, or `fused`.
    pub source_teacher: String,
    pub iteration: usize,
}

/// Linear score fusion. Each list's scores are min-max normalized to [0, 1]
/// over its own entries (a single entry, or an all-equal list, normalizes to
/// 1), a passage absent from a list contributes 0 for that teacher, and the
/// fused score is the weighted sum. Top-K by fused score, ties broken by
/// ascending passage id.
pub fn fuse_lists(lists: &[&RankedList], cfg: &FusionConfig, k: usize) -> Result<RankedList> {
    let Some(first) = lists.first() else {
        return Err(Error::invalid("fusion", "no lists to fuse"));
    };
    let query_id = &first.query_id;
    for list in lists {
        if list.query_id != *query_id {
            return Err(Error::invalid(
                "fusion",
                format!(
                    "lists for different queries: `{}` vs `{}`",
                    query_id, list.query_id
                ),
            ));
        }
        if !cfg.weights.contains_key(&list.teacher_id) {
            return Err(Error::invalid(
                "fusion",
                format!("no weight for teacher `{}`", list.teacher_id),
            ));
        }
    }

    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        let weight = cfg.weights[&list.teacher_id];
        let max = list.entries.first().map(|e| e.score).unwrap_or(0.0);
        let min = list.entries.last().map(|e| e.score).unwrap_or(0.0);
        let span = max - min;
        for entry in &list.entries {
            let normalized = if list.entries.len() < 2 || span == 0.0 {
                1.0
            } else {
                (entry.score - min) / span
            };
            *fused.entry(entry.passage_id.as_str()).or_insert(0.0) += weight * normalized;
        }
    }
    let scored: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    Ok(RankedList::from_scored(query_id, FUSED_TEACHER_ID, scored, k))
}

/// Compute and store the fused list for every query in the pool.
pub fn fuse_pool(pool: &mut SupervisionPool, cfg: &FusionConfig) -> Result<()> {
    let teachers = pool.teachers.clone();
    cfg.validate(&teachers)?;
    let query_ids: Vec<String> = pool.query_ids().map(|s| s.to_string()).collect();
    let depth = pool.depth();
    for query_id in query_ids {
        let fused = {
            let lists: Vec<&RankedList> = teachers
                .iter()
                .filter_map(|t| pool.get(&query_id, t))
                .collect();
            if lists.is_empty() {
                continue;
            }
            fuse_lists(&lists, cfg, depth)?
        };
        pool.insert(fused)?;
    }
    Ok(())
}

/// How supervision is chosen per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fused,
    Uniform,
    Progressive,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fused => "fused",
            Strategy::Uniform => "uniform",
            Strategy::Progressive => "progressive",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Strategy::Fused),
            "uniform" => Ok(Strategy::Uniform),
            "progressive" => Ok(Strategy::Progressive),
            other => Err(Error::invalid(
                "strategy",
                format!("`{other}` is not one of fused|uniform|progressive"),
            )),
        }
    }
}

/// Outcome of choosing a supervision source for one draw.
pub enum Selection<'a> {
    List(&'a RankedList),
    /// The sampled teacher has no list for this query; the caller skips the
    /// query and records it.
    Missing { teacher_id: String },
}

/// Choose the supervision source for one draw at training iteration
/// `iteration` (1-based). Fused uses the precomputed fused list; uniform
/// samples a teacher from all N; progressive samples from the first
/// `iteration` teachers.
pub fn select_supervision<'a>(
    pool: &'a SupervisionPool,
    query_id: &str,
    iteration: usize,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Selection<'a> {
    let teacher_id = match strategy {
        Strategy::Fused => FUSED_TEACHER_ID.to_string(),
        Strategy::Uniform => {
            let n = pool.teacher_count();
            pool.teachers[rng.gen_range(0..n)].clone()
        }
        Strategy::Progressive => {
            assert!(
                iteration >= 1 && iteration <= pool.teacher_count(),
                "progressive iteration {iteration} outside 1..={}",
                pool.teacher_count()
            );
            pool.teachers[rng.gen_range(0..iteration)].clone()
        }
    };
    match pool.get(query_id, &teacher_id) {
        Some(list) => Selection::List(list),
        None => Selection::Missing { teacher_id },
    }
}

/// Why a query produced no triplet for a draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub query_id: String,
    pub reason: String,
}

/// Sample one triplet from a ranked list: positive uniform over ranks
/// 1..=pos_top_k, negative uniform over ranks neg_rank_lo..=neg_rank_hi.
///
/// Lists shorter than the negative window but with at least pos_top_k + 5
/// entries draw negatives from their last 5 entries; anything shorter is
/// skipped. If the drawn negative equals the positive (possible only with
/// overlapping custom windows) the negative is resampled.
pub fn sample_triplet(
    list: &RankedList,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Triplet, String> {
    let n = list.len();
    let (lo, hi) = if n >= cfg.neg_rank_hi {
        (cfg.neg_rank_lo, cfg.neg_rank_hi)
    } else if n >= cfg.pos_top_k + 5 {
        (n - 4, n)
    } else {
        return Err(format!(
            "list has {n} entries, need at least {}",
            cfg.pos_top_k + 5
        ));
    };
    let positive = &list.entries[rng.gen_range(1..=cfg.pos_top_k) - 1];
    for _ in 0..4 * (hi - lo + 1) {
        let negative = &list.entries[rng.gen_range(lo..=hi) - 1];
        if negative.passage_id != positive.passage_id {
            return Ok(Triplet {
                query_id: list.query_id.clone(),
                positive_id: positive.passage_id.clone(),
                negative_id: negative.passage_id.clone(),
                source_teacher: list.teacher_id.clone(),
                iteration: 0,
            });
        }
    }
    // Window contains only the positive itself.
    Err("negative window has no passage distinct from the positive".to_string())
}

/// Sampling probability of each passage as a positive at iteration T with
/// top-k positives:
/// `P(p) = (1/T) * sum over n <= T of [p in top-k of list n] * (1/k)`.
///
/// Ordered by probability descending; ties broken by descending sum of
/// reciprocal ranks over the lists containing the passage, then ascending
/// passage id. Missing lists contribute nothing.
pub fn positive_probability(
    pool: &SupervisionPool,
    query_id: &str,
    iteration: usize,
    k: usize,
) -> Vec<(String, f64)> {
    assert!(iteration >= 1 && k >= 1);
    let t = iteration.min(pool.teacher_count());
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut reciprocal: BTreeMap<&str, f64> = BTreeMap::new();
    for teacher in &pool.teachers[..t] {
        if let Some(list) = pool.get(query_id, teacher) {
            for id in list.top_ids(k) {
                *count.entry(id).or_insert(0) += 1;
            }
            for entry in &list.entries {
                *reciprocal.entry(entry.passage_id.as_str()).or_insert(0.0) +=
                    1.0 / entry.rank as f64;
            }
        }
    }
    let denom = (t * k) as f64;
    let mut out: Vec<(String, f64, f64)> = count
        .into_iter()
        .map(|(id, c)| (id.to_string(), c as f64 / denom, reciprocal[id]))
        .collect();
    out.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    out.into_iter().map(|(id, p, _)| (id, p)).collect()
}

/// Mean over the pool's queries of the size of the union of the first T
/// teachers' top-k positive sets.
pub fn supervision_diversity(pool: &SupervisionPool, iteration: usize, k: usize) -> f64 {
    assert!(iteration >= 1);
    assert!(k <= pool.depth(), "k exceeds pool depth");
    let t = iteration.min(pool.teacher_count());
    let mut total = 0usize;
    let mut queries = 0usize;
    for query_id in pool.query_ids() {
        let mut union: HashSet<&str> = HashSet::new();
        for teacher in &pool.teachers[..t] {
            if let Some(list) = pool.get(query_id, teacher) {
                union.extend(list.top_ids(k));
            }
        }
        total += union.len();
        queries += 1;
    }
    if queries == 0 {
        0.0
    } else {
        total as f64 / queries as f64
    }
}

/// The supervision schedule: how many epochs each trajectory iteration runs
/// and how many triplets each query contributes per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs_per_iteration: usize,
    pub triplets_per_query_per_epoch: usize,
    /// Ranked-list depth K used when labeling.
    pub depth: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs_per_iteration: 3,
            triplets_per_query_per_epoch: 1,
            depth: 50,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.epochs_per_iteration == 0 {
            problems.push("schedule.epochs_per_iteration must be at least 1".into());
        }
        if self.triplets_per_query_per_epoch == 0 {
            problems.push("schedule.triplets_per_query_per_epoch must be at least 1".into());
        }
        if self.depth == 0 {
            problems.push("schedule.depth must be at least 1".into());
        }
        problems
    }
}

/// Emit the triplets of one (iteration, epoch) pass: queries are shuffled by
/// a seeded sub-stream, then each query draws its supervision source and
/// triplets from its own sub-stream, so the stream is reproducible per query
/// and unaffected by other stages.
#[allow(clippy::too_many_arguments)]
pub fn emit_epoch_triplets(
    pool: &SupervisionPool,
    queries: &[QueryRecord],
    strategy: Strategy,
    sampler: &SamplerConfig,
    triplets_per_query: usize,
    seed: u64,
    iteration: usize,
    epoch: usize,
) -> (Vec<Triplet>, Vec<SkipRecord>) {
    let iter_label = iteration.to_string();
    let epoch_label = epoch.to_string();
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut shuffle_rng = substream(seed, &["emit", &iter_label, &epoch_label, "shuffle"]);
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let mut triplets = Vec::new();
    let mut skips = Vec::new();
    for idx in order {
        let query = &queries[idx];
        let mut rng = substream(seed, &["emit", &iter_label, &epoch_label, "query", &query.id]);
        for _ in 0..triplets_per_query {
            match select_supervision(pool, &query.id, iteration, strategy, &mut rng) {
                Selection::Missing { teacher_id } => {
                    skips.push(SkipRecord {
                        iteration,
                        epoch,
                        query_id: query.id.clone(),
                        reason: format!("no list from teacher `{teacher_id}`"),
                    });
                }
                Selection::List(list) => match sample_triplet(list, sampler, &mut rng) {
                    Ok(mut triplet) => {
                        triplet.iteration = iteration;
                        triplets.push(triplet);
                    }
                    Err(reason) => {
                        skips.push(SkipRecord {
                            iteration,
                            epoch,
                            query_id: query.id.clone(),
                            reason,
                        });
                    }
                },
            }
        }
    }
    (triplets, skips)
}

/// Emit the full training stream across all iterations and epochs.
/// Deterministic given the seed.
pub fn emit_training_stream(
    pool: &SupervisionPool,
    queries: &[QueryRecord],
    strategy: Strategy,
    schedule: &Schedule,
    sampler: &SamplerConfig,
    seed: u64,
) -> (Vec<Triplet>, Vec<SkipRecord>) {
    let mut triplets = Vec::new();
    let mut skips = Vec::new();
    for iteration in 1..=pool.teacher_count() {
        for epoch in 1..=schedule.epochs_per_iteration {
            let (t, s) = emit_epoch_triplets(
                pool,
                queries,
                strategy,
                sampler,
                schedule.triplets_per_query_per_epoch,
                seed,
                iteration,
                epoch,
            );
            triplets.extend(t);
            skips.extend(s);
        }
    }
    (triplets, skips)
}

/// Write triplets as `query_id<TAB>positive_id<TAB>negative_id<TAB>source_teacher<TAB>iteration`.
pub fn write_triplets(triplets: &[Triplet], path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for t in triplets {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            t.query_id, t.positive_id, t.negative_id, t.source_teacher, t.iteration
        )
        .map_err(|e| Error::io(display.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(display, e))
}

pub fn read_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [query_id, positive_id, negative_id, source_teacher, iteration] = fields.as_slice()
        else {
            return Err(Error::parse(&display, lineno, "expected 5 fields"));
        };
        let iteration: usize = iteration
            .parse()
            .map_err(|_| Error::parse(&display, lineno, "bad iteration"))?;
        if positive_id == negative_id {
            return Err(Error::parse(&display, lineno, "positive equals negative"));
        }
        out.push(Triplet {
            query_id: query_id.to_string(),
            positive_id: positive_id.to_string(),
            negative_id: negative_id.to_string(),
            source_teacher: source_teacher.to_string(),
            iteration,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::teachers::RankedEntry;

    fn list(query: &str, teacher: &str, scored: &[(&str, f64)]) -> RankedList {
        RankedList {
            query_id: query.into(),
            teacher_id: teacher.into(),
            entries: scored
                .iter()
                .enumerate()
                .map(|(i, (id, s))| RankedEntry {
                    passage_id: id.to_string(),
                    rank: i + 1,
                    score: *s,
                })
                .collect(),
        }
    }

    /// Depth-n list d1 > d2 > ... with strictly decreasing scores.
    fn deep_list(query: &str, teacher: &str, n: usize) -> RankedList {
        let scored: Vec<(String, f64)> = (1..=n)
            .map(|i| (format!("d{i:03}"), (n - i + 1) as f64))
            .collect();
        RankedList {
            query_id: query.into(),
            teacher_id: teacher.into(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (id, s))| RankedEntry {
                    passage_id: id,
                    rank: i + 1,
                    score: s,
                })
                .collect(),
        }
    }

    fn weights(pairs: &[(&str, f64)]) -> FusionConfig {
        FusionConfig {
            weights: pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect(),
        }
    }

    fn query(id: &str) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            text: "placeholder".into(),
            origin: Origin::Cropped,
            source_passage_id: None,
        }
    }

    #[test]
    fn fuse_single_teacher_is_identity() {
        let a = list("q", "a", &[("d3", 7.0), ("d1", 5.0), ("d2", 1.0)]);
        let fused = fuse_lists(&[&a], &weights(&[("a", 1.0)]), 10).unwrap();
        let order: Vec<&str> = fused.entries.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(order, ["d3", "d1", "d2"]);
        assert_eq!(fused.teacher_id, FUSED_TEACHER_ID);
    }

    #[test]
    fn fuse_zero_weight_teacher_is_ignored() {
        let a = list("q", "a", &[("d1", 9.0), ("d2", 3.0)]);
        let b = list("q", "b", &[("d9", 100.0), ("d8", 50.0)]);
        let fused = fuse_lists(&[&a, &b], &weights(&[("a", 1.0), ("b", 0.0)]), 10).unwrap();
        let order: Vec<&str> = fused.entries.iter().map(|e| e.passage_id.as_str()).collect();
        // Zero-weight entries fuse to score 0, after a's strictly positive
        // normalized top; d2 normalizes to 0 too, so ties resolve by id.
        assert_eq!(order[0], "d1");
        assert!(order.contains(&"d2"));
    }

    #[test]
    fn fuse_hand_computed_example() {
        // A: (d1: 2.0, d2: 1.0) -> normalized (d1: 1, d2: 0)
        // B: (d2: 10, d3: 0)    -> normalized (d2: 1, d3: 0)
        // weights (1, 1): fused d1 = 1, d2 = 1, d3 = 0 -> d1, d2 (tie by id), d3.
        let a = list("q", "a", &[("d1", 2.0), ("d2", 1.0)]);
        let b = list("q", "b", &[("d2", 10.0), ("d3", 0.0)]);
        let fused = fuse_lists(&[&a, &b], &weights(&[("a", 1.0), ("b", 1.0)]), 10).unwrap();
        let order: Vec<&str> = fused.entries.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(order, ["d1", "d2", "d3"]);
        assert_eq!(fused.entries[0].score, 1.0);
        assert_eq!(fused.entries[1].score, 1.0);
        assert_eq!(fused.entries[2].score, 0.0);
    }

    #[test]
    fn fuse_single_entry_list_normalizes_to_one() {
        let a = list("q", "a", &[("d1", -42.0)]);
        let fused = fuse_lists(&[&a], &weights(&[("a", 1.0)]), 10).unwrap();
        assert_eq!(fused.entries[0].score, 1.0);
    }

    #[test]
    fn fuse_rejects_mixed_queries() {
        let a = list("q1", "a", &[("d1", 1.0)]);
        let b = list("q2", "b", &[("d1", 1.0)]);
        assert!(fuse_lists(&[&a, &b], &weights(&[("a", 1.0), ("b", 1.0)]), 10).is_err());
    }

    fn pool_with(teachers: &[&str], depth: usize, lists: Vec<RankedList>) -> SupervisionPool {
        let mut pool =
            SupervisionPool::new(teachers.iter().map(|s| s.to_string()).collect(), depth).unwrap();
        for l in lists {
            pool.insert(l).unwrap();
        }
        pool
    }

    #[test]
    fn progressive_iteration_one_always_uses_first_teacher() {
        let pool = pool_with(
            &["a", "b", "c"],
            50,
            vec![
                deep_list("q", "a", 50),
                deep_list("q", "b", 50),
                deep_list("q", "c", 50),
            ],
        );
        let mut rng = substream(1, &["test"]);
        for _ in 0..100 {
            match select_supervision(&pool, "q", 1, Strategy::Progressive, &mut rng) {
                Selection::List(l) => assert_eq!(l.teacher_id, "a"),
                Selection::Missing { .. } => panic!("list exists"),
            }
        }
    }

    #[test]
    fn progressive_never_selects_beyond_prefix() {
        let pool = pool_with(
            &["a", "b", "c"],
            50,
            vec![
                deep_list("q", "a", 50),
                deep_list("q", "b", 50),
                deep_list("q", "c", 50),
            ],
        );
        let mut rng = substream(2, &["test"]);
        for _ in 0..500 {
            match select_supervision(&pool, "q", 2, Strategy::Progressive, &mut rng) {
                Selection::List(l) => assert_ne!(l.teacher_id, "c"),
                Selection::Missing { .. } => panic!("list exists"),
            }
        }
    }

    #[test]
    fn uniform_selection_is_balanced() {
        let pool = pool_with(
            &["a", "b"],
            50,
            vec![deep_list("q", "a", 50), deep_list("q", "b", 50)],
        );
        let mut rng = substream(3, &["test"]);
        let draws = 10_000;
        let mut count_a = 0;
        for _ in 0..draws {
            if let Selection::List(l) = select_supervision(&pool, "q", 1, Strategy::Uniform, &mut rng)
            {
                if l.teacher_id == "a" {
                    count_a += 1;
                }
            }
        }
        let freq = count_a as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn missing_list_reports_teacher() {
        let pool = pool_with(&["a", "b"], 50, vec![deep_list("q", "a", 50)]);
        let mut rng = substream(4, &["test"]);
        let mut missing = 0;
        for _ in 0..50 {
            if let Selection::Missing { teacher_id } =
                select_supervision(&pool, "q", 1, Strategy::Uniform, &mut rng)
            {
                assert_eq!(teacher_id, "b");
                missing += 1;
            }
        }
        assert!(missing > 0);
    }

    #[test]
    fn triplet_ranks_stay_in_windows() {
        let l = deep_list("q", "a", 50);
        let cfg = SamplerConfig::default();
        let mut rng = substream(5, &["test"]);
        for _ in 0..10_000 {
            let t = sample_triplet(&l, &cfg, &mut rng).unwrap();
            let pos_rank = l.entries.iter().position(|e| e.passage_id == t.positive_id).unwrap() + 1;
            let neg_rank = l.entries.iter().position(|e| e.passage_id == t.negative_id).unwrap() + 1;
            assert!((1..=10).contains(&pos_rank), "positive rank {pos_rank}");
            assert!((46..=50).contains(&neg_rank), "negative rank {neg_rank}");
        }
    }

    #[test]
    fn short_list_is_skipped() {
        let l = deep_list("q", "a", 10);
        let mut rng = substream(6, &["test"]);
        assert!(sample_triplet(&l, &SamplerConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn medium_list_draws_negatives_from_tail() {
        let l = deep_list("q", "a", 20);
        let cfg = SamplerConfig::default();
        let mut rng = substream(7, &["test"]);
        for _ in 0..2_000 {
            let t = sample_triplet(&l, &cfg, &mut rng).unwrap();
            let neg_rank = l.entries.iter().position(|e| e.passage_id == t.negative_id).unwrap() + 1;
            assert!((16..=20).contains(&neg_rank), "negative rank {neg_rank}");
        }
    }

    #[test]
    fn top1_positive_config_always_picks_rank_one() {
        let l = deep_list("q", "a", 50);
        let cfg = SamplerConfig {
            pos_top_k: 1,
            ..SamplerConfig::default()
        };
        let mut rng = substream(8, &["test"]);
        for _ in 0..200 {
            let t = sample_triplet(&l, &cfg, &mut rng).unwrap();
            assert_eq!(t.positive_id, l.entries[0].passage_id);
        }
    }

    #[test]
    fn probability_formula_worked_examples() {
        // Passage in all three top-10 lists: 1/10. In exactly one: 1/30.
        let shared = deep_list("q", "a", 50);
        let mut second = shared.clone();
        second.teacher_id = "b".into();
        // Third teacher: top-10 disjoint except d001.
        let mut third_ids: Vec<(&str, f64)> = Vec::new();
        let names: Vec<String> = (0..10).map(|i| format!("x{i:02}")).collect();
        third_ids.push(("d001", 100.0));
        for (i, n) in names.iter().enumerate().take(9) {
            third_ids.push((n.as_str(), 99.0 - i as f64));
        }
        let third = {
            let mut l = list("q", "c", &third_ids);
            // Pad to a full depth so nothing is skipped elsewhere.
            for r in l.entries.len() + 1..=50 {
                l.entries.push(RankedEntry {
                    passage_id: format!("pad{r}"),
                    rank: r,
                    score: 99.0 - r as f64,
                });
            }
            l
        };
        let pool = pool_with(&["a", "b", "c"], 50, vec![shared, second, third]);
        let probs = positive_probability(&pool, "q", 3, 10);
        let p = |id: &str| probs.iter().find(|(i, _)| i == id).unwrap().1;
        assert!((p("d001") - 0.1).abs() < 1e-12, "in all three lists");
        assert!((p("x00") - 1.0 / 30.0).abs() < 1e-12, "in one list");
        assert!((p("d002") - 2.0 / 30.0).abs() < 1e-12, "in two lists");
        // Probabilities are sorted descending and d001 leads.
        assert_eq!(probs[0].0, "d001");
        // Mass sums to 1 when every list has >= k entries.
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probability_ties_break_by_reciprocal_rank_sum() {
        // d001 and d002 both appear in both top-10 lists, but d001 always at
        // better ranks, so it sorts first despite equal probability.
        let a = deep_list("q", "a", 50);
        let mut b = deep_list("q", "b", 50);
        b.teacher_id = "b".into();
        let pool = pool_with(&["a", "b"], 50, vec![a, b]);
        let probs = positive_probability(&pool, "q", 2, 10);
        assert_eq!(probs[0].0, "d001");
        assert_eq!(probs[1].0, "d002");
        assert!((probs[0].1 - probs[1].1).abs() < 1e-15);
    }

    #[test]
    fn diversity_single_teacher_full_depth_is_exactly_k() {
        let pool = pool_with(&["a"], 50, vec![deep_list("q", "a", 50)]);
        assert_eq!(supervision_diversity(&pool, 1, 10), 10.0);
    }

    #[test]
    fn diversity_identical_teachers_stays_k() {
        let a = deep_list("q", "a", 50);
        let mut b = a.clone();
        b.teacher_id = "b".into();
        let pool = pool_with(&["a", "b"], 50, vec![a, b]);
        assert_eq!(supervision_diversity(&pool, 1, 10), 10.0);
        assert_eq!(supervision_diversity(&pool, 2, 10), 10.0);
    }

    #[test]
    fn diversity_disjoint_teachers_doubles() {
        let a = deep_list("q", "a", 50);
        let scored: Vec<(String, f64)> = (1..=50).map(|i| (format!("z{i:03}"), 100.0 - i as f64)).collect();
        let b = RankedList {
            query_id: "q".into(),
            teacher_id: "b".into(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (id, s))| RankedEntry {
                    passage_id: id,
                    rank: i + 1,
                    score: s,
                })
                .collect(),
        };
        let pool = pool_with(&["a", "b"], 50, vec![a, b]);
        assert_eq!(supervision_diversity(&pool, 2, 10), 20.0);
    }

    #[test]
    fn stream_counts_multiply_out() {
        let lists = vec![
            deep_list("q1", "a", 50),
            deep_list("q2", "a", 50),
            {
                let mut l = deep_list("q1", "b", 50);
                l.teacher_id = "b".into();
                l
            },
            {
                let mut l = deep_list("q2", "b", 50);
                l.teacher_id = "b".into();
                l
            },
        ];
        let pool = pool_with(&["a", "b"], 50, lists);
        let schedule = Schedule {
            epochs_per_iteration: 2,
            triplets_per_query_per_epoch: 1,
            depth: 50,
        };
        let queries = [query("q1"), query("q2")];
        let (triplets, skips) = emit_training_stream(
            &pool,
            &queries,
            Strategy::Progressive,
            &schedule,
            &SamplerConfig::default(),
            99,
        );
        // 2 iterations x 2 epochs x 2 queries x 1 triplet.
        assert_eq!(triplets.len(), 8);
        assert!(skips.is_empty());
        assert!(triplets
            .iter()
            .filter(|t| t.iteration == 1)
            .all(|t| t.source_teacher == "a"));
    }

    #[test]
    fn stream_is_deterministic() {
        let pool = pool_with(
            &["a", "b"],
            50,
            vec![deep_list("q1", "a", 50), {
                let mut l = deep_list("q1", "b", 50);
                l.teacher_id = "b".into();
                l
            }],
        );
        let schedule = Schedule::default();
        let queries = [query("q1")];
        let run = || {
            emit_training_stream(
                &pool,
                &queries,
                Strategy::Progressive,
                &schedule,
                &SamplerConfig::default(),
                7,
            )
            .0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn triplet_file_round_trip() {
        let triplets = vec![
            Triplet {
                query_id: "q1".into(),
                positive_id: "d1".into(),
                negative_id: "d2".into(),
                source_teacher: "a".into(),
                iteration: 1,
            },
            Triplet {
                query_id: "q2".into(),
                positive_id: "d3".into(),
                negative_id: "d4".into(),
                source_teacher: FUSED_TEACHER_ID.into(),
                iteration: 2,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_triplets(&triplets, f.path()).unwrap();
        assert_eq!(read_triplets(f.path()).unwrap(), triplets);
    }

    #[test]
    fn pool_rejects_reserved_and_duplicate_teachers() {
        assert!(SupervisionPool::new(vec!["fused".into()], 50).is_err());
        assert!(SupervisionPool::new(vec!["a".into(), "a".into()], 50).is_err());
    }

    #[test]
    fn pool_truncates_to_depth() {
        let mut pool = SupervisionPool::new(vec!["a".into()], 5).unwrap();
        pool.insert(deep_list("q", "a", 50)).unwrap();
        assert_eq!(pool.get("q", "a").unwrap().len(), 5);
    }
}
