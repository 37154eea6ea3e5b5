//! The trainable student: an asymmetric dual encoder over feature-hashed
//! bag-of-tokens embeddings.
//!
//! Each side (query, passage) owns an independent `H x D` table. A text is
//! encoded as the mean of the rows its tokens hash to, and relevance is the
//! plain dot product of the two encodings. This keeps the bi-encoder contract
//! (independent encoding, dot-product scoring, distinct parameter sets per
//! side) while having closed-form gradients, so training is exactly
//! reproducible and testable against finite differences.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::{tokenize, Corpus, TokenSequence, PASSAGE_MAX_TOKENS, QUERY_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::seeds::{fnv1a64, substream};

/// Which encoder a text runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Passage,
}

impl Side {
    pub fn max_tokens(self) -> usize {
        match self {
            Side::Query => QUERY_MAX_TOKENS,
            Side::Passage => PASSAGE_MAX_TOKENS,
        }
    }
}

/// Hash a token into a table row. 64-bit FNV-1a reduced mod `hash_buckets`,
/// fixed so checkpoints are portable.
pub fn token_bucket(token: &str, hash_buckets: usize) -> usize {
    (fnv1a64(token.as_bytes()) % hash_buckets as u64) as usize
}

/// Default number of hash buckets (2^15).
pub const DEFAULT_HASH_BUCKETS: usize = 1 << 15;
/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 64;

const CHECKPOINT_MAGIC: &[u8; 8] = b"DKENC001";

/// The two embedding tables of the asymmetric dual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderParams {
    pub hash_buckets: usize,
    pub dim: usize,
    pub seed: u64,
    query_table: Vec<f64>,
    passage_table: Vec<f64>,
}

impl DualEncoderParams {
    /// Initialize both tables uniformly in [-0.5/sqrt(D), 0.5/sqrt(D)] from
    /// named sub-streams of `seed`. The sides are distinctly parameterized.
    pub fn init(hash_buckets: usize, dim: usize, seed: u64) -> Self {
        assert!(hash_buckets >= 1 && dim >= 1);
        let fill = |label: &str| Self::random_table(hash_buckets, dim, seed, label);
        Self {
            hash_buckets,
            dim,
            seed,
            query_table: fill("query"),
            passage_table: fill("passage"),
        }
    }

    /// Initialize with one shared random table on both sides. A frozen tied
    /// encoder scores by the random projection of token-overlap, which makes
    /// it a weak lexical matcher rather than pure noise; used for frozen
    /// dense teachers, not for the trainable student.
    pub fn init_tied(hash_buckets: usize, dim: usize, seed: u64) -> Self {
        assert!(hash_buckets >= 1 && dim >= 1);
        let table = Self::random_table(hash_buckets, dim, seed, "tied");
        Self {
            hash_buckets,
            dim,
            seed,
            query_table: table.clone(),
            passage_table: table,
        }
    }

    fn random_table(hash_buckets: usize, dim: usize, seed: u64, label: &str) -> Vec<f64> {
        let bound = 0.5 / (dim as f64).sqrt();
        let mut rng = substream(seed, &["encoder-init", label]);
        (0..hash_buckets * dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect()
    }

    fn table(&self, side: Side) -> &[f64] {
        match side {
            Side::Query => &self.query_table,
            Side::Passage => &self.passage_table,
        }
    }

    fn table_mut(&mut self, side: Side) -> &mut [f64] {
        match side {
            Side::Query => &mut self.query_table,
            Side::Passage => &mut self.passage_table,
        }
    }

    /// One table row.
    pub fn row(&self, side: Side, bucket: usize) -> &[f64] {
        &self.table(side)[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Mean of the hashed token rows; the empty token list encodes to the
    /// zero vector.
    pub fn encode(&self, side: Side, tokens: &TokenSequence) -> Vec<f64> {
        debug_assert!(tokens.len() <= side.max_tokens());
        let mut v = vec![0.0; self.dim];
        if tokens.is_empty() {
            return v;
        }
        let table = self.table(side);
        for tok in &tokens.tokens {
            let off = token_bucket(tok, self.hash_buckets) * self.dim;
            for (k, x) in v.iter_mut().enumerate() {
                *x += table[off + k];
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for x in &mut v {
            *x *= inv;
        }
        v
    }

    /// Convenience: tokenize with the side's length limit, then encode.
    pub fn encode_text(&self, side: Side, text: &str) -> Vec<f64> {
        self.encode(side, &tokenize(text, side.max_tokens()))
    }

    /// Serialize to the checkpoint format: an 8-byte magic, `hash_buckets`,
    /// `dim` and `seed` as little-endian u64, then both tables row-major as
    /// little-endian f64 (query side first). Round-trips exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes =
            Vec::with_capacity(32 + 16 * self.hash_buckets * self.dim);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(self.hash_buckets as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        for table in [&self.query_table, &self.passage_table] {
            for x in table {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let bytes = fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
        if bytes.len() < 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::invalid("checkpoint", format!("{display}: bad header")));
        }
        let u64_at = |off: usize| {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            u64::from_le_bytes(buf)
        };
        let hash_buckets = u64_at(8) as usize;
        let dim = u64_at(16) as usize;
        let seed = u64_at(24);
        let table_len = hash_buckets
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("checkpoint", format!("{display}: oversized shape")))?;
        let expected = 32 + 16 * table_len;
        if bytes.len() != expected {
            return Err(Error::invalid(
                "checkpoint",
                format!("{display}: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let read_table = |start: usize| {
            let mut table = Vec::with_capacity(table_len);
            for i in 0..table_len {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&bytes[start + 8 * i..start + 8 * i + 8]);
                table.push(f64::from_le_bytes(buf));
            }
            table
        };
        let query_table = read_table(32);
        let passage_table = read_table(32 + 8 * table_len);
        if query_table.iter().chain(&passage_table).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "checkpoint table" });
        }
        Ok(Self {
            hash_buckets,
            dim,
            seed,
            query_table,
            passage_table,
        })
    }
}

/// Dot product with a dimension check.
pub fn score(q_vec: &[f64], d_vec: &[f64]) -> Result<f64> {
    if q_vec.len() != d_vec.len() {
        return Err(Error::DimensionMismatch {
            left: q_vec.len(),
            right: d_vec.len(),
        });
    }
    Ok(dot(q_vec, d_vec))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and analytic gradients of one InfoNCE instance.
#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// InfoNCE over one positive and any number of negatives:
/// `-log(exp(s(q,d+)) / (exp(s(q,d+)) + sum_j exp(s(q,d-_j))))`,
/// computed with log-sum-exp stabilization. With zero negatives the loss is 0
/// and all gradients vanish.
pub fn infonce_loss(q_vec: &[f64], pos_vec: &[f64], neg_vecs: &[&[f64]]) -> Result<InfoNce> {
    let dim = q_vec.len();
    for v in std::iter::once(pos_vec).chain(neg_vecs.iter().copied()) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: v.len(),
            });
        }
    }
    if q_vec
        .iter()
        .chain(pos_vec)
        .chain(neg_vecs.iter().flat_map(|v| v.iter()))
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite { what: "infonce input" });
    }

    let s_pos = dot(q_vec, pos_vec);
    let s_negs: Vec<f64> = neg_vecs.iter().map(|v| dot(q_vec, v)).collect();
    let max = s_negs.iter().fold(s_pos, |m, &s| m.max(s));

    let e_pos = (s_pos - max).exp();
    let e_negs: Vec<f64> = s_negs.iter().map(|&s| (s - max).exp()).collect();
    let z = e_pos + e_negs.iter().sum::<f64>();
    let loss = -(s_pos - max) + z.ln();

    // Softmax probabilities; d loss / d s_pos = p_pos - 1, d loss / d s_j = p_j.
    let p_pos = e_pos / z;
    let g_pos_score = p_pos - 1.0;

    let mut grad_query = vec![0.0; dim];
    for (k, g) in grad_query.iter_mut().enumerate() {
        *g = g_pos_score * pos_vec[k];
    }
    let mut grad_negatives = Vec::with_capacity(neg_vecs.len());
    for (j, neg) in neg_vecs.iter().enumerate() {
        let p_j = e_negs[j] / z;
        for (k, g) in grad_query.iter_mut().enumerate() {
            *g += p_j * neg[k];
        }
        grad_negatives.push(q_vec.iter().map(|&x| p_j * x).collect());
    }
    let grad_positive = q_vec.iter().map(|&x| g_pos_score * x).collect();

    Ok(InfoNce {
        loss,
        grad_query,
        grad_positive,
        grad_negatives,
    })
}

/// Student training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub use_in_batch_negatives: bool,
    pub hash_buckets: usize,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.05,
            use_in_batch_negatives: true,
            hash_buckets: DEFAULT_HASH_BUCKETS,
            dim: DEFAULT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("train.batch_size must be at least 1".into());
        }
        if self.use_in_batch_negatives && self.batch_size < 2 {
            problems.push("train.batch_size must be at least 2 with in-batch negatives".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            problems.push("train.learning_rate must be finite and non-negative".into());
        }
        if self.hash_buckets == 0 {
            problems.push("train.hash_buckets must be at least 1".into());
        }
        if self.dim == 0 {
            problems.push("train.dim must be at least 1".into());
        }
        problems
    }
}

/// A triplet with its texts already tokenized.
#[derive(Debug, Clone)]
pub struct ResolvedTriplet {
    pub query_id: String,
    pub positive_id: String,
    pub negative_id: String,
    pub query_tokens: TokenSequence,
    pub positive_tokens: TokenSequence,
    pub negative_tokens: TokenSequence,
}

/// Per-step loss summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LossReport {
    pub mean_loss: f64,
    pub gradient_norm: f64,
    pub step: usize,
}

#[derive(Default)]
struct GradAccum {
    query: BTreeMap<usize, Vec<f64>>,
    passage: BTreeMap<usize, Vec<f64>>,
}

impl GradAccum {
    fn rows(&mut self, side: Side) -> &mut BTreeMap<usize, Vec<f64>> {
        match side {
            Side::Query => &mut self.query,
            Side::Passage => &mut self.passage,
        }
    }

    /// Backpropagate a gradient on an encoded vector into the rows of the
    /// tokens that produced it (mean pooling: 1/n per token occurrence).
    fn scatter(
        &mut self,
        side: Side,
        tokens: &TokenSequence,
        hash_buckets: usize,
        dim: usize,
        grad_vec: &[f64],
    ) {
        if tokens.is_empty() {
            return;
        }
        let inv = 1.0 / tokens.len() as f64;
        for tok in &tokens.tokens {
            let bucket = token_bucket(tok, hash_buckets);
            let row = self.rows(side).entry(bucket).or_insert_with(|| vec![0.0; dim]);
            for (g, &gv) in row.iter_mut().zip(grad_vec) {
                *g += inv * gv;
            }
        }
    }
}

/// One SGD step over a batch of triplets.
///
/// Negatives for each query are its own hard negative plus, when in-batch
/// negatives are enabled, every other triplet's positive and hard negative,
/// deduplicated by passage id. A negative whose id equals the query's own
/// positive is dropped before the loss. Only embedding rows touched by the
/// batch are updated.
pub fn train_step(
    batch: &[ResolvedTriplet],
    params: &mut DualEncoderParams,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "train_step on an empty batch"));
    }
    let dim = params.dim;

    // Encode each distinct passage once; they are shared across the batch.
    let mut passage_vecs: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut passage_tokens: HashMap<&str, &TokenSequence> = HashMap::new();
    for t in batch {
        for (id, tokens) in [
            (t.positive_id.as_str(), &t.positive_tokens),
            (t.negative_id.as_str(), &t.negative_tokens),
        ] {
            passage_vecs
                .entry(id)
                .or_insert_with(|| params.encode(Side::Passage, tokens));
            passage_tokens.entry(id).or_insert(tokens);
        }
    }

    let mut accum = GradAccum::default();
    let mut loss_sum = 0.0;

    // Vector-level gradients per distinct passage, accumulated across the
    // batch and scattered into rows once at the end (first-occurrence order,
    // so the arithmetic is deterministic).
    let mut passage_order: Vec<&str> = Vec::new();
    let mut passage_grads: HashMap<&str, Vec<f64>> = HashMap::new();

    for (i, triplet) in batch.iter().enumerate() {
        let mut candidates: Vec<&str> = vec![triplet.negative_id.as_str()];
        if cfg.use_in_batch_negatives {
            for (j, other) in batch.iter().enumerate() {
                if j != i {
                    candidates.push(other.positive_id.as_str());
                    candidates.push(other.negative_id.as_str());
                }
            }
        }
        let mut neg_ids: Vec<&str> = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        for id in candidates {
            if id != triplet.positive_id && seen.insert(id) {
                neg_ids.push(id);
            }
        }

        let q_vec = params.encode(Side::Query, &triplet.query_tokens);
        let pos_vec = &passage_vecs[triplet.positive_id.as_str()];
        let neg_vecs: Vec<&[f64]> = neg_ids.iter().map(|id| passage_vecs[id].as_slice()).collect();

        let nce = infonce_loss(&q_vec, pos_vec, &neg_vecs)?;
        loss_sum += nce.loss;

        accum.scatter(Side::Query, &triplet.query_tokens, params.hash_buckets, dim, &nce.grad_query);
        let grads = std::iter::once((triplet.positive_id.as_str(), &nce.grad_positive))
            .chain(neg_ids.iter().copied().zip(nce.grad_negatives.iter()));
        for (id, grad) in grads {
            let entry = match passage_grads.entry(id) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    passage_order.push(id);
                    e.insert(vec![0.0; dim])
                }
            };
            for (g, &gv) in entry.iter_mut().zip(grad) {
                *g += gv;
            }
        }
    }
    for id in passage_order {
        accum.scatter(
            Side::Passage,
            passage_tokens[id],
            params.hash_buckets,
            dim,
            &passage_grads[id],
        );
    }

    let inv_batch = 1.0 / batch.len() as f64;
    let mut norm_sq = 0.0;
    for (side, rows) in [(Side::Query, &accum.query), (Side::Passage, &accum.passage)] {
        let _ = side;
        for grad in rows.values() {
            for &g in grad {
                let g = g * inv_batch;
                norm_sq += g * g;
            }
        }
    }
    if cfg.learning_rate != 0.0 {
        for (side, rows) in [(Side::Query, accum.query), (Side::Passage, accum.passage)] {
            let table = params.table_mut(side);
            for (bucket, grad) in rows {
                let off = bucket * dim;
                for (k, g) in grad.iter().enumerate() {
                    table[off + k] -= cfg.learning_rate * g * inv_batch;
                }
            }
        }
    }

    Ok(LossReport {
        mean_loss: loss_sum * inv_batch,
        gradient_norm: norm_sq.sqrt(),
        step,
    })
}

/// Frozen passage embeddings for exhaustive maximum-inner-product search.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f64>,
}

impl DenseIndex {
    /// Encode every passage of the corpus with the passage-side table.
    pub fn build(params: &DualEncoderParams, corpus: &Corpus) -> Self {
        let dim = params.dim;
        let mut ids = Vec::with_capacity(corpus.len());
        let mut matrix = Vec::with_capacity(corpus.len() * dim);
        for passage in corpus.iter() {
            let tokens = tokenize(&passage.text, PASSAGE_MAX_TOKENS);
            matrix.extend(params.encode(Side::Passage, &tokens));
            ids.push(passage.id.clone());
        }
        Self { dim, ids, matrix }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Exact top-k by dot product over every passage, ties broken by
    /// ascending passage id.
    pub fn topk(&self, query_vec: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.ids.len())
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                (i, dot(query_vec, row))
            })
            .collect();
        scored.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> TokenSequence {
        TokenSequence {
            tokens: words.iter().map(|w| w.to_string()).collect(),
            truncated_to: 32,
        }
    }

    #[test]
    fn encode_empty_is_zero_vector() {
        let params = DualEncoderParams::init(64, 8, 1);
        let v = params.encode(Side::Query, &toks(&[]));
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encode_single_token_is_its_row() {
        let params = DualEncoderParams::init(64, 8, 1);
        let v = params.encode(Side::Query, &toks(&["cat"]));
        let row = params.row(Side::Query, token_bucket("cat", 64));
        assert_eq!(v.as_slice(), row);
    }

    #[test]
    fn encode_two_tokens_is_row_average() {
        let params = DualEncoderParams::init(64, 8, 1);
        let v = params.encode(Side::Passage, &toks(&["cat", "dog"]));
        let a = params.row(Side::Passage, token_bucket("cat", 64));
        let b = params.row(Side::Passage, token_bucket("dog", 64));
        for k in 0..8 {
            let expected = (a[k] + b[k]) * 0.5;
            assert!((v[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sides_are_distinctly_parameterized() {
        let params = DualEncoderParams::init(64, 8, 1);
        let q = params.encode(Side::Query, &toks(&["cat"]));
        let p = params.encode(Side::Passage, &toks(&["cat"]));
        assert_ne!(q, p);
    }

    #[test]
    fn score_is_dot_product() {
        assert_eq!(score(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        // Basis vectors.
        assert_eq!(score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let a = [0.25, -1.5, 3.0, 0.5];
        let b = [4.0, 2.0, -1.0, 8.0];
        let expected = 0.25 * 4.0 + (-1.5) * 2.0 + 3.0 * (-1.0) + 0.5 * 8.0;
        assert!((score(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_dimension_mismatch() {
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn infonce_equal_scores_is_ln_m_plus_1() {
        for m in [0usize, 1, 4, 7] {
            let q = vec![0.0, 0.0, 0.0];
            let pos = vec![1.0, 2.0, 3.0];
            let negs: Vec<Vec<f64>> = (0..m).map(|_| vec![9.0, -4.0, 0.5]).collect();
            let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let nce = infonce_loss(&q, &pos, &neg_refs).unwrap();
            assert!(
                (nce.loss - ((m + 1) as f64).ln()).abs() < 1e-12,
                "m={m}: {}",
                nce.loss
            );
        }
    }

    #[test]
    fn infonce_zero_negatives_is_zero_loss_and_gradients() {
        let nce = infonce_loss(&[1.0, -2.0], &[0.5, 0.25], &[]).unwrap();
        assert_eq!(nce.loss, 0.0);
        assert!(nce.grad_query.iter().all(|&g| g == 0.0));
        assert!(nce.grad_positive.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn infonce_rejects_non_finite() {
        assert!(infonce_loss(&[f64::NAN], &[1.0], &[]).is_err());
        assert!(infonce_loss(&[1.0], &[f64::INFINITY], &[]).is_err());
    }

    #[test]
    fn infonce_shift_invariance() {
        // Adding a constant to every score leaves loss and score-space
        // gradients unchanged. Shifting q by adding a vector c with
        // c.pos == c.neg_j for all j realizes a uniform score shift.
        let q = [0.3, -0.7, 1.1];
        let pos = [0.9, 0.1, -0.2];
        let negs = [[-0.5, 0.4, 0.8], [1.0, 1.0, -1.0]];
        let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
        let base = infonce_loss(&q, &pos, &neg_refs).unwrap();

        // Recompute from raw scores shifted by a constant, using the same
        // softmax identities the implementation relies on.
        let s_pos = score(&q, &pos).unwrap() + 123.456;
        let s_negs: Vec<f64> = negs.iter().map(|n| score(&q, n).unwrap() + 123.456).collect();
        let max = s_negs.iter().fold(s_pos, |m, &s| m.max(s));
        let z = (s_pos - max).exp() + s_negs.iter().map(|&s| (s - max).exp()).sum::<f64>();
        let shifted_loss = -(s_pos - max) + z.ln();
        assert!((base.loss - shifted_loss).abs() < 1e-12);
    }

    #[test]
    fn train_step_lr_zero_leaves_params_unchanged() {
        let mut params = DualEncoderParams::init(32, 4, 3);
        let before = params.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            hash_buckets: 32,
            dim: 4,
            ..TrainConfig::default()
        };
        let batch = vec![triplet("q1", "a b", "d1", "c d", "d2", "e f")];
        train_step(&batch, &mut params, &cfg, 0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn train_step_touches_only_batch_rows() {
        let mut params = DualEncoderParams::init(256, 4, 3);
        let before = params.clone();
        let cfg = TrainConfig {
            batch_size: 2,
            hash_buckets: 256,
            dim: 4,
            ..TrainConfig::default()
        };
        let batch = vec![triplet("q1", "alpha beta", "d1", "gamma", "d2", "delta")];
        train_step(&batch, &mut params, &cfg, 0).unwrap();

        let query_rows: HashSet<usize> = ["alpha", "beta"]
            .iter()
            .map(|t| token_bucket(t, 256))
            .collect();
        let passage_rows: HashSet<usize> = ["gamma", "delta"]
            .iter()
            .map(|t| token_bucket(t, 256))
            .collect();
        for bucket in 0..256 {
            if !query_rows.contains(&bucket) {
                assert_eq!(params.row(Side::Query, bucket), before.row(Side::Query, bucket));
            }
            if !passage_rows.contains(&bucket) {
                assert_eq!(
                    params.row(Side::Passage, bucket),
                    before.row(Side::Passage, bucket)
                );
            }
        }
        // And the touched rows did change.
        for &bucket in &query_rows {
            assert_ne!(params.row(Side::Query, bucket), before.row(Side::Query, bucket));
        }
    }

    #[test]
    fn single_triplet_without_in_batch_reduces_to_plain_infonce() {
        let mut params = DualEncoderParams::init(64, 4, 9);
        let t = triplet("q1", "a b", "d1", "c", "d2", "d");
        let q_vec = params.encode(Side::Query, &t.query_tokens);
        let pos_vec = params.encode(Side::Passage, &t.positive_tokens);
        let neg_vec = params.encode(Side::Passage, &t.negative_tokens);
        let expected = infonce_loss(&q_vec, &pos_vec, &[&neg_vec]).unwrap().loss;

        let cfg = TrainConfig {
            batch_size: 1,
            use_in_batch_negatives: false,
            hash_buckets: 64,
            dim: 4,
            ..TrainConfig::default()
        };
        let report = train_step(&[t], &mut params, &cfg, 0).unwrap();
        assert!((report.mean_loss - expected).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let params = DualEncoderParams::init(128, 16, 77);
        let f = tempfile::NamedTempFile::new().unwrap();
        params.save(f.path()).unwrap();
        let loaded = DualEncoderParams::load(f.path()).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"not a checkpoint").unwrap();
        assert!(DualEncoderParams::load(f.path()).is_err());
    }

    fn triplet(q: &str, qt: &str, p: &str, pt: &str, n: &str, nt: &str) -> ResolvedTriplet {
        ResolvedTriplet {
            query_id: q.into(),
            positive_id: p.into(),
            negative_id: n.into(),
            query_tokens: tokenize(qt, QUERY_MAX_TOKENS),
            positive_tokens: tokenize(pt, PASSAGE_MAX_TOKENS),
            negative_tokens: tokenize(nt, PASSAGE_MAX_TOKENS),
        }
    }
}
