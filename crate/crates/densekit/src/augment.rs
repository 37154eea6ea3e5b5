//! Training-query augmentation: sentence cropping, a rule-based pseudo-query
//! generator, and deterministic mixing of the two pools.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    count_tokens, tokenize, Corpus, Origin, Passage, QueryRecord, PASSAGE_MAX_TOKENS,
};
use crate::error::{Error, Result};
use crate::seeds::{sub_seed, substream};

/// Sentence-cropping rules. Sentences end at a terminator character followed
/// by whitespace, and at hard newlines.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CroppingConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub sentence_terminators: String,
}

impl Default for CroppingConfig {
    fn default() -> Self {
        Self {
            min_tokens: 3,
            max_tokens: 64,
            sentence_terminators: ".!?".to_string(),
        }
    }
}

impl CroppingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens < 1 || self.min_tokens > self.max_tokens {
            return Err(Error::invalid(
                "cropping config",
                format!(
                    "need 1 <= min_tokens <= max_tokens, got {}..{}",
                    self.min_tokens, self.max_tokens
                ),
            ));
        }
        Ok(())
    }
}

/// Split text into sentence spans: a terminator followed by whitespace ends
/// a sentence (terminator kept), and a newline always ends one.
fn split_sentences<'a>(text: &'a str, terminators: &str) -> Vec<&'a str> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '\n' {
            spans.push(&text[start..i]);
            start = i + c.len_utf8();
        } else if terminators.contains(c) {
            if let Some(&(next_i, next_c)) = chars.peek() {
                if next_c.is_whitespace() {
                    spans.push(&text[start..next_i]);
                    start = next_i;
                }
            }
        }
    }
    if start < text.len() {
        spans.push(&text[start..]);
    }
    spans
}

/// Cut `text` right after its `max_tokens`-th token, keeping the original
/// characters up to that point.
fn truncate_at_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    let mut end = text.len();
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if !in_token {
                in_token = true;
                count += 1;
            }
            end = i + c.len_utf8();
        } else if in_token {
            in_token = false;
            if count == max_tokens {
                return &text[..end];
            }
        }
    }
    text
}

/// Emit each qualifying sentence of a passage as a cropped query. The k-th
/// kept sentence gets id `<passage_id>#s<k>`; sentences longer than
/// `max_tokens` are cut at the token boundary.
pub fn crop_sentences(passage: &Passage, cfg: &CroppingConfig) -> Result<Vec<QueryRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut kept = 0;
    for span in split_sentences(&passage.text, &cfg.sentence_terminators) {
        let sentence = span.trim();
        if sentence.is_empty() {
            continue;
        }
        let n_tokens = count_tokens(sentence);
        if n_tokens < cfg.min_tokens {
            continue;
        }
        let text = if n_tokens > cfg.max_tokens {
            truncate_at_tokens(sentence, cfg.max_tokens).to_string()
        } else {
            sentence.to_string()
        };
        kept += 1;
        out.push(QueryRecord {
            id: format!("{}#s{}", passage.id, kept),
            text,
            origin: Origin::Cropped,
            source_passage_id: Some(passage.id.clone()),
        });
    }
    Ok(out)
}

/// Crop every passage of a corpus.
pub fn crop_corpus(corpus: &Corpus, cfg: &CroppingConfig) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for passage in corpus.iter() {
        out.extend(crop_sentences(passage, cfg)?);
    }
    Ok(out)
}

/// Rule-based stand-in for a neural query generator. Each pseudo-query picks
/// 3 to 8 distinct passage tokens (fewer when the passage has fewer), sampled
/// without replacement with probability proportional to
/// term frequency x corpus idf, and emits them in passage order.
#[derive(Debug, Clone)]
pub struct PseudoQueryGenerator {
    idf: HashMap<String, f64>,
    doc_count: usize,
}

pub const PSEUDO_QUERY_MIN_TOKENS: usize = 3;
pub const PSEUDO_QUERY_MAX_TOKENS: usize = 8;

impl PseudoQueryGenerator {
    /// Collect document frequencies over `tokenize(text, 128)` and convert
    /// them to idf(t) = ln(1 + N / df(t)).
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        for passage in corpus.iter() {
            let tokens = tokenize(&passage.text, PASSAGE_MAX_TOKENS);
            let mut seen: Vec<&String> = Vec::new();
            for tok in &tokens.tokens {
                if !seen.contains(&tok) {
                    seen.push(tok);
                }
            }
            for tok in seen {
                *df.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf = df
            .into_iter()
            .map(|(tok, d)| (tok, (1.0 + n / d as f64).ln()))
            .collect();
        Self {
            idf,
            doc_count: corpus.len(),
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.idf.get(token).copied()
    }

    /// Distinct passage tokens in first-occurrence order with their sampling
    /// weights (tf x idf). Exposed so the weights can be checked against an
    /// independently computed table.
    pub fn token_weights(&self, passage: &Passage) -> Vec<(String, f64)> {
        let tokens = tokenize(&passage.text, PASSAGE_MAX_TOKENS);
        let mut order: Vec<String> = Vec::new();
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for tok in &tokens.tokens {
            if !tf.contains_key(tok.as_str()) {
                order.push(tok.clone());
            }
            *tf.entry(tok).or_insert(0) += 1;
        }
        order
            .into_iter()
            .map(|tok| {
                let weight = tf[tok.as_str()] as f64 * self.idf.get(&tok).copied().unwrap_or(0.0);
                (tok, weight)
            })
            .collect()
    }

    /// Generate `n` pseudo-queries for one passage. Deterministic given
    /// `seed`; internally each passage uses the sub-stream
    /// hash(seed, passage id), so a corpus pass with one seed is reproducible
    /// per passage.
    pub fn generate(&self, passage: &Passage, n: usize, seed: u64) -> Vec<QueryRecord> {
        assert!(n >= 1, "n must be at least 1");
        let weighted = self.token_weights(passage);
        if weighted.is_empty() {
            return Vec::new();
        }
        let mut rng = substream(sub_seed(seed, &["pseudo-query", &passage.id]), &[]);
        let mut out = Vec::with_capacity(n);
        for k in 1..=n {
            let want = if weighted.len() <= PSEUDO_QUERY_MIN_TOKENS {
                weighted.len()
            } else {
                rng.gen_range(PSEUDO_QUERY_MIN_TOKENS..=PSEUDO_QUERY_MAX_TOKENS)
                    .min(weighted.len())
            };
            // Weighted sampling without replacement over (position, weight).
            let mut pool: Vec<(usize, f64)> = weighted
                .iter()
                .enumerate()
                .map(|(i, (_, w))| (i, *w))
                .collect();
            let mut picked: Vec<usize> = Vec::with_capacity(want);
            for _ in 0..want {
                let total: f64 = pool.iter().map(|(_, w)| w).sum();
                let chosen = if total <= 0.0 {
                    rng.gen_range(0..pool.len())
                } else {
                    let mut x = rng.gen_range(0.0..total);
                    let mut idx = pool.len() - 1;
                    for (j, (_, w)) in pool.iter().enumerate() {
                        if x < *w {
                            idx = j;
                            break;
                        }
                        x -= w;
                    }
                    idx
                };
                picked.push(pool.remove(chosen).0);
            }
            picked.sort_unstable();
            let text = picked
                .iter()
                .map(|&i| weighted[i].0.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            out.push(QueryRecord {
                id: format!("{}#g{}", passage.id, k),
                text,
                origin: Origin::Generated,
                source_passage_id: Some(passage.id.clone()),
            });
        }
        out
    }

    /// Generate `per_passage` pseudo-queries for every passage.
    pub fn generate_corpus(&self, corpus: &Corpus, per_passage: usize, seed: u64) -> Vec<QueryRecord> {
        let mut out = Vec::new();
        for passage in corpus.iter() {
            out.extend(self.generate(passage, per_passage, seed));
        }
        out
    }
}

/// Mixture composition for combining cropped and generated query pools.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub cropped_fraction: f64,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            cropped_fraction: 0.5,
            seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cropped_fraction) {
            return Err(Error::invalid(
                "mix config",
                format!("cropped_fraction {} outside [0, 1]", self.cropped_fraction),
            ));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Draw `round(cropped_fraction * total)` queries from the cropped pool
/// (round half up) and the rest from the generated pool, without replacement,
/// then shuffle. `requested_total` defaults to twice the smaller pool.
pub fn mix_queries(
    cropped: &[QueryRecord],
    generated: &[QueryRecord],
    cfg: &MixConfig,
    requested_total: Option<usize>,
) -> Result<Vec<QueryRecord>> {
    cfg.validate()?;
    let total = requested_total.unwrap_or(2 * cropped.len().min(generated.len()));
    let n_cropped = round_half_up(cfg.cropped_fraction * total as f64);
    let n_generated = total - n_cropped;
    if n_cropped > cropped.len() {
        return Err(Error::MixShortfall {
            side: "cropped",
            requested: n_cropped,
            available: cropped.len(),
        });
    }
    if n_generated > generated.len() {
        return Err(Error::MixShortfall {
            side: "generated",
            requested: n_generated,
            available: generated.len(),
        });
    }
    let mut rng = substream(cfg.seed, &["mix"]);
    let mut out = sample_without_replacement(cropped, n_cropped, &mut rng);
    out.extend(sample_without_replacement(generated, n_generated, &mut rng));
    // Fisher-Yates over the combined pool.
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    Ok(out)
}

fn sample_without_replacement(
    pool: &[QueryRecord],
    n: usize,
    rng: &mut impl Rng,
) -> Vec<QueryRecord> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices[..n].iter().map(|&i| pool[i].clone()).collect()
}
