//! Sources of supervision: a sparse BM25 teacher over an inverted index, a
//! frozen dense teacher, and an import path for externally produced run
//! files. Every teacher answers a query with a [`RankedList`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, QueryRecord, PASSAGE_MAX_TOKENS, QUERY_MAX_TOKENS};
use crate::encoder::{DenseIndex, DualEncoderParams, Side};
use crate::error::{Error, Result};

/// One (passage, frequency) cell of a postings list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub ordinal: u32,
    pub term_frequency: u32,
}

/// Term-at-a-time inverted index over `tokenize(text, 128)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// Postings per term, each sorted by passage ordinal.
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
    pub doc_count: usize,
}

/// Build the inverted index for a corpus. Errors on an empty corpus.
pub fn build_inverted_index(corpus: &Corpus) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(Error::invalid("index", "cannot index an empty corpus"));
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (ordinal, passage) in corpus.iter().enumerate() {
        let tokens = tokenize(&passage.text, PASSAGE_MAX_TOKENS);
        doc_lengths.push(tokens.len() as u32);
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for tok in &tokens.tokens {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for (tok, term_frequency) in counts {
            postings.entry(tok.to_string()).or_default().push(Posting {
                ordinal: ordinal as u32,
                term_frequency,
            });
        }
    }
    let avg_doc_length =
        doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        doc_count: corpus.len(),
    })
}

/// BM25 parameters. Defaults are the common IR-toolkit values for short
/// passages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// BM25 score of one passage for a token list. Each query-token occurrence
/// contributes `idf(t) * tf * (k1+1) / (tf + k1 * (1 - b + b * len/avglen))`
/// with `idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)`; duplicate query
/// tokens contribute independently.
pub fn bm25_score(
    index: &InvertedIndex,
    query_tokens: &[String],
    ordinal: usize,
    params: Bm25Params,
) -> f64 {
    let n = index.doc_count as f64;
    let len = index.doc_lengths[ordinal] as f64;
    let mut score = 0.0;
    for tok in query_tokens {
        let Some(postings) = index.postings.get(tok) else {
            continue;
        };
        let Ok(pos) = postings.binary_search_by_key(&(ordinal as u32), |p| p.ordinal) else {
            continue;
        };
        let tf = postings[pos].term_frequency as f64;
        let df = postings.len() as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        let denom = tf + params.k1 * (1.0 - params.b + params.b * len / index.avg_doc_length);
        score += idf * tf * (params.k1 + 1.0) / denom;
    }
    score
}

/// One teacher's ordered answer for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage_id: String,
    /// 1-based rank.
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub teacher_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Order scored candidates by (score descending, passage id ascending),
    /// keep the top `k`, and assign consecutive ranks from 1.
    pub fn from_scored(
        query_id: impl Into<String>,
        teacher_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| RankedEntry {
                passage_id,
                rank: i + 1,
                score,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            teacher_id: teacher_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The passage ids of the first `k` entries.
    pub fn top_ids(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(k).map(|e| e.passage_id.as_str())
    }

    /// Check ranks are consecutive from 1, scores non-increasing, and
    /// passage ids distinct.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        let mut last_score = f64::INFINITY;
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.rank != i + 1 {
                return Err(Error::invalid(
                    "ranked list",
                    format!(
                        "query `{}`: rank {} at position {}",
                        self.query_id,
                        entry.rank,
                        i + 1
                    ),
                ));
            }
            if entry.score > last_score {
                return Err(Error::invalid(
                    "ranked list",
                    format!("query `{}`: scores increase at rank {}", self.query_id, entry.rank),
                ));
            }
            last_score = entry.score;
            if seen.insert(entry.passage_id.clone(), ()).is_some() {
                return Err(Error::invalid(
                    "ranked list",
                    format!(
                        "query `{}`: duplicate passage `{}`",
                        self.query_id, entry.passage_id
                    ),
                ));
            }
        }
        Ok(())
    }

    /// A copy truncated to depth `k` (ranks already consecutive).
    pub fn truncated(&self, k: usize) -> RankedList {
        let mut copy = self.clone();
        copy.entries.truncate(k);
        copy
    }
}

/// A full retrieval output: one ranked list per query.
pub type Run = BTreeMap<String, RankedList>;

/// A supervision source with a stable id.
pub struct Teacher {
    pub id: String,
    kind: TeacherKind,
}

enum TeacherKind {
    Bm25 {
        index: InvertedIndex,
        ids: Vec<String>,
        params: Bm25Params,
    },
    DenseHash {
        encoder: DualEncoderParams,
        index: DenseIndex,
    },
    RunImport {
        runs: Run,
    },
}

impl Teacher {
    /// Sparse teacher: BM25 over an inverted index of the corpus.
    pub fn bm25(id: impl Into<String>, corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        let index = build_inverted_index(corpus)?;
        Ok(Self::bm25_with_index(id, corpus, index, params))
    }

    /// Sparse teacher over a prebuilt index of the same corpus.
    pub fn bm25_with_index(
        id: impl Into<String>,
        corpus: &Corpus,
        index: InvertedIndex,
        params: Bm25Params,
    ) -> Self {
        assert_eq!(index.doc_count, corpus.len(), "index built for another corpus");
        Self {
            id: id.into(),
            kind: TeacherKind::Bm25 {
                index,
                ids: corpus.iter().map(|p| p.id.clone()).collect(),
                params,
            },
        }
    }

    /// Dense teacher: a frozen dual encoder scored exhaustively over the
    /// corpus.
    pub fn dense_hash(id: impl Into<String>, corpus: &Corpus, encoder: DualEncoderParams) -> Self {
        let index = DenseIndex::build(&encoder, corpus);
        Self {
            id: id.into(),
            kind: TeacherKind::DenseHash { encoder, index },
        }
    }

    /// External teacher: ranked lists imported from a run file.
    pub fn run_import(id: impl Into<String>, runs: Run) -> Self {
        Self {
            id: id.into(),
            kind: TeacherKind::RunImport { runs },
        }
    }

    /// Top-K answer for a query, ties broken by ascending passage id.
    ///
    /// The BM25 candidate set is every passage sharing at least one query
    /// term, so a query matching nothing yields an empty list; the dense
    /// teacher scores the whole corpus. Imported teachers return their stored
    /// list truncated to K, or an empty list for unknown queries.
    pub fn retrieve(&self, query: &QueryRecord, k: usize) -> RankedList {
        assert!(k >= 1, "k must be at least 1");
        match &self.kind {
            TeacherKind::Bm25 { index, ids, params } => {
                let tokens = tokenize(&query.text, QUERY_MAX_TOKENS);
                let mut scores: HashMap<u32, f64> = HashMap::new();
                for tok in &tokens.tokens {
                    if let Some(postings) = index.postings.get(tok) {
                        let df = postings.len() as f64;
                        let n = index.doc_count as f64;
                        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                        for posting in postings {
                            let tf = posting.term_frequency as f64;
                            let len = index.doc_lengths[posting.ordinal as usize] as f64;
                            let denom = tf
                                + params.k1
                                    * (1.0 - params.b + params.b * len / index.avg_doc_length);
                            *scores.entry(posting.ordinal).or_insert(0.0) +=
                                idf * tf * (params.k1 + 1.0) / denom;
                        }
                    }
                }
                let scored: Vec<(String, f64)> = scores
                    .into_iter()
                    .map(|(ordinal, score)| (ids[ordinal as usize].clone(), score))
                    .collect();
                RankedList::from_scored(&query.id, &self.id, scored, k)
            }
            TeacherKind::DenseHash { encoder, index } => {
                let q_vec = encoder.encode_text(Side::Query, &query.text);
                let scored = index.topk(&q_vec, k);
                RankedList::from_scored(&query.id, &self.id, scored, k)
            }
            TeacherKind::RunImport { runs } => match runs.get(&query.id) {
                Some(list) => {
                    let mut list = list.truncated(k);
                    list.teacher_id = self.id.clone();
                    list
                }
                None => RankedList {
                    query_id: query.id.clone(),
                    teacher_id: self.id.clone(),
                    entries: Vec::new(),
                },
            },
        }
    }
}

/// Retrieve a full run for a query set.
pub fn teacher_run(teacher: &Teacher, queries: &[QueryRecord], k: usize) -> Run {
    let mut run = Run::new();
    for query in queries {
        let list = teacher.retrieve(query, k);
        if !list.is_empty() {
            run.insert(query.id.clone(), list);
        }
    }
    run
}

/// Parse a TREC-format run file: `query_id Q0 passage_id rank score tag`.
/// Ranks must be consecutive from 1 within each query, scores non-increasing,
/// and (query, passage) pairs unique. The resulting lists carry `teacher_id`.
pub fn import_run_file(path: &Path, teacher_id: &str) -> Result<Run> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut run = Run::new();
    let mut next_rank: HashMap<String, usize> = HashMap::new();
    let mut last_score: HashMap<String, f64> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                &display,
                lineno,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let query_id = fields[0];
        let passage_id = fields[2];
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(&display, lineno, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(&display, lineno, format!("bad score `{}`", fields[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(&display, lineno, "non-finite score"));
        }

        let expected = next_rank.entry(query_id.to_string()).or_insert(1);
        if rank != *expected {
            return Err(Error::parse(
                &display,
                lineno,
                format!("query `{query_id}`: expected rank {expected}, found {rank}"),
            ));
        }
        *expected += 1;
        if let Some(&prev) = last_score.get(query_id) {
            if score > prev {
                return Err(Error::parse(
                    &display,
                    lineno,
                    format!("query `{query_id}`: score increases at rank {rank}"),
                ));
            }
        }
        last_score.insert(query_id.to_string(), score);

        let list = run.entry(query_id.to_string()).or_insert_with(|| RankedList {
            query_id: query_id.to_string(),
            teacher_id: teacher_id.to_string(),
            entries: Vec::new(),
        });
        if list.entries.iter().any(|e| e.passage_id == passage_id) {
            return Err(Error::parse(
                &display,
                lineno,
                format!("duplicate (query `{query_id}`, passage `{passage_id}`)"),
            ));
        }
        list.entries.push(RankedEntry {
            passage_id: passage_id.to_string(),
            rank,
            score,
        });
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, Passage};
    use std::io::Write as _;

    fn toy_corpus() -> Corpus {
        let mut corpus = Corpus::new();
        for (id, text) in [("d1", "cat sat"), ("d2", "cat cat dog")] {
            corpus
                .push(Passage {
                    id: id.into(),
                    text: text.into(),
                })
                .unwrap();
        }
        corpus
    }

    fn query(id: &str, text: &str) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            text: text.into(),
            origin: Origin::Human,
            source_passage_id: None,
        }
    }

    #[test]
    fn index_counts_postings() {
        let index = build_inverted_index(&toy_corpus()).unwrap();
        assert_eq!(
            index.postings["cat"],
            vec![
                Posting { ordinal: 0, term_frequency: 1 },
                Posting { ordinal: 1, term_frequency: 2 }
            ]
        );
        assert_eq!(index.avg_doc_length, 2.5);
        assert_eq!(index.doc_count, 2);
        assert!(index.postings.get("absent").is_none());
    }

    #[test]
    fn index_rejects_empty_corpus() {
        assert!(build_inverted_index(&Corpus::new()).is_err());
    }

    #[test]
    fn bm25_matches_hand_computed_oracle() {
        // Query [cat] on d1: idf = ln((2-2+0.5)/(2+0.5) + 1) = ln(1.2);
        // tf term = 1*1.9 / (1 + 0.9*(1 - 0.4 + 0.4*(2/2.5))) = 1.9/1.828.
        let index = build_inverted_index(&toy_corpus()).unwrap();
        let got = bm25_score(&index, &["cat".into()], 0, Bm25Params::default());
        let expected = 1.2f64.ln() * 1.9 / 1.828;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.18950271220378215).abs() < 1e-6);
    }

    #[test]
    fn bm25_absent_term_contributes_zero() {
        let index = build_inverted_index(&toy_corpus()).unwrap();
        let with = bm25_score(&index, &["cat".into()], 0, Bm25Params::default());
        let padded = bm25_score(
            &index,
            &["cat".into(), "zebra".into()],
            0,
            Bm25Params::default(),
        );
        assert_eq!(with, padded);
        // "dog" indexed but not in d1.
        assert_eq!(bm25_score(&index, &["dog".into()], 0, Bm25Params::default()), 0.0);
    }

    #[test]
    fn bm25_duplicate_query_terms_add_up() {
        let index = build_inverted_index(&toy_corpus()).unwrap();
        let single = bm25_score(&index, &["cat".into()], 0, Bm25Params::default());
        let double = bm25_score(
            &index,
            &["cat".into(), "cat".into()],
            0,
            Bm25Params::default(),
        );
        assert!((double - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn bm25_with_b_zero_ignores_length() {
        // Two passages with identical tf for the query term but different
        // lengths score identically at b = 0.
        let mut corpus = Corpus::new();
        corpus
            .push(Passage { id: "short".into(), text: "cat runs".into() })
            .unwrap();
        corpus
            .push(Passage {
                id: "long".into(),
                text: "cat wanders around the big field all day".into(),
            })
            .unwrap();
        let index = build_inverted_index(&corpus).unwrap();
        let params = Bm25Params { k1: 0.9, b: 0.0 };
        let a = bm25_score(&index, &["cat".into()], 0, params);
        let b = bm25_score(&index, &["cat".into()], 1, params);
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn self_retrieval_ranks_the_passage_first() {
        let corpus = toy_corpus();
        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        let list = teacher.retrieve(&query("q", "cat cat dog"), 10);
        assert_eq!(list.entries[0].passage_id, "d2");
    }

    #[test]
    fn retrieve_saturates_at_corpus_size() {
        let corpus = toy_corpus();
        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        let list = teacher.retrieve(&query("q", "cat"), 100);
        assert_eq!(list.len(), 2);
        list.validate().unwrap();
    }

    #[test]
    fn unmatched_query_yields_empty_list() {
        let corpus = toy_corpus();
        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        assert!(teacher.retrieve(&query("q", "zebra"), 10).is_empty());
    }

    fn twenty_passage_corpus() -> Corpus {
        let texts = [
            "the cat sat on the mat",
            "a dog ran across the yard",
            "cats and dogs live together",
            "the quick brown fox jumps",
            "a lazy dog sleeps all day",
            "birds sing in the morning",
            "the cat chased a bird",
            "fish swim in the river",
            "a fox hunts at night",
            "the mat was red and warm",
            "dogs bark at strangers",
            "a bird builds a nest",
            "the river flows to the sea",
            "cats nap in the afternoon sun",
            "a stranger walked past the yard",
            "morning light fills the room",
            "the sea is calm tonight",
            "a warm room helps sleep",
            "night falls over the city",
            "the city wakes with light",
        ];
        let mut corpus = Corpus::new();
        for (i, text) in texts.iter().enumerate() {
            corpus
                .push(Passage {
                    id: format!("p{:02}", i),
                    text: text.to_string(),
                })
                .unwrap();
        }
        corpus
    }

    #[test]
    fn bm25_top10_matches_exhaustive_oracle() {
        let corpus = twenty_passage_corpus();
        let index = build_inverted_index(&corpus).unwrap();
        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        for qtext in ["the cat sat", "dog yard", "river sea light", "warm room sleep"] {
            let q = query("q", qtext);
            let got = teacher.retrieve(&q, 10);

            // Oracle: score every passage independently, keep those sharing a
            // term, sort by (score desc, id asc).
            let tokens = tokenize(qtext, QUERY_MAX_TOKENS).tokens;
            let mut scored: Vec<(String, f64)> = Vec::new();
            for (ordinal, passage) in corpus.iter().enumerate() {
                let s = bm25_score(&index, &tokens, ordinal, Bm25Params::default());
                if s != 0.0 {
                    scored.push((passage.id.clone(), s));
                }
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored.truncate(10);
            let expected: Vec<&str> = scored.iter().map(|(id, _)| id.as_str()).collect();
            let actual: Vec<&str> = got.entries.iter().map(|e| e.passage_id.as_str()).collect();
            assert_eq!(actual, expected, "query `{qtext}`");
        }
    }

    #[test]
    fn dense_top10_matches_exhaustive_oracle() {
        use crate::encoder::{score, DualEncoderParams, Side};
        let corpus = twenty_passage_corpus();
        let params = DualEncoderParams::init(512, 16, 11);
        let teacher = Teacher::dense_hash("dense", &corpus, params.clone());
        let q = query("q", "the cat sat on the mat");
        let got = teacher.retrieve(&q, 10);

        let q_vec = params.encode_text(Side::Query, &q.text);
        let mut scored: Vec<(String, f64)> = corpus
            .iter()
            .map(|p| {
                let d_vec = params.encode_text(Side::Passage, &p.text);
                (p.id.clone(), score(&q_vec, &d_vec).unwrap())
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(10);
        let expected: Vec<&str> = scored.iter().map(|(id, _)| id.as_str()).collect();
        let actual: Vec<&str> = got.entries.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(actual, expected);
    }

    #[test]
    fn dense_teacher_is_deterministic_and_ties_break_by_id() {
        use crate::encoder::DualEncoderParams;
        let mut corpus = twenty_passage_corpus();
        // Exact duplicate text under a new id: equal vector, equal score.
        corpus
            .push(Passage {
                id: "p00dup".into(),
                text: "the cat sat on the mat".into(),
            })
            .unwrap();
        let params = DualEncoderParams::init(512, 16, 11);
        let t1 = Teacher::dense_hash("dense", &corpus, params.clone());
        let t2 = Teacher::dense_hash("dense", &corpus, params);
        let q = query("q", "the cat sat on the mat");
        let a = t1.retrieve(&q, 21);
        let b = t2.retrieve(&q, 21);
        assert_eq!(a, b);
        let pos_orig = a.entries.iter().position(|e| e.passage_id == "p00").unwrap();
        let pos_dup = a.entries.iter().position(|e| e.passage_id == "p00dup").unwrap();
        assert_eq!(a.entries[pos_orig].score, a.entries[pos_dup].score);
        assert_eq!(pos_dup, pos_orig + 1, "tie must break by ascending id");
    }

    #[test]
    fn retrieval_prefix_property() {
        let corpus = twenty_passage_corpus();
        let teacher = Teacher::bm25("sparse", &corpus, Bm25Params::default()).unwrap();
        let q = query("q", "the cat and the dog in the yard");
        let short = teacher.retrieve(&q, 5);
        let long = teacher.retrieve(&q, 15);
        assert_eq!(short.entries.as_slice(), &long.entries[..short.len()]);
    }

    #[test]
    fn import_run_file_parses_and_validates() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "q1 Q0 d1 1 3.5 sys").unwrap();
        writeln!(f, "q1 Q0 d2 2 2.25 sys").unwrap();
        let run = import_run_file(f.path(), "imported").unwrap();
        let list = &run["q1"];
        assert_eq!(list.teacher_id, "imported");
        assert_eq!(list.len(), 2);
        assert_eq!(list.entries[1].passage_id, "d2");
        list.validate().unwrap();
    }

    #[test]
    fn import_rejects_out_of_order_ranks() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "q1 Q0 d1 1 3.5 sys").unwrap();
        writeln!(f, "q1 Q0 d2 3 2.25 sys").unwrap();
        let err = import_run_file(f.path(), "t").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn import_rejects_increasing_scores() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "q1 Q0 d1 1 1.0 sys").unwrap();
        writeln!(f, "q1 Q0 d2 2 2.0 sys").unwrap();
        let err = import_run_file(f.path(), "t").unwrap_err();
        assert!(err.to_string().contains("score increases"), "{err}");
    }

    #[test]
    fn import_rejects_duplicate_pairs() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "q1 Q0 d1 1 2.0 sys").unwrap();
        writeln!(f, "q1 Q0 d1 2 1.0 sys").unwrap();
        let err = import_run_file(f.path(), "t").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
