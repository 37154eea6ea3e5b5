//! Exhaustive retrieval with the student encoder and ranked-retrieval
//! metrics against qrels.
//!
//! A query enters the means only if it has at least one passage with a
//! positive grade; judged queries missing from the run score 0 rather than
//! being excluded, and unjudged retrieved passages count as non-relevant.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{tokenize, Corpus, QueryRecord, QUERY_MAX_TOKENS};
use crate::encoder::{DenseIndex, DualEncoderParams, Side};
use crate::error::{Error, Result};
use crate::teachers::{RankedList, Run};

/// Relevance judgments: query -> passage -> grade (non-negative).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_count(&self) -> usize {
        self.judgments.len()
    }

    /// Queries with at least one positively graded passage, in sorted order.
    /// Only these enter metric means.
    pub fn evaluable_queries(&self) -> impl Iterator<Item = &str> {
        self.judgments
            .iter()
            .filter(|(_, m)| m.values().any(|&g| g >= 1))
            .map(|(q, _)| q.as_str())
    }
}

/// Parse qrels lines: `query_id 0 passage_id grade`.
pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut qrels = Qrels::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                &display,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(&display, lineno, format!("bad grade `{}`", fields[3])))?;
        if grade < 0 {
            return Err(Error::parse(&display, lineno, "negative grade"));
        }
        if let Some(m) = qrels.judgments.get(fields[0]) {
            if m.contains_key(fields[2]) {
                return Err(Error::parse(
                    &display,
                    lineno,
                    format!("duplicate judgment ({}, {})", fields[0], fields[2]),
                ));
            }
        }
        qrels.insert(fields[0], fields[2], grade as u32);
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for (query_id, m) in &qrels.judgments {
        for (passage_id, grade) in m {
            writeln!(w, "{query_id} 0 {passage_id} {grade}")
                .map_err(|e| Error::io(display.clone(), e))?;
        }
    }
    w.flush().map_err(|e| Error::io(display, e))
}

/// Write a run in TREC format: `query_id Q0 passage_id rank score tag`.
/// Scores carry 17 significant digits so the file round-trips exactly.
pub fn write_run(run: &Run, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for (query_id, list) in run {
        for entry in &list.entries {
            writeln!(
                w,
                "{query_id} Q0 {} {} {:.16e} {}",
                entry.passage_id, entry.rank, entry.score, list.teacher_id
            )
            .map_err(|e| Error::io(display.clone(), e))?;
        }
    }
    w.flush().map_err(|e| Error::io(display, e))
}

/// Exact top-k retrieval over the full corpus with the student encoder.
pub fn retrieve_topk(
    params: &DualEncoderParams,
    corpus: &Corpus,
    query: &QueryRecord,
    k: usize,
) -> RankedList {
    let index = DenseIndex::build(params, corpus);
    retrieve_topk_with_index(params, &index, query, k, "student")
}

/// Top-k against a prebuilt passage index.
pub fn retrieve_topk_with_index(
    params: &DualEncoderParams,
    index: &DenseIndex,
    query: &QueryRecord,
    k: usize,
    tag: &str,
) -> RankedList {
    assert!(k >= 1);
    let q_vec = params.encode(Side::Query, &tokenize(&query.text, QUERY_MAX_TOKENS));
    RankedList::from_scored(&query.id, tag, index.topk(&q_vec, k), k)
}

/// Retrieve a full run, building the passage index once.
pub fn retrieve_run(
    params: &DualEncoderParams,
    corpus: &Corpus,
    queries: &[QueryRecord],
    k: usize,
    tag: &str,
) -> Run {
    let index = DenseIndex::build(params, corpus);
    let mut run = Run::new();
    for query in queries {
        let list = retrieve_topk_with_index(params, &index, query, k, tag);
        run.insert(query.id.clone(), list);
    }
    run
}

fn ranked_ids<'a>(run: &'a Run, query_id: &str) -> &'a [crate::teachers::RankedEntry] {
    run.get(query_id).map(|l| l.entries.as_slice()).unwrap_or(&[])
}

/// Mean reciprocal rank of the first relevant passage within the top k
/// (grade >= 1 counts as relevant), 0 for queries with none there.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    mean_over_queries(run, qrels, |entries, judged| {
        for (i, e) in entries.iter().take(k).enumerate() {
            if judged.get(&e.passage_id).copied().unwrap_or(0) >= 1 {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    })
}

/// Fraction of each query's relevant passages found in the top k.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    mean_over_queries(run, qrels, |entries, judged| {
        let relevant = judged.values().filter(|&&g| g >= 1).count();
        let hit = entries
            .iter()
            .take(k)
            .filter(|e| judged.get(&e.passage_id).copied().unwrap_or(0) >= 1)
            .count();
        hit as f64 / relevant as f64
    })
}

/// nDCG with exponential gain (2^grade - 1) and log2(i + 1) discount; the
/// ideal ranking sorts judged grades descending and is truncated at k.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    mean_over_queries(run, qrels, |entries, judged| {
        let dcg: f64 = entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, e)| {
                let grade = judged.get(&e.passage_id).copied().unwrap_or(0);
                gain(grade) / ((i + 2) as f64).log2()
            })
            .sum();
        let mut grades: Vec<u32> = judged.values().copied().collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
            .sum();
        dcg / idcg
    })
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Fraction of queries with at least one relevant passage in the top k.
pub fn success_at_k(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    mean_over_queries(run, qrels, |entries, judged| {
        let hit = entries
            .iter()
            .take(k)
            .any(|e| judged.get(&e.passage_id).copied().unwrap_or(0) >= 1);
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

fn mean_over_queries(
    run: &Run,
    qrels: &Qrels,
    per_query: impl Fn(&[crate::teachers::RankedEntry], &BTreeMap<String, u32>) -> f64,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for query_id in qrels.evaluable_queries() {
        let judged = &qrels.judgments[query_id];
        total += per_query(ranked_ids(run, query_id), judged);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Metric cutoffs for a standard evaluation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub retrieve_k: usize,
    pub mrr_k: usize,
    pub recall_k: usize,
    pub ndcg_k: usize,
    pub success_k: usize,
    /// Hold out this many augmented queries as an evaluation set when no
    /// explicit eval queries/qrels are configured.
    pub holdout: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            retrieve_k: 1000,
            mrr_k: 10,
            recall_k: 1000,
            ndcg_k: 10,
            success_k: 5,
            holdout: 0,
        }
    }
}

/// Metric values plus a per-query breakdown.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Run the standard metric set at the configured cutoffs.
pub fn evaluate(run: &Run, qrels: &Qrels, cfg: &EvalConfig) -> EvalReport {
    let mut metrics = BTreeMap::new();
    metrics.insert(format!("RR@{}", cfg.mrr_k), mrr_at_k(run, qrels, cfg.mrr_k));
    metrics.insert(
        format!("R@{}", cfg.recall_k),
        recall_at_k(run, qrels, cfg.recall_k),
    );
    metrics.insert(
        format!("nDCG@{}", cfg.ndcg_k),
        ndcg_at_k(run, qrels, cfg.ndcg_k),
    );
    metrics.insert(
        format!("Success@{}", cfg.success_k),
        success_at_k(run, qrels, cfg.success_k),
    );

    let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for query_id in qrels.evaluable_queries() {
        let mut single = Qrels::new();
        for (p, &g) in &qrels.judgments[query_id] {
            single.insert(query_id, p.clone(), g);
        }
        let entry = per_query.entry(query_id.to_string()).or_default();
        entry.insert(format!("RR@{}", cfg.mrr_k), mrr_at_k(run, &single, cfg.mrr_k));
        entry.insert(
            format!("R@{}", cfg.recall_k),
            recall_at_k(run, &single, cfg.recall_k),
        );
        entry.insert(
            format!("nDCG@{}", cfg.ndcg_k),
            ndcg_at_k(run, &single, cfg.ndcg_k),
        );
        entry.insert(
            format!("Success@{}", cfg.success_k),
            success_at_k(run, &single, cfg.success_k),
        );
    }
    EvalReport { metrics, per_query }
}

/// Export a report as `metric<TAB>value` rows.
pub fn write_eval_report(report: &EvalReport, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for (name, value) in &report.metrics {
        writeln!(w, "{name}\t{value}").map_err(|e| Error::io(display.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(display, e))
}
