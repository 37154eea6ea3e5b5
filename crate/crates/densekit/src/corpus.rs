//! Passage and query storage, identifier spaces, and tokenization.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum token length for query texts.
pub const QUERY_MAX_TOKENS: usize = 32;
/// Maximum token length for passage texts.
pub const PASSAGE_MAX_TOKENS: usize = 128;

/// One identified text unit of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Where a training query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Cropped,
    Generated,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Human => "human",
            Origin::Cropped => "cropped",
            Origin::Generated => "generated",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Origin::Human),
            "cropped" => Ok(Origin::Cropped),
            "generated" => Ok(Origin::Generated),
            other => Err(Error::invalid(
                "origin",
                format!("`{other}` is not one of human|cropped|generated"),
            )),
        }
    }
}

/// A query with provenance. `source_passage_id` is filled by the augmentation
/// stages; imported query pools may omit it. Human queries never carry one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_passage_id: Option<String>,
}

/// A tokenized text, truncated to a side-specific maximum length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub truncated_to: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercase and split on every maximal run of non-alphanumeric characters,
/// keeping the first `max_len` tokens.
pub fn tokenize(text: &str, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut tokens = Vec::new();
    for raw in text.split(|c: char| !c.is_alphanumeric()) {
        if raw.is_empty() {
            continue;
        }
        tokens.push(raw.to_lowercase());
        if tokens.len() == max_len {
            break;
        }
    }
    TokenSequence {
        tokens,
        truncated_to: max_len,
    }
}

/// Number of tokens `tokenize` would produce without a length cap.
pub fn count_tokens(text: &str) -> usize {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .count()
}

/// On-disk encoding for corpora and query sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tsv,
    Jsonl,
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(FileFormat::Tsv),
            "jsonl" => Ok(FileFormat::Jsonl),
            other => Err(Error::invalid(
                "format",
                format!("`{other}` is not one of tsv|jsonl"),
            )),
        }
    }
}

impl FileFormat {
    /// Guess the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => FileFormat::Jsonl,
            _ => FileFormat::Tsv,
        }
    }
}

/// An immutable, insertion-ordered collection of passages with unique ids.
/// Ordinals index into insertion order and are the working currency of the
/// retrieval structures.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a passage, validating the id/text invariants.
    pub fn push(&mut self, passage: Passage) -> Result<()> {
        if passage.id.is_empty() {
            return Err(Error::invalid("passage", "empty id"));
        }
        if passage.text.trim().is_empty() {
            return Err(Error::invalid(
                "passage",
                format!("passage `{}` has empty text", passage.id),
            ));
        }
        if self.by_id.contains_key(&passage.id) {
            return Err(Error::DuplicateId {
                what: "passage",
                id: passage.id,
            });
        }
        self.by_id.insert(passage.id.clone(), self.passages.len());
        self.passages.push(passage);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_ordinal(&self, ordinal: usize) -> &Passage {
        &self.passages[ordinal]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }
}

#[derive(Deserialize)]
struct PassageRow {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct QueryRow {
    id: String,
    text: String,
    #[serde(default)]
    source_passage_id: Option<String>,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line)))
}

fn read_line(path: &Path, lineno: usize, line: std::io::Result<String>) -> Result<String> {
    let mut line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
    if line.ends_with('\r') {
        line.pop();
    }
    let _ = lineno;
    Ok(line)
}

/// Load a passage corpus. TSV rows are `id<TAB>text`; JSONL objects carry
/// `id` and `text` string fields. Insertion order is preserved.
pub fn load_corpus(path: &Path, format: FileFormat) -> Result<Corpus> {
    let display = path.display().to_string();
    let mut corpus = Corpus::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, lineno, line)?;
        let (id, text) = match format {
            FileFormat::Tsv => {
                let mut fields = line.split('\t');
                match (fields.next(), fields.next(), fields.next()) {
                    (Some(id), Some(text), None) => (id.to_string(), text.to_string()),
                    _ => {
                        return Err(Error::parse(&display, lineno, "expected `id<TAB>text`"));
                    }
                }
            }
            FileFormat::Jsonl => {
                let row: PassageRow = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(&display, lineno, e.to_string()))?;
                (row.id, row.text)
            }
        };
        if id.is_empty() {
            return Err(Error::parse(&display, lineno, "empty id"));
        }
        if text.trim().is_empty() {
            return Err(Error::parse(&display, lineno, "empty text"));
        }
        corpus.push(Passage { id, text }).map_err(|e| match e {
            Error::DuplicateId { id, .. } => {
                Error::parse(&display, lineno, format!("duplicate passage id `{id}`"))
            }
            other => other,
        })?;
    }
    Ok(corpus)
}

/// Write a corpus back out. The TSV encoding has no escaping, so texts
/// containing tabs or newlines are rejected; use JSONL for those.
pub fn write_corpus(corpus: &Corpus, path: &Path, format: FileFormat) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for passage in corpus.iter() {
        match format {
            FileFormat::Tsv => {
                check_tsv_safe(&passage.id, &passage.text)?;
                writeln!(w, "{}\t{}", passage.id, passage.text)
                    .map_err(|e| Error::io(display.clone(), e))?;
            }
            FileFormat::Jsonl => {
                let json = serde_json::json!({ "id": passage.id, "text": passage.text });
                writeln!(w, "{json}").map_err(|e| Error::io(display.clone(), e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(display, e))
}

fn check_tsv_safe(id: &str, text: &str) -> Result<()> {
    if id.contains(['\t', '\n']) || text.contains(['\t', '\n']) {
        return Err(Error::invalid(
            "tsv",
            format!("record `{id}` contains a tab or newline; write it as jsonl"),
        ));
    }
    Ok(())
}

/// Load a plain query set (TSV `id<TAB>text` or JSONL with optional
/// `source_passage_id`), stamping `origin` on every record. Human queries
/// may not carry a source passage.
pub fn load_queries(path: &Path, format: FileFormat, origin: Origin) -> Result<Vec<QueryRecord>> {
    let display = path.display().to_string();
    let mut out: Vec<QueryRecord> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, lineno, line)?;
        let (id, text, source) = match format {
            FileFormat::Tsv => {
                let mut fields = line.split('\t');
                match (fields.next(), fields.next(), fields.next()) {
                    (Some(id), Some(text), None) => (id.to_string(), text.to_string(), None),
                    _ => {
                        return Err(Error::parse(&display, lineno, "expected `id<TAB>text`"));
                    }
                }
            }
            FileFormat::Jsonl => {
                let row: QueryRow = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(&display, lineno, e.to_string()))?;
                (row.id, row.text, row.source_passage_id)
            }
        };
        validate_query_row(&display, lineno, &id, &text, origin, &source, &mut seen)?;
        out.push(QueryRecord {
            id,
            text,
            origin,
            source_passage_id: source,
        });
    }
    Ok(out)
}

fn validate_query_row(
    display: &str,
    lineno: usize,
    id: &str,
    text: &str,
    origin: Origin,
    source: &Option<String>,
    seen: &mut HashMap<String, ()>,
) -> Result<()> {
    if id.is_empty() {
        return Err(Error::parse(display, lineno, "empty id"));
    }
    if text.trim().is_empty() {
        return Err(Error::parse(display, lineno, "empty text"));
    }
    if origin == Origin::Human && source.is_some() {
        return Err(Error::parse(
            display,
            lineno,
            format!("human query `{id}` carries a source_passage_id"),
        ));
    }
    if seen.insert(id.to_string(), ()).is_some() {
        return Err(Error::parse(
            display,
            lineno,
            format!("duplicate query id `{id}`"),
        ));
    }
    Ok(())
}

/// Read the augmented query file format:
/// `id<TAB>text<TAB>origin<TAB>source_passage_id` with an empty last field
/// for queries without a source. Rows with only `id<TAB>text` are accepted
/// as human queries, so plain dev-query files pass through the same reader.
pub fn read_query_file(path: &Path) -> Result<Vec<QueryRecord>> {
    let display = path.display().to_string();
    let mut out = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, lineno, line)?;
        let fields: Vec<&str> = line.split('\t').collect();
        let (id, text, origin, source) = match fields.as_slice() {
            [id, text] => (*id, *text, Origin::Human, None),
            [id, text, origin] => (
                *id,
                *text,
                parse_origin(&display, lineno, origin)?,
                None,
            ),
            [id, text, origin, source] => (
                *id,
                *text,
                parse_origin(&display, lineno, origin)?,
                if source.is_empty() {
                    None
                } else {
                    Some(source.to_string())
                },
            ),
            _ => {
                return Err(Error::parse(
                    &display,
                    lineno,
                    "expected 2 to 4 tab-separated fields",
                ));
            }
        };
        let source_owned = source;
        validate_query_row(&display, lineno, id, text, origin, &source_owned, &mut seen)?;
        out.push(QueryRecord {
            id: id.to_string(),
            text: text.to_string(),
            origin,
            source_passage_id: source_owned,
        });
    }
    Ok(out)
}

fn parse_origin(display: &str, lineno: usize, s: &str) -> Result<Origin> {
    s.parse()
        .map_err(|_| Error::parse(display, lineno, format!("bad origin `{s}`")))
}

/// Write queries in the augmented 4-column TSV format.
pub fn write_query_file(queries: &[QueryRecord], path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        check_tsv_safe(&q.id, &q.text)?;
        let source = q.source_passage_id.as_deref().unwrap_or("");
        writeln!(w, "{}\t{}\t{}\t{}", q.id, q.text, q.origin, source)
            .map_err(|e| Error::io(display.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(display, e))
}

/// Check that every augmented query's source passage exists in the corpus.
pub fn validate_query_sources(queries: &[QueryRecord], corpus: &Corpus) -> Result<()> {
    for q in queries {
        if let Some(src) = &q.source_passage_id {
            if !corpus.contains(src) {
                return Err(Error::invalid(
                    "query",
                    format!("query `{}` references missing passage `{src}`", q.id),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tokenize_splits_and_lowercases() {
        assert_eq!(tokenize("The cat, sat!", 32).tokens, ["the", "cat", "sat"]);
    }

    #[test]
    fn tokenize_truncates() {
        assert_eq!(tokenize("a b c", 2).tokens, ["a", "b"]);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", 128).tokens.is_empty());
        assert!(tokenize("--- !!!", 128).tokens.is_empty());
    }

    #[test]
    fn load_corpus_tsv() {
        let f = temp_file("d1\tcat sat\nd2\tdog ran\n");
        let corpus = load_corpus(f.path(), FileFormat::Tsv).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("d1").unwrap().text, "cat sat");
        assert_eq!(corpus.ordinal("d2"), Some(1));
    }

    #[test]
    fn load_corpus_duplicate_id() {
        let f = temp_file("d1\tcat sat\nd1\tdog ran\n");
        let err = load_corpus(f.path(), FileFormat::Tsv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d1"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn load_corpus_empty_file() {
        let f = temp_file("");
        let corpus = load_corpus(f.path(), FileFormat::Tsv).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn load_corpus_malformed_row_has_line_number() {
        let f = temp_file("d1\tcat sat\nno tab here\n");
        let err = load_corpus(f.path(), FileFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn load_corpus_jsonl() {
        let f = temp_file("{\"id\":\"d1\",\"text\":\"cat sat\"}\n{\"id\":\"d2\",\"text\":\"dog\"}\n");
        let corpus = load_corpus(f.path(), FileFormat::Jsonl).unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn load_queries_stamps_origin() {
        let f = temp_file("q1\twhat is rust\nq2\twho wrote it\nq3\twhen\n");
        let queries = load_queries(f.path(), FileFormat::Tsv, Origin::Generated).unwrap();
        assert_eq!(queries.len(), 3);
        assert!(queries.iter().all(|q| q.origin == Origin::Generated));
    }

    #[test]
    fn load_queries_empty_text_is_error() {
        let f = temp_file("q1\twhat\nq2\t   \n");
        let err = load_queries(f.path(), FileFormat::Tsv, Origin::Human).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn load_queries_jsonl_preserves_source() {
        let f = temp_file("{\"id\":\"q1\",\"text\":\"t\",\"source_passage_id\":\"d9\"}\n");
        let queries = load_queries(f.path(), FileFormat::Jsonl, Origin::Cropped).unwrap();
        assert_eq!(queries[0].source_passage_id.as_deref(), Some("d9"));
    }

    #[test]
    fn query_file_round_trip() {
        let queries = vec![
            QueryRecord {
                id: "d1#s1".into(),
                text: "a cropped sentence".into(),
                origin: Origin::Cropped,
                source_passage_id: Some("d1".into()),
            },
            QueryRecord {
                id: "q7".into(),
                text: "a human query".into(),
                origin: Origin::Human,
                source_passage_id: None,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_query_file(&queries, f.path()).unwrap();
        let back = read_query_file(f.path()).unwrap();
        assert_eq!(back, queries);
    }

    #[test]
    fn corpus_round_trip_tsv() {
        let mut corpus = Corpus::new();
        corpus
            .push(Passage {
                id: "d1".into(),
                text: "cat sat".into(),
            })
            .unwrap();
        corpus
            .push(Passage {
                id: "d2".into(),
                text: "dog ran far".into(),
            })
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&corpus, f.path(), FileFormat::Tsv).unwrap();
        let back = load_corpus(f.path(), FileFormat::Tsv).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.iter().zip(back.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tsv_rejects_embedded_tabs() {
        let mut corpus = Corpus::new();
        corpus
            .push(Passage {
                id: "d1".into(),
                text: "has\ta tab".into(),
            })
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(write_corpus(&corpus, f.path(), FileFormat::Tsv).is_err());
        write_corpus(&corpus, f.path(), FileFormat::Jsonl).unwrap();
        let back = load_corpus(f.path(), FileFormat::Jsonl).unwrap();
        assert_eq!(back.get("d1").unwrap().text, "has\ta tab");
    }
}
