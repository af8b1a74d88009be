//! File formats: JSONL candidate lists, TREC run files, and qrels.
//!
//! Candidate lists are one JSON object per line:
//! `{"query_id": "...", "query": "...", "candidates": [{"doc_id": "...",
//! "text": "...", "label": 0.0, "rank": 1}, ...]}`.
//!
//! Run files use the six-column TREC format
//! `query_id Q0 doc_id rank score tag`; qrels use
//! `query_id 0 doc_id relevance`. Scores are written with six decimal
//! places, enough to round-trip the score ordering produced by evaluation.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CandidateDoc, CandidateList, DataError};

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a JSONL candidate file, validating that every list has a non-empty
/// query, unique doc ids, and finite non-negative labels. When
/// `binary_labels` is set, labels must be exactly 0.0 or 1.0.
pub fn read_candidates(path: &Path, binary_labels: bool) -> Result<Vec<CandidateList>, DataError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lists = Vec::new();
    let mut seen_queries = HashSet::new();
    for (lineno, line) in body.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let list: CandidateList = serde_json::from_str(line)
            .map_err(|e| parse_err(path, line_no, format!("bad JSON: {e}")))?;
        if list.query_id.is_empty() {
            return Err(parse_err(path, line_no, "empty query_id"));
        }
        if !seen_queries.insert(list.query_id.clone()) {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate query_id {:?}", list.query_id),
            ));
        }
        if list.docs.is_empty() {
            return Err(parse_err(
                path,
                line_no,
                format!("query {:?} has no candidates", list.query_id),
            ));
        }
        let mut seen_docs = HashSet::new();
        for doc in &list.docs {
            if doc.doc_id.is_empty() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("query {:?} has a candidate with empty doc_id", list.query_id),
                ));
            }
            if !seen_docs.insert(doc.doc_id.as_str()) {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "query {:?} has duplicate doc_id {:?}",
                        list.query_id, doc.doc_id
                    ),
                ));
            }
            if !doc.label.is_finite() || doc.label < 0.0 {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "query {:?} doc {:?} label {} is not a finite non-negative number",
                        list.query_id, doc.doc_id, doc.label
                    ),
                ));
            }
            if binary_labels && doc.label != 0.0 && doc.label != 1.0 {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "query {:?} doc {:?} label {} is not binary",
                        list.query_id, doc.doc_id, doc.label
                    ),
                ));
            }
        }
        lists.push(list);
    }
    if lists.is_empty() {
        return Err(parse_err(path, 1, "no candidate lists in file"));
    }
    Ok(lists)
}

/// Writes candidate lists as JSONL (one list per line).
pub fn write_candidates(path: &Path, lists: &[CandidateList]) -> Result<(), DataError> {
    let mut out = String::new();
    for list in lists {
        let line = serde_json::to_string(list).expect("candidate list serializes");
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// One row of a TREC-format run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// Writes run entries in TREC format, one line per ranked document.
pub fn write_run(path: &Path, entries: &[RunEntry], tag: &str) -> Result<(), DataError> {
    let mut out = String::new();
    for e in entries {
        writeln!(
            out,
            "{} Q0 {} {} {:.6} {}",
            e.query_id, e.doc_id, e.rank, e.score, tag
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a TREC run file. Rows keep file order; ranks are taken verbatim.
pub fn read_run(path: &Path) -> Result<Vec<RunEntry>, DataError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 6 columns, got {}", cols.len()),
            ));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad score {:?}", cols[4])))?;
        if !score.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite score {score}")));
        }
        entries.push(RunEntry {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            rank,
            score,
        });
    }
    Ok(entries)
}

/// Relevance judgments: query id -> doc id -> graded relevance.
pub type Qrels = HashMap<String, HashMap<String, f64>>;

/// Writes qrels in `query_id 0 doc_id relevance` format, sorted by query
/// then doc id so output is deterministic.
pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<(), DataError> {
    let mut out = String::new();
    let mut qids: Vec<&String> = qrels.keys().collect();
    qids.sort();
    for qid in qids {
        let mut dids: Vec<&String> = qrels[qid].keys().collect();
        dids.sort();
        for did in dids {
            let rel = qrels[qid][did];
            if rel == rel.trunc() && rel.abs() < 1e15 {
                writeln!(out, "{qid} 0 {did} {}", rel as i64).expect("string write");
            } else {
                writeln!(out, "{qid} 0 {did} {rel}").expect("string write");
            }
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a qrels file. Duplicate (query, doc) pairs are an error.
pub fn read_qrels(path: &Path) -> Result<Qrels, DataError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut qrels: Qrels = HashMap::new();
    for (lineno, line) in body.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 columns, got {}", cols.len()),
            ));
        }
        let rel: f64 = cols[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad relevance {:?}", cols[3])))?;
        if !rel.is_finite() || rel < 0.0 {
            return Err(parse_err(
                path,
                line_no,
                format!("relevance {rel} is not finite and non-negative"),
            ));
        }
        let prev = qrels
            .entry(cols[0].to_string())
            .or_default()
            .insert(cols[2].to_string(), rel);
        if prev.is_some() {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate judgment for query {:?} doc {:?}", cols[0], cols[2]),
            ));
        }
    }
    Ok(qrels)
}

/// Derives qrels from candidate labels (every candidate is judged).
pub fn qrels_from_candidates(lists: &[CandidateList]) -> Qrels {
    let mut qrels: Qrels = HashMap::new();
    for list in lists {
        let entry = qrels.entry(list.query_id.clone()).or_default();
        for doc in &list.docs {
            entry.insert(doc.doc_id.clone(), doc.label);
        }
    }
    qrels
}

/// Convenience constructor used by generators and tests.
pub fn candidate_doc(doc_id: &str, text: &str, label: f64, rank: usize) -> CandidateDoc {
    CandidateDoc {
        doc_id: doc_id.to_string(),
        text: text.to_string(),
        label,
        rank,
    }
}
