//! Reranking and evaluation: turn a model plus candidate lists into a run,
//! score runs against relevance judgments, and compare against a baseline
//! run with a paired significance test.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_input, tokenize, CandidateList, Qrels, RunEntry, TemplateOptions};
use crate::metrics::{self, MetricsError, RankedList};
use crate::model::{ModelError, RankerModel};
use crate::data::{DataError, Vocabulary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid metric spec {spec:?}: {message}")]
    BadMetricSpec { spec: String, message: String },
    #[error("duplicate document {doc_id:?} for query {query_id:?} in run")]
    DuplicateRunDoc { query_id: String, doc_id: String },
    #[error("run is empty after applying the missing-judgment policy")]
    NoScoredQueries,
    #[error("baseline shares {shared} scored queries with the run; need at least 2")]
    BaselineTooSmall { shared: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A parsed metric name such as `mrr@10`, `ndcg@5`, `ndcg`, `map`,
/// or `recall@5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricSpec {
    MrrAt(usize),
    NdcgAt(Option<usize>),
    Map,
    RecallAt(usize),
}

impl MetricSpec {
    pub fn parse(spec: &str) -> Result<Self, EvalError> {
        let bad = |message: &str| EvalError::BadMetricSpec {
            spec: spec.to_string(),
            message: message.to_string(),
        };
        let (name, cutoff) = match spec.split_once('@') {
            Some((name, k)) => {
                let k: usize = k
                    .parse()
                    .map_err(|_| bad("cutoff must be a positive integer"))?;
                if k == 0 {
                    return Err(bad("cutoff must be at least 1"));
                }
                (name, Some(k))
            }
            None => (spec, None),
        };
        match (name, cutoff) {
            ("mrr", Some(k)) => Ok(MetricSpec::MrrAt(k)),
            ("mrr", None) => Err(bad("mrr requires a cutoff, e.g. mrr@10")),
            ("ndcg", k) => Ok(MetricSpec::NdcgAt(k)),
            ("map", None) => Ok(MetricSpec::Map),
            ("map", Some(_)) => Err(bad("map takes no cutoff")),
            ("recall", Some(k)) => Ok(MetricSpec::RecallAt(k)),
            ("recall", None) => Err(bad("recall requires a cutoff, e.g. recall@5")),
            _ => Err(bad("expected mrr@K, ndcg[@K], map, or recall@K")),
        }
    }

    pub fn compute(&self, ranked: &RankedList) -> f64 {
        match self {
            MetricSpec::MrrAt(k) => metrics::mrr_at_k(ranked, *k),
            MetricSpec::NdcgAt(k) => metrics::ndcg_at_k(ranked, *k),
            MetricSpec::Map => metrics::map(ranked),
            MetricSpec::RecallAt(k) => metrics::recall_at_k(ranked, *k),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::MrrAt(k) => write!(f, "mrr@{k}"),
            MetricSpec::NdcgAt(Some(k)) => write!(f, "ndcg@{k}"),
            MetricSpec::NdcgAt(None) => write!(f, "ndcg"),
            MetricSpec::Map => write!(f, "map"),
            MetricSpec::RecallAt(k) => write!(f, "recall@{k}"),
        }
    }
}

impl TryFrom<String> for MetricSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        MetricSpec::parse(&s).map_err(|e| e.to_string())
    }
}

impl From<MetricSpec> for String {
    fn from(m: MetricSpec) -> String {
        m.to_string()
    }
}

/// Options for [`rerank`].
#[derive(Debug, Clone)]
pub struct RerankOptions {
    /// Keep at most this many documents per query in the output run.
    pub top_k: usize,
    pub template: TemplateOptions,
    /// Tag written into the run file's last column.
    pub tag: String,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            top_k: 1000,
            template: TemplateOptions::default(),
            tag: "rankforge".to_string(),
        }
    }
}

/// A scored run plus diagnostics about the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub entries: Vec<RunEntry>,
    /// Queries skipped because they had no candidates.
    pub skipped_queries: Vec<String>,
    /// Documents whose text tokenized to nothing (scored via the
    /// empty-document placeholder).
    pub empty_docs: usize,
    /// Sequences that lost tokens to the length budget.
    pub truncated: usize,
}

/// Scores every candidate list with the model and returns the run sorted by
/// descending score (ties keep candidate order). Deterministic: the same
/// model and input produce bit-identical entries.
pub fn rerank(
    model: &RankerModel,
    vocab: &Vocabulary,
    lists: &[CandidateList],
    opts: &RerankOptions,
) -> Result<RerankOutcome, EvalError> {
    let mut outcome = RerankOutcome {
        entries: Vec::new(),
        skipped_queries: Vec::new(),
        empty_docs: 0,
        truncated: 0,
    };
    for list in lists {
        if list.docs.is_empty() {
            outcome.skipped_queries.push(list.query_id.clone());
            continue;
        }
        let mut sequences = Vec::with_capacity(list.docs.len());
        for doc in &list.docs {
            if tokenize(&doc.text).is_empty() {
                outcome.empty_docs += 1;
            }
            let seq = build_input(&list.query, &doc.text, vocab, &opts.template)?;
            if seq.truncated {
                outcome.truncated += 1;
            }
            sequences.push(seq.token_ids);
        }
        let scores = model.score_list(&sequences)?;
        let order = metrics::sort_by_scores(&scores)?;
        for (rank, &idx) in order.iter().take(opts.top_k).enumerate() {
            outcome.entries.push(RunEntry {
                query_id: list.query_id.clone(),
                doc_id: list.docs[idx].doc_id.clone(),
                rank: rank + 1,
                score: scores[idx],
            });
        }
    }
    Ok(outcome)
}

/// What to do with run queries that have no relevance judgments at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingQrels {
    /// Score the query as zero on every metric.
    Zero,
    /// Drop the query from the averages.
    Drop,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub metrics: Vec<MetricSpec>,
    pub missing: MissingQrels,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: vec![
                MetricSpec::MrrAt(10),
                MetricSpec::NdcgAt(Some(10)),
                MetricSpec::Map,
            ],
            missing: MissingQrels::Zero,
        }
    }
}

/// Per-query metric values, in run order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub values: Vec<f64>,
}

/// Candidate-vs-baseline summary for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mean: f64,
    pub baseline_mean: f64,
    pub t: f64,
    pub p: f64,
    /// True iff the mean improved and the paired test gave p <= 0.05.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_names: Vec<String>,
    pub rows: Vec<QueryRow>,
    pub means: Vec<f64>,
    /// Queries with no judgments, scored as zero (policy `zero`).
    pub zero_filled: Vec<String>,
    /// Queries with no judgments, removed from averages (policy `drop`).
    pub dropped: Vec<String>,
    pub comparison: Option<Vec<MetricComparison>>,
}

/// Groups run entries by query (first-seen order), each group sorted by
/// rank. Rejects duplicate documents within a query.
fn group_run(run: &[RunEntry]) -> Result<Vec<(String, Vec<&RunEntry>)>, EvalError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&RunEntry>> = HashMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for entry in run {
        if !seen.insert((entry.query_id.clone(), entry.doc_id.clone())) {
            return Err(EvalError::DuplicateRunDoc {
                query_id: entry.query_id.clone(),
                doc_id: entry.doc_id.clone(),
            });
        }
        groups
            .entry(entry.query_id.clone())
            .or_insert_with(|| {
                order.push(entry.query_id.clone());
                Vec::new()
            })
            .push(entry);
    }
    Ok(order
        .into_iter()
        .map(|qid| {
            let mut entries = groups.remove(&qid).unwrap();
            entries.sort_by_key(|e| e.rank);
            (qid, entries)
        })
        .collect())
}

/// Metric values for the scored queries of one run. Returns
/// `(rows, zero_filled, dropped)`.
fn score_run(
    run: &[RunEntry],
    qrels: &Qrels,
    opts: &EvalOptions,
) -> Result<(Vec<QueryRow>, Vec<String>, Vec<String>), EvalError> {
    let mut rows = Vec::new();
    let mut zero_filled = Vec::new();
    let mut dropped = Vec::new();
    for (query_id, entries) in group_run(run)? {
        let judged = qrels.get(&query_id);
        if judged.is_none_or(|j| j.is_empty()) {
            match opts.missing {
                MissingQrels::Zero => {
                    zero_filled.push(query_id.clone());
                    rows.push(QueryRow {
                        query_id,
                        values: vec![0.0; opts.metrics.len()],
                    });
                }
                MissingQrels::Drop => dropped.push(query_id),
            }
            continue;
        }
        let judged = judged.unwrap();
        let doc_ids: Vec<String> = entries.iter().map(|e| e.doc_id.clone()).collect();
        let mut relevance = judged.clone();
        for id in &doc_ids {
            relevance.entry(id.clone()).or_insert(0.0);
        }
        let ranked = RankedList::new(doc_ids, relevance)?;
        let values = opts.metrics.iter().map(|m| m.compute(&ranked)).collect();
        rows.push(QueryRow { query_id, values });
    }
    Ok((rows, zero_filled, dropped))
}

/// Evaluates a run against judgments; when `baseline` is given, adds a
/// paired two-sided t-test per metric over the queries both runs scored.
pub fn evaluate(
    run: &[RunEntry],
    qrels: &Qrels,
    opts: &EvalOptions,
    baseline: Option<&[RunEntry]>,
) -> Result<EvalReport, EvalError> {
    if opts.metrics.is_empty() {
        return Err(EvalError::BadMetricSpec {
            spec: String::new(),
            message: "at least one metric is required".to_string(),
        });
    }
    let (rows, zero_filled, dropped) = score_run(run, qrels, opts)?;
    if rows.is_empty() {
        return Err(EvalError::NoScoredQueries);
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..opts.metrics.len())
        .map(|m| rows.iter().map(|r| r.values[m]).sum::<f64>() / n)
        .collect();

    let comparison = match baseline {
        None => None,
        Some(base_run) => {
            let (base_rows, _, _) = score_run(base_run, qrels, opts)?;
            let base_by_id: HashMap<&str, &QueryRow> = base_rows
                .iter()
                .map(|r| (r.query_id.as_str(), r))
                .collect();
            let paired: Vec<(&QueryRow, &QueryRow)> = rows
                .iter()
                .filter_map(|r| base_by_id.get(r.query_id.as_str()).map(|b| (r, *b)))
                .collect();
            if paired.len() < 2 {
                return Err(EvalError::BaselineTooSmall {
                    shared: paired.len(),
                });
            }
            let np = paired.len() as f64;
            let mut comparisons = Vec::with_capacity(opts.metrics.len());
            for (m, spec) in opts.metrics.iter().enumerate() {
                let ours: Vec<f64> = paired.iter().map(|(r, _)| r.values[m]).collect();
                let theirs: Vec<f64> = paired.iter().map(|(_, b)| b.values[m]).collect();
                let test = metrics::paired_t_test(&ours, &theirs)?;
                let mean = ours.iter().sum::<f64>() / np;
                let baseline_mean = theirs.iter().sum::<f64>() / np;
                comparisons.push(MetricComparison {
                    metric: spec.to_string(),
                    mean,
                    baseline_mean,
                    t: test.t,
                    p: test.p,
                    significant: test.p <= 0.05 && mean > baseline_mean,
                });
            }
            Some(comparisons)
        }
    };

    Ok(EvalReport {
        metric_names: opts.metrics.iter().map(|m| m.to_string()).collect(),
        rows,
        means,
        zero_filled,
        dropped,
        comparison,
    })
}

/// Renders the report as an aligned text table; significant improvements
/// over the baseline are marked with `*`.
pub fn format_eval_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let name_width = report
        .metric_names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(0)
        .max(6);
    match &report.comparison {
        None => {
            out.push_str(&format!(
                "{:<name_width$}  {:>10}   (over {} queries)\n",
                "metric",
                "mean",
                report.rows.len()
            ));
            for (name, mean) in report.metric_names.iter().zip(&report.means) {
                out.push_str(&format!("{name:<name_width$}  {mean:>10.4}\n"));
            }
        }
        Some(cmp) => {
            out.push_str(&format!(
                "{:<name_width$}  {:>10} {:>10} {:>9} {:>11}\n",
                "metric", "mean", "baseline", "t", "p"
            ));
            for c in cmp {
                let marker = if c.significant { " *" } else { "" };
                out.push_str(&format!(
                    "{:<name_width$}  {:>10.4} {:>10.4} {:>9.3} {:>11.3e}{}\n",
                    c.metric, c.mean, c.baseline_mean, c.t, c.p, marker
                ));
            }
            out.push_str("* = mean improved and paired t-test p <= 0.05\n");
        }
    }
    if !report.zero_filled.is_empty() {
        out.push_str(&format!(
            "{} unjudged queries scored as zero\n",
            report.zero_filled.len()
        ));
    }
    if !report.dropped.is_empty() {
        out.push_str(&format!(
            "{} unjudged queries dropped from averages\n",
            report.dropped.len()
        ));
    }
    out
}

/// Writes per-query values plus a final `ALL` mean row as TSV.
pub fn write_eval_tsv(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut out = String::from("query_id");
    for name in &report.metric_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&row.query_id);
        for v in &row.values {
            out.push_str(&format!("\t{v:.6}"));
        }
        out.push('\n');
    }
    out.push_str("ALL");
    for v in &report.means {
        out.push_str(&format!("\t{v:.6}"));
    }
    out.push('\n');
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One experiment cell: a named run scored with one metric, with the
/// per-query values that back the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub run: String,
    pub metric: String,
    pub mean: f64,
    pub per_query: Vec<(String, f64)>,
}

/// Config snapshot plus the metric table it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: serde_json::Value,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn push_report(&mut self, run: &str, report: &EvalReport) {
        for (m, name) in report.metric_names.iter().enumerate() {
            self.rows.push(ExperimentRow {
                run: run.to_string(),
                metric: name.clone(),
                mean: report.means[m],
                per_query: report
                    .rows
                    .iter()
                    .map(|r| (r.query_id.clone(), r.values[m]))
                    .collect(),
            });
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let body = serde_json::to_string_pretty(self).expect("serializable result");
        std::fs::write(path, body + "\n").map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// One row per (run, metric): `run\tmetric\tmean\tqueries`.
    pub fn write_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::from("run\tmetric\tmean\tqueries\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                row.run,
                row.metric,
                row.mean,
                row.per_query.len()
            ));
        }
        std::fs::write(path, out).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
