//! Rank-based retrieval metrics and a paired significance test.
//!
//! All metrics operate on a [`RankedList`]: document ids in ranked order
//! (best first) plus a relevance map. The map may contain judged documents
//! that were never retrieved; MAP and Recall count those as misses and NDCG's
//! ideal ranking includes them, which is how qrels-global normalization is
//! expressed. Graded labels use gain `2^y − 1` for NDCG; for the binary
//! metrics (MRR, MAP, Recall) any label `> 0` counts as relevant.
//!
//! [`paired_t_test`] is a two-sided paired Student t-test whose p-value goes
//! through the regularized incomplete beta function (continued fraction),
//! not a normal approximation, so small-sample p-values are exact.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ranked list is empty")]
    EmptyList,
    #[error("document {0} has no relevance entry")]
    MissingRelevance(String),
    #[error("relevance for {doc_id} is {label}, expected finite >= 0")]
    InvalidRelevance { doc_id: String, label: f64 },
    #[error("score at {0} is not finite")]
    NonFiniteScore(usize),
    #[error("paired samples differ in length: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("paired t-test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} is not finite")]
    NonFiniteSample(usize),
}

/// One query's ranking: document ids best-first, plus judged relevance.
/// Every ranked document must be judged (unjudged retrieved docs are entered
/// as 0 by the caller); the map may judge additional unretrieved documents.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub doc_ids: Vec<String>,
    pub relevance: HashMap<String, f64>,
}

impl RankedList {
    pub fn new(
        doc_ids: Vec<String>,
        relevance: HashMap<String, f64>,
    ) -> Result<Self, MetricsError> {
        if doc_ids.is_empty() {
            return Err(MetricsError::EmptyList);
        }
        for id in &doc_ids {
            if !relevance.contains_key(id) {
                return Err(MetricsError::MissingRelevance(id.clone()));
            }
        }
        for (id, &y) in &relevance {
            if !y.is_finite() || y < 0.0 {
                return Err(MetricsError::InvalidRelevance {
                    doc_id: id.clone(),
                    label: y,
                });
            }
        }
        Ok(RankedList { doc_ids, relevance })
    }

    fn rel_at(&self, pos: usize) -> f64 {
        self.relevance[&self.doc_ids[pos]]
    }

    /// Number of relevant documents among everything judged, including
    /// documents missing from the ranking.
    fn total_relevant(&self) -> usize {
        self.relevance.values().filter(|&&y| y > 0.0).count()
    }
}

/// Stable descending sort order for a score vector: returns the permutation
/// of indices, ties resolved by original position (lower index first).
pub fn sort_by_scores(scores: &[f64]) -> Result<Vec<usize>, MetricsError> {
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore(i));
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable, so equal scores keep their original relative order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite"));
    Ok(order)
}

/// Mean reciprocal rank at cutoff `k`: 1/rank of the first relevant document
/// within the top k, 0 when none appears there.
pub fn mrr_at_k(ranked: &RankedList, k: usize) -> f64 {
    let top = k.min(ranked.doc_ids.len());
    for pos in 0..top {
        if ranked.rel_at(pos) > 0.0 {
            return 1.0 / (pos as f64 + 1.0);
        }
    }
    0.0
}

fn dcg(rels: impl Iterator<Item = f64>) -> f64 {
    rels.enumerate()
        .map(|(pos, y)| {
            let gain = (2.0f64).powf(y) - 1.0;
            gain / ((pos as f64 + 2.0).log2())
        })
        .sum()
}

/// NDCG with gain `2^y − 1` and discount `1/log2(rank + 1)`, normalized by
/// the ideal DCG over everything judged in the list's relevance map.
/// `k: None` means no cutoff. Returns 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranked: &RankedList, k: Option<usize>) -> f64 {
    let cut = k.unwrap_or(usize::MAX);
    let got = dcg(
        ranked
            .doc_ids
            .iter()
            .take(cut)
            .map(|id| ranked.relevance[id]),
    );
    let mut judged: Vec<f64> = ranked.relevance.values().copied().collect();
    judged.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let ideal = dcg(judged.into_iter().take(cut));
    if ideal == 0.0 {
        0.0
    } else {
        got / ideal
    }
}

/// Average precision of the list: mean over all relevant documents of the
/// precision at their rank; relevant documents missing from the ranking
/// contribute a precision of 0. Returns 0 when nothing is relevant.
pub fn map(ranked: &RankedList) -> f64 {
    let total = ranked.total_relevant();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for pos in 0..ranked.doc_ids.len() {
        if ranked.rel_at(pos) > 0.0 {
            hits += 1;
            sum += hits as f64 / (pos as f64 + 1.0);
        }
    }
    sum / total as f64
}

/// Fraction of all relevant documents that appear in the top `k`.
/// Returns 0 when nothing is relevant.
pub fn recall_at_k(ranked: &RankedList, k: usize) -> f64 {
    let total = ranked.total_relevant();
    if total == 0 {
        return 0.0;
    }
    let top = k.min(ranked.doc_ids.len());
    let hits = (0..top).filter(|&pos| ranked.rel_at(pos) > 0.0).count();
    hits as f64 / total as f64
}

/// Result of a two-sided paired Student t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub mean_diff: f64,
}

/// Two-sided paired Student t-test of `a` against `b`.
///
/// Conventions for degenerate inputs: all differences exactly zero gives
/// `(t = 0, p = 1)`; zero variance with a nonzero mean difference gives
/// `t = ±inf, p = 0` (reported downstream as p < 1e-12).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFewSamples(a.len()));
    }
    for (i, v) in a.iter().chain(b).enumerate() {
        if !v.is_finite() {
            return Err(MetricsError::NonFiniteSample(i % a.len()));
        }
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                mean_diff: mean,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                df,
                mean_diff: mean,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    // Two-sided p-value: P(|T_df| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
    let p = incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
    })
}

/// Regularized incomplete beta function I_x(a, b) via Lentz's continued
/// fraction, symmetric form for numerical stability.
pub(crate) fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x), g = 7, n = 9.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
