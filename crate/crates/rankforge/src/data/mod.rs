//! Data pipeline: candidate lists, input construction, list sampling for
//! training, and the upsampling scheme used by pointwise losses.
//!
//! A training example is a *list*: one query with `m` candidate documents,
//! exactly one sampled positive plus `m - 1` sampled negatives. Listwise and
//! pairwise losses consume the list directly; pointwise losses additionally
//! rebalance it by repeating the minority class (almost always the single
//! positive) until both classes have equal weight, which keeps the binary
//! cross-entropy signal from being swamped by negatives.

pub mod io;
pub mod text;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    candidate_doc, qrels_from_candidates, read_candidates, read_qrels, read_run, write_candidates,
    write_qrels, write_run, Qrels, RunEntry,
};
pub use text::{
    build_input, sentinel_id, tokenize, InputSequence, TemplateOptions, Vocabulary, EMPTY_DOC_ID,
    FIRST_TEXT_ID, PAD_ID, PAD_TOKEN, SENTINEL_COUNT, UNK_ID, UNK_TOKEN,
};

/// Errors from parsing, validation, and sampling.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("vocabulary max_size {got} too small, need at least {need}")]
    VocabTooSmall { got: usize, need: usize },
    #[error("query text has no tokens")]
    EmptyQuery,
    #[error("max_seq_len {got} too small, template needs {need}")]
    MaxSeqLenTooSmall { got: usize, need: usize },
    #[error("query {query_id:?} has no positive candidate")]
    NoPositive { query_id: String },
    #[error("query {query_id:?} has no negative candidate")]
    NoNegatives { query_id: String },
    #[error("list_size {got} must be at least 2")]
    ListSizeTooSmall { got: usize },
}

/// One candidate document with its graded label and original retrieval rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDoc {
    pub doc_id: String,
    pub text: String,
    pub label: f64,
    pub rank: usize,
}

/// One query with its candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query_id: String,
    pub query: String,
    #[serde(rename = "candidates")]
    pub docs: Vec<CandidateDoc>,
}

/// How the positive document of a training list is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveSelection {
    /// Uniformly among candidates with label > 0.
    Sample,
    /// The first positive in candidate order (deterministic given the file).
    First,
}

/// Options for [`sample_training_list`].
#[derive(Debug, Clone)]
pub struct SamplingOptions {
    /// Total list size `m` (1 positive + `m - 1` negatives).
    pub list_size: usize,
    pub positive_selection: PositiveSelection,
    pub template: TemplateOptions,
}

/// A sampled training list: encoded inputs plus aligned labels and doc ids.
/// Slot 0 is always the positive.
#[derive(Debug, Clone)]
pub struct TrainingList {
    pub query_id: String,
    pub doc_ids: Vec<String>,
    pub labels: Vec<f64>,
    pub sequences: Vec<InputSequence>,
}

/// Samples one training list from a candidate pool: one positive (per
/// `positive_selection`) and `list_size - 1` negatives drawn without
/// replacement, falling back to with-replacement draws when the pool has
/// fewer negatives than requested.
pub fn sample_training_list(
    list: &CandidateList,
    vocab: &Vocabulary,
    opts: &SamplingOptions,
    rng: &mut impl Rng,
) -> Result<TrainingList, DataError> {
    if opts.list_size < 2 {
        return Err(DataError::ListSizeTooSmall {
            got: opts.list_size,
        });
    }
    let positives: Vec<usize> = (0..list.docs.len())
        .filter(|&i| list.docs[i].label > 0.0)
        .collect();
    let negatives: Vec<usize> = (0..list.docs.len())
        .filter(|&i| list.docs[i].label == 0.0)
        .collect();
    if positives.is_empty() {
        return Err(DataError::NoPositive {
            query_id: list.query_id.clone(),
        });
    }
    if negatives.is_empty() {
        return Err(DataError::NoNegatives {
            query_id: list.query_id.clone(),
        });
    }
    let pos = match opts.positive_selection {
        PositiveSelection::First => positives[0],
        PositiveSelection::Sample => positives[rng.gen_range(0..positives.len())],
    };
    let want = opts.list_size - 1;
    let mut chosen: Vec<usize> = Vec::with_capacity(want);
    if negatives.len() >= want {
        // Partial Fisher-Yates: draw `want` distinct negatives.
        let mut pool = negatives;
        for slot in 0..want {
            let j = rng.gen_range(slot..pool.len());
            pool.swap(slot, j);
            chosen.push(pool[slot]);
        }
    } else {
        for _ in 0..want {
            chosen.push(negatives[rng.gen_range(0..negatives.len())]);
        }
    }

    let mut doc_ids = Vec::with_capacity(opts.list_size);
    let mut labels = Vec::with_capacity(opts.list_size);
    let mut sequences = Vec::with_capacity(opts.list_size);
    for &idx in std::iter::once(&pos).chain(chosen.iter()) {
        let doc = &list.docs[idx];
        doc_ids.push(doc.doc_id.clone());
        labels.push(doc.label);
        sequences.push(build_input(&list.query, &doc.text, vocab, &opts.template)?);
    }
    Ok(TrainingList {
        query_id: list.query_id.clone(),
        doc_ids,
        labels,
        sequences,
    })
}

/// Index order for a class-balanced pointwise view of a list: the minority
/// class is repeated cyclically until both classes have the same count.
/// Positive slots come first. Lists where either class is absent are
/// returned in original order, unchanged.
pub fn upsample_pointwise(labels: &[f64]) -> Vec<usize> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return (0..labels.len()).collect();
    }
    let target = pos.len().max(neg.len());
    let mut order = Vec::with_capacity(2 * target);
    for r in 0..target {
        order.push(pos[r % pos.len()]);
    }
    for r in 0..target {
        order.push(neg[r % neg.len()]);
    }
    order
}
