//! Training loop: samples fixed-size lists from a candidate corpus, scores
//! them with the model, applies a ranking loss, and updates parameters with
//! SGD or Adam at a constant learning rate.
//!
//! Pointwise objectives (`pointce` and the generation-style loss) see a
//! class-balanced view of each list: the minority class is upsampled by
//! repetition. Repeated slots reuse the same forward pass — the gradient is
//! identical to physically duplicating the document, at half the cost for
//! the common one-positive case. List objectives consume the list as-is.
//!
//! Everything is driven by one seeded RNG, so a (seed, config, corpus)
//! triple reproduces loss curves and parameters bit-for-bit.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    sample_training_list, CandidateList, DataError, PositiveSelection, SamplingOptions,
    TemplateOptions, TrainingList, Vocabulary,
};
use crate::losses::{
    pair_logistic, point_ce, poly1_softmax_ce, softmax_ce, LabeledScores, LossError, LossOutput,
};
use crate::model::{Bound, ModelError, RankerModel};
use crate::tensor::{Graph, NodeId, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no trainable queries: every list lacks a positive or a negative")]
    NoTrainableQueries,
    #[error("non-finite {what} at step {step}; config: {config_json}")]
    NonFinite {
        what: &'static str,
        step: usize,
        config_json: String,
    },
    #[error("eval callback failed at step {step}: {source}")]
    Callback {
        step: usize,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainLoss {
    /// Pointwise binary cross entropy on each score's logistic transform.
    PointCe,
    /// Pairwise logistic loss over label-discordant pairs.
    Pair,
    /// Listwise softmax cross entropy.
    Softmax,
    /// Softmax cross entropy with the first-polynomial correction.
    Poly1,
    /// Two-class cross entropy on the generation head's token-logit
    /// difference; requires the `generation_baseline` head.
    Generation,
}

impl TrainLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainLoss::PointCe => "pointce",
            TrainLoss::Pair => "pair",
            TrainLoss::Softmax => "softmax",
            TrainLoss::Poly1 => "poly1",
            TrainLoss::Generation => "generation",
        }
    }

    pub fn parse(s: &str) -> Result<TrainLoss, TrainError> {
        match s {
            "pointce" => Ok(TrainLoss::PointCe),
            "pair" => Ok(TrainLoss::Pair),
            "softmax" => Ok(TrainLoss::Softmax),
            "poly1" => Ok(TrainLoss::Poly1),
            "generation" => Ok(TrainLoss::Generation),
            other => Err(TrainError::Config(format!(
                "unknown loss {other:?}, expected pointce, pair, softmax, poly1, or generation"
            ))),
        }
    }
}

/// Whether a loss trains on the class-balanced (upsampled) view of a list.
pub fn uses_upsampling(loss: TrainLoss) -> bool {
    matches!(loss, TrainLoss::PointCe | TrainLoss::Generation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: TrainLoss,
    /// Poly1 correction weight.
    pub epsilon: f64,
    /// Documents per training list (one positive + sampled negatives).
    pub list_size: usize,
    /// Lists per optimizer step.
    pub batch_size: usize,
    /// Constant learning rate.
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Invoke the eval callback every this many steps (0 = final step only).
    pub eval_every: usize,
    pub optimizer: Optimizer,
    pub positive_selection: PositiveSelection,
    /// Append the `relevant :` cue to inputs (generation-style template).
    pub with_postfix: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: TrainLoss::Softmax,
            epsilon: 1.0,
            list_size: 36,
            batch_size: 32,
            learning_rate: 1e-4,
            steps: 2000,
            seed: 17,
            eval_every: 0,
            optimizer: Optimizer::Adam,
            positive_selection: PositiveSelection::Sample,
            with_postfix: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &crate::model::ModelConfig) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.steps == 0 {
            return err("steps must be at least 1".into());
        }
        if self.list_size < 2 {
            return err(format!("list_size {} must be at least 2", self.list_size));
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err(format!(
                "learning_rate {} must be finite and positive",
                self.learning_rate
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return err(format!(
                "epsilon {} must be finite and non-negative",
                self.epsilon
            ));
        }
        if self.loss == TrainLoss::Generation
            && model.head_variant != crate::model::HeadVariant::GenerationBaseline
        {
            return err(format!(
                "generation loss requires the generation_baseline head, model has {}",
                model.head_variant.as_str()
            ));
        }
        Ok(())
    }
}

/// Applies the configured loss to one list of labeled scores.
pub fn apply_train_loss(
    loss: TrainLoss,
    ls: &LabeledScores,
    epsilon: f64,
) -> Result<LossOutput, LossError> {
    match loss {
        TrainLoss::PointCe | TrainLoss::Generation => point_ce(ls),
        TrainLoss::Pair => pair_logistic(ls),
        TrainLoss::Softmax => softmax_ce(ls),
        TrainLoss::Poly1 => poly1_softmax_ce(ls, epsilon),
    }
}

/// A training list forwarded through the model: the slot-aligned score
/// vector node and its labels. For upsampled losses, slots follow the
/// class-balanced order and repeated slots share one forward pass.
pub(crate) struct ListForward {
    pub scores: NodeId,
    pub labels: Vec<f64>,
    /// Number of distinct forward passes (for cost accounting and tests).
    pub unique_forwards: usize,
}

pub(crate) fn forward_list(
    model: &RankerModel,
    g: &mut Graph,
    bound: &Bound,
    tl: &TrainingList,
    loss: TrainLoss,
) -> Result<ListForward, TrainError> {
    let mut node_by_doc: HashMap<&str, NodeId> = HashMap::new();
    let mut nodes = Vec::with_capacity(tl.doc_ids.len());
    for (doc_id, seq) in tl.doc_ids.iter().zip(&tl.sequences) {
        let node = match node_by_doc.get(doc_id.as_str()) {
            Some(&n) => n,
            None => {
                let n = model.logit_on(g, bound, &seq.token_ids)?;
                node_by_doc.insert(doc_id, n);
                n
            }
        };
        nodes.push(node);
    }
    let slots: Vec<usize> = if uses_upsampling(loss) {
        crate::data::upsample_pointwise(&tl.labels)
    } else {
        (0..tl.labels.len()).collect()
    };
    let slot_nodes: Vec<NodeId> = slots.iter().map(|&i| nodes[i]).collect();
    let labels: Vec<f64> = slots.iter().map(|&i| tl.labels[i]).collect();
    let scores = g.concat_scalars(&slot_nodes)?;
    Ok(ListForward {
        scores,
        labels,
        unique_forwards: node_by_doc.len(),
    })
}

/// Loss curve and bookkeeping from one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, batch mean loss)` for every step, 1-based.
    pub loss_curve: Vec<(usize, f64)>,
    /// Queries dropped up front for lacking a positive or negative.
    pub skipped_queries: usize,
    pub final_loss: f64,
    /// Total distinct document forward passes; lower than the slot count
    /// whenever upsampling repeated documents within a list.
    pub unique_forwards: usize,
}

struct OptState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn apply_update(
    model: &mut RankerModel,
    cfg: &TrainConfig,
    state: &mut OptState,
    grads: &[Vec<f64>],
) {
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (param, grad) in model.params_mut().iter_mut().zip(grads) {
                for (p, &g) in param.data.iter_mut().zip(grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
        }
        Optimizer::Adam => {
            state.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
            for ((param, grad), (m, v)) in model
                .params_mut()
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for (((p, &g), mj), vj) in
                    param.data.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * g;
                    *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *mj / bc1;
                    let vhat = *vj / bc2;
                    *p -= cfg.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Trains in place. `on_eval(step, model)` fires every `eval_every` steps
/// (when nonzero) and always after the final step; callers use it to
/// checkpoint and run dev evaluation.
pub fn train_with_callback<F>(
    model: &mut RankerModel,
    cfg: &TrainConfig,
    corpus: &[CandidateList],
    vocab: &Vocabulary,
    mut on_eval: F,
) -> Result<TrainReport, TrainError>
where
    F: FnMut(usize, &RankerModel) -> Result<(), Box<dyn std::error::Error + Send + Sync>>,
{
    cfg.validate(&model.config)?;
    let trainable: Vec<&CandidateList> = corpus
        .iter()
        .filter(|l| {
            l.docs.iter().any(|d| d.label > 0.0) && l.docs.iter().any(|d| d.label == 0.0)
        })
        .collect();
    if trainable.is_empty() {
        return Err(TrainError::NoTrainableQueries);
    }
    let skipped_queries = corpus.len() - trainable.len();
    let config_json = || serde_json::to_string(cfg).expect("config serializes");

    let sampling = SamplingOptions {
        list_size: cfg.list_size,
        positive_selection: cfg.positive_selection,
        template: TemplateOptions {
            max_seq_len: model.config.max_seq_len,
            with_postfix: cfg.with_postfix,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptState {
        t: 0,
        m: model.params().iter().map(|p| vec![0.0; p.numel()]).collect(),
        v: model.params().iter().map(|p| vec![0.0; p.numel()]).collect(),
    };
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut unique_forwards = 0;

    for step in 1..=cfg.steps {
        for acc in &mut grads {
            acc.iter_mut().for_each(|a| *a = 0.0);
        }
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let qi = rng.gen_range(0..trainable.len());
            let tl = sample_training_list(trainable[qi], vocab, &sampling, &mut rng)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let fwd = forward_list(model, &mut g, &bound, &tl, cfg.loss)?;
            unique_forwards += fwd.unique_forwards;
            let scores = g.data(fwd.scores).to_vec();
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(TrainError::NonFinite {
                    what: "score",
                    step,
                    config_json: config_json(),
                });
            }
            let ls = LabeledScores::new(fwd.labels.clone(), scores)?;
            let out = apply_train_loss(cfg.loss, &ls, cfg.epsilon)?;
            if !out.value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    step,
                    config_json: config_json(),
                });
            }
            batch_loss += out.value;
            let loss_node = g.loss_head(fwd.scores, out.value, out.grad)?;
            g.backward(loss_node)?;
            for (acc, &node) in grads.iter_mut().zip(&bound.nodes) {
                if let Some(gr) = g.grad(node) {
                    for (a, &x) in acc.iter_mut().zip(gr) {
                        *a += x;
                    }
                }
            }
        }
        batch_loss /= cfg.batch_size as f64;
        let scale = 1.0 / cfg.batch_size as f64;
        for acc in &mut grads {
            acc.iter_mut().for_each(|a| *a *= scale);
        }
        apply_update(model, cfg, &mut state, &grads);
        if model
            .params()
            .iter()
            .any(|p| p.data.iter().any(|x| !x.is_finite()))
        {
            return Err(TrainError::NonFinite {
                what: "parameter",
                step,
                config_json: config_json(),
            });
        }
        loss_curve.push((step, batch_loss));
        let is_eval_step =
            (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if is_eval_step {
            on_eval(step, model).map_err(|source| TrainError::Callback { step, source })?;
        }
    }
    let final_loss = loss_curve.last().map(|&(_, l)| l).expect("steps >= 1");
    Ok(TrainReport {
        loss_curve,
        skipped_queries,
        final_loss,
        unique_forwards,
    })
}

/// Trains without an eval callback.
pub fn train(
    model: &mut RankerModel,
    cfg: &TrainConfig,
    corpus: &[CandidateList],
    vocab: &Vocabulary,
) -> Result<TrainReport, TrainError> {
    train_with_callback(model, cfg, corpus, vocab, |_, _| Ok(()))
}

/// Writes a loss curve as `step,loss` CSV.
pub fn write_loss_curve(path: &std::path::Path, curve: &[(usize, f64)]) -> Result<(), TrainError> {
    use std::fmt::Write as _;
    let mut out = String::from("step,loss\n");
    for &(step, loss) in curve {
        writeln!(out, "{step},{loss}").expect("string write");
    }
    std::fs::write(path, out).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
