//! Reproducible experiment harnesses: gradient checking against finite
//! differences, the synthetic ranking benchmark with its sweeps, and the
//! zero-shot transfer report.
//!
//! Everything here is deterministic given the seeds in the settings, and
//! every reported mean keeps the per-query values that back it.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    qrels_from_candidates, CandidateList, DataError, InputSequence, TrainingList, Vocabulary,
};
use crate::eval::{
    evaluate, rerank, EvalError, EvalOptions, EvalReport, ExperimentResult, MetricSpec,
    MissingQrels, RerankOptions,
};
use crate::losses::{LabeledScores, LossError, LossKind};
use crate::metrics::MetricsError;
use crate::model::{file_fnv1a, HeadVariant, ModelConfig, ModelError, RankerModel};
use crate::synth::{generate, SynthConfig, SynthCorpus, SynthError};
use crate::tensor::Graph;
use crate::train::{
    apply_train_loss, forward_list, train, Optimizer, TrainConfig, TrainError, TrainLoss,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Relative error with an absolute floor of 1: `|a−b| / max(1, |a|, |b|)`.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Worst relative error observed for one gradcheck cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub cell: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Coordinates excluded because finite differences disagreed with
    /// themselves across step sizes (a relu kink within the step), making
    /// the numerical reference meaningless there.
    pub skipped_coords: usize,
}

/// Loss-level and end-to-end gradcheck results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss_rows: Vec<GradcheckRow>,
    pub e2e_rows: Vec<GradcheckRow>,
    pub loss_max_rel_err: f64,
    pub e2e_max_rel_err: f64,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<42} {:>6} {:>12} {:>8}\n",
            "cell", "cases", "max rel err", "skipped"
        ));
        for row in self.loss_rows.iter().chain(&self.e2e_rows) {
            out.push_str(&format!(
                "{:<42} {:>6} {:>12.3e} {:>8}\n",
                row.cell, row.cases, row.max_rel_err, row.skipped_coords
            ));
        }
        out.push_str(&format!(
            "loss-level max {:.3e}, end-to-end max {:.3e}, {:.1}s\n",
            self.loss_max_rel_err, self.e2e_max_rel_err, self.seconds
        ));
        out
    }
}

/// Checks the analytic gradient of each ranking loss against central finite
/// differences on random lists. Poly1 runs with ε = 1.
pub fn gradcheck_losses(
    seed: u64,
    lists_per_loss: usize,
) -> Result<Vec<GradcheckRow>, ExperimentError> {
    const H: f64 = 1e-6;
    const EPS: f64 = 1.0;
    let kinds = [
        LossKind::PointCe,
        LossKind::PairLogistic,
        LossKind::SoftmaxCe,
        LossKind::Poly1,
    ];
    let mut rows = Vec::with_capacity(kinds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in kinds {
        let binary = matches!(kind, LossKind::PointCe | LossKind::PairLogistic);
        let mut worst = 0.0_f64;
        for _ in 0..lists_per_loss {
            let m = rng.gen_range(2..=10);
            let scores: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels: Vec<f64> = (0..m)
                .map(|_| {
                    if binary {
                        f64::from(rng.gen_bool(0.4))
                    } else {
                        f64::from(rng.gen_range(0..=3u32))
                    }
                })
                .collect();
            let ls = LabeledScores::new(labels.clone(), scores.clone())?;
            let analytic = kind.apply(&ls, EPS)?.grad;
            for i in 0..m {
                let value_at = |s: f64| -> Result<f64, ExperimentError> {
                    let mut shifted = scores.clone();
                    shifted[i] = s;
                    let ls = LabeledScores::new(labels.clone(), shifted)?;
                    Ok(kind.apply(&ls, EPS)?.value)
                };
                let fd = (value_at(scores[i] + H)? - value_at(scores[i] - H)?) / (2.0 * H);
                worst = worst.max(rel_err(analytic[i], fd));
            }
        }
        rows.push(GradcheckRow {
            cell: format!("loss/{}", kind.as_str()),
            cases: lists_per_loss,
            max_rel_err: worst,
            skipped_coords: 0,
        });
    }
    Ok(rows)
}

fn gradcheck_model_config(head: HeadVariant, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(32);
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.ff_dim = 16;
    cfg.max_seq_len = 12;
    cfg.head_variant = head;
    cfg.decoder_layers = usize::from(head.needs_decoder());
    cfg.seed = seed;
    cfg
}

fn random_training_list(rng: &mut ChaCha8Rng, vocab_size: usize, max_len: usize) -> TrainingList {
    let m = 3;
    let mut sequences = Vec::with_capacity(m);
    let mut doc_ids = Vec::with_capacity(m);
    for d in 0..m {
        let len = rng.gen_range(4..=max_len.min(9));
        let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab_size)).collect();
        // Exercise the attention pad mask on one document per list.
        if d == 1 {
            ids.truncate(len - 2);
            ids.extend([crate::data::PAD_ID; 2]);
        }
        sequences.push(InputSequence {
            text: String::new(),
            token_ids: ids,
            truncated: false,
        });
        doc_ids.push(format!("d{d}"));
    }
    TrainingList {
        query_id: "q".to_string(),
        doc_ids,
        labels: vec![1.0, 0.0, 0.0],
        sequences,
    }
}

/// One list's loss under the current parameters.
fn list_loss_value(
    model: &RankerModel,
    tl: &TrainingList,
    loss: TrainLoss,
    eps: f64,
) -> Result<f64, ExperimentError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let fwd = forward_list(model, &mut g, &bound, tl, loss)?;
    let scores = g.data(fwd.scores).to_vec();
    let ls = LabeledScores::new(fwd.labels.clone(), scores)?;
    Ok(apply_train_loss(loss, &ls, eps)?.value)
}

/// Checks end-to-end parameter gradients (loss w.r.t. every model weight)
/// against central finite differences on small random models.
pub fn gradcheck_end_to_end(
    seed: u64,
    instances_per_cell: usize,
) -> Result<Vec<GradcheckRow>, ExperimentError> {
    const H: f64 = 1e-5;
    // Refinement step for suspicious coordinates. The network's relu makes
    // the loss piecewise smooth: when a pre-activation lies within the step,
    // the central difference averages two slopes and stops being a valid
    // reference. Such coordinates betray themselves because the difference
    // quotient fails to converge as the step shrinks.
    const H_FINE: f64 = H / 8.0;
    const SMOOTH_TOL: f64 = 1e-6;
    const EPS: f64 = 1.0;
    let heads = [
        HeadVariant::EncdecTokenLogit,
        HeadVariant::EncPoolDense,
        HeadVariant::GenerationBaseline,
    ];
    let losses = [
        TrainLoss::PointCe,
        TrainLoss::Pair,
        TrainLoss::Softmax,
        TrainLoss::Poly1,
    ];
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for head in heads {
        for loss in losses {
            let mut worst = 0.0_f64;
            let mut skipped = 0usize;
            for instance in 0..instances_per_cell {
                let cfg = gradcheck_model_config(head, seed ^ (instance as u64 + 1));
                let mut model = RankerModel::new(cfg.clone())?;
                let tl = random_training_list(&mut rng, cfg.vocab_size, cfg.max_seq_len);

                // Analytic gradients.
                let mut g = Graph::new();
                let bound = model.bind(&mut g, true);
                let fwd = forward_list(&model, &mut g, &bound, &tl, loss)?;
                let scores = g.data(fwd.scores).to_vec();
                let ls = LabeledScores::new(fwd.labels.clone(), scores)?;
                let out = apply_train_loss(loss, &ls, EPS)?;
                let loss_node = g.loss_head(fwd.scores, out.value, out.grad)?;
                g.backward(loss_node)?;
                let names: Vec<String> = model.param_names().map(str::to_string).collect();
                let mut analytic: HashMap<String, Vec<f64>> = HashMap::new();
                for (name, &node) in names.iter().zip(&bound.nodes) {
                    let grad = match g.grad(node) {
                        Some(grad) => grad.to_vec(),
                        None => vec![0.0; g.data(node).len()],
                    };
                    analytic.insert(name.clone(), grad);
                }
                drop(g);

                // Finite differences, every coordinate.
                for name in &names {
                    let numel = model.param(name).unwrap().data.len();
                    for i in 0..numel {
                        let orig = model.param(name).unwrap().data[i];
                        let mut central = |h: f64| -> Result<f64, ExperimentError> {
                            model.param_mut(name).unwrap().data[i] = orig + h;
                            let plus = list_loss_value(&model, &tl, loss, EPS)?;
                            model.param_mut(name).unwrap().data[i] = orig - h;
                            let minus = list_loss_value(&model, &tl, loss, EPS)?;
                            model.param_mut(name).unwrap().data[i] = orig;
                            Ok((plus - minus) / (2.0 * h))
                        };
                        let fd = central(H)?;
                        let mut err = rel_err(analytic[name][i], fd);
                        if err > 1e-6 {
                            let fine = central(H_FINE)?;
                            if rel_err(fd, fine) > SMOOTH_TOL {
                                skipped += 1;
                                continue;
                            }
                            err = rel_err(analytic[name][i], fine);
                        }
                        worst = worst.max(err);
                    }
                }
            }
            rows.push(GradcheckRow {
                cell: format!("e2e/{}+{}", head.as_str(), loss.as_str()),
                cases: instances_per_cell,
                max_rel_err: worst,
                skipped_coords: skipped,
            });
        }
    }
    Ok(rows)
}

/// Runs both gradient-check suites and reports per-cell worst errors.
pub fn gradcheck_report(
    seed: u64,
    lists_per_loss: usize,
    instances_per_cell: usize,
) -> Result<GradcheckReport, ExperimentError> {
    let start = Instant::now();
    let loss_rows = gradcheck_losses(seed, lists_per_loss)?;
    let e2e_rows = gradcheck_end_to_end(seed, instances_per_cell)?;
    let max_of = |rows: &[GradcheckRow]| {
        rows.iter().map(|r| r.max_rel_err).fold(0.0_f64, f64::max)
    };
    Ok(GradcheckReport {
        loss_max_rel_err: max_of(&loss_rows),
        e2e_max_rel_err: max_of(&e2e_rows),
        loss_rows,
        e2e_rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Seeds used for every multi-seed experiment.
pub const BENCHMARK_SEEDS: [u64; 3] = [1, 2, 3];

/// List sizes covered by the list-size sweep.
pub const SWEEP_LIST_SIZES: [usize; 5] = [5, 10, 20, 30, 36];

/// Frozen defaults for the synthetic benchmark. Training hyperparameters
/// were tuned once on the default corpus: Adam at 1e-3 with batch size 2
/// drives the tiny preset to dev MRR@10 ≈ 1.0 within 2,000 steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSettings {
    pub synth: SynthConfig,
    pub preset: String,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub list_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            synth: SynthConfig::default(),
            preset: "tiny".to_string(),
            steps: 2000,
            batch_size: 2,
            learning_rate: 1e-3,
            list_size: 36,
            seeds: BENCHMARK_SEEDS.to_vec(),
        }
    }
}

/// Corpus and vocabulary shared by every run of one benchmark.
pub struct BenchmarkData {
    pub corpus: SynthCorpus,
    pub vocab: Vocabulary,
}

/// Generates the corpus and builds the vocabulary over both splits.
pub fn prepare_benchmark(settings: &BenchmarkSettings) -> Result<BenchmarkData, ExperimentError> {
    let corpus = generate(&settings.synth)?;
    let vocab = build_vocab_over(corpus.train.iter().chain(&corpus.dev))?;
    Ok(BenchmarkData { corpus, vocab })
}

/// Vocabulary over every query and document text in the given lists.
pub fn build_vocab_over<'a>(
    lists: impl IntoIterator<Item = &'a CandidateList>,
) -> Result<Vocabulary, ExperimentError> {
    let mut texts: Vec<&str> = Vec::new();
    let mut owned: Vec<String> = Vec::new();
    for list in lists {
        owned.push(list.query.clone());
        for doc in &list.docs {
            owned.push(doc.text.clone());
        }
    }
    texts.extend(owned.iter().map(|s| s.as_str()));
    Ok(Vocabulary::build(texts, 1_000_000)?)
}

/// One (loss, list size, seed, model) training run scored on the dev split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub run: String,
    pub loss: TrainLoss,
    pub list_size: usize,
    pub seed: u64,
    pub preset: String,
    pub dev_mrr10: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

fn cell_name(loss: TrainLoss, list_size: usize, preset: &str, seed: u64) -> String {
    format!("loss={} m={list_size} preset={preset} seed={seed}", loss.as_str())
}

/// Trains one benchmark cell from scratch and evaluates dev MRR@10.
/// The generation loss switches the model to the generation head.
pub fn run_cell(
    data: &BenchmarkData,
    settings: &BenchmarkSettings,
    loss: TrainLoss,
    list_size: usize,
    preset: &str,
    seed: u64,
) -> Result<(CellOutcome, EvalReport), ExperimentError> {
    let start = Instant::now();
    let mut model_cfg = ModelConfig::preset(preset, data.vocab.len())?;
    if matches!(loss, TrainLoss::Generation) {
        model_cfg.head_variant = HeadVariant::GenerationBaseline;
    }
    model_cfg.seed = seed;
    let mut model = RankerModel::new(model_cfg)?;
    let train_cfg = TrainConfig {
        loss,
        list_size,
        batch_size: settings.batch_size,
        learning_rate: settings.learning_rate,
        steps: settings.steps,
        seed,
        eval_every: 0,
        optimizer: Optimizer::Adam,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &train_cfg, &data.corpus.train, &data.vocab)?;
    let eval_report = dev_report(&model, &data.vocab, &data.corpus.dev, "mrr@10")?;
    let outcome = CellOutcome {
        run: cell_name(loss, list_size, preset, seed),
        loss,
        list_size,
        seed,
        preset: preset.to_string(),
        dev_mrr10: eval_report.means[0],
        final_loss: report.final_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((outcome, eval_report))
}

/// Reranks `lists` with the model and evaluates one metric against the
/// lists' own labels.
pub fn dev_report(
    model: &RankerModel,
    vocab: &Vocabulary,
    lists: &[CandidateList],
    metric: &str,
) -> Result<EvalReport, ExperimentError> {
    let mut opts = RerankOptions::default();
    opts.template.max_seq_len = model.config.max_seq_len;
    let outcome = rerank(model, vocab, lists, &opts)?;
    let opts = EvalOptions {
        metrics: vec![MetricSpec::parse(metric)?],
        missing: MissingQrels::Zero,
    };
    Ok(evaluate(
        &outcome.entries,
        &qrels_from_candidates(lists),
        &opts,
        None,
    )?)
}

/// A full run matrix: every requested (loss, list size) cell crossed with
/// every seed. Failed cells are recorded and skipped by the aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub cells: Vec<CellOutcome>,
    /// `(run name, error)` for cells that failed to train or evaluate.
    pub failures: Vec<(String, String)>,
}

impl MatrixOutcome {
    /// Mean dev MRR@10 over seeds for one (loss, list size) cell, if any
    /// seed of it succeeded.
    pub fn mean_mrr10(&self, loss: TrainLoss, list_size: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.loss == loss && c.list_size == list_size)
            .map(|c| c.dev_mrr10)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Trains every cell × seed on one shared corpus; also returns the
/// experiment table with per-query values behind each mean.
pub fn run_matrix(
    settings: &BenchmarkSettings,
    cells: &[(TrainLoss, usize)],
) -> Result<(MatrixOutcome, ExperimentResult), ExperimentError> {
    let data = prepare_benchmark(settings)?;
    let mut outcome = MatrixOutcome {
        cells: Vec::new(),
        failures: Vec::new(),
    };
    let mut result = ExperimentResult {
        config: serde_json::json!({
            "settings": settings,
            "cells": cells
                .iter()
                .map(|(l, m)| format!("{}@m={m}", l.as_str()))
                .collect::<Vec<_>>(),
        }),
        rows: Vec::new(),
    };
    for &(loss, list_size) in cells {
        for &seed in &settings.seeds {
            match run_cell(&data, settings, loss, list_size, &settings.preset, seed) {
                Ok((cell, report)) => {
                    result.push_report(&cell.run, &report);
                    outcome.cells.push(cell);
                }
                Err(err) => {
                    let run = cell_name(loss, list_size, &settings.preset, seed);
                    outcome.failures.push((run, err.to_string()));
                }
            }
        }
    }
    Ok((outcome, result))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// What a sweep varies; everything else comes from [`BenchmarkSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Training losses at the default list size (includes the generation
    /// baseline, which switches the head).
    Loss,
    /// Softmax loss across [`SWEEP_LIST_SIZES`].
    ListSize,
    /// Softmax loss across model presets.
    ModelSize,
}

impl SweepKind {
    pub fn parse(name: &str) -> Result<Self, ExperimentError> {
        match name {
            "loss" => Ok(SweepKind::Loss),
            "list_size" | "list-size" => Ok(SweepKind::ListSize),
            "model_size" | "model-size" => Ok(SweepKind::ModelSize),
            other => Err(ExperimentError::Io {
                path: other.to_string(),
                source: std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    "expected loss, list_size, or model_size",
                ),
            }),
        }
    }
}

/// Sweep output: the experiment table, a two-column plot CSV
/// (x = swept value, y = mean dev MRR@10 over seeds), and any failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub result: ExperimentResult,
    pub matrix: MatrixOutcome,
    pub plot_csv: String,
}

pub fn run_sweep(
    kind: SweepKind,
    settings: &BenchmarkSettings,
) -> Result<SweepOutcome, ExperimentError> {
    match kind {
        SweepKind::Loss => {
            let cells: Vec<(TrainLoss, usize)> = [
                TrainLoss::PointCe,
                TrainLoss::Pair,
                TrainLoss::Softmax,
                TrainLoss::Poly1,
                TrainLoss::Generation,
            ]
            .into_iter()
            .map(|l| (l, settings.list_size))
            .collect();
            let (matrix, result) = run_matrix(settings, &cells)?;
            let mut plot = String::from("loss,mean_dev_mrr_at_10\n");
            for (loss, m) in cells {
                if let Some(mean) = matrix.mean_mrr10(loss, m) {
                    plot.push_str(&format!("{},{mean:.6}\n", loss.as_str()));
                }
            }
            Ok(SweepOutcome {
                result,
                matrix,
                plot_csv: plot,
            })
        }
        SweepKind::ListSize => {
            let cells: Vec<(TrainLoss, usize)> = SWEEP_LIST_SIZES
                .iter()
                .map(|&m| (TrainLoss::Softmax, m))
                .collect();
            let (matrix, result) = run_matrix(settings, &cells)?;
            let mut plot = String::from("list_size,mean_dev_mrr_at_10\n");
            for (_, m) in cells {
                if let Some(mean) = matrix.mean_mrr10(TrainLoss::Softmax, m) {
                    plot.push_str(&format!("{m},{mean:.6}\n"));
                }
            }
            Ok(SweepOutcome {
                result,
                matrix,
                plot_csv: plot,
            })
        }
        SweepKind::ModelSize => {
            let data = prepare_benchmark(settings)?;
            let presets = ["tiny", "small"];
            let mut matrix = MatrixOutcome {
                cells: Vec::new(),
                failures: Vec::new(),
            };
            let mut result = ExperimentResult {
                config: serde_json::json!({
                    "settings": settings,
                    "presets": presets,
                }),
                rows: Vec::new(),
            };
            let mut plot = String::from("preset,mean_dev_mrr_at_10\n");
            for preset in presets {
                let mut values = Vec::new();
                for &seed in &settings.seeds {
                    match run_cell(
                        &data,
                        settings,
                        TrainLoss::Softmax,
                        settings.list_size,
                        preset,
                        seed,
                    ) {
                        Ok((cell, report)) => {
                            values.push(cell.dev_mrr10);
                            result.push_report(&cell.run, &report);
                            matrix.cells.push(cell);
                        }
                        Err(err) => {
                            let run =
                                cell_name(TrainLoss::Softmax, settings.list_size, preset, seed);
                            matrix.failures.push((run, err.to_string()));
                        }
                    }
                }
                if !values.is_empty() {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    plot.push_str(&format!("{preset},{mean:.6}\n"));
                }
            }
            Ok(SweepOutcome {
                result,
                matrix,
                plot_csv: plot,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Zero-shot transfer
// ---------------------------------------------------------------------------

/// NDCG@10 for one evaluation dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub dataset: String,
    pub queries: usize,
    pub ndcg10: f64,
}

/// Per-dataset NDCG@10 plus the macro average, with checkpoint hashes
/// proving evaluation never touched the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub rows: Vec<ZeroShotRow>,
    pub macro_avg_ndcg10: f64,
    pub checkpoint_hash_before: u64,
    pub checkpoint_hash_after: u64,
}

impl ZeroShotReport {
    pub fn format_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.dataset.len())
            .max()
            .unwrap_or(0)
            .max("macro-average".len());
        let mut out = format!("{:<width$} {:>8} {:>8}\n", "dataset", "queries", "ndcg@10");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$} {:>8} {:>8.4}\n",
                row.dataset, row.queries, row.ndcg10
            ));
        }
        let total: usize = self.rows.iter().map(|r| r.queries).sum();
        out.push_str(&format!(
            "{:<width$} {:>8} {:>8.4}\n",
            "macro-average", total, self.macro_avg_ndcg10
        ));
        out.push_str(&format!(
            "checkpoint hash {:016x} (unchanged: {})\n",
            self.checkpoint_hash_after,
            self.checkpoint_hash_before == self.checkpoint_hash_after
        ));
        out
    }
}

/// Evaluates a saved checkpoint on held-out datasets without training.
/// The checkpoint file is hashed before and after as a no-retraining check.
pub fn zeroshot_eval(
    checkpoint: &Path,
    vocab: &Vocabulary,
    datasets: &[(String, Vec<CandidateList>)],
) -> Result<ZeroShotReport, ExperimentError> {
    let hash_before = file_fnv1a(checkpoint)?;
    let model = RankerModel::load(checkpoint)?;
    let mut rows = Vec::with_capacity(datasets.len());
    for (name, lists) in datasets {
        let report = dev_report(&model, vocab, lists, "ndcg@10")?;
        rows.push(ZeroShotRow {
            dataset: name.clone(),
            queries: report.rows.len(),
            ndcg10: report.means[0],
        });
    }
    let macro_avg = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.ndcg10).sum::<f64>() / rows.len() as f64
    };
    let hash_after = file_fnv1a(checkpoint)?;
    Ok(ZeroShotReport {
        rows,
        macro_avg_ndcg10: macro_avg,
        checkpoint_hash_before: hash_before,
        checkpoint_hash_after: hash_after,
    })
}
