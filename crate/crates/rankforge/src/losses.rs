//! Ranking losses over one scored candidate list, as pure functions.
//!
//! Each loss takes a [`LabeledScores`] (per-document relevance labels and
//! model scores for one query) and returns the loss value together with its
//! analytic gradient with respect to the scores:
//!
//! | loss                 | form                                                             |
//! |----------------------|------------------------------------------------------------------|
//! | [`point_ce`]         | binary cross entropy of sigmoid(score) against 0/1 labels        |
//! | [`pair_logistic`]    | Σ over pairs with `y_j > y_j'` of log(1 + exp(ŷ_j' − ŷ_j))       |
//! | [`softmax_ce`]       | −Σ_j y_j log softmax(ŷ)_j (listwise cross entropy)              |
//! | [`poly1_softmax_ce`] | softmax_ce + ε Σ_j y_j (1 − softmax(ŷ)_j)                       |
//!
//! All of them are computed through log-sum-exp / softplus so that large
//! score magnitudes do not overflow, and all are shift-invariant where the
//! math says they should be. [`batch_loss`] averages over a batch of lists
//! and scales every per-list gradient by 1/batch-size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("labeled scores: {labels} labels vs {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("labeled scores: list is empty")]
    Empty,
    #[error("labeled scores: score at {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("labeled scores: label at {index} is {label}, expected a finite value >= 0")]
    InvalidLabel { index: usize, label: f64 },
    #[error("point_ce: label at {index} is {label}, expected binary 0/1")]
    NonBinaryLabel { index: usize, label: f64 },
    #[error("poly1: epsilon {0} is not finite")]
    InvalidEpsilon(f64),
    #[error("batch_loss: batch is empty")]
    EmptyBatch,
}

/// Relevance labels and model scores for the candidates of one query,
/// index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub labels: Vec<f64>,
    pub scores: Vec<f64>,
}

impl LabeledScores {
    pub fn new(labels: Vec<f64>, scores: Vec<f64>) -> Result<Self, LossError> {
        let ls = LabeledScores { labels, scores };
        ls.validate()?;
        Ok(ls)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<(), LossError> {
        if self.labels.len() != self.scores.len() {
            return Err(LossError::LengthMismatch {
                labels: self.labels.len(),
                scores: self.scores.len(),
            });
        }
        if self.labels.is_empty() {
            return Err(LossError::Empty);
        }
        for (i, &s) in self.scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(LossError::NonFiniteScore { index: i });
            }
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if !y.is_finite() || y < 0.0 {
                return Err(LossError::InvalidLabel { index: i, label: y });
            }
        }
        Ok(())
    }

    fn validate_binary(&self) -> Result<(), LossError> {
        for (i, &y) in self.labels.iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(LossError::NonBinaryLabel { index: i, label: y });
            }
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Which ranking loss to apply; `Poly1` takes its ε separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "pointce")]
    PointCe,
    #[serde(rename = "pair")]
    PairLogistic,
    #[serde(rename = "softmax")]
    SoftmaxCe,
    #[serde(rename = "poly1")]
    Poly1,
}

impl LossKind {
    pub fn apply(self, ls: &LabeledScores, poly1_epsilon: f64) -> Result<LossOutput, LossError> {
        match self {
            LossKind::PointCe => point_ce(ls),
            LossKind::PairLogistic => pair_logistic(ls),
            LossKind::SoftmaxCe => softmax_ce(ls),
            LossKind::Poly1 => poly1_softmax_ce(ls, poly1_epsilon),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::PointCe => "pointce",
            LossKind::PairLogistic => "pair",
            LossKind::SoftmaxCe => "softmax",
            LossKind::Poly1 => "poly1",
        }
    }
}

/// Pointwise binary cross entropy on sigmoid-squashed scores. Labels must be
/// binary. `value = Σ_{y=1} softplus(−ŷ) + Σ_{y=0} softplus(ŷ)`,
/// `grad_j = sigmoid(ŷ_j) − y_j`, so every component lies in (−1, 1).
pub fn point_ce(ls: &LabeledScores) -> Result<LossOutput, LossError> {
    ls.validate()?;
    ls.validate_binary()?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(ls.len());
    for (&y, &s) in ls.labels.iter().zip(&ls.scores) {
        value += if y == 1.0 { softplus(-s) } else { softplus(s) };
        grad.push(sigmoid(s) - y);
    }
    Ok(LossOutput { value, grad })
}

/// Pairwise logistic loss: for every ordered pair with `y_j > y_j'`, add
/// `softplus(ŷ_j' − ŷ_j)`. Works on graded labels; only label order matters.
pub fn pair_logistic(ls: &LabeledScores) -> Result<LossOutput, LossError> {
    ls.validate()?;
    let m = ls.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; m];
    for j in 0..m {
        for jp in 0..m {
            if ls.labels[j] > ls.labels[jp] {
                let diff = ls.scores[jp] - ls.scores[j];
                value += softplus(diff);
                let s = sigmoid(diff);
                grad[jp] += s;
                grad[j] -= s;
            }
        }
    }
    Ok(LossOutput { value, grad })
}

/// Listwise softmax cross entropy: `−Σ_j y_j log softmax(ŷ)_j`, computed via
/// log-sum-exp. A list with no positive labels contributes zero loss and a
/// zero gradient rather than an error. `grad_k = (Σ_j y_j)·p_k − y_k`.
pub fn softmax_ce(ls: &LabeledScores) -> Result<LossOutput, LossError> {
    ls.validate()?;
    let out = softmax_ce_parts(ls);
    Ok(LossOutput {
        value: out.value,
        grad: out.grad,
    })
}

/// Softmax cross entropy plus the first polynomial correction term
/// `ε Σ_j y_j (1 − p_j)`. With `ε == 0` this takes the exact [`softmax_ce`]
/// code path, so the two are bitwise identical there.
pub fn poly1_softmax_ce(ls: &LabeledScores, epsilon: f64) -> Result<LossOutput, LossError> {
    ls.validate()?;
    if !epsilon.is_finite() {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let mut out = softmax_ce_parts(ls);
    if epsilon == 0.0 {
        return Ok(LossOutput {
            value: out.value,
            grad: out.grad,
        });
    }
    // value += ε Σ_j y_j (1 − p_j)
    // d/dŷ_k of that term is ε p_k (Σ_j y_j p_j − y_k).
    let mut weighted_p = 0.0;
    for (&y, &p) in ls.labels.iter().zip(&out.probs) {
        out.value += epsilon * y * (1.0 - p);
        weighted_p += y * p;
    }
    for ((g, &p), &y) in out.grad.iter_mut().zip(&out.probs).zip(&ls.labels) {
        *g += epsilon * p * (weighted_p - y);
    }
    Ok(LossOutput {
        value: out.value,
        grad: out.grad,
    })
}

struct SoftmaxParts {
    value: f64,
    grad: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax_ce_parts(ls: &LabeledScores) -> SoftmaxParts {
    let max = ls.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &s in &ls.scores {
        z += (s - max).exp();
    }
    let lse = max + z.ln();
    let probs: Vec<f64> = ls.scores.iter().map(|&s| (s - lse).exp()).collect();
    let label_sum: f64 = ls.labels.iter().sum();
    if label_sum == 0.0 {
        // No positives: defined as zero loss, zero gradient.
        return SoftmaxParts {
            value: 0.0,
            grad: vec![0.0; ls.len()],
            probs,
        };
    }
    let mut value = 0.0;
    for (&y, &s) in ls.labels.iter().zip(&ls.scores) {
        if y != 0.0 {
            value -= y * (s - lse);
        }
    }
    let grad: Vec<f64> = probs
        .iter()
        .zip(&ls.labels)
        .map(|(&p, &y)| label_sum * p - y)
        .collect();
    SoftmaxParts { value, grad, probs }
}

/// Batch aggregate: mean of per-list loss values; each returned per-list
/// gradient is scaled by 1/batch-size so that summing them implements the
/// gradient of the mean.
#[derive(Debug, Clone)]
pub struct BatchLossOutput {
    /// Mean loss over the batch.
    pub value: f64,
    /// Unscaled per-list loss values.
    pub list_values: Vec<f64>,
    /// Per-list gradients, each already scaled by 1/batch-size.
    pub grads: Vec<Vec<f64>>,
}

pub fn batch_loss(
    lists: &[LabeledScores],
    kind: LossKind,
    poly1_epsilon: f64,
) -> Result<BatchLossOutput, LossError> {
    if lists.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = lists.len() as f64;
    let mut value = 0.0;
    let mut list_values = Vec::with_capacity(lists.len());
    let mut grads = Vec::with_capacity(lists.len());
    for ls in lists {
        let mut out = kind.apply(ls, poly1_epsilon)?;
        value += out.value;
        list_values.push(out.value);
        for g in &mut out.grad {
            *g /= n;
        }
        grads.push(out.grad);
    }
    Ok(BatchLossOutput {
        value: value / n,
        list_values,
        grads,
    })
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow for large |x|.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0f64).max(a.abs()).max(b.abs())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0f64).max(a.abs()).max(b.abs())
    }

    /// Direct-formula oracle, written independently of the implementation:
    /// plain exponentials, no softplus/log-sum-exp rearrangement.
    mod oracle {
        pub fn point_ce(labels: &[f64], scores: &[f64]) -> f64 {
            labels
                .iter()
                .zip(scores)
                .map(|(&y, &s)| {
                    let p = 1.0 / (1.0 + (-s).exp());
                    if y == 1.0 {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum()
        }

        pub fn pair_logistic(labels: &[f64], scores: &[f64]) -> f64 {
            let mut v = 0.0;
            for j in 0..labels.len() {
                for jp in 0..labels.len() {
                    if labels[j] > labels[jp] {
                        v += (1.0 + (scores[jp] - scores[j]).exp()).ln();
                    }
                }
            }
            v
        }

        pub fn probs(scores: &[f64]) -> Vec<f64> {
            let z: f64 = scores.iter().map(|&s| s.exp()).sum();
            scores.iter().map(|&s| s.exp() / z).collect()
        }

        pub fn softmax_ce(labels: &[f64], scores: &[f64]) -> f64 {
            let p = probs(scores);
            labels
                .iter()
                .zip(&p)
                .map(|(&y, &pj)| if y != 0.0 { -y * pj.ln() } else { 0.0 })
                .sum()
        }

        pub fn poly1(labels: &[f64], scores: &[f64], eps: f64) -> f64 {
            let p = probs(scores);
            softmax_ce(labels, scores)
                + eps
                    * labels
                        .iter()
                        .zip(&p)
                        .map(|(&y, &pj)| y * (1.0 - pj))
                        .sum::<f64>()
        }
    }

    fn numerical_grad(f: impl Fn(&[f64]) -> f64, scores: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut g = vec![0.0; scores.len()];
        let mut work = scores.to_vec();
        for i in 0..scores.len() {
            work[i] = scores[i] + h;
            let fp = f(&work);
            work[i] = scores[i] - h;
            let fm = f(&work);
            work[i] = scores[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn random_list(rng: &mut ChaCha8Rng, binary: bool) -> LabeledScores {
        let m = rng.gen_range(1..=10usize);
        let labels: Vec<f64> = (0..m)
            .map(|_| {
                if binary {
                    if rng.gen_bool(0.3) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    rng.gen_range(0..4) as f64
                }
            })
            .collect();
        let scores: Vec<f64> = (0..m).map(|_| rng.gen_range(-8.0..8.0)).collect();
        LabeledScores { labels, scores }
    }

    #[test]
    fn point_ce_uniform_example() {
        // y=[1,0], scores [0,0]: two sides of the same coin, ln 2 each.
        let ls = LabeledScores::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let out = point_ce(&ls).unwrap();
        assert!(approx_eq(out.value, 2.0 * std::f64::consts::LN_2, 1e-15));
        assert_eq!(out.grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn point_ce_rejects_graded_labels() {
        let ls = LabeledScores::new(vec![2.0, 0.0], vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            point_ce(&ls),
            Err(LossError::NonBinaryLabel { index: 0, .. })
        ));
    }

    #[test]
    fn softmax_ce_uniform_example() {
        // y=[1,0,0,0], uniform scores: loss is ln 4.
        let ls = LabeledScores::new(vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]).unwrap();
        let out = softmax_ce(&ls).unwrap();
        assert!(approx_eq(out.value, 4.0f64.ln(), 1e-15));
    }

    #[test]
    fn softmax_ce_no_positives_is_zero() {
        let ls = LabeledScores::new(vec![0.0, 0.0, 0.0], vec![1.0, -2.0, 0.5]).unwrap();
        let out = softmax_ce(&ls).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn poly1_uniform_example() {
        // y=[1,0], uniform scores, ε=1: ln 2 + 0.5.
        let ls = LabeledScores::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let out = poly1_softmax_ce(&ls, 1.0).unwrap();
        assert!(approx_eq(out.value, std::f64::consts::LN_2 + 0.5, 1e-15));
    }

    #[test]
    fn poly1_with_zero_epsilon_is_bitwise_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let ls = random_list(&mut rng, false);
            let a = softmax_ce(&ls).unwrap();
            let b = poly1_softmax_ce(&ls, 0.0).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            for (x, y) in a.grad.iter().zip(&b.grad) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn values_match_direct_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let ls = random_list(&mut rng, true);
            let graded = random_list(&mut rng, false);
            assert!(
                rel_err(
                    point_ce(&ls).unwrap().value,
                    oracle::point_ce(&ls.labels, &ls.scores)
                ) < 1e-12
            );
            assert!(
                rel_err(
                    pair_logistic(&graded).unwrap().value,
                    oracle::pair_logistic(&graded.labels, &graded.scores)
                ) < 1e-12
            );
            assert!(
                rel_err(
                    softmax_ce(&graded).unwrap().value,
                    oracle::softmax_ce(&graded.labels, &graded.scores)
                ) < 1e-12
            );
            let eps = rng.gen_range(0.0..2.0);
            assert!(
                rel_err(
                    poly1_softmax_ce(&graded, eps).unwrap().value,
                    oracle::poly1(&graded.labels, &graded.scores, eps)
                ) < 1e-12
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Central differences at h=1e-5, 200 seeded lists, 1e-6 relative.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let ls = random_list(&mut rng, true);
            let graded = random_list(&mut rng, false);
            let eps = rng.gen_range(0.0..2.0);
            let cases: Vec<(LossOutput, Box<dyn Fn(&[f64]) -> f64>)> = vec![
                (point_ce(&ls).unwrap(), {
                    let l = ls.labels.clone();
                    Box::new(move |s: &[f64]| {
                        point_ce(&LabeledScores {
                            labels: l.clone(),
                            scores: s.to_vec(),
                        })
                        .unwrap()
                        .value
                    })
                }),
                (pair_logistic(&graded).unwrap(), {
                    let l = graded.labels.clone();
                    Box::new(move |s: &[f64]| {
                        pair_logistic(&LabeledScores {
                            labels: l.clone(),
                            scores: s.to_vec(),
                        })
                        .unwrap()
                        .value
                    })
                }),
                (softmax_ce(&graded).unwrap(), {
                    let l = graded.labels.clone();
                    Box::new(move |s: &[f64]| {
                        softmax_ce(&LabeledScores {
                            labels: l.clone(),
                            scores: s.to_vec(),
                        })
                        .unwrap()
                        .value
                    })
                }),
                (poly1_softmax_ce(&graded, eps).unwrap(), {
                    let l = graded.labels.clone();
                    Box::new(move |s: &[f64]| {
                        poly1_softmax_ce(
                            &LabeledScores {
                                labels: l.clone(),
                                scores: s.to_vec(),
                            },
                            eps,
                        )
                        .unwrap()
                        .value
                    })
                }),
            ];
            for (i, (out, f)) in cases.iter().enumerate() {
                let scores = if i == 0 { &ls.scores } else { &graded.scores };
                let num = numerical_grad(f, scores);
                for (a, n) in out.grad.iter().zip(&num) {
                    assert!(
                        rel_err(*a, *n) < 1e-6,
                        "case {i}: analytic {a} vs numeric {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn nan_scores_are_rejected() {
        let ls = LabeledScores {
            labels: vec![1.0, 0.0],
            scores: vec![f64::NAN, 0.0],
        };
        assert!(matches!(
            softmax_ce(&ls),
            Err(LossError::NonFiniteScore { index: 0 })
        ));
        assert!(LabeledScores::new(vec![1.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn batch_loss_means_and_scales() {
        let a = LabeledScores::new(vec![1.0, 0.0], vec![0.3, -0.4]).unwrap();
        let b = LabeledScores::new(vec![0.0, 1.0, 0.0], vec![1.0, 0.0, -1.0]).unwrap();
        let ia = softmax_ce(&a).unwrap();
        let ib = softmax_ce(&b).unwrap();
        let out = batch_loss(&[a, b], LossKind::SoftmaxCe, 1.0).unwrap();
        assert!(approx_eq(out.value, (ia.value + ib.value) / 2.0, 1e-15));
        for (g, &e) in out.grads[0].iter().zip(&ia.grad) {
            assert!(approx_eq(*g, e / 2.0, 1e-15));
        }
        for (g, &e) in out.grads[1].iter().zip(&ib.grad) {
            assert!(approx_eq(*g, e / 2.0, 1e-15));
        }
        assert!(matches!(
            batch_loss(&[], LossKind::SoftmaxCe, 1.0),
            Err(LossError::EmptyBatch)
        ));
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let ls = LabeledScores::new(vec![1.0, 0.0], vec![800.0, -800.0]).unwrap();
        for out in [
            point_ce(&ls).unwrap(),
            pair_logistic(&ls).unwrap(),
            softmax_ce(&ls).unwrap(),
            poly1_softmax_ce(&ls, 1.0).unwrap(),
        ] {
            assert!(out.value.is_finite());
            assert!(out.grad.iter().all(|g| g.is_finite()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// Listwise and pairwise losses are invariant to a constant score
        /// shift; the pointwise loss is not, and that is deliberate.
        #[test]
        fn shift_invariance(
            seed in 0u64..1000,
            c in -20.0f64..20.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ls = random_list(&mut rng, false);
            let shifted = LabeledScores {
                labels: ls.labels.clone(),
                scores: ls.scores.iter().map(|&s| s + c).collect(),
            };
            let a = softmax_ce(&ls).unwrap();
            let b = softmax_ce(&shifted).unwrap();
            prop_assert!(approx_eq(a.value, b.value, 1e-9));
            let pa = pair_logistic(&ls).unwrap();
            let pb = pair_logistic(&shifted).unwrap();
            prop_assert!(approx_eq(pa.value, pb.value, 1e-9));
        }

        /// Permuting a list permutes the loss gradient the same way and
        /// leaves the value unchanged.
        #[test]
        fn permutation_equivariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ls = random_list(&mut rng, true);
            let m = ls.len();
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let permuted = LabeledScores {
                labels: perm.iter().map(|&i| ls.labels[i]).collect(),
                scores: perm.iter().map(|&i| ls.scores[i]).collect(),
            };
            for kind in [LossKind::PointCe, LossKind::PairLogistic, LossKind::SoftmaxCe, LossKind::Poly1] {
                let a = kind.apply(&ls, 1.0).unwrap();
                let b = kind.apply(&permuted, 1.0).unwrap();
                prop_assert!(approx_eq(a.value, b.value, 1e-9));
                for (slot, &src) in perm.iter().enumerate() {
                    prop_assert!(approx_eq(b.grad[slot], a.grad[src], 1e-9));
                }
            }
        }

        /// Pointwise gradient components always lie in (−1, 1).
        #[test]
        fn point_ce_grad_is_bounded(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ls = random_list(&mut rng, true);
            let out = point_ce(&ls).unwrap();
            for g in out.grad {
                prop_assert!(g > -1.0 && g < 1.0);
            }
        }

        /// Losses are non-negative and zero exactly when unavoidable.
        #[test]
        fn losses_are_non_negative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let binary = random_list(&mut rng, true);
            let graded = random_list(&mut rng, false);
            prop_assert!(point_ce(&binary).unwrap().value >= 0.0);
            prop_assert!(pair_logistic(&graded).unwrap().value >= 0.0);
            prop_assert!(softmax_ce(&graded).unwrap().value >= 0.0);
            prop_assert!(poly1_softmax_ce(&graded, 1.0).unwrap().value >= 0.0);
        }
    }
}
