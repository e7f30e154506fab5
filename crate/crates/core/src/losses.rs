//! Cross-entropy and the pairwise ranking losses, each returning its value
//! together with the analytic (sub)gradient.
//!
//! Ranking losses act on a per-sample confidence `kappa` and a per-sample
//! target (training consistency or correctness). A pair `(s, i)` with
//! `c_s > c_i` is penalized by `max(0, (c_s - c_i) - (kappa_s - kappa_i))`.
//! At the hinge kink the inactive (zero) branch is used.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax};

/// How each group's cyclic-pair sum enters the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankReduction {
    /// Plain sum over pairs.
    Sum,
    /// Sum divided by the number of pairs in the group.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the correctness ranking term.
    pub lambda1: f64,
    /// Weight of the consistency ranking term.
    pub lambda2: f64,
    #[serde(default)]
    pub reduction: RankReduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.5,
            reduction: RankReduction::default(),
        }
    }
}

impl LossWeights {
    pub fn cross_entropy_only() -> Self {
        LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Softmax rows of a joint batch whose first `group_boundary` rows are labeled.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub probs: Array2<f64>,
    pub kappa: Vec<f64>,
    pub argmax: Vec<usize>,
    pub targets: Vec<f64>,
    pub group_boundary: usize,
}

impl PairedBatch {
    pub fn new(probs: Array2<f64>, targets: Vec<f64>, group_boundary: usize) -> Result<Self> {
        if targets.len() != probs.nrows() || group_boundary > probs.nrows() {
            return Err(Error::Shape(format!(
                "{} rows, {} targets, boundary {group_boundary}",
                probs.nrows(),
                targets.len()
            )));
        }
        let argmax: Vec<usize> = probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect();
        let kappa = argmax
            .iter()
            .zip(probs.rows())
            .map(|(&a, r)| r[a])
            .collect();
        Ok(PairedBatch {
            probs,
            kappa,
            argmax,
            targets,
            group_boundary,
        })
    }

    pub fn from_logits(logits: ArrayView2<'_, f64>, targets: Vec<f64>, group_boundary: usize) -> Result<Self> {
        Self::new(softmax(logits), targets, group_boundary)
    }
}

/// Mean cross-entropy of `labels` under `softmax(logits)` and its gradient
/// `(p - onehot) / m` with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (m, k) = logits.dim();
    if labels.len() != m {
        return Err(Error::Shape(format!("{m} rows but {} labels", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {y} outside [0, {k})")));
    }
    let mut grad = Array2::zeros((m, k));
    if m == 0 {
        return Ok((0.0, grad));
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[y];
        for j in 0..k {
            let p = (row[j] - log_z).exp();
            grad[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) * inv_m;
        }
    }
    Ok((loss * inv_m, grad))
}

/// All ordered pairs with `c_i < c_s`.
pub fn consistency_ranking_loss_full(c: &[f64], kappa: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair_inputs(c, kappa)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; c.len()];
    for s in 0..c.len() {
        for i in 0..c.len() {
            if c[i] < c[s] {
                let term = (c[s] - c[i]) - (kappa[s] - kappa[i]);
                if term > 0.0 {
                    loss += term;
                    grad[s] -= 1.0;
                    grad[i] += 1.0;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Pairs each sample with its cyclic successor: `s -> s + 1`, last -> first.
/// A group with fewer than two samples contributes nothing.
pub fn cyclic_pair_loss(targets: &[f64], kappa: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair_inputs(targets, kappa)?;
    let n = targets.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    if n < 2 {
        return Ok((loss, grad));
    }
    for s in 0..n {
        let t = (s + 1) % n;
        let dc = targets[s] - targets[t];
        let sign = sign(dc);
        let term = dc.abs() - sign * (kappa[s] - kappa[t]);
        if term > 0.0 {
            loss += term;
            grad[s] -= sign;
            grad[t] += sign;
        }
    }
    Ok((loss, grad))
}

/// Cyclic-pair consistency loss summed over the labeled prefix and the
/// unlabeled suffix, each paired within itself. Gradient is w.r.t. `kappa`.
pub fn consistency_ranking_loss_batch(batch: &PairedBatch) -> Result<(f64, Vec<f64>)> {
    let b = batch.group_boundary;
    let (l_lab, g_lab) = cyclic_pair_loss(&batch.targets[..b], &batch.kappa[..b])?;
    let (l_unl, g_unl) = cyclic_pair_loss(&batch.targets[b..], &batch.kappa[b..])?;
    Ok((l_lab + l_unl, [g_lab, g_unl].concat()))
}

/// Cyclic-pair ranking loss on labeled samples against correctness targets.
pub fn correctness_ranking_loss(corr: &[f64], kappa: &[f64]) -> Result<(f64, Vec<f64>)> {
    cyclic_pair_loss(corr, kappa)
}

/// Ranking targets for one joint batch, already normalized per group.
#[derive(Debug, Clone, Default)]
pub struct RankTargets {
    /// One entry per batch row (labeled prefix, then unlabeled).
    pub consistency: Option<Vec<f64>>,
    /// One entry per labeled row.
    pub correctness: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub cross_entropy: f64,
    pub correctness: f64,
    pub consistency: f64,
    pub grad_logits: Array2<f64>,
}

/// `L_CE + lambda1 * L_corr + lambda2 * L_cons` on a joint batch whose first
/// `labels.len()` rows are labeled. Cross-entropy is averaged over labeled
/// rows. A ranking term whose targets are absent or whose weight is zero
/// contributes nothing.
pub fn total_loss(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    targets: &RankTargets,
    weights: &LossWeights,
) -> Result<LossOutput> {
    let (m, k) = logits.dim();
    let n_lab = labels.len();
    if n_lab > m {
        return Err(Error::Shape(format!("{n_lab} labels for {m} rows")));
    }
    let (ce, ce_grad) = cross_entropy(logits.slice(ndarray::s![..n_lab, ..]), labels)?;
    let mut grad = Array2::zeros((m, k));
    grad.slice_mut(ndarray::s![..n_lab, ..]).assign(&ce_grad);

    let use_corr = weights.lambda1 > 0.0 && targets.correctness.is_some();
    let use_cons = weights.lambda2 > 0.0 && targets.consistency.is_some();
    let mut corr_loss = 0.0;
    let mut cons_loss = 0.0;
    if use_corr || use_cons {
        let probs = softmax(logits);
        let batch = PairedBatch::new(
            probs,
            targets.consistency.clone().unwrap_or_else(|| vec![0.0; m]),
            n_lab,
        )?;
        let mut grad_kappa = vec![0.0; m];
        if use_corr {
            let corr = targets.correctness.as_ref().unwrap();
            if corr.len() != n_lab {
                return Err(Error::Shape(format!(
                    "{} correctness targets for {n_lab} labeled rows",
                    corr.len()
                )));
            }
            let (l, g) = correctness_ranking_loss(corr, &batch.kappa[..n_lab])?;
            let scale = weights.lambda1 * reduction_scale(weights.reduction, n_lab);
            corr_loss = l * reduction_scale(weights.reduction, n_lab);
            for (gk, gi) in grad_kappa.iter_mut().zip(g) {
                *gk += scale * gi;
            }
        }
        if use_cons {
            let b = n_lab;
            let (l_lab, g_lab) = cyclic_pair_loss(&batch.targets[..b], &batch.kappa[..b])?;
            let (l_unl, g_unl) = cyclic_pair_loss(&batch.targets[b..], &batch.kappa[b..])?;
            let s_lab = reduction_scale(weights.reduction, b);
            let s_unl = reduction_scale(weights.reduction, m - b);
            cons_loss = s_lab * l_lab + s_unl * l_unl;
            for (i, g) in g_lab.into_iter().enumerate() {
                grad_kappa[i] += weights.lambda2 * s_lab * g;
            }
            for (i, g) in g_unl.into_iter().enumerate() {
                grad_kappa[b + i] += weights.lambda2 * s_unl * g;
            }
        }
        // kappa_i = p_{i,a}; d p_a / d z_j = p_a (delta_aj - p_j)
        for i in 0..m {
            let gk = grad_kappa[i];
            if gk == 0.0 {
                continue;
            }
            let a = batch.argmax[i];
            let pa = batch.probs[[i, a]];
            for j in 0..k {
                let delta = if j == a { 1.0 } else { 0.0 };
                grad[[i, j]] += gk * pa * (delta - batch.probs[[i, j]]);
            }
        }
    }
    Ok(LossOutput {
        total: ce + weights.lambda1 * corr_loss + weights.lambda2 * cons_loss,
        cross_entropy: ce,
        correctness: corr_loss,
        consistency: cons_loss,
        grad_logits: grad,
    })
}

fn reduction_scale(reduction: RankReduction, group_size: usize) -> f64 {
    match reduction {
        RankReduction::Sum => 1.0,
        RankReduction::Mean if group_size >= 2 => 1.0 / group_size as f64,
        RankReduction::Mean => 0.0,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pair_inputs(c: &[f64], kappa: &[f64]) -> Result<()> {
    if c.len() != kappa.len() {
        return Err(Error::Shape(format!(
            "{} targets but {} scores",
            c.len(),
            kappa.len()
        )));
    }
    if c.iter().chain(kappa).any(|v| !v.is_finite()) {
        return Err(Error::Contract("ranking inputs must be finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = cross_entropy(array![[0.0, 0.0, 0.0, 0.0]].view(), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let (l, g) = cross_entropy(array![[800.0, 0.0], [0.0, 800.0]].view(), &[0, 1]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        // underflowing probability stays finite
        let (l, _) = cross_entropy(array![[800.0, 0.0]].view(), &[1]).unwrap();
        assert_eq!(l, 800.0);
    }

    #[test]
    fn full_loss_hand_cases() {
        let c = [0.1, 0.4, 0.9];
        assert_eq!(consistency_ranking_loss_full(&c, &c).unwrap().0, 0.0);
        let (l, g) = consistency_ranking_loss_full(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![1.0, -1.0]);
    }

    #[test]
    fn full_loss_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c: Vec<f64> = (0..6).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
            let k: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let mut oracle = 0.0;
            for (s, (&cs, &ks)) in c.iter().zip(&k).enumerate() {
                for (i, (&ci, &ki)) in c.iter().zip(&k).enumerate() {
                    if s != i && ci < cs {
                        oracle += f64::max(0.0, (cs - ci) - (ks - ki));
                    }
                }
            }
            let (l, _) = consistency_ranking_loss_full(&c, &k).unwrap();
            assert!((l - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_hand_cases() {
        let (l, _) = cyclic_pair_loss(&[0.4, 0.4, 0.4], &[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(l, 0.0);
        let (l, g) = cyclic_pair_loss(&[0.2, 0.8], &[0.9, 0.1]).unwrap();
        assert!((l - 2.8).abs() < 1e-12);
        assert_eq!(g, vec![2.0, -2.0]);
        let (l, _) = cyclic_pair_loss(&[0.3], &[0.1]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn batch_loss_splits_groups() {
        let probs = array![[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.55, 0.45]];
        let batch = PairedBatch::new(probs, vec![0.2, 0.8, 0.2, 0.8], 2).unwrap();
        assert_eq!(batch.kappa, vec![0.9, 0.6, 0.7, 0.55]);
        let (l, _) = consistency_ranking_loss_batch(&batch).unwrap();
        let (a, _) = cyclic_pair_loss(&[0.2, 0.8], &[0.9, 0.6]).unwrap();
        let (b, _) = cyclic_pair_loss(&[0.2, 0.8], &[0.7, 0.55]).unwrap();
        assert_eq!(l, a + b);
    }

    #[test]
    fn zero_weights_reduce_to_cross_entropy() {
        let logits = array![[0.3, -1.0, 2.0], [1.0, 0.5, 0.1], [0.0, 0.2, 0.4]];
        let targets = RankTargets {
            consistency: Some(vec![0.0, 1.0, 0.5]),
            correctness: Some(vec![1.0, 0.0]),
        };
        let out = total_loss(logits.view(), &[2, 0], &targets, &LossWeights::cross_entropy_only()).unwrap();
        let (ce, g) = cross_entropy(logits.slice(ndarray::s![..2, ..]), &[2, 0]).unwrap();
        assert_eq!(out.total, ce);
        assert_eq!(out.grad_logits.slice(ndarray::s![..2, ..]), g);
        assert!(out.grad_logits.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_batch_has_zero_total() {
        // one-hot-saturated correct predictions, kappa == 1 for all, equal targets
        let logits = array![[900.0, 0.0], [0.0, 900.0], [900.0, 0.0], [0.0, 900.0]];
        let targets = RankTargets {
            consistency: Some(vec![1.0, 1.0, 0.5, 0.5]),
            correctness: Some(vec![1.0, 1.0]),
        };
        let out = total_loss(logits.view(), &[0, 1], &targets, &LossWeights::default()).unwrap();
        assert_eq!(out.total, 0.0);
    }
}
