//! Selective-risk, calibration and detection metrics.
//!
//! Ranking metrics order samples by descending confidence; equal scores are
//! ordered by ascending sample index so every metric is well defined when
//! confidences repeat.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::consistency::{ConsistencyLog, SurrogateKind};
use crate::error::{Error, Result};
use crate::numerics::argmax;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Confidence scores paired with the correctness of the predictions they rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSet {
    pub kappa: Vec<f64>,
    pub is_error: Vec<bool>,
    pub probs: Option<Array2<f64>>,
    pub labels: Vec<usize>,
}

impl EvaluatedSet {
    /// Uses the maximum softmax probability as confidence and the argmax as prediction.
    pub fn from_probs(probs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if probs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} probability rows for {} labels",
                probs.nrows(),
                labels.len()
            )));
        }
        let k = probs.ncols();
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Contract(format!("label {y} outside [0, {k})")));
        }
        let mut kappa = Vec::with_capacity(labels.len());
        let mut is_error = Vec::with_capacity(labels.len());
        for (row, &y) in probs.rows().into_iter().zip(&labels) {
            let a = argmax(row.iter().copied());
            kappa.push(row[a]);
            is_error.push(a != y);
        }
        Ok(EvaluatedSet {
            kappa,
            is_error,
            probs: Some(probs),
            labels,
        })
    }

    /// Ranking-only set: no probabilities, labels unknown.
    pub fn from_scores(kappa: Vec<f64>, is_error: Vec<bool>) -> Result<Self> {
        if kappa.len() != is_error.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} outcomes",
                kappa.len(),
                is_error.len()
            )));
        }
        if kappa.iter().any(|k| !k.is_finite()) {
            return Err(Error::Contract("confidence scores must be finite".into()));
        }
        Ok(EvaluatedSet {
            kappa,
            is_error,
            probs: None,
            labels: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn n_errors(&self) -> usize {
        self.is_error.iter().filter(|&&e| e).count()
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.n_errors() as f64 / self.len() as f64
    }

    fn probs(&self) -> Result<&Array2<f64>> {
        self.probs
            .as_ref()
            .ok_or_else(|| Error::Contract("metric needs class probabilities".into()))
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Contract("metric needs at least one sample".into()));
        }
        Ok(())
    }
}

/// Sample indices by descending score, ties by ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    /// `(coverage, selective risk)`, coverage increasing from `1/m` to 1.
    pub points: Vec<(f64, f64)>,
}

impl RiskCoverageCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coverage", "risk"])?;
        for (c, r) in &self.points {
            w.write_record([c.to_string(), r.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn aurc_of_error_sequence(errors_in_order: impl Iterator<Item = bool>, m: usize) -> (f64, RiskCoverageCurve) {
    let mut points = Vec::with_capacity(m);
    let mut errs = 0usize;
    let mut total = 0.0;
    for (j, e) in errors_in_order.enumerate() {
        errs += e as usize;
        let risk = errs as f64 / (j + 1) as f64;
        total += risk;
        points.push(((j + 1) as f64 / m as f64, risk));
    }
    (total / m as f64, RiskCoverageCurve { points })
}

/// Area under the risk-coverage curve: the mean over prefix lengths `j` of the
/// error rate among the `j` most confident samples.
pub fn aurc(set: &EvaluatedSet) -> Result<(f64, RiskCoverageCurve)> {
    set.require_nonempty()?;
    let order = descending_order(&set.kappa);
    Ok(aurc_of_error_sequence(
        order.iter().map(|&i| set.is_error[i]),
        set.len(),
    ))
}

/// AURC of a ranking that puts every correct prediction before every error.
pub fn optimal_aurc(set: &EvaluatedSet) -> Result<f64> {
    set.require_nonempty()?;
    let m = set.len();
    let n_correct = m - set.n_errors();
    Ok(aurc_of_error_sequence((0..m).map(|j| j >= n_correct), m).0)
}

pub fn e_aurc(set: &EvaluatedSet) -> Result<f64> {
    Ok(aurc(set)?.0 - optimal_aurc(set)?)
}

/// Equal-width, right-closed bins over `[0, 1]`; a score of 0 falls in the first bin.
pub fn ece(set: &EvaluatedSet, n_bins: usize) -> Result<f64> {
    set.require_nonempty()?;
    if n_bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    for (&k, &e) in set.kappa.iter().zip(&set.is_error) {
        let bin = ece_bin(k, n_bins);
        count[bin] += 1;
        correct[bin] += (!e) as usize;
        conf[bin] += k;
    }
    let m = set.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            (n / m) * (correct[b] as f64 / n - conf[b] / n).abs()
        })
        .sum())
}

pub(crate) fn ece_bin(kappa: f64, n_bins: usize) -> usize {
    let scaled = (kappa.clamp(0.0, 1.0) * n_bins as f64).ceil() as usize;
    scaled.saturating_sub(1).min(n_bins - 1)
}

/// Mean negative log-likelihood of the true labels. Probabilities are floored
/// at the smallest positive normal double so the result stays finite.
pub fn nll(set: &EvaluatedSet) -> Result<f64> {
    set.require_nonempty()?;
    let probs = set.probs()?;
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(&set.labels)
        .map(|(row, &y)| -row[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / set.len() as f64)
}

/// Multiclass Brier score: mean over samples of the squared distance to the one-hot label.
pub fn brier(set: &EvaluatedSet) -> Result<f64> {
    set.require_nonempty()?;
    let probs = set.probs()?;
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(&set.labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = p - if k == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / set.len() as f64)
}

/// False-positive rate (errors accepted) at the first descending threshold
/// where at least 95% of correct predictions are accepted.
pub fn fpr_at_95_tpr(set: &EvaluatedSet) -> Result<f64> {
    let n_neg = set.n_errors();
    let n_pos = set.len() - n_neg;
    if n_pos == 0 {
        return Err(Error::Undefined(
            "FPR at 95% TPR needs at least one correct prediction".into(),
        ));
    }
    let order = descending_order(&set.kappa);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut j = 0;
    while j < order.len() {
        let theta = set.kappa[order[j]];
        while j < order.len() && set.kappa[order[j]] == theta {
            if set.is_error[order[j]] {
                fp += 1;
            } else {
                tp += 1;
            }
            j += 1;
        }
        if 20 * tp >= 19 * n_pos {
            break;
        }
    }
    Ok(if n_neg == 0 {
        0.0
    } else {
        fp as f64 / n_neg as f64
    })
}

/// AUROC (in-distribution as positives, ties counted half) and the minimum
/// over thresholds of `0.5 (1 - TPR) + 0.5 FPR`.
pub fn ood_metrics(in_scores: &[f64], out_scores: &[f64]) -> Result<(f64, f64)> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::Contract(
            "both in- and out-of-distribution scores are required".into(),
        ));
    }
    if in_scores.iter().chain(out_scores).any(|s| !s.is_finite()) {
        return Err(Error::Contract("scores must be finite".into()));
    }
    let n_in = in_scores.len();
    let n_out = out_scores.len();
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Mann-Whitney U from average ranks.
    let mut rank_sum_in = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let in_here = all[i..j].iter().filter(|x| x.1).count();
        rank_sum_in += avg_rank * in_here as f64;
        i = j;
    }
    let u = rank_sum_in - (n_in * (n_in + 1)) as f64 / 2.0;
    let auroc = u / (n_in as f64 * n_out as f64);

    // Sweep thresholds from the top; accepting nothing gives error 0.5.
    let mut best = 0.5f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut j = all.len();
    while j > 0 {
        let theta = all[j - 1].0;
        while j > 0 && all[j - 1].0 == theta {
            if all[j - 1].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j -= 1;
        }
        let err = 0.5 * (1.0 - tp as f64 / n_in as f64) + 0.5 * (fp as f64 / n_out as f64);
        best = best.min(err);
    }
    Ok((auroc, best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub aurc: f64,
    pub e_aurc: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    /// `null` when there is no correct prediction.
    pub fpr95: Option<f64>,
}

impl MetricsReport {
    pub fn compute(set: &EvaluatedSet, n_bins: usize) -> Result<Self> {
        let (aurc, _) = aurc(set)?;
        Ok(MetricsReport {
            accuracy: set.accuracy(),
            aurc,
            e_aurc: aurc - optimal_aurc(set)?,
            ece: ece(set, n_bins)?,
            nll: nll(set)?,
            brier: brier(set)?,
            fpr95: match fpr_at_95_tpr(set) {
                Ok(v) => Some(v),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Per-epoch predictions and max-softmax scores for a fixed set of samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionHistory {
    pub predictions: Vec<Vec<usize>>,
    pub kappa: Vec<Vec<f64>>,
}

impl PredictionHistory {
    pub fn push(&mut self, predictions: Vec<usize>, kappa: Vec<f64>) {
        self.predictions.push(predictions);
        self.kappa.push(kappa);
    }

    pub fn epochs(&self) -> usize {
        self.predictions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epoch: usize,
    pub surrogate: SurrogateKind,
    pub available: bool,
    pub aurc: Option<f64>,
    pub e_aurc: Option<f64>,
}

/// Scores each surrogate, as computed from epochs `1..=t`, against the errors
/// of epoch `t`, for every recorded epoch. Only samples in `eval_ids` are
/// scored; all of them need labels.
pub fn surrogate_quality_sweep(
    history: &PredictionHistory,
    kinds: &[SurrogateKind],
    labels: &[usize],
    n_classes: usize,
    eval_ids: &[usize],
) -> Result<Vec<SweepRow>> {
    if history.kappa.len() != history.predictions.len() {
        return Err(Error::Shape("history kappa/prediction epochs differ".into()));
    }
    if eval_ids.iter().any(|&i| i >= labels.len()) {
        return Err(Error::Contract("evaluation id out of range".into()));
    }
    let mut log = ConsistencyLog::new(n_classes, labels.iter().map(|&y| Some(y)).collect())?;
    let mut rows = Vec::new();
    for (t, (preds, kappa)) in history.predictions.iter().zip(&history.kappa).enumerate() {
        log.record_epoch(preds)?;
        let is_error: Vec<bool> = eval_ids.iter().map(|&i| preds[i] != labels[i]).collect();
        for &kind in kinds {
            let scores: Option<Vec<f64>> = match kind {
                SurrogateKind::MaxSoftmax => Some(eval_ids.iter().map(|&i| kappa[i]).collect()),
                other => match log.surrogate(other) {
                    Ok(all) => Some(eval_ids.iter().map(|&i| all[i].unwrap_or(0.0)).collect()),
                    Err(Error::InsufficientHistory { .. }) => None,
                    Err(e) => return Err(e),
                },
            };
            let row = match scores {
                Some(s) if !eval_ids.is_empty() => {
                    let set = EvaluatedSet::from_scores(s, is_error.clone())?;
                    let (a, _) = aurc(&set)?;
                    SweepRow {
                        epoch: t + 1,
                        surrogate: kind,
                        available: true,
                        aurc: Some(a),
                        e_aurc: Some(a - optimal_aurc(&set)?),
                    }
                }
                _ => SweepRow {
                    epoch: t + 1,
                    surrogate: kind,
                    available: false,
                    aurc: None,
                    e_aurc: None,
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Long-format CSV: `epoch,surrogate,available,aurc,e_aurc`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "surrogate", "available", "aurc", "e_aurc"])?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.surrogate.name().to_string(),
            r.available.to_string(),
            cell(r.aurc),
            cell(r.e_aurc),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
