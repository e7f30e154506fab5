//! Streaming per-sample record of epoch-wise predictions.
//!
//! The log keeps three counters per sample and never stores the prediction
//! sequences themselves:
//!
//! * consistency events: epochs `t >= 2` whose prediction equals epoch `t-1`'s,
//! * correct events: epochs whose prediction equals the (known) label,
//! * label frequencies: how often each class was predicted.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Consistency,
    Correctness,
    LCount,
    LMargin,
    LEntropy,
    MaxSoftmax,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 6] = [
        SurrogateKind::MaxSoftmax,
        SurrogateKind::Consistency,
        SurrogateKind::Correctness,
        SurrogateKind::LCount,
        SurrogateKind::LMargin,
        SurrogateKind::LEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Consistency => "consistency",
            SurrogateKind::Correctness => "correctness",
            SurrogateKind::LCount => "l_count",
            SurrogateKind::LMargin => "l_margin",
            SurrogateKind::LEntropy => "l_entropy",
            SurrogateKind::MaxSoftmax => "max_softmax",
        }
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SurrogateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown surrogate `{s}`")))
    }
}

/// Per-sample confidence surrogate values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateScores {
    pub kind: SurrogateKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyLog {
    n_classes: usize,
    labels: Vec<Option<usize>>,
    epochs_recorded: usize,
    last_prediction: Vec<Option<usize>>,
    consistency_events: Vec<u32>,
    correct_events: Vec<u32>,
    label_freq: Vec<Vec<u32>>,
}

impl ConsistencyLog {
    /// `labels[i]` is `Some` for samples whose correctness is tracked.
    pub fn new(n_classes: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Contract("need at least one class".into()));
        }
        if let Some((i, y)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, y)| y.filter(|&y| y >= n_classes).map(|y| (i, y)))
        {
            return Err(Error::Contract(format!(
                "sample {i} has label {y} outside [0, {n_classes})"
            )));
        }
        let n = labels.len();
        Ok(ConsistencyLog {
            n_classes,
            labels,
            epochs_recorded: 0,
            last_prediction: vec![None; n],
            consistency_events: vec![0; n],
            correct_events: vec![0; n],
            label_freq: vec![vec![0; n_classes]; n],
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn epochs_recorded(&self) -> usize {
        self.epochs_recorded
    }

    pub fn last_prediction(&self, i: usize) -> Option<usize> {
        self.last_prediction[i]
    }

    pub fn consistency_events(&self) -> &[u32] {
        &self.consistency_events
    }

    pub fn correct_events(&self) -> &[u32] {
        &self.correct_events
    }

    pub fn label_freq(&self, i: usize) -> &[u32] {
        &self.label_freq[i]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    /// Folds one epoch of predictions (one class index per tracked sample) into the counters.
    pub fn record_epoch(&mut self, predictions: &[usize]) -> Result<()> {
        if predictions.len() != self.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} tracked samples",
                predictions.len(),
                self.len()
            )));
        }
        if let Some(i) = predictions.iter().position(|&p| p >= self.n_classes) {
            return Err(Error::Contract(format!(
                "prediction {} for sample {i} outside [0, {})",
                predictions[i], self.n_classes
            )));
        }
        for (i, &pred) in predictions.iter().enumerate() {
            if self.last_prediction[i] == Some(pred) {
                self.consistency_events[i] += 1;
            }
            if self.labels[i] == Some(pred) {
                self.correct_events[i] += 1;
            }
            self.label_freq[i][pred] += 1;
            self.last_prediction[i] = Some(pred);
        }
        self.epochs_recorded += 1;
        Ok(())
    }

    /// `c_i = events_i / (T' - 1)`.
    pub fn consistency(&self) -> Result<SurrogateScores> {
        self.require(2)?;
        let denom = (self.epochs_recorded - 1) as f64;
        Ok(SurrogateScores {
            kind: SurrogateKind::Consistency,
            values: self
                .consistency_events
                .iter()
                .map(|&e| e as f64 / denom)
                .collect(),
        })
    }

    /// Fraction of recorded epochs in which each requested sample was predicted correctly.
    pub fn correctness(&self, ids: &[usize]) -> Result<SurrogateScores> {
        self.require(1)?;
        let t = self.epochs_recorded as f64;
        let values = ids
            .iter()
            .map(|&i| match self.labels.get(i) {
                Some(Some(_)) => Ok(self.correct_events[i] as f64 / t),
                Some(None) => Err(Error::MissingLabel(i)),
                None => Err(Error::Contract(format!("sample {i} is not tracked"))),
            })
            .collect::<Result<_>>()?;
        Ok(SurrogateScores {
            kind: SurrogateKind::Correctness,
            values,
        })
    }

    /// Maximum label frequency, top-two margin and entropy-based surrogates.
    pub fn label_frequency_surrogates(
        &self,
    ) -> Result<(SurrogateScores, SurrogateScores, SurrogateScores)> {
        self.require(1)?;
        let t = self.epochs_recorded as f64;
        let log_k = (self.n_classes as f64).ln();
        let mut count = Vec::with_capacity(self.len());
        let mut margin = Vec::with_capacity(self.len());
        let mut entropy = Vec::with_capacity(self.len());
        for freq in &self.label_freq {
            let (mut first, mut second) = (0u32, 0u32);
            for &r in freq {
                if r > first {
                    second = first;
                    first = r;
                } else if r > second {
                    second = r;
                }
            }
            count.push(first as f64 / t);
            margin.push((first - second) as f64 / t);
            let h: f64 = freq
                .iter()
                .filter(|&&r| r > 0)
                .map(|&r| {
                    let p = r as f64 / t;
                    -p * p.ln()
                })
                .sum();
            let score = if log_k > 0.0 { 1.0 - h / log_k } else { 1.0 };
            entropy.push(score.clamp(0.0, 1.0));
        }
        Ok((
            SurrogateScores {
                kind: SurrogateKind::LCount,
                values: count,
            },
            SurrogateScores {
                kind: SurrogateKind::LMargin,
                values: margin,
            },
            SurrogateScores {
                kind: SurrogateKind::LEntropy,
                values: entropy,
            },
        ))
    }

    /// Surrogate values for every tracked sample. Correctness is reported
    /// for labeled samples only (`None` elsewhere).
    pub fn surrogate(&self, kind: SurrogateKind) -> Result<Vec<Option<f64>>> {
        Ok(match kind {
            SurrogateKind::Consistency => {
                self.consistency()?.values.into_iter().map(Some).collect()
            }
            SurrogateKind::Correctness => {
                self.require(1)?;
                let t = self.epochs_recorded as f64;
                (0..self.len())
                    .map(|i| self.labels[i].map(|_| self.correct_events[i] as f64 / t))
                    .collect()
            }
            SurrogateKind::LCount | SurrogateKind::LMargin | SurrogateKind::LEntropy => {
                let (c, m, e) = self.label_frequency_surrogates()?;
                let s = match kind {
                    SurrogateKind::LCount => c,
                    SurrogateKind::LMargin => m,
                    _ => e,
                };
                s.values.into_iter().map(Some).collect()
            }
            SurrogateKind::MaxSoftmax => {
                return Err(Error::Contract(
                    "max-softmax is a model output, not a log surrogate".into(),
                ))
            }
        })
    }

    fn require(&self, need: usize) -> Result<()> {
        if self.epochs_recorded < need {
            return Err(Error::InsufficientHistory {
                have: self.epochs_recorded,
                need,
            });
        }
        Ok(())
    }

    /// CSV with columns `sample_id,consistency,correctness,l_count,l_margin,l_entropy`.
    /// Cells that are not available (unlabeled correctness, consistency before
    /// two epochs) are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sample_id",
            "consistency",
            "correctness",
            "l_count",
            "l_margin",
            "l_entropy",
        ])?;
        let cons = self.consistency().ok();
        let corr = self.surrogate(SurrogateKind::Correctness).ok();
        let freq = self.label_frequency_surrogates().ok();
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                cell(cons.as_ref().map(|c| c.values[i])),
                cell(corr.as_ref().and_then(|c| c[i])),
                cell(freq.as_ref().map(|f| f.0.values[i])),
                cell(freq.as_ref().map(|f| f.1.values[i])),
                cell(freq.as_ref().map(|f| f.2.values[i])),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Min-max scaling of one group. A constant group maps to all ones.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    values
        .iter()
        .map(|&v| if range > 0.0 { (v - min) / range } else { 1.0 })
        .collect()
}

/// Min-max normalizes the labeled and unlabeled entries of `values` independently,
/// keeping sample order.
pub fn minmax_normalize_groups(values: &[f64], labeled_mask: &[bool]) -> Result<Vec<f64>> {
    if values.len() != labeled_mask.len() {
        return Err(Error::Contract(format!(
            "{} values but {} mask entries",
            values.len(),
            labeled_mask.len()
        )));
    }
    let mut out = vec![0.0; values.len()];
    for group in [true, false] {
        let idx: Vec<usize> = (0..values.len())
            .filter(|&i| labeled_mask[i] == group)
            .collect();
        if idx.is_empty() {
            return Err(Error::Contract(format!(
                "{} group is empty",
                if group { "labeled" } else { "unlabeled" }
            )));
        }
        let sub: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        for (&i, v) in idx.iter().zip(minmax_normalize(&sub)) {
            out[i] = v;
        }
    }
    Ok(out)
}
