//! Semi-supervised training with consistency tracking, evaluation, and the
//! κ-versus-consistency gap experiment.
//!
//! Each epoch walks the unlabeled rows in shuffled batches of `d`, pairing each
//! with the next batch of `b` labeled rows from a cycling iterator that
//! reshuffles whenever it runs dry. After the last step the whole training set
//! is predicted once in evaluation mode and folded into the consistency log.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::save_model;
use crate::consistency::{minmax_normalize, ConsistencyLog};
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights, RankTargets};
use crate::metrics::{aurc, optimal_aurc, EvaluatedSet, MetricsReport, PredictionHistory, DEFAULT_ECE_BINS};
use crate::numerics::{argmax, sgd_step, softmax, Activation, MlpModel, OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub record_consistency: bool,
    /// Ranking terms stay off for this many leading epochs.
    pub warmup_epochs: usize,
    /// Keep every epoch's predictions and max-softmax scores on the training set.
    pub keep_history: bool,
    pub ece_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            epochs: 200,
            labeled_batch: 32,
            unlabeled_batch: 64,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            record_consistency: true,
            warmup_epochs: 0,
            keep_history: false,
            ece_bins: DEFAULT_ECE_BINS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.ece_bins == 0 {
            return Err(Error::Config("ece_bins must be >= 1".into()));
        }
        let ranking = self.weights.lambda1 > 0.0 || self.weights.lambda2 > 0.0;
        if ranking && !self.record_consistency {
            return Err(Error::Config("ranking losses need record_consistency".into()));
        }
        if ranking && self.labeled_batch < 2 {
            return Err(Error::Config("ranking losses need labeled_batch >= 2".into()));
        }
        if self.weights.lambda2 > 0.0 {
            if self.unlabeled_batch < 2 {
                return Err(Error::Config("consistency loss needs unlabeled_batch >= 2".into()));
            }
            if self.epochs < 2 {
                return Err(Error::Config("consistency loss needs epochs >= 2".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn layer_sizes(&self, dim: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![dim];
        sizes.extend(&self.hidden);
        sizes.push(n_classes);
        sizes
    }

    fn uses_unlabeled(&self) -> bool {
        self.weights.lambda2 > 0.0
    }
}

/// One optimizer step's rows: labeled (training-set row indices) and unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Seeded batch stream shared by the training loop and anything that wants
/// to replay its exact sample order.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    rng: ChaCha8Rng,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    b: usize,
    d: usize,
    cycle: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    pub fn new(train: &SampleSet, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        BatchSchedule {
            rng,
            labeled: train.labeled_indices(),
            unlabeled: train.unlabeled_indices(),
            b: config.labeled_batch,
            d: config.unlabeled_batch,
            cycle: Vec::new(),
            cursor: 0,
        }
    }

    fn next_labeled(&mut self) -> Vec<usize> {
        if self.cursor >= self.cycle.len() {
            self.cycle = self.labeled.clone();
            self.cycle.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.b).min(self.cycle.len());
        let batch = self.cycle[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// Steps of the next epoch. Without unlabeled rows an epoch is one pass
    /// over the labeled rows.
    pub fn next_epoch(&mut self) -> Vec<Step> {
        if self.unlabeled.is_empty() {
            let n = self.labeled.len().div_ceil(self.b);
            return (0..n)
                .map(|_| Step {
                    labeled: self.next_labeled(),
                    unlabeled: Vec::new(),
                })
                .collect();
        }
        let mut order = self.unlabeled.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.d)
            .map(|chunk| Step {
                labeled: self.next_labeled(),
                unlabeled: chunk.to_vec(),
            })
            .collect()
    }
}

/// Mean loss components over one epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub cross_entropy: f64,
    pub correctness: f64,
    pub consistency: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub model: MlpModel,
    pub loss_history: Vec<EpochLoss>,
    /// Tracked over all training rows; correctness uses visible labels only.
    pub log: Option<ConsistencyLog>,
    pub history: Option<PredictionHistory>,
    /// Unlabeled training rows scored against their hidden labels, when known.
    pub train_unlabeled_report: Option<MetricsReport>,
    pub test_report: Option<MetricsReport>,
}

/// Runs the full training loop from a freshly initialized model.
pub fn train_semisupervised(config: &TrainConfig, train: &SampleSet, test: Option<&SampleSet>) -> Result<RunRecord> {
    train_from(config, train, test, None)
}

/// Like [`train_semisupervised`], optionally continuing from `init` instead
/// of a seeded initialization.
pub fn train_from(
    config: &TrainConfig,
    train: &SampleSet,
    test: Option<&SampleSet>,
    init: Option<MlpModel>,
) -> Result<RunRecord> {
    config.validate()?;
    train.validate()?;
    let labeled = train.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::Contract("training set has no labeled rows".into()));
    }
    if config.uses_unlabeled() && labeled.len() == train.len() {
        return Err(Error::Contract("consistency loss needs unlabeled training rows".into()));
    }
    let sizes = config.layer_sizes(train.dim(), train.n_classes);
    let mut model = match init {
        Some(m) if m.layer_sizes() == sizes.as_slice() => m,
        Some(m) => {
            return Err(Error::Contract(format!(
                "initial model has layers {:?}, config needs {sizes:?}",
                m.layer_sizes()
            )))
        }
        None => MlpModel::new(&sizes, config.activation, config.seed)?,
    };
    let mut opt = OptimizerState::new(&model, config.optimizer.clone())?;
    let mut schedule = BatchSchedule::new(train, config);
    let visible = train.visible_labels();
    let mut log = if config.record_consistency {
        Some(ConsistencyLog::new(train.n_classes, visible.clone())?)
    } else {
        None
    };
    let mut history = config.keep_history.then(PredictionHistory::default);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let w = &config.weights;

    for epoch in 0..config.epochs {
        let ranking_on = epoch >= config.warmup_epochs;
        let t_prime = log.as_ref().map_or(0, |l| l.epochs_recorded());
        let cons_all = match &log {
            Some(l) if ranking_on && w.lambda2 > 0.0 && t_prime >= 2 => Some(l.consistency()?.values),
            _ => None,
        };
        let corr_all = match &log {
            Some(l) if ranking_on && w.lambda1 > 0.0 && t_prime >= 1 => Some(l.correctness(&labeled)?.values),
            _ => None,
        };
        // correctness values are indexed by position in `labeled`
        let corr_pos: Vec<usize> = {
            let mut pos = vec![usize::MAX; train.len()];
            for (p, &i) in labeled.iter().enumerate() {
                pos[i] = p;
            }
            pos
        };

        let steps = schedule.next_epoch();
        let mut sums = [0.0; 4];
        for step in &steps {
            let mut rows = step.labeled.clone();
            if config.uses_unlabeled() {
                rows.extend(&step.unlabeled);
            }
            let x = train.features.select(Axis(0), &rows);
            let y = train.oracle_labels(&step.labeled)?;
            let targets = RankTargets {
                consistency: cons_all.as_ref().map(|c| {
                    let b = step.labeled.len();
                    let mut t = minmax_normalize(&rows[..b].iter().map(|&i| c[i]).collect::<Vec<_>>());
                    t.extend(minmax_normalize(&rows[b..].iter().map(|&i| c[i]).collect::<Vec<_>>()));
                    t
                }),
                correctness: corr_all.as_ref().map(|c| {
                    minmax_normalize(&step.labeled.iter().map(|&i| c[corr_pos[i]]).collect::<Vec<_>>())
                }),
            };
            let (logits, cache) = model.forward(x.view())?;
            let out = total_loss(logits.view(), &y, &targets, w)?;
            let grads = model.backward(&cache, out.grad_logits.view())?;
            sgd_step(&mut model, &mut opt, &grads, epoch)?;
            sums[0] += out.total;
            sums[1] += out.cross_entropy;
            sums[2] += out.correctness;
            sums[3] += out.consistency;
        }
        let n = steps.len() as f64;
        loss_history.push(EpochLoss {
            epoch: epoch + 1,
            total: sums[0] / n,
            cross_entropy: sums[1] / n,
            correctness: sums[2] / n,
            consistency: sums[3] / n,
        });

        if log.is_some() || history.is_some() {
            let probs = predict_proba(&model, train)?;
            let preds: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
            if let Some(l) = log.as_mut() {
                l.record_epoch(&preds)?;
            }
            if let Some(h) = history.as_mut() {
                let kappa = probs.rows().into_iter().map(|r| r.fold(0.0, |a: f64, &b| a.max(b))).collect();
                h.push(preds, kappa);
            }
        }
    }

    let unlabeled_known: Vec<usize> = train
        .unlabeled_indices()
        .into_iter()
        .filter(|&i| train.labels[i].is_some())
        .collect();
    let train_unlabeled_report = if unlabeled_known.is_empty() {
        None
    } else {
        Some(evaluate(&model, &train.select(&unlabeled_known), config.ece_bins)?)
    };
    let test_report = match test {
        Some(t) if !t.is_empty() => Some(evaluate(&model, t, config.ece_bins)?),
        _ => None,
    };
    Ok(RunRecord {
        config: config.clone(),
        model,
        loss_history,
        log,
        history,
        train_unlabeled_report,
        test_report,
    })
}

/// Softmax outputs for every row of `set`.
pub fn predict_proba(model: &MlpModel, set: &SampleSet) -> Result<ndarray::Array2<f64>> {
    Ok(softmax(model.predict_logits(set.features.view())?.view()))
}

/// Evaluated predictions on every row of `set`; all rows need labels.
pub fn evaluated_set(model: &MlpModel, set: &SampleSet) -> Result<EvaluatedSet> {
    let labels = set.oracle_labels(&(0..set.len()).collect::<Vec<_>>())?;
    EvaluatedSet::from_probs(predict_proba(model, set)?, labels)
}

pub fn evaluate(model: &MlpModel, set: &SampleSet, n_bins: usize) -> Result<MetricsReport> {
    MetricsReport::compute(&evaluated_set(model, set)?, n_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapArm {
    pub arm: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub aurc_kappa: f64,
    pub aurc_consistency: f64,
    pub diff_aurc: f64,
    pub e_aurc_kappa: f64,
    pub e_aurc_consistency: f64,
    pub diff_e_aurc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub baseline: GapArm,
    pub with_loss: GapArm,
}

/// Scores the final model's κ and the final training consistency against the
/// final model's errors on the unlabeled training rows.
pub fn gap_arm(record: &RunRecord, train: &SampleSet, arm: &str) -> Result<GapArm> {
    let log = record
        .log
        .as_ref()
        .ok_or_else(|| Error::Contract("gap needs a consistency log".into()))?;
    let c = log.consistency()?.values;
    let rows = train.unlabeled_indices();
    if rows.is_empty() {
        return Err(Error::Contract("gap needs unlabeled training rows".into()));
    }
    let sub = train.select(&rows);
    let by_kappa = evaluated_set(&record.model, &sub)?;
    let by_c = EvaluatedSet::from_scores(rows.iter().map(|&i| c[i]).collect(), by_kappa.is_error.clone())?;
    let score = |set: &EvaluatedSet| -> Result<(f64, f64)> {
        let a = aurc(set)?.0;
        Ok((a, a - optimal_aurc(set)?))
    };
    let (ak, ek) = score(&by_kappa)?;
    let (ac, ec) = score(&by_c)?;
    Ok(GapArm {
        arm: arm.to_string(),
        lambda1: record.config.weights.lambda1,
        lambda2: record.config.weights.lambda2,
        aurc_kappa: ak,
        aurc_consistency: ac,
        diff_aurc: (ak - ac).abs(),
        e_aurc_kappa: ek,
        e_aurc_consistency: ec,
        diff_e_aurc: (ek - ec).abs(),
    })
}

/// Trains a cross-entropy-only arm and an arm with `config`'s loss weights
/// (in parallel) and reports the κ/consistency gap of each.
pub fn gap_experiment(config: &TrainConfig, train: &SampleSet) -> Result<(GapTable, RunRecord, RunRecord)> {
    let mut base_cfg = config.clone();
    base_cfg.weights = LossWeights {
        reduction: config.weights.reduction,
        ..LossWeights::cross_entropy_only()
    };
    let (base, with) = rayon::join(
        || train_semisupervised(&base_cfg, train, None),
        || train_semisupervised(config, train, None),
    );
    let (base, with) = (base?, with?);
    let table = GapTable {
        baseline: gap_arm(&base, train, "ce_only")?,
        with_loss: gap_arm(&with, train, "with_loss")?,
    };
    Ok((table, base, with))
}

/// Writes `config.json`, `model.json`, `metrics.json`, `loss_history.csv` and
/// (when tracked) `consistency.csv` under `root/run-<first 16 hex of config hash>`.
pub fn save_run(record: &RunRecord, root: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = root.as_ref().join(format!("run-{}", &record.config.hash()[..16]));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.json", serde_json::to_string_pretty(&record.config)? + "\n")?;
    save_model(&record.model, dir.join("model.json"))?;
    let metrics = serde_json::json!({
        "train_unlabeled": record.train_unlabeled_report,
        "test": record.test_report,
    });
    write("metrics.json", serde_json::to_string_pretty(&metrics)? + "\n")?;
    let mut buf = Vec::new();
    write_loss_csv(&record.loss_history, &mut buf)?;
    write("loss_history.csv", String::from_utf8(buf).expect("ascii"))?;
    if let Some(log) = &record.log {
        log.save_csv(dir.join("consistency.csv"))?;
    }
    Ok(dir)
}

pub fn write_loss_csv<W: Write>(rows: &[EpochLoss], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "total", "cross_entropy", "correctness", "consistency"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.total.to_string(),
            r.cross_entropy.to_string(),
            r.correctness.to_string(),
            r.consistency.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
