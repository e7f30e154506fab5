//! Staged active learning: train, score the unlabeled pool, reveal the
//! oracle labels of the chosen samples, repeat.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::numerics::MlpModel;
use crate::pipeline::{evaluate, predict_proba, train_from, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LeastConfidence,
    Entropy,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::LeastConfidence, Strategy::Entropy, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LeastConfidence => "least_confidence",
            Strategy::Entropy => "entropy",
            Strategy::Random => "random",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub stages: usize,
    pub query_size: usize,
    pub strategy: Strategy,
    pub train: TrainConfig,
    /// Seeds the random strategy; training uses `train.seed`.
    pub seed: u64,
    /// Continue from the previous stage's model instead of retraining.
    #[serde(default)]
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: usize,
    pub strategy: Strategy,
    pub n_labeled: usize,
    /// Ids queried after this stage's evaluation.
    pub queried: Vec<usize>,
    pub report: MetricsReport,
}

/// Ids of the `k` pool rows chosen by `strategy`. Score ties go to the
/// smaller sample id.
pub fn query(model: &MlpModel, pool: &SampleSet, strategy: Strategy, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > pool.len() {
        return Err(Error::Contract(format!(
            "query of {k} from a pool of {}",
            pool.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rows: Vec<usize> = (0..pool.len()).collect();
    match strategy {
        Strategy::Random => {
            rows.sort_by_key(|&r| pool.ids[r]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rows.shuffle(&mut rng);
        }
        Strategy::LeastConfidence | Strategy::Entropy => {
            let probs = predict_proba(model, pool)?;
            // lower score = queried first
            let score: Vec<f64> = probs
                .rows()
                .into_iter()
                .map(|p| match strategy {
                    Strategy::LeastConfidence => p.fold(0.0, |a: f64, &b| a.max(b)),
                    _ => p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum(),
                })
                .collect();
            rows.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(pool.ids[a].cmp(&pool.ids[b])));
        }
    }
    Ok(rows[..k].iter().map(|&r| pool.ids[r]).collect())
}

/// Runs `config.stages` train/evaluate/query rounds on `train`, revealing the
/// hidden labels of queried rows. Every stage queries, including the last.
pub fn run_active(config: &ActiveConfig, train: &SampleSet, test: &SampleSet) -> Result<Vec<StageResult>> {
    if config.stages == 0 {
        return Err(Error::Config("stages must be >= 1".into()));
    }
    let mut current = train.clone();
    if current.labeled_indices().is_empty() {
        return Err(Error::Contract("initial labeled pool is empty".into()));
    }
    let pool_size = current.unlabeled_indices().len();
    if config.stages * config.query_size > pool_size {
        return Err(Error::Contract(format!(
            "{} stages x {} queries exceed the unlabeled pool of {pool_size}",
            config.stages, config.query_size
        )));
    }
    let mut row_of = std::collections::HashMap::with_capacity(current.len());
    for (row, &id) in current.ids.iter().enumerate() {
        if row_of.insert(id, row).is_some() {
            return Err(Error::Contract(format!("duplicate sample id {id}")));
        }
    }
    let mut results = Vec::with_capacity(config.stages);
    let mut model: Option<MlpModel> = None;
    for stage in 0..config.stages {
        let init = if config.warm_start { model.take() } else { None };
        let run = train_from(&config.train, &current, None, init)?;
        let report = evaluate(&run.model, test, config.train.ece_bins)?;
        let pool_rows = current.unlabeled_indices();
        let pool = current.select(&pool_rows);
        let queried = query(
            &run.model,
            &pool,
            config.strategy,
            config.query_size,
            config.seed ^ (stage as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        )?;
        let n_labeled = current.labeled_indices().len();
        for id in &queried {
            let row = row_of[id];
            if current.labels[row].is_none() {
                return Err(Error::MissingLabel(row));
            }
            current.labeled_mask[row] = true;
        }
        results.push(StageResult {
            stage: stage + 1,
            strategy: config.strategy,
            n_labeled,
            queried,
            report,
        });
        model = Some(run.model);
    }
    Ok(results)
}

/// `stage,strategy,n_labeled,accuracy,aurc,e_aurc`.
pub fn write_stage_csv<W: Write>(rows: &[StageResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "strategy", "n_labeled", "accuracy", "aurc", "e_aurc"])?;
    for r in rows {
        w.write_record([
            r.stage.to_string(),
            r.strategy.name().to_string(),
            r.n_labeled.to_string(),
            r.report.accuracy.to_string(),
            r.report.aurc.to_string(),
            r.report.e_aurc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_stage_csv(rows: &[StageResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_stage_csv(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, split_semi, SplitTag};
    use crate::numerics::Activation;
    use crate::pipeline::train_semisupervised;
    use ndarray::Array2;

    /// One input feature fed straight through: logits (x, 0) for two classes,
    /// so the max softmax grows with |x|.
    fn passthrough() -> MlpModel {
        let w = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        MlpModel::from_parameters(vec![w], vec![ndarray::Array1::zeros(2)], Activation::Relu).unwrap()
    }

    fn pool(xs: &[f64]) -> SampleSet {
        let m = xs.len();
        SampleSet::new(
            (0..m).map(|i| 100 + i).collect(),
            Array2::from_shape_vec((m, 1), xs.to_vec()).unwrap(),
            vec![Some(0); m],
            vec![false; m],
            2,
            SplitTag::Train,
        )
        .unwrap()
    }

    fn small() -> (SampleSet, SampleSet) {
        let set = make_blobs(3, 60, 2, 3.0, 1).unwrap();
        split_semi(&set, 0.1, 0.25, 1).unwrap()
    }

    fn config(strategy: Strategy, stages: usize, query_size: usize) -> ActiveConfig {
        ActiveConfig {
            stages,
            query_size,
            strategy,
            train: TrainConfig {
                hidden: vec![8],
                epochs: 5,
                labeled_batch: 4,
                unlabeled_batch: 16,
                ..Default::default()
            },
            seed: 3,
            warm_start: false,
        }
    }

    #[test]
    fn least_confidence_takes_smallest_kappa() {
        let p = pool(&[0.0, 0.5, 1.0, 2.0, 4.0]);
        let ids = query(&passthrough(), &p, Strategy::LeastConfidence, 3, 0).unwrap();
        assert_eq!(ids, [100, 101, 102]);
        let ids = query(&passthrough(), &p, Strategy::Entropy, 2, 0).unwrap();
        assert_eq!(ids, [100, 101]);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let p = pool(&[1.0, 3.0, 1.0, 2.0]);
        let m = passthrough();
        let ids = query(&m, &p, Strategy::LeastConfidence, 2, 0).unwrap();
        assert_eq!(ids, [100, 102]);
    }

    #[test]
    fn full_pool_and_random_reproducible() {
        let p = pool(&[0.3, 0.1, 0.2]);
        let mut all = query(&passthrough(), &p, Strategy::LeastConfidence, 3, 0).unwrap();
        all.sort_unstable();
        assert_eq!(all, [100, 101, 102]);
        let big = pool(&(0..50).map(f64::from).collect::<Vec<_>>());
        let a = query(&passthrough(), &big, Strategy::Random, 10, 7).unwrap();
        assert_eq!(a, query(&passthrough(), &big, Strategy::Random, 10, 7).unwrap());
        assert_ne!(a, query(&passthrough(), &big, Strategy::Random, 10, 8).unwrap());
        assert!(query(&passthrough(), &p, Strategy::Random, 4, 0).is_err());
    }

    #[test]
    fn single_stage_without_queries_is_one_training_run() {
        let (train, test) = small();
        let cfg = config(Strategy::LeastConfidence, 1, 0);
        let stages = run_active(&cfg, &train, &test).unwrap();
        let run = train_semisupervised(&cfg.train, &train, Some(&test)).unwrap();
        assert_eq!(stages.len(), 1);
        assert!(stages[0].queried.is_empty());
        assert_eq!(Some(&stages[0].report), run.test_report.as_ref());
    }

    #[test]
    fn queries_are_disjoint_and_pool_grows() {
        let (train, test) = small();
        for strategy in Strategy::ALL {
            let stages = run_active(&config(strategy, 3, 10), &train, &test).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (s, r) in stages.iter().enumerate() {
                assert_eq!(r.n_labeled, train.labeled_indices().len() + 10 * s);
                assert_eq!(r.queried.len(), 10);
                for id in &r.queried {
                    assert!(seen.insert(*id));
                    let row = train.ids.iter().position(|x| x == id).unwrap();
                    assert!(!train.labeled_mask[row]);
                }
            }
        }
    }

    #[test]
    fn exhaustion_is_a_contract_error() {
        let (train, test) = small();
        let pool = train.unlabeled_indices().len();
        let cfg = config(Strategy::Random, 2, pool / 2 + 1);
        assert!(matches!(run_active(&cfg, &train, &test), Err(Error::Contract(_))));
    }

    #[test]
    fn deterministic_and_warm_start_differs() {
        let (train, test) = small();
        let cfg = config(Strategy::Entropy, 2, 5);
        assert_eq!(run_active(&cfg, &train, &test).unwrap(), run_active(&cfg, &train, &test).unwrap());
        let warm = ActiveConfig { warm_start: true, ..cfg.clone() };
        let a = run_active(&cfg, &train, &test).unwrap();
        let b = run_active(&warm, &train, &test).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1].report, b[1].report);
    }
}
