//! Sample sets, synthetic generators, stratified semi-supervised splits and
//! the CSV format.
//!
//! CSV layout: header `id,label,f0,f1,...`, one row per sample. An empty
//! `label` cell marks an unlabeled row. Features are written in shortest
//! round-trip form, so save/load is exact.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Test,
}

/// Feature matrix with (possibly hidden) labels.
///
/// `labels[i]` holds the ground truth when it is known at all; `labeled_mask[i]`
/// says whether training may see it. Evaluation code reads `labels` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub ids: Vec<usize>,
    pub features: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    pub labeled_mask: Vec<bool>,
    pub n_classes: usize,
    pub split: SplitTag,
}

impl SampleSet {
    pub fn new(
        ids: Vec<usize>,
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        labeled_mask: Vec<bool>,
        n_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let set = SampleSet {
            ids,
            features,
            labels,
            labeled_mask,
            n_classes,
            split,
        };
        set.validate()?;
        Ok(set)
    }

    /// Every row labeled and visible.
    pub fn fully_labeled(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let m = labels.len();
        Self::new(
            (0..m).collect(),
            features,
            labels.into_iter().map(Some).collect(),
            vec![true; m],
            n_classes,
            SplitTag::Train,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.features.nrows();
        if m == 0 {
            return Err(Error::Contract("sample set is empty".into()));
        }
        if self.labels.len() != m || self.labeled_mask.len() != m || self.ids.len() != m {
            return Err(Error::Shape(format!(
                "{m} feature rows, {} labels, {} mask entries, {} ids",
                self.labels.len(),
                self.labeled_mask.len(),
                self.ids.len()
            )));
        }
        for i in 0..m {
            if self.labeled_mask[i] && self.labels[i].is_none() {
                return Err(Error::Contract(format!("row {i} is marked labeled but has no label")));
            }
            if let Some(y) = self.labels[i] {
                if y >= self.n_classes {
                    return Err(Error::Contract(format!(
                        "row {i} label {y} outside [0, {})",
                        self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    /// Ground-truth labels of the given rows; fails on rows without one.
    pub fn oracle_labels(&self, rows: &[usize]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|&i| self.labels[i].ok_or(Error::MissingLabel(i)))
            .collect()
    }

    /// Labels visible to training (`None` where hidden).
    pub fn visible_labels(&self) -> Vec<Option<usize>> {
        self.labels
            .iter()
            .zip(&self.labeled_mask)
            .map(|(&y, &vis)| if vis { y } else { None })
            .collect()
    }

    /// Rows `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> SampleSet {
        SampleSet {
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            features: self.features.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            labeled_mask: rows.iter().map(|&i| self.labeled_mask[i]).collect(),
            n_classes: self.n_classes,
            split: self.split,
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = Vec::with_capacity(self.dim() + 2);
            rec.push(self.ids[i].to_string());
            rec.push(match (self.labeled_mask[i], self.labels[i]) {
                (true, Some(y)) => y.to_string(),
                _ => String::new(),
            });
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reads the CSV layout described in the module docs. The class count is
/// `n_classes` when given, else one more than the largest label.
pub fn load_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<SampleSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(1, "header must be `id,label,f0,...`".into()));
    }
    let dim = header.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad id `{}`", &rec[0])))?;
        let label = match rec[1].trim() {
            "" => None,
            s => {
                let y: usize = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("label `{s}` is not a class index")))?;
                if let Some(k) = n_classes {
                    if y >= k {
                        return Err(parse_err(line, format!("label {y} outside [0, {k})")));
                    }
                }
                Some(y)
            }
        };
        for (j, cell) in rec.iter().skip(2).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("feature f{j} `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feature f{j} is not finite")));
            }
            flat.push(v);
        }
        ids.push(id);
        labels.push(label);
    }
    if ids.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let k = n_classes.unwrap_or_else(|| labels.iter().flatten().max().map_or(1, |&y| y + 1));
    let m = ids.len();
    let features = Array2::from_shape_vec((m, dim), flat).expect("row widths checked");
    let mask = labels.iter().map(Option::is_some).collect();
    SampleSet::new(ids, features, labels, mask, k, SplitTag::Train)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Cluster centers with minimum pairwise distance `separation`, centered at
/// the origin: evenly spaced on a line for `dim == 1`, otherwise the vertices
/// of a regular polygon in the first two coordinates.
pub fn blob_centers(k: usize, dim: usize, separation: f64) -> Array2<f64> {
    let mut centers = Array2::zeros((k, dim));
    if k < 2 {
        return centers;
    }
    if dim == 1 {
        let mid = (k - 1) as f64 / 2.0;
        for j in 0..k {
            centers[[j, 0]] = (j as f64 - mid) * separation;
        }
    } else {
        let radius = separation / (2.0 * (PI / k as f64).sin());
        for j in 0..k {
            let angle = 2.0 * PI * j as f64 / k as f64;
            centers[[j, 0]] = radius * angle.cos();
            centers[[j, 1]] = radius * angle.sin();
        }
    }
    centers
}

/// Isotropic unit-variance Gaussian clusters, class by class.
pub fn make_blobs(k_classes: usize, n_per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<SampleSet> {
    if k_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::Config("blobs need classes, samples and dimensions > 0".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::Config("separation must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(k_classes, dim, separation);
    let m = k_classes * n_per_class;
    let mut features = normal_matrix(&mut rng, m, dim);
    let mut labels = Vec::with_capacity(m);
    for c in 0..k_classes {
        for r in 0..n_per_class {
            let row = c * n_per_class + r;
            let mut x = features.row_mut(row);
            x += &centers.row(c);
            labels.push(c);
        }
    }
    SampleSet::fully_labeled(features, labels, k_classes)
}

/// Two interleaving half circles; `n / 2` samples on the upper arc (class 0),
/// the rest on the lower arc (class 1), plus isotropic Gaussian noise.
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::Config("moons need at least two samples".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config("noise must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let arc = |count: usize, j: usize| {
        if count > 1 {
            PI * j as f64 / (count - 1) as f64
        } else {
            0.0
        }
    };
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for j in 0..n_outer {
        let t = arc(n_outer, j);
        features[[j, 0]] = t.cos();
        features[[j, 1]] = t.sin();
        labels.push(0);
    }
    for j in 0..n_inner {
        let t = arc(n_inner, j);
        features[[n_outer + j, 0]] = 1.0 - t.cos();
        features[[n_outer + j, 1]] = 0.5 - t.sin();
        labels.push(1);
    }
    if noise > 0.0 {
        features = features + normal_matrix(&mut rng, n, 2) * noise;
    }
    SampleSet::fully_labeled(features, labels, 2)
}

/// Unlabeled out-of-distribution samples from a unit Gaussian centred at
/// `shift` along the all-ones diagonal. The blob generator is centred at the
/// origin, so `shift = 0` reproduces its marginal mean.
pub fn make_ood(dim: usize, n: usize, shift: f64, seed: u64) -> Result<SampleSet> {
    make_ood_around(&vec![0.0; dim], n, shift, seed)
}

/// Like [`make_ood`] but displaced from an arbitrary data mean.
pub fn make_ood_around(center: &[f64], n: usize, shift: f64, seed: u64) -> Result<SampleSet> {
    let dim = center.len();
    if dim == 0 || n == 0 {
        return Err(Error::Config("OOD set needs dim > 0 and n > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = shift / (dim as f64).sqrt();
    let mut features = normal_matrix(&mut rng, n, dim);
    for mut row in features.rows_mut() {
        for (v, &c) in row.iter_mut().zip(center) {
            *v += c + step;
        }
    }
    SampleSet::new(
        (0..n).collect(),
        features,
        vec![None; n],
        vec![false; n],
        1,
        SplitTag::Test,
    )
}

/// Stratified split into a train set (with `labeled_fraction` of each class
/// visible) and a fully labeled test set. Requires every row to have a label.
pub fn split_semi(
    set: &SampleSet,
    labeled_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(SampleSet, SampleSet)> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::Contract(format!(
            "labeled fraction {labeled_fraction} outside (0, 1]"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Contract(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let labels = set.oracle_labels(&(0..set.len()).collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut visible = vec![false; set.len()];
    for class in 0..set.n_classes {
        let mut rows: Vec<usize> = (0..set.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let n_test = (test_fraction * rows.len() as f64).round() as usize;
        let (test, train) = rows.split_at(n_test.min(rows.len()));
        let mut n_lab = (labeled_fraction * train.len() as f64).round() as usize;
        if n_lab == 0 && !train.is_empty() {
            n_lab = 1;
        }
        for &i in &train[..n_lab] {
            visible[i] = true;
        }
        train_rows.extend_from_slice(train);
        test_rows.extend_from_slice(test);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    if train_rows.is_empty() {
        return Err(Error::Contract("split leaves no training rows".into()));
    }
    let mut train = set.select(&train_rows);
    train.labeled_mask = train_rows.iter().map(|&i| visible[i]).collect();
    train.split = SplitTag::Train;
    let mut test = set.select(&test_rows);
    test.labeled_mask = vec![true; test_rows.len()];
    test.split = SplitTag::Test;
    Ok((train, test))
}

/// Sidecar written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub rows: usize,
    pub n_classes: usize,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}
