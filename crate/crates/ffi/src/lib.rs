//! C interface to `tcconf`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns a [`TcStatus`]; on failure a message is kept per thread and
//! can be read with [`tc_last_error`]. Panics never cross the boundary.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the documented length, and
//! handles must come from this library and not yet be freed. Null pointers
//! are reported as [`TcStatus::NullPointer`] rather than dereferenced.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tcconf::consistency::ConsistencyLog;
use tcconf::data::{self, SampleSet};
use tcconf::metrics::{self, EvaluatedSet, MetricsReport};
use tcconf::numerics::MlpModel;
use tcconf::pipeline::{self, TrainConfig};
use tcconf::theory;
use tcconf::{checkpoint, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Contract = 4,
    Parse = 5,
    Io = 6,
    Undefined = 7,
    Panic = 8,
}

/// Trained classifier.
pub struct TcModel(MlpModel);

/// Feature matrix with labels and a labeled mask.
pub struct TcDataset(SampleSet);

/// Metrics of one evaluated set. `fpr95` is NaN when undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TcMetrics {
    pub accuracy: f64,
    pub aurc: f64,
    pub e_aurc: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub fpr95: f64,
}

/// Bound check result. `rhs` and `min_dc` are +infinity when the bound is vacuous.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TcCertificate {
    pub lhs: f64,
    pub rhs: f64,
    pub h_c: usize,
    pub min_dc: f64,
    pub loss_full: f64,
    pub holds: bool,
    pub vacuous: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TcStatus {
    match e {
        Error::Shape(_) => TcStatus::Shape,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => TcStatus::Parse,
        Error::Io { .. } => TcStatus::Io,
        Error::Undefined(_) => TcStatus::Undefined,
        Error::Config(_) => TcStatus::InvalidArgument,
        _ => TcStatus::Contract,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TcStatus, String)>) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TcStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (TcStatus, String)>;
}

impl<T> IntoFfi<T> for tcconf::Result<T> {
    fn ffi(self) -> Result<T, (TcStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (TcStatus, String) {
    (TcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (TcStatus, String) {
    (TcStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (TcStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (TcStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- datasets -------------------------------------------------------------

/// Gaussian blobs with every row labeled.
#[no_mangle]
pub unsafe extern "C" fn tc_dataset_blobs(
    k_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
    out_set: *mut *mut TcDataset,
) -> TcStatus {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        let set = data::make_blobs(k_classes, n_per_class, dim, separation, seed).ffi()?;
        *slot = Box::into_raw(Box::new(TcDataset(set)));
        Ok(())
    })
}

/// Reads a CSV dataset. `n_classes == 0` infers the class count.
#[no_mangle]
pub unsafe extern "C" fn tc_dataset_load_csv(
    path: *const c_char,
    n_classes: usize,
    out_set: *mut *mut TcDataset,
) -> TcStatus {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        let path = str_arg(path, "path")?;
        let k = (n_classes > 0).then_some(n_classes);
        *slot = Box::into_raw(Box::new(TcDataset(data::load_csv(path, k).ffi()?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_dataset_save_csv(set: *const TcDataset, path: *const c_char) -> TcStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        set.0.save_csv(str_arg(path, "path")?).ffi()
    })
}

/// Builds a dataset from row-major features and labels; a negative label
/// marks the row unlabeled.
#[no_mangle]
pub unsafe extern "C" fn tc_dataset_from_arrays(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const i64,
    n_classes: usize,
    out_set: *mut *mut TcDataset,
) -> TcStatus {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        let x = slice(features, rows * cols, "features")?;
        let y = slice(labels, rows, "labels")?;
        let features = ndarray::Array2::from_shape_vec((rows, cols), x.to_vec())
            .map_err(|e| (TcStatus::Shape, e.to_string()))?;
        let labels: Vec<Option<usize>> = y.iter().map(|&v| usize::try_from(v).ok()).collect();
        let mask = labels.iter().map(Option::is_some).collect();
        let set = SampleSet::new((0..rows).collect(), features, labels, mask, n_classes, data::SplitTag::Train).ffi()?;
        *slot = Box::into_raw(Box::new(TcDataset(set)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_dataset_rows(set: *const TcDataset) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn tc_dataset_dim(set: *const TcDataset) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn tc_dataset_labeled_count(set: *const TcDataset) -> usize {
    set.as_ref().map_or(0, |s| s.0.labeled_indices().len())
}

/// Stratified split; the train set keeps hidden labels for evaluation.
#[no_mangle]
pub unsafe extern "C" fn tc_dataset_split(
    set: *const TcDataset,
    labeled_frac: f64,
    test_frac: f64,
    seed: u64,
    out_train: *mut *mut TcDataset,
    out_test: *mut *mut TcDataset,
) -> TcStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let tr = out(out_train, "out_train")?;
        let te = out(out_test, "out_test")?;
        let (a, b) = data::split_semi(&set.0, labeled_frac, test_frac, seed).ffi()?;
        *tr = Box::into_raw(Box::new(TcDataset(a)));
        *te = Box::into_raw(Box::new(TcDataset(b)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_dataset_free(set: *mut TcDataset) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---- models ---------------------------------------------------------------

/// Trains on `train`. `config_json` may be null (defaults) or a JSON object
/// with any subset of the training configuration fields.
#[no_mangle]
pub unsafe extern "C" fn tc_train(
    train: *const TcDataset,
    config_json: *const c_char,
    out_model: *mut *mut TcModel,
) -> TcStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let train = train.as_ref().ok_or_else(|| null("train"))?;
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| (TcStatus::Parse, e.to_string()))?
        };
        let record = pipeline::train_semisupervised(&config, &train.0, None).ffi()?;
        *slot = Box::into_raw(Box::new(TcModel(record.model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_model_load(path: *const c_char, out_model: *mut *mut TcModel) -> TcStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let model = checkpoint::load_model(str_arg(path, "path")?).ffi()?;
        *slot = Box::into_raw(Box::new(TcModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_model_save(model: *const TcModel, path: *const c_char) -> TcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        checkpoint::save_model(&model.0, str_arg(path, "path")?).ffi()
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_model_input_dim(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

#[no_mangle]
pub unsafe extern "C" fn tc_model_n_classes(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_classes())
}

/// Softmax outputs for `rows` row-major inputs of the model's input width;
/// writes `rows * n_classes` values into `out_probs`.
#[no_mangle]
pub unsafe extern "C" fn tc_model_predict_proba(
    model: *const TcModel,
    features: *const f64,
    rows: usize,
    out_probs: *mut f64,
) -> TcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let d = model.0.input_dim();
        let x = slice(features, rows * d, "features")?;
        if rows > 0 && out_probs.is_null() {
            return Err(null("out_probs"));
        }
        let x = ndarray::ArrayView2::from_shape((rows, d), x).map_err(|e| (TcStatus::Shape, e.to_string()))?;
        let probs = tcconf::numerics::softmax(model.0.predict_logits(x).ffi()?.view());
        for (i, v) in probs.iter().enumerate() {
            *out_probs.add(i) = *v;
        }
        Ok(())
    })
}

/// Full metrics report of `model` on every (labeled) row of `set`.
#[no_mangle]
pub unsafe extern "C" fn tc_model_evaluate(
    model: *const TcModel,
    set: *const TcDataset,
    n_bins: usize,
    out_metrics: *mut TcMetrics,
) -> TcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let slot = out(out_metrics, "out_metrics")?;
        *slot = to_c(&pipeline::evaluate(&model.0, &set.0, n_bins).ffi()?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tc_model_free(model: *mut TcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- metrics over plain arrays -------------------------------------------

fn to_c(r: &MetricsReport) -> TcMetrics {
    TcMetrics {
        accuracy: r.accuracy,
        aurc: r.aurc,
        e_aurc: r.e_aurc,
        ece: r.ece,
        nll: r.nll,
        brier: r.brier,
        fpr95: r.fpr95.unwrap_or(f64::NAN),
    }
}

/// Metrics from a row-major `rows x n_classes` probability matrix and labels.
#[no_mangle]
pub unsafe extern "C" fn tc_metrics_from_probs(
    probs: *const f64,
    rows: usize,
    n_classes: usize,
    labels: *const usize,
    n_bins: usize,
    out_metrics: *mut TcMetrics,
) -> TcStatus {
    guard(|| {
        let slot = out(out_metrics, "out_metrics")?;
        let p = slice(probs, rows * n_classes, "probs")?;
        let y = slice(labels, rows, "labels")?;
        let p = ndarray::Array2::from_shape_vec((rows, n_classes), p.to_vec())
            .map_err(|e| (TcStatus::Shape, e.to_string()))?;
        let set = EvaluatedSet::from_probs(p, y.to_vec()).ffi()?;
        *slot = to_c(&MetricsReport::compute(&set, n_bins).ffi()?);
        Ok(())
    })
}

/// AURC and E-AURC of confidence scores against per-sample error flags.
#[no_mangle]
pub unsafe extern "C" fn tc_aurc(
    kappa: *const f64,
    is_error: *const bool,
    n: usize,
    out_aurc: *mut f64,
    out_e_aurc: *mut f64,
) -> TcStatus {
    guard(|| {
        let k = slice(kappa, n, "kappa")?;
        let e = slice(is_error, n, "is_error")?;
        let set = EvaluatedSet::from_scores(k.to_vec(), e.to_vec()).ffi()?;
        let (a, _) = metrics::aurc(&set).ffi()?;
        let opt = metrics::optimal_aurc(&set).ffi()?;
        *out(out_aurc, "out_aurc")? = a;
        *out(out_e_aurc, "out_e_aurc")? = a - opt;
        Ok(())
    })
}

/// AUROC and detection error separating in-distribution from OOD scores.
#[no_mangle]
pub unsafe extern "C" fn tc_ood_metrics(
    in_scores: *const f64,
    n_in: usize,
    out_scores: *const f64,
    n_out: usize,
    out_auroc: *mut f64,
    out_detection_error: *mut f64,
) -> TcStatus {
    guard(|| {
        let a = slice(in_scores, n_in, "in_scores")?;
        let b = slice(out_scores, n_out, "out_scores")?;
        let (auroc, det) = metrics::ood_metrics(a, b).ffi()?;
        *out(out_auroc, "out_auroc")? = auroc;
        *out(out_detection_error, "out_detection_error")? = det;
        Ok(())
    })
}

/// Training consistency from an `epochs x n` row-major matrix of predicted
/// classes (one row per epoch). Needs at least two epochs.
#[no_mangle]
pub unsafe extern "C" fn tc_consistency(
    predictions: *const usize,
    epochs: usize,
    n: usize,
    n_classes: usize,
    out_c: *mut f64,
) -> TcStatus {
    guard(|| {
        let p = slice(predictions, epochs * n, "predictions")?;
        if n > 0 && out_c.is_null() {
            return Err(null("out_c"));
        }
        let mut log = ConsistencyLog::new(n_classes, vec![None; n]).ffi()?;
        for row in p.chunks(n.max(1)).take(epochs) {
            log.record_epoch(row).ffi()?;
        }
        for (i, v) in log.consistency().ffi()?.values.into_iter().enumerate() {
            *out_c.add(i) = v;
        }
        Ok(())
    })
}

/// Checks the ranking-loss bound on one instance with distinct `kappa`.
#[no_mangle]
pub unsafe extern "C" fn tc_certify_bound(
    kappa: *const f64,
    consistency: *const f64,
    is_error: *const bool,
    n: usize,
    out_cert: *mut TcCertificate,
) -> TcStatus {
    guard(|| {
        let slot = out(out_cert, "out_cert")?;
        let k = slice(kappa, n, "kappa")?;
        let c = slice(consistency, n, "consistency")?;
        let e = slice(is_error, n, "is_error")?;
        let cert = theory::certify_bound(k, c, e, theory::DEFAULT_ENUMERATION_CAP).ffi()?;
        *slot = TcCertificate {
            lhs: cert.lhs,
            rhs: cert.rhs.unwrap_or(f64::INFINITY),
            h_c: cert.h_c,
            min_dc: cert.min_dc.unwrap_or(f64::INFINITY),
            loss_full: cert.loss_full,
            holds: cert.holds,
            vacuous: cert.vacuous,
        };
        Ok(())
    })
}
