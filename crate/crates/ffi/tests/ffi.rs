use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use tcconf_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tc_last_error()) }.to_string_lossy().into_owned()
}

fn blobs() -> *mut TcDataset {
    let mut set = ptr::null_mut();
    assert_eq!(unsafe { tc_dataset_blobs(3, 30, 2, 4.0, 7, &mut set) }, TcStatus::Ok);
    set
}

const QUICK: &str = r#"{"epochs": 4, "hidden": [8], "labeled_batch": 8, "unlabeled_batch": 16}"#;

#[test]
fn train_predict_evaluate_round_trip() {
    let all = blobs();
    let (mut train, mut test) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(tc_dataset_split(all, 0.3, 0.2, 1, &mut train, &mut test), TcStatus::Ok);
        assert_eq!(tc_dataset_rows(train) + tc_dataset_rows(test), 90);
        assert_eq!(tc_dataset_labeled_count(train), 21);
        let cfg = CString::new(QUICK).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(tc_train(train, cfg.as_ptr(), &mut model), TcStatus::Ok);
        assert_eq!(tc_model_n_classes(model), 3);
        assert_eq!(tc_model_input_dim(model), 2);

        let x = [0.0, 0.0, 5.0, -1.0];
        let mut probs = [0.0; 6];
        assert_eq!(tc_model_predict_proba(model, x.as_ptr(), 2, probs.as_mut_ptr()), TcStatus::Ok);
        for row in probs.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let mut m = TcMetrics::default();
        assert_eq!(tc_model_evaluate(model, test, 15, &mut m), TcStatus::Ok);
        assert!((0.0..=1.0).contains(&m.accuracy));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
        assert_eq!(tc_model_save(model, path.as_ptr()), TcStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(tc_model_load(path.as_ptr(), &mut back), TcStatus::Ok);
        let mut again = [0.0; 6];
        assert_eq!(tc_model_predict_proba(back, x.as_ptr(), 2, again.as_mut_ptr()), TcStatus::Ok);
        assert_eq!(probs, again);

        tc_model_free(back);
        tc_model_free(model);
        tc_dataset_free(train);
        tc_dataset_free(test);
        tc_dataset_free(all);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut a = 0.0;
        let mut e = 0.0;
        assert_eq!(tc_aurc(ptr::null(), ptr::null(), 3, &mut a, &mut e), TcStatus::NullPointer);
        assert!(last_error().contains("kappa"));

        let k = [0.5, 0.4];
        let err = [false, true];
        assert_eq!(tc_aurc(k.as_ptr(), err.as_ptr(), 2, &mut a, &mut e), TcStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!((a, e), (0.25, 0.0));

        let mut set = ptr::null_mut();
        assert_eq!(tc_dataset_blobs(0, 10, 2, 1.0, 0, &mut set), TcStatus::InvalidArgument);
        assert!(set.is_null());

        let missing = CString::new("/nonexistent/file.csv").unwrap();
        assert_eq!(tc_dataset_load_csv(missing.as_ptr(), 0, &mut set), TcStatus::Io);

        let bad = CString::new("{not json").unwrap();
        let all = blobs();
        let mut model = ptr::null_mut();
        assert_eq!(tc_train(all, bad.as_ptr(), &mut model), TcStatus::Parse);
        tc_dataset_free(all);

        let mut m = TcMetrics::default();
        let probs = [0.5, 0.5];
        let labels = [2usize];
        assert_eq!(tc_metrics_from_probs(probs.as_ptr(), 1, 2, labels.as_ptr(), 15, &mut m), TcStatus::Contract);

        tc_dataset_free(ptr::null_mut());
        tc_model_free(ptr::null_mut());
        assert_eq!(tc_dataset_rows(ptr::null()), 0);
    }
}

#[test]
fn array_metrics_match_library() {
    let probs = [0.7, 0.2, 0.1, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4, 0.5, 0.25, 0.25];
    let labels = [0usize, 2, 2, 1];
    let mut m = TcMetrics::default();
    assert_eq!(
        unsafe { tc_metrics_from_probs(probs.as_ptr(), 4, 3, labels.as_ptr(), 15, &mut m) },
        TcStatus::Ok
    );
    let p = ndarray::Array2::from_shape_vec((4, 3), probs.to_vec()).unwrap();
    let set = tcconf::metrics::EvaluatedSet::from_probs(p, labels.to_vec()).unwrap();
    let r = tcconf::metrics::MetricsReport::compute(&set, 15).unwrap();
    assert_eq!((m.accuracy, m.aurc, m.e_aurc, m.ece, m.nll, m.brier), (r.accuracy, r.aurc, r.e_aurc, r.ece, r.nll, r.brier));
    assert_eq!(m.fpr95, r.fpr95.unwrap());

    let (ins, outs) = ([0.9, 0.8, 0.7], [0.1, 0.75]);
    let (mut auroc, mut det) = (0.0, 0.0);
    assert_eq!(
        unsafe { tc_ood_metrics(ins.as_ptr(), 3, outs.as_ptr(), 2, &mut auroc, &mut det) },
        TcStatus::Ok
    );
    assert_eq!((auroc, det), tcconf::metrics::ood_metrics(&ins, &outs).unwrap());
}

#[test]
fn consistency_and_certificate() {
    // epochs x samples
    let preds = [0usize, 1, 2, 0, 0, 2, 0, 1, 2];
    let mut c = [0.0; 3];
    assert_eq!(unsafe { tc_consistency(preds.as_ptr(), 3, 3, 3, c.as_mut_ptr()) }, TcStatus::Ok);
    assert_eq!(c, [1.0, 0.0, 1.0]);
    assert_eq!(unsafe { tc_consistency(preds.as_ptr(), 1, 3, 3, c.as_mut_ptr()) }, TcStatus::Contract);

    let kappa = [0.9, 0.8, 0.7, 0.6];
    let cons = [0.5, 1.0, 0.25, 0.0];
    let errs = [false, true, false, true];
    let mut cert = TcCertificate::default();
    assert_eq!(
        unsafe { tc_certify_bound(kappa.as_ptr(), cons.as_ptr(), errs.as_ptr(), 4, &mut cert) },
        TcStatus::Ok
    );
    let lib = tcconf::theory::certify_bound(&kappa, &cons, &errs, tcconf::theory::DEFAULT_ENUMERATION_CAP).unwrap();
    assert_eq!(cert.holds, lib.holds);
    assert_eq!(cert.lhs, lib.lhs);
    assert!(cert.lhs <= cert.rhs + 1e-12);
}

#[test]
fn c_program_links_against_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join("libtcconf_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
