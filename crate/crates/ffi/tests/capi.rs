use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use fairshap::dataset::{synthetic, write_bundle};
use fairshap::interventions::{train_baseline, Architecture, TrainConfig};
use fairshap::model::{save_model, Model};
use fairshap_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = fs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Writes a bundle and a small trained network into `dir`.
fn fixture(dir: &Path) {
    let ds = synthetic::biased(300, 5);
    write_bundle(&ds, &dir.join("bundle")).unwrap();
    let cfg = TrainConfig {
        iterations: 150,
        batch_size: 64,
        lr: 0.01,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let (net, _) = train_baseline(&ds, &Architecture::hidden(&[6]), &cfg).unwrap();
    save_model(&Model::FeedForward(net), &dir.join("net.json")).unwrap();
}

#[test]
fn explain_round_trip_satisfies_the_sum_rule() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    unsafe {
        let mut ds = ptr::null_mut();
        let bundle = c(tmp.path().join("bundle").to_str().unwrap());
        assert_eq!(fs_dataset_load_bundle(bundle.as_ptr(), &mut ds), FsStatus::Ok);
        let mut model = ptr::null_mut();
        let path = c(tmp.path().join("net.json").to_str().unwrap());
        assert_eq!(fs_model_load(path.as_ptr(), &mut model), FsStatus::Ok);
        assert_eq!(fs_model_input_width(model), fs_dataset_columns(ds));
        assert_eq!(fs_model_classes(model), 2);

        let test = c("test");
        let n = fs_dataset_rows(ds, test.as_ptr());
        let w = fs_dataset_columns(ds);
        let mut x = vec![0.0; n * w];
        assert_eq!(fs_dataset_features(ds, test.as_ptr(), x.as_mut_ptr(), x.len()), FsStatus::Ok);
        let mut probs = vec![0.0; n * 2];
        assert_eq!(fs_model_predict(model, x.as_ptr(), n, probs.as_mut_ptr(), probs.len()), FsStatus::Ok);
        for p in probs.chunks(2) {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }

        let mut dp = f64::NAN;
        let metric = c("dp");
        assert_eq!(fs_metric(model, ds, metric.as_ptr(), test.as_ptr(), &mut dp), FsStatus::Ok);

        let opts = FsExplainOptions {
            background: 40,
            ..fs_explain_options_default()
        };
        let mut report = ptr::null_mut();
        assert_eq!(fs_explain(model, ds, metric.as_ptr(), test.as_ptr(), ptr::null(), &opts, &mut report), FsStatus::Ok);
        assert_eq!(fs_report_count(report), 1);
        let k = fs_report_players(report, 0);
        assert_eq!(k, fs_dataset_players(ds));
        let mut phi = vec![0.0; k];
        let (mut offset, mut value) = (f64::NAN, f64::NAN);
        assert_eq!(fs_report_values(report, 0, phi.as_mut_ptr(), k, &mut offset, &mut value), FsStatus::Ok);
        assert_eq!(offset, 0.0);
        assert!((phi.iter().sum::<f64>() - value).abs() < 1e-9);
        assert!((value.abs() - dp).abs() < 1e-9);

        let name = fs_report_player_name(report, 0, 0);
        let first = fs_dataset_player_name(ds, 0);
        assert_eq!(CStr::from_ptr(name), CStr::from_ptr(first));
        fs_string_free(name);
        fs_string_free(first);

        let json = fs_report_json(report, 0);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("\"phi\""));
        fs_string_free(json);

        let eo = c("eo");
        let mut cells = ptr::null_mut();
        assert_eq!(fs_explain(model, ds, eo.as_ptr(), test.as_ptr(), ptr::null(), &opts, &mut cells), FsStatus::Ok);
        assert_eq!(fs_report_count(cells), 2);
        fs_report_free(cells);

        let cdp = c("cdp");
        let resolving = c("region");
        assert_eq!(fs_explain(model, ds, cdp.as_ptr(), test.as_ptr(), resolving.as_ptr(), &opts, &mut cells), FsStatus::Ok);
        assert!(fs_report_count(cells) >= 1);
        fs_report_free(cells);

        fs_report_free(report);
        fs_model_free(model);
        fs_dataset_free(ds);
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = c("/nonexistent/bundle");
        assert_eq!(fs_dataset_load_bundle(missing.as_ptr(), &mut ds), FsStatus::NotFound);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(fs_dataset_load_bundle(ptr::null(), &mut ds), FsStatus::NullArgument);
        assert!(last_error().contains("dir"));

        assert_eq!(fs_dataset_synthetic(200, 1, &mut ds), FsStatus::Ok);
        let mut model = ptr::null_mut();
        let path = c("/nonexistent/model.json");
        assert_eq!(fs_model_load(path.as_ptr(), &mut model), FsStatus::NotFound);

        let bad_split = c("holdout");
        assert_eq!(fs_dataset_rows(ds, bad_split.as_ptr()), 0);
        let mut buf = [0.0; 3];
        let test = c("test");
        assert_eq!(fs_dataset_features(ds, test.as_ptr(), buf.as_mut_ptr(), buf.len()), FsStatus::OutOfRange);

        assert_eq!(fs_report_count(ptr::null()), 0);
        assert!(fs_report_json(ptr::null(), 0).is_null());
        fs_dataset_free(ds);
        fs_dataset_free(ptr::null_mut());
        fs_string_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(fs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/fairshap.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
    let program = r#"
#include "fairshap.h"
int main(void) {
    FsDataset *ds = 0;
    if (fs_dataset_synthetic(100, 1, &ds) != FS_STATUS_OK) return 1;
    FsExplainOptions o = fs_explain_options_default();
    (void)o;
    fs_dataset_free(ds);
    return 0;
}
"#;
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("main.c");
    std::fs::write(&file, program).unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&file)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler, skipping syntax check: {e}"),
    }
}
