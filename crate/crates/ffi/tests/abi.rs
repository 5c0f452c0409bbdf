//! Exercises the C ABI from Rust and from a C program built against the
//! generated header.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use edetect_ffi::*;

fn last_error() -> String {
    let p = ed_last_error_message();
    assert!(!p.is_null());
    // SAFETY: valid until the next call on this thread
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bernoulli(alpha: f64) -> *mut EdCalibration {
    let mut cal = ptr::null_mut();
    assert_eq!(
        ed_calibrate_bernoulli(alpha, 0.49, 0.02, 0.41, 1000, &mut cal),
        EdStatus::Ok
    );
    cal
}

#[test]
fn calibration_reproduces_baseline_count() {
    let cal = bernoulli(1e-3);
    let mut k = 0usize;
    let mut alpha = 0.0;
    assert_eq!(ed_calibration_num_components(cal, &mut k), EdStatus::Ok);
    assert_eq!(ed_calibration_alpha(cal, &mut alpha), EdStatus::Ok);
    assert_eq!(k, 70);
    assert_eq!(alpha, 1e-3);
    ed_calibration_free(cal);
}

#[test]
fn run_matches_stepwise_observation() {
    let cal = bernoulli(0.01);
    let xs: Vec<f64> = (0..200).map(|i| if i % 10 < 7 { 1.0 } else { 0.0 }).collect();
    let thr = 100f64.ln();

    let mut a = ptr::null_mut();
    assert_eq!(ed_detector_new(cal, &mut a), EdStatus::Ok);
    let (mut stop, mut used) = (0usize, 0usize);
    let s = ed_detector_run(
        a,
        xs.as_ptr(),
        xs.len(),
        EdStatistic::ShiryaevRoberts,
        thr,
        &mut stop,
        &mut used,
    );
    assert_eq!(s, EdStatus::Ok);
    assert!(stop > 0 && stop == used);

    let mut b = ptr::null_mut();
    assert_eq!(ed_detector_new(cal, &mut b), EdStatus::Ok);
    ed_calibration_free(cal);
    let mut first = 0;
    for (i, &x) in xs.iter().enumerate() {
        let mut sr = 0.0;
        assert_eq!(ed_detector_observe(b, x, &mut sr, ptr::null_mut()), EdStatus::Ok);
        if sr >= thr {
            first = i + 1;
            break;
        }
    }
    assert_eq!(first, stop);

    let (mut sa, mut ca, mut sb, mut cb) = (0.0, 0.0, 0.0, 0.0);
    ed_detector_statistics(a, &mut sa, &mut ca);
    ed_detector_statistics(b, &mut sb, &mut cb);
    assert_eq!((sa, ca), (sb, cb));
    assert!(ca <= sa);
    let mut steps = 0;
    assert_eq!(ed_detector_steps(a, &mut steps), EdStatus::Ok);
    assert_eq!(steps, stop);
    ed_detector_free(a);
    ed_detector_free(b);
}

#[test]
fn errors_carry_status_and_message() {
    let mut cal = ptr::null_mut();
    assert_eq!(
        ed_calibrate_bernoulli(0.01, 1.5, 0.02, 0.41, 1000, &mut cal),
        EdStatus::Config
    );
    assert!(cal.is_null());
    assert!(last_error().contains("1.5"));

    assert_eq!(
        ed_calibrate_bernoulli(0.01, 0.49, 0.02, 0.41, 1000, ptr::null_mut()),
        EdStatus::NullPointer
    );
    assert!(last_error().contains("out"));

    let cal = bernoulli(0.01);
    let mut det = ptr::null_mut();
    assert_eq!(ed_detector_new(cal, &mut det), EdStatus::Ok);
    let xs = [1.0, 0.0, 0.5, 1.0];
    let (mut stop, mut used) = (99usize, 99usize);
    let s = ed_detector_run(
        det,
        xs.as_ptr(),
        xs.len(),
        EdStatistic::Cusum,
        100f64.ln(),
        &mut stop,
        &mut used,
    );
    assert_eq!(s, EdStatus::Data);
    assert_eq!((stop, used), (0, 2));
    assert!(last_error().contains("index 3"));
    let mut steps = 0;
    ed_detector_steps(det, &mut steps);
    assert_eq!(steps, 2);

    assert_eq!(
        ed_detector_observe(ptr::null_mut(), 1.0, ptr::null_mut(), ptr::null_mut()),
        EdStatus::NullPointer
    );
    assert_eq!(
        ed_detector_observe(det, 1.0, ptr::null_mut(), ptr::null_mut()),
        EdStatus::Ok
    );
    assert!(ed_last_error_message().is_null());
    ed_detector_free(det);
    ed_calibration_free(cal);
    ed_detector_free(ptr::null_mut());
    ed_calibration_free(ptr::null_mut());
}

#[test]
fn toml_round_trip_preserves_calibration() {
    let mut cal = ptr::null_mut();
    assert_eq!(
        ed_calibrate_adaptive_bernoulli(0.01, 0.49, 0.05, 0.4, 0.5, 1.0, 1000, &mut cal),
        EdStatus::Ok
    );
    let mut text = ptr::null_mut();
    assert_eq!(ed_calibration_to_toml(cal, &mut text), EdStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(ed_calibration_from_toml(text, &mut back), EdStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(ed_calibration_to_toml(back, &mut again), EdStatus::Ok);
    // SAFETY: both strings come from ed_calibration_to_toml
    unsafe { assert_eq!(CStr::from_ptr(text), CStr::from_ptr(again)) };
    ed_string_free(text);
    ed_string_free(again);
    ed_calibration_free(cal);
    ed_calibration_free(back);

    let junk = CString::new("detector = \"mixture\"\n").unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(ed_calibration_from_toml(junk.as_ptr(), &mut bad), EdStatus::Config);
    assert!(bad.is_null());
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "edetect.h"

int main(void) {
    EdCalibration *cal = NULL;
    if (ed_calibrate_bernoulli(1e-3, 0.49, 0.02, 0.41, 1000, &cal) != ED_STATUS_OK) return 10;
    size_t k = 0;
    ed_calibration_num_components(cal, &k);
    EdDetector *det = NULL;
    if (ed_detector_new(cal, &det) != ED_STATUS_OK) return 11;
    ed_calibration_free(cal);
    double xs[400];
    for (int i = 0; i < 400; i++) xs[i] = (i % 4 != 0) ? 1.0 : 0.0;
    size_t stop = 0, used = 0;
    if (ed_detector_run(det, xs, 400, ED_STATISTIC_SHIRYAEV_ROBERTS, log(1000.0), &stop, &used) != ED_STATUS_OK)
        return 12;
    EdStatus bad = ed_detector_observe(det, 0.25, NULL, NULL);
    const char *msg = ed_last_error_message();
    ed_detector_free(det);
    printf("%zu %zu %d %s\n", k, stop, (int)bad, msg ? "message" : "none");
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libedetect_ffi.so").exists() {
        eprintln!("shared library not found in {}; skipping", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-ledetect_ffi", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], "70");
    assert!(fields[1].parse::<usize>().unwrap() > 0);
    assert_eq!(fields[2], (EdStatus::Data as i32).to_string());
    assert_eq!(fields[3], "message");
}
