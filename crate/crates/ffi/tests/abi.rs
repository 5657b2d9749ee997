use std::ffi::{CStr, CString};
use std::ptr;

use reshmm_ffi::*;

const MODEL: &str = r#"{
  "format_version": 1,
  "M": 2,
  "d_max": 10,
  "A": [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
  "states": [
    {"lambda": 4.0, "beta": [0.0, 1.0], "psi": [[0.01, 0.0], [0.0, 0.001]]},
    {"lambda": 4.0, "beta": [5.0, -1.0], "psi": [[0.01, 0.0], [0.0, 0.001]]}
  ],
  "sigma2": 0.0001
}"#;

fn wave() -> Vec<f64> {
    let mut v: Vec<f64> = (0..5).map(|j| j as f64).collect();
    v.extend((0..5).map(|j| 5.0 - j as f64));
    v
}

fn model() -> *mut ReshmmModel {
    let json = CString::new(MODEL).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { reshmm_model_from_json(json.as_ptr(), &mut m) }, ReshmmStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = reshmm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_round_trip_and_queries() {
    let m = model();
    let mut n = 0;
    assert_eq!(unsafe { reshmm_model_num_states(m, &mut n) }, ReshmmStatus::Ok);
    assert_eq!(n, 2);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { reshmm_model_to_json(m, &mut s) }, ReshmmStatus::Ok);
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { reshmm_model_from_json(s, &mut m2) }, ReshmmStatus::Ok);
    let y = wave();
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(reshmm_loglik(m, y.as_ptr(), y.len(), &mut a), ReshmmStatus::Ok);
        assert_eq!(reshmm_loglik(m2, y.as_ptr(), y.len(), &mut b), ReshmmStatus::Ok);
        reshmm_string_free(s);
        reshmm_model_free(m2);
        reshmm_model_free(m);
    }
    assert!(a.is_finite());
    assert_eq!(a, b);
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let m = model();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(reshmm_model_save(m, path.as_ptr()), ReshmmStatus::Ok);
        assert_eq!(reshmm_model_load(path.as_ptr(), &mut back), ReshmmStatus::Ok);
        reshmm_model_free(back);
        let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
        assert_eq!(reshmm_model_load(missing.as_ptr(), &mut back), ReshmmStatus::IoError);
        reshmm_model_free(m);
    }
}

#[test]
fn segment_score_predict() {
    let m = model();
    let y = wave();
    unsafe {
        let mut seg = ptr::null_mut();
        assert_eq!(reshmm_segment(m, y.as_ptr(), y.len(), &mut seg), ReshmmStatus::Ok);
        let mut n = 0;
        assert_eq!(reshmm_segmentation_len(seg, &mut n), ReshmmStatus::Ok);
        assert_eq!(n, 2);
        let mut g = ReshmmSegment::default();
        assert_eq!(reshmm_segmentation_get(seg, 1, &mut g), ReshmmStatus::Ok);
        assert_eq!(g, ReshmmSegment { state: 2, start: 6, duration: 5 });
        assert_eq!(reshmm_segmentation_get(seg, 2, &mut g), ReshmmStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        let mut lj = 0.0;
        assert_eq!(reshmm_segmentation_log_joint(seg, &mut lj), ReshmmStatus::Ok);
        assert!(lj.is_finite());
        reshmm_segmentation_free(seg);

        let mut s = ReshmmScores::default();
        assert_eq!(reshmm_score(m, y.as_ptr(), y.len(), &mut s), ReshmmStatus::Ok);
        assert!(s.logp.is_finite() && s.score_shape.is_finite() && s.score_noise.is_finite());

        let mut f = vec![0.0; y.len()];
        let mut l = vec![0.0; y.len()];
        assert_eq!(reshmm_predict(m, y.as_ptr(), y.len(), f.as_mut_ptr(), l.as_mut_ptr()), ReshmmStatus::Ok);
        let mut total = 0.0;
        assert_eq!(reshmm_loglik(m, y.as_ptr(), y.len(), &mut total), ReshmmStatus::Ok);
        assert!(l.iter().all(|v| v.is_finite()));
        assert!(l.iter().sum::<f64>() >= total - 1e-9);
        reshmm_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    let m = model();
    let y = vec![0.0; 40];
    let mut v = 0.0;
    let mut s = ReshmmScores::default();
    unsafe {
        assert_eq!(reshmm_loglik(ptr::null(), y.as_ptr(), 3, &mut v), ReshmmStatus::NullPointer);
        assert_eq!(reshmm_loglik(m, ptr::null(), 3, &mut v), ReshmmStatus::NullPointer);
        assert_eq!(reshmm_loglik(m, y.as_ptr(), 0, &mut v), ReshmmStatus::InvalidArgument);
        let nan = [f64::NAN];
        assert_eq!(reshmm_loglik(m, nan.as_ptr(), 1, &mut v), ReshmmStatus::DataError);
        // Longer than two maximal segments: no support.
        assert_eq!(reshmm_loglik(m, y.as_ptr(), y.len(), &mut v), ReshmmStatus::Ok);
        assert_eq!(v, f64::NEG_INFINITY);
        assert_eq!(reshmm_score(m, y.as_ptr(), y.len(), &mut s), ReshmmStatus::Ok);
        assert_eq!(s.score_noise, f64::NEG_INFINITY);
        let mut seg = ptr::null_mut();
        assert_ne!(reshmm_segment(m, y.as_ptr(), y.len(), &mut seg), ReshmmStatus::Ok);
        let bad = CString::new("{\"M\": 1}").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(reshmm_model_from_json(bad.as_ptr(), &mut out), ReshmmStatus::ConfigError);
        assert!(last_error().contains("invalid model file"));
        assert!(out.is_null());
        reshmm_model_free(m);
        reshmm_model_free(ptr::null_mut());
    }
}

#[test]
fn fit_from_flat_corpus() {
    let mut values = Vec::new();
    let mut lengths = Vec::new();
    for i in 0..6 {
        let split = 4 + i % 3;
        values.extend((0..split).map(|j| j as f64 + 0.01 * i as f64));
        values.extend((0..6).map(|j| 10.0 - 2.0 * j as f64));
        lengths.push(split + 6);
    }
    let mut opts = ReshmmFitOptions { num_states: 0, d_max: 0, max_iter: 0, rel_tol: 0.0, random_effects: 0 };
    unsafe {
        assert_eq!(reshmm_fit_options_default(2, &mut opts), ReshmmStatus::Ok);
        opts.max_iter = 25;
        let mut m = ptr::null_mut();
        let mut iters = 0;
        assert_eq!(
            reshmm_fit(values.as_ptr(), lengths.as_ptr(), lengths.len(), &opts, &mut m, &mut iters),
            ReshmmStatus::Ok
        );
        assert!((1..=25).contains(&iters));
        let mut n = 0;
        reshmm_model_num_states(m, &mut n);
        assert_eq!(n, 2);
        reshmm_model_free(m);
        opts.num_states = 0;
        assert_eq!(
            reshmm_fit(values.as_ptr(), lengths.as_ptr(), lengths.len(), &opts, &mut m, ptr::null_mut()),
            ReshmmStatus::ConfigError
        );
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(reshmm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/reshmm.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["reshmm_fit", "reshmm_segment", "reshmm_last_error_message", "RESHMM_STATUS_NO_SUPPORT"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ ReshmmModel *m = 0; size_t n = 0;\n\
             ReshmmStatus s = reshmm_model_num_states(m, &n); reshmm_model_free(m); return (int)s; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; skipping header compile check"),
    }
}
