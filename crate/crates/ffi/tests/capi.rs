use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bidrop::optim::{reference_adam_step, AdamConfig, AdamState};
use bidrop::ParamSet;
use bidrop_ffi::*;

fn last_error() -> String {
    let p = bd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn select_subnet_fixture() {
    let scores = [0.1, 0.9, 0.5, 0.7];
    let mut mask = [9u8; 4];
    let mut selected = 0usize;
    let s = unsafe { bd_select_subnet(scores.as_ptr(), 4, 0.5, mask.as_mut_ptr(), &mut selected) };
    assert_eq!(s, BdStatus::Ok);
    assert_eq!(mask, [0, 1, 0, 1]);
    assert_eq!(selected, 2);
    assert!(bd_last_error().is_null());
}

#[test]
fn select_top_ties_to_lower_index() {
    let scores = [2.0, 2.0, 2.0];
    let mut mask = [0u8; 3];
    assert_eq!(
        unsafe { bd_select_top(scores.as_ptr(), 3, 1, mask.as_mut_ptr()) },
        BdStatus::Ok
    );
    assert_eq!(mask, [1, 0, 0]);
}

#[test]
fn invalid_quantile_sets_error() {
    let scores = [1.0, 2.0];
    let mut mask = [0u8; 2];
    let s = unsafe { bd_select_subnet(scores.as_ptr(), 2, 1.0, mask.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, BdStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let mut mask = [0u8; 2];
    let s = unsafe { bd_select_subnet(ptr::null(), 2, 0.5, mask.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, BdStatus::NullPointer);
    assert!(last_error().contains("scores"));
    assert_eq!(
        unsafe { bd_adam_step(ptr::null_mut(), ptr::null_mut(), ptr::null(), ptr::null(), 1) },
        BdStatus::NullPointer
    );
}

#[test]
fn score_fixtures() {
    // g1 = [1, 2], g2 = [3, 2], theta = [4, -2]
    let grads = [1.0, 2.0, 3.0, 2.0];
    let theta = [4.0, -2.0];
    let (mut score, mut per, mut sca) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    let s = unsafe {
        bd_bidrop_scores(
            grads.as_ptr(),
            2,
            2,
            theta.as_ptr(),
            1e-8,
            score.as_mut_ptr(),
            per.as_mut_ptr(),
            sca.as_mut_ptr(),
        )
    };
    assert_eq!(s, BdStatus::Ok);
    assert!((per[0] - 2.0 / (2f64.sqrt() + 1e-8)).abs() < 1e-12);
    assert!((per[1] - 2.0 / 1e-8).abs() < 1e-3);
    assert!((sca[0] - 2.0 / (4.0 + 1e-8)).abs() < 1e-12);
    assert!((sca[1] - 2.0 / (2.0 + 1e-8)).abs() < 1e-12);
    for i in 0..2 {
        assert_eq!(score[i], per[i] * sca[i]);
    }
}

#[test]
fn adam_handle_matches_reference() {
    let n = 16;
    let cfg = AdamConfig::default();
    let adam = bd_adam_new(n, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    assert!(!adam.is_null());
    let mut theta: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.5).collect();
    let mut reference = ParamSet::single(theta.clone()).unwrap();
    let mut state = AdamState::new(&reference, cfg).unwrap();
    for step in 0..20 {
        let grad: Vec<f64> = theta.iter().map(|t| 2.0 * t + step as f64 * 0.01).collect();
        let ref_grad: Vec<f64> = reference
            .to_flat()
            .iter()
            .map(|t| 2.0 * t + step as f64 * 0.01)
            .collect();
        let s = unsafe { bd_adam_step(adam, theta.as_mut_ptr(), grad.as_ptr(), ptr::null(), n) };
        assert_eq!(s, BdStatus::Ok);
        reference_adam_step(&mut reference, &ParamSet::single(ref_grad).unwrap(), &mut state).unwrap();
    }
    assert_eq!(unsafe { bd_adam_step_count(adam) }, 20);
    assert!(ParamSet::single(theta).unwrap().max_abs_diff(&reference).unwrap() < 1e-15);
    unsafe { bd_adam_free(adam) };
}

#[test]
fn adam_zero_mask_freezes_parameters() {
    let adam = bd_adam_new(3, 0.1, 0.9, 0.999, 1e-8);
    let mut theta = [1.0, 2.0, 3.0];
    let grad = [5.0, 5.0, 5.0];
    let mask = [0u8, 1, 0];
    assert_eq!(
        unsafe { bd_adam_step(adam, theta.as_mut_ptr(), grad.as_ptr(), mask.as_ptr(), 3) },
        BdStatus::Ok
    );
    assert_eq!(theta[0], 1.0);
    assert!(theta[1] < 2.0);
    assert_eq!(theta[2], 3.0);
    assert_eq!(
        unsafe { bd_adam_step(adam, theta.as_mut_ptr(), grad.as_ptr(), ptr::null(), 2) },
        BdStatus::ShapeMismatch
    );
    unsafe { bd_adam_free(adam) };
}

#[test]
fn adam_rejects_bad_config() {
    assert!(bd_adam_new(3, -1.0, 0.9, 0.999, 1e-8).is_null());
    assert!(!last_error().is_empty());
    assert!(bd_adam_new(0, 0.1, 0.9, 0.999, 1e-8).is_null());
}

#[test]
fn run_config_returns_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new("steps = 20\nseeds = 0\ntrain_size = 100\ndev_size = 40\nhidden = 8\n").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    let s = unsafe { bd_run_config(cfg.as_ptr(), out.as_ptr(), &mut json) };
    assert_eq!(s, BdStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { bd_string_free(json) };
    let on_disk = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(text, on_disk);
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn run_config_unknown_key() {
    let cfg = CString::new("bogus_key = 1\n").unwrap();
    let mut json = ptr::null_mut();
    let s = unsafe { bd_run_config(cfg.as_ptr(), ptr::null(), &mut json) };
    assert_eq!(s, BdStatus::Config);
    assert!(json.is_null());
    assert!(last_error().contains("bogus_key"));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(bd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("bidrop.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "bd_select_subnet",
        "bd_bidrop_scores",
        "bd_adam_new",
        "bd_adam_step",
        "bd_adam_free",
        "bd_run_config",
        "BD_STATUS_OK",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"bidrop.h\"\nint main(void) { return bd_version() == 0; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("a C compiler is required");
    assert!(status.success());
}
