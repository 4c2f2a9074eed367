//! C ABI over the `bidrop` crate.
//!
//! Every entry point returns a [`BdStatus`] (or a null pointer for
//! constructors). On failure, [`bd_last_error`] describes the problem on the
//! calling thread. Buffers are caller-owned unless documented otherwise;
//! strings returned through out-pointers must be released with
//! [`bd_string_free`], handles with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bidrop::optim::{masked_adam_step, AdamConfig, AdamState};
use bidrop::select::{select_top, GradSamples, SelectionScores};
use bidrop::train::{run_experiment, RunOptions};
use bidrop::{emit_report, Error, ParamSet, SubnetMask, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Numeric = 4,
    Config = 5,
    Io = 6,
    Panic = 7,
}

impl From<&Error> for BdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ShapeMismatch(_) => BdStatus::ShapeMismatch,
            Error::DivisionByZero { .. } | Error::NumericOverflow(_) => BdStatus::Numeric,
            Error::Config(_) | Error::UnknownConfigKey(_) | Error::Parse { .. } => BdStatus::Config,
            Error::Io { .. } => BdStatus::Io,
            _ => BdStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: BdStatus, msg: impl Into<String>) -> BdStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> BdStatus {
    let status = BdStatus::from(&e);
    fail(status, e.to_string())
}

/// Run `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), BdStatus>) -> BdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BdStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(BdStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], BdStatus> {
    if p.is_null() {
        return Err(fail(BdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], BdStatus> {
    if p.is_null() {
        return Err(fail(BdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, BdStatus> {
    if p.is_null() {
        return Err(fail(BdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn flat(values: &[f64]) -> Result<ParamSet, BdStatus> {
    ParamSet::single(values.to_vec()).map_err(from_error)
}

fn write_mask(mask: &SubnetMask, out: &mut [u8]) {
    for (o, b) in out.iter_mut().zip(mask.bits()) {
        *o = u8::from(b);
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Keep the `ceil((1 − p)·n)` largest of `scores[0..n]`; writes 0/1 into
/// `mask_out[0..n]` and the kept count into `selected_out` (may be null).
#[no_mangle]
pub unsafe extern "C" fn bd_select_subnet(
    scores: *const f64,
    n: usize,
    p: f64,
    mask_out: *mut u8,
    selected_out: *mut usize,
) -> BdStatus {
    guard(|| {
        let scores = flat(slice(scores, n, "scores")?)?;
        let out = slice_mut(mask_out, n, "mask_out")?;
        let mask = bidrop::select_subnet(&scores, p).map_err(from_error)?;
        write_mask(&mask, out);
        if !selected_out.is_null() {
            *selected_out = mask.selected();
        }
        Ok(())
    })
}

/// Selection scores from `k` gradient samples stored row-major in
/// `grads[0..k*n]` and parameters `theta[0..n]`. `score_out` receives the
/// final score; `perturbation_out` and `scaling_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn bd_bidrop_scores(
    grads: *const f64,
    k: usize,
    n: usize,
    theta: *const f64,
    eps_den: f64,
    score_out: *mut f64,
    perturbation_out: *mut f64,
    scaling_out: *mut f64,
) -> BdStatus {
    guard(|| {
        if k == 0 || n == 0 {
            return Err(fail(BdStatus::InvalidArgument, "k and n must be positive"));
        }
        let total = k
            .checked_mul(n)
            .ok_or_else(|| fail(BdStatus::InvalidArgument, "k * n overflows"))?;
        let grads = slice(grads, total, "grads")?;
        let theta = flat(slice(theta, n, "theta")?)?;
        let samples = grads.chunks(n).map(flat).collect::<Result<Vec<_>, _>>()?;
        let samples = GradSamples::new(samples).map_err(from_error)?;
        let scores = SelectionScores::compute(&samples, &theta, eps_den).map_err(from_error)?;
        slice_mut(score_out, n, "score_out")?.copy_from_slice(&scores.final_score.to_flat());
        if !perturbation_out.is_null() {
            slice_mut(perturbation_out, n, "perturbation_out")?.copy_from_slice(&scores.perturbation.to_flat());
        }
        if !scaling_out.is_null() {
            slice_mut(scaling_out, n, "scaling_out")?.copy_from_slice(&scores.scaling.to_flat());
        }
        Ok(())
    })
}

/// Keep the `keep` largest of `scores[0..n]` (ties to the lower index).
#[no_mangle]
pub unsafe extern "C" fn bd_select_top(scores: *const f64, n: usize, keep: usize, mask_out: *mut u8) -> BdStatus {
    guard(|| {
        let scores = flat(slice(scores, n, "scores")?)?;
        let out = slice_mut(mask_out, n, "mask_out")?;
        let mask = select_top(&scores, keep).map_err(from_error)?;
        write_mask(&mask, out);
        Ok(())
    })
}

/// Masked Adam state over a flat parameter vector.
pub struct BdAdam {
    state: AdamState,
    n: usize,
}

/// New optimizer for `n` parameters, or null on invalid hyperparameters.
#[no_mangle]
pub extern "C" fn bd_adam_new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> *mut BdAdam {
    let mut out = ptr::null_mut();
    let status = guard(|| {
        if n == 0 {
            return Err(fail(BdStatus::InvalidArgument, "n must be positive"));
        }
        let layout = flat(&vec![0.0; n])?;
        let config = AdamConfig { lr, beta1, beta2, eps };
        let state = AdamState::new(&layout, config).map_err(from_error)?;
        out = Box::into_raw(Box::new(BdAdam { state, n }));
        Ok(())
    });
    debug_assert!(status == BdStatus::Ok || out.is_null());
    out
}

/// One masked step: `theta[0..n]` is updated in place. A null `mask` selects
/// every element.
#[no_mangle]
pub unsafe extern "C" fn bd_adam_step(
    adam: *mut BdAdam,
    theta: *mut f64,
    grad: *const f64,
    mask: *const u8,
    n: usize,
) -> BdStatus {
    guard(|| {
        if adam.is_null() {
            return Err(fail(BdStatus::NullPointer, "adam is null"));
        }
        let adam = &mut *adam;
        if n != adam.n {
            return Err(fail(
                BdStatus::ShapeMismatch,
                format!("optimizer has {} parameters, got {n}", adam.n),
            ));
        }
        let theta_buf = slice_mut(theta, n, "theta")?;
        let grad = flat(slice(grad, n, "grad")?)?;
        let mut params = flat(theta_buf)?;
        let subnet = if mask.is_null() {
            SubnetMask::ones(&params)
        } else {
            let bits: Vec<bool> = slice(mask, n, "mask")?.iter().map(|&b| b != 0).collect();
            SubnetMask::from_bits(&params, &bits).map_err(from_error)?
        };
        masked_adam_step(&mut params, &grad, &subnet, &mut adam.state).map_err(from_error)?;
        theta_buf.copy_from_slice(&params.to_flat());
        Ok(())
    })
}

/// Steps taken so far; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn bd_adam_step_count(adam: *const BdAdam) -> u64 {
    if adam.is_null() {
        0
    } else {
        (*adam).state.step_count()
    }
}

#[no_mangle]
pub unsafe extern "C" fn bd_adam_free(adam: *mut BdAdam) {
    if !adam.is_null() {
        drop(Box::from_raw(adam));
    }
}

/// Run an experiment from config-file text. The report JSON is returned
/// through `report_json_out` (release with [`bd_string_free`]). When
/// `out_dir` is non-null, `report.json`, `report.csv` and any mask dumps are
/// also written there.
#[no_mangle]
pub unsafe extern "C" fn bd_run_config(
    config_text: *const c_char,
    out_dir: *const c_char,
    report_json_out: *mut *mut c_char,
) -> BdStatus {
    guard(|| {
        if report_json_out.is_null() {
            return Err(fail(BdStatus::NullPointer, "report_json_out is null"));
        }
        *report_json_out = ptr::null_mut();
        let cfg = TrainConfig::parse(c_str(config_text, "config_text")?).map_err(from_error)?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(c_str(out_dir, "out_dir")?))
        };
        let report = run_experiment(
            &cfg,
            &RunOptions {
                out_dir: out_dir.clone(),
            },
        )
        .map_err(from_error)?;
        if let Some(dir) = &out_dir {
            emit_report(&report, dir).map_err(from_error)?;
        }
        let json = report.to_json().map_err(from_error)?;
        let json = CString::new(json).map_err(|_| fail(BdStatus::InvalidArgument, "report contains NUL"))?;
        *report_json_out = json.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
