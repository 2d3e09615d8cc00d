//! C ABI over the `survgp` library.
//!
//! Every function returns a [`SurvgpStatus`] code (0 on success) and writes
//! results through out-pointers. On failure, [`survgp_last_error`] returns
//! a message for the calling thread. Models are opaque handles released by
//! [`survgp_model_free`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use survgp::data::{CovariateSeries, IndividualRecord};
use survgp::error::Error;
use survgp::inference::Checkpoint;
use survgp::longitudinal::ObservationSeries;
use survgp::pipeline::predict_individual;
use survgp::policy::{self, CostSpec, Decision, EventProbDist, Verdict};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Parse = 4,
    SchemaVersion = 5,
    IllConditioned = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for SurvgpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::Validation(_) => Self::Validation,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => Self::Parse,
            Error::SchemaVersion { .. } => Self::SchemaVersion,
            Error::IllConditioned { .. } => Self::IllConditioned,
            Error::Numerical(_) => Self::Numerical,
            Error::Io(_) => Self::Io,
        }
    }
}

/// Distribution of the event probability: `H = 1 - exp(k·exp(X))`,
/// `X ~ N(loc, scale²)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvgpDist {
    pub loc: f64,
    pub scale: f64,
    pub k: f64,
}

/// Verdict codes: 0 negative, 1 positive, 2 abstain.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvgpDecision {
    pub verdict: i32,
    pub h_lo: f64,
    pub h_hi: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

/// Opaque trained model.
pub struct SurvgpModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SurvgpStatus, msg: &str) -> SurvgpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> SurvgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SurvgpStatus::Ok,
        Ok(Err(e)) => fail((&e).into(), &e.to_string()),
        Err(_) => fail(SurvgpStatus::Panic, "internal panic"),
    }
}

fn dist_in(d: &SurvgpDist) -> Result<EventProbDist, Error> {
    EventProbDist::new(d.loc, d.scale, d.k)
}

fn decision_out(d: Decision) -> SurvgpDecision {
    let verdict = match d.verdict {
        Verdict::Negative => 0,
        Verdict::Positive => 1,
        Verdict::Abstain => 2,
    };
    SurvgpDecision { verdict, h_lo: d.h_lo, h_hi: d.h_hi, tau_lo: d.tau_lo, tau_hi: d.tau_hi }
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn survgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn survgp_model_load(path: *const c_char, out: *mut *mut SurvgpModel) -> SurvgpStatus {
    if path.is_null() || out.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: path or out");
    }
    guard(|| {
        let p = CStr::from_ptr(path).to_str().map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let checkpoint = Checkpoint::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(SurvgpModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`survgp_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn survgp_model_free(model: *mut SurvgpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of signals and covariates the model expects.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_model_dims(model: *const SurvgpModel, n_signals: *mut usize, n_covariates: *mut usize) -> SurvgpStatus {
    if model.is_null() || n_signals.is_null() || n_covariates.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: model or outputs");
    }
    let ck = &(*model).checkpoint;
    *n_signals = ck.n_signals;
    *n_covariates = ck.covariate_names.len();
    SurvgpStatus::Ok
}

/// Event-probability distribution at landmark `t` for horizon `horizon`.
///
/// Observations are `(signal_id, time, value)` triples in raw units, with
/// 1-based signal ids in any order. `covariates` holds the model's
/// covariates (held constant from time 0) and may be null when there are
/// none.
///
/// # Safety
/// Array pointers must reference `n_obs` (respectively the model's
/// covariate count) readable elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_model_predict(
    model: *const SurvgpModel,
    signal_ids: *const u32,
    times: *const f64,
    values: *const f64,
    n_obs: usize,
    covariates: *const f64,
    t: f64,
    horizon: f64,
    out: *mut SurvgpDist,
) -> SurvgpStatus {
    if model.is_null() || out.is_null() || (n_obs > 0 && (signal_ids.is_null() || times.is_null() || values.is_null())) {
        return fail(SurvgpStatus::NullPointer, "null pointer: model, observations or out");
    }
    let ck = &(*model).checkpoint;
    let n_cov = ck.covariate_names.len();
    if n_cov > 0 && covariates.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: covariates");
    }
    guard(|| {
        let slice = |p: *const f64| if n_obs == 0 { &[][..] } else { std::slice::from_raw_parts(p, n_obs) };
        let ids = if n_obs == 0 { &[][..] } else { std::slice::from_raw_parts(signal_ids, n_obs) };
        let (ts, ys) = (slice(times), slice(values));
        let mut per: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ck.n_signals];
        for ((&s, &tt), &y) in ids.iter().zip(ts).zip(ys) {
            let s = s as usize;
            if s == 0 || s > ck.n_signals {
                return Err(Error::InvalidArgument(format!("signal id {s} outside 1..={}", ck.n_signals)));
            }
            per[s - 1].push((tt, y));
        }
        let series = per
            .into_iter()
            .enumerate()
            .map(|(d, mut obs)| {
                obs.sort_by(|a, b| a.0.total_cmp(&b.0));
                ObservationSeries::new(d + 1, obs.iter().map(|o| o.0).collect(), obs.iter().map(|o| o.1).collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cov = if n_cov == 0 { &[][..] } else { std::slice::from_raw_parts(covariates, n_cov) };
        let record = IndividualRecord {
            id: 0,
            series,
            covariates: cov.iter().map(|&x| CovariateSeries { times: vec![0.0], values: vec![x] }).collect(),
            event: None,
        };
        let rows = predict_individual(ck, &record, &[t], horizon)?;
        let d = rows.first().ok_or_else(|| Error::Numerical("no prediction produced".into()))?.dist;
        *out = SurvgpDist { loc: d.loc, scale: d.scale, k: d.k };
        Ok(())
    })
}

/// `q`-quantile of the event probability.
///
/// # Safety
/// `dist` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_quantile(dist: *const SurvgpDist, q: f64, out: *mut f64) -> SurvgpStatus {
    if dist.is_null() || out.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: dist or out");
    }
    guard(|| {
        *out = policy::quantile(&dist_in(&*dist)?, q)?;
        Ok(())
    })
}

/// Mean event probability by Gauss-Hermite quadrature with `n_nodes` nodes.
///
/// # Safety
/// `dist` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_expected_event_probability(dist: *const SurvgpDist, n_nodes: usize, out: *mut f64) -> SurvgpStatus {
    if dist.is_null() || out.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: dist or out");
    }
    guard(|| {
        *out = policy::expected_event_probability(&dist_in(&*dist)?, n_nodes)?;
        Ok(())
    })
}

/// Quantile-risk decision for relative costs `l1`, `l2` and quantile `q`.
///
/// # Safety
/// `dist` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_robust_decide(dist: *const SurvgpDist, l1: f64, l2: f64, q: f64, out: *mut SurvgpDecision) -> SurvgpStatus {
    if dist.is_null() || out.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: dist or out");
    }
    guard(|| {
        let costs = CostSpec::new(l1, l2, q)?;
        *out = decision_out(policy::robust_decide(&dist_in(&*dist)?, &costs));
        Ok(())
    })
}

/// Expected-risk decision for a known event probability `h0`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn survgp_point_decide(h0: f64, l1: f64, l2: f64, out: *mut SurvgpDecision) -> SurvgpStatus {
    if out.is_null() {
        return fail(SurvgpStatus::NullPointer, "null pointer: out");
    }
    guard(|| {
        // q does not enter the point rule
        let costs = CostSpec::new(l1, l2, 0.75)?;
        *out = decision_out(policy::point_decide(h0, &costs)?);
        Ok(())
    })
}
