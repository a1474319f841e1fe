//! C interface. Every function returns a `DfStatus`; results are written
//! through out-pointers. On failure `df_last_error_message` describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diafilt_rto::estimation::{ParamBox, SetMembershipEstimator};
use diafilt_rto::harness::{draw_truth, noise_rng, truth_rng, Case};
use diafilt_rto::policy::{compute_switch_times, singular_control, switching_function};
use diafilt_rto::process::{flux, Measurement, PlantParams, PlantState, ProcessSpec};
use diafilt_rto::reachability::{project_switch_windows, GammaBox};
use diafilt_rto::strategy::{run_strategy, Context, RunOptions, StrategyConfig, StrategyKind};
use diafilt_rto::Error;

/// Status codes. 3 and 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    ModelInvalidated = 3,
    Timeout = 4,
    Domain = 5,
    DegenerateModel = 6,
    UnsupportedStructure = 7,
    Infeasible = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfPolicy {
    pub t1: f64,
    pub t2: f64,
    pub tf: f64,
    pub u_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfWindows {
    pub t1: [f64; 2],
    pub t2: [f64; 2],
    pub tf: [f64; 2],
    pub us: [f64; 2],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfBatchResult {
    pub p_true: DfParams,
    pub t1: f64,
    pub t2: f64,
    pub tf: f64,
    pub regret: f64,
    pub feasible: bool,
    pub reopt_count: u32,
}

/// Opaque process configuration.
pub struct DfProcess(ProcessSpec);

/// Opaque strategy context: process, initial uncertainty and cached decisions.
pub struct DfContext(Context);

/// Opaque streaming set-membership estimator.
pub struct DfEstimator(SetMembershipEstimator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Csv(_) => DfStatus::Config,
        Error::ModelInvalidated(_) => DfStatus::ModelInvalidated,
        Error::Timeout { .. } | Error::Stall { .. } => DfStatus::Timeout,
        Error::Domain(_) => DfStatus::Domain,
        Error::DegenerateModel(_) => DfStatus::DegenerateModel,
        Error::UnsupportedStructure { .. } => DfStatus::UnsupportedStructure,
        Error::Infeasible(_) => DfStatus::Infeasible,
        Error::Io(_) => DfStatus::Io,
    }
}

/// Run `f`, mapping errors and panics to a status and the last-error slot.
fn guard(f: impl FnOnce() -> Result<(), DfStatus>) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            DfStatus::Panic
        }
    }
}

fn lift<T>(r: diafilt_rto::Result<T>) -> Result<T, DfStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, DfStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null pointer argument".into());
        DfStatus::NullPointer
    })
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, DfStatus> {
    p.as_mut().ok_or_else(|| {
        set_error("null output pointer".into());
        DfStatus::NullPointer
    })
}

impl From<DfParams> for PlantParams {
    fn from(p: DfParams) -> Self {
        PlantParams::new(p.p1, p.p2, p.p3)
    }
}

impl From<PlantParams> for DfParams {
    fn from(p: PlantParams) -> Self {
        DfParams { p1: p.p1, p2: p.p2, p3: p.p3 }
    }
}

impl From<ParamBox> for DfBox {
    fn from(b: ParamBox) -> Self {
        DfBox { lo: b.lo, hi: b.hi }
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default process configuration.
///
/// # Safety
/// `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_process_new_default(out_handle: *mut *mut DfProcess) -> DfStatus {
    guard(|| {
        *out(out_handle)? = Box::into_raw(Box::new(DfProcess(ProcessSpec::default())));
        Ok(())
    })
}

/// Process configuration from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out_handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_process_from_json(json: *const c_char, out_handle: *mut *mut DfProcess) -> DfStatus {
    guard(|| {
        let text = CStr::from_ptr(deref(json)?).to_str().map_err(|_| {
            set_error("config is not valid UTF-8".into());
            DfStatus::Config
        })?;
        let spec = lift(ProcessSpec::from_json(text))?;
        *out(out_handle)? = Box::into_raw(Box::new(DfProcess(spec)));
        Ok(())
    })
}

/// # Safety
/// `h` must come from `df_process_new_*` and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn df_process_free(h: *mut DfProcess) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Permeate flux [L/h].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_flux(c1: f64, c2: f64, p: *const DfParams, out_q: *mut f64) -> DfStatus {
    guard(|| {
        *out(out_q)? = lift(flux(c1, c2, &(*deref(p)?).into()))?;
        Ok(())
    })
}

/// Switching function at `(c1, c2)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_switching_function(c1: f64, c2: f64, p: *const DfParams, out_s: *mut f64) -> DfStatus {
    guard(|| {
        *out(out_s)? = lift(switching_function(&PlantState::new(0.0, c1, c2), &(*deref(p)?).into()))?;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_singular_control(p: *const DfParams, out_u: *mut f64) -> DfStatus {
    guard(|| {
        *out(out_u)? = lift(singular_control(&(*deref(p)?).into()))?;
        Ok(())
    })
}

/// Optimal switching times for known parameters.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_compute_switch_times(
    process: *const DfProcess,
    p: *const DfParams,
    out_policy: *mut DfPolicy,
) -> DfStatus {
    guard(|| {
        let spec = &deref(process)?.0;
        let pi = lift(compute_switch_times(&(*deref(p)?).into(), spec))?;
        *out(out_policy)? = DfPolicy { t1: pi.t1, t2: pi.t2, tf: pi.tf, u_s: lift(pi.u_s())? };
        Ok(())
    })
}

/// Switching-time windows of a parameter box.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_project_windows(
    process: *const DfProcess,
    b: *const DfBox,
    out_windows: *mut DfWindows,
) -> DfStatus {
    guard(|| {
        let spec = &deref(process)?.0;
        let b = deref(b)?;
        let pb = lift(ParamBox::new(b.lo, b.hi))?;
        let w = lift(project_switch_windows(&pb, spec))?;
        *out(out_windows)? = DfWindows { t1: w.t1, t2: w.t2, tf: w.tf, us: w.us };
        Ok(())
    })
}

/// Estimator with prior box `prior` and noise bound `sigma`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_estimator_new(
    prior: *const DfBox,
    sigma: f64,
    out_handle: *mut *mut DfEstimator,
) -> DfStatus {
    guard(|| {
        let b = deref(prior)?;
        let pb = lift(ParamBox::new(b.lo, b.hi))?;
        let est = lift(SetMembershipEstimator::new(pb, sigma))?;
        *out(out_handle)? = Box::into_raw(Box::new(DfEstimator(est)));
        Ok(())
    })
}

/// Add one flux measurement and write the updated box.
///
/// # Safety
/// `h` must be a live estimator handle; `out_box` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn df_estimator_push(
    h: *mut DfEstimator,
    t: f64,
    q_m: f64,
    c1: f64,
    c2: f64,
    out_box: *mut DfBox,
) -> DfStatus {
    guard(|| {
        let est = &mut out(h)?.0;
        let b = *lift(est.push(&Measurement { t, q_m, c1, c2 }))?;
        if let Some(o) = out_box.as_mut() {
            *o = b.into();
        }
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_estimator_bounds(h: *const DfEstimator, out_box: *mut DfBox) -> DfStatus {
    guard(|| {
        *out(out_box)? = (*deref(h)?.0.bounds()).into();
        Ok(())
    })
}

/// # Safety
/// `h` must come from `df_estimator_new` and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn df_estimator_free(h: *mut DfEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Strategy context for case 1 (limiting flux) or 2 (generalized) with a
/// gamma-box of relative half-width `pct`, default strategy settings.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_context_new(
    process: *const DfProcess,
    case_id: i32,
    pct: f64,
    out_handle: *mut *mut DfContext,
) -> DfStatus {
    guard(|| {
        let spec = deref(process)?.0.clone();
        let case = lift(case_id.to_string().parse::<Case>())?;
        let g = lift(GammaBox::around(case.nominal_gamma(), pct))?;
        let ctx = lift(Context::new(spec, g, StrategyConfig::default()))?;
        *out(out_handle)? = Box::into_raw(Box::new(DfContext(ctx)));
        Ok(())
    })
}

/// # Safety
/// `h` must come from `df_context_new` and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn df_context_free(h: *mut DfContext) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// One batch of `strategy` (0 optimal, 1 nominal, 2 robust, 3 adaptive) with
/// the truth and noise of batch `batch` under `seed`, as in the Monte Carlo harness.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_run_batch(
    ctx: *const DfContext,
    strategy: i32,
    seed: u64,
    batch: u64,
    out_result: *mut DfBatchResult,
) -> DfStatus {
    guard(|| {
        let ctx = &deref(ctx)?.0;
        let kind = *usize::try_from(strategy).ok().and_then(|i| StrategyKind::ALL.get(i)).ok_or_else(|| {
            set_error(format!("unknown strategy id {strategy}"));
            DfStatus::Config
        })?;
        let p = draw_truth(&ctx.gamma0, ctx.spec.effective_area(), &mut truth_rng(seed, batch));
        let r = lift(run_strategy(kind, ctx, &p, noise_rng(seed, batch), RunOptions::default()))?;
        *out(out_result)? = DfBatchResult {
            p_true: p.into(),
            t1: r.t1,
            t2: r.t2,
            tf: r.tf,
            regret: r.regret,
            feasible: r.feasible,
            reopt_count: r.reopt_count,
        };
        Ok(())
    })
}
