//! C ABI over scalebudget.
//!
//! Every fallible call returns an `int32_t` status (`SB_OK` on success) and
//! writes results through out-pointers. On failure the thread's last error
//! message is available from [`sb_last_error`]. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use scalebudget::allocator::{
    self, AllocConfig, AllocationTrace, CurveSource, RecordedSource, SurrogateKind, SyntheticSource,
};
use scalebudget::curves::{self, CurvePoint, CurveSet, LearningCurve, ModelSpec};
use scalebudget::scaling_law::{self, LndFitOptions, LndObservation, PowerScalingLaw};
use scalebudget::synthgen::{self, ChinchillaParams};
use scalebudget::Error;

pub const SB_OK: i32 = 0;
pub const SB_ERR_NULL_POINTER: i32 = 1;
pub const SB_ERR_INVALID_ARGUMENT: i32 = 2;
pub const SB_ERR_NUMERIC: i32 = 3;
pub const SB_ERR_IO: i32 = 4;
pub const SB_ERR_BUFFER_TOO_SMALL: i32 = 5;
pub const SB_ERR_PANIC: i32 = 6;

pub const SB_PRESET_HOFFMANN: i32 = 0;
pub const SB_PRESET_BESIROGLU: i32 = 1;

pub const SB_STRATEGY_UA: i32 = 0;
pub const SB_STRATEGY_SH: i32 = 1;
pub const SB_STRATEGY_SH_LMC: i32 = 2;
pub const SB_STRATEGY_SH_DE_PL: i32 = 3;
pub const SB_STRATEGY_SH_DE_EXP: i32 = 4;
pub const SB_STRATEGY_SH_DE_MMF: i32 = 5;

/// Five coefficients of L(N, D) = n_c / N^alpha_n + d_c / D^beta_d + e.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbChinchilla {
    pub n_c: f64,
    pub d_c: f64,
    pub e: f64,
    pub alpha_n: f64,
    pub beta_d: f64,
}

impl From<ChinchillaParams> for SbChinchilla {
    fn from(p: ChinchillaParams) -> Self {
        SbChinchilla {
            n_c: p.n_c,
            d_c: p.d_c,
            e: p.e,
            alpha_n: p.alpha_n,
            beta_d: p.beta_d,
        }
    }
}

impl From<SbChinchilla> for ChinchillaParams {
    fn from(p: SbChinchilla) -> Self {
        ChinchillaParams {
            n_c: p.n_c,
            d_c: p.d_c,
            e: p.e,
            alpha_n: p.alpha_n,
            beta_d: p.beta_d,
        }
    }
}

/// L(C) = (C / alpha)^(-gamma) over [region_lo, region_hi].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbLaw {
    pub alpha: f64,
    pub gamma: f64,
    pub region_lo: f64,
    pub region_hi: f64,
}

impl From<PowerScalingLaw> for SbLaw {
    fn from(l: PowerScalingLaw) -> Self {
        SbLaw {
            alpha: l.alpha_c,
            gamma: l.gamma,
            region_lo: l.region_lo,
            region_hi: l.region_hi,
        }
    }
}

impl SbLaw {
    fn law(&self) -> Result<PowerScalingLaw, Error> {
        PowerScalingLaw::new(self.alpha, self.gamma, self.region_lo, self.region_hi)
    }
}

/// Opaque collection of learning curves.
pub struct SbCurveSet {
    inner: CurveSet,
}

/// Opaque allocation trace.
pub struct SbTrace {
    inner: AllocationTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::CurveFormat { .. } | Error::Csv(_) | Error::Json(_) => SB_ERR_IO,
        Error::IllConditionedKernel
        | Error::OptimizerFailed
        | Error::LndFitNotConverged { .. }
        | Error::EmptyFrontier
        | Error::FrontierNotDecreasing => SB_ERR_NUMERIC,
        _ => SB_ERR_INVALID_ARGUMENT,
    }
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(code_for(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SB_ERR_NULL_POINTER, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SB_ERR_INVALID_ARGUMENT, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SB_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SB_ERR_PANIC
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

/// Copies `s` plus a nul terminator into `buf`. `needed` (optional) gets
/// the required capacity including the terminator.
unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Fail> {
    let n = s.len() + 1;
    if let Some(nd) = needed.as_mut() {
        *nd = n;
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    if cap < n {
        return Err(Fail(SB_ERR_BUFFER_TOO_SMALL, format!("need {n} bytes, have {cap}")));
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

fn preset(code: i32) -> Result<ChinchillaParams, Fail> {
    match code {
        SB_PRESET_HOFFMANN => Ok(ChinchillaParams::HOFFMANN),
        SB_PRESET_BESIROGLU => Ok(ChinchillaParams::BESIROGLU),
        other => Err(invalid(format!("unknown preset {other}"))),
    }
}

/// `None` selects the uniform baseline.
fn strategy(code: i32) -> Result<Option<SurrogateKind>, Fail> {
    Ok(match code {
        SB_STRATEGY_UA => None,
        SB_STRATEGY_SH => Some(SurrogateKind::None),
        SB_STRATEGY_SH_LMC => Some(SurrogateKind::Lmc),
        SB_STRATEGY_SH_DE_PL => Some(SurrogateKind::DePl),
        SB_STRATEGY_SH_DE_EXP => Some(SurrogateKind::DeExp),
        SB_STRATEGY_SH_DE_MMF => Some(SurrogateKind::DeMmf),
        other => return Err(invalid(format!("unknown strategy {other}"))),
    })
}

fn budget(flops: f64) -> Result<u128, Fail> {
    if !(flops >= 1.0 && flops.is_finite()) {
        return Err(invalid("budget must be at least one FLOP and finite"));
    }
    Ok(flops.round() as u128)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Coefficients of a named surface.
///
/// # Safety
/// `out` must be null or point to writable memory for one `SbChinchilla`.
#[no_mangle]
pub unsafe extern "C" fn sb_preset(preset_code: i32, out_params: *mut SbChinchilla) -> i32 {
    guard(|| {
        *out(out_params, "out_params")? = preset(preset_code)?.into();
        Ok(())
    })
}

/// L(N, D) for `n` parameters and `d` tokens.
///
/// # Safety
/// `params` must be null or point to a valid `SbChinchilla`; `out_loss`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sb_loss_surface(params: *const SbChinchilla, n: f64, d: f64, out_loss: *mut f64) -> i32 {
    guard(|| {
        let p: ChinchillaParams = (*input(params, "params")?).into();
        *out(out_loss, "out_loss")? = synthgen::loss_surface(&p, n, d)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn sb_curveset_new() -> *mut SbCurveSet {
    Box::into_raw(Box::new(SbCurveSet { inner: CurveSet::new() }))
}

/// Reads a curve file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out_set` must be writable. On
/// success `*out_set` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn sb_curveset_load(path: *const c_char, out_set: *mut *mut SbCurveSet) -> i32 {
    guard(|| {
        let slot = out(out_set, "out_set")?;
        let path = string(path, "path")?;
        let inner = curves::load_curves(path)?;
        *slot = Box::into_raw(Box::new(SbCurveSet { inner }));
        Ok(())
    })
}

/// Writes a curve file.
///
/// # Safety
/// `set` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sb_curveset_save(set: *const SbCurveSet, path: *const c_char) -> i32 {
    guard(|| {
        let set = input(set, "set")?;
        curves::save_curves(&set.inner, string(path, "path")?)?;
        Ok(())
    })
}

/// Adds one trained curve. Compute must be strictly increasing.
///
/// # Safety
/// `set` must be a live handle, `id` a nul-terminated string, and
/// `compute` / `loss` arrays of at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_curveset_add(
    set: *mut SbCurveSet,
    id: *const c_char,
    n_params: u64,
    tokens_per_step: u64,
    compute: *const f64,
    loss: *const f64,
    len: usize,
) -> i32 {
    guard(|| {
        let set = out(set, "set")?;
        let model = ModelSpec::new(string(id, "id")?, n_params, tokens_per_step)?;
        let c = slice(compute, len, "compute")?;
        let l = slice(loss, len, "loss")?;
        let points = c.iter().zip(l).map(|(&c, &l)| CurvePoint::trained(c, l)).collect();
        set.inner.insert(LearningCurve::new(model, points)?)?;
        Ok(())
    })
}

/// Number of curves, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_curveset_len(set: *const SbCurveSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_curveset_free(set: *mut SbCurveSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Fits L(C) to the efficient frontier of the trained curves in `set`.
///
/// # Safety
/// `set` must be a live handle; `out_law` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_law(
    set: *const SbCurveSet,
    region_lo: f64,
    region_hi: f64,
    out_law: *mut SbLaw,
) -> i32 {
    guard(|| {
        let set = input(set, "set")?;
        let slot = out(out_law, "out_law")?;
        *slot = scaling_law::fit_set_law(&set.inner, region_lo, region_hi, false)?.into();
        Ok(())
    })
}

/// Loss predicted by `law` at `compute`; NaN for a null law.
///
/// # Safety
/// `law` must be null or point to a valid `SbLaw`.
#[no_mangle]
pub unsafe extern "C" fn sb_law_eval(law: *const SbLaw, compute: f64) -> f64 {
    match law.as_ref().map(SbLaw::law) {
        Some(Ok(l)) => l.eval(compute),
        _ => f64::NAN,
    }
}

/// Area between two laws: integral of |ln L_a - ln L_b| over log10 compute.
///
/// # Safety
/// `a` and `b` must point to valid laws; `out_abc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_abc(
    a: *const SbLaw,
    b: *const SbLaw,
    region_lo: f64,
    region_hi: f64,
    out_abc: *mut f64,
) -> i32 {
    guard(|| {
        let a = input(a, "a")?.law()?;
        let b = input(b, "b")?.law()?;
        *out(out_abc, "out_abc")? = scaling_law::abc(&a, &b, region_lo, region_hi)?;
        Ok(())
    })
}

/// Huber fit of L(N, D) to `len` observations.
///
/// # Safety
/// `n`, `d` and `loss` must hold `len` doubles each; `out_params` must be
/// writable; `out_objective` may be null.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_lnd(
    n: *const f64,
    d: *const f64,
    loss: *const f64,
    len: usize,
    seed: u64,
    out_params: *mut SbChinchilla,
    out_objective: *mut f64,
) -> i32 {
    guard(|| {
        let slot = out(out_params, "out_params")?;
        let (n, d, l) = (slice(n, len, "n")?, slice(d, len, "d")?, slice(loss, len, "loss")?);
        let obs: Vec<LndObservation> = (0..len)
            .map(|i| LndObservation {
                n: n[i],
                d: d[i],
                loss: l[i],
            })
            .collect();
        let opts = LndFitOptions {
            seed,
            ..LndFitOptions::default()
        };
        let fit = scaling_law::fit_lnd_law(&obs, &opts)?;
        *slot = fit.params.into();
        if let Some(o) = out_objective.as_mut() {
            *o = fit.objective;
        }
        Ok(())
    })
}

fn run(
    models: &[ModelSpec],
    source: &dyn CurveSource,
    budget_flops: f64,
    eta: u32,
    strategy_code: i32,
    seed: u64,
) -> Result<AllocationTrace, Fail> {
    let mut config = AllocConfig::new(budget(budget_flops)?, eta);
    config.seed = seed;
    Ok(match strategy(strategy_code)? {
        None => allocator::run_uniform(models, &config, source)?,
        Some(kind) => allocator::run_sh(models, &config.with_surrogate(kind), source)?,
    })
}

/// Allocates `budget_flops` over synthetic models of the given sizes,
/// drawn noise-free from a preset surface.
///
/// # Safety
/// `sizes` must hold `count` values; `out_trace` must be writable. On
/// success `*out_trace` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn sb_run_sh_synthetic(
    preset_code: i32,
    sizes: *const u64,
    count: usize,
    budget_flops: f64,
    eta: u32,
    strategy_code: i32,
    seed: u64,
    out_trace: *mut *mut SbTrace,
) -> i32 {
    guard(|| {
        let slot = out(out_trace, "out_trace")?;
        let models: Vec<ModelSpec> = slice(sizes, count, "sizes")?
            .iter()
            .map(|&n| ModelSpec::synthetic(n))
            .collect();
        let source = SyntheticSource::noiseless(preset(preset_code)?, budget_flops.max(1.0))?;
        let inner = run(&models, &source, budget_flops, eta, strategy_code, seed)?;
        *slot = Box::into_raw(Box::new(SbTrace { inner }));
        Ok(())
    })
}

/// Allocates `budget_flops` over every curve in `set`, slicing the
/// recorded curves as compute is granted.
///
/// # Safety
/// `set` must be a live handle; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_run_sh_recorded(
    set: *const SbCurveSet,
    budget_flops: f64,
    eta: u32,
    strategy_code: i32,
    seed: u64,
    out_trace: *mut *mut SbTrace,
) -> i32 {
    guard(|| {
        let slot = out(out_trace, "out_trace")?;
        let source = RecordedSource::new(input(set, "set")?.inner.clone());
        let models = source.models();
        let inner = run(&models, &source, budget_flops, eta, strategy_code, seed)?;
        *slot = Box::into_raw(Box::new(SbTrace { inner }));
        Ok(())
    })
}

/// Lowest trained loss and the model that reached it.
///
/// # Safety
/// `trace` must be a live handle; `out_loss` writable; `id_buf` may be
/// null only if `id_cap` is 0 and `id_needed` is used to size it.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_best(
    trace: *const SbTrace,
    out_loss: *mut f64,
    id_buf: *mut c_char,
    id_cap: usize,
    id_needed: *mut usize,
) -> i32 {
    guard(|| {
        let t = input(trace, "trace")?;
        let (id, loss) = t.inner.best()?;
        *out(out_loss, "out_loss")? = loss;
        copy_out(&id, id_buf, id_cap, id_needed)
    })
}

/// FLOPs consumed; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_spent(trace: *const SbTrace) -> f64 {
    trace.as_ref().map_or(0.0, |t| t.inner.spent as f64)
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_round_count(trace: *const SbTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.rounds.len())
}

/// Pool size at the start of `round`.
///
/// # Safety
/// `trace` must be a live handle; `out_size` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_pool_size(trace: *const SbTrace, round: usize, out_size: *mut usize) -> i32 {
    guard(|| {
        let t = input(trace, "trace")?;
        let r = t
            .inner
            .rounds
            .get(round)
            .ok_or_else(|| invalid(format!("round {round} out of range")))?;
        *out(out_size, "out_size")? = r.pool.len();
        Ok(())
    })
}

/// Trained curves of the trace as a new curve-set handle.
///
/// # Safety
/// `trace` must be a live handle; `out_set` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_curves(trace: *const SbTrace, out_set: *mut *mut SbCurveSet) -> i32 {
    guard(|| {
        let t = input(trace, "trace")?;
        let slot = out(out_set, "out_set")?;
        *slot = Box::into_raw(Box::new(SbCurveSet {
            inner: t.inner.final_curves.clone(),
        }));
        Ok(())
    })
}

/// The whole trace as JSON.
///
/// # Safety
/// `trace` must be a live handle; `buf` must hold `cap` bytes; `needed`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_json(trace: *const SbTrace, buf: *mut c_char, cap: usize, needed: *mut usize) -> i32 {
    guard(|| {
        let t = input(trace, "trace")?;
        let json = serde_json::to_string(&t.inner).map_err(Error::from)?;
        copy_out(&json, buf, cap, needed)
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_trace_free(trace: *mut SbTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
