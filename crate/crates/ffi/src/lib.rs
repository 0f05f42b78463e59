//! C ABI over `levyhom`.
//!
//! Every entry point returns an [`LhStatus`]; on failure the message is kept
//! per thread and read back with [`lh_last_error_message`]. Configs and sweep
//! reports are opaque handles owned by the caller and released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use levyhom::config::ExperimentConfig;
use levyhom::effective::{effective_kernel, effective_p1, EffectiveResult};
use levyhom::experiments::{run_sweep, SweepReport};
use levyhom::fields::TorusField;
use levyhom::Error;

/// Status codes. The numeric values of the config, numeric and I/O classes
/// match the exit codes of the `levyhom` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LhStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Numeric = 3,
    Io = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Parsed experiment config.
pub struct LhConfig {
    inner: ExperimentConfig,
}

/// Effective kernel, with the cell solution when the case has one.
pub struct LhEffective {
    inner: EffectiveResult,
}

/// Result of an ε-sweep.
pub struct LhSweep {
    inner: SweepReport,
}

/// One row of a sweep. Optional fields are NaN when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LhSweepRecord {
    pub eps: f64,
    pub seed: u64,
    pub rel_error: f64,
    pub gamma_value: f64,
    pub seminorm: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: LhStatus,
    message: String,
}

impl Failure {
    fn new(status: LhStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => LhStatus::Config,
            3 => LhStatus::Numeric,
            _ => LhStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LhStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LhStatus::Ok,
        Ok(Err(fail)) => {
            set_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LhStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(LhStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(LhStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(LhStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(LhStatus::Config, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(LhStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next `lh_` call on the same thread.
#[no_mangle]
pub extern "C" fn lh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `Λ^eff` of a periodic product kernel from cell samples of λ and μ.
///
/// Both arrays hold `n^dim` values in row-major order.
///
/// # Safety
/// `lambda` and `mu` must point to `n^dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_effective_p1(
    dim: usize,
    n: usize,
    lambda: *const f64,
    mu: *const f64,
    out: *mut f64,
) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n
            .checked_pow(dim as u32)
            .ok_or_else(|| Failure::new(LhStatus::OutOfRange, "n^dim overflows"))?;
        let l = TorusField::from_samples(dim, n, slice(lambda, len, "lambda")?.to_vec())?;
        let m = TorusField::from_samples(dim, n, slice(mu, len, "mu")?.to_vec())?;
        *out = effective_p1(&l, &m)?;
        Ok(())
    })
}

/// Loads a JSON config; relative paths resolve against its directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_config_load(path: *const c_char, out: *mut *mut LhConfig) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::load(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(LhConfig { inner: cfg }));
        Ok(())
    })
}

/// Parses a JSON config from memory; relative paths resolve against the cwd.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_config_parse(json: *const c_char, out: *mut *mut LhConfig) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::parse(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(LhConfig { inner: cfg }));
        Ok(())
    })
}

/// Replaces the seed list.
///
/// # Safety
/// `config` must come from `lh_config_load` or `lh_config_parse`;
/// `seeds` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn lh_config_set_seeds(config: *mut LhConfig, seeds: *const u64, len: usize) -> LhStatus {
    guard(|| {
        let cfg = out_ptr(config, "config")?;
        if len > 0 && seeds.is_null() {
            return Err(Failure::new(LhStatus::NullPointer, "seeds is null"));
        }
        cfg.inner.seeds = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(seeds, len).to_vec()
        };
        Ok(())
    })
}

/// Checks the kernel and, when a source and ε values are given, the sweep setup.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lh_config_validate(config: *const LhConfig) -> LhStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.inner;
        cfg.kernel()?;
        if cfg.f.is_some() && !cfg.eps_list().is_empty() {
            cfg.sweep()?;
        }
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_config_free(config: *mut LhConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Computes the effective kernel of the configured model.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_effective_compute(config: *const LhConfig, out: *mut *mut LhEffective) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &borrow(config, "config")?.inner;
        let eff = effective_kernel(&cfg.kernel()?, &cfg.cell_options())?;
        *out = Box::into_raw(Box::new(LhEffective { inner: eff }));
        Ok(())
    })
}

/// Scale of `Λ^eff`. For modulated kernels the macro factor is not included.
///
/// # Safety
/// `eff` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_effective_lambda(eff: *const LhEffective, out: *mut f64) -> LhStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(eff, "eff")?.inner.kernel.scale;
        Ok(())
    })
}

/// Copies the invariant density `p₀` into `buf`.
///
/// `*len` receives the number of samples. Call with `buf = NULL` to query
/// the size; `LH_STATUS_OUT_OF_RANGE` if `cap` is too small. Without a cell
/// problem `*len` is 0.
///
/// # Safety
/// `eff` must be a live handle; `buf` must hold `cap` doubles when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn lh_effective_p0(
    eff: *const LhEffective,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> LhStatus {
    guard(|| {
        let len = out_ptr(len, "len")?;
        let samples = borrow(eff, "eff")?
            .inner
            .cell
            .as_ref()
            .map_or(&[][..], |c| c.p0.samples());
        *len = samples.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < samples.len() {
            return Err(Failure::new(
                LhStatus::OutOfRange,
                format!("buffer holds {cap} values, need {}", samples.len()),
            ));
        }
        ptr::copy_nonoverlapping(samples.as_ptr(), buf, samples.len());
        Ok(())
    })
}

/// # Safety
/// `eff` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_effective_free(eff: *mut LhEffective) {
    if !eff.is_null() {
        drop(Box::from_raw(eff));
    }
}

/// Runs the configured ε-sweep.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_run(config: *const LhConfig, out: *mut *mut LhSweep) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &borrow(config, "config")?.inner;
        let report = run_sweep(&cfg.sweep()?)?;
        *out = Box::into_raw(Box::new(LhSweep { inner: report }));
        Ok(())
    })
}

/// Number of (seed, ε) records.
///
/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_len(sweep: *const LhSweep, out: *mut usize) -> LhStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(sweep, "sweep")?.inner.records.len();
        Ok(())
    })
}

/// Record `index`, ordered by seed then by decreasing ε.
///
/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_record(sweep: *const LhSweep, index: usize, out: *mut LhSweepRecord) -> LhStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let records = &borrow(sweep, "sweep")?.inner.records;
        let r = records.get(index).ok_or_else(|| {
            Failure::new(
                LhStatus::OutOfRange,
                format!("record {index} of {}", records.len()),
            )
        })?;
        *out = LhSweepRecord {
            eps: r.eps,
            seed: r.seed,
            rel_error: r.rel_error,
            gamma_value: r.gamma_value.unwrap_or(f64::NAN),
            seminorm: r.seminorm,
            iterations: r.iterations,
            residual: r.residual,
            wall_ms: r.wall_ms,
        };
        Ok(())
    })
}

/// `Λ^eff` scale used by the sweep.
///
/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_lambda_eff(sweep: *const LhSweep, out: *mut f64) -> LhStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(sweep, "sweep")?.inner.lambda_eff;
        Ok(())
    })
}

/// Fitted log-log rate; NaN with fewer than three ε values.
///
/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_rate(sweep: *const LhSweep, out: *mut f64) -> LhStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(sweep, "sweep")?.inner.rate.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Writes the sweep as CSV.
///
/// # Safety
/// `sweep` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_write_csv(sweep: *const LhSweep, path: *const c_char) -> LhStatus {
    guard(|| {
        let report = &borrow(sweep, "sweep")?.inner;
        report.write_csv(Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `sweep` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_sweep_free(sweep: *mut LhSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}
