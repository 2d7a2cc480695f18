//! C ABI over the arithdensity core.
//!
//! Conventions:
//! - every fallible function returns an `AdStatus`; results go through out
//!   pointers, which are left untouched on failure;
//! - after a failure `ad_last_error_message` describes it (per thread);
//! - strings handed out by the library are released with `ad_string_free`,
//!   handles with their own `_free` function. Passing NULL to a free is fine.
//!
//! Panics never cross the boundary; they come back as `AD_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use arithdensity::cramer::{self, Schedule};
use arithdensity::forms::IntegerForm;
use arithdensity::harness::{self, ExperimentSpec};
use arithdensity::localdensity::{self, HistogramStore};
use arithdensity::shiftedconv;
use arithdensity::singularintegral::QuadratureSpec;
use arithdensity::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Inadmissible = 4,
    BudgetExceeded = 5,
    InvalidArgument = 6,
    ModelDomain = 7,
    KernelRange = 8,
    Precondition = 9,
    UnknownName = 10,
    Overflow = 11,
    Config = 12,
    Io = 13,
    Numerical = 14,
    Internal = 99,
}

/// Config formats accepted by `ad_run_experiment`.
pub const AD_FORMAT_TOML: i32 = 0;
pub const AD_FORMAT_JSON: i32 = 1;

/// Parsed homogeneous integer form.
pub struct AdForm(IntegerForm);

/// Histogram cache with an evaluation budget. Safe to share between threads.
pub struct AdStore(HistogramStore);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AdStatus {
    match e {
        Error::Parse { .. } | Error::NotHomogeneous { .. } | Error::EmptyForm => AdStatus::Parse,
        Error::Inadmissible { .. } => AdStatus::Inadmissible,
        Error::BudgetExceeded { .. } => AdStatus::BudgetExceeded,
        Error::DimensionMismatch { .. } | Error::ZeroModulus | Error::InvalidBox(_) | Error::InvalidArgument(_) => {
            AdStatus::InvalidArgument
        }
        Error::ModelDomain { .. } => AdStatus::ModelDomain,
        Error::KernelRange { .. } => AdStatus::KernelRange,
        Error::Precondition(_) => AdStatus::Precondition,
        Error::UnknownName { .. } => AdStatus::UnknownName,
        Error::Overflow(_) => AdStatus::Overflow,
        Error::Config(_) | Error::Json(_) => AdStatus::Config,
        Error::Io(_) => AdStatus::Io,
        Error::Quadrature(_) => AdStatus::Numerical,
    }
}

struct Fail(AdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            AdStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AdStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AdStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn form<'a>(p: *const AdForm) -> Result<&'a IntegerForm, Fail> {
    p.as_ref().map(|f| &f.0).ok_or_else(|| null("form"))
}

unsafe fn store<'a>(p: *const AdStore) -> Result<&'a HistogramStore, Fail> {
    p.as_ref().map(|s| &s.0).ok_or_else(|| null("store"))
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ad_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a form such as `"x1^2 + 2*x2^2 - x3^2"`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out_form` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_form_parse(text: *const c_char, out_form: *mut *mut AdForm) -> AdStatus {
    guard(|| {
        let f = IntegerForm::parse(str_arg(text, "text")?)?;
        *out(out_form, "out_form")? = Box::into_raw(Box::new(AdForm(f)));
        Ok(())
    })
}

/// # Safety
/// `f` must be NULL or a handle from `ad_form_parse`, freed once.
#[no_mangle]
pub unsafe extern "C" fn ad_form_free(f: *mut AdForm) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of variables; 0 for NULL.
///
/// # Safety
/// `f` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_form_dim(f: *const AdForm) -> usize {
    f.as_ref().map_or(0, |f| f.0.n())
}

/// Degree; 0 for NULL.
///
/// # Safety
/// `f` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_form_degree(f: *const AdForm) -> u32 {
    f.as_ref().map_or(0, |f| f.0.degree())
}

/// 1 if the form has enough variables for its degree, 0 otherwise or NULL.
///
/// # Safety
/// `f` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_form_admissible(f: *const AdForm) -> i32 {
    f.as_ref().map_or(0, |f| f.0.admissible() as i32)
}

/// Canonical text of the form, to be released with `ad_string_free`.
///
/// # Safety
/// `f` must be a live handle and `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_form_canonical(f: *const AdForm, out_text: *mut *mut c_char) -> AdStatus {
    guard(|| {
        let s = form(f)?.canonical();
        *out(out_text, "out_text")? = c_string(s);
        Ok(())
    })
}

/// Value of the form at `point` (length `len`) reduced mod `q`.
///
/// # Safety
/// `point` must hold `len` values and `out_value` be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_form_evaluate_mod(
    f: *const AdForm,
    point: *const u64,
    len: usize,
    q: u64,
    out_value: *mut u64,
) -> AdStatus {
    guard(|| {
        if point.is_null() && len > 0 {
            return Err(null("point"));
        }
        let pts = if len == 0 { &[][..] } else { std::slice::from_raw_parts(point, len) };
        let v = form(f)?.evaluate_mod(pts, q)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// New histogram store. `budget` 0 takes the default; `cache_dir` may be
/// NULL for memory only.
///
/// # Safety
/// `cache_dir` must be NULL or NUL-terminated; `out_store` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_store_new(budget: u64, cache_dir: *const c_char, out_store: *mut *mut AdStore) -> AdStatus {
    guard(|| {
        let budget = if budget == 0 { localdensity::DEFAULT_BUDGET } else { budget };
        let mut s = HistogramStore::new(budget);
        if !cache_dir.is_null() {
            s = s.with_cache_dir(str_arg(cache_dir, "cache_dir")?);
        }
        *out(out_store, "out_store")? = Box::into_raw(Box::new(AdStore(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from `ad_store_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn ad_store_free(s: *mut AdStore) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Local factor `N(nu; p^m) / p^{m(n-1)}` as a double.
///
/// # Safety
/// Handles must be live and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_local_factor(
    f: *const AdForm,
    s: *const AdStore,
    nu: i64,
    p: u64,
    m: u32,
    out_value: *mut f64,
) -> AdStatus {
    guard(|| {
        let v = localdensity::local_factor(form(f)?, nu as i128, p, m, store(s)?)?;
        *out(out_value, "out_value")? = v.gamma_f64;
        Ok(())
    })
}

/// Truncated singular series at `nu` for primes up to `z`. `schedule` is
/// "floor" or "plus_one"; NULL means "floor". If `out_json` is not NULL it
/// receives the per-prime breakdown.
///
/// # Safety
/// Handles must be live, `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_singular_series(
    f: *const AdForm,
    s: *const AdStore,
    nu: i64,
    z: f64,
    schedule: *const c_char,
    out_value: *mut f64,
    out_json: *mut *mut c_char,
) -> AdStatus {
    guard(|| {
        let sched = if schedule.is_null() { Schedule::parse("floor")? } else { Schedule::parse(str_arg(schedule, "schedule")?)? };
        let plan = cramer::plan_for(sched, z)?;
        let v = localdensity::singular_series(form(f)?, nu as i128, &plan, store(s)?)?;
        let value = out(out_value, "out_value")?;
        if !out_json.is_null() {
            *out_json = c_string(serde_json::to_string(&v).map_err(Error::from)?);
        }
        *value = v.value;
        Ok(())
    })
}

/// `sum_{x mod q} e(a f(x) / q)`.
///
/// # Safety
/// Handles must be live and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ad_exponential_sum(
    f: *const AdForm,
    s: *const AdStore,
    a: i64,
    q: u64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> AdStatus {
    guard(|| {
        let v = localdensity::exponential_sum_form(form(f)?, a as i128, q, store(s)?)?;
        let re = out(out_re, "out_re")?;
        let im = out(out_im, "out_im")?;
        *re = v.re;
        *im = v.im;
        Ok(())
    })
}

/// Ramanujan sum `c_r(a)`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_ramanujan_sum(r: u64, a: i64, out_value: *mut i64) -> AdStatus {
    guard(|| {
        let v = localdensity::ramanujan_sum(r, a as i128)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Modulus `W_z` of the plan as a decimal string.
///
/// # Safety
/// `schedule` NULL or NUL-terminated; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_plan_modulus(z: f64, schedule: *const c_char, out_text: *mut *mut c_char) -> AdStatus {
    guard(|| {
        let sched = if schedule.is_null() { Schedule::parse("floor")? } else { Schedule::parse(str_arg(schedule, "schedule")?)? };
        let plan = cramer::plan_for(sched, z)?;
        *out(out_text, "out_text")? = c_string(plan.w.to_string());
        Ok(())
    })
}

/// Number of `(x, y) mod q` with `x^2 + y^2 = b`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_eta(q: u64, b: i64, out_value: *mut u64) -> AdStatus {
    guard(|| {
        let v = shiftedconv::eta(q, b as i128)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Exact shifted convolution sum over `n <= x`, `n = a mod q`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_shifted_exact(x: u64, q: u64, a: i64, out_value: *mut u64) -> AdStatus {
    guard(|| {
        let v = shiftedconv::shifted_exact(x, q, a as i128)?;
        let v = u64::try_from(v).map_err(|_| Error::Overflow(format!("shifted sum {v} exceeds 64 bits")))?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Predicted main term for `ad_shifted_exact`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_shifted_main_term(x: f64, q: u64, a: i64, out_value: *mut f64) -> AdStatus {
    guard(|| {
        let v = shiftedconv::shifted_main_term(x, q, a as i128)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Runs an experiment config given as text and returns the report JSON.
/// `s` may be NULL for a private default store. `out_pass` (nullable) gets
/// 1 when the verdict passed or is trend-only.
///
/// # Safety
/// `config` NUL-terminated, handles live or NULL, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_run_experiment(
    config: *const c_char,
    format: i32,
    s: *const AdStore,
    out_json: *mut *mut c_char,
    out_pass: *mut i32,
) -> AdStatus {
    guard(|| {
        let text = str_arg(config, "config")?;
        let spec = match format {
            AD_FORMAT_TOML => ExperimentSpec::from_toml(text)?,
            AD_FORMAT_JSON => ExperimentSpec::from_json(text)?,
            _ => return Err(Fail(AdStatus::InvalidArgument, format!("unknown config format {format}"))),
        };
        let own;
        let st = if s.is_null() {
            own = HistogramStore::new(spec.budget.unwrap_or(localdensity::DEFAULT_BUDGET));
            &own
        } else {
            store(s)?
        };
        let report = harness::run_experiment(&spec, st)?.report;
        let slot = out(out_json, "out_json")?;
        if !out_pass.is_null() {
            *out_pass = (report.verdict.pass || !report.verdict.gated) as i32;
        }
        *slot = c_string(report.to_json());
        Ok(())
    })
}

/// Runs an identity suite (or "all") and returns the reports as JSON.
///
/// # Safety
/// `name` NUL-terminated, handles live or NULL, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_run_suite(
    name: *const c_char,
    s: *const AdStore,
    out_json: *mut *mut c_char,
    out_pass: *mut i32,
) -> AdStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let own;
        let st = if s.is_null() {
            own = HistogramStore::default();
            &own
        } else {
            store(s)?
        };
        let reports = harness::run_suite(name, st, &QuadratureSpec::default())?;
        let json = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
        let slot = out(out_json, "out_json")?;
        if !out_pass.is_null() {
            *out_pass = reports.iter().all(|r| r.pass) as i32;
        }
        *slot = c_string(json);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn error_is_per_call() {
        let mut v = 0u64;
        assert_eq!(unsafe { ad_eta(0, 1, &mut v) }, AdStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(ad_last_error_message()) }.to_str().unwrap();
        assert!(!msg.is_empty());
        assert_eq!(unsafe { ad_eta(5, 1, ptr::null_mut()) }, AdStatus::NullPointer);
    }
}
