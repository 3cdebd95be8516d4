//! C ABI for the `lora-hybrid` simulator.
//!
//! Every fallible call returns an [`LhStatus`]; on failure a message is kept
//! per thread and can be read with [`lh_last_error`]. Configurations are
//! opaque handles created by `lh_config_*` and released with
//! [`lh_config_free`]. Strings handed out by the library are released with
//! [`lh_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lora_hybrid::assignment::{brute_force_optimal, hcrma_frame, hurma_frame, objective, round_robin, DEFAULT_SEARCH_CAP};
use lora_hybrid::channel::{ChannelRealization, Topology};
use lora_hybrid::config::NetworkConfig;
use lora_hybrid::harness::{results_to_csv, run_scenario, ChannelMode, Scenario, Scheme};
use lora_hybrid::planner::{solve_offline, PlannerInput};
use lora_hybrid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    TooLarge = 6,
    Infeasible = 7,
    Panic = 8,
}

/// Opaque network configuration.
pub struct LhConfig {
    inner: NetworkConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: LhStatus, msg: impl Into<String>) -> LhStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> LhStatus {
    match err {
        Error::MissingKey(_)
        | Error::DuplicateKey(_)
        | Error::UnknownKey(_)
        | Error::Syntax { .. }
        | Error::InvalidValue { .. }
        | Error::Parse { .. } => LhStatus::Config,
        Error::Io(_) => LhStatus::Io,
        Error::InstanceTooLarge { .. } | Error::StateSpaceTooLarge { .. } | Error::TooManyElements(..) => {
            LhStatus::TooLarge
        }
        Error::CausalityViolation { .. } | Error::Unservable(_) => LhStatus::Infeasible,
        _ => LhStatus::InvalidArgument,
    }
}

/// Runs `body`, turning errors and panics into a status plus message.
fn guard(body: impl FnOnce() -> Result<(), LhStatus>) -> LhStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            LhStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(LhStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: lora_hybrid::Result<T>) -> Result<T, LhStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, LhStatus> {
    if p.is_null() {
        return Err(fail(LhStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LhStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], LhStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LhStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn config<'a>(cfg: *const LhConfig) -> Result<&'a NetworkConfig, LhStatus> {
    cfg.as_ref()
        .map(|c| &c.inner)
        .ok_or_else(|| fail(LhStatus::NullPointer, "config handle is null"))
}

fn parse_arg<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, LhStatus> {
    lift(s.parse())
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into the library on the
/// same thread.
#[no_mangle]
pub extern "C" fn lh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with the built-in defaults.
#[no_mangle]
pub extern "C" fn lh_config_new() -> *mut LhConfig {
    Box::into_raw(Box::new(LhConfig {
        inner: NetworkConfig::default(),
    }))
}

/// Parses a `key = value` file into a new handle stored in `*out`.
///
/// # Safety
///
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lh_config_load(path: *const c_char, out: *mut *mut LhConfig) -> LhStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LhStatus::NullPointer, "out is null"));
        }
        let path = text(path, "path")?;
        let inner = lift(NetworkConfig::load(path))?;
        *out = Box::into_raw(Box::new(LhConfig { inner }));
        Ok(())
    })
}

/// Applies one `key=value` override. The handle is unchanged on failure.
///
/// # Safety
///
/// `cfg` must come from this library and `assignment` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lh_config_set(cfg: *mut LhConfig, assignment: *const c_char) -> LhStatus {
    guard(|| {
        let handle = cfg
            .as_mut()
            .ok_or_else(|| fail(LhStatus::NullPointer, "config handle is null"))?;
        let assignment = text(assignment, "assignment")?;
        let mut next = handle.inner.clone();
        lift(next.apply_override(assignment))?;
        lift(next.validate())?;
        handle.inner = next;
        Ok(())
    })
}

/// Number of devices `K`; 0 for a null handle.
///
/// # Safety
///
/// `cfg` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lh_config_devices(cfg: *const LhConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.devices)
}

/// Number of channels `M`; 0 for a null handle.
///
/// # Safety
///
/// `cfg` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lh_config_channels(cfg: *const LhConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.channels)
}

/// # Safety
///
/// `cfg` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lh_config_free(cfg: *mut LhConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Assigns channels and spreading factors for one frame.
///
/// `gains` holds `K * M` power gains, device-major. `distances` (length `K`)
/// is needed by `hcrma` only and may be null otherwise. On success
/// `out_channel[k]` is the channel of device `k` or -1, `out_sf[k]` its
/// spreading factor or 0, and `*out_objective` the per-frame score.
///
/// Schemes: `optimal`, `hurma`, `hcrma`, `rr`.
///
/// # Safety
///
/// All pointers must be valid for the stated lengths; `out_objective` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn lh_assign(
    cfg: *const LhConfig,
    scheme: *const c_char,
    gains: *const f64,
    gains_len: usize,
    distances: *const f64,
    out_channel: *mut i32,
    out_sf: *mut u32,
    out_objective: *mut f64,
) -> LhStatus {
    guard(|| {
        let cfg = config(cfg)?;
        let scheme: Scheme = parse_arg(text(scheme, "scheme")?)?;
        let (k, m) = (cfg.devices, cfg.channels);
        if gains_len != k * m {
            return Err(fail(
                LhStatus::InvalidArgument,
                format!("{gains_len} gains for {k} devices and {m} channels"),
            ));
        }
        let gains = slice(gains, gains_len, "gains")?;
        if k > 0 && (out_channel.is_null() || out_sf.is_null()) {
            return Err(fail(LhStatus::NullPointer, "output arrays are null"));
        }
        let r = lift(ChannelRealization::from_gains(0, k, m, gains))?;
        let a = match scheme {
            Scheme::Optimal => lift(brute_force_optimal(&r, cfg, DEFAULT_SEARCH_CAP))?,
            Scheme::Hurma => hurma_frame(&r, cfg),
            Scheme::Hcrma => {
                let d = slice(distances, k, "distances")?;
                hcrma_frame(&r, &Topology::from_distances(d.to_vec(), cfg.path_loss_exponent), cfg)
            }
            Scheme::RoundRobin => round_robin(0, cfg),
            other => {
                return Err(fail(
                    LhStatus::InvalidArgument,
                    format!("scheme {other} is not available here"),
                ))
            }
        };
        for d in 0..k {
            let (ch, sf) = a.slot(d).map_or((-1, 0), |s| (s.channel as i32, s.sf));
            *out_channel.add(d) = ch;
            *out_sf.add(d) = sf;
        }
        if !out_objective.is_null() {
            *out_objective = objective(&a, &r, cfg);
        }
        Ok(())
    })
}

/// Offline optimal battery draws. Writes `len` values to `out_xh` and the
/// harvested value `sum W Xh` to `*out_objective` (may be null).
///
/// # Safety
///
/// `e`, `w`, `x` and `out_xh` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lh_plan(
    e: *const f64,
    w: *const f64,
    x: *const f64,
    len: usize,
    b_max: f64,
    out_xh: *mut f64,
    out_objective: *mut f64,
) -> LhStatus {
    guard(|| {
        let input = PlannerInput {
            e: slice(e, len, "e")?.to_vec(),
            w: slice(w, len, "w")?.to_vec(),
            x: slice(x, len, "x")?.to_vec(),
            b_max,
        };
        if len > 0 && out_xh.is_null() {
            return Err(fail(LhStatus::NullPointer, "out_xh is null"));
        }
        let sol = lift(solve_offline(&input))?;
        ptr::copy_nonoverlapping(sol.xh.as_ptr(), out_xh, len);
        if !out_objective.is_null() {
            *out_objective = sol.objective;
        }
        Ok(())
    })
}

/// Monte Carlo grid cost of a non-learning scheme. On success `*out_csv`
/// receives a results table to be released with [`lh_string_free`].
///
/// `mode` is `iid` or `ge`; `scheme` one of `optimal`, `hurma`, `hcrma`,
/// `random`, `rr`.
///
/// # Safety
///
/// String arguments must be NUL-terminated and `out_csv` valid.
#[no_mangle]
pub unsafe extern "C" fn lh_simulate(
    cfg: *const LhConfig,
    scheme: *const c_char,
    mode: *const c_char,
    trials: usize,
    out_csv: *mut *mut c_char,
) -> LhStatus {
    guard(|| {
        if out_csv.is_null() {
            return Err(fail(LhStatus::NullPointer, "out_csv is null"));
        }
        let cfg = config(cfg)?;
        let scheme: Scheme = parse_arg(text(scheme, "scheme")?)?;
        let mode: ChannelMode = parse_arg(text(mode, "mode")?)?;
        let mut s = Scenario::new(cfg.clone(), mode, scheme);
        s.trials = trials;
        let rows = lift(run_scenario(&s, None, false))?;
        let csv = CString::new(results_to_csv(&rows, false))
            .map_err(|_| fail(LhStatus::Panic, "results contain NUL"))?;
        *out_csv = csv.into_raw();
        Ok(())
    })
}

/// # Safety
///
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
