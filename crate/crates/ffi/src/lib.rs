//! C ABI over `csb_core`.
//!
//! Every function returns a [`CsbStatus`]. On failure a message is available
//! from [`csb_last_error`] on the same thread. Strings returned through `out`
//! parameters are owned by the caller and must be released with
//! [`csb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use serde::Deserialize;

use csb_core::broker::api::{self, ApiRequest, Method};
use csb_core::broker::{Broker, BrokerConfig, Endpoints};
use csb_core::clock::SystemClock;
use csb_core::qos::{self, AttributeCatalog, AttributeSpec, Direction, ProfileInput, QosVector, TierTable};
use csb_core::selection;
use csb_core::RequirementProfile;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidJson = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsbDirection {
    HigherIsBetter = 0,
    LowerIsBetter = 1,
}

/// Opaque broker instance.
pub struct BrokerHandle {
    broker: Broker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CsbStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(CsbStatus::InvalidArgument, e.to_string())
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CsbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsbStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsbStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CsbStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CsbStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, name: &str) -> FfiResult<&'a [f64]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(CsbStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(CsbStatus::NullPointer, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| invalid("output contains NUL"))?;
    if out.is_null() {
        return Err(Failure(CsbStatus::NullPointer, "output pointer is null".into()));
    }
    out.write(c.into_raw());
    Ok(())
}

fn json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> FfiResult<T> {
    serde_json::from_str(text).map_err(|e| Failure(CsbStatus::InvalidJson, format!("{what}: {e}")))
}

#[derive(Deserialize)]
struct OfferingRow {
    provider_id: String,
    qos: QosVector,
}

fn parse_inputs(offerings: &str, profile: &str) -> FfiResult<(Vec<(String, QosVector)>, RequirementProfile)> {
    let rows: Vec<OfferingRow> = json(offerings, "offerings")?;
    let profile = match json::<ProfileInput>(profile, "profile")? {
        ProfileInput::Explicit(p) => p,
        tier => tier.resolve(&TierTable::standard(), &AttributeCatalog::standard()).map_err(invalid)?,
    };
    Ok((rows.into_iter().map(|r| (r.provider_id, r.qos)).collect(), profile))
}

unsafe fn profile_from(
    minima: &[f64],
    weights: *const f64,
    sens: *const f64,
    n: usize,
) -> FfiResult<RequirementProfile> {
    Ok(RequirementProfile {
        minima: QosVector(minima.to_vec()),
        weights: slice_arg(weights, n, "weights")?.to_vec(),
        sensitivities: slice_arg(sens, n, "sensitivities")?.to_vec(),
        budget: None,
    })
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn csb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn csb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Weighted power utility of `qos` under `weights` and `sensitivities`.
///
/// # Safety
/// Each array must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_aggregate_utility(
    qos: *const f64,
    weights: *const f64,
    sensitivities: *const f64,
    n: usize,
    out: *mut f64,
) -> CsbStatus {
    guard(|| {
        let x = slice_arg(qos, n, "qos")?;
        let p = profile_from(x, weights, sensitivities, n)?;
        let u = selection::aggregate_utility(&QosVector(x.to_vec()), &p).map_err(invalid)?;
        write_out(out, u.utility)
    })
}

/// Utility of the consumer minima, the acceptance threshold.
///
/// # Safety
/// Each array must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_acceptance_threshold(
    minima: *const f64,
    weights: *const f64,
    sensitivities: *const f64,
    n: usize,
    out: *mut f64,
) -> CsbStatus {
    guard(|| {
        let m = slice_arg(minima, n, "minima")?;
        let p = profile_from(m, weights, sensitivities, n)?;
        write_out(out, selection::acceptance_threshold(&p).map_err(invalid)?)
    })
}

/// Clamped min-max normalization of a raw measurement to `[0, 1]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_normalize_metric(
    raw: f64,
    direction: CsbDirection,
    raw_min: f64,
    raw_max: f64,
    out: *mut f64,
) -> CsbStatus {
    guard(|| {
        let direction = match direction {
            CsbDirection::HigherIsBetter => Direction::HigherIsBetter,
            CsbDirection::LowerIsBetter => Direction::LowerIsBetter,
        };
        let spec = AttributeSpec::new("metric", "metric", direction, raw_min, raw_max);
        write_out(out, qos::normalize_metric(raw, &spec).map_err(invalid)?)
    })
}

/// Ranks offerings (`[{"provider_id", "qos"}]`) against a profile (explicit
/// or tier form) and returns the ranking as JSON.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_rank_json(
    offerings_json: *const c_char,
    profile_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CsbStatus {
    guard(|| {
        let (offerings, profile) =
            parse_inputs(str_arg(offerings_json, "offerings_json")?, str_arg(profile_json, "profile_json")?)?;
        let ranking = selection::rank_offerings(&offerings, &profile).map_err(invalid)?;
        write_string(out_json, serde_json::to_string(&ranking).map_err(invalid)?)
    })
}

/// Uniform-sensitivity sweep as `beta,subject,utility` CSV.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_sweep_csv(
    offerings_json: *const c_char,
    profile_json: *const c_char,
    beta_min: f64,
    beta_max: f64,
    beta_step: f64,
    out_csv: *mut *mut c_char,
) -> CsbStatus {
    guard(|| {
        let (offerings, profile) =
            parse_inputs(str_arg(offerings_json, "offerings_json")?, str_arg(profile_json, "profile_json")?)?;
        let grid = selection::beta_grid(beta_min, beta_max, beta_step).map_err(invalid)?;
        let table = selection::sensitivity_sweep(&offerings, &profile, &grid).map_err(invalid)?;
        write_string(out_csv, table.to_csv())
    })
}

/// Opens a broker persisted in `data_dir`, or an in-memory one when
/// `data_dir` is NULL. Release with [`csb_broker_free`].
///
/// # Safety
/// `data_dir` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csb_broker_open(data_dir: *const c_char, out: *mut *mut BrokerHandle) -> CsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(CsbStatus::NullPointer, "output pointer is null".into()));
        }
        let endpoints = Arc::new(Endpoints::with_http());
        let broker = if data_dir.is_null() {
            Broker::in_memory(BrokerConfig::default(), Arc::new(SystemClock), endpoints)
        } else {
            let dir = str_arg(data_dir, "data_dir")?;
            Broker::open(Path::new(dir), BrokerConfig::default(), Arc::new(SystemClock), endpoints)
                .map_err(|e| Failure(CsbStatus::Io, e.to_string()))?
        };
        out.write(Box::into_raw(Box::new(BrokerHandle { broker })));
        Ok(())
    })
}

/// # Safety
/// `broker` must be NULL or a handle from [`csb_broker_open`], freed once.
#[no_mangle]
pub unsafe extern "C" fn csb_broker_free(broker: *mut BrokerHandle) {
    if !broker.is_null() {
        drop(Box::from_raw(broker));
    }
}

/// Dispatches one API request (`"GET"`/`"POST"`, path with optional query,
/// JSON body or NULL). The HTTP-style status is written to `status` and the
/// JSON response body to `out_body`; API-level errors still return
/// `CSB_STATUS_OK` with a non-2xx status.
///
/// # Safety
/// `broker` must be a live handle; strings NUL-terminated; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn csb_broker_call(
    broker: *const BrokerHandle,
    method: *const c_char,
    path: *const c_char,
    body_json: *const c_char,
    status: *mut u16,
    out_body: *mut *mut c_char,
) -> CsbStatus {
    guard(|| {
        let handle = broker.as_ref().ok_or_else(|| Failure(CsbStatus::NullPointer, "`broker` is null".into()))?;
        let method = match str_arg(method, "method")? {
            m if m.eq_ignore_ascii_case("GET") => Method::Get,
            m if m.eq_ignore_ascii_case("POST") => Method::Post,
            other => return Err(invalid(format!("unsupported method `{other}`"))),
        };
        let path = str_arg(path, "path")?.to_string();
        let body = if body_json.is_null() { None } else { Some(json(str_arg(body_json, "body_json")?, "body")?) };
        let response = api::handle(&handle.broker, ApiRequest { method, path, body });
        write_out(status, response.status)?;
        write_string(out_body, serde_json::to_string(&response.body).map_err(invalid)?)
    })
}
