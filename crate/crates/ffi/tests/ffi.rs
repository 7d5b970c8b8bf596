use std::ffi::{c_char, CStr, CString};
use std::ptr;

use csb_ffi::*;

const OFFERINGS: &str = r#"[
  {"provider_id": "SP1", "qos": [0.94, 0.70, 0.98, 0.70]},
  {"provider_id": "SP2", "qos": [0.98, 0.60, 0.97, 0.65]},
  {"provider_id": "SP3", "qos": [0.97, 0.80, 0.96, 0.75]},
  {"provider_id": "SP4", "qos": [0.98, 0.85, 0.98, 0.70]}
]"#;
const PROFILE: &str =
    r#"{"minima": [0.98, 0.65, 0.95, 0.90], "weights": [0.35, 0.15, 0.35, 0.15], "sensitivities": [1, 1, 1, 1]}"#;
const W: [f64; 4] = [0.35, 0.15, 0.35, 0.15];
const B: [f64; 4] = [1.0; 4];

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { csb_string_free(s) };
    out
}

fn last_error() -> String {
    let p = csb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn utility_and_threshold() {
    let sp4 = [0.98, 0.85, 0.98, 0.70];
    let mut u = 0.0;
    let st = unsafe { csb_aggregate_utility(sp4.as_ptr(), W.as_ptr(), B.as_ptr(), 4, &mut u) };
    assert_eq!(st, CsbStatus::Ok);
    assert!((u - 0.9185).abs() < 1e-9);
    assert!(csb_last_error().is_null());

    let minima = [0.98, 0.65, 0.95, 0.90];
    let mut t = 0.0;
    let st = unsafe { csb_acceptance_threshold(minima.as_ptr(), W.as_ptr(), B.as_ptr(), 4, &mut t) };
    assert_eq!(st, CsbStatus::Ok);
    assert!((t - 0.9080).abs() < 1e-9);
}

#[test]
fn argument_errors_set_last_error() {
    let bad = [1.5, 0.5, 0.5, 0.5];
    let mut u = 0.0;
    let st = unsafe { csb_aggregate_utility(bad.as_ptr(), W.as_ptr(), B.as_ptr(), 4, &mut u) };
    assert_eq!(st, CsbStatus::InvalidArgument);
    assert!(last_error().contains("1.5"));
    let st = unsafe { csb_aggregate_utility(ptr::null(), W.as_ptr(), B.as_ptr(), 4, &mut u) };
    assert_eq!(st, CsbStatus::NullPointer);
    let st = unsafe { csb_aggregate_utility(bad.as_ptr(), W.as_ptr(), B.as_ptr(), 4, ptr::null_mut()) };
    assert_ne!(st, CsbStatus::Ok);
}

#[test]
fn normalization() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { csb_normalize_metric(150.0, CsbDirection::LowerIsBetter, 100.0, 1100.0, &mut v) },
        CsbStatus::Ok
    );
    assert!((v - 0.95).abs() < 1e-12);
    assert_eq!(
        unsafe { csb_normalize_metric(2000.0, CsbDirection::HigherIsBetter, 0.0, 1000.0, &mut v) },
        CsbStatus::Ok
    );
    assert_eq!(v, 1.0);
    assert_eq!(
        unsafe { csb_normalize_metric(1.0, CsbDirection::HigherIsBetter, 5.0, 5.0, &mut v) },
        CsbStatus::InvalidArgument
    );
}

#[test]
fn rank_and_sweep_json() {
    let o = CString::new(OFFERINGS).unwrap();
    let p = CString::new(PROFILE).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { csb_rank_json(o.as_ptr(), p.as_ptr(), &mut out) }, CsbStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    let order: Vec<&str> =
        v["entries"].as_array().unwrap().iter().map(|e| e["provider_id"].as_str().unwrap()).collect();
    assert_eq!(order, ["SP4", "SP3", "SP1", "SP2"]);

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { csb_sweep_csv(o.as_ptr(), p.as_ptr(), 0.0, 3.0, 0.1, &mut csv) }, CsbStatus::Ok);
    assert_eq!(take(csv).lines().count(), 156);

    let broken = CString::new("[").unwrap();
    assert_eq!(unsafe { csb_rank_json(broken.as_ptr(), p.as_ptr(), &mut out) }, CsbStatus::InvalidJson);
    assert!(last_error().starts_with("offerings"));
    assert_eq!(unsafe { csb_rank_json(ptr::null(), p.as_ptr(), &mut out) }, CsbStatus::NullPointer);
}

fn call(broker: *const BrokerHandle, method: &str, path: &str, body: Option<&str>) -> (u16, serde_json::Value) {
    let m = CString::new(method).unwrap();
    let p = CString::new(path).unwrap();
    let b = body.map(|b| CString::new(b).unwrap());
    let mut status = 0u16;
    let mut out = ptr::null_mut();
    let st = unsafe {
        csb_broker_call(
            broker,
            m.as_ptr(),
            p.as_ptr(),
            b.as_ref().map_or(ptr::null(), |b| b.as_ptr()),
            &mut status,
            &mut out,
        )
    };
    assert_eq!(st, CsbStatus::Ok, "{}", last_error());
    (status, serde_json::from_str(&take(out)).unwrap())
}

#[test]
fn broker_handle_dispatches_api_calls() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut broker = ptr::null_mut();
    assert_eq!(unsafe { csb_broker_open(path.as_ptr(), &mut broker) }, CsbStatus::Ok);

    let provider = r#"{"provider_id": "SP4", "endpoint": "nowhere://sp4",
        "offerings": [{"service_type": "grammar", "qos": [0.98, 0.85, 0.98, 0.70], "price": 120}]}"#;
    let (status, body) = call(broker, "POST", "/providers", Some(provider));
    assert_eq!((status, body["provider_id"].as_str()), (201, Some("SP4")));
    assert_eq!(call(broker, "POST", "/providers", Some(provider)).0, 409);
    let consumer = format!(r#"{{"consumer_id": "uni", "profiles": {{"grammar": {PROFILE}}}}}"#);
    assert_eq!(call(broker, "POST", "/consumers", Some(&consumer)).0, 201);
    let (status, body) =
        call(broker, "POST", "/requests", Some(r#"{"consumer_id": "uni", "service_type": "grammar"}"#));
    assert_eq!(status, 200);
    assert_eq!(body["attempts"][0]["outcome"]["reason"], "unreachable");
    assert_eq!(call(broker, "GET", "/rankings/req-000001", None).0, 200);
    assert_eq!(call(broker, "GET", "/contracts/sla-000001", None).0, 404);

    let del = CString::new("DELETE").unwrap();
    let p = CString::new("/providers").unwrap();
    let (mut status, mut out) = (0u16, ptr::null_mut());
    let st = unsafe { csb_broker_call(broker, del.as_ptr(), p.as_ptr(), ptr::null(), &mut status, &mut out) };
    assert_eq!(st, CsbStatus::InvalidArgument);
    unsafe { csb_broker_free(broker) };

    // reopened handle sees the persisted registry
    assert_eq!(unsafe { csb_broker_open(path.as_ptr(), &mut broker) }, CsbStatus::Ok);
    assert_eq!(call(broker, "POST", "/providers", Some(provider)).0, 409);
    unsafe { csb_broker_free(broker) };
    unsafe { csb_broker_free(ptr::null_mut()) };
}

#[test]
fn in_memory_broker_and_null_checks() {
    let mut broker = ptr::null_mut();
    assert_eq!(unsafe { csb_broker_open(ptr::null(), &mut broker) }, CsbStatus::Ok);
    assert!(!broker.is_null());
    let m = CString::new("GET").unwrap();
    let p = CString::new("/contracts/x").unwrap();
    let (mut status, mut out) = (0u16, ptr::null_mut());
    assert_eq!(
        unsafe { csb_broker_call(ptr::null(), m.as_ptr(), p.as_ptr(), ptr::null(), &mut status, &mut out) },
        CsbStatus::NullPointer
    );
    assert_eq!(
        unsafe { csb_broker_call(broker, m.as_ptr(), p.as_ptr(), ptr::null(), &mut status, &mut out) },
        CsbStatus::Ok
    );
    assert_eq!(status, 404);
    take(out);
    unsafe { csb_broker_free(broker) };
    assert_eq!(unsafe { csb_broker_open(ptr::null(), ptr::null_mut()) }, CsbStatus::NullPointer);
}

#[test]
fn generated_header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/csb.h");
    let text = std::fs::read_to_string(header).unwrap();
    for symbol in ["csb_rank_json", "csb_broker_call", "csb_string_free", "typedef struct CsbBroker CsbBroker"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&cc).args(["-fsyntax-only", "-std=c99", "-x", "c", header]).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping C syntax check, `{cc}` unavailable: {e}"),
    }
}
