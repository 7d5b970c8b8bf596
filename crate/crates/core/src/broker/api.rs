//! Transport-independent request routing for the broker API.
//!
//! Routes:
//! `POST /providers`, `POST /consumers`, `POST /policies`, `POST /requests`,
//! `GET /rankings/{request_id}`, `POST /credentials`,
//! `GET /reports/usage?group=&from=&to=`, `GET /contracts/{id}`,
//! `POST /measurements`, `GET /compliance/{contract_id}?from=&to=`.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Broker, BrokerError, ConsumerSubscription, Period, Policy, ProviderRecord};
use crate::monitoring::{MeasurementSample, MonitoringError};
use crate::sla::SlaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiRequest {
    pub method: Method,
    /// Path with optional `?query`.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl ApiRequest {
    pub fn get(path: impl Into<String>) -> Self {
        Self { method: Method::Get, path: path.into(), body: None }
    }

    pub fn post(path: impl Into<String>, body: Value) -> Self {
        Self { method: Method::Post, path: path.into(), body: Some(body) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> Self {
        Self::with_status(200, body)
    }

    fn created(body: impl Serialize) -> Self {
        Self::with_status(201, body)
    }

    fn with_status(status: u16, body: impl Serialize) -> Self {
        match serde_json::to_value(body) {
            Ok(body) => Self { status, body },
            Err(e) => Self::error(500, e.to_string()),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

impl BrokerError {
    pub fn status(&self) -> u16 {
        use BrokerError::*;
        match self {
            DuplicateProvider(_) | DuplicateConsumer(_) | DuplicatePolicy(_) => 409,
            UnknownProvider(_) | UnknownConsumer(_) | UnknownPrincipal(_) | UnknownRequest(_) | UnknownContract(_) => {
                404
            }
            Sla(SlaError::UnknownContract(_)) | Monitoring(MonitoringError::UnknownContract(_)) => 404,
            NoProfile { .. } | NoProviders(_) | NoActiveContract { .. } => 422,
            Forbidden { .. } => 403,
            Invalid(_) | MalformedPeriod(_) | Qos(_) | Selection(_) | Monitoring(_) | Sla(_) => 400,
            Persist(_) => 500,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ServiceRequestBody {
    consumer_id: String,
    service_type: String,
    #[serde(default)]
    principal_id: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CredentialBody {
    principal_id: String,
    provider_id: String,
}

fn parse_body<T: DeserializeOwned>(body: Option<Value>) -> Result<T, ApiResponse> {
    let body = body.ok_or_else(|| ApiResponse::error(400, "missing JSON body"))?;
    serde_json::from_value(body).map_err(|e| ApiResponse::error(400, format!("invalid body: {e}")))
}

fn parse_query(q: &str) -> Result<BTreeMap<String, String>, ApiResponse> {
    serde_urlencoded::from_str(q).map_err(|e| ApiResponse::error(400, format!("invalid query: {e}")))
}

fn run<T: Serialize>(r: super::Result<T>, created: bool) -> ApiResponse {
    match r {
        Ok(v) if created => ApiResponse::created(v),
        Ok(v) => ApiResponse::ok(v),
        Err(e) => ApiResponse::error(e.status(), e.to_string()),
    }
}

fn optional_period(q: &BTreeMap<String, String>) -> super::Result<Option<Period>> {
    match (q.get("from"), q.get("to")) {
        (None, None) => Ok(None),
        (Some(f), Some(t)) => Period::parse(f, t).map(Some),
        _ => Err(BrokerError::MalformedPeriod("both `from` and `to` are required".into())),
    }
}

/// Routes one request against the broker.
pub fn handle(broker: &Broker, request: ApiRequest) -> ApiResponse {
    let (path, query) = match request.path.split_once('?') {
        Some((p, q)) => (p, q),
        None => (request.path.as_str(), ""),
    };
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let inner = || -> Result<ApiResponse, ApiResponse> {
        Ok(match (request.method, segments.as_slice()) {
            (Method::Post, ["providers"]) => {
                let record: ProviderRecord = parse_body(request.body.clone())?;
                run(broker.register_provider(record).map(|id| json!({ "provider_id": id })), true)
            }
            (Method::Post, ["consumers"]) => {
                let record: ConsumerSubscription = parse_body(request.body.clone())?;
                run(broker.subscribe_consumer(record).map(|id| json!({ "consumer_id": id })), true)
            }
            (Method::Post, ["policies"]) => {
                let policy: Policy = parse_body(request.body.clone())?;
                run(broker.add_policy(policy).map(|id| json!({ "policy_id": id })), true)
            }
            (Method::Post, ["requests"]) => {
                let body: ServiceRequestBody = parse_body(request.body.clone())?;
                run(
                    broker.handle_service_request(&body.consumer_id, &body.service_type, body.principal_id.as_deref()),
                    false,
                )
            }
            (Method::Get, ["rankings", id]) => run(broker.ranking(id), false),
            (Method::Post, ["credentials"]) => {
                let body: CredentialBody = parse_body(request.body.clone())?;
                run(broker.resolve_credentials(&body.principal_id, &body.provider_id), false)
            }
            (Method::Get, ["reports", "usage"]) => {
                let q = parse_query(query)?;
                let group = q.get("group").cloned().unwrap_or_default();
                let period = match (q.get("from"), q.get("to")) {
                    (Some(f), Some(t)) => Period::parse(f, t),
                    _ => Err(BrokerError::MalformedPeriod("both `from` and `to` are required".into())),
                };
                run(period.map(|p| broker.usage_report(&group, p)), false)
            }
            (Method::Get, ["contracts", id]) => run(broker.contract(id), false),
            (Method::Post, ["measurements"]) => {
                let samples: Vec<MeasurementSample> = parse_body(request.body.clone())?;
                let result = broker.ingest_measurements(samples).and_then(|n| {
                    let checks = broker.evaluate_compliance(broker.now())?;
                    let violations: usize = checks.iter().map(|c| c.violations.len()).sum();
                    Ok(json!({ "accepted": n, "windows_checked": checks.len(), "violations": violations }))
                });
                run(result, false)
            }
            (Method::Get, ["compliance", id]) => {
                let q = parse_query(query)?;
                run(optional_period(&q).and_then(|p| broker.compliance_report(id, p)), false)
            }
            _ => ApiResponse::error(404, format!("no route for {:?} {}", request.method, path)),
        })
    };
    inner().unwrap_or_else(|e| e)
}

/// Route template for a concrete path, used for coverage accounting.
pub fn route_of(method: Method, path: &str) -> String {
    let path = path.split('?').next().unwrap_or("");
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let template = match segments.as_slice() {
        ["rankings", _] => "/rankings/{request_id}".to_string(),
        ["contracts", _] => "/contracts/{id}".to_string(),
        ["compliance", _] => "/compliance/{contract_id}".to_string(),
        other => format!("/{}", other.join("/")),
    };
    let m = match method {
        Method::Get => "GET",
        Method::Post => "POST",
    };
    format!("{m} {template}")
}

pub const ROUTES: [&str; 10] = [
    "POST /providers",
    "POST /consumers",
    "POST /policies",
    "POST /requests",
    "GET /rankings/{request_id}",
    "POST /credentials",
    "GET /reports/usage",
    "GET /contracts/{id}",
    "POST /measurements",
    "GET /compliance/{contract_id}",
];
