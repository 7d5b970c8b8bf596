//! Scripted end-to-end runs against a broker driven through its API.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{SimError, SimProvider, SimProviderConfig};
use crate::broker::api::{self, ApiRequest, ApiResponse};
use crate::broker::policy::Policy;
use crate::broker::{Broker, BrokerConfig, BrokerError, ConsumerSubscription, Endpoints, ProvisioningOutcome};
use crate::clock::ManualClock;
use crate::qos::{AttributeCatalog, TierTable};
use crate::sla::{PenaltyClause, Responder};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// Broker settings a scenario may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSettings {
    #[serde(default)]
    pub max_rounds: Option<u32>,
    #[serde(default)]
    pub window_secs: Option<f64>,
    #[serde(default)]
    pub penalty: Option<PenaltyClause>,
    #[serde(default)]
    pub validity_secs: Option<f64>,
    #[serde(default)]
    pub credential_ttl_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "action")]
pub enum Step {
    RegisterAll,
    Register {
        provider_id: String,
    },
    SubscribeAll,
    Subscribe {
        consumer_id: String,
    },
    AddPolicy {
        policy: Policy,
    },
    Request {
        consumer_id: String,
        service_type: String,
        #[serde(default)]
        principal_id: Option<String>,
    },
    AdvanceTime {
        secs: f64,
    },
    /// Emits samples over `[now, now + secs)` from the listed providers (all
    /// by default), advances the clock and posts them.
    EmitMeasurements {
        secs: f64,
        #[serde(default)]
        providers: Option<Vec<String>>,
    },
    ResolveCredentials {
        principal_id: String,
        provider_id: String,
    },
    GetRanking {
        request_id: String,
    },
    GetContract {
        contract_id: String,
    },
    UsageReport {
        group: String,
        from: String,
        to: String,
    },
    ComplianceReport {
        contract_id: String,
        #[serde(default)]
        from: Option<String>,
        #[serde(default)]
        to: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "check")]
pub enum Assertion {
    Contracted {
        request_id: String,
        provider_id: String,
    },
    ProvisioningFailed {
        request_id: String,
        reason: String,
    },
    RankingOrder {
        request_id: String,
        order: Vec<String>,
    },
    Accepted {
        request_id: String,
        providers: Vec<String>,
    },
    Attempted {
        request_id: String,
        providers: Vec<String>,
    },
    Violations {
        contract_id: String,
        count: u64,
    },
    PenaltyCredit {
        contract_id: String,
        credited: f64,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    StepStatus {
        step: usize,
        status: u16,
    },
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub description: String,
    #[serde(default = "AttributeCatalog::standard")]
    pub catalog: AttributeCatalog,
    #[serde(default = "TierTable::standard")]
    pub tiers: TierTable,
    #[serde(default)]
    pub config: ScenarioSettings,
    #[serde(default)]
    pub start_time: Timestamp,
    pub providers: Vec<SimProviderConfig>,
    pub consumers: Vec<ConsumerSubscription>,
    pub timeline: Vec<Step>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn broker_config(&self) -> BrokerConfig {
        let mut c = BrokerConfig {
            catalog: self.catalog.clone(),
            tiers: self.tiers.clone(),
            seed: Some(self.seed),
            ..BrokerConfig::default()
        };
        let s = &self.config;
        if let Some(v) = s.max_rounds {
            c.max_rounds = v;
        }
        if let Some(v) = s.window_secs {
            c.window_secs = v;
        }
        if let Some(v) = s.penalty {
            c.draft.penalty = v;
        }
        if let Some(v) = s.validity_secs {
            c.draft.validity_secs = v;
        }
        if let Some(v) = s.credential_ttl_secs {
            c.credential_ttl_secs = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub step: usize,
    pub time: Timestamp,
    pub request: ApiRequest,
    pub status: u16,
    pub response: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSummary {
    pub contract_id: String,
    pub provider_id: String,
    pub violation_count: u64,
    pub credited: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_time: Timestamp,
    pub requests: usize,
    pub contracts: Vec<ContractSummary>,
    pub samples: usize,
    pub routes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub index: usize,
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

pub struct ScenarioRun {
    pub transcript: Vec<TranscriptLine>,
    pub summary: Summary,
    pub assertions: Vec<AssertionResult>,
    pub broker: Arc<Broker>,
}

impl ScenarioRun {
    /// One JSON object per line; identical across runs with the same seed.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.transcript {
            out.push_str(&serde_json::to_string(line).expect("transcript lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

impl std::fmt::Debug for ScenarioRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioRun").field("summary", &self.summary).finish_non_exhaustive()
    }
}

/// Runs a scenario, in memory or backed by `data_dir`.
pub fn run_scenario(scenario: &Scenario, data_dir: Option<&Path>) -> Result<ScenarioRun, ScenarioError> {
    let config = scenario.broker_config();
    let clock = Arc::new(ManualClock::new(scenario.start_time));
    let endpoints = Arc::new(Endpoints::new());
    let mut sims: BTreeMap<String, Arc<SimProvider>> = BTreeMap::new();
    for p in &scenario.providers {
        let sim = Arc::new(SimProvider::spawn(p.clone(), scenario.seed, &scenario.catalog)?);
        if sims.insert(p.provider_id.clone(), sim.clone()).is_some() {
            return Err(ScenarioError::Invalid(format!("provider `{}` listed twice", p.provider_id)));
        }
        endpoints.bind(p.endpoint(), sim as Arc<dyn Responder>);
    }
    let broker = Arc::new(match data_dir {
        Some(dir) => Broker::open(dir, config, clock.clone(), endpoints)?,
        None => Broker::in_memory(config, clock.clone(), endpoints),
    });

    let mut transcript = Vec::new();
    let mut routes = BTreeSet::new();
    let mut call = |step: usize, request: ApiRequest, transcript: &mut Vec<TranscriptLine>| -> ApiResponse {
        routes.insert(api::route_of(request.method, &request.path));
        let response = api::handle(&broker, request.clone());
        tracing::debug!(step, path = %request.path, status = response.status, "scenario call");
        transcript.push(TranscriptLine {
            step,
            time: broker.now(),
            request,
            status: response.status,
            response: response.body.clone(),
        });
        response
    };

    let provider = |id: &str| {
        scenario
            .providers
            .iter()
            .find(|p| p.provider_id == id)
            .ok_or_else(|| ScenarioError::Invalid(format!("timeline names unknown provider `{id}`")))
    };
    let consumer = |id: &str| {
        scenario
            .consumers
            .iter()
            .find(|c| c.consumer_id == id)
            .ok_or_else(|| ScenarioError::Invalid(format!("timeline names unknown consumer `{id}`")))
    };
    for (i, step) in scenario.timeline.iter().enumerate() {
        match step {
            Step::RegisterAll => {
                for p in &scenario.providers {
                    call(i, ApiRequest::post("/providers", to_value(&p.record())), &mut transcript);
                }
            }
            Step::Register { provider_id } => {
                let record = provider(provider_id)?.record();
                call(i, ApiRequest::post("/providers", to_value(&record)), &mut transcript);
            }
            Step::SubscribeAll => {
                for c in &scenario.consumers {
                    call(i, ApiRequest::post("/consumers", to_value(c)), &mut transcript);
                }
            }
            Step::Subscribe { consumer_id } => {
                let c = consumer(consumer_id)?;
                call(i, ApiRequest::post("/consumers", to_value(c)), &mut transcript);
            }
            Step::AddPolicy { policy } => {
                call(i, ApiRequest::post("/policies", to_value(policy)), &mut transcript);
            }
            Step::Request { consumer_id, service_type, principal_id } => {
                let mut body = json!({ "consumer_id": consumer_id, "service_type": service_type });
                if let Some(p) = principal_id {
                    body["principal_id"] = json!(p);
                }
                call(i, ApiRequest::post("/requests", body), &mut transcript);
            }
            Step::AdvanceTime { secs } => {
                check_secs(*secs)?;
                clock.advance(*secs);
            }
            Step::EmitMeasurements { secs, providers } => {
                check_secs(*secs)?;
                let from = broker.now();
                let to = from + secs;
                let mut samples = Vec::new();
                let ids: Vec<String> = match providers {
                    Some(ids) => ids.clone(),
                    None => sims.keys().cloned().collect(),
                };
                for id in &ids {
                    let sim = sims
                        .get(id)
                        .ok_or_else(|| ScenarioError::Invalid(format!("timeline names unknown provider `{id}`")))?;
                    samples.extend(sim.emit(from, to, &scenario.catalog));
                }
                clock.set(to);
                call(i, ApiRequest::post("/measurements", to_value(&samples)), &mut transcript);
            }
            Step::ResolveCredentials { principal_id, provider_id } => {
                let body = json!({ "principal_id": principal_id, "provider_id": provider_id });
                call(i, ApiRequest::post("/credentials", body), &mut transcript);
            }
            Step::GetRanking { request_id } => {
                call(i, ApiRequest::get(format!("/rankings/{request_id}")), &mut transcript);
            }
            Step::GetContract { contract_id } => {
                call(i, ApiRequest::get(format!("/contracts/{contract_id}")), &mut transcript);
            }
            Step::UsageReport { group, from, to } => {
                let q = serde_urlencoded::to_string([("group", group), ("from", from), ("to", to)])
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                call(i, ApiRequest::get(format!("/reports/usage?{q}")), &mut transcript);
            }
            Step::ComplianceReport { contract_id, from, to } => {
                let path = match (from, to) {
                    (Some(f), Some(t)) => {
                        let q = serde_urlencoded::to_string([("from", f), ("to", t)])
                            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                        format!("/compliance/{contract_id}?{q}")
                    }
                    _ => format!("/compliance/{contract_id}"),
                };
                call(i, ApiRequest::get(path), &mut transcript);
            }
        }
    }

    let assertions = scenario
        .assertions
        .iter()
        .enumerate()
        .map(|(index, a)| {
            let (passed, detail) = evaluate(a, &broker, &transcript);
            AssertionResult { index, assertion: a.clone(), passed, detail }
        })
        .collect();
    let summary = Summary {
        final_time: broker.now(),
        requests: broker.state().requests.len(),
        contracts: broker
            .contracts()
            .into_iter()
            .map(|c| ContractSummary {
                contract_id: c.id.clone(),
                provider_id: c.document.provider_id.clone(),
                violation_count: c.violation_count,
                credited: c.credited,
            })
            .collect(),
        samples: broker.samples().len(),
        routes,
    };
    Ok(ScenarioRun { transcript, summary, assertions, broker })
}

fn check_secs(secs: f64) -> Result<(), ScenarioError> {
    if secs.is_finite() && secs >= 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("time step {secs} must be >= 0")))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("scenario values serialize")
}

fn evaluate(a: &Assertion, broker: &Broker, transcript: &[TranscriptLine]) -> (bool, String) {
    let request = |id: &str| broker.request(id).map_err(|e| e.to_string());
    let verdict = |ok: bool, got: String| (ok, if ok { "ok".to_string() } else { got });
    match a {
        Assertion::Contracted { request_id, provider_id } => match request(request_id) {
            Ok(r) => match r.contract() {
                Some(c) => verdict(
                    &c.document.provider_id == provider_id,
                    format!("contracted with {}", c.document.provider_id),
                ),
                None => (false, format!("no contract: {:?}", r.outcome)),
            },
            Err(e) => (false, e),
        },
        Assertion::ProvisioningFailed { request_id, reason } => match request(request_id) {
            Ok(r) => match &r.outcome {
                ProvisioningOutcome::Failed { reason: got } => {
                    let got =
                        serde_json::to_value(got).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    verdict(&got == reason, format!("failed with {got}"))
                }
                other => (false, format!("{other:?}")),
            },
            Err(e) => (false, e),
        },
        Assertion::RankingOrder { request_id, order } => match request(request_id) {
            Ok(r) => {
                let got: Vec<String> = r.ranking.order().into_iter().map(String::from).collect();
                verdict(&got == order, format!("{got:?}"))
            }
            Err(e) => (false, e),
        },
        Assertion::Accepted { request_id, providers } => match request(request_id) {
            Ok(r) => {
                let got: Vec<String> = r.ranking.accepted().map(|e| e.provider_id.clone()).collect();
                verdict(&got == providers, format!("{got:?}"))
            }
            Err(e) => (false, e),
        },
        Assertion::Attempted { request_id, providers } => match request(request_id) {
            Ok(r) => verdict(&r.attempted == providers, format!("{:?}", r.attempted)),
            Err(e) => (false, e),
        },
        Assertion::Violations { contract_id, count } => match broker.contract(contract_id) {
            Ok(c) => verdict(c.violation_count == *count, format!("{} violations", c.violation_count)),
            Err(e) => (false, e.to_string()),
        },
        Assertion::PenaltyCredit { contract_id, credited, tolerance } => match broker.contract(contract_id) {
            Ok(c) => verdict((c.credited - credited).abs() <= *tolerance, format!("credited {}", c.credited)),
            Err(e) => (false, e.to_string()),
        },
        Assertion::StepStatus { step, status } => {
            let got: Vec<u16> = transcript.iter().filter(|l| l.step == *step).map(|l| l.status).collect();
            verdict(!got.is_empty() && got.iter().all(|s| s == status), format!("statuses {got:?}"))
        }
    }
}
