//! Deterministic simulated SaaS providers and the scenario runner.

pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::ProviderRecord;
use crate::monitoring::MeasurementSample;
use crate::qos::{Aggregation, AttributeCatalog, AttributeSpec};
use crate::sla::{self, Action, NegotiationMessage, Offering, Responder, ResponderError};
use crate::Timestamp;

pub use scenario::{run_scenario, Scenario, ScenarioRun};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("provider `{provider}`, attribute `{attribute}`: {message}")]
    InvalidGenerator { provider: String, attribute: String, message: String },
    #[error("provider `{provider}`: {message}")]
    InvalidConfig { provider: String, message: String },
}

/// True-QoS generator for one attribute. Up/down attributes interpret the
/// value as the probability of an up sample; continuous attributes emit raw
/// values in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "distribution")]
pub enum Generator {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `start + slope * t`, clamped to the attribute's reference bounds.
    Drift {
        start: f64,
        slope: f64,
    },
}

impl Generator {
    fn validate(&self, spec: &AttributeSpec) -> Result<(), String> {
        let (lo, hi) = bounds(spec);
        let inside = |v: f64| v.is_finite() && v >= lo && v <= hi;
        match *self {
            Generator::Constant { value } if !inside(value) => Err(format!("constant {value} outside [{lo}, {hi}]")),
            Generator::Uniform { low, high } if !(inside(low) && inside(high) && low <= high) => {
                Err(format!("uniform({low}, {high}) outside [{lo}, {hi}] or inverted"))
            }
            Generator::Drift { start, slope } if !(inside(start) && slope.is_finite()) => {
                Err(format!("drift start {start} outside [{lo}, {hi}]"))
            }
            _ => Ok(()),
        }
    }

    fn level(&self, t: Timestamp, spec: &AttributeSpec, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = bounds(spec);
        match *self {
            Generator::Constant { value } => value,
            Generator::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.gen_range(low..=high)
                }
            }
            Generator::Drift { start, slope } => (start + slope * t).clamp(lo, hi),
        }
    }
}

fn bounds(spec: &AttributeSpec) -> (f64, f64) {
    match spec.aggregation {
        Aggregation::UpFraction => (0.0, 1.0),
        Aggregation::Mean => (spec.raw_min, spec.raw_max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum NegotiationPolicy {
    AcceptAlways,
    RejectAlways,
    /// Counters the first proposal of a session with guarantees shifted by
    /// `delta`, then accepts.
    CounterOnce {
        delta: Vec<f64>,
    },
    /// Counters every proposal with guarantees shifted by `delta`.
    CounterAlways {
        delta: Vec<f64>,
    },
    /// Accepts when the proposed cost reaches `floor`, else counters at `floor`.
    AcceptIfCostAtLeast {
        floor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProviderConfig {
    pub provider_id: String,
    #[serde(default)]
    pub name: String,
    pub offering: Offering,
    #[serde(default)]
    pub generators: BTreeMap<String, Generator>,
    pub policy: NegotiationPolicy,
    #[serde(default = "default_interval")]
    pub sample_interval_secs: f64,
}

fn default_interval() -> f64 {
    1.0
}

impl SimProviderConfig {
    pub fn endpoint(&self) -> String {
        format!("sim://{}", self.provider_id)
    }

    pub fn record(&self) -> ProviderRecord {
        ProviderRecord {
            provider_id: self.provider_id.clone(),
            name: self.name.clone(),
            offerings: vec![self.offering.clone()],
            endpoint: self.endpoint(),
        }
    }

    pub fn validate(&self, catalog: &AttributeCatalog) -> Result<(), SimError> {
        let cfg_err = |message: String| SimError::InvalidConfig { provider: self.provider_id.clone(), message };
        if !(self.sample_interval_secs.is_finite() && self.sample_interval_secs > 0.0) {
            return Err(cfg_err(format!("sample interval {} must be > 0", self.sample_interval_secs)));
        }
        for (attr, generator) in &self.generators {
            let spec = catalog.get(attr).ok_or_else(|| SimError::InvalidGenerator {
                provider: self.provider_id.clone(),
                attribute: attr.clone(),
                message: "unknown attribute".into(),
            })?;
            generator.validate(spec).map_err(|message| SimError::InvalidGenerator {
                provider: self.provider_id.clone(),
                attribute: attr.clone(),
                message,
            })?;
        }
        match &self.policy {
            NegotiationPolicy::CounterOnce { delta } | NegotiationPolicy::CounterAlways { delta } => {
                if delta.len() != catalog.len() || delta.iter().any(|d| !d.is_finite()) {
                    return Err(cfg_err(format!("delta must have {} finite entries", catalog.len())));
                }
            }
            NegotiationPolicy::AcceptIfCostAtLeast { floor } if !(floor.is_finite() && *floor >= 0.0) => {
                return Err(cfg_err(format!("cost floor {floor} must be >= 0")));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to derive per-provider seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for one provider's stream, independent of other providers.
pub fn provider_seed(scenario_seed: u64, provider_id: &str) -> u64 {
    let mut z = scenario_seed ^ fnv1a(provider_id.as_bytes());
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct StreamState {
    rng: ChaCha8Rng,
    /// Error-diffusion accumulators for up/down attributes.
    carry: BTreeMap<String, f64>,
}

/// A running simulated provider: answers negotiation messages per its policy
/// and emits measurement samples from its generators.
pub struct SimProvider {
    config: SimProviderConfig,
    stream: Mutex<StreamState>,
    countered: Mutex<BTreeSet<String>>,
}

impl std::fmt::Debug for SimProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimProvider").field("provider_id", &self.config.provider_id).finish()
    }
}

impl SimProvider {
    pub fn spawn(config: SimProviderConfig, scenario_seed: u64, catalog: &AttributeCatalog) -> Result<Self, SimError> {
        config.validate(catalog)?;
        let mut rng = ChaCha8Rng::seed_from_u64(provider_seed(scenario_seed, &config.provider_id));
        let mut carry = BTreeMap::new();
        for spec in catalog.attributes() {
            if spec.aggregation == Aggregation::UpFraction && config.generators.contains_key(&spec.id) {
                carry.insert(spec.id.clone(), rng.gen::<f64>());
            }
        }
        Ok(Self { config, stream: Mutex::new(StreamState { rng, carry }), countered: Mutex::new(BTreeSet::new()) })
    }

    pub fn config(&self) -> &SimProviderConfig {
        &self.config
    }

    /// Samples at `from, from + interval, ...` strictly before `to`.
    ///
    /// Up/down attributes use error diffusion: each step adds the current up
    /// probability to a carry and emits an up sample whenever it reaches 1, so
    /// the up count over any run of steps is within one of the summed
    /// probability. The seed fixes the initial carry.
    pub fn emit(&self, from: Timestamp, to: Timestamp, catalog: &AttributeCatalog) -> Vec<MeasurementSample> {
        let mut out = Vec::new();
        let mut state = self.stream.lock();
        let StreamState { rng, carry } = &mut *state;
        let step = self.config.sample_interval_secs;
        let mut k = 0u64;
        loop {
            let t = from + step * k as f64;
            if t >= to {
                break;
            }
            for spec in catalog.attributes() {
                let Some(generator) = self.config.generators.get(&spec.id) else { continue };
                let level = generator.level(t, spec, rng);
                let raw = match spec.aggregation {
                    Aggregation::UpFraction => {
                        let acc = carry.entry(spec.id.clone()).or_insert(0.0);
                        *acc += level.clamp(0.0, 1.0);
                        if *acc >= 1.0 {
                            *acc -= 1.0;
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Aggregation::Mean => level,
                };
                out.push(MeasurementSample {
                    provider_id: self.config.provider_id.clone(),
                    service_type: self.config.offering.service_type.clone(),
                    attribute_id: spec.id.clone(),
                    timestamp: t,
                    raw,
                    source_id: format!("sim:{}", self.config.provider_id),
                });
            }
            k += 1;
        }
        out
    }

    fn shifted(&self, doc: &sla::SlaDocument, delta: &[f64]) -> sla::SlaDocument {
        let mut counter = doc.clone();
        for (g, d) in counter.guarantees.0.iter_mut().zip(delta) {
            *g = (*g + d).clamp(0.0, 1.0);
        }
        counter
    }
}

impl Responder for SimProvider {
    fn respond(&self, message: &NegotiationMessage) -> Result<NegotiationMessage, ResponderError> {
        let reply = |action: Action, document: Option<sla::SlaDocument>| NegotiationMessage {
            session_id: message.session_id.clone(),
            round: message.round,
            action,
            document,
        };
        let Some(doc) = message.document.as_ref() else {
            return Ok(reply(Action::Reject, None));
        };
        if !sla::terms_satisfied(&self.config.offering.terms, &doc.terms) {
            return Ok(reply(Action::Reject, None));
        }
        Ok(match &self.config.policy {
            NegotiationPolicy::AcceptAlways => reply(Action::Accept, None),
            NegotiationPolicy::RejectAlways => reply(Action::Reject, None),
            NegotiationPolicy::CounterOnce { delta } => {
                if self.countered.lock().insert(message.session_id.clone()) {
                    reply(Action::Counter, Some(self.shifted(doc, delta)))
                } else {
                    reply(Action::Accept, None)
                }
            }
            NegotiationPolicy::CounterAlways { delta } => reply(Action::Counter, Some(self.shifted(doc, delta))),
            NegotiationPolicy::AcceptIfCostAtLeast { floor } => {
                if doc.cost >= *floor {
                    reply(Action::Accept, None)
                } else {
                    let mut counter = doc.clone();
                    counter.cost = *floor;
                    reply(Action::Counter, Some(counter))
                }
            }
        })
    }
}
