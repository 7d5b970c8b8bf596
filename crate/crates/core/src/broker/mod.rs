//! The broker: registry, subscriptions, policies, credential gateway, the
//! provisioning coordinator, usage accounting and compliance evaluation.

pub mod api;
pub mod endpoints;
pub mod policy;
pub mod server;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::monitoring::{
    self, ComplianceReport, Indicator, MeasurementSample, MonitoringError, MonitoringStore, Window, WindowCheck,
    DEFAULT_WINDOW_SECS,
};
use crate::persist::{EventLog, Keyed, KeyedStore, PersistError};
use crate::qos::{AttributeCatalog, ProfileInput, QosError, RequirementProfile, TierTable};
use crate::selection::{self, RankingResult, SelectionError};
use crate::sla::{
    self, Contract, ContractStore, DraftDefaults, DraftRequest, FailureReason, NegotiationOutcome, NegotiationSession,
    Offering, QualitativeTerms, SlaError, TranscriptEntry,
};
use crate::Timestamp;

pub use endpoints::{Endpoints, HttpResponder, ResponderDirectory};
pub use policy::{AuthorizationRule, Decision, DenyReason, Effect, Policy, PolicyRule, SelectionRule};

pub const DEFAULT_CREDENTIAL_TTL_SECS: f64 = 24.0 * 3600.0;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 256;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("provider `{0}` is already registered")]
    DuplicateProvider(String),
    #[error("consumer `{0}` is already subscribed")]
    DuplicateConsumer(String),
    #[error("policy `{0}` already exists")]
    DuplicatePolicy(String),
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("unknown consumer `{0}`")]
    UnknownConsumer(String),
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("unknown request `{0}`")]
    UnknownRequest(String),
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("consumer `{consumer}` has no profile for service `{service_type}`")]
    NoProfile { consumer: String, service_type: String },
    #[error("no providers offer service `{0}`")]
    NoProviders(String),
    #[error("principal `{principal}` has no active contract with provider `{provider}`")]
    NoActiveContract { principal: String, provider: String },
    #[error("principal `{principal}` may not `{action}`: {reason:?}")]
    Forbidden { principal: String, action: String, reason: DenyReason },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("malformed period: {0}")]
    MalformedPeriod(String),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Sla(#[from] SlaError),
    #[error(transparent)]
    Monitoring(#[from] MonitoringError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

pub type Result<T> = std::result::Result<T, BrokerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRecord {
    pub provider_id: String,
    #[serde(default)]
    pub name: String,
    pub offerings: Vec<Offering>,
    pub endpoint: String,
}

impl Keyed for ProviderRecord {
    fn key(&self) -> String {
        self.provider_id.clone()
    }
}

impl ProviderRecord {
    pub fn offering(&self, service_type: &str) -> Option<&Offering> {
        self.offerings.iter().find(|o| o.service_type == service_type)
    }

    fn validate(&self, catalog: &AttributeCatalog) -> Result<()> {
        if self.provider_id.is_empty() {
            return Err(BrokerError::Invalid("provider id is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for o in &self.offerings {
            o.qos.validate(catalog)?;
            if !(o.price.is_finite() && o.price >= 0.0) {
                return Err(BrokerError::Invalid(format!(
                    "offering `{}` price {} must be >= 0",
                    o.service_type, o.price
                )));
            }
            if !seen.insert(o.service_type.as_str()) {
                return Err(BrokerError::Invalid(format!("service `{}` offered twice", o.service_type)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerRecord {
    pub consumer_id: String,
    /// Organization tag used for usage reporting (e.g. a college).
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub principals: Vec<String>,
    #[serde(default)]
    pub demanded_terms: QualitativeTerms,
    pub profiles: BTreeMap<String, RequirementProfile>,
}

impl Keyed for ConsumerRecord {
    fn key(&self) -> String {
        self.consumer_id.clone()
    }
}

/// Subscription body; profiles may name a tier instead of explicit minima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerSubscription {
    pub consumer_id: String,
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub principals: Vec<String>,
    #[serde(default)]
    pub demanded_terms: QualitativeTerms,
    pub profiles: BTreeMap<String, ProfileInput>,
}

impl From<ConsumerRecord> for ConsumerSubscription {
    fn from(r: ConsumerRecord) -> Self {
        Self {
            consumer_id: r.consumer_id,
            group: r.group,
            principals: r.principals,
            demanded_terms: r.demanded_terms,
            profiles: r.profiles.into_iter().map(|(k, p)| (k, ProfileInput::Explicit(p))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialMapping {
    pub principal_id: String,
    pub provider_id: String,
    pub token: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl CredentialMapping {
    pub fn is_active(&self, now: Timestamp) -> bool {
        now < self.expires_at
    }
}

impl Keyed for CredentialMapping {
    fn key(&self) -> String {
        format!("{}\u{1f}{}", self.principal_id, self.provider_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub provider_id: String,
    pub session_id: String,
    pub outcome: NegotiationOutcome,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvisioningFailure {
    NoAcceptedProviders,
    NoAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
#[allow(clippy::large_enum_variant)]
pub enum ProvisioningOutcome {
    Contracted { contract: Contract },
    Failed { reason: ProvisioningFailure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningResult {
    pub request_id: String,
    pub consumer_id: String,
    pub service_type: String,
    pub ranking: RankingResult,
    /// Providers negotiated with, in order.
    pub attempted: Vec<String>,
    pub attempts: Vec<Attempt>,
    pub outcome: ProvisioningOutcome,
    pub requested_at: Timestamp,
    pub completed_at: Timestamp,
}

impl Keyed for ProvisioningResult {
    fn key(&self) -> String {
        self.request_id.clone()
    }
}

impl ProvisioningResult {
    pub fn contract(&self) -> Option<&Contract> {
        match &self.outcome {
            ProvisioningOutcome::Contracted { contract } => Some(contract),
            ProvisioningOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UsageKind {
    Request,
    CredentialAccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub timestamp: Timestamp,
    pub kind: UsageKind,
    pub group: String,
    pub consumer_id: String,
    pub service_type: String,
    pub provider_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_id: Option<String>,
}

/// Half-open UTC interval `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub from: Timestamp,
    pub to: Timestamp,
}

impl Period {
    pub fn new(from: Timestamp, to: Timestamp) -> Result<Self> {
        if !(from.is_finite() && to.is_finite()) || from > to {
            return Err(BrokerError::MalformedPeriod(format!("[{from}, {to})")));
        }
        Ok(Self { from, to })
    }

    /// Accepts seconds since the epoch or RFC 3339 timestamps.
    pub fn parse(from: &str, to: &str) -> Result<Self> {
        Self::new(parse_timestamp(from)?, parse_timestamp(to)?)
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.from && t < self.to
    }
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    if let Ok(v) = s.trim().parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
    }
    chrono::DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.timestamp() as f64 + f64::from(d.timestamp_subsec_nanos()) * 1e-9)
        .map_err(|_| BrokerError::MalformedPeriod(format!("cannot parse timestamp `{s}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub service_type: String,
    pub provider_id: Option<String>,
    pub request_count: u64,
    pub credential_access_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub group: String,
    pub period: Period,
    pub rows: Vec<UsageRow>,
    pub total_requests: u64,
    pub total_credential_accesses: u64,
}

pub fn usage_report(events: &[UsageEvent], group: &str, period: Period) -> UsageReport {
    let mut rows: BTreeMap<(String, Option<String>), UsageRow> = BTreeMap::new();
    for e in events.iter().filter(|e| e.group == group && period.contains(e.timestamp)) {
        let row = rows.entry((e.service_type.clone(), e.provider_id.clone())).or_insert_with(|| UsageRow {
            service_type: e.service_type.clone(),
            provider_id: e.provider_id.clone(),
            request_count: 0,
            credential_access_count: 0,
        });
        match e.kind {
            UsageKind::Request => row.request_count += 1,
            UsageKind::CredentialAccess => row.credential_access_count += 1,
        }
    }
    let rows: Vec<UsageRow> = rows.into_values().collect();
    UsageReport {
        group: group.to_string(),
        period,
        total_requests: rows.iter().map(|r| r.request_count).sum(),
        total_credential_accesses: rows.iter().map(|r| r.credential_access_count).sum(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    pub catalog: AttributeCatalog,
    pub tiers: TierTable,
    pub max_rounds: u32,
    pub draft: DraftDefaults,
    pub window_secs: f64,
    pub credential_ttl_secs: f64,
    pub snapshot_every: usize,
    /// Seeds the credential token generator; `None` draws from the OS.
    pub seed: Option<u64>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            catalog: AttributeCatalog::standard(),
            tiers: TierTable::standard(),
            max_rounds: sla::DEFAULT_MAX_ROUNDS,
            draft: DraftDefaults::default(),
            window_secs: DEFAULT_WINDOW_SECS,
            credential_ttl_secs: DEFAULT_CREDENTIAL_TTL_SECS,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            seed: None,
        }
    }
}

/// Every durable record, for comparing broker instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerState {
    pub providers: Vec<ProviderRecord>,
    pub consumers: Vec<ConsumerRecord>,
    pub policies: Vec<Policy>,
    pub contracts: Vec<Contract>,
    pub credentials: Vec<CredentialMapping>,
    pub requests: Vec<ProvisioningResult>,
    pub usage: Vec<UsageEvent>,
    pub samples: Vec<MeasurementSample>,
    pub checks: Vec<WindowCheck>,
}

#[derive(Debug, Default)]
struct Sequences {
    request: u64,
    session: u64,
}

pub struct Broker {
    config: BrokerConfig,
    data_dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    endpoints: Arc<dyn ResponderDirectory>,
    providers: KeyedStore<ProviderRecord>,
    consumers: KeyedStore<ConsumerRecord>,
    policies: KeyedStore<Policy>,
    contracts: ContractStore,
    credentials: KeyedStore<CredentialMapping>,
    requests: KeyedStore<ProvisioningResult>,
    usage: EventLog<UsageEvent>,
    monitoring: MonitoringStore,
    sequences: Mutex<Sequences>,
    credential_gate: Mutex<ChaCha8Rng>,
    compliance_gate: Mutex<()>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker").field("data_dir", &self.data_dir).finish_non_exhaustive()
    }
}

impl Broker {
    pub fn in_memory(config: BrokerConfig, clock: Arc<dyn Clock>, endpoints: Arc<dyn ResponderDirectory>) -> Self {
        let rng = token_rng(config.seed);
        Self {
            config,
            data_dir: None,
            clock,
            endpoints,
            providers: KeyedStore::in_memory(),
            consumers: KeyedStore::in_memory(),
            policies: KeyedStore::in_memory(),
            contracts: ContractStore::in_memory(),
            credentials: KeyedStore::in_memory(),
            requests: KeyedStore::in_memory(),
            usage: EventLog::in_memory(),
            monitoring: MonitoringStore::in_memory(),
            sequences: Mutex::new(Sequences::default()),
            credential_gate: Mutex::new(rng),
            compliance_gate: Mutex::new(()),
        }
    }

    /// Opens (or creates) a broker backed by `dir`, replaying its logs.
    pub fn open(
        dir: impl AsRef<Path>,
        config: BrokerConfig,
        clock: Arc<dyn Clock>,
        endpoints: Arc<dyn ResponderDirectory>,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|source| PersistError::Io { path: dir.clone(), source })?;
        let every = config.snapshot_every;
        let requests = KeyedStore::<ProvisioningResult>::open(&dir, "requests", every)?;
        let all_requests = requests.all();
        let sequences = Sequences {
            request: all_requests.iter().filter_map(|r| seq_of(&r.request_id, "req-")).max().unwrap_or(0),
            session: all_requests
                .iter()
                .flat_map(|r| r.attempts.iter().filter_map(|a| seq_of(&a.session_id, "sla-")))
                .max()
                .unwrap_or(0),
        };
        let rng = token_rng(config.seed);
        Ok(Self {
            providers: KeyedStore::open(&dir, "providers", every)?,
            consumers: KeyedStore::open(&dir, "consumers", every)?,
            policies: KeyedStore::open(&dir, "policies", every)?,
            contracts: ContractStore::open(dir.join("contracts"))?,
            credentials: KeyedStore::open(&dir, "credentials", every)?,
            requests,
            usage: EventLog::open(dir.join("usage.jsonl"))?,
            monitoring: MonitoringStore::open(&dir)?,
            sequences: Mutex::new(sequences),
            credential_gate: Mutex::new(rng),
            compliance_gate: Mutex::new(()),
            data_dir: Some(dir),
            config,
            clock,
            endpoints,
        })
    }

    pub fn with_defaults() -> Self {
        Self::in_memory(BrokerConfig::default(), Arc::new(SystemClock), Arc::new(Endpoints::new()))
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn catalog(&self) -> &AttributeCatalog {
        &self.config.catalog
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn register_provider(&self, record: ProviderRecord) -> Result<String> {
        record.validate(&self.config.catalog)?;
        let id = record.provider_id.clone();
        if !self.providers.insert_new(record)? {
            return Err(BrokerError::DuplicateProvider(id));
        }
        tracing::info!(provider = %id, "provider registered");
        Ok(id)
    }

    pub fn subscribe_consumer(&self, subscription: ConsumerSubscription) -> Result<String> {
        if subscription.consumer_id.is_empty() {
            return Err(BrokerError::Invalid("consumer id is empty".into()));
        }
        let mut profiles = BTreeMap::new();
        for (service, input) in subscription.profiles {
            profiles.insert(service, input.resolve(&self.config.tiers, &self.config.catalog)?);
        }
        let record = ConsumerRecord {
            consumer_id: subscription.consumer_id,
            group: subscription.group,
            principals: subscription.principals,
            demanded_terms: subscription.demanded_terms,
            profiles,
        };
        let id = record.consumer_id.clone();
        if !self.consumers.insert_new(record)? {
            return Err(BrokerError::DuplicateConsumer(id));
        }
        Ok(id)
    }

    pub fn add_policy(&self, policy: Policy) -> Result<String> {
        if let PolicyRule::Selection(SelectionRule { min_acceptance: Some(m), .. }) = &policy.rule {
            if !(0.0..=1.0).contains(m) {
                return Err(BrokerError::Invalid(format!("min_acceptance {m} outside [0, 1]")));
            }
        }
        let id = policy.id.clone();
        if !self.policies.insert_new(policy)? {
            return Err(BrokerError::DuplicatePolicy(id));
        }
        Ok(id)
    }

    pub fn provider(&self, id: &str) -> Option<ProviderRecord> {
        self.providers.get(id)
    }

    pub fn consumer(&self, id: &str) -> Option<ConsumerRecord> {
        self.consumers.get(id)
    }

    pub fn contract(&self, id: &str) -> Result<Contract> {
        self.contracts.get(id).ok_or_else(|| BrokerError::UnknownContract(id.to_string()))
    }

    pub fn contracts(&self) -> Vec<Contract> {
        self.contracts.all()
    }

    pub fn request(&self, id: &str) -> Result<ProvisioningResult> {
        self.requests.get(id).ok_or_else(|| BrokerError::UnknownRequest(id.to_string()))
    }

    pub fn ranking(&self, request_id: &str) -> Result<RankingResult> {
        Ok(self.request(request_id)?.ranking)
    }

    pub fn authorize(&self, principal: &str, action: &str, consumer_id: &str) -> Decision {
        policy::authorize(&self.policies.all(), principal, action, consumer_id)
    }

    fn require(&self, principal: &str, action: &str, consumer_id: &str) -> Result<()> {
        match self.authorize(principal, action, consumer_id) {
            Decision::Allow => Ok(()),
            Decision::Deny(reason) => {
                Err(BrokerError::Forbidden { principal: principal.to_string(), action: action.to_string(), reason })
            }
        }
    }

    fn consumer_of(&self, principal: &str) -> Option<ConsumerRecord> {
        self.consumers.all().into_iter().find(|c| c.principals.iter().any(|p| p == principal))
    }

    /// Returns the live mapping for (principal, provider), minting one if needed.
    pub fn resolve_credentials(&self, principal: &str, provider_id: &str) -> Result<CredentialMapping> {
        let consumer = self.consumer_of(principal).ok_or_else(|| BrokerError::UnknownPrincipal(principal.into()))?;
        self.require(principal, "access_service", &consumer.consumer_id)?;
        let now = self.now();
        let contract = self
            .contracts
            .all()
            .into_iter()
            .find(|c| {
                c.is_active()
                    && c.document.consumer_id == consumer.consumer_id
                    && c.document.provider_id == provider_id
                    && c.document.validity.contains(now)
            })
            .ok_or_else(|| BrokerError::NoActiveContract {
                principal: principal.to_string(),
                provider: provider_id.to_string(),
            })?;

        let key = format!("{principal}\u{1f}{provider_id}");
        let ttl = self.config.credential_ttl_secs;
        let mut rng = self.credential_gate.lock();
        let mapping = match self.credentials.get(&key) {
            Some(m) if m.is_active(now) => m,
            _ => {
                let m = CredentialMapping {
                    principal_id: principal.to_string(),
                    provider_id: provider_id.to_string(),
                    token: format!("{:032x}", rng.gen::<u128>()),
                    issued_at: now,
                    expires_at: now + ttl,
                };
                self.credentials.upsert(m.clone())?;
                m
            }
        };
        drop(rng);
        self.usage.append(UsageEvent {
            timestamp: now,
            kind: UsageKind::CredentialAccess,
            group: consumer.group.clone(),
            consumer_id: consumer.consumer_id.clone(),
            service_type: contract.document.service_type.clone(),
            provider_id: Some(provider_id.to_string()),
            principal_id: Some(principal.to_string()),
        })?;
        Ok(mapping)
    }

    /// Ranks, then negotiates with accepted providers in rank order until one
    /// agrees.
    pub fn handle_service_request(
        &self,
        consumer_id: &str,
        service_type: &str,
        principal: Option<&str>,
    ) -> Result<ProvisioningResult> {
        let consumer = self.consumer(consumer_id).ok_or_else(|| BrokerError::UnknownConsumer(consumer_id.into()))?;
        let profile = consumer.profiles.get(service_type).cloned().ok_or_else(|| BrokerError::NoProfile {
            consumer: consumer_id.to_string(),
            service_type: service_type.to_string(),
        })?;
        if let Some(p) = principal {
            if !consumer.principals.iter().any(|x| x == p) {
                return Err(BrokerError::UnknownPrincipal(p.to_string()));
            }
            self.require(p, "submit_request", consumer_id)?;
        }
        let requested_at = self.now();

        let rules: Vec<SelectionRule> = self
            .policies
            .all()
            .into_iter()
            .filter_map(|p| match p.rule {
                PolicyRule::Selection(r) if r.applies_to(consumer_id, service_type) => Some(r),
                _ => None,
            })
            .collect();
        let candidates: Vec<ProviderRecord> = self
            .providers
            .all()
            .into_iter()
            .filter(|p| p.offering(service_type).is_some())
            .filter(|p| rules.iter().all(|r| r.permits(&p.provider_id)))
            .collect();
        if candidates.is_empty() {
            return Err(BrokerError::NoProviders(service_type.to_string()));
        }
        let offerings: Vec<(String, crate::qos::QosVector)> = candidates
            .iter()
            .map(|p| (p.provider_id.clone(), p.offering(service_type).expect("filtered").qos.clone()))
            .collect();
        let mut threshold = selection::acceptance_threshold(&profile)?;
        for floor in rules.iter().filter_map(|r| r.min_acceptance) {
            threshold = threshold.max(floor);
        }
        let ranking = selection::rank_with_threshold(&offerings, &profile, threshold)?;

        let request_id = {
            let mut seq = self.sequences.lock();
            seq.request += 1;
            format!("req-{:06}", seq.request)
        };
        let draft_request =
            DraftRequest { consumer_id, service_type, profile: &profile, demanded_terms: &consumer.demanded_terms };

        let mut attempts = Vec::new();
        let mut contract = None;
        for entry in ranking.accepted() {
            let record = candidates.iter().find(|p| p.provider_id == entry.provider_id).expect("ranked candidate");
            let offering = record.offering(service_type).expect("filtered");
            let session_id = {
                let mut seq = self.sequences.lock();
                seq.session += 1;
                format!("sla-{:06}", seq.session)
            };
            let draft = sla::draft_sla(&draft_request, &record.provider_id, offering, &self.config.draft, self.now())?;
            let mut session = NegotiationSession::new(session_id.clone(), draft, self.config.max_rounds);
            let outcome = match self.endpoints.resolve(&record.endpoint) {
                Some(responder) => sla::run_negotiation(&mut session, responder.as_ref(), &profile)?,
                None => {
                    tracing::warn!(provider = %record.provider_id, endpoint = %record.endpoint, "endpoint unreachable");
                    NegotiationOutcome::Failed { reason: FailureReason::Unreachable }
                }
            };
            tracing::debug!(request = %request_id, provider = %record.provider_id, ?outcome, "negotiation finished");
            let agreed = match &outcome {
                NegotiationOutcome::Agreed { document, .. } => Some(document.clone()),
                NegotiationOutcome::Failed { .. } => None,
            };
            attempts.push(Attempt {
                provider_id: record.provider_id.clone(),
                session_id: session_id.clone(),
                outcome,
                transcript: session.transcript,
            });
            if let Some(document) = agreed {
                let c = Contract::new(session_id, document, self.now());
                self.contracts.insert(c.clone())?;
                contract = Some(c);
                break;
            }
        }

        let outcome = match contract {
            Some(contract) => ProvisioningOutcome::Contracted { contract },
            None if attempts.is_empty() => {
                ProvisioningOutcome::Failed { reason: ProvisioningFailure::NoAcceptedProviders }
            }
            None => ProvisioningOutcome::Failed { reason: ProvisioningFailure::NoAgreement },
        };
        let result = ProvisioningResult {
            request_id,
            consumer_id: consumer_id.to_string(),
            service_type: service_type.to_string(),
            attempted: attempts.iter().map(|a| a.provider_id.clone()).collect(),
            attempts,
            ranking,
            outcome,
            requested_at,
            completed_at: self.now(),
        };
        self.requests.upsert(result.clone())?;
        self.usage.append(UsageEvent {
            timestamp: requested_at,
            kind: UsageKind::Request,
            group: consumer.group.clone(),
            consumer_id: consumer_id.to_string(),
            service_type: service_type.to_string(),
            provider_id: result.contract().map(|c| c.document.provider_id.clone()),
            principal_id: principal.map(str::to_string),
        })?;
        Ok(result)
    }

    pub fn usage_report(&self, group: &str, period: Period) -> UsageReport {
        self.usage.read(|events| usage_report(events, group, period))
    }

    pub fn ingest_measurements(&self, samples: Vec<MeasurementSample>) -> Result<usize> {
        Ok(self.monitoring.ingest(samples, &self.config.catalog)?)
    }

    pub fn aggregate_window(&self, provider_id: &str, attribute_id: &str, window: Window) -> Result<Indicator> {
        Ok(self.monitoring.aggregate_window(provider_id, attribute_id, window, &self.config.catalog)?)
    }

    /// Checks every elapsed, unchecked window of every active contract up to
    /// `watermark` and applies penalties. Returns the new window checks.
    pub fn evaluate_compliance(&self, watermark: Timestamp) -> Result<Vec<WindowCheck>> {
        let _gate = self.compliance_gate.lock();
        let mut out = Vec::new();
        for contract in self.contracts.all().into_iter().filter(Contract::is_active) {
            let done = self.monitoring.checked_windows(&contract.id);
            for (_, window) in monitoring::elapsed_windows(&contract, self.config.window_secs, done, watermark) {
                let check = self.monitoring.check(&contract, window, &self.config.catalog)?;
                let n = check.violations.len() as u64;
                self.monitoring.record_check(check.clone())?;
                if n > 0 {
                    let credit = self.contracts.update(&contract.id, |c| sla::apply_penalty(c, n))?;
                    tracing::info!(contract = %contract.id, violations = n, credit, "violations recorded");
                }
                out.push(check);
            }
        }
        Ok(out)
    }

    pub fn compliance_report(&self, contract_id: &str, period: Option<Period>) -> Result<ComplianceReport> {
        let contract = self.contract(contract_id)?;
        let period =
            period.unwrap_or(Period { from: contract.document.validity.start, to: contract.document.validity.end });
        let checks = self.monitoring.checks_for(contract_id);
        Ok(monitoring::compliance_report(
            contract_id,
            &contract.document.penalty,
            &checks,
            &self.config.catalog,
            period.from,
            period.to,
        ))
    }

    pub fn terminate_contract(&self, contract_id: &str) -> Result<Contract> {
        self.contracts
            .update(contract_id, |c| {
                c.terminate();
                Ok(c.clone())
            })
            .map_err(|e| match e {
                SlaError::UnknownContract(id) => BrokerError::UnknownContract(id),
                other => other.into(),
            })
    }

    pub fn samples(&self) -> Vec<MeasurementSample> {
        self.monitoring.samples()
    }

    pub fn window_checks(&self, contract_id: &str) -> Vec<WindowCheck> {
        self.monitoring.checks_for(contract_id)
    }

    pub fn state(&self) -> BrokerState {
        BrokerState {
            providers: self.providers.all(),
            consumers: self.consumers.all(),
            policies: self.policies.all(),
            contracts: self.contracts.all(),
            credentials: self.credentials.all(),
            requests: self.requests.all(),
            usage: self.usage.all(),
            samples: self.monitoring.samples(),
            checks: self.monitoring.all_checks(),
        }
    }
}

fn token_rng(seed: Option<u64>) -> ChaCha8Rng {
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    }
}

fn seq_of(id: &str, prefix: &str) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}
