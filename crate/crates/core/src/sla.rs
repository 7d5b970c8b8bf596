//! SLA documents, the bounded alternating-offers negotiation, contracts and
//! penalty accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qos::{QosVector, RequirementProfile};
use crate::selection::{self, SelectionError};
use crate::Timestamp;

pub const DEFAULT_MAX_ROUNDS: u32 = 3;

#[derive(Debug, Error)]
pub enum SlaError {
    #[error("offering is for service `{offered}`, request is for `{requested}`")]
    ServiceTypeMismatch { requested: String, offered: String },
    #[error("invalid SLA document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("illegal negotiation transition {from:?} -> {to:?}")]
    IllegalTransition { from: SessionState, to: SessionState },
    #[error("session is in state {0:?}, expected Drafted")]
    NotDrafted(SessionState),
    #[error("contract `{0}` is terminated")]
    ContractTerminated(String),
    #[error("contract `{0}` not found")]
    UnknownContract(String),
    #[error("contract `{0}` already exists")]
    DuplicateContract(String),
    #[error("contract storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("contract encoding: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlaError>;

/// Named qualitative term value: a flag or a categorical label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TermValue {
    Flag(bool),
    Label(String),
}

pub type QualitativeTerms = BTreeMap<String, TermValue>;

/// True when `offered` carries every demanded term with the demanded value.
pub fn terms_satisfied(offered: &QualitativeTerms, demanded: &QualitativeTerms) -> bool {
    demanded.iter().all(|(k, v)| offered.get(k) == Some(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyClause {
    /// Violations tolerated before credits start accruing.
    pub violation_threshold: u32,
    pub credit_per_violation: f64,
}

impl Default for PenaltyClause {
    fn default() -> Self {
        Self { violation_threshold: 3, credit_per_violation: 5.0 }
    }
}

impl PenaltyClause {
    /// Cumulative credit owed after `violations` total violations.
    pub fn credit_for(&self, violations: u64) -> f64 {
        self.credit_per_violation * violations.saturating_sub(u64::from(self.violation_threshold)) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Validity {
    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }
}

/// A provider's advertised offering for one service type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offering {
    pub service_type: String,
    pub qos: QosVector,
    pub price: f64,
    #[serde(default)]
    pub terms: QualitativeTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaDocument {
    pub consumer_id: String,
    pub provider_id: String,
    pub service_type: String,
    pub guarantees: QosVector,
    pub cost: f64,
    pub penalty: PenaltyClause,
    pub validity: Validity,
    #[serde(default)]
    pub terms: QualitativeTerms,
}

impl SlaDocument {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SlaError::InvalidDocument(m));
        if let Some(v) = self.guarantees.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("guarantee {v} outside [0, 1]"));
        }
        if !(self.cost.is_finite() && self.cost >= 0.0) {
            return bad(format!("cost {} must be >= 0", self.cost));
        }
        if self.penalty.violation_threshold < 1 {
            return bad("violation threshold must be >= 1".into());
        }
        if !(self.penalty.credit_per_violation.is_finite() && self.penalty.credit_per_violation >= 0.0) {
            return bad("credit per violation must be >= 0".into());
        }
        if self.validity.start.partial_cmp(&self.validity.end) != Some(std::cmp::Ordering::Less) {
            return bad("validity start must precede end".into());
        }
        Ok(())
    }
}

/// What the consumer asks for, as seen by the drafting step.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftRequest<'a> {
    pub consumer_id: &'a str,
    pub service_type: &'a str,
    pub profile: &'a RequirementProfile,
    pub demanded_terms: &'a QualitativeTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DraftDefaults {
    pub penalty: PenaltyClause,
    /// Contract validity length in seconds.
    pub validity_secs: f64,
}

impl Default for DraftDefaults {
    fn default() -> Self {
        Self { penalty: PenaltyClause::default(), validity_secs: 30.0 * 86_400.0 }
    }
}

/// Opening document: guarantees at the consumer's floor, list price, default
/// penalty clause and the consumer's demanded terms.
pub fn draft_sla(
    request: &DraftRequest<'_>,
    provider_id: &str,
    offering: &Offering,
    defaults: &DraftDefaults,
    now: Timestamp,
) -> Result<SlaDocument> {
    if offering.service_type != request.service_type {
        return Err(SlaError::ServiceTypeMismatch {
            requested: request.service_type.to_string(),
            offered: offering.service_type.clone(),
        });
    }
    let doc = SlaDocument {
        consumer_id: request.consumer_id.to_string(),
        provider_id: provider_id.to_string(),
        service_type: request.service_type.to_string(),
        guarantees: request.profile.minima.clone(),
        cost: offering.price,
        penalty: defaults.penalty,
        validity: Validity { start: now, end: now + defaults.validity_secs },
        terms: request.demanded_terms.clone(),
    };
    doc.validate()?;
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BelowThreshold,
    OverBudget,
    MissingTerms,
    DocumentMismatch,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BelowThreshold => "below-threshold",
            RejectReason::OverBudget => "over-budget",
            RejectReason::MissingTerms => "missing-terms",
            RejectReason::DocumentMismatch => "document-mismatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "verdict", content = "reason")]
pub enum CounterVerdict {
    Accept,
    Reject(RejectReason),
}

/// Threshold rule on the counter-offered guarantees plus the budget ceiling.
pub fn evaluate_counter(counter: &SlaDocument, profile: &RequirementProfile) -> Result<CounterVerdict> {
    let utility = selection::aggregate_utility(&counter.guarantees, profile)?.utility;
    let threshold = selection::acceptance_threshold(profile)?;
    if !selection::is_acceptable(utility, threshold) {
        return Ok(CounterVerdict::Reject(RejectReason::BelowThreshold));
    }
    if let Some(budget) = profile.budget {
        if counter.cost > budget {
            return Ok(CounterVerdict::Reject(RejectReason::OverBudget));
        }
    }
    Ok(CounterVerdict::Accept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Drafted,
    Proposed,
    Countered,
    Agreed,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Agreed | SessionState::Failed)
    }

    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Drafted, Proposed)
                | (Proposed, Agreed)
                | (Proposed, Failed)
                | (Proposed, Countered)
                | (Countered, Agreed)
                | (Countered, Failed)
                | (Countered, Proposed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Propose,
    Accept,
    Reject,
    Counter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Broker,
    Provider,
}

/// Wire message exchanged with a provider negotiation endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationMessage {
    pub session_id: String,
    pub round: u32,
    pub action: Action,
    #[serde(default)]
    pub document: Option<SlaDocument>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Exhausted,
    ProviderRejected,
    Unreachable,
    ProtocolViolation,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::Exhausted => "exhausted",
            FailureReason::ProviderRejected => "provider-rejected",
            FailureReason::Unreachable => "unreachable",
            FailureReason::ProtocolViolation => "protocol-violation",
        })
    }
}

/// Why a step was taken, when the action alone does not say.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", untagged)]
pub enum StepNote {
    Rejected(RejectReason),
    Failed(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u32,
    pub actor: Actor,
    pub action: Action,
    #[serde(default)]
    pub document: Option<SlaDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<StepNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationSession {
    pub session_id: String,
    pub state: SessionState,
    pub round: u32,
    pub max_rounds: u32,
    pub current: SlaDocument,
    pub transcript: Vec<TranscriptEntry>,
    #[serde(default)]
    pub failure: Option<FailureReason>,
}

impl NegotiationSession {
    pub fn new(session_id: impl Into<String>, draft: SlaDocument, max_rounds: u32) -> Self {
        Self {
            session_id: session_id.into(),
            state: SessionState::Drafted,
            round: 0,
            max_rounds: max_rounds.max(1),
            current: draft,
            transcript: Vec::new(),
            failure: None,
        }
    }

    /// Applies one step, enforcing the transition graph and round bound.
    pub fn step(&mut self, entry: TranscriptEntry) -> Result<()> {
        let to = target_state(self.state, entry.actor, entry.action);
        if !self.state.can_transition(to) {
            return Err(SlaError::IllegalTransition { from: self.state, to });
        }
        let opens_round = matches!(entry.action, Action::Propose | Action::Counter) && self.round < self.max_rounds;
        if opens_round {
            self.round += 1;
        } else if entry.action == Action::Propose {
            return Err(SlaError::IllegalTransition { from: self.state, to });
        }
        let mut entry = entry;
        entry.round = self.round;
        if let Some(doc) = &entry.document {
            if matches!(entry.action, Action::Propose | Action::Counter) {
                self.current = doc.clone();
            }
        }
        if to == SessionState::Failed {
            self.failure = Some(match entry.note {
                Some(StepNote::Failed(reason)) => reason,
                _ => FailureReason::ProviderRejected,
            });
        }
        self.state = to;
        self.transcript.push(entry);
        Ok(())
    }

    /// Rebuilds a session from its draft and transcript.
    pub fn replay(
        session_id: &str,
        draft: SlaDocument,
        max_rounds: u32,
        transcript: &[TranscriptEntry],
    ) -> Result<Self> {
        let mut session = Self::new(session_id, draft, max_rounds);
        for entry in transcript {
            session.step(entry.clone())?;
        }
        Ok(session)
    }

    fn message(&self, action: Action) -> NegotiationMessage {
        NegotiationMessage {
            session_id: self.session_id.clone(),
            round: self.round,
            action,
            document: Some(self.current.clone()),
        }
    }
}

fn target_state(from: SessionState, actor: Actor, action: Action) -> SessionState {
    match (actor, action) {
        (_, Action::Propose) => SessionState::Proposed,
        (_, Action::Counter) => SessionState::Countered,
        (_, Action::Accept) => SessionState::Agreed,
        (_, Action::Reject) if from == SessionState::Drafted => SessionState::Drafted,
        (_, Action::Reject) => SessionState::Failed,
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ResponderError(pub String);

/// A provider-side negotiation endpoint.
pub trait Responder: Send + Sync {
    fn respond(&self, message: &NegotiationMessage) -> std::result::Result<NegotiationMessage, ResponderError>;
}

impl<T: Responder + ?Sized> Responder for std::sync::Arc<T> {
    fn respond(&self, message: &NegotiationMessage) -> std::result::Result<NegotiationMessage, ResponderError> {
        (**self).respond(message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum NegotiationOutcome {
    Agreed { document: SlaDocument, round: u32 },
    Failed { reason: FailureReason },
}

fn entry(actor: Actor, action: Action, document: Option<SlaDocument>, note: Option<StepNote>) -> TranscriptEntry {
    TranscriptEntry { round: 0, actor, action, document, note }
}

/// Drives a drafted session to a terminal state.
///
/// The broker opens with its draft. A counter the broker accepts closes the
/// session; a rejected counter triggers a fresh proposal while rounds remain.
pub fn run_negotiation(
    session: &mut NegotiationSession,
    responder: &dyn Responder,
    profile: &RequirementProfile,
) -> Result<NegotiationOutcome> {
    if session.state != SessionState::Drafted {
        return Err(SlaError::NotDrafted(session.state));
    }
    let demanded = session.current.terms.clone();
    let opening = session.current.clone();
    session.step(entry(Actor::Broker, Action::Propose, Some(opening.clone()), None))?;

    loop {
        let reply = match responder.respond(&session.message(Action::Propose)) {
            Ok(reply) => reply,
            Err(_) => return fail(session, FailureReason::Unreachable),
        };
        if reply.session_id != session.session_id {
            return fail(session, FailureReason::ProtocolViolation);
        }
        match reply.action {
            Action::Accept => {
                let doc = session.current.clone();
                session.step(entry(Actor::Provider, Action::Accept, Some(doc.clone()), None))?;
                return Ok(NegotiationOutcome::Agreed { document: doc, round: session.round });
            }
            Action::Reject => {
                session.step(entry(
                    Actor::Provider,
                    Action::Reject,
                    reply.document,
                    Some(StepNote::Failed(FailureReason::ProviderRejected)),
                ))?;
                return Ok(NegotiationOutcome::Failed { reason: FailureReason::ProviderRejected });
            }
            Action::Propose => return fail(session, FailureReason::ProtocolViolation),
            Action::Counter => {
                let Some(counter) = reply.document else {
                    return fail(session, FailureReason::ProtocolViolation);
                };
                if session.round >= session.max_rounds {
                    // no round left to admit the counter
                    session.step(entry(Actor::Provider, Action::Counter, Some(counter), None))?;
                    return fail(session, FailureReason::Exhausted);
                }
                session.step(entry(Actor::Provider, Action::Counter, Some(counter.clone()), None))?;
                let verdict = judge_counter(&counter, &opening, &demanded, profile)?;
                match verdict {
                    CounterVerdict::Accept => {
                        session.step(entry(Actor::Broker, Action::Accept, Some(counter.clone()), None))?;
                        return Ok(NegotiationOutcome::Agreed { document: counter, round: session.round });
                    }
                    CounterVerdict::Reject(reason) => {
                        if session.round >= session.max_rounds {
                            return fail_with(session, FailureReason::Exhausted, Some(counter));
                        }
                        session.step(entry(
                            Actor::Broker,
                            Action::Propose,
                            Some(opening.clone()),
                            Some(StepNote::Rejected(reason)),
                        ))?;
                    }
                }
            }
        }
    }
}

fn judge_counter(
    counter: &SlaDocument,
    opening: &SlaDocument,
    demanded: &QualitativeTerms,
    profile: &RequirementProfile,
) -> Result<CounterVerdict> {
    if counter.consumer_id != opening.consumer_id
        || counter.provider_id != opening.provider_id
        || counter.service_type != opening.service_type
        || counter.validate().is_err()
    {
        return Ok(CounterVerdict::Reject(RejectReason::DocumentMismatch));
    }
    if !terms_satisfied(&counter.terms, demanded) {
        return Ok(CounterVerdict::Reject(RejectReason::MissingTerms));
    }
    evaluate_counter(counter, profile)
}

fn fail(session: &mut NegotiationSession, reason: FailureReason) -> Result<NegotiationOutcome> {
    fail_with(session, reason, None)
}

fn fail_with(
    session: &mut NegotiationSession,
    reason: FailureReason,
    document: Option<SlaDocument>,
) -> Result<NegotiationOutcome> {
    session.step(entry(Actor::Broker, Action::Reject, document, Some(StepNote::Failed(reason))))?;
    Ok(NegotiationOutcome::Failed { reason })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractStatus {
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub id: String,
    pub document: SlaDocument,
    pub agreed_at: Timestamp,
    pub status: ContractStatus,
    pub violation_count: u64,
    /// Total credit issued so far.
    pub credited: f64,
}

impl Contract {
    pub fn new(id: impl Into<String>, document: SlaDocument, agreed_at: Timestamp) -> Self {
        Self { id: id.into(), document, agreed_at, status: ContractStatus::Active, violation_count: 0, credited: 0.0 }
    }

    pub fn is_active(&self) -> bool {
        self.status == ContractStatus::Active
    }

    pub fn terminate(&mut self) {
        self.status = ContractStatus::Terminated;
    }
}

/// Records `new_violations` more violations and returns the credit they add.
pub fn apply_penalty(contract: &mut Contract, new_violations: u64) -> Result<f64> {
    if !contract.is_active() {
        return Err(SlaError::ContractTerminated(contract.id.clone()));
    }
    contract.violation_count += new_violations;
    let owed = contract.document.penalty.credit_for(contract.violation_count);
    let increment = (owed - contract.credited).max(0.0);
    contract.credited += increment;
    Ok(increment)
}

/// Contracts keyed by id, each persisted as `<dir>/<id>.json`.
#[derive(Debug, Default)]
pub struct ContractStore {
    dir: Option<PathBuf>,
    contracts: RwLock<BTreeMap<String, Contract>>,
}

impl ContractStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut contracts = BTreeMap::new();
        for item in fs::read_dir(&dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let contract: Contract = serde_json::from_slice(&fs::read(&path)?)?;
            contracts.insert(contract.id.clone(), contract);
        }
        Ok(Self { dir: Some(dir), contracts: RwLock::new(contracts) })
    }

    fn persist(&self, contract: &Contract) -> Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!(".{}.json.tmp", contract.id));
            fs::write(&tmp, serde_json::to_vec_pretty(contract)?)?;
            fs::rename(&tmp, dir.join(format!("{}.json", contract.id)))?;
        }
        Ok(())
    }

    pub fn insert(&self, contract: Contract) -> Result<()> {
        let mut map = self.contracts.write();
        if map.contains_key(&contract.id) {
            return Err(SlaError::DuplicateContract(contract.id));
        }
        self.persist(&contract)?;
        map.insert(contract.id.clone(), contract);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Contract> {
        self.contracts.read().get(id).cloned()
    }

    /// Atomic read-modify-write of one contract.
    pub fn update<R>(&self, id: &str, f: impl FnOnce(&mut Contract) -> Result<R>) -> Result<R> {
        let mut map = self.contracts.write();
        let current = map.get(id).ok_or_else(|| SlaError::UnknownContract(id.to_string()))?;
        let mut next = current.clone();
        let out = f(&mut next)?;
        if &next != current {
            self.persist(&next)?;
            map.insert(id.to_string(), next);
        }
        Ok(out)
    }

    pub fn all(&self) -> Vec<Contract> {
        self.contracts.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.contracts.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::fixtures::{sample_profile, sample_offerings};
    use parking_lot::Mutex;

    fn offering(price: f64) -> Offering {
        Offering {
            service_type: "grammar-checker".into(),
            qos: sample_offerings()[3].1.clone(),
            price,
            terms: QualitativeTerms::new(),
        }
    }

    fn draft(profile: &RequirementProfile, price: f64) -> SlaDocument {
        let terms = QualitativeTerms::new();
        let req = DraftRequest { consumer_id: "uni", service_type: "grammar-checker", profile, demanded_terms: &terms };
        draft_sla(&req, "SP4", &offering(price), &DraftDefaults::default(), 0.0).unwrap()
    }

    fn with_guarantees(mut doc: SlaDocument, g: &QosVector) -> SlaDocument {
        doc.guarantees = g.clone();
        doc
    }

    #[test]
    fn draft_uses_consumer_minima() {
        let p = sample_profile();
        let doc = draft(&p, 42.0);
        assert_eq!(doc.guarantees, QosVector(vec![0.98, 0.65, 0.95, 0.90]));
        assert_eq!(doc.cost, 42.0);
        assert_eq!(doc.penalty, PenaltyClause::default());
    }

    #[test]
    fn draft_over_budget_still_drafted() {
        let mut p = sample_profile();
        p.budget = Some(100.0);
        assert_eq!(draft(&p, 120.0).cost, 120.0);
    }

    #[test]
    fn draft_service_type_mismatch() {
        let p = sample_profile();
        let terms = QualitativeTerms::new();
        let req =
            DraftRequest { consumer_id: "uni", service_type: "bibliography", profile: &p, demanded_terms: &terms };
        assert!(matches!(
            draft_sla(&req, "SP4", &offering(1.0), &DraftDefaults::default(), 0.0),
            Err(SlaError::ServiceTypeMismatch { .. })
        ));
    }

    #[test]
    fn counter_verdicts() {
        let p = sample_profile();
        let offers = sample_offerings();
        let sp3 = with_guarantees(draft(&p, 10.0), &offers[2].1);
        assert_eq!(evaluate_counter(&sp3, &p).unwrap(), CounterVerdict::Accept);
        let sp2 = with_guarantees(draft(&p, 10.0), &offers[1].1);
        assert_eq!(evaluate_counter(&sp2, &p).unwrap(), CounterVerdict::Reject(RejectReason::BelowThreshold));
        let mut budgeted = p.clone();
        budgeted.budget = Some(100.0);
        let pricey = with_guarantees(draft(&budgeted, 150.0), &offers[2].1);
        assert_eq!(evaluate_counter(&pricey, &budgeted).unwrap(), CounterVerdict::Reject(RejectReason::OverBudget));
    }

    struct Scripted(Mutex<Vec<NegotiationMessage>>);

    impl Scripted {
        fn new(mut replies: Vec<NegotiationMessage>) -> Self {
            replies.reverse();
            Self(Mutex::new(replies))
        }
    }

    impl Responder for Scripted {
        fn respond(&self, m: &NegotiationMessage) -> std::result::Result<NegotiationMessage, ResponderError> {
            let mut reply = self.0.lock().pop().ok_or_else(|| ResponderError("script exhausted".into()))?;
            reply.session_id = m.session_id.clone();
            Ok(reply)
        }
    }

    fn reply(action: Action, document: Option<SlaDocument>) -> NegotiationMessage {
        NegotiationMessage { session_id: String::new(), round: 0, action, document }
    }

    #[test]
    fn accept_anything_agrees_in_round_one() {
        let p = sample_profile();
        let mut s = NegotiationSession::new("s1", draft(&p, 1.0), 3);
        let out = run_negotiation(&mut s, &Scripted::new(vec![reply(Action::Accept, None)]), &p).unwrap();
        assert!(matches!(out, NegotiationOutcome::Agreed { round: 1, .. }));
        assert_eq!(s.state, SessionState::Agreed);
        assert_eq!(s.transcript.len(), 2);
    }

    #[test]
    fn low_counters_exhaust_after_three_rounds() {
        let p = sample_profile();
        let low = with_guarantees(draft(&p, 1.0), &sample_offerings()[1].1);
        let replies = vec![reply(Action::Counter, Some(low)); 10];
        let responder = Scripted::new(replies);
        let mut s = NegotiationSession::new("s2", draft(&p, 1.0), 3);
        let out = run_negotiation(&mut s, &responder, &p).unwrap();
        assert_eq!(out, NegotiationOutcome::Failed { reason: FailureReason::Exhausted });
        assert_eq!(s.round, 3);
        assert_eq!(s.failure, Some(FailureReason::Exhausted));
        // two responder interactions fit in three rounds
        assert_eq!(responder.0.lock().len(), 8);
        let actions: Vec<Action> = s.transcript.iter().map(|e| e.action).collect();
        assert_eq!(actions, vec![Action::Propose, Action::Counter, Action::Propose, Action::Counter, Action::Reject]);
    }

    #[test]
    fn acceptable_counter_agrees_in_round_two() {
        let p = sample_profile();
        let good = with_guarantees(draft(&p, 1.0), &sample_offerings()[2].1);
        let mut s = NegotiationSession::new("s3", draft(&p, 1.0), 3);
        let out =
            run_negotiation(&mut s, &Scripted::new(vec![reply(Action::Counter, Some(good.clone()))]), &p).unwrap();
        assert_eq!(out, NegotiationOutcome::Agreed { document: good, round: 2 });
        let steps: Vec<(u32, Actor, Action)> = s.transcript.iter().map(|e| (e.round, e.actor, e.action)).collect();
        assert_eq!(
            steps,
            vec![
                (1, Actor::Broker, Action::Propose),
                (2, Actor::Provider, Action::Counter),
                (2, Actor::Broker, Action::Accept)
            ]
        );
    }

    #[test]
    fn reject_and_unreachable() {
        let p = sample_profile();
        let mut s = NegotiationSession::new("s4", draft(&p, 1.0), 3);
        let out = run_negotiation(&mut s, &Scripted::new(vec![reply(Action::Reject, None)]), &p).unwrap();
        assert_eq!(out, NegotiationOutcome::Failed { reason: FailureReason::ProviderRejected });

        let mut s = NegotiationSession::new("s5", draft(&p, 1.0), 3);
        let out = run_negotiation(&mut s, &Scripted::new(vec![]), &p).unwrap();
        assert_eq!(out, NegotiationOutcome::Failed { reason: FailureReason::Unreachable });
        assert!(run_negotiation(&mut s, &Scripted::new(vec![]), &p).is_err());
    }

    #[test]
    fn missing_terms_counter_is_rejected() {
        let p = sample_profile();
        let mut demanded = QualitativeTerms::new();
        demanded.insert("data-export-supported".into(), TermValue::Flag(true));
        let req = DraftRequest {
            consumer_id: "uni",
            service_type: "grammar-checker",
            profile: &p,
            demanded_terms: &demanded,
        };
        let opening = draft_sla(&req, "SP4", &offering(1.0), &DraftDefaults::default(), 0.0).unwrap();
        let mut stripped = opening.clone();
        stripped.terms.clear();
        let mut s = NegotiationSession::new("s6", opening, 3);
        let out = run_negotiation(&mut s, &Scripted::new(vec![reply(Action::Counter, Some(stripped)); 3]), &p).unwrap();
        assert_eq!(out, NegotiationOutcome::Failed { reason: FailureReason::Exhausted });
        assert_eq!(s.transcript[2].note, Some(StepNote::Rejected(RejectReason::MissingTerms)));
        assert_eq!(s.transcript.last().unwrap().note, Some(StepNote::Failed(FailureReason::Exhausted)));
    }

    #[test]
    fn transcript_replays_to_same_state() {
        let p = sample_profile();
        let good = with_guarantees(draft(&p, 1.0), &sample_offerings()[2].1);
        let low = with_guarantees(draft(&p, 1.0), &sample_offerings()[1].1);
        let mut s = NegotiationSession::new("s7", draft(&p, 1.0), 4);
        let script = vec![reply(Action::Counter, Some(low)), reply(Action::Counter, Some(good))];
        run_negotiation(&mut s, &Scripted::new(script), &p).unwrap();
        let replayed = NegotiationSession::replay("s7", draft(&p, 1.0), 4, &s.transcript).unwrap();
        assert_eq!(replayed, s);
    }

    #[test]
    fn illegal_transitions_rejected() {
        let p = sample_profile();
        let mut s = NegotiationSession::new("s8", draft(&p, 1.0), 3);
        assert!(s.step(entry(Actor::Provider, Action::Accept, None, None)).is_err());
        s.step(entry(Actor::Broker, Action::Propose, None, None)).unwrap();
        assert!(s.step(entry(Actor::Broker, Action::Propose, None, None)).is_err());
        s.step(entry(Actor::Provider, Action::Accept, None, None)).unwrap();
        assert!(s.step(entry(Actor::Broker, Action::Propose, None, None)).is_err());
    }

    #[test]
    fn message_wire_format() {
        let m = reply(Action::Counter, None);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["action"], "counter");
        assert!(json.get("session_id").is_some() && json.get("round").is_some() && json.get("document").is_some());
    }

    fn contract(v: u32, credit: f64) -> Contract {
        let p = sample_profile();
        let mut doc = draft(&p, 1.0);
        doc.penalty = PenaltyClause { violation_threshold: v, credit_per_violation: credit };
        Contract::new("c1", doc, 0.0)
    }

    #[test]
    fn penalty_examples() {
        let mut c = contract(3, 5.0);
        assert_eq!(apply_penalty(&mut c, 2).unwrap(), 0.0);
        let mut c = contract(3, 5.0);
        assert_eq!(apply_penalty(&mut c, 5).unwrap(), 10.0);
        // (7 - 3) * 5 - 10
        assert_eq!(apply_penalty(&mut c, 2).unwrap(), 10.0);
        assert_eq!(c.credited, 20.0);
        c.terminate();
        assert!(matches!(apply_penalty(&mut c, 1), Err(SlaError::ContractTerminated(_))));
    }

    #[test]
    fn contract_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContractStore::open(dir.path()).unwrap();
        store.insert(contract(3, 5.0)).unwrap();
        assert!(matches!(store.insert(contract(3, 5.0)), Err(SlaError::DuplicateContract(_))));
        store.update("c1", |c| apply_penalty(c, 4)).unwrap();
        assert!(dir.path().join("c1.json").exists());
        let reopened = ContractStore::open(dir.path()).unwrap();
        assert_eq!(reopened.all(), store.all());
        assert_eq!(reopened.get("c1").unwrap().credited, 5.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            #[test]
            fn penalty_credit_monotone(v in 1u32..6, credit in 0.0f64..20.0, steps in proptest::collection::vec(0u64..4, 1..20)) {
                let mut c = contract(v, credit);
                let mut last = 0.0;
                for n in steps {
                    apply_penalty(&mut c, n).unwrap();
                    prop_assert!(c.credited >= last);
                    if c.violation_count <= u64::from(v) {
                        prop_assert_eq!(c.credited, 0.0);
                    }
                    prop_assert!((c.credited - c.document.penalty.credit_for(c.violation_count)).abs() < 1e-9);
                    last = c.credited;
                }
            }
        }
    }
}
