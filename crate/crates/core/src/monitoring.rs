//! Measurement ingestion, tumbling-window aggregation and SLA compliance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persist::{EventLog, PersistError};
use crate::qos::{normalize_metric, Aggregation, AttributeCatalog, AttributeSpec, QosError};
use crate::sla::{Contract, PenaltyClause};
use crate::Timestamp;

/// Shortfall slack: a measured value equal to the guarantee complies.
pub const VIOLATION_EPSILON: f64 = 1e-9;

pub const DEFAULT_WINDOW_SECS: f64 = 60.0;

#[derive(Debug, Error)]
pub enum MonitoringError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("sample for `{0}` has a non-finite value or timestamp")]
    NonFinite(String),
    #[error("up/down attribute `{attribute}` expects 0 or 1, got {value}")]
    NotBoolean { attribute: String, value: f64 },
    #[error("contract `{0}` is terminated")]
    ContractTerminated(String),
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

pub type Result<T> = std::result::Result<T, MonitoringError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub provider_id: String,
    pub service_type: String,
    pub attribute_id: String,
    pub timestamp: Timestamp,
    pub raw: f64,
    pub source_id: String,
}

impl MeasurementSample {
    pub fn validate(&self, catalog: &AttributeCatalog) -> Result<()> {
        let spec = catalog
            .get(&self.attribute_id)
            .ok_or_else(|| MonitoringError::UnknownAttribute(self.attribute_id.clone()))?;
        if !(self.timestamp.is_finite() && self.raw.is_finite()) {
            return Err(MonitoringError::NonFinite(self.attribute_id.clone()));
        }
        if spec.aggregation == Aggregation::UpFraction && self.raw != 0.0 && self.raw != 1.0 {
            return Err(MonitoringError::NotBoolean { attribute: self.attribute_id.clone(), value: self.raw });
        }
        Ok(())
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(MonitoringError::InvalidWindow(format!("[{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    /// The `index`-th tumbling window of `length` starting at `origin`.
    pub fn tumbling(origin: Timestamp, length: f64, index: u64) -> Self {
        let start = origin + length * index as f64;
        Self { start, end: origin + length * (index + 1) as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorWindow {
    pub provider_id: String,
    pub attribute_id: String,
    pub window: Window,
    pub value: f64,
    pub sample_count: u64,
}

/// Aggregation result: an indicator, or a distinct no-data signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Indicator {
    Value(IndicatorWindow),
    NoData,
}

impl Indicator {
    pub fn value(&self) -> Option<f64> {
        match self {
            Indicator::Value(w) => Some(w.value),
            Indicator::NoData => None,
        }
    }
}

/// Folds the samples that fall in `window` into one indicator.
///
/// Up/down attributes give the up fraction; continuous attributes give the
/// normalized mean of their raw values.
pub fn aggregate_samples<'a>(
    samples: impl IntoIterator<Item = &'a MeasurementSample>,
    provider_id: &str,
    service_type: Option<&str>,
    spec: &AttributeSpec,
    window: Window,
) -> Result<Indicator> {
    let mut count = 0u64;
    let mut sum = 0.0;
    for s in samples {
        if s.provider_id == provider_id
            && s.attribute_id == spec.id
            && service_type.is_none_or(|t| t == s.service_type)
            && window.contains(s.timestamp)
        {
            count += 1;
            sum += s.raw;
        }
    }
    if count == 0 {
        return Ok(Indicator::NoData);
    }
    let mean = sum / count as f64;
    let value = match spec.aggregation {
        Aggregation::UpFraction => mean,
        Aggregation::Mean => normalize_metric(mean, spec)?,
    };
    Ok(Indicator::Value(IndicatorWindow {
        provider_id: provider_id.to_string(),
        attribute_id: spec.id.clone(),
        window,
        value,
        sample_count: count,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub contract_id: String,
    pub attribute_id: String,
    pub window: Window,
    pub measured: f64,
    pub guaranteed: f64,
    pub timestamp: Timestamp,
}

/// Outcome of checking one window of one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub contract_id: String,
    pub window: Window,
    pub indicators: Vec<IndicatorWindow>,
    /// Attributes without samples in the window.
    pub no_data: Vec<String>,
    pub violations: Vec<ViolationEvent>,
}

impl WindowCheck {
    pub fn is_compliant(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares each guaranteed attribute's indicator against its guarantee.
pub fn check_compliance(
    contract: &Contract,
    window: Window,
    samples: &[MeasurementSample],
    catalog: &AttributeCatalog,
) -> Result<WindowCheck> {
    if !contract.is_active() {
        return Err(MonitoringError::ContractTerminated(contract.id.clone()));
    }
    let doc = &contract.document;
    let mut check = WindowCheck {
        contract_id: contract.id.clone(),
        window,
        indicators: Vec::new(),
        no_data: Vec::new(),
        violations: Vec::new(),
    };
    for (spec, &guaranteed) in catalog.attributes().iter().zip(doc.guarantees.values()) {
        match aggregate_samples(samples, &doc.provider_id, Some(&doc.service_type), spec, window)? {
            Indicator::NoData => check.no_data.push(spec.id.clone()),
            Indicator::Value(ind) => {
                if ind.value < guaranteed - VIOLATION_EPSILON {
                    check.violations.push(ViolationEvent {
                        contract_id: contract.id.clone(),
                        attribute_id: spec.id.clone(),
                        window,
                        measured: ind.value,
                        guaranteed,
                        timestamp: window.end,
                    });
                }
                check.indicators.push(ind);
            }
        }
    }
    Ok(check)
}

/// Tumbling windows of a contract that have fully elapsed by `watermark`,
/// starting from index `from_index`.
pub fn elapsed_windows(contract: &Contract, length: f64, from_index: u64, watermark: Timestamp) -> Vec<(u64, Window)> {
    let origin = contract.document.validity.start;
    let mut out = Vec::new();
    let mut k = from_index;
    loop {
        let w = Window::tumbling(origin, length, k);
        if w.end > watermark || w.start >= contract.document.validity.end {
            break;
        }
        out.push((k, w));
        k += 1;
    }
    out
}

/// All violations of a contract recomputed from a raw sample log, ordered by
/// window then attribute.
pub fn recompute_violations(
    contract: &Contract,
    samples: &[MeasurementSample],
    catalog: &AttributeCatalog,
    window_secs: f64,
    watermark: Timestamp,
) -> Result<Vec<ViolationEvent>> {
    let mut active = contract.clone();
    active.status = crate::sla::ContractStatus::Active;
    let mut events = Vec::new();
    for (_, w) in elapsed_windows(&active, window_secs, 0, watermark) {
        events.extend(check_compliance(&active, w, samples, catalog)?.violations);
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCompliance {
    pub attribute_id: String,
    pub windows_observed: u64,
    pub no_data_windows: u64,
    pub violations: u64,
    pub worst_indicator: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub contract_id: String,
    pub from: Timestamp,
    pub to: Timestamp,
    pub attributes: Vec<AttributeCompliance>,
    pub total_violations: u64,
    /// Credit accrued by violations inside the period.
    pub penalty_credit: f64,
}

/// Builds a report from stored window checks. Windows count toward the
/// period when their start lies in `[from, to)`.
pub fn compliance_report(
    contract_id: &str,
    penalty: &PenaltyClause,
    checks: &[WindowCheck],
    catalog: &AttributeCatalog,
    from: Timestamp,
    to: Timestamp,
) -> ComplianceReport {
    let mut per: BTreeMap<&str, AttributeCompliance> = BTreeMap::new();
    let mut before = 0u64;
    let mut within = 0u64;
    for check in checks.iter().filter(|c| c.contract_id == contract_id) {
        if check.window.start < from {
            before += check.violations.len() as u64;
            continue;
        }
        if check.window.start >= to {
            continue;
        }
        within += check.violations.len() as u64;
        for ind in &check.indicators {
            let entry = per.entry(ind.attribute_id.as_str()).or_insert_with(|| blank(&ind.attribute_id));
            entry.windows_observed += 1;
            entry.worst_indicator = Some(entry.worst_indicator.map_or(ind.value, |w| w.min(ind.value)));
        }
        for id in &check.no_data {
            per.entry(id.as_str()).or_insert_with(|| blank(id)).no_data_windows += 1;
        }
        for v in &check.violations {
            per.entry(v.attribute_id.as_str()).or_insert_with(|| blank(&v.attribute_id)).violations += 1;
        }
    }
    let mut attributes = Vec::new();
    for id in catalog.ids() {
        if let Some(a) = per.remove(id) {
            attributes.push(a);
        }
    }
    ComplianceReport {
        contract_id: contract_id.to_string(),
        from,
        to,
        attributes,
        total_violations: within,
        penalty_credit: penalty.credit_for(before + within) - penalty.credit_for(before),
    }
}

fn blank(id: &str) -> AttributeCompliance {
    AttributeCompliance {
        attribute_id: id.to_string(),
        windows_observed: 0,
        no_data_windows: 0,
        violations: 0,
        worst_indicator: None,
    }
}

/// Raw samples plus stored window checks.
#[derive(Debug)]
pub struct MonitoringStore {
    samples: EventLog<MeasurementSample>,
    checks: EventLog<WindowCheck>,
}

impl MonitoringStore {
    pub fn in_memory() -> Self {
        Self { samples: EventLog::in_memory(), checks: EventLog::in_memory() }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            samples: EventLog::open(dir.join("samples.jsonl"))?,
            checks: EventLog::open(dir.join("windows.jsonl"))?,
        })
    }

    /// Validates and appends a batch; nothing is stored if any sample is bad.
    pub fn ingest(&self, batch: Vec<MeasurementSample>, catalog: &AttributeCatalog) -> Result<usize> {
        for s in &batch {
            s.validate(catalog)?;
        }
        let n = batch.len();
        self.samples.append_all(batch)?;
        Ok(n)
    }

    pub fn aggregate_window(
        &self,
        provider_id: &str,
        attribute_id: &str,
        window: Window,
        catalog: &AttributeCatalog,
    ) -> Result<Indicator> {
        let spec = catalog.get(attribute_id).ok_or_else(|| MonitoringError::UnknownAttribute(attribute_id.into()))?;
        self.samples.read(|s| aggregate_samples(s, provider_id, None, spec, window))
    }

    pub fn check(&self, contract: &Contract, window: Window, catalog: &AttributeCatalog) -> Result<WindowCheck> {
        self.samples.read(|s| check_compliance(contract, window, s, catalog))
    }

    pub fn record_check(&self, check: WindowCheck) -> Result<()> {
        Ok(self.checks.append(check)?)
    }

    pub fn checks_for(&self, contract_id: &str) -> Vec<WindowCheck> {
        self.checks.read(|c| c.iter().filter(|c| c.contract_id == contract_id).cloned().collect())
    }

    /// Number of windows already checked for the contract.
    pub fn checked_windows(&self, contract_id: &str) -> u64 {
        self.checks.read(|c| c.iter().filter(|c| c.contract_id == contract_id).count() as u64)
    }

    pub fn samples(&self) -> Vec<MeasurementSample> {
        self.samples.all()
    }

    pub fn all_checks(&self) -> Vec<WindowCheck> {
        self.checks.all()
    }

    pub fn with_samples<R>(&self, f: impl FnOnce(&[MeasurementSample]) -> R) -> R {
        self.samples.read(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::{Direction, QosVector};
    use crate::sla::{SlaDocument, Validity};

    fn sample(attr: &str, t: f64, raw: f64) -> MeasurementSample {
        MeasurementSample {
            provider_id: "SP4".into(),
            service_type: "grammar-checker".into(),
            attribute_id: attr.into(),
            timestamp: t,
            raw,
            source_id: "probe".into(),
        }
    }

    fn contract(guarantees: Vec<f64>) -> Contract {
        let doc = SlaDocument {
            consumer_id: "uni".into(),
            provider_id: "SP4".into(),
            service_type: "grammar-checker".into(),
            guarantees: QosVector(guarantees),
            cost: 10.0,
            penalty: PenaltyClause { violation_threshold: 3, credit_per_violation: 5.0 },
            validity: Validity { start: 0.0, end: 10_000.0 },
            terms: Default::default(),
        };
        Contract::new("ct-1", doc, 0.0)
    }

    fn w() -> Window {
        Window::new(0.0, 60.0).unwrap()
    }

    #[test]
    fn ingest_validation() {
        let store = MonitoringStore::in_memory();
        let catalog = AttributeCatalog::standard();
        assert_eq!(store.ingest(vec![sample("availability", 1.0, 1.0)], &catalog).unwrap(), 1);
        assert!(matches!(
            store.ingest(vec![sample("nonexistent", 1.0, 1.0)], &catalog),
            Err(MonitoringError::UnknownAttribute(_))
        ));
        assert!(matches!(
            store.ingest(vec![sample("response_time", 1.0, f64::NAN)], &catalog),
            Err(MonitoringError::NonFinite(_))
        ));
        assert!(matches!(
            store.ingest(vec![sample("availability", 1.0, 0.5)], &catalog),
            Err(MonitoringError::NotBoolean { .. })
        ));
        assert_eq!(store.samples().len(), 1);
    }

    #[test]
    fn up_fraction() {
        let catalog = AttributeCatalog::standard();
        let mut samples: Vec<_> = (0..9).map(|i| sample("availability", i as f64, 1.0)).collect();
        samples.push(sample("availability", 9.0, 0.0));
        let spec = catalog.get("availability").unwrap();
        let ind = aggregate_samples(&samples, "SP4", None, spec, w()).unwrap();
        assert_eq!(ind.value(), Some(0.9));
    }

    #[test]
    fn mean_then_normalize() {
        let spec = AttributeSpec::new("rt", "rt", Direction::LowerIsBetter, 100.0, 1100.0);
        let samples = vec![sample("rt", 1.0, 150.0), sample("rt", 2.0, 250.0)];
        let ind = aggregate_samples(&samples, "SP4", None, &spec, w()).unwrap();
        // mean 200ms: (1100 - 200) / 1000
        assert!((ind.value().unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_no_data() {
        let catalog = AttributeCatalog::standard();
        let spec = catalog.get("availability").unwrap();
        let samples = vec![sample("availability", 60.0, 1.0)];
        assert_eq!(aggregate_samples(&samples, "SP4", None, spec, w()).unwrap(), Indicator::NoData);
    }

    fn avail_samples(ups: usize, total: usize) -> Vec<MeasurementSample> {
        (0..total).map(|i| sample("availability", i as f64, if i < ups { 1.0 } else { 0.0 })).collect()
    }

    #[test]
    fn shortfall_and_boundary() {
        let catalog = AttributeCatalog::new(vec![catalog_availability()]).unwrap();
        let c = contract(vec![0.98]);
        let check = check_compliance(&c, w(), &avail_samples(19, 20), &catalog).unwrap();
        assert_eq!(check.violations.len(), 1);
        assert_eq!(check.violations[0].measured, 0.95);
        let exact = check_compliance(&c, w(), &avail_samples(49, 50), &catalog).unwrap();
        assert!(exact.is_compliant(), "{exact:?}");
    }

    fn catalog_availability() -> AttributeSpec {
        AttributeCatalog::standard().get("availability").unwrap().clone()
    }

    #[test]
    fn two_short_attributes_count_twice() {
        let catalog = AttributeCatalog::standard();
        let mut c = contract(vec![0.98, 0.65, 0.95, 0.90]);
        let mut samples = avail_samples(19, 20);
        samples.push(sample("response_time", 5.0, 900.0)); // 0.2
        samples.push(sample("reliability", 5.0, 0.99));
        samples.push(sample("throughput", 5.0, 950.0));
        let check = check_compliance(&c, w(), &samples, &catalog).unwrap();
        let ids: Vec<&str> = check.violations.iter().map(|v| v.attribute_id.as_str()).collect();
        assert_eq!(ids, vec!["availability", "response_time"]);
        c.violation_count = 2;
        let credit = crate::sla::apply_penalty(&mut c, check.violations.len() as u64).unwrap();
        assert_eq!(c.violation_count, 4);
        assert_eq!(credit, 5.0);
    }

    #[test]
    fn no_data_is_not_a_violation() {
        let catalog = AttributeCatalog::standard();
        let c = contract(vec![0.98, 0.65, 0.95, 0.90]);
        let check = check_compliance(&c, w(), &[], &catalog).unwrap();
        assert!(check.is_compliant());
        assert_eq!(check.no_data.len(), 4);
    }

    #[test]
    fn terminated_contract_rejected() {
        let catalog = AttributeCatalog::standard();
        let mut c = contract(vec![0.98, 0.65, 0.95, 0.90]);
        c.terminate();
        assert!(matches!(check_compliance(&c, w(), &[], &catalog), Err(MonitoringError::ContractTerminated(_))));
    }

    fn check_with(start: f64, violations: usize) -> WindowCheck {
        let window = Window::new(start, start + 60.0).unwrap();
        WindowCheck {
            contract_id: "ct-1".into(),
            window,
            indicators: vec![IndicatorWindow {
                provider_id: "SP4".into(),
                attribute_id: "availability".into(),
                window,
                value: if violations > 0 { 0.9 } else { 1.0 },
                sample_count: 60,
            }],
            no_data: vec![],
            violations: (0..violations)
                .map(|_| ViolationEvent {
                    contract_id: "ct-1".into(),
                    attribute_id: "availability".into(),
                    window,
                    measured: 0.9,
                    guaranteed: 0.98,
                    timestamp: start + 60.0,
                })
                .collect(),
        }
    }

    #[test]
    fn report_examples() {
        let catalog = AttributeCatalog::standard();
        let penalty = PenaltyClause { violation_threshold: 3, credit_per_violation: 5.0 };
        let empty = compliance_report("ct-1", &penalty, &[], &catalog, 0.0, 600.0);
        assert!(empty.attributes.is_empty());
        assert_eq!(empty.penalty_credit, 0.0);

        let checks: Vec<_> = (0..10).map(|k| check_with(60.0 * k as f64, usize::from(k % 3 == 0))).collect();
        let report = compliance_report("ct-1", &penalty, &checks, &catalog, 0.0, 600.0);
        assert_eq!(report.total_violations, 4);
        assert_eq!(report.attributes[0].windows_observed, 10);
        assert_eq!(report.attributes[0].worst_indicator, Some(0.9));
        // (4 - 3) * 5
        assert_eq!(report.penalty_credit, 5.0);
        assert_eq!(report, compliance_report("ct-1", &penalty, &checks, &catalog, 0.0, 600.0));

        let late = compliance_report("ct-1", &penalty, &checks, &catalog, 300.0, 600.0);
        assert_eq!(late.total_violations, 2);
        assert_eq!(late.penalty_credit, 5.0);
    }

    #[test]
    fn elapsed_windows_respect_watermark() {
        let c = contract(vec![0.98, 0.65, 0.95, 0.90]);
        assert_eq!(elapsed_windows(&c, 60.0, 0, 59.0).len(), 0);
        let ws = elapsed_windows(&c, 60.0, 2, 300.0);
        assert_eq!(ws.iter().map(|(k, _)| *k).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(ws[0].1, Window { start: 120.0, end: 180.0 });
    }
}
