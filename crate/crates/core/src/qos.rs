//! QoS attribute catalog, metric normalization, requirement profiles and
//! service tiers.
//!
//! Every quality handled by the broker is a normalized value in `[0, 1]`
//! where `1` is the best quality. Vectors are positional: the catalog fixes
//! the attribute order and every vector, weight list and sensitivity list
//! follows that order.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance applied to the weight-sum constraint.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QosError {
    #[error("attribute catalog is empty")]
    EmptyCatalog,
    #[error("duplicate attribute id `{0}` in catalog")]
    DuplicateAttribute(String),
    #[error("attribute `{id}`: raw_min ({raw_min}) must be below raw_max ({raw_max})")]
    InvalidBounds { id: String, raw_min: f64, raw_max: f64 },
    #[error("attribute `{0}`: raw value is not finite")]
    NonFiniteRaw(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("{what} has {actual} entries, catalog has {expected}")]
    LengthMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("quality for attribute `{id}` is {value}, expected a value in [0, 1]")]
    QualityOutOfRange { id: String, value: f64 },
    #[error("weight for attribute `{id}` is {value}, expected a value in [0, 1]")]
    WeightOutOfRange { id: String, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("minimum for attribute `{id}` is {value}, expected a value in [0, 1]")]
    MinimumOutOfRange { id: String, value: f64 },
    #[error("sensitivity for attribute `{id}` is {value}, expected a finite value >= 0")]
    NegativeSensitivity { id: String, value: f64 },
    #[error("budget {0} must be finite and >= 0")]
    InvalidBudget(f64),
    #[error("unknown service tier `{0}`")]
    UnknownTier(String),
    #[error("tier `{0}` is defined more than once")]
    DuplicateTier(String),
    #[error("tier `{higher}` minimum for `{id}` is below tier `{lower}`")]
    TierOrdering { higher: String, lower: String, id: String },
}

pub type Result<T> = std::result::Result<T, QosError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// How raw samples of an attribute are folded into one indicator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Arithmetic mean of raw values, then normalized.
    #[default]
    Mean,
    /// Samples are up (1) / down (0); the indicator is the up fraction.
    UpFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub direction: Direction,
    pub raw_min: f64,
    pub raw_max: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl AttributeSpec {
    pub fn new(id: &str, name: &str, direction: Direction, raw_min: f64, raw_max: f64) -> Self {
        Self { id: id.to_string(), name: name.to_string(), direction, raw_min, raw_max, aggregation: Aggregation::Mean }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.raw_min.is_finite() && self.raw_max.is_finite() && self.raw_min < self.raw_max) {
            return Err(QosError::InvalidBounds { id: self.id.clone(), raw_min: self.raw_min, raw_max: self.raw_max });
        }
        Ok(())
    }
}

/// Clamped min-max normalization of a raw metric into a quality in `[0, 1]`.
///
/// Lower-is-better attributes are inverted so that `raw_min` maps to 1.
pub fn normalize_metric(raw: f64, spec: &AttributeSpec) -> Result<f64> {
    if !raw.is_finite() {
        return Err(QosError::NonFiniteRaw(spec.id.clone()));
    }
    spec.validate()?;
    let span = spec.raw_max - spec.raw_min;
    let q = match spec.direction {
        Direction::HigherIsBetter => (raw - spec.raw_min) / span,
        Direction::LowerIsBetter => (spec.raw_max - raw) / span,
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Ordered, non-empty list of attributes with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeSpec>", into = "Vec<AttributeSpec>")]
pub struct AttributeCatalog {
    attributes: Vec<AttributeSpec>,
}

impl AttributeCatalog {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(QosError::EmptyCatalog);
        }
        let mut seen = BTreeSet::new();
        for attr in &attributes {
            attr.validate()?;
            if !seen.insert(attr.id.as_str()) {
                return Err(QosError::DuplicateAttribute(attr.id.clone()));
            }
        }
        Ok(Self { attributes })
    }

    /// Availability, inverse response time, reliability, throughput.
    pub fn standard() -> Self {
        Self::new(vec![
            AttributeSpec::new("availability", "Availability", Direction::HigherIsBetter, 0.0, 1.0)
                .with_aggregation(Aggregation::UpFraction),
            AttributeSpec::new("response_time", "1/Response time", Direction::LowerIsBetter, 100.0, 1100.0),
            AttributeSpec::new("reliability", "Reliability", Direction::HigherIsBetter, 0.0, 1.0),
            AttributeSpec::new("throughput", "Throughput", Direction::HigherIsBetter, 0.0, 1000.0),
        ])
        .expect("standard catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn get(&self, id: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.id.as_str())
    }

    fn id_at(&self, index: usize) -> String {
        self.attributes.get(index).map(|a| a.id.clone()).unwrap_or_else(|| format!("#{index}"))
    }

    pub fn check_len(&self, what: &'static str, actual: usize) -> Result<()> {
        if actual != self.len() {
            return Err(QosError::LengthMismatch { what, expected: self.len(), actual });
        }
        Ok(())
    }
}

impl TryFrom<Vec<AttributeSpec>> for AttributeCatalog {
    type Error = QosError;

    fn try_from(value: Vec<AttributeSpec>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<AttributeCatalog> for Vec<AttributeSpec> {
    fn from(value: AttributeCatalog) -> Self {
        value.attributes
    }
}

/// Normalized quality per catalog attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QosVector(pub Vec<f64>);

impl QosVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, catalog: &AttributeCatalog) -> Result<()> {
        catalog.check_len("quality vector", self.len())?;
        for (i, &v) in self.0.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(QosError::QualityOutOfRange { id: catalog.id_at(i), value: v });
            }
        }
        Ok(())
    }

    /// True when every component is `>=` the other's.
    pub fn dominates(&self, other: &QosVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }
}

impl fmt::Display for QosVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Consumer minima, weights, sensitivities and an optional cost ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementProfile {
    pub minima: QosVector,
    pub weights: Vec<f64>,
    pub sensitivities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

impl RequirementProfile {
    pub fn len(&self) -> usize {
        self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minima.is_empty()
    }

    /// Copy of the profile with every sensitivity replaced by `beta`.
    pub fn with_uniform_sensitivity(&self, beta: f64) -> Self {
        Self { sensitivities: vec![beta; self.sensitivities.len()], ..self.clone() }
    }
}

/// Returns the profile iff every profile invariant holds against `catalog`.
pub fn validate_profile(candidate: RequirementProfile, catalog: &AttributeCatalog) -> Result<RequirementProfile> {
    catalog.check_len("minima", candidate.minima.len())?;
    catalog.check_len("weights", candidate.weights.len())?;
    catalog.check_len("sensitivities", candidate.sensitivities.len())?;
    for (i, &m) in candidate.minima.values().iter().enumerate() {
        if !(0.0..=1.0).contains(&m) {
            return Err(QosError::MinimumOutOfRange { id: catalog.id_at(i), value: m });
        }
    }
    for (i, &w) in candidate.weights.iter().enumerate() {
        if !(0.0..=1.0).contains(&w) {
            return Err(QosError::WeightOutOfRange { id: catalog.id_at(i), value: w });
        }
    }
    let sum: f64 = candidate.weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(QosError::WeightSum { sum });
    }
    for (i, &b) in candidate.sensitivities.iter().enumerate() {
        if !(b.is_finite() && b >= 0.0) {
            return Err(QosError::NegativeSensitivity { id: catalog.id_at(i), value: b });
        }
    }
    if let Some(budget) = candidate.budget {
        if !(budget.is_finite() && budget >= 0.0) {
            return Err(QosError::InvalidBudget(budget));
        }
    }
    Ok(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierName {
    Platinum,
    Gold,
    Silver,
}

impl TierName {
    pub const ALL: [TierName; 3] = [TierName::Platinum, TierName::Gold, TierName::Silver];

    pub fn as_str(self) -> &'static str {
        match self {
            TierName::Platinum => "platinum",
            TierName::Gold => "gold",
            TierName::Silver => "silver",
        }
    }
}

impl fmt::Display for TierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TierName {
    type Err = QosError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "platinum" => Ok(TierName::Platinum),
            "gold" => Ok(TierName::Gold),
            "silver" => Ok(TierName::Silver),
            other => Err(QosError::UnknownTier(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceTier {
    pub name: TierName,
    pub minima: QosVector,
}

/// Named service levels mapped onto minimum quality templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ServiceTier>", into = "Vec<ServiceTier>")]
pub struct TierTable {
    tiers: Vec<ServiceTier>,
}

impl TierTable {
    pub fn new(tiers: Vec<ServiceTier>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for tier in &tiers {
            if !seen.insert(tier.name) {
                return Err(QosError::DuplicateTier(tier.name.to_string()));
            }
            for (i, &v) in tier.minima.values().iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(QosError::MinimumOutOfRange { id: format!("{}[{i}]", tier.name), value: v });
                }
            }
        }
        let table = Self { tiers };
        // platinum >= gold >= silver, attribute-wise, for whichever are present
        let present: Vec<&ServiceTier> = TierName::ALL.iter().filter_map(|n| table.get(*n)).collect();
        for pair in present.windows(2) {
            let (hi, lo) = (pair[0], pair[1]);
            if hi.minima.len() != lo.minima.len() {
                return Err(QosError::LengthMismatch {
                    what: "tier minima",
                    expected: hi.minima.len(),
                    actual: lo.minima.len(),
                });
            }
            if let Some(i) = hi.minima.values().iter().zip(lo.minima.values()).position(|(h, l)| h < l) {
                return Err(QosError::TierOrdering {
                    higher: hi.name.to_string(),
                    lower: lo.name.to_string(),
                    id: format!("#{i}"),
                });
            }
        }
        Ok(table)
    }

    /// Platinum anchored on the worked-example minima; gold and silver step
    /// down by 0.05 and 0.10 per attribute, floored at 0.
    pub fn standard() -> Self {
        let platinum = [0.98, 0.65, 0.95, 0.90];
        let step = |d: f64| QosVector(platinum.iter().map(|v| round_grid(f64::max(v - d, 0.0))).collect());
        Self::new(vec![
            ServiceTier { name: TierName::Platinum, minima: QosVector(platinum.to_vec()) },
            ServiceTier { name: TierName::Gold, minima: step(0.05) },
            ServiceTier { name: TierName::Silver, minima: step(0.10) },
        ])
        .expect("standard tier table is valid")
    }

    pub fn get(&self, name: TierName) -> Option<&ServiceTier> {
        self.tiers.iter().find(|t| t.name == name)
    }

    pub fn tiers(&self) -> &[ServiceTier] {
        &self.tiers
    }

    pub fn validate_against(&self, catalog: &AttributeCatalog) -> Result<()> {
        for tier in &self.tiers {
            catalog.check_len("tier minima", tier.minima.len())?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<ServiceTier>> for TierTable {
    type Error = QosError;

    fn try_from(value: Vec<ServiceTier>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TierTable> for Vec<ServiceTier> {
    fn from(value: TierTable) -> Self {
        value.tiers
    }
}

// Keeps 0.98 - 0.05 at 0.93 rather than 0.9299999999999999.
fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Builds a profile whose minima come from the named tier.
pub fn tier_to_profile(
    tiers: &TierTable,
    tier: TierName,
    weights: Vec<f64>,
    sensitivities: Vec<f64>,
    budget: Option<f64>,
    catalog: &AttributeCatalog,
) -> Result<RequirementProfile> {
    let template = tiers.get(tier).ok_or_else(|| QosError::UnknownTier(tier.to_string()))?;
    validate_profile(RequirementProfile { minima: template.minima.clone(), weights, sensitivities, budget }, catalog)
}

/// A profile as written in input documents: explicit minima or a tier name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileInput {
    Explicit(RequirementProfile),
    Tier {
        tier: String,
        weights: Vec<f64>,
        sensitivities: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<f64>,
    },
}

impl ProfileInput {
    pub fn resolve(self, tiers: &TierTable, catalog: &AttributeCatalog) -> Result<RequirementProfile> {
        match self {
            ProfileInput::Explicit(profile) => validate_profile(profile, catalog),
            ProfileInput::Tier { tier, weights, sensitivities, budget } => {
                let name: TierName = tier.parse()?;
                tier_to_profile(tiers, name, weights, sensitivities, budget, catalog)
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn spec(direction: Direction, lo: f64, hi: f64) -> AttributeSpec {
        AttributeSpec::new("x", "x", direction, lo, hi)
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_metric(0.9, &spec(Direction::HigherIsBetter, 0.9, 1.0)).unwrap(), 0.0);
        assert_eq!(normalize_metric(1100.0, &spec(Direction::LowerIsBetter, 100.0, 1100.0)).unwrap(), 0.0);
        assert_eq!(normalize_metric(100.0, &spec(Direction::LowerIsBetter, 100.0, 1100.0)).unwrap(), 1.0);
    }

    #[test]
    fn normalize_availability_example() {
        let q = normalize_metric(0.99, &spec(Direction::HigherIsBetter, 0.90, 1.00)).unwrap();
        assert!((q - 0.90).abs() < 1e-12, "{q}");
    }

    #[test]
    fn normalize_clamps_and_rejects_nan() {
        let s = spec(Direction::HigherIsBetter, 0.0, 10.0);
        assert_eq!(normalize_metric(-5.0, &s).unwrap(), 0.0);
        assert_eq!(normalize_metric(50.0, &s).unwrap(), 1.0);
        assert_eq!(normalize_metric(f64::NAN, &s), Err(QosError::NonFiniteRaw("x".into())));
        assert!(normalize_metric(f64::INFINITY, &s).is_err());
    }

    #[test]
    fn catalog_rejects_duplicates_empty_and_bad_bounds() {
        assert_eq!(AttributeCatalog::new(vec![]), Err(QosError::EmptyCatalog));
        let a = spec(Direction::HigherIsBetter, 0.0, 1.0);
        assert!(matches!(AttributeCatalog::new(vec![a.clone(), a]), Err(QosError::DuplicateAttribute(_))));
        assert!(matches!(
            AttributeCatalog::new(vec![spec(Direction::HigherIsBetter, 1.0, 1.0)]),
            Err(QosError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn catalog_json_field_names() {
        let json = serde_json::to_value(AttributeCatalog::standard()).unwrap();
        let first = &json[0];
        assert_eq!(first["id"], "availability");
        assert_eq!(first["direction"], "higher-is-better");
        assert_eq!(first["raw_min"], 0.0);
        assert_eq!(first["raw_max"], 1.0);
        let back: AttributeCatalog = serde_json::from_value(json).unwrap();
        assert_eq!(back, AttributeCatalog::standard());
    }

    #[test]
    fn sample_profile_is_valid() {
        let catalog = AttributeCatalog::standard();
        assert!(validate_profile(sample_profile(), &catalog).is_ok());
    }

    #[test]
    fn weight_sum_violation_reported() {
        let catalog = AttributeCatalog::standard();
        let mut p = sample_profile();
        p.weights = vec![0.5, 0.5, 0.1, 0.0];
        match validate_profile(p, &catalog) {
            Err(QosError::WeightSum { sum }) => assert!((sum - 1.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_sensitivity_reported_with_attribute() {
        let catalog = AttributeCatalog::standard();
        let mut p = sample_profile();
        p.sensitivities[2] = -0.5;
        assert_eq!(
            validate_profile(p, &catalog),
            Err(QosError::NegativeSensitivity { id: "reliability".into(), value: -0.5 })
        );
    }

    #[test]
    fn out_of_range_minimum_reported() {
        let catalog = AttributeCatalog::standard();
        let mut p = sample_profile();
        p.minima.0[1] = 1.5;
        assert_eq!(
            validate_profile(p, &catalog),
            Err(QosError::MinimumOutOfRange { id: "response_time".into(), value: 1.5 })
        );
    }

    #[test]
    fn standard_tiers() {
        let tiers = TierTable::standard();
        let catalog = AttributeCatalog::standard();
        let w = vec![0.35, 0.15, 0.35, 0.15];
        let b = vec![1.0; 4];
        let gold = tier_to_profile(&tiers, TierName::Gold, w.clone(), b.clone(), None, &catalog).unwrap();
        assert_eq!(gold.minima, QosVector(vec![0.93, 0.60, 0.90, 0.85]));
        let platinum = tier_to_profile(&tiers, TierName::Platinum, w.clone(), b.clone(), None, &catalog).unwrap();
        assert_eq!(platinum.minima, sample_profile().minima);
        assert!(platinum.minima.dominates(&gold.minima));
        let silver = tiers.get(TierName::Silver).unwrap();
        assert_eq!(silver.minima, QosVector(vec![0.88, 0.55, 0.85, 0.80]));
    }

    #[test]
    fn silver_with_bad_weights_fails() {
        let err = tier_to_profile(
            &TierTable::standard(),
            TierName::Silver,
            vec![0.5, 0.5, 0.5, 0.5],
            vec![1.0; 4],
            None,
            &AttributeCatalog::standard(),
        );
        assert!(matches!(err, Err(QosError::WeightSum { .. })));
    }

    #[test]
    fn unknown_tier_and_missing_tier() {
        assert_eq!("bronze".parse::<TierName>(), Err(QosError::UnknownTier("bronze".into())));
        let only_gold =
            TierTable::new(vec![ServiceTier { name: TierName::Gold, minima: QosVector(vec![0.5; 4]) }]).unwrap();
        let err = tier_to_profile(
            &only_gold,
            TierName::Platinum,
            vec![0.25; 4],
            vec![1.0; 4],
            None,
            &AttributeCatalog::standard(),
        );
        assert_eq!(err, Err(QosError::UnknownTier("platinum".into())));
    }

    #[test]
    fn tier_ordering_enforced() {
        let err = TierTable::new(vec![
            ServiceTier { name: TierName::Platinum, minima: QosVector(vec![0.5, 0.5]) },
            ServiceTier { name: TierName::Gold, minima: QosVector(vec![0.6, 0.4]) },
        ]);
        assert!(matches!(err, Err(QosError::TierOrdering { .. })));
    }

    #[test]
    fn profile_input_accepts_tier_form() {
        let json = r#"{"tier":"gold","weights":[0.25,0.25,0.25,0.25],"sensitivities":[1,1,1,1],"budget":100}"#;
        let input: ProfileInput = serde_json::from_str(json).unwrap();
        let p = input.resolve(&TierTable::standard(), &AttributeCatalog::standard()).unwrap();
        assert_eq!(p.budget, Some(100.0));
        assert_eq!(p.minima.0[0], 0.93);
    }

    fn any_spec() -> impl Strategy<Value = AttributeSpec> {
        (-1000.0f64..1000.0, 0.001f64..1000.0, any::<bool>()).prop_map(|(lo, span, higher)| {
            let dir = if higher { Direction::HigherIsBetter } else { Direction::LowerIsBetter };
            AttributeSpec::new("p", "p", dir, lo, lo + span)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalize_bounded_and_monotone(s in any_spec(), a in -3000.0f64..3000.0, b in -3000.0f64..3000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let qa = normalize_metric(lo, &s).unwrap();
            let qb = normalize_metric(hi, &s).unwrap();
            prop_assert!((0.0..=1.0).contains(&qa) && (0.0..=1.0).contains(&qb));
            match s.direction {
                Direction::HigherIsBetter => prop_assert!(qa <= qb),
                Direction::LowerIsBetter => prop_assert!(qa >= qb),
            }
        }

        #[test]
        fn identity_spec_is_idempotent(x in 0.0f64..=1.0) {
            let s = spec(Direction::HigherIsBetter, 0.0, 1.0);
            let once = normalize_metric(x, &s).unwrap();
            prop_assert_eq!(once, x);
            prop_assert_eq!(normalize_metric(once, &s).unwrap(), x);
        }

        #[test]
        fn validate_accepts_exactly_the_invariant_set(
            minima in proptest::collection::vec(-0.5f64..1.5, 4),
            raw_w in proptest::collection::vec(0.0f64..1.0, 4),
            normalize in any::<bool>(),
            betas in proptest::collection::vec(-1.0f64..4.0, 4),
        ) {
            let total: f64 = raw_w.iter().sum();
            let weights: Vec<f64> = if normalize && total > 0.0 {
                raw_w.iter().map(|w| w / total).collect()
            } else {
                raw_w.clone()
            };
            let expected_ok = minima.iter().all(|m| (0.0..=1.0).contains(m))
                && weights.iter().all(|w| (0.0..=1.0).contains(w))
                && (weights.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE
                && betas.iter().all(|b| *b >= 0.0);
            let p = RequirementProfile { minima: QosVector(minima), weights, sensitivities: betas, budget: None };
            prop_assert_eq!(validate_profile(p, &AttributeCatalog::standard()).is_ok(), expected_ok);
        }
    }
}
