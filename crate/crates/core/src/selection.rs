//! Utility-based offering selection.
//!
//! Each attribute contributes `w_i * x_i^beta_i`; the aggregate utility is the
//! sum of contributions. An offering is acceptable when its utility reaches the
//! utility of the consumer's own minimum-requirements vector.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qos::{QosVector, RequirementProfile};

/// Slack on the inclusive acceptance comparison.
pub const ACCEPTANCE_EPSILON: f64 = 1e-9;

/// Subject id used for the consumer's minimum-requirements vector.
pub const CONSUMER_SUBJECT: &str = "consumer-minimum";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("quality {0} outside [0, 1]")]
    QualityOutOfRange(f64),
    #[error("sensitivity {0} must be finite and >= 0")]
    InvalidSensitivity(f64),
    #[error("catalog mismatch: vector has {actual} attributes, profile has {expected}")]
    CatalogMismatch { expected: usize, actual: usize },
    #[error("no offerings to rank")]
    NoOfferings,
    #[error("beta grid is empty")]
    EmptyGrid,
    #[error("invalid beta grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

/// `x^beta` with `0^0 = 1`.
pub fn attribute_utility(x: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(SelectionError::QualityOutOfRange(x));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(SelectionError::InvalidSensitivity(beta));
    }
    if beta == 0.0 {
        return Ok(1.0);
    }
    Ok(x.powf(beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub subject: String,
    pub utility: f64,
    pub contributions: Vec<f64>,
}

impl UtilityScore {
    /// Utility rounded half-up to two decimals.
    pub fn display(&self) -> f64 {
        round_display(self.utility)
    }
}

/// Half-up rounding to two decimals, for presentation only.
pub fn round_display(value: f64) -> f64 {
    ((value * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

pub fn aggregate_utility(qos: &QosVector, profile: &RequirementProfile) -> Result<UtilityScore> {
    score(String::new(), qos, profile)
}

fn score(subject: String, qos: &QosVector, profile: &RequirementProfile) -> Result<UtilityScore> {
    let n = profile.weights.len();
    if qos.len() != n || profile.sensitivities.len() != n {
        return Err(SelectionError::CatalogMismatch { expected: n, actual: qos.len() });
    }
    let contributions = qos
        .values()
        .iter()
        .zip(&profile.weights)
        .zip(&profile.sensitivities)
        .map(|((&x, &w), &beta)| attribute_utility(x, beta).map(|u| w * u))
        .collect::<Result<Vec<f64>>>()?;
    let utility = contributions.iter().sum();
    Ok(UtilityScore { subject, utility, contributions })
}

/// Utility of the profile's own minima.
pub fn acceptance_threshold(profile: &RequirementProfile) -> Result<f64> {
    Ok(aggregate_utility(&profile.minima, profile)?.utility)
}

pub fn is_acceptable(utility: f64, threshold: f64) -> bool {
    utility >= threshold - ACCEPTANCE_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub provider_id: String,
    pub score: UtilityScore,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub entries: Vec<RankedEntry>,
    pub threshold: f64,
    pub profile: RequirementProfile,
}

impl RankingResult {
    pub fn accepted(&self) -> impl Iterator<Item = &RankedEntry> {
        self.entries.iter().filter(|e| e.accepted)
    }

    pub fn order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.provider_id.as_str()).collect()
    }
}

pub fn rank_offerings(offerings: &[(String, QosVector)], profile: &RequirementProfile) -> Result<RankingResult> {
    rank_with_threshold(offerings, profile, acceptance_threshold(profile)?)
}

/// Ranks against an explicit threshold (used when a selection policy raises it).
pub fn rank_with_threshold(
    offerings: &[(String, QosVector)],
    profile: &RequirementProfile,
    threshold: f64,
) -> Result<RankingResult> {
    if offerings.is_empty() {
        return Err(SelectionError::NoOfferings);
    }
    let mut entries = offerings
        .iter()
        .map(|(id, qos)| {
            let score = score(id.clone(), qos, profile)?;
            let accepted = is_acceptable(score.utility, threshold);
            Ok(RankedEntry { provider_id: id.clone(), score, accepted })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.score
            .utility
            .partial_cmp(&a.score.utility)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.provider_id.cmp(&b.provider_id))
    });
    Ok(RankingResult { entries, threshold, profile: profile.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub scores: Vec<UtilityScore>,
}

/// Utility of every offering and of the consumer minima at each uniform beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Utilities of one subject along the grid.
    pub fn curve(&self, subject: &str) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.scores.iter().find(|s| s.subject == subject).map(|s| s.utility)).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.beta).collect()
    }

    /// `beta,subject,utility` with six-decimal utilities.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,subject,utility\n");
        for row in &self.rows {
            for s in &row.scores {
                let _ = writeln!(out, "{},{},{:.6}", format_beta(row.beta), s.subject, s.utility);
            }
        }
        out
    }
}

fn format_beta(beta: f64) -> String {
    let s = format!("{beta:.6}");
    let s = s.trim_end_matches('0');
    let s = s.strip_suffix('.').unwrap_or(s);
    s.to_string()
}

/// Inclusive grid `min, min+step, ..., max`.
pub fn beta_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(SelectionError::InvalidGrid("bounds must be finite".into()));
    }
    if min < 0.0 {
        return Err(SelectionError::InvalidSensitivity(min));
    }
    if max < min {
        return Err(SelectionError::InvalidGrid(format!("beta max {max} below min {min}")));
    }
    if step <= 0.0 {
        return Err(SelectionError::InvalidGrid(format!("step {step} must be > 0")));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| round_grid(min + k as f64 * step)).collect())
}

fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

pub fn sensitivity_sweep(
    offerings: &[(String, QosVector)],
    profile: &RequirementProfile,
    grid: &[f64],
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(SelectionError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(SelectionError::InvalidSensitivity(bad));
    }
    let mut subjects: Vec<(String, &QosVector)> = offerings.iter().map(|(id, q)| (id.clone(), q)).collect();
    subjects.push((CONSUMER_SUBJECT.to_string(), &profile.minima));
    subjects.sort_by(|a, b| a.0.cmp(&b.0));

    let rows = grid
        .iter()
        .map(|&beta| {
            let uniform = profile.with_uniform_sensitivity(beta);
            let scores = subjects.iter().map(|(id, q)| score(id.clone(), q, &uniform)).collect::<Result<Vec<_>>>()?;
            Ok(SweepRow { beta, scores })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}
