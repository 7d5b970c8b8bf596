//! QoS-driven cloud service broker.
//!
//! Offerings are ranked with a weighted power-utility over normalized QoS
//! attributes, SLAs are negotiated with the accepted providers in rank order,
//! and agreed contracts are monitored against ingested measurements.

pub mod broker;
pub mod clock;
pub mod monitoring;
pub mod persist;
pub mod qos;
pub mod selection;
pub mod sim;
pub mod sla;

/// Seconds since the Unix epoch (UTC), or logical seconds in simulations.
pub type Timestamp = f64;

pub use broker::{Broker, BrokerConfig, BrokerError};
pub use qos::{AttributeCatalog, AttributeSpec, Direction, QosVector, RequirementProfile, TierTable};
pub use selection::{aggregate_utility, rank_offerings, RankingResult, UtilityScore};
