//! Per-vehicle protocol: reactive group formation inside the danger zone,
//! aggregate construction, storage lifetime and store-and-carry exchange.

mod election;
mod node;
mod store;

use std::collections::BTreeMap;

use thiserror::Error;

pub use election::{elect_leader, GroupRequest};
pub use node::{on_encounter, Action, DropReason, NodeState, Role, Sighting};
pub use store::{StoredEvent, Trust};

use crate::crypto::DigestAlgo;
use crate::geo::RoadClass;
use crate::packets::{max_signers_practical, EventType, PacketBudget, ReportError};
use crate::verify::VerificationPolicy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("leader election over an empty request set")]
    EmptyElection,
    #[error("requests target different cells")]
    MixedCells,
    #[error("no basic storage time configured for event type {0}")]
    UnknownEventType(EventType),
    #[error("storage factor for {0:?} roads must be positive")]
    BadFactor(RoadClass),
    #[error("group window must be between 1 ms and 120 s, got {0} ms")]
    BadWindow(u64),
    #[error("at least one signer must fit an aggregate")]
    NoSignerRoom,
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Basic storage time per event type and multiplier per road class.
#[derive(Debug, Clone, PartialEq)]
pub struct StoragePolicy {
    basic_ms: BTreeMap<EventType, u64>,
    conventional_factor: f64,
    highway_factor: f64,
}

impl Default for StoragePolicy {
    fn default() -> Self {
        StoragePolicy {
            basic_ms: BTreeMap::from([
                (EventType::TrafficJam, 300_000),
                (EventType::FreeParking, 90_000),
            ]),
            conventional_factor: 2.0,
            highway_factor: 1.0,
        }
    }
}

impl StoragePolicy {
    pub fn new(conventional_factor: f64, highway_factor: f64) -> Result<Self, ProtocolError> {
        if !(conventional_factor > 0.0 && conventional_factor.is_finite()) {
            return Err(ProtocolError::BadFactor(RoadClass::Conventional));
        }
        if !(highway_factor > 0.0 && highway_factor.is_finite()) {
            return Err(ProtocolError::BadFactor(RoadClass::Highway));
        }
        Ok(StoragePolicy {
            basic_ms: BTreeMap::new(),
            conventional_factor,
            highway_factor,
        })
    }

    pub fn with_basic_time(mut self, event: EventType, ms: u64) -> Self {
        self.basic_ms.insert(event, ms);
        self
    }

    pub fn basic_time_ms(&self, event: EventType) -> Option<u64> {
        self.basic_ms.get(&event).copied()
    }

    pub fn factor(&self, road: RoadClass) -> f64 {
        match road {
            RoadClass::Conventional => self.conventional_factor,
            RoadClass::Highway => self.highway_factor,
        }
    }
}

/// Lifetime of a stored event: basic time for its type scaled by the road factor.
pub fn storage_time(
    event: EventType,
    road: RoadClass,
    policy: &StoragePolicy,
) -> Result<u64, ProtocolError> {
    let basic = policy
        .basic_time_ms(event)
        .ok_or(ProtocolError::UnknownEventType(event))?;
    Ok((basic as f64 * policy.factor(road)).round() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub digest: DigestAlgo,
    /// How long a self-nominated leader collects member signatures.
    pub group_window_ms: u64,
    /// Largest accepted gap between a report's timestamp and one's own sighting.
    pub agreement_window_ms: u64,
    /// Signers per aggregate, leader included.
    pub max_signers: usize,
    pub storage: StoragePolicy,
    pub verification: VerificationPolicy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let budget = PacketBudget::new(1024).expect("1024 is a valid budget");
        ProtocolConfig {
            digest: DigestAlgo::Sha1,
            group_window_ms: 2_000,
            agreement_window_ms: 60_000,
            max_signers: max_signers_practical(budget, DigestAlgo::Sha1),
            storage: StoragePolicy::default(),
            verification: VerificationPolicy::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn for_budget(budget: PacketBudget, digest: DigestAlgo) -> Self {
        ProtocolConfig {
            digest,
            max_signers: max_signers_practical(budget, digest),
            ..ProtocolConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.group_window_ms == 0 || self.group_window_ms > 120_000 {
            return Err(ProtocolError::BadWindow(self.group_window_ms));
        }
        if self.max_signers == 0 {
            return Err(ProtocolError::NoSignerRoom);
        }
        Ok(())
    }

    pub fn storage_time(&self, event: EventType, road: RoadClass) -> Result<u64, ProtocolError> {
        storage_time(event, road, &self.storage)
    }
}
