//! Deterministic discrete-event simulation of the protocol on a straight
//! two-direction road strip, with an unaggregated baseline for comparison.
//!
//! Given the same configuration and seed, a run produces identical metrics
//! and a byte-identical trace.

pub mod adversary;
pub mod experiments;
mod metrics;
pub mod mobility;
mod world;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use adversary::{AdversaryError, AdversarySpec, AttackKind, Behavior};
pub use metrics::{AttackStats, Metrics};
pub use world::{Contact, ReliableRecord, RunOutput, World};

use crate::crypto::NodeId;
use crate::geo::{Position, RoadClass};
use crate::packets::{
    BudgetError, EventReport, EventType, FixedPosition, PacketBudget,
};
use crate::protocol::{ProtocolConfig, ProtocolError};
use crate::packets::max_signers_practical;

/// Upper bound on the radio range, the largest distance observed between
/// communicating handsets in field tests.
pub const MAX_TX_RANGE_M: f64 = 300.0;

pub const ROAD_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// The static event vehicles can detect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSpec {
    pub event_type: EventType,
    /// Distance along the strip in meters.
    pub x_m: f64,
    pub direction: u8,
    pub lane: u8,
    pub start_ms: u64,
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec {
            event_type: EventType::TrafficJam,
            x_m: 800.0,
            direction: 0,
            lane: 1,
            start_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub node_count: usize,
    pub area_m: f64,
    pub lanes_per_direction: u8,
    pub speed_limit_kmh: u16,
    pub road_class: RoadClass,
    pub duration_ms: u64,
    pub retransmission_start_ms: u64,
    pub retransmission_period_ms: u64,
    pub tx_range_m: f64,
    pub latency_ms: u64,
    pub loss_rate: f64,
    pub encounter_period_ms: u64,
    /// Vehicles confirm an event after a uniform delay in `0..=max` once it is in view.
    pub detection_delay_max_ms: u64,
    /// Speed multiplier for vehicles inside the danger zone of a traffic jam.
    pub jam_slowdown: f64,
    pub event: Option<EventSpec>,
    pub danger_radius_m: u32,
    pub uncertainty_radius_m: u32,
    pub security_radius_m: u32,
    pub packet_size: u16,
    /// Overrides the signer cap derived from the packet size and digest.
    pub max_signers: Option<usize>,
    pub protocol: ProtocolConfig,
    pub aggregation_enabled: bool,
    pub adversaries: AdversarySpec,
    /// When fabricating adversaries report their false event.
    pub attack_time_ms: u64,
    pub seed: u64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            node_count: 20,
            area_m: 1000.0,
            lanes_per_direction: 3,
            speed_limit_kmh: 120,
            road_class: RoadClass::Highway,
            duration_ms: 1_000_000,
            retransmission_start_ms: 40_000,
            retransmission_period_ms: 10_000,
            tx_range_m: 100.0,
            latency_ms: 100,
            loss_rate: 0.0,
            encounter_period_ms: 1_000,
            detection_delay_max_ms: 3_000,
            jam_slowdown: 0.1,
            event: Some(EventSpec::default()),
            danger_radius_m: 100,
            uncertainty_radius_m: 300,
            security_radius_m: 1000,
            packet_size: 1024,
            max_signers: None,
            protocol: ProtocolConfig::default(),
            aggregation_enabled: true,
            adversaries: AdversarySpec::none(),
            attack_time_ms: 30_000,
            seed: 1,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.node_count == 0 {
            return Err(invalid("node_count", "must be at least 1"));
        }
        if !(self.area_m.is_finite() && self.area_m > 0.0) {
            return Err(invalid("area_m", "must be positive"));
        }
        if self.lanes_per_direction == 0 {
            return Err(invalid("lanes_per_direction", "must be at least 1"));
        }
        if self.speed_limit_kmh == 0 {
            return Err(invalid("speed_limit_kmh", "must be positive"));
        }
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be positive"));
        }
        if self.retransmission_period_ms == 0 {
            return Err(invalid("retransmission_period_ms", "must be positive"));
        }
        if self.encounter_period_ms == 0 {
            return Err(invalid("encounter_period_ms", "must be positive"));
        }
        if !(self.tx_range_m > 0.0 && self.tx_range_m <= MAX_TX_RANGE_M) {
            return Err(invalid("tx_range_m", format!("must be in (0, {MAX_TX_RANGE_M}]")));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(invalid("loss_rate", "must be in [0, 1)"));
        }
        if !(self.jam_slowdown > 0.0 && self.jam_slowdown <= 1.0) {
            return Err(invalid("jam_slowdown", "must be in (0, 1]"));
        }
        if !(0 < self.danger_radius_m
            && self.danger_radius_m < self.uncertainty_radius_m
            && self.uncertainty_radius_m < self.security_radius_m)
        {
            return Err(invalid("zone radii", "need 0 < danger < uncertainty < security"));
        }
        if let Some(ev) = &self.event {
            if !(0.0..self.area_m).contains(&ev.x_m) {
                return Err(invalid("event_x_m", "must lie on the strip"));
            }
            if ev.lane >= self.lanes_per_direction {
                return Err(invalid("event_lane", "no such lane"));
            }
            if ev.direction > 1 {
                return Err(invalid("event_direction", "must be 0 or 1"));
            }
            self.protocol
                .storage_time(ev.event_type, self.road_class)?;
        }
        if self.max_signers == Some(0) {
            return Err(invalid("max_signers", "must be at least 1"));
        }
        PacketBudget::new(self.packet_size)?;
        self.effective_protocol()?.validate()?;
        self.adversaries.validate(self.node_count)?;
        Ok(())
    }

    /// Protocol parameters with the signer cap resolved from the packet budget.
    pub fn effective_protocol(&self) -> Result<ProtocolConfig, SimError> {
        let budget = PacketBudget::new(self.packet_size)?;
        Ok(ProtocolConfig {
            max_signers: self
                .max_signers
                .unwrap_or_else(|| max_signers_practical(budget, self.protocol.digest)),
            ..self.protocol.clone()
        })
    }

    pub fn event_position(&self) -> Option<Position> {
        self.event
            .map(|ev| Position::planar(ev.x_m, mobility::lane_y(ev.direction, ev.lane)))
    }

    /// The report a vehicle issues when it confirms the configured event.
    pub fn event_report(&self, source: NodeId, now: u64) -> Option<EventReport> {
        let ev = self.event?;
        let pos = self.event_position()?;
        Some(self.report_at(ev.event_type, pos, ev.direction, source, now))
    }

    pub(crate) fn report_at(
        &self,
        event_type: EventType,
        pos: Position,
        direction: u8,
        source: NodeId,
        now: u64,
    ) -> EventReport {
        let heading_mrad = if direction == 0 { 0 } else { 3142 };
        EventReport {
            location: FixedPosition::from_position(&pos),
            event_type,
            direction,
            road_id: ROAD_ID,
            road_class: self.road_class,
            speed_limit_kmh: self.speed_limit_kmh,
            lanes: self.lanes_per_direction,
            heading_mrad,
            timestamp_ms: now,
            source,
            danger_radius_m: self.danger_radius_m,
            uncertainty_radius_m: self.uncertainty_radius_m,
            security_radius_m: self.security_radius_m,
        }
    }
}

pub(crate) fn derive_seed(label: &str, seed: u64, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_be_bytes());
    h.update(index.to_be_bytes());
    h.finalize().into()
}

/// Runs the aggregation protocol, or the baseline when
/// `config.aggregation_enabled` is false.
pub fn run(config: &SimConfig) -> Result<RunOutput, SimError> {
    Ok(World::new(config.clone())?.run())
}

/// The same world with every node sending its own signed warning and
/// forwarding everything it receives.
pub fn baseline_run(config: &SimConfig) -> Result<RunOutput, SimError> {
    let config = SimConfig {
        aggregation_enabled: false,
        ..config.clone()
    };
    run(&config)
}
