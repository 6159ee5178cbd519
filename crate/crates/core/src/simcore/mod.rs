//! Discrete-event engine for a single-hop network of transmitters and one
//! sink: slot-gated decisions, continuous-time receptions, conflict and
//! SINR resolution, energy accounting, and episode metrics.

mod conflict;
mod engine;
mod metrics;

pub use conflict::{detect_conflicts, max_occupancy, occupancy_at, union_length, ConflictReport, Interval};
pub use engine::{
    min_power_for, resolve_reception, run_episode, sink_distances, EpisodeResult, NodeEnergy, Simulation, SlotReport,
};
pub use metrics::{compute_metrics, write_event_log, MetricsReport};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::loadaware::OverhearInfo;
use crate::modem::{FramingParams, ModeTable, PowerProfile};
use crate::world::{DelayModel, DriftParams, LocalLoadInfo, NodeId, PhyStatus, Position};

/// Everything that defines one simulated deployment.
#[derive(Clone, Debug)]
pub struct Scenario {
    /// Transmitter positions; transmitter `i` has node id `i`.
    pub positions: Vec<Position>,
    /// Sink position; the sink has node id `positions.len()`.
    pub sink: Position,
    pub channel: ChannelParams,
    pub framing: FramingParams,
    pub modes: ModeTable,
    pub power: PowerProfile,
    pub delay: DelayModel,
    pub drift: DriftParams,
    /// Decision slot length `δ_dur` in seconds.
    pub slot_s: f64,
    /// Observation window `T_ob` in slots.
    pub horizon_slots: usize,
    /// Poisson generation rate of each transmitter, pkt/s.
    pub per_node_rate: f64,
    /// Application data bytes per packet, excluding any load annex.
    pub payload_bytes: u32,
    /// Window of the local traffic estimator.
    pub kappa: usize,
    /// Time scale `a` of the information confidence, seconds.
    pub confidence_scale_s: f64,
    pub battery_j: f64,
    /// Per-slot probability that a node's overhear inputs are unavailable.
    pub observation_dropout: f64,
    /// Draw a Rayleigh fading coefficient per packet; `false` fixes `ρ = 1`.
    pub fading: bool,
}

impl Scenario {
    /// Three transmitters at 3, 4 and 5 km, 24 kHz, 190-byte packets, λ = 0.99.
    pub fn reference() -> Self {
        Self {
            positions: ring_positions(&[3000.0, 4000.0, 5000.0]),
            sink: Position::default(),
            channel: ChannelParams::default(),
            framing: FramingParams::default(),
            modes: ModeTable::standard(),
            power: PowerProfile::default(),
            delay: DelayModel::ConstantSpeed { sound_speed_ms: 1500.0 },
            drift: DriftParams::default(),
            slot_s: 1.0,
            horizon_slots: 200,
            per_node_rate: 0.99,
            payload_bytes: 190,
            kappa: 5,
            confidence_scale_s: 30.0,
            battery_j: 1.0e6,
            observation_dropout: 0.0,
            fading: true,
        }
    }

    pub fn n_transmitters(&self) -> usize {
        self.positions.len()
    }

    pub fn sink_id(&self) -> NodeId {
        self.positions.len()
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_slots as f64 * self.slot_s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_owned()));
        if self.positions.is_empty() {
            return cfg("at least one transmitter is required");
        }
        if self.positions.iter().chain(std::iter::once(&self.sink)).any(|p| !p.is_finite()) {
            return cfg("positions must be finite");
        }
        if self.positions.iter().any(|p| p.distance(&self.sink) <= 0.0) {
            return cfg("a transmitter coincides with the sink");
        }
        if !(self.slot_s > 0.0) || self.horizon_slots == 0 {
            return cfg("slot length and horizon must be positive");
        }
        if !(self.per_node_rate >= 0.0) {
            return cfg("traffic rate must be non-negative");
        }
        if self.payload_bytes == 0 {
            return cfg("payload must be at least one byte");
        }
        if self.kappa < 2 {
            return cfg("traffic estimator window must be at least 2");
        }
        if !(self.confidence_scale_s > 0.0) {
            return cfg("confidence time scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.observation_dropout) {
            return cfg("observation dropout must lie in [0, 1]");
        }
        if !(self.battery_j > 0.0) {
            return cfg("battery capacity must be positive");
        }
        let (DelayModel::ConstantSpeed { sound_speed_ms } | DelayModel::Table { sound_speed_ms, .. }) = &self.delay;
        if !(*sound_speed_ms > 0.0) {
            return cfg("sound speed must be positive");
        }
        self.channel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.framing.validate()?;
        self.modes.validate()?;
        self.power.validate()
    }
}

/// Places transmitters at the given ranges, evenly spaced in azimuth around
/// a sink at the origin.
pub fn ring_positions(distances_m: &[f64]) -> Vec<Position> {
    let n = distances_m.len().max(1) as f64;
    distances_m
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n;
            Position::new(d * theta.cos(), d * theta.sin(), 0.0)
        })
        .collect()
}

/// A transmitter's choice for one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    Wait,
    Transmit { mode: u8, power_w: f64 },
}

/// What one neighbor looks like from a transmitter's point of view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborView {
    pub id: NodeId,
    pub position: Position,
    pub info: OverhearInfo,
}

/// A transmitter's local view at a slot boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalObservation {
    pub node: NodeId,
    pub n_transmitters: usize,
    pub slot: usize,
    pub time_s: f64,
    pub phy_status: PhyStatus,
    pub position: Position,
    pub local: LocalLoadInfo,
    /// Other transmitters ordered by id.
    pub neighbors: Vec<NeighborView>,
    /// False when the overhear inputs of this slot were lost.
    pub fresh: bool,
}

impl LocalObservation {
    pub fn has_traffic(&self) -> bool {
        self.local.queue_len > 0
    }
}

/// Final state of a transmission at the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Received,
    Conflict,
    SinrFail,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pending => "PENDING",
            Outcome::Received => "RECEIVED",
            Outcome::Conflict => "CONFLICT",
            Outcome::SinrFail => "SINR_FAIL",
        })
    }
}

/// One packet on the air, from send to completion at the sink.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionEvent {
    pub sender: NodeId,
    pub t_send: f64,
    pub t_arrive: f64,
    pub t_complete: f64,
    pub mode: u8,
    pub power_w: f64,
    /// On-air bytes: data plus any load annex.
    pub payload_bytes: u32,
    pub data_bytes: u32,
    pub generated_at: f64,
    pub fading_coeff: f64,
    /// `H·ρ²` toward the sink.
    pub channel_gain: f64,
    pub energy_j: f64,
    pub outcome: Outcome,
    /// Load information carried in the header, if the sender attaches one.
    pub annex: Option<LocalLoadInfo>,
}

impl TransmissionEvent {
    pub fn reception(&self) -> Interval {
        Interval::new(self.t_arrive, self.t_complete)
    }

    pub fn tx_duration(&self) -> f64 {
        self.t_complete - self.t_arrive
    }
}
