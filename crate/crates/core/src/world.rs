//! Node state: positions and passive drift, transmit queues, Poisson
//! traffic, the local traffic estimator, and propagation delay.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type NodeId = usize;

/// 3D position in metres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Position(pub [f64; 3]);

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn distance(&self, other: &Position) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhyStatus {
    #[default]
    Idle,
    Send,
    Recv,
}

impl PhyStatus {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            PhyStatus::Idle => [1.0, 0.0, 0.0],
            PhyStatus::Send => [0.0, 1.0, 0.0],
            PhyStatus::Recv => [0.0, 0.0, 1.0],
        }
    }
}

impl fmt::Display for PhyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhyStatus::Idle => "IDLE",
            PhyStatus::Send => "SEND",
            PhyStatus::Recv => "RECV",
        })
    }
}

/// A data packet waiting in a transmit queue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub generated_at: f64,
    pub payload_bytes: u32,
}

/// ⟨acquisition time, queue length, traffic estimate⟩ of one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalLoadInfo {
    pub t_acquire: f64,
    pub queue_len: u32,
    pub est: f64,
}

/// Mutable per-node simulation state.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Position,
    pub phy_status: PhyStatus,
    pub queue: VecDeque<Packet>,
    pub battery_j: f64,
    /// Generation times of the most recent packets, oldest first.
    recent_generations: VecDeque<f64>,
    history_len: usize,
    generated: u64,
    dequeued: u64,
}

impl NodeState {
    pub fn new(id: NodeId, position: Position, battery_j: f64, history_len: usize) -> Self {
        Self {
            id,
            position,
            phy_status: PhyStatus::Idle,
            queue: VecDeque::new(),
            battery_j,
            recent_generations: VecDeque::with_capacity(history_len),
            history_len: history_len.max(2),
            generated: 0,
            dequeued: 0,
        }
    }

    pub fn enqueue(&mut self, packet: Packet) {
        debug_assert!(self.queue.back().is_none_or(|p| p.generated_at <= packet.generated_at));
        if self.recent_generations.len() == self.history_len {
            self.recent_generations.pop_front();
        }
        self.recent_generations.push_back(packet.generated_at);
        self.queue.push_back(packet);
        self.generated += 1;
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        let p = self.queue.pop_front();
        if p.is_some() {
            self.dequeued += 1;
        }
        p
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn generated(&self) -> u64 {
        self.generated
    }

    pub fn dequeued(&self) -> u64 {
        self.dequeued
    }

    pub fn recent_generations(&self) -> Vec<f64> {
        self.recent_generations.iter().copied().collect()
    }

    /// Local load information stamped at `now`.
    pub fn load_info(&self, now: f64, kappa: usize) -> LocalLoadInfo {
        LocalLoadInfo {
            t_acquire: now,
            queue_len: u32::try_from(self.queue.len()).unwrap_or(u32::MAX),
            est: estimate_traffic(&self.recent_generations(), kappa),
        }
    }
}

/// Poisson arrivals over `[start, end)`, time-stamped uniformly and sorted.
pub fn generate_traffic<R: Rng + ?Sized>(
    rate_pkts_per_s: f64,
    payload_bytes: u32,
    window: (f64, f64),
    rng: &mut R,
) -> Result<Vec<Packet>> {
    if !(rate_pkts_per_s >= 0.0) {
        return Err(domain(format!("traffic rate must be non-negative, got {rate_pkts_per_s}")));
    }
    let (start, end) = window;
    let mean = rate_pkts_per_s * (end - start);
    if mean <= 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean).map_err(|e| domain(e.to_string()))?.sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| start + rng.random::<f64>() * (end - start)).collect();
    times.sort_by(f64::total_cmp);
    Ok(times.into_iter().map(|generated_at| Packet { generated_at, payload_bytes }).collect())
}

/// Linear estimate of the generation rate over the last `kappa` timestamps.
///
/// Returns 0 when fewer than two timestamps are available.
pub fn estimate_traffic(timestamps: &[f64], kappa: usize) -> f64 {
    let k = kappa.min(timestamps.len());
    if k < 2 {
        return 0.0;
    }
    let window = &timestamps[timestamps.len() - k..];
    let span = window[k - 1] - window[0];
    if span <= 0.0 {
        return 0.0;
    }
    (k - 1) as f64 / span
}

/// Drift plus Gaussian random walk. Disabled by default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub velocity_ms: [f64; 3],
    /// Per-step, per-axis standard deviation in metres.
    pub sigma_m: f64,
}

impl DriftParams {
    pub fn is_static(&self) -> bool {
        self.sigma_m == 0.0 && self.velocity_ms.iter().all(|&v| v == 0.0)
    }
}

pub fn step_mobility<R: Rng + ?Sized>(position: Position, drift: &DriftParams, step_s: f64, rng: &mut R) -> Position {
    if drift.is_static() {
        return position;
    }
    let mut next = position.0;
    for (axis, x) in next.iter_mut().enumerate() {
        let noise: f64 = if drift.sigma_m > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        *x += drift.velocity_ms[axis] * step_s + drift.sigma_m * noise;
    }
    Position(next)
}

/// Straight-line propagation delay at constant sound speed.
pub fn propagation_delay(a: &Position, b: &Position, sound_speed_ms: f64) -> Result<f64> {
    let d = a.distance(b);
    if d <= 0.0 {
        return Err(domain("propagation delay between coincident positions"));
    }
    if !(sound_speed_ms > 0.0) {
        return Err(domain("sound speed must be positive"));
    }
    Ok(d / sound_speed_ms)
}

/// Pairwise delays loaded from a text file of `i j delay_s` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayTable {
    delays: HashMap<(NodeId, NodeId), f64>,
}

impl DelayTable {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, detail: &str| Error::Format {
            what: "delay table",
            path: path.to_owned(),
            detail: format!("line {line}: {detail}"),
        };
        let mut delays = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad(n + 1, "expected `i j delay_s`"));
            }
            let i: NodeId = fields[0].parse().map_err(|_| bad(n + 1, "bad node id"))?;
            let j: NodeId = fields[1].parse().map_err(|_| bad(n + 1, "bad node id"))?;
            let d: f64 = fields[2].parse().map_err(|_| bad(n + 1, "bad delay"))?;
            if !(d > 0.0 && d.is_finite()) {
                return Err(bad(n + 1, "delay must be positive"));
            }
            delays.insert(ordered(i, j), d);
        }
        Ok(Self { delays })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.delays.get(&ordered(a, b)).copied()
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Source of propagation delays between node pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum DelayModel {
    ConstantSpeed {
        sound_speed_ms: f64,
    },
    /// Table lookup; pairs missing from the table fall back to constant speed.
    Table {
        table: DelayTable,
        sound_speed_ms: f64,
    },
}

impl DelayModel {
    pub fn delay(&self, a: NodeId, pa: &Position, b: NodeId, pb: &Position) -> Result<f64> {
        match self {
            DelayModel::ConstantSpeed { sound_speed_ms } => propagation_delay(pa, pb, *sound_speed_ms),
            DelayModel::Table { table, sound_speed_ms } => match table.get(a, b) {
                Some(d) => Ok(d),
                None => propagation_delay(pa, pb, *sound_speed_ms),
            },
        }
    }
}
