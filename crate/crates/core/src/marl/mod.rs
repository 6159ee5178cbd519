//! Multi-agent reinforcement learning around the simulator: observation
//! encoding, team reward, additive value mixing, ε-greedy selection, the
//! replay buffer, centralized training, and decentralized execution.

mod agent;
mod replay;
mod trainer;

pub use agent::{load_agents, load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TarmAgent};
pub use replay::{EpisodeRecord, ReplayBuffer};
pub use trainer::{evaluate, rollout, train, EvalSummary, TrainConfig, TrainLogRow, TrainOutcome};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadaware::{local_confident_info, OverhearInfo};
use crate::simcore::LocalObservation;

/// Which load information enters the observation vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationVariant {
    /// Own load information plus every neighbor's position and overheard load.
    #[default]
    Full,
    /// Own load information only.
    LocalOnly,
    /// Neither own nor overheard load information.
    None,
}

impl ObservationVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationVariant::Full => "full",
            ObservationVariant::LocalOnly => "local-only",
            ObservationVariant::None => "none",
        }
    }

    /// Full observations ride on the load annex; the others send bare packets.
    pub fn annex_bytes(self) -> u32 {
        match self {
            ObservationVariant::Full => crate::loadaware::ANNEX_BYTES,
            _ => 0,
        }
    }
}

impl std::str::FromStr for ObservationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "local-only" => Ok(Self::LocalOnly),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown observation variant `{other}`"))),
        }
    }
}

/// Fixed-width observation encoding.
///
/// Layout: agent-id one-hot, phy-status one-hot, own position, then (by
/// variant) own ⟨CF, queue, est⟩ and, per neighbor in id order, position and
/// overheard ⟨CF, queue, est⟩. Positions are divided by `position_scale_m`,
/// queues capped at `queue_cap` and scaled to `[0, 1]`, estimates divided by
/// `est_scale` and capped at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationEncoder {
    pub n_agents: usize,
    pub variant: ObservationVariant,
    pub position_scale_m: f64,
    pub queue_cap: f64,
    pub est_scale: f64,
}

impl ObservationEncoder {
    pub fn new(n_agents: usize, variant: ObservationVariant) -> Self {
        Self { n_agents, variant, position_scale_m: 5000.0, queue_cap: 50.0, est_scale: 5.0 }
    }

    pub fn width(&self) -> usize {
        let base = self.n_agents + 3 + 3;
        match self.variant {
            ObservationVariant::Full => base + 3 + 6 * (self.n_agents - 1),
            ObservationVariant::LocalOnly => base + 3,
            ObservationVariant::None => base,
        }
    }

    fn push_info(&self, out: &mut Vec<f64>, info: &OverhearInfo) {
        out.push(info.confidence);
        out.push((f64::from(info.queue_len) / self.queue_cap).min(1.0));
        out.push((info.est / self.est_scale).min(1.0));
    }

    pub fn encode(&self, obs: &LocalObservation) -> Result<Vec<f64>> {
        if obs.node >= self.n_agents || obs.n_transmitters != self.n_agents {
            return Err(Error::Shape { expected: self.n_agents, actual: obs.n_transmitters });
        }
        let mut out = Vec::with_capacity(self.width());
        out.extend((0..self.n_agents).map(|k| if k == obs.node { 1.0 } else { 0.0 }));
        out.extend(obs.phy_status.one_hot());
        out.extend(obs.position.0.iter().map(|c| c / self.position_scale_m));
        if self.variant != ObservationVariant::None {
            self.push_info(&mut out, &local_confident_info(&obs.local));
        }
        if self.variant == ObservationVariant::Full {
            if obs.neighbors.len() != self.n_agents - 1 {
                return Err(Error::Shape { expected: self.n_agents - 1, actual: obs.neighbors.len() });
            }
            for nb in &obs.neighbors {
                out.extend(nb.position.0.iter().map(|c| c / self.position_scale_m));
                self.push_info(&mut out, &nb.info);
            }
        }
        debug_assert_eq!(out.len(), self.width());
        Ok(out)
    }
}

/// Reward scaling inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub lambda_net: f64,
    pub slot_s: f64,
    pub horizon_slots: usize,
}

impl RewardConfig {
    /// Traffic weight `ω = α / (λ·δ·T)`.
    pub fn weight(&self) -> f64 {
        self.alpha / (self.lambda_net * self.slot_s * self.horizon_slots as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.lambda_net > 0.0 && self.slot_s > 0.0 && self.horizon_slots > 0) {
            return Err(Error::Config("reward coefficient, rate, slot and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// `ω·(n_recv − n_conf)`.
pub fn team_reward(n_recv: usize, n_conf: usize, cfg: &RewardConfig) -> f64 {
    cfg.weight() * (n_recv as f64 - n_conf as f64)
}

/// Additive team value `Σ_i Q_i`.
pub fn mix_team_value(per_agent: &[f64]) -> f64 {
    per_agent.iter().sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = k;
        }
    }
    best
}

/// ε-greedy: uniform with probability `ε`, otherwise the argmax.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut dyn RngCore) -> usize {
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Linear from `start` at episode 1 to `end` at `anneal_episodes`, then flat.
pub fn epsilon_schedule(episode: usize, anneal_episodes: usize, start: f64, end: f64) -> f64 {
    let ep = episode.max(1);
    if anneal_episodes <= 1 || ep >= anneal_episodes {
        return end;
    }
    start + (end - start) * (ep - 1) as f64 / (anneal_episodes - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::simcore::NeighborView;
    use crate::world::{LocalLoadInfo, PhyStatus, Position};

    fn cfg(alpha: f64) -> RewardConfig {
        RewardConfig { alpha, lambda_net: 0.99, slot_s: 1.0, horizon_slots: 200 }
    }

    #[test]
    fn reward_arithmetic() {
        assert!((team_reward(3, 1, &cfg(1.0)) - 2.0 / 198.0).abs() < 1e-15);
        assert_eq!(team_reward(0, 0, &cfg(1.0)), 0.0);
        assert_eq!(team_reward(3, 1, &cfg(2.0)), 2.0 * team_reward(3, 1, &cfg(1.0)));
    }

    #[test]
    fn mixing_is_a_sum() {
        assert!((mix_team_value(&[0.2, -0.1, 0.4]) - 0.5).abs() < 1e-15);
        assert_eq!(mix_team_value(&[0.7]), 0.7);
        assert!((mix_team_value(&[0.4, 0.2, -0.1]) - mix_team_value(&[-0.1, 0.4, 0.2])).abs() < 1e-15);
    }

    #[test]
    fn selection_rules() {
        let mut rng = seed::rng(1, &[]);
        assert_eq!(select_action(&[0.1, 0.9, 0.3], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[0.5, 0.1, 0.2, 0.5], 0.0, &mut rng), 0);
        let draws = 10_000;
        let mut counts = [0usize; 7];
        for _ in 0..draws {
            counts[select_action(&[0.0; 7], 1.0, &mut rng)] += 1;
        }
        let e = draws as f64 / 7.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99.9% quantile of χ² with 6 degrees of freedom
        assert!(chi2 < 22.46, "chi2 {chi2}");
    }

    #[test]
    fn epsilon_trace() {
        assert_eq!(epsilon_schedule(1, 10_000, 1.0, 0.05), 1.0);
        assert!((epsilon_schedule(10_000, 10_000, 1.0, 0.05) - 0.05).abs() < 1e-12);
        assert!((epsilon_schedule(5_000, 9_999, 1.0, 0.05) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_schedule(50_000, 10_000, 1.0, 0.05), 0.05);
    }

    fn observation(node: usize) -> LocalObservation {
        let nb = |id| NeighborView {
            id,
            position: Position::new(1000.0 * id as f64, 0.0, 0.0),
            info: OverhearInfo { confidence: 0.5, queue_len: 100, est: 1.0 },
        };
        LocalObservation {
            node,
            n_transmitters: 3,
            slot: 4,
            time_s: 4.0,
            phy_status: PhyStatus::Send,
            position: Position::new(2500.0, 0.0, 0.0),
            local: LocalLoadInfo { t_acquire: 4.0, queue_len: 5, est: 0.5 },
            neighbors: (0..3).filter(|&j| j != node).map(nb).collect(),
            fresh: true,
        }
    }

    #[test]
    fn encoder_widths_and_layout() {
        let full = ObservationEncoder::new(3, ObservationVariant::Full);
        let li = ObservationEncoder::new(3, ObservationVariant::LocalOnly);
        let none = ObservationEncoder::new(3, ObservationVariant::None);
        assert_eq!((full.width(), li.width(), none.width()), (24, 12, 9));
        let v = full.encode(&observation(1)).unwrap();
        assert_eq!(v.len(), 24);
        assert_eq!(&v[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&v[3..6], &[0.0, 1.0, 0.0]);
        assert_eq!(v[6], 0.5);
        assert_eq!(&v[9..12], &[0.0, 0.1, 0.1]);
        // neighbor queue of 100 is capped
        assert_eq!(v[16], 1.0);
        assert_eq!(li.encode(&observation(0)).unwrap().len(), 12);
        assert_eq!(none.encode(&observation(2)).unwrap().len(), 9);
        let bad = ObservationEncoder::new(4, ObservationVariant::Full);
        assert!(bad.encode(&observation(0)).is_err());
    }
}
