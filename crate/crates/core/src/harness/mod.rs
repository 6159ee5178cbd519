//! Experiment orchestration: the TOML experiment file, presets, the traffic
//! and payload sweeps, the observation ablation, result tables with their
//! manifests, and plot-series export.

mod export;
mod sweep;

pub use export::{export_plot_data, PlotMetric};
pub use sweep::{
    aggregate, read_results, run_ablation, run_sweep, sweep_rows, write_results, ResultRow, RunManifest, RunStatus,
    NF_TDMA_NOTE,
};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::marl::TrainConfig;
use crate::modem::{FramingParams, ModeTable, PowerProfile};
use crate::simcore::{ring_positions, Scenario};
use crate::sso::{build_action_space, evolve, ActionSpace, GaParams, ObjectiveEvaluator, ObjectiveModel};
use crate::world::{DelayModel, DriftParams, Position};

/// Arrival rates of the traffic sweep: 0.03 to 2.07 pkt/s in steps of 0.12.
pub fn default_rates() -> Vec<f64> {
    (0..18).map(|k| ((3 + 12 * k) as f64) / 100.0).collect()
}

/// Run size presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 20 replications, 20k training episodes.
    #[default]
    Desk,
    /// 100 replications, 200k training episodes.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}

/// Which quantity the sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Per-node arrival rate, pkt/s.
    #[default]
    Rate,
    /// Application payload bytes at a fixed rate.
    Payload,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Rate => "rate",
            SweepAxis::Payload => "payload",
        }
    }
}

/// Deployment and physical-layer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Sink distances of transmitters placed evenly on a horizontal ring.
    pub distances_m: Vec<f64>,
    /// Explicit transmitter positions; overrides `distances_m`.
    pub positions: Option<Vec<Position>>,
    pub sink: Position,
    pub sound_speed_ms: f64,
    pub slot_s: f64,
    pub horizon_slots: usize,
    pub payload_bytes: u32,
    pub kappa: usize,
    pub confidence_scale_s: f64,
    pub battery_j: f64,
    pub observation_dropout: f64,
    pub fading: bool,
    pub channel: ChannelParams,
    pub framing: FramingParams,
    pub power: PowerProfile,
    #[serde(default = "ModeTable::standard")]
    pub modes: ModeTable,
    pub drift: DriftParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let r = Scenario::reference();
        Self {
            distances_m: vec![3000.0, 4000.0, 5000.0],
            positions: None,
            sink: r.sink,
            sound_speed_ms: 1500.0,
            slot_s: r.slot_s,
            horizon_slots: r.horizon_slots,
            payload_bytes: r.payload_bytes,
            kappa: r.kappa,
            confidence_scale_s: r.confidence_scale_s,
            battery_j: r.battery_j,
            observation_dropout: r.observation_dropout,
            fading: r.fading,
            channel: r.channel,
            framing: r.framing,
            power: r.power,
            modes: r.modes,
            drift: r.drift,
        }
    }
}

impl ScenarioConfig {
    /// Validated scenario at the given per-node arrival rate.
    pub fn build(&self, per_node_rate: f64) -> Result<Scenario> {
        let positions = match &self.positions {
            Some(p) => p.clone(),
            None => ring_positions(&self.distances_m),
        };
        let sc = Scenario {
            positions,
            sink: self.sink,
            channel: self.channel.clone(),
            framing: self.framing.clone(),
            modes: self.modes.clone(),
            power: self.power.clone(),
            delay: DelayModel::ConstantSpeed { sound_speed_ms: self.sound_speed_ms },
            drift: self.drift.clone(),
            slot_s: self.slot_s,
            horizon_slots: self.horizon_slots,
            per_node_rate,
            payload_bytes: self.payload_bytes,
            kappa: self.kappa,
            confidence_scale_s: self.confidence_scale_s,
            battery_j: self.battery_j,
            observation_dropout: self.observation_dropout,
            fading: self.fading,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Distance of the farthest transmitter from the sink.
    pub fn max_distance_m(&self) -> f64 {
        match &self.positions {
            Some(p) => p.iter().map(|x| x.distance(&self.sink)).fold(0.0, f64::max),
            None => self.distances_m.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Policies to compare and what they load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub names: Vec<String>,
    /// Checkpoint directory used by `tarm`.
    pub checkpoint: Option<PathBuf>,
    pub nf_tdma_frame_slots: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            names: ["aloha", "aloha-min-energy", "aloha-min-delay", "nf-tdma", "random"].map(String::from).to_vec(),
            checkpoint: None,
            nf_tdma_frame_slots: None,
        }
    }
}

/// Sweep grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub axis: SweepAxis,
    pub rates: Vec<f64>,
    pub payloads_bytes: Vec<u32>,
    /// Arrival rate held during the payload sweep.
    pub fixed_rate: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Rate,
            rates: default_rates(),
            payloads_bytes: (2..=8).map(|k| 50 * k).collect(),
            fixed_rate: 0.99,
        }
    }
}

impl TrafficConfig {
    /// Sweep values along the active axis.
    pub fn points(&self) -> Vec<f64> {
        match self.axis {
            SweepAxis::Rate => self.rates.clone(),
            SweepAxis::Payload => self.payloads_bytes.iter().map(|&b| f64::from(b)).collect(),
        }
    }

    /// Scenario for sweep value `x`.
    pub fn scenario_at(&self, base: &ScenarioConfig, x: f64) -> Result<Scenario> {
        match self.axis {
            SweepAxis::Rate => base.build(x),
            SweepAxis::Payload => {
                let mut sc = base.build(self.fixed_rate)?;
                sc.payload_bytes = x as u32;
                Ok(sc)
            }
        }
    }
}

/// How the action space is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    /// Load the action space from a text file instead of optimizing.
    pub file: Option<PathBuf>,
    pub objective: ObjectiveModel,
    /// Link distance the front is optimized for; defaults to the farthest transmitter.
    pub design_distance_m: Option<f64>,
    /// On-air bytes assumed by the objectives.
    pub packet_bytes: u32,
    /// Front points kept; the action space adds the wait action.
    pub front_points: usize,
    pub ga: GaParams,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            file: None,
            objective: ObjectiveModel::default(),
            design_distance_m: None,
            packet_bytes: 200,
            front_points: 6,
            ga: GaParams::default(),
        }
    }
}

/// Checkpoints of the three observation variants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub full: Option<PathBuf>,
    pub local_only: Option<PathBuf>,
    pub none: Option<PathBuf>,
}

/// Root of the experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub policies: PolicyConfig,
    pub traffic: TrafficConfig,
    pub actions: ActionConfig,
    pub training: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replications: 20,
            workers: 0,
            output_dir: PathBuf::from("results"),
            scenario: ScenarioConfig::default(),
            policies: PolicyConfig::default(),
            traffic: TrafficConfig::default(),
            actions: ActionConfig::default(),
            training: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path)
    }

    /// Sets replication count and training length.
    pub fn apply_preset(&mut self, preset: Preset) {
        let base = match preset {
            Preset::Desk => TrainConfig::default(),
            Preset::Paper => TrainConfig::paper_scale(),
        };
        self.replications = match preset {
            Preset::Desk => 20,
            Preset::Paper => 100,
        };
        self.training.episodes = base.episodes;
        self.training.anneal_episodes = base.anneal_episodes;
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.policies.names.is_empty() {
            return Err(Error::Config("policy list is empty".into()));
        }
        for name in &self.policies.names {
            if !crate::policies::POLICY_NAMES.contains(&name.as_str()) {
                return Err(Error::UnknownPolicy(name.clone()));
            }
        }
        if self.traffic.rates.is_empty() || self.traffic.payloads_bytes.is_empty() {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        if self.traffic.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("arrival rates must be finite and non-negative".into()));
        }
        if self.traffic.payloads_bytes.contains(&0) {
            return Err(Error::Config("payload sizes must be positive".into()));
        }
        if self.actions.front_points == 0 {
            return Err(Error::Config("front_points must be positive".into()));
        }
        self.actions.ga.validate()?;
        self.training.validate()?;
        self.scenario.build(self.traffic.fixed_rate)?;
        Ok(())
    }

    /// The configuration as it will be run, in TOML.
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.effective_toml()?.as_bytes())))
    }

    /// Reads the configured action space, or optimizes one.
    pub fn action_space(&self) -> Result<ActionSpace> {
        if let Some(path) = &self.actions.file {
            return ActionSpace::load(path);
        }
        let sc = &self.scenario;
        let eval = ObjectiveEvaluator::new(
            sc.modes.clone(),
            sc.framing.clone(),
            sc.power.clone(),
            sc.channel.clone(),
            self.actions.design_distance_m.unwrap_or_else(|| sc.max_distance_m()),
            self.actions.packet_bytes,
            self.actions.objective,
        )?;
        let result = evolve(&eval, &self.actions.ga, self.seed)?;
        build_action_space(&result.front, self.actions.front_points)
    }

    /// Thread pool honoring `workers`.
    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rate_grid() {
        let r = default_rates();
        assert_eq!(r.len(), 18);
        assert!((r[0] - 0.03).abs() < 1e-12);
        assert!((r[17] - 2.07).abs() < 1e-12);
        assert!(r.windows(2).all(|w| (w[1] - w[0] - 0.12).abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.effective_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());

        let e = ExperimentConfig::from_toml("replications = 0", Path::new("x.toml")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = ExperimentConfig::from_toml("bogus = 1", Path::new("x.toml")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = ExperimentConfig::from_toml("[traffic]\nrates = []", Path::new("x.toml")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = ExperimentConfig::from_toml("[policies]\nnames = [\"csma\"]", Path::new("x.toml")).unwrap_err();
        assert!(matches!(e, Error::UnknownPolicy(_)));
    }

    #[test]
    fn presets() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_preset(Preset::Paper);
        assert_eq!((cfg.replications, cfg.training.episodes), (100, 200_000));
        cfg.apply_preset(Preset::Desk);
        assert_eq!((cfg.replications, cfg.training.episodes), (20, 20_000));
        assert!("lab".parse::<Preset>().is_err());
    }

    #[test]
    fn payload_axis_holds_rate() {
        let t = TrafficConfig { axis: SweepAxis::Payload, ..TrafficConfig::default() };
        let sc = t.scenario_at(&ScenarioConfig::default(), 300.0).unwrap();
        assert_eq!(sc.payload_bytes, 300);
        assert_eq!(sc.per_node_rate, 0.99);
    }
}
