//! Centralized training: ε-greedy rollouts into replay, additive-team TD
//! updates, periodic target sync and greedy evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    epsilon_schedule, select_action, team_reward, EpisodeRecord, ObservationEncoder, ObservationVariant, ReplayBuffer,
    RewardConfig,
};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::simcore::{EpisodeResult, Scenario, Simulation};
use crate::sso::ActionSpace;
use crate::valuenet::{sync_target, td_update, NetworkSpec, QNetwork, RmsProp};

const INIT_STREAM: u64 = 0x11;
const SAMPLE_STREAM: u64 = 0x12;
const TRAIN_STREAM: u64 = 0x13;
const EVAL_STREAM: u64 = 0x14;

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub anneal_episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Length of replayed sequences.
    pub window: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub target_sync_episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Reward coefficient `α`.
    pub alpha: f64,
    pub hidden_width: usize,
    pub recurrent_width: usize,
    pub max_grad_norm: Option<f64>,
    pub observation: ObservationVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            anneal_episodes: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            batch_size: 32,
            buffer_capacity: 10_000,
            window: 8,
            learning_rate: 5e-4,
            gamma: 0.99,
            target_sync_episodes: 200,
            eval_every: 200,
            eval_episodes: 20,
            alpha: 100.0,
            hidden_width: 64,
            recurrent_width: 64,
            max_grad_norm: Some(10.0),
            observation: ObservationVariant::Full,
        }
    }
}

impl TrainConfig {
    /// The long schedule: 200k episodes, ε annealed over the first half.
    pub fn paper_scale() -> Self {
        Self { episodes: 200_000, anneal_episodes: 100_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("window", self.window),
            ("target_sync_episodes", self.target_sync_episodes),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("hidden_width", self.hidden_width),
            ("recurrent_width", self.recurrent_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::Config("epsilon bounds must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(self.alpha > 0.0) {
            return Err(Error::Config("learning rate and alpha must be positive, gamma in [0, 1]".into()));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub train_return: f64,
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub mean_eval_reward: Option<f64>,
}

/// Mean results of a batch of greedy episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub mean_throughput: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the highest mean evaluation reward.
    pub best: QNetwork,
    pub best_eval_reward: f64,
    pub best_episode: usize,
    pub last: QNetwork,
    pub encoder: ObservationEncoder,
    pub log: Vec<TrainLogRow>,
}

/// Scenario as seen by learning agents: packets carry the variant's annex.
fn reward_config(scenario: &Scenario, alpha: f64) -> Result<RewardConfig> {
    let cfg = RewardConfig {
        alpha,
        lambda_net: scenario.per_node_rate,
        slot_s: scenario.slot_s,
        horizon_slots: scenario.horizon_slots,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Plays one episode with shared parameters; returns the summed team
/// reward, the replay record when `record` is set, and the episode result.
///
/// An agent whose overhear inputs are missing this slot repeats its
/// previous action.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    net: &QNetwork,
    encoder: &ObservationEncoder,
    actions: &ActionSpace,
    scenario: &Scenario,
    reward: &RewardConfig,
    seed: u64,
    epsilon: f64,
    record: bool,
) -> Result<(f64, Option<EpisodeRecord>, EpisodeResult)> {
    let n = scenario.n_transmitters();
    let mut sim = Simulation::new(scenario, seed, &vec![encoder.variant.annex_bytes(); n])?;
    let mut rng = seed::rng(seed, &[stream::POLICY]);
    let mut hidden = vec![net.initial_hidden(); n];
    let mut prev = vec![0usize; n];
    let mut rec = record.then(|| EpisodeRecord::new(n));
    let mut total = 0.0;
    let mut decisions = Vec::with_capacity(n);
    while !sim.is_done() {
        let obs = sim.observe()?;
        decisions.clear();
        for (i, o) in obs.iter().enumerate() {
            let x = encoder.encode(o)?;
            let (q, h) = net.forward(&x, &hidden[i])?;
            let a = if o.fresh { select_action(&q, epsilon, &mut rng) } else { prev[i] };
            if let Some(r) = rec.as_mut() {
                r.obs[i].push(x);
                r.hidden[i].push(std::mem::replace(&mut hidden[i], h));
                r.actions[i].push(a);
            } else {
                hidden[i] = h;
            }
            prev[i] = a;
            decisions.push(actions.decision(a)?);
        }
        let report = sim.step(&decisions)?;
        let r = team_reward(report.received, report.conflicts, reward);
        total += r;
        if let Some(rec) = rec.as_mut() {
            rec.rewards.push(r);
        }
    }
    if let Some(rec) = rec.as_mut() {
        let obs = sim.observe()?;
        for (i, o) in obs.iter().enumerate() {
            rec.obs[i].push(encoder.encode(o)?);
            rec.hidden[i].push(hidden[i].clone());
        }
    }
    let result = sim.finish();
    result.check_invariants(scenario.horizon_s())?;
    Ok((total, rec, result))
}

/// Greedy episodes on the given seeds, run in parallel.
pub fn evaluate(
    net: &QNetwork,
    encoder: &ObservationEncoder,
    actions: &ActionSpace,
    scenario: &Scenario,
    reward: &RewardConfig,
    seeds: &[u64],
) -> Result<EvalSummary> {
    let runs: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&s| {
            rollout(net, encoder, actions, scenario, reward, s, 0.0, false)
                .map(|(ret, _, res)| (ret, res.metrics.throughput_pkts_per_s))
        })
        .collect::<Result<_>>()?;
    let k = runs.len().max(1) as f64;
    Ok(EvalSummary {
        mean_reward: runs.iter().map(|r| r.0).sum::<f64>() / k,
        mean_throughput: runs.iter().map(|r| r.1).sum::<f64>() / k,
    })
}

/// Runs the full training schedule. `on_row` sees every log row as it is produced.
pub fn train(
    scenario: &Scenario,
    actions: &ActionSpace,
    cfg: &TrainConfig,
    seed: u64,
    mut on_row: impl FnMut(&TrainLogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    scenario.validate()?;
    let n = scenario.n_transmitters();
    let encoder = ObservationEncoder::new(n, cfg.observation);
    let spec = NetworkSpec {
        input_width: encoder.width(),
        hidden_width: cfg.hidden_width,
        recurrent_width: cfg.recurrent_width,
        output_width: actions.len(),
    };
    let reward = reward_config(scenario, cfg.alpha)?;
    let mut net = QNetwork::random(spec, &mut seed::rng(seed, &[INIT_STREAM]))?;
    let mut target = net.clone();
    let mut opt = RmsProp::new(spec.param_count(), cfg.learning_rate, cfg.max_grad_norm);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut sample_rng = seed::rng(seed, &[SAMPLE_STREAM]);
    let eval_seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|k| seed::derive(seed, &[EVAL_STREAM, k])).collect();
    let warmup = cfg.batch_size * cfg.window;

    let mut best = net.clone();
    let mut best_eval = f64::NEG_INFINITY;
    let mut best_episode = 0;
    let mut log = Vec::with_capacity(cfg.episodes);
    for ep in 1..=cfg.episodes {
        let epsilon = epsilon_schedule(ep, cfg.anneal_episodes, cfg.epsilon_start, cfg.epsilon_end);
        let ep_seed = seed::derive(seed, &[TRAIN_STREAM, ep as u64]);
        let (ret, rec, _) = rollout(&net, &encoder, actions, scenario, &reward, ep_seed, epsilon, true)?;
        buffer.push(rec.expect("recording requested"))?;
        let loss = if buffer.len() >= warmup {
            let batch = buffer.sample(cfg.batch_size, cfg.window, &mut sample_rng)?;
            let l = td_update(&mut net, &target, &mut opt, &batch, cfg.gamma)?;
            if !l.is_finite() {
                return Err(Error::Divergence { episode: ep, loss: l });
            }
            Some(l)
        } else {
            None
        };
        if ep % cfg.target_sync_episodes == 0 {
            sync_target(&net, &mut target)?;
        }
        let mean_eval_reward = if ep % cfg.eval_every == 0 || ep == cfg.episodes {
            let s = evaluate(&net, &encoder, actions, scenario, &reward, &eval_seeds)?;
            if s.mean_reward > best_eval {
                best_eval = s.mean_reward;
                best_episode = ep;
                best.copy_from(&net)?;
            }
            log::info!(
                "episode {ep}: eval reward {:.4}, throughput {:.4} pkt/s, epsilon {epsilon:.3}",
                s.mean_reward,
                s.mean_throughput
            );
            Some(s.mean_reward)
        } else {
            None
        };
        let row = TrainLogRow { episode: ep, train_return: ret, loss, epsilon, mean_eval_reward };
        on_row(&row)?;
        log.push(row);
    }
    Ok(TrainOutcome { best, best_eval_reward: best_eval, best_episode, last: net, encoder, log })
}
