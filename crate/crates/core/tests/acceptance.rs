//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Criterion 8 trains for 20,000 episodes and dominates the runtime.

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use uwan::channel::{fading_cdf, sample_fading, thorp_absorption, transmission_loss_with, ChannelParams};
use uwan::harness::{run_sweep, ExperimentConfig};
use uwan::marl::{mix_team_value, save_checkpoint, team_reward, train, RewardConfig, TarmAgent, TrainConfig};
use uwan::modem::{FramingParams, ModeTable, PowerProfile};
use uwan::policies::{policy_bundle, Aloha, BundleContext, Policy, RandomPolicy};
use uwan::seed;
use uwan::simcore::{detect_conflicts, run_episode, write_event_log, Interval, Outcome, Scenario};
use uwan::sso::{
    build_action_space, dominates, evolve, grid_front, ActionSpace, GaParams, ObjectiveEvaluator, ObjectiveModel,
};
use uwan::valuenet::{gradient_check, AgentWindow, NetworkSpec, QNetwork, SequenceSample};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn evaluator(model: ObjectiveModel) -> ObjectiveEvaluator {
    ObjectiveEvaluator::new(
        ModeTable::standard(),
        FramingParams::default(),
        PowerProfile::default(),
        ChannelParams::default(),
        5000.0,
        200,
        model,
    )
    .expect("reference evaluator")
}

fn c1_channel_golden() -> Check {
    let alpha = thorp_absorption(24.0).map_err(e2s)?;
    ensure((alpha - 5.6912).abs() <= 1e-3, || format!("absorption {alpha} dB/km"))?;
    let h = transmission_loss_with(4.0, alpha, 0.0).map_err(e2s)?;
    ensure(((h - 3.305e-10) / 3.305e-10).abs() <= 0.01, || format!("loss {h:e}"))?;
    Ok(format!("absorption(24 kHz) = {alpha:.5} dB/km, loss(4 km) = {h:.4e}"))
}

fn c2_fading() -> Check {
    let n = 100_000;
    let mut rng = seed::rng(2, &[]);
    let mut xs: Vec<f64> = (0..n).map(|_| sample_fading(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = fading_cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    ensure(ks < 0.01, || format!("KS distance {ks}"))?;
    ensure((mean - 1.0).abs() <= 0.01, || format!("mean {mean}"))?;
    Ok(format!("KS = {ks:.5}, mean = {mean:.5}"))
}

/// Pairwise closed-interval overlap, quadratic.
fn pairwise_conflicts(ivs: &[Interval]) -> Vec<bool> {
    (0..ivs.len())
        .map(|i| (0..ivs.len()).any(|j| j != i && ivs[i].start <= ivs[j].end && ivs[j].start <= ivs[i].end))
        .collect()
}

fn c3_conflict_oracle() -> Check {
    let mut rng = seed::rng(3, &[]);
    let mut receptions = 0;
    let mut conflicts = 0;
    for ep in 0..1000u64 {
        let n = rng.random_range(3..=6);
        let distances: Vec<f64> = (0..n).map(|_| rng.random_range(1000.0..5000.0)).collect();
        let scenario = Scenario {
            positions: uwan::simcore::ring_positions(&distances),
            horizon_slots: 40,
            per_node_rate: rng.random_range(0.2..1.5),
            ..Scenario::reference()
        };
        let modes = scenario.modes.len() as u8;
        let mut policies: Vec<Box<dyn Policy>> = (0..n)
            .map(|_| {
                let p = Aloha::new("aloha", rng.random_range(0.02..0.6), rng.random_range(1..=modes), 40.0);
                Box::new(p.expect("valid aloha")) as Box<dyn Policy>
            })
            .collect();
        let result = run_episode(&mut policies, &scenario, ep).map_err(e2s)?;
        let ivs: Vec<Interval> = result.events.iter().map(|e| e.reception()).collect();
        let oracle = pairwise_conflicts(&ivs);
        let fast = detect_conflicts(&ivs);
        ensure(fast.conflicted == oracle, || format!("episode {ep}: interval sweep disagrees with pairwise oracle"))?;
        for (k, e) in result.events.iter().enumerate() {
            if e.outcome == Outcome::Pending {
                continue;
            }
            receptions += 1;
            let engine = e.outcome == Outcome::Conflict;
            conflicts += usize::from(engine);
            ensure(engine == oracle[k], || {
                format!("episode {ep}, packet {k}: engine says {}, oracle {}", e.outcome, oracle[k])
            })?;
        }
    }
    Ok(format!("1000 episodes, {receptions} resolved receptions, {conflicts} conflicts, all match"))
}

fn c4_nf_tdma() -> Check {
    let mut episodes = 0;
    let mut received = 0;
    for (s, rate) in uwan::harness::default_rates().into_iter().enumerate() {
        let scenario = Scenario { per_node_rate: rate, ..Scenario::reference() };
        ensure(scenario.drift.is_static(), || "topology must be static".into())?;
        let mut bundle = policy_bundle(&["nf-tdma"], &scenario, &BundleContext::default()).map_err(e2s)?;
        for r in 0..20u64 {
            let res = run_episode(&mut bundle, &scenario, seed::derive(4, &[s as u64, r])).map_err(e2s)?;
            ensure(res.metrics.conflict_count == 0, || {
                format!("λ = {rate}: {} conflicts in replication {r}", res.metrics.conflict_count)
            })?;
            episodes += 1;
            received += res.metrics.received_count;
        }
    }
    Ok(format!("{episodes} episodes over 18 rates, 0 conflicts, {received} packets received"))
}

fn c5_nsga() -> Check {
    let eval = evaluator(ObjectiveModel::FadingExpected);
    let grid = grid_front(&eval, 0.5).map_err(e2s)?;
    let params = GaParams { power_grid_w: Some(0.5), ..GaParams::default() };
    ensure(params.population == 500 && params.generations == 500, || "GA size".into())?;
    let discrete = evolve(&eval, &params, 5).map_err(e2s)?;
    let key = |v: &[uwan::sso::ParetoSolution]| {
        let mut k: Vec<[f64; 2]> = v.iter().map(|s| s.objectives).collect();
        k.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        k
    };
    let (a, b) = (key(&discrete.front), key(&grid));
    ensure(a.len() == b.len(), || format!("evolved front has {} points, grid front {}", a.len(), b.len()))?;
    for (x, y) in a.iter().zip(&b) {
        let close = (0..2).all(|i| (x[i] - y[i]).abs() <= 1e-9 * y[i].abs().max(1.0));
        ensure(close, || format!("objective vectors differ: {x:?} vs {y:?}"))?;
    }
    let continuous = evolve(&eval, &GaParams::default(), 5).map_err(e2s)?;
    let f = &continuous.front;
    for i in 0..f.len() {
        for j in 0..f.len() {
            ensure(i == j || !dominates(&f[i], &f[j]), || format!("front member {i} dominates {j}"))?;
        }
    }
    let space = build_action_space(f, 6).map_err(e2s)?;
    ensure(space.len() == 7, || format!("|A| = {}", space.len()))?;
    Ok(format!(
        "grid front of {} points matched exactly; continuous front of {} mutually non-dominated; |A| = 7",
        grid.len(),
        f.len()
    ))
}

fn random_batch<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Vec<SequenceSample> {
    let agents = rng.random_range(1..=3);
    let len = rng.random_range(1..=4);
    (0..2)
        .map(|_| SequenceSample {
            agents: (0..agents)
                .map(|_| AgentWindow {
                    h_start: (0..spec.recurrent_width).map(|_| rng.random_range(-0.5..0.5)).collect(),
                    h_next: (0..spec.recurrent_width).map(|_| rng.random_range(-0.5..0.5)).collect(),
                    obs: (0..=len)
                        .map(|_| (0..spec.input_width).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                    actions: (0..len).map(|_| rng.random_range(0..spec.output_width)).collect(),
                })
                .collect(),
            rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn c6_gradient() -> Check {
    let spec = NetworkSpec { input_width: 4, hidden_width: 5, recurrent_width: 3, output_width: 3 };
    let mut rng = seed::rng(6, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let net = QNetwork::random(spec, &mut rng).map_err(e2s)?;
        let target = QNetwork::random(spec, &mut rng).map_err(e2s)?;
        let batch = random_batch(&spec, &mut rng);
        let gamma = rng.random_range(0.0..1.0);
        worst = worst.max(gradient_check(&net, &target, &batch, gamma, 1e-5).map_err(e2s)?);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 draws, max relative error {worst:.2e}"))
}

fn c7_reward_and_mixing() -> Check {
    let cfg = RewardConfig { alpha: 1.0, lambda_net: 0.99, slot_s: 1.0, horizon_slots: 200 };
    let r = team_reward(3, 1, &cfg);
    ensure(r == 2.0 / 198.0, || format!("team_reward = {r:e}"))?;
    let mut rng = seed::rng(7, &[]);
    let (n, a) = (3usize, 7usize);
    for _ in 0..100 {
        let q: Vec<Vec<f64>> = (0..n).map(|_| (0..a).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut best = f64::NEG_INFINITY;
        let mut best_joint = [0usize; 3];
        for a0 in 0..a {
            for a1 in 0..a {
                for a2 in 0..a {
                    let joint = [a0, a1, a2];
                    let v = mix_team_value(&[q[0][a0], q[1][a1], q[2][a2]]);
                    let direct = q[0][a0] + q[1][a1] + q[2][a2];
                    ensure(v == direct, || "team value is not the per-agent sum".into())?;
                    if v > best {
                        best = v;
                        best_joint = joint;
                    }
                }
            }
        }
        let greedy: Vec<usize> = q.iter().map(|qi| uwan::marl::argmax(qi)).collect();
        ensure(greedy == best_joint, || format!("joint argmax {best_joint:?}, per-agent argmaxes {greedy:?}"))?;
        let sum_max: f64 = q.iter().map(|qi| qi.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum();
        ensure((sum_max - best).abs() < 1e-12, || "max of sum differs from sum of maxes".into())?;
    }
    Ok("team_reward(3, 1) = 2/198 exactly; 100 random tables × 343 joint actions decompose".into())
}

/// Action space used by both the trained agents and the baselines.
fn reference_actions() -> Result<ActionSpace, String> {
    let eval = evaluator(ObjectiveModel::FadingExpected);
    let front = evolve(&eval, &GaParams::default(), 1).map_err(e2s)?.front;
    build_action_space(&front, 6).map_err(e2s)
}

fn throughput(policies: &mut [Box<dyn Policy>], scenario: &Scenario, seed: u64) -> Result<f64, String> {
    Ok(run_episode(policies, scenario, seed).map_err(e2s)?.metrics.throughput_pkts_per_s)
}

fn c8_training() -> Check {
    let scenario = Scenario::reference();
    ensure(scenario.payload_bytes + uwan::loadaware::ANNEX_BYTES == 200, || "packet length".into())?;
    let actions = reference_actions()?;
    let cfg = TrainConfig::default();
    ensure(cfg.episodes == 20_000, || "episode budget".into())?;
    let outcome = train(&scenario, &actions, &cfg, 2024, |_| Ok(())).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    save_checkpoint(
        dir.path(),
        &outcome.best,
        &actions,
        &outcome.encoder,
        2024,
        outcome.best_episode,
        outcome.best_eval_reward,
    )
    .map_err(e2s)?;
    let mut tarm = uwan::marl::load_agents(dir.path(), 3).map_err(e2s)?;
    let ctx = BundleContext { actions: Some(&actions), ..BundleContext::default() };
    let mut random: Vec<Box<dyn Policy>> =
        (0..3).map(|_| Box::new(RandomPolicy::new(&actions)) as Box<dyn Policy>).collect();
    let mut alohas = ["aloha", "aloha-min-energy", "aloha-min-delay"]
        .map(|name| policy_bundle(&[name], &scenario, &ctx).expect("aloha bundle"));
    let mut wins = 0;
    let mut lines = Vec::new();
    for k in 0..10u64 {
        let s = seed::derive(8_000, &[k]);
        let t = throughput(&mut tarm, &scenario, s)?;
        let r = throughput(&mut random, &scenario, s)?;
        let mut best_aloha = 0.0f64;
        for b in alohas.iter_mut() {
            best_aloha = best_aloha.max(throughput(b, &scenario, s)?);
        }
        let ok = t >= 1.5 * r && t > best_aloha;
        wins += usize::from(ok);
        lines.push(format!("{t:.3}/{r:.3}/{best_aloha:.3}{}", if ok { "" } else { "✗" }));
    }
    let summary = format!(
        "best eval at episode {}; {wins}/10 seeds won; tarm/random/best-aloha pkt/s: {}",
        outcome.best_episode,
        lines.join(" ")
    );
    ensure(wins >= 8, || summary.clone())?;
    Ok(summary)
}

fn event_log_bytes(policies: &mut [Box<dyn Policy>], scenario: &Scenario, seed: u64) -> Result<Vec<u8>, String> {
    let res = run_episode(policies, scenario, seed).map_err(e2s)?;
    let mut buf = Vec::new();
    write_event_log(&res.events, &mut buf).map_err(e2s)?;
    Ok(buf)
}

fn c9_determinism() -> Check {
    let scenario = Scenario::reference();
    let actions = build_action_space(&grid_front(&evaluator(ObjectiveModel::FadingExpected), 0.5).map_err(e2s)?, 6)
        .map_err(e2s)?;
    let ctx = BundleContext { actions: Some(&actions), ..BundleContext::default() };
    for name in ["aloha", "random", "nf-tdma"] {
        let mut p = policy_bundle(&[name], &scenario, &ctx).map_err(e2s)?;
        let a = event_log_bytes(&mut p, &scenario, 99)?;
        let b = event_log_bytes(&mut p, &scenario, 99)?;
        ensure(a == b, || format!("{name} event logs differ"))?;
    }

    let mut cfg = ExperimentConfig::default();
    cfg.replications = 4;
    cfg.traffic.rates = vec![0.27, 0.99, 1.71];
    cfg.actions.ga.population = 60;
    cfg.actions.ga.generations = 40;
    let dirs = [tempfile::tempdir().map_err(e2s)?, tempfile::tempdir().map_err(e2s)?];
    for d in &dirs {
        run_sweep(&cfg, d.path()).map_err(e2s)?;
    }
    let read = |d: &Path| std::fs::read(d.join("sweep.csv")).map_err(e2s);
    ensure(read(dirs[0].path())? == read(dirs[1].path())?, || "sweep tables differ".into())?;

    let small = Scenario { horizon_slots: 40, ..Scenario::reference() };
    let tcfg = TrainConfig {
        episodes: 30,
        anneal_episodes: 15,
        batch_size: 4,
        window: 4,
        target_sync_episodes: 10,
        eval_every: 10,
        eval_episodes: 3,
        hidden_width: 8,
        recurrent_width: 8,
        ..TrainConfig::default()
    };
    let run = |seed: u64| -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut log = csv::Writer::from_writer(Vec::new());
        let out = train(&small, &actions, &tcfg, seed, |row| {
            log.serialize(row)?;
            Ok(())
        })
        .map_err(e2s)?;
        let dir = tempfile::tempdir().map_err(e2s)?;
        save_checkpoint(dir.path(), &out.best, &actions, &out.encoder, seed, out.best_episode, out.best_eval_reward)
            .map_err(e2s)?;
        let params = std::fs::read(dir.path().join("q.bin")).map_err(e2s)?;
        Ok((log.into_inner().map_err(e2s)?, params))
    };
    let (a, b, c) = (run(11)?, run(11)?, run(12)?);
    ensure(a == b, || "training logs or checkpoints differ".into())?;
    ensure(a.0 != c.0, || "different seeds gave the same training log".into())?;

    let agents = |net: &QNetwork| -> Result<Vec<Box<dyn Policy>>, String> {
        let enc = uwan::ObservationEncoder::new(3, uwan::ObservationVariant::Full);
        let t =
            TarmAgent::new(std::sync::Arc::new(net.clone()), std::sync::Arc::new(actions.clone()), enc).map_err(e2s)?;
        Ok((0..3).map(|_| Box::new(t.clone()) as Box<dyn Policy>).collect())
    };
    let spec = NetworkSpec::standard(24, actions.len());
    let net = QNetwork::random(spec, &mut seed::rng(9, &[])).map_err(e2s)?;
    let x = event_log_bytes(&mut agents(&net)?, &scenario, 5)?;
    let y = event_log_bytes(&mut agents(&net)?, &scenario, 5)?;
    ensure(x == y, || "agent event logs differ".into())?;
    Ok("episode logs, sweep tables, training logs and checkpoints repeat byte for byte".into())
}

fn c10_metric_identities() -> Check {
    let actions = build_action_space(&grid_front(&evaluator(ObjectiveModel::FadingExpected), 0.5).map_err(e2s)?, 6)
        .map_err(e2s)?;
    let ctx = BundleContext { actions: Some(&actions), ..BundleContext::default() };
    let mut episodes = 0;
    for (s, rate) in [0.03, 0.51, 0.99, 1.47, 2.07].into_iter().enumerate() {
        let scenario = Scenario { per_node_rate: rate, battery_j: 2_000.0, ..Scenario::reference() };
        let horizon = scenario.horizon_s();
        for name in ["aloha", "aloha-min-energy", "aloha-min-delay", "random", "nf-tdma", "wait"] {
            let mut p = policy_bundle(&[name], &scenario, &ctx).map_err(e2s)?;
            for r in 0..10u64 {
                let res = run_episode(&mut p, &scenario, seed::derive(10, &[s as u64, r])).map_err(e2s)?;
                res.check_invariants(horizon).map_err(e2s)?;
                let m = &res.metrics;
                if let Some(d) = m.delivery_ratio {
                    ensure((d * m.sent_count as f64 - m.received_count as f64).abs() < 1e-9, || {
                        format!("{name}: D·s = {} but re = {}", d * m.sent_count as f64, m.received_count)
                    })?;
                }
                ensure((0.0..=1.0).contains(&m.channel_utilization), || {
                    format!("{name}: U = {}", m.channel_utilization)
                })?;
                for (i, e) in res.energy.iter().enumerate() {
                    let spent = e.tx_j + e.recv_j + e.idle_j;
                    let expected = (scenario.battery_j - spent).max(0.0);
                    ensure((e.battery_j - expected).abs() < 1e-6, || {
                        format!("{name}: node {i} battery {} but spent {spent} of {}", e.battery_j, scenario.battery_j)
                    })?;
                    let t = e.send_s + e.recv_s + e.idle_s;
                    ensure((t - horizon).abs() < 1e-9, || format!("{name}: node {i} time budget {t}"))?;
                }
                episodes += 1;
            }
        }
    }
    Ok(format!("{episodes} episodes: D·s = re, U in [0, 1], energy and time budgets balance"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("1 channel golden values", c1_channel_golden),
        ("2 fading distribution", c2_fading),
        ("3 collision oracle equivalence", c3_conflict_oracle),
        ("4 NF-TDMA reliability", c4_nf_tdma),
        ("5 NSGA-II oracle", c5_nsga),
        ("6 gradient check", c6_gradient),
        ("7 reward arithmetic and mixing", c7_reward_and_mixing),
        ("8 training improvement", c8_training),
        ("9 determinism", c9_determinism),
        ("10 metric identities", c10_metric_identities),
    ];
    // Optional positional arguments select criteria by number.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        let number = name.split(' ').next().unwrap_or_default();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
