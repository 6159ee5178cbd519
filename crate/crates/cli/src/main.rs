//! `uwan`: optimize action fronts, train agents, and run experiment suites.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use uwan::harness::{export_plot_data, read_results, run_ablation, run_sweep, ExperimentConfig, PlotMetric, Preset};
use uwan::marl::{save_checkpoint, train, ObservationVariant};
use uwan::sso::{build_action_space, evolve, front_to_text, ObjectiveEvaluator};

#[derive(Parser)]
#[command(name = "uwan", version, about = "Underwater acoustic network simulation and learned resource management")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run size preset.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    LocalOnly,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the ⟨mode, power⟩ Pareto front and write the action space.
    Front(Common),
    /// Train shared-parameter agents and write the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Observation variant; overrides the config.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Compare policies over the traffic or payload sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy names; overrides the config.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<String>,
        /// Checkpoint directory for `tarm`; overrides the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the three observation variants over the sweep.
    Ablation(Common),
    /// Write per-policy `x,mean,stddev` series from a results table.
    Plotdata {
        /// Results table written by `sweep` or `ablation`.
        #[arg(long)]
        results: PathBuf,
        /// throughput, throughput-bps, delay, energy, delivery-ratio, utilization or conflicts.
        #[arg(long)]
        metric: String,
        /// Directory for the per-policy series.
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Validate an experiment file and print the effective configuration.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
    },
}

fn load_config(config: Option<&Path>, preset: Option<PresetArg>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = preset {
        cfg.apply_preset(match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        });
    }
    Ok(cfg)
}

impl Common {
    fn resolve(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = load_config(self.config.as_deref(), self.preset)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok((cfg, out))
    }
}

fn front(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = common.resolve()?;
    let sc = &cfg.scenario;
    let eval = ObjectiveEvaluator::new(
        sc.modes.clone(),
        sc.framing.clone(),
        sc.power.clone(),
        sc.channel.clone(),
        cfg.actions.design_distance_m.unwrap_or_else(|| sc.max_distance_m()),
        cfg.actions.packet_bytes,
        cfg.actions.objective,
    )?;
    let result = evolve(&eval, &cfg.actions.ga, cfg.seed)?;
    std::fs::write(out.join("front.txt"), front_to_text(&result.front))?;
    let mut hv = csv::Writer::from_path(out.join("hypervolume.csv"))?;
    hv.write_record(["generation", "hypervolume"])?;
    for (g, v) in result.hypervolume.iter().enumerate() {
        hv.write_record([g.to_string(), v.to_string()])?;
    }
    hv.flush()?;
    let space = build_action_space(&result.front, cfg.actions.front_points)?;
    space.save(&out.join("actions.txt"))?;
    std::fs::write(out.join("effective_config.toml"), cfg.effective_toml()?)?;
    println!("front: {} solutions, action space: {} actions (incl. wait)", result.front.len(), space.len());
    for s in space.solutions() {
        println!("  mode {} at {:.2} W: delay {:.4} s, energy {:.3} J", s.mode, s.power_w, s.delay_s(), s.energy_j());
    }
    Ok(())
}

fn train_cmd(common: &Common, variant: Option<VariantArg>) -> anyhow::Result<()> {
    let (mut cfg, out) = common.resolve()?;
    if let Some(v) = variant {
        cfg.training.observation = match v {
            VariantArg::Full => ObservationVariant::Full,
            VariantArg::LocalOnly => ObservationVariant::LocalOnly,
            VariantArg::None => ObservationVariant::None,
        };
    }
    let scenario = cfg.scenario.build(cfg.traffic.fixed_rate)?;
    let actions = cfg.action_space()?;
    std::fs::write(out.join("effective_config.toml"), cfg.effective_toml()?)?;
    let mut log = csv::Writer::from_writer(File::create(out.join("train_log.csv"))?);
    let outcome = train(&scenario, &actions, &cfg.training, cfg.seed, |row| {
        log.serialize(row)?;
        Ok(())
    })?;
    log.flush()?;
    let dir = out.join("checkpoint");
    save_checkpoint(
        &dir,
        &outcome.best,
        &actions,
        &outcome.encoder,
        cfg.seed,
        outcome.best_episode,
        outcome.best_eval_reward,
    )?;
    println!(
        "best mean evaluation reward {:.4} at episode {}; checkpoint in {}",
        outcome.best_eval_reward,
        outcome.best_episode,
        dir.display()
    );
    Ok(())
}

fn sweep_cmd(common: &Common, policy: &[String], checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let (mut cfg, out) = common.resolve()?;
    if !policy.is_empty() {
        cfg.policies.names = policy.to_vec();
    }
    if let Some(c) = checkpoint {
        cfg.policies.checkpoint = Some(c.to_owned());
    }
    let rows = run_sweep(&cfg, &out)?;
    println!("{} rows written to {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn ablation_cmd(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = common.resolve()?;
    let rows = run_ablation(&cfg, &out)?;
    println!("{} rows written to {}", rows.len(), out.join("ablation.csv").display());
    Ok(())
}

fn plotdata(results: &Path, metric: &str, out: &Path) -> anyhow::Result<()> {
    let metric: PlotMetric = metric.parse()?;
    let rows = read_results(results)?;
    for p in export_plot_data(&rows, metric, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn validate_config(config: &Path, preset: Option<PresetArg>) -> anyhow::Result<()> {
    let cfg = load_config(Some(config), preset)?;
    cfg.validate()?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "# sha256 {}", cfg.hash()?)?;
    write!(stdout, "{}", cfg.effective_toml()?)?;
    Ok(())
}

/// Exit status for an error: one code per core error category, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<uwan::Error>().map(uwan::Error::category) {
        Some("config") => 2,
        Some("input") => 3,
        Some("optimization") => 4,
        Some("simulation") => 5,
        Some("training") => 6,
        Some("data") => 7,
        Some("io") => 8,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Front(c) => front(c),
        Command::Train { common, variant } => train_cmd(common, *variant),
        Command::Sweep { common, policy, checkpoint } => sweep_cmd(common, policy, checkpoint.as_deref()),
        Command::Ablation(c) => ablation_cmd(c),
        Command::Plotdata { results, metric, out } => plotdata(results, metric, out),
        Command::ValidateConfig { config, preset } => validate_config(config, *preset),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.downcast_ref::<uwan::Error>().map_or("error", uwan::Error::category);
            eprintln!("uwan: {category} error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
