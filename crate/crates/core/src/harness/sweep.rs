//! Replicated sweeps, aggregation, and result persistence.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::marl::{load_checkpoint, ObservationVariant};
use crate::policies::{policy_bundle, BundleContext};
use crate::seed;
use crate::simcore::{run_episode, MetricsReport};
use crate::sso::ActionSpace;

/// Mean and sample standard deviation of every metric at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub axis: SweepAxis,
    pub x: f64,
    pub episodes: usize,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub throughput_bps_mean: f64,
    pub throughput_bps_std: f64,
    /// Over episodes that received at least one packet.
    pub delay_mean: Option<f64>,
    pub delay_std: Option<f64>,
    pub energy_per_pkt_mean: Option<f64>,
    pub energy_per_pkt_std: Option<f64>,
    /// Over episodes that sent at least one packet.
    pub delivery_ratio_mean: Option<f64>,
    pub delivery_ratio_std: Option<f64>,
    pub utilization_mean: f64,
    pub utilization_std: f64,
    pub conflicts_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// The run stopped on an error; the table holds the finished rows only.
    Partial,
}

/// Sidecar written next to every results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub config_sha256: String,
    pub created_unix_s: u64,
    pub status: RunStatus,
    pub rows: usize,
    pub results_file: String,
    pub error: Option<String>,
    /// Caveats about how some rows were produced.
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Caveat attached to any results table containing NF-TDMA rows.
pub const NF_TDMA_NOTE: &str =
    "nf-tdma uses a constructive interval-packing schedule as a stand-in for the original scheduling rule";

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(0.0, |a, b| a + b) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn optional(xs: impl Iterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = xs.flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(&v);
    (Some(m), Some(s))
}

/// Folds per-episode metrics into one row.
pub fn aggregate(policy: &str, axis: SweepAxis, x: f64, runs: &[MetricsReport]) -> Result<ResultRow> {
    if runs.is_empty() {
        return Err(Error::EmptyResults(format!("no episodes for {policy} at {x}")));
    }
    let col = |f: fn(&MetricsReport) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
    let (throughput_mean, throughput_std) = col(|m| m.throughput_pkts_per_s);
    let (throughput_bps_mean, throughput_bps_std) = col(|m| m.throughput_bits_per_s);
    let (utilization_mean, utilization_std) = col(|m| m.channel_utilization);
    let (conflicts_mean, _) = col(|m| m.conflict_count as f64);
    let (delay_mean, delay_std) = optional(runs.iter().map(|m| m.mean_end_to_end_delay_s));
    let (energy_per_pkt_mean, energy_per_pkt_std) = optional(runs.iter().map(|m| m.mean_energy_per_pkt_j));
    let (delivery_ratio_mean, delivery_ratio_std) = optional(runs.iter().map(|m| m.delivery_ratio));
    Ok(ResultRow {
        policy: policy.to_string(),
        axis,
        x,
        episodes: runs.len(),
        throughput_mean,
        throughput_std,
        throughput_bps_mean,
        throughput_bps_std,
        delay_mean,
        delay_std,
        energy_per_pkt_mean,
        energy_per_pkt_std,
        delivery_ratio_mean,
        delivery_ratio_std,
        utilization_mean,
        utilization_std,
        conflicts_mean,
    })
}

/// One compared entry: a label, the registry name, and its checkpoint.
#[derive(Clone, Debug)]
struct Entry {
    label: String,
    name: String,
    checkpoint: Option<PathBuf>,
}

fn needs_actions(name: &str) -> bool {
    matches!(name, "aloha-min-energy" | "aloha-min-delay" | "random")
}

fn run_entries(cfg: &ExperimentConfig, entries: &[Entry]) -> (Vec<ResultRow>, Option<Error>) {
    let actions: Option<ActionSpace> = if entries.iter().any(|e| needs_actions(&e.name)) {
        match cfg.action_space() {
            Ok(a) => Some(a),
            Err(e) => return (Vec::new(), Some(e)),
        }
    } else {
        None
    };
    let points = cfg.traffic.points();
    let groups: Vec<(usize, usize)> = (0..entries.len()).flat_map(|p| (0..points.len()).map(move |s| (p, s))).collect();
    let failed = AtomicBool::new(false);
    let run_group = |&(p, s): &(usize, usize)| -> Option<Result<ResultRow>> {
        if failed.load(Ordering::Relaxed) {
            return None;
        }
        let entry = &entries[p];
        let x = points[s];
        let out = (|| {
            let sc = cfg.traffic.scenario_at(&cfg.scenario, x)?;
            let ctx = BundleContext {
                actions: actions.as_ref(),
                checkpoint: entry.checkpoint.as_deref(),
                nf_tdma_frame_slots: cfg.policies.nf_tdma_frame_slots,
            };
            let mut bundle = policy_bundle(&[entry.name.as_str()], &sc, &ctx)?;
            let runs = (0..cfg.replications)
                .map(|r| {
                    let ep_seed = seed::derive(cfg.seed, &[p as u64, s as u64, r as u64]);
                    run_episode(&mut bundle, &sc, ep_seed).map(|res| res.metrics)
                })
                .collect::<Result<Vec<_>>>()?;
            aggregate(&entry.label, cfg.traffic.axis, x, &runs)
        })();
        if out.is_err() {
            failed.store(true, Ordering::Relaxed);
        }
        Some(out)
    };
    let outcomes: Vec<Option<Result<ResultRow>>> = match cfg.pool() {
        Ok(pool) => pool.install(|| groups.par_iter().map(run_group).collect()),
        Err(e) => return (Vec::new(), Some(e)),
    };
    let mut rows = Vec::new();
    let mut error = None;
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => rows.push(r),
            Err(e) => {
                error.get_or_insert(e);
            }
        }
    }
    (rows, error)
}

/// Rows of the configured policy sweep, plus the error that stopped it, if any.
pub fn sweep_rows(cfg: &ExperimentConfig) -> (Vec<ResultRow>, Option<Error>) {
    let entries: Vec<Entry> = cfg
        .policies
        .names
        .iter()
        .map(|n| Entry { label: n.clone(), name: n.clone(), checkpoint: cfg.policies.checkpoint.clone() })
        .collect();
    run_entries(cfg, &entries)
}

/// Writes `<stem>.csv`, `<stem>.manifest.toml` and `effective_config.toml`
/// into `dir`. The manifest is marked partial when `error` is set.
pub fn write_results(
    dir: &Path,
    stem: &str,
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    error: Option<&Error>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective_config.toml"), cfg.effective_toml()?)?;
    let results_file = format!("{stem}.csv");
    let path = dir.join(&results_file);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash()?,
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        status: if error.is_some() { RunStatus::Partial } else { RunStatus::Complete },
        rows: rows.len(),
        results_file,
        error: error.map(|e| e.to_string()),
        notes: if rows.iter().any(|r| r.policy == "nf-tdma") { vec![NF_TDMA_NOTE.into()] } else { Vec::new() },
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.manifest.toml")), text)?;
    Ok(path)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn finish(
    dir: &Path,
    stem: &str,
    cfg: &ExperimentConfig,
    (rows, error): (Vec<ResultRow>, Option<Error>),
) -> Result<Vec<ResultRow>> {
    write_results(dir, stem, cfg, &rows, error.as_ref())?;
    match error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// Runs every configured policy over the sweep grid and writes `sweep.csv`.
/// On error the finished rows are still written, marked partial.
pub fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    finish(dir, "sweep", cfg, sweep_rows(cfg))
}

/// Runs the three observation variants over the sweep grid and writes
/// `ablation.csv`. Every checkpoint must exist and match its variant.
pub fn run_ablation(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let slots = [
        (ObservationVariant::Full, &cfg.ablation.full, "full"),
        (ObservationVariant::LocalOnly, &cfg.ablation.local_only, "local_only"),
        (ObservationVariant::None, &cfg.ablation.none, "none"),
    ];
    let mut entries = Vec::new();
    for (variant, path, key) in slots {
        let path = path.clone().ok_or_else(|| Error::MissingCheckpoint(PathBuf::from(format!("ablation.{key}"))))?;
        let cp = load_checkpoint(&path)?;
        if cp.manifest.encoder.variant != variant {
            return Err(Error::Config(format!(
                "ablation.{key} checkpoint was trained with `{}` observations",
                cp.manifest.encoder.variant.as_str()
            )));
        }
        let label = match variant {
            ObservationVariant::Full => "tarm".to_string(),
            v => format!("tarm-{}", v.as_str()),
        };
        entries.push(Entry { label, name: "tarm".into(), checkpoint: Some(path) });
    }
    finish(dir, "ablation", cfg, run_entries(cfg, &entries))
}
