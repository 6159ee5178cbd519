//! Per-policy series files for plotting.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::ResultRow;
use crate::error::{Error, Result};

/// Plottable result columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotMetric {
    Throughput,
    ThroughputBits,
    Delay,
    /// Energy per received packet.
    Energy,
    DeliveryRatio,
    Utilization,
    Conflicts,
}

impl PlotMetric {
    pub const ALL: [PlotMetric; 7] = [
        PlotMetric::Throughput,
        PlotMetric::ThroughputBits,
        PlotMetric::Delay,
        PlotMetric::Energy,
        PlotMetric::DeliveryRatio,
        PlotMetric::Utilization,
        PlotMetric::Conflicts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotMetric::Throughput => "throughput",
            PlotMetric::ThroughputBits => "throughput-bps",
            PlotMetric::Delay => "delay",
            PlotMetric::Energy => "energy",
            PlotMetric::DeliveryRatio => "delivery-ratio",
            PlotMetric::Utilization => "utilization",
            PlotMetric::Conflicts => "conflicts",
        }
    }

    /// `(mean, stddev)` of a row.
    pub fn value(self, r: &ResultRow) -> (Option<f64>, Option<f64>) {
        match self {
            PlotMetric::Throughput => (Some(r.throughput_mean), Some(r.throughput_std)),
            PlotMetric::ThroughputBits => (Some(r.throughput_bps_mean), Some(r.throughput_bps_std)),
            PlotMetric::Delay => (r.delay_mean, r.delay_std),
            PlotMetric::Energy => (r.energy_per_pkt_mean, r.energy_per_pkt_std),
            PlotMetric::DeliveryRatio => (r.delivery_ratio_mean, r.delivery_ratio_std),
            PlotMetric::Utilization => (Some(r.utilization_mean), Some(r.utilization_std)),
            PlotMetric::Conflicts => (Some(r.conflicts_mean), None),
        }
    }
}

impl FromStr for PlotMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "throughput" => PlotMetric::Throughput,
            "throughput-bps" | "bitrate" => PlotMetric::ThroughputBits,
            "delay" => PlotMetric::Delay,
            "energy" | "energy-per-pkt" => PlotMetric::Energy,
            "delivery-ratio" | "pdr" => PlotMetric::DeliveryRatio,
            "utilization" => PlotMetric::Utilization,
            "conflicts" => PlotMetric::Conflicts,
            other => return Err(Error::UnknownMetric(other.to_string())),
        };
        Ok(m)
    }
}

/// Writes `<metric>_<policy>.csv` with columns `x,mean,stddev` for every
/// policy in `rows`, in order of first appearance. Undefined values are
/// left empty.
pub fn export_plot_data(rows: &[ResultRow], metric: PlotMetric, dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::EmptyResults("results table has no rows".into()));
    }
    let mut policies: Vec<&str> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(policies.len());
    for policy in policies {
        let path = dir.join(format!("{}_{policy}.csv", metric.as_str()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "mean", "stddev"])?;
        for r in rows.iter().filter(|r| r.policy == policy) {
            let (mean, std) = metric.value(r);
            let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.x.to_string(), cell(mean), cell(std)])?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
