//! Episode metrics and the event-log export.

use std::io::Write;

use serde::Serialize;

use super::engine::NodeEnergy;
use super::{Outcome, TransmissionEvent};
use crate::error::Result;

/// Network-level performance over one observation window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub throughput_pkts_per_s: f64,
    /// Application payload bits delivered per second.
    pub throughput_bits_per_s: f64,
    /// Mean generation-to-completion delay of received packets.
    pub mean_end_to_end_delay_s: Option<f64>,
    /// Transmit energy of all sent packets per received packet.
    pub mean_energy_per_pkt_j: Option<f64>,
    pub delivery_ratio: Option<f64>,
    pub channel_utilization: f64,
    pub sent_count: usize,
    pub received_count: usize,
    pub conflict_count: usize,
    pub sinr_fail_count: usize,
    pub pending_count: usize,
    /// Transmit, receive and idle energy of all transmitters.
    pub total_energy_j: f64,
}

pub fn compute_metrics(events: &[TransmissionEvent], energy: &[NodeEnergy], horizon_s: f64) -> MetricsReport {
    let count = |o: Outcome| events.iter().filter(|e| e.outcome == o).count();
    let received: Vec<&TransmissionEvent> = events.iter().filter(|e| e.outcome == Outcome::Received).collect();
    let n_recv = received.len();
    let sent = events.len();
    let tx_energy: f64 = events.iter().map(|e| e.energy_j).sum();
    let per_recv = |x: f64| (n_recv > 0).then(|| x / n_recv as f64);
    MetricsReport {
        throughput_pkts_per_s: n_recv as f64 / horizon_s,
        throughput_bits_per_s: received.iter().map(|e| f64::from(e.data_bytes) * 8.0).fold(0.0, |a, b| a + b)
            / horizon_s,
        mean_end_to_end_delay_s: per_recv(received.iter().map(|e| e.t_complete - e.generated_at).sum()),
        mean_energy_per_pkt_j: per_recv(tx_energy),
        delivery_ratio: (sent > 0).then(|| n_recv as f64 / sent as f64),
        channel_utilization: received.iter().map(|e| e.tx_duration()).fold(0.0, |a, b| a + b) / horizon_s,
        sent_count: sent,
        received_count: n_recv,
        conflict_count: count(Outcome::Conflict),
        sinr_fail_count: count(Outcome::SinrFail),
        pending_count: count(Outcome::Pending),
        total_energy_j: energy.iter().map(NodeEnergy::total_j).sum(),
    }
}

/// Writes one CSV record per event:
/// `sender,t_send,t_arrive,t_complete,mode,power_w,outcome`.
pub fn write_event_log<W: Write>(events: &[TransmissionEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sender", "t_send", "t_arrive", "t_complete", "mode", "power_w", "outcome"])?;
    for e in events {
        w.write_record([
            e.sender.to_string(),
            format!("{:.6}", e.t_send),
            format!("{:.6}", e.t_arrive),
            format!("{:.6}", e.t_complete),
            e.mode.to_string(),
            format!("{:.6}", e.power_w),
            e.outcome.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
