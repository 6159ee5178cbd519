//! OFDM modem: transmission modes, packet framing, transmit duration and
//! transmit energy.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// One row of the modem's mode table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionMode {
    /// 1-based mode number.
    pub index: u8,
    /// Code rate as `[numerator, denominator]`.
    pub code_rate: [u8; 2],
    pub modulation: String,
    pub payload_per_block_bytes: u32,
    /// Nominal rate, carried for reporting.
    pub rate_kbps: f64,
    pub threshold_db: f64,
}

/// The modem's available modes, ordered by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeTable(Vec<TransmissionMode>);

impl ModeTable {
    /// The five-mode AquaSeNT OFDM table.
    pub fn standard() -> Self {
        let row = |index, code_rate, modulation: &str, payload, rate_kbps, threshold_db| TransmissionMode {
            index,
            code_rate,
            modulation: modulation.to_owned(),
            payload_per_block_bytes: payload,
            rate_kbps,
            threshold_db,
        };
        Self(vec![
            row(1, [1, 2], "BPSK", 38, 1.38, 3.8),
            row(2, [1, 2], "QPSK", 80, 2.90, 5.0),
            row(3, [3, 4], "QPSK", 122, 4.42, 7.4),
            row(4, [1, 2], "16QAM", 164, 5.94, 9.2),
            row(5, [3, 4], "16QAM", 248, 8.99, 12.2),
        ])
    }

    pub fn new(modes: Vec<TransmissionMode>) -> Result<Self> {
        let table = Self(modes);
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("mode table is empty".into()));
        }
        for (i, m) in self.0.iter().enumerate() {
            if usize::from(m.index) != i + 1 {
                return Err(Error::Config(format!("mode {} listed at position {}", m.index, i + 1)));
            }
            if m.payload_per_block_bytes == 0 || !(m.rate_kbps > 0.0) || m.code_rate[1] == 0 {
                return Err(Error::Config(format!("mode {} has non-positive payload, rate or code rate", m.index)));
            }
        }
        if self.0.windows(2).any(|w| w[1].threshold_db <= w[0].threshold_db) {
            return Err(Error::Config("mode thresholds must strictly increase with index".into()));
        }
        Ok(())
    }

    /// Look up a mode by its 1-based index.
    pub fn get(&self, index: u8) -> Option<&TransmissionMode> {
        index.checked_sub(1).and_then(|i| self.0.get(usize::from(i)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransmissionMode> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn lowest(&self) -> &TransmissionMode {
        &self.0[0]
    }
}

/// How the on-air duration of a packet is derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingModel {
    /// Preamble, then data blocks separated by guard intervals.
    #[default]
    BlockFraming,
    /// Payload bits divided by the nominal mode rate.
    NominalRate,
}

/// Packet framing constants in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramingParams {
    pub preamble_s: f64,
    pub block_s: f64,
    pub guard_s: f64,
    pub timing: TimingModel,
}

impl Default for FramingParams {
    fn default() -> Self {
        Self { preamble_s: 0.5, block_s: 0.1707, guard_s: 0.05, timing: TimingModel::BlockFraming }
    }
}

impl FramingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.preamble_s > 0.0 && self.block_s > 0.0 && self.guard_s > 0.0) {
            return Err(Error::Config("framing durations must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Transmit power range and the receive/idle draw of the modem, in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerProfile {
    pub min_tx_w: f64,
    pub max_tx_w: f64,
    pub recv_w: f64,
    pub idle_w: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self { min_tx_w: 0.0, max_tx_w: 40.0, recv_w: 0.395, idle_w: 0.001 }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_tx_w >= 0.0 && self.max_tx_w > self.min_tx_w) {
            return Err(Error::Config("transmit power range must satisfy 0 <= min < max".into()));
        }
        if !(self.recv_w >= 0.0 && self.idle_w >= 0.0) {
            return Err(Error::Config("receive and idle power must be non-negative".into()));
        }
        Ok(())
    }

    pub fn contains(&self, power_w: f64) -> bool {
        (self.min_tx_w..=self.max_tx_w).contains(&power_w)
    }
}

pub fn block_count(payload_bytes: u32, mode: &TransmissionMode) -> Result<u32> {
    if payload_bytes == 0 {
        return Err(domain("payload must be at least one byte"));
    }
    Ok(payload_bytes.div_ceil(mode.payload_per_block_bytes))
}

/// On-air duration of one packet in seconds.
pub fn tx_duration(payload_bytes: u32, mode: &TransmissionMode, framing: &FramingParams) -> Result<f64> {
    let blocks = block_count(payload_bytes, mode)?;
    Ok(match framing.timing {
        TimingModel::BlockFraming => {
            framing.preamble_s + f64::from(blocks) * framing.block_s + f64::from(blocks - 1) * framing.guard_s
        }
        TimingModel::NominalRate => f64::from(payload_bytes) * 8.0 / (mode.rate_kbps * 1000.0),
    })
}

/// Energy in joules of one packet sent at constant `power_w`.
pub fn tx_energy(
    power_w: f64,
    payload_bytes: u32,
    mode: &TransmissionMode,
    framing: &FramingParams,
    power: &PowerProfile,
) -> Result<f64> {
    if !power.contains(power_w) {
        return Err(domain(format!("transmit power {power_w} W outside [{}, {}] W", power.min_tx_w, power.max_tx_w)));
    }
    Ok(power_w * tx_duration(payload_bytes, mode, framing)?)
}
