//! Traffic-load awareness: neighbor load tables built from overheard packet
//! headers, tanh information confidence, and the overhear information matrix.

use crate::error::{domain, Error, Result};
use crate::world::{LocalLoadInfo, NodeId};

/// Size in bytes of the load annex carried in every data-packet header.
pub const ANNEX_BYTES: u32 = 10;

/// Fixed-point scale of the traffic estimate in the annex (16.16).
const EST_SCALE: f64 = 65536.0;

/// Information confidence `tanh(age / a)`; 0 is freshest.
pub fn confidence(age_s: f64, time_scale_s: f64) -> Result<f64> {
    if !(time_scale_s > 0.0) {
        return Err(domain(format!("confidence time scale must be positive, got {time_scale_s}")));
    }
    if !(age_s >= 0.0) {
        return Err(domain(format!("information age must be non-negative, got {age_s}")));
    }
    Ok((age_s / time_scale_s).tanh())
}

/// Latest overheard load information of one neighbor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborLoadEntry {
    pub neighbor_id: NodeId,
    pub t_acquire: f64,
    pub queue_len: u32,
    pub est: f64,
}

/// ⟨confidence, queue length, traffic estimate⟩ as fed to the decision model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverhearInfo {
    pub confidence: f64,
    pub queue_len: u32,
    pub est: f64,
}

impl OverhearInfo {
    /// Placeholder for a neighbor nothing has been heard from yet.
    pub const ABSENT: OverhearInfo = OverhearInfo { confidence: 1.0, queue_len: 0, est: 0.0 };
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborLoadTable {
    rows: Vec<NeighborLoadEntry>,
}

impl NeighborLoadTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&NeighborLoadEntry> {
        self.rows.iter().find(|r| r.neighbor_id == id)
    }

    /// Records load information read from an overheard header; the latest
    /// entry for a source replaces any earlier one.
    pub fn ingest_overheard(&mut self, source: NodeId, info: LocalLoadInfo) {
        let entry = NeighborLoadEntry {
            neighbor_id: source,
            t_acquire: info.t_acquire,
            queue_len: info.queue_len,
            est: info.est,
        };
        match self.rows.iter_mut().find(|r| r.neighbor_id == source) {
            Some(row) => *row = entry,
            None => self.rows.push(entry),
        }
    }

    /// One `OverhearInfo` per id in `neighbors`, in that order.
    pub fn build_overhear_matrix(
        &self,
        neighbors: &[NodeId],
        now: f64,
        time_scale_s: f64,
    ) -> Result<Vec<OverhearInfo>> {
        neighbors
            .iter()
            .map(|&id| match self.get(id) {
                None => Ok(OverhearInfo::ABSENT),
                Some(e) if e.t_acquire > now => Err(Error::ClockSkew { acquired: e.t_acquire, now }),
                Some(e) => Ok(OverhearInfo {
                    confidence: confidence(now - e.t_acquire, time_scale_s)?,
                    queue_len: e.queue_len,
                    est: e.est,
                }),
            })
            .collect()
    }
}

/// A node's own load information; its age is always zero.
pub fn local_confident_info(info: &LocalLoadInfo) -> OverhearInfo {
    OverhearInfo { confidence: 0.0, queue_len: info.queue_len, est: info.est }
}

/// Serializes load information into the 10-byte header annex:
/// `f32` acquisition seconds, `u16` queue length (saturating), `u32` 16.16
/// fixed-point estimate, all little-endian.
pub fn encode_annex(info: &LocalLoadInfo) -> [u8; ANNEX_BYTES as usize] {
    let mut out = [0u8; ANNEX_BYTES as usize];
    out[0..4].copy_from_slice(&(info.t_acquire as f32).to_le_bytes());
    out[4..6].copy_from_slice(&(info.queue_len.min(u32::from(u16::MAX)) as u16).to_le_bytes());
    let est = (info.est.max(0.0) * EST_SCALE).round().min(f64::from(u32::MAX)) as u32;
    out[6..10].copy_from_slice(&est.to_le_bytes());
    out
}

pub fn decode_annex(bytes: &[u8; ANNEX_BYTES as usize]) -> LocalLoadInfo {
    let t = f32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let q = u16::from_le_bytes(bytes[4..6].try_into().expect("2 bytes"));
    let e = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    LocalLoadInfo { t_acquire: f64::from(t), queue_len: u32::from(q), est: f64::from(e) / EST_SCALE }
}
