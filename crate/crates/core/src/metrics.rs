//! Per-window KPIs.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::Packet;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UeKpi {
    pub ue_id: usize,
    pub serving_cell: Option<usize>,
    pub connected: bool,
    pub cqi: u8,
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub generated: u64,
    pub dropped: u64,
    pub lost: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CellKpi {
    pub cell_id: usize,
    pub attached: usize,
    /// Attached UEs over all UEs in the network.
    pub attached_ratio: f64,
    /// Mean per-TTI resource block utilization.
    pub rbu: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KpiWindow {
    pub start_ms: u64,
    pub duration_ms: u64,
    pub ues: Vec<UeKpi>,
    pub cells: Vec<CellKpi>,
    /// Network sum, bits/s.
    pub throughput_bps: f64,
    pub mean_ue_throughput_bps: f64,
    /// Mean over UEs of the per-UE delay.
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub plr: f64,
    pub handovers: u32,
}

impl KpiWindow {
    pub fn rbu_vector(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.rbu).collect()
    }

    pub fn attachment_vector(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.attached_ratio).collect()
    }

    pub fn disconnected(&self) -> usize {
        self.ues.iter().filter(|u| !u.connected).count()
    }
}

/// Mean of the per-TTI utilization samples.
pub fn rbu(tti_log: &[f64]) -> Result<f64> {
    if tti_log.is_empty() {
        return Err(Error::invalid("rbu", "empty utilization log"));
    }
    Ok(tti_log.iter().sum::<f64>() / tti_log.len() as f64)
}

pub fn attachment_ratios(attached_counts: &[usize], n_total: usize) -> Result<Vec<f64>> {
    if n_total == 0 {
        return Err(Error::invalid("n_total", "must be at least 1"));
    }
    Ok(attached_counts
        .iter()
        .map(|&c| c as f64 / n_total as f64)
        .collect())
}

fn delays(delivered: &[Packet]) -> impl Iterator<Item = f64> + '_ {
    delivered.iter().filter_map(Packet::delay_ms)
}

/// Mean delivered-packet delay; falls back to the age of the oldest pending
/// packet when nothing was delivered, and to 0 when there is no traffic.
pub fn ue_delay_ms(
    delivered: &[Packet],
    oldest_pending_created_ms: Option<f64>,
    now_ms: f64,
) -> f64 {
    let (n, sum) = delays(delivered).fold((0usize, 0.0), |(n, s), d| (n + 1, s + d));
    if n > 0 {
        sum / n as f64
    } else {
        oldest_pending_created_ms.map_or(0.0, |c| (now_ms - c).max(0.0))
    }
}

/// Mean absolute difference of consecutive packet delays; `None` with fewer
/// than two deliveries.
pub fn ue_jitter_ms(delivered: &[Packet]) -> Option<f64> {
    let d: Vec<f64> = delays(delivered).collect();
    if d.len() < 2 {
        return None;
    }
    let total: f64 = d.windows(2).map(|w| libm::fabs(w[1] - w[0])).sum();
    Some(total / (d.len() - 1) as f64)
}

/// Per-UE jitter averaged over UEs with at least two deliveries.
pub fn jitter_ms<'a>(per_ue_delivered: impl IntoIterator<Item = &'a [Packet]>) -> f64 {
    let (n, sum) = per_ue_delivered
        .into_iter()
        .filter_map(ue_jitter_ms)
        .fold((0usize, 0.0), |(n, s), j| (n + 1, s + j));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn plr(generated: u64, dropped: u64, lost_on_disconnect: u64) -> f64 {
    if generated == 0 {
        0.0
    } else {
        (dropped + lost_on_disconnect) as f64 / generated as f64
    }
}

pub fn throughput_bps(delivered_bytes: u64, window_ms: u64) -> f64 {
    8.0 * delivered_bytes as f64 / (window_ms as f64 / 1000.0)
}
