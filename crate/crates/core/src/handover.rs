//! A3-event handover with per-cell individual offsets, and the
//! utilization-triggered baseline.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HandoverConfig {
    /// Power-difference margin in dB.
    pub hysteresis_db: f64,
    pub ttt_ms: u32,
    pub cio_min_db: f64,
    pub cio_max_db: f64,
}

impl Default for HandoverConfig {
    fn default() -> Self {
        Self {
            hysteresis_db: 2.0,
            ttt_ms: 8,
            cio_min_db: -9.0,
            cio_max_db: 9.0,
        }
    }
}

impl HandoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hysteresis_db >= 0.0 && self.hysteresis_db.is_finite()) {
            return Err(Error::invalid("hysteresis_db", "must be finite and >= 0"));
        }
        if self.cio_min_db > self.cio_max_db
            || !self.cio_min_db.is_finite()
            || !self.cio_max_db.is_finite()
        {
            return Err(Error::invalid(
                "cio bounds",
                "need finite cio_min_db <= cio_max_db",
            ));
        }
        Ok(())
    }

    pub fn check_cio(&self, cio_db: &[f64]) -> Result<()> {
        for &c in cio_db {
            if !(self.cio_min_db..=self.cio_max_db).contains(&c) {
                return Err(Error::invalid(
                    "cio",
                    alloc::format!("{c} dB outside [{}, {}]", self.cio_min_db, self.cio_max_db),
                ));
            }
        }
        Ok(())
    }
}

/// `RSRP_j + cio_j > hys + RSRP_i + cio_i` for serving cell `i` and
/// neighbour `j`.
pub fn a3_condition(
    rsrp_serving_dbm: f64,
    rsrp_neighbor_dbm: f64,
    cio_neighbor_db: f64,
    cio_serving_db: f64,
    hysteresis_db: f64,
) -> bool {
    rsrp_neighbor_dbm + cio_neighbor_db > hysteresis_db + rsrp_serving_dbm + cio_serving_db
}

/// Per (UE, candidate cell) time the trigger condition has held.
#[derive(Debug, Clone)]
pub struct TttTracker {
    ttt_ms: u32,
    n_cells: usize,
    held_ms: Vec<u32>,
}

impl TttTracker {
    pub fn new(ttt_ms: u32, n_ues: usize, n_cells: usize) -> Self {
        Self {
            ttt_ms,
            n_cells,
            held_ms: vec![0; n_ues * n_cells],
        }
    }

    pub fn held_ms(&self, ue: usize, cell: usize) -> u32 {
        self.held_ms[ue * self.n_cells + cell]
    }

    /// Accumulates `dt_ms` while `holds`, resets on the first false sample.
    /// Returns true once the held time reaches the time-to-trigger.
    pub fn update(&mut self, ue: usize, candidate: usize, holds: bool, dt_ms: u32) -> bool {
        let slot = &mut self.held_ms[ue * self.n_cells + candidate];
        if holds {
            *slot = slot.saturating_add(dt_ms);
            *slot >= self.ttt_ms
        } else {
            *slot = 0;
            false
        }
    }

    pub fn reset_ue(&mut self, ue: usize) {
        let row = ue * self.n_cells;
        self.held_ms[row..row + self.n_cells].fill(0);
    }
}

/// Row-major UE x cell matrix of RSRP values in dBm.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrpMatrix {
    n_cells: usize,
    values: Vec<f64>,
}

impl RsrpMatrix {
    pub fn new(n_ues: usize, n_cells: usize) -> Self {
        Self {
            n_cells,
            values: vec![f64::NEG_INFINITY; n_ues * n_cells],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cells = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cells);
        for r in rows {
            if r.len() != n_cells {
                return Err(Error::ShapeMismatch {
                    what: "rsrp row",
                    expected: n_cells,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { n_cells, values })
    }

    pub fn n_ues(&self) -> usize {
        self.values.len().checked_div(self.n_cells).unwrap_or(0)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn row(&self, ue: usize) -> &[f64] {
        &self.values[ue * self.n_cells..(ue + 1) * self.n_cells]
    }

    pub fn row_mut(&mut self, ue: usize) -> &mut [f64] {
        &mut self.values[ue * self.n_cells..(ue + 1) * self.n_cells]
    }

    pub fn get(&self, ue: usize, cell: usize) -> f64 {
        self.values[ue * self.n_cells + cell]
    }
}

fn argmax_by(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// One A3 evaluation pass over attached UEs. Each UE is compared against
/// its best neighbour by offset-adjusted RSRP; the neighbour's counter
/// accumulates while the condition holds and every other candidate's
/// counter resets. Emits `(ue, target)` when the time-to-trigger matures.
pub fn a3_scan(
    serving: &[Option<usize>],
    rsrp: &RsrpMatrix,
    cfg: &HandoverConfig,
    cio_db: &[f64],
    tracker: &mut TttTracker,
    dt_ms: u32,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ue, s) in serving.iter().enumerate() {
        let Some(i) = *s else { continue };
        let row = rsrp.row(ue);
        let Some(j) = argmax_by(
            (0..row.len())
                .filter(|&c| c != i)
                .map(|c| (c, row[c] + cio_db[c])),
        ) else {
            continue;
        };
        for c in (0..row.len()).filter(|&c| c != j) {
            tracker.update(ue, c, false, dt_ms);
        }
        let holds = a3_condition(row[i], row[j], cio_db[j], cio_db[i], cfg.hysteresis_db);
        if tracker.update(ue, j, holds, dt_ms) {
            out.push((ue, j));
        }
    }
    out
}

/// Cell reselection for detached UEs: the strongest cell by raw RSRP, after
/// the same time-to-trigger.
pub fn reselection_scan(
    serving: &[Option<usize>],
    rsrp: &RsrpMatrix,
    tracker: &mut TttTracker,
    dt_ms: u32,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (ue, s) in serving.iter().enumerate() {
        if s.is_some() {
            continue;
        }
        let row = rsrp.row(ue);
        let Some(best) = argmax_by(row.iter().copied().enumerate()) else {
            continue;
        };
        for c in (0..row.len()).filter(|&c| c != best) {
            tracker.update(ue, c, false, dt_ms);
        }
        if tracker.update(ue, best, true, dt_ms) {
            out.push((ue, best));
        }
    }
    out
}

/// One decision epoch of the utilization-triggered baseline.
///
/// Nothing happens when every cell is above `gamma_rb`. Otherwise each
/// overloaded cell (`p_i > gamma_rb`) hands one UE to the least-loaded cell
/// below the threshold (ties to the lower index), picking its attached UE
/// with the strongest RSRP toward that target (ties to the lower UE id).
pub fn rebuha_step(
    rbu: &[f64],
    gamma_rb: f64,
    serving: &[Option<usize>],
    rsrp: &RsrpMatrix,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if rbu.iter().all(|&p| p > gamma_rb) {
        return out;
    }
    let Some(target) = argmax_by(
        rbu.iter()
            .enumerate()
            .filter(|(_, &p)| p < gamma_rb)
            .map(|(j, &p)| (j, -p)),
    ) else {
        return out;
    };
    for (i, _) in rbu.iter().enumerate().filter(|(_, &p)| p > gamma_rb) {
        let pick = argmax_by(
            serving
                .iter()
                .enumerate()
                .filter(|(_, s)| **s == Some(i))
                .map(|(ue, _)| (ue, rsrp.get(ue, target))),
        );
        if let Some(ue) = pick {
            out.push((ue, target));
        }
    }
    out
}
