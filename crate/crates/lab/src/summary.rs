//! Cross-seed aggregation of `final.csv` files.
//!
//! `summary.csv` has one row per `(algorithm, UE count, mobility)` with the
//! mean and the half width of a 90% Student-t interval for each KPI.
//! `gains.csv` compares CDQL with each baseline in percent, signed so that a
//! positive gain is an improvement: higher throughput, lower delay, jitter
//! and PLR.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::Algorithm;
use crate::error::{LabError, Result};
use crate::experiment::{read_csv, write_csv, FinalRow};

pub const CONFIDENCE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Two-sided Student-t interval at `level`. A single sample gives a
/// zero-width interval. `None` for no samples.
pub fn t_interval(samples: &[f64], level: f64) -> Option<Interval> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(Interval {
            n,
            mean,
            half_width: 0.0,
        });
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    Some(Interval {
        n,
        mean,
        half_width: t * (var / n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Throughput,
    Delay,
    Jitter,
    Plr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Throughput,
        Metric::Delay,
        Metric::Jitter,
        Metric::Plr,
    ];

    fn of(self, row: &FinalRow) -> f64 {
        match self {
            Metric::Throughput => row.throughput_bps,
            Metric::Delay => row.mean_delay_ms,
            Metric::Jitter => row.jitter_ms,
            Metric::Plr => row.plr,
        }
    }

    fn higher_is_better(self) -> bool {
        self == Metric::Throughput
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub n_ues: usize,
    pub mobility_fraction: f64,
    pub n_seeds: usize,
    pub throughput_bps_mean: f64,
    pub throughput_bps_ci90: f64,
    pub mean_delay_ms_mean: f64,
    pub mean_delay_ms_ci90: f64,
    pub jitter_ms_mean: f64,
    pub jitter_ms_ci90: f64,
    pub plr_mean: f64,
    pub plr_ci90: f64,
    /// Set when the interval has zero width because only one seed ran.
    pub single_seed: bool,
}

impl SummaryRow {
    pub fn mean(&self, m: Metric) -> f64 {
        match m {
            Metric::Throughput => self.throughput_bps_mean,
            Metric::Delay => self.mean_delay_ms_mean,
            Metric::Jitter => self.jitter_ms_mean,
            Metric::Plr => self.plr_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub n_ues: usize,
    pub mobility_fraction: f64,
    pub baseline: Algorithm,
    pub throughput_gain_pct: Option<f64>,
    pub delay_gain_pct: Option<f64>,
    pub jitter_gain_pct: Option<f64>,
    pub plr_gain_pct: Option<f64>,
}

/// Relative improvement of `ours` over `base` in percent; `None` when the
/// baseline is zero and the values differ.
pub fn gain_pct(ours: f64, base: f64, higher_is_better: bool) -> Option<f64> {
    if ours == base {
        return Some(0.0);
    }
    if base == 0.0 {
        return None;
    }
    let diff = if higher_is_better {
        ours - base
    } else {
        base - ours
    };
    Some(100.0 * diff / base.abs())
}

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub gains: Vec<GainRow>,
    pub warnings: Vec<String>,
}

/// Aggregates final rows into per-scenario intervals and CDQL gains.
pub fn summarize_rows(rows: &[FinalRow]) -> Summary {
    let mut groups: BTreeMap<(Algorithm, usize, u64), Vec<&FinalRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.algorithm, r.n_ues, r.mobility_fraction.to_bits()))
            .or_default()
            .push(r);
    }
    let mut out = Summary::default();
    for ((algorithm, n_ues, mob), group) in &groups {
        let ci = |m: Metric| {
            let xs: Vec<f64> = group.iter().map(|r| m.of(r)).collect();
            t_interval(&xs, CONFIDENCE).expect("groups are non-empty")
        };
        let [tp, d, j, p] = Metric::ALL.map(ci);
        out.rows.push(SummaryRow {
            algorithm: *algorithm,
            n_ues: *n_ues,
            mobility_fraction: f64::from_bits(*mob),
            n_seeds: group.len(),
            throughput_bps_mean: tp.mean,
            throughput_bps_ci90: tp.half_width,
            mean_delay_ms_mean: d.mean,
            mean_delay_ms_ci90: d.half_width,
            jitter_ms_mean: j.mean,
            jitter_ms_ci90: j.half_width,
            plr_mean: p.mean,
            plr_ci90: p.half_width,
            single_seed: group.len() == 1,
        });
    }
    for row in &out.rows {
        if row.single_seed {
            out.warnings.push(format!(
                "{}-ues{}-mob{}: one seed, confidence interval has zero width",
                row.algorithm, row.n_ues, row.mobility_fraction
            ));
        }
    }
    let find = |alg: Algorithm, n: usize, mob: f64| {
        out.rows
            .iter()
            .find(|r| r.algorithm == alg && r.n_ues == n && r.mobility_fraction == mob)
    };
    let mut gains = Vec::new();
    let mut warnings = Vec::new();
    for ours in out.rows.iter().filter(|r| r.algorithm == Algorithm::Cdql) {
        for baseline in [Algorithm::A3, Algorithm::Rebuha] {
            let Some(base) = find(baseline, ours.n_ues, ours.mobility_fraction) else {
                warnings.push(format!(
                    "no {baseline} run for {} UEs at mobility {}; gain omitted",
                    ours.n_ues, ours.mobility_fraction
                ));
                continue;
            };
            let g = |m: Metric| gain_pct(ours.mean(m), base.mean(m), m.higher_is_better());
            gains.push(GainRow {
                n_ues: ours.n_ues,
                mobility_fraction: ours.mobility_fraction,
                baseline,
                throughput_gain_pct: g(Metric::Throughput),
                delay_gain_pct: g(Metric::Delay),
                jitter_gain_pct: g(Metric::Jitter),
                plr_gain_pct: g(Metric::Plr),
            });
        }
    }
    out.gains = gains;
    out.warnings.extend(warnings);
    out
}

/// Reads every scenario directory under `dir`. Directories without a
/// readable `final.csv` are skipped with a warning.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| LabError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for sub in entries {
        let path = sub.join("final.csv");
        if !path.exists() {
            warnings.push(format!("{}: no final.csv, skipped", sub.display()));
            continue;
        }
        match read_csv::<FinalRow>(&path) {
            Ok(r) if r.is_empty() => warnings.push(format!("{}: empty, skipped", path.display())),
            Ok(r) => rows.extend(r),
            Err(e) => warnings.push(format!("{e}; skipped")),
        }
    }
    let mut summary = summarize_rows(&rows);
    warnings.append(&mut summary.warnings);
    summary.warnings = warnings;
    Ok(summary)
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    write_csv(&dir.join("summary.csv"), &summary.rows)?;
    write_csv(&dir.join("gains.csv"), &summary.gains)
}

fn cell(mean: f64, half: f64) -> String {
    format!("{mean:.4} ± {half:.4}")
}

/// Plain-text comparison table.
pub fn render(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>5} {:>5}  {:<28} {:<24} {:<22} {:<22}",
        "algo", "ues", "mob", "seeds", "throughput Mb/s", "delay ms", "jitter ms", "plr"
    );
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>5} {:>5}  {:<28} {:<24} {:<22} {:<22}",
            r.algorithm.as_str(),
            r.n_ues,
            r.mobility_fraction,
            r.n_seeds,
            cell(r.throughput_bps_mean / 1e6, r.throughput_bps_ci90 / 1e6),
            cell(r.mean_delay_ms_mean, r.mean_delay_ms_ci90),
            cell(r.jitter_ms_mean, r.jitter_ms_ci90),
            cell(r.plr_mean, r.plr_ci90),
        );
    }
    if !summary.gains.is_empty() {
        let pct = |g: Option<f64>| g.map_or("n/a".to_string(), |v| format!("{v:+.2}%"));
        let _ = writeln!(
            s,
            "\ncdql gain    ues   mob  throughput      delay     jitter        plr"
        );
        for g in &summary.gains {
            let _ = writeln!(
                s,
                "vs {:<8} {:>5} {:>5} {:>11} {:>10} {:>10} {:>10}",
                g.baseline.as_str(),
                g.n_ues,
                g.mobility_fraction,
                pct(g.throughput_gain_pct),
                pct(g.delay_gain_pct),
                pct(g.jitter_gain_pct),
                pct(g.plr_gain_pct),
            );
        }
    }
    for w in &summary.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
