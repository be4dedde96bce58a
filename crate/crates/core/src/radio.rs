//! Log-distance link budget, per-RB SINR and the CQI ladder.

use crate::error::{Error, Result};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Bandwidth of one LTE resource block.
pub const RB_BANDWIDTH_HZ: f64 = 180_000.0;
/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
/// Highest CQI index.
pub const MAX_CQI: u8 = 15;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub n_rb: u32,
    pub noise_figure_db: f64,
    pub pathloss_intercept_db: f64,
    /// dB per decade of distance in km.
    pub pathloss_slope: f64,
    /// Serving SINR below which a UE is declared in radio-link failure.
    pub rlf_sinr_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            n_rb: 25,
            noise_figure_db: 9.0,
            pathloss_intercept_db: 95.0,
            pathloss_slope: 27.0,
            rlf_sinr_db: -6.0,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rb == 0 {
            return Err(Error::invalid("n_rb", "must be at least 1"));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::invalid("tx_power_dbm", "must be finite"));
        }
        if !(self.pathloss_slope > 0.0 && self.pathloss_slope.is_finite()) {
            return Err(Error::invalid("pathloss_slope", "must be positive"));
        }
        if !self.noise_figure_db.is_finite()
            || !self.pathloss_intercept_db.is_finite()
            || !self.rlf_sinr_db.is_finite()
        {
            return Err(Error::invalid("radio", "all dB quantities must be finite"));
        }
        Ok(())
    }

    /// `intercept + slope * log10(d / 1 km)`, with `d` clamped to at least 1 m.
    pub fn pathloss_db(&self, distance_m: f64) -> Result<f64> {
        if !(distance_m.is_finite() && distance_m > 0.0) {
            return Err(Error::invalid(
                "distance",
                alloc::format!("{distance_m} m is not a positive finite distance"),
            ));
        }
        let d_km = distance_m.max(1.0) / 1000.0;
        Ok(self.pathloss_intercept_db + self.pathloss_slope * libm::log10(d_km))
    }

    /// Per-RB received reference power: total transmit power split evenly
    /// over `n_rb`, minus pathloss.
    pub fn rsrp_dbm(&self, pathloss_db: f64) -> f64 {
        self.tx_power_dbm - 10.0 * libm::log10(self.n_rb as f64) - pathloss_db
    }

    pub fn noise_per_rb_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * libm::log10(RB_BANDWIDTH_HZ) + self.noise_figure_db
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    libm::exp10(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * libm::log10(mw)
}

/// Linear-domain SINR in dB of one serving signal against a set of
/// co-channel interferers plus noise.
pub fn sinr_db(serving_rsrp_dbm: f64, interferer_rsrps_dbm: &[f64], noise_dbm: f64) -> f64 {
    let interference: f64 = interferer_rsrps_dbm.iter().map(|&i| dbm_to_mw(i)).sum();
    mw_to_dbm(dbm_to_mw(serving_rsrp_dbm) / (interference + dbm_to_mw(noise_dbm)))
}

/// Channel quality indicator, `0` meaning out of range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Cqi(u8);

impl Cqi {
    pub const OUT_OF_RANGE: Cqi = Cqi(0);

    pub fn new(value: u8) -> Result<Self> {
        if value > MAX_CQI {
            return Err(Error::OutOfRange {
                what: "cqi",
                index: value as usize,
                bound: MAX_CQI as usize + 1,
            });
        }
        Ok(Cqi(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// Standard 4-bit CQI spectral-efficiency ladder, bits/s/Hz.
pub const STANDARD_EFFICIENCIES: [f64; 15] = [
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223, 3.9023,
    4.5234, 5.1152, 5.5547,
];

/// SINR thresholds (dB) and efficiencies for CQI 1..=15.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CqiTable {
    sinr_thresholds_db: [f64; 15],
    efficiencies: [f64; 15],
}

impl Default for CqiTable {
    /// Thresholds from -6.7 dB to 22.7 dB in 2.1 dB steps over the standard
    /// efficiency ladder.
    fn default() -> Self {
        let mut sinr_thresholds_db = [0.0; 15];
        for (k, th) in sinr_thresholds_db.iter_mut().enumerate() {
            *th = -6.7 + 2.1 * k as f64;
        }
        Self {
            sinr_thresholds_db,
            efficiencies: STANDARD_EFFICIENCIES,
        }
    }
}

impl CqiTable {
    pub fn new(sinr_thresholds_db: [f64; 15], efficiencies: [f64; 15]) -> Result<Self> {
        let ascending =
            |xs: &[f64; 15]| xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&sinr_thresholds_db) {
            return Err(Error::invalid(
                "cqi thresholds",
                "must be finite and strictly ascending",
            ));
        }
        if !ascending(&efficiencies) || efficiencies[0] <= 0.0 || efficiencies[14] > 6.0 {
            return Err(Error::invalid(
                "cqi efficiencies",
                "must be positive, strictly ascending and at most 6.0",
            ));
        }
        Ok(Self {
            sinr_thresholds_db,
            efficiencies,
        })
    }

    pub fn sinr_thresholds_db(&self) -> &[f64; 15] {
        &self.sinr_thresholds_db
    }

    pub fn efficiencies(&self) -> &[f64; 15] {
        &self.efficiencies
    }

    /// Largest CQI whose threshold is at or below `sinr_db`.
    pub fn cqi_from_sinr(&self, sinr_db: f64) -> Cqi {
        let k = self
            .sinr_thresholds_db
            .iter()
            .take_while(|&&th| sinr_db >= th)
            .count();
        Cqi(k as u8)
    }

    /// Whole bits one RB carries in one 1 ms TTI at `cqi`.
    pub fn bits_per_rb(&self, cqi: Cqi) -> u32 {
        match cqi.0 {
            0 => 0,
            k => libm::floor(self.efficiencies[k as usize - 1] * RB_BANDWIDTH_HZ / 1000.0) as u32,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pathloss_examples() {
        let cfg = RadioConfig::default();
        assert!(close(cfg.pathloss_db(1000.0).unwrap(), 95.0, 1e-12));
        assert!(close(cfg.pathloss_db(100.0).unwrap(), 68.0, 1e-12));
        assert!(close(cfg.pathloss_db(720.0).unwrap(), 91.147, 1e-3));
    }

    #[test]
    fn pathloss_clamps_and_rejects() {
        let cfg = RadioConfig::default();
        assert_eq!(
            cfg.pathloss_db(0.25).unwrap(),
            cfg.pathloss_db(1.0).unwrap()
        );
        assert!(cfg.pathloss_db(0.0).is_err());
        assert!(cfg.pathloss_db(-3.0).is_err());
        assert!(cfg.pathloss_db(f64::NAN).is_err());
        assert!(cfg.pathloss_db(f64::INFINITY).is_err());
    }

    #[test]
    fn rsrp_examples() {
        let cfg = RadioConfig::default();
        assert!(close(cfg.rsrp_dbm(91.147), -85.127, 0.01));
        assert!(close(cfg.rsrp_dbm(68.0), -61.98, 0.01));
        let one_rb = RadioConfig {
            n_rb: 1,
            ..RadioConfig::default()
        };
        assert_eq!(one_rb.rsrp_dbm(0.0), 20.0);
    }

    #[test]
    fn noise_floor_per_rb() {
        assert!(close(
            RadioConfig::default().noise_per_rb_dbm(),
            -112.447,
            1e-3
        ));
    }

    #[test]
    fn sinr_examples() {
        assert!(close(sinr_db(-85.13, &[], -112.45), 27.32, 0.05));
        assert!(close(sinr_db(-85.0, &[-85.0], -200.0), 0.0, 0.01));
        assert!(close(sinr_db(-85.0, &[-88.0, -88.0], -112.45), -0.03, 0.1));
    }

    #[test]
    fn cqi_mapping_edges() {
        let t = CqiTable::default();
        assert_eq!(t.cqi_from_sinr(-30.0).get(), 0);
        assert_eq!(t.cqi_from_sinr(40.0).get(), 15);
        let th7 = t.sinr_thresholds_db()[6];
        assert_eq!(t.cqi_from_sinr(th7).get(), 7);
        assert_eq!(t.cqi_from_sinr(th7 - 1e-9).get(), 6);
        assert_eq!(t.cqi_from_sinr(f64::NAN).get(), 0);
    }

    #[test]
    fn bits_per_rb_examples() {
        let t = CqiTable::default();
        assert_eq!(t.bits_per_rb(Cqi::new(15).unwrap()), 999);
        assert_eq!(t.bits_per_rb(Cqi::new(1).unwrap()), 27);
        assert_eq!(t.bits_per_rb(Cqi::OUT_OF_RANGE), 0);
        let eff: [f64; 15] = core::array::from_fn(|i| 1.0 + 0.3 * i as f64);
        let unit = CqiTable::new(*t.sinr_thresholds_db(), eff).unwrap();
        assert_eq!(unit.bits_per_rb(Cqi::new(1).unwrap()), 180);
    }

    #[test]
    fn table_validation() {
        let t = CqiTable::default();
        let mut bad = *t.sinr_thresholds_db();
        bad.swap(3, 4);
        assert!(CqiTable::new(bad, STANDARD_EFFICIENCIES).is_err());
        let mut eff = STANDARD_EFFICIENCIES;
        eff[14] = 6.5;
        assert!(CqiTable::new(*t.sinr_thresholds_db(), eff).is_err());
        assert!(Cqi::new(16).is_err());
    }

    #[test]
    fn cqi_round_trip_at_band_midpoints() {
        let t = CqiTable::default();
        let th = t.sinr_thresholds_db();
        for k in 1..=15usize {
            let mid = if k < 15 {
                0.5 * (th[k - 1] + th[k])
            } else {
                th[14] + 1.0
            };
            assert_eq!(t.cqi_from_sinr(mid).get() as usize, k);
        }
    }

    #[test]
    fn bits_strictly_increase_with_cqi() {
        let t = CqiTable::default();
        for k in 1..15u8 {
            assert!(t.bits_per_rb(Cqi(k)) < t.bits_per_rb(Cqi(k + 1)));
        }
    }

    proptest! {
        #[test]
        fn pathloss_strictly_increasing(d in 1.0f64..50_000.0, step in 1e-3f64..1000.0) {
            let cfg = RadioConfig::default();
            prop_assert!(cfg.pathloss_db(d + step).unwrap() > cfg.pathloss_db(d).unwrap());
        }

        #[test]
        fn sinr_falls_as_interference_rises(
            s in -120.0f64..-40.0,
            interferers in proptest::collection::vec(-130.0f64..-40.0, 1..5),
            pick in 0usize..5,
            bump in 0.5f64..20.0,
        ) {
            let n = -112.45;
            let base = sinr_db(s, &interferers, n);
            // Linear-domain oracle.
            let lin = |xs: &[f64]| {
                let i: f64 = xs.iter().map(|x| 10f64.powf(x / 10.0)).sum();
                10.0 * (10f64.powf(s / 10.0) / (i + 10f64.powf(n / 10.0))).log10()
            };
            prop_assert!((base - lin(&interferers)).abs() < 1e-9);
            let mut louder = interferers.clone();
            let idx = pick % louder.len();
            louder[idx] += bump;
            prop_assert!(sinr_db(s, &louder, n) <= base);
        }

        #[test]
        fn cqi_monotone(a in -40.0f64..40.0, b in -40.0f64..40.0) {
            let t = CqiTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.cqi_from_sinr(lo) <= t.cqi_from_sinr(hi));
        }
    }
}
