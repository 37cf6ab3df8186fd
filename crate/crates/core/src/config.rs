//! Run configuration.
//!
//! The file format is flat TOML: one `key = value` per parameter, all keys
//! optional. Values are in reporting units (km/h, veh/km, veh/h, s, m).
//! Unknown keys are rejected. See `RunConfig` for the list of keys.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::arz::{CellState, ModelParams, TrafficState};
use crate::dkf::{FilterConfig, ProcessNoise};
use crate::error::{DtseError, Result};
use crate::ground_truth::{Bottleneck, KraussParams, ScenarioSpec};
use crate::units::{kmh_to_mps, vehkm_to_vehm, VEH_PER_H, VEH_PER_KM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Macroscopic model.
    pub v_f_kmh: f64,
    pub rho_m_vehkm: f64,
    pub gamma: f64,
    pub tau_s: f64,
    pub dt_s: f64,
    pub dh_m: f64,
    pub n_cells: usize,

    // Microscopic scenario.
    pub total_length_m: f64,
    pub buffer_length_m: f64,
    pub duration_s: f64,
    pub speed_limit_kmh: f64,
    pub bottleneck: bool,
    /// Start of the reduced-limit zone, study-domain coordinates.
    pub bottleneck_position_m: f64,
    pub bottleneck_length_m: f64,
    pub bottleneck_limit_kmh: f64,
    pub bottleneck_start_s: f64,
    pub bottleneck_end_s: f64,
    pub mean_interarrival_s: f64,
    pub cv_penetration: f64,
    pub accel_mps2: f64,
    pub decel_mps2: f64,
    pub driver_imperfection: f64,
    pub reaction_time_s: f64,
    pub vehicle_length_m: f64,
    pub min_gap_m: f64,
    pub dt_micro_s: f64,

    // Sensing and communication.
    /// Study-domain coordinates.
    pub rsu_positions_m: Vec<f64>,
    pub v2x_range_m: f64,
    pub consensus_rounds: usize,

    // Filter tuning: diagonal variances in (veh/km)^2 and (veh/h)^2.
    pub p0_rho: f64,
    pub p0_psi: f64,
    pub q_rho: f64,
    pub q_psi: f64,
    pub r_rho: f64,
    pub r_psi: f64,
    /// Uniform initial density guess; the relative flow starts at `v_f rho`.
    pub rho_init_vehkm: f64,

    // Experiment.
    /// CV penetration rates for the Monte Carlo study [%].
    pub penetration_rates: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub window_start_s: f64,
    pub window_end_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            v_f_kmh: 100.0,
            rho_m_vehkm: 250.0,
            gamma: 1.25,
            tau_s: 1.0,
            dt_s: 1.0,
            dh_m: 100.0,
            n_cells: 25,

            total_length_m: 2700.0,
            buffer_length_m: 100.0,
            duration_s: 1200.0,
            speed_limit_kmh: 100.0,
            bottleneck: true,
            bottleneck_position_m: 2200.0,
            bottleneck_length_m: 400.0,
            bottleneck_limit_kmh: 10.0,
            bottleneck_start_s: 700.0,
            bottleneck_end_s: 760.0,
            mean_interarrival_s: 1.0,
            cv_penetration: 0.1,
            accel_mps2: 2.6,
            decel_mps2: 4.5,
            driver_imperfection: 0.5,
            reaction_time_s: 1.0,
            vehicle_length_m: 5.0,
            min_gap_m: 1.5,
            dt_micro_s: 0.5,

            rsu_positions_m: vec![50.0, 850.0, 1650.0, 2450.0],
            v2x_range_m: 400.0,
            consensus_rounds: 5,

            p0_rho: 1.0,
            p0_psi: 1.0,
            q_rho: 4.0,
            q_psi: 400.0,
            r_rho: 4.0,
            r_psi: 400.0,
            rho_init_vehkm: 50.0,

            penetration_rates: vec![2.0, 5.0, 10.0, 15.0, 20.0],
            trials: 20,
            seed: 42,
            window_start_s: 700.0,
            window_end_s: 842.0,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> DtseError {
    DtseError::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Key of the `key = value` line containing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    line.split('=').next().unwrap_or(line).trim().to_string()
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DtseError::Config {
            key: e.span().map(|s| key_at(text, s.start)).unwrap_or_default(),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DtseError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.model_params();
        p.validate()?;
        self.scenario().validate()?;
        let domain = self.total_length_m - 2.0 * self.buffer_length_m;
        if (domain - p.domain_length()).abs() > 1e-6 {
            return Err(invalid(
                "n_cells",
                format!(
                    "grid covers {} m but the road minus buffers is {domain} m",
                    p.domain_length()
                ),
            ));
        }
        if !(self.buffer_length_m > 0.0) {
            return Err(invalid("buffer_length_m", "must be > 0"));
        }
        for &x in &self.rsu_positions_m {
            if !(0.0..domain).contains(&x) {
                return Err(invalid(
                    "rsu_positions_m",
                    format!("{x} m lies outside the study domain [0, {domain})"),
                ));
            }
        }
        if !(self.v2x_range_m >= 0.0) {
            return Err(invalid("v2x_range_m", "must be >= 0"));
        }
        for (key, v) in [
            ("p0_rho", self.p0_rho),
            ("p0_psi", self.p0_psi),
            ("q_rho", self.q_rho),
            ("q_psi", self.q_psi),
            ("r_rho", self.r_rho),
            ("r_psi", self.r_psi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("variance must be > 0, got {v}")));
            }
        }
        if !(0.0..=self.rho_m_vehkm).contains(&self.rho_init_vehkm) {
            return Err(invalid("rho_init_vehkm", "must lie in [0, rho_m]"));
        }
        if let Some(r) = self
            .penetration_rates
            .iter()
            .find(|r| !(0.0..=100.0).contains(*r))
        {
            return Err(invalid(
                "penetration_rates",
                format!("{r} is not a percentage"),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        let dt = self.dt_s;
        if !(self.window_start_s >= 0.0
            && self.window_start_s < self.window_end_s
            && self.window_end_s + dt <= self.duration_s)
        {
            return Err(invalid(
                "window_end_s",
                format!(
                    "window [{}, {}] must lie inside [0, {}) with one step to spare",
                    self.window_start_s, self.window_end_s, self.duration_s
                ),
            ));
        }
        for (key, t) in [
            ("window_start_s", self.window_start_s),
            ("window_end_s", self.window_end_s),
        ] {
            if ((t / dt) - (t / dt).round()).abs() > 1e-9 {
                return Err(invalid(key, format!("{t} s is not a multiple of dt_s")));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            v_f: kmh_to_mps(self.v_f_kmh),
            rho_m: vehkm_to_vehm(self.rho_m_vehkm),
            gamma: self.gamma,
            tau: self.tau_s,
            n_cells: self.n_cells,
            dt: self.dt_s,
            dh: self.dh_m,
        }
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            total_length: self.total_length_m,
            buffer_length: self.buffer_length_m,
            duration: self.duration_s,
            speed_limit: kmh_to_mps(self.speed_limit_kmh),
            bottleneck: self.bottleneck.then(|| Bottleneck {
                position: self.bottleneck_position_m,
                length: self.bottleneck_length_m,
                limit: kmh_to_mps(self.bottleneck_limit_kmh),
                start: self.bottleneck_start_s,
                end: self.bottleneck_end_s,
            }),
            mean_interarrival: self.mean_interarrival_s,
            cv_penetration: self.cv_penetration,
            seed: self.seed,
            krauss: KraussParams {
                accel: self.accel_mps2,
                decel: self.decel_mps2,
                sigma: self.driver_imperfection,
                reaction_time: self.reaction_time_s,
                vehicle_length: self.vehicle_length_m,
                min_gap: self.min_gap_m,
                dt: self.dt_micro_s,
            },
        }
    }

    /// Measurement noise covariance in SI units.
    pub fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.r_rho * VEH_PER_KM * VEH_PER_KM,
            0.0,
            0.0,
            self.r_psi * VEH_PER_H * VEH_PER_H,
        )
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        let params = self.model_params();
        let n = params.n_cells;
        let rho0 = vehkm_to_vehm(self.rho_init_vehkm);
        let p0 = DVector::from_fn(2 * n, |r, _| {
            if r % 2 == 0 {
                self.p0_rho * VEH_PER_KM * VEH_PER_KM
            } else {
                self.p0_psi * VEH_PER_H * VEH_PER_H
            }
        });
        Ok(FilterConfig {
            params,
            process_noise: ProcessNoise::per_cell(
                n,
                self.q_rho * VEH_PER_KM * VEH_PER_KM,
                self.q_psi * VEH_PER_H * VEH_PER_H,
            )?,
            initial_mean: TrafficState::uniform(n, CellState::new(rho0, rho0 * params.v_f)),
            initial_cov: DMatrix::from_diagonal(&p0),
            consensus_rounds: self.consensus_rounds,
        })
    }

    /// Sample index of the analysis window bounds.
    pub fn window_steps(&self) -> (usize, usize) {
        (
            (self.window_start_s / self.dt_s).round() as usize,
            (self.window_end_s / self.dt_s).round() as usize,
        )
    }

    /// Penetration rates as fractions.
    pub fn rate_fractions(&self) -> Vec<f64> {
        self.penetration_rates.iter().map(|r| r / 100.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let p = cfg.model_params();
        assert!((p.cfl_ratio() - 0.2778).abs() < 1e-3);
        assert_eq!(cfg.window_steps(), (700, 842));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("v_free = 3.0").unwrap_err().to_string();
        assert!(err.contains("v_free"), "{err}");
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::from_toml_str("n_cells = \"many\"").unwrap_err().to_string();
        assert!(err.contains("n_cells"), "{err}");
    }

    #[test]
    fn cfl_violation_reports_ratio() {
        let err = RunConfig::from_toml_str("dt_s = 10.0").unwrap_err();
        match err {
            DtseError::Cfl { ratio } => assert!((ratio - 2.7778).abs() < 1e-3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn grid_must_match_road() {
        assert!(RunConfig::from_toml_str("n_cells = 20").is_err());
        assert!(RunConfig::from_toml_str("n_cells = 20\ntotal_length_m = 2200.0\nbottleneck_position_m = 1700.0\nrsu_positions_m = [50.0]").is_ok());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            seed: 7,
            penetration_rates: vec![2.0, 20.0],
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn noise_in_si() {
        let r = RunConfig::default().measurement_noise();
        assert!((r[(0, 0)] - 4e-6).abs() < 1e-18);
        assert!((r[(1, 1)] - 400.0 / 3600.0_f64.powi(2)).abs() < 1e-15);
    }
}
