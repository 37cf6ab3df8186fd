use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::units::{vehm_to_vehkm, vehs_to_vehh};

use super::metrics::{rmse, smape, Quantiles};
use super::scenario::{
    run_scenario, stream_rng, GroundTruth, Record, ScenarioContext, ScenarioRun, FIRST_TRIAL_STREAM,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialMetrics {
    /// Penetration rate [%].
    pub rate: f64,
    pub trial: usize,
    /// [veh/km]
    pub rmse_rho: f64,
    /// [veh/h]
    pub rmse_psi: f64,
    /// [%]
    pub smape_rho: f64,
    pub smape_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub rmse_rho: Quantiles,
    pub rmse_psi: Quantiles,
    pub smape_rho: Quantiles,
    pub smape_psi: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub rate: f64,
    /// CVs per trial, ego included.
    pub n_cvs: usize,
    #[serde(skip)]
    pub trials: Vec<TrialMetrics>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub ego: u64,
    pub pool_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub rates: Vec<RateReport>,
}

impl ErrorReport {
    pub fn rate(&self, rate: f64) -> Option<&RateReport> {
        self.rates.iter().find(|r| r.rate == rate)
    }
}

/// Ego errors over the samples at which the ego holds an estimate, in
/// reporting units.
pub fn ego_metrics(run: &ScenarioRun, gt: &GroundTruth) -> Result<[f64; 4]> {
    let est = run.ego_estimates();
    let mut truth_rho = Vec::with_capacity(est.len());
    let mut truth_psi = Vec::with_capacity(est.len());
    let mut est_rho = Vec::with_capacity(est.len());
    let mut est_psi = Vec::with_capacity(est.len());
    for (&k, x) in est {
        let truth = gt.fields.state(k);
        truth_rho.push(truth.densities().iter().map(|&r| vehm_to_vehkm(r)).collect());
        truth_psi.push(truth.relative_flows().iter().map(|&q| vehs_to_vehh(q)).collect());
        est_rho.push(x.densities().iter().map(|&r| vehm_to_vehkm(r)).collect());
        est_psi.push(x.relative_flows().iter().map(|&q| vehs_to_vehh(q)).collect());
    }
    Ok([
        rmse(&truth_rho, &est_rho)?,
        rmse(&truth_psi, &est_psi)?,
        smape(&truth_rho, &est_rho)?,
        smape(&truth_psi, &est_psi)?,
    ])
}

/// Number of CVs (ego included) for penetration `fraction` of `pool` vehicles.
pub fn subset_size(fraction: f64, pool: usize) -> usize {
    ((fraction * pool as f64).round() as usize).clamp(1, pool.max(1))
}

/// `n` vehicles drawn uniformly from `pool`, always containing `ego`.
pub fn draw_subset(pool: &[u64], ego: u64, n: usize, rng: &mut impl Rng) -> BTreeSet<u64> {
    let others: Vec<u64> = pool.iter().copied().filter(|&id| id != ego).collect();
    let k = n.saturating_sub(1).min(others.len());
    let mut subset: BTreeSet<u64> = index::sample(rng, others.len(), k)
        .into_iter()
        .map(|i| others[i])
        .collect();
    subset.insert(ego);
    subset
}

/// Penetration-rate study over a shared ground truth. Trial `t` of rate
/// index `r` uses RNG stream `FIRST_TRIAL_STREAM + r * trials + t`.
pub fn monte_carlo(cfg: &RunConfig, gt: &GroundTruth) -> Result<ErrorReport> {
    let ctx = ScenarioContext::new(cfg)?;
    let pool = gt.vehicle_pool();
    let ego = gt.ego()?;
    let mut rates = Vec::with_capacity(cfg.penetration_rates.len());
    for (ri, &rate) in cfg.penetration_rates.iter().enumerate() {
        let n_cvs = subset_size(rate / 100.0, pool.len());
        let trials: Vec<TrialMetrics> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = FIRST_TRIAL_STREAM + (ri * cfg.trials + trial) as u64;
                let mut rng = stream_rng(cfg.seed, stream);
                let subset = draw_subset(&pool, ego, n_cvs, &mut rng);
                let run = run_scenario(&ctx, gt, &subset, ego, &mut rng, Record::Ego)?;
                let [rmse_rho, rmse_psi, smape_rho, smape_psi] = ego_metrics(&run, gt)?;
                Ok(TrialMetrics {
                    rate,
                    trial,
                    rmse_rho,
                    rmse_psi,
                    smape_rho,
                    smape_psi,
                })
            })
            .collect::<Result<_>>()?;
        let col = |f: fn(&TrialMetrics) -> f64| {
            Quantiles::of(&trials.iter().map(f).collect::<Vec<_>>()).expect("trials >= 1")
        };
        let summary = MetricSummary {
            rmse_rho: col(|t| t.rmse_rho),
            rmse_psi: col(|t| t.rmse_psi),
            smape_rho: col(|t| t.smape_rho),
            smape_psi: col(|t| t.smape_psi),
        };
        rates.push(RateReport {
            rate,
            n_cvs,
            trials,
            summary,
        });
    }
    Ok(ErrorReport {
        ego,
        pool_size: pool.len(),
        trials: cfg.trials,
        seed: cfg.seed,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_sizes() {
        assert_eq!(subset_size(0.02, 253), 5);
        assert_eq!(subset_size(0.2, 253), 51);
        assert_eq!(subset_size(0.0, 253), 1);
        assert_eq!(subset_size(1.0, 10), 10);
    }

    #[test]
    fn subsets_contain_ego_and_are_seeded() {
        let pool: Vec<u64> = (100..160).collect();
        let a = draw_subset(&pool, 130, 6, &mut stream_rng(3, 9));
        let b = draw_subset(&pool, 130, 6, &mut stream_rng(3, 9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.contains(&130));
        assert!(a.iter().all(|id| pool.contains(id)));
    }

    #[test]
    fn full_rate_leaves_no_choice() {
        let pool: Vec<u64> = (0..20).collect();
        let all: BTreeSet<u64> = pool.iter().copied().collect();
        for s in 0..10 {
            assert_eq!(draw_subset(&pool, 4, 20, &mut stream_rng(1, s)), all);
        }
    }
}
