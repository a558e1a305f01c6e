//! Coverage and timing study under `f(x) = exp(−s x)` with uniform exposures.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bmd::{c_const, estimate_bmd, BmdConfig};
use crate::bmdl::{bootstrap_bmdl, coef_covariance, covariance_seed, delta_bmdl, pivot_bmdl};
use crate::error::{BmdError, Result};
use crate::model::{fit, DoseResponseData, FitConfig};
use crate::parallel::{map_indexed, mix64, stream_rng, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_grid: Vec<usize>,
    pub s_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub replicates: usize,
    #[serde(alias = "boot_M")]
    pub boot_m: usize,
    pub p0: f64,
    pub p_plus: f64,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_cov_samples")]
    pub cov_samples: usize,
    #[serde(default = "default_basis_count")]
    pub basis_count: usize,
}

fn default_level() -> f64 {
    0.95
}

fn default_cov_samples() -> usize {
    1000
}

fn default_basis_count() -> usize {
    20
}

impl SimConfig {
    /// One cell with the study defaults.
    pub fn cell(n: usize, s: f64, sigma: f64, replicates: usize, boot_m: usize, seed: u64) -> Self {
        Self {
            n_grid: vec![n],
            s_grid: vec![s],
            sigma_grid: vec![sigma],
            replicates,
            boot_m,
            p0: 0.025,
            p_plus: 0.01,
            seed,
            level: default_level(),
            cov_samples: default_cov_samples(),
            basis_count: default_basis_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BmdError::InvalidArgument(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_grid.is_empty() || self.s_grid.is_empty() || self.sigma_grid.is_empty() {
            return bad("grids must not be empty".into());
        }
        if self.n_grid.contains(&0) {
            return bad("n_grid values must be positive".into());
        }
        for (name, g) in [("s_grid", &self.s_grid), ("sigma_grid", &self.sigma_grid)] {
            if g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad(format!("{name} values must be positive and finite"));
            }
        }
        if self.boot_m < crate::bmdl::MIN_BOOT_SAMPLES {
            return bad(format!("boot_m must be at least {}", crate::bmdl::MIN_BOOT_SAMPLES));
        }
        if self.cov_samples < 2 {
            return bad("cov_samples must be at least 2".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)".into());
        }
        c_const(self.p0, self.p_plus).map(|_| ())
    }
}

/// One row per `(n, s, σ)` cell. Coverage proportions are over converged
/// replicates; `*_se` are `sqrt(p(1 − p)/R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResultRow {
    pub n: usize,
    pub s: f64,
    pub sigma: f64,
    pub true_bmd: f64,
    pub replicates: usize,
    pub converged: usize,
    /// Mean of `x̂_b − x_b`.
    pub ebias: f64,
    pub ebias_se: f64,
    pub ecp_delta: f64,
    pub ecp_delta_se: f64,
    pub ecp_pivot: f64,
    pub ecp_pivot_se: f64,
    pub ecp_boot: f64,
    pub ecp_boot_se: f64,
    pub pct_nonconverged: f64,
    pub pct_nonconverged_se: f64,
    /// Among converged replicates.
    pub pct_delta_below_x0: f64,
    pub pct_delta_below_x0_se: f64,
    /// Medians of the per-replicate ratios to the Delta-method time.
    pub time_ratio_pivot: f64,
    pub time_ratio_boot: f64,
}

/// `x_i ~ U(0, 1)`, `y_i = exp(−s x_i) + σ ε_i`, no covariates.
pub fn simulate_dataset<R: Rng + ?Sized>(n: usize, s: f64, sigma: f64, rng: &mut R) -> Result<DoseResponseData> {
    if n == 0 || !(s > 0.0) || !(sigma >= 0.0) {
        return Err(BmdError::InvalidArgument(format!("need n >= 1, s > 0, sigma >= 0 (got {n}, {s}, {sigma})")));
    }
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x.iter().map(|&xi| (-s * xi).exp() + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    DoseResponseData::new(y, x, Vec::new())
}

/// `x_b = −log(1 − σ c)/s`, the root of `(f(0) − f(x))/σ = c`.
pub fn true_bmd(s: f64, sigma: f64, p0: f64, p_plus: f64) -> Result<f64> {
    let sc = sigma * c_const(p0, p_plus)?;
    if sc >= 1.0 {
        return Err(BmdError::NoTrueBmd(sc));
    }
    Ok(-(1.0 - sc).ln() / s)
}

/// What one replicate produced. `None` limits mean the step failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub xb_hat: Option<f64>,
    pub delta: Option<f64>,
    pub pivot: Option<f64>,
    pub boot: Option<f64>,
    pub time_delta: f64,
    pub time_pivot: f64,
    pub time_boot: f64,
}

impl ReplicateOutcome {
    fn failed() -> Self {
        Self { xb_hat: None, delta: None, pivot: None, boot: None, time_delta: 0.0, time_pivot: 0.0, time_boot: 0.0 }
    }

    pub fn converged(&self) -> bool {
        self.xb_hat.is_some()
    }
}

/// Seed of a cell, independent of where it sits in the grid.
pub fn cell_seed(seed: u64, n: usize, s: f64, sigma: f64) -> u64 {
    mix64(mix64(mix64(seed ^ n as u64) ^ s.to_bits()) ^ sigma.to_bits())
}

/// Simulates, fits and computes all three limits for replicate `rep`.
pub fn run_replicate(cfg: &SimConfig, n: usize, s: f64, sigma: f64, rep: usize) -> ReplicateOutcome {
    let seed = cell_seed(cfg.seed, n, s, sigma);
    let mut rng = stream_rng(seed, rep as u64);
    let Ok(data) = simulate_dataset(n, s, sigma, &mut rng) else {
        return ReplicateOutcome::failed();
    };
    let fit_cfg = FitConfig {
        basis_count: cfg.basis_count,
        exposure_range: Some((0.0, data.exposure_range().1)),
        ..FitConfig::default()
    };
    let Ok(model) = fit(&data, &fit_cfg) else {
        return ReplicateOutcome::failed();
    };
    let bmd_cfg = BmdConfig { p0: cfg.p0, p_plus: cfg.p_plus, ..BmdConfig::default() };
    let Ok(est) = estimate_bmd(&model, &bmd_cfg) else {
        return ReplicateOutcome::failed();
    };
    let rep_seed = mix64(seed.wrapping_add(rep as u64));
    let cov_seed = covariance_seed(rep_seed);

    // Both asymptotic limits start from the same sampled covariance.
    let t = Instant::now();
    let delta = coef_covariance(&model, cfg.cov_samples, &mut stream_rng(cov_seed, 0))
        .and_then(|cov| delta_bmdl(&model, &est, &cov, &bmd_cfg))
        .ok();
    let time_delta = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let pivot = coef_covariance(&model, cfg.cov_samples, &mut stream_rng(cov_seed, 0))
        .and_then(|cov| pivot_bmdl(&model, &est, &cov, &bmd_cfg, cfg.level))
        .ok();
    let time_pivot = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let boot = bootstrap_bmdl(&model, &bmd_cfg, cfg.boot_m, rep_seed, Execution::Sequential).ok();
    let time_boot = t.elapsed().as_secs_f64();

    ReplicateOutcome {
        xb_hat: Some(est.xb_hat),
        delta: delta.map(|d| d.value),
        pivot: pivot.map(|p| p.value),
        boot: boot.map(|b| b.value),
        time_delta,
        time_pivot,
        time_boot,
    }
}

fn proportion(hits: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

fn median(v: Vec<f64>) -> f64 {
    crate::stats::percentile(&v, 0.5).unwrap_or(f64::NAN)
}

/// Aggregates replicate outcomes; `covers(limit, truth)` decides coverage.
pub fn summarize<F>(n: usize, s: f64, sigma: f64, truth: f64, x0: f64, outcomes: &[ReplicateOutcome], covers: F) -> SimResultRow
where
    F: Fn(f64, f64) -> bool,
{
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.converged()).collect();
    let ecp = |pick: fn(&ReplicateOutcome) -> Option<f64>| {
        let vals: Vec<f64> = ok.iter().filter_map(|o| pick(o)).collect();
        proportion(vals.iter().filter(|&&l| covers(l, truth)).count(), vals.len())
    };
    let (ecp_delta, ecp_delta_se) = ecp(|o| o.delta);
    let (ecp_pivot, ecp_pivot_se) = ecp(|o| o.pivot);
    let (ecp_boot, ecp_boot_se) = ecp(|o| o.boot);
    let (pct_nonconverged, pct_nonconverged_se) = proportion(outcomes.len() - ok.len(), outcomes.len());
    let deltas: Vec<f64> = ok.iter().filter_map(|o| o.delta).collect();
    let (pct_delta_below_x0, pct_delta_below_x0_se) =
        proportion(deltas.iter().filter(|&&d| d < x0).count(), deltas.len());

    let bias: Vec<f64> = ok.iter().filter_map(|o| o.xb_hat).map(|x| x - truth).collect();
    let (ebias, ebias_se) = if bias.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = crate::stats::mean(&bias);
        let se = if bias.len() > 1 { crate::stats::sample_sd(&bias) / (bias.len() as f64).sqrt() } else { f64::NAN };
        (m, se)
    };
    let timed: Vec<&&ReplicateOutcome> = ok.iter().filter(|o| o.time_delta > 0.0).collect();
    let time_ratio_pivot = median(timed.iter().map(|o| o.time_pivot / o.time_delta).collect());
    let time_ratio_boot = median(timed.iter().map(|o| o.time_boot / o.time_delta).collect());

    SimResultRow {
        n,
        s,
        sigma,
        true_bmd: truth,
        replicates: outcomes.len(),
        converged: ok.len(),
        ebias,
        ebias_se,
        ecp_delta,
        ecp_delta_se,
        ecp_pivot,
        ecp_pivot_se,
        ecp_boot,
        ecp_boot_se,
        pct_nonconverged,
        pct_nonconverged_se,
        pct_delta_below_x0,
        pct_delta_below_x0_se,
        time_ratio_pivot,
        time_ratio_boot,
    }
}

/// Replicate outcomes of one cell, in replicate order.
pub fn run_cell_outcomes(cfg: &SimConfig, n: usize, s: f64, sigma: f64, exec: Execution) -> Vec<ReplicateOutcome> {
    map_indexed(cfg.replicates, exec, |rep| run_replicate(cfg, n, s, sigma, rep))
}

/// One cell; coverage means `limit <= x_b`.
pub fn run_cell(cfg: &SimConfig, n: usize, s: f64, sigma: f64, exec: Execution) -> Result<SimResultRow> {
    let truth = true_bmd(s, sigma, cfg.p0, cfg.p_plus)?;
    let outcomes = run_cell_outcomes(cfg, n, s, sigma, exec);
    Ok(summarize(n, s, sigma, truth, 0.0, &outcomes, |l, t| l <= t))
}

/// Every cell of the grid, `n` outermost and `σ` innermost.
pub fn run_study(cfg: &SimConfig, exec: Execution) -> Result<Vec<SimResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        for &s in &cfg.s_grid {
            for &sigma in &cfg.sigma_grid {
                rows.push(run_cell(cfg, n, s, sigma, exec)?);
            }
        }
    }
    Ok(rows)
}
