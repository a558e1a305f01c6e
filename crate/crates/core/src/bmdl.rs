//! Benchmark-dose lower limits: Delta method, approximate pivot and the
//! posterior-sampling bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bmd::{c_const, find_root, solve_bmd, BmdConfig, BmdEstimate, DoseCurve, Estimating};
use crate::error::{BmdError, Result};
use crate::model::{FittedModel, PosteriorSampler};
use crate::parallel::{map_indexed, mix64, stream_rng, Execution};
use crate::splines::{basis_derivative, KnotVector};
use crate::stats::{chi2_1_quantile, percentile};

/// Sample covariance `Σ̂` of constrained exposure weights drawn from the
/// approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefCovariance {
    pub matrix: DMatrix<f64>,
}

pub fn coef_covariance<R: Rng + ?Sized>(model: &FittedModel, m: usize, rng: &mut R) -> Result<CoefCovariance> {
    if m < 2 {
        return Err(BmdError::InvalidArgument(format!("need at least 2 draws for a covariance (got {m})")));
    }
    let center = model.params.psi();
    let sampler = PosteriorSampler::new(model, &center);
    let l = model.layout().basis_count;
    let mut draws = DMatrix::zeros(m, l);
    let (mut psi, mut beta_c) = (Vec::new(), Vec::new());
    for i in 0..m {
        sampler.sample_beta_c(rng, &mut psi, &mut beta_c);
        for (j, v) in beta_c.iter().enumerate() {
            draws[(i, j)] = *v;
        }
    }
    let matrix = sample_covariance(&draws);
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(BmdError::NonFiniteCovariance);
    }
    Ok(CoefCovariance { matrix })
}

/// Unbiased covariance of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let means = x.row_mean();
    let centred = DMatrix::from_fn(m, x.ncols(), |i, j| x[(i, j)] - means[j]);
    let mut cov = centred.tr_mul(&centred) / (m as f64 - 1.0);
    cov.fill_lower_triangle_with_upper_triangle();
    cov
}

/// `V_n(x) = (b(x0) − b(x))ᵀ Σ̂ (b(x0) − b(x)) / σ̂²` and its derivative.
#[derive(Debug, Clone)]
pub struct Variance<'a> {
    knots: &'a KnotVector,
    cov: &'a DMatrix<f64>,
    x0: f64,
    inv_s2: f64,
}

impl<'a> Variance<'a> {
    pub fn new(knots: &'a KnotVector, cov: &'a DMatrix<f64>, x0: f64, sigma: f64) -> Result<Self> {
        if cov.nrows() != knots.basis_count() || !cov.is_square() {
            return Err(BmdError::InvalidArgument("covariance does not match the basis".into()));
        }
        if !knots.contains(x0) {
            return Err(BmdError::OutOfSupport { x: x0, lo: knots.lower(), hi: knots.upper() });
        }
        Ok(Self { knots, cov, x0, inv_s2: 1.0 / (sigma * sigma) })
    }

    // b(x0) − b(x) = −∫_{x0}^{x} b'(u) du, integrated span by span with
    // two-point Gauss–Legendre (exact for the quadratic b'). Subtracting two
    // basis rows would cancel to zero once x is within rounding of x0.
    fn diff(&self, x: f64) -> Result<DVector<f64>> {
        let l = self.knots.basis_count();
        let (lo, hi) = if x < self.x0 { (x, self.x0) } else { (self.x0, x) };
        let mut cuts = vec![lo];
        cuts.extend(self.knots.knots().iter().copied().filter(|&t| t > lo && t < hi));
        cuts.push(hi);
        cuts.dedup();
        let g = 0.5 / 3f64.sqrt();
        let mut acc = DVector::zeros(l);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for node in [mid - 2.0 * g * half, mid + 2.0 * g * half] {
                acc += DVector::from_vec(basis_derivative(node, self.knots)?) * half;
            }
        }
        if x < self.x0 {
            Ok(acc)
        } else {
            Ok(-acc)
        }
    }

    pub fn v(&self, x: f64) -> Result<f64> {
        let d = self.diff(x)?;
        let v = d.dot(&(self.cov * &d)) * self.inv_s2;
        if !v.is_finite() {
            return Err(BmdError::NonFiniteCovariance);
        }
        Ok(v)
    }

    /// `V'_n(x) = −2 b'(x)ᵀ Σ̂ (b(x0) − b(x)) / σ̂²`.
    pub fn v_prime(&self, x: f64) -> Result<f64> {
        let d = self.diff(x)?;
        let db = DVector::from_vec(basis_derivative(x, self.knots)?);
        Ok(-2.0 * db.dot(&(self.cov * d)) * self.inv_s2)
    }
}

pub fn v_n(x: f64, model: &FittedModel, cov: &CoefCovariance, cfg: &BmdConfig) -> Result<f64> {
    Variance::new(model.exposure_knots(), &cov.matrix, cfg.x0, model.sigma_hat)?.v(x)
}

pub fn v_n_prime(x: f64, model: &FittedModel, cov: &CoefCovariance, cfg: &BmdConfig) -> Result<f64> {
    Variance::new(model.exposure_knots(), &cov.matrix, cfg.x0, model.sigma_hat)?.v_prime(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBmdl {
    pub value: f64,
    /// `value < x0`: the limit carries no information about `x_b`.
    pub below_x0: bool,
}

/// `x̂_b − 2 V_n(x̂_b)^{1/2} / |U'_n(x̂_b)|`, never clamped.
pub fn delta_bmdl(model: &FittedModel, est: &BmdEstimate, cov: &CoefCovariance, cfg: &BmdConfig) -> Result<DeltaBmdl> {
    let var = Variance::new(model.exposure_knots(), &cov.matrix, cfg.x0, model.sigma_hat)?;
    delta_from(&var, est, cfg.x0)
}

pub(crate) fn delta_from(var: &Variance, est: &BmdEstimate, x0: f64) -> Result<DeltaBmdl> {
    let slope = est.u_prime_at_root.abs();
    if !(slope >= 1e-14) {
        return Err(BmdError::DegenerateSlope(slope));
    }
    let v = var.v(est.xb_hat)?.max(0.0);
    let value = est.xb_hat - 2.0 * v.sqrt() / slope;
    Ok(DeltaBmdl { value, below_x0: value < x0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotBmdl {
    pub value: f64,
    pub iterations: usize,
    pub bisection: bool,
    /// `V_n(x̂_b) = 0`, so `x̂_b` itself is returned.
    pub degenerate: bool,
}

/// `κ_n(x) = U_n(x)² − V_n(x) q`.
#[derive(Debug, Clone)]
pub struct Kappa<'a> {
    eq: Estimating<'a>,
    var: &'a Variance<'a>,
    q: f64,
}

impl<'a> Kappa<'a> {
    pub fn new(eq: Estimating<'a>, var: &'a Variance<'a>, q: f64) -> Self {
        Self { eq, var, q }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        let u = self.eq.u(x)?;
        Ok(u * u - self.var.v(x)? * self.q)
    }

    /// `κ'_n = 2 U_n U'_n − V'_n q`.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(2.0 * self.eq.u(x)? * self.eq.u_prime(x)? - self.var.v_prime(x)? * self.q)
    }

    /// Sign changes of `κ_n` over `grid` evenly spaced points of `[lo, hi]`.
    pub fn sign_changes(&self, lo: f64, hi: f64, grid: usize) -> Result<usize> {
        let mut changes = 0;
        let mut prev: Option<bool> = None;
        for i in 0..grid {
            let x = lo + (hi - lo) * i as f64 / (grid - 1).max(1) as f64;
            let k = self.value(x)?;
            if k == 0.0 {
                continue;
            }
            let pos = k > 0.0;
            if prev.is_some_and(|p| p != pos) {
                changes += 1;
            }
            prev = Some(pos);
        }
        Ok(changes)
    }
}

/// Root of `κ_n` in `(x0, x̂_b)` by reflective Newton started at the midpoint,
/// with bisection after `cfg.max_iter` steps.
pub fn pivot_bmdl(
    model: &FittedModel,
    est: &BmdEstimate,
    cov: &CoefCovariance,
    cfg: &BmdConfig,
    level: f64,
) -> Result<PivotBmdl> {
    let curve = DoseCurve::from_model(model)?;
    let var = Variance::new(curve.knots(), &cov.matrix, cfg.x0, curve.sigma())?;
    let eq = Estimating::new(&curve, cfg.x0, c_const(cfg.p0, cfg.p_plus)?)?;
    pivot_from(&Kappa::new(eq, &var, chi2_1_quantile(level)?), est.xb_hat, cfg)
}

pub(crate) fn pivot_from(kappa: &Kappa, xb: f64, cfg: &BmdConfig) -> Result<PivotBmdl> {
    if !(xb > cfg.x0) {
        return Err(BmdError::InvalidArgument(format!("x_b = {xb} does not exceed x0 = {}", cfg.x0)));
    }
    if kappa.var.v(xb)? <= 0.0 {
        return Ok(PivotBmdl { value: xb, iterations: 0, bisection: false, degenerate: true });
    }
    // −κ rises from −c² at x0 to V_n(x̂_b) q at x̂_b.
    let (value, iterations, bisection) = find_root(
        |x| kappa.value(x).map(|k| -k),
        |x| kappa.derivative(x).map(|k| -k),
        cfg.x0,
        xb,
        cfg.tol,
        cfg.max_iter,
    )?;
    Ok(PivotBmdl { value, iterations, bisection, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBmdl {
    pub value: f64,
    /// Benchmark doses of the draws that had one, in draw order.
    pub samples: Vec<f64>,
    pub failures: usize,
}

/// Fewest draws for which a 2.5th percentile is defined.
pub const MIN_BOOT_SAMPLES: usize = 40;

/// 2.5th percentile of the benchmark doses of `m` posterior draws. Draw `j`
/// uses its own stream of `seed`, so the result does not depend on `exec`.
pub fn bootstrap_bmdl(model: &FittedModel, cfg: &BmdConfig, m: usize, seed: u64, exec: Execution) -> Result<BootstrapBmdl> {
    if m < MIN_BOOT_SAMPLES {
        return Err(BmdError::InvalidArgument(format!(
            "need at least {MIN_BOOT_SAMPLES} bootstrap draws (got {m})"
        )));
    }
    cfg.validate()?;
    let (x0, xmax) = cfg.interval(model)?;
    let c = c_const(cfg.p0, cfg.p_plus)?;
    let center = model.params.psi();
    let sampler = PosteriorSampler::new(model, &center);
    let base = DoseCurve::from_model(model)?;

    let draws = map_indexed(m, exec, |j| {
        let mut rng = stream_rng(seed, j as u64);
        let (mut psi, mut beta_c) = (Vec::new(), Vec::new());
        sampler.sample_beta_c(&mut rng, &mut psi, &mut beta_c);
        let mut curve = base.clone();
        curve.set_weights(&beta_c).ok()?;
        solve_bmd(&curve, x0, xmax, c, cfg.tol, cfg.max_iter).ok().map(|e| e.xb_hat)
    });
    let samples: Vec<f64> = draws.iter().flatten().copied().collect();
    let failures = m - samples.len();
    let value = percentile(&samples, 0.025).ok_or(BmdError::BmdlNotEstimable { failures })?;
    Ok(BootstrapBmdl { value, samples, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdlConfig {
    /// Two-sided confidence level; the lower limit targets `(1 + level)/2`
    /// one-sided coverage.
    pub level: f64,
    pub cov_samples: usize,
    pub boot_samples: usize,
    pub seed: u64,
    /// Points in the `κ_n` sign-change scan (0 skips it).
    pub scan_points: usize,
}

impl Default for BmdlConfig {
    fn default() -> Self {
        Self { level: 0.95, cov_samples: 1000, boot_samples: 1000, seed: 1, scan_points: 1000 }
    }
}

/// Seed of the covariance draws, kept apart from the bootstrap streams.
pub fn covariance_seed(seed: u64) -> u64 {
    mix64(seed ^ 0x5EED_C0FA)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdlReport {
    pub delta: DeltaBmdl,
    pub pivot: PivotBmdl,
    pub boot: f64,
    pub var_at_xb: f64,
    pub u_prime_at_xb: f64,
    pub boot_samples_used: usize,
    pub boot_failures: usize,
    /// Sign changes of `κ_n` on the scan grid over `[x0, x̂_b]`; more than
    /// one means the pivot root may not be unique.
    pub pivot_sign_changes: Option<usize>,
    #[serde(skip)]
    pub boot_draws: Vec<f64>,
}

/// All three lower limits for a fitted model and its benchmark dose.
pub fn compute_bmdls(
    model: &FittedModel,
    est: &BmdEstimate,
    cfg: &BmdConfig,
    bcfg: &BmdlConfig,
    exec: Execution,
) -> Result<BmdlReport> {
    let mut rng = stream_rng(covariance_seed(bcfg.seed), 0);
    let cov = coef_covariance(model, bcfg.cov_samples, &mut rng)?;
    let curve = DoseCurve::from_model(model)?;
    let var = Variance::new(curve.knots(), &cov.matrix, cfg.x0, curve.sigma())?;
    let eq = Estimating::new(&curve, cfg.x0, c_const(cfg.p0, cfg.p_plus)?)?;
    let kappa = Kappa::new(eq, &var, chi2_1_quantile(bcfg.level)?);

    let delta = delta_from(&var, est, cfg.x0)?;
    let pivot = pivot_from(&kappa, est.xb_hat, cfg)?;
    let boot = bootstrap_bmdl(model, cfg, bcfg.boot_samples, bcfg.seed, exec)?;
    let pivot_sign_changes = match bcfg.scan_points {
        0 => None,
        n => Some(kappa.sign_changes(cfg.x0, est.xb_hat, n)?),
    };
    Ok(BmdlReport {
        delta,
        pivot,
        boot: boot.value,
        var_at_xb: var.v(est.xb_hat)?,
        u_prime_at_xb: est.u_prime_at_root,
        boot_samples_used: boot.samples.len(),
        boot_failures: boot.failures,
        pivot_sign_changes,
        boot_draws: boot.samples,
    })
}
