//! Monotone additive dose-response model `y = α + f(x) + Σ_j g_j(z_j) + σε`
//! fitted by maximising a Laplace-approximate marginal likelihood.

mod design;
mod laplace;
mod objective;
mod outer;
mod posterior;
mod reparam;

use std::cell::RefCell;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BmdError, Result};
use crate::splines::{de_boor, KnotPlacement, KnotVector};
use crate::stats::{mean, sample_sd};

pub use design::{build_design, Design, ParamLayout, SPLINE_ORDER};
pub use laplace::{newton_minimize, InnerSolution, PenalizedObjective};
pub use objective::{penalized_nll, DoseObjective, SPLINE_RIDGE};
pub use outer::{minimize_bounded, minimize_bounded_observed, OuterOptions, OuterResult};
pub use posterior::{posterior_sample, PosteriorDraws, PosteriorSampler};
pub use reparam::{reparameterize, unconstrain, EXP_CLAMP};

/// Responses, exposures and (column-major) covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseResponseData {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// One vector of length `n` per covariate.
    pub z: Vec<Vec<f64>>,
}

impl DoseResponseData {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(BmdError::InvalidArgument("empty data".into()));
        }
        if x.len() != n || z.iter().any(|c| c.len() != n) {
            return Err(BmdError::InvalidArgument("columns have different lengths".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|a| a.is_finite());
        if !finite(&y) || !finite(&x) || !z.iter().all(|c| finite(c)) {
            return Err(BmdError::InvalidArgument("data contain non-finite values".into()));
        }
        Ok(Self { y, x, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn covariate_count(&self) -> usize {
        self.z.len()
    }

    pub fn exposure_range(&self) -> (f64, f64) {
        let lo = self.x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// `Ψ = (α, β, γ)` and `φ = (τ, log λ)`, with `τ = -2 log σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: f64,
    pub loglambda: Vec<f64>,
}

impl ModelParams {
    pub fn from_vectors(layout: ParamLayout, psi: &[f64], phi: &[f64]) -> Result<Self> {
        if psi.len() != layout.dim() || phi.len() != layout.phi_dim() {
            return Err(BmdError::InvalidArgument(format!(
                "expected psi/phi of length {}/{}, got {}/{}",
                layout.dim(),
                layout.phi_dim(),
                psi.len(),
                phi.len()
            )));
        }
        Ok(Self {
            alpha: psi[0],
            beta: psi[layout.beta()].to_vec(),
            gamma: psi[layout.gamma_all()].to_vec(),
            tau: phi[0],
            loglambda: phi[1..].to_vec(),
        })
    }

    pub fn psi(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.beta.len() + self.gamma.len());
        v.push(self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn phi(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.loglambda.len());
        v.push(self.tau);
        v.extend_from_slice(&self.loglambda);
        v
    }

    pub fn sigma(&self) -> f64 {
        (-0.5 * self.tau).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// `L`, basis functions per smooth.
    pub basis_count: usize,
    /// Interval spanned by the exposure basis. Defaults to the observed
    /// range; widen it to include a baseline `x0` below the data.
    pub exposure_range: Option<(f64, f64)>,
    pub knot_placement: KnotPlacement,
    pub tau_bounds: (f64, f64),
    pub loglambda_bounds: (f64, f64),
    pub fd_step: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            basis_count: 20,
            exposure_range: None,
            knot_placement: KnotPlacement::Uniform,
            tau_bounds: (-50.0, 50.0),
            loglambda_bounds: (-15.0, 15.0),
            fd_step: 1e-4,
            max_outer: 100,
            max_inner: 200,
        }
    }
}

/// Runs the inner Newton solve of `ℓ(·, φ)` from `start`.
pub fn inner_opt(
    data: &DoseResponseData,
    design: &Design,
    phi: &[f64],
    start: &[f64],
    max_iter: usize,
) -> Result<InnerSolution> {
    design.check_dims(data)?;
    if phi.len() != design.layout.phi_dim() || phi.iter().any(|v| !v.is_finite()) {
        return Err(BmdError::InvalidArgument("phi has the wrong length or is not finite".into()));
    }
    let obj = DoseObjective::new(data, design, phi);
    newton_minimize(&obj, start, max_iter)
}

/// Log marginal likelihood at `φ` given the inner solution there.
///
/// This is `(D/2) log 2π − ½ log|H| − ℓ̂` plus `Σ_j (r_j / 2) λ_j`, where
/// `r_j = rank S_j`: the `λ`-dependent part of the normalising constant of
/// the Gaussian smoothing prior. Without it the criterion has no interior
/// maximum in `λ`.
pub fn laml_at(data: &DoseResponseData, design: &Design, phi: &[f64], sol: &InnerSolution) -> f64 {
    let prior: f64 = design
        .penalty_ranks()
        .iter()
        .zip(&phi[1..])
        .map(|(&r, &l)| 0.5 * r as f64 * l)
        .sum::<f64>();
    let obj = DoseObjective::new(data, design, phi);
    let log_det = obj.log_det_hessian(sol.psi.as_slice()).unwrap_or_else(|| sol.log_det());
    0.5 * sol.psi.len() as f64 * LN_2PI - 0.5 * log_det - sol.value + prior
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log marginal likelihood at `φ`, solving the inner problem from `start`.
pub fn laml(data: &DoseResponseData, design: &Design, phi: &[f64], start: &[f64]) -> Result<f64> {
    let sol = inner_opt(data, design, phi, start, FitConfig::default().max_inner)?;
    Ok(laml_at(data, design, phi, &sol))
}

/// Estimates at `(Ψ̂(φ̂), φ̂)` together with the curvature and design.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: ModelParams,
    /// Constrained (strictly decreasing) exposure weights.
    pub beta_c: Vec<f64>,
    /// `H(φ̂)`, curvature of `ℓ` in `Ψ`.
    pub hessian: DMatrix<f64>,
    /// Lower-triangular `L` with `H = L Lᵀ`.
    pub chol: DMatrix<f64>,
    pub design: Design,
    /// Mean of the uncentred `f̂(x_i)`; reported curves subtract it.
    pub f_offset: f64,
    pub g_offsets: Vec<f64>,
    pub sigma_hat: f64,
    pub log_laml: f64,
    pub outer_iterations: usize,
    /// Diagonal shift needed to factor `H`; 0 in a regular fit.
    pub ridge_added: f64,
    pub data_range: (f64, f64),
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn exposure_knots(&self) -> &KnotVector {
        &self.design.exposure_knots
    }

    pub fn layout(&self) -> ParamLayout {
        self.design.layout
    }

    /// Centred exposure curve, `Σ_i f̂(x_i) = 0`.
    pub fn f_hat(&self, x: f64) -> Result<f64> {
        Ok(de_boor(x, &self.beta_c, &self.design.exposure_knots)? - self.f_offset)
    }

    /// Centred smooth of covariate `j` (0-based).
    pub fn g_hat(&self, j: usize, z: f64) -> Result<f64> {
        let kv = self
            .design
            .covariate_knots
            .get(j)
            .ok_or_else(|| BmdError::InvalidArgument(format!("no covariate {j}")))?;
        let l = self.layout().basis_count;
        let w = &self.params.gamma[j * l..(j + 1) * l];
        Ok(de_boor(z, w, kv)? - self.g_offsets[j])
    }

    /// Intercept after moving the centring shifts into it.
    pub fn alpha_centred(&self) -> f64 {
        self.params.alpha + self.f_offset + self.g_offsets.iter().sum::<f64>()
    }

    pub fn smoothing_parameters(&self) -> Vec<f64> {
        self.params.loglambda.iter().map(|l| l.exp()).collect()
    }
}

fn initial_values(data: &DoseResponseData, design: &Design, cfg: &FitConfig) -> (Vec<f64>, Vec<f64>) {
    let layout = design.layout;
    let n = data.len() as f64;
    let xbar = mean(&data.x);
    let ybar = mean(&data.y);
    let sxx: f64 = data.x.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = data.x.iter().zip(&data.y).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let (lo, hi) = (design.exposure_knots.lower(), design.exposure_knots.upper());
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let sd_y = sample_sd(&data.y);
    let b_ls = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let slope = b_ls.min(-(0.01 * sd_y).max(1e-8) / range);

    let beta_c: Vec<f64> = design.exposure_knots.greville().iter().map(|g| slope * (g - xbar)).collect();
    let mut psi = vec![0.0; layout.dim()];
    psi[0] = ybar;
    psi[layout.beta()].copy_from_slice(&unconstrain(&beta_c));

    let rss: f64 = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| (y - ybar - slope * (x - xbar)).powi(2))
        .sum();
    let sd_res = (rss / (n - 1.0).max(1.0)).sqrt().max(1e-8 * (1.0 + sd_y));
    let mut phi = vec![0.0; layout.phi_dim()];
    phi[0] = (-2.0 * sd_res.ln()).clamp(cfg.tau_bounds.0, cfg.tau_bounds.1);
    for l in &mut phi[1..] {
        *l = 0.0f64.clamp(cfg.loglambda_bounds.0, cfg.loglambda_bounds.1);
    }
    (psi, phi)
}

/// Fits the model: `φ̂` maximises the marginal likelihood by bounded
/// quasi-Newton with finite-difference gradients, then `Ψ̂ = Ψ̂(φ̂)`.
pub fn fit(data: &DoseResponseData, cfg: &FitConfig) -> Result<FittedModel> {
    let design = build_design(data, cfg.basis_count, cfg.exposure_range, cfg.knot_placement)?;
    fit_with_design(data, design, cfg)
}

pub fn fit_with_design(data: &DoseResponseData, design: Design, cfg: &FitConfig) -> Result<FittedModel> {
    design.check_dims(data)?;
    let layout = design.layout;
    let n = data.len();
    if n <= layout.dim() {
        return Err(BmdError::InsufficientData { n, params: layout.dim() });
    }
    let mut warnings = Vec::new();
    if n < 10 * cfg.basis_count {
        warnings.push(format!(
            "n = {n} is below 10 observations per basis function (L = {})",
            cfg.basis_count
        ));
    }

    let (psi0, phi0) = initial_values(data, &design, cfg);
    let mut lower = vec![cfg.loglambda_bounds.0; layout.phi_dim()];
    let mut upper = vec![cfg.loglambda_bounds.1; layout.phi_dim()];
    lower[0] = cfg.tau_bounds.0;
    upper[0] = cfg.tau_bounds.1;
    let opts = OuterOptions {
        lower,
        upper,
        fd_step: cfg.fd_step,
        max_iter: cfg.max_outer,
        f_tol: 1e-6,
        g_tol: 1e-4,
    };

    // Inner solves start from the solution at the current outer iterate, so
    // that every evaluation within one iteration lands in the same local
    // minimum of ℓ and the difference quotients stay smooth.
    let anchor = RefCell::new(psi0.clone());
    let last = RefCell::new((Vec::new(), psi0.clone()));
    let objective = |phi: &[f64]| -> Result<f64> {
        let start = anchor.borrow().clone();
        let sol = inner_opt(data, &design, phi, &start, cfg.max_inner)
            .or_else(|_| inner_opt(data, &design, phi, &psi0, cfg.max_inner))?;
        let value = laml_at(data, &design, phi, &sol);
        *last.borrow_mut() = (phi.to_vec(), sol.psi.as_slice().to_vec());
        Ok(-value)
    };
    let accept = |phi: &[f64]| -> Option<f64> {
        let (at, psi) = last.borrow().clone();
        if at == phi {
            *anchor.borrow_mut() = psi;
        }
        None
    };
    let outer = minimize_bounded_observed(objective, accept, &phi0, &opts)?;
    let phi_hat = outer.x.clone();

    let start = anchor.borrow().clone();
    let sol = inner_opt(data, &design, &phi_hat, &start, cfg.max_inner)
        .or_else(|_| inner_opt(data, &design, &phi_hat, &psi0, cfg.max_inner))?;
    let log_laml = laml_at(data, &design, &phi_hat, &sol);
    let params = ModelParams::from_vectors(layout, sol.psi.as_slice(), &phi_hat)?;
    let beta_c = reparameterize(&params.beta);

    let fitted_f = &design.b * nalgebra::DVector::from_column_slice(&beta_c);
    let f_offset = fitted_f.mean();
    let g_offsets = (0..layout.covariates)
        .map(|j| {
            let cols = design.z.columns(j * layout.basis_count, layout.basis_count);
            let w = nalgebra::DVector::from_column_slice(&sol.psi.as_slice()[layout.gamma(j)]);
            (cols * w).mean()
        })
        .collect();
    if outer.at_jump {
        warnings.push(
            "the marginal likelihood is discontinuous at the selected smoothing parameters \
             (competing local optima of the penalised likelihood)"
                .into(),
        );
    }
    if sol.ridge_added > 0.0 {
        warnings.push(format!("Hessian needed a diagonal shift of {:.3e}", sol.ridge_added));
    }

    Ok(FittedModel {
        sigma_hat: params.sigma(),
        params,
        beta_c,
        hessian: sol.hessian,
        chol: sol.chol_l,
        f_offset,
        g_offsets,
        log_laml,
        outer_iterations: outer.iterations,
        ridge_added: sol.ridge_added,
        data_range: data.exposure_range(),
        design,
        warnings,
    })
}
