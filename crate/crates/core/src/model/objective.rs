//! Penalised negative log-likelihood of the monotone additive model.

use nalgebra::{DMatrix, DVector};

use super::design::Design;
use super::laplace::PenalizedObjective;
use super::reparam::clamped_exp;
use super::{DoseResponseData, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Ridge added to every spline block of `ℓ`, `½ ρ (‖β‖² + ‖γ‖²)`.
pub const SPLINE_RIDGE: f64 = 1e-8;

/// `ℓ(Ψ, φ)` for fixed `φ = (τ, λ_1..λ_{m+1})`:
///
/// ```text
/// ½ e^τ ‖y − α − B c(β) − Zγ‖² + e^{λ_1} βᵀS_1β + Σ_j e^{λ_{j+1}} γ_jᵀS_{j+1}γ_j
///   + ½ρ(‖β‖² + ‖γ‖²) − (n/2) τ + (n/2) log 2π
/// ```
pub struct DoseObjective<'a> {
    y: &'a [f64],
    design: &'a Design,
    tau: f64,
    penalty_weights: Vec<f64>,
    ridge: f64,
}

impl<'a> DoseObjective<'a> {
    /// `phi = (τ, λ_1, ..., λ_{m+1})`.
    pub fn new(data: &'a DoseResponseData, design: &'a Design, phi: &[f64]) -> Self {
        Self::with_ridge(data, design, phi, SPLINE_RIDGE)
    }

    pub fn with_ridge(data: &'a DoseResponseData, design: &'a Design, phi: &[f64], ridge: f64) -> Self {
        assert_eq!(phi.len(), design.layout.phi_dim(), "phi has the wrong length");
        Self {
            y: &data.y,
            design,
            tau: phi[0],
            penalty_weights: phi[1..].iter().map(|l| l.exp()).collect(),
            ridge,
        }
    }

    // θ = (α, u(β), γ) with u_1 = β_1, u_l = −e^{β_l}; and dθ/dΨ (diagonal).
    fn linear_params(&self, psi: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let beta = self.design.layout.beta();
        let mut theta = DVector::from_column_slice(psi);
        let mut jac = vec![1.0; psi.len()];
        for idx in beta.start + 1..beta.end {
            let e = clamped_exp(psi[idx]);
            theta[idx] = -e;
            jac[idx] = -e;
        }
        (theta, jac)
    }

    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(self.y) - &self.design.g * theta
    }

    fn penalty_value(&self, psi: &[f64]) -> f64 {
        let layout = self.design.layout;
        let mut total = 0.0;
        let blocks =
            std::iter::once(layout.beta()).chain((0..layout.covariates).map(|j| layout.gamma(j)));
        for (k, range) in blocks.enumerate() {
            let w = &psi[range];
            total += self.penalty_weights[k] * self.design.penalties[k].quadratic_form(w);
            total += 0.5 * self.ridge * w.iter().map(|v| v * v).sum::<f64>();
        }
        total
    }

    /// `TᵀHT` for the design's conditioner `T`. With `exact` the data term
    /// is formed from `G J T` itself instead of the cached `GᵀG`.
    pub(crate) fn conditioned_hessian_with(&self, psi: &[f64], exact: bool) -> DMatrix<f64> {
        let (theta, jac) = self.linear_params(psi);
        let cond = &self.design.conditioner;
        let t = &cond.t;
        let d = psi.len();
        let w = self.tau.exp();
        let jt = DMatrix::from_fn(d, d, |i, j| jac[i] * t[(i, j)]);
        let mut h = if exact {
            let m = &self.design.g * &jt;
            // Through gemm: `tr_mul` on a tall dynamic matrix is far slower.
            (m.transpose() * &m) * w
        } else {
            jt.tr_mul(&(&self.design.gtg * &jt)) * w
        };
        let r = self.residual(&theta);
        let gtr = self.design.g.tr_mul(&r);
        let beta = self.design.layout.beta();
        for idx in beta.start + 1..beta.end {
            let c = w * clamped_exp(psi[idx]) * gtr[idx];
            let row = t.row(idx).transpose();
            h.ger(c, &row, &row, 1.0);
        }
        for (k, q) in cond.penalties.iter().enumerate() {
            h += q * (2.0 * self.penalty_weights[k]);
        }
        h += &cond.ridge * self.ridge;
        h
    }

    /// `log|H|` via the conditioned Hessian; `None` if it is not positive
    /// definite.
    pub fn log_det_hessian(&self, psi: &[f64]) -> Option<f64> {
        let h = self.conditioned_hessian_with(psi, true);
        let chol = h.cholesky()?;
        let log_ht = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(log_ht - 2.0 * self.design.conditioner.log_abs_det)
    }

    fn penalty_blocks(&self) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        let layout = self.design.layout;
        std::iter::once(layout.beta())
            .chain((0..layout.covariates).map(move |j| layout.gamma(j)))
            .enumerate()
    }
}

impl PenalizedObjective for DoseObjective<'_> {
    fn dim(&self) -> usize {
        self.design.layout.dim()
    }

    fn value(&self, psi: &[f64]) -> f64 {
        let (theta, _) = self.linear_params(psi);
        let r = self.residual(&theta);
        let n = self.y.len() as f64;
        0.5 * self.tau.exp() * r.norm_squared() + self.penalty_value(psi) - 0.5 * n * self.tau
            + 0.5 * n * LN_2PI
    }

    fn gradient(&self, psi: &[f64]) -> DVector<f64> {
        let (theta, jac) = self.linear_params(psi);
        let r = self.residual(&theta);
        let gtr = self.design.g.tr_mul(&r);
        let w = self.tau.exp();
        let mut grad = DVector::from_fn(psi.len(), |i, _| -w * jac[i] * gtr[i]);
        for (k, range) in self.penalty_blocks() {
            let v = DVector::from_column_slice(&psi[range.clone()]);
            let pv = self.design.penalties[k].apply(&v) * (2.0 * self.penalty_weights[k]) + &v * self.ridge;
            let mut rows = grad.rows_mut(range.start, range.len());
            rows += &pv;
        }
        grad
    }

    fn hessian(&self, psi: &[f64]) -> DMatrix<f64> {
        let (theta, jac) = self.linear_params(psi);
        let r = self.residual(&theta);
        let gtr = self.design.g.tr_mul(&r);
        let w = self.tau.exp();
        let d = psi.len();
        let gtg = &self.design.gtg;
        let mut h = DMatrix::from_fn(d, d, |i, j| w * jac[i] * gtg[(i, j)] * jac[j]);
        // Curvature of u_l = −e^{β_l}.
        let beta = self.design.layout.beta();
        for idx in beta.start + 1..beta.end {
            h[(idx, idx)] += w * clamped_exp(psi[idx]) * gtr[idx];
        }
        for (k, range) in self.penalty_blocks() {
            let s = self.design.penalties[k].matrix();
            let mut block = h.view_mut((range.start, range.start), (range.len(), range.len()));
            block += s * (2.0 * self.penalty_weights[k]);
            for i in 0..range.len() {
                block[(i, i)] += self.ridge;
            }
        }
        h
    }

    fn conditioned_hessian(&self, psi: &[f64]) -> Option<(&DMatrix<f64>, DMatrix<f64>)> {
        Some((&self.design.conditioner.t, self.conditioned_hessian_with(psi, false)))
    }
}

/// `ℓ(Ψ, φ)` evaluated at `params`.
pub fn penalized_nll(params: &ModelParams, data: &DoseResponseData, design: &Design) -> f64 {
    let obj = DoseObjective::new(data, design, &params.phi());
    obj.value(&params.psi())
}
