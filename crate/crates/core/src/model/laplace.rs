//! Inner Newton solve and the Laplace approximation built on it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BmdError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A smooth objective in `Ψ` for fixed hyper-parameters, minimised by
/// [`newton_minimize`].
pub trait PenalizedObjective {
    fn dim(&self) -> usize;
    fn value(&self, psi: &[f64]) -> f64;
    fn gradient(&self, psi: &[f64]) -> DVector<f64>;
    /// Exact Hessian (curvature) in `Ψ`.
    fn hessian(&self, psi: &[f64]) -> DMatrix<f64>;

    /// A change of basis `T` and `TᵀHT`, assembled so that poorly identified
    /// directions keep their accuracy. Newton steps are solved in that basis
    /// when provided.
    fn conditioned_hessian(&self, _psi: &[f64]) -> Option<(&DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

/// Minimiser `Ψ̂`, the objective there, and the factored curvature `H`.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub psi: DVector<f64>,
    pub value: f64,
    pub hessian: DMatrix<f64>,
    /// Lower-triangular `L` with `H = L Lᵀ`.
    pub chol_l: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Diagonal shift added to make `H` factorable; 0 when none was needed.
    pub ridge_added: f64,
}

impl InnerSolution {
    /// `log|H| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `(D/2) log 2π - ½ log|H| - ℓ(Ψ̂)`.
    pub fn log_laplace(&self) -> f64 {
        0.5 * self.psi.len() as f64 * LN_2PI - 0.5 * self.log_det() - self.value
    }
}

pub(crate) const GRAD_TOL: f64 = 1e-8;

/// Cholesky factor of `h`, shifting the diagonal by the smallest power-of-ten
/// multiple of its scale that makes it positive definite.
pub(crate) fn factor_with_ridge(h: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = h.clone().cholesky() {
        return Some((c, 0.0));
    }
    let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut shift = 1e-12 * scale;
    while shift < 1e6 * scale {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(c) = hs.cholesky() {
            return Some((c, shift));
        }
        shift *= 10.0;
    }
    None
}

/// Damped Newton with step halving from `start`.
///
/// Stops when `‖∇ℓ‖ ≤ 1e-8`, or when the Newton decrement has fallen to the
/// rounding floor of `ℓ` (large smoothing weights put the gradient's own
/// rounding error above 1e-8), once the Newton step is negligible or three
/// polishing steps have been taken.
pub fn newton_minimize<O: PenalizedObjective + ?Sized>(
    obj: &O,
    start: &[f64],
    max_iter: usize,
) -> Result<InnerSolution> {
    let dim = obj.dim();
    if start.len() != dim {
        return Err(BmdError::InvalidArgument(format!(
            "start has length {} but the objective has dimension {dim}",
            start.len()
        )));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(BmdError::InvalidArgument("non-finite starting value".into()));
    }
    let mut psi = DVector::from_column_slice(start);
    let mut f = obj.value(psi.as_slice());
    let mut iterations = 0;
    let mut polish = 0;

    loop {
        let g = obj.gradient(psi.as_slice());
        let gnorm = g.norm();
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(BmdError::InnerOptFailed { iterations, grad_norm: gnorm });
        }
        if iterations >= max_iter {
            if gnorm <= GRAD_TOL {
                break;
            }
            return Err(BmdError::InnerOptFailed { iterations, grad_norm: gnorm });
        }
        iterations += 1;

        let step = match obj.conditioned_hessian(psi.as_slice()) {
            Some((t, ht)) => {
                let Some((chol, _)) = factor_with_ridge(&ht) else {
                    return Err(BmdError::InnerOptFailed { iterations, grad_norm: gnorm });
                };
                -(t * chol.solve(&t.tr_mul(&g)))
            }
            None => {
                let h = obj.hessian(psi.as_slice());
                let Some((chol, _)) = factor_with_ridge(&h) else {
                    return Err(BmdError::InnerOptFailed { iterations, grad_norm: gnorm });
                };
                -chol.solve(&g)
            }
        };
        let slope = g.dot(&step);
        let decrement = -slope;
        let floor = 1e-12 * f.abs().max(1.0);

        if gnorm <= GRAD_TOL || decrement <= floor {
            // Either converged, or the predicted gain is below the resolution
            // of ℓ so a line search cannot rank steps. Full Newton steps
            // still pin down directions that ℓ barely sees but log|H| does.
            let negligible = step.amax() <= 1e-9 * (1.0 + psi.amax());
            if negligible || polish >= 3 {
                break;
            }
            let cand = &psi + &step;
            let fc = obj.value(cand.as_slice());
            if fc.is_finite() && fc <= f + floor {
                psi = cand;
                f = fc;
            }
            polish += 1;
            continue;
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &psi + &step * t;
            let fc = obj.value(cand.as_slice());
            if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                psi = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if decrement <= 1e-8 * f.abs().max(1.0) {
                break;
            }
            return Err(BmdError::InnerOptFailed { iterations, grad_norm: gnorm });
        }
    }

    let grad_norm = obj.gradient(psi.as_slice()).norm();
    let hessian = obj.hessian(psi.as_slice());
    let (chol, ridge_added) = factor_with_ridge(&hessian)
        .ok_or(BmdError::InnerOptFailed { iterations, grad_norm })?;
    Ok(InnerSolution {
        value: f,
        chol_l: chol.l(),
        hessian,
        psi,
        iterations,
        grad_norm,
        ridge_added,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// ℓ(ψ) = ½ ψᵀAψ − bᵀψ + c.
    struct Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
    }

    impl PenalizedObjective for Quadratic {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&self, psi: &[f64]) -> f64 {
            let p = DVector::from_column_slice(psi);
            0.5 * p.dot(&(&self.a * &p)) - self.b.dot(&p) + self.c
        }
        fn gradient(&self, psi: &[f64]) -> DVector<f64> {
            &self.a * DVector::from_column_slice(psi) - &self.b
        }
        fn hessian(&self, _psi: &[f64]) -> DMatrix<f64> {
            self.a.clone()
        }
    }

    #[test]
    fn quadratic_solved_in_one_step_and_laplace_is_exact() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let q = Quadratic { a: a.clone(), b: b.clone(), c: 0.7 };
        let sol = newton_minimize(&q, &[0.0; 3], 10).unwrap();
        assert!(sol.iterations <= 2);
        assert!(sol.grad_norm <= GRAD_TOL);
        // ∫ exp(−ℓ) = (2π)^{D/2} |A|^{-1/2} exp(½ bᵀA⁻¹b − c), with |A| via LU.
        let ainv_b = a.clone().lu().solve(&b).unwrap();
        let exact = 1.5 * LN_2PI - 0.5 * a.clone().lu().determinant().ln() + 0.5 * b.dot(&ainv_b) - 0.7;
        assert_relative_eq!(sol.log_laplace(), exact, max_relative = 1e-12);
        assert_relative_eq!(
            sol.log_det(),
            a.lu().determinant().ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_bad_start() {
        let q = Quadratic {
            a: DMatrix::identity(2, 2),
            b: DVector::zeros(2),
            c: 0.0,
        };
        assert!(newton_minimize(&q, &[f64::NAN, 0.0], 10).is_err());
        assert!(newton_minimize(&q, &[0.0], 10).is_err());
    }

    #[test]
    fn ridge_rescues_semidefinite_matrix() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, shift) = factor_with_ridge(&h).unwrap();
        assert!(shift > 0.0 && shift < 1e-6);
    }
}
