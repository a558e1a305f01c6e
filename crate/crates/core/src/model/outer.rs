//! Box-constrained BFGS with central-difference gradients, started from a
//! difference Hessian.

use nalgebra::{DMatrix, DVector};

use crate::error::{BmdError, Result};

#[derive(Debug, Clone)]
pub struct OuterOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fd_step: f64,
    pub max_iter: usize,
    /// Converged when `|Δf| <= f_tol` and the projected gradient norm is at
    /// most `g_tol`. On a plateau where finite-difference noise hides the
    /// gradient, three successive steps with `|Δf| <= f_tol`, or a stalled
    /// line search, are accepted once the projected gradient is below
    /// `100 g_tol`.
    pub f_tol: f64,
    pub g_tol: f64,
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The search stopped at a point where `f` jumps within the difference
    /// stencil, so `grad_norm` does not measure stationarity.
    pub at_jump: bool,
}

fn project(x: &mut DVector<f64>, opts: &OuterOptions) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(opts.lower[i], opts.upper[i]);
    }
}

/// Zeroes gradient components that push against an active bound.
fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, opts: &OuterOptions) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let at_lo = x[i] <= opts.lower[i] && g[i] > 0.0;
        let at_hi = x[i] >= opts.upper[i] && g[i] < 0.0;
        if at_lo || at_hi {
            0.0
        } else {
            g[i]
        }
    })
}

/// Central differences, except where the two one-sided quotients disagree by
/// far more than smooth curvature allows (a jump in `f` inside the stencil);
/// there the smaller one-sided quotient is used.
fn fd_gradient<F>(f: &mut F, x: &DVector<f64>, fx: f64, opts: &OuterOptions) -> Result<(DVector<f64>, bool)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut jump = false;
    for i in 0..x.len() {
        let hi = (x[i] + opts.fd_step).min(opts.upper[i]);
        let lo = (x[i] - opts.fd_step).max(opts.lower[i]);
        let mut xp = x.clone();
        xp[i] = hi;
        let fp = f(xp.as_slice())?;
        let mut xm = x.clone();
        xm[i] = lo;
        let fm = f(xm.as_slice())?;
        g[i] = (fp - fm) / (hi - lo);
        if hi > x[i] && lo < x[i] {
            let fwd = (fp - fx) / (hi - x[i]);
            let bwd = (fx - fm) / (x[i] - lo);
            if (fwd - bwd).abs() > JUMP_TOL.max(0.5 * fwd.abs().min(bwd.abs())) {
                g[i] = if fwd.abs() < bwd.abs() { fwd } else { bwd };
                jump = true;
            }
        }
    }
    Ok((g, jump))
}

/// Disagreement between one-sided quotients treated as a jump.
const JUMP_TOL: f64 = 1.0;

/// Central-difference Hessian with step `h`, evaluated at `x` moved inward so
/// that the stencil stays inside the box.
fn fd_hessian<F>(f: &mut F, x: &DVector<f64>, opts: &OuterOptions, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x.len();
    let mut c = x.clone();
    for i in 0..n {
        c[i] = c[i].clamp(opts.lower[i] + h, opts.upper[i] - h);
    }
    let mut eval = |di: usize, si: f64, dj: usize, sj: f64| -> Result<f64> {
        let mut p = c.clone();
        p[di] += si * h;
        p[dj] += sj * h;
        f(p.as_slice())
    };
    let f0 = eval(0, 0.0, 0, 0.0)?;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(i, 1.0, i, 0.0)?;
        let fm = eval(i, -1.0, i, 0.0)?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let pp = eval(i, 1.0, j, 1.0)?;
            let pm = eval(i, 1.0, j, -1.0)?;
            let mp = eval(i, -1.0, j, 1.0)?;
            let mm = eval(i, -1.0, j, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Inverse of `h` after replacing its eigenvalues by their magnitudes,
/// floored at `1e-3` of the largest.
fn positive_inverse(h: DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    if h.iter().any(|v| !v.is_finite()) {
        return DMatrix::identity(n, n);
    }
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if top == 0.0 {
        return DMatrix::identity(n, n);
    }
    let inv = eig.eigenvalues.map(|v| 1.0 / v.abs().max(1e-3 * top));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Longest step taken in one iteration, in units of `x`.
const MAX_STEP: f64 = 5.0;

/// Minimises `f` over the box from `x0`. `f` returning an error inside the
/// line search is treated as `+∞`; an error during gradient evaluation at an
/// accepted iterate is propagated.
pub fn minimize_bounded<F>(f: F, x0: &[f64], opts: &OuterOptions) -> Result<OuterResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    minimize_bounded_observed(f, |_| None, x0, opts)
}

/// As [`minimize_bounded`], calling `accept` with each new iterate right
/// after `f` has been evaluated there and before any gradient evaluation.
/// A returned value replaces `f` at that iterate.
pub fn minimize_bounded_observed<F, A>(mut f: F, mut accept: A, x0: &[f64], opts: &OuterOptions) -> Result<OuterResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
    A: FnMut(&[f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    project(&mut x, opts);
    let mut fx = f(x.as_slice())?;
    if let Some(v) = accept(x.as_slice()) {
        fx = v;
    }
    let (mut g, mut jump) = fd_gradient(&mut f, &x, fx, opts)?;
    let curvature_step = (10.0 * opts.fd_step).max(1e-6);
    let mut inv_h = fd_hessian(&mut f, &x, opts, curvature_step)
        .map(positive_inverse)
        .unwrap_or_else(|_| DMatrix::identity(n, n));
    let mut fresh = true;
    let mut flat_steps = 0;
    let plateau_tol = 100.0 * opts.g_tol;

    for iter in 1..=opts.max_iter {
        let pg = projected_gradient(&x, &g, opts);
        if pg.norm() <= 0.01 * opts.g_tol {
            return Ok(OuterResult { x: x.as_slice().to_vec(), value: fx, iterations: iter - 1, grad_norm: pg.norm(), at_jump: false });
        }

        // Search only along free coordinates.
        let free: Vec<bool> = (0..n).map(|i| pg[i] != 0.0 || g[i] == 0.0).collect();
        let mut dir = -(&inv_h * &pg);
        for i in 0..n {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&pg) >= 0.0 {
            dir = -pg.clone();
        }
        let len = dir.norm();
        if len > MAX_STEP {
            dir *= MAX_STEP / len;
        }

        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut cand = &x + &dir * t;
            project(&mut cand, opts);
            let moved = &cand - &x;
            if moved.norm() == 0.0 {
                break;
            }
            if let Ok(fc) = f(cand.as_slice()) {
                if fc.is_finite() && fc <= fx + 1e-4 * g.dot(&moved) {
                    next = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((x_new, mut f_new)) = next else {
            if !fresh {
                // Stale curvature; restart from a fresh difference Hessian.
                inv_h = fd_hessian(&mut f, &x, opts, curvature_step)
                    .map(positive_inverse)
                    .unwrap_or_else(|_| DMatrix::identity(n, n));
                fresh = true;
                continue;
            }
            if pg.norm() <= plateau_tol || jump {
                return Ok(OuterResult {
                    x: x.as_slice().to_vec(),
                    value: fx,
                    iterations: iter,
                    grad_norm: pg.norm(),
                    at_jump: jump && pg.norm() > plateau_tol,
                });
            }
            return Err(BmdError::FitFailed(format!(
                "line search stalled at iteration {iter} (projected gradient norm {:.3e})",
                pg.norm()
            )));
        };

        if let Some(v) = accept(x_new.as_slice()) {
            f_new = v;
        }
        let (g_new, jump_new) = fd_gradient(&mut f, &x_new, f_new, opts)?;
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * yv.transpose() * rho;
            let right = &eye - &yv * s.transpose() * rho;
            inv_h = &left * &inv_h * &right + &s * s.transpose() * rho;
            fresh = false;
        }

        let df = (fx - f_new).abs();
        x = x_new;
        fx = f_new;
        g = g_new;
        jump = jump_new;
        let pg_new = projected_gradient(&x, &g, opts);
        flat_steps = if df <= opts.f_tol { flat_steps + 1 } else { 0 };
        let done = df <= opts.f_tol && pg_new.norm() <= opts.g_tol;
        if done || (flat_steps >= 3 && pg_new.norm() <= plateau_tol) {
            return Ok(OuterResult { x: x.as_slice().to_vec(), value: fx, iterations: iter, grad_norm: pg_new.norm(), at_jump: false });
        }
    }
    let pg = projected_gradient(&x, &g, opts);
    Err(BmdError::FitFailed(format!(
        "no convergence in {} iterations (projected gradient norm {:.3e})",
        opts.max_iter,
        pg.norm()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn opts(n: usize, lo: f64, hi: f64) -> OuterOptions {
        OuterOptions {
            lower: vec![lo; n],
            upper: vec![hi; n],
            fd_step: 1e-5,
            max_iter: 200,
            f_tol: 1e-12,
            g_tol: 1e-6,
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = minimize_bounded(f, &[-1.2, 1.0], &opts(2, -5.0, 5.0)).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| Ok((x[0] - 3.0).powi(2) + (x[1] + 0.5).powi(2));
        let r = minimize_bounded(f, &[0.0, 0.0], &opts(2, -1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x[1], -0.5, epsilon = 1e-5);
    }
}
