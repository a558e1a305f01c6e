//! Benchmark dose: the estimating equation
//! `U_n(x) = (f̂(x0) − f̂(x))/σ̂ − c(p0, p+)` and its root by reflective Newton.

use serde::{Deserialize, Serialize};

use crate::error::{BmdError, Result};
use crate::model::FittedModel;
use crate::splines::{de_boor, derivative_weights, KnotVector};
use crate::stats::normal_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdConfig {
    pub x0: f64,
    /// Upper end of the search interval; `None` means the largest observed
    /// exposure.
    pub xmax: Option<f64>,
    pub p0: f64,
    pub p_plus: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BmdConfig {
    fn default() -> Self {
        Self { x0: 0.0, xmax: None, p0: 0.025, p_plus: 0.01, tol: 1e-8, max_iter: 50 }
    }
}

impl BmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(BmdError::InvalidArgument(format!("p0 must lie in (0, 1) (got {})", self.p0)));
        }
        if !(self.p_plus > 0.0 && self.p_plus < 1.0 - self.p0) {
            return Err(BmdError::InvalidArgument(format!(
                "p_plus must lie in (0, 1 - p0) (got {})",
                self.p_plus
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(BmdError::InvalidArgument("tol and max_iter must be positive".into()));
        }
        Ok(())
    }

    /// `(x0, xmax)` for `model`, checked to be an ordered pair inside the
    /// exposure basis.
    pub fn interval(&self, model: &FittedModel) -> Result<(f64, f64)> {
        let xmax = self.xmax.unwrap_or(model.data_range.1);
        let kv = model.exposure_knots();
        if !(self.x0 < xmax) {
            return Err(BmdError::InvalidArgument(format!("need x0 < xmax (got {} and {xmax})", self.x0)));
        }
        for x in [self.x0, xmax] {
            if !kv.contains(x) {
                return Err(BmdError::OutOfSupport { x, lo: kv.lower(), hi: kv.upper() });
            }
        }
        Ok((self.x0, xmax))
    }
}

/// `c(p0, p+) = Φ⁻¹(p0 + p+) − Φ⁻¹(p0)`.
pub fn c_const(p0: f64, p_plus: f64) -> Result<f64> {
    if !(p0 > 0.0 && p0 < 1.0 && p_plus > 0.0 && p0 + p_plus < 1.0) {
        return Err(BmdError::InvalidArgument(format!(
            "need 0 < p0 < 1 and 0 < p_plus < 1 - p0 (got p0 = {p0}, p_plus = {p_plus})"
        )));
    }
    Ok(normal_quantile(p0 + p_plus)? - normal_quantile(p0)?)
}

/// `min(w, 2(u−l) − w) + l` with `w = |x − l| mod 2(u − l)`: folds `x` back
/// into `[l, u]`.
pub fn reflect(x: f64, l: f64, u: f64) -> f64 {
    debug_assert!(l < u);
    if (l..=u).contains(&x) {
        return x;
    }
    let period = 2.0 * (u - l);
    let w = (x - l).abs().rem_euclid(period);
    (w.min(period - w) + l).clamp(l, u)
}

/// A monotone curve `f` with its derivative and the noise scale, which is
/// all the estimating equation needs.
#[derive(Debug, Clone)]
pub struct DoseCurve {
    knots: KnotVector,
    dknots: KnotVector,
    weights: Vec<f64>,
    dweights: Vec<f64>,
    sigma: f64,
}

impl DoseCurve {
    pub fn new(knots: KnotVector, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(BmdError::InvalidArgument(format!("sigma must be positive (got {sigma})")));
        }
        let dweights = derivative_weights(&weights, &knots)?;
        let dknots = knots.derivative_knots()?;
        Ok(Self { knots, dknots, weights, dweights, sigma })
    }

    pub fn from_model(model: &FittedModel) -> Result<Self> {
        Self::new(model.exposure_knots().clone(), model.beta_c.clone(), model.sigma_hat)
    }

    /// Replaces the weights, keeping knots and `σ`.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(BmdError::InvalidArgument("weight vector has the wrong length".into()));
        }
        self.weights.copy_from_slice(weights);
        self.dweights = derivative_weights(&self.weights, &self.knots)?;
        Ok(())
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        de_boor(x, &self.weights, &self.knots)
    }

    pub fn f_prime(&self, x: f64) -> Result<f64> {
        de_boor(x, &self.dweights, &self.dknots)
    }
}

/// `U_n` for one curve, with `f̂(x0)` cached.
#[derive(Debug, Clone, Copy)]
pub struct Estimating<'a> {
    curve: &'a DoseCurve,
    f0: f64,
    c: f64,
}

impl<'a> Estimating<'a> {
    pub fn new(curve: &'a DoseCurve, x0: f64, c: f64) -> Result<Self> {
        Ok(Self { curve, f0: curve.f(x0)?, c })
    }

    pub fn u(&self, x: f64) -> Result<f64> {
        Ok((self.f0 - self.curve.f(x)?) / self.curve.sigma - self.c)
    }

    /// `U'_n(x) = −f̂'(x)/σ̂`.
    pub fn u_prime(&self, x: f64) -> Result<f64> {
        Ok(-self.curve.f_prime(x)? / self.curve.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmdEstimate {
    pub xb_hat: f64,
    /// Newton iterations, plus bisection steps when the fallback ran.
    pub iterations: usize,
    pub u_prime_at_root: f64,
    /// `U_n(xmax)`; positive whenever an estimate exists.
    pub existence_margin: f64,
    pub bisection: bool,
}

/// `U_n(x)` for the fitted model.
pub fn u_n(x: f64, model: &FittedModel, cfg: &BmdConfig) -> Result<f64> {
    let curve = DoseCurve::from_model(model)?;
    let c = c_const(cfg.p0, cfg.p_plus)?;
    Estimating::new(&curve, cfg.x0, c)?.u(x)
}

/// `U_n(xmax)`: a positive value guarantees a root in `(x0, xmax)`.
pub fn existence_check(model: &FittedModel, cfg: &BmdConfig) -> Result<f64> {
    let (_, xmax) = cfg.interval(model)?;
    u_n(xmax, model, cfg)
}

pub fn estimate_bmd(model: &FittedModel, cfg: &BmdConfig) -> Result<BmdEstimate> {
    cfg.validate()?;
    let (x0, xmax) = cfg.interval(model)?;
    let curve = DoseCurve::from_model(model)?;
    let c = c_const(cfg.p0, cfg.p_plus)?;
    solve_bmd(&curve, x0, xmax, c, cfg.tol, cfg.max_iter)
}

/// Reflective Newton from the midpoint of `[x0, xmax]`, falling back to
/// bisection after `max_iter` steps.
pub fn solve_bmd(curve: &DoseCurve, x0: f64, xmax: f64, c: f64, tol: f64, max_iter: usize) -> Result<BmdEstimate> {
    let eq = Estimating::new(curve, x0, c)?;
    let margin = eq.u(xmax)?;
    if !(margin > 0.0) {
        return Err(BmdError::BmdNotEstimable { margin });
    }
    let (xb, iterations, bisection) = find_root(|x| eq.u(x), |x| eq.u_prime(x), x0, xmax, tol, max_iter)?;
    Ok(BmdEstimate {
        xb_hat: xb,
        iterations,
        u_prime_at_root: eq.u_prime(xb)?,
        existence_margin: margin,
        bisection,
    })
}

/// Root of an increasing-at-the-root `g` with `g(lo) < 0 < g(hi)`. Newton
/// iterates are folded into `[lo, hi]` by [`reflect`]; after `max_iter`
/// steps the sign-tracked bracket is bisected instead. Returns the root, the
/// step count and whether bisection was needed.
pub(crate) fn find_root<G, D>(
    g: G,
    dg: D,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize, bool)>
where
    G: Fn(f64) -> Result<f64>,
    D: Fn(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (lo + hi);
    for it in 0..max_iter {
        let v = g(x)?;
        if v.abs() <= tol {
            return Ok((x, it, false));
        }
        if v < 0.0 {
            a = a.max(x);
        } else {
            b = b.min(x);
        }
        let next = x - v / dg(x)?;
        x = if next.is_finite() { reflect(next, lo, hi) } else { 0.5 * (a + b) };
    }
    // Bisection on the bracket collected so far.
    let mut steps = max_iter;
    let mut x = 0.5 * (a + b);
    loop {
        let v = g(x)?;
        steps += 1;
        if v.abs() <= tol || b - a <= f64::EPSILON * a.abs().max(b.abs()) || b <= a {
            return Ok((x, steps, true));
        }
        if v < 0.0 {
            a = x;
        } else {
            b = x;
        }
        x = 0.5 * (a + b);
    }
}
