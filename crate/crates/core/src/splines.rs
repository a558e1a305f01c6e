//! B-spline bases on clamped knot vectors.
//!
//! Everything here is a pure function of immutable inputs. Basis values come
//! from the Cox–de Boor recursion; whole-curve evaluation uses de Boor's
//! triangular scheme, which only touches the `order` coefficients that are
//! active on the span containing `x`.
//!
//! Conventions: knots are 0-indexed, a spline of order `p` (degree `p - 1`)
//! with `L` basis functions has `L + p` knots, and its domain is
//! `[t[p-1], t[L]]`. The final knot closes the last non-empty span so the
//! right boundary evaluates without error.

use nalgebra::{DMatrix, DVector};

use crate::error::{BmdError, Result};

/// Nondecreasing knot sequence together with the spline order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(BmdError::InvalidArgument("spline order must be >= 1".into()));
        }
        if knots.len() < 2 * order {
            return Err(BmdError::InvalidArgument(format!(
                "{} knots cannot carry an order-{order} basis (need at least {})",
                knots.len(),
                2 * order
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(BmdError::InvalidArgument("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(BmdError::InvalidArgument("knots must be nondecreasing".into()));
        }
        let kv = Self { knots, order };
        if kv.upper() <= kv.lower() {
            return Err(BmdError::DegenerateKnots("zero-width spline domain".into()));
        }
        Ok(kv)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions `L`.
    pub fn basis_count(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn lower(&self) -> f64 {
        self.knots[self.order - 1]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.basis_count()]
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower() && x <= self.upper()
    }

    /// Knot vector of the order `p - 1` basis in which the derivative lives
    /// (the first and last knots dropped).
    pub fn derivative_knots(&self) -> Result<KnotVector> {
        if self.order < 2 {
            return Err(BmdError::NoDerivative);
        }
        Ok(KnotVector {
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            order: self.order - 1,
        })
    }

    /// Index `k` of the span `[t[k], t[k+1])` holding `x`, restricted to
    /// `p-1 <= k <= L-1`. Binary search.
    pub fn find_span(&self, x: f64) -> Result<usize> {
        if !(x >= self.lower() && x <= self.upper()) {
            return Err(BmdError::OutOfSupport {
                x,
                lo: self.lower(),
                hi: self.upper(),
            });
        }
        Ok(find_span_unchecked(&self.knots, self.order, x))
    }

    /// Greville abscissae: the coefficient vector `g` reproduces `f(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        let d = self.order - 1;
        (0..self.basis_count())
            .map(|l| {
                if d == 0 {
                    0.5 * (self.knots[l] + self.knots[l + 1])
                } else {
                    self.knots[l + 1..=l + d].iter().sum::<f64>() / d as f64
                }
            })
            .collect()
    }
}

fn find_span_unchecked(knots: &[f64], order: usize, x: f64) -> usize {
    let n_basis = knots.len() - order;
    let mut lo = order - 1;
    let mut hi = n_basis - 1;
    if x >= knots[hi] {
        // Last span; walk back over any zero-width tail spans.
        while hi > lo && knots[hi] == knots[hi + 1] {
            hi -= 1;
        }
        return hi;
    }
    // Invariant: knots[lo] <= x < knots[hi].
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x >= knots[mid] {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Spline weights paired with their knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline {
    knots: KnotVector,
    weights: Vec<f64>,
}

impl Spline {
    pub fn new(knots: KnotVector, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != knots.basis_count() {
            return Err(BmdError::InvalidArgument(format!(
                "{} weights supplied for {} basis functions",
                weights.len(),
                knots.basis_count()
            )));
        }
        Ok(Self { knots, weights })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        de_boor(x, &self.weights, &self.knots)
    }

    pub fn derivative(&self) -> Result<Spline> {
        let (weights, knots) = derivative_coeffs(&self.weights, &self.knots)?;
        Ok(Spline { knots, weights })
    }
}

/// Clamped knots for `basis_count` order-`order` basis functions on the range
/// of `points`. Interior knots sit at evenly spaced quantiles of the distinct
/// sample values; the boundary knots are repeated `order` times.
pub fn make_knots(points: &[f64], basis_count: usize, order: usize) -> Result<KnotVector> {
    let (lo, hi) = finite_range(points)?;
    make_knots_on(points, basis_count, order, lo, hi)
}

/// As [`make_knots`], with the boundary knots placed at `lo` and `hi`
/// (which must enclose the points).
pub fn make_knots_on(
    points: &[f64],
    basis_count: usize,
    order: usize,
    lo: f64,
    hi: f64,
) -> Result<KnotVector> {
    if order == 0 || basis_count < order {
        return Err(BmdError::InvalidArgument(format!(
            "need basis_count >= order >= 1 (got L = {basis_count}, p = {order})"
        )));
    }
    let (pmin, pmax) = finite_range(points)?;
    if !(lo <= pmin && hi >= pmax) || !lo.is_finite() || !hi.is_finite() {
        return Err(BmdError::InvalidArgument(format!(
            "boundary [{lo}, {hi}] does not enclose the points [{pmin}, {pmax}]"
        )));
    }
    if hi <= lo {
        return Err(BmdError::DegenerateKnots("all sample points coincide".into()));
    }

    let interior = basis_count - order;
    let mut distinct: Vec<f64> = points.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < interior + 2 {
        return Err(BmdError::DegenerateKnots(format!(
            "{} distinct sample points cannot place {interior} interior knots",
            distinct.len()
        )));
    }

    let mut knots = Vec::with_capacity(basis_count + order);
    knots.extend(std::iter::repeat_n(lo, order));
    for j in 1..=interior {
        knots.push(quantile_sorted(&distinct, j as f64 / (interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(hi, order));
    KnotVector::new(knots, order)
}

/// Evenly spaced knots on `[lo, hi]` with the `order - 1` outer knots on each
/// side continued at the same spacing, so every basis function is a shifted
/// copy of one shape. The domain is still `[lo, hi]`.
pub fn make_uniform_knots(basis_count: usize, order: usize, lo: f64, hi: f64) -> Result<KnotVector> {
    if order == 0 || basis_count < order {
        return Err(BmdError::InvalidArgument(format!(
            "need basis_count >= order >= 1 (got L = {basis_count}, p = {order})"
        )));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(BmdError::InvalidArgument("boundary must be finite".into()));
    }
    if hi <= lo {
        return Err(BmdError::DegenerateKnots("empty exposure range".into()));
    }
    let spans = basis_count - order + 1;
    let h = (hi - lo) / spans as f64;
    let first = -(order as isize - 1);
    let last = (spans + order - 1) as isize;
    let knots = (first..=last)
        .map(|i| match i {
            0 => lo,
            i if i == spans as isize => hi,
            i => lo + i as f64 * h,
        })
        .collect();
    KnotVector::new(knots, order)
}

/// How the knots of a spline basis are laid out over the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// Interior knots at quantiles of the distinct points, boundary knots
    /// repeated.
    Quantile,
    /// See [`make_uniform_knots`].
    #[default]
    Uniform,
}

impl KnotPlacement {
    /// Knots for `points` over `[lo, hi]`.
    pub fn build(self, points: &[f64], basis_count: usize, order: usize, lo: f64, hi: f64) -> Result<KnotVector> {
        match self {
            KnotPlacement::Quantile => make_knots_on(points, basis_count, order, lo, hi),
            KnotPlacement::Uniform => {
                let (pmin, pmax) = finite_range(points)?;
                if !(lo <= pmin && hi >= pmax) {
                    return Err(BmdError::InvalidArgument(format!(
                        "boundary [{lo}, {hi}] does not enclose the points [{pmin}, {pmax}]"
                    )));
                }
                make_uniform_knots(basis_count, order, lo, hi)
            }
        }
    }
}

fn finite_range(points: &[f64]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(BmdError::InvalidArgument("no sample points".into()));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(BmdError::InvalidArgument("sample points must be finite".into()));
    }
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Nonzero basis values at `x`. Writes `b_{k-p+1..=k}` into `out[..p]` and
/// returns the span `k`; callers map `out[j]` to basis index `k - p + 1 + j`.
pub fn basis_local(x: f64, kv: &KnotVector, out: &mut [f64]) -> Result<usize> {
    let k = kv.find_span(x)?;
    local_values(&kv.knots, kv.order, k, x, out);
    Ok(k)
}

// Triangular Cox–de Boor on a single span (NURBS book A2.2).
fn local_values(knots: &[f64], order: usize, k: usize, x: f64, out: &mut [f64]) {
    debug_assert!(out.len() >= order);
    const MAX_ORDER: usize = 16;
    assert!(order <= MAX_ORDER, "spline order above {MAX_ORDER}");
    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    out[0] = 1.0;
    for j in 1..order {
        left[j] = x - knots[k + 1 - j];
        right[j] = knots[k + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// All `L` basis values `b_{1,p}(x), ..., b_{L,p}(x)`.
pub fn eval_basis(x: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    let mut local = vec![0.0; kv.order];
    let k = basis_local(x, kv, &mut local)?;
    let mut full = vec![0.0; kv.basis_count()];
    let first = k + 1 - kv.order;
    full[first..first + kv.order].copy_from_slice(&local);
    Ok(full)
}

/// de Boor's algorithm: `f(x) = sum_l b_{l,p}(x) w_l` from the `p` active
/// weights only.
pub fn de_boor(x: f64, weights: &[f64], kv: &KnotVector) -> Result<f64> {
    if weights.len() != kv.basis_count() {
        return Err(BmdError::InvalidArgument(format!(
            "{} weights for {} basis functions",
            weights.len(),
            kv.basis_count()
        )));
    }
    let k = kv.find_span(x)?;
    Ok(de_boor_span(x, weights, &kv.knots, kv.order, k))
}

pub(crate) fn de_boor_span(x: f64, weights: &[f64], knots: &[f64], order: usize, k: usize) -> f64 {
    const MAX_ORDER: usize = 16;
    let d = order - 1;
    let mut c = [0.0; MAX_ORDER];
    c[..order].copy_from_slice(&weights[k - d..=k]);
    for r in 1..=d {
        for j in (r..=d).rev() {
            let lo = knots[j + k - d];
            let hi = knots[j + 1 + k - r];
            let a = (x - lo) / (hi - lo);
            c[j] = (1.0 - a) * c[j - 1] + a * c[j];
        }
    }
    c[d]
}

/// Weights of `f'` in the order `p - 1` basis:
/// `w'_l = (p-1)(w_{l+1} - w_l)/(t_{l+p} - t_{l+1})`, zero on zero-width spans.
pub fn derivative_weights(weights: &[f64], kv: &KnotVector) -> Result<Vec<f64>> {
    let p = kv.order;
    if p < 2 {
        return Err(BmdError::NoDerivative);
    }
    if weights.len() != kv.basis_count() {
        return Err(BmdError::InvalidArgument(format!(
            "{} weights for {} basis functions",
            weights.len(),
            kv.basis_count()
        )));
    }
    let t = &kv.knots;
    let scale = (p - 1) as f64;
    Ok(weights
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let span = t[l + p] - t[l + 1];
            if span > 0.0 {
                scale * (w[1] - w[0]) / span
            } else {
                0.0
            }
        })
        .collect())
}

/// Derivative spline: weights of length `L - 1` on the order `p - 1` knots.
pub fn derivative_coeffs(weights: &[f64], kv: &KnotVector) -> Result<(Vec<f64>, KnotVector)> {
    let dw = derivative_weights(weights, kv)?;
    Ok((dw, kv.derivative_knots()?))
}

// Basis of order `order` on `knots` differentiated `nder` times, as a dense
// vector of length `knots.len() - order`.
fn basis_derivative_dense(x: f64, knots: &[f64], order: usize, k: usize, nder: usize) -> Vec<f64> {
    let n_basis = knots.len() - order;
    if nder == 0 {
        let mut full = vec![0.0; n_basis];
        let mut local = vec![0.0; order];
        local_values(knots, order, k, x, &mut local);
        let first = k + 1 - order;
        full[first..first + order].copy_from_slice(&local);
        return full;
    }
    if order == 1 {
        return vec![0.0; n_basis];
    }
    // Same knots, one order lower: L + 1 functions.
    let lower = basis_derivative_dense(x, knots, order - 1, k, nder - 1);
    let scale = (order - 1) as f64;
    (0..n_basis)
        .map(|l| {
            let d1 = knots[l + order - 1] - knots[l];
            let d2 = knots[l + order] - knots[l + 1];
            let a = if d1 > 0.0 { lower[l] / d1 } else { 0.0 };
            let b = if d2 > 0.0 { lower[l + 1] / d2 } else { 0.0 };
            scale * (a - b)
        })
        .collect()
}

/// `b'(x) = (b'_{1,p}(x), ..., b'_{L,p}(x))`, so that `b'(x) . w = f'(x)`.
pub fn basis_derivative(x: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    let k = kv.find_span(x)?;
    Ok(basis_derivative_dense(x, &kv.knots, kv.order, k, 1))
}

/// Second derivatives of every basis function at `x`.
pub fn basis_second_derivative(x: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    let k = kv.find_span(x)?;
    Ok(basis_derivative_dense(x, &kv.knots, kv.order, k, 2))
}

/// Integrated squared second-derivative penalty `S` of a cubic basis.
///
/// Kept alongside a square root `R` with `S = RᵀR` (one row per quadrature
/// node), so `wᵀSw = ‖Rw‖²` stays accurate when `w` is close to the null space
/// and the smoothing weight is large.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `R` with `S = RᵀR`.
    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `w' S w`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        (&self.root * DVector::from_column_slice(w)).norm_squared()
    }

    /// `S w`, computed as `Rᵀ(Rw)`.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        self.root.tr_mul(&(&self.root * w))
    }

    /// Number of eigenvalues above `rel_tol * max eigenvalue`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let eig = self.matrix.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        eig.eigenvalues.iter().filter(|&&e| e > rel_tol * top).count()
    }
}

/// `S_ij = ∫ b''_i(u) b''_j(u) du` over the spline domain. Second derivatives
/// of a cubic are linear on each span, so two-point Gauss–Legendre per span is
/// exact.
pub fn penalty_matrix(kv: &KnotVector) -> Result<PenaltyMatrix> {
    if kv.order != 4 {
        return Err(BmdError::UnsupportedOrder(kv.order));
    }
    let n = kv.basis_count();
    let t = &kv.knots;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let g = 0.5 / 3f64.sqrt();
    for k in (kv.order - 1)..n {
        let (a, b) = (t[k], t[k + 1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for node in [mid - 2.0 * g * half, mid + 2.0 * g * half] {
            let d2 = basis_derivative_dense(node, t, kv.order, k, 2);
            rows.push(d2.iter().map(|v| v * half.sqrt()).collect());
        }
    }
    let root = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    let s = root.tr_mul(&root);
    // Symmetric by construction; enforce it bitwise.
    let s = (&s + s.transpose()) * 0.5;
    Ok(PenaltyMatrix { matrix: s, root })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cubic_knots() -> KnotVector {
        KnotVector::new(
            vec![0.0, 0.0, 0.0, 0.0, 0.2, 0.35, 0.6, 0.8, 1.0, 1.0, 1.0, 1.0],
            4,
        )
        .unwrap()
    }

    #[test]
    fn uniform_knots_extend_past_the_domain() {
        let kv = make_uniform_knots(6, 4, 0.0, 1.0).unwrap();
        let want = [-1.0, -2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0];
        for (k, w) in kv.knots().iter().zip(want) {
            assert_abs_diff_eq!(*k, w, epsilon = 1e-15);
        }
        assert_eq!(kv.basis_count(), 6);
        let row = eval_basis(1.0, &kv).unwrap();
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(matches!(make_uniform_knots(6, 4, 1.0, 1.0), Err(BmdError::DegenerateKnots(_))));
    }

    #[test]
    fn knots_without_interior() {
        let kv = make_knots(&[0.0, 1.0], 4, 4).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn knots_at_thirds_of_uniform_grid() {
        let grid: Vec<f64> = (0..=300).map(|i| i as f64 / 300.0).collect();
        let kv = make_knots(&grid, 6, 4).unwrap();
        assert_eq!(kv.knots().len(), 10);
        assert_abs_diff_eq!(kv.knots()[4], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kv.knots()[5], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_points_are_degenerate() {
        assert!(matches!(
            make_knots(&[0.0, 0.0, 0.0], 5, 4),
            Err(BmdError::DegenerateKnots(_))
        ));
    }

    #[test]
    fn order_two_hand_recursion() {
        let kv = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        let b = eval_basis(0.25, &kv).unwrap();
        assert_abs_diff_eq!(b[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(de_boor(0.25, &[0.0, 1.0], &kv).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn endpoints_interpolate() {
        let kv = cubic_knots();
        let b = eval_basis(0.0, &kv).unwrap();
        assert_eq!(b[0], 1.0);
        assert!(b[1..].iter().all(|&v| v == 0.0));
        let b = eval_basis(1.0, &kv).unwrap();
        assert_abs_diff_eq!(b[kv.basis_count() - 1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_support() {
        let kv = cubic_knots();
        assert!(matches!(eval_basis(1.5, &kv), Err(BmdError::OutOfSupport { .. })));
        assert!(matches!(de_boor(-0.1, &[0.0; 8], &kv), Err(BmdError::OutOfSupport { .. })));
    }

    #[test]
    fn constant_weights_give_constant_curve() {
        let kv = cubic_knots();
        let w = vec![3.0; kv.basis_count()];
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(de_boor(x, &w, &kv).unwrap(), 3.0, epsilon = 1e-14);
        }
        let (dw, _) = derivative_coeffs(&w, &kv).unwrap();
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn increasing_weights_have_positive_derivative_weights() {
        let kv = cubic_knots();
        let w: Vec<f64> = (0..kv.basis_count()).map(|i| (i * i) as f64).collect();
        let (dw, dk) = derivative_coeffs(&w, &kv).unwrap();
        assert_eq!(dw.len(), kv.basis_count() - 1);
        assert_eq!(dk.order(), 3);
        assert!(dw.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_width_spans_contribute_nothing() {
        let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0], 4)
            .unwrap();
        let w: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let dw = derivative_weights(&w, &kv).unwrap();
        assert!(dw.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn order_one_has_no_derivative() {
        let kv = KnotVector::new(vec![0.0, 0.5, 1.0], 1).unwrap();
        assert_eq!(derivative_coeffs(&[1.0, 2.0], &kv), Err(BmdError::NoDerivative));
    }

    #[test]
    fn basis_derivative_sums_to_zero() {
        let kv = cubic_knots();
        for x in [0.05, 0.3, 0.61, 0.95] {
            let d = basis_derivative(x, &kv).unwrap();
            assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn penalty_rejects_non_cubic() {
        let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0], 3).unwrap();
        assert_eq!(penalty_matrix(&kv), Err(BmdError::UnsupportedOrder(3)));
    }

    #[test]
    fn penalty_annihilates_linear_functions() {
        let kv = cubic_knots();
        let s = penalty_matrix(&kv).unwrap();
        let g = kv.greville();
        let lin: Vec<f64> = g.iter().map(|x| 2.0 - 3.0 * x).collect();
        assert_abs_diff_eq!(s.quadratic_form(&lin), 0.0, epsilon = 1e-10);
        assert_eq!(s.rank(1e-10), kv.basis_count() - 2);
    }

    #[test]
    fn greville_reproduces_identity() {
        let kv = cubic_knots();
        let g = kv.greville();
        for x in [0.0, 0.21, 0.5, 0.99] {
            assert_abs_diff_eq!(de_boor(x, &g, &kv).unwrap(), x, epsilon = 1e-14);
        }
    }
}
