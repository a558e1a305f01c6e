use nalgebra::DMatrix;

use crate::error::{BmdError, Result};
use crate::splines::{eval_basis, penalty_matrix, KnotPlacement, KnotVector, PenaltyMatrix};

use super::DoseResponseData;

/// Cubic order used by every smooth term.
pub const SPLINE_ORDER: usize = 4;

/// Index bookkeeping for `Ψ = (α, β, γ_1, ..., γ_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub basis_count: usize,
    pub covariates: usize,
}

impl ParamLayout {
    /// `D = 1 + L (1 + m)`.
    pub fn dim(&self) -> usize {
        1 + self.basis_count * (1 + self.covariates)
    }

    pub fn beta(&self) -> std::ops::Range<usize> {
        1..1 + self.basis_count
    }

    pub fn gamma(&self, j: usize) -> std::ops::Range<usize> {
        let start = 1 + self.basis_count * (1 + j);
        start..start + self.basis_count
    }

    pub fn gamma_all(&self) -> std::ops::Range<usize> {
        1 + self.basis_count..self.dim()
    }

    /// `s = m + 2`.
    pub fn phi_dim(&self) -> usize {
        self.covariates + 2
    }
}

/// Basis matrices, penalties and the fixed linear design used by the
/// objective.
///
/// The exposure term enters as `B c(β) = C u(β)` with `C` the right-to-left
/// cumulative column sums of `B` and `u = (β_1, -e^{β_2}, ..., -e^{β_L})`, so
/// the full linear predictor is `G θ` with `G = [1 | C | Z]` constant.
#[derive(Debug, Clone)]
pub struct Design {
    pub layout: ParamLayout,
    pub exposure_knots: KnotVector,
    pub covariate_knots: Vec<KnotVector>,
    /// `n × L`, `B_il = b_l(x_i)`.
    pub b: DMatrix<f64>,
    /// `n × mL`, blocks `Z_j` side by side.
    pub z: DMatrix<f64>,
    /// `S_1` (exposure) followed by `S_2..S_{m+1}`.
    pub penalties: Vec<PenaltyMatrix>,
    pub(crate) g: DMatrix<f64>,
    pub(crate) gtg: DMatrix<f64>,
    pub(crate) penalty_ranks: Vec<usize>,
    pub(crate) conditioner: Conditioner,
}

/// Change of basis `Ψ = T ξ` that isolates the weakly identified directions.
///
/// In every smooth block the first unit vector is replaced by the block
/// constant traded against `α` (invisible to the fit and to the penalty) and
/// the second by the linear ramp through the Greville abscissae (in the null
/// space of the penalty). Forming `TᵀHT` from `G T` and `R T` keeps those
/// directions accurate to their own scale rather than to `ε ‖H‖`.
#[derive(Debug, Clone)]
pub(crate) struct Conditioner {
    pub t: DMatrix<f64>,
    pub log_abs_det: f64,
    /// `(R_k T)ᵀ(R_k T)` for each penalty.
    pub penalties: Vec<DMatrix<f64>>,
    /// `Tᵀ E T` with `E` the identity on spline coordinates.
    pub ridge: DMatrix<f64>,
}

fn conditioner(layout: ParamLayout, knots: &[&KnotVector], penalties: &[PenaltyMatrix]) -> Conditioner {
    let dim = layout.dim();
    let mut t = DMatrix::<f64>::identity(dim, dim);
    let blocks = std::iter::once(layout.beta()).chain((0..layout.covariates).map(|j| layout.gamma(j)));
    let blocks: Vec<_> = blocks.collect();
    for (k, range) in blocks.iter().enumerate() {
        let (c0, c1) = (range.start, range.start + 1);
        // β_c shifts with β_1, γ_j with every weight.
        let sign = if k == 0 { 1.0 } else { -1.0 };
        t.column_mut(c0).fill(0.0);
        t[(0, c0)] = -sign;
        for i in range.clone() {
            t[(i, c0)] = sign;
        }
        if range.len() > 1 {
            let g = knots[k].greville();
            t.column_mut(c1).fill(0.0);
            for (l, i) in range.clone().enumerate() {
                t[(i, c1)] = g[l] - g[0];
            }
        }
    }
    let log_abs_det = t.clone().lu().determinant().abs().ln();
    let penalties = blocks
        .iter()
        .zip(penalties)
        .map(|(range, s)| {
            let p = s.root() * t.rows(range.start, range.len());
            p.tr_mul(&p)
        })
        .collect();
    let e = t.rows(1, dim - 1);
    let ridge = e.tr_mul(&e);
    Conditioner { t, log_abs_det, penalties, ridge }
}

/// Builds the design for `basis_count` cubic B-splines per smooth. The
/// exposure basis spans `exposure_range` when given (it must enclose the
/// observed exposures), otherwise the observed range. Covariate bases span
/// their observed ranges.
pub fn build_design(
    data: &DoseResponseData,
    basis_count: usize,
    exposure_range: Option<(f64, f64)>,
    placement: KnotPlacement,
) -> Result<Design> {
    let n = data.len();
    let m = data.covariate_count();
    let layout = ParamLayout { basis_count, covariates: m };

    let knots_for = |points: &[f64], range: Option<(f64, f64)>| -> Result<KnotVector> {
        let (lo, hi) = match range {
            Some(r) => r,
            None => points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        };
        placement.build(points, basis_count, SPLINE_ORDER, lo, hi)
    };
    let exposure_knots = knots_for(&data.x, exposure_range)?;
    let covariate_knots = data
        .z
        .iter()
        .map(|col| knots_for(col, None))
        .collect::<Result<Vec<_>>>()?;

    let b = basis_rows(&data.x, &exposure_knots)?;
    let mut z = DMatrix::zeros(n, m * basis_count);
    for (j, (col, kv)) in data.z.iter().zip(&covariate_knots).enumerate() {
        let block = basis_rows(col, kv)?;
        z.columns_mut(j * basis_count, basis_count).copy_from(&block);
    }

    let mut penalties = vec![penalty_matrix(&exposure_knots)?];
    for kv in &covariate_knots {
        penalties.push(penalty_matrix(kv)?);
    }
    let penalty_ranks = penalties.iter().map(|s| s.rank(1e-10)).collect();

    let dim = layout.dim();
    let mut g = DMatrix::zeros(n, dim);
    g.column_mut(0).fill(1.0);
    for i in 0..n {
        let mut acc = 0.0;
        for l in (0..basis_count).rev() {
            acc += b[(i, l)];
            g[(i, 1 + l)] = acc;
        }
    }
    if m > 0 {
        g.columns_mut(1 + basis_count, m * basis_count).copy_from(&z);
    }
    let gtg = g.tr_mul(&g);
    let all_knots: Vec<&KnotVector> = std::iter::once(&exposure_knots).chain(&covariate_knots).collect();
    let conditioner = conditioner(layout, &all_knots, &penalties);

    Ok(Design {
        layout,
        exposure_knots,
        covariate_knots,
        b,
        z,
        penalties,
        g,
        gtg,
        penalty_ranks,
        conditioner,
    })
}

fn basis_rows(points: &[f64], kv: &KnotVector) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(points.len(), kv.basis_count());
    for (i, &x) in points.iter().enumerate() {
        let row = eval_basis(x, kv)?;
        for (l, v) in row.into_iter().enumerate() {
            out[(i, l)] = v;
        }
    }
    Ok(out)
}

impl Design {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Ranks of `S_1, ..., S_{m+1}` (numerical, relative tolerance 1e-10).
    pub fn penalty_ranks(&self) -> &[usize] {
        &self.penalty_ranks
    }

    pub(crate) fn check_dims(&self, data: &DoseResponseData) -> Result<()> {
        if data.len() != self.n() || data.covariate_count() != self.layout.covariates {
            return Err(BmdError::InvalidArgument(
                "design was built for different data".into(),
            ));
        }
        Ok(())
    }
}
