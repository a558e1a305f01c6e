//! Monotone reparameterisation of the exposure weights.
//!
//! `c_1 = b_1`, `c_l = c_{l-1} - exp(b_l)`: the constrained weights are
//! strictly decreasing for any finite `b`, hence so is the fitted curve.

/// Arguments of `exp` are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 700.0;

#[inline]
pub(crate) fn clamped_exp(v: f64) -> f64 {
    v.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Unconstrained `beta` to strictly decreasing constrained weights.
pub fn reparameterize(beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(beta.len());
    reparameterize_into(beta, &mut out);
    out
}

pub(crate) fn reparameterize_into(beta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let Some(&first) = beta.first() else {
        return;
    };
    let mut acc = first;
    out.push(acc);
    for &b in &beta[1..] {
        acc -= clamped_exp(b);
        out.push(acc);
    }
}

/// Inverse of [`reparameterize`] for strictly decreasing weights. Steps that
/// are not strictly positive map to `-EXP_CLAMP`.
pub fn unconstrain(beta_c: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(beta_c.len());
    if let Some(&first) = beta_c.first() {
        out.push(first);
    }
    for w in beta_c.windows(2) {
        let step = w[0] - w[1];
        out.push(if step > 0.0 { step.ln().max(-EXP_CLAMP) } else { -EXP_CLAMP });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeros_step_down_by_one() {
        assert_eq!(reparameterize(&[0.0, 0.0, 0.0]), vec![0.0, -1.0, -2.0]);
    }

    #[test]
    fn single_weight_passes_through() {
        assert_eq!(reparameterize(&[5.0]), vec![5.0]);
        assert!(reparameterize(&[]).is_empty());
    }

    #[test]
    fn hand_recursion() {
        // 1, 1 - 2, 1 - 2 - 3
        let c = reparameterize(&[1.0, 2f64.ln(), 3f64.ln()]);
        assert_relative_eq!(c[0], 1.0);
        assert_relative_eq!(c[1], -1.0, max_relative = 1e-15);
        assert_relative_eq!(c[2], -4.0, max_relative = 1e-15);
    }

    #[test]
    fn huge_arguments_stay_finite() {
        let c = reparameterize(&[0.0, 800.0, -800.0]);
        assert!(c.iter().all(|v| v.is_finite()));
        assert!(c[1] < c[0] && c[2] <= c[1]);
        let c = reparameterize(&[0.0, -800.0, -800.0]);
        assert!(c[1] < c[0] && c[2] < c[1]);
    }

    #[test]
    fn unconstrain_inverts() {
        let b = vec![0.3, -1.0, 0.5, 2.0];
        let back = unconstrain(&reparameterize(&b));
        for (x, y) in b.iter().zip(&back) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }
}
