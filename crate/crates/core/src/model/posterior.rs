//! Gaussian approximation `Ψ | y ≈ N(Ψ̂, H⁻¹)` with `φ` fixed at `φ̂`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::reparam::reparameterize_into;
use super::FittedModel;
use crate::error::{BmdError, Result};

/// Draws `Ψ̂ + v` with `Lᵀ v = z`, `z ~ N(0, I)`, so that `Cov(v) = H⁻¹`.
#[derive(Debug, Clone)]
pub struct PosteriorSampler<'a> {
    center: &'a [f64],
    chol: &'a DMatrix<f64>,
    beta: std::ops::Range<usize>,
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(model: &'a FittedModel, center: &'a [f64]) -> Self {
        Self::from_parts(center, &model.chol, model.layout().beta())
    }

    pub fn from_parts(center: &'a [f64], chol: &'a DMatrix<f64>, beta: std::ops::Range<usize>) -> Self {
        assert_eq!(center.len(), chol.nrows());
        Self { center, chol, beta }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Writes one draw of `Ψ` into `psi` (resized to `D`).
    pub fn sample_psi<R: Rng + ?Sized>(&self, rng: &mut R, psi: &mut Vec<f64>) {
        let d = self.dim();
        psi.clear();
        psi.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // Back substitution on the upper-triangular Lᵀ.
        for i in (0..d).rev() {
            let mut acc = psi[i];
            for k in i + 1..d {
                acc -= self.chol[(k, i)] * psi[k];
            }
            psi[i] = acc / self.chol[(i, i)];
        }
        for (v, c) in psi.iter_mut().zip(self.center) {
            *v += c;
        }
    }

    /// One draw of `Ψ`, returning the implied constrained exposure weights.
    pub fn sample_beta_c<R: Rng + ?Sized>(&self, rng: &mut R, psi: &mut Vec<f64>, beta_c: &mut Vec<f64>) {
        self.sample_psi(rng, psi);
        reparameterize_into(&psi[self.beta.clone()], beta_c);
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub psi: Vec<Vec<f64>>,
    pub beta_c: Vec<Vec<f64>>,
    /// Held at `φ̂` for every draw.
    pub phi: Vec<f64>,
}

/// `m` sequential draws from the approximate posterior.
pub fn posterior_sample<R: Rng + ?Sized>(model: &FittedModel, m: usize, rng: &mut R) -> Result<PosteriorDraws> {
    if m == 0 {
        return Err(BmdError::InvalidArgument("need at least one posterior draw".into()));
    }
    let center = model.params.psi();
    let sampler = PosteriorSampler::new(model, &center);
    let mut psi = Vec::with_capacity(m);
    let mut beta_c = Vec::with_capacity(m);
    for _ in 0..m {
        let mut p = Vec::new();
        let mut b = Vec::new();
        sampler.sample_beta_c(rng, &mut p, &mut b);
        psi.push(p);
        beta_c.push(b);
    }
    Ok(PosteriorDraws { psi, beta_c, phi: model.params.phi() })
}
