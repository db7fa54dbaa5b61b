use nalgebra::{DMatrix, SymmetricEigen};

use super::{gauss_legendre, BasisSystem};
use crate::error::{Error, Result};

/// `G_kl = ∫φ_kφ_l + ρ∫φ'_kφ'_l`, symmetric and positive definite.
#[derive(Debug, Clone)]
pub struct GramH1 {
    pub matrix: DMatrix<f64>,
    pub rho: f64,
    pub lambda_min: f64,
}

/// Per-interval Gauss–Legendre with `⌈(2p+1)/2⌉ + 1` nodes, exact for the
/// piecewise-polynomial integrands.
pub fn gram_h1(basis: &BasisSystem, rho: f64) -> Result<GramH1> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::contract(format!(
            "metric scale rho = {rho} must be non-negative"
        )));
    }
    let (mass, stiff) = gram_parts(basis);
    let mut g = &mass + &stiff * rho;
    let gt = g.transpose();
    g = (&g + &gt) * 0.5;
    let lambda_min = SymmetricEigen::new(g.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(lambda_min > 0.0) {
        return Err(Error::DegenerateBasis { lambda_min });
    }
    Ok(GramH1 {
        matrix: g,
        rho,
        lambda_min,
    })
}

/// `(∫φφᵀ, ∫φ'φ'ᵀ)`.
pub(crate) fn gram_parts(basis: &BasisSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = basis.n_basis();
    let p = basis.degree();
    let n_nodes = (2 * p + 1).div_ceil(2) + 1;
    let (nodes, weights) = gauss_legendre(n_nodes);
    let mut mass = DMatrix::zeros(k, k);
    let mut stiff = DMatrix::zeros(k, k);
    let breaks = basis.breakpoints();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            let v = basis.local_values(t);
            let d = basis.local_derivs(t);
            let wq = wt * half;
            for (r, vr) in v.values.iter().enumerate() {
                for (s, vs) in v.values.iter().enumerate() {
                    mass[(v.first + r, v.first + s)] += wq * vr * vs;
                }
            }
            for (r, dr) in d.values.iter().enumerate() {
                for (s, ds) in d.values.iter().enumerate() {
                    stiff[(d.first + r, d.first + s)] += wq * dr * ds;
                }
            }
        }
    }
    (mass, stiff)
}
