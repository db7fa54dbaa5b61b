//! Clamped B-spline bases on `[0, T]`.
//!
//! Evaluation follows the triangular Cox–de Boor scheme on the non-zero span.
//! Derivatives use the degree-lowering identity and antiderivatives the
//! identity `∫₀ᵗ N_{k,p} = (τ_{k+p+1} − τ_k)/(p+1) · Σ_{j>k} N_{j,p+1}(t)`,
//! evaluated on the knot vector padded by one extra knot at each end.

mod fit;
mod gram;
mod quadrature;

pub use fit::{fit_coefficients, Fitter};
pub use gram::{gram_h1, GramH1};
pub use quadrature::gauss_legendre;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    degree: usize,
    n_basis: usize,
    horizon: f64,
    knots: Vec<f64>,
    /// `knots` with one more copy of each boundary knot, used for Φ.
    padded: Vec<f64>,
}

/// `K` clamped B-splines of the given degree with uniformly spaced interior knots.
pub fn build_basis(n_basis: usize, degree: usize, horizon: f64) -> Result<BasisSystem> {
    if n_basis < degree + 1 {
        return Err(Error::contract(format!(
            "K = {n_basis} basis functions is fewer than degree + 1 = {}",
            degree + 1
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::contract("basis domain end must be positive"));
    }
    let n_interior = n_basis - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    for i in 1..=n_interior {
        knots.push(horizon * i as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(horizon, degree + 1));
    let mut padded = Vec::with_capacity(knots.len() + 2);
    padded.push(0.0);
    padded.extend_from_slice(&knots);
    padded.push(horizon);
    Ok(BasisSystem {
        degree,
        n_basis,
        horizon,
        knots,
        padded,
    })
}

/// Non-zero basis values at one point: entries for indices `first..first + values.len()`.
#[derive(Debug, Clone)]
pub struct LocalValues {
    pub first: usize,
    pub values: Vec<f64>,
}

impl BasisSystem {
    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knot values, `0` and `T` included.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.knots.clone();
        b.dedup();
        b
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::contract(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.check_domain(t)?;
        Ok(self.densify(&self.local_values(t)))
    }

    pub fn eval_deriv(&self, t: f64) -> Result<Vec<f64>> {
        self.check_domain(t)?;
        Ok(self.densify(&self.local_derivs(t)))
    }

    /// `Φ_k(t) = ∫₀ᵗ φ_k`.
    pub fn eval_integral(&self, t: f64) -> Result<Vec<f64>> {
        self.check_domain(t)?;
        Ok(self.integral_unchecked(t))
    }

    fn densify(&self, local: &LocalValues) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis];
        for (k, v) in local.values.iter().enumerate() {
            out[local.first + k] = *v;
        }
        out
    }

    pub(crate) fn local_values(&self, t: f64) -> LocalValues {
        let span = find_span(&self.knots, self.degree, self.n_basis, t);
        LocalValues {
            first: span - self.degree,
            values: basis_funs(&self.knots, span, self.degree, t),
        }
    }

    pub(crate) fn local_derivs(&self, t: f64) -> LocalValues {
        let p = self.degree;
        let span = find_span(&self.knots, p, self.n_basis, t);
        let first = span - p;
        if p == 0 {
            return LocalValues {
                first,
                values: vec![0.0],
            };
        }
        // lower[r] = N_{span-p+1+r, p-1}(t), r = 0..p
        let lower = basis_funs(&self.knots, span, p - 1, t);
        let tau = &self.knots;
        let mut values = vec![0.0; p + 1];
        for (r, v) in values.iter_mut().enumerate() {
            let k = first + r;
            let left = if r >= 1 { lower[r - 1] } else { 0.0 };
            let right = if r < p { lower[r] } else { 0.0 };
            let d_left = tau[k + p] - tau[k];
            let d_right = tau[k + p + 1] - tau[k + 1];
            let mut acc = 0.0;
            if d_left > 0.0 {
                acc += left / d_left;
            }
            if d_right > 0.0 {
                acc -= right / d_right;
            }
            *v = p as f64 * acc;
        }
        LocalValues { first, values }
    }

    fn integral_unchecked(&self, t: f64) -> Vec<f64> {
        let p = self.degree;
        let q = p + 1;
        let ext = &self.padded;
        // degree-q splines on the padded knots: K + 1 of them, M_j ↔ ext[j..j+q+2]
        let n_ext = self.n_basis + 1;
        let span = find_span(ext, q, n_ext, t);
        let local = basis_funs(ext, span, q, t);
        let first = span - q;
        // tail[j] = Σ_{i ≥ j} M_i(t)
        let mut tail = vec![0.0; n_ext + 1];
        for j in (0..n_ext).rev() {
            let m = if j >= first && j <= span {
                local[j - first]
            } else {
                0.0
            };
            tail[j] = tail[j + 1] + m;
        }
        // left of the non-zero block the tail is the full partition of unity
        tail[..=first].fill(1.0);
        let tau = &self.knots;
        (0..self.n_basis)
            .map(|k| (tau[k + p + 1] - tau[k]) / q as f64 * tail[k + 1])
            .collect()
    }

    /// Design matrices on an evaluation grid inside `[0, T]`.
    pub fn design_matrices(&self, grid: &[f64]) -> Result<DesignMatrices> {
        if grid.is_empty() {
            return Err(Error::contract("design grid is empty"));
        }
        let rows = grid.len();
        let mut values = DMatrix::zeros(rows, self.n_basis);
        let mut derivs = DMatrix::zeros(rows, self.n_basis);
        let mut integrals = DMatrix::zeros(rows, self.n_basis);
        for (m, &t) in grid.iter().enumerate() {
            self.check_domain(t)?;
            let v = self.local_values(t);
            for (r, x) in v.values.iter().enumerate() {
                values[(m, v.first + r)] = *x;
            }
            let d = self.local_derivs(t);
            for (r, x) in d.values.iter().enumerate() {
                derivs[(m, d.first + r)] = *x;
            }
            for (k, x) in self.integral_unchecked(t).into_iter().enumerate() {
                integrals[(m, k)] = x;
            }
        }
        Ok(DesignMatrices {
            values,
            derivs,
            integrals,
            grid: grid.to_vec(),
        })
    }
}

/// `B`, `B′` and `Φ` evaluated on a grid (rows are grid points).
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub values: DMatrix<f64>,
    pub derivs: DMatrix<f64>,
    pub integrals: DMatrix<f64>,
    pub grid: Vec<f64>,
}

impl DesignMatrices {
    pub fn rows(&self) -> usize {
        self.grid.len()
    }
}

/// `M + 1` equispaced points on `[0, T]`.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=intervals)
        .map(|m| horizon * m as f64 / intervals as f64)
        .collect();
    *g.last_mut().unwrap() = horizon;
    g
}

/// Knot span index `i` with `τ_i ≤ t < τ_{i+1}`; the right end maps to the last span.
fn find_span(knots: &[f64], degree: usize, n_basis: usize, t: f64) -> usize {
    let last = n_basis - 1;
    if t >= knots[last + 1] {
        return last;
    }
    if t <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, last + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Values of `N_{span−p..=span, p}(t)`.
fn basis_funs(knots: &[f64], span: usize, p: usize, t: f64) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Textbook recursive definitions, independent of the span-based code.

    pub fn cox_de_boor(knots: &[f64], k: usize, p: usize, t: f64, right_end: f64) -> f64 {
        if p == 0 {
            let (a, b) = (knots[k], knots[k + 1]);
            let inside = (a <= t && t < b) || (t == right_end && b == right_end && a < b);
            return if inside { 1.0 } else { 0.0 };
        }
        let mut out = 0.0;
        let d1 = knots[k + p] - knots[k];
        if d1 > 0.0 {
            out += (t - knots[k]) / d1 * cox_de_boor(knots, k, p - 1, t, right_end);
        }
        let d2 = knots[k + p + 1] - knots[k + 1];
        if d2 > 0.0 {
            out += (knots[k + p + 1] - t) / d2 * cox_de_boor(knots, k + 1, p - 1, t, right_end);
        }
        out
    }

    pub fn cox_de_boor_deriv(knots: &[f64], k: usize, p: usize, t: f64, right_end: f64) -> f64 {
        let mut out = 0.0;
        let d1 = knots[k + p] - knots[k];
        if d1 > 0.0 {
            out += p as f64 / d1 * cox_de_boor(knots, k, p - 1, t, right_end);
        }
        let d2 = knots[k + p + 1] - knots[k + 1];
        if d2 > 0.0 {
            out -= p as f64 / d2 * cox_de_boor(knots, k + 1, p - 1, t, right_end);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_span_is_bernstein() {
        let b = build_basis(4, 3, 1.0).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        for &t in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            let v = b.eval(t).unwrap();
            let s = 1.0 - t;
            let bern = [s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t];
            for k in 0..4 {
                assert!((v[k] - bern[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn knot_count() {
        let b = build_basis(30, 3, 720.0).unwrap();
        assert_eq!(b.knots().len(), 34);
        let interior: Vec<f64> = b
            .knots()
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t < 720.0)
            .collect();
        assert_eq!(interior.len(), 26);
        let gaps: Vec<f64> = interior.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (g - 720.0 / 27.0).abs() < 1e-9));
        assert!(matches!(build_basis(3, 3, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn partition_of_unity_sweep() {
        let b = build_basis(30, 3, 720.0).unwrap();
        for i in 0..1000 {
            let t = 720.0 * i as f64 / 999.0;
            let s: f64 = b.eval(t).unwrap().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn integral_of_unity_is_horizon() {
        for (k, t) in [(4, 1.0), (30, 720.0), (17, 3.5)] {
            let b = build_basis(k, 3, t).unwrap();
            let s: f64 = b.eval_integral(t).unwrap().iter().sum();
            assert!((s - t).abs() <= 1e-10, "K={k}: {s} vs {t}");
        }
    }

    #[test]
    fn outside_domain_is_rejected() {
        let b = build_basis(10, 3, 5.0).unwrap();
        assert!(b.eval(-1e-9).is_err());
        assert!(b.eval_deriv(5.1).is_err());
        assert!(b.eval_integral(f64::NAN).is_err());
    }

    #[test]
    fn matches_recursive_definition() {
        let b = build_basis(12, 3, 10.0).unwrap();
        for i in 0..=200 {
            let t = 10.0 * i as f64 / 200.0;
            let v = b.eval(t).unwrap();
            let d = b.eval_deriv(t).unwrap();
            for k in 0..12 {
                let o = oracle::cox_de_boor(b.knots(), k, 3, t, 10.0);
                assert!((v[k] - o).abs() < 1e-13, "t={t} k={k}");
                let od = oracle::cox_de_boor_deriv(b.knots(), k, 3, t, 10.0);
                assert!((d[k] - od).abs() < 1e-12, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn design_matrix_invariants() {
        let b = build_basis(20, 3, 720.0).unwrap();
        let grid = uniform_grid(720.0, 72);
        let dm = b.design_matrices(&grid).unwrap();
        for m in 0..dm.rows() {
            assert!((dm.values.row(m).sum() - 1.0).abs() < 1e-12);
        }
        assert!(dm.integrals.row(0).iter().all(|&x| x == 0.0));
        for k in 0..20 {
            for m in 1..dm.rows() {
                assert!(dm.integrals[(m, k)] >= dm.integrals[(m - 1, k)]);
            }
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = 0.0;
        for i in 0..panels {
            let x0 = a + i as f64 * h;
            let x1 = if i + 1 == panels { b } else { x0 + h };
            s += h / 6.0 * (f(x0) + 4.0 * f(0.5 * (x0 + x1)) + f(x1));
        }
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn derivative_matches_central_difference(k in 5usize..40, frac in 0.01f64..0.99) {
            let t_end = 720.0;
            let b = build_basis(k, 3, t_end).unwrap();
            let t = frac * t_end;
            let h = 1e-6 * t_end;
            let d = b.eval_deriv(t).unwrap();
            let up = b.eval(t + h).unwrap();
            let dn = b.eval(t - h).unwrap();
            let scale = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for i in 0..k {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                prop_assert!((fd - d[i]).abs() <= 1e-5 * scale);
            }
        }

        #[test]
        fn integral_increments_match_quadrature(k in 4usize..30, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let t_end = 50.0;
            let basis = build_basis(k, 3, t_end).unwrap();
            let (lo, hi) = if a < b { (a * t_end, b * t_end) } else { (b * t_end, a * t_end) };
            let p_lo = basis.eval_integral(lo).unwrap();
            let p_hi = basis.eval_integral(hi).unwrap();
            for i in 0..k {
                let q = simpson(|t| basis.eval(t).unwrap()[i], lo, hi, 2000);
                prop_assert!((p_hi[i] - p_lo[i] - q).abs() <= 1e-7 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn partition_of_unity_random(k in 4usize..80, t_end in 0.5f64..1000.0, frac in 0.0f64..=1.0) {
            let b = build_basis(k, 3, t_end).unwrap();
            let s: f64 = b.eval(frac * t_end).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
