//! The `H¹ × H¹` representation of `(E, I)` pairs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::basis::{Fitter, GramH1};
use crate::epi::SampledTrajectory;
use crate::error::{Error, Result};

/// Stacked coefficients `(c_E, c_I)`, each of length `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    data: DVector<f64>,
}

impl CoefVector {
    pub fn new(exposed: DVector<f64>, infectious: DVector<f64>) -> Result<Self> {
        if exposed.len() != infectious.len() {
            return Err(Error::contract(
                "exposed and infectious blocks differ in length",
            ));
        }
        let mut data = DVector::zeros(2 * exposed.len());
        data.rows_mut(0, exposed.len()).copy_from(&exposed);
        data.rows_mut(exposed.len(), exposed.len())
            .copy_from(&infectious);
        Self::from_stacked(data)
    }

    pub fn from_stacked(data: DVector<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(2) || data.is_empty() {
            return Err(Error::contract(
                "stacked coefficient vector must have even, non-zero length",
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("coefficients must be finite"));
        }
        Ok(CoefVector { data })
    }

    pub fn zeros(n_basis: usize) -> Self {
        CoefVector {
            data: DVector::zeros(2 * n_basis),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.data.len() / 2
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.data
    }

    pub fn exposed(&self) -> DVector<f64> {
        self.data.rows(0, self.n_basis()).into_owned()
    }

    pub fn infectious(&self) -> DVector<f64> {
        self.data.rows(self.n_basis(), self.n_basis()).into_owned()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CoefVector {
            data: &self.data * factor,
        }
    }
}

/// `G_Y = diag(G, G)` with `G = L_G L_Gᵀ`, so `G_Y = LᵀL` for `L = diag(L_Gᵀ, L_Gᵀ)`.
#[derive(Debug, Clone)]
pub struct BlockGram {
    block: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

impl BlockGram {
    pub fn new(gram: &GramH1) -> Result<Self> {
        let cholesky = Cholesky::new(gram.matrix.clone()).ok_or(Error::DegenerateBasis {
            lambda_min: gram.lambda_min,
        })?;
        Ok(BlockGram {
            block: gram.matrix.clone(),
            cholesky,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.block.nrows()
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    /// Dense `2K × 2K` matrix.
    pub fn full(&self) -> DMatrix<f64> {
        let k = self.n_basis();
        let mut g = DMatrix::zeros(2 * k, 2 * k);
        g.view_mut((0, 0), (k, k)).copy_from(&self.block);
        g.view_mut((k, k), (k, k)).copy_from(&self.block);
        g
    }

    /// Upper factor `L` with `G_Y = LᵀL`.
    pub fn factor(&self) -> DMatrix<f64> {
        let k = self.n_basis();
        let lt = self.cholesky.l().transpose();
        let mut l = DMatrix::zeros(2 * k, 2 * k);
        l.view_mut((0, 0), (k, k)).copy_from(&lt);
        l.view_mut((k, k), (k, k)).copy_from(&lt);
        l
    }

    /// `G_Y x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.n_basis();
        let mut out = DVector::zeros(2 * k);
        out.rows_mut(0, k).copy_from(&(&self.block * x.rows(0, k)));
        out.rows_mut(k, k).copy_from(&(&self.block * x.rows(k, k)));
        out
    }

    /// `xᵀ G_Y x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        let k = self.n_basis();
        let e = x.rows(0, k);
        let i = x.rows(k, k);
        let v = e.dot(&(&self.block * e)) + i.dot(&(&self.block * i));
        v.max(0.0)
    }

    pub fn norm(&self, c: &CoefVector) -> f64 {
        self.quad(c.stacked()).sqrt()
    }

    /// `‖L x‖²`, the factored form of [`BlockGram::quad`].
    pub fn quad_factored(&self, x: &DVector<f64>) -> f64 {
        let k = self.n_basis();
        let lt = self.cholesky.l().transpose();
        let a = &lt * x.rows(0, k);
        let b = &lt * x.rows(k, k);
        a.norm_squared() + b.norm_squared()
    }
}

/// `D(c₁, c₂) = √((c₁−c₂)ᵀ G_Y (c₁−c₂))`.
pub fn distance(c1: &CoefVector, c2: &CoefVector, gram: &BlockGram) -> f64 {
    squared_distance(c1, c2, gram).sqrt()
}

pub fn squared_distance(c1: &CoefVector, c2: &CoefVector, gram: &BlockGram) -> f64 {
    gram.quad(&(c1.stacked() - c2.stacked()))
}

/// Piecewise cubic Hermite interpolant of samples, extended by the endpoint
/// values outside the grid.
///
/// Slopes are the derivatives of the three-point interpolating parabola, so
/// the interpolant reproduces quadratics exactly on any grid.
#[derive(Debug, Clone)]
pub struct HermiteCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteCurve {
    pub fn new(grid: &[f64], values: &[f64]) -> Self {
        let n = grid.len();
        debug_assert_eq!(n, values.len());
        let mut slopes = vec![0.0; n];
        if n >= 3 {
            for i in 1..n - 1 {
                let (h0, h1) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
                let (d0, d1) = (
                    (values[i] - values[i - 1]) / h0,
                    (values[i + 1] - values[i]) / h1,
                );
                slopes[i] = (h1 * d0 + h0 * d1) / (h0 + h1);
            }
            let (h0, h1) = (grid[1] - grid[0], grid[2] - grid[1]);
            let (d0, d1) = ((values[1] - values[0]) / h0, (values[2] - values[1]) / h1);
            slopes[0] = d0 - h0 * (d1 - d0) / (h0 + h1);
            let (h0, h1) = (grid[n - 2] - grid[n - 3], grid[n - 1] - grid[n - 2]);
            let (d0, d1) = (
                (values[n - 2] - values[n - 3]) / h0,
                (values[n - 1] - values[n - 2]) / h1,
            );
            slopes[n - 1] = d1 + h1 * (d1 - d0) / (h0 + h1);
        } else if n == 2 {
            let d = (values[1] - values[0]) / (grid[1] - grid[0]);
            slopes = vec![d, d];
        }
        HermiteCurve {
            grid: grid.to_vec(),
            values: values.to_vec(),
            slopes,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.grid.len();
        if t <= self.grid[0] {
            return self.values[0];
        }
        if t >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let i = self.grid.partition_point(|&g| g <= t) - 1;
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        if t == t0 {
            return self.values[i];
        }
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1]
    }

    /// Samples of `t ↦ y_ext(t + delta)` on the curve's own grid.
    pub fn shifted(&self, delta: f64) -> Vec<f64> {
        if delta == 0.0 {
            return self.values.clone();
        }
        self.grid.iter().map(|&t| self.eval(t + delta)).collect()
    }
}

/// `t ↦ y_ext(t + delta)` for every column, on the original grid.
pub fn shift(traj: &SampledTrajectory, delta: f64) -> SampledTrajectory {
    if delta == 0.0 {
        return traj.clone();
    }
    let grid = traj.grid().to_vec();
    traj.map_columns(|_, values| HermiteCurve::new(&grid, values).shifted(delta))
}

/// Every column interpolated onto `grid`; the population is dropped because
/// interpolated columns need not sum to `N`.
pub fn resample(traj: &SampledTrajectory, grid: &[f64]) -> Result<SampledTrajectory> {
    if traj.grid() == grid {
        return Ok(traj.clone());
    }
    let columns = traj
        .columns()
        .iter()
        .map(|(&c, values)| {
            let curve = HermiteCurve::new(traj.grid(), values);
            (c, grid.iter().map(|&t| curve.eval(t)).collect())
        })
        .collect();
    SampledTrajectory::new(grid.to_vec(), columns, None)
}

/// Interpolants for the exposed and infectious columns of one trajectory.
#[derive(Debug, Clone)]
pub struct ShiftableCurve {
    exposed: HermiteCurve,
    infectious: HermiteCurve,
}

impl ShiftableCurve {
    pub fn new(traj: &SampledTrajectory) -> Result<Self> {
        Ok(ShiftableCurve {
            exposed: HermiteCurve::new(traj.grid(), traj.exposed()?),
            infectious: HermiteCurve::new(traj.grid(), traj.infectious()?),
        })
    }

    /// Least-squares coefficients of the shifted `(E, I)` pair.
    pub fn coefficients(&self, delta: f64, fitter: &Fitter) -> Result<CoefVector> {
        let e = fitter.fit(&self.exposed.shifted(delta))?;
        let i = fitter.fit(&self.infectious.shifted(delta))?;
        CoefVector::new(e, i)
    }
}

/// Shift and fit the exposed and infectious columns.
pub fn shifted_coefficients(
    traj: &SampledTrajectory,
    delta: f64,
    fitter: &Fitter,
) -> Result<CoefVector> {
    ShiftableCurve::new(traj)?.coefficients(delta, fitter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_reproduces_quadratics() {
        let coarse: Vec<f64> = (0..=10).map(|k| 2.0 * k as f64).collect();
        let q = |t: f64| 3.0 + t - 0.1 * t * t;
        let values: Vec<f64> = coarse.iter().map(|&t| q(t)).collect();
        let traj =
            SampledTrajectory::from_exposed_infectious(coarse, values.clone(), values).unwrap();
        let fine: Vec<f64> = (0..=20).map(|k| k as f64).collect();
        let out = resample(&traj, &fine).unwrap();
        assert_eq!(out.grid(), &fine[..]);
        for (&t, v) in fine.iter().zip(out.infectious().unwrap()) {
            assert!((v - q(t)).abs() < 1e-12, "{t}: {v}");
        }
    }
    use crate::basis::{build_basis, gram_h1, uniform_grid, BasisSystem};
    use crate::epi::{daily_grid, integrate, params_from_quantities, ModelParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, t_end: f64) -> (BasisSystem, BlockGram) {
        let b = build_basis(k, 3, t_end).unwrap();
        let g = BlockGram::new(&gram_h1(&b, 1.0).unwrap()).unwrap();
        (b, g)
    }

    fn random_coef(rng: &mut ChaCha8Rng, k: usize) -> CoefVector {
        CoefVector::from_stacked(DVector::from_fn(2 * k, |_, _| rng.random_range(-1.0..1.0)))
            .unwrap()
    }

    fn point_estimate_curve() -> SampledTrajectory {
        let rates = params_from_quantities(5.2, 7.5, 2.2).unwrap();
        let p = ModelParams::seir(rates, 1e6, 1.0, 0.0, 720.0).unwrap();
        integrate(&p, &daily_grid(720.0)).unwrap()
    }

    #[test]
    fn factor_reproduces_block_gram() {
        let (_, g) = setup(12, 720.0);
        let l = g.factor();
        let full = g.full();
        assert!((l.transpose() * &l - &full).norm() <= 1e-10 * full.norm());
        let k = 12;
        assert_eq!(full.view((0, k), (k, k)).amax(), 0.0);
        assert_eq!(full.view((k, 0), (k, k)).amax(), 0.0);
    }

    #[test]
    fn distance_basics() {
        let (_, g) = setup(10, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coef(&mut rng, 10);
        assert_eq!(distance(&c, &c, &g), 0.0);
        let v = DVector::from_fn(10, |i, _| (i as f64).cos());
        let z = DVector::zeros(10);
        let a = CoefVector::new(v.clone(), z.clone()).unwrap();
        let b = CoefVector::new(z.clone(), v).unwrap();
        let o = CoefVector::new(z.clone(), z).unwrap();
        assert_eq!(distance(&a, &o, &g), distance(&b, &o, &g));
    }

    #[test]
    fn distance_matches_curve_quadrature() {
        let k = 10;
        let t_end = 100.0;
        let (b, g) = setup(k, t_end);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c1 = random_coef(&mut rng, k);
            let c2 = random_coef(&mut rng, k);
            let d = c1.stacked() - c2.stacked();
            let f = |t: f64| -> f64 {
                let v = b.eval(t).unwrap();
                let dv = b.eval_deriv(t).unwrap();
                let mut acc = 0.0;
                for block in 0..2 {
                    let x: f64 = (0..k).map(|i| v[i] * d[block * k + i]).sum();
                    let dx: f64 = (0..k).map(|i| dv[i] * d[block * k + i]).sum();
                    acc += x * x + dx * dx;
                }
                acc
            };
            let breaks = b.breakpoints();
            let mut q = 0.0;
            for w in breaks.windows(2) {
                let n = 400;
                let h = (w[1] - w[0]) / n as f64;
                for p in 0..n {
                    let x0 = w[0] + p as f64 * h;
                    let x1 = if p + 1 == n { w[1] } else { x0 + h };
                    q += h / 6.0
                        * (f(x0 + 1e-12 * h)
                            + 4.0 * f(0.5 * (x0 + x1))
                            + f((x1 - 1e-12 * h).max(x0)));
                }
            }
            let d2 = squared_distance(&c1, &c2, &g);
            assert!((d2 - q).abs() <= 1e-6 * q, "{d2} vs {q}");
        }
    }

    proptest! {
        #[test]
        fn triangle_inequality(seed in 0u64..1000) {
            let (_, g) = setup(8, 50.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_coef(&mut rng, 8), random_coef(&mut rng, 8), random_coef(&mut rng, 8));
            prop_assert!(distance(&a, &c, &g) <= distance(&a, &b, &g) + distance(&b, &c, &g) + 1e-10);
        }

        #[test]
        fn factored_quadratic_form(seed in 0u64..1000) {
            let (_, g) = setup(15, 720.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_coef(&mut rng, 15).into_stacked();
            let a = g.quad(&x);
            let b = g.quad_factored(&x);
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }

        #[test]
        fn shift_semigroup_away_from_clamping(a in -30i32..30, b in -30.0f64..30.0) {
            let tr = point_estimate_curve();
            let a = a as f64;
            let twice = shift(&shift(&tr, a), b);
            let once = shift(&tr, a + b);
            let grid = tr.grid();
            let x = twice.infectious().unwrap();
            let y = once.infectious().unwrap();
            let scale = y.iter().cloned().fold(0.0, f64::max);
            for (m, &t) in grid.iter().enumerate() {
                // interpolation stencils reach two samples beyond the query
                let margin = 3.0;
                let inner = |s: f64| s >= margin && s <= 720.0 - margin;
                if inner(t + a) && inner(t + a + b) && inner(t + b) {
                    prop_assert!((x[m] - y[m]).abs() <= 1e-8 * scale, "t={t}");
                }
            }
        }
    }

    #[test]
    fn zero_and_full_shift() {
        let tr = point_estimate_curve();
        assert_eq!(shift(&tr, 0.0), tr);
        let full = shift(&tr, 720.0);
        let last = *tr.infectious().unwrap().last().unwrap();
        assert!(full.infectious().unwrap().iter().all(|&v| v == last));
    }

    #[test]
    fn shift_moves_peak_earlier() {
        let tr = point_estimate_curve();
        let p0 = tr.peak_time().unwrap();
        let p1 = shift(&tr, 10.0).peak_time().unwrap();
        assert!((p0 - 10.0 - p1).abs() <= 1.0, "{p0} -> {p1}");
    }

    #[test]
    fn shifted_coefficients_properties() {
        let tr = point_estimate_curve();
        let b = build_basis(30, 3, 720.0).unwrap();
        let fitter = Fitter::new(&b, tr.grid()).unwrap();
        let c0 = shifted_coefficients(&tr, 0.0, &fitter).unwrap();
        let direct = fitter.fit(tr.infectious().unwrap()).unwrap();
        assert_eq!(c0.infectious(), direct);

        let grid = tr.grid().to_vec();
        let flat = SampledTrajectory::from_exposed_infectious(
            grid.clone(),
            vec![3.0; 721],
            vec![7.0; 721],
        )
        .unwrap();
        let cf = shifted_coefficients(&flat, 0.0, &fitter).unwrap();
        for d in [-50.0, 13.7, 120.0] {
            assert_eq!(shifted_coefficients(&flat, d, &fitter).unwrap(), cf);
        }

        // continuity: increments shrink linearly with the step
        let shiftable = ShiftableCurve::new(&tr).unwrap();
        let g = BlockGram::new(&gram_h1(&b, 1.0).unwrap()).unwrap();
        let mut lipschitz = 0.0f64;
        for d in (-100..=100).step_by(20).map(|d| d as f64 + 0.5) {
            let a = shiftable.coefficients(d, &fitter).unwrap();
            let b1 = shiftable.coefficients(d + 1e-3, &fitter).unwrap();
            lipschitz = lipschitz.max(distance(&a, &b1, &g) / 1e-3);
        }
        let a = shiftable.coefficients(0.5, &fitter).unwrap();
        let b2 = shiftable.coefficients(0.5 + 1e-6, &fitter).unwrap();
        assert!(distance(&a, &b2, &g) <= 2.0 * lipschitz * 1e-6);
    }

    #[test]
    fn hermite_is_exact_for_quadratics() {
        let grid = [0.0, 0.5, 1.7, 2.0, 3.3, 5.0];
        let f = |t: f64| 2.0 - 0.3 * t + 0.7 * t * t;
        let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        let h = HermiteCurve::new(&grid, &vals);
        for i in 0..=100 {
            let t = 5.0 * i as f64 / 100.0;
            assert!((h.eval(t) - f(t)).abs() < 1e-12);
        }
        let _ = uniform_grid(1.0, 1);
    }
}
