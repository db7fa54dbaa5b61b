use nalgebra::{DMatrix, DVector};

use super::BasisSystem;
use crate::error::{Error, Result};

const MAX_CONDITION: f64 = 1e12;

/// Least-squares projection onto the basis for a fixed sample grid.
///
/// Holds `P = R⁻¹Qᵀ` from the thin QR of the design matrix, so each fit is a
/// single matrix-vector product.
#[derive(Debug, Clone)]
pub struct Fitter {
    grid: Vec<f64>,
    projector: DMatrix<f64>,
    condition: f64,
}

impl Fitter {
    pub fn new(basis: &BasisSystem, grid: &[f64]) -> Result<Self> {
        let k = basis.n_basis();
        if grid.len() < k {
            return Err(Error::contract(format!(
                "{} sample points cannot determine {k} coefficients",
                grid.len()
            )));
        }
        let t_end = basis.horizon();
        let tol = 1e-9 * t_end.max(1.0);
        if grid[0].abs() > tol || (grid[grid.len() - 1] - t_end).abs() > tol {
            return Err(Error::contract("sample grid must span the basis domain"));
        }
        let clamped: Vec<f64> = grid.iter().map(|t| t.clamp(0.0, t_end)).collect();
        let design = basis.design_matrices(&clamped)?.values;
        let qr = design.qr();
        let r = qr.r();
        let sv = r.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllPosedFit { condition });
        }
        let qt = qr.q().transpose();
        let projector = r
            .solve_upper_triangular(&qt)
            .ok_or(Error::IllPosedFit { condition })?;
        Ok(Fitter {
            grid: grid.to_vec(),
            projector,
            condition,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn fit(&self, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != self.grid.len() {
            return Err(Error::contract(format!(
                "{} samples for a {}-point grid",
                values.len(),
                self.grid.len()
            )));
        }
        Ok(&self.projector * DVector::from_column_slice(values))
    }
}

/// One-off least-squares fit of `values` sampled on `grid`.
pub fn fit_coefficients(basis: &BasisSystem, values: &[f64], grid: &[f64]) -> Result<DVector<f64>> {
    Fitter::new(basis, grid)?.fit(values)
}

#[cfg(test)]
mod tests {
    use super::super::{build_basis, uniform_grid};
    use super::*;

    #[test]
    fn reproduces_spline_curves() {
        let b = build_basis(30, 3, 720.0).unwrap();
        let grid = uniform_grid(720.0, 720);
        let c0 = DVector::from_fn(30, |i, _| (i as f64 * 0.7).sin() * 100.0 + 3.0);
        let dm = b.design_matrices(&grid).unwrap();
        let y = &dm.values * &c0;
        let c = fit_coefficients(&b, y.as_slice(), &grid).unwrap();
        assert!((&c - &c0).norm() <= 1e-8 * c0.norm());
    }

    #[test]
    fn constant_curve() {
        let b = build_basis(30, 3, 720.0).unwrap();
        let grid = uniform_grid(720.0, 720);
        let c = fit_coefficients(&b, &vec![5.0; grid.len()], &grid).unwrap();
        assert!(c.iter().all(|v| (v - 5.0).abs() <= 5e-8));
    }

    #[test]
    fn sine_residual() {
        let b = build_basis(30, 3, 720.0).unwrap();
        let grid = uniform_grid(720.0, 720);
        let y: Vec<f64> = grid
            .iter()
            .map(|t| (2.0 * std::f64::consts::PI * t / 720.0).sin())
            .collect();
        let c = fit_coefficients(&b, &y, &grid).unwrap();
        let fitted = &b.design_matrices(&grid).unwrap().values * &c;
        let worst = y
            .iter()
            .zip(fitted.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "max residual {worst}");
    }

    #[test]
    fn too_few_points_or_empty_spans() {
        let b = build_basis(30, 3, 720.0).unwrap();
        assert!(Fitter::new(&b, &uniform_grid(720.0, 10)).is_err());
        // 40 points crowded in the first half leave basis functions unsampled
        let mut grid: Vec<f64> = (0..40).map(|i| i as f64).collect();
        grid.push(720.0);
        assert!(matches!(
            Fitter::new(&b, &grid),
            Err(Error::IllPosedFit { .. })
        ));
    }
}
