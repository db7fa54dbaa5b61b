use nalgebra::{DMatrix, DVector};

use crate::basis::DesignMatrices;

/// Linear constraints on the stacked coefficients `c = (c_E, c_I)`.
///
/// Equalities `A c = b`; inequalities `C c ≥ d` with row blocks
/// `[E ≥ 0 | I ≥ 0 | population cap]`, each with one row per grid point.
/// The cap `Bc_E + (B + γΦ)c_I ≤ N` is stored negated.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub grid_points: usize,
}

impl ConstraintSet {
    pub fn exposed_rows(&self) -> std::ops::Range<usize> {
        0..self.grid_points
    }

    pub fn infectious_rows(&self) -> std::ops::Range<usize> {
        self.grid_points..2 * self.grid_points
    }

    pub fn population_rows(&self) -> std::ops::Range<usize> {
        2 * self.grid_points..3 * self.grid_points
    }
}

/// `[−σB | B′+γB] c = 0`, `Bc_E ≥ 0`, `Bc_I ≥ 0`, `Bc_E + (B+γΦ)c_I ≤ N`.
pub fn constraint_matrices(
    design: &DesignMatrices,
    sigma: f64,
    gamma: f64,
    population: f64,
) -> ConstraintSet {
    let b = &design.values;
    let rows = b.nrows();
    let k = b.ncols();
    let mut eq = DMatrix::zeros(rows, 2 * k);
    eq.view_mut((0, 0), (rows, k)).copy_from(&(b * -sigma));
    eq.view_mut((0, k), (rows, k))
        .copy_from(&(&design.derivs + b * gamma));
    let cap_infectious = b + &design.integrals * gamma;
    ConstraintSet {
        eq_matrix: eq,
        eq_rhs: DVector::zeros(rows),
        ineq_matrix: inequality_block(b, &cap_infectious),
        ineq_rhs: inequality_rhs(rows, population),
        grid_points: rows,
    }
}

/// Inequalities only, with the cap `Bc_E + Bc_I ≤ N` (no dynamics).
pub fn reduced_constraints(design: &DesignMatrices, population: f64) -> ConstraintSet {
    let b = &design.values;
    let rows = b.nrows();
    ConstraintSet {
        eq_matrix: DMatrix::zeros(0, 2 * b.ncols()),
        eq_rhs: DVector::zeros(0),
        ineq_matrix: inequality_block(b, b),
        ineq_rhs: inequality_rhs(rows, population),
        grid_points: rows,
    }
}

fn inequality_block(b: &DMatrix<f64>, cap_infectious: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = b.nrows();
    let k = b.ncols();
    let mut c = DMatrix::zeros(3 * rows, 2 * k);
    c.view_mut((0, 0), (rows, k)).copy_from(b);
    c.view_mut((rows, k), (rows, k)).copy_from(b);
    c.view_mut((2 * rows, 0), (rows, k)).copy_from(&(-b));
    c.view_mut((2 * rows, k), (rows, k))
        .copy_from(&(-cap_infectious));
    c
}

fn inequality_rhs(rows: usize, population: f64) -> DVector<f64> {
    let mut d = DVector::zeros(3 * rows);
    d.rows_mut(2 * rows, rows).fill(-population);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, uniform_grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_match_pointwise_evaluation() {
        let basis = build_basis(12, 3, 100.0).unwrap();
        let grid = uniform_grid(100.0, 15);
        let design = basis.design_matrices(&grid).unwrap();
        let (sigma, gamma, n) = (0.3, 0.2, 50.0);
        let cs = constraint_matrices(&design, sigma, gamma, n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = DVector::from_fn(24, |_, _| rng.random_range(-2.0..2.0));
        let eq = &cs.eq_matrix * &c;
        let ineq = &cs.ineq_matrix * &c;
        for (m, &t) in grid.iter().enumerate() {
            let v = basis.eval(t).unwrap();
            let d = basis.eval_deriv(t).unwrap();
            let p = basis.eval_integral(t).unwrap();
            let e: f64 = (0..12).map(|k| v[k] * c[k]).sum();
            let i: f64 = (0..12).map(|k| v[k] * c[12 + k]).sum();
            let di: f64 = (0..12).map(|k| d[k] * c[12 + k]).sum();
            let ii: f64 = (0..12).map(|k| p[k] * c[12 + k]).sum();
            assert!((eq[m] - (di - sigma * e + gamma * i)).abs() < 1e-12);
            assert!((ineq[m] - e).abs() < 1e-12);
            assert!((ineq[12 + 4 + m] - i).abs() < 1e-12);
            let cap = -(e + i + gamma * ii);
            assert!((ineq[2 * 16 + m] - cap).abs() < 1e-12);
            assert_eq!(cs.ineq_rhs[32 + m], -n);
        }
    }

    #[test]
    fn zero_rates_force_constant_infectious() {
        let basis = build_basis(8, 3, 10.0).unwrap();
        let design = basis.design_matrices(&uniform_grid(10.0, 20)).unwrap();
        let cs = constraint_matrices(&design, 0.0, 0.0, 1.0);
        assert_eq!(cs.eq_matrix.view((0, 0), (21, 8)).amax(), 0.0);
        assert_eq!(
            cs.eq_matrix.view((0, 8), (21, 8)),
            design.derivs.view((0, 0), (21, 8))
        );
        // constant I is in the kernel
        let mut c = DVector::zeros(16);
        c.rows_mut(8, 8).fill(3.0);
        assert!((&cs.eq_matrix * &c).amax() < 1e-12);
    }

    #[test]
    fn origin_is_feasible() {
        let basis = build_basis(8, 3, 10.0).unwrap();
        let design = basis.design_matrices(&uniform_grid(10.0, 20)).unwrap();
        let cs = constraint_matrices(&design, 0.4, 0.1, 7.0);
        let c = DVector::zeros(16);
        assert!((&cs.eq_matrix * &c - &cs.eq_rhs).amax() == 0.0);
        assert!((&cs.ineq_matrix * &c - &cs.ineq_rhs)
            .iter()
            .all(|&s| s >= 0.0));
    }
}
