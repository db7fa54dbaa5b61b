use nalgebra::DVector;

use super::ConstraintSet;
use crate::error::{Error, Result};
use crate::fspace::{squared_distance, BlockGram, CoefVector};
use crate::qp::{PreparedQp, QpSettings, QpSolution};

/// Minimizer of the inner problem with its multipliers.
///
/// Multipliers satisfy `∇F(c) + Aᵀν − Cᵀλ = 0` for the objective
/// `F(c) = (1/J)·Σ_j (D(c, c_j)² + ε)^{q/2}`.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub c: CoefVector,
    pub nu: DVector<f64>,
    pub lambda_exposed: DVector<f64>,
    pub lambda_infectious: DVector<f64>,
    pub lambda_population: DVector<f64>,
    pub kkt_residual: f64,
    pub objective: f64,
    /// IRLS sweeps (1 for the quadratic case).
    pub iterations: usize,
    pub active: Vec<usize>,
    /// Whether the final projection was refined to an exact active-set solution.
    pub polished: bool,
}

impl InnerSolution {
    /// Rescale from units where the population is 1 to absolute counts.
    pub(crate) fn to_counts(&self, population: f64, q: f64) -> InnerSolution {
        let dual = population.powf(q - 1.0);
        InnerSolution {
            c: self.c.scaled(population),
            nu: &self.nu * dual,
            lambda_exposed: &self.lambda_exposed * dual,
            lambda_infectious: &self.lambda_infectious * dual,
            lambda_population: &self.lambda_population * dual,
            kkt_residual: self.kkt_residual,
            objective: self.objective * population.powf(q),
            iterations: self.iterations,
            active: self.active.clone(),
            polished: self.polished,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsSettings {
    pub eps_q: f64,
    pub eps_irls: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub qp: QpSettings,
}

impl Default for IrlsSettings {
    fn default() -> Self {
        IrlsSettings {
            eps_q: 1e-3,
            eps_irls: 1e-12,
            max_iter: 200,
            tol: 1e-8,
            qp: QpSettings::default(),
        }
    }
}

/// `q = 1` is replaced by `1 + eps_q`.
pub fn effective_power(q: f64, eps_q: f64) -> f64 {
    if (q - 1.0).abs() < 1e-12 {
        1.0 + eps_q
    } else {
        q
    }
}

/// `(1/J)·Σ_j (D(c, c_j)² + ε)^{q/2}`; the regularizer is dropped at `q = 2`.
pub fn smoothed_objective(
    c: &CoefVector,
    cjs: &[CoefVector],
    gram: &BlockGram,
    q: f64,
    eps: f64,
) -> f64 {
    let j = cjs.len() as f64;
    if q == 2.0 {
        return cjs
            .iter()
            .map(|cj| squared_distance(c, cj, gram))
            .sum::<f64>()
            / j;
    }
    cjs.iter()
        .map(|cj| (squared_distance(c, cj, gram) + eps).powf(0.5 * q))
        .sum::<f64>()
        / j
}

fn check_inputs(cjs: &[CoefVector], gram: &BlockGram, constraints: &ConstraintSet) -> Result<()> {
    if cjs.is_empty() {
        return Err(Error::contract("at least one input curve is required"));
    }
    let k = gram.n_basis();
    if cjs.iter().any(|c| c.n_basis() != k) {
        return Err(Error::contract(
            "coefficient vectors do not match the basis size",
        ));
    }
    if constraints.ineq_matrix.ncols() != 2 * k {
        return Err(Error::contract("constraints do not match the basis size"));
    }
    Ok(())
}

/// Prepared projection `min (c − t)ᵀG_Y(c − t)` under the constraints.
pub(crate) struct Projector {
    qp: PreparedQp,
}

impl Projector {
    pub(crate) fn new(
        gram: &BlockGram,
        constraints: &ConstraintSet,
        settings: QpSettings,
    ) -> Result<Self> {
        let qp = PreparedQp::new(
            gram.full() * 2.0,
            constraints.eq_matrix.clone(),
            constraints.eq_rhs.clone(),
            constraints.ineq_matrix.clone(),
            constraints.ineq_rhs.clone(),
            settings,
        )?;
        Ok(Projector { qp })
    }

    pub(crate) fn project(
        &self,
        target: &DVector<f64>,
        gram: &BlockGram,
        guess: Option<&[usize]>,
    ) -> Result<QpSolution> {
        let linear = gram.apply(target) * -2.0;
        self.qp.solve(&linear, guess)
    }
}

fn package(
    sol: &QpSolution,
    constraints: &ConstraintSet,
    dual_scale: f64,
    objective: f64,
    iterations: usize,
) -> Result<InnerSolution> {
    let lam = &sol.ineq_duals;
    Ok(InnerSolution {
        c: CoefVector::from_stacked(sol.x.clone())?,
        nu: &sol.eq_duals * dual_scale,
        lambda_exposed: lam.rows(constraints.exposed_rows().start, constraints.grid_points)
            * dual_scale,
        lambda_infectious: lam.rows(constraints.infectious_rows().start, constraints.grid_points)
            * dual_scale,
        lambda_population: lam.rows(constraints.population_rows().start, constraints.grid_points)
            * dual_scale,
        kkt_residual: sol.kkt_residual,
        objective,
        iterations,
        active: sol.active.clone(),
        polished: sol.polished,
    })
}

fn mean_coefficients(cjs: &[CoefVector]) -> DVector<f64> {
    let mut mean = DVector::zeros(cjs[0].stacked().len());
    for c in cjs {
        mean += c.stacked();
    }
    mean / cjs.len() as f64
}

/// `q = 2`: projection of the coefficient mean onto the feasible set.
pub fn inner_solve_q2(
    cjs: &[CoefVector],
    gram: &BlockGram,
    constraints: &ConstraintSet,
) -> Result<InnerSolution> {
    inner_solve_q2_with(cjs, gram, constraints, QpSettings::default(), None)
}

pub(crate) fn inner_solve_q2_with(
    cjs: &[CoefVector],
    gram: &BlockGram,
    constraints: &ConstraintSet,
    settings: QpSettings,
    guess: Option<&[usize]>,
) -> Result<InnerSolution> {
    check_inputs(cjs, gram, constraints)?;
    let projector = Projector::new(gram, constraints, settings)?;
    let sol = projector.project(&mean_coefficients(cjs), gram, guess)?;
    let c = CoefVector::from_stacked(sol.x.clone())?;
    let objective = smoothed_objective(&c, cjs, gram, 2.0, 0.0);
    package(&sol, constraints, 1.0, objective, 1)
}

const INCREASE_TOL: f64 = 1e-6;

/// Power-`q` objective by iteratively reweighted projections.
///
/// Each sweep minimizes the quadratic majorizer with weights
/// `w_j = (D(c, c_j)² + ε)^{q/2 − 1}`, so `F` is non-increasing for `q ≤ 2`.
/// The multipliers of the final weighted projection are scaled by
/// `q·Σw / (2J)` to become multipliers of `F`.
pub fn inner_solve_irls(
    q: f64,
    cjs: &[CoefVector],
    gram: &BlockGram,
    constraints: &ConstraintSet,
    warm_start: Option<&InnerSolution>,
    settings: &IrlsSettings,
) -> Result<InnerSolution> {
    check_inputs(cjs, gram, constraints)?;
    if !(q > 0.0) {
        return Err(Error::contract("power q must be positive"));
    }
    if !(settings.eps_irls > 0.0) {
        return Err(Error::contract("eps_irls must be positive"));
    }
    let q = effective_power(q, settings.eps_q);
    let guess = warm_start.map(|w| w.active.as_slice());
    if q == 2.0 {
        return inner_solve_q2_with(cjs, gram, constraints, settings.qp, guess);
    }
    let eps = settings.eps_irls;
    let j = cjs.len() as f64;
    let projector = Projector::new(gram, constraints, settings.qp)?;

    let (mut c, mut active) = match warm_start {
        Some(w) if w.c.n_basis() == gram.n_basis() && feasible(&w.c, constraints) => {
            (w.c.clone(), w.active.clone())
        }
        _ => {
            let sol = projector.project(&mean_coefficients(cjs), gram, guess)?;
            (CoefVector::from_stacked(sol.x.clone())?, sol.active.clone())
        }
    };
    let mut f_cur = smoothed_objective(&c, cjs, gram, q, eps);
    let mut last: Option<(QpSolution, f64)> = None;
    let mut sweeps = 0;
    for s in 1..=settings.max_iter {
        sweeps = s;
        let raw: Vec<f64> = cjs
            .iter()
            .map(|cj| (squared_distance(&c, cj, gram) + eps).powf(0.5 * q - 1.0))
            .collect();
        let w_max = raw.iter().cloned().fold(0.0, f64::max);
        let w_sum: f64 = raw.iter().sum();
        let mut target = DVector::zeros(c.stacked().len());
        for (w, cj) in raw.iter().zip(cjs) {
            target += cj.stacked() * (w / w_max);
        }
        target /= w_sum / w_max;
        let sol = projector.project(&target, gram, Some(&active))?;
        let c_new = CoefVector::from_stacked(sol.x.clone())?;
        let f_new = smoothed_objective(&c_new, cjs, gram, q, eps);
        if f_new > f_cur {
            if f_new - f_cur > INCREASE_TOL * f_cur.abs() {
                return Err(Error::Stall(format!(
                    "IRLS objective increased from {f_cur:e} to {f_new:e} at sweep {s}"
                )));
            }
            // projection round-off: stop at the incumbent once it has multipliers
            if last.is_some() {
                sweeps = s - 1;
                break;
            }
        }
        let step = gram.quad(&(c_new.stacked() - c.stacked())).sqrt();
        let size = gram.norm(&c);
        active = sol.active.clone();
        c = c_new;
        f_cur = f_new;
        last = Some((sol, w_sum));
        if step <= settings.tol * (1.0 + size) {
            break;
        }
    }
    let (sol, w_sum) = last.expect("at least one sweep");
    package(&sol, constraints, q * w_sum / (2.0 * j), f_cur, sweeps)
}

fn feasible(c: &CoefVector, constraints: &ConstraintSet) -> bool {
    let x = c.stacked();
    let scale = 1.0 + constraints.ineq_rhs.amax();
    let eq_ok = constraints.eq_matrix.nrows() == 0
        || (&constraints.eq_matrix * x - &constraints.eq_rhs).amax() <= 1e-8 * (scale + x.amax());
    eq_ok
        && (&constraints.ineq_matrix * x - &constraints.ineq_rhs)
            .iter()
            .all(|&s| s >= -1e-9 * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, gram_h1, uniform_grid, BasisSystem, DesignMatrices};
    use crate::consensus::{constraint_matrices, reduced_constraints};
    use crate::qp::{oracle, QpProblem};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, m: usize, t_end: f64) -> (BasisSystem, BlockGram, DesignMatrices) {
        let b = build_basis(k, 3, t_end).unwrap();
        let g = BlockGram::new(&gram_h1(&b, 1.0).unwrap()).unwrap();
        let d = b.design_matrices(&uniform_grid(t_end, m)).unwrap();
        (b, g, d)
    }

    fn unconstrained(k: usize) -> ConstraintSet {
        ConstraintSet {
            eq_matrix: DMatrix::zeros(0, 2 * k),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, 2 * k),
            ineq_rhs: DVector::zeros(0),
            grid_points: 0,
        }
    }

    fn random_coef(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> CoefVector {
        CoefVector::from_stacked(DVector::from_fn(2 * k, |_, _| rng.random_range(lo..hi))).unwrap()
    }

    #[test]
    fn inactive_constraints_return_the_mean() {
        let (_, g, d) = setup(8, 10, 10.0);
        let cs = reduced_constraints(&d, 100.0);
        let c = CoefVector::from_stacked(DVector::from_element(16, 2.0)).unwrap();
        let sol = inner_solve_q2(&[c.clone(), c.clone(), c.clone()], &g, &cs).unwrap();
        assert!((sol.c.stacked() - c.stacked()).amax() < 1e-9);
        assert!(sol.lambda_exposed.amax() < 1e-9 && sol.lambda_population.amax() < 1e-9);
        assert!(sol.objective < 1e-15);
    }

    #[test]
    fn single_feasible_curve_is_returned() {
        // zero rates admit constant curves
        let (_, g, d) = setup(10, 9, 10.0);
        let cs = constraint_matrices(&d, 0.0, 0.0, 10.0);
        let mut c = DVector::zeros(20);
        c.rows_mut(0, 10).fill(1.5);
        c.rows_mut(10, 10).fill(2.0);
        let c = CoefVector::from_stacked(c).unwrap();
        let sol = inner_solve_q2(std::slice::from_ref(&c), &g, &cs).unwrap();
        assert!((sol.c.stacked() - c.stacked()).amax() < 1e-9);
    }

    #[test]
    fn toy_problems_match_active_set_enumeration() {
        let (_, g, d) = setup(4, 4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let sigma = rng.random_range(0.2..2.0);
            let gamma = rng.random_range(0.2..2.0);
            let cs = constraint_matrices(&d, sigma, gamma, 1.0);
            let cjs: Vec<CoefVector> = (0..3)
                .map(|_| random_coef(&mut rng, 4, -0.5, 1.2))
                .collect();
            let sol = inner_solve_q2(&cjs, &g, &cs).unwrap();
            let mean = mean_coefficients(&cjs);
            let h = g.full() * 2.0;
            let prob = QpProblem {
                linear: -(&h * &mean),
                hessian: h,
                eq_matrix: cs.eq_matrix.clone(),
                eq_rhs: cs.eq_rhs.clone(),
                ineq_matrix: cs.ineq_matrix.clone(),
                ineq_rhs: cs.ineq_rhs.clone(),
            };
            let x = oracle::enumerate(&prob).unwrap();
            assert!((sol.c.stacked() - &x).amax() <= 1e-6, "trial {trial}");
            assert!(sol.kkt_residual <= 1e-6);
        }
    }

    #[test]
    fn quadratic_power_is_one_projection() {
        let (_, g, d) = setup(6, 5, 5.0);
        let cs = constraint_matrices(&d, 0.5, 0.3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cjs: Vec<CoefVector> = (0..4).map(|_| random_coef(&mut rng, 6, 0.0, 0.3)).collect();
        let a = inner_solve_q2(&cjs, &g, &cs).unwrap();
        let b = inner_solve_irls(2.0, &cjs, &g, &cs, None, &IrlsSettings::default()).unwrap();
        assert_eq!(b.iterations, 1);
        assert_eq!(a.c, b.c);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        let (_, g, _) = setup(5, 4, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = random_coef(&mut rng, 5, -1.0, 1.0);
        let dir = random_coef(&mut rng, 5, -1.0, 1.0);
        let c1 = CoefVector::from_stacked(base.stacked() + dir.stacked()).unwrap();
        let c2 = CoefVector::from_stacked(base.stacked() - dir.stacked()).unwrap();
        let settings = IrlsSettings {
            eps_irls: 1e-10,
            ..Default::default()
        };
        let sol = inner_solve_irls(
            1.0,
            &[c1.clone(), c2.clone()],
            &g,
            &unconstrained(5),
            None,
            &settings,
        )
        .unwrap();
        assert!((sol.c.stacked() - base.stacked()).amax() < 1e-8);
    }

    #[test]
    fn power_mean_matches_grid_search() {
        // K = 3 needs degree ≤ 2
        let b = build_basis(3, 2, 1.0).unwrap();
        let g = BlockGram::new(&gram_h1(&b, 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cjs: Vec<CoefVector> = (0..3)
            .map(|_| {
                let mut v = DVector::zeros(6);
                for i in 0..3 {
                    v[i] = rng.random_range(-1.0..1.0);
                }
                CoefVector::from_stacked(v).unwrap()
            })
            .collect();
        let q = 1.5;
        let settings = IrlsSettings {
            eps_irls: 1e-14,
            tol: 1e-12,
            max_iter: 2000,
            ..Default::default()
        };
        let sol = inner_solve_irls(q, &cjs, &g, &unconstrained(3), None, &settings).unwrap();
        // the I block is identically zero in every input, so search over the E block
        let objective = |x: &[f64; 3]| {
            let mut v = DVector::zeros(6);
            v.rows_mut(0, 3).copy_from_slice(x);
            let c = CoefVector::from_stacked(v).unwrap();
            cjs.iter()
                .map(|cj| squared_distance(&c, cj, &g).powf(q / 2.0))
                .sum::<f64>()
        };
        let mut best = [0.0; 3];
        let mut best_f = f64::INFINITY;
        let steps = 40;
        for a in 0..=steps {
            for bb in 0..=steps {
                for cc in 0..=steps {
                    let x = [
                        -1.0 + 2.0 * a as f64 / steps as f64,
                        -1.0 + 2.0 * bb as f64 / steps as f64,
                        -1.0 + 2.0 * cc as f64 / steps as f64,
                    ];
                    let f = objective(&x);
                    if f < best_f {
                        best_f = f;
                        best = x;
                    }
                }
            }
        }
        // coordinate refinement with shrinking steps
        let mut h = 2.0 / steps as f64;
        while h > 1e-7 {
            let mut improved = false;
            for i in 0..3 {
                for s in [-h, h] {
                    let mut x = best;
                    x[i] += s;
                    let f = objective(&x);
                    if f < best_f {
                        best_f = f;
                        best = x;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        for i in 0..3 {
            assert!(
                (sol.c.stacked()[i] - best[i]).abs() <= 1e-4,
                "{:?} vs {:?}",
                sol.c,
                best
            );
        }
        assert!(sol.c.stacked().rows(3, 3).amax() < 1e-12);
    }

    #[test]
    fn irls_objective_is_monotone_and_duals_are_stationary() {
        let (_, g, d) = setup(8, 7, 10.0);
        let cs = constraint_matrices(&d, 0.4, 0.25, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cjs: Vec<CoefVector> = (0..5)
            .map(|_| random_coef(&mut rng, 8, -0.1, 0.6))
            .collect();
        let settings = IrlsSettings {
            eps_irls: 1e-10,
            ..Default::default()
        };
        let sol = inner_solve_irls(1.5, &cjs, &g, &cs, None, &settings).unwrap();
        // ∇F + Aᵀν − Cᵀλ ≈ 0 with ∇F = (q/J)Σ(D²+ε)^{q/2−1} G_Y (c − c_j)
        let q = 1.5;
        let mut grad = DVector::zeros(16);
        for cj in &cjs {
            let w = (squared_distance(&sol.c, cj, &g) + 1e-10).powf(q / 2.0 - 1.0);
            grad += g.apply(&(sol.c.stacked() - cj.stacked())) * (q * w / cjs.len() as f64);
        }
        let mut lam = DVector::zeros(3 * cs.grid_points);
        lam.rows_mut(0, cs.grid_points)
            .copy_from(&sol.lambda_exposed);
        lam.rows_mut(cs.grid_points, cs.grid_points)
            .copy_from(&sol.lambda_infectious);
        lam.rows_mut(2 * cs.grid_points, cs.grid_points)
            .copy_from(&sol.lambda_population);
        let stat = &grad + cs.eq_matrix.transpose() * &sol.nu - cs.ineq_matrix.transpose() * lam;
        assert!(stat.amax() <= 1e-6 * (1.0 + grad.amax()), "{}", stat.amax());
    }
}
