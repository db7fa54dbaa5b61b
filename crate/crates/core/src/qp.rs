//! Convex quadratic programs with linear equality and inequality constraints.
//!
//! ```text
//! minimize ½xᵀHx + gᵀx   subject to   Ax = b,  Cx ≥ d
//! ```
//!
//! Equalities are eliminated through an orthonormal null-space basis `Z`
//! (`x = x_p + Zy`). The reduced inequality problem is solved by a
//! Mehrotra predictor-corrector interior-point method and then polished by an
//! exact solve on the identified active set. Multipliers follow
//! `Hx + g + Aᵀν − Cᵀλ = 0` with `λ ≥ 0`; `ν` is the minimum-norm solution
//! when `A` is rank deficient.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-10,
            max_iter: 200,
            polish: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub objective: f64,
    /// Max of scaled stationarity, primal infeasibility and complementarity.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Inequality rows treated as active by the polish step.
    pub active: Vec<usize>,
    pub polished: bool,
}

/// Constraint data with the equality elimination and reduced Hessian factored once.
#[derive(Debug, Clone)]
pub struct PreparedQp {
    hessian: DMatrix<f64>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
    null_basis: DMatrix<f64>,
    particular: DVector<f64>,
    /// Reduced, row-normalized inequality rows for the kept constraints.
    reduced_rows: DMatrix<f64>,
    reduced_rhs: DVector<f64>,
    kept: Vec<usize>,
    row_norms: Vec<f64>,
    reduced_hessian: DMatrix<f64>,
    reduced_chol: Option<Cholesky<f64, Dyn>>,
    eq_svd: Option<SVD<f64, Dyn, Dyn>>,
    eq_rank_tol: f64,
    settings: QpSettings,
}

impl PreparedQp {
    pub fn new(
        hessian: DMatrix<f64>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        settings: QpSettings,
    ) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n {
            return Err(Error::contract("Hessian must be square"));
        }
        if eq_matrix.nrows() > 0 && eq_matrix.ncols() != n || eq_matrix.nrows() != eq_rhs.len() {
            return Err(Error::contract(
                "equality block has inconsistent dimensions",
            ));
        }
        if ineq_matrix.nrows() > 0 && ineq_matrix.ncols() != n
            || ineq_matrix.nrows() != ineq_rhs.len()
        {
            return Err(Error::contract(
                "inequality block has inconsistent dimensions",
            ));
        }
        let p = eq_matrix.nrows();
        let m = ineq_matrix.nrows();

        let (null_basis, particular, eq_svd, eq_rank_tol) = if p == 0 {
            (DMatrix::identity(n, n), DVector::zeros(n), None, 0.0)
        } else {
            let rows = p.max(n);
            let mut padded = DMatrix::zeros(rows, n);
            padded.view_mut((0, 0), (p, n)).copy_from(&eq_matrix);
            let svd = SVD::new(padded, false, true);
            let vt = svd.v_t.as_ref().expect("requested V");
            let smax = svd.singular_values.max();
            let tol = RANK_TOL * smax.max(f64::MIN_POSITIVE);
            let null_idx: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
            let mut z = DMatrix::zeros(n, null_idx.len());
            for (c, &i) in null_idx.iter().enumerate() {
                z.set_column(c, &vt.row(i).transpose());
            }
            let thin = SVD::new(eq_matrix.clone(), true, true);
            let xp = thin
                .solve(&eq_rhs, tol)
                .map_err(|e| Error::Numeric(format!("equality solve: {e}")))?;
            let resid = (&eq_matrix * &xp - &eq_rhs).amax();
            if resid > 1e-9 * (1.0 + eq_rhs.amax()) {
                let row = (&eq_matrix * &xp - &eq_rhs).iamax();
                return Err(Error::Infeasible {
                    row,
                    violation: resid,
                });
            }
            (z, xp, Some(thin), tol)
        };

        let nz = null_basis.ncols();
        let reduced_hessian = {
            let q = null_basis.transpose() * &hessian * &null_basis;
            (&q + q.transpose()) * 0.5
        };
        let reduced_chol =
            if nz > 0 {
                Some(Cholesky::new(reduced_hessian.clone()).ok_or_else(|| {
                    Error::Numeric("reduced Hessian is not positive definite".into())
                })?)
            } else {
                None
            };

        let cz = &ineq_matrix * &null_basis;
        let shifted_rhs = if m > 0 {
            &ineq_rhs - &ineq_matrix * &particular
        } else {
            DVector::zeros(0)
        };
        let mut kept = Vec::new();
        let mut row_norms = Vec::new();
        let row_scale = cz.amax().max(f64::MIN_POSITIVE);
        for i in 0..m {
            let norm = cz.row(i).norm();
            if norm > 1e-14 * row_scale {
                kept.push(i);
                row_norms.push(norm);
            } else if shifted_rhs[i] > 1e-9 * (1.0 + shifted_rhs.amax()) {
                return Err(Error::Infeasible {
                    row: i,
                    violation: shifted_rhs[i],
                });
            }
        }
        let mut reduced_rows = DMatrix::zeros(kept.len(), nz);
        let mut reduced_rhs = DVector::zeros(kept.len());
        for (r, (&i, &norm)) in kept.iter().zip(&row_norms).enumerate() {
            reduced_rows.set_row(r, &(cz.row(i) / norm));
            reduced_rhs[r] = shifted_rhs[i] / norm;
        }

        Ok(PreparedQp {
            hessian,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
            null_basis,
            particular,
            reduced_rows,
            reduced_rhs,
            kept,
            row_norms,
            reduced_hessian,
            reduced_chol,
            eq_svd,
            eq_rank_tol,
            settings,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    /// Solve for the linear term `g`. A guessed active set (original row
    /// indices) is tried first with a single equality-constrained solve.
    pub fn solve(&self, linear: &DVector<f64>, guess: Option<&[usize]>) -> Result<QpSolution> {
        if linear.len() != self.n_vars() {
            return Err(Error::contract("linear term has wrong length"));
        }
        let nz = self.null_dim();
        let f_red = self.null_basis.transpose() * (&self.hessian * &self.particular + linear);

        if nz == 0 {
            return self.finish(
                linear,
                DVector::zeros(0),
                DVector::zeros(self.kept.len()),
                0,
                Vec::new(),
                false,
            );
        }
        let chol = self.reduced_chol.as_ref().expect("factored when nz > 0");

        if self.kept.is_empty() {
            let y = -chol.solve(&f_red);
            return self.finish(linear, y, DVector::zeros(0), 0, Vec::new(), false);
        }

        // scaled variables y = κ ŷ, objective divided by τκ²
        let kappa = self.reduced_rhs.amax().max(1.0);
        let tau = self
            .reduced_hessian
            .amax()
            .max(f_red.amax() / kappa)
            .max(f64::MIN_POSITIVE);
        let f_hat = &f_red / (tau * kappa);
        let h_hat = &self.reduced_rhs / kappa;

        if let Some(guess) = guess {
            let local: Vec<usize> = guess
                .iter()
                .filter_map(|g| self.kept.iter().position(|k| k == g))
                .collect();
            if let Ok((y, lam)) = self.active_set_solve(chol, tau, &f_hat, &h_hat, &local) {
                let active = local.iter().map(|&r| self.kept[r]).collect();
                return self.finish(linear, y * kappa, lam * (tau * kappa), 0, active, true);
            }
        }

        let (y_hat, lam_hat, iterations) = self.interior_point(chol, tau, kappa, &f_hat, &h_hat)?;

        if self.settings.polish {
            let slack = &self.reduced_rows * &y_hat - &h_hat;
            let local: Vec<usize> = (0..self.kept.len())
                .filter(|&r| lam_hat[r] > slack[r])
                .collect();
            if let Some((y, lam, local)) = self.refine_active_set(chol, tau, &f_hat, &h_hat, &local)
            {
                let active = local.iter().map(|&r| self.kept[r]).collect();
                return self.finish(
                    linear,
                    y * kappa,
                    lam * (tau * kappa),
                    iterations,
                    active,
                    true,
                );
            }
        }
        let slack = &self.reduced_rows * &y_hat - &h_hat;
        let active = (0..self.kept.len())
            .filter(|&r| lam_hat[r] > slack[r])
            .map(|r| self.kept[r])
            .collect();
        let lam = lam_hat.map(|v| v.max(0.0)) * (tau * kappa);
        self.finish(linear, y_hat * kappa, lam, iterations, active, false)
    }

    /// Active-set refinement from `start`: drop the most negative multiplier
    /// or add the most violated row until the exact KKT solve is primal and
    /// dual feasible. Returns the scaled primal, the kept-row multipliers and
    /// the final active rows.
    fn refine_active_set(
        &self,
        chol: &Cholesky<f64, Dyn>,
        tau: f64,
        f_hat: &DVector<f64>,
        h_hat: &DVector<f64>,
        start: &[usize],
    ) -> Option<(DVector<f64>, DVector<f64>, Vec<usize>)> {
        let mut local = start.to_vec();
        let max_rounds = 2 * self.kept.len() + 10;
        for _ in 0..max_rounds {
            match self.active_set_solve(chol, tau, f_hat, h_hat, &local) {
                Ok((y, lam)) => return Some((y, lam, local)),
                Err(Rejection::Singular) => return None,
                Err(Rejection::Negative(pos)) => {
                    local.remove(pos);
                }
                Err(Rejection::Violated(row)) => {
                    if local.contains(&row) {
                        return None;
                    }
                    local.push(row);
                    local.sort_unstable();
                }
            }
        }
        None
    }

    /// Exact KKT solve with the rows `local` held at equality.
    fn active_set_solve(
        &self,
        chol: &Cholesky<f64, Dyn>,
        tau: f64,
        f_hat: &DVector<f64>,
        h_hat: &DVector<f64>,
        local: &[usize],
    ) -> std::result::Result<(DVector<f64>, DVector<f64>), Rejection> {
        let q_inv_f = chol.solve(f_hat) * tau;
        let na = local.len();
        let mut lam_full = DVector::zeros(self.kept.len());
        let y = if na == 0 {
            -q_inv_f
        } else {
            let mut ga = DMatrix::zeros(na, self.null_dim());
            let mut ha = DVector::zeros(na);
            for (r, &i) in local.iter().enumerate() {
                ga.set_row(r, &self.reduced_rows.row(i));
                ha[r] = h_hat[i];
            }
            // Q̂ = Q/τ, so Q̂⁻¹ = τ Q⁻¹
            let q_inv_gt = chol.solve(&ga.transpose()) * tau;
            let schur = &ga * &q_inv_gt;
            let schur = (&schur + schur.transpose()) * 0.5;
            let rhs = &ha + &ga * &q_inv_f;
            let svd = SVD::new(schur, true, true);
            let lam_a = svd
                .solve(
                    &rhs,
                    1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE),
                )
                .map_err(|_| Rejection::Singular)?;
            let y = &q_inv_gt * &lam_a - &q_inv_f;
            let eq_res = (&ga * &y - &ha).amax();
            if eq_res > 1e-9 * (1.0 + ha.amax() + y.amax()) {
                return Err(Rejection::Singular);
            }
            let lam_scale = lam_a.amax().max(1.0);
            let worst = lam_a.imin();
            if lam_a[worst] < -1e-9 * lam_scale {
                return Err(Rejection::Negative(worst));
            }
            for (r, &i) in local.iter().enumerate() {
                lam_full[i] = lam_a[r].max(0.0);
            }
            y
        };
        let slack = &self.reduced_rows * &y - h_hat;
        let feas_tol = 1e-10 * (1.0 + h_hat.amax() + y.amax());
        let row = slack.imin();
        if !slack.is_empty() && slack[row] < -feas_tol {
            return Err(Rejection::Violated(row));
        }
        Ok((y, lam_full))
    }

    fn interior_point(
        &self,
        chol: &Cholesky<f64, Dyn>,
        tau: f64,
        kappa: f64,
        f: &DVector<f64>,
        h: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, usize)> {
        let g = &self.reduced_rows;
        let q = &self.reduced_hessian / tau;
        let m = g.nrows();
        let tol = self.settings.tol;

        let mut y = -(chol.solve(f) * tau);
        let r0 = g * &y - h;
        let mut s = r0.map(|v| v.max(1.0));
        let mut lam = DVector::from_element(m, 1.0);
        let f_norm = f.amax();
        let h_norm = h.amax();

        let mut last_progress = f64::INFINITY;
        for iter in 1..=self.settings.max_iter {
            let r_d = &q * &y + f - g.transpose() * &lam;
            let r_p = g * &y - &s - h;
            let mu = s.dot(&lam) / m as f64;
            let res = (r_d.amax() / (1.0 + f_norm))
                .max(r_p.amax() / (1.0 + h_norm))
                .max(mu);
            if res <= tol {
                return Ok((y, lam, iter));
            }
            if !res.is_finite() {
                break;
            }

            let d = lam.component_div(&s);
            let mut kkt = q.clone();
            let gd = DMatrix::from_fn(m, g.ncols(), |i, j| g[(i, j)] * d[i]);
            kkt += g.transpose() * gd;
            let kkt = (&kkt + kkt.transpose()) * 0.5;
            let Some(kchol) = regularized_cholesky(kkt) else {
                break;
            };

            let solve_dir = |r_c: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
                // r_c is the target for S Δλ + Λ Δs
                let tmp = (r_c - lam.component_mul(&r_p)).component_div(&s);
                let rhs = -&r_d + g.transpose() * tmp;
                let dy = kchol.solve(&rhs);
                let ds = g * &dy + &r_p;
                let dl = (r_c - lam.component_mul(&ds)).component_div(&s);
                (dy, ds, dl)
            };

            let rc_aff = -s.component_mul(&lam);
            let (_, ds_a, dl_a) = solve_dir(&rc_aff);
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a)).min(1.0);
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&lam + &dl_a * alpha_aff)) / m as f64;
            let centering = (mu_aff / mu).powi(3).min(1.0);
            let rc = &rc_aff - ds_a.component_mul(&dl_a) + DVector::from_element(m, centering * mu);
            let (dy, ds, dl) = solve_dir(&rc);
            let alpha = (0.995 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
            y += &dy * alpha;
            s += &ds * alpha;
            lam += &dl * alpha;
            if alpha < 1e-12 && res >= last_progress {
                break;
            }
            last_progress = res;
        }
        // no convergence: report the worst violation of the original rows
        let x = &self.particular + &self.null_basis * (&y * kappa);
        let viol = &self.ineq_rhs - &self.ineq_matrix * &x;
        let row = viol.iamax();
        if !viol.is_empty() && viol[row] > 0.0 {
            Err(Error::Infeasible {
                row,
                violation: viol[row],
            })
        } else {
            Err(Error::Stall(
                "interior-point iterations did not converge".into(),
            ))
        }
    }

    fn finish(
        &self,
        linear: &DVector<f64>,
        y: DVector<f64>,
        lam_kept: DVector<f64>,
        iterations: usize,
        active: Vec<usize>,
        polished: bool,
    ) -> Result<QpSolution> {
        let x = if self.null_dim() > 0 {
            &self.particular + &self.null_basis * &y
        } else {
            self.particular.clone()
        };
        let m = self.ineq_matrix.nrows();
        let mut lam = DVector::zeros(m);
        for (r, &i) in self.kept.iter().enumerate() {
            lam[i] = lam_kept[r] / self.row_norms[r];
        }
        let hx = &self.hessian * &x;
        let mut stat = &hx + linear;
        if m > 0 {
            stat -= self.ineq_matrix.transpose() * &lam;
        }
        let nu = match &self.eq_svd {
            Some(svd) => {
                // Aᵀν = −stat, minimum-norm: ν = U Σ⁺ Vᵀ(−stat)
                let u = svd.u.as_ref().expect("requested U");
                let vt = svd.v_t.as_ref().expect("requested V");
                let proj = vt * (-&stat);
                let mut scaled = DVector::zeros(proj.len());
                for i in 0..proj.len() {
                    let sv = svd.singular_values[i];
                    if sv > self.eq_rank_tol {
                        scaled[i] = proj[i] / sv;
                    }
                }
                u * scaled
            }
            None => DVector::zeros(0),
        };
        if self.eq_matrix.nrows() > 0 {
            stat += self.eq_matrix.transpose() * &nu;
        }
        let objective = 0.5 * x.dot(&hx) + linear.dot(&x);
        let scale = 1.0 + linear.amax() + hx.amax();
        let mut kkt = stat.amax() / scale;
        if self.eq_matrix.nrows() > 0 {
            kkt =
                kkt.max((&self.eq_matrix * &x - &self.eq_rhs).amax() / (1.0 + self.eq_rhs.amax()));
        }
        if m > 0 {
            let slack = &self.ineq_matrix * &x - &self.ineq_rhs;
            let rhs_scale = 1.0 + self.ineq_rhs.amax() + x.amax();
            let infeas = slack.iter().fold(0.0f64, |a, &s| a.max(-s));
            let comp = slack
                .iter()
                .zip(lam.iter())
                .fold(0.0f64, |a, (&s, &l)| a.max((s.max(0.0) * l).abs()));
            kkt = kkt.max(infeas / rhs_scale).max(comp / (scale * rhs_scale));
        }
        Ok(QpSolution {
            x,
            eq_duals: nu,
            ineq_duals: lam,
            objective,
            kkt_residual: kkt,
            iterations,
            active,
            polished,
        })
    }
}

enum Rejection {
    Singular,
    /// Position in the active list of the most negative multiplier.
    Negative(usize),
    /// Kept row with the largest violation.
    Violated(usize),
}

fn regularized_cholesky(mut m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(c);
        }
        let bump = if reg == 0.0 {
            1e-14 * scale
        } else {
            reg * 100.0
        };
        for i in 0..m.nrows() {
            m[(i, i)] += bump - reg;
        }
        reg = bump;
    }
    None
}

/// Largest `α ∈ (0, ∞)` with `v + α dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Dense problem description for one-off solves.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

pub fn solve_qp(problem: &QpProblem, settings: QpSettings) -> Result<QpSolution> {
    PreparedQp::new(
        problem.hessian.clone(),
        problem.eq_matrix.clone(),
        problem.eq_rhs.clone(),
        problem.ineq_matrix.clone(),
        problem.ineq_rhs.clone(),
        settings,
    )?
    .solve(&problem.linear, None)
}

/// Reference solver for checking [`QpSolver`] on small problems.
pub mod oracle {
    use super::*;

    /// Brute-force active-set enumeration for strictly convex problems: every
    /// subset of inequality rows up to the free dimension is held at equality
    /// and the feasible KKT point with dual-feasible multipliers is returned.
    pub fn enumerate(problem: &QpProblem) -> Option<DVector<f64>> {
        let n = problem.hessian.nrows();
        let p = problem.eq_matrix.nrows();
        let m = problem.ineq_matrix.nrows();
        let max_active = n.min(m);
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut subset = Vec::new();
        fn recurse(
            start: usize,
            m: usize,
            max_active: usize,
            subset: &mut Vec<usize>,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            visit(subset);
            if subset.len() == max_active {
                return;
            }
            for i in start..m {
                subset.push(i);
                recurse(i + 1, m, max_active, subset, visit);
                subset.pop();
            }
        }
        let mut visit = |active: &[usize]| {
            let na = active.len();
            let size = n + p + na;
            let mut kkt = DMatrix::zeros(size, size);
            let mut rhs = DVector::zeros(size);
            kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
            rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
            for r in 0..p {
                for j in 0..n {
                    kkt[(n + r, j)] = problem.eq_matrix[(r, j)];
                    kkt[(j, n + r)] = problem.eq_matrix[(r, j)];
                }
                rhs[n + r] = problem.eq_rhs[r];
            }
            for (r, &i) in active.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + p + r, j)] = problem.ineq_matrix[(i, j)];
                    kkt[(j, n + p + r)] = -problem.ineq_matrix[(i, j)];
                }
                rhs[n + p + r] = problem.ineq_rhs[i];
            }
            let svd = SVD::new(kkt.clone(), true, true);
            let Ok(sol) = svd.solve(&rhs, 1e-11 * svd.singular_values.max()) else {
                return;
            };
            if (&kkt * &sol - &rhs).amax() > 1e-8 * (1.0 + rhs.amax()) {
                return;
            }
            let x = sol.rows(0, n).into_owned();
            let slack = &problem.ineq_matrix * &x - &problem.ineq_rhs;
            if slack.iter().any(|&s| s < -1e-9) {
                return;
            }
            if (0..na).any(|r| sol[n + p + r] < -1e-9) {
                return;
            }
            let obj = 0.5 * x.dot(&(&problem.hessian * &x)) + problem.linear.dot(&x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        };
        recurse(0, m, max_active, &mut subset, &mut visit);
        best.map(|(_, x)| x)
    }
}
