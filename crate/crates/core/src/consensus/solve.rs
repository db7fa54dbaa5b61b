use web_time::Instant;

use serde::{Deserialize, Serialize};

use super::shifts::update_shifts;
use super::{
    constraint_matrices, effective_power, init_shifts, init_solution, optimize_profile,
    smoothed_objective, InnerSolution, IrlsSettings, ProblemSpec, ProfileContext, ProfileOutcome,
};
use crate::basis::{build_basis, gram_h1, uniform_grid, BasisSystem, DesignMatrices, Fitter};
use crate::epi::SampledTrajectory;
use crate::error::{Error, Result};
use crate::fspace::{squared_distance, BlockGram, CoefVector, ShiftableCurve};

/// Halvings of a rejected shift step before the outer loop stops.
const MAX_SHIFT_HALVINGS: usize = 4;

/// Constraint residuals of a solution, in counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub min_exposed: f64,
    pub min_infectious: f64,
    /// `max_m (E + I + γ∫I − N)`; non-positive when the cap holds.
    pub max_cap_excess: f64,
    /// `‖B′ĉ_I − σ̂Bĉ_E + γ̂Bĉ_I‖_∞` on the constraint grid.
    pub equality_residual: f64,
    pub max_infectious: f64,
    /// The same residual sampled ten times per grid interval.
    pub between_grid_residual: f64,
    /// `|Σ_j δ_j|`.
    pub centering_residual: f64,
    pub max_abs_shift: f64,
}

impl FeasibilityReport {
    pub fn equality_relative(&self) -> f64 {
        self.equality_residual / self.max_infectious.max(f64::MIN_POSITIVE)
    }

    /// Violations of the solution invariants, empty when all hold.
    pub fn violations(&self, population: f64, delta_max: f64) -> Vec<String> {
        let slack = 1e-6 * population;
        let mut out = Vec::new();
        if self.min_exposed < -slack {
            out.push(format!("E dips to {:e}", self.min_exposed));
        }
        if self.min_infectious < -slack {
            out.push(format!("I dips to {:e}", self.min_infectious));
        }
        if self.max_cap_excess > slack {
            out.push(format!(
                "population cap exceeded by {:e}",
                self.max_cap_excess
            ));
        }
        if self.equality_relative() > 1e-4 {
            out.push(format!(
                "ODE residual {:e} of max I",
                self.equality_relative()
            ));
        }
        if self.centering_residual > 1e-8 {
            out.push(format!("shifts sum to {:e}", self.centering_residual));
        }
        if self.max_abs_shift > delta_max {
            out.push(format!("shift {} exceeds delta_max", self.max_abs_shift));
        }
        out
    }
}

/// State of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub sigma: f64,
    pub gamma: f64,
    /// `V_q(σ, γ)` at the accepted shifts, in counts to the power `q`.
    pub profile_value: f64,
    pub relative_change: f64,
    pub profile_evaluations: usize,
    pub profile_stop: String,
    pub used_fallback: bool,
    pub gradient_mismatch: f64,
    pub irls_iterations: usize,
    pub centering_mu: f64,
    /// Halvings of the shift step before the profile value stopped increasing.
    pub shift_backtracks: usize,
    pub shift_accepted: bool,
}

impl OuterRecord {
    fn new(outcome: &ProfileOutcome, change: f64, mu: f64, backtracks: usize, unit: f64) -> Self {
        OuterRecord {
            sigma: outcome.point.sigma,
            gamma: outcome.point.gamma,
            profile_value: outcome.point.value / unit,
            relative_change: change,
            profile_evaluations: outcome.evaluations,
            profile_stop: format!("{:?}", outcome.reason),
            used_fallback: outcome.used_fallback,
            gradient_mismatch: outcome.gradient_mismatch,
            irls_iterations: outcome.point.inner.iterations,
            centering_mu: mu,
            shift_backtracks: backtracks,
            shift_accepted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// `q` after the `1 + eps_q` substitution.
    pub effective_q: f64,
    /// IRLS regularizer in squared-count units.
    pub eps_irls: f64,
    pub init_sigma: f64,
    pub init_gamma: f64,
    pub init_shifts: Vec<f64>,
    pub outer: Vec<OuterRecord>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConsensusSolution {
    pub spec: ProblemSpec,
    pub basis: BasisSystem,
    pub constraint_grid: Vec<f64>,
    /// Coefficients in counts.
    pub c_hat: CoefVector,
    pub sigma: f64,
    pub gamma: f64,
    pub shifts: Vec<f64>,
    pub objective_trace: Vec<f64>,
    /// `F(ĉ, δ̂)` in counts to the power `q`.
    pub final_objective: f64,
    /// Inner solution at `(σ̂, γ̂)`, multipliers rescaled to counts.
    pub inner: InnerSolution,
    pub converged: bool,
    pub feasibility: FeasibilityReport,
    pub diagnostics: SolveDiagnostics,
}

impl ConsensusSolution {
    pub fn design(&self) -> Result<DesignMatrices> {
        self.basis.design_matrices(&self.constraint_grid)
    }
}

struct Workspace {
    basis: BasisSystem,
    gram: BlockGram,
    design: DesignMatrices,
    fitter: Fitter,
    curves: Vec<ShiftableCurve>,
    scale: f64,
}

impl Workspace {
    fn coefficients(&self, shifts: &[f64]) -> Result<Vec<CoefVector>> {
        self.curves
            .iter()
            .zip(shifts)
            .enumerate()
            .map(|(j, (c, &d))| {
                c.coefficients(d, &self.fitter)
                    .map(|v| v.scaled(self.scale))
                    .map_err(|e| e.at_trajectory(j))
            })
            .collect()
    }
}

fn check_inputs(trajs: &[SampledTrajectory], spec: &ProblemSpec) -> Result<()> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::contract("at least one trajectory is required"))?;
    let grid = first.grid();
    if grid[0].abs() > 1e-9 * spec.horizon
        || (first.horizon() - spec.horizon).abs() > 1e-9 * spec.horizon
    {
        return Err(Error::contract(format!(
            "trajectory grid [{}, {}] does not span [0, T = {}]",
            grid[0],
            first.horizon(),
            spec.horizon
        )));
    }
    if let Some(j) = trajs.iter().position(|t| !t.same_grid(first)) {
        return Err(Error::contract(format!(
            "trajectory {j} is not on the common grid"
        )));
    }
    Ok(())
}

/// Median pairwise `D²`, or the mean squared norm for a single curve.
fn auto_eps(curves: &[CoefVector], gram: &BlockGram) -> f64 {
    let mut d2 = Vec::new();
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            d2.push(squared_distance(&curves[a], &curves[b], gram));
        }
    }
    let base = if d2.is_empty() {
        curves.iter().map(|c| gram.quad(c.stacked())).sum::<f64>() / curves.len() as f64
    } else {
        d2.sort_by(f64::total_cmp);
        d2[(d2.len() - 1) / 2]
    };
    (1e-8 * base).max(1e-30)
}

/// Alternating minimization over `(c, σ, γ)` and the shifts.
///
/// Each outer iteration minimizes the profile `V_q` at the current shifts,
/// then moves every shift to its best value against `ĉ` and re-centers.
/// A shift step is accepted once the re-optimized profile value does not
/// exceed the current one; otherwise it is halved toward the current shifts.
pub fn solve(trajs: &[SampledTrajectory], spec: &ProblemSpec) -> Result<ConsensusSolution> {
    let started = Instant::now();
    spec.validate()?;
    check_inputs(trajs, spec)?;
    let basis = build_basis(spec.n_basis, spec.degree, spec.horizon)?;
    let gram = BlockGram::new(&gram_h1(&basis, spec.rho)?)?;
    let design = basis.design_matrices(&uniform_grid(spec.horizon, spec.intervals()))?;
    let fitter = Fitter::new(&basis, trajs[0].grid())?;
    let curves = trajs
        .iter()
        .map(ShiftableCurve::new)
        .collect::<Result<Vec<_>>>()?;
    let ws = Workspace {
        basis,
        gram,
        design,
        fitter,
        curves,
        scale: 1.0 / spec.population,
    };
    let q = effective_power(spec.q, spec.eps_q);
    let j = trajs.len();

    let mut shifts = init_shifts(trajs, spec.delta_max)?;
    let init_shift_vec = shifts.clone();
    let mut cjs = ws.coefficients(&shifts)?;
    let eps = match spec.eps_irls {
        Some(e) => e * ws.scale * ws.scale,
        None => auto_eps(&cjs, &ws.gram),
    };
    let irls = IrlsSettings {
        eps_q: spec.eps_q,
        eps_irls: eps,
        ..Default::default()
    };
    fn context<'a>(
        ws: &'a Workspace,
        curves: &'a [CoefVector],
        q: f64,
        spec: &ProblemSpec,
        irls: IrlsSettings,
    ) -> ProfileContext<'a> {
        ProfileContext {
            curves,
            gram: &ws.gram,
            design: &ws.design,
            q,
            population: 1.0,
            bounds: spec.bounds,
            irls,
        }
    }
    let (init_inner, init_sigma, init_gamma) = init_solution(&context(&ws, &cjs, q, spec, irls))?;
    log::debug!("initial rates ({init_sigma:.5}, {init_gamma:.5}), shifts {shifts:?}");

    let first = optimize_profile(
        &context(&ws, &cjs, q, spec, irls),
        (init_sigma, init_gamma),
        Some(&init_inner),
    )?;
    let first_change = ((first.point.sigma - init_sigma) / init_sigma)
        .abs()
        .max(((first.point.gamma - init_gamma) / init_gamma).abs());
    let mut outer = vec![OuterRecord::new(
        &first,
        first_change,
        0.0,
        0,
        ws.scale.powf(q),
    )];
    let mut trace = vec![first.point.value / ws.scale.powf(q)];
    let mut point = first.point;
    let mut converged = false;
    for r in 2..=spec.max_outer {
        let update = update_shifts(
            &point.inner.c,
            &ws.curves,
            &ws.fitter,
            &ws.gram,
            ws.scale,
            spec.delta_max,
            &shifts,
        )?;
        let mut candidate = update.centered.clone();
        let mut backtracks = 0;
        let accepted = loop {
            let trial_cjs = ws.coefficients(&candidate)?;
            let outcome = optimize_profile(
                &context(&ws, &trial_cjs, q, spec, irls),
                (point.sigma, point.gamma),
                Some(&point.inner),
            )
            .inspect_err(|_e| {
                log::error!("outer iteration {r}: profile step failed at shifts={candidate:?}");
            })?;
            if outcome.point.value <= point.value {
                break Some((candidate, trial_cjs, outcome));
            }
            if backtracks == MAX_SHIFT_HALVINGS {
                break None;
            }
            backtracks += 1;
            candidate = shifts
                .iter()
                .zip(&candidate)
                .map(|(o, n)| 0.5 * (o + n))
                .collect();
        };
        let Some((new_shifts, new_cjs, outcome)) = accepted else {
            // The iterate is a fixed point of the guarded update.
            log::info!("outer iteration {r}: no shift step lowered the profile value; stopping");
            let mut record = outer.last().expect("first iteration recorded").clone();
            record.relative_change = 0.0;
            record.profile_evaluations = 0;
            record.centering_mu = update.mu;
            record.shift_backtracks = backtracks;
            record.shift_accepted = false;
            outer.push(record);
            converged = true;
            break;
        };
        let mut change = ((outcome.point.sigma - point.sigma) / point.sigma)
            .abs()
            .max(((outcome.point.gamma - point.gamma) / point.gamma).abs());
        for (a, b) in new_shifts.iter().zip(&shifts) {
            change = change.max((a - b).abs() / a.abs().max(1.0));
        }
        outer.push(OuterRecord::new(
            &outcome,
            change,
            update.mu,
            backtracks,
            ws.scale.powf(q),
        ));
        log::debug!(
            "outer {r}: sigma={:.6} gamma={:.6} V={:.6e} change={change:.2e}",
            outcome.point.sigma,
            outcome.point.gamma,
            outcome.point.value
        );
        trace.push(outcome.point.value / ws.scale.powf(q));
        point = outcome.point;
        shifts = new_shifts;
        cjs = new_cjs;
        if change < spec.tol_outer {
            converged = true;
            break;
        }
    }
    let (sigma, gamma) = (point.sigma, point.gamma);
    let inner = point.inner;
    if !converged {
        log::warn!(
            "outer loop stopped after {} iterations without meeting tol_outer",
            spec.max_outer
        );
    }
    let final_objective = smoothed_objective(&inner.c, &cjs, &ws.gram, q, eps) / ws.scale.powf(q);
    let inner = inner.to_counts(spec.population, q);
    let feasibility = feasibility_report(
        &ws.basis,
        &ws.design,
        &inner.c,
        sigma,
        gamma,
        spec.population,
        &shifts,
    )?;
    let diagnostics = SolveDiagnostics {
        effective_q: q,
        eps_irls: eps / (ws.scale * ws.scale),
        init_sigma,
        init_gamma,
        init_shifts: init_shift_vec,
        outer,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    debug_assert_eq!(shifts.len(), j);
    Ok(ConsensusSolution {
        spec: spec.clone(),
        constraint_grid: ws.design.grid.clone(),
        basis: ws.basis,
        c_hat: inner.c.clone(),
        sigma,
        gamma,
        shifts,
        objective_trace: trace,
        final_objective,
        inner,
        converged,
        feasibility,
        diagnostics,
    })
}

/// Residuals of `c` (in counts) on the constraint grid and between it.
pub(crate) fn feasibility_report(
    basis: &BasisSystem,
    design: &DesignMatrices,
    c: &CoefVector,
    sigma: f64,
    gamma: f64,
    population: f64,
    shifts: &[f64],
) -> Result<FeasibilityReport> {
    let ode = |d: &DesignMatrices| {
        let e = &d.values * c.exposed();
        let i = &d.values * c.infectious();
        let r = &d.derivs * c.infectious() - &e * sigma + &i * gamma;
        (e, i, r)
    };
    let (e, i, r) = ode(design);
    let cs = constraint_matrices(design, sigma, gamma, population);
    let cap = (&cs.ineq_matrix * c.stacked())
        .rows(cs.population_rows().start, cs.grid_points)
        .map(|v| -v - population);
    let grid = &design.grid;
    let mut fine = Vec::with_capacity(10 * grid.len());
    for w in grid.windows(2) {
        for s in 0..10 {
            fine.push(w[0] + (w[1] - w[0]) * s as f64 / 10.0);
        }
    }
    fine.push(*grid.last().unwrap());
    let (_, i_fine, r_fine) = ode(&basis.design_matrices(&fine)?);
    Ok(FeasibilityReport {
        min_exposed: e.min(),
        min_infectious: i.min(),
        max_cap_excess: cap.max(),
        equality_residual: r.amax(),
        max_infectious: i.amax().max(i_fine.amax()),
        between_grid_residual: r_fine.amax(),
        centering_residual: shifts.iter().sum::<f64>().abs(),
        max_abs_shift: shifts.iter().fold(0.0_f64, |a, d| a.max(d.abs())),
    })
}
