//! Constrained power Fréchet mean of shifted `(E, I)` curves.
//!
//! The outer loop alternates a profile optimization over the rates
//! `(σ, γ)` (the coefficients are minimized out by a convex inner problem)
//! with per-curve shift updates that keep `Σδ_j = 0`.
//!
//! Internally all populations are divided by `N`; the problem is homogeneous
//! in `N`, so minimizers are unchanged and the inner QPs stay well scaled.

mod constraints;
mod inner;
mod profile;
mod shifts;
mod solve;

pub use constraints::{constraint_matrices, reduced_constraints, ConstraintSet};
pub use inner::{
    effective_power, inner_solve_irls, inner_solve_q2, smoothed_objective, InnerSolution,
    IrlsSettings,
};
pub use profile::{
    fit_rates_ls, gamma_upper_bound, init_solution, optimize_profile, profile_value_and_gradient,
    ProfileContext, ProfileOutcome, ProfilePoint,
};
pub use shifts::{center_shifts, init_shifts, update_shifts, ShiftObjective, ShiftUpdate};
pub use solve::{solve, ConsensusSolution, FeasibilityReport, OuterRecord, SolveDiagnostics};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite()) {
            return Err(Error::contract(format!(
                "{name} bounds must satisfy 0 < lo < hi < inf (got [{}, {}])",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub sigma: Interval,
    pub gamma: Interval,
    pub beta: Interval,
}

impl Default for RateBounds {
    fn default() -> Self {
        RateBounds {
            sigma: Interval::new(1e-3, 2.0),
            gamma: Interval::new(1e-3, 2.0),
            beta: Interval::new(1e-3, 10.0),
        }
    }
}

/// Every knob of the discretized problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default = "defaults::q")]
    pub q: f64,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(rename = "K", default = "defaults::n_basis")]
    pub n_basis: usize,
    #[serde(default = "defaults::degree")]
    pub degree: usize,
    /// Constraint grid intervals; `None` means `K − 1`.
    #[serde(rename = "M", default)]
    pub grid_intervals: Option<usize>,
    #[serde(default)]
    pub bounds: RateBounds,
    #[serde(default = "defaults::delta_max")]
    pub delta_max: f64,
    #[serde(rename = "N", default = "defaults::population")]
    pub population: f64,
    #[serde(rename = "T", default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::eps_q")]
    pub eps_q: f64,
    /// IRLS regularizer in squared-count units; `None` derives it from the data.
    #[serde(default)]
    pub eps_irls: Option<f64>,
    #[serde(default = "defaults::tol_outer")]
    pub tol_outer: f64,
    #[serde(default = "defaults::max_outer")]
    pub max_outer: usize,
}

mod defaults {
    pub fn q() -> f64 {
        1.0
    }
    pub fn rho() -> f64 {
        1.0
    }
    pub fn n_basis() -> usize {
        30
    }
    pub fn degree() -> usize {
        3
    }
    pub fn delta_max() -> f64 {
        120.0
    }
    pub fn population() -> f64 {
        1e6
    }
    pub fn horizon() -> f64 {
        720.0
    }
    pub fn eps_q() -> f64 {
        1e-3
    }
    pub fn tol_outer() -> f64 {
        1e-3
    }
    pub fn max_outer() -> usize {
        50
    }
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            q: defaults::q(),
            rho: defaults::rho(),
            n_basis: defaults::n_basis(),
            degree: defaults::degree(),
            grid_intervals: None,
            bounds: RateBounds::default(),
            delta_max: defaults::delta_max(),
            population: defaults::population(),
            horizon: defaults::horizon(),
            eps_q: defaults::eps_q(),
            eps_irls: None,
            tol_outer: defaults::tol_outer(),
            max_outer: defaults::max_outer(),
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::contract(format!(
                "power q = {} must be positive",
                self.q
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::contract(format!(
                "metric scale rho = {} must be positive",
                self.rho
            )));
        }
        if self.n_basis < self.degree + 1 {
            return Err(Error::contract("K must be at least degree + 1"));
        }
        if self.grid_intervals == Some(0) {
            return Err(Error::contract("M must be at least 1"));
        }
        self.bounds.sigma.validate("sigma")?;
        self.bounds.gamma.validate("gamma")?;
        self.bounds.beta.validate("beta")?;
        if !(self.delta_max >= 0.0 && self.delta_max.is_finite()) {
            return Err(Error::contract("delta_max must be non-negative"));
        }
        if !(self.population > 0.0 && self.population.is_finite()) {
            return Err(Error::contract("population N must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::contract("horizon T must be positive"));
        }
        if !(self.eps_q > 0.0 && self.eps_q < 1.0) {
            return Err(Error::contract("eps_q must lie in (0, 1)"));
        }
        if let Some(e) = self.eps_irls {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::contract("eps_irls must be positive"));
            }
        }
        if !(self.tol_outer > 0.0) || self.max_outer == 0 {
            return Err(Error::contract(
                "tol_outer must be positive and max_outer at least 1",
            ));
        }
        Ok(())
    }

    /// Resolved constraint-grid size `M`.
    pub fn intervals(&self) -> usize {
        self.grid_intervals.unwrap_or(self.n_basis - 1).max(1)
    }
}

#[cfg(test)]
pub(crate) mod fixtures;
