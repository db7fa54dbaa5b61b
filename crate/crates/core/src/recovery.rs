//! Full `(S, E, I, R)` state and transmission rate from a consensus `(Ê, Î, γ̂)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::consensus::{ConsensusSolution, Interval};
use crate::epi::{Compartment, SampledTrajectory};
use crate::error::{Error, Result};
use crate::fspace::CoefVector;

/// Which consensus a recovered trajectory came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub q: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub n_basis: usize,
    pub shifts: Vec<f64>,
}

impl Provenance {
    pub fn of(sol: &ConsensusSolution) -> Self {
        Provenance {
            q: sol.spec.q,
            sigma: sol.sigma,
            gamma: sol.gamma,
            n_basis: sol.spec.n_basis,
            shifts: sol.shifts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullTrajectory {
    pub grid: Vec<f64>,
    pub susceptible: Vec<f64>,
    pub exposed: Vec<f64>,
    pub infectious: Vec<f64>,
    pub removed: Vec<f64>,
    pub population: f64,
    pub provenance: Option<Provenance>,
}

impl FullTrajectory {
    /// Same CSV schema as simulated trajectories.
    pub fn to_sampled(&self) -> Result<SampledTrajectory> {
        let columns = BTreeMap::from([
            (Compartment::S, self.susceptible.clone()),
            (Compartment::E, self.exposed.clone()),
            (Compartment::I, self.infectious.clone()),
            (Compartment::R, self.removed.clone()),
        ]);
        SampledTrajectory::new(self.grid.clone(), columns, Some(self.population))
    }

    /// Takes `S, E, I, R` columns as given; `N` defaults to `S + E + I + R` at `t = 0`.
    pub fn from_sampled(traj: &SampledTrajectory) -> Result<Self> {
        let s = traj.column(Compartment::S)?.to_vec();
        let e = traj.exposed()?.to_vec();
        let i = traj.infectious()?.to_vec();
        let r = traj.column(Compartment::R)?.to_vec();
        let population = traj.population().unwrap_or(s[0] + e[0] + i[0] + r[0]);
        Ok(FullTrajectory {
            grid: traj.grid().to_vec(),
            susceptible: s,
            exposed: e,
            infectious: i,
            removed: r,
            population,
            provenance: None,
        })
    }
}

/// Evaluates `Ê, Î` and `R̂ = γ̂ Φ ĉ_I` on `grid`, with `Ŝ` by complement.
///
/// The constraints hold on the constraint grid only, so the curves may dip
/// below zero between its points. Negative `Ê, Î` are replaced by zero, and
/// where `Ŝ < 0` it is set to zero with `R̂ = N − Ê − Î`. `S + E + I + R = N`
/// holds exactly; dips beyond `10⁻⁶ N` (`10⁻⁴ N` for `Ê, Î`) log a warning.
pub fn recover_curves(
    basis: &BasisSystem,
    c_hat: &CoefVector,
    gamma: f64,
    population: f64,
    grid: &[f64],
) -> Result<FullTrajectory> {
    if c_hat.n_basis() != basis.n_basis() {
        return Err(Error::contract(format!(
            "{} coefficients per block for a basis of size {}",
            c_hat.n_basis(),
            basis.n_basis()
        )));
    }
    let design = basis.design_matrices(grid)?;
    let mut exposed: Vec<f64> = (&design.values * c_hat.exposed()).iter().copied().collect();
    let mut infectious: Vec<f64> = (&design.values * c_hat.infectious())
        .iter()
        .copied()
        .collect();
    // Nonnegativity holds on the constraint grid only; off it the spline may dip.
    let dip = exposed
        .iter()
        .chain(&infectious)
        .fold(0.0_f64, |m, &v| m.min(v));
    if dip < 0.0 {
        let level = if dip < -1e-4 * population {
            log::Level::Warn
        } else {
            log::Level::Info
        };
        log::log!(
            level,
            "off-grid E/I dip to {dip:e}; taking the positive part"
        );
        exposed
            .iter_mut()
            .chain(infectious.iter_mut())
            .for_each(|v| *v = v.max(0.0));
    }
    let mut removed: Vec<f64> = (&design.integrals * c_hat.infectious())
        .iter()
        .map(|v| gamma * v)
        .collect();
    let slack = 1e-6 * population;
    let (mut clamped, mut worst) = (0, 0.0_f64);
    let susceptible = (0..grid.len())
        .map(|m| {
            let s = population - exposed[m] - infectious[m] - removed[m];
            if s < 0.0 {
                clamped += 1;
                worst = worst.min(s);
                removed[m] = population - exposed[m] - infectious[m];
                0.0
            } else {
                s
            }
        })
        .collect::<Vec<f64>>();
    if clamped > 0 {
        let level = if worst < -slack {
            log::Level::Warn
        } else {
            log::Level::Info
        };
        log::log!(
            level,
            "clamped {clamped} negative S values to zero (lowest {worst:e}); R takes up the difference"
        );
    }
    Ok(FullTrajectory {
        grid: grid.to_vec(),
        susceptible,
        exposed,
        infectious,
        removed,
        population,
        provenance: None,
    })
}

pub fn recover_full(sol: &ConsensusSolution, grid: &[f64]) -> Result<FullTrajectory> {
    let mut full = recover_curves(&sol.basis, &sol.c_hat, sol.gamma, sol.spec.population, grid)?;
    full.provenance = Some(Provenance::of(sol));
    Ok(full)
}

/// Running composite-trapezoid integral, starting at 0.
fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for m in 1..grid.len() {
        acc += 0.5 * (grid[m] - grid[m - 1]) * (values[m] + values[m - 1]);
        out.push(acc);
    }
    out
}

/// Least-squares `β` in the integral form of the exposed equation:
/// `E(t) − E(0) + σ ∫₀ᵗ E = β ∫₀ᵗ S I / N` over the grid, clipped to `bounds`.
pub fn estimate_beta(full: &FullTrajectory, sigma: f64, bounds: Interval) -> Result<f64> {
    let n = full.population;
    let si: Vec<f64> = full
        .susceptible
        .iter()
        .zip(&full.infectious)
        .map(|(s, i)| s * i / n)
        .collect();
    let a = cumulative_trapezoid(&full.grid, &si);
    let int_e = cumulative_trapezoid(&full.grid, &full.exposed);
    let e0 = full.exposed[0];
    let (mut ab, mut aa) = (0.0, 0.0);
    for m in 0..full.grid.len() {
        let b = full.exposed[m] - e0 + sigma * int_e[m];
        ab += a[m] * b;
        aa += a[m] * a[m];
    }
    if !(aa > 0.0) {
        return Err(Error::Degenerate(
            "no transmission signal: the integral of S I / N vanishes".into(),
        ));
    }
    let beta = ab / aa;
    if !beta.is_finite() {
        return Err(Error::Numeric(format!("beta estimate is {beta}")));
    }
    Ok(bounds.clamp(beta))
}

/// Recovered rates with their reciprocal durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    pub sigma: f64,
    pub gamma: f64,
    pub beta: f64,
    pub r0: f64,
    pub incubation_days: f64,
    pub infectious_days: f64,
}

impl RecoveryParams {
    pub fn new(sigma: f64, gamma: f64, beta: f64) -> Self {
        RecoveryParams {
            sigma,
            gamma,
            beta,
            r0: beta / gamma,
            incubation_days: 1.0 / sigma,
            infectious_days: 1.0 / gamma,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::consensus::{fixtures, solve, ProblemSpec, RateBounds};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn basis() -> BasisSystem {
        build_basis(12, 3, 100.0).unwrap()
    }

    fn daily(horizon: f64) -> Vec<f64> {
        (0..=horizon as usize).map(|d| d as f64).collect()
    }

    #[test]
    fn zero_infectious_gives_zero_removed() {
        let b = basis();
        let ce = DVector::from_fn(12, |k, _| 10.0 * k as f64);
        let c = CoefVector::new(ce, DVector::zeros(12)).unwrap();
        let full = recover_curves(&b, &c, 0.3, 1000.0, &daily(100.0)).unwrap();
        assert!(full.removed.iter().all(|&r| r == 0.0));
        for (s, e) in full.susceptible.iter().zip(&full.exposed) {
            assert_eq!(*s, 1000.0 - e);
        }
    }

    #[test]
    fn compartments_sum_to_population() {
        let b = basis();
        let c = CoefVector::new(
            DVector::from_element(12, 3.0),
            DVector::from_fn(12, |k, _| (k as f64).sin().abs()),
        )
        .unwrap();
        let full = recover_curves(&b, &c, 0.2, 500.0, &daily(100.0)).unwrap();
        assert_eq!(full.removed[0], 0.0);
        for m in 0..full.grid.len() {
            let total =
                full.susceptible[m] + full.exposed[m] + full.infectious[m] + full.removed[m];
            assert!((total - 500.0).abs() <= 1e-12 * 500.0);
        }
    }

    #[test]
    fn removed_at_horizon_matches_simpson() {
        let b = basis();
        let ci = DVector::from_fn(12, |k, _| 1.0 + (k as f64 * 0.7).cos());
        let c = CoefVector::new(DVector::zeros(12), ci.clone()).unwrap();
        let gamma = 0.17;
        let full = recover_curves(&b, &c, gamma, 1e3, &[0.0, 100.0]).unwrap();
        let n = 20_000;
        let h = 100.0 / n as f64;
        let f = |t: f64| {
            b.eval(t)
                .unwrap()
                .iter()
                .zip(ci.iter())
                .map(|(p, c)| p * c)
                .sum::<f64>()
        };
        let mut simpson = f(0.0) + f(100.0);
        for k in 1..n {
            simpson += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        simpson *= h / 3.0;
        let expected = gamma * simpson;
        assert!(
            (full.removed[1] - expected).abs() <= 1e-6 * expected,
            "{} vs {expected}",
            full.removed[1]
        );
    }

    #[test]
    fn beta_from_an_exact_seir_curve() {
        let full = FullTrajectory::from_sampled(&fixtures::point_estimate_trajectory()).unwrap();
        let beta = estimate_beta(&full, 1.0 / 5.2, RateBounds::default().beta).unwrap();
        let beta0 = 2.2 / 7.5;
        assert!((beta - beta0).abs() < 0.02 * beta0, "{beta}");
    }

    #[test]
    fn no_epidemic_is_degenerate() {
        let grid = daily(50.0);
        let zeros = vec![0.0; grid.len()];
        let full = FullTrajectory {
            grid: grid.clone(),
            susceptible: vec![100.0; grid.len()],
            exposed: zeros.clone(),
            infectious: zeros.clone(),
            removed: zeros,
            population: 100.0,
            provenance: None,
        };
        assert!(matches!(
            estimate_beta(&full, 0.2, RateBounds::default().beta),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn beta_is_clipped_to_bounds() {
        let full = FullTrajectory::from_sampled(&fixtures::point_estimate_trajectory()).unwrap();
        let beta = estimate_beta(&full, 1.0 / 5.2, Interval::new(0.01, 0.1)).unwrap();
        assert_eq!(beta, 0.1);
    }

    #[test]
    fn single_curve_round_trip() {
        let traj = fixtures::point_estimate_trajectory();
        let spec = ProblemSpec {
            q: 1.0,
            n_basis: 60,
            ..Default::default()
        };
        let sol = solve(std::slice::from_ref(&traj), &spec).unwrap();
        let full = recover_full(&sol, traj.grid()).unwrap();
        let truth = FullTrajectory::from_sampled(&traj).unwrap();
        let pairs = [
            (&full.susceptible, &truth.susceptible),
            (&full.exposed, &truth.exposed),
            (&full.infectious, &truth.infectious),
            (&full.removed, &truth.removed),
        ];
        for (got, want) in pairs {
            let sup = got
                .iter()
                .zip(want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(sup < 1e-2 * spec.population, "{sup}");
        }
        let beta = estimate_beta(&full, sol.sigma, spec.bounds.beta).unwrap();
        for (got, want) in [
            (sol.sigma, 1.0 / 5.2),
            (sol.gamma, 1.0 / 7.5),
            (beta, 2.2 / 7.5),
        ] {
            assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn removed_is_monotone_for_nonnegative_infectious(ci in proptest::collection::vec(0.0f64..100.0, 12), gamma in 0.01f64..1.0) {
            let b = basis();
            let c = CoefVector::new(DVector::zeros(12), DVector::from_vec(ci)).unwrap();
            let full = recover_curves(&b, &c, gamma, 1e6, &daily(100.0)).unwrap();
            prop_assert_eq!(full.removed[0], 0.0);
            for w in full.removed.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
            }
        }
    }
}
