//! Two-piece normal draws and ensemble simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{ModelParams, Rates, Variant};
use super::{integrate, SampledTrajectory};
use crate::error::{Error, Result};

/// Two-piece normal with median `point_estimate`; negative draws are replaced
/// by `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPieceNormalSpec {
    pub point_estimate: f64,
    pub s_left: f64,
    pub s_right: f64,
    pub floor: f64,
}

pub const DEFAULT_FLOOR: f64 = 1e-4;
const Z_975: f64 = 1.96;

impl TwoPieceNormalSpec {
    pub fn new(point_estimate: f64, s_left: f64, s_right: f64, floor: f64) -> Result<Self> {
        let spec = TwoPieceNormalSpec {
            point_estimate,
            s_left,
            s_right,
            floor,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spreads matched to a 95% interval `[lower, upper]`.
    pub fn from_interval(point_estimate: f64, lower: f64, upper: f64, floor: f64) -> Result<Self> {
        Self::new(
            point_estimate,
            (point_estimate - lower) / Z_975,
            (upper - point_estimate) / Z_975,
            floor,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.point_estimate.is_finite()
            && self.s_left > 0.0
            && self.s_right > 0.0
            && self.floor > 0.0)
        {
            return Err(Error::contract(format!(
                "invalid two-piece normal spec {self:?}"
            )));
        }
        if !(self.s_left.is_finite() && self.s_right.is_finite() && self.floor.is_finite()) {
            return Err(Error::contract("two-piece normal spreads must be finite"));
        }
        Ok(())
    }

    /// Deterministic map from a standard normal variate.
    pub fn transform(&self, z: f64) -> f64 {
        let x = if z < 0.0 {
            self.point_estimate + self.s_left * z
        } else {
            self.point_estimate + self.s_right * z
        };
        if x < 0.0 {
            self.floor
        } else {
            x
        }
    }
}

pub fn sample_two_piece_normal<R: Rng + ?Sized>(spec: &TwoPieceNormalSpec, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    spec.transform(z)
}

/// `(σ, γ, β) = (1/D_E, 1/D_I, R0/D_I)`.
pub fn params_from_quantities(
    incubation_days: f64,
    infectious_days: f64,
    r0: f64,
) -> Result<Rates> {
    if !(incubation_days > 0.0 && infectious_days > 0.0 && r0 > 0.0) {
        return Err(Error::contract(format!(
            "durations and R0 must be positive (got {incubation_days}, {infectious_days}, {r0})"
        )));
    }
    let removal = 1.0 / infectious_days;
    Ok(Rates {
        transmission: r0 * removal,
        progression: 1.0 / incubation_days,
        removal,
    })
}

/// Uncertainty specs for the three sampled quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpecs {
    pub incubation: TwoPieceNormalSpec,
    pub infectious: TwoPieceNormalSpec,
    pub r0: TwoPieceNormalSpec,
}

impl EnsembleSpecs {
    /// Incubation 5.2 (4.1–7.0), infectious period 7.5 (5.3–19.0), R0 2.2 (1.4–3.9).
    pub fn early_wuhan() -> Self {
        EnsembleSpecs {
            incubation: TwoPieceNormalSpec::from_interval(5.2, 4.1, 7.0, DEFAULT_FLOOR).unwrap(),
            infectious: TwoPieceNormalSpec::from_interval(7.5, 5.3, 19.0, DEFAULT_FLOOR).unwrap(),
            r0: TwoPieceNormalSpec::from_interval(2.2, 1.4, 3.9, DEFAULT_FLOOR).unwrap(),
        }
    }
}

/// Initial conditions, horizon and output grid shared by every ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonSetup {
    pub population: f64,
    pub exposed0: f64,
    pub infectious0: f64,
    pub horizon: f64,
    pub grid: Vec<f64>,
}

impl CommonSetup {
    /// `N = 1e6`, `(E0, I0) = (1, 0)`, daily grid on `[0, 720]`.
    pub fn standard() -> Self {
        CommonSetup {
            population: 1e6,
            exposed0: 1.0,
            infectious0: 0.0,
            horizon: 720.0,
            grid: daily_grid(720.0),
        }
    }
}

/// `0, 1, …, floor(horizon)` plus `horizon` itself when it is not integral.
pub fn daily_grid(horizon: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=horizon.floor() as usize).map(|d| d as f64).collect();
    if *g.last().unwrap() < horizon {
        g.push(horizon);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDraw {
    pub incubation_days: f64,
    pub infectious_days: f64,
    pub r0: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<SampledTrajectory>,
    pub draws: Vec<EnsembleDraw>,
    pub seed: u64,
}

/// Generator for ensemble member `index`: one ChaCha stream per member.
pub fn member_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn draw_member(specs: &EnsembleSpecs, seed: u64, index: usize) -> Result<EnsembleDraw> {
    let mut rng = member_rng(seed, index);
    let incubation_days = sample_two_piece_normal(&specs.incubation, &mut rng);
    let infectious_days = sample_two_piece_normal(&specs.infectious, &mut rng);
    let r0 = sample_two_piece_normal(&specs.r0, &mut rng);
    let rates = params_from_quantities(incubation_days, infectious_days, r0)?;
    Ok(EnsembleDraw {
        incubation_days,
        infectious_days,
        r0,
        sigma: rates.progression,
        gamma: rates.removal,
        beta: rates.transmission,
    })
}

pub fn simulate_member(draw: &EnsembleDraw, common: &CommonSetup) -> Result<SampledTrajectory> {
    let params = ModelParams {
        variant: Variant::Seir,
        rates: Rates {
            transmission: draw.beta,
            progression: draw.sigma,
            removal: draw.gamma,
        },
        population: common.population,
        exposed0: common.exposed0,
        infectious0: common.infectious0,
        horizon: common.horizon,
    };
    integrate(&params, &common.grid)
}

/// `count` SEIR trajectories with independently sampled `(D_E, D_I, R0)`.
/// Member `j` depends only on `(seed, j)`.
pub fn simulate_ensemble(
    count: usize,
    specs: &EnsembleSpecs,
    common: &CommonSetup,
    seed: u64,
) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::contract("ensemble size must be at least 1"));
    }
    for s in [&specs.incubation, &specs.infectious, &specs.r0] {
        s.validate()?;
    }
    let mut trajectories = Vec::with_capacity(count);
    let mut draws = Vec::with_capacity(count);
    for j in 0..count {
        let draw = draw_member(specs, seed, j).map_err(|e| e.at_trajectory(j))?;
        trajectories.push(simulate_member(&draw, common).map_err(|e| e.at_trajectory(j))?);
        draws.push(draw);
    }
    Ok(Ensemble {
        trajectories,
        draws,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_variate_returns_point_estimate() {
        let s = EnsembleSpecs::early_wuhan().incubation;
        assert_eq!(s.transform(0.0), 5.2);
        assert_eq!(s.transform(-0.0), 5.2);
    }

    #[test]
    fn interval_spreads() {
        let s = EnsembleSpecs::early_wuhan();
        assert_relative_eq!(s.incubation.s_left, 0.5612, epsilon = 1e-4);
        assert_relative_eq!(s.incubation.s_right, 0.9184, epsilon = 1e-4);
        assert_relative_eq!(s.infectious.s_left, 1.1224, epsilon = 1e-4);
        assert_relative_eq!(s.infectious.s_right, 5.8673, epsilon = 1e-4);
        assert_relative_eq!(s.r0.s_left, 0.4082, epsilon = 1e-4);
        assert_relative_eq!(s.r0.s_right, 0.8673, epsilon = 1e-4);
    }

    #[test]
    fn negative_draws_hit_floor() {
        let s = TwoPieceNormalSpec::new(-1.0, 0.5, 0.5, DEFAULT_FLOOR).unwrap();
        let mut rng = member_rng(3, 0);
        for _ in 0..2000 {
            let z: f64 = rng.sample(StandardNormal);
            let x = s.transform(z);
            if -1.0 + 0.5 * z < 0.0 {
                assert_eq!(x, DEFAULT_FLOOR);
            } else {
                assert!(x >= 0.0);
            }
        }
    }

    #[test]
    fn median_of_infectious_period_draws() {
        let s = EnsembleSpecs::early_wuhan().infectious;
        let mut rng = member_rng(11, 0);
        let n = 10_000;
        let below = (0..n)
            .filter(|_| sample_two_piece_normal(&s, &mut rng) <= 7.5)
            .count();
        // binomial standard error 0.005; allow 3 of them
        let frac = below as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.015, "fraction below median {frac}");
    }

    #[test]
    fn quantities_to_rates() {
        let r = params_from_quantities(5.2, 7.5, 2.2).unwrap();
        assert_relative_eq!(r.progression, 0.1923, epsilon = 5e-5);
        assert_relative_eq!(r.removal, 0.1333, epsilon = 5e-5);
        assert_relative_eq!(r.transmission, 0.2933, epsilon = 5e-5);
        let r = params_from_quantities(1.0, 1.0, 1.0).unwrap();
        assert_eq!((r.progression, r.removal, r.transmission), (1.0, 1.0, 1.0));
        let r = params_from_quantities(7.0, 2.16, 6.47).unwrap();
        assert_relative_eq!(r.removal, 0.46296, epsilon = 5e-6);
        assert_relative_eq!(r.transmission, 2.9954, epsilon = 5e-5);
        assert!(params_from_quantities(0.0, 1.0, 1.0).is_err());
        assert!(params_from_quantities(1.0, -1.0, 1.0).is_err());
        assert!(params_from_quantities(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ensemble_is_deterministic_and_spread() {
        let specs = EnsembleSpecs::early_wuhan();
        let common = CommonSetup::standard();
        let a = simulate_ensemble(5, &specs, &common, 2024).unwrap();
        let b = simulate_ensemble(5, &specs, &common, 2024).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.trajectories, b.trajectories);
        let mut peaks: Vec<f64> = a
            .trajectories
            .iter()
            .map(|t| t.peak_time().unwrap())
            .collect();
        peaks.sort_by(f64::total_cmp);
        peaks.dedup();
        assert_eq!(peaks.len(), 5);
        // member j is independent of the ensemble size
        let c = simulate_ensemble(2, &specs, &common, 2024).unwrap();
        assert_eq!(c.draws[..], a.draws[..2]);
    }

    #[test]
    fn zero_variance_ensemble_is_point_estimate() {
        let tiny = |p| TwoPieceNormalSpec::new(p, 1e-12, 1e-12, DEFAULT_FLOOR).unwrap();
        let specs = EnsembleSpecs {
            incubation: tiny(5.2),
            infectious: tiny(7.5),
            r0: tiny(2.2),
        };
        let common = CommonSetup::standard();
        let ens = simulate_ensemble(1, &specs, &common, 9).unwrap();
        let rates = params_from_quantities(5.2, 7.5, 2.2).unwrap();
        let params = ModelParams::seir(rates, 1e6, 1.0, 0.0, 720.0).unwrap();
        let reference = integrate(&params, &common.grid).unwrap();
        let a = ens.trajectories[0].infectious().unwrap();
        let b = reference.infectious().unwrap();
        let peak = b.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * peak);
        }
    }
}
