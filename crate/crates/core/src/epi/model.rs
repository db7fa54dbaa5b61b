//! SEIR-type compartmental models.
//!
//! State vectors always start with `[S, E, I, R]`; the variants with an extra
//! compartment append it at index 4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compartment labels, ordered as they appear in trajectory files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
    U,
    Q,
    D,
}

impl Compartment {
    pub const ALL: [Compartment; 7] = [
        Compartment::S,
        Compartment::E,
        Compartment::I,
        Compartment::R,
        Compartment::U,
        Compartment::Q,
        Compartment::D,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::E => "E",
            Compartment::I => "I",
            Compartment::R => "R",
            Compartment::U => "U",
            Compartment::Q => "Q",
            Compartment::D => "D",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == label)
    }
}

/// Model structure together with the parameters specific to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum Variant {
    Seir,
    /// `E → I` at rate `fσ`, `E → U` at `(1−f)σ`, both `I` and `U` removed at `γ`.
    /// Unreported cases transmit like reported ones.
    Seiur {
        reported_fraction: f64,
    },
    /// `I → Q` at `quarantine_rate`, `Q → R` at `release_rate`.
    Seiqr {
        quarantine_rate: f64,
        release_rate: f64,
    },
    /// `I → R` at `fγ`, `I → D` at `(1−f)γ`.
    Seird {
        recovered_fraction: f64,
    },
}

impl Variant {
    pub fn dimension(&self) -> usize {
        match self {
            Variant::Seir => 4,
            _ => 5,
        }
    }

    pub fn extra_compartment(&self) -> Option<Compartment> {
        match self {
            Variant::Seir => None,
            Variant::Seiur { .. } => Some(Compartment::U),
            Variant::Seiqr { .. } => Some(Compartment::Q),
            Variant::Seird { .. } => Some(Compartment::D),
        }
    }

    pub fn compartments(&self) -> Vec<Compartment> {
        let mut out = vec![
            Compartment::S,
            Compartment::E,
            Compartment::I,
            Compartment::R,
        ];
        out.extend(self.extra_compartment());
        out
    }
}

/// Per-day rates shared by every variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Transmission rate β.
    pub transmission: f64,
    /// Progression rate σ out of the exposed state.
    pub progression: f64,
    /// Removal rate γ out of the infectious state.
    pub removal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    pub rates: Rates,
    pub population: f64,
    pub exposed0: f64,
    pub infectious0: f64,
    pub horizon: f64,
}

impl ModelParams {
    /// Plain SEIR with validation.
    pub fn seir(
        rates: Rates,
        population: f64,
        exposed0: f64,
        infectious0: f64,
        horizon: f64,
    ) -> Result<Self> {
        let p = ModelParams {
            variant: Variant::Seir,
            rates,
            population,
            exposed0,
            infectious0,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    /// `β = 0` is accepted so that the decoupled linear system can be simulated.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rates;
        let finite = [
            r.transmission,
            r.progression,
            r.removal,
            self.population,
            self.exposed0,
            self.infectious0,
            self.horizon,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::contract("model parameters must be finite"));
        }
        if r.transmission < 0.0 || r.progression <= 0.0 || r.removal <= 0.0 {
            return Err(Error::contract(
                "rates must satisfy beta >= 0, sigma > 0, gamma > 0",
            ));
        }
        match self.variant {
            Variant::Seir => {}
            Variant::Seiur {
                reported_fraction: f,
            }
            | Variant::Seird {
                recovered_fraction: f,
            } => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::contract(format!("proportion {f} outside [0, 1]")));
                }
            }
            Variant::Seiqr {
                quarantine_rate,
                release_rate,
            } => {
                if !(quarantine_rate > 0.0 && release_rate > 0.0) {
                    return Err(Error::contract(
                        "quarantine and release rates must be positive",
                    ));
                }
            }
        }
        if self.exposed0 < 0.0 || self.infectious0 < 0.0 || self.exposed0 + self.infectious0 <= 0.0
        {
            return Err(Error::contract(
                "initial E0, I0 must be non-negative with E0 + I0 > 0",
            ));
        }
        if self.population - self.exposed0 - self.infectious0 <= 0.0 {
            return Err(Error::contract(
                "initial susceptible count N - E0 - I0 must be positive",
            ));
        }
        if self.horizon <= 0.0 {
            return Err(Error::contract("horizon must be positive"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.variant.dimension()];
        y[0] = self.population - self.exposed0 - self.infectious0;
        y[1] = self.exposed0;
        y[2] = self.infectious0;
        y
    }
}

/// Right-hand side of the ODE. Flows are paired so the components sum to zero.
pub fn rhs(params: &ModelParams, state: &[f64], _t: f64) -> Result<Vec<f64>> {
    let dim = params.variant.dimension();
    if state.len() != dim {
        return Err(Error::contract(format!(
            "state has {} components, variant needs {dim}",
            state.len()
        )));
    }
    let mut out = vec![0.0; dim];
    rhs_into(params, state, &mut out);
    Ok(out)
}

pub(crate) fn rhs_into(params: &ModelParams, y: &[f64], dy: &mut [f64]) {
    let Rates {
        transmission: beta,
        progression: sigma,
        removal: gamma,
    } = params.rates;
    let n = params.population;
    let (s, e, i) = (y[0], y[1], y[2]);
    match params.variant {
        Variant::Seir => {
            let infection = beta * s * i / n;
            let onset = sigma * e;
            let removal = gamma * i;
            dy[0] = -infection;
            dy[1] = infection - onset;
            dy[2] = onset - removal;
            dy[3] = removal;
        }
        Variant::Seiur {
            reported_fraction: f,
        } => {
            let u = y[4];
            let infection = beta * s * (i + u) / n;
            let reported = f * sigma * e;
            let unreported = (1.0 - f) * sigma * e;
            let removed_i = gamma * i;
            let removed_u = gamma * u;
            dy[0] = -infection;
            dy[1] = infection - reported - unreported;
            dy[2] = reported - removed_i;
            dy[3] = removed_i + removed_u;
            dy[4] = unreported - removed_u;
        }
        Variant::Seiqr {
            quarantine_rate,
            release_rate,
        } => {
            let q = y[4];
            let infection = beta * s * i / n;
            let onset = sigma * e;
            let removal = gamma * i;
            let quarantined = quarantine_rate * i;
            let released = release_rate * q;
            dy[0] = -infection;
            dy[1] = infection - onset;
            dy[2] = onset - removal - quarantined;
            dy[3] = removal + released;
            dy[4] = quarantined - released;
        }
        Variant::Seird {
            recovered_fraction: f,
        } => {
            let infection = beta * s * i / n;
            let onset = sigma * e;
            let recovered = f * gamma * i;
            let deceased = (1.0 - f) * gamma * i;
            dy[0] = -infection;
            dy[1] = infection - onset;
            dy[2] = onset - recovered - deceased;
            dy[3] = recovered;
            dy[4] = deceased;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_estimate() -> ModelParams {
        ModelParams::seir(
            Rates {
                transmission: 0.2933,
                progression: 0.1923,
                removal: 0.1333,
            },
            1e6,
            1.0,
            0.0,
            720.0,
        )
        .unwrap()
    }

    fn all_variants() -> Vec<ModelParams> {
        let base = point_estimate();
        [
            Variant::Seir,
            Variant::Seiur {
                reported_fraction: 0.6,
            },
            Variant::Seiqr {
                quarantine_rate: 0.05,
                release_rate: 0.07,
            },
            Variant::Seird {
                recovered_fraction: 0.98,
            },
        ]
        .into_iter()
        .map(|variant| ModelParams { variant, ..base })
        .collect()
    }

    #[test]
    fn initial_seed_only_moves_exposed_to_infectious() {
        let p = point_estimate();
        let d = rhs(&p, &[1e6 - 1.0, 1.0, 0.0, 0.0], 0.0).unwrap();
        assert!((d[1] + 0.1923).abs() < 1e-12);
        assert!((d[2] - 0.1923).abs() < 1e-12);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn disease_free_state_is_an_equilibrium() {
        for p in all_variants() {
            let mut y = vec![0.0; p.variant.dimension()];
            y[0] = 9e5;
            y[3] = 1e5;
            let d = rhs(&p, &y, 3.0).unwrap();
            assert!(d.iter().all(|&v| v == 0.0), "{:?}", p.variant);
        }
    }

    #[test]
    fn flows_balance() {
        for p in all_variants() {
            let mut y = vec![4e5, 1.7e5, 2.2e5, 2e5];
            if p.variant.dimension() == 5 {
                y.push(1e4);
            }
            let d = rhs(&p, &y, 0.0).unwrap();
            let total: f64 = d.iter().sum();
            let scale: f64 = d.iter().map(|v| v.abs()).sum();
            assert!(total.abs() <= 1e-15 * scale, "{:?}: {total}", p.variant);
        }
        let p = point_estimate();
        let d = rhs(&p, &[3e5, 2e5, 1e5, 4e5], 0.0).unwrap();
        assert_eq!(d.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let p = point_estimate();
        assert!(matches!(
            rhs(&p, &[1.0, 2.0, 3.0], 0.0),
            Err(Error::Contract(_))
        ));
        let p5 = all_variants()[1];
        assert!(rhs(&p5, &[1.0, 2.0, 3.0, 4.0], 0.0).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = point_estimate();
        p.rates.progression = 0.0;
        assert!(p.validate().is_err());
        let mut p = point_estimate();
        p.exposed0 = 0.0;
        assert!(p.validate().is_err());
        let mut p = point_estimate();
        p.variant = Variant::Seird {
            recovered_fraction: 1.5,
        };
        assert!(p.validate().is_err());
        let mut p = point_estimate();
        p.variant = Variant::Seiqr {
            quarantine_rate: 0.0,
            release_rate: 1.0,
        };
        assert!(p.validate().is_err());
    }
}
