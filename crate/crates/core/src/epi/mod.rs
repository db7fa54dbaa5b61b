//! SEIR-type models, numerical integration and ensemble sampling.

mod dopri;
mod model;
mod sampling;
mod trajectory;

pub use dopri::{integrate_on_grid, Tolerances};
pub use model::{rhs, Compartment, ModelParams, Rates, Variant};
pub use sampling::{
    daily_grid, draw_member, member_rng, params_from_quantities, sample_two_piece_normal,
    simulate_ensemble, simulate_member, CommonSetup, Ensemble, EnsembleDraw, EnsembleSpecs,
    TwoPieceNormalSpec, DEFAULT_FLOOR,
};
pub use trajectory::SampledTrajectory;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Integrates the model from `(N − E0 − I0, E0, I0, 0, [0])` at `t = 0` and
/// samples the dense output on `grid`. Negative round-off is clamped to zero.
pub fn integrate(params: &ModelParams, grid: &[f64]) -> Result<SampledTrajectory> {
    params.validate()?;
    if grid.is_empty() {
        return Err(Error::contract("output grid is empty"));
    }
    if grid[0] < 0.0 || *grid.last().unwrap() > params.horizon * (1.0 + 1e-12) {
        return Err(Error::contract("output grid must lie in [0, T]"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::contract("output grid must be strictly increasing"));
    }
    let starts_late = grid[0] > 0.0;
    let times: Vec<f64> = if starts_late {
        std::iter::once(0.0).chain(grid.iter().copied()).collect()
    } else {
        grid.to_vec()
    };
    let mut rows = integrate_on_grid(
        |_, y, dy| model::rhs_into(params, y, dy),
        &params.initial_state(),
        &times,
        Tolerances::default(),
    )?;
    if starts_late {
        rows.remove(0);
    }

    let compartments = params.variant.compartments();
    let mut columns: BTreeMap<Compartment, Vec<f64>> = BTreeMap::new();
    let mut clamped = 0usize;
    for (k, &c) in compartments.iter().enumerate() {
        let col: Vec<f64> = rows
            .iter()
            .map(|r| {
                if r[k] < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    r[k]
                }
            })
            .collect();
        columns.insert(c, col);
    }
    if clamped > 0 {
        log::debug!("clamped {clamped} negative compartment values to zero");
    }
    SampledTrajectory::new(grid.to_vec(), columns, Some(params.population))
}
