//! Pointwise mean and median of an ensemble, column by column.

use std::collections::BTreeMap;

use crate::epi::{Compartment, SampledTrajectory};
use crate::error::{Error, Result};

/// Columns present in every input.
fn shared_columns(trajs: &[SampledTrajectory]) -> Result<Vec<Compartment>> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::contract("at least one trajectory is required"))?;
    if let Some(j) = trajs.iter().position(|t| !t.same_grid(first)) {
        return Err(Error::contract(format!(
            "trajectory {j} is not on the common grid"
        )));
    }
    Ok(first
        .columns()
        .keys()
        .copied()
        .filter(|c| trajs.iter().all(|t| t.get(*c).is_some()))
        .collect())
}

fn pointwise(
    trajs: &[SampledTrajectory],
    keeps_population: bool,
    reduce: impl Fn(&mut [f64]) -> f64,
) -> Result<SampledTrajectory> {
    let cols = shared_columns(trajs)?;
    let first = &trajs[0];
    let mut out = BTreeMap::new();
    let mut scratch = vec![0.0; trajs.len()];
    for c in cols {
        let values = (0..first.len())
            .map(|m| {
                for (slot, t) in scratch.iter_mut().zip(trajs) {
                    *slot = t.get(c).expect("shared column")[m];
                }
                reduce(&mut scratch)
            })
            .collect();
        out.insert(c, values);
    }
    let population = first
        .population()
        .filter(|&n| keeps_population && trajs.iter().all(|t| t.population() == Some(n)));
    SampledTrajectory::new(first.grid().to_vec(), out, population)
}

pub fn pointwise_mean(trajs: &[SampledTrajectory]) -> Result<SampledTrajectory> {
    pointwise(trajs, true, |v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Lower median for even `J`, so every value comes from an input curve.
/// Column medians need not sum to `N`, so the result carries no population.
pub fn pointwise_median(trajs: &[SampledTrajectory]) -> Result<SampledTrajectory> {
    pointwise(trajs, false, |v| {
        v.sort_by(f64::total_cmp);
        v[(v.len() - 1) / 2]
    })
}
