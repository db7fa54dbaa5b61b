use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::Compartment;
use crate::error::{Error, Result};

/// Compartment values sampled on a strictly increasing time grid.
///
/// Invariants checked by [`SampledTrajectory::new`]: every column matches the
/// grid length and all values are finite. When the population is known,
/// values are `≥ −1e-9·N` and, if `S, E, I, R` are all present, their sum
/// stays within `1e-6·N` of `N` (extra compartments included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    grid: Vec<f64>,
    columns: BTreeMap<Compartment, Vec<f64>>,
    population: Option<f64>,
}

impl SampledTrajectory {
    pub fn new(
        grid: Vec<f64>,
        columns: BTreeMap<Compartment, Vec<f64>>,
        population: Option<f64>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::contract("trajectory grid is empty"));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(
                "trajectory grid must be finite and strictly increasing",
            ));
        }
        for (c, values) in &columns {
            if values.len() != grid.len() {
                return Err(Error::contract(format!(
                    "column {} has {} values for {} grid points",
                    c.label(),
                    values.len(),
                    grid.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!(
                    "column {} has non-finite values",
                    c.label()
                )));
            }
        }
        let traj = SampledTrajectory {
            grid,
            columns,
            population,
        };
        if let Some(n) = population {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::contract("population must be positive"));
            }
            traj.check_population(n)?;
        }
        Ok(traj)
    }

    /// Trajectory holding only the exposed and infectious columns.
    pub fn from_exposed_infectious(
        grid: Vec<f64>,
        exposed: Vec<f64>,
        infectious: Vec<f64>,
    ) -> Result<Self> {
        let mut columns = BTreeMap::new();
        columns.insert(Compartment::E, exposed);
        columns.insert(Compartment::I, infectious);
        Self::new(grid, columns, None)
    }

    fn check_population(&self, n: f64) -> Result<()> {
        let tol_neg = 1e-9 * n;
        for (c, values) in &self.columns {
            if let Some(v) = values.iter().find(|&&v| v < -tol_neg) {
                return Err(Error::contract(format!(
                    "column {} has value {v} below -1e-9 N",
                    c.label()
                )));
            }
        }
        let core = [
            Compartment::S,
            Compartment::E,
            Compartment::I,
            Compartment::R,
        ];
        if core.iter().all(|c| self.columns.contains_key(c)) {
            for m in 0..self.grid.len() {
                let total: f64 = self.columns.values().map(|v| v[m]).sum();
                if (total - n).abs() > 1e-6 * n {
                    return Err(Error::contract(format!(
                        "compartments sum to {total} at t = {}, population {n}",
                        self.grid[m]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn population(&self) -> Option<f64> {
        self.population
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is non-empty")
    }

    pub fn columns(&self) -> &BTreeMap<Compartment, Vec<f64>> {
        &self.columns
    }

    pub fn get(&self, c: Compartment) -> Option<&[f64]> {
        self.columns.get(&c).map(Vec::as_slice)
    }

    pub fn column(&self, c: Compartment) -> Result<&[f64]> {
        self.get(c)
            .ok_or_else(|| Error::contract(format!("trajectory lacks column {}", c.label())))
    }

    pub fn exposed(&self) -> Result<&[f64]> {
        self.column(Compartment::E)
    }

    pub fn infectious(&self) -> Result<&[f64]> {
        self.column(Compartment::I)
    }

    /// Same grid, columns replaced by `f(compartment, values)`.
    pub(crate) fn map_columns(&self, mut f: impl FnMut(Compartment, &[f64]) -> Vec<f64>) -> Self {
        SampledTrajectory {
            grid: self.grid.clone(),
            columns: self.columns.iter().map(|(&c, v)| (c, f(c, v))).collect(),
            population: self.population,
        }
    }

    /// Grid point of the first maximum of the infectious column.
    pub fn peak_time(&self) -> Result<f64> {
        let i = self.infectious()?;
        let mut best = 0;
        for (m, &v) in i.iter().enumerate() {
            if v > i[best] {
                best = m;
            }
        }
        Ok(self.grid[best])
    }

    pub fn same_grid(&self, other: &SampledTrajectory) -> bool {
        self.grid.len() == other.grid.len()
            && self
                .grid
                .iter()
                .zip(&other.grid)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    }
}
