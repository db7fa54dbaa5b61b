//! Shared test inputs: the point-estimate SEIR curve and small sampled ensembles.

use super::{IrlsSettings, ProfileContext, RateBounds};
use crate::basis::{build_basis, gram_h1, uniform_grid, BasisSystem, DesignMatrices, Fitter};
use crate::epi::{
    integrate, params_from_quantities, simulate_ensemble, CommonSetup, EnsembleSpecs, ModelParams,
    SampledTrajectory,
};
use crate::fspace::{shifted_coefficients, BlockGram, CoefVector};

pub struct Setup {
    pub basis: BasisSystem,
    pub gram: BlockGram,
    pub design: DesignMatrices,
    pub fitter: Fitter,
    pub trajectories: Vec<SampledTrajectory>,
    /// Fitted coefficients divided by `N`.
    pub curves: Vec<CoefVector>,
    pub scale: f64,
}

impl Setup {
    pub fn context(&self, q: f64) -> ProfileContext<'_> {
        let eps_irls = 1e-8
            * self
                .curves
                .iter()
                .map(|c| self.gram.quad(c.stacked()))
                .sum::<f64>()
            / self.curves.len() as f64;
        ProfileContext {
            curves: &self.curves,
            gram: &self.gram,
            design: &self.design,
            q: super::effective_power(q, 1e-3),
            population: 1.0,
            bounds: RateBounds::default(),
            irls: IrlsSettings {
                eps_irls: eps_irls.max(1e-300),
                ..Default::default()
            },
        }
    }
}

fn build(trajectories: Vec<SampledTrajectory>, k: usize, m: usize, population: f64) -> Setup {
    let horizon = trajectories[0].horizon();
    let basis = build_basis(k, 3, horizon).unwrap();
    let gram = BlockGram::new(&gram_h1(&basis, 1.0).unwrap()).unwrap();
    let design = basis.design_matrices(&uniform_grid(horizon, m)).unwrap();
    let fitter = Fitter::new(&basis, trajectories[0].grid()).unwrap();
    let scale = 1.0 / population;
    let curves = trajectories
        .iter()
        .map(|t| shifted_coefficients(t, 0.0, &fitter).unwrap().scaled(scale))
        .collect();
    Setup {
        basis,
        gram,
        design,
        fitter,
        trajectories,
        curves,
        scale,
    }
}

/// SEIR with `(D_E, D_I, R0) = (5.2, 7.5, 2.2)`, `N = 1e6`, `(E0, I0) = (1, 0)` on the daily grid.
pub fn point_estimate_trajectory() -> SampledTrajectory {
    let common = CommonSetup::standard();
    let rates = params_from_quantities(5.2, 7.5, 2.2).unwrap();
    let p = ModelParams::seir(
        rates,
        common.population,
        common.exposed0,
        common.infectious0,
        common.horizon,
    )
    .unwrap();
    integrate(&p, &common.grid).unwrap()
}

pub fn point_estimate_setup(k: usize, m: usize) -> Setup {
    build(vec![point_estimate_trajectory()], k, m, 1e6)
}

/// `j` members of the standard sampled ensemble.
pub fn small_ensemble(j: usize, k: usize, m: usize, seed: u64) -> Setup {
    let common = CommonSetup::standard();
    let ens = simulate_ensemble(j, &EnsembleSpecs::early_wuhan(), &common, seed).unwrap();
    build(ens.trajectories, k, m, common.population)
}
