//! Browser bindings: simulate an ensemble, fit a consensus curve, and fit
//! the literature curves. Each call returns an SVG chart, plus the estimated
//! parameters as JSON for the fits.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use seir_consensus::consensus::ProblemSpec;
use seir_consensus::epi::{simulate_ensemble, CommonSetup, EnsembleSpecs, SampledTrajectory};
use seir_consensus::experiments::{estimate, infectious_figure};
use seir_consensus::io::{bundled_literature, literature_trajectories};
use seir_consensus::recovery::RecoveryParams;
use seir_consensus::Result;

#[derive(Debug, Serialize)]
pub struct Fit {
    pub svg: String,
    pub params: RecoveryParams,
    pub shifts: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn ensemble(j: usize, seed: u64) -> Result<Vec<SampledTrajectory>> {
    let ens = simulate_ensemble(
        j,
        &EnsembleSpecs::early_wuhan(),
        &CommonSetup::standard(),
        seed,
    )?;
    Ok(ens.trajectories)
}

fn fit(trajs: &[SampledTrajectory], q: f64, k: usize, title: &str) -> Result<Fit> {
    let spec = ProblemSpec {
        q,
        n_basis: k,
        ..Default::default()
    };
    spec.validate()?;
    let est = estimate(trajs, &spec)?;
    let svg = infectious_figure(title, trajs, std::slice::from_ref(&est))?.to_svg();
    Ok(Fit {
        svg,
        params: est.params,
        shifts: est.solution.shifts.clone(),
        iterations: est.solution.diagnostics.outer.len(),
        converged: est.solution.converged,
    })
}

pub fn ensemble_svg(j: usize, seed: u64) -> Result<String> {
    let trajs = ensemble(j, seed)?;
    let title = format!("{j} simulated trajectories (seed {seed})");
    Ok(infectious_figure(&title, &trajs, &[])?.to_svg())
}

pub fn ensemble_fit(j: usize, seed: u64, q: f64, k: usize) -> Result<Fit> {
    let trajs = ensemble(j, seed)?;
    fit(
        &trajs,
        q,
        k,
        &format!("Consensus of {j} simulated trajectories"),
    )
}

pub fn literature_fit(q: f64, k: usize) -> Result<Fit> {
    let trajs = literature_trajectories(&bundled_literature(), &CommonSetup::standard())?;
    fit(
        &trajs,
        q,
        k,
        "Consensus of the literature-derived trajectories",
    )
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn to_json(fit: Fit) -> std::result::Result<String, JsError> {
    serde_json::to_string(&fit).map_err(|e| JsError::new(&e.to_string()))
}

/// SVG of `j` sampled trajectories with their pointwise mean and median.
#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(j: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(ensemble_svg(j, seed))
}

/// Consensus of a sampled ensemble, as JSON `{svg, params, shifts, iterations, converged}`.
#[wasm_bindgen(js_name = summarize)]
pub fn summarize_js(j: usize, seed: u64, q: f64, k: usize) -> std::result::Result<String, JsError> {
    to_json(js(ensemble_fit(j, seed, q, k))?)
}

/// Consensus of the bundled literature curves, in the same JSON shape.
#[wasm_bindgen(js_name = literature)]
pub fn literature_js(q: f64, k: usize) -> std::result::Result<String, JsError> {
    to_json(js(literature_fit(q, k))?)
}
