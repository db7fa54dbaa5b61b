use std::path::{Path, PathBuf};
use std::time::Instant;

use seir_consensus::baselines::{pointwise_mean, pointwise_median};
use seir_consensus::basis::build_basis;
use seir_consensus::consensus::ProblemSpec;
use seir_consensus::epi::{
    daily_grid, draw_member, integrate, ModelParams, Rates, SampledTrajectory,
};
use seir_consensus::experiments::{
    estimate, infectious_figure, realdata_table, Estimate, ReplicationPlan, ResultsTable,
};
use seir_consensus::fspace::resample;
use seir_consensus::io::{
    bundled_literature, literature_trajectories, parse_literature, parse_trajectory_csv, read_file,
    read_trajectory_csv, to_json_pretty, trajectory_to_csv, write_file, EnsembleManifest,
    EnsembleMember, FileDigest, Literature, RunManifest, SolutionManifest,
};
use seir_consensus::plot::LineChart;
use seir_consensus::recovery::{estimate_beta, recover_curves, RecoveryParams};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Collects outputs and inputs for the run manifest.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn new(command: &str, config: &RunConfig, out: &Path) -> Self {
        let mut manifest = RunManifest::new(command, config.snapshot(), Some(config.seed));
        manifest
            .versions
            .insert("cli".into(), env!("CARGO_PKG_VERSION").into());
        if let Some(src) = &config.source {
            manifest.inputs.push(src.clone());
        }
        Run {
            out: out.to_path_buf(),
            manifest,
            started: Instant::now(),
        }
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        let digest = write_file(&path, contents)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(FileDigest::new(&path, digest));
        Ok(path)
    }

    fn input(&mut self, path: &Path, sha256: String) {
        self.manifest.inputs.push(FileDigest::new(path, sha256));
    }

    fn finish(mut self) -> CliResult<PathBuf> {
        self.manifest.elapsed_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out.join("run_manifest.json");
        let text = to_json_pretty(&self.manifest)?;
        write_file(&path, text.as_bytes())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn simulate(config: &RunConfig, out: &Path) -> CliResult<()> {
    let mut run = Run::new("simulate", config, out);
    let common = config.common();
    let mut members = Vec::with_capacity(config.j);
    for j in 0..config.j {
        let draw = draw_member(&config.ensemble, config.seed, j).map_err(|e| e.at(j))?;
        let params = ModelParams {
            variant: config.variant,
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
        params.validate().map_err(|e| e.at(j))?;
        let traj = integrate(&params, &common.grid).map_err(|e| e.at(j))?;
        let file = format!("traj_{j:03}.csv");
        let text = trajectory_to_csv(&traj)?;
        run.write(&format!("trajectories/{file}"), text.as_bytes())?;
        let sha256 = run
            .manifest
            .outputs
            .last()
            .expect("just written")
            .sha256
            .clone();
        members.push(EnsembleMember {
            index: j,
            file: format!("trajectories/{file}"),
            sha256,
            draw,
        });
    }
    let manifest = EnsembleManifest {
        seed: config.seed,
        variant: config.variant,
        specs: config.ensemble,
        population: common.population,
        exposed0: common.exposed0,
        infectious0: common.infectious0,
        horizon: common.horizon,
        grid_points: common.grid.len(),
        members,
    };
    run.write("ensemble.json", to_json_pretty(&manifest)?.as_bytes())?;
    println!("simulated {} trajectories into {}", config.j, out.display());
    run.finish()?;
    Ok(())
}

trait AtTrajectory {
    fn at(self, j: usize) -> seir_consensus::Error;
}

impl AtTrajectory for seir_consensus::Error {
    fn at(self, j: usize) -> seir_consensus::Error {
        seir_consensus::Error::Trajectory {
            index: j,
            source: Box::new(self),
        }
    }
}

/// Trajectories named on the command line. A `.json` argument is an ensemble
/// manifest whose member files are checked against their recorded digests.
fn read_inputs(inputs: &[PathBuf], run: &mut Run) -> CliResult<Vec<SampledTrajectory>> {
    let mut out = Vec::new();
    for path in inputs {
        if path.extension().is_some_and(|e| e == "json") {
            let file = read_file(path)?;
            let manifest: EnsembleManifest = serde_json::from_slice(&file.bytes).map_err(|e| {
                CliError::Io(format!("{}: not an ensemble manifest: {e}", path.display()))
            })?;
            run.input(path, file.sha256);
            let base = path.parent().unwrap_or(Path::new("."));
            for m in &manifest.members {
                let member = base.join(&m.file);
                let f = read_file(&member)?;
                if f.sha256 != m.sha256 {
                    return Err(CliError::Io(format!(
                        "{} changed since {} was written (digest mismatch)",
                        member.display(),
                        path.display()
                    )));
                }
                let text = String::from_utf8_lossy(&f.bytes);
                let traj = parse_trajectory_csv(&text)
                    .map_err(|e| CliError::Io(format!("{}: {e}", member.display())))?;
                run.input(&member, f.sha256);
                out.push(traj);
            }
        } else {
            let (traj, f) = read_trajectory_csv(path)?;
            run.input(path, f.sha256);
            out.push(traj);
        }
    }
    Ok(out)
}

fn load_literature(config: &RunConfig, run: &mut Run) -> CliResult<Literature> {
    match &config.literature {
        Some(path) => {
            let file = read_file(path)?;
            let text = String::from_utf8_lossy(&file.bytes).into_owned();
            run.input(path, file.sha256);
            Ok(parse_literature(&text)?)
        }
        None => Ok(bundled_literature()),
    }
}

/// Brings every input onto the daily grid of the configured horizon.
fn on_config_grid(
    trajs: Vec<SampledTrajectory>,
    spec: &ProblemSpec,
) -> CliResult<Vec<SampledTrajectory>> {
    let grid = daily_grid(spec.horizon);
    trajs
        .into_iter()
        .enumerate()
        .map(|(j, t)| {
            if t.grid() == &grid[..] {
                return Ok(t);
            }
            let (lo, hi) = (t.grid()[0], t.horizon());
            if lo > 1e-9 || hi < spec.horizon - 1e-9 {
                return Err(CliError::Config(format!(
                    "input {j} covers [{lo}, {hi}], which does not span [0, T = {}]",
                    spec.horizon
                )));
            }
            log::info!(
                "input {j}: resampling {} points onto the daily grid",
                t.len()
            );
            Ok(resample(&t, &grid)?)
        })
        .collect()
}

fn write_svg(run: &mut Run, name: &str, chart: &LineChart) -> CliResult<()> {
    run.write(name, chart.to_svg().as_bytes())?;
    Ok(())
}

pub fn summarize(
    config: &RunConfig,
    inputs: &[PathBuf],
    literature: bool,
    out: &Path,
) -> CliResult<()> {
    let mut run = Run::new("summarize", config, out);
    let (trajs, spec) = if literature {
        if !inputs.is_empty() {
            return Err(CliError::Config(
                "pass input files or --literature, not both".into(),
            ));
        }
        let lit = load_literature(config, &mut run)?;
        (
            literature_trajectories(&lit, &config.common())?,
            config.literature_problem(),
        )
    } else {
        if inputs.is_empty() {
            return Err(CliError::Config(
                "summarize needs at least one input file (or --literature)".into(),
            ));
        }
        (
            on_config_grid(read_inputs(inputs, &mut run)?, &config.problem)?,
            config.problem.clone(),
        )
    };
    let est = estimate(&trajs, &spec)?;
    let sol = &est.solution;
    let manifest = SolutionManifest::from_solution(sol);
    run.write("solution.json", to_json_pretty(&manifest)?.as_bytes())?;
    run.write(
        "consensus.csv",
        trajectory_to_csv(&est.full.to_sampled()?)?.as_bytes(),
    )?;
    run.write("params.json", to_json_pretty(&est.params)?.as_bytes())?;
    run.write(
        "mean.csv",
        trajectory_to_csv(&pointwise_mean(&trajs)?)?.as_bytes(),
    )?;
    run.write(
        "median.csv",
        trajectory_to_csv(&pointwise_median(&trajs)?)?.as_bytes(),
    )?;
    let title = format!("Consensus of {} trajectories (q = {})", trajs.len(), spec.q);
    write_svg(
        &mut run,
        "consensus.svg",
        &infectious_figure(&title, &trajs, std::slice::from_ref(&est))?,
    )?;
    print_params(&format!("q={}", spec.q), &est.params);
    let violations = sol.feasibility.violations(spec.population, spec.delta_max);
    run.finish()?;
    if !violations.is_empty() {
        return Err(CliError::Infeasible(violations.join("; ")));
    }
    if !sol.converged {
        log::warn!(
            "outer loop did not converge within max_outer = {}",
            spec.max_outer
        );
    }
    Ok(())
}

fn print_params(label: &str, p: &RecoveryParams) {
    println!(
        "{label}: sigma={:.4} gamma={:.4} beta={:.4} R0={:.3} 1/sigma={:.3} 1/gamma={:.3}",
        p.sigma, p.gamma, p.beta, p.r0, p.incubation_days, p.infectious_days
    );
}

pub fn recover(config: &RunConfig, solution: &Path, out: &Path) -> CliResult<()> {
    let mut run = Run::new("recover", config, out);
    let file = read_file(solution)?;
    let manifest: SolutionManifest = serde_json::from_slice(&file.bytes).map_err(|e| {
        CliError::Io(format!(
            "{}: not a solution manifest: {e}",
            solution.display()
        ))
    })?;
    run.input(solution, file.sha256);
    let spec = &manifest.spec;
    let basis = build_basis(spec.n_basis, spec.degree, spec.horizon)?;
    if basis.knots().len() != manifest.knots.len()
        || basis
            .knots()
            .iter()
            .zip(&manifest.knots)
            .any(|(a, b)| (a - b).abs() > 1e-9 * spec.horizon)
    {
        return Err(CliError::Config(
            "solution knots do not match its K, degree and T".into(),
        ));
    }
    let c_hat = manifest.coefficients()?;
    let full = recover_curves(
        &basis,
        &c_hat,
        manifest.gamma,
        spec.population,
        &daily_grid(spec.horizon),
    )?;
    let beta = estimate_beta(&full, manifest.sigma, spec.bounds.beta)?;
    let params = RecoveryParams::new(manifest.sigma, manifest.gamma, beta);
    run.write(
        "recovered.csv",
        trajectory_to_csv(&full.to_sampled()?)?.as_bytes(),
    )?;
    run.write("params.json", to_json_pretty(&params)?.as_bytes())?;
    print_params("recovered", &params);
    run.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    SimTable,
    RealdataTable,
    Sensitivity,
}

fn write_table(run: &mut Run, table: &ResultsTable) -> CliResult<()> {
    run.write("table.csv", table.to_csv().as_bytes())?;
    run.write("table.json", to_json_pretty(table)?.as_bytes())?;
    run.write("table.txt", table.to_text().as_bytes())?;
    print!("{}", table.to_text());
    let failed: usize = table.rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        println!("{failed} replication runs failed and were excluded");
    }
    Ok(())
}

/// The first replication's ensemble with one consensus per power.
fn example_figure(
    plan: &ReplicationPlan,
    qs: &[f64],
    base: &ProblemSpec,
    j: usize,
    title: &str,
) -> CliResult<LineChart> {
    let ens = plan.ensemble(0)?;
    let trajs = &ens[..j.min(ens.len())];
    let ests: Vec<Estimate> = qs
        .iter()
        .filter_map(
            |&q| match estimate(trajs, &ProblemSpec { q, ..base.clone() }) {
                Ok(e) => Some(e),
                Err(e) => {
                    log::warn!("figure: q={q} failed: {e}");
                    None
                }
            },
        )
        .collect();
    Ok(infectious_figure(title, trajs, &ests)?)
}

pub fn report(config: &RunConfig, experiment: Experiment, out: &Path) -> CliResult<()> {
    let mut run = Run::new("report", config, out);
    match experiment {
        Experiment::SimTable => {
            let qs = config.qs.clone().unwrap_or_else(|| vec![1.0, 2.0]);
            let js = config.js.clone().unwrap_or_else(|| vec![config.j]);
            let mut plan =
                ReplicationPlan::sim_table(&js, &qs, &config.problem, config.reps, config.seed);
            plan.threads = config.threads;
            plan.specs = config.ensemble;
            plan.common = config.common();
            let table = plan.run()?;
            write_table(&mut run, &table)?;
            let j = js[0];
            let chart = example_figure(
                &plan,
                &qs,
                &config.problem,
                j,
                &format!("Replication 1, J = {j}"),
            )?;
            write_svg(&mut run, "sim_example.svg", &chart)?;
        }
        Experiment::RealdataTable => {
            let qs = config.qs.clone().unwrap_or_else(|| vec![1.0, 1.5, 2.0]);
            let lit = load_literature(config, &mut run)?;
            let common = config.common();
            let (table, ests) = realdata_table(&lit, &common, &qs, &config.literature_problem())?;
            write_table(&mut run, &table)?;
            let trajs = literature_trajectories(&lit, &common)?;
            let chart = infectious_figure("Literature-derived trajectories", &trajs, &ests)?;
            write_svg(&mut run, "realdata.svg", &chart)?;
        }
        Experiment::Sensitivity => {
            let mut plan = ReplicationPlan::sensitivity(
                config.j,
                &config.rhos,
                &config.ks,
                &config.problem,
                config.reps,
                config.seed,
            );
            plan.threads = config.threads;
            plan.specs = config.ensemble;
            plan.common = config.common();
            let table = plan.run()?;
            write_table(&mut run, &table)?;
            let chart = example_figure(
                &plan,
                &[config.problem.q],
                &config.problem,
                config.j,
                "Replication 1",
            )?;
            write_svg(&mut run, "sensitivity_example.svg", &chart)?;
        }
    }
    run.finish()?;
    Ok(())
}
