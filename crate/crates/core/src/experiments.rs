//! Replicated simulation tables, the literature table and sensitivity sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{pointwise_mean, pointwise_median};
use crate::consensus::{solve, ConsensusSolution, ProblemSpec};
use crate::epi::{simulate_ensemble, CommonSetup, EnsembleSpecs, SampledTrajectory};
use crate::error::{Error, Result};
use crate::io::{literature_trajectories, Literature};
use crate::plot::{color_for_q, palette, LineChart, Series};
use crate::recovery::{estimate_beta, recover_full, FullTrajectory, RecoveryParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    /// Monte Carlo standard deviation (divisor `n − 1`).
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: None,
                sd: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Stat {
            mean: Some(mean),
            sd,
        }
    }

    fn cell(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{m:.3} ({s:.3})"),
            (Some(m), None) => format!("{m:.3}"),
            _ => "-".into(),
        }
    }
}

/// One experimental condition: ensemble size and problem settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub label: String,
    pub j: usize,
    pub spec: ProblemSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    #[serde(rename = "J")]
    pub j: usize,
    pub q: f64,
    #[serde(rename = "K")]
    pub n_basis: usize,
    pub rho: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub sigma: Stat,
    pub gamma: Stat,
    pub incubation_days: Stat,
    pub infectious_days: Stat,
    pub beta: Stat,
    pub r0: Stat,
}

impl TableRow {
    fn new(setting: &Setting, estimates: &[RecoveryParams], failed: usize) -> Self {
        let col =
            |f: fn(&RecoveryParams) -> f64| Stat::of(&estimates.iter().map(f).collect::<Vec<_>>());
        TableRow {
            label: setting.label.clone(),
            j: setting.j,
            q: setting.spec.q,
            n_basis: setting.spec.n_basis,
            rho: setting.spec.rho,
            succeeded: estimates.len(),
            failed,
            sigma: col(|p| p.sigma),
            gamma: col(|p| p.gamma),
            incubation_days: col(|p| p.incubation_days),
            infectious_days: col(|p| p.infectious_days),
            beta: col(|p| p.beta),
            r0: col(|p| p.r0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub experiment: String,
    pub replications: usize,
    pub seed: Option<u64>,
    pub rows: Vec<TableRow>,
    pub elapsed_seconds: f64,
}

impl ResultsTable {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,J,q,K,rho,succeeded,failed");
        for name in [
            "sigma",
            "gamma",
            "incubation_days",
            "infectious_days",
            "beta",
            "r0",
        ] {
            let _ = write!(out, ",{name}_mean,{name}_sd");
        }
        out.push('\n');
        let num = |v: Option<f64>| v.map(crate::io::format_f64).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.label, r.j, r.q, r.n_basis, r.rho, r.succeeded, r.failed
            );
            for s in [
                r.sigma,
                r.gamma,
                r.incubation_days,
                r.infectious_days,
                r.beta,
                r.r0,
            ] {
                let _ = write!(out, ",{},{}", num(s.mean), num(s.sd));
            }
            out.push('\n');
        }
        out
    }

    /// Mean (Monte Carlo SD) per cell, one line per row.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<14} {:>3} {:>4} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>7}\n",
            "setting", "J", "q", "sigma", "gamma", "1/sigma", "1/gamma", "beta", "R0", "failed"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>3} {:>4} {:>16} {:>16} {:>16} {:>16} {:>16} {:>16} {:>7}",
                r.label,
                r.j,
                r.q,
                r.sigma.cell(),
                r.gamma.cell(),
                r.incubation_days.cell(),
                r.infectious_days.cell(),
                r.beta.cell(),
                r.r0.cell(),
                r.failed
            );
        }
        out
    }
}

/// Consensus, recovered state and rates for one ensemble.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub solution: ConsensusSolution,
    pub full: FullTrajectory,
    pub params: RecoveryParams,
}

pub fn estimate(trajs: &[SampledTrajectory], spec: &ProblemSpec) -> Result<Estimate> {
    let solution = solve(trajs, spec)?;
    let full = recover_full(&solution, trajs[0].grid())?;
    let beta = estimate_beta(&full, solution.sigma, spec.bounds.beta)?;
    let params = RecoveryParams::new(solution.sigma, solution.gamma, beta);
    Ok(Estimate {
        solution,
        full,
        params,
    })
}

/// Ensemble seed for replication `rep`, from its own ChaCha stream.
pub fn replication_seed(base: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(u64::MAX - rep as u64);
    rng.next_u64()
}

#[derive(Debug, Clone)]
pub struct ReplicationPlan {
    pub experiment: String,
    pub settings: Vec<Setting>,
    pub reps: usize,
    pub seed: u64,
    /// Worker count; 0 uses every core.
    pub threads: usize,
    pub specs: EnsembleSpecs,
    pub common: CommonSetup,
}

impl ReplicationPlan {
    /// One row per `(J, q)` pair.
    pub fn sim_table(js: &[usize], qs: &[f64], base: &ProblemSpec, reps: usize, seed: u64) -> Self {
        let settings = js
            .iter()
            .flat_map(|&j| {
                qs.iter().map(move |&q| Setting {
                    label: format!("J={j},q={q}"),
                    j,
                    spec: ProblemSpec { q, ..base.clone() },
                })
            })
            .collect();
        ReplicationPlan::new("sim_table", settings, reps, seed)
    }

    /// One row per `ρ` at the base `K`, then one per `K` at the base `ρ`.
    pub fn sensitivity(
        j: usize,
        rhos: &[f64],
        ks: &[usize],
        base: &ProblemSpec,
        reps: usize,
        seed: u64,
    ) -> Self {
        let mut settings: Vec<Setting> = rhos
            .iter()
            .map(|&rho| Setting {
                label: format!("rho={rho}"),
                j,
                spec: ProblemSpec {
                    rho,
                    ..base.clone()
                },
            })
            .collect();
        settings.extend(ks.iter().map(|&k| Setting {
            label: format!("K={k}"),
            j,
            spec: ProblemSpec {
                n_basis: k,
                ..base.clone()
            },
        }));
        ReplicationPlan::new("sensitivity", settings, reps, seed)
    }

    fn new(experiment: &str, settings: Vec<Setting>, reps: usize, seed: u64) -> Self {
        ReplicationPlan {
            experiment: experiment.into(),
            settings,
            reps,
            seed,
            threads: 0,
            specs: EnsembleSpecs::early_wuhan(),
            common: CommonSetup::standard(),
        }
    }

    /// The ensemble of replication `rep`, sized for the largest setting.
    /// Member `j` depends only on the replication seed and `j`, so smaller
    /// settings use a prefix of the same draws.
    pub fn ensemble(&self, rep: usize) -> Result<Vec<SampledTrajectory>> {
        let j = self.settings.iter().map(|s| s.j).max().unwrap_or(0);
        Ok(simulate_ensemble(
            j,
            &self.specs,
            &self.common,
            replication_seed(self.seed, rep),
        )?
        .trajectories)
    }

    pub fn run(&self) -> Result<ResultsTable> {
        if self.settings.is_empty() || self.reps == 0 {
            return Err(Error::contract(
                "a replication plan needs at least one setting and one replication",
            ));
        }
        let started = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::contract(format!("worker pool: {e}")))?;
        let outcomes: Vec<Vec<Option<RecoveryParams>>> = pool.install(|| {
            (0..self.reps)
                .into_par_iter()
                .map(|rep| self.replicate(rep))
                .collect()
        });
        let rows = self
            .settings
            .iter()
            .enumerate()
            .map(|(k, setting)| {
                let ok: Vec<RecoveryParams> = outcomes.iter().filter_map(|o| o[k]).collect();
                let failed = self.reps - ok.len();
                if failed > 0 {
                    log::warn!(
                        "{}: {failed} of {} replications failed and were excluded",
                        setting.label,
                        self.reps
                    );
                }
                TableRow::new(setting, &ok, failed)
            })
            .collect();
        Ok(ResultsTable {
            experiment: self.experiment.clone(),
            replications: self.reps,
            seed: Some(self.seed),
            rows,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn replicate(&self, rep: usize) -> Vec<Option<RecoveryParams>> {
        let trajs = match self.ensemble(rep) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("replication {rep}: ensemble simulation failed: {e}");
                return vec![None; self.settings.len()];
            }
        };
        self.settings
            .iter()
            .map(|s| match estimate(&trajs[..s.j], &s.spec) {
                Ok(est) => Some(est.params),
                Err(e) => {
                    log::warn!("replication {rep}, {}: {e}", s.label);
                    None
                }
            })
            .collect()
    }
}

/// One deterministic row per `q` on the literature-derived curves.
pub fn realdata_table(
    lit: &Literature,
    common: &CommonSetup,
    qs: &[f64],
    base: &ProblemSpec,
) -> Result<(ResultsTable, Vec<Estimate>)> {
    let started = Instant::now();
    let trajs = literature_trajectories(lit, common)?;
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &q in qs {
        let setting = Setting {
            label: format!("q={q}"),
            j: trajs.len(),
            spec: ProblemSpec { q, ..base.clone() },
        };
        let est = estimate(&trajs, &setting.spec)?;
        rows.push(TableRow::new(&setting, &[est.params], 0));
        estimates.push(est);
    }
    let table = ResultsTable {
        experiment: "realdata_table".into(),
        replications: 1,
        seed: None,
        rows,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((table, estimates))
}

/// `I(t)` of the inputs (gray), each consensus, and the pointwise baselines.
pub fn infectious_figure(
    title: &str,
    inputs: &[SampledTrajectory],
    consensus: &[Estimate],
) -> Result<LineChart> {
    let mut chart = LineChart::new(title, "day", "infectious");
    for t in inputs {
        chart.push(Series::new(
            None,
            palette::INPUT,
            1.0,
            t.grid(),
            t.infectious()?,
        ));
    }
    let mean = pointwise_mean(inputs)?;
    let median = pointwise_median(inputs)?;
    chart.push(Series::new(
        Some("pointwise mean"),
        palette::MEAN,
        2.0,
        mean.grid(),
        mean.infectious()?,
    ));
    chart.push(Series::new(
        Some("pointwise median"),
        palette::MEDIAN,
        2.0,
        median.grid(),
        median.infectious()?,
    ));
    for est in consensus {
        let q = est.solution.spec.q;
        let label = format!("consensus q={q}");
        chart.push(Series::new(
            Some(&label),
            color_for_q(q),
            2.5,
            &est.full.grid,
            &est.full.infectious,
        ));
    }
    Ok(chart)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_examples() {
        assert_eq!(
            Stat::of(&[]),
            Stat {
                mean: None,
                sd: None
            }
        );
        assert_eq!(
            Stat::of(&[2.0]),
            Stat {
                mean: Some(2.0),
                sd: None
            }
        );
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.sd, Some(1.0));
    }

    #[test]
    fn replication_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..50).map(|r| replication_seed(7, r)).collect();
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert_eq!(a[3], replication_seed(7, 3));
        assert_ne!(replication_seed(8, 3), a[3]);
    }

    fn small_plan() -> ReplicationPlan {
        let base = ProblemSpec {
            n_basis: 15,
            ..Default::default()
        };
        ReplicationPlan::sim_table(&[3, 4], &[1.0, 2.0], &base, 3, 11)
    }

    #[test]
    fn replications_do_not_depend_on_worker_count() {
        let mut plan = small_plan();
        plan.threads = 1;
        let one = plan.run().unwrap();
        plan.threads = 3;
        let three = plan.run().unwrap();
        assert_eq!(one.rows, three.rows);
        assert_eq!(one.rows.len(), 4);
        for row in &one.rows {
            assert_eq!(row.succeeded + row.failed, 3);
        }
    }

    #[test]
    fn smaller_settings_reuse_a_prefix_of_the_draws() {
        let plan = small_plan();
        let ens = plan.ensemble(1).unwrap();
        assert_eq!(ens.len(), 4);
        let alone = simulate_ensemble(3, &plan.specs, &plan.common, replication_seed(plan.seed, 1))
            .unwrap();
        assert_eq!(&ens[..3], &alone.trajectories[..]);
    }

    #[test]
    fn table_outputs_have_one_line_per_row() {
        let mut plan = small_plan();
        plan.reps = 2;
        let table = plan.run().unwrap();
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 1 + table.rows.len());
        assert!(csv.starts_with("label,J,q,K,rho,succeeded,failed,sigma_mean,sigma_sd"));
        assert_eq!(table.to_text().lines().count(), 1 + table.rows.len());
        let json = serde_json::to_string(&table).unwrap();
        let back: ResultsTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn figure_has_inputs_baselines_and_consensus() {
        let plan = small_plan();
        let ens = plan.ensemble(0).unwrap();
        let est = estimate(&ens, &plan.settings[0].spec).unwrap();
        let chart = infectious_figure("I", &ens, &[est]).unwrap();
        assert_eq!(chart.series.len(), ens.len() + 3);
        assert_eq!(chart.series.last().unwrap().color, palette::Q1);
    }
}
