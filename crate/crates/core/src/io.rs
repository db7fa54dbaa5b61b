//! File formats: trajectory CSV, manifests, the bundled literature table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::{ConsensusSolution, FeasibilityReport, ProblemSpec, SolveDiagnostics};
use crate::epi::{
    integrate, params_from_quantities, CommonSetup, Compartment, EnsembleDraw, EnsembleSpecs,
    ModelParams, SampledTrajectory, Variant,
};
use crate::error::{Error, Result};
use crate::fspace::CoefVector;

/// Scientific notation with 17 significant digits, enough to round-trip any double.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Bytes read from disk together with their digest.
#[derive(Debug, Clone)]
pub struct ReadFile {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub sha256: String,
}

pub fn read_file(path: &Path) -> Result<ReadFile> {
    let bytes = std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(ReadFile {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        bytes,
    })
}

/// `t,S,E,I,R[,U,Q,D]` with one row per grid point; only present columns are written.
pub fn trajectory_to_csv(traj: &SampledTrajectory) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cols: Vec<Compartment> = traj.columns().keys().copied().collect();
    let mut header = vec!["t".to_string()];
    header.extend(cols.iter().map(|c| c.label().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (m, &t) in traj.grid().iter().enumerate() {
        let mut row = vec![format_f64(t)];
        for c in &cols {
            row.push(format_f64(traj.columns()[c][m]));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("CSV: {e}"))
}

/// Parses a trajectory file. `E` and `I` are required; the population is
/// taken from the first row when `S, E, I, R` are all present.
pub fn parse_trajectory_csv(text: &str) -> Result<SampledTrajectory> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("t") {
        return Err(Error::Parse("first CSV column must be `t`".into()));
    }
    let mut cols = Vec::new();
    for h in headers.iter().skip(1) {
        let c = Compartment::from_label(h)
            .ok_or_else(|| Error::Parse(format!("unknown column `{h}`")))?;
        if cols.contains(&c) {
            return Err(Error::Parse(format!("duplicate column `{h}`")));
        }
        cols.push(c);
    }
    for need in [Compartment::E, Compartment::I] {
        if !cols.contains(&need) {
            return Err(Error::Parse(format!(
                "missing required column `{}`",
                need.label()
            )));
        }
    }
    let mut grid = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != cols.len() + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields",
                line + 2,
                rec.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: `{s}` is not a number", line + 2)))
        };
        grid.push(num(&rec[0])?);
        for (k, v) in values.iter_mut().enumerate() {
            v.push(num(&rec[k + 1])?);
        }
    }
    let columns: BTreeMap<Compartment, Vec<f64>> = cols.into_iter().zip(values).collect();
    let full = [
        Compartment::S,
        Compartment::E,
        Compartment::I,
        Compartment::R,
    ]
    .iter()
    .all(|c| columns.contains_key(c));
    let population = if full && !grid.is_empty() {
        Some(columns.values().map(|v| v[0]).sum())
    } else {
        None
    };
    SampledTrajectory::new(grid, columns, population)
}

pub fn read_trajectory_csv(path: &Path) -> Result<(SampledTrajectory, ReadFile)> {
    let file = read_file(path)?;
    let text = std::str::from_utf8(&file.bytes)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let traj =
        parse_trajectory_csv(text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((traj, file))
}

/// Writes `contents` and returns the digest of the bytes written.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(sha256_hex(contents))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// One row of the bundled literature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub incubation_days: f64,
    pub infectious_days: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Literature {
    pub description: String,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
    pub studies: Vec<Study>,
}

pub const BUNDLED_LITERATURE: &str = include_str!("../data/literature_2020.json");

pub fn bundled_literature() -> Literature {
    serde_json::from_str(BUNDLED_LITERATURE).expect("bundled literature table parses")
}

pub fn parse_literature(text: &str) -> Result<Literature> {
    let lit: Literature = serde_json::from_str(text)?;
    if lit.studies.is_empty() {
        return Err(Error::Parse("literature table has no studies".into()));
    }
    Ok(lit)
}

/// SEIR curve of each study under the shared initial conditions.
pub fn literature_trajectories(
    lit: &Literature,
    common: &CommonSetup,
) -> Result<Vec<SampledTrajectory>> {
    lit.studies
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let rates = params_from_quantities(s.incubation_days, s.infectious_days, s.r0)?;
            let p = ModelParams::seir(
                rates,
                common.population,
                common.exposed0,
                common.infectious0,
                common.horizon,
            )?;
            integrate(&p, &common.grid).map_err(|e| e.at_trajectory(j))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub index: usize,
    pub file: String,
    pub sha256: String,
    #[serde(flatten)]
    pub draw: EnsembleDraw,
}

/// Sampled `(D_E, D_I, R0)` and derived rates for each simulated member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    #[serde(default = "seir")]
    pub variant: Variant,
    pub specs: EnsembleSpecs,
    pub population: f64,
    pub exposed0: f64,
    pub infectious0: f64,
    pub horizon: f64,
    pub grid_points: usize,
    pub members: Vec<EnsembleMember>,
}

fn seir() -> Variant {
    Variant::Seir
}

/// Everything needed to rebuild a consensus curve and audit the solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub spec: ProblemSpec,
    pub sigma: f64,
    pub gamma: f64,
    pub incubation_days: f64,
    pub infectious_days: f64,
    pub shifts: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub converged: bool,
    pub coefficients_exposed: Vec<f64>,
    pub coefficients_infectious: Vec<f64>,
    pub knots: Vec<f64>,
    pub constraint_grid_points: usize,
    pub kkt_residual: f64,
    pub feasibility: FeasibilityReport,
    pub diagnostics: SolveDiagnostics,
    pub elapsed_seconds: f64,
}

impl SolutionManifest {
    pub fn from_solution(sol: &ConsensusSolution) -> Self {
        SolutionManifest {
            spec: sol.spec.clone(),
            sigma: sol.sigma,
            gamma: sol.gamma,
            incubation_days: 1.0 / sol.sigma,
            infectious_days: 1.0 / sol.gamma,
            shifts: sol.shifts.clone(),
            objective_trace: sol.objective_trace.clone(),
            final_objective: sol.final_objective,
            converged: sol.converged,
            coefficients_exposed: sol.c_hat.exposed().iter().copied().collect(),
            coefficients_infectious: sol.c_hat.infectious().iter().copied().collect(),
            knots: sol.basis.knots().to_vec(),
            constraint_grid_points: sol.constraint_grid.len(),
            kkt_residual: sol.inner.kkt_residual,
            feasibility: sol.feasibility.clone(),
            diagnostics: sol.diagnostics.clone(),
            elapsed_seconds: sol.diagnostics.elapsed_seconds,
        }
    }

    pub fn coefficients(&self) -> Result<CoefVector> {
        CoefVector::new(
            nalgebra::DVector::from_vec(self.coefficients_exposed.clone()),
            nalgebra::DVector::from_vec(self.coefficients_infectious.clone()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn new(path: &Path, sha256: String) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256,
        }
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions,
            elapsed_seconds: 0.0,
        }
    }

    /// Input digests that no longer match the files on disk.
    pub fn stale_inputs(&self) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for d in &self.inputs {
            let now = read_file(Path::new(&d.path))?;
            if now.sha256 != d.sha256 {
                stale.push(d.path.clone());
            }
        }
        Ok(stale)
    }
}
