use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};

use seir_consensus::consensus::ProblemSpec;
use seir_consensus::epi::{daily_grid, CommonSetup, EnsembleSpecs, Variant};
use seir_consensus::io::{read_file, FileDigest};

use crate::error::{CliError, CliResult};

/// Keys the command line adds on top of the problem settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(rename = "J", default = "default_j")]
    j: usize,
    #[serde(default = "default_reps")]
    reps: usize,
    #[serde(default)]
    threads: usize,
    #[serde(default)]
    qs: Option<Vec<f64>>,
    #[serde(rename = "Js", default)]
    js: Option<Vec<usize>>,
    #[serde(default = "default_rhos")]
    rhos: Vec<f64>,
    #[serde(rename = "Ks", default = "default_ks")]
    ks: Vec<usize>,
    #[serde(default = "EnsembleSpecs::early_wuhan")]
    ensemble: EnsembleSpecs,
    #[serde(rename = "E0", default = "default_e0")]
    exposed0: f64,
    #[serde(rename = "I0", default)]
    infectious0: f64,
    #[serde(default = "default_variant")]
    variant: Variant,
    #[serde(default)]
    literature: Option<PathBuf>,
}

fn default_seed() -> u64 {
    2020
}
fn default_j() -> usize {
    10
}
fn default_reps() -> usize {
    100
}
fn default_rhos() -> Vec<f64> {
    vec![0.1, 1.0]
}
fn default_ks() -> Vec<usize> {
    vec![15, 60]
}
fn default_e0() -> f64 {
    1.0
}
fn default_variant() -> Variant {
    Variant::Seir
}

const RUN_KEYS: [&str; 14] = [
    "seed",
    "J",
    "reps",
    "threads",
    "qs",
    "Js",
    "rhos",
    "Ks",
    "ensemble",
    "E0",
    "I0",
    "variant",
    "literature",
    "$comment",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub seed: u64,
    pub j: usize,
    pub reps: usize,
    pub threads: usize,
    /// Powers for multi-`q` reports; `None` uses the report's default.
    pub qs: Option<Vec<f64>>,
    pub js: Option<Vec<usize>>,
    pub rhos: Vec<f64>,
    pub ks: Vec<usize>,
    pub ensemble: EnsembleSpecs,
    pub exposed0: f64,
    pub infectious0: f64,
    pub variant: Variant,
    pub literature: Option<PathBuf>,
    /// Digest of the config file, when one was read.
    pub source: Option<FileDigest>,
    /// Whether `K` came from the config or the command line.
    pub n_basis_set: bool,
}

/// Basis size of the literature experiment when `K` is not given.
const LITERATURE_K: usize = 60;

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub q: Option<f64>,
    pub n_basis: Option<usize>,
    pub rho: Option<f64>,
    pub j: Option<usize>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let (value, source) = match path {
            Some(p) => {
                let file =
                    read_file(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                let value: Value = serde_json::from_slice(&file.bytes)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (value, Some(FileDigest::new(p, file.sha256)))
            }
            None => (Value::Object(Map::new()), None),
        };
        let mut config = Self::from_value(value)?;
        config.source = source;
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        let Value::Object(mut problem) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let n_basis_set = problem.contains_key("K");
        let mut run = Map::new();
        for key in RUN_KEYS {
            if let Some(v) = problem.remove(key) {
                run.insert(key.to_string(), v);
            }
        }
        run.remove("$comment");
        let keys: RunKeys = serde_json::from_value(Value::Object(run))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let problem: ProblemSpec = serde_json::from_value(Value::Object(problem))
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(RunConfig {
            problem,
            seed: keys.seed,
            j: keys.j,
            reps: keys.reps,
            threads: keys.threads,
            qs: keys.qs,
            js: keys.js,
            rhos: keys.rhos,
            ks: keys.ks,
            ensemble: keys.ensemble,
            exposed0: keys.exposed0,
            infectious0: keys.infectious0,
            variant: keys.variant,
            literature: keys.literature,
            source: None,
            n_basis_set,
        })
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(q) = o.q {
            self.problem.q = q;
            self.qs = Some(vec![q]);
        }
        if let Some(k) = o.n_basis {
            self.problem.n_basis = k;
            self.n_basis_set = true;
        }
        if let Some(rho) = o.rho {
            self.problem.rho = rho;
        }
        if let Some(j) = o.j {
            self.j = j;
            self.js = Some(vec![j]);
        }
        if let Some(reps) = o.reps {
            self.reps = reps;
        }
        if let Some(threads) = o.threads {
            self.threads = threads;
        }
    }

    fn validate(&self) -> CliResult<()> {
        self.problem.validate()?;
        if self.j == 0 {
            return Err(CliError::Config("J must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        if let Some(qs) = &self.qs {
            if qs.is_empty() {
                return Err(CliError::Config("qs must not be empty".into()));
            }
            for &q in qs {
                ProblemSpec {
                    q,
                    ..self.problem.clone()
                }
                .validate()?;
            }
        }
        if !(self.exposed0 >= 0.0
            && self.infectious0 >= 0.0
            && self.exposed0 + self.infectious0 > 0.0)
        {
            return Err(CliError::Config(
                "initial counts need E0, I0 >= 0 and E0 + I0 > 0".into(),
            ));
        }
        Ok(())
    }

    /// Problem settings for the literature curves: `K = 60` unless set.
    pub fn literature_problem(&self) -> ProblemSpec {
        let mut p = self.problem.clone();
        if !self.n_basis_set {
            p.n_basis = LITERATURE_K;
        }
        p
    }

    pub fn common(&self) -> CommonSetup {
        CommonSetup {
            population: self.problem.population,
            exposed0: self.exposed0,
            infectious0: self.infectious0,
            horizon: self.problem.horizon,
            grid: daily_grid(self.problem.horizon),
        }
    }

    /// Snapshot written into run manifests.
    pub fn snapshot(&self) -> Value {
        let mut map = match serde_json::to_value(&self.problem) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        let extra = serde_json::json!({
            "seed": self.seed,
            "J": self.j,
            "reps": self.reps,
            "threads": self.threads,
            "qs": self.qs,
            "Js": self.js,
            "rhos": self.rhos,
            "Ks": self.ks,
            "ensemble": self.ensemble,
            "E0": self.exposed0,
            "I0": self.infectious0,
            "variant": self.variant,
            "literature": self.literature,
        });
        if let Value::Object(e) = extra {
            map.extend(e);
        }
        Value::Object(map)
    }
}
