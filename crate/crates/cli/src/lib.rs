//! Named, seeded experiments over `redei_core`, with JSON reports and CSV
//! tables.
//!
//! ```no_run
//! use redei_cli::{run_experiment, ExperimentConfig};
//!
//! let mut cfg = ExperimentConfig::new("measure-normalization");
//! cfg.workers = Some(4);
//! let report = run_experiment(&cfg).unwrap();
//! assert!(report.all_pass());
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use redei_core::Modulus;
use serde::{Deserialize, Serialize};

mod experiments;
pub mod report;

pub use experiments::{experiment, list_experiments, Experiment};
pub use report::{Comparison, ConfigEcho, Metric, Report, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown experiment `{0}`; run `redei list` for the registry")]
    UnknownExperiment(String),
    #[error("experiment `{experiment}` has no tolerance `{key}` (known: {known})")]
    UnknownTolerance { experiment: String, key: String, known: String },
    #[error("N = {n} is too large for `{experiment}` (at most {max})")]
    Infeasible { experiment: String, n: u64, max: u64 },
    #[error("experiment `{0}` does not emit a CSV table")]
    NoTable(String),
    #[error(transparent)]
    Core(#[from] redei_core::Error),
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub l: u32,
    /// Bound override; `None` takes the experiment default.
    pub n: Option<u64>,
    pub seed: u64,
    /// Overrides on top of the experiment's default tolerances.
    pub tolerances: BTreeMap<String, f64>,
    pub output: Option<PathBuf>,
    pub format: Format,
    /// Rayon pool size; `None` uses the global default.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>) -> Self {
        ExperimentConfig {
            name: name.into(),
            l: 3,
            n: None,
            seed: 0,
            tolerances: BTreeMap::new(),
            output: None,
            format: Format::Json,
            workers: None,
        }
    }
}

/// Resolved inputs handed to an experiment body.
pub struct Context {
    pub l: Modulus,
    pub n: u64,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

impl Context {
    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }
}

fn resolve(cfg: &ExperimentConfig, exp: &Experiment) -> Result<(Context, ConfigEcho)> {
    let l = Modulus::new(cfg.l)?;
    let mut tolerances: BTreeMap<String, f64> = exp.tolerances.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (k, &v) in &cfg.tolerances {
        match tolerances.get_mut(k) {
            Some(slot) => *slot = v,
            None => {
                return Err(CliError::UnknownTolerance {
                    experiment: exp.name.into(),
                    key: k.clone(),
                    known: exp.tolerances.iter().map(|t| t.0).collect::<Vec<_>>().join(", "),
                })
            }
        }
    }
    let n = match exp.default_n {
        Some(default) => {
            let n = cfg.n.unwrap_or(default);
            if n > exp.max_n {
                return Err(CliError::Infeasible { experiment: exp.name.into(), n, max: exp.max_n });
            }
            Some(n)
        }
        None => None,
    };
    let echo = ConfigEcho { name: exp.name.into(), l: l.get(), n, seed: cfg.seed, tolerances: tolerances.clone() };
    Ok((Context { l, n: n.unwrap_or(0), seed: cfg.seed, tolerances }, echo))
}

/// Runs the named experiment on a pool of `cfg.workers` threads, writes
/// the output file if one is configured and returns the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let exp = experiment(&cfg.name).ok_or_else(|| CliError::UnknownExperiment(cfg.name.clone()))?;
    let (ctx, echo) = resolve(cfg, exp)?;
    let start = Instant::now();
    let outcome = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build()?.install(|| (exp.run)(&ctx))?,
        None => (exp.run)(&ctx)?,
    };
    let report = Report {
        config: echo,
        results: outcome.metrics,
        runtime_ms: start.elapsed().as_millis() as u64,
        version: env!("CARGO_PKG_VERSION").to_string(),
        table: outcome.table,
    };
    if let Some(path) = &cfg.output {
        write_output(&report, cfg.format, path)?;
    }
    Ok(report)
}

/// The report as JSON, or its table as CSV.
pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(report.to_json()? + "\n"),
        Format::Csv => {
            report.table.as_ref().map(Table::to_csv).ok_or_else(|| CliError::NoTable(report.config.name.clone()))
        }
    }
}

pub fn write_output(report: &Report, format: Format, path: &Path) -> Result<()> {
    write_atomic(path, render(report, format)?.as_bytes())
}

/// Writes to a temporary file in the target directory, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_names_and_keys_are_rejected() {
        assert!(matches!(run_experiment(&ExperimentConfig::new("nope")), Err(CliError::UnknownExperiment(_))));
        let mut cfg = ExperimentConfig::new("measure-normalization");
        cfg.tolerances.insert("bogus".into(), 1.0);
        assert!(matches!(run_experiment(&cfg), Err(CliError::UnknownTolerance { .. })));
    }

    #[test]
    fn modulus_must_be_an_odd_prime() {
        for l in [2, 4, 9] {
            let mut cfg = ExperimentConfig::new("measure-normalization");
            cfg.l = l;
            assert!(matches!(run_experiment(&cfg), Err(CliError::Core(_))), "l = {l}");
        }
    }

    #[test]
    fn oversized_bound_is_infeasible() {
        let mut cfg = ExperimentConfig::new("redei-distribution");
        cfg.n = Some(u64::MAX);
        assert!(matches!(run_experiment(&cfg), Err(CliError::Infeasible { .. })));
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let mut cfg = ExperimentConfig::new("measure-normalization");
        cfg.output = Some(PathBuf::from("/nonexistent-dir/for/sure/out.json"));
        assert!(matches!(run_experiment(&cfg), Err(CliError::Io { .. })));
    }
}
