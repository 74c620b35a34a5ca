//! Library side of the `pflab` command: configuration, task runners, the
//! invariant suite and run output.

pub mod config;
pub mod output;
pub mod report;
pub mod suite;
pub mod tasks;

use std::path::Path;
use std::time::Instant;

use config::{ConfigError, RunConfig};
use pflab_core::Exec;
use report::TaskOutput;

/// JSON description of the configuration, the run record and the CSV tables.
pub const SCHEMA: &str = include_str!("../schema.json");

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Core(#[from] pflab_core::Error),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for configuration errors, 3 for truncation caps, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use pflab_core::Error as E;
        match self {
            RunError::Config(ConfigError::DimensionCap { .. }) | RunError::Core(E::TruncationTooLarge { .. }) => 3,
            RunError::Config(_) | RunError::Core(E::InvalidModes(_) | E::InvalidInput(_)) => 2,
            _ => 1,
        }
    }
}

/// A finished run and where it was written.
pub struct Completed {
    pub output: TaskOutput,
    pub dir: std::path::PathBuf,
}

/// Runs `cfg` and writes its outputs. Nothing is written when the
/// configuration or the numerics fail.
pub fn execute(cfg: &RunConfig, task_label: &str, run: impl FnOnce() -> Result<TaskOutput, RunError>) -> Result<Completed, RunError> {
    let start = Instant::now();
    let output = run()?;
    let hash = cfg.hash();
    let dir = output::run_dir(&output::base_dir(&cfg.output.directory), task_label, &hash);
    output::write_run(&dir, &hash, task_label, cfg, &output, &cfg.output.formats, start.elapsed().as_secs_f64())?;
    Ok(Completed { output, dir })
}

/// `pflab run <config>`.
pub fn run_config(path: &Path) -> Result<Completed, RunError> {
    let cfg = RunConfig::load(path)?;
    let inst = cfg.instance()?;
    execute(&cfg, cfg.task.name(), || tasks::run(&cfg, &inst, Exec::default()))
}

/// `pflab check-all`.
pub fn run_check_all(instance: &str, fault: Option<suite::Fault>) -> Result<Completed, RunError> {
    let cfg = suite::builtin(instance).ok_or_else(|| ConfigError::Invalid(format!("unknown instance {instance:?}")))?;
    let inst = cfg.instance()?;
    let beta = match cfg.task {
        config::Task::CheckAll { beta } => beta,
        _ => unreachable!("built-in instances run check-all"),
    };
    let label = match fault {
        None => "check-all".to_string(),
        Some(suite::Fault::VirialSign) => "check-all-virial-sign".to_string(),
    };
    execute(&cfg, &label, || Ok(suite::check_all(&inst, &cfg.truncation, beta, fault)?))
}
