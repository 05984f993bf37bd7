//! Run configuration, the collect→train loop, metrics files, sweeps and plots.

mod config;
mod metrics;
mod oracle_suite;
mod plot;
mod run;

use std::path::Path;

pub use config::{AgentKind, AgentSection, EnvSection, RunConfig, RunSection};
pub use metrics::{
    final_tracker_score, median, partial_path, read_column, read_episodes, CsvSink, EpisodeRecord, MetricsRow,
    TimingRow, METRIC_COLUMNS,
};
pub use oracle_suite::{run_oracle_suite, OracleReport, OracleRow, ORACLE_SEED, SUITES};
pub use plot::{plot, plot_svg, Series};
pub use run::{
    run_config, run_experiment, stream_rng, RunPaths, RunSummary, STREAM_ENV_BASE, STREAM_GENERATOR, STREAM_INIT,
    STREAM_POLICY,
};

use crate::curiosity::CuriosityError;
use crate::ndgrad::NdError;
use crate::rl::RlError;
use crate::worlds::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("column '{column}' missing from {file}")]
    MissingColumn { column: String, file: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Curiosity(#[from] CuriosityError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Graph(#[from] NdError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }
}

/// Runs `cfg` once per seed into `out_dir`, one set of seed-stamped files each.
pub fn sweep(cfg: &RunConfig, seeds: &[u64], out_dir: &Path) -> Result<Vec<RunSummary>, HarnessError> {
    seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.run.seed = s;
            run_config(&c, out_dir)
        })
        .collect()
}
