use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One row of the metrics CSV. Episode columns summarize the episodes that
/// finished since the previous row (carried forward when none did); loss and
/// reward columns average the learner updates since the previous row. Values
/// are `NaN` until the first episode or update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode_return: f64,
    pub trackers_touched_count: f64,
    pub prediction_loss: f64,
    pub reconstruction_loss: f64,
    pub contrastive_loss: f64,
    pub intrinsic_reward_mean: f64,
}

pub const METRIC_COLUMNS: [&str; 7] = [
    "env_step",
    "episode_return",
    "trackers_touched_count",
    "prediction_loss",
    "reconstruction_loss",
    "contrastive_loss",
    "intrinsic_reward_mean",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Total environment steps taken when the episode ended.
    pub env_step: u64,
    pub env: usize,
    pub episode_return: f64,
    pub trackers_touched: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub env_step: u64,
    pub wall_seconds: f64,
}

/// CSV file written under `<path>.partial` and renamed into place by
/// [`CsvSink::finish`]. A leftover `.partial` file marks an interrupted run.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    partial: PathBuf,
    path: PathBuf,
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let partial = partial_path(path);
        let file = File::create(&partial).map_err(|e| HarnessError::io(&partial, e))?;
        Ok(Self { writer: csv::Writer::from_writer(BufWriter::new(file)), partial, path: path.to_path_buf() })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<(), HarnessError> {
        self.writer.serialize(row).map_err(|e| HarnessError::Io(format!("{}: {e}", self.partial.display())))?;
        self.writer.flush().map_err(|e| HarnessError::io(&self.partial, e))
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|e| HarnessError::io(&self.partial, e))?;
        drop(self.writer);
        std::fs::rename(&self.partial, &self.path).map_err(|e| HarnessError::io(&self.path, e))
    }
}

/// Reads one named column of a CSV file as `(env_step, value)` pairs.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let x = find("env_step").ok_or_else(|| HarnessError::MissingColumn {
        column: "env_step".into(),
        file: path.display().to_string(),
    })?;
    let y = find(column).ok_or_else(|| HarnessError::MissingColumn {
        column: column.into(),
        file: path.display().to_string(),
    })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let parse = |i: usize| -> Result<f64, HarnessError> {
            rec[i].parse().map_err(|_| HarnessError::Io(format!("{}: bad number '{}'", path.display(), &rec[i])))
        };
        out.push((parse(x)?, parse(y)?));
    }
    Ok(out)
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<Result<Vec<EpisodeRecord>, _>>()
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Mean trackers touched over the episodes that ended in the last 10% of
/// `total_steps`, rounded to the nearest integer. `None` without such episodes.
pub fn final_tracker_score(episodes: &[EpisodeRecord], total_steps: u64) -> Option<usize> {
    let cutoff = total_steps as f64 * 0.9;
    let late: Vec<f64> = episodes
        .iter()
        .filter(|e| e.env_step as f64 > cutoff)
        .map(|e| e.trackers_touched as f64)
        .collect();
    if late.is_empty() {
        return None;
    }
    Some((late.iter().sum::<f64>() / late.len() as f64).round() as usize)
}

/// Median of per-seed scores (the lower middle for an even count).
pub fn median(mut xs: Vec<usize>) -> Option<usize> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    Some(xs[(xs.len() - 1) / 2])
}
