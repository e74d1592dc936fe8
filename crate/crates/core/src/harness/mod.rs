//! Experiment orchestration: data generators, scenario pipelines, error
//! metrics and byte accounting.

mod bytes;
mod config;
mod generate;
mod location;
mod median_sim;
mod recommender;

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub use bytes::{bench_bytes, write_bytes_csv, ByteRow, ByteTable};
pub use config::{ConfigOverrides, ExperimentConfig, Scenario};
pub use generate::{gen_mixture, gen_mixture_n, gen_mobility, gen_zipf, zipf_ranks, Mobility};
pub use location::{run_location, LocationRun, SlotRow};
pub use median_sim::{median_setup, run_median, run_median_trial, MedianRun, MedianSetup, MedianTrial};
pub use recommender::{aggregate_groups, run_recommender, GroupedAggregate, RecommenderRun, RecommenderTrial};

/// Pipeline stage named in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Generate,
    Sketch,
    Keygen,
    Encrypt,
    Aggregate,
    Recover,
    Decrypt,
    Model,
    Evaluate,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Generate => "generate",
            Stage::Sketch => "sketch",
            Stage::Keygen => "keygen",
            Stage::Encrypt => "encrypt",
            Stage::Aggregate => "aggregate",
            Stage::Recover => "recover",
            Stage::Decrypt => "decrypt",
            Stage::Model => "model",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct HarnessError {
    pub stage: Stage,
    pub message: String,
}

impl HarnessError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        HarnessError { stage, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Attaches a stage to any displayable error.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: fmt::Display> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| HarnessError::new(stage, e.to_string()))
    }
}

/// Independent deterministic stream for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose);
    rng
}

/// Indices of the `k` largest values, ties to the lower index.
pub fn top_k_indices(truth: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    idx.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `|ĉ_i − c_i| / Σ_j |c_j|`, averaged over the `k` largest true counts.
pub fn top_k_average_error(estimates: &[f64], truth: &[f64], k: usize) -> f64 {
    assert_eq!(estimates.len(), truth.len(), "estimate and truth lengths");
    top_k_error_with(truth, k, |i| estimates[i])
}

/// [`top_k_average_error`] with estimates computed on demand.
pub fn top_k_error_with(truth: &[f64], k: usize, estimate: impl Fn(usize) -> f64) -> f64 {
    let total: f64 = truth.iter().map(|c| c.abs()).sum();
    let idx = top_k_indices(truth, k);
    if total == 0.0 || idx.is_empty() {
        return 0.0;
    }
    idx.iter().map(|&i| (estimate(i) - truth[i]).abs() / total).sum::<f64>() / idx.len() as f64
}

/// Aggregate statistics for one scenario run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub scenario: String,
    pub trials: usize,
    /// Σ-normalised top-k average error.
    pub avg_error: Option<f64>,
    pub mae: Option<f64>,
    pub rel_median_error: Option<f64>,
    pub bytes_per_user: Option<usize>,
    pub extra: Vec<(String, f64)>,
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario = {}", self.scenario)?;
        writeln!(f, "trials = {}", self.trials)?;
        if let Some(v) = self.avg_error {
            writeln!(f, "avg_error = {v:.6e}")?;
        }
        if let Some(v) = self.mae {
            writeln!(f, "mae = {v:.6}")?;
        }
        if let Some(v) = self.rel_median_error {
            writeln!(f, "rel_median_error = {v:.6}")?;
        }
        if let Some(v) = self.bytes_per_user {
            writeln!(f, "bytes_per_user = {v}")?;
        }
        for (k, v) in &self.extra {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Numeric values of one CSV column, plus the number of rows skipped
/// because the field was missing or not a number.
pub fn load_csv_values(path: &Path, column: &str) -> Result<(Vec<f64>, usize)> {
    let file = File::open(path).map_err(|e| HarnessError::new(Stage::Generate, format!("{}: {e}", path.display())))?;
    read_csv_values(BufReader::new(file), column)
}

/// [`load_csv_values`] over any reader.
pub fn read_csv_values(reader: impl std::io::Read, column: &str) -> Result<(Vec<f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().at(Stage::Generate)?.clone();
    if headers.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let col = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| HarnessError::new(Stage::Generate, format!("column {column:?} not found")))?;
    let mut values = Vec::new();
    let mut skipped = 0;
    for rec in rdr.records() {
        let rec = rec.at(Stage::Generate)?;
        match rec.get(col).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()) {
            Some(v) => values.push(v),
            None => skipped += 1,
        }
    }
    Ok((values, skipped))
}
