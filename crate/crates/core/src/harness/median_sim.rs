use std::io::Write;

use rand::Rng;

use super::recommender::{DATA, HASH, KEYS};
use super::{load_csv_values, stream_rng, AtStage, ErrorReport, ExperimentConfig, HarnessError, Result, Stage};
use crate::ahe::{AheParams, DlogTable, EncryptedSketch, Encryptor, ThresholdKeyMaterial};
use crate::group_crypto::P224;
use crate::median::{bisect_median, lower_median, sketch_values, DpConfig, EncryptedRangeSum, MedianDomain, PlainRangeSum};
use crate::sketch::{derive_params, DepthRule, SketchKind, SketchParams, SketchTable};

const ENCRYPT: u64 = 5;
const NOISE: u64 = 6;

/// Authority keys, the decryption table and an encryptor under the joint key.
pub struct MedianSetup {
    pub keys: ThresholdKeyMaterial<P224>,
    pub table: DlogTable<P224>,
    pub enc: Encryptor<P224>,
}

fn sketch_params(cfg: &ExperimentConfig) -> Result<SketchParams> {
    Ok(derive_params(cfg.epsilon, cfg.delta, DepthRule::FailureOnly).at(Stage::Sketch)?.for_kind(SketchKind::Count))
}

/// Generates `cfg.authorities` key pairs and a table bounded by
/// `d · reporters · value_cap`.
pub fn median_setup(cfg: &ExperimentConfig) -> Result<MedianSetup> {
    cfg.validate()?;
    let params = sketch_params(cfg)?;
    let keys = ThresholdKeyMaterial::generate(cfg.authorities, &mut stream_rng(cfg.seed, KEYS, 0)).at(Stage::Keygen)?;
    let ahe = AheParams::for_workload(params.depth, cfg.reporters, cfg.value_cap.max(cfg.values_per_reporter as u64));
    let table = DlogTable::new(&ahe);
    let enc = Encryptor::new(ahe, keys.public_key());
    Ok(MedianSetup { keys, table, enc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianTrial {
    pub trial: usize,
    pub values: usize,
    pub true_median: i64,
    pub estimate: i64,
    pub abs_err: f64,
    /// `abs_err / max(|true_median|, 1)`.
    pub rel_err: f64,
    pub iterations: usize,
    pub dp_epsilon: Option<f64>,
    /// Joint decryptions performed; 0 without the crypto layer.
    pub decryptions: usize,
    /// Values dropped from a CSV input because they fell outside the domain.
    pub skipped: usize,
}

fn trial_values(cfg: &ExperimentConfig, tseed: u64) -> Result<(Vec<i64>, usize)> {
    match &cfg.values_file {
        None => {
            let v = super::gen_mixture_n(cfg.reporters * cfg.values_per_reporter, tseed);
            Ok((v.into_iter().map(|x| x.clamp(cfg.domain_lo, cfg.domain_hi - 1)).collect(), 0))
        }
        Some(path) => {
            let column = cfg.values_column.as_deref().unwrap_or("value");
            let (raw, mut skipped) = load_csv_values(path, column)?;
            let mut values = Vec::with_capacity(raw.len());
            for v in raw {
                let v = v.round() as i64;
                if (cfg.domain_lo..cfg.domain_hi).contains(&v) {
                    values.push(v);
                } else {
                    skipped += 1;
                }
            }
            Ok((values, skipped))
        }
    }
}

/// One median estimate. With `setup` every reporter's sketch is encrypted and
/// the authorities decrypt range sums of the aggregate; without it the same
/// sums are read from the plaintext aggregate. Both paths consume identical
/// random streams, so they agree exactly.
pub fn run_median_trial(cfg: &ExperimentConfig, setup: Option<&MedianSetup>, trial: usize) -> Result<MedianTrial> {
    let tseed = stream_rng(cfg.seed, DATA, trial as u64).gen::<u64>();
    let (values, skipped) = trial_values(cfg, tseed)?;
    let truth = lower_median(&values).ok_or_else(|| HarnessError::new(Stage::Generate, "no values in domain"))?;
    let domain = MedianDomain::new(cfg.domain_lo, cfg.domain_hi, values.len() as u64).at(Stage::Config)?;
    let params = sketch_params(cfg)?.with_seed(stream_rng(tseed, HASH, 0).gen());
    let dp = cfg.dp_epsilon.map(|e| DpConfig::for_domain(e, &domain, params.depth)).transpose().at(Stage::Config)?;

    let sketches = values
        .chunks(cfg.values_per_reporter)
        .map(|chunk| sketch_values(chunk, &domain, params))
        .collect::<std::result::Result<Vec<_>, _>>()
        .at(Stage::Sketch)?;
    let mut noise = stream_rng(tseed, NOISE, 0);
    let (estimate, state, decryptions) = match setup {
        Some(s) => {
            let mut rng = stream_rng(tseed, ENCRYPT, 0);
            let cts: Vec<EncryptedSketch<P224>> = sketches.iter().map(|t| EncryptedSketch::encrypt(t, &s.enc, &mut rng)).collect();
            let agg = EncryptedSketch::aggregate(&cts).at(Stage::Aggregate)?.expect("at least one reporter");
            let mut src = EncryptedRangeSum::new(&agg, &s.keys, &s.table).at(Stage::Decrypt)?;
            let (est, st) = bisect_median(&mut src, &domain, dp.as_ref(), &mut noise).at(Stage::Decrypt)?;
            (est, st, src.decryptions())
        }
        None => {
            let mut agg = SketchTable::count_sketch(params).at(Stage::Aggregate)?;
            for t in &sketches {
                agg.merge_from(t).at(Stage::Aggregate)?;
            }
            let mut src = PlainRangeSum::new(&agg).at(Stage::Decrypt)?;
            let (est, st) = bisect_median(&mut src, &domain, dp.as_ref(), &mut noise).at(Stage::Decrypt)?;
            (est, st, 0)
        }
    };
    let abs_err = (estimate - truth).abs() as f64;
    Ok(MedianTrial {
        trial,
        values: values.len(),
        true_median: truth,
        estimate,
        abs_err,
        rel_err: abs_err / (truth.abs().max(1) as f64),
        iterations: state.transcript.len(),
        dp_epsilon: cfg.dp_epsilon,
        decryptions,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct MedianRun {
    pub params: SketchParams,
    pub trials: Vec<MedianTrial>,
    pub report: ErrorReport,
}

impl MedianRun {
    /// Columns `trial,true_median,estimate,abs_err,rel_err,iterations,dp_epsilon`;
    /// `dp_epsilon` is empty when no noise was added.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "true_median", "estimate", "abs_err", "rel_err", "iterations", "dp_epsilon"]).at(Stage::Output)?;
        for t in &self.trials {
            out.write_record([
                t.trial.to_string(),
                t.true_median.to_string(),
                t.estimate.to_string(),
                t.abs_err.to_string(),
                format!("{:.6}", t.rel_err),
                t.iterations.to_string(),
                t.dp_epsilon.map(|e| e.to_string()).unwrap_or_default(),
            ])
            .at(Stage::Output)?;
        }
        out.flush().at(Stage::Output)
    }
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `cfg.trials` trials sharing one key setup when `cfg.crypto` is set.
pub fn run_median(cfg: &ExperimentConfig) -> Result<MedianRun> {
    cfg.validate()?;
    let params = sketch_params(cfg)?;
    let setup = if cfg.crypto { Some(median_setup(cfg)?) } else { None };
    let trials = (0..cfg.trials).map(|t| run_median_trial(cfg, setup.as_ref(), t)).collect::<Result<Vec<_>>>()?;
    let within = trials.iter().filter(|t| t.rel_err <= 0.1).count() as f64 / trials.len() as f64;
    let report = ErrorReport {
        scenario: "median".into(),
        trials: trials.len(),
        mae: Some(trials.iter().map(|t| t.abs_err).sum::<f64>() / trials.len() as f64),
        rel_median_error: Some(median_of(trials.iter().map(|t| t.rel_err).collect())),
        bytes_per_user: Some(EncryptedSketch::<P224>::zero(SketchKind::Count, params).encode().len()),
        extra: vec![
            ("sketch_depth".into(), params.depth as f64),
            ("sketch_width".into(), params.width as f64),
            ("median_abs_err".into(), median_of(trials.iter().map(|t| t.abs_err).collect())),
            ("share_within_10pct".into(), within),
        ],
        ..Default::default()
    };
    Ok(MedianRun { params, trials, report })
}
