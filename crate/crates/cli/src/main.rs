use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchagg::group_crypto::{encode_point, CryptoGroup, KeyPair, Ristretto255, P224};
use sketchagg::harness::{
    bench_bytes, run_location, run_median, run_recommender, stream_rng, write_bytes_csv, AtStage, ConfigOverrides,
    ErrorReport, ExperimentConfig, HarnessError, Result, Scenario, Stage,
};

#[derive(Parser)]
#[command(name = "sketchagg", version, about = "Private sketch aggregation experiments")]
struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the CSV output; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file of configuration keys, applied before command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Item-to-item recommender over blinded co-view sketches.
    RecommenderSim(RecommenderArgs),
    /// Per-slot location heat maps over blinded cell sketches.
    LocationSim(LocationArgs),
    /// Median of reporter values over encrypted Count Sketches.
    MedianSim(MedianArgs),
    /// Bytes exchanged between users and the tally.
    BenchBytes(BytesArgs),
    /// Generate key pairs.
    Keygen(KeygenArgs),
}

#[derive(Args, Default)]
struct SketchFlags {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Aggregate plaintext sketches instead of running the cryptography.
    #[arg(long)]
    no_crypto: bool,
}

#[derive(Args, Default)]
struct GroupFlags {
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Run fault recovery even when every user submitted.
    #[arg(long)]
    force_recovery: bool,
}

#[derive(Args)]
struct RecommenderArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    programs: Option<usize>,
    /// Mean watch-history length.
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    zipf_exponent: Option<f64>,
    #[arg(long)]
    neighbors: Option<usize>,
    /// Pairs scored by the top-k error.
    #[arg(long)]
    top_k: Option<usize>,
    #[command(flatten)]
    group: GroupFlags,
    #[command(flatten)]
    sketch: SketchFlags,
}

#[derive(Args)]
struct LocationArgs {
    #[arg(long)]
    entities: Option<usize>,
    /// Grid side p; the grid has p × p cells.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    reports_per_slot: Option<usize>,
    /// EWMA smoothing factor.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cells scored by the top-k error and the prediction MAE.
    #[arg(long)]
    top_k: Option<usize>,
    #[command(flatten)]
    group: GroupFlags,
    #[command(flatten)]
    sketch: SketchFlags,
}

#[derive(Args)]
struct MedianArgs {
    #[arg(long)]
    reporters: Option<usize>,
    #[arg(long)]
    values_per_reporter: Option<usize>,
    /// Value domain as `lo:hi`, upper bound exclusive.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<(i64, i64)>,
    /// Laplace noise on every decrypted count at this privacy level.
    #[arg(long)]
    dp_epsilon: Option<f64>,
    #[arg(long)]
    authorities: Option<usize>,
    /// Per-reporter cell magnitude used to size the decryption table.
    #[arg(long)]
    value_cap: Option<u64>,
    /// Read values from a CSV file instead of the synthetic mixture.
    #[arg(long)]
    values_file: Option<PathBuf>,
    /// Column of `--values-file` holding the values.
    #[arg(long)]
    column: Option<String>,
    #[command(flatten)]
    sketch: SketchFlags,
}

#[derive(Args)]
struct BytesArgs {
    #[arg(long, default_value_t = 700)]
    programs: usize,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Group sizes, one per row.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000])]
    users: Vec<usize>,
    /// Sketch accuracy per row.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1])]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    median_epsilon: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeyGroup {
    /// User keys for pairwise blinding.
    Ristretto255,
    /// Authority keys for the encrypted median.
    P224,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, value_enum, default_value_t = KeyGroup::Ristretto255)]
    group: KeyGroup,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

fn parse_domain(s: &str) -> std::result::Result<(i64, i64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: i64 = lo.trim().parse().map_err(|e| format!("lo: {e}"))?;
    let hi: i64 = hi.trim().parse().map_err(|e| format!("hi: {e}"))?;
    if hi <= lo {
        return Err(format!("empty domain {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl SketchFlags {
    fn apply(&self, o: &mut ConfigOverrides) {
        o.epsilon = self.epsilon.or(o.epsilon);
        o.delta = self.delta.or(o.delta);
        o.trials = self.trials.or(o.trials);
        if self.no_crypto {
            o.crypto = Some(false);
        }
    }
}

impl GroupFlags {
    fn apply(&self, o: &mut ConfigOverrides) {
        o.group_size = self.group_size.or(o.group_size);
        o.dropout_rate = self.dropout_rate.or(o.dropout_rate);
        o.force_recovery = flag(self.force_recovery).or(o.force_recovery);
    }
}

/// Defaults, then the config file, then flags.
fn build_config(cli: &Cli, scenario: Scenario, flags: ConfigOverrides) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_toml_file(path, scenario)?;
            if cfg.scenario != scenario {
                return Err(HarnessError::new(
                    Stage::Config,
                    format!("{} sets scenario {:?} but the command runs {scenario:?}", path.display(), cfg.scenario),
                ));
            }
            cfg
        }
        None => ExperimentConfig::defaults(scenario),
    };
    flags.apply(&mut cfg);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scenario_config(cli: &Cli) -> Option<Result<ExperimentConfig>> {
    let mut o = ConfigOverrides::default();
    let scenario = match &cli.command {
        Command::RecommenderSim(a) => {
            o.users = a.users;
            o.programs = a.programs;
            o.history_len = a.history_len;
            o.zipf_exponent = a.zipf_exponent;
            o.neighbors = a.neighbors;
            o.top_items = a.top_k;
            a.group.apply(&mut o);
            a.sketch.apply(&mut o);
            Scenario::Recommender
        }
        Command::LocationSim(a) => {
            o.entities = a.entities;
            o.grid = a.grid;
            o.slots = a.slots;
            o.reports_per_slot = a.reports_per_slot;
            o.alpha = a.alpha;
            o.top_items = a.top_k;
            a.group.apply(&mut o);
            a.sketch.apply(&mut o);
            Scenario::Location
        }
        Command::MedianSim(a) => {
            o.reporters = a.reporters;
            o.values_per_reporter = a.values_per_reporter;
            if let Some((lo, hi)) = a.domain {
                o.domain_lo = Some(lo);
                o.domain_hi = Some(hi);
            }
            o.dp_epsilon = a.dp_epsilon;
            o.authorities = a.authorities;
            o.value_cap = a.value_cap;
            o.values_file = a.values_file.clone();
            o.values_column = a.column.clone();
            a.sketch.apply(&mut o);
            Scenario::Median
        }
        Command::BenchBytes(_) | Command::Keygen(_) => return None,
    };
    Some(build_config(cli, scenario, o))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| HarnessError::new(Stage::Output, format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Summary goes to stdout when the CSV went to a file, to stderr otherwise.
fn summary(cfg: &ExperimentConfig, report: &ErrorReport) {
    match &cfg.out {
        Some(p) => print!("{report}wrote {}\n", p.display()),
        None => eprint!("{report}"),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_keys<G: CryptoGroup>(count: usize, seed: u64, w: &mut dyn Write) -> Result<()> {
    let mut rng = stream_rng(seed, 0, 0);
    writeln!(w, "index,group,secret,public").at(Stage::Output)?;
    for i in 0..count {
        let k = KeyPair::<G>::generate(&mut rng);
        writeln!(w, "{i},{},{},{}", G::NAME, hex(&G::scalar_le_bytes(k.secret())), hex(&encode_point(&k.public()))).at(Stage::Output)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(cfg) = scenario_config(cli) {
        let cfg = cfg?;
        if cli.print_config {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        let mut w = output(cfg.out.as_deref())?;
        let report = match cli.command {
            Command::RecommenderSim(_) => {
                let run = run_recommender(&cfg)?;
                run.write_csv(&mut w)?;
                run.report
            }
            Command::LocationSim(_) => {
                let run = run_location(&cfg)?;
                run.write_csv(&mut w)?;
                run.report
            }
            _ => {
                let run = run_median(&cfg)?;
                run.write_csv(&mut w)?;
                run.report
            }
        };
        w.flush().at(Stage::Output)?;
        drop(w);
        summary(&cfg, &report);
        return Ok(());
    }
    let mut w = output(cli.out.as_deref())?;
    match &cli.command {
        Command::BenchBytes(a) => {
            if a.users.len() != a.epsilons.len() {
                return Err(HarnessError::new(Stage::Config, "--users and --epsilons need the same number of entries"));
            }
            let table = bench_bytes(a.programs, a.delta, &a.users, &a.epsilons, a.median_epsilon)?;
            if cli.out.is_some() {
                write_bytes_csv(&table, &mut w)?;
            }
            print!("{table}");
        }
        Command::Keygen(a) => {
            let seed = cli.seed.ok_or_else(|| HarnessError::new(Stage::Keygen, "--seed is required"))?;
            match a.group {
                KeyGroup::Ristretto255 => write_keys::<Ristretto255>(a.count, seed, &mut w)?,
                KeyGroup::P224 => write_keys::<P224>(a.count, seed, &mut w)?,
            }
        }
        _ => unreachable!("scenario commands handled above"),
    }
    w.flush().at(Stage::Output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
