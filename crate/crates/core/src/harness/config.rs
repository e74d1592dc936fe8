use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AtStage, HarnessError, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Recommender,
    Location,
    Median,
}

/// Every knob of a scenario run. Fields that do not apply to the chosen
/// scenario are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    pub out: Option<PathBuf>,
    /// Sketch accuracy and failure probability.
    pub epsilon: f64,
    pub delta: f64,
    /// Run the cryptographic layer; otherwise aggregate plaintext sketches.
    pub crypto: bool,

    pub group_size: usize,
    pub dropout_rate: f64,
    /// Take the recovery path even when nobody dropped.
    pub force_recovery: bool,

    pub users: usize,
    pub programs: usize,
    /// Mean number of programs each user watched.
    pub history_len: usize,
    pub zipf_exponent: f64,
    /// Neighbours kept per item.
    pub neighbors: usize,
    /// Items or cells scored by the top-k error.
    pub top_items: usize,

    pub entities: usize,
    pub grid: usize,
    pub slots: usize,
    /// Position reports per entity per slot at peak activity.
    pub reports_per_slot: usize,
    pub alpha: f64,

    pub reporters: usize,
    pub values_per_reporter: usize,
    pub domain_lo: i64,
    pub domain_hi: i64,
    pub dp_epsilon: Option<f64>,
    pub authorities: usize,
    /// Per-contributor cell cap `c_max` sizing the decryption table.
    pub value_cap: u64,
    pub values_file: Option<PathBuf>,
    pub values_column: Option<String>,
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let (epsilon, delta, trials) = match scenario {
            Scenario::Recommender | Scenario::Location => (0.01, 0.01, 1),
            Scenario::Median => (0.05, 0.05, 40),
        };
        ExperimentConfig {
            scenario,
            seed: 1,
            trials,
            out: None,
            epsilon,
            delta,
            crypto: true,
            group_size: 100,
            dropout_rate: 0.0,
            force_recovery: false,
            users: 1000,
            programs: 700,
            history_len: 20,
            zipf_exponent: 1.0,
            neighbors: 10,
            top_items: match scenario {
                Scenario::Location => 100,
                _ => 50,
            },
            entities: 536,
            grid: 100,
            slots: 24,
            reports_per_slot: 6,
            alpha: 0.5,
            reporters: 1200,
            values_per_reporter: 1,
            domain_lo: 0,
            domain_hi: 1000,
            dp_epsilon: None,
            authorities: 3,
            value_cap: 16,
            values_file: None,
            values_column: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::new(Stage::Config, m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("epsilon and delta must lie in (0, 1), got {} and {}", self.epsilon, self.delta));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if let Some(e) = self.dp_epsilon {
            if !(e > 0.0) {
                return bad(format!("dp_epsilon must be positive, got {e}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.zipf_exponent > 0.0) {
            return bad(format!("zipf_exponent must be positive, got {}", self.zipf_exponent));
        }
        if self.domain_hi <= self.domain_lo {
            return bad(format!("empty domain {}:{}", self.domain_lo, self.domain_hi));
        }
        let counts = [
            ("trials", self.trials),
            ("group_size", self.group_size),
            ("users", self.users),
            ("programs", self.programs),
            ("history_len", self.history_len),
            ("neighbors", self.neighbors),
            ("top_items", self.top_items),
            ("entities", self.entities),
            ("slots", self.slots),
            ("reports_per_slot", self.reports_per_slot),
            ("reporters", self.reporters),
            ("values_per_reporter", self.values_per_reporter),
            ("authorities", self.authorities),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2".into());
        }
        if self.grid < 2 {
            return bad("grid must be at least 2".into());
        }
        if self.value_cap == 0 {
            return bad("value_cap must be positive".into());
        }
        Ok(())
    }

    /// Reads a TOML file of [`ConfigOverrides`] onto the defaults of its
    /// scenario (or of `fallback` when the file names none).
    pub fn from_toml_file(path: &Path, fallback: Scenario) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let o = ConfigOverrides::from_toml(&text)?;
        let mut cfg = Self::defaults(o.scenario.unwrap_or(fallback));
        o.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Optional values layered over [`ExperimentConfig::defaults`]; the keys of
/// a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub crypto: Option<bool>,
    pub group_size: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub force_recovery: Option<bool>,
    pub users: Option<usize>,
    pub programs: Option<usize>,
    pub history_len: Option<usize>,
    pub zipf_exponent: Option<f64>,
    pub neighbors: Option<usize>,
    pub top_items: Option<usize>,
    pub entities: Option<usize>,
    pub grid: Option<usize>,
    pub slots: Option<usize>,
    pub reports_per_slot: Option<usize>,
    pub alpha: Option<f64>,
    pub reporters: Option<usize>,
    pub values_per_reporter: Option<usize>,
    pub domain_lo: Option<i64>,
    pub domain_hi: Option<i64>,
    pub dp_epsilon: Option<f64>,
    pub authorities: Option<usize>,
    pub value_cap: Option<u64>,
    pub values_file: Option<PathBuf>,
    pub values_column: Option<String>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).at(Stage::Config)
    }

    pub fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        set!(
            scenario, seed, trials, epsilon, delta, crypto, group_size, dropout_rate, force_recovery, users,
            programs, history_len, zipf_exponent, neighbors, top_items, entities, grid, slots, reports_per_slot,
            alpha, reporters, values_per_reporter, domain_lo, domain_hi, authorities, value_cap
        );
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if self.dp_epsilon.is_some() {
            c.dp_epsilon = self.dp_epsilon;
        }
        if self.values_file.is_some() {
            c.values_file = self.values_file.clone();
        }
        if self.values_column.is_some() {
            c.values_column = self.values_column.clone();
        }
    }
}
