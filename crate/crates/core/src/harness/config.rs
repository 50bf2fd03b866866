//! INI experiment configuration.
//!
//! ```ini
//! [data]
//! schemes = BPSK,QPSK,8PSK,PAM4,QAM16,QAM64,CPFSK,GFSK
//! snr_min_db = -20
//! snr_max_db = 18
//! snr_step_db = 2
//! per_class_per_snr = 250
//! signal_len = 128
//! seed = 0
//!
//! [split]
//! target_frac = 0.01
//! test_frac = 0.2
//! snr_min_exclusive_db = 10
//! seed = 0
//!
//! [expand]
//! method = duse,random
//! rate = 0.01,0.04,0.07
//! rounds = 4
//! epochs = 20
//! balance = false
//! seed = 0
//!
//! [eval]
//! epochs = 50
//! seeds = 3
//! lr = 0.001
//! batch = 128
//! ```
//!
//! Missing keys take the defaults shown. `method` and `rate` accept comma
//! lists; every combination is run. `snr_min_exclusive_db = none` disables
//! the SNR filter.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use super::{EvalConfig, HarnessError};
use crate::expansion::{ExpansionPlan, Method};
use crate::sigsynth::{GenSpec, ModulationScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub target_frac: f64,
    pub test_frac: f64,
    pub snr_min_exclusive_db: Option<i32>,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            target_frac: 0.01,
            test_frac: 0.2,
            snr_min_exclusive_db: Some(10),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandSettings {
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    pub rounds: usize,
    pub epochs: usize,
    pub balance: bool,
    pub seed: u64,
}

impl Default for ExpandSettings {
    fn default() -> Self {
        ExpandSettings {
            methods: vec![Method::Duse],
            rates: vec![0.01],
            rounds: 4,
            epochs: 20,
            balance: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub epochs: usize,
    pub seeds: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            epochs: 50,
            seeds: 3,
            lr: 1e-3,
            batch: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: GenSpec,
    pub split: SplitSettings,
    pub expand: ExpandSettings,
    pub eval: EvalSettings,
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("{value:?}: {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(format!("{other:?} is not a boolean")),
    }
}

impl ExperimentConfig {
    pub fn from_ini_str(text: &str) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        let mut cfg = ExperimentConfig::default();
        let mut errors = Vec::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                let result = cfg.set(section, key, value);
                if let Err(reason) = result {
                    let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                    errors.push(format!("{name}: {reason}"));
                }
            }
        }
        if let Err(mut more) = cfg.validate() {
            errors.append(&mut more);
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(HarnessError::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::dataio::DataError::io(path, e))?;
        Self::from_ini_str(&text).map_err(|e| match e {
            HarnessError::Config(list) => {
                HarnessError::Config(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect())
            }
            other => other,
        })
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        match (section, key) {
            ("data", "schemes") => {
                self.data.schemes = parse_list::<ModulationScheme>(value)?;
            }
            ("data", "snr_min_db") => self.data.snr_min_db = parse(value)?,
            ("data", "snr_max_db") => self.data.snr_max_db = parse(value)?,
            ("data", "snr_step_db") => self.data.snr_step_db = parse(value)?,
            ("data", "per_class_per_snr") => self.data.per_class_per_snr = parse(value)?,
            ("data", "signal_len") => self.data.signal_len = parse(value)?,
            ("data", "seed") => self.data.seed = parse(value)?,
            ("split", "target_frac") => self.split.target_frac = parse(value)?,
            ("split", "test_frac") => self.split.test_frac = parse(value)?,
            ("split", "snr_min_exclusive_db") => {
                self.split.snr_min_exclusive_db = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(v)?),
                }
            }
            ("split", "seed") => self.split.seed = parse(value)?,
            ("expand", "method") => self.expand.methods = parse_list(value)?,
            ("expand", "rate") => self.expand.rates = parse_list(value)?,
            ("expand", "rounds") => self.expand.rounds = parse(value)?,
            ("expand", "epochs") => self.expand.epochs = parse(value)?,
            ("expand", "balance") => self.expand.balance = parse_bool(value)?,
            ("expand", "seed") => self.expand.seed = parse(value)?,
            ("eval", "epochs") => self.eval.epochs = parse(value)?,
            ("eval", "seeds") => self.eval.seeds = parse(value)?,
            ("eval", "lr") => self.eval.lr = parse(value)?,
            ("eval", "batch") => self.eval.batch = parse(value)?,
            ("data" | "split" | "expand" | "eval", _) => return Err("unknown key".into()),
            ("", _) => return Err("key outside any section".into()),
            _ => return Err(format!("unknown section {section:?}")),
        }
        Ok(())
    }

    /// Range checks that do not depend on the dataset.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if let Err(e) = self.data.validate() {
            errors.push(format!("data: {e}"));
        }
        let s = &self.split;
        if !(s.target_frac > 0.0 && s.test_frac > 0.0 && s.target_frac + s.test_frac < 1.0) {
            errors.push(format!(
                "split.target_frac/test_frac: must be positive and sum below 1 (got {} and {})",
                s.target_frac, s.test_frac
            ));
        }
        for &r in &self.expand.rates {
            if !(r > 0.0 && r <= 1.0) {
                errors.push(format!("expand.rate: {r} outside (0, 1]"));
            }
        }
        for (name, v) in [
            ("expand.rounds", self.expand.rounds),
            ("expand.epochs", self.expand.epochs),
            ("eval.epochs", self.eval.epochs),
            ("eval.seeds", self.eval.seeds),
            ("eval.batch", self.eval.batch),
        ] {
            if v == 0 {
                errors.push(format!("{name}: must be positive"));
            }
        }
        if !(self.eval.lr > 0.0 && self.eval.lr.is_finite()) {
            errors.push(format!("eval.lr: {} must be positive", self.eval.lr));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Expansion plan for one (method, rate) cell. Expansion training shares
    /// the evaluation learning rate and batch size; the forgetting probe uses
    /// the evaluation epoch budget.
    pub fn plan(&self, method: Method, rate: f64) -> ExpansionPlan {
        ExpansionPlan {
            method,
            rate,
            rounds: self.expand.rounds,
            epochs: self.expand.epochs,
            seed: self.expand.seed,
            balance: self.expand.balance || method == Method::DuseBalanced,
            warm_start: false,
            batch_size: self.eval.batch,
            learning_rate: self.eval.lr,
            probe_epochs: self.eval.epochs,
        }
    }

    /// Evaluation seeds derive from the expansion seed, so every method in a
    /// run is evaluated on the same seeds.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            epochs: self.eval.epochs,
            num_seeds: self.eval.seeds,
            learning_rate: self.eval.lr,
            batch_size: self.eval.batch,
            base_seed: self.expand.seed,
        }
    }
}
