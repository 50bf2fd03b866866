//! Experiment driver: multi-seed evaluation, analysis exports, INI
//! configuration, end-to-end runs and report tables.

mod config;
mod run;
pub mod selftest;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError, Dataset, Digest};
use crate::expansion::ExpansionError;
use crate::nnet::{self, Architecture, Model, ModelState, NnetError, TrainConfig};
use crate::seed;
use crate::sigsynth::SynthError;

pub use config::{EvalSettings, ExpandSettings, ExperimentConfig, SplitSettings};
pub use run::{run_experiment, artifact_stem, RunArtifacts};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("invalid evaluation input: {0}")]
    InvalidInput(String),
    #[error("reports mix dataset digests {0} and {1}")]
    MixedDigests(Digest, Digest),
    #[error("duplicate report cell for method {method} at rate {rate}")]
    DuplicateCell { method: String, rate: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Evaluation-stage training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub epochs: usize,
    pub num_seeds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub base_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 50,
            num_seeds: 3,
            learning_rate: 1e-3,
            batch_size: 128,
            base_seed: 0,
        }
    }
}

impl EvalConfig {
    /// Init and shuffle seed of evaluation run `s`.
    pub fn run_seed(&self, s: usize) -> u64 {
        seed::derive(self.base_seed, &[seed::tag::EVAL, s as u64])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment_id: String,
    pub dataset_digest: Digest,
    pub method: String,
    pub rate: f64,
    pub rounds: usize,
    pub train_size: usize,
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation (divisor n - 1); zero for a single seed.
    pub std_accuracy: f64,
    pub per_class_test_accuracy: Vec<f64>,
    /// Kept out of the JSON so reruns are byte-identical; see
    /// [`write_report`].
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl EvalReport {
    pub fn labeled(mut self, experiment_id: &str, method: &str, rate: f64, rounds: usize) -> Self {
        self.experiment_id = experiment_id.to_string();
        self.method = method.to_string();
        self.rate = rate;
        self.rounds = rounds;
        self
    }

    /// Mean/std recomputed from the per-seed list agree with the stored values.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_and_std(&self.per_seed_accuracy);
        let in_unit = |a: &f64| (0.0..=1.0).contains(a);
        (m - self.mean_accuracy).abs() <= 1e-9
            && (s - self.std_accuracy).abs() <= 1e-9
            && self.per_seed_accuracy.iter().all(in_unit)
            && self.per_class_test_accuracy.iter().all(in_unit)
    }
}

/// Mean and sample standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Overall and per-class accuracy of `model` on `indices`. Classes with no
/// test samples report 0.
pub fn test_accuracy(model: &ModelState, dataset: &Dataset, indices: &[usize]) -> Result<(f64, Vec<f64>), HarnessError> {
    if indices.is_empty() {
        return Err(HarnessError::InvalidInput("empty test set".into()));
    }
    let xs: Vec<&[f32]> = indices.iter().map(|&i| dataset.records[i].data.as_slice()).collect();
    let predictions = nnet::predict_all(model, &xs)?;
    let classes = dataset.num_classes as usize;
    let (mut hits, mut totals) = (vec![0usize; classes], vec![0usize; classes]);
    for (&i, &p) in indices.iter().zip(&predictions) {
        let y = dataset.records[i].label as usize;
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    let overall = hits.iter().sum::<usize>() as f64 / indices.len() as f64;
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok((overall, per_class))
}

/// Train a fresh model per seed on `train` and measure accuracy on `test`.
/// Returns the report (unlabeled) and the trained models.
pub fn evaluate_with_models(
    dataset: &Dataset,
    train: &[usize],
    test: &[usize],
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<ModelState>), HarnessError> {
    let started = std::time::Instant::now();
    if test.is_empty() {
        return Err(HarnessError::InvalidInput("empty test set".into()));
    }
    if train.is_empty() {
        return Err(HarnessError::InvalidInput("empty training set".into()));
    }
    if config.num_seeds == 0 {
        return Err(HarnessError::InvalidInput("need at least one seed".into()));
    }
    let train_set: BTreeSet<usize> = train.iter().copied().collect();
    if let Some(i) = test.iter().find(|i| train_set.contains(i)) {
        return Err(HarnessError::InvalidInput(format!("index {i} is in both train and test")));
    }
    if let Some(&i) = train.iter().chain(test).find(|&&i| i >= dataset.len()) {
        return Err(HarnessError::InvalidInput(format!(
            "index {i} out of range for {} records",
            dataset.len()
        )));
    }
    let arch = Architecture::reference(dataset.num_classes as usize, dataset.signal_len as usize);
    let xs: Vec<&[f32]> = train.iter().map(|&i| dataset.records[i].data.as_slice()).collect();
    let ys: Vec<usize> = train.iter().map(|&i| dataset.records[i].label as usize).collect();
    let classes = dataset.num_classes as usize;
    let mut per_seed = Vec::with_capacity(config.num_seeds);
    let mut per_class = vec![0.0; classes];
    let mut models = Vec::with_capacity(config.num_seeds);
    for s in 0..config.num_seeds {
        let run_seed = config.run_seed(s);
        let tc = TrainConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            shuffle_seed: run_seed,
            record_correctness: false,
        };
        let (model, _) = nnet::train(&Model::init(arch, run_seed)?, &xs, &ys, &tc)?;
        let (acc, classwise) = test_accuracy(&model, dataset, test)?;
        per_seed.push(acc);
        for (total, a) in per_class.iter_mut().zip(classwise) {
            *total += a;
        }
        models.push(model);
    }
    per_class.iter_mut().for_each(|a| *a /= config.num_seeds as f64);
    let (mean, std) = mean_and_std(&per_seed);
    let report = EvalReport {
        experiment_id: String::new(),
        dataset_digest: dataset.digest()?,
        method: String::new(),
        rate: 0.0,
        rounds: 0,
        train_size: train.len(),
        per_seed_accuracy: per_seed,
        mean_accuracy: mean,
        std_accuracy: std,
        per_class_test_accuracy: per_class,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((report, models))
}

pub fn evaluate(dataset: &Dataset, train: &[usize], test: &[usize], config: &EvalConfig) -> Result<EvalReport, HarnessError> {
    Ok(evaluate_with_models(dataset, train, test, config)?.0)
}

/// Per-class counts of the listed records, in label order.
pub fn class_histogram(dataset: &Dataset, indices: &[usize]) -> Vec<usize> {
    crate::expansion::class_counts(dataset, indices)
}

/// Feature CSV: `index,label,f0..f{H-1}` rows from the penultimate layer,
/// in the order given.
pub fn features_csv(model: &ModelState, dataset: &Dataset, indices: &[usize]) -> Result<String, HarnessError> {
    let xs: Vec<&[f32]> = indices.iter().map(|&i| dataset.records[i].data.as_slice()).collect();
    let outputs = nnet::forward(model, &xs)?;
    let mut out = String::from("index,label");
    for k in 0..model.arch.hidden {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for (&i, o) in indices.iter().zip(&outputs) {
        let _ = write!(out, "{i},{}", dataset.records[i].label);
        for v in &o.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn dump_features(model: &ModelState, dataset: &Dataset, indices: &[usize], path: &Path) -> Result<(), HarnessError> {
    let csv = features_csv(model, dataset, indices)?;
    dataio::atomic_write(path, csv.as_bytes())?;
    Ok(())
}

/// `eval.json` -> `eval.timing.json`.
pub fn timing_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("timing.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Timing {
    experiment_id: String,
    wall_time_seconds: f64,
}

/// Write a report and its wall-time sidecar.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), HarnessError> {
    dataio::write_json(report, path)?;
    let timing = Timing {
        experiment_id: report.experiment_id.clone(),
        wall_time_seconds: report.wall_time_seconds,
    };
    dataio::write_json(&timing, &timing_path(path))?;
    Ok(())
}

/// Read a report, restoring wall time from its sidecar when present.
pub fn read_report(path: &Path) -> Result<EvalReport, HarnessError> {
    let mut report: EvalReport = dataio::read_json(path)?;
    let sidecar = timing_path(path);
    if sidecar.exists() {
        let timing: Timing = dataio::read_json(&sidecar)?;
        report.wall_time_seconds = timing.wall_time_seconds;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "text" => Ok(TableFormat::Text),
            _ => Err(format!("unknown table format {s:?} (expected csv or text)")),
        }
    }
}

pub const MISSING_CELL: &str = "—";

/// Percent label for a rate column: 0.07 -> "7%".
pub fn rate_label(rate: f64) -> String {
    format!("{}%", (rate * 1e4).round() / 100.0)
}

/// `68.07±2.41` from fractional accuracies.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", mean * 100.0, std * 100.0)
}

/// Methods as rows (first-seen order), rates as columns (ascending).
pub fn render_report(reports: &[EvalReport], format: TableFormat) -> Result<String, HarnessError> {
    if let Some(first) = reports.first() {
        if let Some(other) = reports.iter().find(|r| r.dataset_digest != first.dataset_digest) {
            return Err(HarnessError::MixedDigests(first.dataset_digest, other.dataset_digest));
        }
    }
    let mut methods: Vec<&str> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !rates.contains(&r.rate) {
            rates.push(r.rate);
        }
    }
    rates.sort_by(f64::total_cmp);
    let mut grid = vec![vec![None; rates.len()]; methods.len()];
    for r in reports {
        let row = methods.iter().position(|m| *m == r.method).expect("collected above");
        let col = rates.iter().position(|&x| x == r.rate).expect("collected above");
        if grid[row][col].is_some() {
            return Err(HarnessError::DuplicateCell {
                method: r.method.clone(),
                rate: r.rate,
            });
        }
        grid[row][col] = Some(format_cell(r.mean_accuracy, r.std_accuracy));
    }
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(methods.len() + 1);
    rows.push(
        std::iter::once("method".to_string())
            .chain(rates.iter().map(|&r| rate_label(r)))
            .collect(),
    );
    for (m, cells) in methods.iter().zip(grid) {
        rows.push(
            std::iter::once(m.to_string())
                .chain(cells.into_iter().map(|c| c.unwrap_or_else(|| MISSING_CELL.to_string())))
                .collect(),
        );
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        TableFormat::Text => {
            let cols = rows[0].len();
            let widths: Vec<usize> = (0..cols)
                .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
                .collect();
            for row in rows {
                let mut line = String::new();
                for (c, cell) in row.iter().enumerate() {
                    if c > 0 {
                        line.push_str("  ");
                    }
                    line.push_str(cell);
                    line.extend(std::iter::repeat_n(' ', widths[c] - cell.chars().count()));
                }
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
    }
    Ok(out)
}
