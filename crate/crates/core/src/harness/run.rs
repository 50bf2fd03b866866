use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{dump_features, evaluate_with_models, render_report, write_report, EvalReport, ExperimentConfig, HarnessError, TableFormat};
use crate::dataio::{self, Dataset, Digest, Manifest, SplitIndices};
use crate::expansion::{self, ExpansionResult, Method};
use crate::sigsynth::{self, GenSpec};

/// Everything one `run_experiment` call produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    /// Digest of the SNR-filtered dataset all indices refer to.
    pub dataset_digest: Digest,
    pub splits: SplitIndices,
    pub expansions: Vec<ExpansionResult>,
    pub reports: Vec<EvalReport>,
    pub report_paths: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct DigestIndex {
    files: BTreeMap<String, Digest>,
}

/// File stem for one (method, rate) cell: `duse-r0.07`.
pub fn artifact_stem(method: Method, rate: f64) -> String {
    format!("{method}-r{rate}")
}

fn file_digest(path: &Path) -> Result<Digest, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| dataio::DataError::io(path, e))?;
    Ok(Digest::of(&bytes))
}

/// Reuse `dataset.amrd` when it was generated from the same spec.
fn generate_or_load(spec: &GenSpec, out_dir: &Path) -> Result<Dataset, HarnessError> {
    let data_path = out_dir.join("dataset.amrd");
    let spec_path = out_dir.join("dataset.spec.json");
    if data_path.exists() && spec_path.exists() {
        let stored: GenSpec = dataio::read_json(&spec_path)?;
        if &stored == spec {
            return Ok(dataio::read_dataset(&data_path)?);
        }
    }
    let dataset = sigsynth::generate_dataset(spec)?;
    dataio::write_dataset(&dataset, &data_path)?;
    let manifest = Manifest {
        classes: sigsynth::class_names(spec),
    };
    dataio::write_json(&manifest, &Manifest::path_for(&data_path))?;
    dataio::write_json(spec, &spec_path)?;
    Ok(dataset)
}

/// Generate or load the dataset, filter by SNR, split, then expand and
/// evaluate every (method, rate) pair. All artifacts land in `out_dir`
/// together with `digests.json` covering each file written.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, experiment_id: &str) -> Result<RunArtifacts, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| dataio::DataError::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = vec![out_dir.join("dataset.amrd")];

    let full = generate_or_load(&config.data, out_dir)?;
    let filtered = match config.split.snr_min_exclusive_db {
        Some(t) => dataio::filter_by_snr(&full, t),
        None => full,
    };
    let filtered_path = out_dir.join("filtered.amrd");
    let dataset_digest = dataio::write_dataset(&filtered, &filtered_path)?;
    dataio::write_json(
        &Manifest {
            classes: sigsynth::class_names(&config.data),
        },
        &Manifest::path_for(&filtered_path),
    )?;
    written.push(filtered_path);

    let splits = dataio::make_splits(&filtered, config.split.target_frac, config.split.test_frac, config.split.seed)?;
    let splits_path = out_dir.join("splits.json");
    dataio::write_json(&splits, &splits_path)?;
    written.push(splits_path);

    let eval_config = config.eval_config();
    let mut expansions = Vec::new();
    let mut reports = Vec::new();
    let mut report_paths = Vec::new();
    for &method in &config.expand.methods {
        for &rate in &config.expand.rates {
            let stem = artifact_stem(method, rate);
            let plan = config.plan(method, rate);
            let traced = expansion::expand(&filtered, &splits, &plan)?;
            let result = traced.result;
            let expansion_path = out_dir.join(format!("{stem}.expansion.json"));
            dataio::write_json(&result, &expansion_path)?;
            written.push(expansion_path);
            if let Some(scores) = traced.reports.last() {
                let scores_path = out_dir.join(format!("{stem}.scores.csv"));
                dataio::atomic_write(&scores_path, scores.to_csv().as_bytes())?;
                written.push(scores_path);
            }

            let (report, models) = evaluate_with_models(&filtered, &result.expanded_target, &splits.test, &eval_config)?;
            let report = report.labeled(&format!("{experiment_id}-{stem}"), method.name(), rate, result.plan.rounds);
            let features_path = out_dir.join(format!("{stem}.features.csv"));
            dump_features(&models[0], &filtered, &result.expanded_target, &features_path)?;
            written.push(features_path);
            let report_path = out_dir.join(format!("{stem}.eval.json"));
            write_report(&report, &report_path)?;
            written.push(report_path.clone());

            expansions.push(result);
            reports.push(report);
            report_paths.push(report_path);
        }
    }

    for (format, name) in [(TableFormat::Text, "report.txt"), (TableFormat::Csv, "report.csv")] {
        let path = out_dir.join(name);
        dataio::atomic_write(&path, render_report(&reports, format)?.as_bytes())?;
        written.push(path);
    }
    let mut index = DigestIndex { files: BTreeMap::new() };
    for path in &written {
        let name = path.file_name().expect("artifact file").to_string_lossy().into_owned();
        index.files.insert(name, file_digest(path)?);
    }
    dataio::write_json(&index, &out_dir.join("digests.json"))?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        dataset_digest,
        splits,
        expansions,
        reports,
        report_paths,
    })
}
