//! Per-sample informativeness scores.
//!
//! Margin `u = p1* - p2*` is the expansion loop's criterion (smallest is most
//! informative). Entropy, least confidence, GraNd and forgetting counts are
//! the baseline selectors; herding works on penultimate-layer features.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError, Dataset, Digest, FnvHasher};
use crate::nnet::{self, CorrectnessLog, Model, ModelState, NnetError, TrainConfig};
use crate::seed;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("margin needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("nothing to score")]
    Empty,
    #[error("correctness log needs at least two epochs, got {0}")]
    TooFewEpochs(usize),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("malformed score csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Difference between the two largest probabilities.
pub fn margin_uncertainty(probs: &[f64]) -> Result<f64, ScoringError> {
    if probs.len() < 2 {
        return Err(ScoringError::TooFewClasses(probs.len()));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok((first - second).clamp(0.0, 1.0))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

pub fn least_confidence_score(probs: &[f64]) -> f64 {
    1.0 - probs.iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Margin,
    Entropy,
    LeastConfidence,
    Grand,
    Forgetting,
}

/// Which end of the score range is most informative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl ScoreMethod {
    pub fn direction(self) -> Direction {
        match self {
            ScoreMethod::Margin => Direction::Min,
            _ => Direction::Max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Margin => "margin",
            ScoreMethod::Entropy => "entropy",
            ScoreMethod::LeastConfidence => "least_confidence",
            ScoreMethod::Grand => "grand",
            ScoreMethod::Forgetting => "forgetting",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ScoreMethod::Margin,
            ScoreMethod::Entropy,
            ScoreMethod::LeastConfidence,
            ScoreMethod::Grand,
            ScoreMethod::Forgetting,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown score method {s:?}"))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Min => "min",
            Direction::Max => "max",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Direction::Min),
            "max" => Ok(Direction::Max),
            _ => Err(format!("unknown direction {s:?}")),
        }
    }
}

/// Scores aligned with a list of dataset indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: ScoreMethod,
    pub direction: Direction,
    pub model_digest: Digest,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ScoreReport {
    pub fn new(method: ScoreMethod, model_digest: Digest, indices: Vec<usize>, scores: Vec<f64>) -> Self {
        ScoreReport {
            method,
            direction: method.direction(),
            model_digest,
            indices,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.indices.len() != self.scores.len() {
            return Err(format!("{} indices but {} scores", self.indices.len(), self.scores.len()));
        }
        if let Some(s) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(format!("non-finite score {s}"));
        }
        if self.method == ScoreMethod::Margin && self.scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
            return Err("margin score outside [0, 1]".into());
        }
        Ok(())
    }

    /// `#method=..,direction=..,model_digest=..` then `aux_index,score` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "#method={},direction={},model_digest={}\naux_index,score\n",
            self.method, self.direction, self.model_digest
        );
        for (i, s) in self.indices.iter().zip(&self.scores) {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ScoringError> {
        let bad = |line: usize, reason: String| ScoringError::Csv { line, reason };
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| bad(1, "missing #metadata header".into()))?;
        let (mut method, mut direction, mut digest) = (None, None, None);
        for kv in meta.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(1, format!("bad field {kv:?}")))?;
            match k {
                "method" => method = Some(v.parse::<ScoreMethod>().map_err(|e| bad(1, e))?),
                "direction" => direction = Some(v.parse::<Direction>().map_err(|e| bad(1, e))?),
                "model_digest" => digest = Some(v.parse::<Digest>().map_err(|e| bad(1, e.to_string()))?),
                _ => return Err(bad(1, format!("unknown field {k:?}"))),
            }
        }
        if lines.next() != Some("aux_index,score") {
            return Err(bad(2, "expected column header aux_index,score".into()));
        }
        let (mut indices, mut scores) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let (i, s) = line.split_once(',').ok_or_else(|| bad(n + 3, "expected two columns".into()))?;
            indices.push(i.parse().map_err(|e| bad(n + 3, format!("{e}")))?);
            scores.push(s.parse().map_err(|e| bad(n + 3, format!("{e}")))?);
        }
        Ok(ScoreReport {
            method: method.ok_or_else(|| bad(1, "missing method".into()))?,
            direction: direction.ok_or_else(|| bad(1, "missing direction".into()))?,
            model_digest: digest.ok_or_else(|| bad(1, "missing model_digest".into()))?,
            indices,
            scores,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScoringError> {
        Ok(dataio::atomic_write(path, self.to_csv().as_bytes())?)
    }
}

pub(crate) fn inputs<'a>(dataset: &'a Dataset, indices: &[usize]) -> Vec<&'a [f32]> {
    indices.iter().map(|&i| dataset.records[i].data.as_slice()).collect()
}

pub(crate) fn labels(dataset: &Dataset, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| dataset.records[i].label as usize).collect()
}

/// Softmax probabilities for each listed record, in list order.
pub fn probabilities(model: &ModelState, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>, ScoringError> {
    let outs = nnet::forward(model, &inputs(dataset, indices))?;
    Ok(outs
        .into_iter()
        .map(|o| softmax(&o.logits.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect())
}

/// Margin, entropy or least-confidence scores from one model snapshot.
pub fn uncertainty_report(
    model: &ModelState,
    dataset: &Dataset,
    indices: &[usize],
    method: ScoreMethod,
) -> Result<ScoreReport, ScoringError> {
    let probs = probabilities(model, dataset, indices)?;
    let scores = probs
        .iter()
        .map(|p| match method {
            ScoreMethod::Margin => margin_uncertainty(p),
            ScoreMethod::Entropy => Ok(entropy_score(p)),
            ScoreMethod::LeastConfidence => Ok(least_confidence_score(p)),
            other => Err(ScoringError::Sizing(format!("{other} is not a probability score"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreReport::new(method, model.digest(), indices.to_vec(), scores))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrandConfig {
    pub num_runs: usize,
    pub short_epochs: usize,
    pub base_seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for GrandConfig {
    fn default() -> Self {
        GrandConfig {
            num_runs: 3,
            short_epochs: 5,
            base_seed: 0,
            batch_size: 128,
            learning_rate: 1e-3,
        }
    }
}

/// Models trained for GraNd run `r`: init seed `base_seed + r`, shuffled by
/// a stream derived from the same pair.
pub fn grand_models(
    dataset: &Dataset,
    train_indices: &[usize],
    config: &GrandConfig,
) -> Result<Vec<ModelState>, ScoringError> {
    let arch = nnet::Architecture::reference(dataset.num_classes as usize, dataset.signal_len as usize);
    let xs = inputs(dataset, train_indices);
    let ys = labels(dataset, train_indices);
    (0..config.num_runs)
        .map(|r| {
            let init_seed = config.base_seed.wrapping_add(r as u64);
            let model = Model::init(arch, init_seed)?;
            let tc = TrainConfig {
                epochs: config.short_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                shuffle_seed: seed::derive(init_seed, &[seed::tag::GRAND]),
                record_correctness: false,
            };
            Ok(nnet::train(&model, &xs, &ys, &tc)?.0)
        })
        .collect()
}

/// Mean per-sample gradient norm over `num_runs` short training runs on
/// `train_indices`, scored on `aux_indices`.
pub fn grand_scores(
    dataset: &Dataset,
    train_indices: &[usize],
    aux_indices: &[usize],
    config: &GrandConfig,
) -> Result<ScoreReport, ScoringError> {
    if aux_indices.is_empty() {
        return Err(ScoringError::Empty);
    }
    if config.num_runs == 0 {
        return Err(ScoringError::Sizing("GraNd needs at least one run".into()));
    }
    let models = grand_models(dataset, train_indices, config)?;
    let mut scores = vec![0.0; aux_indices.len()];
    let mut digest = FnvHasher::new();
    for model in &models {
        digest.update(&model.digest().0.to_le_bytes());
        for (s, &i) in scores.iter_mut().zip(aux_indices) {
            let r = &dataset.records[i];
            *s += nnet::per_sample_gradient_norm(model, &r.data, r.label as usize)?;
        }
    }
    let runs = models.len() as f64;
    scores.iter_mut().for_each(|s| *s /= runs);
    Ok(ScoreReport::new(ScoreMethod::Grand, digest.finish(), aux_indices.to_vec(), scores))
}

/// Correct-to-incorrect transitions per sample. Samples never classified
/// correctly get the epoch count, ranking them as most forgettable.
pub fn forgetting_counts(log: &CorrectnessLog) -> Result<Vec<usize>, ScoringError> {
    if log.epochs < 2 {
        return Err(ScoringError::TooFewEpochs(log.epochs));
    }
    let mut counts = vec![0usize; log.samples];
    let mut ever = vec![false; log.samples];
    for e in 0..log.epochs {
        let row = log.epoch(e);
        for (s, &c) in row.iter().enumerate() {
            ever[s] |= c;
            if e > 0 && log.epoch(e - 1)[s] && !c {
                counts[s] += 1;
            }
        }
    }
    for (c, learned) in counts.iter_mut().zip(ever) {
        if !learned {
            *c = log.epochs;
        }
    }
    Ok(counts)
}

/// Forgetting scores: a probe trained on `target ∪ aux` with correctness
/// recorded, counts reported for the auxiliary samples.
pub fn forgetting_scores(
    dataset: &Dataset,
    target: &[usize],
    aux: &[usize],
    config: &TrainConfig,
    init_seed: u64,
) -> Result<ScoreReport, ScoringError> {
    if aux.is_empty() {
        return Err(ScoringError::Empty);
    }
    let pool: Vec<usize> = target.iter().chain(aux).copied().collect();
    let arch = nnet::Architecture::reference(dataset.num_classes as usize, dataset.signal_len as usize);
    let model = Model::init(arch, init_seed)?;
    let tc = TrainConfig {
        record_correctness: true,
        ..config.clone()
    };
    let (probe, log) = nnet::train(&model, &inputs(dataset, &pool), &labels(dataset, &pool), &tc)?;
    let aux_columns: Vec<usize> = (target.len()..pool.len()).collect();
    let log = log.expect("correctness requested").select(&aux_columns);
    let counts = forgetting_counts(&log)?;
    Ok(ScoreReport::new(
        ScoreMethod::Forgetting,
        probe.digest(),
        aux.to_vec(),
        counts.into_iter().map(|c| c as f64).collect(),
    ))
}

/// Split `budget` across classes in proportion to `counts` (largest
/// remainder; remainder ties go to the lower class id).
pub fn largest_remainder(budget: usize, counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| budget * c / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // exact remainders: (budget * c) mod total
    order.sort_by_key(|&k| (std::cmp::Reverse((budget * counts[k]) % total), k));
    for &k in order.iter().take(budget - assigned) {
        quotas[k] += 1;
    }
    quotas
}

/// Greedy herding per class. `features[i]` and `labels[i]` describe
/// candidate `i`; returns candidate positions in selection order, classes in
/// label order. Each step adds the candidate that brings the running
/// selected mean closest (Euclidean) to the class mean; ties go to the lower
/// position.
pub fn herding_select(
    features: &[Vec<f64>],
    labels: &[usize],
    per_class_budget: &[usize],
) -> Result<Vec<usize>, ScoringError> {
    if features.len() != labels.len() {
        return Err(ScoringError::Sizing(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut selected = Vec::new();
    for (class, &budget) in per_class_budget.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if budget > members.len() {
            return Err(ScoringError::Sizing(format!(
                "herding budget {budget} exceeds class {class} population {}",
                members.len()
            )));
        }
        if budget == 0 {
            continue;
        }
        let dim = features[members[0]].len();
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(&features[i]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        let mut sum = vec![0.0; dim];
        let mut taken = vec![false; members.len()];
        for step in 0..budget {
            let denom = (step + 1) as f64;
            let mut best: Option<(f64, usize)> = None;
            for (slot, &i) in members.iter().enumerate() {
                if taken[slot] {
                    continue;
                }
                let dist: f64 = sum
                    .iter()
                    .zip(&features[i])
                    .zip(&mean)
                    .map(|((s, f), m)| ((s + f) / denom - m).powi(2))
                    .sum();
                if best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, slot));
                }
            }
            let (_, slot) = best.expect("budget <= population");
            taken[slot] = true;
            for (s, f) in sum.iter_mut().zip(&features[members[slot]]) {
                *s += f;
            }
            selected.push(members[slot]);
        }
    }
    Ok(selected)
}
