use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{predict_all, Workspace};
use super::{Model, NnetError, Params, Scalar};
use crate::seed;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
    pub record_correctness: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            shuffle_seed: 0,
            record_correctness: false,
        }
    }
}

/// Training-set prediction correctness after each epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrectnessLog {
    pub epochs: usize,
    pub samples: usize,
    /// Row-major `[epochs][samples]`.
    pub correct: Vec<bool>,
}

impl CorrectnessLog {
    pub fn new(epochs: usize, samples: usize) -> Self {
        CorrectnessLog {
            epochs,
            samples,
            correct: Vec::with_capacity(epochs * samples),
        }
    }

    /// Build from per-sample histories (each of equal length).
    pub fn from_histories(histories: &[Vec<bool>]) -> Self {
        let epochs = histories.first().map_or(0, |h| h.len());
        let mut log = CorrectnessLog::new(epochs, histories.len());
        for e in 0..epochs {
            log.correct.extend(histories.iter().map(|h| h[e]));
        }
        log
    }

    pub fn epoch(&self, e: usize) -> &[bool] {
        &self.correct[e * self.samples..(e + 1) * self.samples]
    }

    pub fn history(&self, sample: usize) -> Vec<bool> {
        (0..self.epochs).map(|e| self.correct[e * self.samples + sample]).collect()
    }

    /// Keep only the given sample columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> CorrectnessLog {
        let mut log = CorrectnessLog::new(self.epochs, columns.len());
        for e in 0..self.epochs {
            let row = self.epoch(e);
            log.correct.extend(columns.iter().map(|&c| row[c]));
        }
        log
    }
}

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
    pub learning_rate: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &Model<T>, learning_rate: f64) -> Self {
        AdamState {
            m: Params::zeros(&model.arch),
            v: Params::zeros(&model.arch),
            step: 0,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub fn adam_step<T: Scalar>(model: &mut Model<T>, grads: &Params<T>, state: &mut AdamState<T>) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of_f64(ADAM_BETA1);
    let b2 = T::of_f64(ADAM_BETA2);
    let one = T::one();
    let c1 = T::of_f64(1.0 / (1.0 - ADAM_BETA1.powi(t)));
    let c2 = T::of_f64(1.0 / (1.0 - ADAM_BETA2.powi(t)));
    let lr = T::of_f64(state.learning_rate);
    let eps = T::of_f64(ADAM_EPSILON);
    let params = model.params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] * c1;
            let v_hat = v[i] * c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Minibatch Adam on shuffled data. Fully determined by the starting model,
/// the input order and `config`.
pub fn train<T: Scalar>(
    model: &Model<T>,
    inputs: &[&[T]],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Model<T>, Option<CorrectnessLog>), NnetError> {
    if inputs.is_empty() {
        return Err(NnetError::EmptyTrainingSet);
    }
    if inputs.len() != labels.len() {
        return Err(NnetError::BatchMismatch {
            inputs: inputs.len(),
            labels: labels.len(),
        });
    }
    let mut model = model.clone();
    let mut log = config
        .record_correctness
        .then(|| CorrectnessLog::new(config.epochs, inputs.len()));
    let mut adam = AdamState::new(&model, config.learning_rate);
    let mut ws = Workspace::new(&model.arch);
    let mut grads = Params::zeros(&model.arch);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = seed::rng(seed::derive(config.shuffle_seed, &[seed::tag::SHUFFLE]));
    let batch_size = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            for t in grads.tensors_mut() {
                t.fill(T::zero());
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                ws.accumulate(&model, inputs[i], labels[i], scale, &mut grads)?;
            }
            adam_step(&mut model, &grads, &mut adam);
        }
        if let Some(log) = log.as_mut() {
            let predictions = predict_all(&model, inputs)?;
            log.correct
                .extend(predictions.iter().zip(labels).map(|(p, y)| p == y));
        }
    }
    Ok((model, log))
}
