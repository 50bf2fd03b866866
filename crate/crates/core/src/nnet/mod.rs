//! Reference classifier: a small 1-D CNN with hand-derived gradients.
//!
//! ```text
//! input [2 x L]
//!   -> conv1 (16 filters, k=7, same) -> ReLU -> maxpool/2
//!   -> conv2 (32 filters, k=5, same) -> ReLU -> maxpool/2
//!   -> flatten [32 * L/4] -> fc1 (64) -> ReLU      (features)
//!   -> fc2 (C)                                      (logits)
//! ```
//!
//! The network is generic over [`Scalar`] so the same code path can be
//! instantiated in `f64` for finite-difference checks; everything else in
//! the crate runs the `f32` instantiation, [`ModelState`].

mod layers;
mod network;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError, Digest};
use crate::seed;

pub use network::{
    forward, loss_and_gradients, per_sample_gradient_norm, predict, predict_all, Output,
};
pub use train::{adam_step, train, AdamState, CorrectnessLog, TrainConfig};

pub trait Scalar:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("input has {found} values, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch has {inputs} inputs but {labels} labels")]
    BatchMismatch { inputs: usize, labels: usize },
    #[error("cannot train on an empty set")]
    EmptyTrainingSet,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub signal_len: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn reference(num_classes: usize, signal_len: usize) -> Self {
        Architecture {
            in_channels: 2,
            signal_len,
            conv1_filters: 16,
            conv1_kernel: 7,
            conv2_filters: 32,
            conv2_kernel: 5,
            hidden: 64,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        let bad = |m: &str| Err(NnetError::InvalidArchitecture(m.to_string()));
        if self.signal_len == 0 || !self.signal_len.is_multiple_of(4) {
            return bad("signal_len must be a positive multiple of 4");
        }
        if self.conv1_kernel.is_multiple_of(2) || self.conv2_kernel.is_multiple_of(2) {
            return bad("kernels must be odd");
        }
        if [self.in_channels, self.conv1_filters, self.conv2_filters, self.hidden]
            .contains(&0)
        {
            return bad("layer widths must be positive");
        }
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.signal_len
    }

    pub fn flat_dim(&self) -> usize {
        self.conv2_filters * self.signal_len / 4
    }

    /// Tensor lengths in checkpoint order.
    fn shapes(&self) -> [usize; 8] {
        [
            self.conv1_filters * self.in_channels * self.conv1_kernel,
            self.conv1_filters,
            self.conv2_filters * self.conv1_filters * self.conv2_kernel,
            self.conv2_filters,
            self.hidden * self.flat_dim(),
            self.hidden,
            self.num_classes * self.hidden,
            self.num_classes,
        ]
    }

    /// Fan-in of the layer owning each tensor.
    fn fan_ins(&self) -> [usize; 8] {
        let c1 = self.in_channels * self.conv1_kernel;
        let c2 = self.conv1_filters * self.conv2_kernel;
        let f1 = self.flat_dim();
        let f2 = self.hidden;
        [c1, c1, c2, c2, f1, f1, f2, f2]
    }
}

pub const TENSOR_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

/// All trainable tensors, also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let s = arch.shapes();
        Params {
            conv1_w: vec![T::zero(); s[0]],
            conv1_b: vec![T::zero(); s[1]],
            conv2_w: vec![T::zero(); s[2]],
            conv2_b: vec![T::zero(); s[3]],
            fc1_w: vec![T::zero(); s[4]],
            fc1_b: vec![T::zero(); s[5]],
            fc2_w: vec![T::zero(); s[6]],
            fc2_b: vec![T::zero(); s[7]],
        }
    }

    pub fn tensors(&self) -> [&[T]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean norm over every parameter, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of_f64(x.as_f64())).collect();
        Params {
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
            fc1_w: c(&self.fc1_w),
            fc1_b: c(&self.fc1_b),
            fc2_w: c(&self.fc2_w),
            fc2_b: c(&self.fc2_b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub arch: Architecture,
    pub params: Params<T>,
    pub init_seed: u64,
}

/// The `f32` model used for training, scoring and evaluation.
pub type ModelState = Model<f32>;

/// Reference architecture for `num_classes` classes on length-128 signals.
pub fn init_model(seed: u64, num_classes: usize) -> ModelState {
    Model::init(Architecture::reference(num_classes, 128), seed)
        .expect("reference architecture is valid")
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"AMRM";
const CHECKPOINT_VERSION: u32 = 1;

impl<T: Scalar> Model<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for every
    /// tensor, drawn in checkpoint order from a stream keyed by `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NnetError> {
        arch.validate()?;
        let mut params = Params::zeros(&arch);
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::INIT]));
        for (tensor, fan_in) in params.tensors_mut().into_iter().zip(arch.fan_ins()) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in tensor.iter_mut() {
                *v = T::of_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(Model {
            arch,
            params,
            init_seed: seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            params: self.params.cast(),
            init_seed: self.init_seed,
        }
    }
}

impl ModelState {
    /// Checkpoint blob: magic "AMRM", version u32, eight u32 architecture
    /// fields, init seed u64, then every tensor as f32 LE in checkpoint order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut out = Vec::with_capacity(48 + 4 * self.params.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [
            a.in_channels,
            a.signal_len,
            a.conv1_filters,
            a.conv1_kernel,
            a.conv2_filters,
            a.conv2_kernel,
            a.hidden,
            a.num_classes,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        for t in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnetError> {
        let bad = |m: String| NnetError::BadCheckpoint(m);
        if bytes.len() < 48 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing AMRM header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        if u32_at(4) != CHECKPOINT_VERSION as usize {
            return Err(bad(format!("unsupported version {}", u32_at(4))));
        }
        let arch = Architecture {
            in_channels: u32_at(8),
            signal_len: u32_at(12),
            conv1_filters: u32_at(16),
            conv1_kernel: u32_at(20),
            conv2_filters: u32_at(24),
            conv2_kernel: u32_at(28),
            hidden: u32_at(32),
            num_classes: u32_at(36),
        };
        arch.validate()?;
        let init_seed = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
        let mut params = Params::zeros(&arch);
        let expected = 48 + 4 * params.len();
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut values = bytes[48..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = values.next().unwrap());
        }
        if !params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Model {
            arch,
            params,
            init_seed,
        })
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnetError> {
        Ok(dataio::atomic_write(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, NnetError> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
