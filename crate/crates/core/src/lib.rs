//! Uncertainty-driven expansion of tiny modulation-recognition datasets.
//!
//! A small labeled target set is grown by migrating samples from a large
//! auxiliary pool. Each round trains the reference CNN on the current
//! target, scores the remaining pool by softmax margin and moves the most
//! uncertain samples across. One-shot coreset baselines (entropy, least
//! confidence, margin, GraNd, forgetting, herding, random) share the same
//! budget arithmetic and evaluation path.

pub mod dataio;
pub mod expansion;
pub mod harness;
pub mod nnet;
pub mod scoring;
pub mod seed;
pub mod sigsynth;
