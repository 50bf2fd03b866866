//! Built-in oracle checks, run by `duse selftest`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataio::{Dataset, Digest};
use crate::expansion::select_topk_uncertain;
use crate::nnet::{loss_and_gradients, Architecture, Model};
use crate::scoring::{self, ScoreMethod, ScoreReport};
use crate::seed;
use crate::sigsynth::{self, GenSpec};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Tiny architecture for finite-difference checks.
pub fn small_architecture() -> Architecture {
    Architecture {
        in_channels: 2,
        signal_len: 16,
        conv1_filters: 3,
        conv1_kernel: 3,
        conv2_filters: 4,
        conv2_kernel: 3,
        hidden: 5,
        num_classes: 3,
    }
}

/// Largest gradient error over all parameters of a random small model,
/// as `(relative, absolute)`; an entry passes when either is within
/// tolerance.
pub fn gradient_check(trial_seed: u64) -> (f64, f64) {
    let arch = small_architecture();
    let mut rng = seed::rng(trial_seed);
    let mut model: Model<f64> = Model::init(arch, trial_seed).expect("valid architecture");
    for t in model.params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let batch: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..arch.num_classes)).collect();
    let xs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let (_, grads) = loss_and_gradients(&model, &xs, &labels).expect("valid batch");
    let h = 1e-6;
    let (mut worst_rel, mut worst_abs) = (0.0f64, 0.0f64);
    for t in 0..8 {
        for k in 0..grads.tensors()[t].len() {
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                m.params.tensors_mut()[t][k] += delta;
                loss_and_gradients(&m, &xs, &labels).expect("valid batch").0
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let analytic = grads.tensors()[t][k];
            let abs = (numeric - analytic).abs();
            let scale = numeric.abs().max(analytic.abs());
            if abs > 1e-5 {
                worst_rel = worst_rel.max(abs / scale);
            }
            worst_abs = worst_abs.max(abs);
        }
    }
    (worst_rel, worst_abs)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let started = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        name,
        passed,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn gradients() -> Result<String, String> {
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let (rel, _) = gradient_check(trial);
        worst = worst.max(rel);
    }
    if worst < 1e-3 {
        Ok(format!("max relative error {worst:.2e} over 5 models"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

fn softmax_examples() -> Result<String, String> {
    let p = scoring::softmax(&[2.0, 0.0, 0.0]);
    let e2 = 2f64.exp();
    let expect = [e2 / (e2 + 2.0), 1.0 / (e2 + 2.0), 1.0 / (e2 + 2.0)];
    if p.iter().zip(expect).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(format!("softmax([2,0,0]) = {p:?}"));
    }
    let u = scoring::margin_uncertainty(&p).map_err(|e| e.to_string())?;
    if (u - (e2 - 1.0) / (e2 + 2.0)).abs() > 1e-12 {
        return Err(format!("margin {u}"));
    }
    let shifted = scoring::softmax(&[1e4 + 2.0, 1e4, 1e4]);
    if shifted.iter().zip(&p).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err("softmax not shift invariant at 1e4".into());
    }
    Ok(format!("u = {u:.6}"))
}

fn topk_oracle() -> Result<String, String> {
    let mut rng = seed::rng(17);
    for trial in 0..200 {
        let n = rng.random_range(1..=64);
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut indices: Vec<usize> = (0..n).map(|i| i * 3).collect();
        indices.shuffle(&mut rng);
        let method = if trial % 2 == 0 { ScoreMethod::Margin } else { ScoreMethod::Entropy };
        let report = ScoreReport::new(method, Digest(0), indices.clone(), scores.clone());
        let k = rng.random_range(0..=n);
        let got = select_topk_uncertain(&report, k, &indices).map_err(|e| e.to_string())?;
        let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(indices.iter().copied()).collect();
        if method == ScoreMethod::Entropy {
            pairs.iter_mut().for_each(|p| p.0 = -p.0);
        }
        pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut want: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
        want.sort_unstable();
        if got != want {
            return Err(format!("trial {trial}: got {got:?}, want {want:?}"));
        }
    }
    Ok("200 instances".into())
}

fn herding_oracle() -> Result<String, String> {
    let mut rng = seed::rng(23);
    for trial in 0..20 {
        let n = rng.random_range(2..=12);
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = vec![0; n];
        let budget = rng.random_range(1..=n);
        let got = scoring::herding_select(&features, &labels, &[budget]).map_err(|e| e.to_string())?;
        let mean: Vec<f64> = (0..3).map(|d| features.iter().map(|f| f[d]).sum::<f64>() / n as f64).collect();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..budget {
            let best = (0..n)
                .filter(|i| !chosen.contains(i))
                .map(|i| {
                    let mut set = chosen.clone();
                    set.push(i);
                    let d: f64 = (0..3)
                        .map(|k| (set.iter().map(|&j| features[j][k]).sum::<f64>() / set.len() as f64 - mean[k]).powi(2))
                        .sum();
                    (d, i)
                })
                .min_by(|a, b| a.partial_cmp(b).expect("finite"))
                .expect("candidates remain");
            chosen.push(best.1);
        }
        if got != chosen {
            return Err(format!("trial {trial}: got {got:?}, want {chosen:?}"));
        }
    }
    Ok("20 instances".into())
}

fn forgetting_rule() -> Result<String, String> {
    use crate::nnet::CorrectnessLog;
    let log = CorrectnessLog::from_histories(&[
        vec![true, true, true, true],
        vec![true, false, true, false],
        vec![false, false, false, false],
    ]);
    let counts = scoring::forgetting_counts(&log).map_err(|e| e.to_string())?;
    if counts == [0, 2, 4] {
        Ok("counts [0, 2, 4]".into())
    } else {
        Err(format!("counts {counts:?}"))
    }
}

fn dataset_round_trip() -> Result<String, String> {
    let spec = GenSpec {
        snr_min_db: 12,
        snr_max_db: 18,
        per_class_per_snr: 2,
        ..GenSpec::default()
    };
    let ds = sigsynth::generate_dataset(&spec).map_err(|e| e.to_string())?;
    let bytes = ds.encode().map_err(|e| e.to_string())?;
    let back = Dataset::decode(&bytes).map_err(|e| e.to_string())?;
    if back != ds || back.encode().map_err(|e| e.to_string())? != bytes {
        return Err("round trip changed the dataset".into());
    }
    let truncated = Dataset::decode(&bytes[..bytes.len() - 3]);
    if truncated.is_ok() {
        return Err("truncated file accepted".into());
    }
    Ok(format!("{} records, {} bytes", ds.len(), bytes.len()))
}

fn empirical_snr() -> Result<String, String> {
    let mut worst = 0.0f64;
    for snr in [-20, 0, 18] {
        let (mut sig, mut noise) = (0.0, 0.0);
        for i in 0..500u64 {
            let clean = sigsynth::synthesize_waveform(
                sigsynth::ModulationScheme::Qam16,
                28,
                &GenSpec::default(),
                seed::derive(99, &[i]),
            )
            .map_err(|e| e.to_string())?;
            let noisy = sigsynth::apply_awgn(&clean, snr, seed::derive(98, &[i]));
            sig += clean.iter().map(|c| c.norm_sqr()).sum::<f64>();
            noise += noisy.iter().zip(&clean).map(|(n, c)| (n - c).norm_sqr()).sum::<f64>();
        }
        let measured = 10.0 * (sig / noise).log10();
        worst = worst.max((measured - snr as f64).abs());
    }
    if worst <= 0.5 {
        Ok(format!("worst deviation {worst:.3} dB"))
    } else {
        Err(format!("worst deviation {worst:.3} dB"))
    }
}

/// Run every suite.
pub fn run_all() -> Vec<Outcome> {
    vec![
        check("gradients", gradients),
        check("softmax-margin", softmax_examples),
        check("topk-oracle", topk_oracle),
        check("herding-oracle", herding_oracle),
        check("forgetting-rule", forgetting_rule),
        check("dataset-round-trip", dataset_round_trip),
        check("empirical-snr", empirical_snr),
    ]
}
