//! Acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line each and exits non-zero if any failed. All reference
//! values are recomputed here by code that does not call the routine under
//! test.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use duse_core::dataio::{self, Dataset, Digest, SplitIndices};
use duse_core::expansion::{self, ExpansionPlan, ExpansionResult, Method};
use duse_core::harness::{self, EvalConfig, EvalReport};
use duse_core::nnet::{self, Architecture, Model};
use duse_core::scoring::{self, ScoreMethod, ScoreReport};
use duse_core::seed;
use duse_core::sigsynth::{self, Channel, GenSpec};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Verdict {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn criterion(id: u32, title: &'static str, limit_secs: Option<f64>, f: impl FnOnce() -> Check) -> Verdict {
    let started = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = limit_secs {
        if secs >= limit {
            passed = false;
            detail = format!("{detail}; took {secs:.1}s, limit {limit:.0}s");
        }
    }
    let status = if passed { "PASS" } else { "FAIL" };
    println!("[{status}] criterion {id}: {title} ({secs:.1}s) {detail}");
    Verdict {
        id,
        title,
        passed,
        detail,
    }
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

fn oracle_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean loss from forward logits only; no gradient code involved.
fn oracle_loss(model: &Model<f64>, xs: &[&[f64]], labels: &[usize]) -> f64 {
    let outs = nnet::forward(model, xs).unwrap();
    outs.iter()
        .zip(labels)
        .map(|(o, &y)| oracle_cross_entropy(&o.logits, y))
        .sum::<f64>()
        / xs.len() as f64
}

fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn oracle_margin(p: &[f64]) -> f64 {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[0] - sorted[1]
}

fn oracle_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

fn oracle_least_confidence(p: &[f64]) -> f64 {
    1.0 - p.iter().cloned().fold(0.0, f64::max)
}

/// Sort-based top-K: ascending key with ties by index, key negated for
/// max-direction scores.
fn oracle_topk(indices: &[usize], scores: &[f64], maximize: bool, k: usize) -> BTreeSet<usize> {
    let mut pairs: Vec<(f64, usize)> = scores
        .iter()
        .zip(indices)
        .map(|(&s, &i)| (if maximize { -s } else { s }, i))
        .collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pairs[..k].iter().map(|p| p.1).collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn gradient_correctness() -> Check {
    let mut rng = seed::rng(0xA11CE);
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    let mut checked = 0usize;
    for trial in 0..10u64 {
        let arch = Architecture {
            in_channels: 2,
            signal_len: 4 * rng.random_range(2..=5),
            conv1_filters: rng.random_range(2..=4),
            conv1_kernel: [1, 3, 5][rng.random_range(0..3)],
            conv2_filters: rng.random_range(2..=4),
            conv2_kernel: [1, 3][rng.random_range(0..2)],
            hidden: rng.random_range(3..=6),
            num_classes: rng.random_range(2..=5),
        };
        let mut model: Model<f64> = Model::init(arch, 100 + trial).unwrap();
        for t in model.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let batch_len = rng.random_range(1..=3);
        let batch: Vec<Vec<f64>> = (0..batch_len)
            .map(|_| (0..arch.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let labels: Vec<usize> = (0..batch_len).map(|_| rng.random_range(0..arch.num_classes)).collect();
        let xs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let (loss, grads) = nnet::loss_and_gradients(&model, &xs, &labels).unwrap();
        ensure((loss - oracle_loss(&model, &xs, &labels)).abs() < 1e-12, || format!("trial {trial}: loss mismatch"))?;
        let h = 1e-6;
        for (t, name) in nnet::TENSOR_NAMES.iter().enumerate() {
            for k in 0..grads.tensors()[t].len() {
                let at = |d: f64| {
                    let mut m = model.clone();
                    m.params.tensors_mut()[t][k] += d;
                    oracle_loss(&m, &xs, &labels)
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let analytic = grads.tensors()[t][k];
                let abs = (numeric - analytic).abs();
                checked += 1;
                worst_abs = worst_abs.max(abs);
                if abs <= 1e-5 {
                    continue;
                }
                let rel = abs / numeric.abs().max(analytic.abs());
                worst = worst.max(rel);
                ensure(rel < 1e-3, || {
                    format!("trial {trial} {name}[{k}]: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {rel:.2e})")
                })?;
            }
        }
    }
    Ok(format!("{checked} parameters over 10 configurations, worst absolute {worst_abs:.2e}, worst relative above 1e-5 absolute {worst:.2e}"))
}

fn scoring_oracles() -> Check {
    let mut rng = seed::rng(0x5C0);
    let mut selections = 0usize;
    for trial in 0..1000 {
        let c = rng.random_range(2..=8);
        let n = rng.random_range(1..=64);
        let coarse = trial % 3 == 0;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            if !rows.is_empty() && rng.random_bool(0.2) {
                let dup = rows[rng.random_range(0..rows.len())].clone();
                rows.push(dup);
                continue;
            }
            rows.push(
                (0..c)
                    .map(|_| {
                        let v: f64 = rng.random_range(-4.0..4.0);
                        if coarse { (v * 2.0).round() / 2.0 } else { v }
                    })
                    .collect(),
            );
        }
        let mut margins = Vec::with_capacity(n);
        let mut entropies = Vec::with_capacity(n);
        let mut lcs = Vec::with_capacity(n);
        for row in &rows {
            let p = scoring::softmax(row);
            let q = oracle_softmax(row);
            ensure(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12), || format!("trial {trial}: softmax {p:?} vs {q:?}"))?;
            ensure((p.iter().sum::<f64>() - 1.0).abs() < 1e-6, || "softmax does not sum to 1".into())?;
            let u = scoring::margin_uncertainty(&p).unwrap();
            let e = scoring::entropy_score(&p);
            let l = scoring::least_confidence_score(&p);
            ensure((u - oracle_margin(&q)).abs() < 1e-12, || format!("trial {trial}: margin {u}"))?;
            ensure((e - oracle_entropy(&q)).abs() < 1e-12, || format!("trial {trial}: entropy {e}"))?;
            ensure((l - oracle_least_confidence(&q)).abs() < 1e-12, || format!("trial {trial}: least confidence {l}"))?;
            margins.push(u);
            entropies.push(e);
            lcs.push(l);
        }
        let mut pool: Vec<usize> = (0..500).collect();
        pool.shuffle(&mut rng);
        let indices: Vec<usize> = pool[..n].to_vec();
        for (method, scores) in [
            (ScoreMethod::Margin, &margins),
            (ScoreMethod::Entropy, &entropies),
            (ScoreMethod::LeastConfidence, &lcs),
        ] {
            let report = ScoreReport::new(method, Digest(trial as u64), indices.clone(), scores.clone());
            let k = rng.random_range(0..=n);
            let got: BTreeSet<usize> = expansion::select_topk_uncertain(&report, k, &indices).unwrap().into_iter().collect();
            let want = oracle_topk(&indices, scores, method != ScoreMethod::Margin, k);
            ensure(got == want, || format!("trial {trial} {method} k={k}: got {got:?}, want {want:?}"))?;
            ensure(expansion::select_topk_uncertain(&report, n + 1, &indices).is_err(), || "K > N accepted".into())?;
            selections += 1;
        }
    }
    Ok(format!("1000 instances, {selections} top-K selections identical to the sort oracle"))
}

fn herding_optimality() -> Check {
    let mut rng = seed::rng(0x4E8D);
    let mut steps = 0usize;
    for trial in 0..100 {
        let classes = rng.random_range(1..=4);
        let dim = rng.random_range(2..=8);
        let mut labels = Vec::new();
        for c in 0..classes {
            labels.extend(std::iter::repeat_n(c, rng.random_range(1..=16)));
        }
        labels.shuffle(&mut rng);
        let features: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let budgets: Vec<usize> = (0..classes)
            .map(|c| rng.random_range(0..=labels.iter().filter(|&&l| l == c).count()))
            .collect();
        let got = scoring::herding_select(&features, &labels, &budgets).unwrap();
        let mut want = Vec::new();
        for (c, &budget) in budgets.iter().enumerate() {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let center: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|&i| features[i][d]).sum::<f64>() / members.len() as f64)
                .collect();
            let mut chosen: Vec<usize> = Vec::new();
            for _ in 0..budget {
                let mut best: Option<(f64, usize)> = None;
                for &cand in members.iter().filter(|i| !chosen.contains(i)) {
                    let set: Vec<usize> = chosen.iter().copied().chain([cand]).collect();
                    let dist: f64 = (0..dim)
                        .map(|d| {
                            let m = set.iter().map(|&i| features[i][d]).sum::<f64>() / set.len() as f64;
                            (m - center[d]).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt();
                    if best.is_none_or(|(bd, _)| dist < bd) {
                        best = Some((dist, cand));
                    }
                }
                chosen.push(best.unwrap().1);
                steps += 1;
            }
            want.extend(chosen);
        }
        ensure(got == want, || format!("trial {trial}: greedy {got:?} vs exhaustive {want:?}"))?;
    }
    Ok(format!("100 trials, {steps} greedy steps match the exhaustive argmin"))
}

fn desk_dataset(per_cell: usize) -> (Dataset, SplitIndices) {
    let spec = GenSpec {
        snr_min_db: 12,
        snr_max_db: 18,
        per_class_per_snr: per_cell,
        ..GenSpec::default()
    };
    let full = sigsynth::generate_dataset(&spec).unwrap();
    let filtered = dataio::filter_by_snr(&full, 10);
    let splits = dataio::make_splits(&filtered, 0.01, 0.2, 0).unwrap();
    (filtered, splits)
}

fn loop_invariants(dataset: &Dataset, splits: &SplitIndices) -> Check {
    ensure(dataset.len() == 4000, || format!("dataset has {} records", dataset.len()))?;
    let rate = 0.07;
    let plan = ExpansionPlan::new(Method::Duse, rate);
    ensure(plan.rounds == 4, || "default rounds is not 4".into())?;
    let first = expansion::duse_expand(dataset, splits, &plan).unwrap().result;
    let n_aux = splits.auxiliary.len();
    let budget = (rate * n_aux as f64).round() as usize;
    let sizes: Vec<usize> = first.per_round_selected.iter().map(Vec::len).collect();
    ensure(sizes.len() == 4, || format!("{} rounds", sizes.len()))?;
    ensure(sizes.iter().sum::<usize>() == budget, || format!("selected {sizes:?}, budget {budget}"))?;
    ensure(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, || format!("uneven quotas {sizes:?}"))?;
    ensure(sizes.windows(2).all(|w| w[0] >= w[1]), || format!("later round larger: {sizes:?}"))?;

    let aux: BTreeSet<usize> = splits.auxiliary.iter().copied().collect();
    let mut target: BTreeSet<usize> = splits.target.iter().copied().collect();
    let mut remaining = aux.clone();
    let total = target.len() + remaining.len();
    let mut growth = vec![target.len()];
    for (i, round) in first.per_round_selected.iter().enumerate() {
        for &j in round {
            ensure(remaining.remove(&j), || format!("round {i} picked {j}, not in the remaining auxiliary pool"))?;
            ensure(target.insert(j), || format!("round {i} picked {j} twice"))?;
        }
        ensure(target.len() + remaining.len() == total, || "pool size not conserved".into())?;
        growth.push(target.len());
    }
    ensure(growth.windows(2).all(|w| w[1] > w[0]), || format!("target did not grow strictly: {growth:?}"))?;
    let expanded: Vec<usize> = target.into_iter().collect();
    ensure(first.expanded_target == expanded, || "expanded target differs from D_T ∪ S(1..R)".into())?;

    let second = expansion::duse_expand(dataset, splits, &plan).unwrap().result;
    let a = serde_json::to_vec(&first).unwrap();
    let b = serde_json::to_vec(&second).unwrap();
    ensure(a == b, || "replay produced a different ExpansionResult".into())?;
    Ok(format!(
        "rounds {sizes:?} sum to round({rate}·{n_aux}) = {budget}; target {growth:?}; replay identical ({} bytes)",
        a.len()
    ))
}

/// Evaluations shared by the directional criteria.
struct Directional {
    duse: Vec<(f64, EvalReport)>,
    oneshot: EvalReport,
    random: Vec<(f64, EvalReport)>,
}

const RATES: [f64; 4] = [0.01, 0.04, 0.07, 0.09];

/// Records per (class, SNR) cell for the rate-sweep criteria. 750 gives
/// roughly 30 target samples per class at a 1% target fraction.
const DIRECTIONAL_PER_CELL: usize = 750;

fn eval_plan(dataset: &Dataset, splits: &SplitIndices, method: Method, rate: f64) -> (ExpansionResult, EvalReport) {
    let plan = ExpansionPlan::new(method, rate);
    let result = expansion::expand(dataset, splits, &plan).unwrap().result;
    let config = EvalConfig {
        base_seed: plan.seed,
        ..EvalConfig::default()
    };
    let report = harness::evaluate(dataset, &result.expanded_target, &splits.test, &config).unwrap();
    (result, report)
}

fn pct(r: &EvalReport) -> String {
    format!("{:.2}", 100.0 * r.mean_accuracy)
}

fn rate_trend(dataset: &Dataset, splits: &SplitIndices, out: &mut Vec<(f64, EvalReport)>) -> Check {
    for rate in RATES {
        let (_, report) = eval_plan(dataset, splits, Method::Duse, rate);
        ensure(report.per_seed_accuracy.len() == 3, || "expected 3 seeds".into())?;
        out.push((rate, report));
    }
    let means: Vec<f64> = out.iter().map(|(_, r)| 100.0 * r.mean_accuracy).collect();
    let drops: Vec<f64> = means.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let summary = out
        .iter()
        .map(|(rate, r)| format!("{}: {}", harness::rate_label(*rate), pct(r)))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(drops.len() <= 1 && drops.iter().all(|&d| d <= 1.0), || {
        format!("{summary}; inversions {drops:?}")
    })?;
    Ok(summary)
}

fn ablation(shared: &Directional) -> Check {
    let duse = &shared
        .duse
        .iter()
        .find(|(r, _)| *r == 0.07)
        .ok_or("no duse evaluation at 7%")?
        .1;
    let oneshot = &shared.oneshot;
    ensure(duse.per_seed_accuracy.len() == 3 && oneshot.per_seed_accuracy.len() == 3, || "expected 3 paired seeds".into())?;
    let diffs: Vec<f64> = duse
        .per_seed_accuracy
        .iter()
        .zip(&oneshot.per_seed_accuracy)
        .map(|(a, b)| 100.0 * (a - b))
        .collect();
    let gain = mean(&diffs);
    let msg = format!("duse {} vs duse_oneshot {} at 7%: gain {gain:+.2} points (paired {diffs:.2?})", pct(duse), pct(oneshot));
    ensure(gain >= 0.0, || msg.clone())?;
    Ok(msg)
}

fn beats_random(shared: &Directional) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (rate, random) in &shared.random {
        let duse = &shared.duse.iter().find(|(r, _)| r == rate).ok_or("missing duse rate")?.1;
        let better = duse.mean_accuracy >= random.mean_accuracy;
        ok &= better;
        lines.push(format!("{}: duse {} vs random {}", harness::rate_label(*rate), pct(duse), pct(random)));
    }
    let msg = lines.join("; ");
    ensure(ok, || msg.clone())?;
    Ok(msg)
}

fn class_balance(dataset: &Dataset, splits: &SplitIndices) -> Check {
    let plan = ExpansionPlan::new(Method::DuseBalanced, 0.07);
    let result = expansion::duse_expand(dataset, splits, &plan).unwrap().result;
    let mut counts = vec![0usize; dataset.num_classes as usize];
    for &i in &result.expanded_target {
        counts[dataset.records[i].label as usize] += 1;
    }
    ensure(result.diagnostics.is_empty(), || format!("unexpected depletion {:?}", result.diagnostics))?;
    let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
    ensure(spread <= 1, || format!("expanded per-class counts {counts:?}"))?;

    // Leave class 0 with three auxiliary candidates so its share cannot be met.
    let mut kept_zero = 0;
    let auxiliary: Vec<usize> = splits
        .auxiliary
        .iter()
        .copied()
        .filter(|&i| {
            if dataset.records[i].label != 0 {
                return true;
            }
            kept_zero += 1;
            kept_zero <= 3
        })
        .collect();
    let depleted = SplitIndices {
        auxiliary,
        ..splits.clone()
    };
    let plan = ExpansionPlan {
        rounds: 2,
        epochs: 2,
        ..ExpansionPlan::new(Method::DuseBalanced, 0.05)
    };
    let budget = (0.05 * depleted.auxiliary.len() as f64).round() as usize;
    let forced = expansion::duse_expand(dataset, &depleted, &plan).unwrap().result;
    let selected: usize = forced.per_round_selected.iter().map(Vec::len).sum();
    ensure(!forced.diagnostics.is_empty(), || "depletion produced no diagnostics".into())?;
    ensure(selected == budget, || format!("selected {selected}, budget {budget}"))?;
    ensure(forced.per_class_selected_counts[0] == 3, || {
        format!("class 0 contributed {} of 3 candidates", forced.per_class_selected_counts[0])
    })?;
    Ok(format!(
        "balanced counts {counts:?}; forced depletion: {} diagnostic(s), e.g. \"{}\", total still {budget}",
        forced.diagnostics.len(),
        forced.diagnostics[0]
    ))
}

fn substrate_fidelity(dataset: &Dataset) -> Check {
    // Empirical SNR per level from paired noisy / noise-free generations.
    let mut worst = 0.0f64;
    for level in (-20..=18).step_by(2) {
        let spec = GenSpec {
            snr_min_db: level,
            snr_max_db: level,
            per_class_per_snr: 1250,
            seed: 7,
            ..GenSpec::default()
        };
        let noisy = sigsynth::generate_dataset_with(&spec, Channel::Awgn).unwrap();
        let clean = sigsynth::generate_dataset_with(&spec, Channel::Noiseless).unwrap();
        ensure(noisy.len() == 10_000, || format!("{} records at {level} dB", noisy.len()))?;
        let (mut signal, mut noise) = (0.0f64, 0.0f64);
        for (n, c) in noisy.records.iter().zip(&clean.records) {
            for (a, b) in n.data.iter().zip(&c.data) {
                signal += (*b as f64).powi(2);
                noise += (*a as f64 - *b as f64).powi(2);
            }
        }
        let measured = 10.0 * (signal / noise).log10();
        worst = worst.max((measured - level as f64).abs());
        ensure((measured - level as f64).abs() <= 0.5, || format!("{level} dB measured as {measured:.3} dB"))?;
    }

    // Round trip through a file.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.amrd");
    let digest = dataio::write_dataset(dataset, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = dataio::read_dataset(&path).unwrap();
    ensure(&back == dataset, || "read(write(x)) != x".into())?;
    ensure(back.encode().unwrap() == bytes, || "re-encoding changed the bytes".into())?;
    ensure(digest.0 == fnv1a64(&bytes), || format!("digest {digest} vs FNV-1a {:016x}", fnv1a64(&bytes)))?;

    // Split invariants over 100 seeds.
    let classes = dataset.num_classes as usize;
    let fracs = [(0.01, 0.2), (0.02, 0.1), (0.05, 0.3), (0.01, 0.25)];
    for s in 0..100u64 {
        let (tf, xf) = fracs[s as usize % fracs.len()];
        let splits = dataio::make_splits(dataset, tf, xf, s).unwrap();
        ensure(splits == dataio::make_splits(dataset, tf, xf, s).unwrap(), || format!("seed {s}: not deterministic"))?;
        let mut all: Vec<usize> = splits.target.iter().chain(&splits.auxiliary).chain(&splits.test).copied().collect();
        all.sort_unstable();
        ensure(all == (0..dataset.len()).collect::<Vec<_>>(), || format!("seed {s}: lists do not partition the pool"))?;
        ensure(dataio::validate_splits(dataset.len(), digest, &splits).is_empty(), || format!("seed {s}: violations"))?;
        let per_class_target = (tf * dataset.len() as f64 / classes as f64).round() as usize;
        let mut tcounts = vec![0usize; classes];
        let mut xcounts = vec![0usize; classes];
        for &i in &splits.target {
            tcounts[dataset.records[i].label as usize] += 1;
        }
        for &i in &splits.test {
            xcounts[dataset.records[i].label as usize] += 1;
        }
        ensure(tcounts.iter().all(|&c| c == per_class_target), || format!("seed {s}: target counts {tcounts:?}"))?;
        let per_class_test = (xf * (dataset.len() / classes) as f64).round() as usize;
        ensure(xcounts.iter().all(|&c| c == per_class_test), || format!("seed {s}: test counts {xcounts:?}"))?;
    }
    Ok(format!("worst SNR deviation {worst:.3} dB over 20 levels; round trip byte-identical; 100 split seeds valid"))
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    verdicts.push(criterion(1, "gradient correctness", Some(30.0), gradient_correctness));
    verdicts.push(criterion(2, "scoring oracle equivalence", Some(30.0), scoring_oracles));
    verdicts.push(criterion(3, "herding greedy optimality", Some(60.0), herding_optimality));

    let (desk, desk_splits) = desk_dataset(125);
    verdicts.push(criterion(4, "expansion loop invariants", Some(300.0), || loop_invariants(&desk, &desk_splits)));

    let (wide, wide_splits) = desk_dataset(DIRECTIONAL_PER_CELL);
    let mut shared = Directional {
        duse: Vec::new(),
        oneshot: eval_plan(&wide, &wide_splits, Method::DuseOneshot, 0.07).1,
        random: Vec::new(),
    };
    verdicts.push(criterion(5, "accuracy non-decreasing in expansion rate", Some(900.0), || {
        rate_trend(&wide, &wide_splits, &mut shared.duse)
    }));
    verdicts.push(criterion(6, "iterative beats one-shot at 7%", None, || ablation(&shared)));
    for rate in RATES.into_iter().filter(|&r| r >= 0.04) {
        let (_, report) = eval_plan(&wide, &wide_splits, Method::Random, rate);
        shared.random.push((rate, report));
    }
    verdicts.push(criterion(7, "duse at least random for r >= 4%", None, || beats_random(&shared)));
    verdicts.push(criterion(8, "class-balance contract", None, || class_balance(&desk, &desk_splits)));
    verdicts.push(criterion(9, "data substrate fidelity", None, || substrate_fidelity(&desk)));

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.passed).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    for v in &failed {
        println!("  failed {}: {} -- {}", v.id, v.title, v.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
