//! Dataset expansion: the iterative margin loop, its class-balanced and
//! one-shot variants, and the one-shot coreset baselines.
//!
//! Every selector reduces to a ranking of the remaining auxiliary indices,
//! most informative first. Plain selection takes a prefix of the ranking;
//! balanced selection takes per-class prefixes sized by [`balanced_quotas`]
//! and spills any shortfall to the best remaining candidates overall.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError, Dataset, Digest, SplitIndices};
use crate::nnet::{self, Architecture, Model, ModelState, NnetError, TrainConfig};
use crate::scoring::{self, Direction, GrandConfig, ScoreMethod, ScoreReport, ScoringError};
use crate::seed;

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("invalid splits: {0}")]
    InvalidSplits(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Duse,
    DuseBalanced,
    DuseOneshot,
    Margin,
    Entropy,
    LeastConfidence,
    Grand,
    Herding,
    Forgetting,
    Random,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Duse,
        Method::DuseBalanced,
        Method::DuseOneshot,
        Method::Margin,
        Method::Entropy,
        Method::LeastConfidence,
        Method::Grand,
        Method::Herding,
        Method::Forgetting,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Duse => "duse",
            Method::DuseBalanced => "duse_balanced",
            Method::DuseOneshot => "duse_oneshot",
            Method::Margin => "margin",
            Method::Entropy => "entropy",
            Method::LeastConfidence => "least_confidence",
            Method::Grand => "grand",
            Method::Herding => "herding",
            Method::Forgetting => "forgetting",
            Method::Random => "random",
        }
    }

    /// Methods that retrain and re-score between rounds.
    pub fn is_iterative(self) -> bool {
        matches!(self, Method::Duse | Method::DuseBalanced)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method {s:?} (expected one of {})", names.join(", "))
            })
    }
}

fn default_batch() -> usize {
    128
}

fn default_lr() -> f64 {
    1e-3
}

fn default_probe_epochs() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub method: Method,
    /// Fraction of the initial auxiliary pool to migrate.
    pub rate: f64,
    pub rounds: usize,
    /// Training epochs per round (and for one-shot scoring models).
    pub epochs: usize,
    pub seed: u64,
    /// Class-balanced selection; implied by `duse_balanced`.
    pub balance: bool,
    /// Start each round from the previous round's model instead of a fresh init.
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Training epochs of the forgetting probe on target ∪ auxiliary.
    #[serde(default = "default_probe_epochs")]
    pub probe_epochs: usize,
}

impl ExpansionPlan {
    pub fn new(method: Method, rate: f64) -> Self {
        ExpansionPlan {
            method,
            rate,
            rounds: 4,
            epochs: 20,
            seed: 0,
            balance: method == Method::DuseBalanced,
            warm_start: false,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            probe_epochs: default_probe_epochs(),
        }
    }

    pub fn balanced(&self) -> bool {
        self.balance || self.method == Method::DuseBalanced
    }

    /// Rounds actually run: one for every non-iterative method.
    pub fn effective_rounds(&self) -> usize {
        if self.method.is_iterative() {
            self.rounds
        } else {
            1
        }
    }

    /// Check the plan against an auxiliary pool of `num_aux` samples and
    /// return the total budget.
    pub fn validate(&self, num_aux: usize) -> Result<usize, ExpansionError> {
        let bad = |m: String| Err(ExpansionError::InvalidPlan(m));
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return bad(format!("rate {} outside (0, 1]", self.rate));
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.method == Method::Forgetting && self.probe_epochs < 2 {
            return bad("forgetting probe needs at least two epochs".into());
        }
        let budget = budget_from_rate(self.rate, num_aux)?;
        let rounds = self.effective_rounds();
        if budget < rounds {
            return bad(format!("budget {budget} is smaller than {rounds} rounds"));
        }
        Ok(budget)
    }
}

/// `round(rate * num_aux)`; a zero budget is rejected.
pub fn budget_from_rate(rate: f64, num_aux: usize) -> Result<usize, ExpansionError> {
    let budget = (rate * num_aux as f64).round() as usize;
    if budget == 0 {
        return Err(ExpansionError::InvalidPlan(format!(
            "rate {rate} of {num_aux} auxiliary samples selects nothing"
        )));
    }
    if budget > num_aux {
        return Err(ExpansionError::InvalidPlan(format!(
            "budget {budget} exceeds {num_aux} auxiliary samples"
        )));
    }
    Ok(budget)
}

/// Split `budget` over `rounds`; earlier rounds take the larger share.
pub fn round_quotas(budget: usize, rounds: usize) -> Vec<usize> {
    if rounds == 0 {
        return Vec::new();
    }
    let (base, extra) = (budget / rounds, budget % rounds);
    (0..rounds).map(|i| base + usize::from(i < extra)).collect()
}

fn informative_order(direction: Direction, a: (f64, usize), b: (f64, usize)) -> Ordering {
    let by_score = match direction {
        Direction::Min => a.0.total_cmp(&b.0),
        Direction::Max => b.0.total_cmp(&a.0),
    };
    by_score.then(a.1.cmp(&b.1))
}

/// Candidates sorted most-informative first, ties by ascending index.
pub fn rank_candidates(report: &ScoreReport, candidates: &[usize]) -> Result<Vec<usize>, ExpansionError> {
    let lookup: HashMap<usize, f64> = report.indices.iter().copied().zip(report.scores.iter().copied()).collect();
    let mut scored = candidates
        .iter()
        .map(|&i| {
            lookup
                .get(&i)
                .map(|&s| (s, i))
                .ok_or_else(|| ExpansionError::Sizing(format!("candidate {i} has no score")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|&a, &b| informative_order(report.direction, a, b));
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// The `k` most informative candidates, returned in ascending index order.
pub fn select_topk_uncertain(
    report: &ScoreReport,
    k: usize,
    candidates: &[usize],
) -> Result<Vec<usize>, ExpansionError> {
    if k > candidates.len() {
        return Err(ExpansionError::Sizing(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    let mut picked = rank_candidates(report, candidates)?;
    picked.truncate(k);
    picked.sort_unstable();
    Ok(picked)
}

/// A class that could not supply its balanced share.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Depletion {
    pub round: usize,
    pub class: usize,
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for Depletion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "round {}: class {} requested {} but only {} candidates remain; {} spilled",
            self.round,
            self.class,
            self.requested,
            self.available,
            self.requested - self.available
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quotas {
    pub per_class: Vec<usize>,
    /// Units that no class could absorb within its quota; filled from the
    /// globally best remaining candidates.
    pub spill: usize,
    pub depleted: Vec<Depletion>,
}

/// Per-class quotas for `k` new samples that level the target's class
/// totals. Units go one at a time to the class with the smallest running
/// total, lowest class id on ties. A class asked for more than it has
/// keeps what it has and the rest becomes spill.
pub fn balanced_quotas(k: usize, target_counts: &[usize], candidate_labels: &[usize]) -> Quotas {
    let classes = target_counts.len();
    let mut available = vec![0usize; classes];
    for &l in candidate_labels {
        available[l] += 1;
    }
    let mut ideal = vec![0usize; classes];
    for _ in 0..k {
        let c = (0..classes)
            .min_by_key(|&c| (target_counts[c] + ideal[c], c))
            .expect("at least one class");
        ideal[c] += 1;
    }
    let mut per_class = ideal.clone();
    let mut depleted = Vec::new();
    let mut spill = 0;
    for c in 0..classes {
        if ideal[c] > available[c] {
            per_class[c] = available[c];
            spill += ideal[c] - available[c];
            depleted.push(Depletion {
                round: 0,
                class: c,
                requested: ideal[c],
                available: available[c],
            });
        }
    }
    Quotas {
        per_class,
        spill,
        depleted,
    }
}

/// Take `k` indices from a ranking, optionally under balanced quotas.
fn take_from_ranking(
    ranking: &[usize],
    k: usize,
    labels: &[usize],
    balance: Option<&[usize]>,
    round: usize,
    diagnostics: &mut Vec<Depletion>,
) -> Result<Vec<usize>, ExpansionError> {
    if k > ranking.len() {
        return Err(ExpansionError::Sizing(format!(
            "round {round} needs {k} samples but only {} remain",
            ranking.len()
        )));
    }
    let mut picked = match balance {
        None => ranking[..k].to_vec(),
        Some(target_counts) => {
            let cand_labels: Vec<usize> = ranking.iter().map(|&i| labels[i]).collect();
            let quotas = balanced_quotas(k, target_counts, &cand_labels);
            let mut left = quotas.per_class.clone();
            let mut taken = HashSet::new();
            let mut picked = Vec::with_capacity(k);
            for &i in ranking {
                if left[labels[i]] > 0 {
                    left[labels[i]] -= 1;
                    taken.insert(i);
                    picked.push(i);
                }
            }
            picked.extend(ranking.iter().filter(|i| !taken.contains(i)).take(quotas.spill));
            diagnostics.extend(quotas.depleted.into_iter().map(|d| Depletion { round, ..d }));
            picked
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub plan: ExpansionPlan,
    pub source_digest: Digest,
    pub budget: usize,
    pub per_round_selected: Vec<Vec<usize>>,
    pub expanded_target: Vec<usize>,
    pub per_class_selected_counts: Vec<usize>,
    pub model_digests: Vec<Digest>,
    pub diagnostics: Vec<Depletion>,
}

impl ExpansionResult {
    pub fn selected(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.per_round_selected.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// A result plus the models and score reports that produced it.
#[derive(Clone, Debug)]
pub struct Traced {
    pub result: ExpansionResult,
    pub models: Vec<ModelState>,
    pub reports: Vec<ScoreReport>,
}

pub fn class_counts(dataset: &Dataset, indices: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; dataset.num_classes as usize];
    for &i in indices {
        counts[dataset.records[i].label as usize] += 1;
    }
    counts
}

struct Context<'a> {
    dataset: &'a Dataset,
    labels: Vec<usize>,
    arch: Architecture,
    digest: Digest,
    budget: usize,
}

fn prepare<'a>(
    dataset: &'a Dataset,
    splits: &SplitIndices,
    plan: &ExpansionPlan,
) -> Result<Context<'a>, ExpansionError> {
    let digest = dataset.digest()?;
    let violations = dataio::validate_splits(dataset.len(), digest, splits);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ExpansionError::InvalidSplits(msgs.join("; ")));
    }
    if splits.target.is_empty() {
        return Err(ExpansionError::InvalidSplits("empty target set".into()));
    }
    let budget = plan.validate(splits.auxiliary.len())?;
    let arch = Architecture::reference(dataset.num_classes as usize, dataset.signal_len as usize);
    arch.validate()?;
    Ok(Context {
        dataset,
        labels: dataset.labels(),
        arch,
        digest,
        budget,
    })
}

impl Context<'_> {
    fn train_config(&self, plan: &ExpansionPlan, round: usize) -> TrainConfig {
        TrainConfig {
            epochs: plan.epochs,
            batch_size: plan.batch_size,
            learning_rate: plan.learning_rate,
            shuffle_seed: seed::derive(plan.seed, &[round as u64]),
            record_correctness: false,
        }
    }

    fn train_on(&self, start: &ModelState, indices: &[usize], config: &TrainConfig) -> Result<ModelState, ExpansionError> {
        let xs: Vec<&[f32]> = indices.iter().map(|&i| self.dataset.records[i].data.as_slice()).collect();
        let ys: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(nnet::train(start, &xs, &ys, config)?.0)
    }

    fn finish(
        &self,
        plan: &ExpansionPlan,
        splits: &SplitIndices,
        per_round_selected: Vec<Vec<usize>>,
        model_digests: Vec<Digest>,
        diagnostics: Vec<Depletion>,
    ) -> ExpansionResult {
        let mut expanded_target = splits.target.clone();
        expanded_target.extend(per_round_selected.iter().flatten());
        expanded_target.sort_unstable();
        let selected: Vec<usize> = per_round_selected.iter().flatten().copied().collect();
        ExpansionResult {
            plan: ExpansionPlan {
                rounds: plan.effective_rounds(),
                balance: plan.balanced(),
                ..plan.clone()
            },
            source_digest: self.digest,
            budget: self.budget,
            per_class_selected_counts: class_counts(self.dataset, &selected),
            per_round_selected,
            expanded_target,
            model_digests,
            diagnostics,
        }
    }
}

/// Iterative margin expansion. Each round trains on the current target,
/// scores the remaining auxiliary pool by margin and migrates the round's
/// quota of smallest-margin samples.
pub fn duse_expand(dataset: &Dataset, splits: &SplitIndices, plan: &ExpansionPlan) -> Result<Traced, ExpansionError> {
    if !matches!(plan.method, Method::Duse | Method::DuseBalanced | Method::DuseOneshot) {
        return Err(ExpansionError::InvalidPlan(format!(
            "{} is not a margin-loop method",
            plan.method
        )));
    }
    let ctx = prepare(dataset, splits, plan)?;
    let mut target = splits.target.clone();
    let mut aux = splits.auxiliary.clone();
    let mut per_round = Vec::new();
    let mut models: Vec<ModelState> = Vec::new();
    let mut reports = Vec::new();
    let mut diagnostics = Vec::new();
    let fresh = Model::init(ctx.arch, plan.seed)?;
    for (round, &k) in round_quotas(ctx.budget, plan.effective_rounds()).iter().enumerate() {
        let start = match models.last() {
            Some(prev) if plan.warm_start => prev,
            _ => &fresh,
        };
        let model = ctx.train_on(start, &target, &ctx.train_config(plan, round))?;
        let report = scoring::uncertainty_report(&model, dataset, &aux, ScoreMethod::Margin)?;
        let ranking = rank_candidates(&report, &aux)?;
        let counts = class_counts(dataset, &target);
        let balance = plan.balanced().then_some(counts.as_slice());
        let picked = take_from_ranking(&ranking, k, &ctx.labels, balance, round, &mut diagnostics)?;
        let moved: HashSet<usize> = picked.iter().copied().collect();
        aux.retain(|i| !moved.contains(i));
        target.extend_from_slice(&picked);
        target.sort_unstable();
        per_round.push(picked);
        models.push(model);
        reports.push(report);
    }
    let digests = models.iter().map(|m| m.digest()).collect();
    Ok(Traced {
        result: ctx.finish(plan, splits, per_round, digests, diagnostics),
        models,
        reports,
    })
}

/// Single-pass selection of the whole budget by any method.
pub fn oneshot_expand(dataset: &Dataset, splits: &SplitIndices, plan: &ExpansionPlan) -> Result<Traced, ExpansionError> {
    if plan.method.is_iterative() {
        return Err(ExpansionError::InvalidPlan(format!("{} is iterative", plan.method)));
    }
    let ctx = prepare(dataset, splits, plan)?;
    let aux = &splits.auxiliary;
    let mut models = Vec::new();
    let mut reports = Vec::new();
    let mut digests = Vec::new();
    let mut diagnostics = Vec::new();
    let counts = class_counts(dataset, &splits.target);
    let balance = plan.balanced().then_some(counts.as_slice());
    let picked = match plan.method {
        Method::DuseOneshot | Method::Margin | Method::Entropy | Method::LeastConfidence => {
            let score = match plan.method {
                Method::Entropy => ScoreMethod::Entropy,
                Method::LeastConfidence => ScoreMethod::LeastConfidence,
                _ => ScoreMethod::Margin,
            };
            let model = ctx.train_on(&Model::init(ctx.arch, plan.seed)?, &splits.target, &ctx.train_config(plan, 0))?;
            let report = scoring::uncertainty_report(&model, dataset, aux, score)?;
            let ranking = rank_candidates(&report, aux)?;
            digests.push(model.digest());
            models.push(model);
            reports.push(report);
            take_from_ranking(&ranking, ctx.budget, &ctx.labels, balance, 0, &mut diagnostics)?
        }
        Method::Grand => {
            let config = GrandConfig {
                base_seed: plan.seed,
                batch_size: plan.batch_size,
                learning_rate: plan.learning_rate,
                ..GrandConfig::default()
            };
            let report = scoring::grand_scores(dataset, &splits.target, aux, &config)?;
            let ranking = rank_candidates(&report, aux)?;
            digests.push(report.model_digest);
            reports.push(report);
            take_from_ranking(&ranking, ctx.budget, &ctx.labels, balance, 0, &mut diagnostics)?
        }
        Method::Forgetting => {
            let config = TrainConfig {
                epochs: plan.probe_epochs,
                ..ctx.train_config(plan, 0)
            };
            let report = scoring::forgetting_scores(dataset, &splits.target, aux, &config, plan.seed)?;
            let ranking = rank_candidates(&report, aux)?;
            digests.push(report.model_digest);
            reports.push(report);
            take_from_ranking(&ranking, ctx.budget, &ctx.labels, balance, 0, &mut diagnostics)?
        }
        Method::Herding => {
            let model = ctx.train_on(&Model::init(ctx.arch, plan.seed)?, &splits.target, &ctx.train_config(plan, 0))?;
            let features = herding_features(&model, dataset, aux)?;
            let aux_labels: Vec<usize> = aux.iter().map(|&i| ctx.labels[i]).collect();
            let budgets = herding_budgets(ctx.budget, &counts, &aux_labels, balance.is_some());
            let positions = scoring::herding_select(&features, &aux_labels, &budgets)?;
            digests.push(model.digest());
            models.push(model);
            let mut picked: Vec<usize> = positions.into_iter().map(|p| aux[p]).collect();
            picked.sort_unstable();
            picked
        }
        Method::Random => {
            let mut ranking = aux.clone();
            ranking.shuffle(&mut seed::rng(seed::derive(plan.seed, &[seed::tag::RANDOM_SELECT])));
            take_from_ranking(&ranking, ctx.budget, &ctx.labels, balance, 0, &mut diagnostics)?
        }
        Method::Duse | Method::DuseBalanced => unreachable!("rejected above"),
    };
    Ok(Traced {
        result: ctx.finish(plan, splits, vec![picked], digests, diagnostics),
        models,
        reports,
    })
}

/// Penultimate-layer features of each listed record.
pub fn herding_features(model: &ModelState, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>, ExpansionError> {
    let xs: Vec<&[f32]> = indices.iter().map(|&i| dataset.records[i].data.as_slice()).collect();
    Ok(nnet::forward(model, &xs)?
        .into_iter()
        .map(|o| o.features.iter().map(|&v| v as f64).collect())
        .collect())
}

/// Per-class herding budgets: largest-remainder apportionment by auxiliary
/// class frequency, or balanced quotas when requested. Balanced shortfalls
/// are reassigned by largest remainder over the classes with room left.
pub fn herding_budgets(budget: usize, target_counts: &[usize], aux_labels: &[usize], balance: bool) -> Vec<usize> {
    let mut available = vec![0usize; target_counts.len()];
    for &l in aux_labels {
        available[l] += 1;
    }
    if !balance {
        return scoring::largest_remainder(budget, &available);
    }
    let quotas = balanced_quotas(budget, target_counts, aux_labels);
    let mut per_class = quotas.per_class;
    let room: Vec<usize> = per_class.iter().zip(&available).map(|(q, a)| a - q).collect();
    let extra = scoring::largest_remainder(quotas.spill, &room);
    for (q, e) in per_class.iter_mut().zip(extra) {
        *q += e;
    }
    per_class
}

/// Dispatch on the plan's method.
pub fn expand(dataset: &Dataset, splits: &SplitIndices, plan: &ExpansionPlan) -> Result<Traced, ExpansionError> {
    if plan.method.is_iterative() {
        duse_expand(dataset, splits, plan)
    } else {
        oneshot_expand(dataset, splits, plan)
    }
}
