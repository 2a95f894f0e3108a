//! Training regimes: full training, static, single and dynamic pruning, and
//! dynamic pruning with random selection.
//!
//! Dynamic pruning trains `tau` epochs on the full set, then runs
//! `C = floor((E - tau) / T)` cycles. Each cycle re-scores the *full* training
//! set, folds the scores into the EMA, keeps the top `1 - rho` fraction and
//! trains `T` epochs on it. Epochs left over when `T` does not divide
//! `E - tau` are trained on the last retained subset without re-scoring.
//!
//! All pruned methods train `tau B + (E - tau) B'` steps, where `B` and `B'`
//! are the batch counts of the full set and of the retained subset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate, EvalMetrics};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::model::{adam_step, loss_and_gradients, AdamConfig, JointClassifier, ModelDims, OptimizerState};
use crate::runtime::{cycle_count, TimingLog};
use crate::scoring::{random_scores, score_dataset, ExampleScore, ScoreBook, DEFAULT_ALPHA};
use crate::seed::{substream_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Static,
    Single,
    Dynamic,
    DynamicRandom,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Full, Method::Static, Method::Single, Method::Dynamic, Method::DynamicRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Static => "static",
            Method::Single => "single",
            Method::Dynamic => "dynamic",
            Method::DynamicRandom => "dynamic_random",
        }
    }

    pub fn uses_cycles(self) -> bool {
        matches!(self, Method::Dynamic | Method::DynamicRandom)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub method: Method,
    /// Total epochs `E`.
    pub epochs: usize,
    /// Initial full-set epochs.
    pub tau: usize,
    /// Epochs per pruning cycle `T`.
    pub cycle: usize,
    /// Fraction of examples discarded at each selection.
    pub rho: f64,
    pub alpha: f64,
    /// Weight of the intent loss; slots get `1 - lambda`.
    pub lambda: f64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Independently initialized models averaged by the static baseline.
    pub static_models: usize,
    pub static_epochs: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            method: Method::Dynamic,
            epochs: 40,
            tau: 4,
            cycle: 4,
            rho: 0.5,
            alpha: DEFAULT_ALPHA,
            lambda: 0.5,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            seed: 0,
            static_models: 10,
            static_epochs: 10,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho = {} not in [0, 1)", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha = {} not in (0, 1]", self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda = {} not in (0, 1)", self.lambda));
        }
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.optimizer.learning_rate));
        }
        if self.tau > self.epochs {
            return bad(format!("tau = {} exceeds epochs = {}", self.tau, self.epochs));
        }
        if self.method.uses_cycles() {
            if self.cycle == 0 {
                return bad("cycle length T must be at least 1".into());
            }
            if cycle_count(self.epochs, self.tau, self.cycle) == 0 {
                return bad("no pruning cycles; increase E-tau or decrease T".into());
            }
        }
        if self.method == Method::Static && (self.static_models == 0 || self.static_epochs == 0) {
            return bad("static pruning needs static_models >= 1 and static_epochs >= 1".into());
        }
        Ok(())
    }

    pub fn cycles(&self) -> usize {
        if self.method.uses_cycles() {
            cycle_count(self.epochs, self.tau, self.cycle)
        } else {
            0
        }
    }
}

/// `max(1, floor((1 - rho) n))`, or 0 for an empty set.
pub fn retained_size(n: usize, rho: f64) -> usize {
    if n == 0 {
        return 0;
    }
    (((1.0 - rho) * n as f64).floor() as usize).clamp(1, n)
}

/// Top `1 - rho` fraction by descending score, ties to the lower id.
/// Returned ids are ascending.
pub fn select_subset(scores: &[f64], rho: f64) -> Vec<usize> {
    let k = retained_size(scores.len(), rho);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Training steps a run of `config` on `n` examples takes.
///
/// Full training is `E B`; every pruned method is `tau B + (E - tau) B'`.
/// This differs from the idealized `E B - rho (E - tau) B` by batch
/// rounding only.
pub fn count_steps(config: &PruneConfig, n: usize) -> u64 {
    let b = steps_per_epoch(n, config.batch_size) as u64;
    let (e, tau) = (config.epochs as u64, config.tau as u64);
    match config.method {
        Method::Full => e * b,
        _ => {
            let b_kept = steps_per_epoch(retained_size(n, config.rho), config.batch_size) as u64;
            tau * b + (e - tau) * b_kept
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub model: JointClassifier,
    /// Absent for full training and random selection, which never score.
    pub book: Option<ScoreBook>,
    pub trace: Vec<MetricRecord>,
    pub epochs_trained: usize,
    pub total_train_steps: u64,
    pub total_scoring_passes: usize,
    /// Steps spent training the static baseline's scoring models.
    pub overhead_steps: u64,
    /// Retained ids per selection, in selection order.
    pub retained_sets: Vec<Vec<usize>>,
    /// Per-model scores behind the static baseline's average.
    pub static_scores: Vec<Vec<ExampleScore>>,
    pub timing: TimingLog,
    pub steps_per_epoch: usize,
    pub final_eval: Option<EvalMetrics>,
}

/// Model initialization for replica `replica` under `seed`; replica 0 is the main model.
pub fn init_model(dims: ModelDims, seed: u64, replica: usize) -> JointClassifier {
    JointClassifier::seeded(dims, substream_seed(seed, Stream::Init, replica as u64))
}

struct Trainer<'a> {
    cfg: &'a PruneConfig,
    train: &'a Dataset,
    eval: Option<&'a Dataset>,
    model: JointClassifier,
    opt: OptimizerState,
    replica: u64,
    epoch: usize,
    steps: u64,
    timing: TimingLog,
    trace: Vec<MetricRecord>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a PruneConfig, train: &'a Dataset, eval: Option<&'a Dataset>, model: JointClassifier, replica: usize) -> Self {
        let opt = OptimizerState::new(model.dims(), cfg.optimizer);
        Self {
            cfg,
            train,
            eval,
            model,
            opt,
            replica: replica as u64,
            epoch: 0,
            steps: 0,
            timing: TimingLog::default(),
            trace: Vec::new(),
        }
    }

    /// One pass over `ids`, stopping early once `max_steps` total steps are reached.
    fn epoch(&mut self, ids: &[usize], max_steps: Option<u64>) -> Result<()> {
        let seed = substream_seed(self.cfg.seed, Stream::Batching, (self.replica << 32) | self.epoch as u64);
        let batches = batch_iter(self.train, ids, self.cfg.batch_size, seed)?;
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for b in &batches {
            if max_steps.is_some_and(|cap| self.steps >= cap) {
                break;
            }
            let batch = self.train.select(b);
            let (model, opt, lambda) = (&mut self.model, &mut self.opt, self.cfg.lambda);
            let loss = self.timing.time_step(|| -> Result<f64> {
                let (loss, grads) = loss_and_gradients(model, &batch, lambda)?;
                adam_step(model, opt, &grads)?;
                Ok(loss)
            })?;
            loss_sum += loss;
            n += 1;
            self.steps += 1;
        }
        self.epoch += 1;
        if n > 0 {
            self.record("train", "loss", loss_sum / n as f64);
        }
        if let Some(eval) = self.eval {
            let m = evaluate(&self.model, eval, self.cfg.lambda)?;
            self.record("eval", "full_seq_accuracy", m.full_seq_accuracy);
            self.record("eval", "intent_accuracy", m.intent_accuracy);
            self.record("eval", "slot_micro_f1", m.slot_micro_f1);
            self.record("eval", "loss", m.loss);
        }
        Ok(())
    }

    fn record(&mut self, split: &str, metric: &str, value: f64) {
        self.trace.push(MetricRecord { epoch: self.epoch, split: split.into(), metric: metric.into(), value });
    }

    fn score(&mut self) -> Result<Vec<ExampleScore>> {
        let (model, train) = (&self.model, self.train);
        self.timing.time_forward(|| score_dataset(model, train))
    }

    fn finish(self, method: Method, book: Option<ScoreBook>, retained_sets: Vec<Vec<usize>>) -> Result<RunResult> {
        let final_eval = self.eval.map(|e| evaluate(&self.model, e, self.cfg.lambda)).transpose()?;
        Ok(RunResult {
            method,
            total_scoring_passes: self.timing.forward_secs.len(),
            model: self.model,
            book,
            trace: self.trace,
            epochs_trained: self.epoch,
            total_train_steps: self.steps,
            overhead_steps: 0,
            retained_sets,
            static_scores: Vec::new(),
            timing: self.timing,
            steps_per_epoch: steps_per_epoch(self.train.len(), self.cfg.batch_size),
            final_eval,
        })
    }
}

fn check_inputs(cfg: &PruneConfig, train: &Dataset, model: &JointClassifier, allowed: &[Method]) -> Result<()> {
    cfg.validate()?;
    if !allowed.contains(&cfg.method) {
        return Err(Error::config(format!("method {} cannot run here", cfg.method)));
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    model.check_dims(train.vocab_size(), train.n_intents(), train.n_slots())
}

pub fn run_full(cfg: &PruneConfig, train: &Dataset, eval: Option<&Dataset>, model: JointClassifier) -> Result<RunResult> {
    check_inputs(cfg, train, &model, &[Method::Full])?;
    let all = train.all_ids();
    let mut tr = Trainer::new(cfg, train, eval, model, 0);
    for _ in 0..cfg.epochs {
        tr.epoch(&all, None)?;
    }
    tr.finish(Method::Full, None, Vec::new())
}

/// `tau` full-set epochs, one scoring pass and selection, then the rest of
/// the epochs on that fixed subset.
pub fn run_single(cfg: &PruneConfig, train: &Dataset, eval: Option<&Dataset>, model: JointClassifier) -> Result<RunResult> {
    check_inputs(cfg, train, &model, &[Method::Single])?;
    let all = train.all_ids();
    let mut tr = Trainer::new(cfg, train, eval, model, 0);
    for _ in 0..cfg.tau {
        tr.epoch(&all, None)?;
    }
    let mut book = ScoreBook::new(train.len());
    let scores = tr.score()?;
    book.ema_update(&scores, cfg.alpha, 1)?;
    let keep = select_subset(&book.ema_scores(), cfg.rho);
    book.mark_selected(1, &keep)?;
    for _ in cfg.tau..cfg.epochs {
        tr.epoch(&keep, None)?;
    }
    tr.finish(Method::Single, Some(book), vec![keep])
}

/// Periodic re-scoring and selection; see the module docs for the schedule.
pub fn run_dynamic(cfg: &PruneConfig, train: &Dataset, eval: Option<&Dataset>, model: JointClassifier) -> Result<RunResult> {
    check_inputs(cfg, train, &model, &[Method::Dynamic, Method::DynamicRandom])?;
    let n = train.len();
    let all = train.all_ids();
    let mut tr = Trainer::new(cfg, train, eval, model, 0);
    for _ in 0..cfg.tau {
        tr.epoch(&all, None)?;
    }
    let cycles = cfg.cycles();
    let mut book = ScoreBook::new(n);
    let mut retained_sets = Vec::with_capacity(cycles);
    for c in 1..=cycles {
        let keep = match cfg.method {
            Method::Dynamic => {
                let scores = tr.score()?;
                book.ema_update(&scores, cfg.alpha, c)?;
                let keep = select_subset(&book.ema_scores(), cfg.rho);
                book.mark_selected(c, &keep)?;
                keep
            }
            _ => select_subset(&random_scores(n, cfg.seed, c), cfg.rho),
        };
        for _ in 0..cfg.cycle {
            tr.epoch(&keep, None)?;
        }
        retained_sets.push(keep);
    }
    let last = retained_sets.last().expect("at least one cycle").clone();
    for _ in (cfg.tau + cycles * cfg.cycle)..cfg.epochs {
        tr.epoch(&last, None)?;
    }
    let book = (cfg.method == Method::Dynamic).then_some(book);
    tr.finish(cfg.method, book, retained_sets)
}

/// Scores the full set with `static_models` independently initialized models
/// trained `static_epochs` each, averages `chi_nlu` across them, selects
/// once, and trains `model_factory(0)` on the subset for exactly
/// [`count_steps`] steps.
pub fn run_static(
    cfg: &PruneConfig,
    train: &Dataset,
    eval: Option<&Dataset>,
    model_factory: impl Fn(usize) -> JointClassifier,
) -> Result<RunResult> {
    let main_model = model_factory(0);
    check_inputs(cfg, train, &main_model, &[Method::Static])?;
    let n = train.len();
    let all = train.all_ids();

    let mut per_model = Vec::with_capacity(cfg.static_models);
    let mut overhead_steps = 0;
    let mut overhead_secs = 0.0;
    for r in 0..cfg.static_models {
        let mut aux = Trainer::new(cfg, train, None, model_factory(r), r);
        for _ in 0..cfg.static_epochs {
            aux.epoch(&all, None)?;
        }
        per_model.push(aux.score()?);
        overhead_steps += aux.steps;
        overhead_secs += aux.timing.total_secs();
    }

    let r = cfg.static_models as f64;
    let mean = |f: fn(&ExampleScore) -> f64| -> Vec<f64> {
        (0..n).map(|i| per_model.iter().map(|s| f(&s[i])).sum::<f64>() / r).collect()
    };
    let (mean_intent, mean_slot, mean_nlu) = (mean(|s| s.chi_intent), mean(|s| s.chi_slot), mean(|s| s.chi_nlu));
    let averaged: Vec<ExampleScore> = (0..n)
        .map(|i| ExampleScore { chi_intent: mean_intent[i], chi_slot: mean_slot[i], chi_nlu: mean_nlu[i] })
        .collect();
    let mut book = ScoreBook::new(n);
    book.record(&averaged, &mean_nlu, 1)?;
    let keep = select_subset(&mean_nlu, cfg.rho);
    book.mark_selected(1, &keep)?;

    let budget = count_steps(cfg, n);
    let mut tr = Trainer::new(cfg, train, eval, main_model, 0);
    while tr.steps < budget {
        tr.epoch(&keep, Some(budget))?;
    }
    tr.timing.overhead_secs = overhead_secs;
    let mut result = tr.finish(Method::Static, Some(book), vec![keep])?;
    result.total_scoring_passes = cfg.static_models;
    result.overhead_steps = overhead_steps;
    result.static_scores = per_model;
    Ok(result)
}

/// Dispatches on `cfg.method`, initializing models from `cfg.seed`.
pub fn run(cfg: &PruneConfig, train: &Dataset, eval: Option<&Dataset>, dims: ModelDims) -> Result<RunResult> {
    let model = || init_model(dims, cfg.seed, 0);
    match cfg.method {
        Method::Full => run_full(cfg, train, eval, model()),
        Method::Single => run_single(cfg, train, eval, model()),
        Method::Dynamic | Method::DynamicRandom => run_dynamic(cfg, train, eval, model()),
        Method::Static => run_static(cfg, train, eval, |r| init_model(dims, cfg.seed, r)),
    }
}
