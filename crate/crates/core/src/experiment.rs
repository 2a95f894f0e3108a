//! End-to-end experiments: resolve a config into train/eval data, run a
//! regime, and persist or compare run directories.
//!
//! A run directory holds `metrics.csv`, `scores.csv` (methods that score),
//! `retained.json`, `summary.json`, `timing.json`, the training set as
//! `train.jsonl` with its vocabulary sidecars, and the final `model.json`.
//! Everything except `timing.json` is a pure function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{build_data_map, classify_regions, selection_histogram, write_data_map_csv, write_histogram_csv, DataMapPoint, EvalMetrics};
use crate::curriculum::{count_steps, retained_size, run, Method, PruneConfig, RunResult};
use crate::data::{generate_synthetic, inject_mislabels, load_jsonl, load_jsonl_with_schema, save_jsonl, Dataset, MislabelMode, Schema, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::runtime::{baseline_time, cost_from_timing, min_cycle, predict_total_time, CostModel};
use crate::scoring::ScoreBook;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const RETAINED_FILE: &str = "retained.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const MODEL_FILE: &str = "model.json";

/// Quantiles used to split a data map into regions.
pub const HARD_QUANTILE: f64 = 0.75;
pub const EASY_QUANTILE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Jsonl {
        path: PathBuf,
        max_len: usize,
        /// Seed of the train/eval split.
        #[serde(default)]
        split_seed: u64,
    },
    /// Generated from `spec`; the split and mislabel injection reuse `spec.seed`
    /// so every training seed sees the same data.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        mislabel_rate: f64,
        #[serde(default = "default_mislabel_mode")]
        mislabel_mode: MislabelMode,
    },
}

fn default_mislabel_mode() -> MislabelMode {
    MislabelMode::Intent
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic { spec: SyntheticSpec::default(), mislabel_rate: 0.0, mislabel_mode: MislabelMode::Intent }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_hid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_emb: 32, d_hid: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DatasetSource,
    pub prune: PruneConfig,
    pub model: ModelConfig,
    /// Fraction of examples held out for evaluation. Mislabels are injected
    /// into the training part only.
    pub eval_fraction: f64,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DatasetSource::default(),
            prune: PruneConfig::default(),
            model: ModelConfig::default(),
            eval_fraction: 0.2,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.prune.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config(format!("eval_fraction = {} not in (0, 1)", self.eval_fraction)));
        }
        if self.model.d_emb == 0 || self.model.d_hid == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if let DatasetSource::Synthetic { spec, mislabel_rate, .. } = &self.data {
            spec.validate()?;
            if !(0.0..=0.5).contains(mislabel_rate) {
                return Err(Error::config(format!("mislabel_rate = {mislabel_rate} not in [0, 0.5]")));
            }
        }
        Ok(())
    }

    /// Train and eval sets this config describes.
    pub fn prepare_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DatasetSource::Jsonl { path, max_len, split_seed } => load_jsonl(path, *max_len)?.split(self.eval_fraction, *split_seed),
            DatasetSource::Synthetic { spec, mislabel_rate, mislabel_mode } => {
                let all = generate_synthetic(spec)?;
                let (train, eval) = all.split(self.eval_fraction, spec.seed)?;
                Ok((inject_mislabels(&train, *mislabel_rate, *mislabel_mode, spec.seed)?, eval))
            }
        }
    }

    pub fn dims(&self, train: &Dataset) -> ModelDims {
        ModelDims {
            vocab_size: train.vocab_size(),
            d_emb: self.model.d_emb,
            d_hid: self.model.d_hid,
            n_intents: train.n_intents(),
            n_slots: train.n_slots(),
        }
    }
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub eval: Dataset,
    pub result: RunResult,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let (train, eval) = config.prepare_data()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::config(format!(
            "eval_fraction {} leaves {} train and {} eval examples",
            config.eval_fraction,
            train.len(),
            eval.len()
        )));
    }
    let result = run(&config.prune, &train, Some(&eval), config.dims(&train))?;
    Ok(Experiment { config: config.clone(), train, eval, result })
}

/// Deterministic record of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub method: Method,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_mislabeled: usize,
    pub dataset_fingerprint: String,
    pub steps_per_epoch: usize,
    pub retained_size: usize,
    pub epochs_trained: usize,
    pub cycles: usize,
    pub total_train_steps: u64,
    pub predicted_train_steps: u64,
    pub total_scoring_passes: usize,
    pub overhead_steps: u64,
    pub final_eval: Option<EvalMetrics>,
    pub model_digest: String,
}

/// Wall-clock measurements and the cost model fitted to them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub dt_step: f64,
    pub dt_forward: f64,
    pub step_secs: f64,
    pub forward_secs: f64,
    pub overhead_secs: f64,
    pub measured_secs: f64,
    pub predicted_secs: f64,
}

impl RunSummary {
    pub fn new(exp: &Experiment) -> Self {
        let r = &exp.result;
        let cfg = &exp.config.prune;
        RunSummary {
            config: exp.config.clone(),
            method: r.method,
            n_train: exp.train.len(),
            n_eval: exp.eval.len(),
            n_mislabeled: exp.train.mislabeled_ids().len(),
            dataset_fingerprint: exp.train.fingerprint(),
            steps_per_epoch: r.steps_per_epoch,
            retained_size: if r.method == Method::Full { exp.train.len() } else { retained_size(exp.train.len(), cfg.rho) },
            epochs_trained: r.epochs_trained,
            cycles: r.retained_sets.len(),
            total_train_steps: r.total_train_steps,
            predicted_train_steps: count_steps(cfg, exp.train.len()),
            total_scoring_passes: r.total_scoring_passes,
            overhead_steps: r.overhead_steps,
            final_eval: r.final_eval,
            model_digest: r.model.digest(),
        }
    }
}

/// Cost-model time of a run given measured per-step and per-pass costs.
///
/// Cycle-based methods use the closed form directly. Single and static
/// pruning follow the same saving term with their own number of scoring
/// passes; static pruning adds the steps of its scoring models.
pub fn predicted_time(cfg: &PruneConfig, cost: &CostModel, scoring_passes: usize, overhead_steps: u64) -> f64 {
    let (e, tau) = (cfg.epochs, cfg.tau);
    match cfg.method {
        Method::Full => baseline_time(cost, e),
        Method::Dynamic | Method::DynamicRandom => predict_total_time(cost, e, tau, cfg.cycle, cfg.rho),
        Method::Single | Method::Static => {
            let b = cost.steps_per_epoch as f64;
            baseline_time(cost, e) - (e - tau) as f64 * b * cost.dt_step * cfg.rho
                + scoring_passes as f64 * cost.dt_forward
                + overhead_steps as f64 * cost.dt_step
        }
    }
}

pub fn timing_summary(exp: &Experiment) -> Result<TimingSummary> {
    let r = &exp.result;
    let cost = cost_from_timing(&r.timing, r.steps_per_epoch)?;
    let step_secs: f64 = r.timing.step_secs.iter().sum();
    let forward_secs: f64 = r.timing.forward_secs.iter().sum();
    Ok(TimingSummary {
        dt_step: cost.dt_step,
        dt_forward: cost.dt_forward,
        step_secs,
        forward_secs,
        overhead_secs: r.timing.overhead_secs,
        measured_secs: r.timing.total_secs(),
        predicted_secs: predicted_time(&exp.config.prune, &cost, r.total_scoring_passes, r.overhead_steps),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn write_metrics_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in &result.trace {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact of `exp` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, exp: &Experiment) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    let r = &exp.result;
    write_metrics_csv(r, &dir.join(METRICS_FILE))?;
    if let Some(book) = &r.book {
        book.write_csv(&dir.join(SCORES_FILE))?;
    }
    for (i, scores) in r.static_scores.iter().enumerate() {
        let mut w = csv::Writer::from_path(dir.join(format!("static_scores_r{i}.csv")))?;
        w.write_record(["id", "chi_intent", "chi_slot", "chi_nlu"])?;
        for (id, s) in scores.iter().enumerate() {
            w.write_record([id.to_string(), s.chi_intent.to_string(), s.chi_slot.to_string(), s.chi_nlu.to_string()])?;
        }
        w.flush()?;
    }
    let retained: BTreeMap<usize, &Vec<usize>> = r.retained_sets.iter().enumerate().map(|(i, s)| (i + 1, s)).collect();
    write_json(&dir.join(RETAINED_FILE), &retained)?;
    let summary = RunSummary::new(exp);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_json(&dir.join(TIMING_FILE), &timing_summary(exp)?)?;
    save_jsonl(&exp.train, &dir.join(TRAIN_FILE))?;
    r.model.save_checkpoint(&dir.join(MODEL_FILE))?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    if !path.is_file() {
        return Err(Error::Input(format!("{}: no {SUMMARY_FILE}", dir.display())));
    }
    read_json(&path)
}

pub fn read_retained(dir: &Path) -> Result<BTreeMap<usize, Vec<usize>>> {
    read_json(&dir.join(RETAINED_FILE))
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub method: Method,
    pub full_seq_accuracy: Option<f64>,
    pub intent_accuracy: Option<f64>,
    pub slot_micro_f1: Option<f64>,
    pub total_train_steps: u64,
    pub measured_secs: Option<f64>,
    pub predicted_secs: Option<f64>,
    pub dataset_fingerprint: String,
    /// Set when this run trained on different data than the first run.
    pub dataset_mismatch: bool,
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if dirs.len() < 2 {
        return Err(Error::config(format!("compare needs at least 2 run directories, got {}", dirs.len())));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    let mut reference: Option<String> = None;
    for dir in dirs {
        let s = read_summary(dir)?;
        let timing: Option<TimingSummary> = read_json(&dir.join(TIMING_FILE)).ok();
        let reference = reference.get_or_insert_with(|| s.dataset_fingerprint.clone());
        rows.push(CompareRow {
            run: dir.display().to_string(),
            method: s.method,
            full_seq_accuracy: s.final_eval.map(|m| m.full_seq_accuracy),
            intent_accuracy: s.final_eval.map(|m| m.intent_accuracy),
            slot_micro_f1: s.final_eval.map(|m| m.slot_micro_f1),
            total_train_steps: s.total_train_steps,
            measured_secs: timing.as_ref().map(|t| t.measured_secs),
            predicted_secs: timing.as_ref().map(|t| t.predicted_secs),
            dataset_mismatch: *reference != s.dataset_fingerprint,
            dataset_fingerprint: s.dataset_fingerprint,
        });
    }
    Ok(rows)
}

pub fn write_rows_csv<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const COMPARE_HEADER: [&str; 10] = [
    "run",
    "method",
    "full_seq_accuracy",
    "intent_accuracy",
    "slot_micro_f1",
    "total_train_steps",
    "measured_secs",
    "predicted_secs",
    "dataset_fingerprint",
    "dataset_mismatch",
];

// ---------------------------------------------------------------------------
// Cost-model sweeps
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub cycle: usize,
    pub cycles: usize,
    pub predicted_secs: f64,
    pub baseline_secs: f64,
    pub saves_time: bool,
    /// `undefined` when `rho = 0`.
    pub min_cycle: String,
}

pub const SWEEP_HEADER: [&str; 7] = ["rho", "cycle", "cycles", "predicted_secs", "baseline_secs", "saves_time", "min_cycle"];

pub fn runtime_sweep(cost: &CostModel, epochs: usize, tau: usize, rhos: &[f64], cycles: &[usize]) -> Result<Vec<SweepRow>> {
    cost.validate()?;
    if tau > epochs {
        return Err(Error::config(format!("tau = {tau} exceeds epochs = {epochs}")));
    }
    if let Some(r) = rhos.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::config(format!("rho = {r} not in [0, 1)")));
    }
    if cycles.contains(&0) {
        return Err(Error::config("cycle length T must be at least 1"));
    }
    let baseline = baseline_time(cost, epochs);
    let mut rows = Vec::with_capacity(rhos.len() * cycles.len());
    for &rho in rhos {
        let t_min = match min_cycle(cost, rho) {
            Ok(t) => t.to_string(),
            Err(Error::Domain(_)) => "undefined".to_string(),
            Err(e) => return Err(e),
        };
        for &cycle in cycles {
            let predicted = predict_total_time(cost, epochs, tau, cycle, rho);
            rows.push(SweepRow {
                rho,
                cycle,
                cycles: crate::runtime::cycle_count(epochs, tau, cycle),
                predicted_secs: predicted,
                baseline_secs: baseline,
                saves_time: predicted < baseline,
                min_cycle: t_min.clone(),
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Data maps from run directories
// ---------------------------------------------------------------------------

pub struct DataMapReport {
    pub points: Vec<DataMapPoint>,
    pub histogram: Vec<(usize, usize)>,
    pub cycles: usize,
}

/// Data map of the score history stored in `run_dir`; writes `datamap.csv`
/// and `histogram.csv` into `out_dir`.
pub fn datamap_from_run(run_dir: &Path, out_dir: &Path) -> Result<DataMapReport> {
    let scores = run_dir.join(SCORES_FILE);
    if !scores.is_file() {
        return Err(Error::InsufficientHistory(format!("{}: run recorded no scores", run_dir.display())));
    }
    let book = ScoreBook::read_csv(&scores)?;
    let points = classify_regions(&build_data_map(&book)?, HARD_QUANTILE, EASY_QUANTILE)?;
    let cycles = book.updates();
    let histogram = selection_histogram(&points, cycles);

    let train_path = run_dir.join(TRAIN_FILE);
    let train = if train_path.is_file() {
        let schema = Schema::read_sidecars(&train_path)?;
        let max_len = read_summary(run_dir).ok().map(|s| match s.config.data {
            DatasetSource::Jsonl { max_len, .. } => max_len,
            DatasetSource::Synthetic { spec, .. } => spec.max_len,
        });
        match max_len {
            Some(m) => Some(load_jsonl_with_schema(&train_path, m, schema)?),
            None => None,
        }
    } else {
        None
    };
    fs::create_dir_all(out_dir)?;
    write_data_map_csv(&points, train.as_ref(), &out_dir.join("datamap.csv"))?;
    write_histogram_csv(&histogram, &out_dir.join("histogram.csv"))?;
    Ok(DataMapReport { points, histogram, cycles })
}
