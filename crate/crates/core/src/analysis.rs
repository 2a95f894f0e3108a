//! Evaluation metrics and the data-selection analytics built on score history.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, NULL_SLOT};
use crate::error::{Error, Result};
use crate::model::{forward, loss, JointClassifier, Predictions};
use crate::scoring::ScoreBook;

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn aligned(pred: &Predictions, gold: &[&Example]) -> Result<()> {
    if pred.items.len() != gold.len() {
        return Err(Error::input(format!("{} predictions for {} gold examples", pred.items.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    if let Some((p, g)) = pred.items.iter().zip(gold).find(|(p, g)| p.id != g.id) {
        return Err(Error::input(format!("prediction id {} aligned with gold id {}", p.id, g.id)));
    }
    Ok(())
}

fn slots_correct(p: &crate::model::ExamplePrediction, g: &Example) -> bool {
    p.slot_probs.iter().zip(&g.slots).all(|(probs, &y)| argmax(probs) == y)
}

/// Fraction of examples with the right intent and every real slot right.
pub fn full_sequence_accuracy(pred: &Predictions, gold: &[&Example]) -> Result<f64> {
    aligned(pred, gold)?;
    let hits = pred
        .items
        .iter()
        .zip(gold)
        .filter(|(p, g)| argmax(&p.intent_probs) == g.intent && slots_correct(p, g))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn intent_accuracy(pred: &Predictions, gold: &[&Example]) -> Result<f64> {
    aligned(pred, gold)?;
    let hits = pred.items.iter().zip(gold).filter(|(p, g)| argmax(&p.intent_probs) == g.intent).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Fraction of examples whose real slots are all right, intent ignored.
pub fn all_slots_accuracy(pred: &Predictions, gold: &[&Example]) -> Result<f64> {
    aligned(pred, gold)?;
    let hits = pred.items.iter().zip(gold).filter(|(p, g)| slots_correct(p, g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SlotCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SlotCounts {
    /// `2 TP / (2 TP + FP + FN)`; 1 when there is nothing to find and nothing was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn slot_counts(pred: &Predictions, gold: &[&Example]) -> Result<SlotCounts> {
    aligned(pred, gold)?;
    let mut c = SlotCounts::default();
    for (p, g) in pred.items.iter().zip(gold) {
        for (probs, &y) in p.slot_probs.iter().zip(&g.slots) {
            let yhat = argmax(probs);
            if yhat == y {
                if y != NULL_SLOT {
                    c.tp += 1;
                }
            } else {
                if yhat != NULL_SLOT {
                    c.fp += 1;
                }
                if y != NULL_SLOT {
                    c.fn_ += 1;
                }
            }
        }
    }
    Ok(c)
}

/// Token-level micro F1 over non-null slot classes.
pub fn slot_micro_f1(pred: &Predictions, gold: &[&Example]) -> Result<f64> {
    slot_counts(pred, gold).map(|c| c.f1())
}

/// Matthews correlation from a 2x2 confusion matrix; 0 when a marginal is empty.
pub fn mcc_from_confusion(tp: usize, tn: usize, fp: usize, fn_: usize) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

pub fn matthews_corr(pred: &[bool], gold: &[bool]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::input(format!("{} predictions for {} labels", pred.len(), gold.len())));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(mcc_from_confusion(tp, tn, fp, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub full_seq_accuracy: f64,
    pub intent_accuracy: f64,
    pub slot_micro_f1: f64,
    pub loss: f64,
}

pub fn evaluate(model: &JointClassifier, dataset: &Dataset, lambda: f64) -> Result<EvalMetrics> {
    let gold: Vec<_> = dataset.examples().iter().collect();
    let pred = forward(model, &gold)?;
    Ok(EvalMetrics {
        full_seq_accuracy: full_sequence_accuracy(&pred, &gold)?,
        intent_accuracy: intent_accuracy(&pred, &gold)?,
        slot_micro_f1: slot_micro_f1(&pred, &gold)?,
        loss: loss(&pred, &gold, lambda),
    })
}

// ---------------------------------------------------------------------------
// Data maps
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Easy,
    Hard,
    Ambiguous,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Easy => "easy",
            Region::Hard => "hard",
            Region::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataMapPoint {
    pub id: usize,
    pub mean_chi: f64,
    /// Population variance over cycles.
    pub var_chi: f64,
    pub selection_count: usize,
    pub region: Region,
}

/// Mean and variance of `chi_nlu` over each example's cycle history.
/// Regions start as ambiguous until [`classify_regions`] runs.
pub fn build_data_map(book: &ScoreBook) -> Result<Vec<DataMapPoint>> {
    let cycles = book.entries().first().map_or(0, |e| e.history.len());
    if cycles < 2 {
        return Err(Error::InsufficientHistory(format!("data map needs at least 2 cycles, have {cycles}")));
    }
    Ok(book
        .entries()
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let n = e.history.len() as f64;
            let mean = e.history.iter().map(|h| h.chi_nlu).sum::<f64>() / n;
            let var = e.history.iter().map(|h| (h.chi_nlu - mean).powi(2)).sum::<f64>() / n;
            DataMapPoint {
                id,
                mean_chi: mean,
                var_chi: var,
                selection_count: e.history.iter().filter(|h| h.selected).count(),
                region: Region::Ambiguous,
            }
        })
        .collect())
}

/// Linear-interpolation quantile of `values` (need not be sorted).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Hard: mean above the `hard_q` quantile of means. Easy: mean and variance
/// both at or below their `easy_q` quantiles. Everything else is ambiguous.
pub fn classify_regions(points: &[DataMapPoint], hard_q: f64, easy_q: f64) -> Result<Vec<DataMapPoint>> {
    if !(0.0 < easy_q && easy_q < hard_q && hard_q < 1.0) {
        return Err(Error::config(format!("need 0 < easy_q ({easy_q}) < hard_q ({hard_q}) < 1")));
    }
    let means: Vec<f64> = points.iter().map(|p| p.mean_chi).collect();
    let vars: Vec<f64> = points.iter().map(|p| p.var_chi).collect();
    let hard_mean = quantile(&means, hard_q);
    let easy_mean = quantile(&means, easy_q);
    let easy_var = quantile(&vars, easy_q);
    Ok(points
        .iter()
        .map(|p| {
            let region = if p.mean_chi > hard_mean {
                Region::Hard
            } else if p.mean_chi <= easy_mean && p.var_chi <= easy_var {
                Region::Easy
            } else {
                Region::Ambiguous
            };
            DataMapPoint { region, ..*p }
        })
        .collect())
}

/// `(count, frequency)` for every selection count from 0 to `n_cycles`.
pub fn selection_histogram(points: &[DataMapPoint], n_cycles: usize) -> Vec<(usize, usize)> {
    let mut freq = vec![0; n_cycles + 1];
    for p in points {
        freq[p.selection_count.min(n_cycles)] += 1;
    }
    freq.into_iter().enumerate().collect()
}

/// Share of flagged examples among the top tenth by `mean_chi`, against
/// their share overall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecileEnrichment {
    pub top_rate: f64,
    pub base_rate: f64,
}

impl DecileEnrichment {
    pub fn ratio(&self) -> f64 {
        self.top_rate / self.base_rate
    }
}

pub fn top_decile_enrichment(points: &[DataMapPoint], flagged: &[bool]) -> Result<DecileEnrichment> {
    if points.len() != flagged.len() || points.is_empty() {
        return Err(Error::input("flags must cover every data map point"));
    }
    let mut order: Vec<&DataMapPoint> = points.iter().collect();
    order.sort_by(|a, b| b.mean_chi.total_cmp(&a.mean_chi).then(a.id.cmp(&b.id)));
    let k = (points.len() / 10).max(1);
    let top = order[..k].iter().filter(|p| flagged[p.id]).count();
    let base = flagged.iter().filter(|&&f| f).count();
    Ok(DecileEnrichment { top_rate: top as f64 / k as f64, base_rate: base as f64 / points.len() as f64 })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::input(format!("need equal lengths >= 2, got {} and {}", x.len(), y.len())));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input has no ranking".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn write_data_map_csv(points: &[DataMapPoint], dataset: Option<&Dataset>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "mean_chi", "var_chi", "selection_count", "region", "mislabeled"])?;
    for p in points {
        let flag = dataset
            .and_then(|d| d.get(p.id))
            .and_then(|e| e.mislabeled)
            .map_or(String::new(), |f| f.to_string());
        w.write_record([
            p.id.to_string(),
            p.mean_chi.to_string(),
            p.var_chi.to_string(),
            p.selection_count.to_string(),
            p.region.as_str().to_string(),
            flag,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(hist: &[(usize, usize)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["count", "frequency"])?;
    for (c, f) in hist {
        w.write_record([c.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
