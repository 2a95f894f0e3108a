//! EL2N importance scores for joint intent/slot examples and their
//! exponential moving average across pruning cycles.

use std::path::Path;

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, JointClassifier};
use crate::seed::{substream_rng, Stream};

/// Default EMA coefficient.
pub const DEFAULT_ALPHA: f64 = 0.8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub chi_intent: f64,
    pub chi_slot: f64,
    pub chi_nlu: f64,
}

impl ExampleScore {
    pub fn new(chi_intent: f64, chi_slot: f64) -> Self {
        Self { chi_intent, chi_slot, chi_nlu: el2n_joint(chi_intent, chi_slot) }
    }
}

fn error_sq(p: &[f64], y: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let d = if k == y { pk - 1.0 } else { pk };
            d * d
        })
        .sum()
}

/// `||p - onehot(y)||_2`.
pub fn el2n_intent(p: &[f64], y: usize) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::input(format!("label {y} out of range for {} classes", p.len())));
    }
    Ok(error_sq(p, y).sqrt())
}

/// `sqrt(sum_m ||P_m - onehot(Y_m)||^2)` over positions with `mask` set.
pub fn el2n_slot(probs: &[Vec<f64>], labels: &[usize], mask: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() || labels.len() != mask.len() {
        return Err(Error::input(format!(
            "slot shapes disagree: {} prob rows, {} labels, {} mask entries",
            probs.len(),
            labels.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    for ((p, &y), _) in probs.iter().zip(labels).zip(mask).filter(|(_, &m)| m) {
        if y >= p.len() {
            return Err(Error::input(format!("slot label {y} out of range for {} classes", p.len())));
        }
        total += error_sq(p, y);
    }
    Ok(total.sqrt())
}

pub fn el2n_joint(chi_intent: f64, chi_slot: f64) -> f64 {
    (chi_intent * chi_intent + chi_slot * chi_slot).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub cycle: usize,
    pub chi_intent: f64,
    pub chi_slot: f64,
    pub chi_nlu: f64,
    pub chi_ema: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreEntry {
    pub chi_intent: f64,
    pub chi_slot: f64,
    pub chi_nlu: f64,
    pub chi_ema: f64,
    pub history: Vec<HistoryEntry>,
}

/// Per-example scores, EMA state and cycle history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreBook {
    entries: Vec<ScoreEntry>,
    updates: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: usize,
    cycle: usize,
    chi_intent: f64,
    chi_slot: f64,
    chi_nlu: f64,
    chi_ema: f64,
    selected: bool,
}

impl ScoreBook {
    pub fn new(n: usize) -> Self {
        Self { entries: vec![ScoreEntry::default(); n], updates: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn ema_scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.chi_ema).collect()
    }

    fn last_cycle(&self) -> Option<usize> {
        self.entries.first().and_then(|e| e.history.last()).map(|h| h.cycle)
    }

    fn check_next(&self, fresh_len: usize, cycle: usize) -> Result<()> {
        if fresh_len != self.entries.len() {
            return Err(Error::input(format!("{fresh_len} fresh scores for {} examples", self.entries.len())));
        }
        if let Some(last) = self.last_cycle() {
            if cycle <= last {
                return Err(Error::input(format!("cycle {cycle} does not follow cycle {last}")));
            }
        }
        Ok(())
    }

    /// `ema <- alpha * fresh + (1 - alpha) * ema`; the first update copies
    /// `fresh` so early scores are not biased toward zero.
    pub fn ema_update(&mut self, fresh: &[ExampleScore], alpha: f64, cycle: usize) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config(format!("alpha {alpha} not in (0, 1]")));
        }
        self.check_next(fresh.len(), cycle)?;
        let first = self.updates == 0;
        for (e, s) in self.entries.iter_mut().zip(fresh) {
            e.chi_ema = if first { s.chi_nlu } else { alpha * s.chi_nlu + (1.0 - alpha) * e.chi_ema };
            e.chi_intent = s.chi_intent;
            e.chi_slot = s.chi_slot;
            e.chi_nlu = s.chi_nlu;
            e.history.push(HistoryEntry {
                cycle,
                chi_intent: s.chi_intent,
                chi_slot: s.chi_slot,
                chi_nlu: s.chi_nlu,
                chi_ema: e.chi_ema,
                selected: false,
            });
        }
        self.updates += 1;
        Ok(())
    }

    /// Records scores with an externally computed selection score in place
    /// of the EMA (the static baseline's model-averaged score).
    pub fn record(&mut self, fresh: &[ExampleScore], selection_score: &[f64], cycle: usize) -> Result<()> {
        self.check_next(fresh.len(), cycle)?;
        if selection_score.len() != fresh.len() {
            return Err(Error::input("selection scores do not cover every example"));
        }
        for ((e, s), &sel) in self.entries.iter_mut().zip(fresh).zip(selection_score) {
            *e = ScoreEntry {
                chi_intent: s.chi_intent,
                chi_slot: s.chi_slot,
                chi_nlu: s.chi_nlu,
                chi_ema: sel,
                history: std::mem::take(&mut e.history),
            };
            e.history.push(HistoryEntry {
                cycle,
                chi_intent: s.chi_intent,
                chi_slot: s.chi_slot,
                chi_nlu: s.chi_nlu,
                chi_ema: sel,
                selected: false,
            });
        }
        self.updates += 1;
        Ok(())
    }

    /// Flags `ids` as selected in the history entry for `cycle`.
    pub fn mark_selected(&mut self, cycle: usize, ids: &[usize]) -> Result<()> {
        for &id in ids {
            let entry = self
                .entries
                .get_mut(id)
                .ok_or_else(|| Error::input(format!("example id {id} out of range")))?;
            let h = entry
                .history
                .iter_mut()
                .rev()
                .find(|h| h.cycle == cycle)
                .ok_or_else(|| Error::input(format!("no history entry for cycle {cycle}")))?;
            h.selected = true;
        }
        Ok(())
    }

    /// One row per example per cycle, cycle-major.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n_cycles = self.entries.first().map_or(0, |e| e.history.len());
        for c in 0..n_cycles {
            for (id, e) in self.entries.iter().enumerate() {
                let h = e.history[c];
                w.serialize(CsvRow {
                    id,
                    cycle: h.cycle,
                    chi_intent: h.chi_intent,
                    chi_slot: h.chi_slot,
                    chi_nlu: h.chi_nlu,
                    chi_ema: h.chi_ema,
                    selected: h.selected,
                })?;
            }
        }
        if n_cycles == 0 {
            w.write_record(["id", "cycle", "chi_intent", "chi_slot", "chi_nlu", "chi_ema", "selected"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries: Vec<ScoreEntry> = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if row.id >= entries.len() {
                entries.resize(row.id + 1, ScoreEntry::default());
            }
            let e = &mut entries[row.id];
            if e.history.last().is_some_and(|h| h.cycle >= row.cycle) {
                return Err(Error::input(format!("score rows for id {} are not in cycle order", row.id)));
            }
            e.chi_intent = row.chi_intent;
            e.chi_slot = row.chi_slot;
            e.chi_nlu = row.chi_nlu;
            e.chi_ema = row.chi_ema;
            e.history.push(HistoryEntry {
                cycle: row.cycle,
                chi_intent: row.chi_intent,
                chi_slot: row.chi_slot,
                chi_nlu: row.chi_nlu,
                chi_ema: row.chi_ema,
                selected: row.selected,
            });
        }
        let updates = entries.first().map_or(0, |e| e.history.len());
        if entries.iter().any(|e| e.history.len() != updates) {
            return Err(Error::input("score CSV has an uneven number of cycles per example"));
        }
        Ok(Self { entries, updates })
    }
}

/// One forward pass over the whole dataset; parameters are never touched.
pub fn score_dataset(model: &JointClassifier, dataset: &Dataset) -> Result<Vec<ExampleScore>> {
    model.check_dims(dataset.vocab_size(), dataset.n_intents(), dataset.n_slots())?;
    let mut scores = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples().chunks(256) {
        let batch: Vec<_> = chunk.iter().collect();
        let pred = forward(model, &batch)?;
        for (p, ex) in pred.items.iter().zip(chunk) {
            let m = p.slot_probs.len();
            let chi_intent = el2n_intent(&p.intent_probs, ex.intent)?;
            let chi_slot = el2n_slot(&p.slot_probs, &ex.slots[..m], &ex.mask[..m])?;
            scores.push(ExampleScore::new(chi_intent, chi_slot));
        }
    }
    Ok(scores)
}

/// i.i.d. uniform `(0,1)` scores, fresh for every `cycle`.
pub fn random_scores(n: usize, seed: u64, cycle: usize) -> Vec<f64> {
    let mut rng = substream_rng(seed, Stream::RandomPruning, cycle as u64);
    (0..n).map(|_| rng.sample(Open01)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_examples() {
        assert_eq!(el2n_intent(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((el2n_intent(&[0.5, 0.5], 0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let v = el2n_intent(&[0.2, 0.5, 0.3], 1).unwrap();
        assert!((v - 0.38f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.61644).abs() < 1e-5);
        assert!(el2n_intent(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn slot_examples() {
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(el2n_slot(&perfect, &[0, 1], &[true, true]).unwrap(), 0.0);
        // Squared errors 0 and 0.5.
        let half = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        assert!((el2n_slot(&half, &[0, 1], &[true, true]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(el2n_slot(&half, &[0, 1], &[false, false]).unwrap(), 0.0);
        assert_eq!(el2n_slot(&[], &[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn joint_examples() {
        assert!((el2n_joint(0.6, 0.8) - 1.0).abs() < 1e-15);
        assert_eq!(el2n_joint(0.0, 0.7), 0.7);
        let v = el2n_joint(0.38f64.sqrt(), 0.5f64.sqrt());
        assert!((v - 0.88f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.93808).abs() < 1e-5);
    }

    fn nlu(x: f64) -> ExampleScore {
        ExampleScore::new(0.0, x)
    }

    #[test]
    fn ema_examples() {
        let mut book = ScoreBook::new(1);
        book.ema_update(&[nlu(1.0)], 0.8, 1).unwrap();
        assert_eq!(book.entries()[0].chi_ema, 1.0);
        book.ema_update(&[nlu(0.5)], 0.8, 2).unwrap();
        assert!((book.entries()[0].chi_ema - 0.6).abs() < 1e-15);

        let mut memoryless = ScoreBook::new(2);
        for (c, v) in [0.3, 0.9, 0.1].into_iter().enumerate() {
            memoryless.ema_update(&[nlu(v), nlu(2.0 * v)], 1.0, c + 1).unwrap();
            assert_eq!(memoryless.ema_scores(), vec![v, 2.0 * v]);
        }
    }

    #[test]
    fn ema_rejects_mismatch_and_stale_cycles() {
        let mut book = ScoreBook::new(2);
        assert!(book.ema_update(&[nlu(1.0)], 0.8, 1).is_err());
        book.ema_update(&[nlu(1.0), nlu(0.5)], 0.8, 3).unwrap();
        assert!(book.ema_update(&[nlu(1.0), nlu(0.5)], 0.8, 3).is_err());
        assert!(book.ema_update(&[nlu(1.0), nlu(0.5)], 0.0, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut book = ScoreBook::new(3);
        book.ema_update(&[ExampleScore::new(0.1, 0.2), ExampleScore::new(0.3, 0.0), nlu(0.7)], 0.8, 1).unwrap();
        book.mark_selected(1, &[0, 2]).unwrap();
        book.ema_update(&[ExampleScore::new(0.4, 0.2), nlu(0.3), nlu(0.1)], 0.8, 2).unwrap();
        book.mark_selected(2, &[1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        book.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,cycle,chi_intent,chi_slot,chi_nlu,chi_ema,selected\n"));
        assert_eq!(text.lines().count(), 7);
        assert_eq!(ScoreBook::read_csv(&path).unwrap(), book);
    }

    #[test]
    fn random_scores_examples() {
        let a = random_scores(500, 9, 1);
        assert_eq!(a, random_scores(500, 9, 1));
        assert_ne!(a, random_scores(500, 9, 2));
        assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
