//! Analytic training-time model for periodic pruning and the timing hooks
//! that feed it.
//!
//! Total time splits into the initial full-set epochs, the pruned epochs and
//! one full forward pass per pruning cycle:
//!
//! ```text
//! time = E B dt_step - (E - tau) B dt_step rho + floor((E - tau) / T) dt_forward
//! ```
//!
//! Setting this below the unpruned `E B dt_step` gives the smallest cycle
//! length that still saves time, `T_min = dt_forward / (dt_step B rho)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curriculum::RunResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds per training mini-batch.
    pub dt_step: f64,
    /// Seconds per forward pass over the whole training set.
    pub dt_forward: f64,
    /// Training steps per full-set epoch.
    #[serde(rename = "B")]
    pub steps_per_epoch: usize,
}

impl CostModel {
    pub fn new(dt_step: f64, dt_forward: f64, steps_per_epoch: usize) -> Result<Self> {
        let c = Self { dt_step, dt_forward, steps_per_epoch };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_step > 0.0 && self.dt_step.is_finite()) {
            return Err(Error::config(format!("dt_step must be positive, got {}", self.dt_step)));
        }
        if !(self.dt_forward >= 0.0 && self.dt_forward.is_finite()) {
            return Err(Error::config(format!("dt_forward must be nonnegative, got {}", self.dt_forward)));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::config("B must be at least 1"));
        }
        Ok(())
    }
}

/// Number of scoring cycles, `floor((E - tau) / T)`.
pub fn cycle_count(epochs: usize, tau: usize, cycle: usize) -> usize {
    assert!(cycle >= 1, "cycle length must be at least 1");
    epochs.saturating_sub(tau) / cycle
}

pub fn predict_total_time(cost: &CostModel, epochs: usize, tau: usize, cycle: usize, rho: f64) -> f64 {
    let b = cost.steps_per_epoch as f64;
    let (e, t0) = (epochs as f64, tau as f64);
    e * b * cost.dt_step - (e - t0) * b * cost.dt_step * rho + cycle_count(epochs, tau, cycle) as f64 * cost.dt_forward
}

pub fn baseline_time(cost: &CostModel, epochs: usize) -> f64 {
    epochs as f64 * cost.steps_per_epoch as f64 * cost.dt_step
}

/// Smallest cycle length (in epochs) for which pruning at `rho` saves time.
pub fn min_cycle(cost: &CostModel, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho = {rho}: no pruning, no possible saving")));
    }
    Ok(cost.dt_forward / (cost.dt_step * cost.steps_per_epoch as f64 * rho))
}

/// Wall-clock samples gathered on the training thread.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLog {
    pub step_secs: Vec<f64>,
    pub forward_secs: Vec<f64>,
    /// Total seconds spent training auxiliary scoring models.
    pub overhead_secs: f64,
}

impl TimingLog {
    pub fn time_step<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.step_secs.push(start.elapsed().as_secs_f64());
        out
    }

    pub fn time_forward<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.forward_secs.push(start.elapsed().as_secs_f64());
        out
    }

    pub fn total_secs(&self) -> f64 {
        self.step_secs.iter().sum::<f64>() + self.forward_secs.iter().sum::<f64>() + self.overhead_secs
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Medians of recorded step and forward-pass times. `dt_forward` is 0 when
/// the run never scored.
pub fn cost_from_timing(timing: &TimingLog, steps_per_epoch: usize) -> Result<CostModel> {
    let dt_step = median(&timing.step_secs).ok_or_else(|| Error::Measurement("no step timings recorded".into()))?;
    let dt_forward = median(&timing.forward_secs).unwrap_or(0.0);
    if steps_per_epoch == 0 {
        return Err(Error::Measurement("B = 0".into()));
    }
    // A step can finish inside the clock's resolution; keep the model valid.
    Ok(CostModel { dt_step: dt_step.max(f64::MIN_POSITIVE), dt_forward, steps_per_epoch })
}

pub fn measure_cost(run: &RunResult) -> Result<CostModel> {
    cost_from_timing(&run.timing, run.steps_per_epoch)
}
