//! Desk-scale joint intent/slot classifier with hand-derived gradients.
//!
//! Per token: embedding lookup, one tanh layer, then a layer norm without
//! affine parameters, which pins every hidden vector to norm `sqrt(d_hid)`.
//! The slot head reads each hidden vector; the intent head reads their mean
//! over real tokens.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Example;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub n_intents: usize,
    pub n_slots: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Embedding,
    HiddenWeight,
    HiddenBias,
    IntentWeight,
    IntentBias,
    SlotWeight,
    SlotBias,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::Embedding,
        Param::HiddenWeight,
        Param::HiddenBias,
        Param::IntentWeight,
        Param::IntentBias,
        Param::SlotWeight,
        Param::SlotBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Embedding => "embedding",
            Param::HiddenWeight => "hidden.weight",
            Param::HiddenBias => "hidden.bias",
            Param::IntentWeight => "intent_head.weight",
            Param::IntentBias => "intent_head.bias",
            Param::SlotWeight => "slot_head.weight",
            Param::SlotBias => "slot_head.bias",
        }
    }

    fn shape(self, d: &ModelDims) -> Vec<usize> {
        match self {
            Param::Embedding => vec![d.vocab_size, d.d_emb],
            Param::HiddenWeight => vec![d.d_emb, d.d_hid],
            Param::HiddenBias => vec![d.d_hid],
            Param::IntentWeight => vec![d.d_hid, d.n_intents],
            Param::IntentBias => vec![d.n_intents],
            Param::SlotWeight => vec![d.d_hid, d.n_slots],
            Param::SlotBias => vec![d.n_slots],
        }
    }

    fn is_bias(self) -> bool {
        matches!(self, Param::HiddenBias | Param::IntentBias | Param::SlotBias)
    }
}

/// Named row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// One tensor per [`Param`], in [`Param::ALL`] order. Used for parameters,
/// gradients and optimizer moments alike.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros(dims: &ModelDims) -> Self {
        let tensors = Param::ALL
            .iter()
            .map(|&p| {
                let shape = p.shape(dims);
                let n = shape.iter().product();
                Tensor { name: p.name().to_string(), shape, data: vec![0.0; n] }
            })
            .collect();
        Self { tensors }
    }

    pub fn get(&self, p: Param) -> &Tensor {
        &self.tensors[p as usize]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Tensor {
        &mut self.tensors[p as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape == b.shape && a.name == b.name)
    }

    fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Per-example forward output; rows cover real tokens only.
#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePrediction {
    pub id: usize,
    pub intent_probs: Vec<f64>,
    pub slot_probs: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub items: Vec<ExamplePrediction>,
}

/// Intermediate values of one example's forward pass, kept for backprop.
struct Cache {
    tokens: Vec<usize>,
    /// tanh outputs, `m × d_hid`.
    act: Vec<f64>,
    /// Layer-normalized outputs, `m × d_hid`.
    hidden: Vec<f64>,
    inv_std: Vec<f64>,
    pooled: Vec<f64>,
    intent_probs: Vec<f64>,
    /// `m × n_slots`.
    slot_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointClassifier {
    dims: ModelDims,
    params: ParamSet,
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

/// `out[k] = bias[k] + sum_j input[j] * weight[j, k]`.
fn affine(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    out.copy_from_slice(bias);
    let k = out.len();
    for (j, &x) in input.iter().enumerate() {
        let row = &weight[j * k..(j + 1) * k];
        out.iter_mut().zip(row).for_each(|(o, w)| *o += x * w);
    }
}

fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(f64::MIN_POSITIVE).ln()
}

impl JointClassifier {
    /// Gaussian `N(0, std^2)` weights, zero biases.
    pub fn init<R: Rng>(dims: ModelDims, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut params = ParamSet::zeros(&dims);
        for p in Param::ALL {
            if !p.is_bias() {
                params.get_mut(p).data.iter_mut().for_each(|x| *x = normal.sample(rng));
            }
        }
        Self { dims, params }
    }

    /// [`INIT_STD`] initialization from a ChaCha stream seeded with `seed`.
    pub fn seeded(dims: ModelDims, seed: u64) -> Self {
        Self::init(dims, INIT_STD, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn zero_heads(&mut self) {
        for p in [Param::IntentWeight, Param::IntentBias, Param::SlotWeight, Param::SlotBias] {
            self.params.get_mut(p).data.fill(0.0);
        }
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in self.params.tensors() {
            h.update(t.name.as_bytes());
            for x in &t.data {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn forward_example(&self, ex: &Example) -> Result<Cache> {
        let ModelDims { vocab_size, d_emb, d_hid, n_intents, n_slots } = self.dims;
        let m = ex.true_len();
        let tokens = ex.tokens[..m].to_vec();
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::input(format!("token {t} in example {} exceeds vocab size {vocab_size}", ex.id)));
        }
        let emb = &self.params.get(Param::Embedding).data;
        let w_hid = &self.params.get(Param::HiddenWeight).data;
        let b_hid = &self.params.get(Param::HiddenBias).data;

        let mut act = vec![0.0; m * d_hid];
        let mut hidden = vec![0.0; m * d_hid];
        let mut inv_std = vec![0.0; m];
        let mut pooled = vec![0.0; d_hid];
        for (pos, &tok) in tokens.iter().enumerate() {
            let a = &mut act[pos * d_hid..(pos + 1) * d_hid];
            affine(&emb[tok * d_emb..(tok + 1) * d_emb], w_hid, b_hid, a);
            a.iter_mut().for_each(|x| *x = x.tanh());
            let mean = a.iter().sum::<f64>() / d_hid as f64;
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d_hid as f64;
            if !(var > 0.0) {
                return Err(Error::Numeric {
                    param: "hidden".into(),
                    msg: format!("zero variance before layer norm (example {}, position {pos})", ex.id),
                });
            }
            let s = 1.0 / var.sqrt();
            inv_std[pos] = s;
            let h = &mut hidden[pos * d_hid..(pos + 1) * d_hid];
            for (hj, aj) in h.iter_mut().zip(a.iter()) {
                *hj = (aj - mean) * s;
            }
            pooled.iter_mut().zip(h.iter()).for_each(|(p, x)| *p += x);
        }
        if m > 0 {
            pooled.iter_mut().for_each(|p| *p /= m as f64);
        }

        let mut intent_probs = vec![0.0; n_intents];
        affine(
            &pooled,
            &self.params.get(Param::IntentWeight).data,
            &self.params.get(Param::IntentBias).data,
            &mut intent_probs,
        );
        softmax_in_place(&mut intent_probs);

        let w_slot = &self.params.get(Param::SlotWeight).data;
        let b_slot = &self.params.get(Param::SlotBias).data;
        let mut slot_probs = vec![0.0; m * n_slots];
        for pos in 0..m {
            let out = &mut slot_probs[pos * n_slots..(pos + 1) * n_slots];
            affine(&hidden[pos * d_hid..(pos + 1) * d_hid], w_slot, b_slot, out);
            softmax_in_place(out);
        }
        Ok(Cache { tokens, act, hidden, inv_std, pooled, intent_probs, slot_probs })
    }

    /// Accumulates the gradient of
    /// `intent_weight * CE_intent + slot_weight * sum_m CE_slot,m` into `g`.
    fn backward_example(&self, ex: &Example, c: &Cache, intent_weight: f64, slot_weight: f64, g: &mut ParamSet) {
        let ModelDims { d_emb, d_hid, n_intents, n_slots, .. } = self.dims;
        let m = c.tokens.len();
        let mut d_hidden = vec![0.0; m * d_hid];

        // Intent head: dL/dlogits = w * (p - y).
        let mut delta = c.intent_probs.clone();
        delta[ex.intent] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= intent_weight);
        {
            let gw = &mut g.get_mut(Param::IntentWeight).data;
            for (j, &h) in c.pooled.iter().enumerate() {
                for (k, &d) in delta.iter().enumerate() {
                    gw[j * n_intents + k] += h * d;
                }
            }
        }
        g.get_mut(Param::IntentBias).data.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
        if m > 0 {
            let w = &self.params.get(Param::IntentWeight).data;
            let mut d_pooled = vec![0.0; d_hid];
            for (j, dp) in d_pooled.iter_mut().enumerate() {
                *dp = w[j * n_intents..(j + 1) * n_intents].iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>()
                    / m as f64;
            }
            for pos in 0..m {
                d_hidden[pos * d_hid..(pos + 1) * d_hid].copy_from_slice(&d_pooled);
            }
        }

        // Slot head, per real token.
        let w_slot = &self.params.get(Param::SlotWeight).data;
        let mut d_slot = vec![0.0; n_slots];
        for pos in 0..m {
            d_slot.copy_from_slice(&c.slot_probs[pos * n_slots..(pos + 1) * n_slots]);
            d_slot[ex.slots[pos]] -= 1.0;
            d_slot.iter_mut().for_each(|d| *d *= slot_weight);
            let h = &c.hidden[pos * d_hid..(pos + 1) * d_hid];
            let gw = &mut g.get_mut(Param::SlotWeight).data;
            for (j, &hj) in h.iter().enumerate() {
                for (k, &d) in d_slot.iter().enumerate() {
                    gw[j * n_slots + k] += hj * d;
                }
            }
            g.get_mut(Param::SlotBias).data.iter_mut().zip(&d_slot).for_each(|(b, d)| *b += d);
            let dh = &mut d_hidden[pos * d_hid..(pos + 1) * d_hid];
            for (j, dhj) in dh.iter_mut().enumerate() {
                *dhj += w_slot[j * n_slots..(j + 1) * n_slots].iter().zip(&d_slot).map(|(a, b)| a * b).sum::<f64>();
            }
        }

        // Layer norm, tanh, hidden layer, embedding.
        let w_hid = &self.params.get(Param::HiddenWeight).data;
        let mut dz = vec![0.0; d_hid];
        for (pos, &tok) in c.tokens.iter().enumerate() {
            let h = &c.hidden[pos * d_hid..(pos + 1) * d_hid];
            let a = &c.act[pos * d_hid..(pos + 1) * d_hid];
            let dh = &d_hidden[pos * d_hid..(pos + 1) * d_hid];
            let mean_dh = dh.iter().sum::<f64>() / d_hid as f64;
            let mean_dh_h = dh.iter().zip(h).map(|(x, y)| x * y).sum::<f64>() / d_hid as f64;
            for j in 0..d_hid {
                let da = c.inv_std[pos] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                dz[j] = da * (1.0 - a[j] * a[j]);
            }
            g.get_mut(Param::HiddenBias).data.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            let e = self.params.get(Param::Embedding).data[tok * d_emb..(tok + 1) * d_emb].to_vec();
            {
                let gw = &mut g.get_mut(Param::HiddenWeight).data;
                for (i, &ei) in e.iter().enumerate() {
                    for (j, &d) in dz.iter().enumerate() {
                        gw[i * d_hid + j] += ei * d;
                    }
                }
            }
            let ge = &mut g.get_mut(Param::Embedding).data[tok * d_emb..(tok + 1) * d_emb];
            for (i, gi) in ge.iter_mut().enumerate() {
                *gi += w_hid[i * d_hid..(i + 1) * d_hid].iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    pub fn check_dims(&self, vocab_size: usize, n_intents: usize, n_slots: usize) -> Result<()> {
        let d = &self.dims;
        if d.vocab_size != vocab_size || d.n_intents != n_intents || d.n_slots != n_slots {
            return Err(Error::config(format!(
                "model (vocab {}, intents {}, slots {}) does not match data (vocab {vocab_size}, intents {n_intents}, slots {n_slots})",
                d.vocab_size, d.n_intents, d.n_slots
            )));
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if !model.params.same_shape(&ParamSet::zeros(&model.dims)) {
            return Err(Error::input(format!("checkpoint {} has inconsistent tensor shapes", path.display())));
        }
        Ok(model)
    }
}

/// Forward pass over a batch. Pure: parameters are only read.
pub fn forward(model: &JointClassifier, batch: &[&Example]) -> Result<Predictions> {
    let (d_hid, n_slots) = (model.dims.d_hid, model.dims.n_slots);
    let items = batch
        .iter()
        .map(|ex| {
            let c = model.forward_example(ex)?;
            Ok(ExamplePrediction {
                id: ex.id,
                intent_probs: c.intent_probs,
                slot_probs: c.slot_probs.chunks(n_slots).map(<[f64]>::to_vec).collect(),
                hidden: c.hidden.chunks(d_hid).map(<[f64]>::to_vec).collect(),
                pooled: c.pooled,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Predictions { items })
}

/// Batch mean of `lambda * CE_intent + (1 - lambda) * sum_m CE_slot,m` over real tokens.
pub fn loss(pred: &Predictions, batch: &[&Example], lambda: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .items
        .iter()
        .zip(batch)
        .map(|(p, ex)| {
            let slot: f64 = p.slot_probs.iter().zip(&ex.slots).map(|(probs, &y)| cross_entropy(probs, y)).sum();
            lambda * cross_entropy(&p.intent_probs, ex.intent) + (1.0 - lambda) * slot
        })
        .sum();
    total / batch.len() as f64
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn gradients(model: &JointClassifier, batch: &[&Example], lambda: f64) -> Result<ParamSet> {
    loss_and_gradients(model, batch, lambda).map(|(_, g)| g)
}

pub fn loss_and_gradients(model: &JointClassifier, batch: &[&Example], lambda: f64) -> Result<(f64, ParamSet)> {
    let mut grads = ParamSet::zeros(&model.dims);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let mut total = 0.0;
    for ex in batch {
        let c = model.forward_example(ex)?;
        let slot: f64 = (0..c.tokens.len())
            .map(|pos| {
                let n = model.dims.n_slots;
                cross_entropy(&c.slot_probs[pos * n..(pos + 1) * n], ex.slots[pos])
            })
            .sum();
        total += lambda * cross_entropy(&c.intent_probs, ex.intent) + (1.0 - lambda) * slot;
        model.backward_example(ex, &c, lambda, 1.0 - lambda, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

fn unweighted_gradients(model: &JointClassifier, ex: &Example) -> Result<(Cache, ParamSet)> {
    let c = model.forward_example(ex)?;
    let mut g = ParamSet::zeros(&model.dims);
    model.backward_example(ex, &c, 1.0, 1.0, &mut g);
    Ok((c, g))
}

/// Intent-head gradient of a single example's unweighted joint loss next to
/// the two factors of its outer-product form `(p - y) h_pooled^T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntentGradIdentity {
    pub grad_norm: f64,
    pub error_norm: f64,
    pub pooled_norm: f64,
}

impl IntentGradIdentity {
    pub fn residual(&self) -> f64 {
        (self.grad_norm - self.error_norm * self.pooled_norm).abs()
    }
}

pub fn intent_grad_identity(model: &JointClassifier, ex: &Example) -> Result<IntentGradIdentity> {
    let (c, g) = unweighted_gradients(model, ex)?;
    let mut err = c.intent_probs.clone();
    err[ex.intent] -= 1.0;
    Ok(IntentGradIdentity {
        grad_norm: g.get(Param::IntentWeight).frobenius_norm(),
        error_norm: err.iter().map(|x| x * x).sum::<f64>().sqrt(),
        pooled_norm: c.pooled.iter().map(|x| x * x).sum::<f64>().sqrt(),
    })
}

/// Slot-head gradient norm against its triangle-inequality bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// `||sum_m delta_m h_m^T||_F`, read off the analytic gradient.
    pub lhs: f64,
    /// `sum_m ||delta_m|| ||h_m||`.
    pub rhs: f64,
    /// `sqrt(M) sqrt(d_hid) sqrt(sum_m ||delta_m||^2)`, the bound after the
    /// p-norm step with every `||h_m|| = sqrt(d_hid)`.
    pub final_bound: f64,
    pub holds: bool,
}

pub fn last_layer_grad_bound_check(model: &JointClassifier, ex: &Example) -> Result<BoundReport> {
    let (c, g) = unweighted_gradients(model, ex)?;
    let (d_hid, n_slots) = (model.dims.d_hid, model.dims.n_slots);
    let m = c.tokens.len();
    let mut rhs = 0.0;
    let mut sq_err = 0.0;
    for pos in 0..m {
        let mut delta = c.slot_probs[pos * n_slots..(pos + 1) * n_slots].to_vec();
        delta[ex.slots[pos]] -= 1.0;
        let dn2: f64 = delta.iter().map(|x| x * x).sum();
        let hn: f64 = c.hidden[pos * d_hid..(pos + 1) * d_hid].iter().map(|x| x * x).sum::<f64>().sqrt();
        rhs += dn2.sqrt() * hn;
        sq_err += dn2;
    }
    let lhs = g.get(Param::SlotWeight).frobenius_norm();
    let final_bound = (m as f64).sqrt() * (d_hid as f64).sqrt() * sq_err.sqrt();
    Ok(BoundReport { lhs, rhs, final_bound, holds: lhs <= rhs + 1e-9 })
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: DEFAULT_LEARNING_RATE, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl OptimizerState {
    pub fn new(dims: &ModelDims, config: AdamConfig) -> Self {
        Self { config, step: 0, first: ParamSet::zeros(dims), second: ParamSet::zeros(dims) }
    }
}

/// Bias-corrected Adam update. No warm-up, no schedule, no weight decay.
pub fn adam_step(model: &mut JointClassifier, state: &mut OptimizerState, grads: &ParamSet) -> Result<()> {
    if !grads.same_shape(&model.params) || !state.first.same_shape(&model.params) {
        return Err(Error::input("gradient or optimizer shapes do not match the model"));
    }
    for t in grads.tensors() {
        if let Some(x) = t.data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric { param: t.name.clone(), msg: format!("non-finite gradient {x}") });
        }
    }
    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let tensors = model
        .params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut().iter_mut().zip(state.second.tensors_mut()));
    for ((param, grad), (m, v)) in tensors {
        for i in 0..param.data.len() {
            let g = grad.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            param.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
