//! Small transformer encoder for per-aspect polarity: token, position and
//! segment embeddings, single-head scaled dot-product self-attention
//! layers with post-norm residual blocks and a ReLU feed-forward, and a
//! three-way head on the `[CLS]` position. Gradients are derived by hand
//! and checked against central finite differences by [`grad_check`].

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Polarity;
use crate::seed::stage_rng;
use crate::sentiment::{argmax, softmax3, N_CLASSES};

pub type Mat = DMatrix<f64>;

/// Token id reserved for `[CLS]`; every input starts with it.
pub const CLS_ID: usize = 0;
const LN_EPS: f64 = 1e-5;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("parameter file: {0}")]
    Persistence(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_k: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub d_ff: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, `d_model = 8`.
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig { d_model: 8, d_k: 8, n_layers: 2, max_len: 32, vocab_size, n_classes: N_CLASSES, d_ff: 16 }
    }

    pub fn with_dims(mut self, d_model: usize, n_layers: usize) -> Self {
        self.d_model = d_model;
        self.d_k = d_model;
        self.d_ff = 2 * d_model;
        self.n_layers = n_layers;
        self
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.d_model == 0 || self.n_layers == 0 || self.vocab_size == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive");
        }
        if self.d_k != self.d_model {
            return bad("single-head attention requires d_k == d_model");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if self.n_classes != N_CLASSES {
            return bad("n_classes must be 3");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub ln1_gain: Mat,
    pub ln1_bias: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub ln2_gain: Mat,
    pub ln2_bias: Mat,
}

const LAYER_TENSORS: [&str; 12] =
    ["w_q", "w_k", "w_v", "w_o", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain", "ln2_bias"];

impl LayerParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        LayerParams {
            w_q: Mat::zeros(d, d),
            w_k: Mat::zeros(d, d),
            w_v: Mat::zeros(d, d),
            w_o: Mat::zeros(d, d),
            ln1_gain: Mat::zeros(1, d),
            ln1_bias: Mat::zeros(1, d),
            w1: Mat::zeros(d, d_ff),
            b1: Mat::zeros(1, d_ff),
            w2: Mat::zeros(d_ff, d),
            b2: Mat::zeros(1, d),
            ln2_gain: Mat::zeros(1, d),
            ln2_bias: Mat::zeros(1, d),
        }
    }

    fn tensors(&self) -> [&Mat; 12] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat; 12] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// All learned tensors. The same type holds gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub token_emb: Mat,
    pub pos_emb: Mat,
    pub seg_emb: Mat,
    pub layers: Vec<LayerParams>,
    /// `d_model x 3`.
    pub head_w: Mat,
    pub head_b: Mat,
}

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            token_emb: Mat::zeros(cfg.vocab_size, cfg.d_model),
            pos_emb: Mat::zeros(cfg.max_len, cfg.d_model),
            seg_emb: Mat::zeros(2, cfg.d_model),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg.d_model, cfg.d_ff)).collect(),
            head_w: Mat::zeros(cfg.d_model, cfg.n_classes),
            head_b: Mat::zeros(1, cfg.n_classes),
        }
    }

    /// Uniform(-0.1, 0.1) draws for every weight and bias in tensor order;
    /// layer-norm gains start at 1 and layer-norm biases at 0.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut p = EncoderParams::zeros(cfg);
        let mut rng = stage_rng(seed, "encoder/init");
        for (name, t) in p.named_tensors_mut() {
            if name.ends_with("_gain") {
                t.fill(1.0);
            } else if !name.starts_with("layer") || !name.contains(".ln") {
                t.iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
            }
        }
        Ok(p)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["token_emb".to_string(), "pos_emb".into(), "seg_emb".into()];
        for l in 0..self.layers.len() {
            names.extend(LAYER_TENSORS.iter().map(|t| format!("layer{l}.{t}")));
        }
        names.push("head_w".into());
        names.push("head_b".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out = vec![&self.token_emb, &self.pos_emb, &self.seg_emb];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb, &mut self.seg_emb];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        self.tensor_names().into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self -= step * grad`.
    pub fn sub_scaled(&mut self, grad: &EncoderParams, step: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            *p -= g * step;
        }
    }

    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<(), EncoderError> {
        let want = EncoderParams::zeros(cfg);
        if self.layers.len() != want.layers.len() {
            return Err(EncoderError::Shape(format!("{} layers, config says {}", self.layers.len(), cfg.n_layers)));
        }
        for ((name, have), want) in self.tensor_names().iter().zip(self.tensors()).zip(want.tensors()) {
            if have.shape() != want.shape() {
                return Err(EncoderError::Shape(format!("{name}: {:?}, expected {:?}", have.shape(), want.shape())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInput {
    pub token_ids: Vec<usize>,
    /// 0 for review text, 1 for aspect-term positions.
    pub segment_ids: Vec<u8>,
}

impl EncoderInput {
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<(), EncoderError> {
        let n = self.token_ids.len();
        let bad = |m: String| Err(EncoderError::Input(m));
        if n == 0 || n > cfg.max_len {
            return bad(format!("length {n} outside 1..={}", cfg.max_len));
        }
        if self.segment_ids.len() != n {
            return bad(format!("{} segment ids for {n} tokens", self.segment_ids.len()));
        }
        if self.token_ids[0] != CLS_ID {
            return bad("position 0 must hold the [CLS] id".into());
        }
        if let Some(&t) = self.token_ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return bad(format!("token id {t} >= vocab size {}", cfg.vocab_size));
        }
        if self.segment_ids.iter().any(|&s| s > 1) {
            return bad("segment ids must be 0 or 1".into());
        }
        Ok(())
    }
}

fn row_softmax(scores: &Mat) -> Mat {
    let mut out = scores.clone();
    for mut row in out.row_iter_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    out
}

fn check_attention_shapes(q: &Mat, k: &Mat, v: &Mat) -> Result<(), EncoderError> {
    if q.ncols() == 0 {
        return Err(EncoderError::Shape("d_k must be positive".into()));
    }
    if q.ncols() != k.ncols() {
        return Err(EncoderError::Shape(format!("Q has {} columns, K has {}", q.ncols(), k.ncols())));
    }
    if k.nrows() != v.nrows() || k.nrows() == 0 {
        return Err(EncoderError::Shape(format!("K has {} rows, V has {}", k.nrows(), v.nrows())));
    }
    Ok(())
}

/// Row-softmax of `Q K^T / sqrt(d_k)`.
pub fn attention_weights(q: &Mat, k: &Mat) -> Result<Mat, EncoderError> {
    if q.ncols() == 0 || q.ncols() != k.ncols() {
        return Err(EncoderError::Shape(format!("Q has {} columns, K has {}", q.ncols(), k.ncols())));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    Ok(row_softmax(&((q * k.transpose()) * scale)))
}

/// Scaled dot-product attention, `softmax(Q K^T / sqrt(d_k)) V`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat, EncoderError> {
    check_attention_shapes(q, k, v)?;
    Ok(attention_weights(q, k)? * v)
}

struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, gain: &Mat, bias: &Mat) -> (Mat, LnCache) {
    let d = x.ncols();
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    let mut y = xhat.clone();
    for mut row in y.row_iter_mut() {
        for j in 0..d {
            row[j] = row[j] * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates into the gain/bias gradients.
fn layer_norm_backward(dy: &Mat, cache: &LnCache, gain: &Mat, dgain: &mut Mat, dbias: &mut Mat) -> Mat {
    let (n, d) = dy.shape();
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            dgain[j] += dy[(i, j)] * cache.xhat[(i, j)];
            dbias[j] += dy[(i, j)];
            dxhat[j] = dy[(i, j)] * gain[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = (0..d).map(|j| dxhat[j] * cache.xhat[(i, j)]).sum();
        for j in 0..d {
            dx[(i, j)] = cache.inv_std[i] / d as f64 * (d as f64 * dxhat[j] - sum - cache.xhat[(i, j)] * dot);
        }
    }
    dx
}

fn add_row(m: &mut Mat, row: &Mat) {
    for mut r in m.row_iter_mut() {
        r += row;
    }
}

fn sum_rows(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.ncols());
    for r in m.row_iter() {
        out += r;
    }
    out
}

struct LayerCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Mat,
    ctx: Mat,
    ln1: LnCache,
    h1: Mat,
    pre_act: Mat,
    act: Mat,
    ln2: LnCache,
}

pub struct ForwardPass {
    pub logits: [f64; N_CLASSES],
    /// Embedding output followed by every layer's output.
    pub hidden: Vec<Mat>,
    /// Attention probabilities per layer.
    pub attention: Vec<Mat>,
    caches: Vec<LayerCache>,
}

fn embed(p: &EncoderParams, x: &EncoderInput) -> Mat {
    let n = x.token_ids.len();
    let d = p.token_emb.ncols();
    let mut h = Mat::zeros(n, d);
    for (i, (&t, &s)) in x.token_ids.iter().zip(&x.segment_ids).enumerate() {
        for j in 0..d {
            h[(i, j)] = p.token_emb[(t, j)] + p.pos_emb[(i, j)] + p.seg_emb[(s as usize, j)];
        }
    }
    h
}

fn layer_forward(l: &LayerParams, x: Mat, d_k: usize) -> (Mat, LayerCache) {
    let q = &x * &l.w_q;
    let k = &x * &l.w_k;
    let v = &x * &l.w_v;
    let probs = row_softmax(&((&q * k.transpose()) * (1.0 / (d_k as f64).sqrt())));
    let ctx = &probs * &v;
    let r1 = &x + &ctx * &l.w_o;
    let (h1, ln1) = layer_norm(&r1, &l.ln1_gain, &l.ln1_bias);
    let mut pre_act = &h1 * &l.w1;
    add_row(&mut pre_act, &l.b1);
    let act = pre_act.map(|v| v.max(0.0));
    let mut ff = &act * &l.w2;
    add_row(&mut ff, &l.b2);
    let (y, ln2) = layer_norm(&(&h1 + ff), &l.ln2_gain, &l.ln2_bias);
    (y, LayerCache { x, q, k, v, probs, ctx, ln1, h1, pre_act, act, ln2 })
}

/// Full forward pass; logits come from the final hidden state at position 0.
pub fn encoder_forward(p: &EncoderParams, cfg: &EncoderConfig, x: &EncoderInput) -> Result<ForwardPass, EncoderError> {
    x.validate(cfg)?;
    let mut h = embed(p, x);
    let mut hidden = vec![h.clone()];
    let mut caches = Vec::with_capacity(p.layers.len());
    for l in &p.layers {
        let (y, cache) = layer_forward(l, h, cfg.d_k);
        hidden.push(y.clone());
        caches.push(cache);
        h = y;
    }
    let cls = h.rows(0, 1) * &p.head_w + &p.head_b;
    let logits = [cls[0], cls[1], cls[2]];
    let attention = caches.iter().map(|c| c.probs.clone()).collect();
    Ok(ForwardPass { logits, hidden, attention, caches })
}

pub fn predict(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    x: &EncoderInput,
) -> Result<(Polarity, [f64; N_CLASSES]), EncoderError> {
    let probs = softmax3(&encoder_forward(p, cfg, x)?.logits);
    Ok((argmax(&probs), probs))
}

fn cross_entropy(logits: &[f64; N_CLASSES], label: Polarity) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label.index()]
}

/// `cross_entropy - ln 3` without the cancellation: for small logits the
/// value is tiny, so it carries far less absolute rounding error than the
/// loss itself (which sits near ln 3). Finite differences use this form.
fn excess_cross_entropy(logits: &[f64; N_CLASSES], label: Polarity) -> f64 {
    if logits.iter().all(|z| z.abs() <= 1.0) {
        let s: f64 = logits.iter().map(|z| z.exp_m1()).sum();
        (s / N_CLASSES as f64).ln_1p() - logits[label.index()]
    } else {
        cross_entropy(logits, label) - (N_CLASSES as f64).ln()
    }
}

fn batch_excess_loss(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[(EncoderInput, Polarity)],
) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    for (x, y) in batch {
        total += excess_cross_entropy(&encoder_forward(p, cfg, x)?.logits, *y);
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy of the `[CLS]` logits over `batch`.
pub fn batch_loss(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[(EncoderInput, Polarity)],
) -> Result<f64, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyTraining);
    }
    let mut total = 0.0;
    for (x, y) in batch {
        total += cross_entropy(&encoder_forward(p, cfg, x)?.logits, *y);
    }
    Ok(total / batch.len() as f64)
}

fn layer_backward(l: &LayerParams, c: &LayerCache, dy: &Mat, g: &mut LayerParams, d_k: usize) -> Mat {
    let d_r2 = layer_norm_backward(dy, &c.ln2, &l.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    // feed-forward branch
    g.w2 += c.act.transpose() * &d_r2;
    g.b2 += sum_rows(&d_r2);
    let mut d_pre = &d_r2 * l.w2.transpose();
    d_pre.zip_apply(&c.pre_act, |dv, pre| {
        if pre <= 0.0 {
            *dv = 0.0
        }
    });
    g.w1 += c.h1.transpose() * &d_pre;
    g.b1 += sum_rows(&d_pre);
    let d_h1 = &d_r2 + &d_pre * l.w1.transpose();
    let d_r1 = layer_norm_backward(&d_h1, &c.ln1, &l.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    // attention branch
    g.w_o += c.ctx.transpose() * &d_r1;
    let d_ctx = &d_r1 * l.w_o.transpose();
    let d_probs = &d_ctx * c.v.transpose();
    let d_v = c.probs.transpose() * &d_ctx;
    let mut d_scores = Mat::zeros(c.probs.nrows(), c.probs.ncols());
    for i in 0..c.probs.nrows() {
        let dot: f64 = (0..c.probs.ncols()).map(|j| c.probs[(i, j)] * d_probs[(i, j)]).sum();
        for j in 0..c.probs.ncols() {
            d_scores[(i, j)] = c.probs[(i, j)] * (d_probs[(i, j)] - dot);
        }
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    let d_q = &d_scores * &c.k * scale;
    let d_k_mat = d_scores.transpose() * &c.q * scale;
    g.w_q += c.x.transpose() * &d_q;
    g.w_k += c.x.transpose() * &d_k_mat;
    g.w_v += c.x.transpose() * &d_v;
    d_r1 + d_q * l.w_q.transpose() + d_k_mat * l.w_k.transpose() + d_v * l.w_v.transpose()
}

/// Mean batch loss and its exact gradient by backpropagation.
pub fn loss_and_grad(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[(EncoderInput, Polarity)],
) -> Result<(f64, EncoderParams), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyTraining);
    }
    let mut grad = EncoderParams::zeros(cfg);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        let fwd = encoder_forward(p, cfg, x)?;
        total += cross_entropy(&fwd.logits, *y);
        let probs = softmax3(&fwd.logits);
        let mut d_logits = Mat::zeros(1, N_CLASSES);
        for c in 0..N_CLASSES {
            d_logits[c] = (probs[c] - if c == y.index() { 1.0 } else { 0.0 }) * scale;
        }
        let last = fwd.hidden.last().expect("at least the embedding output");
        grad.head_w += last.rows(0, 1).transpose() * &d_logits;
        grad.head_b += &d_logits;
        let mut dh = Mat::zeros(last.nrows(), last.ncols());
        dh.set_row(0, &(&d_logits * p.head_w.transpose()).row(0));
        for (li, l) in p.layers.iter().enumerate().rev() {
            dh = layer_backward(l, &fwd.caches[li], &dh, &mut grad.layers[li], cfg.d_k);
        }
        for (i, (&t, &s)) in x.token_ids.iter().zip(&x.segment_ids).enumerate() {
            for j in 0..cfg.d_model {
                grad.token_emb[(t, j)] += dh[(i, j)];
                grad.pos_emb[(i, j)] += dh[(i, j)];
                grad.seg_emb[(s as usize, j)] += dh[(i, j)];
            }
        }
    }
    Ok((total * scale, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderHyper {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EncoderHyper {
    fn default() -> Self {
        EncoderHyper { lr: 1.0, epochs: 200, seed: 0 }
    }
}

/// Step halvings tried per epoch before the update is skipped.
const MAX_HALVINGS: usize = 30;

/// Full-batch gradient descent from the seeded initialization. Each epoch
/// starts at `lr` and halves the step until the batch loss does not rise,
/// so the trace (loss at the start of every epoch) never increases.
pub fn train_encoder(
    examples: &[(EncoderInput, Polarity)],
    cfg: &EncoderConfig,
    hyper: &EncoderHyper,
) -> Result<(EncoderParams, Vec<f64>), EncoderError> {
    if examples.is_empty() {
        return Err(EncoderError::EmptyTraining);
    }
    if !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
        return Err(EncoderError::Hyper(format!("lr = {}", hyper.lr)));
    }
    cfg.validate()?;
    for (x, _) in examples {
        x.validate(cfg)?;
    }
    let mut params = EncoderParams::init(cfg, hyper.seed)?;
    let mut trace = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let (loss, grad) = loss_and_grad(&params, cfg, examples)?;
        trace.push(loss);
        let mut step = hyper.lr;
        for _ in 0..MAX_HALVINGS {
            let mut candidate = params.clone();
            candidate.sub_scaled(&grad, step);
            if batch_loss(&candidate, cfg, examples)? <= loss {
                params = candidate;
                break;
            }
            step *= 0.5;
        }
    }
    Ok((params, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSample {
    pub tensor: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradCheckSample>,
}

/// Gradients below this magnitude are compared on an absolute scale; the
/// finite-difference quotient carries roughly `1e-16 / epsilon` of rounding
/// noise, so tiny entries cannot be resolved relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub const GRAD_CHECK_SAMPLES: usize = 256;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Seeded batch of four random sequences for [`grad_check`].
pub fn grad_check_batch(cfg: &EncoderConfig, seed: u64) -> Vec<(EncoderInput, Polarity)> {
    let mut rng = stage_rng(seed, "encoder/gradcheck-batch");
    (0..4)
        .map(|_| {
            let n = rng.gen_range(2..=cfg.max_len.min(6));
            let mut token_ids = vec![CLS_ID];
            token_ids.extend((1..n).map(|_| rng.gen_range(1..cfg.vocab_size.max(2))));
            let segment_ids = (0..n).map(|i| if i > 0 && rng.gen_bool(0.3) { 1 } else { 0 }).collect();
            (EncoderInput { token_ids, segment_ids }, Polarity::ALL[rng.gen_range(0..N_CLASSES)])
        })
        .collect()
}

/// Compares the analytic gradient of the batch loss against central finite
/// differences on [`GRAD_CHECK_SAMPLES`] parameters: one from every tensor,
/// the rest drawn uniformly over all parameters.
pub fn grad_check(cfg: &EncoderConfig, seed: u64, epsilon: f64) -> Result<GradCheckReport, EncoderError> {
    if !(epsilon > 0.0) {
        return Err(EncoderError::Hyper(format!("epsilon = {epsilon}")));
    }
    let params = EncoderParams::init(cfg, seed)?;
    let batch = grad_check_batch(cfg, seed);
    let (_, grad) = loss_and_grad(&params, cfg, &batch)?;
    let names = params.tensor_names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = stage_rng(seed, "encoder/gradcheck-sample");
    let mut picks: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(t, &n)| (t, rng.gen_range(0..n))).collect();
    while picks.len() < GRAD_CHECK_SAMPLES {
        let mut flat = rng.gen_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        picks.push((t, flat));
    }
    let mut samples = Vec::with_capacity(picks.len());
    let mut probe = params.clone();
    for (t, flat) in picks {
        let original = params.tensors()[t][flat];
        probe.tensors_mut()[t][flat] = original + epsilon;
        let up = batch_excess_loss(&probe, cfg, &batch)?;
        probe.tensors_mut()[t][flat] = original - epsilon;
        let down = batch_excess_loss(&probe, cfg, &batch)?;
        probe.tensors_mut()[t][flat] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grad.tensors()[t][flat];
        let nrows = params.tensors()[t].nrows();
        samples.push(GradCheckSample {
            tensor: names[t].clone(),
            index: (flat % nrows, flat / nrows),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, samples })
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: [usize; 2],
    /// Row-major values.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    format_version: u32,
    config: EncoderConfig,
    tensors: Vec<TensorDoc>,
}

pub fn params_to_json(p: &EncoderParams, cfg: &EncoderConfig) -> serde_json::Value {
    let tensors = p
        .tensor_names()
        .into_iter()
        .zip(p.tensors())
        .map(|(name, t)| TensorDoc {
            name,
            shape: [t.nrows(), t.ncols()],
            data: t.transpose().iter().copied().collect(),
        })
        .collect();
    serde_json::to_value(ParamsDoc { format_version: FORMAT_VERSION, config: cfg.clone(), tensors })
        .expect("params serialize")
}

/// Loads parameters, checking the version and every tensor's name and shape
/// against the stored config.
pub fn params_from_json(v: serde_json::Value) -> Result<(EncoderParams, EncoderConfig), EncoderError> {
    let doc: ParamsDoc = serde_json::from_value(v).map_err(|e| EncoderError::Persistence(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(EncoderError::Persistence(format!("unsupported format_version {}", doc.format_version)));
    }
    doc.config.validate()?;
    let mut params = EncoderParams::zeros(&doc.config);
    let names = params.tensor_names();
    if doc.tensors.len() != names.len() {
        return Err(EncoderError::Persistence(format!("{} tensors, expected {}", doc.tensors.len(), names.len())));
    }
    for ((name, slot), t) in names.iter().zip(params.tensors_mut()).zip(doc.tensors) {
        if &t.name != name || t.shape != [slot.nrows(), slot.ncols()] || t.data.len() != slot.len() {
            return Err(EncoderError::Persistence(format!(
                "tensor {:?} {:?} does not match expected {name} {:?}",
                t.name,
                t.shape,
                slot.shape()
            )));
        }
        *slot = Mat::from_row_slice(t.shape[0], t.shape[1], &t.data);
    }
    if !params.is_finite() {
        return Err(EncoderError::Persistence("non-finite parameter".into()));
    }
    Ok((params, doc.config))
}
