//! Bag-of-words polarity classifiers: multinomial Naive Bayes with additive
//! smoothing and three-class logistic regression trained by plain gradient
//! descent.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Polarity, Sentence, Span};
use crate::seed::stage_rng;

pub const N_CLASSES: usize = 3;

/// Default context window, in tokens on each side of the aspect.
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SentimentError {
    #[error("empty training set")]
    EmptyTraining,
    #[error("empty batch")]
    EmptyBatch,
    #[error("smoothing alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("sentence {sentence_id}: span {span} does not fall on token boundaries")]
    SpanNotAligned { sentence_id: String, span: Span },
    #[error("feature index {index} outside vocabulary of size {size}")]
    FeatureOutOfRange { index: usize, size: usize },
}

/// Token ↔ index bijection in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I, T>(token_lists: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut v = Vocabulary::default();
        for list in token_lists {
            for tok in list {
                v.insert(tok);
            }
        }
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary::default();
        for t in &tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.index.get(tok) {
            return i;
        }
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn get(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        let n = tokens.len();
        let v = Vocabulary::from_tokens(tokens);
        if v.len() != n {
            return Err(serde::de::Error::custom("duplicate vocabulary entries"));
        }
        Ok(v)
    }
}

/// Sparse feature-index → count map. Zero counts are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureVector(BTreeMap<usize, u32>);

impl FeatureVector {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>, vocab: &Vocabulary) -> Self {
        let mut counts = BTreeMap::new();
        for idx in tokens.into_iter().filter_map(|t| vocab.get(t)) {
            *counts.entry(idx).or_insert(0) += 1;
        }
        FeatureVector(counts)
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        FeatureVector(counts.into_iter().filter(|&(_, c)| c > 0).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0.iter().map(|(&i, &c)| (i, c))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.keys().next_back().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: Polarity,
}

/// Tokens within `window` tokens of the aspect on each side, aspect tokens
/// included, each flagged with whether it lies inside the aspect span. The
/// whole sentence (no flags set) when `span` is `None`.
pub fn context_window(s: &Sentence, span: Option<Span>, window: usize) -> Result<Vec<(String, bool)>, SentimentError> {
    let tokens = tokenize(&s.text);
    let Some(span) = span else {
        return Ok(tokens.into_iter().map(|t| (t.text, false)).collect());
    };
    let misaligned = || SentimentError::SpanNotAligned { sentence_id: s.id.clone(), span };
    let first = tokens.iter().position(|t| t.span.start == span.start).ok_or_else(misaligned)?;
    let last = tokens.iter().position(|t| t.span.end == span.end).ok_or_else(misaligned)?;
    if last < first {
        return Err(misaligned());
    }
    let lo = first.saturating_sub(window);
    let hi = (last + window).min(tokens.len() - 1);
    Ok(tokens[lo..=hi].iter().enumerate().map(|(k, t)| (t.text.clone(), (first..=last).contains(&(lo + k)))).collect())
}

/// Token strings of [`context_window`].
pub fn context_tokens(s: &Sentence, span: Option<Span>, window: usize) -> Result<Vec<String>, SentimentError> {
    Ok(context_window(s, span, window)?.into_iter().map(|(t, _)| t).collect())
}

pub fn featurize(
    s: &Sentence,
    span: Option<Span>,
    window: usize,
    vocab: &Vocabulary,
) -> Result<FeatureVector, SentimentError> {
    Ok(FeatureVector::from_tokens(&context_tokens(s, span, window)?, vocab))
}

/// Argmax with ties going to the earlier class in `Polarity::ALL` order.
pub fn argmax(scores: &[f64; N_CLASSES]) -> Polarity {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    Polarity::ALL[best]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub polarity: Polarity,
    /// Log-domain joint scores for NB, probabilities for LR.
    pub scores: [f64; N_CLASSES],
}

pub trait PolarityModel {
    fn vocabulary(&self) -> &Vocabulary;
    fn predict(&self, f: &FeatureVector) -> Prediction;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub vocabulary: Vocabulary,
    pub alpha: f64,
    /// `-inf` for classes absent from training.
    #[serde(with = "log_prior_serde")]
    pub class_log_prior: [f64; N_CLASSES],
    /// `token_log_likelihood[t][c] = ln P(t | c)`.
    pub token_log_likelihood: Vec<[f64; N_CLASSES]>,
}

pub(crate) mod log_prior_serde {
    use super::N_CLASSES;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    // JSON has no -inf; absent classes are stored as null.
    pub fn serialize<S: Serializer>(v: &[f64; N_CLASSES], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; N_CLASSES], D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        if opt.len() != N_CLASSES {
            return Err(serde::de::Error::custom("expected 3 class priors"));
        }
        let mut out = [f64::NEG_INFINITY; N_CLASSES];
        for (o, v) in out.iter_mut().zip(opt) {
            if let Some(v) = v {
                *o = v;
            }
        }
        Ok(out)
    }
}

fn check_features(examples: &[LabeledExample], size: usize) -> Result<(), SentimentError> {
    for ex in examples {
        if let Some(index) = ex.features.max_index().filter(|&i| i >= size) {
            return Err(SentimentError::FeatureOutOfRange { index, size });
        }
    }
    Ok(())
}

/// Multinomial NB: `ln(N_c / N)` priors and
/// `ln((n_ct + alpha) / (n_c + alpha * V))` likelihoods.
pub fn train_nb(vocab: &Vocabulary, examples: &[LabeledExample], alpha: f64) -> Result<NbModel, SentimentError> {
    if examples.is_empty() {
        return Err(SentimentError::EmptyTraining);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SentimentError::InvalidAlpha(alpha));
    }
    let v = vocab.len();
    check_features(examples, v)?;
    let mut class_docs = [0usize; N_CLASSES];
    let mut class_tokens = [0u64; N_CLASSES];
    let mut counts = vec![[0u64; N_CLASSES]; v];
    for ex in examples {
        let c = ex.label.index();
        class_docs[c] += 1;
        for (i, n) in ex.features.iter() {
            counts[i][c] += n as u64;
            class_tokens[c] += n as u64;
        }
    }
    let n = examples.len() as f64;
    let class_log_prior = class_docs.map(|d| if d == 0 { f64::NEG_INFINITY } else { (d as f64 / n).ln() });
    let token_log_likelihood = counts
        .iter()
        .map(|row| {
            let mut out = [0.0; N_CLASSES];
            for c in 0..N_CLASSES {
                out[c] = ((row[c] as f64 + alpha) / (class_tokens[c] as f64 + alpha * v as f64)).ln();
            }
            out
        })
        .collect();
    Ok(NbModel { vocabulary: vocab.clone(), alpha, class_log_prior, token_log_likelihood })
}

impl PolarityModel for NbModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn predict(&self, f: &FeatureVector) -> Prediction {
        let mut scores = self.class_log_prior;
        for (i, n) in f.iter() {
            if let Some(ll) = self.token_log_likelihood.get(i) {
                for c in 0..N_CLASSES {
                    scores[c] += n as f64 * ll[c];
                }
            }
        }
        Prediction { polarity: argmax(&scores), scores }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub vocabulary: Vocabulary,
    /// Row-major `3 x V`.
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrGradient {
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

impl LrModel {
    pub fn zeros(vocab: &Vocabulary) -> Self {
        LrModel { vocabulary: vocab.clone(), weights: vec![0.0; N_CLASSES * vocab.len()], bias: [0.0; N_CLASSES] }
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.n_features() + feature]
    }

    pub fn logits(&self, f: &FeatureVector) -> [f64; N_CLASSES] {
        let v = self.n_features();
        let mut z = self.bias;
        for (i, n) in f.iter().filter(|&(i, _)| i < v) {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.weights[c * v + i] * n as f64;
            }
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

pub fn softmax3(z: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

impl PolarityModel for LrModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn predict(&self, f: &FeatureVector) -> Prediction {
        let p = softmax3(&self.logits(f));
        Prediction { polarity: argmax(&p), scores: p }
    }
}

/// Mean cross-entropy plus `(l2 / 2) * ||W||^2` (bias unregularized), with
/// its exact gradient.
pub fn lr_loss_grad(model: &LrModel, batch: &[LabeledExample], l2: f64) -> Result<(f64, LrGradient), SentimentError> {
    if batch.is_empty() {
        return Err(SentimentError::EmptyBatch);
    }
    let v = model.n_features();
    check_features(batch, v)?;
    let mut grad = LrGradient { weights: vec![0.0; N_CLASSES * v], bias: [0.0; N_CLASSES] };
    let mut loss = 0.0;
    for ex in batch {
        let z = model.logits(&ex.features);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let y = ex.label.index();
        loss += log_norm - z[y];
        for c in 0..N_CLASSES {
            let dz = (z[c] - log_norm).exp() - if c == y { 1.0 } else { 0.0 };
            grad.bias[c] += dz;
            for (i, n) in ex.features.iter() {
                grad.weights[c * v + i] += dz * n as f64;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    let mut sq = 0.0;
    for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
        *g = *g * scale + l2 * w;
        sq += w * w;
    }
    Ok((loss + 0.5 * l2 * sq, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper { lr: 0.5, epochs: 100, batch_size: 16, l2: 1e-3, seed: 0 }
    }
}

/// Minibatch gradient descent from zero weights. Example order is reshuffled
/// each epoch from one seeded stream. Returns the model and the full-data
/// loss after every epoch.
pub fn train_lr(
    vocab: &Vocabulary,
    examples: &[LabeledExample],
    hyper: &LrHyper,
) -> Result<(LrModel, Vec<f64>), SentimentError> {
    if examples.is_empty() {
        return Err(SentimentError::EmptyTraining);
    }
    if !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
        return Err(SentimentError::InvalidHyper(format!("lr = {}", hyper.lr)));
    }
    if hyper.batch_size == 0 {
        return Err(SentimentError::InvalidHyper("batch_size = 0".into()));
    }
    if !(hyper.l2 >= 0.0 && hyper.l2.is_finite()) {
        return Err(SentimentError::InvalidHyper(format!("l2 = {}", hyper.l2)));
    }
    check_features(examples, vocab.len())?;
    let mut model = LrModel::zeros(vocab);
    let mut rng = stage_rng(hyper.seed, "train_lr");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (_, g) = lr_loss_grad(&model, &batch, hyper.l2)?;
            for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
                *w -= hyper.lr * gw;
            }
            for (b, gb) in model.bias.iter_mut().zip(&g.bias) {
                *b -= hyper.lr * gb;
            }
        }
        trace.push(lr_loss_grad(&model, examples, hyper.l2)?.0);
    }
    Ok((model, trace))
}
