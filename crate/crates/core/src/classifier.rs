//! Polarity classifiers as the pipeline uses them: trained from a corpus's
//! gold opinions, queried with (sentence, aspect span), persisted as one
//! versioned JSON document.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{Dataset, Polarity, Sentence, Span};
use crate::encoder::{self, EncoderConfig, EncoderError, EncoderHyper, EncoderInput, EncoderParams, CLS_ID};
use crate::seed::derive_seed;
use crate::sentiment::{
    context_tokens, context_window, featurize, train_lr, train_nb, LabeledExample, LrHyper, LrModel, NbModel,
    PolarityModel, SentimentError, Vocabulary, DEFAULT_WINDOW,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const CLS_TOKEN: &str = "[cls]";
const UNK_TOKEN: &str = "[unk]";
const UNK_ID: usize = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("training corpus ({0}) has no opinions")]
    NoTrainingData(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierSpec {
    NaiveBayes { alpha: f64, window: usize },
    Logistic { hyper: LrHyper, window: usize },
    Encoder { d_model: usize, n_layers: usize, max_len: usize, lr: f64, epochs: usize, window: usize },
}

impl ClassifierSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierSpec::NaiveBayes { .. } => "nb",
            ClassifierSpec::Logistic { .. } => "lr",
            ClassifierSpec::Encoder { .. } => "encoder",
        }
    }

    /// Stable one-line description used in config digests.
    pub fn describe(&self) -> String {
        match self {
            ClassifierSpec::NaiveBayes { alpha, window } => format!("nb alpha={alpha} window={window}"),
            ClassifierSpec::Logistic { hyper, window } => format!(
                "lr lr={} epochs={} batch_size={} l2={} window={window}",
                hyper.lr, hyper.epochs, hyper.batch_size, hyper.l2
            ),
            ClassifierSpec::Encoder { d_model, n_layers, max_len, lr, epochs, window } => format!(
                "encoder d_model={d_model} n_layers={n_layers} max_len={max_len} lr={lr} epochs={epochs} window={window}"
            ),
        }
    }
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::NaiveBayes { alpha: 1.0, window: DEFAULT_WINDOW }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderClassifier {
    /// Index 0 is `[cls]`, index 1 is `[unk]`.
    pub vocabulary: Vocabulary,
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub window: usize,
}

impl EncoderClassifier {
    /// `[CLS]` followed by the context window, trimmed around the aspect to
    /// fit `max_len`. Aspect tokens get segment 1.
    pub fn input(&self, s: &Sentence, span: Option<Span>) -> Result<EncoderInput, ClassifierError> {
        encoder_input(&self.vocabulary, self.config.max_len, s, span, self.window)
    }
}

fn encoder_input(
    vocab: &Vocabulary,
    max_len: usize,
    s: &Sentence,
    span: Option<Span>,
    window: usize,
) -> Result<EncoderInput, ClassifierError> {
    let ctx = context_window(s, span, window)?;
    let budget = max_len - 1;
    let start = if ctx.len() > budget {
        let first_aspect = ctx.iter().position(|(_, a)| *a).unwrap_or(0);
        first_aspect.saturating_sub(budget / 2).min(ctx.len() - budget)
    } else {
        0
    };
    let mut token_ids = vec![CLS_ID];
    let mut segment_ids = vec![0];
    for (tok, aspect) in ctx.iter().skip(start).take(budget) {
        token_ids.push(vocab.get(tok).unwrap_or(UNK_ID));
        segment_ids.push(u8::from(*aspect));
    }
    Ok(EncoderInput { token_ids, segment_ids })
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedClassifier {
    NaiveBayes { model: NbModel, window: usize },
    Logistic { model: LrModel, window: usize },
    Encoder(EncoderClassifier),
}

fn training_opinions(ds: &Dataset) -> Vec<(&Sentence, Option<Span>, Polarity)> {
    ds.sentences().flat_map(|s| s.opinions.iter().map(move |o| (s, o.span, o.polarity))).collect()
}

fn bow_examples(ds: &Dataset, window: usize) -> Result<(Vocabulary, Vec<LabeledExample>), ClassifierError> {
    let items = training_opinions(ds);
    if items.is_empty() {
        return Err(ClassifierError::NoTrainingData(ds.domain.to_string()));
    }
    let contexts = items.iter().map(|(s, span, _)| context_tokens(s, *span, window)).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::build(contexts.iter());
    let examples = items
        .iter()
        .map(|(s, span, label)| Ok(LabeledExample { features: featurize(s, *span, window, &vocab)?, label: *label }))
        .collect::<Result<Vec<_>, SentimentError>>()?;
    Ok((vocab, examples))
}

impl TrainedClassifier {
    /// Trains on every gold opinion of `ds`. Implicit opinions use the whole
    /// sentence as context.
    pub fn train(spec: &ClassifierSpec, ds: &Dataset, seed: u64) -> Result<Self, ClassifierError> {
        match spec {
            ClassifierSpec::NaiveBayes { alpha, window } => {
                let (vocab, examples) = bow_examples(ds, *window)?;
                Ok(TrainedClassifier::NaiveBayes { model: train_nb(&vocab, &examples, *alpha)?, window: *window })
            }
            ClassifierSpec::Logistic { hyper, window } => {
                let (vocab, examples) = bow_examples(ds, *window)?;
                let hyper = LrHyper { seed: derive_seed(seed, "lr"), ..hyper.clone() };
                let (model, _) = train_lr(&vocab, &examples, &hyper)?;
                Ok(TrainedClassifier::Logistic { model, window: *window })
            }
            ClassifierSpec::Encoder { d_model, n_layers, max_len, lr, epochs, window } => {
                let items = training_opinions(ds);
                if items.is_empty() {
                    return Err(ClassifierError::NoTrainingData(ds.domain.to_string()));
                }
                let contexts = items
                    .iter()
                    .map(|(s, span, _)| context_tokens(s, *span, *window))
                    .collect::<Result<Vec<_>, _>>()?;
                let reserved = vec![CLS_TOKEN.to_string(), UNK_TOKEN.to_string()];
                let vocab = Vocabulary::build(std::iter::once(&reserved).chain(contexts.iter()));
                let config = EncoderConfig { max_len: *max_len, ..EncoderConfig::new(vocab.len()) }
                    .with_dims(*d_model, *n_layers);
                config.validate()?;
                let examples = items
                    .iter()
                    .map(|(s, span, label)| Ok((encoder_input(&vocab, *max_len, s, *span, *window)?, *label)))
                    .collect::<Result<Vec<_>, ClassifierError>>()?;
                let hyper = EncoderHyper { lr: *lr, epochs: *epochs, seed: derive_seed(seed, "encoder") };
                let (params, _) = encoder::train_encoder(&examples, &config, &hyper)?;
                Ok(TrainedClassifier::Encoder(EncoderClassifier { vocabulary: vocab, config, params, window: *window }))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TrainedClassifier::NaiveBayes { .. } => "nb",
            TrainedClassifier::Logistic { .. } => "lr",
            TrainedClassifier::Encoder(_) => "encoder",
        }
    }

    pub fn predict(&self, s: &Sentence, span: Option<Span>) -> Result<Polarity, ClassifierError> {
        Ok(match self {
            TrainedClassifier::NaiveBayes { model, window } => {
                model.predict(&featurize(s, span, *window, &model.vocabulary)?).polarity
            }
            TrainedClassifier::Logistic { model, window } => {
                model.predict(&featurize(s, span, *window, &model.vocabulary)?).polarity
            }
            TrainedClassifier::Encoder(enc) => encoder::predict(&enc.params, &enc.config, &enc.input(s, span)?)?.0,
        })
    }

    /// `{format_version, model_kind, vocabulary, parameters}`.
    pub fn to_json(&self) -> Value {
        let (vocabulary, parameters) = match self {
            TrainedClassifier::NaiveBayes { model, window } => (
                &model.vocabulary,
                json!({
                    "alpha": model.alpha,
                    "window": window,
                    "class_log_prior": serde_json::to_value(NbPriors(model.class_log_prior)).expect("priors"),
                    "token_log_likelihood": model.token_log_likelihood,
                }),
            ),
            TrainedClassifier::Logistic { model, window } => {
                (&model.vocabulary, json!({ "window": window, "weights": model.weights, "bias": model.bias }))
            }
            TrainedClassifier::Encoder(enc) => (
                &enc.vocabulary,
                json!({ "window": enc.window, "encoder": encoder::params_to_json(&enc.params, &enc.config) }),
            ),
        };
        json!({
            "format_version": MODEL_FORMAT_VERSION,
            "model_kind": self.kind(),
            "vocabulary": vocabulary,
            "parameters": parameters,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let bad = |m: String| ClassifierError::Format(m);
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", doc.format_version)));
        }
        let window =
            doc.parameters.get("window").and_then(Value::as_u64).ok_or_else(|| bad("missing window".into()))? as usize;
        let v = doc.vocabulary.len();
        match doc.model_kind.as_str() {
            "nb" => {
                let p: NbParams = serde_json::from_value(doc.parameters).map_err(|e| bad(e.to_string()))?;
                if p.token_log_likelihood.len() != v {
                    return Err(bad(format!("{} likelihood rows for vocabulary of {v}", p.token_log_likelihood.len())));
                }
                let model = NbModel {
                    vocabulary: doc.vocabulary,
                    alpha: p.alpha,
                    class_log_prior: p.class_log_prior.0,
                    token_log_likelihood: p.token_log_likelihood,
                };
                Ok(TrainedClassifier::NaiveBayes { model, window })
            }
            "lr" => {
                let p: LrParams = serde_json::from_value(doc.parameters).map_err(|e| bad(e.to_string()))?;
                if p.weights.len() != 3 * v {
                    return Err(bad(format!("{} weights for vocabulary of {v}", p.weights.len())));
                }
                let model = LrModel { vocabulary: doc.vocabulary, weights: p.weights, bias: p.bias };
                if !model.is_finite() {
                    return Err(bad("non-finite weight".into()));
                }
                Ok(TrainedClassifier::Logistic { model, window })
            }
            "encoder" => {
                let raw = doc.parameters.get("encoder").cloned().ok_or_else(|| bad("missing encoder".into()))?;
                let (params, config) = encoder::params_from_json(raw)?;
                if config.vocab_size != v {
                    return Err(bad(format!("encoder vocab {} but vocabulary has {v}", config.vocab_size)));
                }
                Ok(TrainedClassifier::Encoder(EncoderClassifier { vocabulary: doc.vocabulary, config, params, window }))
            }
            other => Err(bad(format!("unknown model_kind {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct ModelDoc {
    format_version: u32,
    model_kind: String,
    vocabulary: Vocabulary,
    parameters: Value,
}

/// Class priors with `-inf` written as `null`.
#[derive(Serialize, Deserialize)]
struct NbPriors(#[serde(with = "crate::sentiment::log_prior_serde")] [f64; 3]);

#[derive(Deserialize)]
struct NbParams {
    alpha: f64,
    class_log_prior: NbPriors,
    token_log_likelihood: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
struct LrParams {
    weights: Vec<f64>,
    bias: [f64; 3],
}
