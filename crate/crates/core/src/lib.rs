//! Cross-domain aspect-based sentiment analysis.
//!
//! The crate covers the whole pipeline: shared-task XML corpora
//! ([`corpus`]), a term lexicon with a cross-domain category map
//! ([`knowledge`]), aspect extraction backends ([`extract`]) including an
//! OpenAI-compatible chat client ([`llmclient`]), bag-of-words polarity
//! classifiers ([`sentiment`]), a small self-attention encoder
//! ([`encoder`]), and the train-on-A/test-on-B evaluation matrix ([`eval`]).

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod extract;
pub mod knowledge;
pub mod llmclient;
pub mod seed;
pub mod sentiment;

pub use corpus::{Category, Dataset, Domain, Opinion, Polarity, Sentence, Span};
pub use knowledge::KnowledgeSource;
