//! Aspect extraction backends: lexicon matching, an LLM endpoint, and a
//! fixture-backed mock for hermetic pipeline runs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{slice_chars, tokenize, Category, Dataset, Domain, Polarity, Sentence, Span};
use crate::knowledge::KnowledgeSource;
use crate::llmclient::{parse_extraction_payload, ChatClient, LlmError, LlmRequest, Message};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("mock fixture, sentence {sentence_id}: {reason}")]
    Fixture { sentence_id: String, reason: String },
    #[error("mock fixture is not valid JSON: {0}")]
    FixtureJson(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectPrediction {
    pub term: String,
    #[serde(default)]
    pub span: Option<Span>,
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub polarity: Option<Polarity>,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl AspectPrediction {
    /// True when the span, if any, slices `text` to the term (ignoring case).
    pub fn span_matches(&self, text: &str) -> bool {
        match self.span {
            None => true,
            Some(span) => {
                span.is_valid_for(text.chars().count())
                    && slice_chars(text, span).to_lowercase() == self.term.to_lowercase()
            }
        }
    }
}

pub trait ExtractionBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Everything that can change this backend's output, as stable text.
    fn fingerprint(&self) -> String {
        self.name().to_string()
    }

    fn extract(
        &self,
        sentence: &Sentence,
        ks: &KnowledgeSource,
        domain: &Domain,
    ) -> Result<Vec<AspectPrediction>, ExtractError>;
}

/// First case-insensitive occurrence of `term` as a whole-token sequence.
pub fn align_span(sentence_text: &str, term: &str) -> Option<Span> {
    let term = term.trim();
    let needle: Vec<String> = tokenize(term).into_iter().map(|t| t.text).collect();
    if needle.is_empty() {
        return None;
    }
    let tokens = tokenize(sentence_text);
    let wanted = term.to_lowercase();
    tokens.windows(needle.len()).find_map(|w| {
        if !w.iter().zip(&needle).all(|(t, n)| t.text == *n) {
            return None;
        }
        let span = Span::new(w[0].span.start, w[w.len() - 1].span.end);
        (slice_chars(sentence_text, span).to_lowercase() == wanted).then_some(span)
    })
}

pub const DEFAULT_MAX_NGRAM: usize = 4;

/// Left-to-right, longest-match-first lexicon scan over token n-grams.
pub fn extract_lexicon(s: &Sentence, ks: &KnowledgeSource, domain: &Domain, max_ngram: usize) -> Vec<AspectPrediction> {
    let tokens = tokenize(&s.text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = max_ngram.min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|n| {
            let span = Span::new(tokens[i].span.start, tokens[i + n - 1].span.end);
            let surface = slice_chars(&s.text, span);
            ks.resolve_term(surface, domain).map(|cat| (n, span, surface, cat))
        });
        match hit {
            Some((n, span, surface, cat)) => {
                out.push(AspectPrediction {
                    term: surface.to_string(),
                    span: Some(span),
                    category: Some(cat.clone()),
                    polarity: None,
                    confidence: 1.0,
                });
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct LexiconExtractor {
    pub max_ngram: usize,
}

impl Default for LexiconExtractor {
    fn default() -> Self {
        LexiconExtractor { max_ngram: DEFAULT_MAX_NGRAM }
    }
}

impl ExtractionBackend for LexiconExtractor {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn fingerprint(&self) -> String {
        format!("lexicon max_ngram={}", self.max_ngram)
    }

    fn extract(&self, s: &Sentence, ks: &KnowledgeSource, d: &Domain) -> Result<Vec<AspectPrediction>, ExtractError> {
        Ok(extract_lexicon(s, ks, d, self.max_ngram))
    }
}

const PLACEHOLDERS: [&str; 3] = ["sentence", "domain", "knowledge"];

pub const DEFAULT_TEMPLATE: &str = "\
You extract aspects from {{domain}} reviews.
Known aspect terms for this domain, with their categories:
{{knowledge}}

Sentence: {{sentence}}

Answer with a JSON array only. Each element must be an object with exactly the
string fields \"term\" (copied verbatim from the sentence), \"category\"
(ENTITY#ATTRIBUTE) and \"polarity\" (positive, negative or neutral).
Answer [] when the sentence names no aspect.
";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    raw: String,
}

impl PromptTemplate {
    /// Rejects unknown or unterminated `{{...}}` placeholders.
    pub fn parse(raw: &str) -> Result<Self, ExtractError> {
        let mut rest = raw;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close =
                after.find("}}").ok_or_else(|| ExtractError::Template("unterminated `{{` placeholder".into()))?;
            let name = after[..close].trim();
            if !PLACEHOLDERS.contains(&name) {
                return Err(ExtractError::Template(format!("unknown placeholder {{{{{name}}}}}")));
            }
            rest = &after[close + 2..];
        }
        Ok(PromptTemplate { raw: raw.to_string() })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn render(&self, sentence: &str, domain: &Domain, knowledge: &str) -> String {
        let mut out = String::with_capacity(self.raw.len() + sentence.len() + knowledge.len());
        let mut rest = self.raw.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").expect("validated at parse");
            match after[..close].trim() {
                "sentence" => out.push_str(sentence),
                "domain" => out.push_str(domain.name()),
                _ => out.push_str(knowledge),
            }
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

/// `{{knowledge}}` text: one `term => CATEGORY` line per lexicon entry of the domain.
pub fn knowledge_block(ks: &KnowledgeSource, domain: &Domain) -> String {
    ks.terms_in(domain).map(|(t, c)| format!("{t} => {c}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmSettings {
    pub endpoint: String,
    pub model: String,
    pub max_tokens: u32,
}

/// Builds the single temperature-0 request for one sentence.
pub fn extraction_request(
    s: &Sentence,
    ks: &KnowledgeSource,
    d: &Domain,
    tmpl: &PromptTemplate,
    settings: &LlmSettings,
) -> LlmRequest {
    LlmRequest {
        endpoint: settings.endpoint.clone(),
        model: settings.model.clone(),
        messages: vec![Message::user(tmpl.render(&s.text, d, &knowledge_block(ks, d)))],
        temperature: 0.0,
        max_tokens: settings.max_tokens,
    }
}

pub fn extract_llm(
    s: &Sentence,
    ks: &KnowledgeSource,
    d: &Domain,
    tmpl: &PromptTemplate,
    settings: &LlmSettings,
    client: &dyn ChatClient,
) -> Result<Vec<AspectPrediction>, ExtractError> {
    let resp = client.complete(&extraction_request(s, ks, d, tmpl, settings))?;
    let records = parse_extraction_payload(&resp.text)?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let term = rec.term.trim().to_string();
        if term.is_empty() {
            log::warn!("sentence {}: dropping record with empty term", s.id);
            continue;
        }
        let category = match rec.category.parse::<Category>() {
            Ok(c) => Some(c),
            Err(_) => {
                log::warn!("sentence {}: dropping malformed category {:?}", s.id, rec.category);
                None
            }
        };
        let polarity = match rec.polarity.parse::<Polarity>() {
            Ok(p) => Some(p),
            Err(_) => {
                log::warn!("sentence {}: dropping unknown polarity {:?}", s.id, rec.polarity);
                None
            }
        };
        let span = align_span(&s.text, &term);
        out.push(AspectPrediction { term, span, category, polarity, confidence: 1.0 });
    }
    Ok(out)
}

pub struct LlmExtractor {
    pub client: Arc<dyn ChatClient>,
    pub template: PromptTemplate,
    pub settings: LlmSettings,
}

impl ExtractionBackend for LlmExtractor {
    fn name(&self) -> &str {
        "llm"
    }

    fn fingerprint(&self) -> String {
        format!("llm model={} max_tokens={}\n{}", self.settings.model, self.settings.max_tokens, self.template.raw())
    }

    fn extract(&self, s: &Sentence, ks: &KnowledgeSource, d: &Domain) -> Result<Vec<AspectPrediction>, ExtractError> {
        extract_llm(s, ks, d, &self.template, &self.settings, self.client.as_ref())
    }
}

/// Fixture entry verbatim, or nothing. A span that no longer slices to the
/// term (the sentence was rewritten, e.g. masked) is re-aligned by term.
pub fn extract_mock(s: &Sentence, fixture: &BTreeMap<String, Vec<AspectPrediction>>) -> Vec<AspectPrediction> {
    let Some(entries) = fixture.get(&s.id) else {
        return Vec::new();
    };
    entries
        .iter()
        .map(|p| {
            if p.span_matches(&s.text) {
                p.clone()
            } else {
                AspectPrediction { span: align_span(&s.text, &p.term), ..p.clone() }
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct MockExtractor {
    fixture: BTreeMap<String, Vec<AspectPrediction>>,
}

impl MockExtractor {
    /// Validates every entry whose sentence appears in `corpora`.
    pub fn new(fixture: BTreeMap<String, Vec<AspectPrediction>>, corpora: &[&Dataset]) -> Result<Self, ExtractError> {
        let texts: BTreeMap<&str, &str> =
            corpora.iter().flat_map(|ds| ds.sentences()).map(|s| (s.id.as_str(), s.text.as_str())).collect();
        for (sid, preds) in &fixture {
            for p in preds {
                let bad = |reason: String| ExtractError::Fixture { sentence_id: sid.clone(), reason };
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(bad(format!("confidence {} outside [0, 1]", p.confidence)));
                }
                if let Some(text) = texts.get(sid.as_str()) {
                    if !p.span_matches(text) {
                        return Err(bad(format!("span {:?} does not slice to {:?}", p.span, p.term)));
                    }
                }
            }
        }
        Ok(MockExtractor { fixture })
    }

    /// Reads `{"sentence-id": [prediction, ...], ...}`.
    pub fn from_json(text: &str, corpora: &[&Dataset]) -> Result<Self, ExtractError> {
        let fixture = serde_json::from_str(text).map_err(|e| ExtractError::FixtureJson(e.to_string()))?;
        MockExtractor::new(fixture, corpora)
    }
}

impl ExtractionBackend for MockExtractor {
    fn name(&self) -> &str {
        "mock"
    }

    fn fingerprint(&self) -> String {
        format!("mock {}", serde_json::to_string(&self.fixture).expect("fixture serializes"))
    }

    fn extract(&self, s: &Sentence, _: &KnowledgeSource, _: &Domain) -> Result<Vec<AspectPrediction>, ExtractError> {
        Ok(extract_mock(s, &self.fixture))
    }
}
