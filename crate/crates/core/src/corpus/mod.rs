//! Review corpora with character-offset aspect annotations.
//!
//! Offsets everywhere in this module count Unicode scalar values, not bytes,
//! matching the `from`/`to` convention of the shared-task XML files.

mod edit;
mod tokenize;
mod transform;
mod xml;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use tokenize::{tokenize, Token, MASK_LITERAL};
pub use transform::{augment, mask_tokens, split};
pub use xml::{parse_semeval, serialize_semeval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("invalid document structure: {0}")]
    Structure(String),
    #[error("sentence {sentence_id}: {reason}")]
    Sentence { sentence_id: String, reason: String },
    #[error("duplicate review id {0:?}")]
    DuplicateReview(String),
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("train fraction {0} outside (0, 1)")]
    InvalidTrainFraction(f64),
    #[error("split needs at least 2 reviews, got {0}")]
    TooFewReviews(usize),
    #[error("invalid category {0:?}: expected ENTITY#ATTRIBUTE")]
    InvalidCategory(String),
    #[error("unknown polarity {0:?}")]
    InvalidPolarity(String),
    #[error("invalid domain name {0:?}")]
    InvalidDomain(String),
}

impl CorpusError {
    pub(crate) fn sentence(id: &str, reason: impl Into<String>) -> Self {
        CorpusError::Sentence { sentence_id: id.to_string(), reason: reason.into() }
    }
}

/// Three-way sentiment label. The declaration order is also the argmax
/// tie-break order used by every classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Polarity> {
        Polarity::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(CorpusError::InvalidPolarity(other.to_string())),
        }
    }
}

/// `ENTITY#ATTRIBUTE` aspect category.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category {
    entity: String,
    attribute: String,
}

fn valid_category_part(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_uppercase() || c == '_')
}

impl Category {
    pub fn new(entity: &str, attribute: &str) -> Result<Self, CorpusError> {
        if valid_category_part(entity) && valid_category_part(attribute) {
            Ok(Category { entity: entity.to_string(), attribute: attribute.to_string() })
        } else {
            Err(CorpusError::InvalidCategory(format!("{entity}#{attribute}")))
        }
    }

    pub fn entity(&self) -> &str {
        &self.entity
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }
}

impl FromStr for Category {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('#');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(e), Some(a), None) => Category::new(e, a).map_err(|_| CorpusError::InvalidCategory(s.to_string())),
            _ => Err(CorpusError::InvalidCategory(s.to_string())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.entity, self.attribute)
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open character range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Checks `0 <= start < end <= text_len`.
    pub fn is_valid_for(&self, text_len: usize) -> bool {
        self.start < self.end && self.end <= text_len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

fn byte_offset(text: &str, char_idx: usize) -> usize {
    text.char_indices().nth(char_idx).map(|(b, _)| b).unwrap_or(text.len())
}

/// Slices `text` by character offsets. Out-of-range offsets are clamped.
pub fn slice_chars(text: &str, span: Span) -> &str {
    let start = byte_offset(text, span.start);
    let end = byte_offset(text, span.end.max(span.start));
    &text[start..end]
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Laptop,
    Restaurant,
    Other(String),
}

impl Domain {
    pub fn name(&self) -> &str {
        match self {
            Domain::Laptop => "laptop",
            Domain::Restaurant => "restaurant",
            Domain::Other(name) => name,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.trim().to_lowercase();
        let ok = !name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-');
        match name.as_str() {
            "laptop" => Ok(Domain::Laptop),
            "restaurant" => Ok(Domain::Restaurant),
            _ if ok => Ok(Domain::Other(name)),
            _ => Err(CorpusError::InvalidDomain(s.to_string())),
        }
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Target value marking an implicit aspect (no surface span).
pub const NULL_TARGET: &str = "NULL";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opinion {
    pub target: Option<String>,
    pub span: Option<Span>,
    pub category: Category,
    pub polarity: Polarity,
}

impl Opinion {
    /// Opinion with no surface target, as in files that annotate categories only.
    pub fn implicit(category: Category, polarity: Polarity) -> Self {
        Opinion { target: None, span: None, category, polarity }
    }

    pub fn explicit(target: &str, span: Span, category: Category, polarity: Polarity) -> Self {
        Opinion { target: Some(target.to_string()), span: Some(span), category, polarity }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub opinions: Vec<Opinion>,
}

impl Sentence {
    /// Checks text and opinion invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.is_empty() {
            return Err(CorpusError::sentence(&self.id, "empty text"));
        }
        let len = char_len(&self.text);
        for op in &self.opinions {
            let explicit = matches!(&op.target, Some(t) if t != NULL_TARGET);
            match (&op.span, explicit) {
                (Some(span), true) => {
                    if !span.is_valid_for(len) {
                        return Err(CorpusError::sentence(&self.id, format!("invalid span {span}")));
                    }
                    let target = op.target.as_deref().unwrap_or_default();
                    let slice = slice_chars(&self.text, *span);
                    if slice != target {
                        return Err(CorpusError::sentence(
                            &self.id,
                            format!("span {span} slices {slice:?}, target is {target:?}"),
                        ));
                    }
                }
                (None, false) => {}
                (Some(span), false) => {
                    return Err(CorpusError::sentence(
                        &self.id,
                        format!("span {span} given without an explicit target"),
                    ))
                }
                (None, true) => return Err(CorpusError::sentence(&self.id, "explicit target without span")),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Review {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub domain: Domain,
    pub reviews: Vec<Review>,
}

impl Dataset {
    pub fn new(domain: Domain) -> Self {
        Dataset { domain, reviews: Vec::new() }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.reviews.iter().flat_map(|r| r.sentences.iter())
    }

    pub fn sentence_count(&self) -> usize {
        self.reviews.iter().map(|r| r.sentences.len()).sum()
    }

    pub fn opinion_count(&self) -> usize {
        self.sentences().map(|s| s.opinions.len()).sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut review_ids = HashSet::new();
        let mut sentence_ids = HashSet::new();
        for review in &self.reviews {
            if !review_ids.insert(review.id.as_str()) {
                return Err(CorpusError::DuplicateReview(review.id.clone()));
            }
            for s in &review.sentences {
                if !sentence_ids.insert(s.id.as_str()) {
                    return Err(CorpusError::sentence(&s.id, "duplicate sentence id"));
                }
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> CorpusStats {
        let mut stats =
            CorpusStats { reviews: self.reviews.len(), sentences: self.sentence_count(), ..CorpusStats::default() };
        for op in self.sentences().flat_map(|s| s.opinions.iter()) {
            stats.opinions += 1;
            if op.span.is_some() {
                stats.explicit_opinions += 1;
            }
            stats.polarity_counts[op.polarity.index()] += 1;
        }
        stats
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub reviews: usize,
    pub sentences: usize,
    pub opinions: usize,
    pub explicit_opinions: usize,
    /// Indexed by `Polarity::index`.
    pub polarity_counts: [usize; 3],
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reviews={} sentences={} opinions={} explicit={} positive={} negative={} neutral={}",
            self.reviews,
            self.sentences,
            self.opinions,
            self.explicit_opinions,
            self.polarity_counts[0],
            self.polarity_counts[1],
            self.polarity_counts[2]
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_grammar() {
        let c: Category = "LAPTOP#GENERAL".parse().unwrap();
        assert_eq!(c.entity(), "LAPTOP");
        assert_eq!(c.to_string(), "LAPTOP#GENERAL");
        assert!("FOOD#STYLE_OPTIONS".parse::<Category>().is_ok());
        for bad in ["laptop#general", "LAPTOP", "A#B#C", "#GENERAL", "LAPTOP#", "LAP TOP#X"] {
            assert!(bad.parse::<Category>().is_err(), "{bad}");
        }
    }

    #[test]
    fn polarity_parse() {
        assert_eq!("neutral".parse::<Polarity>().unwrap(), Polarity::Neutral);
        assert!("conflict".parse::<Polarity>().is_err());
        assert!("Positive".parse::<Polarity>().is_err());
    }

    #[test]
    fn domain_parse() {
        assert_eq!("Laptop".parse::<Domain>().unwrap(), Domain::Laptop);
        assert_eq!("hotel".parse::<Domain>().unwrap(), Domain::Other("hotel".into()));
        assert!("".parse::<Domain>().is_err());
        assert!("a b".parse::<Domain>().is_err());
    }

    #[test]
    fn char_slicing_is_unicode_aware() {
        let text = "Café crème rocks";
        assert_eq!(slice_chars(text, Span::new(5, 10)), "crème");
        assert_eq!(char_len(text), 16);
    }

    #[test]
    fn sentence_validation() {
        let cat: Category = "FOOD#QUALITY".parse().unwrap();
        let mut s = Sentence {
            id: "1:0".into(),
            text: "Good pizza".into(),
            opinions: vec![Opinion::explicit("pizza", Span::new(5, 10), cat.clone(), Polarity::Positive)],
        };
        assert!(s.validate().is_ok());
        s.opinions[0].span = Some(Span::new(4, 9));
        assert!(s.validate().is_err());
        s.opinions[0] =
            Opinion { target: Some(NULL_TARGET.into()), span: None, category: cat, polarity: Polarity::Neutral };
        assert!(s.validate().is_ok());
        s.text.clear();
        assert!(s.validate().is_err());
    }
}
