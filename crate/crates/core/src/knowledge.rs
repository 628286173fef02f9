//! External knowledge: a term lexicon per domain plus a cross-domain
//! category map.
//!
//! File layout (UTF-8, line oriented):
//!
//! ```text
//! # comment
//! [lexicon]
//! battery life<TAB>laptop<TAB>LAPTOP#GENERAL
//! [category-map]
//! LAPTOP#PRICE<TAB>restaurant<TAB>RESTAURANT#PRICES
//! ```

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpus::{Category, Domain};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate entry {entry:?}")]
    Duplicate { line: usize, entry: String },
    #[error("line {line}: malformed category {raw:?}")]
    Category { line: usize, raw: String },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Lexicon,
    CategoryMap,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeSource {
    lexicon: BTreeMap<(Domain, String), Category>,
    category_map: BTreeMap<(Category, Domain), Category>,
    native: BTreeSet<(Domain, Category)>,
}

fn normalize_term(term: &str) -> String {
    term.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl KnowledgeSource {
    pub fn parse(text: &str) -> Result<Self, KnowledgeError> {
        let mut ks = KnowledgeSource::default();
        let mut section = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match trimmed {
                "[lexicon]" => {
                    section = Some(Section::Lexicon);
                    continue;
                }
                "[category-map]" => {
                    section = Some(Section::CategoryMap);
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(KnowledgeError::Syntax {
                    line,
                    message: format!("expected 3 tab-separated fields, got {:?}", raw),
                });
            }
            let domain: Domain = fields[1]
                .parse()
                .map_err(|_| KnowledgeError::Syntax { line, message: format!("bad domain {:?}", fields[1]) })?;
            let category = |raw: &str| {
                raw.parse::<Category>().map_err(|_| KnowledgeError::Category { line, raw: raw.to_string() })
            };
            match section {
                None => {
                    return Err(KnowledgeError::Syntax {
                        line,
                        message: "entry before any [lexicon] or [category-map] header".into(),
                    })
                }
                Some(Section::Lexicon) => {
                    let term = normalize_term(fields[0]);
                    let cat = category(fields[2])?;
                    let key = (domain.clone(), term.clone());
                    if ks.lexicon.contains_key(&key) {
                        return Err(KnowledgeError::Duplicate { line, entry: format!("{term} ({domain})") });
                    }
                    ks.native.insert((domain, cat.clone()));
                    ks.lexicon.insert(key, cat);
                }
                Some(Section::CategoryMap) => {
                    let src = category(fields[0])?;
                    let dst = category(fields[2])?;
                    let key = (src.clone(), domain.clone());
                    if ks.category_map.contains_key(&key) {
                        return Err(KnowledgeError::Duplicate { line, entry: format!("{src} -> {domain}") });
                    }
                    ks.native.insert((domain, dst.clone()));
                    ks.category_map.insert(key, dst);
                }
            }
        }
        Ok(ks)
    }

    pub fn lexicon_len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn category_map_len(&self) -> usize {
        self.category_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty() && self.category_map.is_empty()
    }

    /// Case-insensitive exact lookup of `term` in `domain`'s lexicon.
    pub fn resolve_term(&self, term: &str, domain: &Domain) -> Option<&Category> {
        self.lexicon.get(&(domain.clone(), normalize_term(term)))
    }

    /// Lexicon entries of one domain, ordered by term.
    pub fn terms_in<'a>(&'a self, domain: &'a Domain) -> impl Iterator<Item = (&'a str, &'a Category)> + 'a {
        self.lexicon.iter().filter(move |((d, _), _)| d == domain).map(|((_, t), c)| (t.as_str(), c))
    }

    pub fn domains(&self) -> BTreeSet<Domain> {
        self.native.iter().map(|(d, _)| d.clone()).collect()
    }

    /// True when `domain` uses `category`, either through a lexicon entry or
    /// as the target of a map entry.
    pub fn is_native(&self, category: &Category, domain: &Domain) -> bool {
        self.native.contains(&(domain.clone(), category.clone()))
    }

    /// Translates a category from `source` into `target`'s scheme: identity
    /// for same-domain calls, the map entry when one exists, identity when
    /// `target` already uses the category, and `None` otherwise.
    pub fn map_category(&self, category: &Category, source: &Domain, target: &Domain) -> Option<Category> {
        if source == target {
            return Some(category.clone());
        }
        if let Some(mapped) = self.category_map.get(&(category.clone(), target.clone())) {
            return Some(mapped.clone());
        }
        self.is_native(category, target).then(|| category.clone())
    }

    /// Sorted, comment-free rendering in the input format. Two sources with
    /// the same entries render identically.
    pub fn canonical_text(&self) -> String {
        let mut out = String::from("[lexicon]\n");
        for ((domain, term), cat) in &self.lexicon {
            out.push_str(&format!("{term}\t{domain}\t{cat}\n"));
        }
        out.push_str("[category-map]\n");
        for ((src, domain), dst) in &self.category_map {
            out.push_str(&format!("{src}\t{domain}\t{dst}\n"));
        }
        out
    }

    /// Copy with the category map removed; cross-domain translation then
    /// falls back to shared category strings only.
    pub fn without_category_map(&self) -> Self {
        let mut native = BTreeSet::new();
        for ((domain, _), cat) in &self.lexicon {
            native.insert((domain.clone(), cat.clone()));
        }
        KnowledgeSource { lexicon: self.lexicon.clone(), category_map: BTreeMap::new(), native }
    }
}
