//! Seeded corpus transforms: masking probe, augmentation, review-level split.

use rand::seq::SliceRandom;
use rand::Rng;

use super::edit::{edit_sentence, Edit};
use super::{tokenize, CorpusError, Dataset, Review, Sentence, Span, Token, MASK_LITERAL};
use crate::knowledge::KnowledgeSource;
use crate::seed::stage_rng;

fn overlaps_any(span: &Span, opinions: &[Span]) -> bool {
    opinions.iter().any(|o| o.overlaps(span))
}

fn opinion_spans(s: &Sentence) -> Vec<Span> {
    s.opinions.iter().filter_map(|o| o.span).collect()
}

fn mask_sentence(s: &Sentence, fraction: f64, seed: u64, include_aspect_tokens: bool) -> Sentence {
    let gold = opinion_spans(s);
    let eligible: Vec<Token> =
        tokenize(&s.text).into_iter().filter(|t| include_aspect_tokens || !overlaps_any(&t.span, &gold)).collect();
    let k = (fraction * eligible.len() as f64).floor() as usize;
    if k == 0 {
        return s.clone();
    }
    let mut rng = stage_rng(seed, &format!("mask/{}", s.id));
    let chosen = rand::seq::index::sample(&mut rng, eligible.len(), k);
    let edits =
        chosen.iter().map(|i| Edit { range: eligible[i].span, replacement: MASK_LITERAL.to_string() }).collect();
    edit_sentence(s, edits, s.id.clone())
}

/// Replaces `floor(fraction * eligible)` tokens per sentence with `[MASK]`.
///
/// Tokens overlapping a gold opinion span are eligible only when
/// `include_aspect_tokens` is set. Each sentence draws from its own stream
/// keyed by sentence id, so the result does not depend on corpus order.
pub fn mask_tokens(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
    include_aspect_tokens: bool,
) -> Result<Dataset, CorpusError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let reviews = ds
        .reviews
        .iter()
        .map(|r| Review {
            id: r.id.clone(),
            sentences: r.sentences.iter().map(|s| mask_sentence(s, fraction, seed, include_aspect_tokens)).collect(),
        })
        .collect();
    Ok(Dataset { domain: ds.domain.clone(), reviews })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Dropout,
    Swap,
    Substitute,
}

fn whitespace_run(chars: &[char], mut from: usize, forward: bool) -> usize {
    if forward {
        while from < chars.len() && chars[from].is_whitespace() {
            from += 1;
        }
    } else {
        while from > 0 && chars[from - 1].is_whitespace() {
            from -= 1;
        }
    }
    from
}

fn dropout_edit(s: &Sentence, rng: &mut impl Rng) -> Option<Edit> {
    let tokens = tokenize(&s.text);
    if tokens.len() < 2 {
        return None;
    }
    let gold = opinion_spans(s);
    let candidates: Vec<usize> = (0..tokens.len()).filter(|&i| !overlaps_any(&tokens[i].span, &gold)).collect();
    let &pick = candidates.choose(rng)?;
    let chars: Vec<char> = s.text.chars().collect();
    let tok = tokens[pick].span;
    let range = if pick > 0 {
        Span::new(whitespace_run(&chars, tok.start, false), tok.end)
    } else {
        Span::new(tok.start, whitespace_run(&chars, tok.end, true))
    };
    Some(Edit { range, replacement: String::new() })
}

fn swap_edit(s: &Sentence, rng: &mut impl Rng) -> Option<Edit> {
    let tokens = tokenize(&s.text);
    let gold = opinion_spans(s);
    let chars: Vec<char> = s.text.chars().collect();
    let slice = |sp: Span| chars[sp.start..sp.end].iter().collect::<String>();
    let candidates: Vec<usize> = (0..tokens.len().saturating_sub(1))
        .filter(|&i| {
            let (a, b) = (tokens[i].span, tokens[i + 1].span);
            !overlaps_any(&Span::new(a.start, b.end), &gold) && slice(a) != slice(b)
        })
        .collect();
    let &i = candidates.choose(rng)?;
    let (a, b) = (tokens[i].span, tokens[i + 1].span);
    let replacement = format!("{}{}{}", slice(b), slice(Span::new(a.end, b.start)), slice(a));
    Some(Edit { range: Span::new(a.start, b.end), replacement })
}

fn substitution_peers(ks: &KnowledgeSource, ds: &Dataset, s: &Sentence, span: Span) -> Vec<String> {
    let Some(op) = s.opinions.iter().find(|o| o.span == Some(span)) else {
        return Vec::new();
    };
    let target = op.target.as_deref().unwrap_or_default().to_lowercase();
    let category = ks.resolve_term(&target, &ds.domain).unwrap_or(&op.category);
    let mut peers: Vec<String> = ks
        .terms_in(&ds.domain)
        .filter(|(term, cat)| *cat == category && **term != target)
        .map(|(term, _)| term.to_string())
        .collect();
    peers.sort();
    peers
}

fn substitute_edit(s: &Sentence, ds: &Dataset, ks: &KnowledgeSource, rng: &mut impl Rng) -> Option<Edit> {
    let mut spans = opinion_spans(s);
    spans.sort();
    spans.dedup();
    // spans partially overlapping another opinion cannot be rewritten cleanly
    let clean: Vec<Span> = spans.iter().copied().filter(|a| !spans.iter().any(|b| b != a && b.overlaps(a))).collect();
    let options: Vec<(Span, Vec<String>)> = clean
        .into_iter()
        .map(|sp| (sp, substitution_peers(ks, ds, s, sp)))
        .filter(|(_, peers)| !peers.is_empty())
        .collect();
    let (span, peers) = options.choose(rng)?;
    let peer = peers.choose(rng)?;
    Some(Edit { range: *span, replacement: peer.clone() })
}

fn substitution_applicable(ds: &Dataset, ks: &KnowledgeSource) -> bool {
    let entries: Vec<_> = ks.terms_in(&ds.domain).collect();
    entries.iter().any(|(t, c)| entries.iter().any(|(u, d)| c == d && t != u))
}

/// Appends synthetic reviews built by seeded, lexicon-driven strategies:
/// context-token dropout, adjacent non-aspect token swap, and aspect-term
/// substitution with a same-category lexicon peer.
///
/// Every input review yields `min(ops_per_sentence, applicable)` synthetic
/// copies, where substitution counts as applicable only if the lexicon holds
/// two terms of one category for this domain. Each copy applies one strategy
/// to each of its sentences; sentences the strategy cannot change are copied
/// verbatim. Synthetic ids append `~aug<k>` to the original id.
pub fn augment(ds: &Dataset, seed: u64, ops_per_sentence: usize, ks: &KnowledgeSource) -> Dataset {
    let mut strategies = vec![Strategy::Dropout, Strategy::Swap];
    if substitution_applicable(ds, ks) {
        strategies.push(Strategy::Substitute);
    }
    let per_review = ops_per_sentence.min(strategies.len());
    let mut out = ds.clone();
    if per_review == 0 {
        return out;
    }
    for review in &ds.reviews {
        let mut order = strategies.clone();
        order.shuffle(&mut stage_rng(seed, &format!("augment/{}", review.id)));
        for (k, strategy) in order.into_iter().take(per_review).enumerate() {
            let suffix = format!("~aug{k}");
            let sentences = review
                .sentences
                .iter()
                .map(|s| {
                    let mut rng = stage_rng(seed, &format!("augment/{}/{k}", s.id));
                    let edit = match strategy {
                        Strategy::Dropout => dropout_edit(s, &mut rng),
                        Strategy::Swap => swap_edit(s, &mut rng),
                        Strategy::Substitute => substitute_edit(s, ds, ks, &mut rng),
                    };
                    let id = format!("{}{suffix}", s.id);
                    match edit {
                        Some(e) => edit_sentence(s, vec![e], id),
                        None => Sentence { id, ..s.clone() },
                    }
                })
                .collect();
            out.reviews.push(Review { id: format!("{}{suffix}", review.id), sentences });
        }
    }
    out
}

/// Seeded review-level split into `ceil(n * train_fraction)` training reviews
/// and the remainder. Both halves keep the original document order.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), CorpusError> {
    let n = ds.reviews.len();
    if n < 2 {
        return Err(CorpusError::TooFewReviews(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidTrainFraction(train_fraction));
    }
    let n_train = (n as f64 * train_fraction).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stage_rng(seed, "split"));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let mut train = Dataset::new(ds.domain.clone());
    let mut test = Dataset::new(ds.domain.clone());
    for (review, keep) in ds.reviews.iter().zip(in_train) {
        if keep { &mut train } else { &mut test }.reviews.push(review.clone());
    }
    Ok((train, test))
}
