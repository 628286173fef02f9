//! Character-range text edits with span remapping.

use super::{slice_chars, Opinion, Sentence, Span, NULL_TARGET};

#[derive(Clone, Debug)]
pub(crate) struct Edit {
    pub range: Span,
    pub replacement: String,
}

struct Placed {
    old: Span,
    new_start: usize,
    new_end: usize,
}

pub(crate) struct EditMap {
    placed: Vec<Placed>,
}

impl EditMap {
    /// Maps an old span boundary to the edited text. A boundary strictly
    /// inside an edited range snaps to the replacement's start (for span
    /// starts) or end (for span ends).
    fn map(&self, pos: usize, is_end: bool) -> usize {
        let mut shift: isize = 0;
        for p in &self.placed {
            if pos <= p.old.start {
                break;
            }
            if pos < p.old.end {
                return if is_end { p.new_end } else { p.new_start };
            }
            shift += (p.new_end - p.new_start) as isize - p.old.len() as isize;
        }
        (pos as isize + shift) as usize
    }

    pub fn map_span(&self, span: Span) -> Span {
        Span::new(self.map(span.start, false), self.map(span.end, true))
    }
}

/// Applies non-overlapping edits (any order) to `text`.
pub(crate) fn apply_edits(text: &str, mut edits: Vec<Edit>) -> (String, EditMap) {
    edits.sort_by_key(|e| e.range.start);
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut placed = Vec::with_capacity(edits.len());
    let mut cursor = 0;
    let mut out_len = 0;
    for e in edits {
        debug_assert!(e.range.start >= cursor, "overlapping edits");
        out.extend(&chars[cursor..e.range.start]);
        out_len += e.range.start - cursor;
        let new_start = out_len;
        out.push_str(&e.replacement);
        out_len += e.replacement.chars().count();
        placed.push(Placed { old: e.range, new_start, new_end: out_len });
        cursor = e.range.end;
    }
    out.extend(&chars[cursor..]);
    (out, EditMap { placed })
}

/// Rewrites the sentence text and moves every opinion span along with it.
/// Targets are re-read from the new text so the slice invariant holds even
/// when an edit touched an aspect.
pub(crate) fn edit_sentence(s: &Sentence, edits: Vec<Edit>, new_id: String) -> Sentence {
    let (text, map) = apply_edits(&s.text, edits);
    let opinions = s
        .opinions
        .iter()
        .map(|op| match op.span {
            Some(span) => {
                let moved = map.map_span(span);
                let target = slice_chars(&text, moved).to_string();
                debug_assert!(!target.is_empty() && target != NULL_TARGET);
                Opinion { target: Some(target), span: Some(moved), ..op.clone() }
            }
            None => op.clone(),
        })
        .collect();
    Sentence { id: new_id, text, opinions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edit(start: usize, end: usize, rep: &str) -> Edit {
        Edit { range: Span::new(start, end), replacement: rep.into() }
    }

    #[test]
    fn replacement_shifts_later_spans() {
        let (text, map) = apply_edits("great screen", vec![edit(0, 5, "[MASK]")]);
        assert_eq!(text, "[MASK] screen");
        assert_eq!(map.map_span(Span::new(6, 12)), Span::new(7, 13));
        assert_eq!(map.map_span(Span::new(0, 5)), Span::new(0, 6));
    }

    #[test]
    fn deletion_and_inner_boundaries() {
        let (text, map) = apply_edits("a bb c", vec![edit(1, 4, "")]);
        assert_eq!(text, "a c");
        assert_eq!(map.map_span(Span::new(5, 6)), Span::new(2, 3));
        assert_eq!(map.map_span(Span::new(0, 1)), Span::new(0, 1));
        // span starting inside the deleted range snaps forward
        assert_eq!(map.map_span(Span::new(2, 6)), Span::new(1, 3));
    }

    #[test]
    fn adjacent_edit_boundaries() {
        let (text, map) = apply_edits("ab cd", vec![edit(0, 2, "xyz"), edit(3, 5, "q")]);
        assert_eq!(text, "xyz q");
        assert_eq!(map.map_span(Span::new(0, 2)), Span::new(0, 3));
        assert_eq!(map.map_span(Span::new(3, 5)), Span::new(4, 5));
        assert_eq!(map.map_span(Span::new(0, 3)), Span::new(0, 4));
    }
}
