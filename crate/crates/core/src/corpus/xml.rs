//! Reader and canonical writer for the `Reviews > Review > sentences > sentence`
//! XML layout.
//!
//! The writer output is fixed: XML declaration, two-space indentation, and
//! opinion attributes in the order target, category, polarity, from, to.
//! Sentences without opinions carry no `Opinions` element. Implicit
//! `NULL` targets are written with `from="0" to="0"`.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{Category, CorpusError, Dataset, Domain, Opinion, Review, Sentence, Span, NULL_TARGET};

fn element_children<'a, 'i>(node: Node<'a, 'i>, name: &'a str) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn parse_offset(sid: &str, name: &str, raw: Option<&str>) -> Result<usize, CorpusError> {
    let raw = raw.ok_or_else(|| CorpusError::sentence(sid, format!("missing `{name}` attribute")))?;
    raw.trim().parse().map_err(|_| CorpusError::sentence(sid, format!("bad `{name}` offset {raw:?}")))
}

fn parse_opinion(sid: &str, node: Node) -> Result<Opinion, CorpusError> {
    let category = node.attribute("category").ok_or_else(|| CorpusError::sentence(sid, "opinion without category"))?;
    let category: Category = category.parse().map_err(|e: CorpusError| CorpusError::sentence(sid, e.to_string()))?;
    let polarity = node
        .attribute("polarity")
        .ok_or_else(|| CorpusError::sentence(sid, "opinion without polarity"))?
        .parse()
        .map_err(|e: CorpusError| CorpusError::sentence(sid, e.to_string()))?;
    let target = node.attribute("target").map(str::to_string);
    let span = match target.as_deref() {
        None | Some(NULL_TARGET) => None,
        Some("") => return Err(CorpusError::sentence(sid, "empty target")),
        Some(_) => {
            let from = parse_offset(sid, "from", node.attribute("from"))?;
            let to = parse_offset(sid, "to", node.attribute("to"))?;
            Some(Span::new(from, to))
        }
    };
    Ok(Opinion { target, span, category, polarity })
}

fn parse_sentence(node: Node) -> Result<Sentence, CorpusError> {
    let id = node.attribute("id").ok_or_else(|| CorpusError::Structure("sentence without id".into()))?.to_string();
    let text =
        element_children(node, "text").next().ok_or_else(|| CorpusError::sentence(&id, "missing text element"))?;
    let text: String = text.children().filter_map(|c| c.text()).collect();
    let mut opinions = Vec::new();
    for block in element_children(node, "Opinions") {
        for op in element_children(block, "Opinion") {
            opinions.push(parse_opinion(&id, op)?);
        }
    }
    let sentence = Sentence { id, text, opinions };
    sentence.validate()?;
    Ok(sentence)
}

/// Parses a shared-task XML document into a [`Dataset`] in document order.
pub fn parse_semeval(xml: &str, domain: Domain) -> Result<Dataset, CorpusError> {
    let doc = Document::parse(xml).map_err(|e| CorpusError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "Reviews" {
        return Err(CorpusError::Structure(format!("top element is <{}>, expected <Reviews>", root.tag_name().name())));
    }
    let mut ds = Dataset::new(domain);
    for review in element_children(root, "Review") {
        let rid = review.attribute("rid").ok_or_else(|| CorpusError::Structure("review without rid".into()))?;
        let mut sentences = Vec::new();
        for block in element_children(review, "sentences") {
            for s in element_children(block, "sentence") {
                sentences.push(parse_sentence(s)?);
            }
        }
        ds.reviews.push(Review { id: rid.to_string(), sentences });
    }
    ds.validate()?;
    Ok(ds)
}

fn escape(raw: &str, attr: bool) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\n' if attr => out.push_str("&#10;"),
            '\t' if attr => out.push_str("&#9;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

const DECLARATION: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\"?>\n";

/// Writes the canonical XML form of `ds`.
pub fn serialize_semeval(ds: &Dataset) -> String {
    let mut out = String::from(DECLARATION);
    if ds.reviews.is_empty() {
        out.push_str("<Reviews/>\n");
        return out;
    }
    out.push_str("<Reviews>\n");
    for review in &ds.reviews {
        let rid = escape(&review.id, true);
        if review.sentences.is_empty() {
            let _ = writeln!(out, "  <Review rid=\"{rid}\">\n    <sentences/>\n  </Review>");
            continue;
        }
        let _ = writeln!(out, "  <Review rid=\"{rid}\">\n    <sentences>");
        for s in &review.sentences {
            let _ = writeln!(out, "      <sentence id=\"{}\">", escape(&s.id, true));
            let _ = writeln!(out, "        <text>{}</text>", escape(&s.text, false));
            if !s.opinions.is_empty() {
                out.push_str("        <Opinions>\n");
                for op in &s.opinions {
                    out.push_str("          <Opinion");
                    if let Some(t) = &op.target {
                        let _ = write!(out, " target=\"{}\"", escape(t, true));
                    }
                    let _ = write!(out, " category=\"{}\" polarity=\"{}\"", op.category, op.polarity);
                    match (&op.target, op.span) {
                        (_, Some(span)) => {
                            let _ = write!(out, " from=\"{}\" to=\"{}\"", span.start, span.end);
                        }
                        (Some(_), None) => out.push_str(" from=\"0\" to=\"0\""),
                        (None, None) => {}
                    }
                    out.push_str("/>\n");
                }
                out.push_str("        </Opinions>\n");
            }
            out.push_str("      </sentence>\n");
        }
        out.push_str("    </sentences>\n  </Review>\n");
    }
    out.push_str("</Reviews>\n");
    out
}
