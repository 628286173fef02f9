use super::Span;

/// Literal inserted by the masking probe. The tokenizer keeps it whole.
pub const MASK_LITERAL: &str = "[MASK]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form.
    pub text: String,
    /// Character span into the original text.
    pub span: Span,
}

/// Lowercasing tokenizer: runs of alphanumeric characters form tokens, every
/// other non-whitespace character is a token of its own, and the literal
/// `[MASK]` is a single token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mask: Vec<char> = MASK_LITERAL.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if chars[i..].starts_with(&mask) {
            i += mask.len();
        } else if c.is_alphanumeric() {
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        let surface: String = chars[start..i].iter().collect();
        tokens.push(Token { text: surface.to_lowercase(), span: Span::new(start, i) });
    }
    tokens
}
