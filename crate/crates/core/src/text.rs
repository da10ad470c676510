//! Tokenization, sentence splitting and alias matching shared by every module.

use serde::{Deserialize, Serialize};

/// Fixed stopword list used by grounding and the lexical informativeness estimator.
pub const STOPWORDS: [&str; 30] = [
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "and", "or", "is", "was", "are", "were", "be", "by", "with",
    "as", "it", "its", "that", "this", "from", "who", "what", "which", "when", "how", "did",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Half-open byte range into a UTF-8 string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Byte spans of maximal alphanumeric runs ("word tokens").
pub fn word_spans(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(Span::new(s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(Span::new(s, text.len()));
    }
    spans
}

/// Lowercased word tokens in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    word_spans(text).iter().map(|s| s.slice(text).to_lowercase()).collect()
}

/// Lowercased word tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Rule-based sentence splitter: a sentence ends at '.', '!' or '?' followed by
/// whitespace, or at end of text. Returned spans are trimmed and non-empty.
pub fn split_sentences(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    push_trimmed(text, start, i + ch.len_utf8(), &mut spans);
                    start = i + ch.len_utf8();
                }
            }
        }
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Span>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trail = piece.len() - piece.trim_end().len();
    if lead + trail < piece.len() {
        out.push(Span::new(start + lead, end - trail));
    }
}

/// Case-folded, whitespace-collapsed form used for exact-match correctness.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Verbatim (case-sensitive) occurrence of `alias` in `text` on word boundaries.
pub fn contains_alias(text: &str, alias: &str) -> bool {
    find_alias(text, alias).is_some()
}

pub fn find_alias(text: &str, alias: &str) -> Option<usize> {
    let alias = alias.trim();
    if alias.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(pos) = text[from..].find(alias) {
        let at = from + pos;
        let end = at + alias.len();
        let before_ok = text[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + text[at..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Lowercased word tokens of the given aliases that are targeted by pollution.
///
/// Stopwords are dropped unless an alias consists only of stopwords.
pub fn gold_tokens(aliases: &[String]) -> std::collections::BTreeSet<String> {
    let mut out = std::collections::BTreeSet::new();
    for alias in aliases {
        let toks = tokens(alias);
        let content: Vec<_> = toks.iter().filter(|t| !is_stopword(t)).cloned().collect();
        if content.is_empty() {
            out.extend(toks);
        } else {
            out.extend(content);
        }
    }
    out
}
