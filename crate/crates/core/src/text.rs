//! Character spans, grounding normalization and the word tokenizer shared by
//! the lexical index and the hashed-token embedder.
//!
//! All public offsets are Unicode scalar (char) offsets, half-open.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open `[start, end)` range of char offsets. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
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

    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Checks the span is non-empty and lies within a text of `len` chars.
    pub fn check_within(&self, len: usize) -> Result<()> {
        let fail = |reason| Error::Span {
            start: self.start,
            end: self.end,
            len,
            reason,
        };
        if self.is_empty() {
            return Err(fail("empty span"));
        }
        if self.end > len {
            return Err(fail("span extends past the end of the text"));
        }
        Ok(())
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte range of a char span. The span must already be within bounds.
pub fn byte_range(text: &str, span: Span) -> std::ops::Range<usize> {
    let mut start = text.len();
    let mut end = text.len();
    for (ci, (bi, _)) in text.char_indices().enumerate() {
        if ci == span.start {
            start = bi;
        }
        if ci == span.end {
            end = bi;
            break;
        }
    }
    start..end
}

pub fn slice_chars(text: &str, span: Span) -> &str {
    &text[byte_range(text, span)]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Drop punctuation before matching ("St. Martin" matches "St Martin").
    #[serde(default)]
    pub strip_punctuation: bool,
}

/// Normalized char sequence plus, for every normalized char, the index of the
/// original char it came from.
struct Normalized {
    chars: Vec<char>,
    origin: Vec<usize>,
}

fn normalize_mapped(text: &str, opts: NormalizeOptions) -> Normalized {
    let mut chars = Vec::with_capacity(text.len());
    let mut origin = Vec::with_capacity(text.len());
    let mut pending_ws: Option<usize> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            pending_ws.get_or_insert(i);
            continue;
        }
        if opts.strip_punctuation && (c.is_ascii_punctuation() || is_unicode_punct(c)) {
            continue;
        }
        if let Some(ws) = pending_ws.take() {
            if !chars.is_empty() {
                chars.push(' ');
                origin.push(ws);
            }
        }
        for lc in c.to_lowercase() {
            chars.push(lc);
            origin.push(i);
        }
    }
    Normalized { chars, origin }
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}' | '\u{00B7}'
    )
}

/// Casefold and collapse whitespace runs to one space, trimming both ends.
pub fn normalize(text: &str, opts: NormalizeOptions) -> String {
    normalize_mapped(text, opts).chars.into_iter().collect()
}

/// Earliest occurrence of `needle` in `haystack` under [`normalize`], bounded by
/// non-alphanumeric characters on both sides. Returns the span in original
/// haystack char offsets.
pub fn find_normalized(haystack: &str, needle: &str, opts: NormalizeOptions) -> Option<Span> {
    let hay = normalize_mapped(haystack, opts);
    let pat = normalize_mapped(needle, opts).chars;
    if pat.is_empty() || pat.len() > hay.chars.len() {
        return None;
    }
    let original: Vec<char> = haystack.chars().collect();
    let needs_left = pat[0].is_alphanumeric();
    let needs_right = pat[pat.len() - 1].is_alphanumeric();
    for pos in 0..=hay.chars.len() - pat.len() {
        if hay.chars[pos..pos + pat.len()] != pat[..] {
            continue;
        }
        let start = hay.origin[pos];
        let end = hay.origin[pos + pat.len() - 1] + 1;
        let left_ok = !needs_left || start == 0 || !original[start - 1].is_alphanumeric();
        let right_ok = !needs_right || end == original.len() || !original[end].is_alphanumeric();
        if left_ok && right_ok {
            return Some(Span::new(start, end));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased token text.
    pub text: String,
    pub span: Span,
}

/// Lowercase, split on any non-alphanumeric char. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push(Token {
                text: std::mem::take(&mut current),
                span: Span::new(start, i),
            });
        }
    }
    if !current.is_empty() {
        out.push(Token {
            text: current,
            span: Span::new(start, n),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAIN: NormalizeOptions = NormalizeOptions {
        strip_punctuation: false,
    };

    #[test]
    fn normalize_collapses_and_folds() {
        assert_eq!(normalize("  St.\t\nMARTIN  ", PLAIN), "st. martin");
    }

    #[test]
    fn find_maps_back_to_original_offsets() {
        // "St. Martin" written with a double space in the text still spans 11 chars.
        let span = find_normalized("See St.  Martin here", "st. martin", PLAIN).unwrap();
        assert_eq!(span, Span::new(4, 15));
    }

    #[test]
    fn find_respects_word_boundaries() {
        assert_eq!(find_normalized("The start of art", "art", PLAIN), Some(Span::new(13, 16)));
        assert_eq!(find_normalized("Goudas only", "Gouda", PLAIN), None);
    }

    #[test]
    fn punctuation_stripping_is_opt_in() {
        assert_eq!(find_normalized("St Martin", "St. Martin", PLAIN), None);
        let strip = NormalizeOptions {
            strip_punctuation: true,
        };
        assert_eq!(find_normalized("St Martin", "St. Martin", strip), Some(Span::new(0, 9)));
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumeric() {
        let toks = tokenize("New-York's café, 2024!");
        let words: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, ["new", "york", "s", "café", "2024"]);
        assert_eq!(toks[3].span, Span::new(11, 15));
    }

    #[test]
    fn byte_range_handles_multibyte() {
        let text = "über Gouda";
        assert_eq!(slice_chars(text, Span::new(5, 10)), "Gouda");
        assert_eq!(slice_chars(text, Span::new(0, 4)), "über");
    }
}
