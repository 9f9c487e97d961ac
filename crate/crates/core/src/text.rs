//! Tokenization and schema-mention scanning shared by the prober, the
//! generator and the auditor.

use std::ops::Range;

/// A word of a natural-language string with its byte span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub lower: String,
    pub span: Range<usize>,
}

/// Splits on every non-alphanumeric character; spans index the original text.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(Token { lower: text[s..i].to_lowercase(), span: s..i });
        }
    }
    if let Some(s) = start {
        out.push(Token { lower: text[s..].to_lowercase(), span: s..text.len() });
    }
    out
}

/// Lowercased word list of a schema identifier. Underscores, punctuation and
/// camelCase boundaries all separate words: `NumTstTakr` -> `num tst takr`.
pub fn identifier_words(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for ch in name.chars() {
        if !ch.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            let camel = p.is_lowercase() && ch.is_uppercase();
            let digit_edge = p.is_alphabetic() != ch.is_alphabetic();
            if (camel || digit_edge) && !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(ch.to_lowercase());
        prev = Some(ch);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Canonical comparison key for identifiers and phrases.
pub fn normalize_phrase(text: &str) -> String {
    identifier_words(text).join(" ")
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "all", "also", "among", "an", "and", "any", "are", "as", "at",
    "be", "been", "being", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "each", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "list", "many", "me", "means", "more", "most", "much", "name",
    "names", "no", "not", "of", "on", "or", "other", "our", "please", "refer", "refers", "she",
    "should", "show", "so", "stand", "stands", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "to", "under", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "whose", "why", "will", "with", "would",
    "you", "your",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// A reference to a schema element spotted inside free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaMention {
    /// Qualifier for `table.column` forms.
    pub table: Option<String>,
    pub name: String,
    /// Byte span of the whole mention.
    pub span: Range<usize>,
}

/// Finds backticked (`` `t`.`c` ``, `` `t` ``) and bare dotted (`t.c`)
/// schema mentions. Text inside single-quoted literals is skipped. Bare dotted
/// parts must be at least two characters long so that abbreviations such as
/// "e.g." are not mistaken for references.
pub fn schema_mentions(text: &str) -> Vec<SchemaMention> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\'' => {
                i = literal_end(bytes, i).unwrap_or(i + 1);
            }
            b'`' => {
                let Some((first, after)) = read_backticked(text, i) else {
                    break;
                };
                if after + 1 < bytes.len() && bytes[after] == b'.' && bytes[after + 1] == b'`' {
                    if let Some((second, end)) = read_backticked(text, after + 1) {
                        out.push(SchemaMention { table: Some(first), name: second, span: i..end });
                        i = end;
                        continue;
                    }
                }
                out.push(SchemaMention { table: None, name: first, span: i..after });
                i = after;
            }
            b if is_ident_start(b) && (i == 0 || !is_ident_byte(bytes[i - 1])) => {
                let first_end = scan_ident(bytes, i);
                if first_end + 1 < bytes.len()
                    && bytes[first_end] == b'.'
                    && is_ident_start(bytes[first_end + 1])
                {
                    let second_end = scan_ident(bytes, first_end + 1);
                    let first = &text[i..first_end];
                    let second = &text[first_end + 1..second_end];
                    let trailing_dot = second_end < bytes.len() && bytes[second_end] == b'.';
                    if first.len() >= 2 && second.len() >= 2 && !trailing_dot {
                        out.push(SchemaMention {
                            table: Some(first.to_string()),
                            name: second.to_string(),
                            span: i..second_end,
                        });
                    }
                    i = second_end;
                } else {
                    i = first_end;
                }
            }
            _ => i += 1,
        }
    }
    out
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn scan_ident(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && is_ident_byte(bytes[i]) {
        i += 1;
    }
    i
}

/// Index just past the closing quote (or end of input), honouring doubled
/// quotes as escapes.
pub(crate) fn skip_quoted(bytes: &[u8], open: usize, quote: u8) -> usize {
    let mut i = open + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if i + 1 < bytes.len() && bytes[i + 1] == quote {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

/// End of a single-quoted literal opening at `open`. Apostrophes inside
/// words and unterminated quotes are not literals.
pub(crate) fn literal_end(bytes: &[u8], open: usize) -> Option<usize> {
    if open > 0 && bytes[open - 1].is_ascii_alphanumeric() {
        return None;
    }
    let end = skip_quoted(bytes, open, b'\'');
    (end > open + 1 && bytes[end - 1] == b'\'').then_some(end)
}

fn read_backticked(text: &str, open: usize) -> Option<(String, usize)> {
    let rest = &text[open + 1..];
    let close = rest.find('`')?;
    Some((rest[..close].to_string(), open + 1 + close + 1))
}

/// Converts a byte range of `text` to a character range.
pub fn char_range(text: &str, span: &Range<usize>) -> Range<usize> {
    let start = text[..span.start].chars().count();
    let len = text[span.start..span.end].chars().count();
    start..start + len
}

/// Byte length over four, rounded up. Conservative stand-in for a tokenizer.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenize_keeps_spans() {
        let q = "Jesenik branch, women?";
        let toks = tokenize(q);
        let words: Vec<_> = toks.iter().map(|t| &q[t.span.clone()]).collect();
        assert_eq!(words, ["Jesenik", "branch", "women"]);
        assert_eq!(toks[0].lower, "jesenik");
    }

    #[test]
    fn identifier_words_split_camel_and_snake() {
        assert_eq!(identifier_words("NumTstTakr"), ["num", "tst", "takr"]);
        assert_eq!(identifier_words("bond_type"), ["bond", "type"]);
        assert_eq!(identifier_words("A2"), ["a", "2"]);
        assert_eq!(identifier_words("CDSCode"), ["cdscode"]);
        assert_eq!(normalize_phrase("Free Meal Count (K-12)"), "free meal count k 12");
    }

    #[test]
    fn mentions_backticked_and_dotted() {
        let text = "join on `satscores`.`cds` = `schools`.`CDSCode`; colour.colour = 'a.b'; `Magnet`";
        let m = schema_mentions(text);
        let got: Vec<_> = m.iter().map(|m| (m.table.as_deref(), m.name.as_str())).collect();
        assert_eq!(
            got,
            [
                (Some("satscores"), "cds"),
                (Some("schools"), "CDSCode"),
                (Some("colour"), "colour"),
                (None, "Magnet"),
            ]
        );
        assert_eq!(&text[m[0].span.clone()], "`satscores`.`cds`");
    }

    #[test]
    fn mentions_ignore_abbreviations_and_numbers() {
        assert!(schema_mentions("e.g. values over 1.5, i.e. most").is_empty());
    }

    #[test]
    fn apostrophes_do_not_hide_mentions() {
        let m = schema_mentions("the school's city refers to `schools`.`City`");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].name, "City");
        assert!(schema_mentions("x = 'a.bc' and `t`").iter().all(|m| m.name == "t"));
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("abcd"), 1);
    }
}
