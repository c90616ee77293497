//! Message standardization: markup stripping, URL and imageboard metadata
//! removal, lowercasing and tokenization.
//!
//! The stages run in a fixed order (see [`normalize_text`]). What counts as
//! "platform metadata" is a reconstruction: quote-links (`>>123`),
//! cross-board links (`>>>/pol/`, `>>>/pol/123`) and the line-initial
//! greentext marker. Tripcodes and names are not touched.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use crate::ingest::RawPost;

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)https?://\S+|www\.\S+").expect("valid url regex"));
static CROSS_BOARD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r">>>/[A-Za-z0-9_]+/(?:\d+)?").expect("valid cross-board regex"));
static QUOTE_LINK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r">>\d+").expect("valid quote-link regex"));
static GREENTEXT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^>").expect("valid greentext regex"));

/// One normalized message.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusDocument {
    pub tokens: Vec<String>,
}

impl CorpusDocument {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// The corpus file representation: tokens joined by single spaces.
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for CorpusDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// Removes HTML tags and decodes entities. `<br>` in any of its spellings
/// becomes a single space; every other tag disappears. Malformed markup is
/// passed through as text.
pub fn strip_markup(body_html: &str) -> String {
    let mut out = String::with_capacity(body_html.len());
    let mut rest = body_html;

    while let Some(pos) = rest.find(['<', '&']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix('<') {
            match tail.find('>') {
                Some(end) => {
                    if is_line_break(&tail[1..end]) {
                        out.push(' ');
                    }
                    rest = &tail[end + 1..];
                }
                None => {
                    out.push('<');
                    rest = after;
                }
            }
        } else {
            match decode_entity(tail) {
                Some((ch, used)) => {
                    out.push(ch);
                    rest = &tail[used..];
                }
                None => {
                    out.push('&');
                    rest = &tail[1..];
                }
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_line_break(tag: &str) -> bool {
    let name = tag.trim().trim_end_matches('/').trim();
    name.eq_ignore_ascii_case("br")
}

/// Decodes the entity at the start of `s` (which begins with `&`), returning
/// the character and the number of bytes consumed.
fn decode_entity(s: &str) -> Option<(char, usize)> {
    let semi = s[1..].char_indices().take(12).find(|&(_, c)| c == ';')?.0 + 1;
    let name = &s[1..semi];
    let ch = match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{a0}',
        _ => {
            let code = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok()?
            } else {
                name.strip_prefix('#')?.parse::<u32>().ok()?
            };
            char::from_u32(code)?
        }
    };
    Some((ch, semi + 1))
}

/// Replaces every `https?://\S+` or `www.\S+` run with one space.
pub fn remove_urls(text: &str) -> String {
    URL_RE.replace_all(text, " ").into_owned()
}

/// Removes cross-board links, quote-links and line-initial greentext markers,
/// in that order. A `>` that is neither line-initial nor part of a post
/// reference is kept.
pub fn remove_platform_metadata(text: &str) -> String {
    let text = CROSS_BOARD_RE.replace_all(text, "");
    let text = QUOTE_LINK_RE.replace_all(&text, "");
    GREENTEXT_RE.replace_all(&text, "").into_owned()
}

/// Applied after lowercasing; uppercase letters with no lowercase form
/// (e.g. mathematical script capitals) act as separators.
fn is_token_char(c: char) -> bool {
    (c.is_alphanumeric() && !c.is_uppercase()) || c == '\'' || c == '-'
}

/// Lowercases and splits into maximal runs of letters, digits, apostrophes
/// and hyphens. Runs made only of apostrophes and hyphens are dropped.
pub fn tokenize(text: &str) -> CorpusDocument {
    let lowered = text.to_lowercase();
    let tokens = lowered
        .split(|c: char| !is_token_char(c))
        .filter(|run| run.chars().any(char::is_alphanumeric))
        .map(str::to_owned)
        .collect();
    CorpusDocument { tokens }
}

/// Full standardization of a message body, without the empty-result check.
pub fn normalize_text(body: &str) -> CorpusDocument {
    let text = strip_markup(body);
    let text = remove_urls(&text);
    let text = remove_platform_metadata(&text);
    tokenize(&text)
}

/// Normalizes a post; `None` when nothing is left after standardization.
pub fn normalize_post(post: &RawPost) -> Option<CorpusDocument> {
    let doc = normalize_text(&post.body_html);
    if doc.is_empty() {
        None
    } else {
        Some(doc)
    }
}

/// True when `term` is exactly one token under the tokenizer rules.
pub fn is_normalized_token(term: &str) -> bool {
    let doc = tokenize(term);
    doc.tokens.len() == 1 && doc.tokens[0] == term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Platform;
    use proptest::prelude::*;

    fn toks(doc: &CorpusDocument) -> Vec<&str> {
        doc.tokens.iter().map(String::as_str).collect()
    }

    fn post(body: &str) -> RawPost {
        RawPost {
            platform: Platform::Fourchan,
            board: "pol".into(),
            post_id: 1,
            timestamp: 0,
            body_html: body.into(),
        }
    }

    #[test]
    fn strip_markup_examples() {
        assert_eq!(strip_markup("&gt;tfw no gf"), ">tfw no gf");
        assert_eq!(strip_markup("a<br>b"), "a b");
        assert_eq!(strip_markup("a<br/>b<BR />c"), "a b c");
        assert_eq!(strip_markup("<span class=\"quote\">&gt;text</span>"), ">text");
    }

    #[test]
    fn strip_markup_entities() {
        assert_eq!(strip_markup("&amp;&lt;&quot;&apos;"), "&<\"'");
        assert_eq!(strip_markup("&#39;&#x41;&#X42;"), "'AB");
        assert_eq!(strip_markup("a&nbsp;b"), "a\u{a0}b");
        // decoded text is not re-interpreted as markup
        assert_eq!(strip_markup("&lt;b&gt;bold"), "<b>bold");
    }

    #[test]
    fn strip_markup_malformed() {
        assert_eq!(strip_markup("1 < 2"), "1 < 2");
        assert_eq!(strip_markup("fish & chips"), "fish & chips");
        assert_eq!(strip_markup("&bogus; &#xZZ;"), "&bogus; &#xZZ;");
        assert_eq!(strip_markup("&#1114112;"), "&#1114112;");
    }

    #[test]
    fn remove_urls_examples() {
        assert_eq!(remove_urls("Check https://example.com NOW"), "Check   NOW");
        assert_eq!(remove_urls("no urls here"), "no urls here");
        assert_eq!(remove_urls("www.foo.bar/baz end"), "  end");
        assert_eq!(remove_urls("a http://x.y/z?q=1 b"), "a   b");
    }

    #[test]
    fn remove_platform_metadata_examples() {
        assert_eq!(remove_platform_metadata(">>12345 lurk moar"), " lurk moar");
        assert_eq!(remove_platform_metadata(">implying"), "implying");
        assert_eq!(remove_platform_metadata("5 > 3"), "5 > 3");
        assert_eq!(remove_platform_metadata("see >>>/pol/ and >>>/b/999 x"), "see  and  x");
        assert_eq!(remove_platform_metadata("a\n>b\n>>7 c"), "a\nb\n c");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks(&tokenize("The CUCKS won't win")), ["the", "cucks", "won't", "win"]);
        assert!(tokenize("").is_empty());
        assert_eq!(toks(&tokenize("alt-right!!1")), ["alt-right", "1"]);
        assert_eq!(toks(&tokenize("dindu-nuffin 🙂 ok")), ["dindu-nuffin", "ok"]);
        assert_eq!(toks(&tokenize("a - b ' c")), ["a", "b", "c"]);
        assert_eq!(toks(&tokenize("ÜBER Straße")), ["über", "straße"]);
    }

    #[test]
    fn normalize_post_examples() {
        assert_eq!(normalize_post(&post(">>111 KYS https://x.io")).map(|d| d.to_line()), Some("kys".to_string()));
        assert_eq!(normalize_post(&post(">>111 https://x.io")), None);
        assert_eq!(toks(&normalize_post(&post("hello world")).unwrap()), ["hello", "world"]);
        assert_eq!(toks(&normalize_post(&post("&gt;be me<br>lose")).unwrap()), ["be", "me", "lose"]);
        assert_eq!(normalize_post(&post("")), None);
    }

    #[test]
    fn caseless_capitals_separate() {
        assert_eq!(toks(&tokenize("a\u{1D4A9}b")), ["a", "b"]);
    }

    #[test]
    fn token_validation() {
        assert!(is_normalized_token("hoodbooger"));
        assert!(is_normalized_token("won't"));
        assert!(!is_normalized_token("Cuck"));
        assert!(!is_normalized_token("two words"));
        assert!(!is_normalized_token(""));
    }

    proptest! {
        #[test]
        fn tokens_are_clean(s in "\\PC{0,80}") {
            for t in normalize_text(&s).tokens {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(|c| c.is_whitespace() || c.is_uppercase()));
                prop_assert!(!t.contains(">>"));
            }
        }

        #[test]
        fn retokenize_is_fixed_point(s in "\\PC{0,80}") {
            let doc = tokenize(&s);
            prop_assert_eq!(tokenize(&doc.to_line()), doc);
        }

        #[test]
        fn normalize_is_idempotent(s in "[a-zA-Z0-9 <>&;:/.#'\\-\n]{0,80}") {
            let doc = normalize_text(&s);
            prop_assert_eq!(normalize_text(&doc.to_line()), doc);
        }
    }
}
