//! Lowercasing word/punctuation tokenizer shared by every stage.
//!
//! Words are maximal runs of alphanumeric characters, optionally joined by a
//! single internal apostrophe or hyphen (`don't`, `real-estate`). Every other
//! non-space character is its own token.

/// Tokenize `text` into lowercase word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            i += 1;
            loop {
                if i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                } else if i + 1 < chars.len()
                    && is_joiner(chars[i])
                    && chars[i + 1].is_alphanumeric()
                {
                    i += 2;
                } else {
                    break;
                }
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

/// Canonical string form of a field: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Number of whitespace-delimited tokens after tokenization.
pub fn word_count(text: &str) -> usize {
    tokenize(text).len()
}

pub fn is_bare_number(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}

/// Drop a leading quantity (`11 dogs` -> `dogs`, `1,000 hats` -> `hats`).
///
/// A tail that is only a number (`60`) is left untouched.
pub fn strip_number_prefix(tokens: &[String]) -> Vec<String> {
    let mut cut = 0;
    while cut < tokens.len() {
        let tok = tokens[cut].as_str();
        let numeric_sep = (tok == "," || tok == ".")
            && cut > 0
            && is_bare_number(&tokens[cut - 1])
            && tokens.get(cut + 1).is_some_and(|t| is_bare_number(t));
        if is_bare_number(tok) || numeric_sep {
            cut += 1;
        } else {
            break;
        }
    }
    if cut == 0 || cut == tokens.len() {
        return tokens.to_vec();
    }
    tokens[cut..].to_vec()
}

/// True iff `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_span<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    find_span(haystack, needle).is_some()
}

/// Start index of the first occurrence of `needle` in `haystack`.
pub fn find_span<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
