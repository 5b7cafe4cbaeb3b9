//! Shared word-level tokeniser. Emoticons, emoji and the de-identification
//! masks survive as single tokens; words are lower-cased.

use std::sync::LazyLock;

use regex::Regex;

pub const USER_MASK: &str = "_USER_";
pub const URL_MASK: &str = "_URL_";

static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"(?P<mask>_USER_|_URL_)",
        r"|(?P<emoticon><3|</3|[:;=][-'^]?[)(\]\[dDpP/\\|*oO3]|[)(][-'^]?[:;=])",
        r"|(?P<emoji>\p{Extended_Pictographic}(?:\u{FE0F})?)",
        r"|(?P<word>[\p{L}\p{N}]+(?:['’][\p{L}\p{N}]+)*)",
        r"|(?P<other>\S)",
    ))
    .expect("token pattern compiles")
});

pub fn tokenize(text: &str) -> Vec<String> {
    TOKEN
        .captures_iter(text)
        .map(|c| {
            if let Some(w) = c.name("word") {
                w.as_str().to_lowercase()
            } else {
                c.get(0).expect("whole match").as_str().to_string()
            }
        })
        .collect()
}

/// Tokenises and keeps at most `max_length` tokens.
pub fn tokenize_truncated(text: &str, max_length: usize) -> Vec<String> {
    let mut t = tokenize(text);
    t.truncate(max_length);
    t
}
