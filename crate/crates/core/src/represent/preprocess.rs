//! Event text normalization ahead of tokenization.

use std::borrow::Cow;
use std::sync::OnceLock;

use regex::{Captures, Regex};

struct Rules {
    mac: Regex,
    path: Regex,
    ipv4: Regex,
    hex: Regex,
    non_alpha: Regex,
    spaces: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        // Six colon/dash separated groups; masked octets ("**") allowed, and
        // the first group may carry a one-letter prefix ("p00:1a:...").
        mac: Regex::new(r"[0-9a-z*]{2,3}(?:[:-][0-9a-f*]{2}){5}").unwrap(),
        // Absolute path: a slash-led run not preceded by a word character.
        path: Regex::new(r"(^|[^a-z0-9_./])(/[a-z0-9_.\-~]+)+/?").unwrap(),
        // Dotted quad with optional port.
        ipv4: Regex::new(r"\b\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?\b").unwrap(),
        // 0x-prefixed, or a bare hex run of at least 8 digits. Bare runs must
        // mix decimal digits and a-f letters (checked in the replacer) so
        // plain words and long decimal counters are left alone.
        hex: Regex::new(r"\b(?:0x[0-9a-f]+|[0-9a-f]{8,})\b").unwrap(),
        non_alpha: Regex::new(r"[^a-z ]+").unwrap(),
        spaces: Regex::new(r" {2,}").unwrap(),
    })
}

/// Lowercases, substitutes sensitive variables (MAC, absolute path, IPv4,
/// hex address, in that order), strips everything outside `[a-z ]` and
/// collapses whitespace.
pub fn preprocess(text: &str) -> String {
    let r = rules();
    let lower = text.to_lowercase();
    // Tabs and newlines become spaces so they survive the character filter
    // as word separators.
    let lower = lower.replace(|c: char| c.is_whitespace(), " ");

    let s = r.mac.replace_all(&lower, " mac address ");
    let s = r.path.replace_all(&s, "$1 file path ");
    let s = r.ipv4.replace_all(&s, " ip address ");
    let s = r.hex.replace_all(&s, |c: &Captures| {
        let m = &c[0];
        let mixed = m.bytes().any(|b| b.is_ascii_digit()) && m.bytes().any(|b| b.is_ascii_alphabetic());
        if m.starts_with("0x") || mixed {
            Cow::Borrowed(" hex address ")
        } else {
            Cow::Owned(m.to_string())
        }
    });
    let s = r.non_alpha.replace_all(&s, "");
    let s = r.spaces.replace_all(&s, " ");
    s.trim().to_string()
}
