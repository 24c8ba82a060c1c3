//! Character counting and token estimation.
//!
//! All caps in this crate are measured in Unicode scalar values, never bytes.

use alloc::string::String;

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Rough token estimate used when a backend does not report usage:
/// one token per four characters, rounded up.
pub fn estimate_tokens(s: &str) -> u64 {
    (char_len(s) as u64).div_ceil(4)
}

/// Keep the first `max_chars` characters of `s`. When anything is cut the
/// result ends with `…` and still fits in `max_chars`.
pub fn truncate_with_ellipsis(s: &str, max_chars: usize) -> String {
    if char_len(s) <= max_chars {
        return String::from(s);
    }
    if max_chars == 0 {
        return String::new();
    }
    let mut out: String = s.chars().take(max_chars - 1).collect();
    out.push('…');
    out
}

/// Keep the last `max_chars` characters of `s`, prefixing `…` when cut.
pub fn keep_tail(s: &str, max_chars: usize) -> String {
    let n = char_len(s);
    if n <= max_chars {
        return String::from(s);
    }
    if max_chars == 0 {
        return String::new();
    }
    let mut out = String::from("…");
    out.extend(s.chars().skip(n - (max_chars - 1)));
    out
}
