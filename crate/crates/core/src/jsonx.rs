//! Lenient JSON extraction from model output.
//!
//! LLM responses wrap their JSON in prose, markdown fences, or stray
//! tokens. These helpers scan for balanced `{...}` / `[...]` spans
//! (string- and escape-aware) and try to deserialize each candidate in
//! order of appearance, so the first parseable value wins.

use serde::de::DeserializeOwned;

/// Byte spans of balanced top-level JSON objects/arrays in `text`,
/// left to right. Nested values are not reported separately.
pub fn candidate_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let open = bytes[i];
        if open != b'{' && open != b'[' {
            i += 1;
            continue;
        }
        match balanced_end(bytes, i) {
            Some(end) => {
                spans.push((i, end + 1));
                i = end + 1;
            }
            None => i += 1,
        }
    }
    spans
}

/// Index of the byte closing the bracket opened at `start`, if balanced.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// First candidate span that deserializes as `T`.
pub fn first_json<T: DeserializeOwned>(text: &str) -> Option<T> {
    for (a, b) in candidate_spans(text) {
        if let Ok(v) = serde_json::from_str::<T>(&text[a..b]) {
            return Some(v);
        }
    }
    None
}

/// Like [`first_json`] but only considers spans starting with `[`.
pub fn first_json_array<T: DeserializeOwned>(text: &str) -> Option<T> {
    for (a, b) in candidate_spans(text) {
        if text.as_bytes()[a] == b'[' {
            if let Ok(v) = serde_json::from_str::<T>(&text[a..b]) {
                return Some(v);
            }
        }
    }
    None
}

/// Like [`first_json`] but only considers spans starting with `{`.
pub fn first_json_object<T: DeserializeOwned>(text: &str) -> Option<T> {
    for (a, b) in candidate_spans(text) {
        if text.as_bytes()[a] == b'{' {
            if let Ok(v) = serde_json::from_str::<T>(&text[a..b]) {
                return Some(v);
            }
        }
    }
    None
}
