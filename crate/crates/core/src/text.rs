//! Canonical contract text.
//!
//! Two copies of "the same contract" must hash identically regardless of the
//! platform they were typed on, so every text is normalized before hashing:
//! CRLF and lone CR become LF, and a non-empty text ends in exactly one LF.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Input bytes were not valid UTF-8.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("contract text is not valid UTF-8 (first bad byte at offset {offset})")]
pub struct EncodingError {
    pub offset: usize,
}

/// A contract text in canonical form. Contains no CR bytes; a non-empty
/// text ends with exactly one LF.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub struct CanonicalText(String);

impl CanonicalText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl From<CanonicalText> for String {
    fn from(t: CanonicalText) -> String {
        t.0
    }
}

// Deserializing re-canonicalizes, so a `CanonicalText` can never hold a
// non-canonical string.
impl From<String> for CanonicalText {
    fn from(s: String) -> Self {
        canonicalize(&s)
    }
}

impl fmt::Display for CanonicalText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Normalizes line endings and the trailing newline.
pub fn canonicalize(text: &str) -> CanonicalText {
    let mut out = String::with_capacity(text.len() + 1);
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    let body_len = out.trim_end_matches('\n').len();
    out.truncate(body_len);
    if !out.is_empty() {
        out.push('\n');
    }
    CanonicalText(out)
}

/// Like [`canonicalize`] but starting from raw bytes.
pub fn canonicalize_bytes(bytes: &[u8]) -> Result<CanonicalText, EncodingError> {
    core::str::from_utf8(bytes)
        .map(canonicalize)
        .map_err(|e| EncodingError {
            offset: e.valid_up_to(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crlf_becomes_lf_with_trailing_newline() {
        assert_eq!(canonicalize("a\r\nb").as_str(), "a\nb\n");
    }

    #[test]
    fn canonical_input_is_unchanged() {
        assert_eq!(canonicalize("a\nb\n").as_str(), "a\nb\n");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(canonicalize("").as_str(), "");
        assert!(canonicalize("\n\r\n").is_empty());
    }

    #[test]
    fn lone_cr_and_extra_trailing_newlines() {
        assert_eq!(canonicalize("a\rb\r").as_str(), "a\nb\n");
        assert_eq!(canonicalize("a\n\n\n").as_str(), "a\n");
        assert_eq!(canonicalize("\r\r\nx").as_str(), "\n\nx\n");
    }

    #[test]
    fn invalid_utf8_is_an_encoding_error() {
        let err = canonicalize_bytes(b"ok\xff").unwrap_err();
        assert_eq!(err.offset, 2);
        assert_eq!(canonicalize_bytes(b"ok").unwrap().as_str(), "ok\n");
    }

    proptest::proptest! {
        #[test]
        fn canonical_form_is_idempotent_and_cr_free(s in "(?s).{0,200}") {
            let once = canonicalize(&s);
            proptest::prop_assert!(!once.as_str().contains('\r'));
            if !once.is_empty() {
                proptest::prop_assert!(once.as_str().ends_with('\n'));
                proptest::prop_assert!(!once.as_str().ends_with("\n\n"));
            }
            proptest::prop_assert_eq!(canonicalize(once.as_str()), once);
        }
    }
}
