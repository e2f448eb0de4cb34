//! Percent-encoding normalization for resource URIs.
//!
//! Resources are keyed by URI everywhere (Source store, CNs, replica file
//! names), so two spellings of the same identifier must collapse to one key.
//! Normalization decodes percent-encoded unreserved characters, encodes every
//! byte that is neither unreserved nor reserved, and upper-cases hex digits.
//! Already-encoded reserved characters stay encoded: `%2F` and `/` are
//! different URIs.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("malformed URI {raw:?}: {reason}")]
    Malformed { raw: String, reason: &'static str },
}

impl UriError {
    fn new(raw: &str, reason: &'static str) -> Self {
        UriError::Malformed {
            raw: raw.to_owned(),
            reason,
        }
    }
}

/// An absolute URI in canonical percent-encoded form.
///
/// The canonical form is pure ASCII and never contains whitespace or control
/// characters, so it is safe to embed in tab-separated frames.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NormalizedUri(String);

impl NormalizedUri {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for NormalizedUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for NormalizedUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_uri(s)
    }
}

impl AsRef<str> for NormalizedUri {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

fn is_reserved(b: u8) -> bool {
    matches!(
        b,
        b':' | b'/'
            | b'?'
            | b'#'
            | b'['
            | b']'
            | b'@'
            | b'!'
            | b'$'
            | b'&'
            | b'\''
            | b'('
            | b')'
            | b'*'
            | b'+'
            | b','
            | b';'
            | b'='
    )
}

fn hex_value(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

fn push_encoded(out: &mut String, b: u8) {
    const HEX: &[u8; 16] = b"0123456789ABCDEF";
    out.push('%');
    out.push(HEX[(b >> 4) as usize] as char);
    out.push(HEX[(b & 0x0F) as usize] as char);
}

fn check_scheme(raw: &str) -> Result<usize, UriError> {
    let colon = raw.find(':').ok_or_else(|| UriError::new(raw, "missing scheme"))?;
    let scheme = &raw.as_bytes()[..colon];
    let valid = !scheme.is_empty()
        && scheme[0].is_ascii_alphabetic()
        && scheme
            .iter()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'+' | b'-' | b'.'));
    if !valid {
        return Err(UriError::new(raw, "invalid scheme"));
    }
    if colon + 1 == raw.len() {
        return Err(UriError::new(raw, "empty hierarchical part"));
    }
    Ok(colon)
}

/// Returns the canonical form of `raw`.
///
/// Fails on a missing or invalid scheme, control characters or whitespace,
/// and a `%` that is not followed by two hex digits.
pub fn normalize_uri(raw: &str) -> Result<NormalizedUri, UriError> {
    check_scheme(raw)?;
    let bytes = raw.as_bytes();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'%' {
            let hi = bytes.get(i + 1).copied().and_then(hex_value);
            let lo = bytes.get(i + 2).copied().and_then(hex_value);
            let (Some(hi), Some(lo)) = (hi, lo) else {
                return Err(UriError::new(raw, "truncated percent escape"));
            };
            let decoded = (hi << 4) | lo;
            if is_unreserved(decoded) {
                out.push(decoded as char);
            } else {
                push_encoded(&mut out, decoded);
            }
            i += 3;
            continue;
        }
        if b.is_ascii_control() || b == b' ' {
            return Err(UriError::new(raw, "whitespace or control character"));
        }
        if is_unreserved(b) || is_reserved(b) {
            out.push(b as char);
        } else {
            push_encoded(&mut out, b);
        }
        i += 1;
    }
    Ok(NormalizedUri(out))
}

/// Encodes a normalized URI into a single path component that is safe as a
/// file name: everything except unreserved characters is percent-encoded,
/// including `%` itself. The mapping is injective.
pub fn to_file_component(uri: &NormalizedUri) -> String {
    let mut out = String::with_capacity(uri.0.len() * 2);
    for &b in uri.0.as_bytes() {
        if is_unreserved(b) && b != b'.' {
            out.push(b as char);
        } else {
            push_encoded(&mut out, b);
        }
    }
    out
}

/// Inverse of [`to_file_component`].
pub fn from_file_component(name: &str) -> Result<NormalizedUri, UriError> {
    let bytes = name.as_bytes();
    let mut decoded = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hi = bytes.get(i + 1).copied().and_then(hex_value);
            let lo = bytes.get(i + 2).copied().and_then(hex_value);
            let (Some(hi), Some(lo)) = (hi, lo) else {
                return Err(UriError::new(name, "truncated percent escape in file name"));
            };
            decoded.push((hi << 4) | lo);
            i += 3;
        } else {
            decoded.push(bytes[i]);
            i += 1;
        }
    }
    let s = String::from_utf8(decoded).map_err(|_| UriError::new(name, "file name does not decode to UTF-8"))?;
    normalize_uri(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_case_is_uppercased() {
        let u = normalize_uri("http://ex.org/A%2fB").unwrap();
        assert_eq!(u.as_str(), "http://ex.org/A%2FB");
    }

    #[test]
    fn raw_and_encoded_non_ascii_converge() {
        let a = normalize_uri("http://ex.org/caf%C3%A9").unwrap();
        let b = normalize_uri("http://ex.org/café").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_str(), "http://ex.org/caf%C3%A9");
    }

    #[test]
    fn encoded_unreserved_is_decoded() {
        let u = normalize_uri("http://ex.org/%41b%7e").unwrap();
        assert_eq!(u.as_str(), "http://ex.org/Ab~");
    }

    #[test]
    fn encoded_reserved_stays_distinct_from_raw() {
        let enc = normalize_uri("http://ex.org/a%2Fb").unwrap();
        let raw = normalize_uri("http://ex.org/a/b").unwrap();
        assert_ne!(enc, raw);
    }

    #[test]
    fn percent_sign_is_never_double_encoded() {
        let once = normalize_uri("http://ex.org/100%25").unwrap();
        assert_eq!(once.as_str(), "http://ex.org/100%25");
        assert_eq!(normalize_uri(once.as_str()).unwrap(), once);
    }

    #[test]
    fn rejects_malformed() {
        for raw in [
            "",
            "no-scheme",
            "1http://x",
            "http:",
            "http://ex.org/a b",
            "http://ex.org/a\tb",
            "http://ex.org/%4",
            "http://ex.org/%zz",
        ] {
            assert!(normalize_uri(raw).is_err(), "{raw:?} should be rejected");
        }
    }

    #[test]
    fn file_component_round_trips() {
        let u = normalize_uri("http://dbpedia.org/resource/Caf%C3%A9_(band)?x=1").unwrap();
        let name = to_file_component(&u);
        assert!(!name.contains('/'));
        assert!(name != "." && name != "..");
        assert_eq!(from_file_component(&name).unwrap(), u);
    }
}
