//! Property runners for the CN codec and URI normalization.

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use pushsync::channel::ChannelPath;
use pushsync::digest::Digest;
use pushsync::notification::{decode_cn, encode_cn, ChangeNotification, EventKind};
use pushsync::uri::{normalize_uri, NormalizedUri};

fn runner(cases: u32, seed_tag: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &[seed_tag; 32]),
    )
}

fn segment() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.~-]{1,8}"
}

pub fn channel_strategy() -> impl Strategy<Value = ChannelPath> {
    prop::collection::vec(segment(), 1..4).prop_map(|s| ChannelPath::new(s).expect("valid segments"))
}

/// A raw URI mixing unreserved, reserved, non-ASCII characters and escapes.
pub fn raw_uri_strategy() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[A-Za-z0-9_.~-]{1,6}",
        "[:/?#@!$&'()*+,;=]",
        "[éüñßø中]",
        "%[0-9a-fA-F]{2}",
    ];
    ("(http|https)", prop::collection::vec(piece, 0..10))
        .prop_map(|(scheme, parts)| format!("{scheme}://ex.org/{}", parts.concat()))
}

pub fn cn_strategy() -> impl Strategy<Value = ChangeNotification> {
    (
        any::<u64>(),
        0..3u8,
        raw_uri_strategy(),
        any::<u64>(),
        channel_strategy(),
        prop::collection::vec(any::<u8>(), 0..32),
    )
        .prop_map(|(seq, k, raw, t, channel, body)| {
            let kind = [EventKind::Create, EventKind::Update, EventKind::Delete][k as usize];
            let digest = (kind != EventKind::Delete).then(|| Digest::of(&body));
            let uri = normalize_uri(&raw).expect("strategy yields valid URIs");
            ChangeNotification::new(seq, kind, uri, t, channel, digest).expect("consistent digest")
        })
}

/// Encode/decode round trip over `cases` random CNs.
pub fn codec_round_trip(cases: u32) -> Result<u32, String> {
    let mut r = runner(cases, 8);
    r.run(&cn_strategy(), |cn| {
        let frame = encode_cn(&cn);
        prop_assert_eq!(*frame.last().unwrap(), b'\n');
        prop_assert_eq!(frame.len(), cn.frame_len());
        let back = decode_cn(&frame).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, cn);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok(cases)
}

const KEEP: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~')
    .remove(b':')
    .remove(b'/')
    .remove(b'?')
    .remove(b'#')
    .remove(b'[')
    .remove(b']')
    .remove(b'@')
    .remove(b'!')
    .remove(b'$')
    .remove(b'&')
    .remove(b'\'')
    .remove(b'(')
    .remove(b')')
    .remove(b'*')
    .remove(b'+')
    .remove(b',')
    .remove(b';')
    .remove(b'=')
    .remove(b'%');

fn unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"-._~".contains(&b)
}

/// Independent normalization built on the `percent-encoding` crate:
/// escapes of unreserved bytes decode, other escapes are uppercased, raw
/// bytes outside the URI repertoire are encoded.
pub fn oracle_normalize(raw: &str) -> String {
    let mut out = String::new();
    let mut rest = raw;
    while !rest.is_empty() {
        match rest.find('%') {
            Some(0) => {
                let esc = &rest[..3];
                let byte: Vec<u8> = percent_decode_str(esc).collect();
                if unreserved(byte[0]) {
                    out.push(byte[0] as char);
                } else {
                    out.extend(percent_encoding::percent_encode(&byte, NON_ALPHANUMERIC));
                }
                rest = &rest[3..];
            }
            Some(i) => {
                out.extend(utf8_percent_encode(&rest[..i], KEEP));
                rest = &rest[i..];
            }
            None => {
                out.extend(utf8_percent_encode(rest, KEEP));
                rest = "";
            }
        }
    }
    out
}

/// One character of a logical URI path and the ways it may be spelled.
#[derive(Debug, Clone)]
pub enum Glyph {
    /// Unreserved: raw, or escaped in either hex case.
    Unreserved(char),
    /// Reserved: a raw reserved character is a different URI from its escape.
    Reserved(char),
    /// An escaped reserved character, hex case free.
    EscapedReserved(char),
    /// Non-ASCII: raw UTF-8 or escaped bytes in either hex case.
    NonAscii(char),
}

fn glyph() -> impl Strategy<Value = Glyph> {
    prop_oneof![
        "[A-Za-z0-9_.~-]".prop_map(|s| Glyph::Unreserved(s.chars().next().unwrap())),
        "[/?@!$&'()*+,;=]".prop_map(|s| Glyph::Reserved(s.chars().next().unwrap())),
        "[/?@&,;=]".prop_map(|s| Glyph::EscapedReserved(s.chars().next().unwrap())),
        "[éüñßø中]".prop_map(|s| Glyph::NonAscii(s.chars().next().unwrap())),
    ]
}

fn escape(c: char, lower: bool) -> String {
    let mut buf = [0u8; 4];
    c.encode_utf8(&mut buf)
        .bytes()
        .map(|b| {
            if lower {
                format!("%{b:02x}")
            } else {
                format!("%{b:02X}")
            }
        })
        .collect()
}

/// Spells `glyphs`; bit `i` of `choice` picks the alternative for glyph `i`.
pub fn spell(glyphs: &[Glyph], choice: u64) -> String {
    let mut out = String::from("http://ex.org/");
    for (i, g) in glyphs.iter().enumerate() {
        let bits = (choice >> (2 * (i % 32))) & 3;
        match g {
            Glyph::Unreserved(c) | Glyph::NonAscii(c) => match bits {
                0 => out.push(*c),
                1 => out.push_str(&escape(*c, true)),
                _ => out.push_str(&escape(*c, false)),
            },
            Glyph::Reserved(c) => out.push(*c),
            Glyph::EscapedReserved(c) => out.push_str(&escape(*c, bits & 1 == 1)),
        }
    }
    out
}

/// Idempotence, agreement with the oracle, and convergence of two random
/// spellings of the same logical URI, over `cases` inputs each.
pub fn uri_properties(cases: u32) -> Result<u32, String> {
    let mut r = runner(cases, 9);
    r.run(&raw_uri_strategy(), |raw| {
        let n = normalize_uri(&raw).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let again: NormalizedUri = normalize_uri(n.as_str()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&again, &n);
        prop_assert_eq!(n.as_str(), oracle_normalize(&raw));
        Ok(())
    })
    .map_err(|e| e.to_string())?;

    let mut r = runner(cases, 10);
    let strategy = (prop::collection::vec(glyph(), 1..12), any::<u64>(), any::<u64>());
    r.run(&strategy, |(glyphs, a, b)| {
        let x = normalize_uri(&spell(&glyphs, a)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let y = normalize_uri(&spell(&glyphs, b)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&x, &y);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok(cases)
}
