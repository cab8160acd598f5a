//! JSON helpers shared by every file and wire format.
//!
//! Floats are written with at least nine significant digits (and never fewer
//! than the shortest round-trip representation requires), so a value read
//! back is bit-identical to the one written.

use std::io;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::FormatError;

const MIN_SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Default, Clone, Copy)]
pub struct PaddedFloatFormatter;

impl Formatter for PaddedFloatFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(format_f64(value as f64).as_bytes())
    }
}

/// Shortest round-trip decimal for `value`, zero-padded to nine significant digits.
pub fn format_f64(value: f64) -> String {
    if value == 0.0 {
        return if value.is_sign_negative() { "-0.000000000".into() } else { "0.000000000".into() };
    }
    let repr = format!("{value:?}");
    let (mantissa, exponent) = match repr.find('e') {
        Some(pos) => (&repr[..pos], Some(&repr[pos + 1..])),
        None => (repr.as_str(), None),
    };
    let significant = mantissa
        .chars()
        .filter(|c| c.is_ascii_digit())
        .skip_while(|&c| c == '0')
        .count();
    let mut out = mantissa.to_string();
    if significant < MIN_SIGNIFICANT_DIGITS {
        if !out.contains('.') {
            out.push('.');
        }
        out.extend(std::iter::repeat('0').take(MIN_SIGNIFICANT_DIGITS - significant));
    }
    if let Some(exp) = exponent {
        out.push('e');
        out.push_str(exp);
    }
    out
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PaddedFloatFormatter);
    // Serialization of our own types into memory cannot fail: no maps with
    // non-string keys and no fallible Serialize impls.
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    buf
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("serde_json emits UTF-8")
}

/// Deserialize with a field path and byte offset attached to any failure.
pub fn from_str<T: DeserializeOwned>(input: &str) -> Result<T, FormatError> {
    from_str_at(input, 0)
}

/// Like [`from_str`] but reports offsets relative to a larger document
/// (used for JSON Lines, where `base` is the line's starting byte).
pub fn from_str_at<T: DeserializeOwned>(input: &str, base: usize) -> Result<T, FormatError> {
    let mut de = serde_json::Deserializer::from_str(input);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        FormatError::Syntax {
            offset: base + byte_offset(input, inner.line(), inner.column()),
            path,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|inner| FormatError::Syntax {
        offset: base + byte_offset(input, inner.line(), inner.column()),
        path: ".".into(),
        message: inner.to_string(),
    })?;
    Ok(value)
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

/// Splits a JSON Lines document into `(byte offset, line)` pairs, skipping blank lines.
pub fn jsonl_lines(input: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    input.split_inclusive('\n').filter_map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            None
        } else {
            Some((start, line))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_short_floats() {
        assert_eq!(format_f64(0.2), "0.200000000");
        assert_eq!(format_f64(30.0), "30.0000000");
        assert_eq!(format_f64(-2.5), "-2.50000000");
        assert_eq!(format_f64(0.0), "0.000000000");
        assert_eq!(format_f64(1e-10), "1.00000000e-10");
    }

    #[test]
    fn keeps_long_floats() {
        let v = 0.1 + 0.2;
        assert_eq!(format_f64(v), "0.30000000000000004");
        assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn error_carries_offset_and_path() {
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Inner {
            a: u32,
        }
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Outer {
            inner: Inner,
        }
        let doc = "{\"inner\": {\"a\": \"x\"}}";
        match from_str::<Outer>(doc) {
            Err(FormatError::Syntax { offset, path, .. }) => {
                assert_eq!(path, "inner.a");
                assert!(offset > 10 && offset <= doc.len(), "offset {offset}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn float_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = format_f64(v);
            let back: f64 = text.parse().unwrap();
            proptest::prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
