//! Typed values used on the evaluation path.
//!
//! Decimals are exact base-10 numbers (arbitrary precision mantissa plus a
//! scale). Binary floating point never appears here.

use std::cmp::Ordering;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, SecondsFormat, Utc};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Closed set of value kinds a semantic identifier can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    StringId,
    StringCode,
    Timestamp,
    Decimal,
    Integer,
    Uri,
    IpAddress,
}

impl SemanticType {
    pub const ALL: [SemanticType; 7] = [
        SemanticType::StringId,
        SemanticType::StringCode,
        SemanticType::Timestamp,
        SemanticType::Decimal,
        SemanticType::Integer,
        SemanticType::Uri,
        SemanticType::IpAddress,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::StringId => "string_id",
            SemanticType::StringCode => "string_code",
            SemanticType::Timestamp => "timestamp",
            SemanticType::Decimal => "decimal",
            SemanticType::Integer => "integer",
            SemanticType::Uri => "uri",
            SemanticType::IpAddress => "ip_address",
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("cannot parse {text:?} as {kind}")]
    Parse { kind: SemanticType, text: String },
    #[error("expected a {expected} value, found {found}")]
    Type {
        expected: SemanticType,
        found: SemanticType,
    },
}

/// Exact decimal: `mantissa * 10^-scale`, kept normalized (no trailing
/// fractional zeros) so structural equality is numeric equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Decimal {
    mantissa: BigInt,
    scale: u32,
}

impl Decimal {
    pub fn zero() -> Self {
        Decimal {
            mantissa: BigInt::zero(),
            scale: 0,
        }
    }

    pub fn from_i64(v: i64) -> Self {
        Decimal {
            mantissa: BigInt::from(v),
            scale: 0,
        }
    }

    fn normalized(mut mantissa: BigInt, mut scale: u32) -> Self {
        let ten = BigInt::from(10);
        while scale > 0 && (&mantissa % &ten).is_zero() {
            mantissa /= &ten;
            scale -= 1;
        }
        if mantissa.is_zero() {
            scale = 0;
        }
        Decimal { mantissa, scale }
    }

    fn rescaled(&self, scale: u32) -> BigInt {
        debug_assert!(scale >= self.scale);
        &self.mantissa * BigInt::from(10).pow(scale - self.scale)
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.mantissa.is_positive()
    }

    pub fn checked_add(&self, other: &Decimal) -> Decimal {
        let scale = self.scale.max(other.scale);
        Decimal::normalized(self.rescaled(scale) + other.rescaled(scale), scale)
    }

    pub fn checked_sub(&self, other: &Decimal) -> Decimal {
        let scale = self.scale.max(other.scale);
        Decimal::normalized(self.rescaled(scale) - other.rescaled(scale), scale)
    }

    /// Number of significant digits in the normalized mantissa.
    pub fn significant_digits(&self) -> usize {
        let s = self.mantissa.abs().to_string();
        if s == "0" {
            1
        } else {
            s.len()
        }
    }

    /// Splits `self` into `parts` non-negative integer-valued shares using the
    /// largest-remainder rule at the decimal's own scale. Earlier slots take
    /// the leftover units.
    pub fn split_even(&self, parts: usize) -> Vec<Decimal> {
        assert!(parts > 0);
        let n = BigInt::from(parts);
        let q = &self.mantissa / &n;
        let r = &self.mantissa % &n;
        let r: usize = r.to_string().parse().unwrap_or(0);
        (0..parts)
            .map(|i| {
                let m = if i < r { &q + 1 } else { q.clone() };
                Decimal::normalized(m, self.scale)
            })
            .collect()
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        self.rescaled(scale).cmp(&other.rescaled(scale))
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FromStr for Decimal {
    type Err = ValueError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || ValueError::Parse {
            kind: SemanticType::Decimal,
            text: text.to_string(),
        };
        let (negative, body) = match text.as_bytes().first() {
            Some(b'-') => (true, &text[1..]),
            Some(b'+') => (false, &text[1..]),
            _ => (false, text),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if body.ends_with('.') && frac_part.is_empty() && body.contains('.') {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let mut mantissa = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| err())?;
        if negative {
            mantissa = -mantissa;
        }
        Ok(Decimal::normalized(mantissa, frac_part.len() as u32))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = self.mantissa.abs().to_string();
        let sign = if self.mantissa.is_negative() { "-" } else { "" };
        if self.scale == 0 {
            return write!(f, "{sign}{digits}");
        }
        let scale = self.scale as usize;
        let padded = if digits.len() <= scale {
            format!("{}{}", "0".repeat(scale - digits.len() + 1), digits)
        } else {
            digits
        };
        let (i, frac) = padded.split_at(padded.len() - scale);
        write!(f, "{sign}{i}.{frac}")
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Decimal({self})")
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An absolute instant. Stored as UTC; the offset it was written with is
/// kept for diagnostics only and does not take part in comparisons.
#[derive(Clone, Copy)]
pub struct Timestamp {
    utc: DateTime<Utc>,
    offset_seconds: i32,
}

impl Timestamp {
    pub fn from_utc(utc: DateTime<Utc>) -> Self {
        Timestamp {
            utc,
            offset_seconds: 0,
        }
    }

    pub fn from_unix(seconds: i64) -> Self {
        Timestamp::from_utc(DateTime::from_timestamp(seconds, 0).expect("unix seconds in range"))
    }

    pub fn now() -> Self {
        Timestamp::from_utc(Utc::now())
    }

    pub fn utc(&self) -> DateTime<Utc> {
        self.utc
    }

    pub fn original_offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.offset_seconds).unwrap_or(FixedOffset::east_opt(0).unwrap())
    }

    pub fn unix_seconds(&self) -> i64 {
        self.utc.timestamp()
    }

    pub fn plus_seconds(&self, seconds: i64) -> Timestamp {
        Timestamp::from_utc(self.utc + chrono::Duration::seconds(seconds))
    }

    /// Whole seconds from `earlier` to `self` (negative if `earlier` is later).
    pub fn seconds_since(&self, earlier: &Timestamp) -> i64 {
        (self.utc - earlier.utc).num_seconds()
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.utc == other.utc
    }
}

impl Eq for Timestamp {}

impl std::hash::Hash for Timestamp {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.utc.hash(state)
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.utc.cmp(&other.utc)
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FromStr for Timestamp {
    type Err = ValueError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let parsed = DateTime::parse_from_rfc3339(text).map_err(|_| ValueError::Parse {
            kind: SemanticType::Timestamp,
            text: text.to_string(),
        })?;
        Ok(Timestamp {
            utc: parsed.with_timezone(&Utc),
            offset_seconds: parsed.offset().local_minus_utc(),
        })
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.utc.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A value tagged with its semantic type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypedValue {
    StringId(String),
    StringCode(String),
    Timestamp(Timestamp),
    Decimal(Decimal),
    Integer(i64),
    Uri(String),
    IpAddress(IpAddr),
}

impl TypedValue {
    pub fn kind(&self) -> SemanticType {
        match self {
            TypedValue::StringId(_) => SemanticType::StringId,
            TypedValue::StringCode(_) => SemanticType::StringCode,
            TypedValue::Timestamp(_) => SemanticType::Timestamp,
            TypedValue::Decimal(_) => SemanticType::Decimal,
            TypedValue::Integer(_) => SemanticType::Integer,
            TypedValue::Uri(_) => SemanticType::Uri,
            TypedValue::IpAddress(_) => SemanticType::IpAddress,
        }
    }

    pub fn expect_kind(&self, expected: SemanticType) -> Result<&Self, ValueError> {
        if self.kind() == expected {
            Ok(self)
        } else {
            Err(ValueError::Type {
                expected,
                found: self.kind(),
            })
        }
    }

    /// Numeric view used by numeric constraints; integers compare exactly.
    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            TypedValue::Decimal(d) => Some(d.clone()),
            TypedValue::Integer(i) => Some(Decimal::from_i64(*i)),
            _ => None,
        }
    }

    /// String view used by enumerated and pattern constraints.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            TypedValue::StringId(s) | TypedValue::StringCode(s) | TypedValue::Uri(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<Timestamp> {
        match self {
            TypedValue::Timestamp(t) => Some(*t),
            _ => None,
        }
    }

    pub fn canonical_text(&self) -> String {
        match self {
            TypedValue::StringId(s) | TypedValue::StringCode(s) | TypedValue::Uri(s) => s.clone(),
            TypedValue::Timestamp(t) => t.to_string(),
            TypedValue::Decimal(d) => d.to_string(),
            TypedValue::Integer(i) => i.to_string(),
            TypedValue::IpAddress(ip) => ip.to_string(),
        }
    }
}

pub fn is_valid_identifier(text: &str) -> bool {
    !text.is_empty() && !text.chars().any(char::is_control)
}

fn is_valid_code(text: &str) -> bool {
    !text.is_empty() && text.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn is_valid_uri(text: &str) -> bool {
    let Some((scheme, rest)) = text.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        && !rest.is_empty()
        && !text.chars().any(|c| c.is_control() || c == ' ')
}

/// Parses `text` as a value of `kind`, rejecting anything lossy or ambiguous.
pub fn parse_typed_value(text: &str, kind: SemanticType) -> Result<TypedValue, ValueError> {
    let err = || ValueError::Parse {
        kind,
        text: text.to_string(),
    };
    match kind {
        SemanticType::StringId if is_valid_identifier(text) => Ok(TypedValue::StringId(text.to_string())),
        SemanticType::StringCode if is_valid_code(text) => Ok(TypedValue::StringCode(text.to_string())),
        SemanticType::Uri if is_valid_uri(text) => Ok(TypedValue::Uri(text.to_string())),
        SemanticType::Timestamp => text.parse().map(TypedValue::Timestamp),
        SemanticType::Decimal => text.parse().map(TypedValue::Decimal),
        SemanticType::Integer => {
            let ok = {
                let digits = text.strip_prefix('-').unwrap_or(text);
                !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
            };
            if !ok {
                return Err(err());
            }
            text.parse::<i64>().map(TypedValue::Integer).map_err(|_| err())
        }
        SemanticType::IpAddress => text.parse::<IpAddr>().map(TypedValue::IpAddress).map_err(|_| err()),
        _ => Err(err()),
    }
}

#[derive(Serialize, Deserialize)]
struct TypedValueWire {
    #[serde(rename = "type")]
    kind: SemanticType,
    value: String,
}

impl Serialize for TypedValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TypedValueWire {
            kind: self.kind(),
            value: self.canonical_text(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TypedValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = TypedValueWire::deserialize(d)?;
        parse_typed_value(&wire.value, wire.kind).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn decimal_parse_examples() {
        assert_eq!(parse_typed_value("3200", SemanticType::Decimal).unwrap(), TypedValue::Decimal(Decimal::from_i64(3200)));
        assert!(matches!(
            parse_typed_value("3.14.15", SemanticType::Decimal),
            Err(ValueError::Parse { .. })
        ));
        for bad in ["", "-", ".", "1.", "1e5", "1,000", " 1", "NaN", "inf", "+-1"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn decimal_sum_is_exact() {
        assert_eq!(dec("0.1").checked_add(&dec("0.2")), dec("0.3"));
        assert_eq!(dec("0.1").checked_add(&dec("0.2")).cmp(&dec("0.3")), Ordering::Equal);
    }

    #[test]
    fn decimal_normalizes() {
        assert_eq!(dec("1.500"), dec("1.5"));
        assert_eq!(dec("-0.0").to_string(), "0");
        assert_eq!(dec(".5").to_string(), "0.5");
        assert_eq!(dec("-0.05").to_string(), "-0.05");
        assert!(dec("10") > dec("9.999"));
    }

    #[test]
    fn decimal_roundtrips_38_digits() {
        let text = "12345678901234567890.123456789012345678";
        assert_eq!(dec(text).significant_digits(), 38);
        assert_eq!(dec(text).to_string(), text);
    }

    #[test]
    fn largest_remainder_split() {
        let parts = dec("100").split_even(3);
        assert_eq!(parts, vec![dec("34"), dec("33"), dec("33")]);
        let total = parts.iter().fold(Decimal::zero(), |a, b| a.checked_add(b));
        assert_eq!(total, dec("100"));
    }

    #[test]
    fn timestamp_requires_offset() {
        let t = parse_typed_value("2026-04-18T14:32:00Z", SemanticType::Timestamp).unwrap();
        assert_eq!(t.canonical_text(), "2026-04-18T14:32:00Z");
        assert!("2026-04-18T14:32:00".parse::<Timestamp>().is_err());
        assert!("2026-04-18".parse::<Timestamp>().is_err());
        let shifted: Timestamp = "2026-04-18T16:32:00+02:00".parse().unwrap();
        assert_eq!(shifted, "2026-04-18T14:32:00Z".parse().unwrap());
        assert_eq!(shifted.original_offset().local_minus_utc(), 7200);
    }

    #[test]
    fn other_kinds() {
        assert!(parse_typed_value("ledger://x", SemanticType::Uri).is_ok());
        assert!(parse_typed_value("no scheme", SemanticType::Uri).is_err());
        assert!(parse_typed_value("USD", SemanticType::StringCode).is_ok());
        assert!(parse_typed_value("U SD", SemanticType::StringCode).is_err());
        assert!(parse_typed_value("10.0.0.1", SemanticType::IpAddress).is_ok());
        assert!(parse_typed_value("12.5", SemanticType::Integer).is_err());
        assert!(parse_typed_value("a\u{7}b", SemanticType::StringId).is_err());
        let v = parse_typed_value("7", SemanticType::Integer).unwrap();
        assert!(matches!(v.expect_kind(SemanticType::Decimal), Err(ValueError::Type { .. })));
    }

    proptest::proptest! {
        #[test]
        fn decimal_text_roundtrip(int in "-?[1-9][0-9]{0,18}", frac in "[0-9]{0,19}") {
            let text = if frac.is_empty() { int.clone() } else { format!("{int}.{frac}") };
            let d: Decimal = text.parse().unwrap();
            let again: Decimal = d.to_string().parse().unwrap();
            proptest::prop_assert_eq!(&d, &again);
            proptest::prop_assert_eq!(d.to_string(), again.to_string());
        }

        #[test]
        fn decimal_order_matches_integers(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000) {
            proptest::prop_assert_eq!(Decimal::from_i64(a).cmp(&Decimal::from_i64(b)), a.cmp(&b));
            proptest::prop_assert_eq!(Decimal::from_i64(a).checked_add(&Decimal::from_i64(b)), Decimal::from_i64(a + b));
        }
    }
}
