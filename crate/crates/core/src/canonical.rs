//! Canonical serialization: JSON objects with lexicographically sorted keys,
//! UTF-8, no insignificant whitespace. Every signature and digest in the
//! engine is computed over these bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("non-integer numbers are not allowed in canonical documents")]
    FloatingPoint,
}

/// Hex-encoded SHA-256 of the input.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical bytes.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    digest_hex(&to_bytes(value))
}

fn reject_floats(value: &Value) -> Result<(), CanonicalError> {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => Err(CanonicalError::FloatingPoint),
        Value::Array(items) => items.iter().try_for_each(reject_floats),
        Value::Object(map) => map.values().try_for_each(reject_floats),
        _ => Ok(()),
    }
}

/// Canonical bytes. `serde_json::Map` is ordered by key, so compact output
/// of a `Value` is already sorted.
pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("model types always serialize");
    serde_json::to_vec(&v).expect("values always serialize")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_bytes(value)).expect("canonical JSON is UTF-8")
}

/// Parses any JSON text into a `Value`, rejecting floating point numbers.
pub fn parse_value(bytes: &[u8]) -> Result<Value, CanonicalError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    reject_floats(&v)?;
    Ok(v)
}

pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let v = parse_value(bytes)?;
    serde_json::from_value(v).map_err(|e| CanonicalError::Malformed(e.to_string()))
}

pub fn from_value<T: DeserializeOwned>(v: Value) -> Result<T, CanonicalError> {
    reject_floats(&v)?;
    serde_json::from_value(v).map_err(|e| CanonicalError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_compact() {
        let v = json!({"b": 1, "a": {"d": [1, 2], "c": "x"}});
        assert_eq!(to_string(&v), r#"{"a":{"c":"x","d":[1,2]},"b":1}"#);
    }

    #[test]
    fn floats_rejected() {
        assert!(matches!(parse_value(br#"{"a":1.5}"#), Err(CanonicalError::FloatingPoint)));
        assert!(parse_value(br#"{"a":15}"#).is_ok());
        assert!(parse_value(b"{\"a\":").is_err());
    }

    #[test]
    fn digest_is_sha256() {
        assert_eq!(
            digest_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
