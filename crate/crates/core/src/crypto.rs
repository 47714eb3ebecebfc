//! Keys and detached signatures over canonical bytes.
//!
//! Every signed document is a JSON object carrying a `signature` member:
//! `{"suite": 1, "signer": <hex public key>, "value": <hex signature>}`.
//! The signature covers the canonical bytes of the object with the
//! `signature` member removed. Suite 1 is Ed25519.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, Verifier};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical;

pub const SUITE_ED25519: u8 = 1;
pub const SIGNATURE_FIELD: &str = "signature";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignatureError {
    #[error("document has no signature")]
    Missing,
    #[error("unsupported signature suite {0}")]
    UnsupportedSuite(u8),
    #[error("malformed signature envelope: {0}")]
    Malformed(String),
    #[error("signature does not verify")]
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid key material: {0}")]
pub struct KeyError(pub String);

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        key.verify(message, &sig).is_ok()
    }
}

fn is_lower_hex(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl FromStr for PublicKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !is_lower_hex(s) {
            return Err(KeyError("public key must be lowercase hex".into()));
        }
        let bytes = hex::decode(s).map_err(|e| KeyError(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| KeyError("public key must be 32 bytes".into()))?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr).map_err(|e| KeyError(e.to_string()))?;
        Ok(PublicKey(arr))
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// An Ed25519 signing key derived from a 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: ed25519_dalek::SigningKey::from_bytes(&seed),
        }
    }

    /// Deterministic key for fixtures and tests: seed = SHA-256(label).
    pub fn from_label(label: &str) -> Self {
        let digest = canonical::digest_hex(label.as_bytes());
        let bytes: [u8; 32] = hex::decode(digest).unwrap().try_into().unwrap();
        KeyPair::from_seed(bytes)
    }

    pub fn generate() -> Self {
        let mut seed = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut seed);
        KeyPair::from_seed(seed)
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?})", self.public())
    }
}

/// On-disk key file. Secret files carry the seed; public files omit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub key_id: String,
    pub public_key: PublicKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
}

impl KeyFile {
    pub fn secret(key_id: &str, pair: &KeyPair) -> Self {
        KeyFile {
            key_id: key_id.to_string(),
            public_key: pair.public(),
            seed: Some(pair.seed_hex()),
        }
    }

    pub fn public_only(&self) -> Self {
        KeyFile {
            seed: None,
            ..self.clone()
        }
    }

    pub fn key_pair(&self) -> Result<KeyPair, KeyError> {
        let seed = self.seed.as_ref().ok_or_else(|| KeyError(format!("{} is a public key file", self.key_id)))?;
        let bytes = hex::decode(seed).map_err(|e| KeyError(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| KeyError("seed must be 32 bytes".into()))?;
        let pair = KeyPair::from_seed(arr);
        if pair.public() != self.public_key {
            return Err(KeyError(format!("{}: seed does not match public key", self.key_id)));
        }
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureEnvelope {
    pub suite: u8,
    pub signer: PublicKey,
    pub value: String,
}

fn signing_input(object: &Map<String, Value>) -> Vec<u8> {
    let mut unsigned = object.clone();
    unsigned.remove(SIGNATURE_FIELD);
    canonical::to_bytes(&Value::Object(unsigned))
}

/// Signs a JSON object in place, replacing any existing signature.
pub fn sign_object(object: &mut Map<String, Value>, key: &KeyPair) {
    let sig = key.sign(&signing_input(object));
    let envelope = SignatureEnvelope {
        suite: SUITE_ED25519,
        signer: key.public(),
        value: hex::encode(sig),
    };
    object.insert(SIGNATURE_FIELD.into(), serde_json::to_value(envelope).unwrap());
}

/// Serializes `body` (which must serialize to an object) and signs it.
pub fn sign_document<T: Serialize>(body: &T, key: &KeyPair) -> Value {
    let Value::Object(mut object) = serde_json::to_value(body).expect("serializable") else {
        panic!("signed documents must be JSON objects");
    };
    sign_object(&mut object, key);
    Value::Object(object)
}

/// Verifies the embedded signature and returns the signer. Whether the
/// signer is trusted is the caller's decision.
pub fn verify_object(object: &Map<String, Value>) -> Result<PublicKey, SignatureError> {
    let raw = object.get(SIGNATURE_FIELD).ok_or(SignatureError::Missing)?;
    let envelope: SignatureEnvelope =
        serde_json::from_value(raw.clone()).map_err(|e| SignatureError::Malformed(e.to_string()))?;
    if envelope.suite != SUITE_ED25519 {
        return Err(SignatureError::UnsupportedSuite(envelope.suite));
    }
    // Uppercase hex would decode to the same bytes, letting a document's
    // bytes change without invalidating it.
    if !is_lower_hex(&envelope.value) {
        return Err(SignatureError::Malformed("signature value must be lowercase hex".into()));
    }
    let sig = hex::decode(&envelope.value).map_err(|e| SignatureError::Malformed(e.to_string()))?;
    if envelope.signer.verify(&signing_input(object), &sig) {
        Ok(envelope.signer)
    } else {
        Err(SignatureError::Invalid)
    }
}

pub fn verify_value(value: &Value) -> Result<PublicKey, SignatureError> {
    match value {
        Value::Object(o) => verify_object(o),
        _ => Err(SignatureError::Malformed("not an object".into())),
    }
}

/// Verifies and additionally requires the signer to be one of `trusted`.
pub fn verify_value_by(value: &Value, trusted: &[PublicKey]) -> Result<PublicKey, SignatureError> {
    let signer = verify_value(value)?;
    if trusted.contains(&signer) {
        Ok(signer)
    } else {
        Err(SignatureError::Invalid)
    }
}

/// A parsed document together with the exact JSON it was parsed from, so
/// that signature checks and digests see every field, including ones the
/// typed view ignores.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDocument<T> {
    pub body: T,
    pub document: Value,
}

impl<T: serde::de::DeserializeOwned + Serialize> SignedDocument<T> {
    pub fn parse(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        let document = canonical::parse_value(bytes)?;
        Self::from_value(document)
    }

    pub fn from_value(document: Value) -> Result<Self, canonical::CanonicalError> {
        if !document.is_object() {
            return Err(canonical::CanonicalError::Malformed("document must be an object".into()));
        }
        let mut unsigned = document.clone();
        unsigned.as_object_mut().unwrap().remove(SIGNATURE_FIELD);
        let body = canonical::from_value(unsigned)?;
        Ok(SignedDocument { body, document })
    }

    pub fn sign(body: T, key: &KeyPair) -> Self {
        let document = sign_document(&body, key);
        SignedDocument { body, document }
    }

    pub fn verify(&self) -> Result<PublicKey, SignatureError> {
        verify_value(&self.document)
    }

    pub fn verify_by(&self, trusted: &[PublicKey]) -> Result<PublicKey, SignatureError> {
        verify_value_by(&self.document, trusted)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(&self.document)
    }

    pub fn digest(&self) -> String {
        canonical::digest_hex(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sign_then_verify() {
        let key = KeyPair::from_label("steward");
        let doc = sign_document(&json!({"b": 2, "a": "x"}), &key);
        assert_eq!(verify_value(&doc).unwrap(), key.public());
        assert!(verify_value_by(&doc, &[KeyPair::from_label("other").public()]).is_err());
    }

    #[test]
    fn tamper_breaks_signature() {
        let key = KeyPair::from_label("steward");
        let mut doc = sign_document(&json!({"a": "x"}), &key);
        doc["a"] = json!("y");
        assert_eq!(verify_value(&doc), Err(SignatureError::Invalid));
        doc.as_object_mut().unwrap().remove("signature");
        assert_eq!(verify_value(&doc), Err(SignatureError::Missing));
    }

    #[test]
    fn uppercase_hex_is_not_an_alias() {
        let key = KeyPair::from_label("steward");
        let doc = sign_document(&json!({"a": "x"}), &key);
        let mut upper = doc.clone();
        let v = upper["signature"]["value"].as_str().unwrap().to_uppercase();
        upper["signature"]["value"] = json!(v);
        assert!(matches!(verify_value(&upper), Err(SignatureError::Malformed(_))));
        let mut upper = doc;
        upper["signature"]["signer"] = json!(key.public().to_hex().to_uppercase());
        assert!(verify_value(&upper).is_err());
        assert!(key.public().to_hex().to_uppercase().parse::<PublicKey>().is_err());
    }

    #[test]
    fn signatures_are_deterministic() {
        let key = KeyPair::from_label("k");
        assert_eq!(sign_document(&json!({"a": 1}), &key), sign_document(&json!({"a": 1}), &key));
    }

    #[test]
    fn key_file_roundtrip() {
        let pair = KeyPair::from_label("issuer");
        let file = KeyFile::secret("iss", &pair);
        assert_eq!(file.key_pair().unwrap().public(), pair.public());
        assert!(file.public_only().key_pair().is_err());
    }
}
