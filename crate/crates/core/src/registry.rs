//! Signed trust registries: issuer standing per credential class and
//! profile, permitted state authorities, and vocabulary references.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::IssuerVetting;
use crate::crypto::{PublicKey, SignedDocument};
use crate::value::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standing {
    Active,
    Suspended,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerRecord {
    pub issuer_id: String,
    pub standing: Standing,
    pub credential_classes: BTreeSet<String>,
    pub profiles: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAuthorityRecord {
    pub pointer: String,
    pub profiles: BTreeSet<String>,
    /// Enforcer keys allowed to sign state vouchers under this authority.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub voucher_signers: Vec<PublicKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyRef {
    pub profile_id: String,
    pub version: u32,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustRegistry {
    pub registry_id: String,
    pub version: u64,
    pub issuers: Vec<IssuerRecord>,
    #[serde(default)]
    pub state_authorities: Vec<StateAuthorityRecord>,
    #[serde(default)]
    pub vocabulary_refs: Vec<VocabularyRef>,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
}

pub type SignedRegistry = SignedDocument<TrustRegistry>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("malformed registry: {0}")]
    Malformed(String),
    #[error("registry signature rejected: {0}")]
    BadSignature(String),
    #[error("registry {0} is outside its validity window")]
    OutOfWindow(String),
}

impl TrustRegistry {
    pub fn in_window(&self, now: Timestamp) -> bool {
        self.valid_from <= now && now <= self.valid_until
    }

    /// Active only if standing is active and both class and profile are
    /// listed for the issuer.
    pub fn issuer_standing(&self, issuer_id: &str, credential_class: &str, profile: &str) -> bool {
        self.issuers.iter().any(|i| {
            i.issuer_id == issuer_id
                && i.standing == Standing::Active
                && i.credential_classes.contains(credential_class)
                && i.profiles.contains(profile)
        })
    }

    pub fn state_authority_permitted(&self, pointer: &str, profile: &str) -> bool {
        self.state_authorities
            .iter()
            .any(|a| a.pointer == pointer && a.profiles.contains(profile))
    }

    fn check(&self) -> Result<(), RegistryError> {
        let mut seen = BTreeSet::new();
        for i in &self.issuers {
            if !seen.insert(&i.issuer_id) {
                return Err(RegistryError::Malformed(format!("duplicate issuer {}", i.issuer_id)));
            }
        }
        if self.valid_from > self.valid_until {
            return Err(RegistryError::Malformed("valid_from is after valid_until".into()));
        }
        Ok(())
    }
}

/// Parses, verifies against steward keys and checks the validity window.
pub fn load_registry(bytes: &[u8], steward_keys: &[PublicKey], now: Timestamp) -> Result<SignedRegistry, RegistryError> {
    let doc = SignedRegistry::parse(bytes).map_err(|e| RegistryError::Malformed(e.to_string()))?;
    admit_registry(doc, steward_keys, now)
}

pub fn admit_registry(doc: SignedRegistry, steward_keys: &[PublicKey], now: Timestamp) -> Result<SignedRegistry, RegistryError> {
    doc.verify_by(steward_keys)
        .map_err(|e| RegistryError::BadSignature(e.to_string()))?;
    doc.body.check()?;
    if !doc.body.in_window(now) {
        return Err(RegistryError::OutOfWindow(doc.body.registry_id.clone()));
    }
    Ok(doc)
}

/// The registries a receiver consults. During a transition several may be
/// loaded; a lookup succeeds if any registry that is both in its window and
/// accepted by the receiver grants it.
#[derive(Debug, Clone, Default)]
pub struct RegistrySet {
    pub registries: Vec<SignedRegistry>,
    /// Registry ids the receiver accepts (its manifest listing). `None`
    /// accepts every loaded registry.
    pub accepted: Option<BTreeSet<String>>,
}

impl RegistrySet {
    pub fn new(registries: Vec<SignedRegistry>) -> Self {
        RegistrySet {
            registries,
            accepted: None,
        }
    }

    pub fn usable(&self, now: Timestamp) -> impl Iterator<Item = &TrustRegistry> {
        self.registries
            .iter()
            .map(|r| &r.body)
            .filter(move |r| r.in_window(now))
            .filter(|r| self.accepted.as_ref().is_none_or(|a| a.contains(&r.registry_id)))
    }

    pub fn state_authority_permitted(&self, pointer: &str, profile: &str, now: Timestamp) -> bool {
        self.usable(now).any(|r| r.state_authority_permitted(pointer, profile))
    }

    pub fn voucher_signers(&self, pointer: &str, now: Timestamp) -> Vec<PublicKey> {
        self.usable(now)
            .flat_map(|r| r.state_authorities.iter())
            .filter(|a| a.pointer == pointer)
            .flat_map(|a| a.voucher_signers.iter().copied())
            .collect()
    }

    /// `registry_id@version` for each usable registry, for audit snapshots.
    pub fn versions(&self, now: Timestamp) -> Vec<String> {
        self.usable(now).map(|r| format!("{}@{}", r.registry_id, r.version)).collect()
    }
}

impl IssuerVetting for RegistrySet {
    fn issuer_active(&self, issuer_id: &str, credential_class: &str, profile: &str, now: Timestamp) -> bool {
        self.usable(now).any(|r| r.issuer_standing(issuer_id, credential_class, profile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;

    fn ts(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    fn registry(id: &str, until: &str) -> TrustRegistry {
        TrustRegistry {
            registry_id: id.into(),
            version: 1,
            issuers: vec![
                IssuerRecord {
                    issuer_id: "iss:megainsure".into(),
                    standing: Standing::Active,
                    credential_classes: ["agent-authorization".to_string()].into(),
                    profiles: ["insurance/1".to_string()].into(),
                },
                IssuerRecord {
                    issuer_id: "iss:suspended".into(),
                    standing: Standing::Suspended,
                    credential_classes: ["agent-authorization".to_string()].into(),
                    profiles: ["insurance/1".to_string()].into(),
                },
            ],
            state_authorities: vec![StateAuthorityRecord {
                pointer: "urn:ledger:acme".into(),
                profiles: ["insurance/1".to_string()].into(),
                voucher_signers: vec![],
            }],
            vocabulary_refs: vec![],
            valid_from: ts("2026-01-01T00:00:00Z"),
            valid_until: ts(until),
        }
    }

    #[test]
    fn load_checks_signature_and_window() {
        let steward = KeyPair::from_label("steward");
        let now = ts("2026-04-18T00:00:00Z");
        let doc = SignedRegistry::sign(registry("r1", "2026-12-31T00:00:00Z"), &steward);
        assert!(load_registry(&doc.to_bytes(), &[steward.public()], now).is_ok());
        assert!(matches!(
            load_registry(&doc.to_bytes(), &[KeyPair::from_label("x").public()], now),
            Err(RegistryError::BadSignature(_))
        ));
        let old = SignedRegistry::sign(registry("r0", "2026-02-01T00:00:00Z"), &steward);
        assert!(matches!(load_registry(&old.to_bytes(), &[steward.public()], now), Err(RegistryError::OutOfWindow(_))));
        assert!(matches!(load_registry(b"{", &[steward.public()], now), Err(RegistryError::Malformed(_))));
    }

    #[test]
    fn standing_lookups() {
        let r = registry("r1", "2026-12-31T00:00:00Z");
        assert!(r.issuer_standing("iss:megainsure", "agent-authorization", "insurance/1"));
        assert!(!r.issuer_standing("iss:suspended", "agent-authorization", "insurance/1"));
        assert!(!r.issuer_standing("iss:megainsure", "agent-authorization", "supplychain/1"));
        assert!(!r.issuer_standing("iss:nobody", "agent-authorization", "insurance/1"));
        assert!(r.state_authority_permitted("urn:ledger:acme", "insurance/1"));
        assert!(!r.state_authority_permitted("urn:ledger:rogue", "insurance/1"));
        assert!(!r.state_authority_permitted("urn:ledger:acme", "supplychain/1"));
    }

    #[test]
    fn transition_overlap_uses_accepted_registries() {
        let steward = KeyPair::from_label("steward");
        let old = registry("r-old", "2026-05-01T00:00:00Z");
        let mut new = registry("r-new", "2027-01-01T00:00:00Z");
        new.issuers.retain(|i| i.issuer_id != "iss:megainsure");
        let mut set = RegistrySet::new(vec![SignedRegistry::sign(old, &steward), SignedRegistry::sign(new, &steward)]);
        let during = ts("2026-04-18T00:00:00Z");
        let after = ts("2026-06-01T00:00:00Z");
        let active = |s: &RegistrySet, t| s.issuer_active("iss:megainsure", "agent-authorization", "insurance/1", t);
        assert!(active(&set, during));
        assert!(!active(&set, after));
        set.accepted = Some(["r-new".to_string()].into());
        assert!(!active(&set, during));
    }
}
