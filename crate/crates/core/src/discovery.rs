//! Governance manifests: the receiver's signed statement of what it accepts,
//! and the sender-side pre-flight comparison against it.
//!
//! Manifests are plain files. The intended publishing location is
//! [`WELL_KNOWN_PATH`] on the receiver's origin.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::Constraint;
use crate::container::{Credential, DEFAULT_CREDENTIAL_CLASS};
use crate::crypto::{KeyPair, PublicKey, SignedDocument};
use crate::pipeline::EngineConfig;
use crate::value::Timestamp;

pub const WELL_KNOWN_PATH: &str = "/.well-known/agent-governance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySupport {
    pub profile_id: String,
    pub min_version: u32,
    pub max_version: u32,
    /// Identifiers defined by the accepted versions.
    pub identifiers: BTreeSet<String>,
}

impl VocabularySupport {
    pub fn accepts(&self, profile_id: &str, version: u32) -> bool {
        self.profile_id == profile_id && self.min_version <= version && version <= self.max_version
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceManifest {
    pub receiver_id: String,
    pub version: u64,
    pub supported_vocabularies: Vec<VocabularySupport>,
    pub accepted_registries: Vec<String>,
    /// Issuers the receiver trusts directly.
    pub trust_anchors: Vec<String>,
    pub accepted_credential_classes: BTreeSet<String>,
    pub required_context_fields: BTreeSet<String>,
    pub accepted_state_authorities: Vec<String>,
    /// `profile_id@version` of the loaded mapping profile, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping_profile: Option<String>,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
}

pub type SignedManifest = SignedDocument<GovernanceManifest>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("bad_signature: {0}")]
    BadSignature(String),
    #[error("out_of_window: manifest valid {from} to {until}")]
    OutOfWindow { from: Timestamp, until: Timestamp },
}

/// Splits `insurance/1` into its profile id and version.
pub fn split_profile(profile: &str) -> Option<(&str, u32)> {
    let (id, v) = profile.rsplit_once('/')?;
    Some((id, v.parse().ok()?))
}

/// Describes `config` as a manifest and signs it with the receiver key.
pub fn build_manifest(config: &EngineConfig, receiver_key: &KeyPair, version: u64, valid_from: Timestamp, valid_until: Timestamp) -> SignedManifest {
    let mut vocabularies = vec![VocabularySupport {
        profile_id: config.core_vocabulary.profile_id.clone(),
        min_version: config.core_vocabulary.version,
        max_version: config.core_vocabulary.version,
        identifiers: config.core_vocabulary.identifiers().into_iter().map(String::from).collect(),
    }];
    for v in &config.vocabularies {
        vocabularies.push(VocabularySupport {
            profile_id: v.profile_id.clone(),
            min_version: v.version,
            max_version: v.version,
            identifiers: v.identifiers().into_iter().map(String::from).collect(),
        });
    }
    let mut registries: Vec<String> = match &config.registries.accepted {
        Some(ids) => ids.iter().cloned().collect(),
        None => config.registries.registries.iter().map(|r| r.body.registry_id.clone()).collect(),
    };
    registries.sort();
    registries.dedup();

    let mut classes: BTreeSet<String> = config
        .registries
        .registries
        .iter()
        .flat_map(|r| r.body.issuers.iter())
        .flat_map(|i| i.credential_classes.iter().cloned())
        .collect();
    if classes.is_empty() {
        classes.insert(DEFAULT_CREDENTIAL_CLASS.into());
    }
    let mut anchors: Vec<String> = config.trusted_issuers.issuers.iter().map(|i| i.issuer_id.clone()).collect();
    anchors.sort();
    anchors.dedup();
    let mut authorities: Vec<String> = config
        .registries
        .registries
        .iter()
        .flat_map(|r| r.body.state_authorities.iter().map(|a| a.pointer.clone()))
        .collect();
    authorities.sort();
    authorities.dedup();

    let mut required = config.local_policy.required_context_fields.clone();
    required.extend(config.local_policy.constraints.iter().filter_map(|c| c.field().map(String::from)));

    let manifest = GovernanceManifest {
        receiver_id: config.evaluator_id.clone(),
        version,
        supported_vocabularies: vocabularies,
        accepted_registries: registries,
        trust_anchors: anchors,
        accepted_credential_classes: classes,
        required_context_fields: required,
        accepted_state_authorities: authorities,
        mapping_profile: config
            .mapping_profile
            .as_ref()
            .map(|m| format!("{}@{}", m.body.profile_id, m.body.version)),
        valid_from,
        valid_until,
    };
    SignedManifest::sign(manifest, receiver_key)
}

pub fn verify_manifest(bytes: &[u8], receiver_keys: &[PublicKey], now: Timestamp) -> Result<SignedManifest, ManifestError> {
    let doc = SignedManifest::parse(bytes).map_err(|e| ManifestError::Malformed(e.to_string()))?;
    doc.verify_by(receiver_keys)
        .map_err(|e| ManifestError::BadSignature(e.to_string()))?;
    let m = &doc.body;
    if now < m.valid_from || now > m.valid_until {
        return Err(ManifestError::OutOfWindow {
            from: m.valid_from,
            until: m.valid_until,
        });
    }
    Ok(doc)
}

/// What pre-flight needs to know about one credential the sender holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSummary {
    pub digest: String,
    /// Issuer of the chain root.
    pub issuer_id: String,
    pub credential_class: String,
    pub profile: String,
    pub constraint_fields: BTreeSet<String>,
    #[serde(default)]
    pub state_authorities: BTreeSet<String>,
}

impl CredentialSummary {
    /// Summarizes a chain (root first); the leaf carries the effective
    /// constraints, the root names the anchor.
    pub fn of_chain(chain: &[Credential]) -> Option<Self> {
        let (root, leaf) = (chain.first()?, chain.last()?);
        let constraints = leaf.body.payload.constraint_list();
        Some(CredentialSummary {
            digest: leaf.digest(),
            issuer_id: root.body.issuer_id.clone(),
            credential_class: leaf.body.credential_class.clone(),
            profile: leaf.body.profile.clone(),
            constraint_fields: constraints.iter().filter_map(|c| c.field().map(String::from)).collect(),
            state_authorities: constraints
                .iter()
                .filter_map(|c| match c {
                    Constraint::CumulativeLimit(c) => Some(c.state_authority_pointer.clone()),
                    _ => None,
                })
                .collect(),
        })
    }
}

/// The sender's local view. Never sent to the receiver.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SenderCapabilities {
    pub credentials: Vec<CredentialSummary>,
    #[serde(default)]
    pub supported_profiles: BTreeSet<String>,
    /// Registry ids the sender recognizes.
    #[serde(default)]
    pub trust_anchors: BTreeSet<String>,
    pub producible_fields: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    UnsupportedProfile { credential: String, profile: String },
    NoSharedProfile,
    NoAcceptedRegistry,
    NoSharedRegistry,
    MissingTrustAnchor { credential: String, issuer_id: String },
    UnacceptedCredentialClass { credential: String, credential_class: String },
    UnproducibleField { field: String },
    UnknownIdentifier { credential: String, identifier: String },
    UnacceptedStateAuthority { credential: String, pointer: String },
    NoMappingProfile,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnsupportedProfile { credential, profile } => write!(f, "credential {credential}: profile {profile} is not accepted"),
            Finding::NoSharedProfile => f.write_str("no profile version supported by both parties"),
            Finding::NoAcceptedRegistry => f.write_str("receiver lists no trust registries"),
            Finding::NoSharedRegistry => f.write_str("no accepted registry is known to the sender"),
            Finding::MissingTrustAnchor { credential, issuer_id } => write!(f, "credential {credential}: issuer {issuer_id} is not a receiver trust anchor"),
            Finding::UnacceptedCredentialClass { credential, credential_class } => {
                write!(f, "credential {credential}: class {credential_class} is not accepted")
            }
            Finding::UnproducibleField { field } => write!(f, "sender cannot produce required field {field}"),
            Finding::UnknownIdentifier { credential, identifier } => {
                write!(f, "credential {credential}: {identifier} is outside the manifest vocabularies")
            }
            Finding::UnacceptedStateAuthority { credential, pointer } => {
                write!(f, "credential {credential}: state authority {pointer} is not accepted")
            }
            Finding::NoMappingProfile => f.write_str("receiver publishes no mapping profile"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub compatible: bool,
    pub findings: Vec<Finding>,
}

/// Advisory comparison. A compatible report does not bind the receiver.
pub fn preflight(sender: &SenderCapabilities, manifest: &GovernanceManifest) -> PreflightReport {
    let mut findings = BTreeSet::new();
    let vocab_for = |profile: &str| {
        split_profile(profile).and_then(|(id, v)| manifest.supported_vocabularies.iter().find(|s| s.accepts(id, v)))
    };
    let core_ids: BTreeSet<&String> = manifest
        .supported_vocabularies
        .iter()
        .filter(|s| s.profile_id == "core")
        .flat_map(|s| s.identifiers.iter())
        .collect();

    if !sender.supported_profiles.is_empty() && !sender.supported_profiles.iter().any(|p| vocab_for(p).is_some()) {
        findings.insert(Finding::NoSharedProfile);
    }
    if manifest.accepted_registries.is_empty() {
        findings.insert(Finding::NoAcceptedRegistry);
    } else if !sender.trust_anchors.is_empty() && !manifest.accepted_registries.iter().any(|r| sender.trust_anchors.contains(r)) {
        findings.insert(Finding::NoSharedRegistry);
    }
    if manifest.mapping_profile.is_none() {
        findings.insert(Finding::NoMappingProfile);
    }
    let mut needed: BTreeSet<&String> = manifest.required_context_fields.iter().collect();

    for c in &sender.credentials {
        let cred = c.digest.clone();
        let profile_vocab = vocab_for(&c.profile);
        if profile_vocab.is_none() {
            findings.insert(Finding::UnsupportedProfile {
                credential: cred.clone(),
                profile: c.profile.clone(),
            });
        }
        if !manifest.trust_anchors.contains(&c.issuer_id) {
            findings.insert(Finding::MissingTrustAnchor {
                credential: cred.clone(),
                issuer_id: c.issuer_id.clone(),
            });
        }
        if !manifest.accepted_credential_classes.contains(&c.credential_class) {
            findings.insert(Finding::UnacceptedCredentialClass {
                credential: cred.clone(),
                credential_class: c.credential_class.clone(),
            });
        }
        for field in &c.constraint_fields {
            let known = core_ids.contains(field) || profile_vocab.is_some_and(|v| v.identifiers.contains(field));
            if !known {
                findings.insert(Finding::UnknownIdentifier {
                    credential: cred.clone(),
                    identifier: field.clone(),
                });
            }
            needed.insert(field);
        }
        for pointer in &c.state_authorities {
            if !manifest.accepted_state_authorities.contains(pointer) {
                findings.insert(Finding::UnacceptedStateAuthority {
                    credential: cred.clone(),
                    pointer: pointer.clone(),
                });
            }
        }
    }
    for field in needed {
        if !sender.producible_fields.contains(field) {
            findings.insert(Finding::UnproducibleField { field: field.clone() });
        }
    }
    PreflightReport {
        compatible: findings.is_empty(),
        findings: findings.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{load_scenario, INSURANCE_PROFILE};

    fn ts(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    fn insurance() -> (crate::scenario::ScenarioBundle, SignedManifest) {
        let b = load_scenario("insurance_claims").unwrap();
        let m = build_manifest(&b.engine_config(), b.evaluator_key(), 1, ts("2026-04-01T00:00:00Z"), ts("2026-05-01T00:00:00Z"));
        (b, m)
    }

    fn sender(b: &crate::scenario::ScenarioBundle) -> SenderCapabilities {
        let chain = vec![b.credentials["negotiator"].clone()];
        let summary = CredentialSummary::of_chain(&chain).unwrap();
        let mut producible = summary.constraint_fields.clone();
        producible.insert("core.workflow_id".into());
        SenderCapabilities {
            credentials: vec![summary],
            supported_profiles: [INSURANCE_PROFILE.to_string()].into(),
            trust_anchors: ["reg:insurance-consortium".to_string()].into(),
            producible_fields: producible,
        }
    }

    #[test]
    fn manifest_lists_profile_and_round_trips() {
        let (_, m) = insurance();
        assert!(m.body.supported_vocabularies.iter().any(|v| v.accepts("insurance", 1)));
        assert!(m.body.required_context_fields.contains("core.workflow_id"));
        let bytes = m.to_bytes();
        let again = SignedManifest::parse(&bytes).unwrap();
        assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn verify_detects_tamper_and_window() {
        let (b, m) = insurance();
        let keys = [b.evaluator_key().public()];
        let now = ts("2026-04-18T00:00:00Z");
        assert!(verify_manifest(&m.to_bytes(), &keys, now).is_ok());
        let mut doc = m.document.clone();
        doc["required_context_fields"] = serde_json::json!([]);
        let tampered = crate::canonical::to_bytes(&doc);
        assert!(matches!(verify_manifest(&tampered, &keys, now), Err(ManifestError::BadSignature(_))));
        assert!(matches!(
            verify_manifest(&m.to_bytes(), &keys, ts("2026-06-01T00:00:00Z")),
            Err(ManifestError::OutOfWindow { .. })
        ));
        assert!(matches!(verify_manifest(b"[]", &keys, now), Err(ManifestError::Malformed(_))));
    }

    #[test]
    fn preflight_examples() {
        let (b, m) = insurance();
        let s = sender(&b);
        let report = preflight(&s, &m.body);
        assert!(report.compatible, "{:?}", report.findings);

        let mut no_wf = s.clone();
        no_wf.producible_fields.remove("core.workflow_id");
        let report = preflight(&no_wf, &m.body);
        assert_eq!(report.findings, vec![Finding::UnproducibleField { field: "core.workflow_id".into() }]);

        let mut aviation = s.clone();
        aviation.credentials[0].constraint_fields.insert("aviation.thrust".into());
        aviation.producible_fields.insert("aviation.thrust".into());
        let report = preflight(&aviation, &m.body);
        assert!(!report.compatible);
        assert!(report.findings.iter().any(|f| matches!(f, Finding::UnknownIdentifier { identifier, .. } if identifier == "aviation.thrust")));
    }

    #[test]
    fn no_registries_is_valid_but_incompatible() {
        let (b, _) = insurance();
        let mut config = b.engine_config();
        config.registries = Default::default();
        let m = build_manifest(&config, b.evaluator_key(), 1, ts("2026-04-01T00:00:00Z"), ts("2026-05-01T00:00:00Z"));
        assert!(m.body.accepted_registries.is_empty());
        assert!(verify_manifest(&m.to_bytes(), &[b.evaluator_key().public()], ts("2026-04-18T00:00:00Z")).is_ok());
        let report = preflight(&sender(&b), &m.body);
        assert!(report.findings.contains(&Finding::NoAcceptedRegistry));
    }

    #[test]
    fn findings_ignore_input_order() {
        let (b, m) = insurance();
        let mut s = sender(&b);
        let mut other = s.credentials[0].clone();
        other.digest = "other".into();
        other.profile = "aviation/2".into();
        s.credentials.push(other);
        let forward = preflight(&s, &m.body);
        s.credentials.reverse();
        assert_eq!(preflight(&s, &m.body), forward);
    }
}
