//! Semantic resolution: the embedded core vocabulary, governed profile
//! vocabularies, signed mapping profiles, and the fail-closed gate that maps
//! a signed semantic identifier onto a typed local request field.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::Constraint;
use crate::crypto::{PublicKey, SignedDocument};
use crate::model::{DenialCode, DenialReason, RequestContext};
use crate::value::{SemanticType, Timestamp, TypedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Required,
    Conditional,
    Advanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub identifier: String,
    #[serde(rename = "type")]
    pub kind: SemanticType,
    pub status: EntryStatus,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub profile_id: String,
    pub version: u32,
    pub entries: Vec<VocabularyEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabularyError {
    #[error("identifier {0:?} is defined twice")]
    Duplicate(String),
    #[error("profile identifier {0:?} must be namespaced and must not use the reserved core. prefix")]
    Reserved(String),
    #[error("vocabulary signature rejected: {0}")]
    Signature(String),
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

const CORE_ROWS: &[(&str, SemanticType, EntryStatus, &str)] = {
    use EntryStatus::*;
    use SemanticType::*;
    &[
        ("core.issuer_id", StringId, Required, "Entity that issued and signed the authorization."),
        ("core.subject_id", StringId, Required, "Agent or principal to whom the authorization applies."),
        ("core.presenter_id", StringId, Required, "Runtime actor presenting the credential at the receiver boundary."),
        ("core.audience_id", StringId, Required, "Intended receiver or receiver class for audience binding."),
        ("core.permission", StringId, Required, "Declared action or permission carried by the authorization payload."),
        ("core.valid_from", Timestamp, Required, "Earliest time at which the authorization may be accepted."),
        ("core.valid_until", Timestamp, Required, "Latest time at which the authorization may be accepted."),
        ("core.request_time", Timestamp, Required, "Time of the action-bearing request, normalized for temporal evaluation."),
        ("core.delegator_id", StringId, Conditional, "Prior authority in a delegation chain."),
        ("core.recipient_id", StringId, Conditional, "Counterparty, payee, recipient system, or recipient role."),
        ("core.action", StringId, Conditional, "Requested operation when distinct from the permission namespace."),
        ("core.resource_id", StringId, Conditional, "Specific object, record, document, component, or resource acted on."),
        ("core.resource_type", StringId, Conditional, "Category of resource."),
        ("core.amount", Decimal, Conditional, "Monetary or quantitative value for the current action."),
        ("core.currency_code", StringCode, Conditional, "Currency associated with core.amount."),
        ("core.quantity", Decimal, Conditional, "Non-monetary measured amount."),
        ("core.count", Integer, Conditional, "Number of items, records, disclosures, attempts, or actions."),
        ("core.total_budget", Decimal, Conditional, "Maximum aggregate value authorized."),
        ("core.geo_region", StringId, Conditional, "Geographic region, jurisdiction, or data-sovereignty boundary."),
        ("core.ip_address", IpAddress, Conditional, "Network source address."),
        ("core.request_id", StringId, Conditional, "Request identifier used for audit correlation."),
        ("core.workflow_id", StringId, Conditional, "Correlation identifier for a multi-agent or multi-step workflow."),
        ("core.workflow_role", StringId, Conditional, "Role played by the presenting agent within a workflow."),
        ("core.workflow_step_id", StringId, Conditional, "Specific workflow step, approval stage, or evidence contribution."),
        ("core.state_authority_pointer", Uri, Advanced, "Authoritative state source for cumulative governance."),
        ("core.state_sequence", Integer, Advanced, "Monotonic sequence value used by verifiable state proofs."),
        ("core.state_timestamp", Timestamp, Advanced, "Signed state observation time used for freshness checks."),
    ]
};

pub const CORE_PROFILE_ID: &str = "core";
pub const CURRENCY_FIELD: &str = "core.currency_code";

impl Vocabulary {
    /// The reserved core vocabulary, compiled into the engine.
    pub fn core() -> Vocabulary {
        Vocabulary {
            profile_id: CORE_PROFILE_ID.into(),
            version: 1,
            entries: CORE_ROWS
                .iter()
                .map(|(id, kind, status, description)| VocabularyEntry {
                    identifier: (*id).into(),
                    kind: *kind,
                    status: *status,
                    description: (*description).into(),
                })
                .collect(),
        }
    }

    /// `profile_id/version`, the key used by credentials and manifests.
    pub fn key(&self) -> String {
        format!("{}/{}", self.profile_id, self.version)
    }

    pub fn get(&self, identifier: &str) -> Option<&VocabularyEntry> {
        self.entries.iter().find(|e| e.identifier == identifier)
    }

    pub fn identifiers(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.identifier.as_str()).collect()
    }

    /// Structural rules for a vertical profile vocabulary.
    pub fn check_profile(&self) -> Result<(), VocabularyError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.identifier.as_str()) {
                return Err(VocabularyError::Duplicate(e.identifier.clone()));
            }
            if self.profile_id != CORE_PROFILE_ID && (!e.identifier.contains('.') || e.identifier.starts_with("core.")) {
                return Err(VocabularyError::Reserved(e.identifier.clone()));
            }
        }
        Ok(())
    }

    /// Loads a steward-signed profile vocabulary.
    pub fn load(bytes: &[u8], steward_keys: &[PublicKey]) -> Result<Vocabulary, VocabularyError> {
        let doc = SignedDocument::<Vocabulary>::parse(bytes).map_err(|e| VocabularyError::Malformed(e.to_string()))?;
        Vocabulary::from_signed(&doc, steward_keys)
    }

    pub fn from_signed(doc: &SignedDocument<Vocabulary>, steward_keys: &[PublicKey]) -> Result<Vocabulary, VocabularyError> {
        doc.verify_by(steward_keys).map_err(|e| VocabularyError::Signature(e.to_string()))?;
        doc.body.check_profile()?;
        Ok(doc.body.clone())
    }
}

/// Looks up an identifier: the core vocabulary first, then the applicable
/// profile vocabulary.
pub fn lookup_identifier<'a>(id: &str, core: &'a Vocabulary, profile: Option<&'a Vocabulary>) -> Option<&'a VocabularyEntry> {
    core.get(id).or_else(|| profile.and_then(|p| p.get(id)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alias {
    pub identifier: String,
    pub local_field: String,
    pub local_type: SemanticType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingProfile {
    pub profile_id: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_until: Option<Timestamp>,
    pub aliases: Vec<Alias>,
}

impl MappingProfile {
    /// Every identifier of the given vocabularies aliased to itself with its
    /// vocabulary type, for receivers whose context already uses semantic
    /// identifiers as field names.
    pub fn identity(profile_id: &str, version: u32, valid_until: Timestamp, vocabularies: &[&Vocabulary]) -> Self {
        let aliases = vocabularies
            .iter()
            .flat_map(|v| v.entries.iter())
            .map(|e| Alias {
                identifier: e.identifier.clone(),
                local_field: e.identifier.clone(),
                local_type: e.kind,
            })
            .collect();
        MappingProfile {
            profile_id: profile_id.into(),
            version,
            valid_until: Some(valid_until),
            aliases,
        }
    }

    pub fn aliases_for(&self, identifier: &str) -> Vec<&Alias> {
        self.aliases.iter().filter(|a| a.identifier == identifier).collect()
    }

    /// Identifiers with more than one alias entry.
    pub fn conflicting_identifiers(&self) -> BTreeSet<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &self.aliases {
            *counts.entry(&a.identifier).or_default() += 1;
        }
        counts.into_iter().filter(|(_, n)| *n > 1).map(|(id, _)| id).collect()
    }
}

pub type SignedMappingProfile = SignedDocument<MappingProfile>;

/// Governance checks on a mapping profile: present, signed by a steward,
/// and inside its freshness window. A missing `valid_until` is invalid.
///
/// Conflicting aliases do not invalidate the profile as a whole; they are
/// reported per identifier as `semantic_alias_conflict` during resolution.
pub fn validate_mapping_profile(
    profile: Option<&SignedMappingProfile>,
    now: Timestamp,
    steward_keys: &[PublicKey],
) -> Result<(), DenialReason> {
    let Some(profile) = profile else {
        return Err(DenialReason::new(DenialCode::MappingProfileMissing, "no mapping profile is loaded"));
    };
    if let Err(e) = profile.verify_by(steward_keys) {
        return Err(DenialReason::new(DenialCode::MappingProfileInvalid, format!("untrusted mapping profile: {e}")));
    }
    match profile.body.valid_until {
        None => Err(DenialReason::new(DenialCode::MappingProfileInvalid, "mapping profile has no governance window")),
        Some(until) if now > until => Err(DenialReason::new(
            DenialCode::MappingProfileInvalid,
            format!("mapping profile expired at {until}"),
        )),
        Some(_) => Ok(()),
    }
}

/// One immutable semantic snapshot used for a whole evaluation.
#[derive(Debug, Clone)]
pub struct SemanticResolver<'a> {
    mapping: Option<&'a MappingProfile>,
    mapping_status: Result<(), DenialReason>,
    core: &'a Vocabulary,
    profile: Option<&'a Vocabulary>,
}

/// The outcome of resolving one identifier: the local field it mapped to
/// and its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub identifier: String,
    pub local_field: String,
    pub value: TypedValue,
}

impl<'a> SemanticResolver<'a> {
    pub fn new(
        mapping: Option<&'a SignedMappingProfile>,
        now: Timestamp,
        steward_keys: &[PublicKey],
        core: &'a Vocabulary,
        profile: Option<&'a Vocabulary>,
    ) -> Self {
        SemanticResolver {
            mapping_status: validate_mapping_profile(mapping, now, steward_keys),
            mapping: mapping.map(|m| &m.body),
            core,
            profile,
        }
    }

    pub fn profile_vocabulary(&self) -> Option<&'a Vocabulary> {
        self.profile
    }

    pub fn mapping_status(&self) -> &Result<(), DenialReason> {
        &self.mapping_status
    }

    /// Maps a signed identifier to the receiver's typed local value, checking
    /// in order: mapping presence, mapping validity, identifier known,
    /// alias unambiguous, alias present, alias type, context presence.
    pub fn resolve(&self, identifier: &str, ctx: &RequestContext) -> Result<Resolved, DenialReason> {
        self.mapping_status.clone()?;
        let mapping = self.mapping.expect("validated mapping is present");
        let Some(entry) = lookup_identifier(identifier, self.core, self.profile) else {
            return Err(DenialReason::new(
                DenialCode::SemanticIdentifierUnknown,
                format!("{identifier} is not in the core or applicable profile vocabulary"),
            ));
        };
        let aliases = mapping.aliases_for(identifier);
        if aliases.len() > 1 {
            return Err(DenialReason::new(
                DenialCode::SemanticAliasConflict,
                format!("{identifier} has {} aliases", aliases.len()),
            ));
        }
        let Some(alias) = aliases.first() else {
            return Err(DenialReason::new(DenialCode::SemanticAliasMissing, format!("no alias declared for {identifier}")));
        };
        if alias.local_type != entry.kind {
            return Err(DenialReason::new(
                DenialCode::SemanticTypeMismatch,
                format!("{} is declared {}, {identifier} requires {}", alias.local_field, alias.local_type, entry.kind),
            ));
        }
        let Some(value) = ctx.get(&alias.local_field) else {
            return Err(DenialReason::new(
                DenialCode::ContextFieldMissing,
                format!("request has no {} (for {identifier})", alias.local_field),
            ));
        };
        if value.kind() != entry.kind {
            return Err(DenialReason::new(
                DenialCode::SemanticTypeMismatch,
                format!("{} carries a {} value, {identifier} requires {}", alias.local_field, value.kind(), entry.kind),
            ));
        }
        Ok(Resolved {
            identifier: identifier.to_string(),
            local_field: alias.local_field.clone(),
            value: value.clone(),
        })
    }
}

/// Resolves the field a constraint is evaluated against.
pub fn resolve_semantic_field(
    constraint: &Constraint,
    ctx: &RequestContext,
    resolver: &SemanticResolver<'_>,
) -> Result<Resolved, DenialReason> {
    let field = constraint.field().unwrap_or_default();
    resolver.resolve(field, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use serde_json::json;

    fn steward() -> KeyPair {
        KeyPair::from_label("steward")
    }

    fn insurance() -> Vocabulary {
        Vocabulary {
            profile_id: "insurance".into(),
            version: 1,
            entries: vec![VocabularyEntry {
                identifier: "insurance.claim_type".into(),
                kind: SemanticType::StringId,
                status: EntryStatus::Conditional,
                description: String::new(),
            }],
        }
    }

    fn alias(id: &str, local: &str, kind: SemanticType) -> Alias {
        Alias {
            identifier: id.into(),
            local_field: local.into(),
            local_type: kind,
        }
    }

    fn mapping(aliases: Vec<Alias>, until: &str) -> SignedMappingProfile {
        SignedDocument::sign(
            MappingProfile {
                profile_id: "bodyshop".into(),
                version: 1,
                valid_until: Some(until.parse().unwrap()),
                aliases,
            },
            &steward(),
        )
    }

    fn now() -> Timestamp {
        "2026-04-18T14:32:00Z".parse().unwrap()
    }

    fn amount_constraint(field: &str) -> Constraint {
        serde_json::from_value(json!({"type": "NumericLimitConstraint", "field": field, "operator": "lte", "value": "5000"})).unwrap()
    }

    #[test]
    fn core_vocabulary_is_the_full_table() {
        let core = Vocabulary::core();
        assert_eq!(core.entries.len(), 27);
        assert!(core.check_profile().is_ok());
        let amount = lookup_identifier("core.amount", &core, None).unwrap();
        assert_eq!((amount.kind, amount.status), (SemanticType::Decimal, EntryStatus::Conditional));
        let t = lookup_identifier("core.request_time", &core, None).unwrap();
        assert_eq!((t.kind, t.status), (SemanticType::Timestamp, EntryStatus::Required));
        assert!(lookup_identifier("insurance.claim_type", &core, None).is_none());
        let ins = insurance();
        assert!(lookup_identifier("insurance.claim_type", &core, Some(&ins)).is_some());
    }

    #[test]
    fn profile_vocabulary_rules() {
        let mut v = insurance();
        v.entries.push(v.entries[0].clone());
        assert!(matches!(v.check_profile(), Err(VocabularyError::Duplicate(_))));
        let mut v = insurance();
        v.entries[0].identifier = "core.amount".into();
        assert!(matches!(v.check_profile(), Err(VocabularyError::Reserved(_))));
        let mut v = insurance();
        v.entries[0].identifier = "claimtype".into();
        assert!(matches!(v.check_profile(), Err(VocabularyError::Reserved(_))));
        let signed = SignedDocument::sign(insurance(), &steward());
        assert!(Vocabulary::load(&signed.to_bytes(), &[steward().public()]).is_ok());
        assert!(Vocabulary::load(&signed.to_bytes(), &[KeyPair::from_label("x").public()]).is_err());
    }

    #[test]
    fn mapping_validation() {
        let keys = [steward().public()];
        let good = mapping(vec![], "2026-12-31T00:00:00Z");
        assert_eq!(validate_mapping_profile(Some(&good), now(), &keys), Ok(()));
        let stale = mapping(vec![], "2026-01-01T00:00:00Z");
        assert_eq!(validate_mapping_profile(Some(&stale), now(), &keys).unwrap_err().code, DenialCode::MappingProfileInvalid);
        assert_eq!(validate_mapping_profile(None, now(), &keys).unwrap_err().code, DenialCode::MappingProfileMissing);
        let foreign = SignedDocument::sign(good.body.clone(), &KeyPair::from_label("rogue"));
        assert_eq!(validate_mapping_profile(Some(&foreign), now(), &keys).unwrap_err().code, DenialCode::MappingProfileInvalid);
        let mut no_window = good.body.clone();
        no_window.valid_until = None;
        let no_window = SignedDocument::sign(no_window, &steward());
        assert_eq!(validate_mapping_profile(Some(&no_window), now(), &keys).unwrap_err().code, DenialCode::MappingProfileInvalid);
    }

    fn resolve_with(aliases: Vec<Alias>, until: &str, field: &str, ctx: &RequestContext) -> Result<Resolved, DenialReason> {
        let core = Vocabulary::core();
        let ins = insurance();
        let m = mapping(aliases, until);
        let r = SemanticResolver::new(Some(&m), now(), &[steward().public()], &core, Some(&ins));
        resolve_semantic_field(&amount_constraint(field), ctx, &r)
    }

    #[test]
    fn resolution_examples() {
        let ctx = RequestContext::new("claim.settle")
            .with("claim_total", TypedValue::Decimal("3200".parse().unwrap()))
            .with("claim_type_label", TypedValue::StringId("auto_collision".into()));
        let ok = resolve_with(vec![alias("core.amount", "claim_total", SemanticType::Decimal)], "2026-12-31T00:00:00Z", "core.amount", &ctx).unwrap();
        assert_eq!(ok.value, TypedValue::Decimal("3200".parse().unwrap()));
        assert_eq!(ok.local_field, "claim_total");

        let code = |aliases, until: &str, field: &str| resolve_with(aliases, until, field, &ctx).unwrap_err().code;
        assert_eq!(
            code(vec![alias("core.amount", "claim_type_label", SemanticType::StringId)], "2026-12-31T00:00:00Z", "core.amount"),
            DenialCode::SemanticTypeMismatch
        );
        assert_eq!(code(vec![], "2026-12-31T00:00:00Z", "aviation.thrust"), DenialCode::SemanticIdentifierUnknown);
        assert_eq!(
            code(vec![alias("core.amount", "amount_local", SemanticType::Decimal)], "2026-12-31T00:00:00Z", "core.amount"),
            DenialCode::ContextFieldMissing
        );
        assert_eq!(
            code(
                vec![
                    alias("core.amount", "claim_total", SemanticType::Decimal),
                    alias("core.amount", "other_total", SemanticType::Decimal)
                ],
                "2026-12-31T00:00:00Z",
                "core.amount"
            ),
            DenialCode::SemanticAliasConflict
        );
        assert_eq!(code(vec![], "2026-12-31T00:00:00Z", "core.amount"), DenialCode::SemanticAliasMissing);
        // stale and missing an alias: the earlier check wins
        assert_eq!(code(vec![], "2026-01-01T00:00:00Z", "core.amount"), DenialCode::MappingProfileInvalid);
    }

    #[test]
    fn integer_is_not_widened_to_decimal() {
        let ctx = RequestContext::new("a").with("n", TypedValue::Integer(5));
        let code = resolve_with(vec![alias("core.amount", "n", SemanticType::Integer)], "2026-12-31T00:00:00Z", "core.amount", &ctx)
            .unwrap_err()
            .code;
        assert_eq!(code, DenialCode::SemanticTypeMismatch);
        let code = resolve_with(vec![alias("core.amount", "n", SemanticType::Decimal)], "2026-12-31T00:00:00Z", "core.amount", &ctx)
            .unwrap_err()
            .code;
        assert_eq!(code, DenialCode::SemanticTypeMismatch);
    }

    #[test]
    fn identity_profile_returns_context_value() {
        let core = Vocabulary::core();
        let ins = insurance();
        let identity = SignedDocument::sign(
            MappingProfile::identity("identity", 1, "2027-01-01T00:00:00Z".parse().unwrap(), &[&core, &ins]),
            &steward(),
        );
        let r = SemanticResolver::new(Some(&identity), now(), &[steward().public()], &core, Some(&ins));
        let ctx = RequestContext::new("x")
            .with("core.amount", TypedValue::Decimal("12.5".parse().unwrap()))
            .with("insurance.claim_type", TypedValue::StringId("auto".into()));
        assert_eq!(r.resolve("core.amount", &ctx).unwrap().value, ctx.fields["core.amount"]);
        assert_eq!(r.resolve("insurance.claim_type", &ctx).unwrap().value, ctx.fields["insurance.claim_type"]);
    }
}
