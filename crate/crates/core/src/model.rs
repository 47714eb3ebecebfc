//! Shared domain types: denial reasons, decisions, payloads and request
//! contexts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical;
use crate::constraint::Constraint;
use crate::value::TypedValue;

macro_rules! denial_codes {
    ($($variant:ident => $text:literal),+ $(,)?) => {
        /// Closed set of typed denial codes. Every DENY carries exactly one.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum DenialCode {
            $($variant),+
        }

        impl DenialCode {
            pub const ALL: &'static [DenialCode] = &[$(DenialCode::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(DenialCode::$variant => $text),+
                }
            }
        }

        impl FromStr for DenialCode {
            type Err = UnknownDenialCode;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(DenialCode::$variant),)+
                    other => Err(UnknownDenialCode(other.to_string())),
                }
            }
        }
    };
}

denial_codes! {
    SignatureInvalid => "signature_invalid",
    IssuerUntrusted => "issuer_untrusted",
    IssuerNotVetted => "issuer_not_vetted",
    AudienceMismatch => "audience_mismatch",
    ProofOfPossessionFailed => "proof_of_possession_failed",
    SubjectBindingMismatch => "subject_binding_mismatch",
    CredentialExpired => "credential_expired",
    CredentialRevoked => "credential_revoked",
    CredentialIncomplete => "credential_incomplete",
    PermissionDenied => "permission_denied",
    ConstraintUnknown => "constraint_unknown",
    ContextFieldMissing => "context_field_missing",
    ConstraintFailed => "constraint_failed",
    LocalPolicyDenied => "local_policy_denied",
    DelegationDepthExceeded => "delegation_depth_exceeded",
    DelegationChainBroken => "delegation_chain_broken",
    DelegationWidened => "delegation_widened",
    MappingProfileMissing => "mapping_profile_missing",
    MappingProfileInvalid => "mapping_profile_invalid",
    SemanticIdentifierUnknown => "semantic_identifier_unknown",
    SemanticAliasConflict => "semantic_alias_conflict",
    SemanticAliasMissing => "semantic_alias_missing",
    SemanticTypeMismatch => "semantic_type_mismatch",
    WorkflowPolicyDenied => "workflow_policy_denied",
    StateAuthorityUnpermitted => "state_authority_unpermitted",
    StateAuthorityUnreachable => "state_authority_unreachable",
    StateLimitExceeded => "state_limit_exceeded",
    StateStale => "state_stale",
    StateSequenceInvalid => "state_sequence_invalid",
    StateSignatureInvalid => "state_signature_invalid",
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown denial code {0:?}")]
pub struct UnknownDenialCode(pub String);

impl fmt::Display for DenialCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for DenialCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DenialCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A typed denial. `detail` is diagnostic text and never affects the
/// decision; `constraint` names the failing constraint when there is one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenialReason {
    pub code: DenialCode,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

impl DenialReason {
    pub fn new(code: DenialCode, detail: impl Into<String>) -> Self {
        DenialReason {
            code,
            detail: detail.into(),
            constraint: None,
        }
    }

    pub fn code(code: DenialCode) -> Self {
        DenialReason::new(code, "")
    }

    pub fn with_constraint(mut self, id: impl Into<String>) -> Self {
        self.constraint = Some(id.into());
        self
    }
}

impl From<DenialCode> for DenialReason {
    fn from(code: DenialCode) -> Self {
        DenialReason::code(code)
    }
}

impl fmt::Display for DenialReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        if let Some(c) = &self.constraint {
            write!(f, " [{c}]")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TraceResult {
    Ok,
    Pass,
    Fail,
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub check: String,
    pub result: TraceResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Allow,
    Deny(DenialReason),
}

/// Final authorization outcome plus the ordered diagnostic trace. The trace
/// never changes the outcome domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub outcome: Outcome,
    pub trace: Vec<TraceEntry>,
}

impl Decision {
    pub fn allow(trace: Vec<TraceEntry>) -> Self {
        Decision {
            outcome: Outcome::Allow,
            trace,
        }
    }

    pub fn deny(reason: DenialReason, trace: Vec<TraceEntry>) -> Self {
        Decision {
            outcome: Outcome::Deny(reason),
            trace,
        }
    }

    pub fn is_allow(&self) -> bool {
        matches!(self.outcome, Outcome::Allow)
    }

    pub fn denial(&self) -> Option<&DenialReason> {
        match &self.outcome {
            Outcome::Allow => None,
            Outcome::Deny(r) => Some(r),
        }
    }

    pub fn code(&self) -> Option<DenialCode> {
        self.denial().map(|r| r.code)
    }

    /// `ALLOW` or the denial code, the comparison key used by conformance.
    pub fn verdict(&self) -> String {
        match &self.outcome {
            Outcome::Allow => "ALLOW".into(),
            Outcome::Deny(r) => format!("DENY({})", r.code),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DecisionWire {
    outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<DenialReason>,
    #[serde(default)]
    trace: Vec<TraceEntry>,
}

impl Serialize for Decision {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (outcome, reason) = match &self.outcome {
            Outcome::Allow => ("ALLOW", None),
            Outcome::Deny(r) => ("DENY", Some(r.clone())),
        };
        DecisionWire {
            outcome: outcome.into(),
            reason,
            trace: self.trace.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Decision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = DecisionWire::deserialize(d)?;
        let outcome = match (wire.outcome.as_str(), wire.reason) {
            ("ALLOW", None) => Outcome::Allow,
            ("DENY", Some(r)) => Outcome::Deny(r),
            (o, _) => return Err(serde::de::Error::custom(format!("invalid outcome {o:?}"))),
        };
        Ok(Decision {
            outcome,
            trace: wire.trace,
        })
    }
}

/// The signed semantic core. Components are optional on the wire so that
/// incomplete payloads can be represented and rejected by
/// [`validate_payload`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuthorizationPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permissions: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Vec<Constraint>>,
}

impl AuthorizationPayload {
    pub fn new(
        agent_id: impl Into<String>,
        issuer_id: impl Into<String>,
        permissions: impl IntoIterator<Item = impl Into<String>>,
        constraints: Vec<Constraint>,
    ) -> Self {
        AuthorizationPayload {
            agent_id: Some(agent_id.into()),
            issuer_id: Some(issuer_id.into()),
            permissions: Some(permissions.into_iter().map(Into::into).collect()),
            constraints: Some(constraints),
        }
    }

    pub fn agent(&self) -> &str {
        self.agent_id.as_deref().unwrap_or_default()
    }

    pub fn issuer(&self) -> &str {
        self.issuer_id.as_deref().unwrap_or_default()
    }

    pub fn permission_set(&self) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.permissions.as_ref().unwrap_or(&EMPTY)
    }

    pub fn constraint_list(&self) -> &[Constraint] {
        self.constraints.as_deref().unwrap_or_default()
    }
}

/// Checks that all four payload components are present. An empty
/// permission set counts as missing, as do duplicated constraints.
pub fn validate_payload(payload: &AuthorizationPayload) -> Result<(), DenialReason> {
    let incomplete = |what: &str| Err(DenialReason::new(DenialCode::CredentialIncomplete, what));
    match &payload.agent_id {
        Some(a) if crate::value::is_valid_identifier(a) => {}
        _ => return incomplete("payload is missing agent_id"),
    }
    match &payload.issuer_id {
        Some(i) if crate::value::is_valid_identifier(i) => {}
        _ => return incomplete("payload is missing issuer_id"),
    }
    match &payload.permissions {
        Some(p) if !p.is_empty() => {}
        _ => return incomplete("payload is missing permissions"),
    }
    let Some(constraints) = &payload.constraints else {
        return incomplete("payload is missing constraints");
    };
    let mut seen = BTreeSet::new();
    for c in constraints {
        if !seen.insert(canonical::to_bytes(c)) {
            return incomplete("payload repeats an identical constraint");
        }
    }
    Ok(())
}

/// Typed request context as the receiver sees it: the requested action plus
/// local field names mapped to values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequestContext {
    pub action: String,
    #[serde(default)]
    pub fields: BTreeMap<String, TypedValue>,
}

impl RequestContext {
    pub fn new(action: impl Into<String>) -> Self {
        RequestContext {
            action: action.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, field: impl Into<String>, value: TypedValue) -> Self {
        self.fields.insert(field.into(), value);
        self
    }

    pub fn get(&self, field: &str) -> Option<&TypedValue> {
        self.fields.get(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> AuthorizationPayload {
        AuthorizationPayload::new("agent:a", "iss:b", ["claim.settle"], vec![])
    }

    #[test]
    fn minimal_payload_is_complete() {
        assert_eq!(validate_payload(&minimal()), Ok(()));
    }

    #[test]
    fn missing_components_are_incomplete() {
        let mut p = minimal();
        p.issuer_id = None;
        assert_eq!(validate_payload(&p).unwrap_err().code, DenialCode::CredentialIncomplete);

        let mut p = minimal();
        p.permissions = Some(BTreeSet::new());
        assert_eq!(validate_payload(&p).unwrap_err().code, DenialCode::CredentialIncomplete);

        let mut p = minimal();
        p.constraints = None;
        assert_eq!(validate_payload(&p).unwrap_err().code, DenialCode::CredentialIncomplete);
    }

    #[test]
    fn validation_is_pure() {
        let mut p = minimal();
        p.agent_id = None;
        assert_eq!(validate_payload(&p), validate_payload(&p));
    }

    #[test]
    fn denial_code_set_is_closed() {
        assert_eq!(DenialCode::ALL.len(), 30);
        for code in DenialCode::ALL {
            assert_eq!(code.as_str().parse::<DenialCode>().unwrap(), *code);
        }
        assert!("made_up".parse::<DenialCode>().is_err());
    }

    #[test]
    fn decision_roundtrip() {
        for code in DenialCode::ALL {
            let d = Decision::deny(
                DenialReason::new(*code, "x").with_constraint("C2"),
                vec![TraceEntry {
                    stage: "s".into(),
                    check: "c".into(),
                    result: TraceResult::Fail,
                }],
            );
            let back: Decision = canonical::from_bytes(&canonical::to_bytes(&d)).unwrap();
            assert_eq!(back, d);
        }
        let a = Decision::allow(vec![]);
        assert_eq!(canonical::from_bytes::<Decision>(&canonical::to_bytes(&a)).unwrap(), a);
    }
}
