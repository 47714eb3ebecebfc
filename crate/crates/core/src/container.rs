//! The signed credential container: issuance (including attenuated
//! delegation), parsing, verification, revocation lists and
//! proof-of-possession challenges.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Mutex;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::check_attenuation;
use crate::crypto::{KeyPair, PublicKey, SignatureError, SignedDocument};
use crate::model::{validate_payload, AuthorizationPayload, DenialCode, DenialReason};
use crate::value::Timestamp;

pub const DEFAULT_CREDENTIAL_CLASS: &str = "agent-authorization";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialContainer {
    pub credential_id: String,
    pub issuer_id: String,
    pub subject_id: String,
    pub subject_public_key: PublicKey,
    pub audience: BTreeSet<String>,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
    pub credential_class: String,
    /// Vocabulary profile (`profile_id/version`) the payload is written against.
    pub profile: String,
    pub payload: AuthorizationPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_digest: Option<String>,
}

/// A parsed, signed credential. The original JSON is retained so unknown
/// top-level fields stay covered by the signature.
pub type Credential = SignedDocument<CredentialContainer>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssueError {
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("attenuation violation: {0}")]
    AttenuationViolation(String),
}

/// Parses a credential from canonical JSON or its base64url transport form.
/// Structural only; no trust decisions.
pub fn parse_container(bytes: &[u8]) -> Result<Credential, ContainerError> {
    let trimmed = bytes.trim_ascii();
    let decoded;
    let json = if trimmed.first() == Some(&b'{') {
        trimmed
    } else {
        decoded = URL_SAFE_NO_PAD
            .decode(trimmed)
            .map_err(|e| ContainerError::Malformed(format!("neither JSON nor base64url: {e}")))?;
        &decoded
    };
    Credential::parse(json).map_err(|e| ContainerError::Malformed(e.to_string()))
}

/// Base64url (unpadded) transport wrapping of the canonical bytes.
pub fn encode_transport(credential: &Credential) -> String {
    URL_SAFE_NO_PAD.encode(credential.to_bytes())
}

/// Parameters for minting a credential.
#[derive(Debug, Clone)]
pub struct Issuance {
    pub credential_id: String,
    pub payload: AuthorizationPayload,
    pub subject_public_key: PublicKey,
    pub audience: BTreeSet<String>,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
    pub credential_class: String,
    pub profile: String,
}

/// Mints a credential signed by `issuer_key`. With a parent, the new
/// credential is a delegation and must attenuate the parent.
pub fn issue_credential(issuance: Issuance, issuer_key: &KeyPair, parent: Option<&Credential>) -> Result<Credential, IssueError> {
    validate_payload(&issuance.payload).map_err(|r| IssueError::InvalidPayload(r.detail))?;
    let payload = &issuance.payload;
    if issuance.audience.is_empty() {
        return Err(IssueError::InvalidPayload("audience must name at least one receiver".into()));
    }
    if issuance.valid_from > issuance.valid_until {
        return Err(IssueError::InvalidPayload("valid_from is after valid_until".into()));
    }
    if let Some(parent) = parent {
        let p = &parent.body;
        if payload.issuer() != p.subject_id {
            return Err(IssueError::AttenuationViolation(format!(
                "delegation must be issued by the parent subject {}",
                p.subject_id
            )));
        }
        if issuer_key.public() != p.subject_public_key {
            return Err(IssueError::AttenuationViolation("delegation must be signed with the parent subject key".into()));
        }
        if !payload.permission_set().is_subset(p.payload.permission_set()) {
            return Err(IssueError::AttenuationViolation("permissions are not a subset of the parent's".into()));
        }
        check_attenuation(payload.constraint_list(), p.payload.constraint_list())
            .map_err(|w| IssueError::AttenuationViolation(w.0))?;
    }
    let body = CredentialContainer {
        credential_id: issuance.credential_id,
        issuer_id: payload.issuer().to_string(),
        subject_id: payload.agent().to_string(),
        subject_public_key: issuance.subject_public_key,
        audience: issuance.audience,
        valid_from: issuance.valid_from,
        valid_until: issuance.valid_until,
        credential_class: issuance.credential_class,
        profile: issuance.profile,
        payload: issuance.payload,
        parent_digest: parent.map(|p| p.digest()),
    };
    Ok(Credential::sign(body, issuer_key))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustedIssuer {
    pub issuer_id: String,
    pub public_key: PublicKey,
}

/// Local trusted-issuer file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrustedIssuers {
    pub issuers: Vec<TrustedIssuer>,
}

impl TrustedIssuers {
    pub fn key_for(&self, issuer_id: &str) -> Option<PublicKey> {
        self.issuers.iter().find(|i| i.issuer_id == issuer_id).map(|i| i.public_key)
    }

    pub fn add(&mut self, issuer_id: &str, key: PublicKey) {
        self.issuers.push(TrustedIssuer {
            issuer_id: issuer_id.into(),
            public_key: key,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    pub issuer_id: String,
    pub version: u64,
    pub issued_at: Timestamp,
    pub revoked: BTreeSet<String>,
}

pub type SignedRevocationList = SignedDocument<RevocationList>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RevocationError {
    #[error("revocation list version {offered} does not supersede {current}")]
    DowngradeRejected { current: u64, offered: u64 },
    #[error("revocation list signature rejected: {0}")]
    Signature(#[from] SignatureError),
    #[error("revocation list drops previously revoked credentials")]
    Unrevoke,
}

impl RevocationList {
    pub fn empty(issuer_id: &str, issued_at: Timestamp) -> Self {
        RevocationList {
            issuer_id: issuer_id.into(),
            version: 0,
            issued_at,
            revoked: BTreeSet::new(),
        }
    }
}

/// Returns the successor list with `credential_id` revoked; the version
/// always increments, even if the id was already revoked.
pub fn revoke(credential_id: &str, list: &RevocationList, issuer_key: &KeyPair, now: Timestamp) -> SignedRevocationList {
    let mut next = list.clone();
    next.version += 1;
    next.issued_at = now;
    next.revoked.insert(credential_id.to_string());
    SignedRevocationList::sign(next, issuer_key)
}

/// Current revocation state per issuer. Updates must strictly increase the
/// version and keep every earlier revocation.
#[derive(Debug, Clone, Default)]
pub struct RevocationStore {
    lists: BTreeMap<String, SignedRevocationList>,
    /// Lists older than this many seconds are treated as unavailable.
    pub max_age_seconds: Option<i64>,
}

pub enum RevocationStatus {
    Clear,
    Revoked,
    Unavailable(String),
}

impl RevocationStore {
    pub fn apply(&mut self, list: SignedRevocationList, issuer_key: &PublicKey) -> Result<(), RevocationError> {
        list.verify_by(std::slice::from_ref(issuer_key))?;
        if let Some(current) = self.lists.get(&list.body.issuer_id) {
            if list.body.version <= current.body.version {
                if list.digest() == current.digest() {
                    return Ok(());
                }
                return Err(RevocationError::DowngradeRejected {
                    current: current.body.version,
                    offered: list.body.version,
                });
            }
            if !current.body.revoked.is_subset(&list.body.revoked) {
                return Err(RevocationError::Unrevoke);
            }
        }
        self.lists.insert(list.body.issuer_id.clone(), list);
        Ok(())
    }

    pub fn current(&self, issuer_id: &str) -> Option<&SignedRevocationList> {
        self.lists.get(issuer_id)
    }

    pub fn status(&self, issuer_id: &str, credential_id: &str, now: Timestamp) -> RevocationStatus {
        let Some(list) = self.lists.get(issuer_id) else {
            return RevocationStatus::Clear;
        };
        if let Some(max_age) = self.max_age_seconds {
            if now.seconds_since(&list.body.issued_at) > max_age {
                return RevocationStatus::Unavailable(format!("revocation list for {issuer_id} is stale"));
            }
        }
        if list.body.revoked.contains(credential_id) {
            RevocationStatus::Revoked
        } else {
            RevocationStatus::Clear
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PossessionBody {
    pub credential_digest: String,
    pub audience: String,
    pub nonce: String,
    pub timestamp: Timestamp,
}

/// Subject-key signature over (credential digest, audience, nonce, time).
pub type PossessionProof = SignedDocument<PossessionBody>;

pub fn prove_possession(
    credential: &Credential,
    audience: &str,
    nonce: &str,
    timestamp: Timestamp,
    subject_key: &KeyPair,
) -> PossessionProof {
    PossessionProof::sign(
        PossessionBody {
            credential_digest: credential.digest(),
            audience: audience.into(),
            nonce: nonce.into(),
            timestamp,
        },
        subject_key,
    )
}

/// Receiver-side nonce bookkeeping. `check_and_consume` is atomic.
#[derive(Debug, Default)]
pub struct NonceCache {
    inner: Mutex<NonceState>,
    /// When set, only nonces handed out by [`NonceCache::challenge`] are
    /// accepted.
    pub require_issued: bool,
}

#[derive(Debug, Default)]
struct NonceState {
    issued: HashSet<String>,
    consumed: HashSet<String>,
}

impl NonceCache {
    pub fn new(require_issued: bool) -> Self {
        NonceCache {
            inner: Mutex::default(),
            require_issued,
        }
    }

    pub fn challenge(&self) -> String {
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let nonce = hex::encode(bytes);
        self.inner.lock().unwrap().issued.insert(nonce.clone());
        nonce
    }

    /// Marks a nonce as seen without presenting it (fixture replay).
    pub fn mark_consumed(&self, nonce: &str) {
        self.inner.lock().unwrap().consumed.insert(nonce.to_string());
    }

    pub fn check_and_consume(&self, nonce: &str) -> bool {
        let mut state = self.inner.lock().unwrap();
        if self.require_issued && !state.issued.remove(nonce) {
            return false;
        }
        state.consumed.insert(nonce.to_string())
    }
}

/// Issuer standing lookup used by verification (implemented by the trust
/// registry set).
pub trait IssuerVetting {
    fn issuer_active(&self, issuer_id: &str, credential_class: &str, profile: &str, now: Timestamp) -> bool;
}

/// Receiver-side trust material and policy for container verification.
pub struct VerifyPolicy<'a> {
    pub evaluator_id: &'a str,
    pub trusted_issuers: &'a TrustedIssuers,
    pub vetting: &'a dyn IssuerVetting,
    pub revocations: &'a RevocationStore,
    pub nonces: &'a NonceCache,
    pub now: Timestamp,
    pub clock_skew_seconds: i64,
    pub pop_max_age_seconds: i64,
}

/// How a container relates to the rest of the presentation.
pub enum Presentation<'a> {
    /// The live presenter: proof of possession is required.
    Leaf {
        presenter_id: &'a str,
        pop: Option<&'a PossessionProof>,
    },
    /// An interior link of a delegation chain; its subject is the next
    /// link's issuer, not a live presenter.
    Interior,
}

/// Named verification checks, in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStep {
    Signature,
    Issuer,
    Audience,
    Possession,
    Validity,
}

impl VerifyStep {
    pub const ALL: [VerifyStep; 5] = [
        VerifyStep::Signature,
        VerifyStep::Issuer,
        VerifyStep::Audience,
        VerifyStep::Possession,
        VerifyStep::Validity,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VerifyStep::Signature => "verifyContainer: signature",
            VerifyStep::Issuer => "verifyContainer: issuer",
            VerifyStep::Audience => "verifyContainer: audience",
            VerifyStep::Possession => "verifyContainer: proof of possession",
            VerifyStep::Validity => "verifyContainer: expiry and revocation",
        }
    }
}

/// Verifies a container, returning the first failing check. `delegator` is
/// the parent link when the container is a delegation; its subject key is
/// then the expected signing key.
pub fn verify_container(
    credential: &Credential,
    presentation: Presentation<'_>,
    delegator: Option<&Credential>,
    policy: &VerifyPolicy<'_>,
) -> Result<(), (VerifyStep, DenialReason)> {
    let c = &credential.body;
    let fail = |step, code, detail: String| Err((step, DenialReason::new(code, detail)));

    let signer = match credential.verify() {
        Ok(k) => k,
        Err(e) => return fail(VerifyStep::Signature, DenialCode::SignatureInvalid, e.to_string()),
    };

    let trusted_root = policy.trusted_issuers.key_for(&c.issuer_id) == Some(signer);
    // A delegated link is trusted through key continuity; identifier
    // continuity is checked by the chain evaluator.
    let trusted_delegation = delegator.is_some_and(|p| p.body.subject_public_key == signer);
    if !trusted_root && !trusted_delegation {
        return fail(
            VerifyStep::Issuer,
            DenialCode::IssuerUntrusted,
            format!("{} is not a trusted issuer for this signing key", c.issuer_id),
        );
    }
    if trusted_delegation {
        let p = &delegator.unwrap().body;
        if p.credential_class != c.credential_class || p.profile != c.profile {
            return fail(
                VerifyStep::Issuer,
                DenialCode::IssuerNotVetted,
                "delegation changes credential class or profile".into(),
            );
        }
    } else if !policy.vetting.issuer_active(&c.issuer_id, &c.credential_class, &c.profile, policy.now) {
        return fail(
            VerifyStep::Issuer,
            DenialCode::IssuerNotVetted,
            format!("{} has no active standing for {} under {}", c.issuer_id, c.credential_class, c.profile),
        );
    }

    if !c.audience.contains(policy.evaluator_id) {
        return fail(
            VerifyStep::Audience,
            DenialCode::AudienceMismatch,
            format!("{} is not in the credential audience", policy.evaluator_id),
        );
    }

    let expected_presenter = match presentation {
        Presentation::Leaf { presenter_id, pop } => {
            if let Err(why) = check_possession(credential, pop, policy) {
                return fail(VerifyStep::Possession, DenialCode::ProofOfPossessionFailed, why);
            }
            presenter_id
        }
        Presentation::Interior => c.subject_id.as_str(),
    };
    if c.subject_id != expected_presenter {
        return fail(
            VerifyStep::Possession,
            DenialCode::SubjectBindingMismatch,
            format!("presenter {expected_presenter} is not the subject {}", c.subject_id),
        );
    }

    let skew = policy.clock_skew_seconds;
    if policy.now < c.valid_from.plus_seconds(-skew) || policy.now > c.valid_until.plus_seconds(skew) {
        return fail(
            VerifyStep::Validity,
            DenialCode::CredentialExpired,
            format!("{} is outside {}..{}", policy.now, c.valid_from, c.valid_until),
        );
    }
    match policy.revocations.status(&c.issuer_id, &c.credential_id, policy.now) {
        RevocationStatus::Clear => Ok(()),
        RevocationStatus::Revoked => fail(
            VerifyStep::Validity,
            DenialCode::CredentialRevoked,
            format!("{} is revoked", c.credential_id),
        ),
        RevocationStatus::Unavailable(why) => fail(VerifyStep::Validity, DenialCode::CredentialRevoked, why),
    }
}

fn check_possession(credential: &Credential, pop: Option<&PossessionProof>, policy: &VerifyPolicy<'_>) -> Result<(), String> {
    let pop = pop.ok_or("no proof of possession presented")?;
    pop.verify_by(&[credential.body.subject_public_key])
        .map_err(|e| format!("possession signature: {e}"))?;
    let b = &pop.body;
    if b.credential_digest != credential.digest() {
        return Err("proof is bound to a different credential".into());
    }
    if b.audience != policy.evaluator_id {
        return Err(format!("proof is bound to audience {}", b.audience));
    }
    if policy.now.seconds_since(&b.timestamp).abs() > policy.pop_max_age_seconds {
        return Err("proof timestamp is outside the accepted window".into());
    }
    if !policy.nonces.check_and_consume(&b.nonce) {
        return Err("nonce was replayed or never issued".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::Constraint;
    use serde_json::json;

    struct AllVetted;
    impl IssuerVetting for AllVetted {
        fn issuer_active(&self, _: &str, _: &str, _: &str, _: Timestamp) -> bool {
            true
        }
    }

    fn ts(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    fn lte(v: &str) -> Constraint {
        serde_json::from_value(json!({"type": "NumericLimitConstraint", "field": "core.amount", "operator": "lte", "value": v, "currency": "USD"})).unwrap()
    }

    fn issuance(agent: &str, issuer: &str, constraints: Vec<Constraint>, subject: &KeyPair) -> Issuance {
        Issuance {
            credential_id: format!("cred-{agent}"),
            payload: AuthorizationPayload::new(agent, issuer, ["claim.settle"], constraints),
            subject_public_key: subject.public(),
            audience: ["svc:bodyshopco:claims-api".to_string()].into(),
            valid_from: ts("2026-04-18T00:00:00Z"),
            valid_until: ts("2026-04-18T23:59:59Z"),
            credential_class: DEFAULT_CREDENTIAL_CLASS.into(),
            profile: "insurance/1".into(),
        }
    }

    struct Fixture {
        issuer: KeyPair,
        agent: KeyPair,
        trusted: TrustedIssuers,
        revocations: RevocationStore,
        nonces: NonceCache,
    }

    impl Fixture {
        fn new() -> Self {
            let issuer = KeyPair::from_label("iss");
            let mut trusted = TrustedIssuers::default();
            trusted.add("iss:megainsure", issuer.public());
            Fixture {
                issuer,
                agent: KeyPair::from_label("agent"),
                trusted,
                revocations: RevocationStore::default(),
                nonces: NonceCache::default(),
            }
        }

        fn policy(&self, evaluator: &'static str) -> VerifyPolicy<'_> {
            VerifyPolicy {
                evaluator_id: evaluator,
                trusted_issuers: &self.trusted,
                vetting: &AllVetted,
                revocations: &self.revocations,
                nonces: &self.nonces,
                now: ts("2026-04-18T14:32:00Z"),
                clock_skew_seconds: 0,
                pop_max_age_seconds: 300,
            }
        }

        fn credential(&self) -> Credential {
            issue_credential(issuance("agent:n7", "iss:megainsure", vec![lte("5000")], &self.agent), &self.issuer, None).unwrap()
        }

        fn pop(&self, c: &Credential, nonce: &str) -> PossessionProof {
            prove_possession(c, "svc:bodyshopco:claims-api", nonce, ts("2026-04-18T14:31:00Z"), &self.agent)
        }
    }

    fn verify(f: &Fixture, c: &Credential, pop: &PossessionProof, evaluator: &'static str) -> Result<(), DenialCode> {
        verify_container(
            c,
            Presentation::Leaf {
                presenter_id: "agent:n7",
                pop: Some(pop),
            },
            None,
            &f.policy(evaluator),
        )
        .map_err(|(_, r)| r.code)
    }

    #[test]
    fn roundtrip_and_transport() {
        let f = Fixture::new();
        let c = f.credential();
        let again = parse_container(&c.to_bytes()).unwrap();
        assert_eq!(again, c);
        assert_eq!(parse_container(encode_transport(&c).as_bytes()).unwrap(), c);
        let bytes = c.to_bytes();
        assert!(parse_container(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn unknown_top_level_field_is_kept_under_signature() {
        let f = Fixture::new();
        let c = f.credential();
        let mut doc = c.document.clone();
        doc["x_extension"] = json!("note");
        crate::crypto::sign_object(doc.as_object_mut().unwrap(), &f.issuer);
        let parsed = parse_container(&crate::canonical::to_bytes(&doc)).unwrap();
        assert!(parsed.verify().is_ok());
        assert_eq!(parsed.body, c.body);
        let mut altered = parsed.document.clone();
        altered["x_extension"] = json!("changed");
        let altered = parse_container(&crate::canonical::to_bytes(&altered)).unwrap();
        assert!(altered.verify().is_err());
    }

    #[test]
    fn happy_path_and_audience() {
        let f = Fixture::new();
        let c = f.credential();
        assert_eq!(verify(&f, &c, &f.pop(&c, "n1"), "svc:bodyshopco:claims-api"), Ok(()));
        assert_eq!(verify(&f, &c, &f.pop(&c, "n2"), "svc:other"), Err(DenialCode::AudienceMismatch));
    }

    #[test]
    fn replayed_nonce_fails() {
        let f = Fixture::new();
        let c = f.credential();
        let pop = f.pop(&c, "n1");
        assert_eq!(verify(&f, &c, &pop, "svc:bodyshopco:claims-api"), Ok(()));
        assert_eq!(verify(&f, &c, &pop, "svc:bodyshopco:claims-api"), Err(DenialCode::ProofOfPossessionFailed));
    }

    #[test]
    fn issued_nonces_only_when_required() {
        let cache = NonceCache::new(true);
        assert!(!cache.check_and_consume("made-up"));
        let n = cache.challenge();
        assert!(cache.check_and_consume(&n));
        assert!(!cache.check_and_consume(&n));
    }

    #[test]
    fn revoked_between_requests() {
        let mut f = Fixture::new();
        let c = f.credential();
        assert_eq!(verify(&f, &c, &f.pop(&c, "a"), "svc:bodyshopco:claims-api"), Ok(()));
        let list = revoke(&c.body.credential_id, &RevocationList::empty("iss:megainsure", ts("2026-04-18T00:00:00Z")), &f.issuer, ts("2026-04-18T14:00:00Z"));
        let key = f.issuer.public();
        f.revocations.apply(list, &key).unwrap();
        assert_eq!(verify(&f, &c, &f.pop(&c, "b"), "svc:bodyshopco:claims-api"), Err(DenialCode::CredentialRevoked));
    }

    #[test]
    fn revocation_versions() {
        let issuer = KeyPair::from_label("iss");
        let now = ts("2026-04-18T00:00:00Z");
        let mut v3 = RevocationList::empty("iss", now);
        v3.version = 3;
        let v4 = revoke("X", &v3, &issuer, now);
        assert_eq!(v4.body.version, 4);
        assert_eq!(v4.body.revoked, ["X".to_string()].into());
        let again = revoke("X", &v4.body, &issuer, now);
        assert_eq!(again.body.version, 5);
        assert_eq!(again.body.revoked.len(), 1);

        let mut store = RevocationStore::default();
        store.apply(v4.clone(), &issuer.public()).unwrap();
        let signed_v3 = SignedRevocationList::sign(v3, &issuer);
        assert!(matches!(store.apply(signed_v3, &issuer.public()), Err(RevocationError::DowngradeRejected { .. })));
        store.apply(v4, &issuer.public()).unwrap();
        let mut dropped = again.body.clone();
        dropped.version = 9;
        dropped.revoked.clear();
        let dropped = SignedRevocationList::sign(dropped, &issuer);
        assert!(matches!(store.apply(dropped, &issuer.public()), Err(RevocationError::Unrevoke)));
    }

    #[test]
    fn stale_revocation_list_denies() {
        let mut f = Fixture::new();
        let c = f.credential();
        let list = SignedRevocationList::sign(RevocationList::empty("iss:megainsure", ts("2026-04-01T00:00:00Z")), &f.issuer);
        let key = f.issuer.public();
        f.revocations.apply(list, &key).unwrap();
        f.revocations.max_age_seconds = Some(86_400);
        assert_eq!(verify(&f, &c, &f.pop(&c, "a"), "svc:bodyshopco:claims-api"), Err(DenialCode::CredentialRevoked));
    }

    #[test]
    fn delegation_rules() {
        let f = Fixture::new();
        let root = f.credential();
        let sub = KeyPair::from_label("sub");
        let narrowed = issuance("agent:sub", "agent:n7", vec![lte("3000")], &sub);
        assert!(issue_credential(narrowed.clone(), &f.agent, Some(&root)).is_ok());
        let widened = issuance("agent:sub", "agent:n7", vec![lte("6000")], &sub);
        assert!(matches!(issue_credential(widened, &f.agent, Some(&root)), Err(IssueError::AttenuationViolation(_))));
        assert!(matches!(issue_credential(narrowed.clone(), &sub, Some(&root)), Err(IssueError::AttenuationViolation(_))));
        let mut more = narrowed;
        more.payload.permissions.as_mut().unwrap().insert("claim.approve".into());
        assert!(matches!(issue_credential(more, &f.agent, Some(&root)), Err(IssueError::AttenuationViolation(_))));
    }

    #[test]
    fn empty_audience_rejected() {
        let f = Fixture::new();
        let mut i = issuance("agent:self", "agent:self", vec![], &f.agent);
        i.audience.clear();
        assert!(matches!(issue_credential(i, &f.agent, None), Err(IssueError::InvalidPayload(_))));
    }

    #[test]
    fn every_bit_flip_is_detected() {
        let f = Fixture::new();
        let c = f.credential();
        let bytes = c.to_bytes();
        let step = (bytes.len() / 97).max(1);
        for i in (0..bytes.len()).step_by(step) {
            for bit in [0u8, 3, 6] {
                let mut m = bytes.clone();
                m[i] ^= 1 << bit;
                if let Ok(parsed) = parse_container(&m) {
                    assert!(parsed.verify().is_err(), "flip at {i} bit {bit} went undetected");
                }
            }
        }
    }
}
