//! Named, fully deterministic fixture bundles. Every key is derived from a
//! label, so building a bundle twice yields byte-identical artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical;
use crate::config::EngineSpec;
use crate::constraint::{
    Constraint, EnumeratedListConstraint, MatchKind, NumericLimitConstraint, NumericOperator, StringPatternConstraint,
    TemporalWindowConstraint,
};
use crate::container::{
    issue_credential, prove_possession, Credential, CredentialContainer, Issuance, PossessionProof, TrustedIssuers,
    DEFAULT_CREDENTIAL_CLASS,
};
use crate::crypto::{KeyFile, KeyPair, SignedDocument};
use crate::model::{AuthorizationPayload, RequestContext};
use crate::pipeline::{Engine, EngineConfig, Evaluation, LocalPolicy, Request};
use crate::registry::{IssuerRecord, SignedRegistry, Standing, TrustRegistry, VocabularyRef};
use crate::semantic::{Alias, EntryStatus, MappingProfile, SignedMappingProfile, Vocabulary, VocabularyEntry};
use crate::value::{SemanticType, Timestamp, TypedValue};

pub const SCENARIOS: [&str; 2] = ["insurance_claims", "supply_chain"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown_scenario: {0}")]
pub struct UnknownScenario(pub String);

/// One request against a bundle and the verdict it must produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCase {
    pub name: String,
    pub description: String,
    /// Credential names, root first.
    pub credentials: Vec<String>,
    pub presenter_id: String,
    pub nonce: String,
    pub context: RequestContext,
    /// `ALLOW` or `DENY(code)`.
    pub expected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_constraint: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub name: String,
    pub now: Timestamp,
    pub evaluator_id: String,
    /// Every key in the bundle by label, including the steward and the
    /// evaluator's audit key.
    pub keys: BTreeMap<String, KeyPair>,
    pub steward_label: String,
    pub evaluator_label: String,
    pub trusted_issuers: TrustedIssuers,
    pub registry: SignedRegistry,
    pub vocabularies: Vec<SignedDocument<Vocabulary>>,
    pub mapping_profile: SignedMappingProfile,
    pub local_policy: LocalPolicy,
    pub credentials: BTreeMap<String, Credential>,
    /// Which key label proves possession for a credential's subject.
    pub subject_keys: BTreeMap<String, String>,
    pub cases: Vec<ScenarioCase>,
}

pub fn load_scenario(name: &str) -> Result<ScenarioBundle, UnknownScenario> {
    match name {
        "insurance_claims" => Ok(insurance_claims()),
        "supply_chain" => Ok(supply_chain()),
        other => Err(UnknownScenario(other.to_string())),
    }
}

fn ts(s: &str) -> Timestamp {
    s.parse().expect("fixture timestamp")
}

fn dec(s: &str) -> TypedValue {
    TypedValue::Decimal(s.parse().expect("fixture decimal"))
}

fn id(s: &str) -> TypedValue {
    TypedValue::StringId(s.into())
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn numeric(cid: &str, field: &str, op: NumericOperator, value: &str, currency: Option<&str>) -> Constraint {
    Constraint::NumericLimit(NumericLimitConstraint {
        id: Some(cid.into()),
        field: field.into(),
        operator: op,
        value: value.parse().expect("fixture decimal"),
        currency: currency.map(Into::into),
        unit: None,
    })
}

fn window(cid: &str, field: &str, from: &str, until: &str) -> Constraint {
    Constraint::TemporalWindow(TemporalWindowConstraint {
        id: Some(cid.into()),
        field: field.into(),
        valid_from: ts(from),
        valid_until: ts(until),
        timezone: "UTC".into(),
        allowed_days: None,
    })
}

fn allowed(cid: &str, field: &str, values: &[&str]) -> Constraint {
    Constraint::EnumeratedList(EnumeratedListConstraint {
        id: Some(cid.into()),
        field: field.into(),
        allowed: Some(set(values)),
        denied: None,
    })
}

fn entry(identifier: &str, kind: SemanticType, status: EntryStatus, description: &str) -> VocabularyEntry {
    VocabularyEntry {
        identifier: identifier.into(),
        kind,
        status,
        description: description.into(),
    }
}

fn alias(identifier: &str, local_field: &str, local_type: SemanticType) -> Alias {
    Alias {
        identifier: identifier.into(),
        local_field: local_field.into(),
        local_type,
    }
}

/// Incremental builder shared by both bundles.
struct Builder {
    bundle: ScenarioBundle,
}

impl Builder {
    fn new(name: &str, now: &str, evaluator_id: &str, steward: &str) -> Self {
        let mut keys = BTreeMap::new();
        let evaluator_label = format!("audit:{evaluator_id}");
        keys.insert(steward.to_string(), KeyPair::from_label(steward));
        keys.insert(evaluator_label.clone(), KeyPair::from_label(&evaluator_label));
        let placeholder = TrustRegistry {
            registry_id: String::new(),
            version: 0,
            issuers: vec![],
            state_authorities: vec![],
            vocabulary_refs: vec![],
            valid_from: ts(now),
            valid_until: ts(now),
        };
        let steward_key = &keys[steward];
        let mapping = SignedMappingProfile::sign(MappingProfile::identity("none", 0, ts(now), &[]), steward_key);
        Builder {
            bundle: ScenarioBundle {
                name: name.into(),
                now: ts(now),
                evaluator_id: evaluator_id.into(),
                registry: SignedRegistry::sign(placeholder, steward_key),
                keys,
                steward_label: steward.into(),
                evaluator_label,
                trusted_issuers: TrustedIssuers::default(),
                vocabularies: vec![],
                mapping_profile: mapping,
                local_policy: LocalPolicy::default(),
                credentials: BTreeMap::new(),
                subject_keys: BTreeMap::new(),
                cases: vec![],
            },
        }
    }

    fn key(&mut self, label: &str) -> KeyPair {
        self.bundle
            .keys
            .entry(label.to_string())
            .or_insert_with(|| KeyPair::from_label(label))
            .clone()
    }

    fn steward(&self) -> KeyPair {
        self.bundle.keys[&self.bundle.steward_label].clone()
    }

    fn trust(&mut self, issuer: &str) {
        let k = self.key(issuer).public();
        self.bundle.trusted_issuers.add(issuer, k);
    }

    fn vocabulary(&mut self, vocab: Vocabulary) -> Vocabulary {
        let doc = SignedDocument::sign(vocab.clone(), &self.steward());
        self.bundle.vocabularies.push(doc);
        vocab
    }

    fn registry(&mut self, mut registry: TrustRegistry) {
        for v in &self.bundle.vocabularies {
            registry.vocabulary_refs.push(VocabularyRef {
                profile_id: v.body.profile_id.clone(),
                version: v.body.version,
                digest: v.digest(),
            });
        }
        self.bundle.registry = SignedRegistry::sign(registry, &self.steward());
    }

    fn mapping(&mut self, profile: MappingProfile) {
        self.bundle.mapping_profile = SignedMappingProfile::sign(profile, &self.steward());
    }

    #[allow(clippy::too_many_arguments)]
    fn issue(
        &mut self,
        name: &str,
        issuer: &str,
        subject: &str,
        audience: &[&str],
        valid: (&str, &str),
        profile: &str,
        permissions: &[&str],
        constraints: Vec<Constraint>,
        parent: Option<&str>,
    ) {
        let issuer_key = self.key(issuer);
        let subject_key = self.key(subject);
        let parent = parent.map(|p| self.bundle.credentials[p].clone());
        let cred = issue_credential(
            Issuance {
                credential_id: format!("urn:cred:{}:{name}", self.bundle.name),
                payload: AuthorizationPayload::new(subject, issuer, permissions.iter().copied(), constraints),
                subject_public_key: subject_key.public(),
                audience: set(audience),
                valid_from: ts(valid.0),
                valid_until: ts(valid.1),
                credential_class: DEFAULT_CREDENTIAL_CLASS.into(),
                profile: profile.into(),
            },
            &issuer_key,
            parent.as_ref(),
        )
        .expect("fixture credential must be issuable");
        self.bundle.credentials.insert(name.into(), cred);
        self.bundle.subject_keys.insert(name.into(), subject.into());
    }

    /// Signs a container without issuance checks, for fixtures that must
    /// carry a defect the issuer would have refused.
    fn forge(&mut self, name: &str, signer: &str, subject: &str, container: CredentialContainer) {
        let key = self.key(signer);
        self.key(subject);
        self.bundle.credentials.insert(name.into(), Credential::sign(container, &key));
        self.bundle.subject_keys.insert(name.into(), subject.into());
    }

    fn case(&mut self, name: &str, description: &str, creds: &[&str], presenter: &str, context: RequestContext, expected: &str, constraint: Option<&str>) {
        self.bundle.cases.push(ScenarioCase {
            name: name.into(),
            description: description.into(),
            credentials: creds.iter().map(|s| s.to_string()).collect(),
            presenter_id: presenter.into(),
            nonce: format!("nonce-{}-{name}", self.bundle.name),
            context,
            expected: expected.into(),
            expected_constraint: constraint.map(Into::into),
        });
    }
}

pub const INSURANCE_ISSUER: &str = "iss:megainsure:claims-authority";
pub const INSURANCE_AGENT: &str = "agent:megainsure:negotiator-7";
pub const INSURANCE_EVALUATOR: &str = "svc:bodyshopco:claims-api";
pub const INSURANCE_PROFILE: &str = "insurance/1";

fn insurance_claims() -> ScenarioBundle {
    let now = "2026-04-18T14:32:00Z";
    let mut b = Builder::new("insurance_claims", now, INSURANCE_EVALUATOR, "steward:insurance-consortium");
    let suspended = "iss:shadyinsure:claims-desk";
    b.trust(INSURANCE_ISSUER);
    b.trust(suspended);

    b.vocabulary(Vocabulary {
        profile_id: "insurance".into(),
        version: 1,
        entries: vec![
            entry("insurance.claim_type", SemanticType::StringId, EntryStatus::Required, "Claim category code"),
            entry("insurance.policy_number", SemanticType::StringId, EntryStatus::Conditional, "Policy under which the claim is filed"),
        ],
    });
    b.registry(TrustRegistry {
        registry_id: "reg:insurance-consortium".into(),
        version: 3,
        issuers: vec![
            IssuerRecord {
                issuer_id: INSURANCE_ISSUER.into(),
                standing: Standing::Active,
                credential_classes: set(&[DEFAULT_CREDENTIAL_CLASS]),
                profiles: set(&[INSURANCE_PROFILE]),
            },
            IssuerRecord {
                issuer_id: suspended.into(),
                standing: Standing::Suspended,
                credential_classes: set(&[DEFAULT_CREDENTIAL_CLASS]),
                profiles: set(&[INSURANCE_PROFILE]),
            },
        ],
        state_authorities: vec![],
        vocabulary_refs: vec![],
        valid_from: ts("2026-01-01T00:00:00Z"),
        valid_until: ts("2026-12-31T23:59:59Z"),
    });
    b.mapping(MappingProfile {
        profile_id: "bodyshopco-claims".into(),
        version: 2,
        valid_until: Some(ts("2026-12-31T23:59:59Z")),
        aliases: vec![
            alias("core.request_time", "received_at", SemanticType::Timestamp),
            alias("core.amount", "settlement_total", SemanticType::Decimal),
            alias("core.currency_code", "settlement_currency", SemanticType::StringCode),
            alias("core.workflow_id", "case_number", SemanticType::StringId),
            alias("core.resource_id", "resource_path", SemanticType::StringId),
            alias("insurance.claim_type", "claim_category", SemanticType::StringId),
        ],
    });
    b.bundle.local_policy = LocalPolicy {
        constraints: vec![],
        required_context_fields: set(&["core.workflow_id"]),
    };

    let constraints = || {
        vec![
            window("C1", "core.request_time", "2026-04-18T00:00:00Z", "2026-04-18T23:59:59Z"),
            numeric("C2", "core.amount", NumericOperator::Lte, "5000", Some("USD")),
            numeric("C3", "core.amount", NumericOperator::Gte, "500", Some("USD")),
            allowed("C4", "insurance.claim_type", &["auto_collision", "auto_comprehensive"]),
        ]
    };
    let validity = ("2026-04-01T00:00:00Z", "2026-05-01T00:00:00Z");
    let perms = ["claim.settle", "claim.read"];
    b.issue("negotiator", INSURANCE_ISSUER, INSURANCE_AGENT, &[INSURANCE_EVALUATOR], validity, INSURANCE_PROFILE, &perms, constraints(), None);
    b.issue("other_audience", INSURANCE_ISSUER, INSURANCE_AGENT, &["svc:othershop:claims-api"], validity, INSURANCE_PROFILE, &perms, constraints(), None);
    b.issue("expired", INSURANCE_ISSUER, INSURANCE_AGENT, &[INSURANCE_EVALUATOR], ("2026-03-01T00:00:00Z", "2026-04-01T00:00:00Z"), INSURANCE_PROFILE, &perms, constraints(), None);
    b.issue("suspended_issuer", suspended, INSURANCE_AGENT, &[INSURANCE_EVALUATOR], validity, INSURANCE_PROFILE, &perms, constraints(), None);

    let ctx = |amount: &str, currency: &str, claim: &str, at: &str| {
        RequestContext::new("claim.settle")
            .with("received_at", TypedValue::Timestamp(ts(at)))
            .with("settlement_total", dec(amount))
            .with("settlement_currency", TypedValue::StringCode(currency.into()))
            .with("claim_category", id(claim))
            .with("case_number", id("CLM-90421"))
            .with("resource_path", id("claims/auto/CLM-90421"))
    };
    let base = || ctx("3200", "USD", "auto_collision", now);
    let n = ["negotiator"];
    b.case("worked_allow", "Settlement of USD 3200 for an auto collision claim", &n, INSURANCE_AGENT, base(), "ALLOW", None);
    b.case("over_limit", "Settlement above the USD 5000 ceiling", &n, INSURANCE_AGENT, ctx("7500", "USD", "auto_collision", now), "DENY(constraint_failed)", Some("C2"));
    b.case("below_floor", "Settlement below the USD 500 floor", &n, INSURANCE_AGENT, ctx("200", "USD", "auto_collision", now), "DENY(constraint_failed)", Some("C3"));
    b.case("currency_mismatch", "Amount denominated in EUR", &n, INSURANCE_AGENT, ctx("3200", "EUR", "auto_collision", now), "DENY(constraint_failed)", Some("C2"));
    b.case("claim_type_excluded", "Theft claims are outside the grant", &n, INSURANCE_AGENT, ctx("3200", "USD", "theft", now), "DENY(constraint_failed)", Some("C4"));
    b.case("outside_window", "Request stamped the following day", &n, INSURANCE_AGENT, ctx("3200", "USD", "auto_collision", "2026-04-19T08:00:00Z"), "DENY(constraint_failed)", Some("C1"));
    let mut approve = base();
    approve.action = "claim.approve".into();
    b.case("wrong_permission", "Approval is not granted", &n, INSURANCE_AGENT, approve, "DENY(permission_denied)", None);
    let mut no_case = base();
    no_case.fields.remove("case_number");
    b.case("missing_workflow_id", "Local policy requires a case number", &n, INSURANCE_AGENT, no_case, "DENY(context_field_missing)", None);
    let mut no_amount = base();
    no_amount.fields.remove("settlement_total");
    b.case("missing_amount", "Constrained field absent from the request", &n, INSURANCE_AGENT, no_amount, "DENY(context_field_missing)", None);
    let mut wrong_kind = base();
    wrong_kind.fields.insert("settlement_total".into(), TypedValue::StringId("lots".into()));
    b.case("amount_type_mismatch", "Amount supplied as an identifier", &n, INSURANCE_AGENT, wrong_kind, "DENY(semantic_type_mismatch)", None);
    b.case("wrong_presenter", "Presenter is not the credential subject", &n, "agent:megainsure:negotiator-8", base(), "DENY(subject_binding_mismatch)", None);
    b.case("other_audience", "Credential addressed to another service", &["other_audience"], INSURANCE_AGENT, base(), "DENY(audience_mismatch)", None);
    b.case("expired", "Credential validity ended", &["expired"], INSURANCE_AGENT, base(), "DENY(credential_expired)", None);
    b.case("suspended_issuer", "Issuer is locally trusted but suspended in the registry", &["suspended_issuer"], INSURANCE_AGENT, base(), "DENY(issuer_not_vetted)", None);
    b.bundle
}

pub const SUPPLY_ISSUER: &str = "iss:aerotrust:compliance-office";
pub const SUPPLY_AGENT: &str = "agent:aerotrust:evidence-broker";
pub const SUPPLY_DELEGATE: &str = "agent:aerotrust:audit-assistant";
pub const SUPPLY_EVALUATOR: &str = "svc:primeco:evidence-gateway";
pub const SUPPLY_PROFILE: &str = "supplychain/1";

fn supply_chain() -> ScenarioBundle {
    let now = "2026-06-15T09:00:00Z";
    let mut b = Builder::new("supply_chain", now, SUPPLY_EVALUATOR, "steward:aerospace-assurance-board");
    b.trust(SUPPLY_ISSUER);
    b.vocabulary(Vocabulary {
        profile_id: "supplychain".into(),
        version: 1,
        entries: vec![
            entry("supplychain.evidence_type", SemanticType::StringId, EntryStatus::Required, "Kind of compliance evidence"),
            entry("supplychain.recipient_role", SemanticType::StringId, EntryStatus::Required, "Role of the party receiving evidence"),
            entry("supplychain.component_id", SemanticType::StringId, EntryStatus::Required, "Hierarchical component and lot path"),
            entry("supplychain.max_records_disclosed", SemanticType::Integer, EntryStatus::Conditional, "Records released by one request"),
        ],
    });
    b.registry(TrustRegistry {
        registry_id: "reg:aerospace-assurance".into(),
        version: 1,
        issuers: vec![IssuerRecord {
            issuer_id: SUPPLY_ISSUER.into(),
            standing: Standing::Active,
            credential_classes: set(&[DEFAULT_CREDENTIAL_CLASS]),
            profiles: set(&[SUPPLY_PROFILE]),
        }],
        state_authorities: vec![],
        vocabulary_refs: vec![],
        valid_from: ts("2026-01-01T00:00:00Z"),
        valid_until: ts("2027-01-01T00:00:00Z"),
    });
    b.mapping(MappingProfile {
        profile_id: "primeco-gateway".into(),
        version: 1,
        valid_until: Some(ts("2026-12-31T23:59:59Z")),
        aliases: vec![
            alias("core.request_time", "requested_at", SemanticType::Timestamp),
            alias("core.resource_id", "resource", SemanticType::StringId),
            alias("supplychain.evidence_type", "evidence_kind", SemanticType::StringId),
            alias("supplychain.recipient_role", "recipient_role", SemanticType::StringId),
            alias("supplychain.component_id", "part_path", SemanticType::StringId),
            alias("supplychain.max_records_disclosed", "record_count", SemanticType::Integer),
        ],
    });
    b.bundle.local_policy = LocalPolicy {
        constraints: vec![],
        required_context_fields: set(&["supplychain.recipient_role"]),
    };

    let pattern = |cid: &str, p: &str| {
        Constraint::StringPattern(StringPatternConstraint {
            id: Some(cid.into()),
            field: "supplychain.component_id".into(),
            match_kind: MatchKind::RestrictedGlob,
            pattern: p.into(),
        })
    };
    let root_constraints = vec![
        allowed("C1", "supplychain.evidence_type", &["origin_attestation", "test_certificate", "material_compliance"]),
        allowed("C2", "supplychain.recipient_role", &["prime_contractor", "certified_auditor", "regulator"]),
        pattern("C3", "aerospace/components/*/lot/*"),
        window("C4", "core.request_time", "2026-01-01T00:00:00Z", "2026-12-31T23:59:59Z"),
        numeric("C5", "supplychain.max_records_disclosed", NumericOperator::Lte, "100", None),
    ];
    let child_constraints = vec![
        allowed("D1", "supplychain.evidence_type", &["test_certificate"]),
        allowed("D2", "supplychain.recipient_role", &["certified_auditor"]),
        pattern("D3", "aerospace/components/turbine-*/lot/*"),
        window("D4", "core.request_time", "2026-06-01T00:00:00Z", "2026-06-30T23:59:59Z"),
        numeric("D5", "supplychain.max_records_disclosed", NumericOperator::Lte, "20", None),
    ];
    let validity = ("2026-01-01T00:00:00Z", "2026-12-31T23:59:59Z");
    let perms = ["evidence.present", "evidence.list"];
    b.issue("broker", SUPPLY_ISSUER, SUPPLY_AGENT, &[SUPPLY_EVALUATOR], validity, SUPPLY_PROFILE, &perms, root_constraints, None);
    b.issue("assistant", SUPPLY_AGENT, SUPPLY_DELEGATE, &[SUPPLY_EVALUATOR], ("2026-06-01T00:00:00Z", "2026-06-30T23:59:59Z"), SUPPLY_PROFILE, &["evidence.present"], child_constraints.clone(), Some("broker"));

    let parent = b.bundle.credentials["broker"].clone();
    let legit = b.bundle.credentials["assistant"].body.clone();
    let mut widened = legit.clone();
    widened.credential_id = "urn:cred:supply_chain:widened".into();
    let mut wide = child_constraints.clone();
    wide[4] = numeric("D5", "supplychain.max_records_disclosed", NumericOperator::Lte, "500", None);
    widened.payload.constraints = Some(wide);
    b.forge("widened", SUPPLY_AGENT, SUPPLY_DELEGATE, widened);
    let mut broken = legit.clone();
    broken.credential_id = "urn:cred:supply_chain:broken".into();
    broken.parent_digest = Some(canonical::digest_hex(b"not the parent"));
    b.forge("broken_link", SUPPLY_AGENT, SUPPLY_DELEGATE, broken);
    let mut extra_perm = legit;
    extra_perm.credential_id = "urn:cred:supply_chain:extra-permission".into();
    extra_perm.payload.permissions = Some(set(&["evidence.present", "evidence.delete"]));
    b.forge("extra_permission", SUPPLY_AGENT, SUPPLY_DELEGATE, extra_perm);
    debug_assert_eq!(parent.digest(), b.bundle.credentials["broker"].digest());

    let ctx = |kind: &str, role: &str, part: &str, records: i64, at: &str| {
        RequestContext::new("evidence.present")
            .with("requested_at", TypedValue::Timestamp(ts(at)))
            .with("resource", id(&format!("evidence/{part}")))
            .with("evidence_kind", id(kind))
            .with("recipient_role", id(role))
            .with("part_path", id(part))
            .with("record_count", TypedValue::Integer(records))
    };
    let part = "aerospace/components/turbine-blade-7/lot/L2291";
    let base = || ctx("test_certificate", "certified_auditor", part, 12, now);
    let root = ["broker"];
    let chain = ["broker", "assistant"];
    b.case("broker_allow", "Broker presents a test certificate to an auditor", &root, SUPPLY_AGENT, base(), "ALLOW", None);
    b.case("evidence_type_excluded", "Financial records are not releasable", &root, SUPPLY_AGENT, ctx("financial_statement", "certified_auditor", part, 12, now), "DENY(constraint_failed)", Some("C1"));
    b.case("recipient_excluded", "Competitors are not permitted recipients", &root, SUPPLY_AGENT, ctx("test_certificate", "competitor", part, 12, now), "DENY(constraint_failed)", Some("C2"));
    b.case("component_outside_pattern", "Component path outside the aerospace tree", &root, SUPPLY_AGENT, ctx("test_certificate", "certified_auditor", "marine/components/hull/lot/L1", 12, now), "DENY(constraint_failed)", Some("C3"));
    b.case("outside_year", "Request after the disclosure window", &root, SUPPLY_AGENT, ctx("test_certificate", "certified_auditor", part, 12, "2027-01-02T00:00:00Z"), "DENY(constraint_failed)", Some("C4"));
    b.case("too_many_records", "Disclosure of 150 records", &root, SUPPLY_AGENT, ctx("test_certificate", "certified_auditor", part, 150, now), "DENY(constraint_failed)", Some("C5"));
    b.case("delegate_allow", "Delegated assistant within its narrowed grant", &chain, SUPPLY_DELEGATE, base(), "ALLOW", None);
    b.case("delegate_narrowed_records", "Delegate exceeds its 20 record ceiling", &chain, SUPPLY_DELEGATE, ctx("test_certificate", "certified_auditor", part, 50, now), "DENY(constraint_failed)", Some("D5"));
    b.case("delegate_narrowed_component", "Delegate is limited to turbine components", &chain, SUPPLY_DELEGATE, ctx("test_certificate", "certified_auditor", "aerospace/components/landing-gear/lot/L7", 12, now), "DENY(constraint_failed)", Some("D3"));
    b.case("delegate_widened", "Delegation raises the record ceiling", &["broker", "widened"], SUPPLY_DELEGATE, base(), "DENY(delegation_widened)", None);
    b.case("delegate_extra_permission", "Delegation adds a permission", &["broker", "extra_permission"], SUPPLY_DELEGATE, base(), "DENY(delegation_widened)", None);
    b.case("delegate_broken_link", "Delegation names the wrong parent", &["broker", "broken_link"], SUPPLY_DELEGATE, base(), "DENY(delegation_chain_broken)", None);
    b.bundle
}

impl ScenarioBundle {
    pub fn steward(&self) -> &KeyPair {
        &self.keys[&self.steward_label]
    }

    pub fn evaluator_key(&self) -> &KeyPair {
        &self.keys[&self.evaluator_label]
    }

    pub fn case(&self, name: &str) -> Option<&ScenarioCase> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut config = EngineConfig::new(&self.evaluator_id, self.evaluator_key().clone());
        config.now = Some(self.now);
        config.trusted_issuers = self.trusted_issuers.clone();
        config.steward_keys = vec![self.steward().public()];
        config.registries = crate::registry::RegistrySet::new(vec![self.registry.clone()]);
        config.vocabularies = self
            .vocabularies
            .iter()
            .map(|v| Vocabulary::from_signed(v, &config.steward_keys).expect("fixture vocabulary"))
            .collect();
        config.mapping_profile = Some(self.mapping_profile.clone());
        config.local_policy = self.local_policy.clone();
        config
    }

    pub fn engine(&self) -> Engine {
        Engine::new(self.engine_config())
    }

    pub fn chain(&self, case: &ScenarioCase) -> Vec<Credential> {
        case.credentials.iter().map(|n| self.credentials[n].clone()).collect()
    }

    /// Possession proof by the leaf subject, thirty seconds before `now`.
    pub fn pop_for(&self, case: &ScenarioCase) -> PossessionProof {
        let leaf_name = case.credentials.last().expect("case has a credential");
        let key = &self.keys[&self.subject_keys[leaf_name]];
        prove_possession(&self.credentials[leaf_name], &self.evaluator_id, &case.nonce, self.now.plus_seconds(-30), key)
    }

    pub fn request(&self, case: &ScenarioCase) -> Request {
        Request {
            credentials: self.chain(case),
            presenter_id: case.presenter_id.clone(),
            pop: Some(self.pop_for(case)),
            vouchers: vec![],
        }
    }

    pub fn run_case(&self, engine: &Engine, case: &ScenarioCase) -> Evaluation {
        engine.evaluate_request(&self.request(case), &case.context)
    }

    /// Writes the bundle as a directory the CLI can consume: `config.json`
    /// referencing the other artifacts, key files, credentials, and one file
    /// per case with its possession proof.
    pub fn export(&self, dir: &Path) -> std::io::Result<()> {
        let write = |rel: &str, value: &Value| -> std::io::Result<()> {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
            text.push('\n');
            std::fs::write(path, text)
        };
        for (label, key) in &self.keys {
            write(&format!("keys/{}.json", file_name(label)), &to_value(&KeyFile::secret(label, key)))?;
        }
        write("trusted_issuers.json", &to_value(&self.trusted_issuers))?;
        write("registry.json", &self.registry.document)?;
        let mut vocab_paths = vec![];
        for v in &self.vocabularies {
            let rel = format!("vocabularies/{}.json", file_name(&v.body.key()));
            write(&rel, &v.document)?;
            vocab_paths.push(Value::String(rel));
        }
        write("mapping_profile.json", &self.mapping_profile.document)?;
        write("local_policy.json", &to_value(&self.local_policy))?;
        for (name, cred) in &self.credentials {
            write(&format!("credentials/{name}.json"), &cred.document)?;
        }

        let mut spec = EngineSpec::new(&self.evaluator_id);
        spec.now = Some(self.now);
        spec.trusted_issuers = Some("trusted_issuers.json".into());
        spec.steward_keys = vec![self.steward().public()];
        spec.registries = vec!["registry.json".into()];
        spec.vocabularies = vocab_paths;
        spec.mapping_profile = Some("mapping_profile.json".into());
        spec.local_policy = Some("local_policy.json".into());
        spec.audit_key = Some(format!("keys/{}.json", file_name(&self.evaluator_label)).into());
        write("config.json", &to_value(&spec))?;

        for case in &self.cases {
            let pop_rel = format!("pops/{}.json", case.name);
            write(&pop_rel, &self.pop_for(case).document)?;
            let creds: Vec<String> = case.credentials.iter().map(|n| format!("../credentials/{n}.json")).collect();
            write(
                &format!("cases/{}.json", case.name),
                &json!({
                    "name": case.name,
                    "description": case.description,
                    "credentials": creds,
                    "presenter_id": case.presenter_id,
                    "pop": format!("../{pop_rel}"),
                    "context": to_value(&case.context),
                    "expected": case.expected,
                    "expected_constraint": case.expected_constraint,
                }),
            )?;
        }
        Ok(())
    }
}

/// Labels contain `:` and `/`, which are awkward in file names.
pub fn file_name(label: &str) -> String {
    label.replace([':', '/'], "_")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("fixture artifacts serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceResult;

    #[test]
    fn unknown_names_are_rejected() {
        assert_eq!(load_scenario("payroll").unwrap_err(), UnknownScenario("payroll".into()));
        assert!(UnknownScenario("x".into()).to_string().starts_with("unknown_scenario"));
    }

    #[test]
    fn bundles_are_deterministic() {
        for name in SCENARIOS {
            let a = load_scenario(name).unwrap();
            let b = load_scenario(name).unwrap();
            assert_eq!(a.credentials.len(), b.credentials.len());
            for (k, c) in &a.credentials {
                assert_eq!(c.to_bytes(), b.credentials[k].to_bytes(), "{name}/{k}");
            }
            assert_eq!(a.registry.to_bytes(), b.registry.to_bytes());
        }
    }

    #[test]
    fn every_case_matches_its_expectation() {
        for name in SCENARIOS {
            let bundle = load_scenario(name).unwrap();
            for case in &bundle.cases {
                let engine = bundle.engine();
                let eval = bundle.run_case(&engine, case);
                assert_eq!(eval.decision.verdict(), case.expected, "{name}/{}: {:#?}", case.name, eval.decision.trace);
                if let Some(c) = &case.expected_constraint {
                    assert_eq!(eval.decision.denial().unwrap().constraint.as_deref(), Some(c.as_str()), "{name}/{}", case.name);
                }
                assert!(eval.record.is_some());
            }
        }
    }

    #[test]
    fn worked_allow_trace_shape() {
        let bundle = load_scenario("insurance_claims").unwrap();
        let eval = bundle.run_case(&bundle.engine(), bundle.case("worked_allow").unwrap());
        let trace = &eval.decision.trace;
        assert_eq!(trace.len(), 13);
        assert!(trace.iter().all(|t| !matches!(t.result, TraceResult::Fail | TraceResult::Deny)));
        assert_eq!(trace[0].stage, "parseContainer");
        assert_eq!(trace[12].stage, "Decision");
    }
}
