//! Generator for the shipped conformance suite. Everything is derived from
//! the scenario bundles and label keys, so regeneration is byte-stable.

use std::path::Path;

use serde_json::{json, Value};

use crate::config::{AuthorityKind, AuthoritySpec, EngineSpec};
use crate::conformance::{EvaluateStep, Expected, Fixtures, Step, StepContribution, TestVector, WorkflowStep};
use crate::constraint::{Constraint, NumericLimitConstraint, NumericOperator};
use crate::container::{
    encode_transport, issue_credential, prove_possession, revoke, Credential, Issuance, RevocationList, DEFAULT_CREDENTIAL_CLASS,
};
use crate::crypto::{KeyFile, KeyPair};
use crate::model::{AuthorizationPayload, RequestContext};
use crate::pipeline::{LocalPolicy, RequiredRole, WorkflowPolicy};
use crate::registry::{SignedRegistry, StateAuthorityRecord};
use crate::scenario::{load_scenario, ScenarioBundle, INSURANCE_AGENT, INSURANCE_EVALUATOR, INSURANCE_ISSUER, INSURANCE_PROFILE, SUPPLY_DELEGATE};
use crate::semantic::{Alias, MappingProfile, SignedMappingProfile};
use crate::stateful::{init_voucher, CalendarUnit, CumulativeLimitConstraint, EpochSettings, Period, SignedVoucher, StateVoucher, Tier};
use crate::value::{Decimal, SemanticType, Timestamp, TypedValue};

const LEDGER: &str = "urn:state:megainsure-ledger";
const ROGUE_LEDGER: &str = "urn:state:unlisted-ledger";
const ENFORCER: &str = "enforcer:megainsure-ledger";

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("fixture artifacts serialize")
}

fn dec(s: &str) -> Decimal {
    s.parse().expect("fixture decimal")
}

/// Engine configuration with every artifact inline.
pub fn inline_spec(b: &ScenarioBundle) -> EngineSpec {
    let mut spec = EngineSpec::new(&b.evaluator_id);
    spec.now = Some(b.now);
    spec.trusted_issuers = Some(to_value(&b.trusted_issuers));
    spec.steward_keys = vec![b.steward().public()];
    spec.registries = vec![b.registry.document.clone()];
    spec.vocabularies = b.vocabularies.iter().map(|v| v.document.clone()).collect();
    spec.mapping_profile = Some(b.mapping_profile.document.clone());
    spec.local_policy = Some(to_value(&b.local_policy));
    spec.audit_key = Some(to_value(&KeyFile::secret(&b.evaluator_label, b.evaluator_key())));
    spec
}

fn vector(id: &str, level: &str, description: &str, config: EngineSpec, steps: Vec<Step>) -> TestVector {
    TestVector {
        vector_id: id.into(),
        level: level.into(),
        description: description.into(),
        fixtures: Fixtures { config },
        steps,
    }
}

fn eval(credentials: Vec<Value>, presenter: &str, pop: Option<Value>, context: RequestContext, expected: Expected) -> Step {
    Step::Evaluate(EvaluateStep {
        credentials,
        presenter_id: presenter.into(),
        pop,
        vouchers: vec![],
        vouchers_from_step: None,
        context,
        now: None,
        expected,
    })
}

fn expected_of(verdict: &str, constraint: Option<&String>) -> Expected {
    Expected {
        verdict: verdict.into(),
        constraint: constraint.cloned(),
    }
}

fn case_step(b: &ScenarioBundle, name: &str) -> Step {
    let case = b.case(name).expect("known case");
    eval(
        b.chain(case).iter().map(|c| c.document.clone()).collect(),
        &case.presenter_id,
        Some(b.pop_for(case).document),
        case.context.clone(),
        expected_of(&case.expected, case.expected_constraint.as_ref()),
    )
}

/// Insurance helpers: a fixed agent presenting custom credentials.
struct Insurance {
    b: ScenarioBundle,
}

impl Insurance {
    fn new() -> Self {
        Insurance {
            b: load_scenario("insurance_claims").expect("bundle"),
        }
    }

    fn key(&self, label: &str) -> KeyPair {
        self.b.keys.get(label).cloned().unwrap_or_else(|| KeyPair::from_label(label))
    }

    fn base_constraints(&self) -> Vec<Constraint> {
        self.b.credentials["negotiator"].body.payload.constraint_list().to_vec()
    }

    fn issue_as(&self, id: &str, issuer: &str, permissions: &[&str], constraints: Vec<Constraint>) -> Credential {
        issue_credential(
            Issuance {
                credential_id: format!("urn:cred:vectors:{id}"),
                payload: AuthorizationPayload::new(INSURANCE_AGENT, issuer, permissions.iter().copied(), constraints),
                subject_public_key: self.key(INSURANCE_AGENT).public(),
                audience: [INSURANCE_EVALUATOR.to_string()].into(),
                valid_from: "2026-04-01T00:00:00Z".parse().unwrap(),
                valid_until: "2026-05-01T00:00:00Z".parse().unwrap(),
                credential_class: DEFAULT_CREDENTIAL_CLASS.into(),
                profile: INSURANCE_PROFILE.into(),
            },
            &self.key(issuer),
            None,
        )
        .expect("vector credential")
    }

    fn issue(&self, id: &str, constraints: Vec<Constraint>) -> Credential {
        self.issue_as(id, INSURANCE_ISSUER, &["claim.settle", "claim.read"], constraints)
    }

    fn pop(&self, cred: &Credential, nonce: &str) -> Value {
        prove_possession(cred, INSURANCE_EVALUATOR, nonce, self.b.now.plus_seconds(-30), &self.key(INSURANCE_AGENT)).document
    }

    fn context(&self) -> RequestContext {
        self.b.case("worked_allow").unwrap().context.clone()
    }

    fn with_amount(&self, amount: &str) -> RequestContext {
        self.context().with("settlement_total", TypedValue::Decimal(dec(amount)))
    }

    fn step(&self, cred: &Credential, nonce: &str, ctx: RequestContext, expected: Expected) -> Step {
        eval(vec![cred.document.clone()], INSURANCE_AGENT, Some(self.pop(cred, nonce)), ctx, expected)
    }

    fn spec(&self) -> EngineSpec {
        inline_spec(&self.b)
    }

    fn mapping(&self, aliases: Vec<Alias>, valid_until: Option<&str>, key: &KeyPair) -> Value {
        let profile = MappingProfile {
            profile_id: "bodyshopco-claims".into(),
            version: 2,
            valid_until: valid_until.map(|t| t.parse().unwrap()),
            aliases,
        };
        SignedMappingProfile::sign(profile, key).document
    }

    fn aliases(&self) -> Vec<Alias> {
        self.b.mapping_profile.body.aliases.clone()
    }

    /// Registry that also permits the ledger for insurance/1, with the
    /// enforcer and the evaluator as voucher signers.
    fn stateful_registry(&self) -> Value {
        let mut body = self.b.registry.body.clone();
        body.version += 1;
        body.state_authorities.push(StateAuthorityRecord {
            pointer: LEDGER.into(),
            profiles: [INSURANCE_PROFILE.to_string()].into(),
            voucher_signers: vec![self.key(ENFORCER).public(), self.b.evaluator_key().public()],
        });
        SignedRegistry::sign(body, self.b.steward()).document
    }

    fn budgeted(&self, id: &str, pointer: &str) -> Credential {
        let mut constraints = self.base_constraints();
        constraints.push(Constraint::CumulativeLimit(CumulativeLimitConstraint {
            id: Some("C5".into()),
            field: "core.amount".into(),
            budget: dec("5000"),
            currency: Some("USD".into()),
            period: Period::Calendar { unit: CalendarUnit::Week },
            state_authority_pointer: pointer.into(),
        }));
        self.issue(id, constraints)
    }

    fn stateful_spec(&self, tier: Tier) -> EngineSpec {
        let mut spec = self.spec();
        spec.registries = vec![self.stateful_registry()];
        spec.tier = tier;
        spec
    }
}

fn amount_limit(id: &str, op: NumericOperator, value: &str) -> Constraint {
    Constraint::NumericLimit(NumericLimitConstraint {
        id: Some(id.into()),
        field: "core.amount".into(),
        operator: op,
        value: dec(value),
        currency: Some("USD".into()),
        unit: None,
    })
}

fn level1() -> Vec<TestVector> {
    let ins = Insurance::new();
    let lvl = "level1_evaluation";
    let mut out = Vec::new();
    for case in &ins.b.cases {
        if case.name == "amount_type_mismatch" {
            continue;
        }
        out.push(vector(
            &format!("L1-insurance-{}", case.name.replace('_', "-")),
            lvl,
            &case.description,
            ins.spec(),
            vec![case_step(&ins.b, &case.name)],
        ));
    }
    let sc = load_scenario("supply_chain").expect("bundle");
    for case in sc.cases.iter().filter(|c| c.credentials.len() == 1) {
        out.push(vector(
            &format!("L1-supply-{}", case.name.replace('_', "-")),
            lvl,
            &case.description,
            inline_spec(&sc),
            vec![case_step(&sc, &case.name)],
        ));
    }

    let negotiator = &ins.b.credentials["negotiator"];
    let mut tampered = negotiator.document.clone();
    tampered["payload"]["permissions"] = json!(["claim.approve", "claim.read", "claim.settle"]);
    out.push(vector(
        "L1-signature-invalid-payload-edit",
        lvl,
        "Permission added after signing",
        ins.spec(),
        vec![eval(vec![tampered], INSURANCE_AGENT, Some(ins.pop(negotiator, "n-sig")), ins.context(), Expected::deny("signature_invalid"))],
    ));

    let stranger = ins.issue_as("untrusted", "iss:unknown:claims-broker", &["claim.settle"], ins.base_constraints());
    out.push(vector(
        "L1-issuer-untrusted",
        lvl,
        "Issuer absent from the trusted issuer file",
        ins.spec(),
        vec![ins.step(&stranger, "n-untrusted", ins.context(), Expected::deny("issuer_untrusted"))],
    ));

    out.push(vector(
        "L1-pop-missing",
        lvl,
        "No proof of possession presented",
        ins.spec(),
        vec![eval(vec![negotiator.document.clone()], INSURANCE_AGENT, None, ins.context(), Expected::deny("proof_of_possession_failed"))],
    ));
    let wrong_key = prove_possession(negotiator, INSURANCE_EVALUATOR, "n-wrong-key", ins.b.now.plus_seconds(-30), &KeyPair::from_label("attacker")).document;
    out.push(vector(
        "L1-pop-wrong-key",
        lvl,
        "Proof signed by a key other than the subject key",
        ins.spec(),
        vec![eval(vec![negotiator.document.clone()], INSURANCE_AGENT, Some(wrong_key), ins.context(), Expected::deny("proof_of_possession_failed"))],
    ));
    out.push(vector(
        "L1-pop-replay",
        lvl,
        "The same proof presented twice",
        ins.spec(),
        vec![
            ins.step(negotiator, "n-replay", ins.context(), Expected::allow()),
            ins.step(negotiator, "n-replay", ins.context(), Expected::deny("proof_of_possession_failed")),
        ],
    ));
    let stale_pop = prove_possession(negotiator, INSURANCE_EVALUATOR, "n-stale", ins.b.now.plus_seconds(-3600), &ins.key(INSURANCE_AGENT)).document;
    out.push(vector(
        "L1-pop-stale",
        lvl,
        "Proof older than the freshness window",
        ins.spec(),
        vec![eval(vec![negotiator.document.clone()], INSURANCE_AGENT, Some(stale_pop), ins.context(), Expected::deny("proof_of_possession_failed"))],
    ));

    let issuer_key = ins.key(INSURANCE_ISSUER);
    let revoked_list = revoke(&negotiator.body.credential_id, &RevocationList::empty(INSURANCE_ISSUER, ins.b.now.plus_seconds(-600)), &issuer_key, ins.b.now.plus_seconds(-600));
    let mut spec = ins.spec();
    spec.revocations = vec![revoked_list.document.clone()];
    out.push(vector(
        "L1-credential-revoked",
        lvl,
        "Issuer revocation list names the credential",
        spec,
        vec![ins.step(negotiator, "n-revoked", ins.context(), Expected::deny("credential_revoked"))],
    ));
    let other_list = revoke("urn:cred:insurance_claims:someone-else", &RevocationList::empty(INSURANCE_ISSUER, ins.b.now), &issuer_key, ins.b.now.plus_seconds(-600));
    let mut spec = ins.spec();
    spec.revocations = vec![other_list.document];
    out.push(vector(
        "L1-revocation-list-clear",
        lvl,
        "A revocation list that names other credentials",
        spec,
        vec![ins.step(negotiator, "n-clear", ins.context(), Expected::allow())],
    ));
    let mut spec = ins.spec();
    spec.revocations = vec![revoked_list.document];
    spec.revocation_max_age_seconds = Some(60);
    spec.now = Some(ins.b.now);
    let fresh = ins.issue("fresh", ins.base_constraints());
    out.push(vector(
        "L1-revocation-list-stale",
        lvl,
        "Revocation state older than the configured maximum age fails closed",
        spec,
        vec![ins.step(&fresh, "n-stale-list", ins.context(), Expected::deny("credential_revoked"))],
    ));

    out.push(vector(
        "L1-incomplete-malformed",
        lvl,
        "Truncated container",
        ins.spec(),
        vec![eval(vec![json!("{\"credential_id\":")], INSURANCE_AGENT, None, ins.context(), Expected::deny("credential_incomplete"))],
    ));
    let mut hollow = negotiator.body.clone();
    hollow.credential_id = "urn:cred:vectors:hollow".into();
    hollow.payload.constraints = None;
    let hollow = Credential::sign(hollow, &issuer_key);
    out.push(vector(
        "L1-incomplete-payload",
        lvl,
        "Signed payload without a constraint component",
        ins.spec(),
        vec![ins.step(&hollow, "n-hollow", ins.context(), Expected::deny("credential_incomplete"))],
    ));

    let mut geofenced = ins.base_constraints();
    let geofence: Constraint = serde_json::from_value(json!({"type": "GeofenceConstraint", "id": "C9", "field": "core.resource_id", "region": "EU"})).unwrap();
    geofenced.push(geofence);
    let geofenced = ins.issue("geofence", geofenced);
    out.push(vector(
        "L1-constraint-unknown",
        lvl,
        "Unrecognized constraint type",
        ins.spec(),
        vec![ins.step(&geofenced, "n-geo", ins.context(), Expected::deny("constraint_unknown"))],
    ));

    let mut spec = ins.spec();
    let mut policy = ins.b.local_policy.clone();
    policy.constraints.push(amount_limit("L1", NumericOperator::Lte, "3000"));
    spec.local_policy = Some(to_value(&policy));
    out.push(vector(
        "L1-local-policy-denied",
        lvl,
        "Receiver ceiling below the credential ceiling",
        spec,
        vec![ins.step(negotiator, "n-local", ins.context(), Expected::deny("local_policy_denied"))],
    ));
    let mut spec = ins.spec();
    let mut policy = ins.b.local_policy.clone();
    policy.constraints.push(amount_limit("L1", NumericOperator::Lte, "4000"));
    spec.local_policy = Some(to_value(&policy));
    out.push(vector(
        "L1-local-policy-allow",
        lvl,
        "Receiver ceiling above the requested amount",
        spec,
        vec![ins.step(negotiator, "n-local-ok", ins.context(), Expected::allow())],
    ));

    let approver_id = "agent:megainsure:supervisor-2";
    let approver = issue_credential(
        Issuance {
            credential_id: "urn:cred:vectors:approver".into(),
            payload: AuthorizationPayload::new(approver_id, INSURANCE_ISSUER, ["claim.approve"], ins.base_constraints()),
            subject_public_key: ins.key(approver_id).public(),
            audience: [INSURANCE_EVALUATOR.to_string()].into(),
            valid_from: "2026-04-01T00:00:00Z".parse().unwrap(),
            valid_until: "2026-05-01T00:00:00Z".parse().unwrap(),
            credential_class: DEFAULT_CREDENTIAL_CLASS.into(),
            profile: INSURANCE_PROFILE.into(),
        },
        &issuer_key,
        None,
    )
    .unwrap();
    let approver_pop = prove_possession(&approver, INSURANCE_EVALUATOR, "n-approver", ins.b.now.plus_seconds(-30), &ins.key(approver_id)).document;
    let mut approve_ctx = ins.context();
    approve_ctx.action = "claim.approve".into();
    let policy = WorkflowPolicy {
        workflow_id: "CLM-90421".into(),
        required_roles: vec![
            RequiredRole {
                role: "negotiator".into(),
                permission: "claim.settle".into(),
                credential_class: None,
            },
            RequiredRole {
                role: "approver".into(),
                permission: "claim.approve".into(),
                credential_class: None,
            },
        ],
        shared_fields: ["core.amount".to_string()].into(),
    };
    let workflow = |contributions: Vec<StepContribution>, ctx: RequestContext, expected| {
        Step::Workflow(WorkflowStep {
            policy: policy.clone(),
            contributions,
            context: ctx,
            now: None,
            expected,
        })
    };
    let role = |r: &str, step| StepContribution { role: r.into(), step };
    out.push(vector(
        "L1-workflow-allow",
        lvl,
        "Negotiator and approver each authorized independently",
        ins.spec(),
        vec![
            ins.step(negotiator, "n-wf-1", ins.context(), Expected::allow()),
            eval(vec![approver.document.clone()], approver_id, Some(approver_pop.clone()), approve_ctx.clone(), Expected::allow()),
            workflow(vec![role("negotiator", 0), role("approver", 1)], ins.context(), Expected::allow()),
        ],
    ));
    out.push(vector(
        "L1-workflow-missing-role",
        lvl,
        "Approval step absent",
        ins.spec(),
        vec![
            ins.step(negotiator, "n-wf-2", ins.context(), Expected::allow()),
            workflow(vec![role("negotiator", 0)], ins.context(), Expected::deny("workflow_policy_denied")),
        ],
    ));
    out.push(vector(
        "L1-workflow-shared-field-exceeded",
        lvl,
        "Final amount exceeds what every contributor allows",
        ins.spec(),
        vec![
            ins.step(negotiator, "n-wf-3", ins.context(), Expected::allow()),
            eval(vec![approver.document.clone()], approver_id, Some(approver_pop), approve_ctx, Expected::allow()),
            workflow(vec![role("negotiator", 0), role("approver", 1)], ins.with_amount("6000"), Expected::deny("workflow_policy_denied")),
        ],
    ));
    out
}

fn level2() -> Vec<TestVector> {
    let ins = Insurance::new();
    let lvl = "level2_semantic";
    let negotiator = &ins.b.credentials["negotiator"];
    let steward = ins.b.steward().clone();
    let mut out = Vec::new();
    let with_mapping = |mapping: Option<Value>| {
        let mut spec = ins.spec();
        spec.mapping_profile = mapping;
        spec
    };

    out.push(vector(
        "L2-resolution-allow",
        lvl,
        "Every identifier resolves through the signed mapping profile",
        ins.spec(),
        vec![ins.step(negotiator, "n-res", ins.context(), Expected::allow())],
    ));
    let renamed: Vec<Alias> = ins
        .aliases()
        .into_iter()
        .map(|mut a| {
            a.local_field = format!("bsc_{}", a.local_field);
            a
        })
        .collect();
    let mut renamed_ctx = RequestContext::new("claim.settle");
    for (k, v) in &ins.context().fields {
        renamed_ctx.fields.insert(format!("bsc_{k}"), v.clone());
    }
    out.push(vector(
        "L2-renamed-local-fields",
        lvl,
        "A different local schema reaches the same decision",
        with_mapping(Some(ins.mapping(renamed, Some("2026-12-31T23:59:59Z"), &steward))),
        vec![ins.step(negotiator, "n-renamed", renamed_ctx, Expected::allow())],
    ));
    out.push(vector(
        "L2-mapping-profile-missing",
        lvl,
        "No mapping profile loaded",
        with_mapping(None),
        vec![ins.step(negotiator, "n-nomap", ins.context(), Expected::deny("mapping_profile_missing"))],
    ));
    out.push(vector(
        "L2-mapping-profile-unsigned",
        lvl,
        "Mapping profile signed by a non-steward key",
        with_mapping(Some(ins.mapping(ins.aliases(), Some("2026-12-31T23:59:59Z"), &KeyPair::from_label("not-a-steward")))),
        vec![ins.step(negotiator, "n-badmap", ins.context(), Expected::deny("mapping_profile_invalid"))],
    ));
    out.push(vector(
        "L2-mapping-profile-expired",
        lvl,
        "Mapping profile past its governance window",
        with_mapping(Some(ins.mapping(ins.aliases(), Some("2026-03-31T23:59:59Z"), &steward))),
        vec![ins.step(negotiator, "n-oldmap", ins.context(), Expected::deny("mapping_profile_invalid"))],
    ));
    let mut conflicting = ins.aliases();
    conflicting.push(Alias {
        identifier: "core.amount".into(),
        local_field: "gross_total".into(),
        local_type: SemanticType::Decimal,
    });
    out.push(vector(
        "L2-alias-conflict",
        lvl,
        "Two local fields claim core.amount",
        with_mapping(Some(ins.mapping(conflicting, Some("2026-12-31T23:59:59Z"), &steward))),
        vec![ins.step(negotiator, "n-conflict", ins.context().with("gross_total", TypedValue::Decimal(dec("3200"))), Expected::deny("semantic_alias_conflict"))],
    ));
    let missing: Vec<Alias> = ins.aliases().into_iter().filter(|a| a.identifier != "insurance.claim_type").collect();
    out.push(vector(
        "L2-alias-missing",
        lvl,
        "No local field for insurance.claim_type",
        with_mapping(Some(ins.mapping(missing, Some("2026-12-31T23:59:59Z"), &steward))),
        vec![ins.step(negotiator, "n-missing", ins.context(), Expected::deny("semantic_alias_missing"))],
    ));
    let mistyped: Vec<Alias> = ins
        .aliases()
        .into_iter()
        .map(|mut a| {
            if a.identifier == "core.amount" {
                a.local_type = SemanticType::StringId;
            }
            a
        })
        .collect();
    out.push(vector(
        "L2-alias-type-mismatch",
        lvl,
        "Alias declares an identifier type for a decimal identifier",
        with_mapping(Some(ins.mapping(mistyped, Some("2026-12-31T23:59:59Z"), &steward))),
        vec![ins.step(negotiator, "n-mistyped", ins.context(), Expected::deny("semantic_type_mismatch"))],
    ));
    out.push(vector(
        "L2-value-type-mismatch",
        lvl,
        "Context value kind disagrees with the alias",
        ins.spec(),
        vec![case_step(&ins.b, "amount_type_mismatch")],
    ));
    let mut thrust = ins.base_constraints();
    thrust.push(Constraint::NumericLimit(NumericLimitConstraint {
        id: Some("C9".into()),
        field: "aviation.thrust".into(),
        operator: NumericOperator::Lte,
        value: dec("100"),
        currency: None,
        unit: Some("kN".into()),
    }));
    let thrust = ins.issue("thrust", thrust);
    out.push(vector(
        "L2-identifier-unknown",
        lvl,
        "Constraint over an identifier outside every loaded vocabulary",
        ins.spec(),
        vec![ins.step(&thrust, "n-thrust", ins.context(), Expected::deny("semantic_identifier_unknown").at("C9"))],
    ));
    out
}

fn level3() -> Vec<TestVector> {
    let ins = Insurance::new();
    let lvl = "level3_profile";
    let negotiator = &ins.b.credentials["negotiator"];
    let pop = || Some(ins.pop(negotiator, "n-transport"));
    let mut out = Vec::new();
    out.push(vector(
        "L3-base64url-transport",
        lvl,
        "Credential presented in base64url transport form",
        ins.spec(),
        vec![eval(vec![Value::String(encode_transport(negotiator))], INSURANCE_AGENT, pop(), ins.context(), Expected::allow())],
    ));
    let pretty = serde_json::to_string_pretty(&negotiator.document).unwrap();
    out.push(vector(
        "L3-noncanonical-json",
        lvl,
        "Pretty-printed JSON parses to the same signed container",
        ins.spec(),
        vec![eval(vec![Value::String(pretty)], INSURANCE_AGENT, pop(), ins.context(), Expected::allow())],
    ));
    let mut edited = negotiator.document.clone();
    edited["valid_until"] = json!("2027-05-01T00:00:00Z");
    let edited = crate::crypto::SignedDocument::<crate::container::CredentialContainer>::from_value(edited).unwrap();
    out.push(vector(
        "L3-base64url-tampered",
        lvl,
        "Transport-wrapped credential with an extended validity",
        ins.spec(),
        vec![eval(vec![Value::String(encode_transport(&edited))], INSURANCE_AGENT, pop(), ins.context(), Expected::deny("signature_invalid"))],
    ));
    out.push(vector(
        "L3-base64url-garbage",
        lvl,
        "Transport text that is not base64url",
        ins.spec(),
        vec![eval(vec![json!("eyJub3Q*base64")], INSURANCE_AGENT, pop(), ins.context(), Expected::deny("credential_incomplete"))],
    ));
    out
}

fn level4() -> Vec<TestVector> {
    let sc = load_scenario("supply_chain").expect("bundle");
    let lvl = "level4_delegation";
    let mut out = Vec::new();
    for case in sc.cases.iter().filter(|c| c.credentials.len() > 1) {
        out.push(vector(
            &format!("L4-{}", case.name.replace('_', "-")),
            lvl,
            &case.description,
            inline_spec(&sc),
            vec![case_step(&sc, &case.name)],
        ));
    }
    let mut spec = inline_spec(&sc);
    spec.max_chain_depth = 1;
    let mut step = case_step(&sc, "delegate_allow");
    if let Step::Evaluate(s) = &mut step {
        s.expected = Expected::deny("delegation_depth_exceeded");
    }
    out.push(vector("L4-depth-exceeded", lvl, "Two-link chain against a depth limit of one", spec, vec![step]));

    let mut step = case_step(&sc, "delegate_allow");
    if let Step::Evaluate(s) = &mut step {
        s.credentials.remove(0);
        s.expected = Expected::deny("issuer_untrusted");
    }
    out.push(vector("L4-orphan-delegate", lvl, "Delegated credential presented without its parent: the root is an untrusted agent", inline_spec(&sc), vec![step]));

    let mut step = case_step(&sc, "delegate_allow");
    if let Step::Evaluate(s) = &mut step {
        s.credentials.reverse();
        s.expected = Expected::deny("issuer_untrusted");
    }
    out.push(vector("L4-reversed-chain", lvl, "Chain presented leaf first: links are verified before continuity, so the root fails trust", inline_spec(&sc), vec![step]));

    let mut step = case_step(&sc, "delegate_allow");
    if let Step::Evaluate(s) = &mut step {
        s.presenter_id = "agent:aerotrust:evidence-broker".into();
        s.expected = Expected::deny("subject_binding_mismatch");
    }
    out.push(vector("L4-delegator-presents-leaf", lvl, "The delegator presents the delegate's credential", inline_spec(&sc), vec![step]));

    let broker = &sc.credentials["broker"];
    let issuer_key = &sc.keys[crate::scenario::SUPPLY_ISSUER];
    let list = revoke(&broker.body.credential_id, &RevocationList::empty(crate::scenario::SUPPLY_ISSUER, sc.now), issuer_key, sc.now.plus_seconds(-60));
    let mut spec = inline_spec(&sc);
    spec.revocations = vec![list.document];
    let mut step = case_step(&sc, "delegate_allow");
    if let Step::Evaluate(s) = &mut step {
        s.expected = Expected::deny("credential_revoked");
    }
    out.push(vector("L4-root-revoked", lvl, "Revoking the root invalidates the delegate", spec, vec![step]));
    debug_assert!(sc.subject_keys.values().any(|k| k == SUPPLY_DELEGATE));
    out
}

fn voucher(account: &str, sequence: u64, budget: &str, spent: &str, observed_at: Timestamp, key: &KeyPair) -> SignedVoucher {
    if sequence == 1 && spent == "0" {
        return init_voucher(account, &dec(budget), LEDGER, key, observed_at);
    }
    SignedVoucher::sign(
        StateVoucher {
            account: account.into(),
            sequence,
            observed_at,
            budget: dec(budget),
            spent: dec(spent),
            remaining: dec(budget).checked_sub(&dec(spent)),
            authority: LEDGER.into(),
            prev_signature: None,
        },
        key,
    )
}

fn stateful() -> Vec<TestVector> {
    let ins = Insurance::new();
    let lvl = "stateful";
    let mut out = Vec::new();
    let budgeted = ins.budgeted("budgeted", LEDGER);
    let cumulative = match budgeted.body.payload.constraint_list().last() {
        Some(Constraint::CumulativeLimit(c)) => c.clone(),
        _ => unreachable!("budgeted credential ends with its cumulative limit"),
    };
    let account = cumulative.account(&budgeted.digest());

    out.push(vector(
        "ST-stateless-unreachable",
        lvl,
        "A stateless evaluator cannot enforce a cumulative limit",
        ins.stateful_spec(Tier::Stateless),
        vec![ins.step(&budgeted, "n-st-1", ins.context(), Expected::deny("state_authority_unreachable"))],
    ));
    let rogue = ins.budgeted("rogue", ROGUE_LEDGER);
    out.push(vector(
        "ST-authority-unpermitted",
        lvl,
        "Cumulative limit names a ledger the registry does not permit",
        ins.stateful_spec(Tier::Synchronous),
        vec![ins.step(&rogue, "n-st-2", ins.context(), Expected::deny("state_authority_unpermitted"))],
    ));

    let mut sync = ins.stateful_spec(Tier::Synchronous);
    sync.state_authorities = vec![AuthoritySpec {
        pointer: LEDGER.into(),
        kind: AuthorityKind::Memory,
        path: None,
        offline: false,
    }];
    out.push(vector(
        "ST-synchronous-budget",
        lvl,
        "Weekly USD 5000 budget: the second USD 3200 settlement is refused, a smaller one still fits",
        sync.clone(),
        vec![
            ins.step(&budgeted, "n-sync-1", ins.context(), Expected::allow()),
            ins.step(&budgeted, "n-sync-2", ins.context(), Expected::deny("state_limit_exceeded")),
            ins.step(&budgeted, "n-sync-3", ins.with_amount("1800"), Expected::allow()),
        ],
    ));
    let mut offline = sync.clone();
    offline.state_authorities[0].offline = true;
    out.push(vector(
        "ST-synchronous-offline",
        lvl,
        "The ledger cannot be reached",
        offline,
        vec![ins.step(&budgeted, "n-off", ins.context(), Expected::deny("state_authority_unreachable"))],
    ));
    out.push(vector(
        "ST-denied-request-releases-hold",
        lvl,
        "A request denied by a later check does not consume budget",
        sync,
        vec![
            ins.step(&budgeted, "n-rel-1", ins.context().with("claim_category", TypedValue::StringId("theft".into())), Expected::deny("constraint_failed").at("C4")),
            ins.step(&budgeted, "n-rel-2", ins.with_amount("5000"), Expected::allow()),
        ],
    ));

    let mut epoch = ins.stateful_spec(Tier::EpochBound);
    epoch.epoch = Some(EpochSettings {
        enforcers: vec![INSURANCE_EVALUATOR.into(), "svc:bodyshopco:claims-api-west".into()],
        epoch_seconds: 3600,
    });
    out.push(vector(
        "ST-epoch-quota",
        lvl,
        "Two enforcers split USD 5000; this one may spend USD 2500 per epoch",
        epoch,
        vec![
            ins.step(&budgeted, "n-ep-1", ins.with_amount("2000"), Expected::allow()),
            ins.step(&budgeted, "n-ep-2", ins.with_amount("600"), Expected::deny("state_limit_exceeded")),
            ins.step(&budgeted, "n-ep-3", ins.with_amount("500"), Expected::allow()),
        ],
    ));

    let enforcer = ins.key(ENFORCER);
    let v1 = init_voucher(&account, &dec("5000"), LEDGER, &enforcer, ins.b.now.plus_seconds(-60));
    let with_vouchers = |nonce: &str, vouchers: Vec<&SignedVoucher>, from: Option<usize>, ctx: RequestContext, expected| {
        let Step::Evaluate(mut s) = ins.step(&budgeted, nonce, ctx, expected) else {
            unreachable!()
        };
        s.vouchers = vouchers.into_iter().map(|v| v.document.clone()).collect();
        s.vouchers_from_step = from;
        Step::Evaluate(s)
    };
    out.push(vector(
        "ST-voucher-chain",
        lvl,
        "Fresh voucher, successor issued by the evaluator, then a replay of the first voucher",
        ins.stateful_spec(Tier::Voucher),
        vec![
            with_vouchers("n-v-1", vec![&v1], None, ins.context(), Expected::allow()),
            with_vouchers("n-v-2", vec![&v1], Some(0), ins.with_amount("1000"), Expected::allow()),
            with_vouchers("n-v-3", vec![&v1], None, ins.with_amount("600"), Expected::deny("state_sequence_invalid")),
        ],
    ));
    out.push(vector(
        "ST-voucher-over-budget",
        lvl,
        "The voucher's remaining budget is smaller than the request",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers(
            "n-v-over",
            vec![&voucher(&account, 4, "5000", "4500", ins.b.now.plus_seconds(-30), &enforcer)],
            None,
            ins.context(),
            Expected::deny("state_limit_exceeded"),
        )],
    ));
    out.push(vector(
        "ST-voucher-missing",
        lvl,
        "Voucher tier without a voucher",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers("n-v-none", vec![], None, ins.context(), Expected::deny("state_authority_unreachable"))],
    ));
    let stale = init_voucher(&account, &dec("5000"), LEDGER, &enforcer, ins.b.now.plus_seconds(-301));
    out.push(vector(
        "ST-voucher-stale",
        lvl,
        "Voucher observed more than the freshness bound ago",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers("n-v-stale", vec![&stale], None, ins.context(), Expected::deny("state_stale"))],
    ));
    let edge = init_voucher(&account, &dec("5000"), LEDGER, &enforcer, ins.b.now.plus_seconds(-300));
    out.push(vector(
        "ST-voucher-freshness-boundary",
        lvl,
        "Voucher observed exactly the freshness bound ago is accepted",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers("n-v-edge", vec![&edge], None, ins.context(), Expected::allow())],
    ));
    let forged = init_voucher(&account, &dec("5000"), LEDGER, &KeyPair::from_label("unlisted-enforcer"), ins.b.now.plus_seconds(-30));
    out.push(vector(
        "ST-voucher-unknown-signer",
        lvl,
        "Voucher signed by a key the registry does not list",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers("n-v-forged", vec![&forged], None, ins.context(), Expected::deny("state_signature_invalid"))],
    ));
    let inflated = init_voucher(&account, &dec("50000"), LEDGER, &enforcer, ins.b.now.plus_seconds(-30));
    out.push(vector(
        "ST-voucher-inflated-budget",
        lvl,
        "Voucher budget larger than the credential's limit",
        ins.stateful_spec(Tier::Voucher),
        vec![with_vouchers("n-v-inflated", vec![&inflated], None, ins.context(), Expected::deny("state_sequence_invalid"))],
    ));
    let mut local = ins.stateful_spec(Tier::Synchronous);
    let mut policy: LocalPolicy = ins.b.local_policy.clone();
    policy.constraints.push(cumulative_local());
    local.local_policy = Some(to_value(&policy));
    out.push(vector(
        "ST-local-cumulative-rejected",
        lvl,
        "Receivers cannot express cumulative limits in local policy",
        local,
        vec![ins.step(&ins.b.credentials["negotiator"], "n-loc-cum", ins.context(), Expected::deny("local_policy_denied"))],
    ));
    out
}

fn cumulative_local() -> Constraint {
    Constraint::CumulativeLimit(CumulativeLimitConstraint {
        id: Some("L9".into()),
        field: "core.amount".into(),
        budget: dec("10000"),
        currency: Some("USD".into()),
        period: Period::PerCredential,
        state_authority_pointer: LEDGER.into(),
    })
}

/// The full shipped suite.
pub fn generate_suite() -> Vec<TestVector> {
    let mut all = level1();
    all.extend(level2());
    all.extend(level3());
    all.extend(level4());
    all.extend(stateful());
    all
}

/// Writes one pretty-printed file per vector under `dir/<level>/`.
pub fn write_suite(dir: &Path) -> std::io::Result<usize> {
    let suite = generate_suite();
    for v in &suite {
        let sub = dir.join(&v.level);
        std::fs::create_dir_all(&sub)?;
        let mut text = serde_json::to_string_pretty(v).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(sub.join(format!("{}.json", v.vector_id)), text)?;
    }
    Ok(suite.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformance::run_vector;
    use crate::model::DenialCode;
    use std::collections::BTreeSet;

    #[test]
    fn generated_suite_passes_and_covers_every_code() {
        let suite = generate_suite();
        let mut failures = Vec::new();
        for v in &suite {
            failures.extend(run_vector(v, Path::new("."), &|_| {}).unwrap());
        }
        assert!(failures.is_empty(), "{failures:#?}");
        let seen: BTreeSet<String> = suite
            .iter()
            .flat_map(|v| v.steps.iter())
            .map(|s| s.expected().verdict.clone())
            .collect();
        for code in DenialCode::ALL {
            assert!(seen.contains(&format!("DENY({code})")), "no vector for {code}");
        }
        let ids: BTreeSet<&str> = suite.iter().map(|v| v.vector_id.as_str()).collect();
        assert_eq!(ids.len(), suite.len(), "duplicate vector ids");
    }
}
