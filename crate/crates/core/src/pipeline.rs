//! The enforcement engine: container verification, payload evaluation,
//! delegation chains, local policy, cumulative limits and workflow
//! composition. Every evaluation ends in ALLOW or DENY and leaves exactly one
//! audit record (or, if the record cannot be written, a DENY).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditLog, AuditSink, GovernanceSnapshot, MemorySink, RecordDraft, SecurityContext, SignedAuditRecord, WorkflowFields};
use crate::constraint::{evaluate_constraint, Constraint, ConstraintResult};
use crate::container::{
    parse_container, verify_container, Credential, NonceCache, PossessionProof, Presentation, RevocationError, RevocationStore,
    SignedRevocationList, TrustedIssuers, VerifyPolicy, VerifyStep,
};
use crate::crypto::{KeyPair, PublicKey};
use crate::model::{validate_payload, AuthorizationPayload, Decision, DenialCode, DenialReason, RequestContext, TraceEntry, TraceResult};
use crate::registry::RegistrySet;
use crate::semantic::{SemanticResolver, SignedMappingProfile, Vocabulary, CURRENCY_FIELD};
use crate::stateful::{
    update_voucher, verify_voucher_chain, AuthorityDirectory, CumulativeLimitConstraint, EpochLedger, EpochSettings, ReservationRequest,
    SequenceMemory, SignedVoucher, StateError, Tier, VoucherPolicy, DEFAULT_DELTA_T_SECONDS,
};
use crate::value::{Timestamp, TypedValue};

pub const DEFAULT_MAX_CHAIN_DEPTH: usize = 4;
pub const DEFAULT_POP_MAX_AGE_SECONDS: i64 = 300;

/// Receiver restrictions, expressed in the same constraint algebra as
/// credentials. They can only narrow what a credential grants.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LocalPolicy {
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub required_context_fields: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredRole {
    pub role: String,
    pub permission: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowPolicy {
    pub workflow_id: String,
    pub required_roles: Vec<RequiredRole>,
    #[serde(default)]
    pub shared_fields: BTreeSet<String>,
}

/// One independently evaluated contribution to a workflow.
#[derive(Debug, Clone)]
pub struct Contribution {
    pub role: String,
    pub credential: Credential,
    pub decision: Decision,
}

/// Immutable receiver configuration.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub evaluator_id: String,
    pub trusted_issuers: TrustedIssuers,
    pub registries: RegistrySet,
    pub revocations: RevocationStore,
    pub steward_keys: Vec<PublicKey>,
    pub core_vocabulary: Vocabulary,
    /// Verified profile vocabularies, selected per credential by its
    /// `profile` field.
    pub vocabularies: Vec<Vocabulary>,
    pub mapping_profile: Option<SignedMappingProfile>,
    pub local_policy: LocalPolicy,
    pub max_chain_depth: usize,
    pub clock_skew_seconds: i64,
    pub pop_max_age_seconds: i64,
    pub require_issued_nonces: bool,
    pub tier: Tier,
    pub delta_t_seconds: i64,
    pub epoch: Option<EpochSettings>,
    pub authorities: AuthorityDirectory,
    pub audit_key: KeyPair,
    pub security: SecurityContext,
    pub manifest_digest: Option<String>,
    /// If set, only these identifiers appear in audit context snapshots.
    pub audit_context_allowlist: Option<BTreeSet<String>>,
    /// Fixed clock; `None` uses system time.
    pub now: Option<Timestamp>,
}

impl EngineConfig {
    pub fn new(evaluator_id: &str, audit_key: KeyPair) -> Self {
        EngineConfig {
            evaluator_id: evaluator_id.into(),
            trusted_issuers: TrustedIssuers::default(),
            registries: RegistrySet::default(),
            revocations: RevocationStore::default(),
            steward_keys: Vec::new(),
            core_vocabulary: Vocabulary::core(),
            vocabularies: Vec::new(),
            mapping_profile: None,
            local_policy: LocalPolicy::default(),
            max_chain_depth: DEFAULT_MAX_CHAIN_DEPTH,
            clock_skew_seconds: 0,
            pop_max_age_seconds: DEFAULT_POP_MAX_AGE_SECONDS,
            require_issued_nonces: false,
            tier: Tier::Stateless,
            delta_t_seconds: DEFAULT_DELTA_T_SECONDS,
            epoch: None,
            authorities: AuthorityDirectory::default(),
            audit_key,
            security: SecurityContext::default(),
            manifest_digest: None,
            audit_context_allowlist: None,
            now: None,
        }
    }

    pub fn profile_vocabulary(&self, profile: &str) -> Option<&Vocabulary> {
        self.vocabularies.iter().find(|v| v.key() == profile)
    }
}

/// What a presenter hands the receiver besides the request context.
#[derive(Debug, Clone, Default)]
pub struct Request {
    /// Root first; a single credential is a chain of one.
    pub credentials: Vec<Credential>,
    pub presenter_id: String,
    pub pop: Option<PossessionProof>,
    pub vouchers: Vec<SignedVoucher>,
}

/// The result of one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub decision: Decision,
    /// Absent only when the record could not be written, in which case the
    /// decision is a DENY.
    pub record: Option<SignedAuditRecord>,
    /// Successor state voucher issued by this evaluator (voucher tier).
    pub voucher: Option<SignedVoucher>,
}

impl Evaluation {
    /// Structured form used by the CLI and the C interface.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "decision": self.decision,
            "audit_record": self.record.as_ref().map(|r| &r.document),
            "voucher": self.voucher.as_ref().map(|v| &v.document),
        })
    }
}

enum Hold {
    Reservation { pointer: String, id: String },
    Epoch { account: String, amount: crate::value::Decimal },
    Voucher(SignedVoucher),
}

#[derive(Default)]
struct Run {
    trace: Vec<TraceEntry>,
    context: BTreeMap<String, String>,
    holds: Vec<Hold>,
}

impl Run {
    fn push(&mut self, stage: impl Into<String>, check: impl Into<String>, result: TraceResult) {
        self.trace.push(TraceEntry {
            stage: stage.into(),
            check: check.into(),
            result,
        });
    }

    fn fail(&mut self, stage: impl Into<String>, reason: DenialReason) -> DenialReason {
        let check = if reason.detail.is_empty() {
            reason.code.to_string()
        } else {
            reason.detail.clone()
        };
        self.push(stage, check, TraceResult::Fail);
        reason
    }
}

struct Deferred<'c> {
    label: String,
    constraint: &'c CumulativeLimitConstraint,
    value: TypedValue,
    currency: Option<String>,
}

/// The enforcement engine. Configuration is an immutable snapshot; the
/// nonce cache, state memories, revocation store and audit log are the only
/// mutable parts and are internally serialized.
pub struct Engine {
    config: EngineConfig,
    revocations: RwLock<RevocationStore>,
    nonces: NonceCache,
    epoch_ledger: EpochLedger,
    sequences: SequenceMemory,
    audit: Mutex<AuditLog>,
    clock: Mutex<Option<Timestamp>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("evaluator_id", &self.config.evaluator_id).finish()
    }
}

fn stage_for(step: VerifyStep, link: Option<usize>) -> String {
    match link {
        None => step.label().to_string(),
        Some(i) => step.label().replacen("verifyContainer", &format!("verifyContainer[link {}]", i + 1), 1),
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self::with_audit_sink(config, Box::new(MemorySink::default()))
    }

    pub fn with_audit_sink(config: EngineConfig, sink: Box<dyn AuditSink>) -> Self {
        Self::with_audit_log(config.clone(), AuditLog::new(&config.evaluator_id, config.audit_key.clone(), sink))
    }

    pub fn with_audit_log(config: EngineConfig, log: AuditLog) -> Self {
        Engine {
            revocations: RwLock::new(config.revocations.clone()),
            nonces: NonceCache::new(config.require_issued_nonces),
            epoch_ledger: EpochLedger::default(),
            sequences: SequenceMemory::default(),
            audit: Mutex::new(log),
            clock: Mutex::new(config.now),
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn nonces(&self) -> &NonceCache {
        &self.nonces
    }

    pub fn sequences(&self) -> &SequenceMemory {
        &self.sequences
    }

    pub fn set_now(&self, now: Option<Timestamp>) {
        *self.clock.lock().unwrap() = now;
    }

    pub fn now(&self) -> Timestamp {
        self.clock.lock().unwrap().unwrap_or_else(Timestamp::now)
    }

    /// Installs a newer revocation list, verified against `issuer_key`.
    pub fn apply_revocation(&self, list: SignedRevocationList, issuer_key: &PublicKey) -> Result<(), RevocationError> {
        self.revocations.write().unwrap().apply(list, issuer_key)
    }

    pub fn audit_records(&self) -> Vec<SignedAuditRecord> {
        self.audit.lock().unwrap().records.clone()
    }

    pub fn audit_public_key(&self) -> PublicKey {
        self.config.audit_key.public()
    }

    /// Single-credential evaluation.
    pub fn evaluate(&self, credential: &Credential, presenter_id: &str, pop: Option<&PossessionProof>, ctx: &RequestContext) -> Evaluation {
        self.evaluate_request(
            &Request {
                credentials: vec![credential.clone()],
                presenter_id: presenter_id.into(),
                pop: pop.cloned(),
                vouchers: Vec::new(),
            },
            ctx,
        )
    }

    /// Delegation-chain evaluation, root first.
    pub fn evaluate_delegation_chain(
        &self,
        chain: &[Credential],
        presenter_id: &str,
        pop: Option<&PossessionProof>,
        ctx: &RequestContext,
    ) -> Evaluation {
        let request = Request {
            credentials: chain.to_vec(),
            presenter_id: presenter_id.into(),
            pop: pop.cloned(),
            vouchers: Vec::new(),
        };
        self.finish_chain(&request, ctx, true)
    }

    /// Evaluates serialized credentials (root first); unparseable input is
    /// denied as incomplete.
    pub fn evaluate_bytes(
        &self,
        credentials: &[Vec<u8>],
        presenter_id: &str,
        pop: Option<&PossessionProof>,
        vouchers: &[SignedVoucher],
        ctx: &RequestContext,
    ) -> Evaluation {
        let mut parsed = Vec::new();
        for (i, bytes) in credentials.iter().enumerate() {
            match parse_container(bytes) {
                Ok(c) => parsed.push(c),
                Err(e) => {
                    let mut run = Run::default();
                    let reason = run.fail(
                        "parseContainer",
                        DenialReason::new(DenialCode::CredentialIncomplete, format!("credential {}: {e}", i + 1)),
                    );
                    return self.conclude(run, Err(reason), &[], ctx, None, WorkflowFields::default());
                }
            }
        }
        self.evaluate_request(
            &Request {
                credentials: parsed,
                presenter_id: presenter_id.into(),
                pop: pop.cloned(),
                vouchers: vouchers.to_vec(),
            },
            ctx,
        )
    }

    /// General entry point: one credential or a chain, plus any vouchers.
    pub fn evaluate_request(&self, request: &Request, ctx: &RequestContext) -> Evaluation {
        let chain = request.credentials.len() != 1;
        self.finish_chain(request, ctx, chain)
    }

    fn finish_chain(&self, request: &Request, ctx: &RequestContext, chain_mode: bool) -> Evaluation {
        let now = self.now();
        let mut run = Run::default();
        let result = if chain_mode {
            self.run_chain(request, ctx, now, &mut run)
        } else {
            self.run_single(request, ctx, now, &mut run)
        };
        let workflow = self.workflow_fields(request.credentials.last(), ctx, now);
        self.conclude(run, result, &request.credentials, ctx, Some(now), workflow)
    }

    fn verify_policy<'a>(&'a self, revocations: &'a RevocationStore, now: Timestamp) -> VerifyPolicy<'a> {
        VerifyPolicy {
            evaluator_id: &self.config.evaluator_id,
            trusted_issuers: &self.config.trusted_issuers,
            vetting: &self.config.registries,
            revocations,
            nonces: &self.nonces,
            now,
            clock_skew_seconds: self.config.clock_skew_seconds,
            pop_max_age_seconds: self.config.pop_max_age_seconds,
        }
    }

    fn verify_link(
        &self,
        credential: &Credential,
        presentation: Presentation<'_>,
        delegator: Option<&Credential>,
        link: Option<usize>,
        now: Timestamp,
        run: &mut Run,
    ) -> Result<(), DenialReason> {
        let revocations = self.revocations.read().unwrap();
        let policy = self.verify_policy(&revocations, now);
        let c = &credential.body;
        let is_leaf = matches!(presentation, Presentation::Leaf { .. });
        let outcome = verify_container(credential, presentation, delegator, &policy);
        let failed_at = outcome.as_ref().err().map(|(s, _)| *s);
        for step in VerifyStep::ALL {
            if Some(step) == failed_at {
                let (_, reason) = outcome.unwrap_err();
                return Err(run.fail(stage_for(step, link), reason));
            }
            let check = match step {
                VerifyStep::Signature => "signature verifies against the issuer key".to_string(),
                VerifyStep::Issuer => format!("{} is a trusted, vetted issuer", c.issuer_id),
                VerifyStep::Audience => format!("audience includes {}", self.config.evaluator_id),
                VerifyStep::Possession if is_leaf => "presenter proves possession of the subject key".to_string(),
                VerifyStep::Possession => format!("{} continues as the next link's issuer", c.subject_id),
                VerifyStep::Validity => "credential is not expired and not revoked".to_string(),
            };
            run.push(stage_for(step, link), check, TraceResult::Ok);
        }
        Ok(())
    }

    fn check_structure(credential: &Credential) -> Result<(), DenialReason> {
        validate_payload(&credential.body.payload)?;
        let c = &credential.body;
        if c.subject_id != c.payload.agent() || c.issuer_id != c.payload.issuer() {
            return Err(DenialReason::new(
                DenialCode::CredentialIncomplete,
                "container subject/issuer disagree with the payload",
            ));
        }
        Ok(())
    }

    fn run_single(&self, request: &Request, ctx: &RequestContext, now: Timestamp, run: &mut Run) -> Result<Option<SignedVoucher>, DenialReason> {
        let credential = &request.credentials[0];
        run.push("parseContainer", "container structure is valid", TraceResult::Ok);
        self.verify_link(
            credential,
            Presentation::Leaf {
                presenter_id: &request.presenter_id,
                pop: request.pop.as_ref(),
            },
            None,
            None,
            now,
            run,
        )?;
        if let Err(r) = Self::check_structure(credential) {
            return Err(run.fail("extractAuthorizationPayload", r));
        }
        self.run_payload(credential, &credential.digest(), ctx, &request.vouchers, now, run)
    }

    fn run_chain(&self, request: &Request, ctx: &RequestContext, now: Timestamp, run: &mut Run) -> Result<Option<SignedVoucher>, DenialReason> {
        let chain = &request.credentials;
        let stage = "evaluateDelegationChain";
        if chain.is_empty() {
            return Err(run.fail(stage, DenialReason::new(DenialCode::CredentialIncomplete, "no credential presented")));
        }
        if chain.len() > self.config.max_chain_depth {
            return Err(run.fail(
                stage,
                DenialReason::new(
                    DenialCode::DelegationDepthExceeded,
                    format!("{} links exceed the maximum of {}", chain.len(), self.config.max_chain_depth),
                ),
            ));
        }
        run.push(stage, format!("{} links within the maximum of {}", chain.len(), self.config.max_chain_depth), TraceResult::Ok);
        for (i, link) in chain.iter().enumerate() {
            let stage = format!("parseContainer[link {}]", i + 1);
            if let Err(r) = Self::check_structure(link) {
                return Err(run.fail(stage, r));
            }
            run.push(stage, "container structure is valid and payload complete", TraceResult::Ok);
        }
        let last = chain.len() - 1;
        for (i, link) in chain.iter().enumerate() {
            let presentation = if i == last {
                Presentation::Leaf {
                    presenter_id: &request.presenter_id,
                    pop: request.pop.as_ref(),
                }
            } else {
                Presentation::Interior
            };
            let parent = if i > 0 { Some(&chain[i - 1]) } else { None };
            self.verify_link(link, presentation, parent, Some(i), now, run)?;
            let Some(parent) = parent else { continue };
            let hop = format!("evaluateDelegationChain[link {}]", i + 1);
            let (c, p) = (&link.body, &parent.body);
            if c.issuer_id != p.subject_id || c.parent_digest.as_deref() != Some(parent.digest().as_str()) {
                return Err(run.fail(
                    hop,
                    DenialReason::new(
                        DenialCode::DelegationChainBroken,
                        format!("{} does not continue from {}", c.issuer_id, p.subject_id),
                    ),
                ));
            }
            if !c.payload.permission_set().is_subset(p.payload.permission_set()) {
                return Err(run.fail(
                    hop,
                    DenialReason::new(DenialCode::DelegationWidened, "permissions are not a subset of the delegator's"),
                ));
            }
            if let Err(w) = crate::constraint::check_attenuation(c.payload.constraint_list(), p.payload.constraint_list()) {
                return Err(run.fail(hop, DenialReason::new(DenialCode::DelegationWidened, w.0)));
            }
            run.push(hop, format!("{} continues from and narrows link {}", c.issuer_id, i), TraceResult::Ok);
        }
        self.run_payload(&chain[last], &chain[0].digest(), ctx, &request.vouchers, now, run)
    }

    fn resolver<'a>(&'a self, profile: &str, now: Timestamp) -> SemanticResolver<'a> {
        SemanticResolver::new(
            self.config.mapping_profile.as_ref(),
            now,
            &self.config.steward_keys,
            &self.config.core_vocabulary,
            self.config.profile_vocabulary(profile),
        )
    }

    fn context_currency(resolver: &SemanticResolver<'_>, ctx: &RequestContext, run: &mut Run) -> Option<String> {
        let r = resolver.resolve(CURRENCY_FIELD, ctx).ok()?;
        let text = r.value.as_text()?.to_string();
        run.context.insert(r.identifier, text.clone());
        Some(text)
    }

    /// Permission, credential constraints, local policy, then cumulative
    /// limits; the first failure wins.
    fn run_payload(
        &self,
        leaf: &Credential,
        root_digest: &str,
        ctx: &RequestContext,
        vouchers: &[SignedVoucher],
        now: Timestamp,
        run: &mut Run,
    ) -> Result<Option<SignedVoucher>, DenialReason> {
        let payload = &leaf.body.payload;
        let profile = leaf.body.profile.as_str();
        if !payload.permission_set().contains(&ctx.action) {
            return Err(run.fail(
                "evaluatePayload: permission",
                DenialReason::new(DenialCode::PermissionDenied, format!("{} is not in the declared permission set", ctx.action)),
            ));
        }
        run.push(
            "evaluatePayload: permission",
            format!("{} is in the declared permission set", ctx.action),
            TraceResult::Ok,
        );
        let resolver = self.resolver(profile, now);
        let deferred = self.run_constraints(payload, ctx, &resolver, run)?;
        self.run_local_policy(ctx, &resolver, run)?;
        let mut issued = None;
        for d in deferred {
            let stage = format!("evaluatePayload: {}", d.label);
            match self.evaluate_cumulative(&d, profile, root_digest, vouchers, now) {
                Ok((hold, detail)) => {
                    if let Hold::Voucher(v) = &hold {
                        issued = Some(v.clone());
                    }
                    run.holds.push(hold);
                    run.push(stage, detail, TraceResult::Pass);
                }
                Err(r) => {
                    let r = r.with_constraint(d.label.clone());
                    return Err(run.fail(stage, r));
                }
            }
        }
        Ok(issued)
    }

    fn run_constraints<'c>(
        &self,
        payload: &'c AuthorizationPayload,
        ctx: &RequestContext,
        resolver: &SemanticResolver<'_>,
        run: &mut Run,
    ) -> Result<Vec<Deferred<'c>>, DenialReason> {
        let mut deferred = Vec::new();
        for (i, c) in payload.constraint_list().iter().enumerate() {
            let label = c.label(i);
            let stage = format!("evaluatePayload: {label}");
            if let Constraint::Unknown(u) = c {
                return Err(run.fail(
                    stage,
                    DenialReason::new(DenialCode::ConstraintUnknown, format!("unrecognized constraint type {}", u.type_tag)).with_constraint(label),
                ));
            }
            let resolved = match resolver.resolve(c.field().unwrap_or_default(), ctx) {
                Ok(r) => r,
                Err(r) => return Err(run.fail(stage, r.with_constraint(label))),
            };
            run.context.insert(resolved.identifier.clone(), resolved.value.canonical_text());
            let currency = match c.currency() {
                Some(_) => Self::context_currency(resolver, ctx, run),
                None => None,
            };
            if let Constraint::CumulativeLimit(cl) = c {
                deferred.push(Deferred {
                    label,
                    constraint: cl,
                    value: resolved.value,
                    currency,
                });
                continue;
            }
            match evaluate_constraint(c, &resolved.value, currency.as_deref()) {
                ConstraintResult::Pass(detail) => run.push(stage, detail, TraceResult::Pass),
                ConstraintResult::Fail(detail) => {
                    return Err(run.fail(stage, DenialReason::new(DenialCode::ConstraintFailed, detail).with_constraint(label)));
                }
            }
        }
        Ok(deferred)
    }

    fn run_local_policy(&self, ctx: &RequestContext, resolver: &SemanticResolver<'_>, run: &mut Run) -> Result<(), DenialReason> {
        let policy = &self.config.local_policy;
        let stage = "Local policy";
        for id in &policy.required_context_fields {
            match resolver.resolve(id, ctx) {
                Ok(r) => {
                    let text = r.value.canonical_text();
                    run.context.insert(r.identifier, text.clone());
                    run.push(stage, format!("{id} is present: {text}"), TraceResult::Pass);
                }
                Err(r) => return Err(run.fail(stage, r)),
            }
        }
        for (i, c) in policy.constraints.iter().enumerate() {
            let label = c.id().map(str::to_string).unwrap_or_else(|| format!("local #{}", i + 1));
            let resolved = match resolver.resolve(c.field().unwrap_or_default(), ctx) {
                Ok(r) => r,
                Err(r) => return Err(run.fail(stage, r.with_constraint(label))),
            };
            run.context.insert(resolved.identifier.clone(), resolved.value.canonical_text());
            let currency = match c.currency() {
                Some(_) => Self::context_currency(resolver, ctx, run),
                None => None,
            };
            match evaluate_constraint(c, &resolved.value, currency.as_deref()) {
                ConstraintResult::Pass(detail) => run.push(stage, format!("{label}: {detail}"), TraceResult::Pass),
                ConstraintResult::Fail(detail) => {
                    return Err(run.fail(stage, DenialReason::new(DenialCode::LocalPolicyDenied, detail).with_constraint(label)));
                }
            }
        }
        Ok(())
    }

    fn evaluate_cumulative(
        &self,
        d: &Deferred<'_>,
        profile: &str,
        root_digest: &str,
        vouchers: &[SignedVoucher],
        now: Timestamp,
    ) -> Result<(Hold, String), DenialReason> {
        let c = d.constraint;
        let pointer = c.state_authority_pointer.as_str();
        if !self.config.registries.state_authority_permitted(pointer, profile, now) {
            return Err(DenialReason::new(
                DenialCode::StateAuthorityUnpermitted,
                format!("{pointer} is not a permitted state authority for {profile}"),
            ));
        }
        if c.currency.is_some() && c.currency != d.currency {
            return Err(DenialReason::new(DenialCode::ConstraintFailed, "request currency does not match the cumulative limit"));
        }
        let amount = match d.value.as_decimal() {
            Some(a) if !a.is_negative() => a,
            _ => return Err(DenialReason::new(DenialCode::ConstraintFailed, "cumulative field is not a non-negative quantity")),
        };
        let account = c.account(root_digest);
        let over = |e: StateError| match e {
            StateError::OverBudget { .. } => DenialReason::new(DenialCode::StateLimitExceeded, e.to_string()),
            StateError::Unreachable(_) => DenialReason::new(DenialCode::StateAuthorityUnreachable, e.to_string()),
        };
        match self.config.tier {
            Tier::Stateless => Err(DenialReason::new(
                DenialCode::StateAuthorityUnreachable,
                "cumulative limits cannot be enforced without state",
            )),
            Tier::Synchronous => {
                let Some(authority) = self.config.authorities.get(pointer) else {
                    return Err(DenialReason::new(DenialCode::StateAuthorityUnreachable, format!("{pointer} is not reachable")));
                };
                let r = authority
                    .reserve(&ReservationRequest {
                        account,
                        amount,
                        budget: c.budget.clone(),
                        period: c.period,
                        now,
                    })
                    .map_err(over)?;
                let detail = format!("cumulative {} <= {}", r.spent_after, c.budget);
                Ok((
                    Hold::Reservation {
                        pointer: pointer.into(),
                        id: r.reservation_id,
                    },
                    detail,
                ))
            }
            Tier::EpochBound => {
                let Some(settings) = &self.config.epoch else {
                    return Err(DenialReason::new(DenialCode::StateAuthorityUnreachable, "no epoch allocation configured"));
                };
                let spent = self
                    .epoch_ledger
                    .spend(&account, &self.config.evaluator_id, settings, &c.budget, &amount, now)
                    .map_err(over)?;
                Ok((Hold::Epoch { account, amount }, format!("epoch spend {spent} within allocation")))
            }
            Tier::Voucher => {
                let registries = &self.config.registries;
                let permitted = |p: &str| registries.state_authority_permitted(p, profile, now);
                let signers = |p: &str| registries.voucher_signers(p, now);
                let policy = VoucherPolicy {
                    authority_permitted: &permitted,
                    signer_keys: &signers,
                    now,
                    delta_t_seconds: self.config.delta_t_seconds,
                };
                let mine: Vec<SignedVoucher> = vouchers.iter().filter(|v| v.body.account == account).cloned().collect();
                let state = verify_voucher_chain(&mine, c, &account, &self.sequences, &policy)?;
                let newest = mine.last().expect("verified chain is non-empty");
                let next = update_voucher(newest, &amount, &self.config.audit_key, now).map_err(over)?;
                if !self.sequences.advance(&account, state.sequence) {
                    return Err(DenialReason::new(DenialCode::StateSequenceInvalid, "voucher was consumed concurrently"));
                }
                let detail = format!("cumulative {} <= {}", next.body.spent, state.budget);
                Ok((Hold::Voucher(next), detail))
            }
        }
    }

    fn release(&self, holds: Vec<Hold>) {
        for hold in holds {
            match hold {
                Hold::Reservation { pointer, id } => {
                    if let Some(a) = self.config.authorities.get(&pointer) {
                        let _ = a.release(&id);
                    }
                }
                Hold::Epoch { account, amount } => self.epoch_ledger.refund(&account, &amount),
                Hold::Voucher(_) => {}
            }
        }
    }

    fn workflow_fields(&self, leaf: Option<&Credential>, ctx: &RequestContext, now: Timestamp) -> WorkflowFields {
        let profile = leaf.map(|c| c.body.profile.as_str()).unwrap_or_default();
        let resolver = self.resolver(profile, now);
        let get = |id: &str| resolver.resolve(id, ctx).ok().map(|r| r.value.canonical_text());
        WorkflowFields {
            workflow_id: get("core.workflow_id"),
            workflow_role: get("core.workflow_role"),
            workflow_step_id: get("core.workflow_step_id"),
            contributing_credentials: Vec::new(),
        }
    }

    fn governance(&self, credentials: &[Credential], now: Timestamp) -> GovernanceSnapshot {
        let mut profiles = vec![self.config.core_vocabulary.key()];
        profiles.extend(self.config.vocabularies.iter().map(Vocabulary::key));
        GovernanceSnapshot {
            registry_versions: self.config.registries.versions(now),
            profile_versions: profiles,
            mapping_profile: self
                .config
                .mapping_profile
                .as_ref()
                .map(|m| format!("{}@{}", m.body.profile_id, m.body.version)),
            manifest_digest: self.config.manifest_digest.clone(),
            trust_anchor: credentials.first().map(|c| c.body.issuer_id.clone()),
        }
    }

    /// Builds the decision, writes the audit record, and settles state
    /// holds: committed on a recorded ALLOW, released otherwise.
    fn conclude(
        &self,
        mut run: Run,
        result: Result<Option<SignedVoucher>, DenialReason>,
        credentials: &[Credential],
        ctx: &RequestContext,
        now: Option<Timestamp>,
        workflow: WorkflowFields,
    ) -> Evaluation {
        let now = now.unwrap_or_else(|| self.now());
        let (decision_word, reason, voucher) = match result {
            Ok(v) => {
                run.push("Decision", "All credential constraints and local policy checks pass", TraceResult::Allow);
                ("ALLOW", None, v)
            }
            Err(r) => {
                run.push("Decision", r.to_string(), TraceResult::Deny);
                ("DENY", Some(r), None)
            }
        };
        let leaf = credentials.last().map(|c| &c.body);
        let resolver = self.resolver(leaf.map(|c| c.profile.as_str()).unwrap_or_default(), now);
        let resource = resolver.resolve("core.resource_id", ctx).ok().map(|r| r.value.canonical_text());
        let mut context = std::mem::take(&mut run.context);
        if let Some(allow) = &self.config.audit_context_allowlist {
            context.retain(|k, _| allow.contains(k));
        }
        let draft = RecordDraft {
            timestamp: now,
            credential_digests: credentials.iter().map(Credential::digest).collect(),
            agent_id: leaf.map(|c| c.subject_id.clone()),
            issuer_id: leaf.map(|c| c.issuer_id.clone()),
            action: ctx.action.clone(),
            resource,
            context,
            checks: run.trace.clone(),
            decision: decision_word.into(),
            denial_code: reason.as_ref().map(|r| r.code),
            failed_constraint: reason.as_ref().and_then(|r| r.constraint.clone()),
            workflow,
            governance: self.governance(credentials, now),
            security: self.config.security.clone(),
        };
        let recorded = self.audit.lock().unwrap().record_decision(draft);
        match (recorded, reason) {
            (Ok(record), None) => Evaluation {
                decision: Decision::allow(run.trace),
                record: Some(record),
                voucher,
            },
            (Ok(record), Some(reason)) => {
                self.release(run.holds);
                Evaluation {
                    decision: Decision::deny(reason, run.trace),
                    record: Some(record),
                    voucher: None,
                }
            }
            (Err(e), _) => {
                self.release(std::mem::take(&mut run.holds));
                run.trace.pop();
                let reason = DenialReason::new(DenialCode::LocalPolicyDenied, e.to_string());
                run.push("Decision", reason.to_string(), TraceResult::Deny);
                Evaluation {
                    decision: Decision::deny(reason, run.trace),
                    record: None,
                    voucher: None,
                }
            }
        }
    }

    /// Evaluates a payload alone (no container checks, no audit record):
    /// permission, constraints, local policy and cumulative limits.
    pub fn evaluate_payload(&self, payload: &AuthorizationPayload, profile: &str, ctx: &RequestContext) -> Decision {
        let now = self.now();
        let mut run = Run::default();
        let result = (|| {
            if !payload.permission_set().contains(&ctx.action) {
                return Err(run.fail(
                    "evaluatePayload: permission",
                    DenialReason::new(DenialCode::PermissionDenied, format!("{} is not in the declared permission set", ctx.action)),
                ));
            }
            run.push("evaluatePayload: permission", format!("{} is in the declared permission set", ctx.action), TraceResult::Ok);
            let resolver = self.resolver(profile, now);
            let deferred = self.run_constraints(payload, ctx, &resolver, &mut run)?;
            self.run_local_policy(ctx, &resolver, &mut run)?;
            if let Some(d) = deferred.first() {
                return Err(run.fail(
                    format!("evaluatePayload: {}", d.label),
                    DenialReason::new(DenialCode::StateAuthorityUnreachable, "payload-only evaluation has no state context"),
                ));
            }
            Ok(())
        })();
        match result {
            Ok(()) => Decision::allow(run.trace),
            Err(r) => Decision::deny(r, run.trace),
        }
    }

    /// Conjunctive composition of independently evaluated credentials at a
    /// workflow boundary. Credentials are never merged into a union grant.
    pub fn compose_workflow(&self, policy: &WorkflowPolicy, contributions: &[Contribution], final_ctx: &RequestContext) -> Evaluation {
        let now = self.now();
        let mut run = Run::default();
        let result = self.run_workflow(policy, contributions, final_ctx, now, &mut run).map(|()| None);
        let credentials: Vec<Credential> = contributions.iter().map(|c| c.credential.clone()).collect();
        let workflow = WorkflowFields {
            workflow_id: Some(policy.workflow_id.clone()),
            workflow_role: None,
            workflow_step_id: None,
            contributing_credentials: credentials.iter().map(Credential::digest).collect(),
        };
        self.conclude(run, result, &credentials, final_ctx, Some(now), workflow)
    }

    fn run_workflow(
        &self,
        policy: &WorkflowPolicy,
        contributions: &[Contribution],
        ctx: &RequestContext,
        now: Timestamp,
        run: &mut Run,
    ) -> Result<(), DenialReason> {
        let stage = "composeWorkflow";
        let deny = |detail: String| DenialReason::new(DenialCode::WorkflowPolicyDenied, detail);
        if policy.required_roles.is_empty() {
            return Err(run.fail(stage, deny("workflow policy names no required role".into())));
        }
        let allowed: Vec<&Contribution> = contributions.iter().filter(|c| c.decision.is_allow()).collect();
        for req in &policy.required_roles {
            let satisfied = allowed.iter().any(|c| {
                c.role == req.role
                    && c.credential.body.payload.permission_set().contains(&req.permission)
                    && req.credential_class.as_ref().is_none_or(|k| *k == c.credential.body.credential_class)
            });
            if !satisfied {
                return Err(run.fail(
                    stage,
                    deny(format!("no allowed contribution for role {} with {}", req.role, req.permission)),
                ));
            }
            run.push(stage, format!("role {} is satisfied", req.role), TraceResult::Ok);
        }
        let first_profile = allowed.first().map(|c| c.credential.body.profile.clone()).unwrap_or_default();
        let core_resolver = self.resolver(&first_profile, now);
        if let Ok(r) = core_resolver.resolve("core.workflow_id", ctx) {
            if r.value.as_text() != Some(policy.workflow_id.as_str()) {
                return Err(run.fail(stage, deny(format!("request belongs to workflow {}", r.value.canonical_text()))));
            }
        }
        for field in &policy.shared_fields {
            let constraints: Vec<(&Contribution, &Constraint)> = allowed
                .iter()
                .flat_map(|c| {
                    c.credential
                        .body
                        .payload
                        .constraint_list()
                        .iter()
                        .filter(|k| k.field() == Some(field.as_str()))
                        .map(move |k| (*c, k))
                })
                .collect();
            if constraints.is_empty() {
                run.push(stage, format!("{field}: no contributor constrains it"), TraceResult::Pass);
                continue;
            }
            if constraints.iter().any(|(_, k)| matches!(k, Constraint::Unknown(_) | Constraint::CumulativeLimit(_))) {
                return Err(run.fail(stage, deny(format!("{field}: contributor constraints cannot be intersected"))));
            }
            let currencies: BTreeSet<Option<&str>> = constraints
                .iter()
                .filter(|(_, k)| matches!(k, Constraint::NumericLimit(_)))
                .map(|(_, k)| k.currency())
                .collect();
            if currencies.len() > 1 {
                return Err(run.fail(stage, deny(format!("{field}: contributors disagree on currency or unit"))));
            }
            let profile = &constraints[0].0.credential.body.profile;
            let resolver = self.resolver(profile, now);
            let value = match resolver.resolve(field, ctx) {
                Ok(r) => r,
                Err(r) => return Err(run.fail(stage, deny(format!("{field}: {r}")))),
            };
            run.context.insert(value.identifier.clone(), value.value.canonical_text());
            let currency = Self::context_currency(&resolver, ctx, run);
            for (contrib, k) in &constraints {
                if let ConstraintResult::Fail(detail) = evaluate_constraint(k, &value.value, currency.as_deref()) {
                    return Err(run.fail(stage, deny(format!("{field}: {} constraint fails: {detail}", contrib.role))));
                }
            }
            run.push(
                stage,
                format!("{field}: {} satisfies all {} contributor constraints", value.value.canonical_text(), constraints.len()),
                TraceResult::Pass,
            );
        }
        Ok(())
    }
}
