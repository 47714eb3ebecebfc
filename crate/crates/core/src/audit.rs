//! Signed, hash-chained audit records: one per evaluation, allow or deny.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, SignedDocument};
use crate::model::{DenialCode, TraceEntry};
use crate::value::Timestamp;

/// `prev_record` of the first record in a log.
pub const GENESIS_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyProtection {
    Hardware,
    Software,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SecurityContext {
    pub key_protection: KeyProtection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment_attestation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GovernanceSnapshot {
    pub registry_versions: Vec<String>,
    pub profile_versions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping_profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_anchor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkflowFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workflow_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workflow_role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workflow_step_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contributing_credentials: Vec<String>,
}

impl WorkflowFields {
    pub fn is_empty(&self) -> bool {
        *self == WorkflowFields::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_id: String,
    pub sequence: u64,
    pub evaluator_id: String,
    pub timestamp: Timestamp,
    pub credential_digests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_id: Option<String>,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    /// Resolved semantic identifiers actually used, as canonical text.
    pub context: BTreeMap<String, String>,
    /// The evaluation trace, including each constraint's result.
    pub checks: Vec<TraceEntry>,
    /// `ALLOW` or `DENY`.
    pub decision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denial_code: Option<DenialCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_constraint: Option<String>,
    #[serde(default, skip_serializing_if = "WorkflowFields::is_empty")]
    pub workflow: WorkflowFields,
    pub governance: GovernanceSnapshot,
    pub security: SecurityContext,
    pub prev_record: String,
}

pub type SignedAuditRecord = SignedDocument<AuditRecord>;

/// Everything about an evaluation that goes into its record, minus the
/// chaining fields the appender fills in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDraft {
    pub timestamp: Timestamp,
    pub credential_digests: Vec<String>,
    pub agent_id: Option<String>,
    pub issuer_id: Option<String>,
    pub action: String,
    pub resource: Option<String>,
    pub context: BTreeMap<String, String>,
    pub checks: Vec<TraceEntry>,
    pub decision: String,
    pub denial_code: Option<DenialCode>,
    pub failed_constraint: Option<String>,
    pub workflow: WorkflowFields,
    pub governance: GovernanceSnapshot,
    pub security: SecurityContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("audit append failed: {0}")]
pub struct AuditError(pub String);

/// Where records are written.
pub trait AuditSink: Send {
    fn write(&mut self, record: &SignedAuditRecord) -> Result<(), AuditError>;
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<SignedAuditRecord>,
}

impl AuditSink for MemorySink {
    fn write(&mut self, record: &SignedAuditRecord) -> Result<(), AuditError> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Appends one canonical record per line.
#[derive(Debug)]
pub struct FileSink {
    pub path: PathBuf,
}

impl AuditSink for FileSink {
    fn write(&mut self, record: &SignedAuditRecord) -> Result<(), AuditError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| AuditError(format!("{}: {e}", self.path.display())))?;
        let mut line = record.to_bytes();
        line.push(b'\n');
        file.write_all(&line).map_err(|e| AuditError(e.to_string()))
    }
}

/// Serialized append point: numbers, links, signs and writes records.
pub struct AuditLog {
    evaluator_id: String,
    key: KeyPair,
    sink: Box<dyn AuditSink>,
    next_sequence: u64,
    last_digest: String,
    pub records: Vec<SignedAuditRecord>,
}

impl AuditLog {
    pub fn new(evaluator_id: &str, key: KeyPair, sink: Box<dyn AuditSink>) -> Self {
        AuditLog {
            evaluator_id: evaluator_id.into(),
            key,
            sink,
            next_sequence: 1,
            last_digest: GENESIS_DIGEST.into(),
            records: Vec::new(),
        }
    }

    /// Continues an existing log (e.g. a file reopened across runs).
    pub fn resume(mut self, existing: &[SignedAuditRecord]) -> Self {
        if let Some(last) = existing.last() {
            self.next_sequence = last.body.sequence + 1;
            self.last_digest = last.digest();
        }
        self
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public()
    }

    /// Signs and appends. The chain only advances if the sink accepted the
    /// record.
    pub fn record_decision(&mut self, draft: RecordDraft) -> Result<SignedAuditRecord, AuditError> {
        let record = AuditRecord {
            record_id: format!("{}#{}", self.evaluator_id, self.next_sequence),
            sequence: self.next_sequence,
            evaluator_id: self.evaluator_id.clone(),
            timestamp: draft.timestamp,
            credential_digests: draft.credential_digests,
            agent_id: draft.agent_id,
            issuer_id: draft.issuer_id,
            action: draft.action,
            resource: draft.resource,
            context: draft.context,
            checks: draft.checks,
            decision: draft.decision,
            denial_code: draft.denial_code,
            failed_constraint: draft.failed_constraint,
            workflow: draft.workflow,
            governance: draft.governance,
            security: draft.security,
            prev_record: self.last_digest.clone(),
        };
        let signed = SignedAuditRecord::sign(record, &self.key);
        self.sink.write(&signed)?;
        self.next_sequence += 1;
        self.last_digest = signed.digest();
        self.records.push(signed.clone());
        Ok(signed)
    }
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("evaluator_id", &self.evaluator_id)
            .field("next_sequence", &self.next_sequence)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {index}: {reason}")]
pub struct ChainBreak {
    /// Zero-based position of the first bad record.
    pub index: usize,
    pub reason: String,
}

/// Parses a log file body: one record per non-empty line.
pub fn parse_log(text: &[u8]) -> Result<Vec<SignedAuditRecord>, ChainBreak> {
    text.split(|b| *b == b'\n')
        .filter(|l| !l.trim_ascii().is_empty())
        .enumerate()
        .map(|(index, line)| {
            SignedAuditRecord::parse(line).map_err(|e| ChainBreak {
                index,
                reason: format!("unparseable: {e}"),
            })
        })
        .collect()
}

/// Checks every signature and every link; reports the first break.
pub fn verify_audit_chain(records: &[SignedAuditRecord], evaluator_keys: &[PublicKey]) -> Result<(), ChainBreak> {
    let mut prev = GENESIS_DIGEST.to_string();
    for (index, r) in records.iter().enumerate() {
        if let Err(e) = r.verify_by(evaluator_keys) {
            return Err(ChainBreak {
                index,
                reason: format!("signature: {e}"),
            });
        }
        if r.body.prev_record != prev {
            return Err(ChainBreak {
                index,
                reason: "link to the previous record does not match".into(),
            });
        }
        prev = r.digest();
    }
    Ok(())
}

/// Parses and verifies a log file body in one step.
pub fn verify_log_bytes(text: &[u8], evaluator_keys: &[PublicKey]) -> Result<usize, ChainBreak> {
    let records = parse_log(text)?;
    verify_audit_chain(&records, evaluator_keys)?;
    Ok(records.len())
}
