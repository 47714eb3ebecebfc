//! File-level engine configuration. Artifacts may be given inline (as JSON
//! objects) or as paths relative to the configuration file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::audit::{parse_log, AuditLog, FileSink, KeyProtection, MemorySink, SecurityContext};
use crate::canonical;
use crate::container::{SignedRevocationList, TrustedIssuers};
use crate::crypto::{KeyFile, PublicKey, SignedDocument};
use crate::pipeline::{Engine, EngineConfig, LocalPolicy, DEFAULT_MAX_CHAIN_DEPTH, DEFAULT_POP_MAX_AGE_SECONDS};
use crate::registry::{RegistrySet, SignedRegistry};
use crate::semantic::{SignedMappingProfile, Vocabulary};
use crate::stateful::{EpochSettings, FileAuthority, MemoryAuthority, Tier, DEFAULT_DELTA_T_SECONDS};
use crate::value::Timestamp;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{what}: {message}")]
    Invalid { what: String, message: String },
}

fn invalid(what: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        what: what.into(),
        message: message.to_string(),
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Resolves an artifact reference: a string is a path relative to `base`,
/// anything else is the artifact itself.
pub fn resolve_artifact(value: &Value, base: &Path) -> Result<Value, ConfigError> {
    match value {
        Value::String(p) => {
            let path = base.join(p);
            let bytes = read_file(&path)?;
            canonical::parse_value(&bytes).map_err(|e| invalid(path.display().to_string(), e))
        }
        other => Ok(other.clone()),
    }
}

fn typed<T: serde::de::DeserializeOwned>(value: &Value, base: &Path, what: &str) -> Result<T, ConfigError> {
    let v = resolve_artifact(value, base)?;
    canonical::from_value(v).map_err(|e| invalid(what, e))
}

fn signed<T: serde::de::DeserializeOwned + Serialize>(value: &Value, base: &Path, what: &str) -> Result<SignedDocument<T>, ConfigError> {
    let v = resolve_artifact(value, base)?;
    SignedDocument::from_value(v).map_err(|e| invalid(what, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorityKind {
    Memory,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoritySpec {
    pub pointer: String,
    pub kind: AuthorityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub offline: bool,
}

fn default_depth() -> usize {
    DEFAULT_MAX_CHAIN_DEPTH
}

fn default_pop_age() -> i64 {
    DEFAULT_POP_MAX_AGE_SECONDS
}

fn default_delta_t() -> i64 {
    DEFAULT_DELTA_T_SECONDS
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Serialized engine configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub evaluator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trusted_issuers: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steward_keys: Vec<PublicKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub registries: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_registries: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabularies: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping_profile: Option<Value>,
    /// Signed revocation lists, verified against the trusted key of the
    /// list's issuer or `revocation_keys`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub revocations: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_keys: Option<TrustedIssuers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_max_age_seconds: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_policy: Option<Value>,
    #[serde(default = "default_depth")]
    pub max_chain_depth: usize,
    #[serde(default, skip_serializing_if = "is_default")]
    pub clock_skew_seconds: i64,
    #[serde(default = "default_pop_age")]
    pub pop_max_age_seconds: i64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub require_issued_nonces: bool,
    #[serde(default, skip_serializing_if = "is_default")]
    pub consumed_nonces: Vec<String>,
    #[serde(default)]
    pub tier: Tier,
    #[serde(default = "default_delta_t")]
    pub delta_t_seconds: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<EpochSettings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_authorities: Vec<AuthoritySpec>,
    /// Evaluator signing key file (inline or path). A fresh key is
    /// generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_key: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_log: Option<String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub key_protection: KeyProtection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_context_allowlist: Option<BTreeSet<String>>,
}

impl EngineSpec {
    pub fn new(evaluator_id: &str) -> Self {
        EngineSpec {
            evaluator_id: evaluator_id.into(),
            now: None,
            trusted_issuers: None,
            steward_keys: Vec::new(),
            registries: Vec::new(),
            accepted_registries: None,
            vocabularies: Vec::new(),
            mapping_profile: None,
            revocations: Vec::new(),
            revocation_keys: None,
            revocation_max_age_seconds: None,
            local_policy: None,
            max_chain_depth: DEFAULT_MAX_CHAIN_DEPTH,
            clock_skew_seconds: 0,
            pop_max_age_seconds: DEFAULT_POP_MAX_AGE_SECONDS,
            require_issued_nonces: false,
            consumed_nonces: Vec::new(),
            tier: Tier::Stateless,
            delta_t_seconds: DEFAULT_DELTA_T_SECONDS,
            epoch: None,
            state_authorities: Vec::new(),
            audit_key: None,
            audit_log: None,
            key_protection: KeyProtection::Unknown,
            manifest_digest: None,
            audit_context_allowlist: None,
        }
    }

    /// Reads a spec and returns it with the directory its paths are
    /// relative to.
    pub fn load(path: &Path) -> Result<(EngineSpec, PathBuf), ConfigError> {
        let bytes = read_file(path)?;
        let spec = canonical::from_bytes(&bytes).map_err(|e| invalid(path.display().to_string(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((spec, base))
    }
}

/// A built engine plus any artifacts that were dropped while building.
#[derive(Debug)]
pub struct Built {
    pub engine: Engine,
    pub warnings: Vec<String>,
}

/// Builds the in-memory configuration. Artifacts whose signatures do not
/// verify are dropped (and reported) so they can grant nothing.
pub fn build_config(spec: &EngineSpec, base: &Path) -> Result<(EngineConfig, Vec<String>), ConfigError> {
    let mut warnings = Vec::new();
    let audit_key = match &spec.audit_key {
        Some(v) => {
            let file: KeyFile = typed(v, base, "audit_key")?;
            file.key_pair().map_err(|e| invalid("audit_key", e))?
        }
        None => crate::crypto::KeyPair::generate(),
    };
    let mut config = EngineConfig::new(&spec.evaluator_id, audit_key);
    config.now = spec.now;
    if let Some(v) = &spec.trusted_issuers {
        config.trusted_issuers = typed(v, base, "trusted_issuers")?;
    }
    config.steward_keys = spec.steward_keys.clone();

    let mut registries = Vec::new();
    for (i, v) in spec.registries.iter().enumerate() {
        let doc: SignedRegistry = signed(v, base, &format!("registries[{i}]"))?;
        match doc.verify_by(&config.steward_keys) {
            Ok(_) => registries.push(doc),
            Err(e) => warnings.push(format!("registry {} ignored: {e}", doc.body.registry_id)),
        }
    }
    config.registries = RegistrySet {
        registries,
        accepted: spec.accepted_registries.clone(),
    };

    for (i, v) in spec.vocabularies.iter().enumerate() {
        let doc: SignedDocument<Vocabulary> = signed(v, base, &format!("vocabularies[{i}]"))?;
        match Vocabulary::from_signed(&doc, &config.steward_keys) {
            Ok(vocab) => config.vocabularies.push(vocab),
            Err(e) => warnings.push(format!("vocabulary {} ignored: {e}", doc.body.key())),
        }
    }
    if let Some(v) = &spec.mapping_profile {
        let doc: SignedMappingProfile = signed(v, base, "mapping_profile")?;
        config.mapping_profile = Some(doc);
    }

    config.revocations.max_age_seconds = spec.revocation_max_age_seconds;
    for (i, v) in spec.revocations.iter().enumerate() {
        let list: SignedRevocationList = signed(v, base, &format!("revocations[{i}]"))?;
        let issuer = list.body.issuer_id.clone();
        let key = config
            .trusted_issuers
            .key_for(&issuer)
            .or_else(|| spec.revocation_keys.as_ref().and_then(|k| k.key_for(&issuer)))
            .ok_or_else(|| invalid(format!("revocations[{i}]"), format!("no key for issuer {issuer}")))?;
        if let Err(e) = config.revocations.apply(list, &key) {
            warnings.push(format!("revocation list for {issuer} ignored: {e}"));
        }
    }

    if let Some(v) = &spec.local_policy {
        config.local_policy = typed::<LocalPolicy>(v, base, "local_policy")?;
    }
    if spec.max_chain_depth == 0 {
        return Err(invalid("max_chain_depth", "must be at least 1"));
    }
    config.max_chain_depth = spec.max_chain_depth;
    config.clock_skew_seconds = spec.clock_skew_seconds;
    config.pop_max_age_seconds = spec.pop_max_age_seconds;
    config.require_issued_nonces = spec.require_issued_nonces;
    config.tier = spec.tier;
    config.delta_t_seconds = spec.delta_t_seconds;
    config.epoch = spec.epoch.clone();
    for a in &spec.state_authorities {
        let authority: Arc<dyn crate::stateful::StateAuthority> = match a.kind {
            AuthorityKind::Memory => {
                let m = MemoryAuthority::new();
                m.set_offline(a.offline);
                Arc::new(m)
            }
            AuthorityKind::File => {
                let path = a.path.as_ref().ok_or_else(|| invalid("state_authorities", "file authority needs a path"))?;
                Arc::new(FileAuthority::new(base.join(path)))
            }
        };
        config.authorities.insert(&a.pointer, authority);
    }
    config.security = SecurityContext {
        key_protection: spec.key_protection,
        environment_attestation: None,
    };
    config.manifest_digest = spec.manifest_digest.clone();
    config.audit_context_allowlist = spec.audit_context_allowlist.clone();
    Ok((config, warnings))
}

/// Builds a ready engine, opening (and resuming) the audit log file if one
/// is configured.
pub fn build_engine(spec: &EngineSpec, base: &Path) -> Result<Built, ConfigError> {
    let (config, warnings) = build_config(spec, base)?;
    let log = match &spec.audit_log {
        Some(p) => {
            let path = base.join(p);
            let existing = match std::fs::read(&path) {
                Ok(bytes) => parse_log(&bytes).map_err(|e| invalid(path.display().to_string(), e))?,
                Err(_) => Vec::new(),
            };
            AuditLog::new(&config.evaluator_id, config.audit_key.clone(), Box::new(FileSink { path })).resume(&existing)
        }
        None => AuditLog::new(&config.evaluator_id, config.audit_key.clone(), Box::new(MemorySink::default())),
    };
    let engine = Engine::with_audit_log(config, log);
    for n in &spec.consumed_nonces {
        engine.nonces().mark_consumed(n);
    }
    Ok(Built { engine, warnings })
}

/// One request as a file. Credential, proof and voucher entries are inline
/// objects or paths; a credential path is read verbatim, so files in the
/// base64url transport form work too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestFile {
    pub credentials: Vec<Value>,
    pub presenter_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pop: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vouchers: Vec<Value>,
    pub context: Value,
}

impl RequestFile {
    pub fn load(path: &Path) -> Result<(RequestFile, PathBuf), ConfigError> {
        let bytes = read_file(path)?;
        let req = canonical::from_bytes(&bytes).map_err(|e| invalid(path.display().to_string(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((req, base))
    }

    pub fn evaluate(&self, engine: &Engine, base: &Path) -> Result<crate::pipeline::Evaluation, ConfigError> {
        let mut credentials = Vec::new();
        for c in &self.credentials {
            credentials.push(match c {
                Value::String(p) => read_file(&base.join(p))?,
                other => canonical::to_bytes(other),
            });
        }
        let pop = self
            .pop
            .as_ref()
            .map(|p| signed::<crate::container::PossessionBody>(p, base, "pop"))
            .transpose()?;
        let vouchers = self
            .vouchers
            .iter()
            .map(|v| signed::<crate::stateful::StateVoucher>(v, base, "voucher"))
            .collect::<Result<Vec<_>, _>>()?;
        let ctx: crate::model::RequestContext = typed(&self.context, base, "context")?;
        Ok(engine.evaluate_bytes(&credentials, &self.presenter_id, pop.as_ref(), &vouchers, &ctx))
    }
}
