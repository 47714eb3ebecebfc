//! Machine-readable conformance vectors and their runner.
//!
//! A vector is one JSON file: an engine configuration (the fixtures, with a
//! pinned clock) and an ordered list of steps, each with the verdict it must
//! produce. Steps share one engine, so nonce replay, budget exhaustion and
//! voucher sequencing can be expressed as sequences.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::config::{build_config, EngineSpec};
use crate::container::{Credential, PossessionProof};
use crate::model::{Decision, RequestContext};
use crate::pipeline::{Contribution, Engine, EngineConfig, WorkflowPolicy};
use crate::stateful::SignedVoucher;
use crate::value::Timestamp;

pub const LEVELS: [&str; 5] = ["level1_evaluation", "level2_semantic", "level3_profile", "level4_delegation", "stateful"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestVector {
    pub vector_id: String,
    pub level: String,
    pub description: String,
    pub fixtures: Fixtures,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixtures {
    pub config: EngineSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    /// `ALLOW` or `DENY(code)`.
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

impl Expected {
    pub fn allow() -> Self {
        Expected {
            verdict: "ALLOW".into(),
            constraint: None,
        }
    }

    pub fn deny(code: &str) -> Self {
        Expected {
            verdict: format!("DENY({code})"),
            constraint: None,
        }
    }

    pub fn at(mut self, constraint: &str) -> Self {
        self.constraint = Some(constraint.into());
        self
    }

    fn describe(&self) -> String {
        match &self.constraint {
            Some(c) => format!("{} [{c}]", self.verdict),
            None => self.verdict.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Step {
    Evaluate(EvaluateStep),
    Workflow(WorkflowStep),
}

/// Credentials are JSON objects or strings. A string is taken verbatim as
/// the presented bytes, so base64url transport and malformed input can be
/// expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateStep {
    pub credentials: Vec<Value>,
    pub presenter_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pop: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vouchers: Vec<Value>,
    /// Appends the voucher issued by an earlier step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vouchers_from_step: Option<usize>,
    pub context: RequestContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<Timestamp>,
    pub expected: Expected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepContribution {
    pub role: String,
    /// Index of the evaluate step whose credential and decision contribute.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowStep {
    pub policy: WorkflowPolicy,
    pub contributions: Vec<StepContribution>,
    pub context: RequestContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<Timestamp>,
    pub expected: Expected,
}

impl Step {
    pub fn expected(&self) -> &Expected {
        match self {
            Step::Evaluate(s) => &s.expected,
            Step::Workflow(s) => &s.expected,
        }
    }
}

#[derive(Debug, Error)]
#[error("fixture_error: {0}")]
pub struct FixtureError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorFailure {
    pub vector_id: String,
    pub step: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Report {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<VectorFailure>,
}

/// Lists vector files under `path` (or `path` itself), sorted.
pub fn vector_files(path: &Path) -> Result<Vec<PathBuf>, FixtureError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| FixtureError(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let p = entry.map_err(|e| FixtureError(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_vector(path: &Path) -> Result<TestVector, FixtureError> {
    let bytes = std::fs::read(path).map_err(|e| FixtureError(format!("{}: {e}", path.display())))?;
    canonical::from_bytes(&bytes).map_err(|e| FixtureError(format!("{}: {e}", path.display())))
}

pub fn run_vectors(path: &Path) -> Result<Report, FixtureError> {
    run_vectors_with(path, &|_| {})
}

/// Runs every vector with `adjust` applied to each engine configuration
/// before the engine is built. Used to check that the suite notices a
/// broken engine.
pub fn run_vectors_with(path: &Path, adjust: &dyn Fn(&mut EngineConfig)) -> Result<Report, FixtureError> {
    let mut report = Report::default();
    for file in vector_files(path)? {
        let vector = load_vector(&file)?;
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let failures = run_vector(&vector, &base, adjust)?;
        report.total += 1;
        if failures.is_empty() {
            report.passed += 1;
        }
        report.failures.extend(failures);
    }
    Ok(report)
}

fn credential_bytes(v: &Value) -> Vec<u8> {
    match v {
        Value::String(s) => s.as_bytes().to_vec(),
        other => canonical::to_bytes(other),
    }
}

fn parse_signed<T: serde::de::DeserializeOwned + Serialize>(v: &Value, what: &str) -> Result<crate::crypto::SignedDocument<T>, FixtureError> {
    crate::crypto::SignedDocument::from_value(v.clone()).map_err(|e| FixtureError(format!("{what}: {e}")))
}

/// Executes one vector against a fresh engine and returns the mismatching
/// steps.
pub fn run_vector(vector: &TestVector, base: &Path, adjust: &dyn Fn(&mut EngineConfig)) -> Result<Vec<VectorFailure>, FixtureError> {
    let (mut config, _warnings) = build_config(&vector.fixtures.config, base).map_err(|e| FixtureError(format!("{}: {e}", vector.vector_id)))?;
    adjust(&mut config);
    let engine = Engine::new(config);
    for n in &vector.fixtures.config.consumed_nonces {
        engine.nonces().mark_consumed(n);
    }
    let default_now = engine.config().now;

    let mut results: Vec<(Option<Credential>, Decision, Option<SignedVoucher>)> = Vec::new();
    let mut failures = Vec::new();
    for (i, step) in vector.steps.iter().enumerate() {
        let (credential, decision, voucher) = match step {
            Step::Evaluate(s) => {
                engine.set_now(s.now.or(default_now));
                let creds: Vec<Vec<u8>> = s.credentials.iter().map(credential_bytes).collect();
                let pop: Option<PossessionProof> = s.pop.as_ref().map(|p| parse_signed(p, "pop")).transpose()?;
                let mut vouchers: Vec<SignedVoucher> = s.vouchers.iter().map(|v| parse_signed(v, "voucher")).collect::<Result<_, _>>()?;
                if let Some(j) = s.vouchers_from_step {
                    let issued = results
                        .get(j)
                        .and_then(|r| r.2.clone())
                        .ok_or_else(|| FixtureError(format!("{}: step {j} issued no voucher", vector.vector_id)))?;
                    vouchers.push(issued);
                }
                let eval = engine.evaluate_bytes(&creds, &s.presenter_id, pop.as_ref(), &vouchers, &s.context);
                let leaf = creds.last().and_then(|b| crate::container::parse_container(b).ok());
                (leaf, eval.decision, eval.voucher)
            }
            Step::Workflow(s) => {
                engine.set_now(s.now.or(default_now));
                let mut contributions = Vec::new();
                for c in &s.contributions {
                    let Some((Some(cred), decision, _)) = results.get(c.step) else {
                        return Err(FixtureError(format!("{}: contribution names step {} without a credential", vector.vector_id, c.step)));
                    };
                    contributions.push(Contribution {
                        role: c.role.clone(),
                        credential: cred.clone(),
                        decision: decision.clone(),
                    });
                }
                let eval = engine.compose_workflow(&s.policy, &contributions, &s.context);
                (None, eval.decision, None)
            }
        };
        let expected = step.expected();
        let matches = decision.verdict() == expected.verdict
            && (expected.constraint.is_none() || decision.denial().and_then(|d| d.constraint.as_deref()) == expected.constraint.as_deref());
        if !matches {
            let actual = match decision.denial().and_then(|d| d.constraint.as_deref()) {
                Some(c) => format!("{} [{c}]", decision.verdict()),
                None => decision.verdict(),
            };
            failures.push(VectorFailure {
                vector_id: vector.vector_id.clone(),
                step: i,
                expected: expected.describe(),
                actual,
            });
        }
        results.push((credential, decision, voucher));
    }
    Ok(failures)
}
