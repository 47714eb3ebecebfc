use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_portauthz");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PORTAUTHZ_CONFIG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn export(name: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join(name);
    let o = run(&["scenario", "export", name, dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (tmp, dir)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bundles_replay_through_cli() {
    for name in ["insurance_claims", "supply_chain"] {
        let (_tmp, dir) = export(name);
        let config = dir.join("config.json");
        let mut cases: Vec<PathBuf> = std::fs::read_dir(dir.join("cases")).unwrap().map(|e| e.unwrap().path()).collect();
        cases.sort();
        assert!(!cases.is_empty());
        for case in cases {
            let spec: Value = serde_json::from_slice(&std::fs::read(&case).unwrap()).unwrap();
            let o = run(&["--config", s(&config), "evaluate", "--request", s(&case)]);
            let out = stdout_json(&o);
            let expected = spec["expected"].as_str().unwrap();
            let decision = &out["decision"];
            let verdict = match decision["outcome"].as_str().unwrap() {
                "ALLOW" => "ALLOW".to_string(),
                _ => format!("DENY({})", decision["reason"]["code"].as_str().unwrap()),
            };
            assert_eq!(verdict, expected, "{}", case.display());
            assert_eq!(code(&o), if expected == "ALLOW" { 0 } else { 1 });
            if let Some(c) = spec["expected_constraint"].as_str() {
                assert_eq!(decision["reason"]["constraint"], c);
            }
            assert!(out["audit_record"].is_object());
        }
    }
}

#[test]
fn worked_trace_and_denial_variant() {
    let (_tmp, dir) = export("insurance_claims");
    let config = dir.join("config.json");
    let o = run(&["--config", s(&config), "evaluate", "--request", s(&dir.join("cases/worked_allow.json"))]);
    assert_eq!(code(&o), 0);
    let out = stdout_json(&o);
    assert_eq!(out["decision"]["outcome"], "ALLOW");
    assert_eq!(out["decision"]["trace"].as_array().unwrap().len(), 13);

    // Same request through individual flags, with the amount raised.
    let mut ctx: Value = serde_json::from_slice(&std::fs::read(dir.join("cases/worked_allow.json")).unwrap()).unwrap();
    ctx["context"]["fields"]["settlement_total"] = json!({"type": "decimal", "value": "7500"});
    let ctx_path = dir.join("ctx7500.json");
    std::fs::write(&ctx_path, serde_json::to_vec(&ctx["context"]).unwrap()).unwrap();
    let o = run(&[
        "--config",
        s(&config),
        "evaluate",
        "--credential",
        s(&dir.join("credentials/negotiator.json")),
        "--presenter",
        "agent:megainsure:negotiator-7",
        "--pop",
        s(&dir.join("pops/worked_allow.json")),
        "--context",
        s(&ctx_path),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout_json(&o);
    assert_eq!(out["decision"]["reason"]["code"], "constraint_failed");
    assert_eq!(out["decision"]["reason"]["constraint"], "C2");
}

#[test]
fn delegate_refuses_widening() {
    let (_tmp, dir) = export("supply_chain");
    let assistant: Value = serde_json::from_slice(&std::fs::read(dir.join("credentials/assistant.json")).unwrap()).unwrap();
    let mut payload = assistant["payload"].clone();
    let key = dir.join("keys/agent_aerotrust_evidence-broker.json");
    let subject = dir.join("keys/agent_aerotrust_audit-assistant.json");
    let delegate = |payload: &Value, out: &Path| {
        let p = dir.join("payload.json");
        std::fs::write(&p, serde_json::to_vec(payload).unwrap()).unwrap();
        run(&[
            "delegate",
            "--parent",
            s(&dir.join("credentials/broker.json")),
            "--payload",
            s(&p),
            "--key",
            s(&key),
            "--subject-key",
            s(&subject),
            "--audience",
            "svc:primeco:evidence-gateway",
            "--id",
            "urn:cred:cli:child",
            "--valid-from",
            "2026-06-01T00:00:00Z",
            "--valid-until",
            "2026-06-30T00:00:00Z",
            "--profile",
            "supplychain/1",
            "--out",
            s(out),
        ])
    };
    let ok = delegate(&payload, &dir.join("child.json"));
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));

    for c in payload["constraints"].as_array_mut().unwrap() {
        if c["id"] == "D5" {
            c["value"] = json!("500");
        }
    }
    let widened = delegate(&payload, &dir.join("wide.json"));
    assert_eq!(code(&widened), 2);
    assert_eq!(stdout_json(&widened)["error"], "attenuation_violation");
    assert!(!dir.join("wide.json").exists());
}

#[test]
fn keygen_issue_revoke_evaluate() {
    let (_tmp, dir) = export("insurance_claims");
    let config = dir.join("config.json");
    let issuer_key = dir.join("keys/iss_megainsure_claims-authority.json");
    let agent_key = dir.join("keys/agent_megainsure_negotiator-7.json");

    let fresh = dir.join("fresh.key");
    let o = run(&["keygen", "--id", "k1", "--out", s(&fresh)]);
    assert_eq!(code(&o), 0);
    assert!(stdout_json(&o)["seed"].is_null());

    let negotiator: Value = serde_json::from_slice(&std::fs::read(dir.join("credentials/negotiator.json")).unwrap()).unwrap();
    let payload = dir.join("payload.json");
    std::fs::write(&payload, serde_json::to_vec(&negotiator["payload"]).unwrap()).unwrap();
    let cred = dir.join("cli-cred.txt");
    let o = run(&[
        "issue",
        "--payload",
        s(&payload),
        "--key",
        s(&issuer_key),
        "--subject-key",
        s(&agent_key),
        "--audience",
        "svc:bodyshopco:claims-api",
        "--id",
        "urn:cred:cli:1",
        "--valid-from",
        "2026-04-01T00:00:00Z",
        "--valid-until",
        "2026-05-01T00:00:00Z",
        "--profile",
        "insurance/1",
        "--transport",
        "--out",
        s(&cred),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // Possession proof for the new credential, built with the library.
    let parsed = portauthz::container::parse_container(&std::fs::read(&cred).unwrap()).unwrap();
    let agent: portauthz::crypto::KeyFile = serde_json::from_slice(&std::fs::read(&agent_key).unwrap()).unwrap();
    let now: portauthz::value::Timestamp = "2026-04-18T14:32:00Z".parse().unwrap();
    let pop = portauthz::container::prove_possession(&parsed, "svc:bodyshopco:claims-api", "cli-nonce", now.plus_seconds(-5), &agent.key_pair().unwrap());
    let pop_path = dir.join("pop.json");
    std::fs::write(&pop_path, pop.to_bytes()).unwrap();

    let mut request: Value = serde_json::from_slice(&std::fs::read(dir.join("cases/worked_allow.json")).unwrap()).unwrap();
    request["credentials"] = json!([s(&cred)]);
    request["pop"] = json!(s(&pop_path));
    let req_path = dir.join("req.json");
    std::fs::write(&req_path, serde_json::to_vec(&request).unwrap()).unwrap();
    let eval = |config: &Path| run(&["--config", s(config), "evaluate", "--request", s(&req_path)]);
    assert_eq!(code(&eval(&config)), 0);

    let list = dir.join("revocations.json");
    let o = run(&[
        "--now",
        "2026-04-18T14:00:00Z",
        "revoke",
        "--issuer",
        "iss:megainsure:claims-authority",
        "--key",
        s(&issuer_key),
        "--credential-id",
        "urn:cred:cli:1",
        "--out",
        s(&list),
    ]);
    assert_eq!(code(&o), 0);
    let mut spec: Value = serde_json::from_slice(&std::fs::read(&config).unwrap()).unwrap();
    spec["revocations"] = json!(["revocations.json"]);
    let revoked_config = dir.join("config-revoked.json");
    std::fs::write(&revoked_config, serde_json::to_vec(&spec).unwrap()).unwrap();
    let o = eval(&revoked_config);
    assert_eq!(code(&o), 1);
    assert_eq!(stdout_json(&o)["decision"]["reason"]["code"], "credential_revoked");
}

#[test]
fn manifest_preflight_registry_audit() {
    let (_tmp, dir) = export("insurance_claims");
    let config = dir.join("config.json");
    let receiver = dir.join("keys/audit_svc_bodyshopco_claims-api.json");
    let manifest = dir.join("manifest.json");
    let o = run(&[
        "--config",
        s(&config),
        "--now",
        "2026-04-01T00:00:00Z",
        "manifest",
        "build",
        "--key",
        s(&receiver),
        "--valid-until",
        "2026-05-01T00:00:00Z",
        "--out",
        s(&manifest),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let verify = |file: &Path| run(&["--now", "2026-04-18T00:00:00Z", "manifest", "verify", s(file), "--receiver-key", s(&receiver)]);
    assert_eq!(code(&verify(&manifest)), 0);
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    doc["required_context_fields"] = json!([]);
    let tampered = dir.join("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&doc).unwrap()).unwrap();
    let o = verify(&tampered);
    assert_eq!(code(&o), 1);
    assert!(stdout_json(&o)["error"].as_str().unwrap().starts_with("bad_signature"));

    let caps = json!({
        "credentials": [],
        "supported_profiles": ["insurance/1"],
        "trust_anchors": ["reg:insurance-consortium"],
        "producible_fields": ["core.amount"],
    });
    let caps_path = dir.join("caps.json");
    std::fs::write(&caps_path, serde_json::to_vec(&caps).unwrap()).unwrap();
    let o = run(&[
        "--now",
        "2026-04-18T00:00:00Z",
        "preflight",
        "--capabilities",
        s(&caps_path),
        "--manifest",
        s(&manifest),
        "--receiver-key",
        s(&receiver),
    ]);
    assert_eq!(code(&o), 1);
    let report = stdout_json(&o);
    assert_eq!(report["compatible"], false);
    assert_eq!(report["findings"], json!([{"kind": "unproducible_field", "field": "core.workflow_id"}]));

    let steward = dir.join("keys/steward_insurance-consortium.json");
    let registry: Value = serde_json::from_slice(&std::fs::read(dir.join("registry.json")).unwrap()).unwrap();
    let mut body = registry.clone();
    body.as_object_mut().unwrap().remove("signature");
    body["version"] = json!(4);
    let body_path = dir.join("registry-body.json");
    std::fs::write(&body_path, serde_json::to_vec(&body).unwrap()).unwrap();
    let signed = dir.join("registry-v4.json");
    assert_eq!(code(&run(&["registry", "build", "--body", s(&body_path), "--key", s(&steward), "--out", s(&signed)])), 0);
    let check = |file: &Path, now: &str| run(&["--now", now, "registry", "check", s(file), "--steward-key", s(&steward)]);
    assert_eq!(code(&check(&signed, "2026-04-18T00:00:00Z")), 0);
    assert_eq!(code(&check(&signed, "2027-04-18T00:00:00Z")), 1);

    let mut spec: Value = serde_json::from_slice(&std::fs::read(&config).unwrap()).unwrap();
    spec["audit_log"] = json!("audit.jsonl");
    std::fs::write(&config, serde_json::to_vec(&spec).unwrap()).unwrap();
    for case in ["worked_allow", "over_limit", "expired"] {
        run(&["--config", s(&config), "evaluate", "--request", s(&dir.join(format!("cases/{case}.json")))]);
    }
    let o = run(&["--config", s(&config), "audit", "verify", s(&dir.join("audit.jsonl"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["records"], 3);
    let log = std::fs::read_to_string(dir.join("audit.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    std::fs::write(dir.join("cut.jsonl"), format!("{}\n{}\n", lines[0], lines[2])).unwrap();
    let o = run(&["--config", s(&config), "audit", "verify", s(&dir.join("cut.jsonl"))]);
    assert_eq!(code(&o), 1);
    assert_eq!(stdout_json(&o)["index"], 1);
}

#[test]
fn conformance_and_vouchers() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../conformance");
    let o = run(&["conformance", "run", s(&root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout_json(&o);
    assert_eq!(report["total"], report["passed"]);

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let key = d.join("enforcer.json");
    assert_eq!(code(&run(&["keygen", "--id", "enforcer", "--out", s(&key)])), 0);
    let v1 = d.join("v1.json");
    let o = run(&["--now", "2026-04-18T14:30:00Z", "voucher", "init", "--account", "acct", "--budget", "5000", "--authority", "urn:state:l", "--key", s(&key)]);
    assert_eq!(code(&o), 0);
    std::fs::write(&v1, &o.stdout).unwrap();
    let o = run(&["--now", "2026-04-18T14:31:00Z", "voucher", "update", "--prev", s(&v1), "--amount", "3200", "--key", s(&key)]);
    assert_eq!(code(&o), 0);
    let v2 = d.join("v2.json");
    std::fs::write(&v2, &o.stdout).unwrap();
    let o = run(&["--now", "2026-04-18T14:31:00Z", "voucher", "update", "--prev", s(&v2), "--amount", "3200", "--key", s(&key)]);
    assert_eq!(code(&o), 1);

    let constraint = d.join("limit.json");
    std::fs::write(
        &constraint,
        serde_json::to_vec(&json!({"field": "core.amount", "budget": "5000", "currency": "USD", "period": {"kind": "per_credential"}, "state_authority_pointer": "urn:state:l"})).unwrap(),
    )
    .unwrap();
    let verify = |now: &str| {
        run(&[
            "--now", now, "voucher", "verify", "--voucher", s(&v1), "--voucher", s(&v2), "--constraint", s(&constraint), "--account", "acct", "--signer", s(&key),
        ])
    };
    let o = verify("2026-04-18T14:32:00Z");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(stdout_json(&o)["remaining"], "1800");
    let o = verify("2026-04-18T15:00:00Z");
    assert_eq!(code(&o), 1);
    assert_eq!(stdout_json(&o)["code"], "state_stale");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["evaluate", "--request", "missing.json"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["scenario", "export", "payroll", "/tmp/x"])), 2);
    assert_eq!(code(&run(&["conformance", "run", "/nonexistent/dir"])), 2);
}
