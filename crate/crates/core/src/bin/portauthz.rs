use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use portauthz::audit::verify_log_bytes;
use portauthz::canonical;
use portauthz::config::{build_engine, read_file, EngineSpec, RequestFile};
use portauthz::conformance::run_vectors;
use portauthz::container::{issue_credential, parse_container, revoke, Issuance, IssueError, RevocationList, SignedRevocationList, DEFAULT_CREDENTIAL_CLASS};
use portauthz::crypto::{KeyFile, KeyPair, PublicKey};
use portauthz::discovery::{build_manifest, preflight, verify_manifest, SenderCapabilities, WELL_KNOWN_PATH};
use portauthz::model::AuthorizationPayload;
use portauthz::registry::{load_registry, SignedRegistry, TrustRegistry};
use portauthz::scenario::{load_scenario, SCENARIOS};
use portauthz::stateful::{init_voucher, update_voucher, verify_voucher_chain, CumulativeLimitConstraint, SequenceMemory, SignedVoucher, VoucherPolicy};
use portauthz::suite::write_suite;
use portauthz::value::{Decimal, Timestamp};

#[derive(Parser)]
#[command(name = "portauthz", version, about = "Fail-closed authorization enforcement for autonomous agents")]
struct Cli {
    /// Engine configuration file.
    #[arg(long, global = true, env = "PORTAUTHZ_CONFIG")]
    config: Option<PathBuf>,
    /// Evaluation clock (RFC 3339); overrides the configuration.
    #[arg(long, global = true)]
    now: Option<Timestamp>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a signing key file; prints the public half.
    Keygen {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from a label instead of the OS RNG (fixtures only).
        #[arg(long)]
        from_label: Option<String>,
    },
    /// Issue a root credential.
    Issue(IssueArgs),
    /// Issue a delegated credential; refuses payloads that widen the parent.
    Delegate {
        #[command(flatten)]
        issue: IssueArgs,
        #[arg(long)]
        parent: PathBuf,
    },
    /// Evaluate a credential or chain against a request context.
    Evaluate(EvaluateArgs),
    /// Add a credential id to an issuer's revocation list.
    Revoke {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        credential_id: String,
        /// Current signed list; a new list starts empty.
        #[arg(long)]
        list: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Compare sender capabilities with a receiver manifest.
    Preflight {
        #[arg(long)]
        capabilities: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "receiver-key", required = true)]
        receiver_keys: Vec<String>,
    },
    #[command(subcommand)]
    Registry(RegistryCommand),
    #[command(subcommand)]
    Audit(AuditCommand),
    #[command(subcommand)]
    Conformance(ConformanceCommand),
    #[command(subcommand)]
    Voucher(VoucherCommand),
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Args)]
struct IssueArgs {
    /// Authorization payload (agent_id, issuer_id, permissions, constraints).
    #[arg(long)]
    payload: PathBuf,
    /// Signing key of the issuer (or delegator).
    #[arg(long)]
    key: PathBuf,
    /// Subject public key: hex or a key file.
    #[arg(long)]
    subject_key: String,
    #[arg(long = "audience", required = true)]
    audience: Vec<String>,
    #[arg(long)]
    id: String,
    #[arg(long)]
    valid_from: Timestamp,
    #[arg(long)]
    valid_until: Timestamp,
    #[arg(long)]
    profile: String,
    #[arg(long, default_value = DEFAULT_CREDENTIAL_CLASS)]
    class: String,
    /// Also write the base64url transport form to stdout instead of JSON.
    #[arg(long)]
    transport: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Request file bundling credentials, presenter, proof and context.
    #[arg(long, conflicts_with_all = ["credentials", "context"])]
    request: Option<PathBuf>,
    /// Credential files, root first.
    #[arg(long = "credential")]
    credentials: Vec<PathBuf>,
    #[arg(long)]
    presenter: Option<String>,
    #[arg(long)]
    pop: Option<PathBuf>,
    #[arg(long)]
    context: Option<PathBuf>,
    #[arg(long = "voucher")]
    vouchers: Vec<PathBuf>,
    /// Write the signed audit record here.
    #[arg(long)]
    audit_out: Option<PathBuf>,
    /// Write the successor voucher here (voucher tier).
    #[arg(long)]
    voucher_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ManifestCommand {
    /// Describe the configured engine as a signed manifest.
    Build {
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = 1)]
        version: u64,
        #[arg(long)]
        valid_from: Option<Timestamp>,
        #[arg(long)]
        valid_until: Timestamp,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify {
        file: PathBuf,
        #[arg(long = "receiver-key", required = true)]
        receiver_keys: Vec<String>,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Sign a registry body with a steward key.
    Build {
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Check {
        file: PathBuf,
        #[arg(long = "steward-key", required = true)]
        steward_keys: Vec<String>,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Check signatures and hash links of an audit log.
    Verify {
        log: PathBuf,
        /// Evaluator keys; defaults to the configured audit key.
        #[arg(long = "key")]
        keys: Vec<String>,
    },
}

#[derive(Subcommand)]
enum ConformanceCommand {
    Run { path: PathBuf },
    /// Write the reference suite.
    Generate { dir: PathBuf },
}

#[derive(Subcommand)]
enum VoucherCommand {
    Init {
        #[arg(long)]
        account: String,
        #[arg(long)]
        budget: Decimal,
        #[arg(long)]
        authority: String,
        #[arg(long)]
        key: PathBuf,
    },
    Update {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        amount: Decimal,
        #[arg(long)]
        key: PathBuf,
    },
    Verify {
        /// Voucher files, oldest first.
        #[arg(long = "voucher", required = true)]
        vouchers: Vec<PathBuf>,
        /// CumulativeLimitConstraint the vouchers must serve.
        #[arg(long)]
        constraint: PathBuf,
        #[arg(long)]
        account: String,
        #[arg(long = "signer", required = true)]
        signers: Vec<String>,
        #[arg(long, default_value_t = portauthz::stateful::DEFAULT_DELTA_T_SECONDS)]
        delta_t: i64,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    List,
    /// Write a named bundle as CLI-ready files.
    Export { name: String, dir: PathBuf },
}

/// Exit 1 is a negative verdict, exit 2 a usage or fixture problem.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

type Outcome = Result<u8, Failure>;

/// Writes one line to stdout; a closed pipe is not an error worth a panic.
fn emit_line(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn emit<T: Serialize + ?Sized>(value: &T) {
    emit_line(&canonical::to_string(value));
}

fn write_or_emit(out: Option<&Path>, bytes: Vec<u8>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            emit_line(&String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    read_file(path).map_err(usage)
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    canonical::from_bytes(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn key_pair(path: &Path) -> Result<KeyPair, Failure> {
    let file: KeyFile = parse(path)?;
    file.key_pair().map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Hex public key, or the public half of a key file.
fn public_key(arg: &str) -> Result<PublicKey, Failure> {
    if let Ok(k) = arg.parse() {
        return Ok(k);
    }
    let file: KeyFile = parse(Path::new(arg))?;
    Ok(file.public_key)
}

fn public_keys(args: &[String]) -> Result<Vec<PublicKey>, Failure> {
    args.iter().map(|a| public_key(a)).collect()
}

fn clock(cli_now: Option<Timestamp>) -> Timestamp {
    cli_now.unwrap_or_else(Timestamp::now)
}

fn load_spec(cli: &Cli) -> Result<(EngineSpec, PathBuf), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| usage("this command needs --config or PORTAUTHZ_CONFIG"))?;
    let (mut spec, base) = EngineSpec::load(path).map_err(usage)?;
    if cli.now.is_some() {
        spec.now = cli.now;
    }
    Ok((spec, base))
}

fn issue(args: &IssueArgs, parent: Option<&Path>) -> Outcome {
    let payload: AuthorizationPayload = parse(&args.payload)?;
    let key = key_pair(&args.key)?;
    let parent = parent
        .map(|p| parse_container(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))))
        .transpose()?;
    let issuance = Issuance {
        credential_id: args.id.clone(),
        payload,
        subject_public_key: public_key(&args.subject_key)?,
        audience: args.audience.iter().cloned().collect::<BTreeSet<_>>(),
        valid_from: args.valid_from,
        valid_until: args.valid_until,
        credential_class: args.class.clone(),
        profile: args.profile.clone(),
    };
    match issue_credential(issuance, &key, parent.as_ref()) {
        Ok(cred) => {
            let bytes = if args.transport {
                portauthz::container::encode_transport(&cred).into_bytes()
            } else {
                cred.to_bytes()
            };
            write_or_emit(args.out.as_deref(), bytes)?;
            eprintln!("issued {} ({})", args.id, cred.digest());
            Ok(0)
        }
        Err(e) => {
            let kind = match e {
                IssueError::AttenuationViolation(_) => "attenuation_violation",
                _ => "invalid_issuance",
            };
            emit(&json!({"error": kind, "detail": e.to_string()}));
            Err(usage(format!("{kind}: {e}")))
        }
    }
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Outcome {
    let (spec, base) = load_spec(cli)?;
    let built = build_engine(&spec, &base).map_err(usage)?;
    for w in &built.warnings {
        eprintln!("warning: {w}");
    }
    let (request, req_base) = match &args.request {
        Some(p) => RequestFile::load(p).map_err(usage)?,
        None => {
            let path_value = |p: &PathBuf| serde_json::Value::String(p.display().to_string());
            let presenter = args.presenter.clone().ok_or_else(|| usage("--presenter is required without --request"))?;
            let context = args.context.as_ref().ok_or_else(|| usage("--context is required without --request"))?;
            if args.credentials.is_empty() {
                return Err(usage("at least one --credential is required"));
            }
            (
                RequestFile {
                    credentials: args.credentials.iter().map(path_value).collect(),
                    presenter_id: presenter,
                    pop: args.pop.as_ref().map(path_value),
                    vouchers: args.vouchers.iter().map(path_value).collect(),
                    context: path_value(context),
                },
                PathBuf::new(),
            )
        }
    };
    let eval = request.evaluate(&built.engine, &req_base).map_err(usage)?;
    if let (Some(p), Some(r)) = (&args.audit_out, &eval.record) {
        std::fs::write(p, r.to_bytes()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    if let (Some(p), Some(v)) = (&args.voucher_out, &eval.voucher) {
        std::fs::write(p, v.to_bytes()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    emit(&eval.to_json());
    match eval.decision.denial() {
        None => {
            eprintln!("ALLOW");
            Ok(0)
        }
        Some(r) => {
            match &r.constraint {
                Some(c) => eprintln!("DENY {} [{c}]: {}", r.code, r.detail),
                None => eprintln!("DENY {}: {}", r.code, r.detail),
            }
            Ok(1)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Keygen { id, out, from_label } => {
            let pair = match from_label {
                Some(label) => KeyPair::from_label(label),
                None => KeyPair::generate(),
            };
            let file = KeyFile::secret(id, &pair);
            std::fs::write(out, canonical::to_bytes(&file)).map_err(|e| usage(format!("{}: {e}", out.display())))?;
            emit(&file.public_only());
            eprintln!("wrote {} ({})", out.display(), pair.public());
            Ok(0)
        }
        Command::Issue(args) => issue(args, None),
        Command::Delegate { issue: args, parent } => issue(args, Some(parent)),
        Command::Evaluate(args) => evaluate(cli, args),
        Command::Revoke {
            issuer,
            key,
            credential_id,
            list,
            out,
        } => {
            let now = clock(cli.now);
            let current = match list {
                Some(p) => {
                    let doc: SignedRevocationList = SignedRevocationList::parse(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    if doc.body.issuer_id != *issuer {
                        return Err(usage(format!("list belongs to {}", doc.body.issuer_id)));
                    }
                    doc.body
                }
                None => RevocationList::empty(issuer, now),
            };
            let next = revoke(credential_id, &current, &key_pair(key)?, now);
            write_or_emit(out.as_deref(), next.to_bytes())?;
            eprintln!("revocation list for {issuer} now at version {}", next.body.version);
            Ok(0)
        }
        Command::Manifest(ManifestCommand::Build {
            key,
            version,
            valid_from,
            valid_until,
            out,
        }) => {
            let (spec, base) = load_spec(cli)?;
            let (config, _) = portauthz::config::build_config(&spec, &base).map_err(usage)?;
            let from = valid_from.or(cli.now).unwrap_or_else(Timestamp::now);
            let manifest = build_manifest(&config, &key_pair(key)?, *version, from, *valid_until);
            write_or_emit(out.as_deref(), manifest.to_bytes())?;
            eprintln!("publish at {WELL_KNOWN_PATH}");
            Ok(0)
        }
        Command::Manifest(ManifestCommand::Verify { file, receiver_keys }) => {
            match verify_manifest(&read(file)?, &public_keys(receiver_keys)?, clock(cli.now)) {
                Ok(m) => {
                    emit(&json!({"valid": true, "receiver_id": m.body.receiver_id, "version": m.body.version}));
                    Ok(0)
                }
                Err(e) => {
                    emit(&json!({"valid": false, "error": e.to_string()}));
                    eprintln!("{e}");
                    Ok(1)
                }
            }
        }
        Command::Preflight {
            capabilities,
            manifest,
            receiver_keys,
        } => {
            let caps: SenderCapabilities = parse(capabilities)?;
            let m = verify_manifest(&read(manifest)?, &public_keys(receiver_keys)?, clock(cli.now)).map_err(usage)?;
            let report = preflight(&caps, &m.body);
            emit(&report);
            for f in &report.findings {
                eprintln!("finding: {f}");
            }
            Ok(if report.compatible { 0 } else { 1 })
        }
        Command::Registry(RegistryCommand::Build { body, key, out }) => {
            let body: TrustRegistry = parse(body)?;
            let signed = SignedRegistry::sign(body, &key_pair(key)?);
            write_or_emit(out.as_deref(), signed.to_bytes())?;
            Ok(0)
        }
        Command::Registry(RegistryCommand::Check { file, steward_keys }) => {
            match load_registry(&read(file)?, &public_keys(steward_keys)?, clock(cli.now)) {
                Ok(r) => {
                    emit(&json!({"valid": true, "registry_id": r.body.registry_id, "version": r.body.version}));
                    Ok(0)
                }
                Err(e) => {
                    emit(&json!({"valid": false, "error": e.to_string()}));
                    eprintln!("{e}");
                    Ok(1)
                }
            }
        }
        Command::Audit(AuditCommand::Verify { log, keys }) => {
            let keys = if keys.is_empty() {
                let (spec, base) = load_spec(cli)?;
                let (config, _) = portauthz::config::build_config(&spec, &base).map_err(usage)?;
                vec![config.audit_key.public()]
            } else {
                public_keys(keys)?
            };
            match verify_log_bytes(&read(log)?, &keys) {
                Ok(n) => {
                    emit(&json!({"valid": true, "records": n}));
                    Ok(0)
                }
                Err(b) => {
                    emit(&json!({"valid": false, "index": b.index, "reason": b.reason}));
                    eprintln!("chain break at record {}: {}", b.index, b.reason);
                    Ok(1)
                }
            }
        }
        Command::Conformance(ConformanceCommand::Run { path }) => {
            let report = run_vectors(path).map_err(usage)?;
            emit(&report);
            eprintln!("{}/{} vectors passed", report.passed, report.total);
            for f in &report.failures {
                eprintln!("FAIL {} step {}: expected {}, got {}", f.vector_id, f.step, f.expected, f.actual);
            }
            Ok(if report.failures.is_empty() { 0 } else { 1 })
        }
        Command::Conformance(ConformanceCommand::Generate { dir }) => {
            let n = write_suite(dir).map_err(usage)?;
            eprintln!("wrote {n} vectors to {}", dir.display());
            Ok(0)
        }
        Command::Voucher(VoucherCommand::Init {
            account,
            budget,
            authority,
            key,
        }) => {
            let v = init_voucher(account, budget, authority, &key_pair(key)?, clock(cli.now));
            emit(&v.document);
            Ok(0)
        }
        Command::Voucher(VoucherCommand::Update { prev, amount, key }) => {
            let prev = SignedVoucher::parse(&read(prev)?).map_err(|e| usage(e.to_string()))?;
            match update_voucher(&prev, amount, &key_pair(key)?, clock(cli.now)) {
                Ok(v) => {
                    emit(&v.document);
                    Ok(0)
                }
                Err(e) => {
                    emit(&json!({"error": "state_limit_exceeded", "detail": e.to_string()}));
                    Ok(1)
                }
            }
        }
        Command::Voucher(VoucherCommand::Verify {
            vouchers,
            constraint,
            account,
            signers,
            delta_t,
        }) => {
            let chain = vouchers
                .iter()
                .map(|p| SignedVoucher::parse(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let constraint: CumulativeLimitConstraint = parse(constraint)?;
            let keys = public_keys(signers)?;
            let pointer = constraint.state_authority_pointer.clone();
            let permitted = |p: &str| p == pointer;
            let signer_keys = |_: &str| keys.clone();
            let policy = VoucherPolicy {
                authority_permitted: &permitted,
                signer_keys: &signer_keys,
                now: clock(cli.now),
                delta_t_seconds: *delta_t,
            };
            match verify_voucher_chain(&chain, &constraint, account, &SequenceMemory::default(), &policy) {
                Ok(state) => {
                    emit(&json!({"valid": true, "sequence": state.sequence, "remaining": state.remaining}));
                    Ok(0)
                }
                Err(r) => {
                    emit(&json!({"valid": false, "code": r.code.as_str(), "detail": r.detail}));
                    Ok(1)
                }
            }
        }
        Command::Scenario(ScenarioCommand::List) => {
            emit(&SCENARIOS);
            Ok(0)
        }
        Command::Scenario(ScenarioCommand::Export { name, dir }) => {
            let bundle = load_scenario(name).map_err(usage)?;
            bundle.export(dir).map_err(usage)?;
            eprintln!("exported {name} with {} cases", bundle.cases.len());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
