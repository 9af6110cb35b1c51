//! The `pact` command line: every workflow against an embedded engine
//! (default) or a running service (`--remote`).
//!
//! Exit codes: 0 success, 1 domain error (including "not found" from
//! `verify` and an invalid chain), 2 usage error. With `--json`, stdout
//! carries exactly one JSON document.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use pact_core::simnet::{run_end_to_end, AdversaryMode, SimConfig};
use pact_core::{canonicalize_bytes, hash_contract, Digest256, KeyPair, ProposalKind, PublicKey, Signatory};
use serde_json::{json, Value};

use crate::api::{ApiError, CreateGroupRequest, OpenProposalRequest, SimRunRequest, VerifyRequest, VoteRequest};
use crate::client::RemoteClient;
use crate::engine::{sign_vote, ChainSettings, Clock, Engine, FixedClock, SystemClock};
use crate::simio::{run_parallel, write_csv, SimSummary};

/// Difficulty for a fresh data directory created by `serve`.
pub const SERVICE_DIFFICULTY: u32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pact", version, about = "Contract consensus ledger")]
pub struct Cli {
    /// Data directory for local mode.
    #[arg(long, env = "PACT_DATA_DIR", default_value = "pact-data", global = true)]
    pub data_dir: PathBuf,
    /// Talk to a running service instead of the local data directory.
    #[arg(long, env = "PACT_REMOTE", global = true)]
    pub remote: Option<String>,
    /// Emit one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Fixed clock (Unix seconds) for reproducible timestamps.
    #[arg(long, env = "PACT_CLOCK", global = true)]
    pub clock: Option<u64>,
    /// Mining threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub init: InitArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings applied when the data directory is created.
#[derive(Debug, Args)]
pub struct InitArgs {
    /// Leading zero hex characters required of block hashes.
    #[arg(long, global = true)]
    pub chain_difficulty: Option<u32>,
    /// Number of verifying miners.
    #[arg(long, global = true)]
    pub chain_miners: Option<usize>,
    /// Derive owner keys from this seed instead of OS entropy.
    #[arg(long, global = true)]
    pub chain_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manage consensus groups.
    #[command(subcommand)]
    Group(GroupCmd),
    /// Open a proposal for an original contract or an amendment.
    Propose {
        #[arg(long)]
        group: String,
        /// File holding the contract text.
        #[arg(long, conflicts_with = "text", required_unless_present = "text")]
        file: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        /// Version id being amended.
        #[arg(long)]
        amend: Option<String>,
    },
    /// Show a proposal and its votes.
    Proposal {
        id: String,
        /// View as this group member; a server shows individual votes only to members.
        #[arg(long)]
        signatory: Option<String>,
    },
    /// Cast a signed vote.
    Vote {
        proposal: String,
        #[arg(long)]
        signatory: String,
        /// Private key hex.
        #[arg(long, conflicts_with = "key_file", required_unless_present = "key_file")]
        key: Option<String>,
        /// File with a private key hex, or `pact keygen --json` output.
        #[arg(long)]
        key_file: Option<PathBuf>,
        #[arg(long, conflicts_with = "no")]
        yes: bool,
        #[arg(long, required_unless_present = "yes")]
        no: bool,
        /// Digest being signed; defaults to the proposal's expected digest.
        #[arg(long, conflicts_with = "file")]
        hash: Option<String>,
        /// Hash this file instead.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Mint the owner, mine the block and submit it to the miners.
    Finalize { proposal: String },
    #[command(subcommand)]
    Chain(ChainCmd),
    /// Versions of a contract, original first.
    History { contract_id: String },
    /// Check whether a document's digest is on the chain.
    Verify { file: PathBuf },
    /// Generate a signatory keypair.
    Keygen {
        /// 64 hex characters of seed.
        #[arg(long)]
        seed: Option<String>,
    },
    #[command(subcommand)]
    Sim(SimCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "PACT_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum GroupCmd {
    /// Create a group from `id:public_key[:display name]` entries.
    Create {
        #[arg(long = "signatory", required = true)]
        signatories: Vec<String>,
    },
    Show { id: String },
}

#[derive(Debug, Subcommand)]
pub enum ChainCmd {
    Show,
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// Monte Carlo run of the miner network.
    Run(SimArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 5)]
    pub miners: usize,
    /// Per-request inversion probability of each miner.
    #[arg(long, default_value_t = 0.10)]
    pub noise: f64,
    #[arg(long, default_value_t = 100_000)]
    pub requests: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub valid_fraction: f64,
    /// Use a fixed set of this many always-inverting miners instead of noise.
    #[arg(long)]
    pub adversaries: Option<usize>,
    /// Really mine and verify blocks (slow; keep requests small).
    #[arg(long)]
    pub end_to_end: bool,
    #[arg(long, default_value_t = 2)]
    pub difficulty: u32,
    /// Write the per-request log as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            miner_count: self.miners,
            noise_p: self.noise,
            adversary_mode: match self.adversaries {
                Some(k) => AdversaryMode::FixedSubset { k },
                None => AdversaryMode::PerRequestBernoulli,
            },
            requests: self.requests,
            valid_fraction: self.valid_fraction,
            difficulty: self.difficulty,
            seed: self.seed,
        }
    }
}

/// What a command produced: the JSON document, the human rendering and
/// whether the result counts as a domain failure.
struct Outcome {
    doc: Value,
    human: String,
    failed: bool,
}

impl Outcome {
    fn ok(doc: Value, human: impl Into<String>) -> Self {
        Outcome { doc, human: human.into(), failed: false }
    }
}

enum Backend {
    Local(Box<Engine>),
    Remote(RemoteClient),
}

fn to_value<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("output types serialize")
}

impl Backend {
    fn call(&mut self, req: Request) -> Result<Value, ApiError> {
        match self {
            Backend::Local(engine) => local_call(engine, req),
            Backend::Remote(client) => remote_call(client, req),
        }
    }
}

enum Request {
    CreateGroup(CreateGroupRequest),
    Group(String),
    Open(String, OpenProposalRequest),
    /// Proposal id and the signatory viewing it.
    Proposal(String, Option<String>),
    Vote(String, String, VoteRequest),
    Finalize(String),
    Chain,
    VerifyChain,
    History(String),
    Verify(VerifyRequest),
}

fn local_call(e: &mut Engine, req: Request) -> Result<Value, ApiError> {
    Ok(match req {
        Request::CreateGroup(r) => to_value(e.create_group(r.signatories)?),
        Request::Group(id) => to_value(e.group(&id)?),
        Request::Open(g, r) => to_value(e.open_proposal(&g, &r.text, r.kind, r.parent_version_id.as_deref())?),
        Request::Proposal(id, _) => to_value(e.proposal(&id)?),
        Request::Vote(id, who, r) => to_value(e.cast_vote(&id, &who, r.submitted_hash, r.vote, r.vote_signature)?),
        Request::Finalize(id) => to_value(e.finalize(&id)?),
        Request::Chain => to_value(e.chain().blocks()),
        Request::VerifyChain => to_value(e.verify_chain()),
        Request::History(id) => to_value(e.history(&id)?),
        Request::Verify(r) => to_value(e.verify_document(&r.text)),
    })
}

fn remote_call(c: &RemoteClient, req: Request) -> Result<Value, ApiError> {
    match req {
        Request::CreateGroup(r) => c.post("/groups", &r),
        Request::Group(id) => c.get(&format!("/groups/{id}")),
        Request::Open(g, r) => c.post(&format!("/groups/{g}/proposals"), &r),
        Request::Proposal(id, Some(viewer)) => c.get_as(&format!("/proposals/{id}"), &viewer),
        Request::Proposal(id, None) => c.get(&format!("/proposals/{id}")),
        Request::Vote(id, who, r) => c.post_as(&format!("/proposals/{id}/votes"), &who, &r),
        Request::Finalize(id) => c.post(&format!("/proposals/{id}/finalize"), &json!({})),
        Request::Chain => c.get("/chain"),
        Request::VerifyChain => c.get("/chain/verify"),
        Request::History(id) => c.get(&format!("/contracts/{id}/history")),
        Request::Verify(r) => c.post("/verify", &r),
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Domain(#[from] ApiError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn message(&self) -> String {
        match self {
            CliError::Domain(e) => e.message.clone(),
            other => format!("{other:#}"),
        }
    }

    fn code(&self) -> &str {
        match self {
            CliError::Domain(e) => &e.code,
            CliError::Usage(_) => "USAGE",
            CliError::Other(_) => "ERROR",
        }
    }
}

fn clock(cli: &Cli) -> Arc<dyn Clock> {
    match cli.clock {
        Some(t) => Arc::new(FixedClock(t)),
        None => Arc::new(SystemClock),
    }
}

fn open_engine(cli: &Cli, default_difficulty: u32) -> Result<Engine, CliError> {
    let defaults = ChainSettings::default();
    let init = ChainSettings {
        difficulty: cli.init.chain_difficulty.unwrap_or(default_difficulty),
        miners: cli.init.chain_miners.unwrap_or(defaults.miners),
        seed: cli.init.chain_seed,
    };
    let mut engine = Engine::open(&cli.data_dir, init, clock(cli)).map_err(ApiError::from)?;
    let actual = engine.settings();
    if cli.init.chain_difficulty.is_some_and(|d| d != actual.difficulty)
        || cli.init.chain_miners.is_some_and(|m| m != actual.miners)
        || (cli.init.chain_seed.is_some() && cli.init.chain_seed != actual.seed)
    {
        eprintln!(
            "note: {} was created with difficulty {} and {} miners; --chain-* flags only apply to new data directories",
            cli.data_dir.display(),
            actual.difficulty,
            actual.miners
        );
    }
    if let Some(w) = cli.workers {
        engine.set_workers(w);
    }
    Ok(engine)
}

fn backend(cli: &Cli) -> Result<Backend, CliError> {
    match &cli.remote {
        Some(url) => Ok(Backend::Remote(RemoteClient::new(url))),
        None => Ok(Backend::Local(Box::new(open_engine(cli, pact_core::ledger::DEFAULT_DIFFICULTY)?))),
    }
}

fn read_text(path: &PathBuf) -> Result<String, CliError> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = canonicalize_bytes(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(text.into_string())
}

fn parse_signatory(arg: &str) -> Result<Signatory, CliError> {
    let mut parts = arg.splitn(3, ':');
    let (Some(id), Some(pk)) = (parts.next(), parts.next()) else {
        return Err(CliError::Usage(format!("signatory {arg:?} must be id:public_key[:name]")));
    };
    let public_key =
        PublicKey::from_hex(pk).map_err(|e| CliError::Usage(format!("signatory {id}: {e}")))?;
    let mut s = Signatory::new(id, public_key);
    if let Some(name) = parts.next() {
        s.display_name = name.to_string();
    }
    Ok(s)
}

fn load_key(key: &Option<String>, key_file: &Option<PathBuf>) -> Result<KeyPair, CliError> {
    let raw = match (key, key_file) {
        (Some(k), _) => k.clone(),
        (None, Some(path)) => {
            let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match serde_json::from_str::<Value>(&s) {
                Ok(v) => v["private_key"].as_str().unwrap_or_default().to_string(),
                Err(_) => s.trim().to_string(),
            }
        }
        (None, None) => return Err(CliError::Usage("a key is required".into())),
    };
    KeyPair::from_private_hex(raw.trim()).map_err(|e| CliError::Usage(format!("private key: {e}")))
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v[key].as_str().unwrap_or_default()
}

fn describe_proposal(v: &Value) -> String {
    let electorate = v["electorate"].as_array().map_or(0, |a| a.len());
    let votes = match v["submissions"].as_object() {
        Some(m) => format!("{}/{electorate} votes", m.len()),
        None => "votes hidden".to_string(),
    };
    let mut s = format!(
        "proposal {} ({}) in group {}\nstatus: {} ({votes})\nexpected digest: {}",
        str_field(v, "id"),
        str_field(v, "kind"),
        str_field(v, "group_id"),
        str_field(v, "status"),
        str_field(v, "expected_hash"),
    );
    if let Some(version) = v["version_id"].as_str() {
        s.push_str(&format!("\nversion: {version}"));
    }
    s
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Group(GroupCmd::Create { signatories }) => {
            let signatories = signatories.iter().map(|s| parse_signatory(s)).collect::<Result<_, _>>()?;
            let v = backend(cli)?.call(Request::CreateGroup(CreateGroupRequest { signatories }))?;
            let human = format!("group {}", str_field(&v, "id"));
            Ok(Outcome::ok(v, human))
        }
        Command::Group(GroupCmd::Show { id }) => {
            let v = backend(cli)?.call(Request::Group(id.clone()))?;
            let members: Vec<&str> = v["signatories"]
                .as_array()
                .map(|a| a.iter().map(|s| str_field(s, "id")).collect())
                .unwrap_or_default();
            let human = format!("group {}: {}", str_field(&v, "id"), members.join(", "));
            Ok(Outcome::ok(v, human))
        }
        Command::Propose { group, file, text, amend } => {
            let text = match (file, text) {
                (Some(f), _) => read_text(f)?,
                (None, Some(t)) => t.clone(),
                (None, None) => return Err(CliError::Usage("--file or --text is required".into())),
            };
            let req = OpenProposalRequest {
                text,
                kind: if amend.is_some() { ProposalKind::Amendment } else { ProposalKind::Original },
                parent_version_id: amend.clone(),
            };
            let v = backend(cli)?.call(Request::Open(group.clone(), req))?;
            let human = describe_proposal(&v);
            Ok(Outcome::ok(v, human))
        }
        Command::Proposal { id, signatory } => {
            let v = backend(cli)?.call(Request::Proposal(id.clone(), signatory.clone()))?;
            let human = describe_proposal(&v);
            Ok(Outcome::ok(v, human))
        }
        Command::Vote { proposal, signatory, key, key_file, yes, no: _, hash, file } => {
            let keys = load_key(key, key_file)?;
            let mut b = backend(cli)?;
            let submitted_hash = match (hash, file) {
                (Some(h), _) => Digest256::from_hex(h).map_err(|e| CliError::Usage(format!("--hash: {e}")))?,
                (None, Some(f)) => hash_contract(&pact_core::canonicalize(&read_text(f)?)),
                (None, None) => {
                    let p = b.call(Request::Proposal(proposal.clone(), Some(signatory.clone())))?;
                    Digest256::from_hex(str_field(&p, "expected_hash"))
                        .map_err(|e| CliError::Other(anyhow::anyhow!("proposal digest: {e}")))?
                }
            };
            let vote_signature = sign_vote(&keys, proposal, &submitted_hash, *yes);
            let req = VoteRequest { submitted_hash, vote: *yes, vote_signature };
            let v = b.call(Request::Vote(proposal.clone(), signatory.clone(), req))?;
            let human = describe_proposal(&v);
            Ok(Outcome::ok(v, human))
        }
        Command::Finalize { proposal } => {
            let v = backend(cli)?.call(Request::Finalize(proposal.clone()))?;
            let human = format!(
                "version {} recorded in block {} ({}/{} miners verified)\nblock hash: {}",
                str_field(&v["version"], "version_id"),
                v["block"]["index"],
                v["yes_count"],
                v["miner_count"],
                str_field(&v["block"], "hash"),
            );
            Ok(Outcome::ok(v, human))
        }
        Command::Chain(ChainCmd::Show) => {
            let v = backend(cli)?.call(Request::Chain)?;
            let human = v
                .as_array()
                .map(|blocks| {
                    blocks
                        .iter()
                        .map(|b| {
                            format!(
                                "{}\t{}\t{}\t{}",
                                b["index"],
                                str_field(b, "hash"),
                                str_field(b, "contract_id"),
                                str_field(b, "contract_hash")
                            )
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                })
                .unwrap_or_default();
            Ok(Outcome::ok(v, human))
        }
        Command::Chain(ChainCmd::Verify) => {
            let v = backend(cli)?.call(Request::VerifyChain)?;
            let valid = str_field(&v, "status") == "valid";
            let human = if valid {
                "valid".to_string()
            } else {
                format!("invalid at block {}: {}", v["index"], str_field(&v, "fault"))
            };
            Ok(Outcome { doc: v, human, failed: !valid })
        }
        Command::History { contract_id } => {
            let v = backend(cli)?.call(Request::History(contract_id.clone()))?;
            let human = v
                .as_array()
                .map(|entries| {
                    entries
                        .iter()
                        .enumerate()
                        .map(|(i, e)| {
                            format!(
                                "v{}\t{}\tblock {}\t{}\towner {}",
                                i + 1,
                                str_field(e, "version_id"),
                                e["block_index"],
                                str_field(e, "contract_hash"),
                                str_field(e, "owner_pubkey"),
                            )
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                })
                .unwrap_or_default();
            Ok(Outcome::ok(v, human))
        }
        Command::Verify { file } => {
            let text = read_text(file)?;
            let v = backend(cli)?.call(Request::Verify(VerifyRequest { text }))?;
            let found = v["found"].as_bool().unwrap_or(false);
            let human = if found {
                format!(
                    "found: block {} version {} (lineage {})\ndigest: {}\nowner: {}",
                    v["block_index"],
                    str_field(&v, "version_id"),
                    str_field(&v, "lineage_root"),
                    str_field(&v, "digest"),
                    str_field(&v, "owner_pubkey"),
                )
            } else {
                format!("not found\ndigest: {}", str_field(&v, "digest"))
            };
            Ok(Outcome { doc: v, human, failed: !found })
        }
        Command::Keygen { seed } => {
            let keys = match seed {
                Some(hex) => KeyPair::from_private_hex(hex).map_err(|e| CliError::Usage(format!("--seed: {e}")))?,
                None => pact_core::generate_keypair(None).map_err(|e| CliError::Other(e.into()))?,
            };
            let v = json!({
                "scheme_id": keys.scheme_id(),
                "public_key": keys.public_key(),
                "private_key": keys.private_key_hex(),
            });
            let human = format!("public_key: {}\nprivate_key: {}", keys.public_key(), keys.private_key_hex());
            Ok(Outcome::ok(v, human))
        }
        Command::Sim(SimCmd::Run(args)) => run_sim(cli, args),
        Command::Serve { addr } => {
            let engine = open_engine(cli, SERVICE_DIFFICULTY)?;
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(crate::service::serve(engine, addr))?;
            Ok(Outcome::ok(Value::Null, ""))
        }
    }
}

fn run_sim(cli: &Cli, args: &SimArgs) -> Result<Outcome, CliError> {
    let config = args.config();
    let (summary, log) = if let Some(url) = &cli.remote {
        let mut v = RemoteClient::new(url).post(
            "/sim/run",
            &SimRunRequest { config, include_log: args.csv.is_some() },
        )?;
        let log = match v.get_mut("log").map(Value::take) {
            Some(l) => serde_json::from_value(l).context("decoding log")?,
            None => Vec::new(),
        };
        if let Some(obj) = v.as_object_mut() {
            obj.remove("log");
        }
        (v, log)
    } else {
        let report = if args.end_to_end {
            run_end_to_end(&config).map(|(r, _)| r)
        } else {
            run_parallel(&config)
        }
        .map_err(|e| CliError::Usage(e.to_string()))?;
        (to_value(SimSummary::from(&report)), report.log)
    };
    if let Some(path) = &args.csv {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(&log, std::io::BufWriter::new(f)).context("writing CSV")?;
    }
    let human = format!(
        "miners: {}  noise: {}  requests: {}\nvalid requests rejected: {} of {} (rate {:.6})\ninvalid requests accepted: {} of {} (rate {:.6})\nanalytic failure probability: {:.6}  (z = {:.2})",
        summary["config"]["miner_count"],
        summary["config"]["noise_p"],
        summary["config"]["requests"],
        summary["valid_rejected"],
        summary["valid_requests"],
        summary["truthful_request_failure_rate"].as_f64().unwrap_or(0.0),
        summary["invalid_accepted"],
        summary["invalid_requests"],
        summary["adversarial_acceptance_rate"].as_f64().unwrap_or(0.0),
        summary["analytic_failure_probability"].as_f64().unwrap_or(0.0),
        summary["z_score"].as_f64().unwrap_or(0.0),
    );
    Ok(Outcome::ok(summary, human))
}

/// Parses `argv`, runs the command, writes to the given streams and returns
/// the process exit code.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{rendered}") } else { write!(stderr, "{rendered}") };
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if matches!(cli.command, Command::Serve { .. }) {
                return 0;
            }
            let _ = if cli.json {
                writeln!(stdout, "{}", out.doc)
            } else {
                writeln!(stdout, "{}", out.human)
            };
            i32::from(out.failed)
        }
        Err(err) => {
            let code = if matches!(err, CliError::Usage(_)) { 2 } else { 1 };
            if cli.json {
                let _ = writeln!(stdout, "{}", json!({ "error": { "code": err.code(), "message": err.message() } }));
            }
            let _ = writeln!(stderr, "error: {err:#}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["pact", "bogus"], &mut out, &mut err), 2);
        assert_eq!(run_cli(["pact", "vote", "p1", "--signatory", "a"], &mut out, &mut err), 2);
    }

    #[test]
    fn signatory_spec_parsing() {
        let pk = KeyPair::from_seed(&[1; 32]).unwrap().public_key();
        let s = parse_signatory(&format!("alice:{pk}:Alice Smith")).unwrap();
        assert_eq!((s.id.as_str(), s.display_name.as_str()), ("alice", "Alice Smith"));
        assert!(parse_signatory("alice").is_err());
        assert!(parse_signatory(&format!("alice:{}", pk.to_string().to_uppercase())).is_err());
    }
}
