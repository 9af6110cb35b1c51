use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use pact::cli::run_cli;
use pact::engine::{ChainSettings, Engine, FixedClock};
use serde_json::Value;

const ALICE: &str = "0101010101010101010101010101010101010101010101010101010101010101";
const BOB: &str = "0202020202020202020202020202020202020202020202020202020202020202";

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {:?} / {}", self.stdout, self.stderr))
    }
}

fn pact(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("pact").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

/// Runs with a data directory (or remote URL), a fixed clock and `--json`.
fn at(target: &[&str], args: &[&str]) -> Run {
    let mut all = target.to_vec();
    all.extend(["--clock", "1700000000", "--json", "--workers", "2"]);
    all.extend(args);
    let run = pact(&all);
    assert!(run.stdout.lines().count() <= 1, "more than one JSON document: {}", run.stdout);
    run
}

fn public_key(seed: &str) -> String {
    let run = pact(&["keygen", "--seed", seed, "--json"]);
    assert_eq!(run.code, 0);
    run.json()["public_key"].as_str().unwrap().to_string()
}

/// Two-signatory group, an original and one amendment. Returns the root
/// version id.
fn scenario(target: &[&str], work: &Path) -> String {
    let alice = format!("alice:{}:Alice", public_key(ALICE));
    let bob = format!("bob:{}", public_key(BOB));
    let r = at(target, &["group", "create", "--signatory", &alice, "--signatory", &bob]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let g = r.json()["id"].as_str().unwrap().to_string();

    let v1 = work.join("v1.txt");
    std::fs::write(&v1, "Service agreement\r\nTerm: one year\r\n").unwrap();
    let r = at(target, &["propose", "--group", &g, "--file", v1.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let p1 = r.json()["id"].as_str().unwrap().to_string();
    for (who, key) in [("alice", ALICE), ("bob", BOB)] {
        let r = at(target, &["vote", &p1, "--signatory", who, "--key", key, "--yes"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    let r = at(target, &["finalize", &p1]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let root = r.json()["version"]["version_id"].as_str().unwrap().to_string();

    let key_file = work.join("bob.key");
    std::fs::write(&key_file, pact(&["keygen", "--seed", BOB, "--json"]).stdout).unwrap();
    let r = at(target, &["propose", "--group", &g, "--text", "Service agreement\nTerm: two years", "--amend", &root]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let p2 = r.json()["id"].as_str().unwrap().to_string();
    assert_eq!(at(target, &["vote", &p2, "--signatory", "alice", "--key", ALICE, "--yes"]).code, 0);
    let r = at(target, &["vote", &p2, "--signatory", "bob", "--key-file", key_file.to_str().unwrap(), "--yes"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(at(target, &["finalize", &p2]).code, 0);
    root
}

#[test]
fn local_workflow_matches_golden_chain() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let data = data.to_str().unwrap();
    let target = ["--data-dir", data, "--chain-difficulty", "2", "--chain-seed", "7"];
    let root = scenario(&target, work.path());

    let history = at(&target, &["history", &root]);
    assert_eq!(history.code, 0);
    let entries = history.json();
    assert_eq!(entries.as_array().unwrap().len(), 2);
    assert_eq!(entries[0]["version_id"], root.as_str());

    let verify = at(&target, &["chain", "verify"]);
    assert_eq!((verify.code, verify.json()["status"].as_str()), (0, Some("valid")));

    let chain = at(&target, &["chain", "show"]);
    let golden: Value =
        serde_json::from_str(include_str!("fixtures/golden_chain.json")).expect("golden fixture parses");
    assert_eq!(chain.json(), golden);

    let found = work.path().join("v1-copy.txt");
    std::fs::write(&found, "Service agreement\nTerm: one year").unwrap();
    let r = at(&target, &["verify", found.to_str().unwrap()]);
    assert_eq!((r.code, r.json()["found"].as_bool()), (0, Some(true)));
    assert_eq!(r.json()["block_index"], 1);

    std::fs::write(&found, "Service agreement\nTerm: ten years").unwrap();
    let r = at(&target, &["verify", found.to_str().unwrap()]);
    assert_eq!((r.code, r.json()["found"].as_bool()), (1, Some(false)));
}

#[test]
fn human_output_lists_versions() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let target = ["--data-dir", data.to_str().unwrap(), "--chain-difficulty", "1"];
    let root = scenario(&target, work.path());
    let run = pact(&["--data-dir", data.to_str().unwrap(), "history", &root]);
    assert_eq!(run.code, 0);
    let lines: Vec<&str> = run.stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("v1\t") && lines[1].starts_with("v2\t"));
}

#[test]
fn domain_errors_exit_1_with_json_error() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let target = ["--data-dir", data.to_str().unwrap()];
    let r = at(&target, &["proposal", "p404"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json()["error"]["code"], "UNKNOWN_PROPOSAL");
    let r = at(&target, &["group", "create", "--signatory", "alice:zz"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.json()["error"]["code"], "USAGE");
}

#[test]
fn sim_writes_csv() {
    let work = tempfile::tempdir().unwrap();
    let csv = work.path().join("log.csv");
    let r = pact(&["--json", "sim", "run", "--requests", "500", "--seed", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["config"]["requests"], 500);
    let content = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(content.lines().next(), Some("request_id,valid,yes_count,accepted"));
    assert_eq!(content.lines().count(), 501);

    let r = pact(&["--json", "sim", "run", "--requests", "4", "--end-to-end", "--difficulty", "1", "--valid-fraction", "0.5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = pact(&["sim", "run", "--miners", "0"]);
    assert_eq!(r.code, 2);
}

#[test]
fn remote_mode_drives_a_running_service() {
    let server_dir = tempfile::tempdir().unwrap();
    let settings = ChainSettings { difficulty: 2, miners: 5, seed: Some(7) };
    let engine = Engine::open(server_dir.path(), settings, Arc::new(FixedClock(1_700_000_000))).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let app = pact::service::router(Arc::new(RwLock::new(engine)));
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let url = format!("http://{addr}");
    let work = tempfile::tempdir().unwrap();
    let target = ["--remote", url.as_str()];
    let root = scenario(&target, work.path());
    assert_eq!(at(&target, &["history", &root]).json().as_array().unwrap().len(), 2);
    assert_eq!(at(&target, &["chain", "verify"]).code, 0);

    // Same inputs as the local golden run, so the same chain.
    let golden: Value = serde_json::from_str(include_str!("fixtures/golden_chain.json")).unwrap();
    assert_eq!(at(&target, &["chain", "show"]).json(), golden);

    let r = at(&target, &["proposal", "p9"]);
    assert_eq!((r.code, r.json()["error"]["code"].as_str()), (1, Some("UNKNOWN_PROPOSAL")));
    let r = at(&["--remote", "http://127.0.0.1:1"], &["chain", "show"]);
    assert_eq!((r.code, r.json()["error"]["code"].as_str()), (1, Some("UNREACHABLE")));
    rt.shutdown_background();
}
