use std::path::Path;
use std::sync::Arc;

use pact::engine::{sign_vote, ChainSettings, Engine, EngineError, FixedClock};
use pact_core::{KeyPair, ProposalKind, Signatory};

fn settings() -> ChainSettings {
    ChainSettings { difficulty: 2, miners: 5, seed: Some(11) }
}

fn open(dir: &Path) -> Result<Engine, EngineError> {
    Engine::open(dir, settings(), Arc::new(FixedClock(1_650_000_000)))
}

fn keys() -> Vec<KeyPair> {
    (1..=3).map(|i| KeyPair::from_seed(&[i; 32]).unwrap()).collect()
}

fn approve(engine: &mut Engine, keys: &[KeyPair], pid: &str) {
    let hash = engine.proposal(pid).unwrap().proposal.expected_hash;
    for (i, k) in keys.iter().enumerate() {
        engine.cast_vote(pid, &format!("s{i}"), hash, true, sign_vote(k, pid, &hash, true)).unwrap();
    }
}

/// Original, amendment and a second amendment in one group.
fn populate(dir: &Path) -> Vec<KeyPair> {
    let keys = keys();
    let mut e = open(dir).unwrap();
    let signatories = keys.iter().enumerate().map(|(i, k)| Signatory::new(format!("s{i}"), k.public_key())).collect();
    let g = e.create_group(signatories).unwrap().id.clone();
    let mut parent: Option<String> = None;
    for text in ["Terms v1", "Terms v2", "Terms v3"] {
        let kind = if parent.is_some() { ProposalKind::Amendment } else { ProposalKind::Original };
        let pid = e.open_proposal(&g, text, kind, parent.as_deref()).unwrap().proposal.id;
        approve(&mut e, &keys, &pid);
        parent = Some(e.finalize(&pid).unwrap().version.version_id);
    }
    keys
}

#[test]
fn identical_inputs_give_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    populate(a.path());
    populate(b.path());
    for file in ["chain.jsonl", "events.jsonl", "vault.json", "config.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn restart_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let before = open(dir.path()).unwrap();
    let chain_before = serde_json::to_string(before.chain().blocks()).unwrap();
    let book_before = serde_json::to_string(before.book()).unwrap();
    drop(before);
    let mut after = open(dir.path()).unwrap();
    assert_eq!(serde_json::to_string(after.chain().blocks()).unwrap(), chain_before);
    assert_eq!(serde_json::to_string(after.book()).unwrap(), book_before);
    assert_eq!(after.chain().len(), 4);

    // The reopened engine keeps working and allocates fresh ids.
    let keys = keys();
    let signatories = keys.iter().enumerate().map(|(i, k)| Signatory::new(format!("s{i}"), k.public_key())).collect();
    assert_eq!(after.create_group(signatories).unwrap().id, "g2");
}

#[test]
fn private_keys_stay_in_the_vault() {
    let dir = tempfile::tempdir().unwrap();
    let signer_keys = populate(dir.path());
    let vault: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("vault.json")).unwrap()).unwrap();
    let mut secrets: Vec<String> =
        vault["keys"].as_object().unwrap().values().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(secrets.len(), 4);
    secrets.extend(signer_keys.iter().map(KeyPair::private_key_hex));

    let mut scanned = 0;
    let mut stack = vec![dir.path().to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in std::fs::read_dir(&p).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "vault.json" {
                let content = std::fs::read_to_string(&path).unwrap();
                for s in &secrets {
                    assert!(!content.contains(s.as_str()), "secret found in {}", path.display());
                }
                scanned += 1;
            }
        }
    }
    assert!(scanned >= 6);
}

#[cfg(unix)]
#[test]
fn vault_is_owner_only() {
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let mode = std::fs::metadata(dir.path().join("vault.json")).unwrap().permissions().mode();
    assert_eq!(mode & 0o777, 0o600);
}

#[test]
fn corrupted_files_refuse_to_load() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let events = dir.path().join("events.jsonl");
    let original = std::fs::read(&events).unwrap();

    std::fs::write(&events, &original[..original.len() - 5]).unwrap();
    assert!(open(dir.path()).is_err());

    // Dropping the last event leaves the chain file ahead of the log.
    let text = String::from_utf8(original.clone()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(&events, lines.join("\n") + "\n").unwrap();
    assert!(open(dir.path()).is_err());

    std::fs::write(&events, &original).unwrap();
    assert!(open(dir.path()).is_ok());

    std::fs::remove_file(dir.path().join("vault.json")).unwrap();
    assert!(open(dir.path()).is_err());
}
