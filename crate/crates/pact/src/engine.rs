//! The embedded engine: consensus book plus chain, persisted through the
//! store, with a local honest miner network gating every append.
//!
//! All mutations go through `&mut Engine`; the HTTP service wraps it in a
//! lock so there is a single writer.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pact_core::consensus::{owner_id_for, vote_message};
use pact_core::ledger::{check_block, quorum_threshold, LedgerSubmission};
use pact_core::simnet::{miner_verdict, MinerBehavior, MinerProfile};
use pact_core::{
    canonicalize, hash_contract, sha256, AppendOutcome, ApprovedVersion, Block, Chain, ChainVerdict,
    ConsensusBook, ConsensusError, ConsensusGroup, Digest256, HistoryEntry, KeyPair, LedgerError,
    Proposal, ProposalKind, PublicKey, Signatory, Signature, Tally,
};
use serde::{Deserialize, Serialize};

use crate::mining::{default_workers, mine_parallel};
use crate::store::{ChainFile, EventKind, EventLog, EventRecord, FsyncPolicy, KeyVault, StoreError, TextStore};

pub const ROOT_OWNER_ID: &str = "root";

/// Source of block and event timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

/// Settings fixed when a data directory is first created.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub difficulty: u32,
    pub miners: usize,
    /// Derives owner keys deterministically when set; otherwise keys come
    /// from the OS.
    pub seed: Option<u64>,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            difficulty: pact_core::ledger::DEFAULT_DIFFICULTY,
            miners: 5,
            seed: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("miners rejected block {index}: {yes} of {miners} verified it, {required} needed")]
    QuorumRejected {
        index: u64,
        yes: usize,
        miners: usize,
        required: usize,
    },
    #[error("stored chain is invalid at block {index}: {fault}")]
    InvalidChain {
        index: u64,
        fault: pact_core::BlockFault,
    },
    #[error("replay diverged at event {seq}: {message}")]
    Replay { seq: u64, message: String },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ProposalView {
    #[serde(flatten)]
    pub proposal: Proposal,
    pub tally: Tally,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalizeReport {
    pub version: ApprovedVersion,
    pub block: Block,
    pub yes_count: usize,
    pub miner_count: usize,
}

/// Result of checking a document against the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub found: bool,
    pub digest: Digest256,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_index: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lineage_root: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub owner_pubkey: Option<PublicKey>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupCreated {
    group_id: String,
    signatories: Vec<Signatory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalOpened {
    proposal_id: String,
    group_id: String,
    kind: ProposalKind,
    parent_version_id: Option<String>,
    expected_hash: Digest256,
}

#[derive(Debug, Serialize, Deserialize)]
struct VoteCast {
    proposal_id: String,
    signatory_id: String,
    submitted_hash: Digest256,
    vote: bool,
    vote_signature: Signature,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalFinalized {
    proposal_id: String,
    version_id: String,
    owner_id: String,
    owner_pubkey: PublicKey,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockAccepted {
    block: Block,
    yes_count: usize,
    miner_count: usize,
}

pub struct Engine {
    dir: PathBuf,
    settings: ChainSettings,
    book: ConsensusBook,
    chain: Chain,
    miners: Vec<MinerProfile>,
    events: EventLog,
    chain_file: ChainFile,
    texts: TextStore,
    vault: KeyVault,
    clock: Arc<dyn Clock>,
    workers: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("dir", &self.dir)
            .field("settings", &self.settings)
            .field("blocks", &self.chain.len())
            .finish_non_exhaustive()
    }
}

fn derived_seed(tag: &str, seed: u64, id: &str) -> [u8; 32] {
    *sha256(format!("pact-{tag}\n{seed}\n{id}").as_bytes()).as_bytes()
}

fn random_seed() -> [u8; 32] {
    use rand::RngCore;
    let mut seed = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut seed);
    seed
}

impl Engine {
    /// Opens `dir`, creating a fresh genesis-only state if it holds none.
    /// `init` applies only to a fresh directory.
    pub fn open(dir: impl AsRef<Path>, init: ChainSettings, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        Self::open_with(dir, init, clock, FsyncPolicy::Always)
    }

    pub fn open_with(
        dir: impl AsRef<Path>,
        init: ChainSettings,
        clock: Arc<dyn Clock>,
        fsync: FsyncPolicy,
    ) -> Result<Self, EngineError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        let config_path = dir.join("config.json");
        let settings = match fs::read(&config_path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| EngineError::Config(format!("{}: {e}", config_path.display())))?,
            Err(_) => {
                let bytes = serde_json::to_vec_pretty(&init).expect("settings serialize");
                fs::write(&config_path, bytes)
                    .map_err(|source| StoreError::Io { path: config_path.clone(), source })?;
                init
            }
        };
        if settings.miners == 0 {
            return Err(EngineError::Config("miner count must be at least 1".into()));
        }

        let mut vault = KeyVault::open(dir.join("vault.json"))?;
        let chain_file = ChainFile::new(dir.join("chain.jsonl"), fsync);
        let (events, records) = EventLog::open(dir.join("events.jsonl"), fsync)?;

        let root = if vault.contains(ROOT_OWNER_ID) {
            vault.get(ROOT_OWNER_ID)?
        } else {
            if chain_file.exists() || !records.is_empty() {
                return Err(StoreError::MissingKey(ROOT_OWNER_ID.into()).into());
            }
            let seed = match settings.seed {
                Some(s) => derived_seed("root", s, ROOT_OWNER_ID),
                None => random_seed(),
            };
            let root = KeyPair::from_seed(&seed).expect("32-byte seed");
            vault.insert(ROOT_OWNER_ID, &root)?;
            root
        };

        let chain = Chain::new(&root.public_key(), settings.difficulty);
        if !chain_file.exists() {
            chain_file.append(&chain.blocks()[0])?;
        }
        let miners = (0..settings.miners)
            .map(|i| MinerProfile::new(format!("miner-{i}"), MinerBehavior::Honest))
            .collect();

        let mut engine = Engine {
            texts: TextStore::new(dir.join("texts")),
            dir,
            settings,
            book: ConsensusBook::new(),
            chain,
            miners,
            events,
            chain_file,
            vault,
            clock,
            workers: default_workers(),
        };
        engine.replay(&records)?;
        engine.cross_check_chain_file()?;
        Ok(engine)
    }

    fn replay(&mut self, records: &[EventRecord]) -> Result<(), EngineError> {
        for r in records {
            let diverged = |message: String| EngineError::Replay { seq: r.seq, message };
            let body = r.body.clone();
            match r.kind {
                EventKind::GroupCreated => {
                    let e: GroupCreated = serde_json::from_value(body).map_err(|e| diverged(e.to_string()))?;
                    let id = self.book.create_group(e.signatories)?;
                    if id != e.group_id {
                        return Err(diverged(format!("group id {id} != recorded {}", e.group_id)));
                    }
                }
                EventKind::ProposalOpened => {
                    let e: ProposalOpened = serde_json::from_value(body).map_err(|e| diverged(e.to_string()))?;
                    let text = self.texts.get(&e.expected_hash)?;
                    let id = self.book.open_proposal(&e.group_id, &text, e.kind, e.parent_version_id.as_deref())?;
                    let p = self.book.proposal(&id).expect("just opened");
                    if id != e.proposal_id || p.expected_hash != e.expected_hash {
                        return Err(diverged(format!("proposal {id} does not match recorded {}", e.proposal_id)));
                    }
                }
                EventKind::VoteCast => {
                    let e: VoteCast = serde_json::from_value(body).map_err(|e| diverged(e.to_string()))?;
                    self.book.cast_vote(&e.proposal_id, &e.signatory_id, e.submitted_hash, e.vote, e.vote_signature)?;
                }
                EventKind::ProposalFinalized => {
                    let e: ProposalFinalized = serde_json::from_value(body).map_err(|e| diverged(e.to_string()))?;
                    let owner = self.vault.get(&e.owner_id)?;
                    let (version, _) = self.book.finalize(&e.proposal_id, owner.to_seed())?;
                    if version.version_id != e.version_id || version.owner_pubkey != e.owner_pubkey {
                        return Err(diverged(format!("version {} does not match recorded {}", version.version_id, e.version_id)));
                    }
                }
                EventKind::BlockAccepted => {
                    let e: BlockAccepted = serde_json::from_value(body).map_err(|e| diverged(e.to_string()))?;
                    let verdicts: Vec<bool> = (0..e.miner_count).map(|i| i < e.yes_count).collect();
                    if !self.chain.append_block(e.block, &verdicts).is_accepted() {
                        return Err(diverged("recorded block lacks a miner quorum".into()));
                    }
                }
            }
        }
        Ok(())
    }

    fn cross_check_chain_file(&self) -> Result<(), EngineError> {
        let on_disk = self.chain_file.read()?;
        if on_disk.as_slice() != self.chain.blocks() {
            let line = on_disk
                .iter()
                .zip(self.chain.blocks())
                .position(|(a, b)| a != b)
                .unwrap_or(on_disk.len().min(self.chain.len()));
            return Err(StoreError::Corrupt {
                path: self.chain_file.path().to_path_buf(),
                line: line + 1,
                message: "chain file disagrees with the event log".into(),
            }
            .into());
        }
        match self.chain.verify() {
            ChainVerdict::Valid => Ok(()),
            ChainVerdict::Invalid { index, fault } => Err(EngineError::InvalidChain { index, fault }),
        }
    }

    pub fn set_workers(&mut self, workers: usize) {
        self.workers = workers.max(1);
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn settings(&self) -> ChainSettings {
        self.settings
    }

    pub fn book(&self) -> &ConsensusBook {
        &self.book
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    fn record<T: Serialize>(&mut self, kind: EventKind, body: &T) -> Result<u64, EngineError> {
        let body = serde_json::to_value(body).expect("event bodies serialize");
        Ok(self.events.append_event(kind, body, self.clock.now())?)
    }

    pub fn create_group(&mut self, signatories: Vec<Signatory>) -> Result<ConsensusGroup, EngineError> {
        let id = self.book.create_group(signatories.clone())?;
        self.record(EventKind::GroupCreated, &GroupCreated { group_id: id.clone(), signatories })?;
        Ok(self.book.group(&id).expect("just created").clone())
    }

    pub fn group(&self, id: &str) -> Result<&ConsensusGroup, EngineError> {
        self.book
            .group(id)
            .ok_or_else(|| ConsensusError::UnknownGroup(id.to_string()).into())
    }

    pub fn open_proposal(
        &mut self,
        group_id: &str,
        text: &str,
        kind: ProposalKind,
        parent_version_id: Option<&str>,
    ) -> Result<ProposalView, EngineError> {
        let id = self.book.open_proposal(group_id, text, kind, parent_version_id)?;
        let p = self.book.proposal(&id).expect("just opened").clone();
        self.texts.put(&p.expected_hash, &p.text)?;
        self.record(
            EventKind::ProposalOpened,
            &ProposalOpened {
                proposal_id: id.clone(),
                group_id: p.group_id.clone(),
                kind: p.kind,
                parent_version_id: p.parent_version_id.clone(),
                expected_hash: p.expected_hash,
            },
        )?;
        self.proposal(&id)
    }

    pub fn proposal(&self, id: &str) -> Result<ProposalView, EngineError> {
        let p = self
            .book
            .proposal(id)
            .ok_or_else(|| ConsensusError::UnknownProposal(id.to_string()))?;
        Ok(ProposalView { tally: p.tally(), proposal: p.clone() })
    }

    pub fn cast_vote(
        &mut self,
        proposal_id: &str,
        signatory_id: &str,
        submitted_hash: Digest256,
        vote: bool,
        vote_signature: Signature,
    ) -> Result<ProposalView, EngineError> {
        self.book
            .cast_vote(proposal_id, signatory_id, submitted_hash, vote, vote_signature)?;
        self.record(
            EventKind::VoteCast,
            &VoteCast {
                proposal_id: proposal_id.to_string(),
                signatory_id: signatory_id.to_string(),
                submitted_hash,
                vote,
                vote_signature,
            },
        )?;
        self.proposal(proposal_id)
    }

    fn owner_seed(&self, proposal_id: &str) -> [u8; 32] {
        match self.settings.seed {
            Some(s) => derived_seed("owner", s, proposal_id),
            None => random_seed(),
        }
    }

    /// Mints the version's owner, mines its block and puts it to the miners.
    /// Nothing is persisted unless the miner quorum accepts the block.
    pub fn finalize(&mut self, proposal_id: &str) -> Result<FinalizeReport, EngineError> {
        let mut book = self.book.clone();
        let (version, owner) = book.finalize(proposal_id, self.owner_seed(proposal_id))?;

        let tip = self.chain.tip().clone();
        let prev_owner_id = if tip.header.index == 0 {
            ROOT_OWNER_ID.to_string()
        } else {
            owner_id_for(&tip.header.payload.contract_id)
        };
        let prev_owner = self.vault.get(&prev_owner_id)?;
        let miner = &self.miners[(tip.header.index as usize + 1) % self.miners.len()];
        let header = self.chain.prepare_block(
            &LedgerSubmission::from(&version),
            &prev_owner,
            &miner.id,
            self.clock.now(),
        )?;
        let block = mine_parallel(&header, self.settings.difficulty, 0, self.workers);

        let valid = check_block(&block, &tip, self.settings.difficulty).is_ok();
        // local miners are honest, so the draw never matters
        let verdicts: Vec<bool> = self.miners.iter().map(|m| miner_verdict(m, valid, 1.0)).collect();
        let yes_count = verdicts.iter().filter(|v| **v).count();
        let mut chain = self.chain.clone();
        if let AppendOutcome::Rejected(_) = chain.append_block(block.clone(), &verdicts) {
            return Err(EngineError::QuorumRejected {
                index: block.header.index,
                yes: yes_count,
                miners: self.miners.len(),
                required: quorum_threshold(self.miners.len()),
            });
        }

        self.vault.insert(&owner.id, &owner.keypair)?;
        self.record(
            EventKind::ProposalFinalized,
            &ProposalFinalized {
                proposal_id: proposal_id.to_string(),
                version_id: version.version_id.clone(),
                owner_id: owner.id.clone(),
                owner_pubkey: version.owner_pubkey,
            },
        )?;
        self.record(
            EventKind::BlockAccepted,
            &BlockAccepted { block: block.clone(), yes_count, miner_count: self.miners.len() },
        )?;
        self.chain_file.append(&block)?;
        self.book = book;
        self.chain = chain;
        Ok(FinalizeReport { version, block, yes_count, miner_count: self.miners.len() })
    }

    pub fn verify_chain(&self) -> ChainVerdict {
        self.chain.verify()
    }

    pub fn history(&self, root_contract_id: &str) -> Result<Vec<HistoryEntry>, EngineError> {
        Ok(self.chain.contract_history(root_contract_id)?)
    }

    pub fn verify_document(&self, text: &str) -> Attestation {
        verify_document(&self.chain, text)
    }

    /// The canonical text stored for a proposal's digest.
    pub fn text(&self, digest: &Digest256) -> Result<String, EngineError> {
        Ok(self.texts.get(digest)?)
    }
}

/// Canonicalizes and hashes `text`, then looks for the digest on the chain.
pub fn verify_document(chain: &Chain, text: &str) -> Attestation {
    let digest = hash_contract(&canonicalize(text));
    match chain.find_by_hash(&digest) {
        Some(block) => {
            let p = &block.header.payload;
            Attestation {
                found: true,
                digest,
                block_index: Some(block.header.index),
                version_id: Some(p.contract_id.clone()),
                lineage_root: chain
                    .lineage_root(&p.contract_id)
                    .map(|b| b.header.payload.contract_id.clone()),
                owner_pubkey: Some(p.owner_pubkey),
            }
        }
        None => Attestation {
            found: false,
            digest,
            block_index: None,
            version_id: None,
            lineage_root: None,
            owner_pubkey: None,
        },
    }
}

/// Signs a vote the way a signatory's client would.
pub fn sign_vote(keys: &KeyPair, proposal_id: &str, submitted_hash: &Digest256, vote: bool) -> Signature {
    keys.sign(&vote_message(proposal_id, submitted_hash, vote))
}
