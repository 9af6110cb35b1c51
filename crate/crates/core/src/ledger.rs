//! The block chain: encoding, proof-of-work, verification, the miner-quorum
//! append gate and amendment lineage.
//!
//! Blocks record a contract version's digest, never its text. Every block
//! after genesis carries a signature by the *previous* block's owner over
//! [`ownership_message`], so ownership hands off block to block.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::consensus::{is_valid_id, ApprovedVersion};
use crate::digest::Digest256;
use crate::hexfmt::is_lower_hex;
use crate::keys::{KeyPair, PublicKey, Signature};

/// Leading '0' hex characters required of a mined block hash.
pub const DEFAULT_DIFFICULTY: u32 = 6;
pub const GENESIS_MINER: &str = "genesis";
pub const CONTRACT_ID_LEN: usize = 32;

/// The all-zero contract id carried by genesis.
pub fn zero_contract_id() -> String {
    "0".repeat(CONTRACT_ID_LEN)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("no nonce in [{start}, {start}+{budget}) meets difficulty {difficulty}")]
    MiningBudgetExceeded {
        start: u64,
        budget: u64,
        difficulty: u32,
    },
    #[error("unknown contract {0:?} (history roots must be originals)")]
    UnknownContract(String),
    #[error("signing key does not belong to the owner of block {index}")]
    WrongOwnerKey { index: u64 },
    #[error("malformed block payload: {0}")]
    MalformedPayload(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPayload {
    pub contract_id: String,
    /// Empty for originals.
    pub parent_contract_id: String,
    pub contract_hash: Digest256,
    /// Sorted ascending, no duplicates.
    pub signatory_ids: Vec<String>,
    pub owner_pubkey: PublicKey,
    pub prev_owner_sig: Signature,
}

impl BlockPayload {
    pub fn validate(&self) -> Result<(), LedgerError> {
        let id_ok = |id: &str| id.len() == CONTRACT_ID_LEN && is_lower_hex(id);
        if !id_ok(&self.contract_id) {
            return Err(LedgerError::MalformedPayload("contract_id"));
        }
        if !self.parent_contract_id.is_empty() && !id_ok(&self.parent_contract_id) {
            return Err(LedgerError::MalformedPayload("parent_contract_id"));
        }
        if !self.signatory_ids.iter().all(|s| is_valid_id(s)) {
            return Err(LedgerError::MalformedPayload("signatory id"));
        }
        if !self.signatory_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(LedgerError::MalformedPayload("signatory_ids not strictly sorted"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub index: u64,
    pub timestamp: u64,
    pub miner_id: String,
    pub payload: BlockPayload,
    pub prev_hash: Digest256,
    pub nonce: u64,
}

/// A header together with its claimed hash. Serializes flat, with keys in
/// preimage order followed by `hash`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "FlatBlock", into = "FlatBlock")]
pub struct Block {
    pub header: BlockHeader,
    pub hash: Digest256,
}

#[derive(Serialize, Deserialize)]
struct FlatBlock {
    index: u64,
    timestamp: u64,
    miner_id: String,
    contract_id: String,
    parent_contract_id: String,
    contract_hash: Digest256,
    signatory_ids: Vec<String>,
    owner_pubkey: PublicKey,
    prev_owner_sig: Signature,
    prev_hash: Digest256,
    nonce: u64,
    hash: Digest256,
}

impl From<Block> for FlatBlock {
    fn from(b: Block) -> Self {
        let h = b.header;
        FlatBlock {
            index: h.index,
            timestamp: h.timestamp,
            miner_id: h.miner_id,
            contract_id: h.payload.contract_id,
            parent_contract_id: h.payload.parent_contract_id,
            contract_hash: h.payload.contract_hash,
            signatory_ids: h.payload.signatory_ids,
            owner_pubkey: h.payload.owner_pubkey,
            prev_owner_sig: h.payload.prev_owner_sig,
            prev_hash: h.prev_hash,
            nonce: h.nonce,
            hash: b.hash,
        }
    }
}

impl From<FlatBlock> for Block {
    fn from(f: FlatBlock) -> Self {
        Block {
            header: BlockHeader {
                index: f.index,
                timestamp: f.timestamp,
                miner_id: f.miner_id,
                payload: BlockPayload {
                    contract_id: f.contract_id,
                    parent_contract_id: f.parent_contract_id,
                    contract_hash: f.contract_hash,
                    signatory_ids: f.signatory_ids,
                    owner_pubkey: f.owner_pubkey,
                    prev_owner_sig: f.prev_owner_sig,
                },
                prev_hash: f.prev_hash,
                nonce: f.nonce,
            },
            hash: f.hash,
        }
    }
}

/// Everything up to, and including, the LF that precedes the nonce.
fn preimage_prefix(h: &BlockHeader) -> String {
    let p = &h.payload;
    let mut s = String::with_capacity(512);
    let _ = write!(
        s,
        "{}\n{}\n{}\n{}\n{}\n{}\n{}\n{}\n{}\n{}\n",
        h.index,
        h.timestamp,
        h.miner_id,
        p.contract_id,
        p.parent_contract_id,
        p.contract_hash,
        p.signatory_ids.join(","),
        p.owner_pubkey,
        p.prev_owner_sig,
        h.prev_hash,
    );
    s
}

/// The bytes a block hash commits to: eleven LF-separated fields, no
/// trailing LF.
pub fn block_preimage(header: &BlockHeader) -> Vec<u8> {
    let mut s = preimage_prefix(header);
    let _ = write!(s, "{}", header.nonce);
    s.into_bytes()
}

pub fn hash_block(header: &BlockHeader) -> Digest256 {
    Digest256::from_bytes(Sha256::digest(block_preimage(header)).into())
}

/// The message the previous block's owner signs to hand off ownership.
pub fn ownership_message(
    contract_hash: &Digest256,
    owner_pubkey: &PublicKey,
    prev_hash: &Digest256,
) -> Vec<u8> {
    format!("OWN\n{contract_hash}\n{owner_pubkey}\n{prev_hash}").into_bytes()
}

/// A nonce hasher with the fixed part of the preimage absorbed once.
#[derive(Clone)]
pub struct NonceHasher {
    prefix: Sha256,
    buf: [u8; 20],
}

impl NonceHasher {
    pub fn new(template: &BlockHeader) -> Self {
        NonceHasher {
            prefix: Sha256::new_with_prefix(preimage_prefix(template).as_bytes()),
            buf: [0; 20],
        }
    }

    pub fn hash(&mut self, nonce: u64) -> Digest256 {
        let bytes = format_u64(nonce, &mut self.buf);
        Digest256::from_bytes(self.prefix.clone().chain_update(bytes).finalize().into())
    }
}

/// Searches nonces upward from `nonce_start` for the first hash with
/// `difficulty` leading zero hex characters. `budget` caps the number of
/// attempts.
pub fn mine(
    template: &BlockHeader,
    difficulty: u32,
    nonce_start: u64,
    budget: Option<u64>,
) -> Result<Block, LedgerError> {
    let mut hasher = NonceHasher::new(template);
    let mut nonce = nonce_start;
    let mut tried = 0u64;
    loop {
        if let Some(budget) = budget.filter(|b| tried >= *b) {
            return Err(LedgerError::MiningBudgetExceeded {
                start: nonce_start,
                budget,
                difficulty,
            });
        }
        let digest = hasher.hash(nonce);
        if digest.meets_difficulty(difficulty) {
            return Ok(seal(template, nonce, digest));
        }
        tried += 1;
        nonce = nonce.wrapping_add(1);
    }
}

/// Copies `template` with `nonce` filled in, paired with its already-computed hash.
pub fn seal(template: &BlockHeader, nonce: u64, hash: Digest256) -> Block {
    let mut header = template.clone();
    header.nonce = nonce;
    Block { header, hash }
}

fn format_u64(mut n: u64, buf: &mut [u8; 20]) -> &[u8] {
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (n % 10) as u8;
        n /= 10;
        if n == 0 {
            break;
        }
    }
    &buf[i..]
}

/// Which verification rule a block broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockFault {
    /// Stored hash differs from the recomputed one.
    HashMismatch,
    /// Hash lacks the required leading zeros.
    InsufficientWork,
    /// Index or prev_hash does not follow the previous block.
    Linkage,
    /// prev_owner_sig does not verify under the previous block's owner key.
    OwnerSignature,
    MalformedPayload,
    /// Block 0 differs from the genesis constant (or the chain is empty).
    Genesis,
}

impl BlockFault {
    /// Short rule label: a-d for the four verification rules.
    pub fn rule(&self) -> &'static str {
        match self {
            BlockFault::HashMismatch => "a",
            BlockFault::InsufficientWork => "b",
            BlockFault::Linkage => "c",
            BlockFault::OwnerSignature => "d",
            BlockFault::MalformedPayload => "payload",
            BlockFault::Genesis => "genesis",
        }
    }
}

impl core::fmt::Display for BlockFault {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            BlockFault::HashMismatch => "hash mismatch",
            BlockFault::InsufficientWork => "insufficient proof of work",
            BlockFault::Linkage => "broken linkage",
            BlockFault::OwnerSignature => "bad previous-owner signature",
            BlockFault::MalformedPayload => "malformed payload",
            BlockFault::Genesis => "bad genesis block",
        };
        f.write_str(s)
    }
}

/// Diagnostic form of [`verify_block`]: the first rule that fails.
pub fn check_block(block: &Block, prev: &Block, difficulty: u32) -> Result<(), BlockFault> {
    let h = &block.header;
    if hash_block(h) != block.hash {
        return Err(BlockFault::HashMismatch);
    }
    if !block.hash.meets_difficulty(difficulty) {
        return Err(BlockFault::InsufficientWork);
    }
    if h.index != prev.header.index.wrapping_add(1) || h.prev_hash != prev.hash {
        return Err(BlockFault::Linkage);
    }
    let msg = ownership_message(&h.payload.contract_hash, &h.payload.owner_pubkey, &h.prev_hash);
    if !prev
        .header
        .payload
        .owner_pubkey
        .verify(&msg, &h.payload.prev_owner_sig)
    {
        return Err(BlockFault::OwnerSignature);
    }
    if h.payload.validate().is_err() {
        return Err(BlockFault::MalformedPayload);
    }
    Ok(())
}

pub fn verify_block(block: &Block, prev: &Block, difficulty: u32) -> bool {
    check_block(block, prev, difficulty).is_ok()
}

pub fn genesis_header(root_owner: &PublicKey) -> BlockHeader {
    BlockHeader {
        index: 0,
        timestamp: 0,
        miner_id: GENESIS_MINER.to_string(),
        payload: BlockPayload {
            contract_id: zero_contract_id(),
            parent_contract_id: String::new(),
            contract_hash: Digest256::ZERO,
            signatory_ids: Vec::new(),
            owner_pubkey: *root_owner,
            prev_owner_sig: Signature::ZERO,
        },
        prev_hash: Digest256::ZERO,
        nonce: 0,
    }
}

/// The hand-built block 0. Exempt from proof of work.
pub fn genesis_block(root_owner: &PublicKey) -> Block {
    let header = genesis_header(root_owner);
    let hash = hash_block(&header);
    Block { header, hash }
}

/// Smallest T with T·100 ≥ 51·M, i.e. ⌈0.51·M⌉.
pub fn quorum_threshold(miner_count: usize) -> usize {
    (51 * miner_count).div_ceil(100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    NoVerdicts,
    InsufficientVotes { yes: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AppendOutcome {
    Accepted { index: u64 },
    Rejected(RejectReason),
}

impl AppendOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AppendOutcome::Accepted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainVerdict {
    Valid,
    Invalid { index: u64, fault: BlockFault },
}

/// Fields a new block takes from an approved version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSubmission {
    pub contract_id: String,
    pub parent_contract_id: String,
    pub contract_hash: Digest256,
    pub signatory_ids: Vec<String>,
    pub owner_pubkey: PublicKey,
}

impl From<&ApprovedVersion> for LedgerSubmission {
    fn from(v: &ApprovedVersion) -> Self {
        LedgerSubmission {
            contract_id: v.version_id.clone(),
            parent_contract_id: v.parent_version_id.clone().unwrap_or_default(),
            contract_hash: v.contract_hash,
            signatory_ids: v.signatory_ids.clone(),
            owner_pubkey: v.owner_pubkey,
        }
    }
}

/// One version in a contract's lineage, as read back from the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version_id: String,
    pub contract_hash: Digest256,
    pub owner_pubkey: PublicKey,
    pub block_index: u64,
}

/// Append-only list of blocks starting at genesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    difficulty: u32,
}

impl Chain {
    pub fn new(root_owner: &PublicKey, difficulty: u32) -> Self {
        Chain {
            blocks: alloc::vec![genesis_block(root_owner)],
            difficulty,
        }
    }

    /// Wraps already-persisted blocks without checking them; call
    /// [`Chain::verify`] before trusting the result.
    pub fn from_blocks(blocks: Vec<Block>, difficulty: u32) -> Self {
        Chain { blocks, difficulty }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn root_owner(&self) -> &PublicKey {
        &self.blocks[0].header.payload.owner_pubkey
    }

    /// Builds the unmined header for the next block. `prev_owner` must be the
    /// keypair whose public key the current tip records.
    pub fn prepare_block(
        &self,
        submission: &LedgerSubmission,
        prev_owner: &KeyPair,
        miner_id: &str,
        timestamp: u64,
    ) -> Result<BlockHeader, LedgerError> {
        let tip = self.tip();
        if prev_owner.public_key() != tip.header.payload.owner_pubkey {
            return Err(LedgerError::WrongOwnerKey {
                index: tip.header.index,
            });
        }
        if !is_valid_id(miner_id) {
            return Err(LedgerError::MalformedPayload("miner_id"));
        }
        let msg = ownership_message(&submission.contract_hash, &submission.owner_pubkey, &tip.hash);
        let payload = BlockPayload {
            contract_id: submission.contract_id.clone(),
            parent_contract_id: submission.parent_contract_id.clone(),
            contract_hash: submission.contract_hash,
            signatory_ids: submission.signatory_ids.clone(),
            owner_pubkey: submission.owner_pubkey,
            prev_owner_sig: prev_owner.sign(&msg),
        };
        payload.validate()?;
        Ok(BlockHeader {
            index: tip.header.index + 1,
            timestamp,
            miner_id: miner_id.to_string(),
            payload,
            prev_hash: tip.hash,
            nonce: 0,
        })
    }

    /// Appends `block` iff at least ⌈0.51·M⌉ of the M miner verdicts are yes.
    /// The chain is untouched on rejection.
    pub fn append_block(&mut self, block: Block, verdicts: &[bool]) -> AppendOutcome {
        if verdicts.is_empty() {
            return AppendOutcome::Rejected(RejectReason::NoVerdicts);
        }
        let yes = verdicts.iter().filter(|v| **v).count();
        let required = quorum_threshold(verdicts.len());
        if yes < required {
            return AppendOutcome::Rejected(RejectReason::InsufficientVotes { yes, required });
        }
        let index = block.header.index;
        self.blocks.push(block);
        AppendOutcome::Accepted { index }
    }

    /// Walks the chain from genesis, reporting the first bad block.
    pub fn verify(&self) -> ChainVerdict {
        let Some(first) = self.blocks.first() else {
            return ChainVerdict::Invalid {
                index: 0,
                fault: BlockFault::Genesis,
            };
        };
        if *first != genesis_block(&first.header.payload.owner_pubkey) {
            return ChainVerdict::Invalid {
                index: 0,
                fault: BlockFault::Genesis,
            };
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if let Err(fault) = check_block(&pair[1], &pair[0], self.difficulty) {
                return ChainVerdict::Invalid {
                    index: i as u64 + 1,
                    fault,
                };
            }
        }
        ChainVerdict::Valid
    }

    /// Blocks after genesis, in index order.
    fn contract_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().skip(1)
    }

    /// First non-genesis block recording `digest`.
    pub fn find_by_hash(&self, digest: &Digest256) -> Option<&Block> {
        self.contract_blocks()
            .find(|b| b.header.payload.contract_hash == *digest)
    }

    pub fn find_contract(&self, contract_id: &str) -> Option<&Block> {
        self.contract_blocks()
            .find(|b| b.header.payload.contract_id == contract_id)
    }

    /// Follows parent links back to the original version.
    pub fn lineage_root(&self, contract_id: &str) -> Option<&Block> {
        let mut cur = self.find_contract(contract_id)?;
        // a well-formed lineage is acyclic; the bound guards malformed chains
        for _ in 0..self.blocks.len() {
            if cur.header.payload.parent_contract_id.is_empty() {
                return Some(cur);
            }
            cur = self.find_contract(&cur.header.payload.parent_contract_id)?;
        }
        None
    }

    /// The original `root_contract_id` followed by its amendments, in block order.
    pub fn contract_history(&self, root_contract_id: &str) -> Result<Vec<HistoryEntry>, LedgerError> {
        let root = self
            .find_contract(root_contract_id)
            .filter(|b| b.header.payload.parent_contract_id.is_empty())
            .ok_or_else(|| LedgerError::UnknownContract(root_contract_id.to_string()))?;
        let entry = |b: &Block| HistoryEntry {
            version_id: b.header.payload.contract_id.clone(),
            contract_hash: b.header.payload.contract_hash,
            owner_pubkey: b.header.payload.owner_pubkey,
            block_index: b.header.index,
        };
        let mut out = alloc::vec![entry(root)];
        let mut cur = root;
        while let Some(child) = self
            .contract_blocks()
            .filter(|b| b.header.index > cur.header.index)
            .find(|b| b.header.payload.parent_contract_id == cur.header.payload.contract_id)
        {
            out.push(entry(child));
            cur = child;
        }
        Ok(out)
    }
}
