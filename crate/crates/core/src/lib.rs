//! Contract consensus and proof-of-work ledger primitives.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. It holds no IO: persistence, the HTTP service and the CLI live in
//! the companion `pact` crate.
//!
//! Layers, bottom-up:
//!
//! * [`text`], [`digest`], [`keys`]: canonical contract text, SHA-256 digests,
//!   Ed25519 keypairs and detached signatures.
//! * [`consensus`]: signatory groups, proposals, unanimous voting with hash
//!   agreement, and minting of per-version owner keypairs.
//! * [`ledger`]: block encoding, mining, verification, the majority-gated
//!   append and amendment lineage queries.
//! * [`simnet`]: an in-process miner network with untruthful miners, Monte
//!   Carlo experiments and the exact binomial failure oracle.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod consensus;
pub mod digest;
mod hexfmt;
pub use hexfmt::HexError;
pub mod keys;
pub mod ledger;
pub mod simnet;
pub mod text;

pub use consensus::{
    ApprovedVersion, ConsensusBook, ConsensusError, ConsensusGroup, Proposal, ProposalKind,
    ProposalStatus, Signatory, Submission, Tally, VeriOwner,
};
pub use digest::{hash_contract, sha256, Digest256};
pub use keys::{sign, verify_signature, KeyError, KeyPair, PublicKey, Signature, SCHEME_ID};
pub use ledger::{
    quorum_threshold, AppendOutcome, Block, BlockFault, BlockHeader, BlockPayload, Chain,
    ChainVerdict, HistoryEntry, LedgerError,
};
pub use text::{canonicalize, canonicalize_bytes, CanonicalText, EncodingError};

#[cfg(feature = "std")]
pub use keys::generate_keypair;
