//! Wire types shared by the HTTP service and the remote CLI client.

use pact_core::simnet::SimConfig;
use pact_core::{ConsensusError, Digest256, LedgerError, ProposalKind, Signatory, Signature};
use serde::{Deserialize, Serialize};

use crate::engine::EngineError;

/// Header naming the signatory casting a vote.
pub const SIGNATORY_HEADER: &str = "x-pact-signatory";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateGroupRequest {
    pub signatories: Vec<Signatory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenProposalRequest {
    pub text: String,
    #[serde(default = "original")]
    pub kind: ProposalKind,
    #[serde(default)]
    pub parent_version_id: Option<String>,
}

fn original() -> ProposalKind {
    ProposalKind::Original
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteRequest {
    pub submitted_hash: Digest256,
    pub vote: bool,
    pub vote_signature: Signature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub text: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimRunRequest {
    #[serde(flatten)]
    pub config: SimConfig,
    /// Also return the per-request log.
    #[serde(default)]
    pub include_log: bool,
}

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub http_status: u16,
}

impl ApiError {
    pub fn new(http_status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError { code: code.to_string(), message: message.into(), http_status }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "BAD_REQUEST", message)
    }
}

/// Stable code and status for a consensus error.
pub fn consensus_code(e: &ConsensusError) -> (u16, &'static str) {
    use ConsensusError::*;
    match e {
        UnknownGroup(_) => (404, "UNKNOWN_GROUP"),
        UnknownProposal(_) => (404, "UNKNOWN_PROPOSAL"),
        UnknownParentVersion(_) => (404, "UNKNOWN_PARENT_VERSION"),
        EmptyGroup => (409, "EMPTY_GROUP"),
        DuplicateSignatory(_) => (409, "DUPLICATE_SIGNATORY"),
        InvalidSignatoryId(_) => (409, "INVALID_SIGNATORY_ID"),
        ParentOutsideGroup(_) => (409, "PARENT_OUTSIDE_GROUP"),
        ParentNotLatest { .. } => (409, "PARENT_NOT_LATEST"),
        UnexpectedParent => (409, "UNEXPECTED_PARENT"),
        EmptyText => (409, "EMPTY_TEXT"),
        ProposalInProgress { .. } => (409, "PROPOSAL_IN_PROGRESS"),
        NotASignatory(_) => (409, "NOT_A_SIGNATORY"),
        AlreadyVoted(_) => (409, "ALREADY_VOTED"),
        BadVoteSignature(_) => (409, "BAD_VOTE_SIGNATURE"),
        ProposalClosed(_) => (409, "PROPOSAL_CLOSED"),
        NotApproved(_) => (409, "NOT_APPROVED"),
        AlreadyFinalized(_) => (409, "ALREADY_FINALIZED"),
        DuplicateOwnerKey(_) => (409, "DUPLICATE_OWNER_KEY"),
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            EngineError::Consensus(c) => consensus_code(c),
            EngineError::Ledger(LedgerError::UnknownContract(_)) => (404, "UNKNOWN_CONTRACT"),
            EngineError::Ledger(LedgerError::MiningBudgetExceeded { .. }) => (409, "MINING_BUDGET_EXCEEDED"),
            EngineError::Ledger(LedgerError::WrongOwnerKey { .. }) => (500, "WRONG_OWNER_KEY"),
            EngineError::Ledger(LedgerError::MalformedPayload(_)) => (409, "MALFORMED_PAYLOAD"),
            EngineError::QuorumRejected { .. } => (409, "QUORUM_REJECTED"),
            EngineError::InvalidChain { .. } => (500, "INVALID_CHAIN"),
            EngineError::Store(_) | EngineError::Replay { .. } => (500, "STORAGE_ERROR"),
            EngineError::Config(_) => (500, "CONFIG_ERROR"),
        };
        ApiError::new(status, code, message)
    }
}
