//! Signatory groups and unanimous approval of contract versions.
//!
//! A [`ConsensusBook`] owns every group, proposal and approved version. Each
//! group runs one live proposal at a time. A proposal is approved only when
//! every signatory has voted yes *and* submitted the digest the proposal
//! expects; the first "no" or mismatched digest rejects it on the spot.
//! Finalizing an approved proposal mints a fresh owner keypair for the new
//! version. The book keeps only the owner's public key; the caller takes
//! custody of the private half.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::{hash_contract, sha256, Digest256};
use crate::keys::{KeyPair, PublicKey, Signature};
use crate::text::{canonicalize, CanonicalText};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("a group needs at least one signatory")]
    EmptyGroup,
    #[error("signatory id {0:?} appears more than once")]
    DuplicateSignatory(String),
    #[error("signatory id {0:?} must be non-empty printable ASCII without ','")]
    InvalidSignatoryId(String),
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
    #[error("unknown parent version {0:?}")]
    UnknownParentVersion(String),
    #[error("parent version {0} belongs to a different group")]
    ParentOutsideGroup(String),
    #[error("version {parent} already has amendment {successor}; amend the newest version")]
    ParentNotLatest { parent: String, successor: String },
    #[error("an original contract cannot name a parent version")]
    UnexpectedParent,
    #[error("an original contract needs non-empty text")]
    EmptyText,
    #[error("group {group} already has live proposal {proposal}")]
    ProposalInProgress { group: String, proposal: String },
    #[error("{0} is not a signatory of this group")]
    NotASignatory(String),
    #[error("{0} has already voted on this proposal")]
    AlreadyVoted(String),
    #[error("vote signature from {0} does not verify")]
    BadVoteSignature(String),
    #[error("proposal {0} is closed")]
    ProposalClosed(String),
    #[error("proposal {0} is not approved")]
    NotApproved(String),
    #[error("proposal {0} has already been finalized")]
    AlreadyFinalized(String),
    #[error("owner key {0} is already bound to another version")]
    DuplicateOwnerKey(PublicKey),
}

/// A party to a contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signatory {
    pub id: String,
    pub public_key: PublicKey,
    #[serde(default)]
    pub display_name: String,
}

impl Signatory {
    pub fn new(id: impl Into<String>, public_key: PublicKey) -> Self {
        let id = id.into();
        Signatory {
            display_name: id.clone(),
            id,
            public_key,
        }
    }
}

/// Identifier rule shared by signatory and miner ids. They are joined with
/// ',' and LF in block preimages, so neither may appear.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_graphic() && b != b',')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusGroup {
    pub id: String,
    pub signatories: Vec<Signatory>,
    pub proposals: Vec<String>,
}

impl ConsensusGroup {
    pub fn signatory(&self, id: &str) -> Option<&Signatory> {
        self.signatories.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Original,
    Amendment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalStatus {
    Open,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tally {
    Pending,
    Approved,
    Rejected,
}

/// One signatory's recorded vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submitted_hash: Digest256,
    pub vote: bool,
    pub vote_signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: String,
    pub group_id: String,
    pub kind: ProposalKind,
    pub parent_version_id: Option<String>,
    pub text: CanonicalText,
    pub expected_hash: Digest256,
    /// Sorted snapshot of the group's signatory ids.
    pub electorate: Vec<String>,
    pub submissions: BTreeMap<String, Submission>,
    pub status: ProposalStatus,
    /// Set once the approved proposal has been finalized into a version.
    pub version_id: Option<String>,
}

impl Proposal {
    pub fn tally(&self) -> Tally {
        let dissent = self
            .submissions
            .values()
            .any(|s| !s.vote || s.submitted_hash != self.expected_hash);
        if dissent {
            Tally::Rejected
        } else if self
            .electorate
            .iter()
            .all(|id| self.submissions.contains_key(id))
        {
            Tally::Approved
        } else {
            Tally::Pending
        }
    }

    /// Open, or approved but not yet turned into a version.
    pub fn is_live(&self) -> bool {
        match self.status {
            ProposalStatus::Open => true,
            ProposalStatus::Approved => self.version_id.is_none(),
            ProposalStatus::Rejected => false,
        }
    }
}

/// The bytes a signatory signs to cast a vote.
pub fn vote_message(proposal_id: &str, submitted_hash: &Digest256, vote: bool) -> Vec<u8> {
    format!(
        "VOTE\n{proposal_id}\n{submitted_hash}\n{}",
        if vote { 1 } else { 0 }
    )
    .into_bytes()
}

/// A contract version approved by its group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovedVersion {
    /// 32 lowercase hex characters; doubles as the ledger's contract id.
    pub version_id: String,
    pub proposal_id: String,
    pub group_id: String,
    pub kind: ProposalKind,
    pub parent_version_id: Option<String>,
    pub root_version_id: String,
    pub contract_hash: Digest256,
    /// Sorted ascending.
    pub signatory_ids: Vec<String>,
    pub owner_id: String,
    pub owner_pubkey: PublicKey,
}

/// The platform-held owner of exactly one approved version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VeriOwner {
    pub id: String,
    pub keypair: KeyPair,
    pub owned_version_id: String,
}

pub fn owner_id_for(version_id: &str) -> String {
    format!("owner-{version_id}")
}

fn derive_version_id(group_id: &str, proposal_id: &str, hash: &Digest256) -> String {
    let d = sha256(format!("VERSION\n{group_id}\n{proposal_id}\n{hash}").as_bytes());
    hex::encode(&d.as_bytes()[..16])
}

/// Every group, proposal and approved version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusBook {
    groups: BTreeMap<String, ConsensusGroup>,
    proposals: BTreeMap<String, Proposal>,
    versions: BTreeMap<String, ApprovedVersion>,
    /// version id → id of the amendment that superseded it.
    successors: BTreeMap<String, String>,
    group_seq: u64,
    proposal_seq: u64,
}

impl ConsensusBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn group(&self, id: &str) -> Option<&ConsensusGroup> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &ConsensusGroup> {
        self.groups.values()
    }

    pub fn proposal(&self, id: &str) -> Option<&Proposal> {
        self.proposals.get(id)
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn version(&self, id: &str) -> Option<&ApprovedVersion> {
        self.versions.get(id)
    }

    pub fn versions(&self) -> impl Iterator<Item = &ApprovedVersion> {
        self.versions.values()
    }

    pub fn create_group(&mut self, signatories: Vec<Signatory>) -> Result<String, ConsensusError> {
        if signatories.is_empty() {
            return Err(ConsensusError::EmptyGroup);
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for s in &signatories {
            if !is_valid_id(&s.id) {
                return Err(ConsensusError::InvalidSignatoryId(s.id.clone()));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(ConsensusError::DuplicateSignatory(s.id.clone()));
            }
        }
        self.group_seq += 1;
        let id = format!("g{}", self.group_seq);
        self.groups.insert(
            id.clone(),
            ConsensusGroup {
                id: id.clone(),
                signatories,
                proposals: Vec::new(),
            },
        );
        Ok(id)
    }

    pub fn open_proposal(
        &mut self,
        group_id: &str,
        text: &str,
        kind: ProposalKind,
        parent_version_id: Option<&str>,
    ) -> Result<String, ConsensusError> {
        let group = self
            .groups
            .get(group_id)
            .ok_or_else(|| ConsensusError::UnknownGroup(group_id.to_string()))?;
        if let Some(live) = group
            .proposals
            .iter()
            .filter_map(|p| self.proposals.get(p))
            .find(|p| p.is_live())
        {
            return Err(ConsensusError::ProposalInProgress {
                group: group_id.to_string(),
                proposal: live.id.clone(),
            });
        }
        let parent = parent_version_id.filter(|p| !p.is_empty());
        let text = canonicalize(text);
        match (kind, parent) {
            (ProposalKind::Original, Some(_)) => return Err(ConsensusError::UnexpectedParent),
            (ProposalKind::Original, None) if text.is_empty() => {
                return Err(ConsensusError::EmptyText)
            }
            (ProposalKind::Original, None) => {}
            (ProposalKind::Amendment, None) => {
                return Err(ConsensusError::UnknownParentVersion(String::new()))
            }
            (ProposalKind::Amendment, Some(parent)) => {
                let version = self
                    .versions
                    .get(parent)
                    .ok_or_else(|| ConsensusError::UnknownParentVersion(parent.to_string()))?;
                if version.group_id != group_id {
                    return Err(ConsensusError::ParentOutsideGroup(parent.to_string()));
                }
                if let Some(successor) = self.successors.get(parent) {
                    return Err(ConsensusError::ParentNotLatest {
                        parent: parent.to_string(),
                        successor: successor.clone(),
                    });
                }
            }
        }

        let mut electorate: Vec<String> = group.signatories.iter().map(|s| s.id.clone()).collect();
        electorate.sort();
        self.proposal_seq += 1;
        let id = format!("p{}", self.proposal_seq);
        let proposal = Proposal {
            id: id.clone(),
            group_id: group_id.to_string(),
            kind,
            parent_version_id: parent.map(str::to_string),
            expected_hash: hash_contract(&text),
            text,
            electorate,
            submissions: BTreeMap::new(),
            status: ProposalStatus::Open,
            version_id: None,
        };
        self.proposals.insert(id.clone(), proposal);
        if let Some(g) = self.groups.get_mut(group_id) {
            g.proposals.push(id.clone());
        }
        Ok(id)
    }

    /// Records one signatory's digest and vote, then closes the proposal if
    /// the tally has become final.
    pub fn cast_vote(
        &mut self,
        proposal_id: &str,
        signatory_id: &str,
        submitted_hash: Digest256,
        vote: bool,
        vote_signature: Signature,
    ) -> Result<Tally, ConsensusError> {
        let proposal = self
            .proposals
            .get_mut(proposal_id)
            .ok_or_else(|| ConsensusError::UnknownProposal(proposal_id.to_string()))?;
        if proposal.status != ProposalStatus::Open {
            return Err(ConsensusError::ProposalClosed(proposal_id.to_string()));
        }
        let signatory = self
            .groups
            .get(&proposal.group_id)
            .and_then(|g| g.signatory(signatory_id))
            .ok_or_else(|| ConsensusError::NotASignatory(signatory_id.to_string()))?;
        if proposal.submissions.contains_key(signatory_id) {
            return Err(ConsensusError::AlreadyVoted(signatory_id.to_string()));
        }
        let message = vote_message(proposal_id, &submitted_hash, vote);
        if !signatory.public_key.verify(&message, &vote_signature) {
            return Err(ConsensusError::BadVoteSignature(signatory_id.to_string()));
        }
        proposal.submissions.insert(
            signatory_id.to_string(),
            Submission {
                submitted_hash,
                vote,
                vote_signature,
            },
        );
        let tally = proposal.tally();
        match tally {
            Tally::Approved => proposal.status = ProposalStatus::Approved,
            Tally::Rejected => proposal.status = ProposalStatus::Rejected,
            Tally::Pending => {}
        }
        Ok(tally)
    }

    /// Turns an approved proposal into a version owned by a keypair minted
    /// from `owner_seed`.
    pub fn finalize(
        &mut self,
        proposal_id: &str,
        owner_seed: [u8; 32],
    ) -> Result<(ApprovedVersion, VeriOwner), ConsensusError> {
        let proposal = self
            .proposals
            .get(proposal_id)
            .ok_or_else(|| ConsensusError::UnknownProposal(proposal_id.to_string()))?;
        if proposal.tally() != Tally::Approved {
            return Err(ConsensusError::NotApproved(proposal_id.to_string()));
        }
        if proposal.version_id.is_some() {
            return Err(ConsensusError::AlreadyFinalized(proposal_id.to_string()));
        }
        let keypair = KeyPair::from_seed(&owner_seed).expect("seed is 32 bytes");
        let owner_pubkey = keypair.public_key();
        if self.versions.values().any(|v| v.owner_pubkey == owner_pubkey) {
            return Err(ConsensusError::DuplicateOwnerKey(owner_pubkey));
        }

        let version_id =
            derive_version_id(&proposal.group_id, &proposal.id, &proposal.expected_hash);
        let root_version_id = match &proposal.parent_version_id {
            Some(parent) => self
                .versions
                .get(parent)
                .map(|v| v.root_version_id.clone())
                .ok_or_else(|| ConsensusError::UnknownParentVersion(parent.clone()))?,
            None => version_id.clone(),
        };
        if let Some(parent) = &proposal.parent_version_id {
            if let Some(successor) = self.successors.get(parent) {
                return Err(ConsensusError::ParentNotLatest {
                    parent: parent.clone(),
                    successor: successor.clone(),
                });
            }
        }
        let owner_id = owner_id_for(&version_id);
        let version = ApprovedVersion {
            version_id: version_id.clone(),
            proposal_id: proposal.id.clone(),
            group_id: proposal.group_id.clone(),
            kind: proposal.kind,
            parent_version_id: proposal.parent_version_id.clone(),
            root_version_id,
            contract_hash: proposal.expected_hash,
            signatory_ids: proposal.electorate.clone(),
            owner_id: owner_id.clone(),
            owner_pubkey,
        };

        if let Some(parent) = &version.parent_version_id {
            self.successors.insert(parent.clone(), version_id.clone());
        }
        self.versions.insert(version_id.clone(), version.clone());
        if let Some(p) = self.proposals.get_mut(proposal_id) {
            p.status = ProposalStatus::Approved;
            p.version_id = Some(version_id.clone());
        }
        let owner = VeriOwner {
            id: owner_id,
            keypair,
            owned_version_id: version_id,
        };
        Ok((version, owner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn keys(n: u8) -> KeyPair {
        KeyPair::from_seed(&[n; 32]).unwrap()
    }

    fn sigs(names: &[&str]) -> Vec<Signatory> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| Signatory::new(*n, keys(i as u8 + 1).public_key()))
            .collect()
    }

    fn vote(book: &mut ConsensusBook, pid: &str, who: usize, id: &str, yes: bool, hash: Digest256) -> Result<Tally, ConsensusError> {
        let sig = keys(who as u8 + 1).sign(&vote_message(pid, &hash, yes));
        book.cast_vote(pid, id, hash, yes, sig)
    }

    fn approved_v1(book: &mut ConsensusBook) -> (String, String, ApprovedVersion) {
        let g = book.create_group(sigs(&["a", "b", "c"])).unwrap();
        let p = book
            .open_proposal(&g, "Agreement v1", ProposalKind::Original, None)
            .unwrap();
        let h = book.proposal(&p).unwrap().expected_hash;
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            vote(book, &p, i, id, true, h).unwrap();
        }
        let (v, _) = book.finalize(&p, [100; 32]).unwrap();
        (g, p, v)
    }

    #[test]
    fn group_creation_rules() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a", "b", "c"])).unwrap();
        assert_eq!(book.group(&g).unwrap().signatories.len(), 3);
        assert!(book.create_group(sigs(&["a"])).is_ok());
        assert_eq!(
            book.create_group(sigs(&["a", "a"])),
            Err(ConsensusError::DuplicateSignatory("a".into()))
        );
        assert_eq!(book.create_group(vec![]), Err(ConsensusError::EmptyGroup));
        assert!(matches!(
            book.create_group(sigs(&["a,b"])),
            Err(ConsensusError::InvalidSignatoryId(_))
        ));
    }

    #[test]
    fn proposal_hash_is_digest_of_canonical_text() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a"])).unwrap();
        let p = book
            .open_proposal(&g, "Agreement v1", ProposalKind::Original, None)
            .unwrap();
        let p = book.proposal(&p).unwrap();
        assert_eq!(p.expected_hash, sha256(b"Agreement v1\n"));
        assert_eq!(p.status, ProposalStatus::Open);
        assert!(p.submissions.is_empty());
    }

    #[test]
    fn open_proposal_errors() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a"])).unwrap();
        assert_eq!(
            book.open_proposal(&g, "t", ProposalKind::Amendment, Some("missing")),
            Err(ConsensusError::UnknownParentVersion("missing".into()))
        );
        assert_eq!(
            book.open_proposal(&g, "\r\n", ProposalKind::Original, None),
            Err(ConsensusError::EmptyText)
        );
        assert_eq!(
            book.open_proposal("g99", "t", ProposalKind::Original, None),
            Err(ConsensusError::UnknownGroup("g99".into()))
        );
        let p = book.open_proposal(&g, "t", ProposalKind::Original, None).unwrap();
        assert_eq!(
            book.open_proposal(&g, "u", ProposalKind::Original, None),
            Err(ConsensusError::ProposalInProgress {
                group: g.clone(),
                proposal: p
            })
        );
    }

    #[test]
    fn voting_flow_and_guards() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a", "b", "c"])).unwrap();
        let p = book.open_proposal(&g, "Agreement v1", ProposalKind::Original, None).unwrap();
        let h = book.proposal(&p).unwrap().expected_hash;

        assert_eq!(vote(&mut book, &p, 0, "a", true, h), Ok(Tally::Pending));
        let prop = book.proposal(&p).unwrap();
        assert_eq!(prop.submissions.len(), 1);
        assert_eq!(prop.status, ProposalStatus::Open);

        assert_eq!(
            vote(&mut book, &p, 0, "a", true, h),
            Err(ConsensusError::AlreadyVoted("a".into()))
        );
        assert_eq!(
            vote(&mut book, &p, 5, "x", true, h),
            Err(ConsensusError::NotASignatory("x".into()))
        );
        // b's vote signed with c's key
        assert_eq!(
            vote(&mut book, &p, 2, "b", true, h),
            Err(ConsensusError::BadVoteSignature("b".into()))
        );
        assert_eq!(vote(&mut book, &p, 1, "b", true, h), Ok(Tally::Pending));
        assert_eq!(
            book.finalize(&p, [1; 32]).unwrap_err(),
            ConsensusError::NotApproved(p.clone())
        );
        assert_eq!(vote(&mut book, &p, 2, "c", true, h), Ok(Tally::Approved));
        assert_eq!(book.proposal(&p).unwrap().status, ProposalStatus::Approved);
    }

    #[test]
    fn single_no_rejects_immediately() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a", "b", "c"])).unwrap();
        let p = book.open_proposal(&g, "x", ProposalKind::Original, None).unwrap();
        let h = book.proposal(&p).unwrap().expected_hash;
        vote(&mut book, &p, 0, "a", true, h).unwrap();
        assert_eq!(vote(&mut book, &p, 1, "b", false, h), Ok(Tally::Rejected));
        assert_eq!(
            vote(&mut book, &p, 2, "c", true, h),
            Err(ConsensusError::ProposalClosed(p.clone()))
        );
        // the group may try again
        assert!(book.open_proposal(&g, "x2", ProposalKind::Original, None).is_ok());
    }

    #[test]
    fn mismatched_hash_rejects() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a", "b", "c"])).unwrap();
        let p = book.open_proposal(&g, "x", ProposalKind::Original, None).unwrap();
        let h = book.proposal(&p).unwrap().expected_hash;
        vote(&mut book, &p, 0, "a", true, h).unwrap();
        vote(&mut book, &p, 1, "b", true, h).unwrap();
        let other = hash_contract(&canonicalize("y"));
        assert_eq!(vote(&mut book, &p, 2, "c", true, other), Ok(Tally::Rejected));
        assert!(book.finalize(&p, [1; 32]).is_err());
    }

    #[test]
    fn finalize_mints_distinct_owners_and_links_amendments() {
        let mut book = ConsensusBook::new();
        let (g, p1, v1) = approved_v1(&mut book);
        assert_eq!(v1.version_id.len(), 32);
        assert_eq!(v1.root_version_id, v1.version_id);
        assert_eq!(v1.signatory_ids, vec!["a", "b", "c"]);
        assert_eq!(
            book.finalize(&p1, [5; 32]).unwrap_err(),
            ConsensusError::AlreadyFinalized(p1)
        );

        let p2 = book
            .open_proposal(&g, "Agreement v2", ProposalKind::Amendment, Some(&v1.version_id))
            .unwrap();
        let h = book.proposal(&p2).unwrap().expected_hash;
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            vote(&mut book, &p2, i, id, true, h).unwrap();
        }
        assert_eq!(
            book.finalize(&p2, [100; 32]).unwrap_err(),
            ConsensusError::DuplicateOwnerKey(keys(100).public_key())
        );
        let (v2, o2) = book.finalize(&p2, [101; 32]).unwrap();
        assert_ne!(v2.owner_pubkey, v1.owner_pubkey);
        assert_eq!(o2.keypair.public_key(), v2.owner_pubkey);
        assert_eq!(v2.parent_version_id.as_deref(), Some(v1.version_id.as_str()));
        assert_eq!(v2.root_version_id, v1.version_id);

        // only the newest version can be amended
        assert!(matches!(
            book.open_proposal(&g, "v3", ProposalKind::Amendment, Some(&v1.version_id)),
            Err(ConsensusError::ParentNotLatest { .. })
        ));
        let other = book.create_group(sigs(&["z"])).unwrap();
        assert_eq!(
            book.open_proposal(&other, "v3", ProposalKind::Amendment, Some(&v2.version_id)),
            Err(ConsensusError::ParentOutsideGroup(v2.version_id.clone()))
        );
    }

    #[test]
    fn approved_but_unfinalized_blocks_new_proposals() {
        let mut book = ConsensusBook::new();
        let g = book.create_group(sigs(&["a"])).unwrap();
        let p = book.open_proposal(&g, "x", ProposalKind::Original, None).unwrap();
        let h = book.proposal(&p).unwrap().expected_hash;
        vote(&mut book, &p, 0, "a", true, h).unwrap();
        assert!(matches!(
            book.open_proposal(&g, "y", ProposalKind::Original, None),
            Err(ConsensusError::ProposalInProgress { .. })
        ));
        book.finalize(&p, [1; 32]).unwrap();
        assert!(book.open_proposal(&g, "y", ProposalKind::Original, None).is_ok());
    }
}
