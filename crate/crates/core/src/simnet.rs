//! In-process miner network.
//!
//! Each simulated request asks every miner to verify a block whose true
//! validity is known. Untruthful miners invert their verdict; the block is
//! accepted when at least [`quorum_threshold`] miners say yes. The measured
//! failure rate on valid blocks is checked against the exact binomial tail
//! from [`analytic_failure_probability`].
//!
//! Randomness comes from ChaCha8 with one stream per request, so a report
//! depends only on the config, never on execution order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{sha256, Digest256};
use crate::keys::KeyPair;
use crate::ledger::{
    check_block, mine, quorum_threshold, Chain, LedgerError, LedgerSubmission,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MinerBehavior {
    Honest,
    /// Inverts the true verdict with probability `p` on each request.
    BernoulliInverter { p: f64 },
    AlwaysInverter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerProfile {
    pub id: String,
    pub behavior: MinerBehavior,
}

impl MinerProfile {
    pub fn new(id: impl Into<String>, behavior: MinerBehavior) -> Self {
        MinerProfile {
            id: id.into(),
            behavior,
        }
    }
}

/// What one miner reports. `draw` is a uniform sample from [0, 1).
pub fn miner_verdict(profile: &MinerProfile, true_validity: bool, draw: f64) -> bool {
    match profile.behavior {
        MinerBehavior::Honest => true_validity,
        MinerBehavior::AlwaysInverter => !true_validity,
        MinerBehavior::BernoulliInverter { p } => {
            if draw < p {
                !true_validity
            } else {
                true_validity
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub yes_count: usize,
    pub accepted: bool,
}

/// Polls every miner once about a block of known validity. One uniform draw
/// is consumed per miner, in order.
pub fn submit_for_consensus<R: Rng + ?Sized>(
    miners: &[MinerProfile],
    block_validity: bool,
    rng: &mut R,
) -> Ballot {
    let yes_count = miners
        .iter()
        .filter(|m| miner_verdict(m, block_validity, rng.gen::<f64>()))
        .count();
    Ballot {
        yes_count,
        accepted: !miners.is_empty() && yes_count >= quorum_threshold(miners.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AdversaryMode {
    /// Every miner independently inverts with probability `noise_p` per request.
    PerRequestBernoulli,
    /// The first `k` miners always invert; the rest are honest.
    FixedSubset { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub miner_count: usize,
    pub noise_p: f64,
    pub adversary_mode: AdversaryMode,
    pub requests: u64,
    pub valid_fraction: f64,
    /// Only used by [`run_end_to_end`]; the fast path injects validity.
    pub difficulty: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            miner_count: 5,
            noise_p: 0.10,
            adversary_mode: AdversaryMode::PerRequestBernoulli,
            requests: 100_000,
            valid_fraction: 1.0,
            difficulty: 2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("miner_count must be at least 1")]
    NoMiners,
    #[error("requests must be at least 1")]
    NoRequests,
    #[error("{name} must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("fixed adversary count {k} exceeds miner count {miners}")]
    TooManyAdversaries { k: usize, miners: usize },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.miner_count == 0 {
            return Err(SimError::NoMiners);
        }
        if self.requests == 0 {
            return Err(SimError::NoRequests);
        }
        for (name, value) in [("noise_p", self.noise_p), ("valid_fraction", self.valid_fraction)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimError::Probability { name, value });
            }
        }
        if let AdversaryMode::FixedSubset { k } = self.adversary_mode {
            if k > self.miner_count {
                return Err(SimError::TooManyAdversaries {
                    k,
                    miners: self.miner_count,
                });
            }
        }
        Ok(())
    }

    pub fn miners(&self) -> Vec<MinerProfile> {
        (0..self.miner_count)
            .map(|i| {
                let behavior = match self.adversary_mode {
                    AdversaryMode::PerRequestBernoulli => {
                        MinerBehavior::BernoulliInverter { p: self.noise_p }
                    }
                    AdversaryMode::FixedSubset { k } if i < k => MinerBehavior::AlwaysInverter,
                    AdversaryMode::FixedSubset { .. } => MinerBehavior::Honest,
                };
                MinerProfile::new(format!("miner-{i}"), behavior)
            })
            .collect()
    }

    /// Probability that a valid block is rejected under this config.
    pub fn oracle_failure_probability(&self) -> f64 {
        match self.adversary_mode {
            AdversaryMode::PerRequestBernoulli => {
                analytic_failure_probability(self.miner_count, self.noise_p)
            }
            AdversaryMode::FixedSubset { k } => {
                if self.miner_count - k < quorum_threshold(self.miner_count) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub valid: bool,
    pub yes_count: usize,
    pub accepted: bool,
}

/// Order-independent counters; merging two partial tallies is addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounters {
    pub valid_requests: u64,
    pub valid_rejected: u64,
    pub invalid_requests: u64,
    pub invalid_accepted: u64,
}

impl SimCounters {
    pub fn record(&mut self, o: &RequestOutcome) {
        if o.valid {
            self.valid_requests += 1;
            self.valid_rejected += u64::from(!o.accepted);
        } else {
            self.invalid_requests += 1;
            self.invalid_accepted += u64::from(o.accepted);
        }
    }

    pub fn merge(mut self, other: SimCounters) -> SimCounters {
        self.valid_requests += other.valid_requests;
        self.valid_rejected += other.valid_rejected;
        self.invalid_requests += other.invalid_requests;
        self.invalid_accepted += other.invalid_accepted;
        self
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub counters: SimCounters,
    /// Fraction of valid blocks rejected.
    pub truthful_request_failure_rate: f64,
    /// Fraction of invalid blocks accepted.
    pub adversarial_acceptance_rate: f64,
    pub analytic_failure_probability: f64,
    pub log: Vec<RequestOutcome>,
}

impl SimReport {
    pub fn from_outcomes(config: SimConfig, log: Vec<RequestOutcome>) -> Self {
        let counters = log.iter().fold(SimCounters::default(), |mut c, o| {
            c.record(o);
            c
        });
        SimReport {
            truthful_request_failure_rate: ratio(counters.valid_rejected, counters.valid_requests),
            adversarial_acceptance_rate: ratio(counters.invalid_accepted, counters.invalid_requests),
            analytic_failure_probability: config.oracle_failure_probability(),
            config,
            counters,
            log,
        }
    }

    /// Binomial standard error of the truthful failure rate around the oracle value.
    pub fn oracle_standard_error(&self) -> f64 {
        let p = self.analytic_failure_probability;
        let n = self.counters.valid_requests.max(1) as f64;
        sqrt(p * (1.0 - p) / n)
    }
}

/// The random stream owned by one request.
pub fn request_rng(seed: u64, request_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(request_id);
    rng
}

/// Simulates one request in isolation.
pub fn simulate_request(config: &SimConfig, miners: &[MinerProfile], request_id: u64) -> RequestOutcome {
    let mut rng = request_rng(config.seed, request_id);
    let valid = rng.gen::<f64>() < config.valid_fraction;
    let ballot = submit_for_consensus(miners, valid, &mut rng);
    RequestOutcome {
        request_id,
        valid,
        yes_count: ballot.yes_count,
        accepted: ballot.accepted,
    }
}

/// Runs every request with injected validity (no mining).
pub fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let miners = config.miners();
    let log = (0..config.requests)
        .map(|id| simulate_request(config, &miners, id))
        .collect();
    Ok(SimReport::from_outcomes(config.clone(), log))
}

/// Like [`run_simulation`], but every request carries a really mined block
/// that each miner checks with the ledger's verification rules before
/// applying its behavior. Invalid requests are mined blocks whose contract
/// hash was altered afterwards. Accepted valid blocks are appended; accepted
/// invalid ones are counted and discarded so the chain stays usable.
pub fn run_end_to_end(config: &SimConfig) -> Result<(SimReport, Chain), SimError> {
    config.validate()?;
    let miners = config.miners();
    let root = KeyPair::from_seed(sha256(&config.seed.to_le_bytes()).as_bytes())
        .expect("digest is 32 bytes");
    let mut chain = Chain::new(&root.public_key(), config.difficulty);
    let mut owner = root;
    let mut log = Vec::with_capacity(config.requests as usize);

    for request_id in 0..config.requests {
        let mut rng = request_rng(config.seed, request_id);
        let valid = rng.gen::<f64>() < config.valid_fraction;

        let next_owner = KeyPair::from_seed(
            sha256(format!("sim-owner\n{}\n{request_id}", config.seed).as_bytes()).as_bytes(),
        )
        .expect("digest is 32 bytes");
        let submission = LedgerSubmission {
            contract_id: format!("{request_id:032x}"),
            parent_contract_id: String::new(),
            contract_hash: sha256(format!("sim-contract-{request_id}").as_bytes()),
            signatory_ids: alloc::vec!["sim".to_string()],
            owner_pubkey: next_owner.public_key(),
        };
        let miner = &miners[(request_id % miners.len() as u64) as usize];
        let header = chain.prepare_block(&submission, &owner, &miner.id, request_id)?;
        let mut block = mine(&header, config.difficulty, 0, None)?;
        if !valid {
            block.header.payload.contract_hash = Digest256::ZERO;
        }

        let verdicts: Vec<bool> = miners
            .iter()
            .map(|m| {
                let sees_valid = check_block(&block, chain.tip(), config.difficulty).is_ok();
                miner_verdict(m, sees_valid, rng.gen::<f64>())
            })
            .collect();
        let yes_count = verdicts.iter().filter(|v| **v).count();
        let accepted = yes_count >= quorum_threshold(miners.len());
        if accepted && valid {
            chain.append_block(block, &verdicts);
            owner = next_owner;
        }
        log.push(RequestOutcome {
            request_id,
            valid,
            yes_count,
            accepted,
        });
    }
    Ok((SimReport::from_outcomes(config.clone(), log), chain))
}

/// P[X ≥ M − T + 1] for X ~ Binomial(M, p), T = ⌈0.51·M⌉: the chance that
/// enough miners invert a valid block's verdict to sink it. Exact summation.
pub fn analytic_failure_probability(miner_count: usize, p: f64) -> f64 {
    if miner_count == 0 {
        return 0.0;
    }
    let m = miner_count;
    let first = m - quorum_threshold(m) + 1;
    let q = 1.0 - p;
    let total: f64 = (first..=m)
        .map(|k| binomial(m, k) * powu(p, k) * powu(q, m - k))
        .sum();
    total.clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn powu(base: f64, mut exp: usize) -> f64 {
    let mut result = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            result *= b;
        }
        b *= b;
        exp >>= 1;
    }
    result
}

// core has no sqrt without std; Newton iteration is exact enough for an error bar.
fn sqrt(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut y = if x > 1.0 { x } else { 1.0 };
    for _ in 0..64 {
        let next = 0.5 * (y + x / y);
        if next == y {
            break;
        }
        y = next;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        let honest = MinerProfile::new("h", MinerBehavior::Honest);
        let liar = MinerProfile::new("l", MinerBehavior::AlwaysInverter);
        let noisy = MinerProfile::new("n", MinerBehavior::BernoulliInverter { p: 0.1 });
        assert!(miner_verdict(&honest, true, 0.0));
        assert!(!miner_verdict(&honest, false, 0.0));
        assert!(!miner_verdict(&liar, true, 0.99));
        assert!(!miner_verdict(&noisy, true, 0.05));
        assert!(miner_verdict(&noisy, true, 0.95));
        assert!(miner_verdict(&noisy, false, 0.05));
    }

    #[test]
    fn consensus_examples() {
        let mut rng = request_rng(1, 0);
        let honest: Vec<_> = (0..5).map(|i| MinerProfile::new(format!("{i}"), MinerBehavior::Honest)).collect();
        assert_eq!(
            submit_for_consensus(&honest, true, &mut rng),
            Ballot { yes_count: 5, accepted: true }
        );
        let liars: Vec<_> = (0..5).map(|i| MinerProfile::new(format!("{i}"), MinerBehavior::AlwaysInverter)).collect();
        assert_eq!(
            submit_for_consensus(&liars, true, &mut rng),
            Ballot { yes_count: 0, accepted: false }
        );
        let mut mixed = honest[..3].to_vec();
        mixed.extend_from_slice(&liars[..2]);
        assert_eq!(
            submit_for_consensus(&mixed, true, &mut rng),
            Ballot { yes_count: 3, accepted: true }
        );
    }

    #[test]
    fn oracle_examples() {
        let v = analytic_failure_probability(5, 0.1);
        assert!((v - 0.00856).abs() < 1e-12, "{v}");
        for m in [1, 2, 5, 25, 100] {
            assert_eq!(analytic_failure_probability(m, 0.0), 0.0);
            assert_eq!(analytic_failure_probability(m, 1.0), 1.0);
        }
        assert_eq!(analytic_failure_probability(1, 0.5), 0.5);
    }

    #[test]
    fn oracle_decreases_with_more_miners() {
        let values: Vec<f64> = [5, 15, 25, 45]
            .iter()
            .map(|m| analytic_failure_probability(*m, 0.1))
            .collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    }

    #[test]
    fn noiseless_network_never_fails() {
        let cfg = SimConfig { noise_p: 0.0, requests: 1000, ..SimConfig::default() };
        let r = run_simulation(&cfg).unwrap();
        assert_eq!(r.truthful_request_failure_rate, 0.0);
        assert_eq!(r.counters.valid_requests, 1000);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = SimConfig { requests: 2000, valid_fraction: 0.5, ..SimConfig::default() };
        assert_eq!(run_simulation(&cfg).unwrap(), run_simulation(&cfg).unwrap());
        let other = SimConfig { seed: 43, ..cfg.clone() };
        assert_ne!(run_simulation(&cfg).unwrap().log, run_simulation(&other).unwrap().log);
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            SimConfig { miner_count: 0, ..SimConfig::default() }.validate(),
            Err(SimError::NoMiners)
        );
        assert!(SimConfig { noise_p: 1.5, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig {
            adversary_mode: AdversaryMode::FixedSubset { k: 6 },
            ..SimConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn end_to_end_mode_mines_and_checks() {
        let cfg = SimConfig {
            miner_count: 5,
            adversary_mode: AdversaryMode::FixedSubset { k: 2 },
            requests: 20,
            valid_fraction: 0.5,
            difficulty: 1,
            seed: 7,
            ..SimConfig::default()
        };
        let (report, chain) = run_end_to_end(&cfg).unwrap();
        assert_eq!(report.truthful_request_failure_rate, 0.0);
        assert_eq!(report.adversarial_acceptance_rate, 0.0);
        assert_eq!(chain.len() as u64, 1 + report.counters.valid_requests);
        assert_eq!(chain.verify(), crate::ledger::ChainVerdict::Valid);
        assert!(report.counters.invalid_requests > 0);
    }

    #[test]
    fn sqrt_matches_known_values() {
        for (x, want) in [(4.0, 2.0), (2.0, core::f64::consts::SQRT_2), (0.0, 0.0), (1e-8, 1e-4)] {
            assert!((sqrt(x) - want).abs() < 1e-15 * want.max(1.0), "{x}");
        }
    }
}
