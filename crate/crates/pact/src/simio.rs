//! Running simulations on a thread pool and exporting their results.

use std::io::Write;

use pact_core::simnet::{simulate_request, RequestOutcome, SimConfig, SimCounters, SimError, SimReport};
use rayon::prelude::*;
use serde::Serialize;

/// Same report as [`pact_core::simnet::run_simulation`], computed in
/// parallel. Each request owns its random stream, so the split across
/// threads cannot change any outcome.
pub fn run_parallel(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let miners = config.miners();
    let log: Vec<RequestOutcome> = (0..config.requests)
        .into_par_iter()
        .map(|id| simulate_request(config, &miners, id))
        .collect();
    Ok(SimReport::from_outcomes(config.clone(), log))
}

/// The summary document: config echo, counters, rates and the oracle value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub config: SimConfig,
    #[serde(flatten)]
    pub counters: SimCounters,
    pub truthful_request_failure_rate: f64,
    pub adversarial_acceptance_rate: f64,
    pub analytic_failure_probability: f64,
    pub standard_error: f64,
    /// (measured − oracle) / standard error; 0 when the oracle is exact.
    pub z_score: f64,
}

impl From<&SimReport> for SimSummary {
    fn from(r: &SimReport) -> Self {
        let se = r.oracle_standard_error();
        let diff = r.truthful_request_failure_rate - r.analytic_failure_probability;
        SimSummary {
            config: r.config.clone(),
            counters: r.counters,
            truthful_request_failure_rate: r.truthful_request_failure_rate,
            adversarial_acceptance_rate: r.adversarial_acceptance_rate,
            analytic_failure_probability: r.analytic_failure_probability,
            standard_error: se,
            z_score: if se > 0.0 { diff / se } else { 0.0 },
        }
    }
}

/// Writes the per-request log as `request_id,valid,yes_count,accepted`.
pub fn write_csv<W: Write>(log: &[RequestOutcome], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in log {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}
