//! Storage, HTTP service and CLI around `pact-core`.

pub mod api;
pub mod cli;
pub mod client;
pub mod engine;
pub mod mining;
pub mod service;
pub mod simio;
pub mod store;

pub use engine::{Attestation, ChainSettings, Engine, EngineError, FixedClock, SystemClock};
