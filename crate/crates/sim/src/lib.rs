//! Deterministic multi-peer simulation of a collaboration room: trace-driven
//! in-situ devices, scripted ex-situ editors and a virtual network.

pub mod client;
pub mod frames;
pub mod harness;
pub mod latency;
pub mod live;
pub mod mutate;
pub mod scenario;
pub mod streams;
pub mod synth;
pub mod trace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("invalid trace: {0}")]
    TraceInvalid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}
