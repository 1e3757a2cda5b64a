//! HTTP service and command-line entry points for the supply-chain simulator.

pub mod api;
pub mod commands;

pub use api::{router, AppState};
