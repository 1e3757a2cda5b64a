//! Simulation sessions: the path tree, reviewer adjustments, knowledge edits,
//! the action journal, export/import, and the view payloads the UI renders.

pub mod adjust;
pub mod config;
pub mod session;
pub mod store;
pub mod tree;
pub mod views;

use scsim_core::CompanyId;
use thiserror::Error;

pub use adjust::{AdjustAction, AdjustPayload, AdjustTarget, Adjustment};
pub use config::{PolicyConfig, SessionConfig, TransportConfig};
pub use session::{JournalEvent, KnowledgeScope, RunJob, RunResult, Session};
pub use tree::{NodeId, NodeKind, NodeStatus, PathTree, SimulationNode};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("unknown company `{0}`")]
    UnknownCompany(CompanyId),
    #[error("node {0} has no recorded turn to adjust")]
    NodeNotSimulated(usize),
    #[error("no such item: {0}")]
    InvalidReference(String),
    #[error("invalid adjustment: {0}")]
    InvalidAdjustment(String),
    #[error("nothing staged for node {0}")]
    NothingStaged(usize),
    #[error("unknown view `{0}`")]
    UnknownView(String),
    #[error("import failed at line {line}: {message}")]
    Import { line: usize, message: String },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error(transparent)]
    Engine(#[from] scsim_agents::engine::EngineError),
    #[error(transparent)]
    Simulation(#[from] scsim_agents::simulate::SimulationError),
    #[error(transparent)]
    Model(#[from] scsim_core::ModelError),
    #[error(transparent)]
    Explain(#[from] scsim_core::explain::ExplainError),
    #[error(transparent)]
    Layout(#[from] scsim_core::layout::LayoutError),
    #[error(transparent)]
    Horizon(#[from] scsim_core::horizon::HorizonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
