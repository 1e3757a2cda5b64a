//! Agents for the supply-chain simulator: the four-stage turn engine, a
//! deterministic rule policy, a chat-model policy, and the experiment harness.

pub mod engine;
pub mod experiment;
pub mod llm;
pub mod protocol;
pub mod rule;
pub mod simulate;
pub mod view;

pub use engine::{run_turn, PolicyMap, TurnConfig, TurnOutcome};
pub use protocol::{AgentPolicy, AgentTurnRecord};
pub use view::{AgentView, KnowledgeBase, World};
