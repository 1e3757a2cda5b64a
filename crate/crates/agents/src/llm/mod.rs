//! Policy backed by a chat-completion model.

pub mod parse;
pub mod prompt;
pub mod transport;

use std::sync::Arc;

use scsim_core::query::{CandidateList, QueryConstraint};
use serde::{Deserialize, Serialize};

use crate::protocol::{AgentPolicy, Inbox, PlanRecord, PolicyError, ReplyRecord, RequestRecord, Stage};
use crate::view::AgentView;
use transport::{ChatMessage, ChatRequest, Transport};

pub const DEFAULT_MAX_REPAIR: usize = 3;

/// Sampling settings are passed through untouched; unset means provider default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub model: String,
    #[serde(default = "default_repair")]
    pub max_repair: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

fn default_repair() -> usize {
    DEFAULT_MAX_REPAIR
}

impl LlmConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            max_repair: DEFAULT_MAX_REPAIR,
            temperature: None,
            top_p: None,
            max_tokens: None,
        }
    }

    pub fn from_env() -> Self {
        Self::new(std::env::var(transport::ENV_MODEL).unwrap_or_else(|_| "default".into()))
    }
}

pub struct LlmPolicy {
    transport: Arc<dyn Transport>,
    config: LlmConfig,
}

impl LlmPolicy {
    pub fn new(transport: Arc<dyn Transport>, config: LlmConfig) -> Self {
        Self { transport, config }
    }

    fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_tokens,
        }
    }

    /// One call, then up to `max_repair` retries that show the model its
    /// previous answer and the validation error.
    fn converse<T>(&self, stage: Stage, system: String, user: String, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, PolicyError> {
        let mut messages = vec![ChatMessage::system(system), ChatMessage::user(user)];
        let attempts = self.config.max_repair + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let answer = self
                .transport
                .complete(&self.request(messages.clone()))
                .map_err(|e| PolicyError::Transport(e.to_string()))?;
            match parse(&answer) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{stage} answer rejected on attempt {}: {e}", attempt + 1);
                    messages.push(ChatMessage::assistant(answer));
                    messages.push(ChatMessage::user(format!(
                        "Your previous answer could not be used: {e}. Respond again with only the JSON in the required format."
                    )));
                    last_error = e;
                }
            }
        }
        Err(PolicyError::Exhausted {
            stage,
            attempts,
            message: last_error,
        })
    }
}

impl AgentPolicy for LlmPolicy {
    fn name(&self) -> &str {
        "llm"
    }

    fn plan(&self, view: &AgentView, _seed: u64) -> Result<Vec<PlanRecord>, PolicyError> {
        self.converse(Stage::Plan, prompt::plan_system(), prompt::plan_user(view), parse::parse_plans)
    }

    fn constrain(&self, view: &AgentView, plans: &[PlanRecord], _seed: u64) -> Result<Vec<QueryConstraint>, PolicyError> {
        self.converse(
            Stage::Query,
            prompt::query_system(&view.feature_names),
            prompt::query_user(view, plans),
            |text| parse::parse_constraints(text, plans.len(), &view.feature_names),
        )
    }

    fn request(
        &self,
        view: &AgentView,
        plans: &[PlanRecord],
        constraints: &[QueryConstraint],
        candidates: &[CandidateList],
        _seed: u64,
    ) -> Result<Vec<Vec<RequestRecord>>, PolicyError> {
        self.converse(
            Stage::Request,
            prompt::request_system(),
            prompt::request_user(view, plans, constraints, candidates),
            |text| parse::parse_requests(text, plans.len()),
        )
    }

    fn reply(&self, view: &AgentView, inbox: &Inbox, _seed: u64) -> Result<Vec<ReplyRecord>, PolicyError> {
        self.converse(Stage::Reply, prompt::reply_system(), prompt::reply_user(view, inbox), |text| {
            parse::parse_replies(text, inbox)
        })
    }
}
