//! Session settings chosen on the control panel.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use scsim_agents::llm::transport::{HttpTransport, RecordingTransport, ReplayTransport, Transport};
use scsim_agents::llm::{LlmConfig, LlmPolicy};
use scsim_agents::rule::{RuleParams, RulePolicy};
use scsim_agents::{AgentPolicy, PolicyMap, TurnConfig};
use scsim_core::explain::{ExplainConfig, ExplainModelKind};
use scsim_core::horizon::SeriesModelKind;
use scsim_core::metrics::PerformanceMetricKind;
use scsim_core::query::DEFAULT_K;
use scsim_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::SessionError;

/// Where chat-model calls go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TransportConfig {
    /// Live endpoint from `SCSIM_LLM_URL` / `SCSIM_LLM_KEY`.
    Env,
    Replay { dir: PathBuf },
    /// Live endpoint, with every exchange written to `dir`.
    Record { dir: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    Rule {
        #[serde(default)]
        params: RuleParams,
    },
    Llm {
        llm: LlmConfig,
        transport: TransportConfig,
    },
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::Rule {
            params: RuleParams::default(),
        }
    }
}

impl PolicyConfig {
    pub fn build(&self) -> Result<Arc<dyn AgentPolicy>, SessionError> {
        Ok(match self {
            PolicyConfig::Rule { params } => Arc::new(RulePolicy::new(*params)),
            PolicyConfig::Llm { llm, transport } => {
                let t: Arc<dyn Transport> = match transport {
                    TransportConfig::Env => Arc::new(HttpTransport::from_env().map_err(|e| SessionError::InvalidConfig(e.to_string()))?),
                    TransportConfig::Replay { dir } => Arc::new(ReplayTransport::new(dir.clone())),
                    TransportConfig::Record { dir } => Arc::new(
                        RecordingTransport::new(
                            HttpTransport::from_env().map_err(|e| SessionError::InvalidConfig(e.to_string()))?,
                            dir.clone(),
                        )
                        .map_err(|e| SessionError::InvalidConfig(e.to_string()))?,
                    ),
                };
                Arc::new(LlmPolicy::new(t, llm.clone()))
            }
        })
    }

    /// The same policy for every firm.
    pub fn policy_map(&self, dataset: &Dataset) -> Result<PolicyMap, SessionError> {
        let policy = self.build()?;
        Ok(dataset.company_ids().map(|id| (id.clone(), policy.clone())).collect::<BTreeMap<_, _>>())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub performance_metric: PerformanceMetricKind,
    pub explain_model: ExplainModelKind,
    /// `None` selects the Lasso penalty by leave-one-out.
    pub explain_lambda: Option<f64>,
    pub horizon_model: SeriesModelKind,
    pub horizon_window: usize,
    pub horizon_lambda: f64,
    pub policy: PolicyConfig,
    pub reference_length: usize,
    pub simulation_turns: usize,
    pub candidates_k: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            performance_metric: PerformanceMetricKind::PageRank,
            explain_model: ExplainModelKind::Lasso,
            explain_lambda: None,
            horizon_model: SeriesModelKind::Linear,
            horizon_window: 4,
            horizon_lambda: 0.01,
            policy: PolicyConfig::default(),
            reference_length: 4,
            simulation_turns: 4,
            candidates_k: DEFAULT_K,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.to_string()));
        if self.reference_length == 0 {
            return bad("reference length must be at least 1");
        }
        if self.simulation_turns == 0 {
            return bad("simulation turns must be at least 1");
        }
        if self.candidates_k == 0 {
            return bad("candidate count must be at least 1");
        }
        if self.horizon_window == 0 {
            return bad("horizon window must be at least 1");
        }
        if !self.horizon_lambda.is_finite() || self.horizon_lambda < 0.0 {
            return bad("horizon lambda must be finite and non-negative");
        }
        if self.explain_lambda.is_some_and(|l| !l.is_finite() || l < 0.0) {
            return bad("explain lambda must be finite and non-negative");
        }
        Ok(())
    }

    pub fn turn_config(&self) -> TurnConfig {
        TurnConfig {
            reference_length: self.reference_length,
            candidates_k: self.candidates_k,
            deliberating: None,
            parallel: true,
        }
    }

    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig {
            kind: self.explain_model,
            lambda: self.explain_lambda,
            metric: self.performance_metric,
        }
    }
}
