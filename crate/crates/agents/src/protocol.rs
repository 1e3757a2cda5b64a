//! Records exchanged between the four stages of a turn and the policy interface.

use std::fmt;

use scsim_core::query::{CandidateList, QueryConstraint};
use scsim_core::{CompanyId, Edge, FeatureVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::view::AgentView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Plan,
    Query,
    Request,
    Reply,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Plan => "plan",
            Stage::Query => "query",
            Stage::Request => "request",
            Stage::Reply => "reply",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{stage} output rejected: {message}")]
    SchemaViolation { stage: Stage, message: String },
    #[error("{stage} stage failed after {attempts} attempts: {message}")]
    Exhausted { stage: Stage, attempts: usize, message: String },
}

/// A policy error pinned to the agent and stage it came from. The agent
/// no-ops for the rest of the turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFailure {
    pub company: CompanyId,
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub description: String,
    pub reason: String,
    pub seek_collaboration: bool,
    /// Only meaningful when `seek_collaboration` is set.
    pub seek_suppliers: bool,
}

impl PlanRecord {
    pub fn request_kind(&self) -> RequestKind {
        match (self.seek_collaboration, self.seek_suppliers) {
            (true, true) => RequestKind::AddAsSupplier,
            (true, false) => RequestKind::AddAsCustomer,
            (false, _) => RequestKind::Terminate,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.description.trim().is_empty() && !self.reason.trim().is_empty()
    }
}

/// `AddAsSupplier`: the requester wants the target as one of its suppliers.
/// `AddAsCustomer`: the requester wants the target as one of its customers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    AddAsSupplier,
    AddAsCustomer,
    Terminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub plan_index: usize,
    pub target: CompanyId,
    pub chosen: bool,
    pub reason: String,
    pub extra_info: String,
    pub kind: RequestKind,
}

impl RequestRecord {
    /// The edge an accepted collaboration request would add.
    pub fn proposed_edge(&self, requester: &CompanyId) -> Option<Edge> {
        match self.kind {
            RequestKind::AddAsSupplier => Some(Edge::new(self.target.clone(), requester.clone())),
            RequestKind::AddAsCustomer => Some(Edge::new(requester.clone(), self.target.clone())),
            RequestKind::Terminate => None,
        }
    }

    pub fn direction(&self) -> Option<ReplyDirection> {
        match self.kind {
            RequestKind::AddAsSupplier => Some(ReplyDirection::RequesterWantsToBuy),
            RequestKind::AddAsCustomer => Some(ReplyDirection::RequesterWantsToSupply),
            RequestKind::Terminate => None,
        }
    }
}

/// The requester's side of the proposed relationship, from the target's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReplyDirection {
    /// The requester would become the target's supplier.
    RequesterWantsToSupply,
    /// The requester would become the target's customer.
    RequesterWantsToBuy,
}

impl ReplyDirection {
    pub fn edge(self, requester: &CompanyId, target: &CompanyId) -> Edge {
        match self {
            ReplyDirection::RequesterWantsToSupply => Edge::new(requester.clone(), target.clone()),
            ReplyDirection::RequesterWantsToBuy => Edge::new(target.clone(), requester.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplyRecord {
    pub requester: CompanyId,
    pub accepted: bool,
    pub reason: String,
    pub direction: ReplyDirection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InboxEntry {
    pub requester: CompanyId,
    pub industry: String,
    /// Requester features at the turn's timestamp.
    pub features: FeatureVector,
    pub extra_info: String,
    /// Reviewer note attached when a reply is re-run on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inbox {
    pub wants_to_supply: Vec<InboxEntry>,
    pub wants_to_buy: Vec<InboxEntry>,
}

impl Inbox {
    pub fn is_empty(&self) -> bool {
        self.wants_to_supply.is_empty() && self.wants_to_buy.is_empty()
    }

    pub fn len(&self) -> usize {
        self.wants_to_supply.len() + self.wants_to_buy.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (ReplyDirection, &InboxEntry)> {
        self.wants_to_supply
            .iter()
            .map(|e| (ReplyDirection::RequesterWantsToSupply, e))
            .chain(self.wants_to_buy.iter().map(|e| (ReplyDirection::RequesterWantsToBuy, e)))
    }

    pub fn list(&self, direction: ReplyDirection) -> &[InboxEntry] {
        match direction {
            ReplyDirection::RequesterWantsToSupply => &self.wants_to_supply,
            ReplyDirection::RequesterWantsToBuy => &self.wants_to_buy,
        }
    }

    pub fn list_mut(&mut self, direction: ReplyDirection) -> &mut Vec<InboxEntry> {
        match direction {
            ReplyDirection::RequesterWantsToSupply => &mut self.wants_to_supply,
            ReplyDirection::RequesterWantsToBuy => &mut self.wants_to_buy,
        }
    }
}

/// What happened to one of the agent's own chosen collaboration requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub plan_index: usize,
    pub target: CompanyId,
    pub kind: RequestKind,
    pub accepted: bool,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeltaOp {
    Add,
    Remove,
}

/// Why an edge changed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeltaSource {
    /// Accepted collaboration request issued by the record's company.
    Request { plan_index: usize },
    /// Termination issued by the record's company.
    Termination { plan_index: usize },
    /// A reviewer forced the outcome.
    Adjustment,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AppliedDelta {
    pub edge: Edge,
    pub op: DeltaOp,
    pub source: DeltaSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTurnRecord {
    pub company: CompanyId,
    pub plans: Vec<PlanRecord>,
    /// Aligned with `plans`.
    pub constraints: Vec<QueryConstraint>,
    /// Aligned with `plans`; empty for termination plans.
    pub candidates: Vec<CandidateList>,
    pub outgoing: Vec<RequestRecord>,
    pub outcomes: Vec<RequestOutcome>,
    pub inbox: Inbox,
    /// Replies this company gave to its inbox.
    pub replies: Vec<ReplyRecord>,
    pub applied: Vec<AppliedDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<PolicyFailure>,
}

impl AgentTurnRecord {
    pub fn empty(company: CompanyId) -> Self {
        Self {
            company,
            plans: Vec::new(),
            constraints: Vec::new(),
            candidates: Vec::new(),
            outgoing: Vec::new(),
            outcomes: Vec::new(),
            inbox: Inbox::default(),
            replies: Vec::new(),
            applied: Vec::new(),
            failure: None,
        }
    }
}

/// Decision maker for one firm. Every method sees only the firm's frozen view
/// of the start-of-turn state.
pub trait AgentPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn plan(&self, view: &AgentView, seed: u64) -> Result<Vec<PlanRecord>, PolicyError>;

    /// One constraint per plan.
    fn constrain(&self, view: &AgentView, plans: &[PlanRecord], seed: u64) -> Result<Vec<QueryConstraint>, PolicyError>;

    /// One request list per plan. `plan_index` and `kind` are filled in by the engine.
    fn request(
        &self,
        view: &AgentView,
        plans: &[PlanRecord],
        constraints: &[QueryConstraint],
        candidates: &[CandidateList],
        seed: u64,
    ) -> Result<Vec<Vec<RequestRecord>>, PolicyError>;

    fn reply(&self, view: &AgentView, inbox: &Inbox, seed: u64) -> Result<Vec<ReplyRecord>, PolicyError>;
}
