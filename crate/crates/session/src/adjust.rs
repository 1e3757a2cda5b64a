//! Reviewer edits to a recorded turn and the recomputation they drive.

use std::collections::{BTreeMap, BTreeSet};

use scsim_agents::engine::{normalize_requests, Deliberation, ReplyOverrides};
use scsim_agents::protocol::{PlanRecord, ReplyDirection, RequestRecord};
use scsim_agents::AgentTurnRecord;
use scsim_core::query::{exclusion_set, query_candidates, CandidateList, QueryConstraint};
use scsim_core::{CompanyId, Dataset, EdgeSet, FeatureFrame};
use serde::{Deserialize, Serialize};

use crate::SessionError;

pub const DEFAULT_NOTE: &str = "Please reconsider this request.";

/// What an adjustment points at inside one firm's turn record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdjustTarget {
    Company { company: CompanyId },
    Plan { company: CompanyId, plan: usize },
    Request { company: CompanyId, request: usize },
    Candidate { company: CompanyId, plan: usize, candidate: usize },
    /// The reply `company` gave to `requester`.
    Reply { company: CompanyId, requester: CompanyId },
}

impl AdjustTarget {
    pub fn company(&self) -> &CompanyId {
        match self {
            AdjustTarget::Company { company }
            | AdjustTarget::Plan { company, .. }
            | AdjustTarget::Request { company, .. }
            | AdjustTarget::Candidate { company, .. }
            | AdjustTarget::Reply { company, .. } => company,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustAction {
    Negate,
    Add,
    Delete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdjustPayload {
    Plan { plan: PlanRecord },
    Request {
        target: CompanyId,
        #[serde(default)]
        reason: String,
        #[serde(default)]
        extra_info: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub target: AdjustTarget,
    pub action: AdjustAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<AdjustPayload>,
    /// Shown to the replier when a reply is negated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default = "default_author")]
    pub author: String,
    /// Accept a negated reply outright instead of asking the replier again.
    #[serde(default)]
    pub force: bool,
}

fn default_author() -> String {
    "reviewer".to_string()
}

fn invalid(msg: impl Into<String>) -> SessionError {
    SessionError::InvalidAdjustment(msg.into())
}

fn record<'a>(records: &'a [AgentTurnRecord], id: &CompanyId) -> Result<&'a AgentTurnRecord, SessionError> {
    records
        .iter()
        .find(|r| &r.company == id)
        .ok_or_else(|| SessionError::UnknownCompany(id.clone()))
}

/// Working copy of one firm's deliberation. Indices keep pointing at the
/// recorded entries; removed entries become `None` until compaction.
struct Draft {
    plans: Vec<Option<PlanRecord>>,
    constraints: Vec<QueryConstraint>,
    candidates: Vec<CandidateList>,
    requests: Vec<Option<RequestRecord>>,
    dropped_candidates: BTreeSet<(usize, usize)>,
}

impl Draft {
    fn from_record(r: &AgentTurnRecord, feature_names: &[String]) -> Self {
        let n = r.plans.len();
        let mut constraints = r.constraints.clone();
        constraints.resize_with(n, || QueryConstraint::uniform(feature_names));
        let mut candidates = r.candidates.clone();
        candidates.resize_with(n, CandidateList::default);
        Self {
            plans: r.plans.iter().cloned().map(Some).collect(),
            constraints,
            candidates,
            requests: r.outgoing.iter().cloned().map(Some).collect(),
            dropped_candidates: BTreeSet::new(),
        }
    }

    fn plan(&self, index: usize) -> Result<&PlanRecord, SessionError> {
        self.plans
            .get(index)
            .and_then(Option::as_ref)
            .ok_or(SessionError::InvalidReference(format!("plan {index}")))
    }
}

/// Everything the engine needs to recompute an adjusted turn.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Recompute {
    pub deliberations: BTreeMap<CompanyId, Deliberation>,
    pub overrides: ReplyOverrides,
    pub synthetic: bool,
}

/// State at the start of the adjusted turn.
pub struct TurnContext<'a> {
    pub dataset: &'a Dataset,
    pub edges: &'a EdgeSet,
    pub features: &'a FeatureFrame,
    pub candidates_k: usize,
}

/// Checks that `adj` refers to something present in `records`.
pub fn validate(adj: &Adjustment, records: &[AgentTurnRecord]) -> Result<(), SessionError> {
    let rec = record(records, adj.target.company())?;
    let payload_kind = adj.payload.as_ref().map(|p| match p {
        AdjustPayload::Plan { .. } => "plan",
        AdjustPayload::Request { .. } => "request",
    });
    match (&adj.target, adj.action) {
        (AdjustTarget::Company { .. }, AdjustAction::Add) => {
            if payload_kind != Some("plan") {
                return Err(invalid("adding to a company needs a plan payload"));
            }
            if let Some(AdjustPayload::Plan { plan }) = &adj.payload {
                if !plan.is_valid() {
                    return Err(invalid("plan needs a description and a reason"));
                }
            }
        }
        (AdjustTarget::Plan { plan, .. }, action) => {
            // plans added earlier in the same batch are checked at apply time
            if *plan >= rec.plans.len() && action != AdjustAction::Add {
                return Err(SessionError::InvalidReference(format!("plan {plan} of {}", rec.company)));
            }
            match action {
                AdjustAction::Delete => {}
                AdjustAction::Add if payload_kind == Some("request") => {}
                AdjustAction::Add => return Err(invalid("adding to a plan needs a request payload")),
                AdjustAction::Negate => return Err(invalid("plans can be added or deleted, not negated")),
            }
        }
        (AdjustTarget::Request { request, .. }, action) => {
            if *request >= rec.outgoing.len() {
                return Err(SessionError::InvalidReference(format!("request {request} of {}", rec.company)));
            }
            if action == AdjustAction::Add {
                return Err(invalid("requests are added to a plan"));
            }
        }
        (AdjustTarget::Candidate { plan, candidate, .. }, action) => {
            let list = rec
                .candidates
                .get(*plan)
                .ok_or(SessionError::InvalidReference(format!("plan {plan} of {}", rec.company)))?;
            if *candidate >= list.entries.len() {
                return Err(SessionError::InvalidReference(format!("candidate {candidate} of plan {plan}")));
            }
            if action == AdjustAction::Add {
                return Err(invalid("candidates can be negated or deleted"));
            }
        }
        (AdjustTarget::Reply { requester, .. }, action) => {
            if !rec.replies.iter().any(|r| &r.requester == requester) {
                return Err(SessionError::InvalidReference(format!("reply of {} to {requester}", rec.company)));
            }
            if action != AdjustAction::Negate {
                return Err(invalid("replies can only be negated"));
            }
            if rec.replies.iter().filter(|r| &r.requester == requester).all(|r| r.accepted) {
                return Err(invalid("only a declined reply can be negated"));
            }
        }
        (AdjustTarget::Company { .. }, _) => return Err(invalid("companies only accept added plans")),
    }
    Ok(())
}

/// Applies `adjustments` in order to the recorded turn and returns the
/// deliberations and reply steering for the engine.
pub fn prepare(records: &[AgentTurnRecord], adjustments: &[Adjustment], ctx: &TurnContext<'_>) -> Result<Recompute, SessionError> {
    let mut drafts: BTreeMap<CompanyId, Draft> = records.iter().map(|r| (r.company.clone(), Draft::from_record(r, &ctx.dataset.feature_names))).collect();
    let mut overrides = ReplyOverrides::default();
    let mut synthetic = false;

    for adj in adjustments {
        validate(adj, records)?;
        let company = adj.target.company().clone();
        let draft = drafts.get_mut(&company).ok_or_else(|| SessionError::UnknownCompany(company.clone()))?;
        match (&adj.target, adj.action) {
            (AdjustTarget::Company { .. }, AdjustAction::Add) => {
                let Some(AdjustPayload::Plan { plan }) = &adj.payload else {
                    return Err(invalid("missing plan payload"));
                };
                let constraint = QueryConstraint::uniform(&ctx.dataset.feature_names);
                let list = if plan.seek_collaboration {
                    let exclude = exclusion_set(ctx.edges, &company);
                    query_candidates(ctx.dataset, ctx.features, &constraint, &exclude, ctx.candidates_k)
                        .map_err(|e| invalid(e.to_string()))?
                } else {
                    CandidateList::default()
                };
                draft.plans.push(Some(plan.clone()));
                draft.constraints.push(constraint);
                draft.candidates.push(list);
            }
            (AdjustTarget::Plan { plan, .. }, AdjustAction::Delete) => {
                draft.plan(*plan)?;
                draft.plans[*plan] = None;
                for r in draft.requests.iter_mut() {
                    if r.as_ref().is_some_and(|r| r.plan_index == *plan) {
                        *r = None;
                    }
                }
            }
            (AdjustTarget::Plan { plan, .. }, AdjustAction::Add) => {
                let kind = draft.plan(*plan)?.request_kind();
                let Some(AdjustPayload::Request { target, reason, extra_info }) = &adj.payload else {
                    return Err(invalid("missing request payload"));
                };
                if !ctx.dataset.companies.contains_key(target) {
                    return Err(SessionError::UnknownCompany(target.clone()));
                }
                draft.requests.push(Some(RequestRecord {
                    plan_index: *plan,
                    target: target.clone(),
                    chosen: true,
                    reason: reason.clone(),
                    extra_info: extra_info.clone(),
                    kind,
                }));
            }
            (AdjustTarget::Request { request, .. }, action) => {
                let slot = draft
                    .requests
                    .get_mut(*request)
                    .ok_or(SessionError::InvalidReference(format!("request {request}")))?;
                match action {
                    AdjustAction::Delete => *slot = None,
                    AdjustAction::Negate => {
                        if let Some(r) = slot.as_mut() {
                            r.chosen = !r.chosen;
                        }
                    }
                    AdjustAction::Add => unreachable!("rejected by validate"),
                }
            }
            (AdjustTarget::Candidate { plan, candidate, .. }, action) => {
                let kind = draft.plan(*plan)?.request_kind();
                let cand = draft.candidates[*plan].entries[*candidate].clone();
                let existing = draft
                    .requests
                    .iter_mut()
                    .flatten()
                    .find(|r| r.plan_index == *plan && r.target == cand.id);
                match (action, existing) {
                    (AdjustAction::Delete, _) => {
                        draft.dropped_candidates.insert((*plan, *candidate));
                        for r in draft.requests.iter_mut() {
                            if r.as_ref().is_some_and(|r| r.plan_index == *plan && r.target == cand.id) {
                                *r = None;
                            }
                        }
                    }
                    (AdjustAction::Negate, Some(r)) => r.chosen = !r.chosen,
                    (AdjustAction::Negate, None) => draft.requests.push(Some(RequestRecord {
                        plan_index: *plan,
                        target: cand.id.clone(),
                        chosen: true,
                        reason: adj.note.clone().unwrap_or_default(),
                        extra_info: String::new(),
                        kind,
                    })),
                    (AdjustAction::Add, _) => unreachable!("rejected by validate"),
                }
            }
            (AdjustTarget::Reply { company, requester }, AdjustAction::Negate) => {
                let key = (company.clone(), requester.clone());
                overrides
                    .notes
                    .insert(key.clone(), adj.note.clone().unwrap_or_else(|| DEFAULT_NOTE.to_string()));
                if adj.force {
                    overrides.forced.insert(key);
                    synthetic = true;
                }
            }
            _ => return Err(invalid("unsupported adjustment")),
        }
    }

    let mut deliberations = BTreeMap::new();
    for rec in records {
        let draft = drafts.remove(&rec.company).expect("one draft per record");
        let d = compact(ctx, &rec.company, draft, rec);
        deliberations.insert(rec.company.clone(), d);
    }
    for rec in records {
        if !rec.inbox.is_empty() {
            overrides
                .reuse
                .insert(rec.company.clone(), (rec.inbox.clone(), rec.replies.clone()));
        }
    }
    Ok(Recompute {
        deliberations,
        overrides,
        synthetic,
    })
}

fn compact(ctx: &TurnContext<'_>, id: &CompanyId, draft: Draft, rec: &AgentTurnRecord) -> Deliberation {
    let mut remap = BTreeMap::new();
    let mut plans = Vec::new();
    let mut constraints = Vec::new();
    let mut candidates = Vec::new();
    for (i, ((p, c), mut l)) in draft.plans.into_iter().zip(draft.constraints).zip(draft.candidates).enumerate() {
        if let Some(p) = p {
            let mut j = 0;
            l.entries.retain(|_| {
                j += 1;
                !draft.dropped_candidates.contains(&(i, j - 1))
            });
            remap.insert(i, plans.len());
            plans.push(p);
            constraints.push(c);
            candidates.push(l);
        }
    }
    let mut grouped: Vec<Vec<RequestRecord>> = vec![Vec::new(); plans.len()];
    let mut seen = BTreeSet::new();
    for r in draft.requests.into_iter().flatten() {
        if let Some(&j) = remap.get(&r.plan_index) {
            if seen.insert((j, r.target.clone())) {
                grouped[j].push(r);
            }
        }
    }
    let outgoing = normalize_requests(ctx.dataset, ctx.edges, id, &plans, grouped);
    Deliberation {
        company: id.clone(),
        plans,
        constraints,
        candidates,
        outgoing,
        failure: rec.failure.clone(),
    }
}

/// The reply a negation targets, for display.
pub fn reply_direction(records: &[AgentTurnRecord], company: &CompanyId, requester: &CompanyId) -> Option<ReplyDirection> {
    records
        .iter()
        .find(|r| &r.company == company)?
        .replies
        .iter()
        .find(|r| &r.requester == requester && !r.accepted)
        .map(|r| r.direction)
}
