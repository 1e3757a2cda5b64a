//! One simulation turn: every agent plans, queries and requests against the same
//! frozen snapshot, targets reply to their inboxes, and all deltas are committed at once.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use scsim_core::model::partners_in;
use scsim_core::query::{exclusion_set, query_candidates, CandidateList, QueryConstraint, DEFAULT_K};
use scsim_core::{CompanyId, Dataset, Edge, EdgeSet, FeatureFrame, ModelError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::{
    AgentPolicy, AgentTurnRecord, AppliedDelta, DeltaOp, DeltaSource, Inbox, InboxEntry, PlanRecord, PolicyError,
    PolicyFailure, ReplyRecord, RequestKind, RequestOutcome, RequestRecord, Stage,
};
use crate::view::{build_view, AgentView, World};

pub type PolicyMap = BTreeMap<CompanyId, Arc<dyn AgentPolicy>>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reference length must be at least 1")]
    InvalidReferenceLength,
    #[error("candidate count must be at least 1")]
    InvalidCandidateCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnConfig {
    pub reference_length: usize,
    pub candidates_k: usize,
    /// Restrict Stages I–III to these firms; everyone still replies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliberating: Option<BTreeSet<CompanyId>>,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for TurnConfig {
    fn default() -> Self {
        Self {
            reference_length: 4,
            candidates_k: DEFAULT_K,
            deliberating: None,
            parallel: true,
        }
    }
}

impl TurnConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if self.reference_length == 0 {
            return Err(EngineError::InvalidReferenceLength);
        }
        if self.candidates_k == 0 {
            return Err(EngineError::InvalidCandidateCount);
        }
        Ok(())
    }
}

/// Per-agent, per-turn seed derived from the run seed.
pub fn agent_seed(seed: u64, t: usize, id: &CompanyId) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((t as u64).to_le_bytes());
    h.update(id.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Stages I–III output of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deliberation {
    pub company: CompanyId,
    pub plans: Vec<PlanRecord>,
    pub constraints: Vec<QueryConstraint>,
    pub candidates: Vec<CandidateList>,
    pub outgoing: Vec<RequestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<PolicyFailure>,
}

impl Deliberation {
    pub fn idle(company: CompanyId) -> Self {
        Self {
            company,
            plans: Vec::new(),
            constraints: Vec::new(),
            candidates: Vec::new(),
            outgoing: Vec::new(),
            failure: None,
        }
    }
}

fn failure(company: &CompanyId, stage: Stage, err: PolicyError) -> PolicyFailure {
    log::warn!("{company}: {stage} stage failed: {err}");
    PolicyFailure {
        company: company.clone(),
        stage,
        message: err.to_string(),
    }
}

/// Sets `plan_index` and `kind` from the plans and drops requests that cannot
/// apply: self-targets, unknown firms, terminations of non-partners, and
/// additions of edges that already exist.
pub fn normalize_requests(
    dataset: &Dataset,
    edges: &EdgeSet,
    requester: &CompanyId,
    plans: &[PlanRecord],
    raw: Vec<Vec<RequestRecord>>,
) -> Vec<RequestRecord> {
    let partners = partners_in(edges, requester);
    let mut out = Vec::new();
    for (plan_index, (plan, list)) in plans.iter().zip(raw).enumerate() {
        for mut r in list {
            r.plan_index = plan_index;
            r.kind = plan.request_kind();
            let problem = if &r.target == requester {
                Some("targets itself")
            } else if !dataset.companies.contains_key(&r.target) {
                Some("unknown target")
            } else if r.kind == RequestKind::Terminate && !partners.contains(&r.target) {
                Some("terminates a non-partner")
            } else if r.proposed_edge(requester).is_some_and(|e| edges.contains(&e)) {
                Some("edge already exists")
            } else {
                None
            };
            match problem {
                Some(why) => log::info!("{requester}: dropped request to {} ({why})", r.target),
                None => out.push(r),
            }
        }
    }
    out
}

/// Stages I–III for one agent against the frozen start-of-turn state.
pub fn deliberate(world: &World<'_>, id: &CompanyId, policy: &dyn AgentPolicy, config: &TurnConfig, seed: u64) -> Result<Deliberation, EngineError> {
    let t = world.current();
    let view = build_view(world, id, t, config.reference_length)?;
    let edges = world.timeline.edges(t)?;
    let frame = world.timeline.features(t)?;
    let seed = agent_seed(seed, t, id);
    let mut d = Deliberation::idle(id.clone());

    let plans = match policy.plan(&view, seed) {
        Ok(p) => p,
        Err(e) => {
            d.failure = Some(failure(id, Stage::Plan, e));
            return Ok(d);
        }
    };
    let plans: Vec<PlanRecord> = plans
        .into_iter()
        .filter(|p| {
            let ok = p.is_valid();
            if !ok {
                log::info!("{id}: dropped plan with empty description or reason");
            }
            ok
        })
        .collect();
    if plans.is_empty() {
        return Ok(d);
    }
    d.plans = plans;

    let constraints = match policy.constrain(&view, &d.plans, seed) {
        Ok(c) if c.len() == d.plans.len() => c,
        Ok(c) => {
            let err = PolicyError::SchemaViolation {
                stage: Stage::Query,
                message: format!("{} constraints for {} plans", c.len(), d.plans.len()),
            };
            d.failure = Some(failure(id, Stage::Query, err));
            return Ok(d);
        }
        Err(e) => {
            d.failure = Some(failure(id, Stage::Query, e));
            return Ok(d);
        }
    };
    let exclude = exclusion_set(&edges, id);
    let mut candidates = Vec::with_capacity(d.plans.len());
    for (plan, c) in d.plans.iter().zip(&constraints) {
        if !plan.seek_collaboration {
            candidates.push(CandidateList::default());
            continue;
        }
        match query_candidates(world.dataset, frame, c, &exclude, config.candidates_k) {
            Ok(list) => candidates.push(list),
            Err(e) => {
                let err = PolicyError::SchemaViolation {
                    stage: Stage::Query,
                    message: e.to_string(),
                };
                d.constraints = constraints;
                d.failure = Some(failure(id, Stage::Query, err));
                return Ok(d);
            }
        }
    }
    d.constraints = constraints;
    d.candidates = candidates;

    match policy.request(&view, &d.plans, &d.constraints, &d.candidates, seed) {
        Ok(raw) if raw.len() == d.plans.len() => {
            d.outgoing = normalize_requests(world.dataset, &edges, id, &d.plans, raw);
        }
        Ok(raw) => {
            let err = PolicyError::SchemaViolation {
                stage: Stage::Request,
                message: format!("{} request lists for {} plans", raw.len(), d.plans.len()),
            };
            d.failure = Some(failure(id, Stage::Request, err));
        }
        Err(e) => d.failure = Some(failure(id, Stage::Request, e)),
    }
    Ok(d)
}

fn maybe_par<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

pub fn deliberate_all(
    world: &World<'_>,
    policies: &PolicyMap,
    config: &TurnConfig,
    seed: u64,
) -> Result<BTreeMap<CompanyId, Deliberation>, EngineError> {
    config.validate()?;
    let ids: Vec<&CompanyId> = world
        .dataset
        .company_ids()
        .filter(|id| config.deliberating.as_ref().is_none_or(|set| set.contains(*id)))
        .collect();
    let results = maybe_par(&ids, config.parallel, |id| match policies.get(*id) {
        Some(p) => deliberate(world, id, p.as_ref(), config, seed),
        None => Ok(Deliberation::idle((*id).clone())),
    });
    let mut out = BTreeMap::new();
    for (id, r) in ids.into_iter().zip(results) {
        out.insert(id.clone(), r?);
    }
    Ok(out)
}

/// Groups chosen collaboration requests by target. A requester appears at
/// most once per direction in any inbox; its first request wins.
pub fn assemble_inbox<'a>(
    dataset: &Dataset,
    frame: &FeatureFrame,
    outgoing: impl IntoIterator<Item = (&'a CompanyId, &'a [RequestRecord])>,
) -> BTreeMap<CompanyId, Inbox> {
    let mut inboxes: BTreeMap<CompanyId, Inbox> = BTreeMap::new();
    for (requester, requests) in outgoing {
        for r in requests.iter().filter(|r| r.chosen) {
            let Some(direction) = r.direction() else { continue };
            let Some(company) = dataset.companies.get(requester) else {
                log::warn!("request from unknown company {requester} ignored");
                continue;
            };
            if !dataset.companies.contains_key(&r.target) || &r.target == requester {
                log::warn!("{requester}: invalid request target {} ignored", r.target);
                continue;
            }
            let list = inboxes.entry(r.target.clone()).or_default().list_mut(direction);
            if list.iter().any(|e| &e.requester == requester) {
                continue;
            }
            list.push(InboxEntry {
                requester: requester.clone(),
                industry: company.industry.clone(),
                features: frame.get(requester).cloned().unwrap_or_default(),
                extra_info: r.extra_info.clone(),
                note: None,
            });
        }
    }
    inboxes
}

/// Maps whatever the policy returned onto exactly one reply per inbox entry.
/// Entries without a matching reply are declined.
pub fn align_replies(target: &CompanyId, inbox: &Inbox, raw: &[ReplyRecord]) -> Vec<ReplyRecord> {
    inbox
        .entries()
        .map(|(direction, entry)| {
            let matching = raw
                .iter()
                .find(|r| r.requester == entry.requester && r.direction == direction)
                .or_else(|| raw.iter().find(|r| r.requester == entry.requester));
            match matching {
                Some(r) => ReplyRecord {
                    direction,
                    ..r.clone()
                },
                None => {
                    log::info!("{target}: no reply to {}, treated as declined", entry.requester);
                    ReplyRecord {
                        requester: entry.requester.clone(),
                        accepted: false,
                        reason: "no reply given".to_string(),
                        direction,
                    }
                }
            }
        })
        .collect()
}

/// Edges currently linking `a` and `b`, in either direction.
pub fn termination_edges(snapshot: &EdgeSet, a: &CompanyId, b: &CompanyId) -> Vec<Edge> {
    [Edge::new(a.clone(), b.clone()), Edge::new(b.clone(), a.clone())]
        .into_iter()
        .filter(|e| snapshot.contains(e))
        .collect()
}

/// `(snapshot ∪ accepted) \ terminated`, without self-edges. Termination wins
/// over a same-turn re-add.
pub fn commit_deltas(snapshot: &EdgeSet, terminated: &BTreeSet<Edge>, accepted: &[Edge]) -> EdgeSet {
    let mut next = snapshot.clone();
    for e in accepted {
        if terminated.contains(e) {
            log::debug!("{} -> {} terminated and re-added; termination wins", e.supplier, e.customer);
        }
        next.insert(e.clone());
    }
    next.retain(|e| !terminated.contains(e) && !e.is_self_edge());
    next
}

/// Reply-stage steering used when a turn is recomputed after review.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplyOverrides {
    /// Recorded inbox and replies per target; reused verbatim when the new inbox is identical.
    pub reuse: BTreeMap<CompanyId, (Inbox, Vec<ReplyRecord>)>,
    /// Reviewer notes keyed by (target, requester), shown to the target's reply stage.
    pub notes: BTreeMap<(CompanyId, CompanyId), String>,
    /// (target, requester) pairs whose request is accepted regardless of the reply.
    pub forced: BTreeSet<(CompanyId, CompanyId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    /// Timestamp the agents deliberated on.
    pub t: usize,
    pub edges: EdgeSet,
    pub records: Vec<AgentTurnRecord>,
}

impl TurnOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &PolicyFailure> {
        self.records.iter().filter_map(|r| r.failure.as_ref())
    }
}

type ReplyResult = (Inbox, Vec<ReplyRecord>, Option<PolicyFailure>);

/// Stage IV and the commit, given Stage I–III output for every agent.
pub fn resolve_turn(
    world: &World<'_>,
    deliberations: &BTreeMap<CompanyId, Deliberation>,
    policies: &PolicyMap,
    config: &TurnConfig,
    seed: u64,
    overrides: &ReplyOverrides,
) -> Result<TurnOutcome, EngineError> {
    config.validate()?;
    let t = world.current();
    let edges = world.timeline.edges(t)?;
    let frame = world.timeline.features(t)?;

    let mut inboxes = assemble_inbox(
        world.dataset,
        frame,
        deliberations.iter().map(|(id, d)| (id, d.outgoing.as_slice())),
    );
    for ((target, requester), note) in &overrides.notes {
        if let Some(inbox) = inboxes.get_mut(target) {
            for list in [&mut inbox.wants_to_supply, &mut inbox.wants_to_buy] {
                for e in list.iter_mut().filter(|e| &e.requester == requester) {
                    e.note = Some(note.clone());
                }
            }
        }
    }

    let targets: Vec<(CompanyId, Inbox)> = inboxes.into_iter().collect();
    let replies: Vec<Result<ReplyResult, EngineError>> = maybe_par(&targets, config.parallel, |(target, inbox)| {
        if let Some((old_inbox, old_replies)) = overrides.reuse.get(target) {
            if old_inbox == inbox {
                return Ok((inbox.clone(), old_replies.clone(), None));
            }
        }
        let Some(policy) = policies.get(target) else {
            return Ok((inbox.clone(), align_replies(target, inbox, &[]), None));
        };
        let view: AgentView = build_view(world, target, t, config.reference_length)?;
        match policy.reply(&view, inbox, agent_seed(seed, t, target)) {
            Ok(raw) => Ok((inbox.clone(), align_replies(target, inbox, &raw), None)),
            Err(e) => Ok((inbox.clone(), align_replies(target, inbox, &[]), Some(failure(target, Stage::Reply, e)))),
        }
    });
    let mut reply_map: BTreeMap<CompanyId, ReplyResult> = BTreeMap::new();
    for ((target, _), r) in targets.iter().zip(replies) {
        reply_map.insert(target.clone(), r?);
    }
    for (target, requester) in &overrides.forced {
        if let Some((_, replies, _)) = reply_map.get_mut(target) {
            for r in replies.iter_mut().filter(|r| &r.requester == requester) {
                if !r.accepted {
                    r.accepted = true;
                    r.reason = format!("accepted by reviewer override (was: {})", r.reason);
                }
            }
        }
    }

    let mut terminated = BTreeSet::new();
    let mut accepted = Vec::new();
    let mut outcomes: BTreeMap<CompanyId, Vec<RequestOutcome>> = BTreeMap::new();
    for (id, d) in deliberations {
        for r in d.outgoing.iter().filter(|r| r.chosen) {
            match r.direction() {
                None => terminated.extend(termination_edges(&edges, id, &r.target)),
                Some(direction) => {
                    let reply = reply_map.get(&r.target).and_then(|(_, replies, _)| {
                        replies.iter().find(|x| &x.requester == id && x.direction == direction)
                    });
                    let (ok, reason) = reply.map_or((false, "request not delivered".to_string()), |x| {
                        (x.accepted, x.reason.clone())
                    });
                    if ok {
                        accepted.push(direction.edge(id, &r.target));
                    }
                    outcomes.entry(id.clone()).or_default().push(RequestOutcome {
                        plan_index: r.plan_index,
                        target: r.target.clone(),
                        kind: r.kind,
                        accepted: ok,
                        reason,
                    });
                }
            }
        }
    }
    let next = commit_deltas(&edges, &terminated, &accepted);

    let mut records = Vec::with_capacity(world.dataset.companies.len());
    for id in world.dataset.company_ids() {
        let mut rec = AgentTurnRecord::empty(id.clone());
        if let Some(d) = deliberations.get(id) {
            rec.plans = d.plans.clone();
            rec.constraints = d.constraints.clone();
            rec.candidates = d.candidates.clone();
            rec.outgoing = d.outgoing.clone();
            rec.failure = d.failure.clone();
            for r in d.outgoing.iter().filter(|r| r.chosen) {
                match r.direction() {
                    None => {
                        for e in termination_edges(&edges, id, &r.target) {
                            if !next.contains(&e) {
                                rec.applied.push(AppliedDelta {
                                    edge: e,
                                    op: DeltaOp::Remove,
                                    source: DeltaSource::Termination { plan_index: r.plan_index },
                                });
                            }
                        }
                    }
                    Some(direction) => {
                        let e = direction.edge(id, &r.target);
                        let forced = overrides.forced.contains(&(r.target.clone(), id.clone()));
                        let ok = outcomes
                            .get(id)
                            .is_some_and(|o| o.iter().any(|o| o.target == r.target && o.kind == r.kind && o.accepted));
                        if ok && next.contains(&e) && !edges.contains(&e) {
                            rec.applied.push(AppliedDelta {
                                edge: e,
                                op: DeltaOp::Add,
                                source: if forced {
                                    DeltaSource::Adjustment
                                } else {
                                    DeltaSource::Request { plan_index: r.plan_index }
                                },
                            });
                        }
                    }
                }
            }
            rec.applied.sort();
            rec.applied.dedup();
        }
        rec.outcomes = outcomes.remove(id).unwrap_or_default();
        if let Some((inbox, replies, fail)) = reply_map.remove(id) {
            rec.inbox = inbox;
            rec.replies = replies;
            if rec.failure.is_none() {
                rec.failure = fail;
            }
        }
        records.push(rec);
    }
    Ok(TurnOutcome { t, edges: next, records })
}

/// Full turn from the world's last timestamp.
pub fn run_turn(world: &World<'_>, policies: &PolicyMap, config: &TurnConfig, seed: u64) -> Result<TurnOutcome, EngineError> {
    let deliberations = deliberate_all(world, policies, config, seed)?;
    resolve_turn(world, &deliberations, policies, config, seed, &ReplyOverrides::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ReplyDirection;

    fn e(s: &str, c: &str) -> Edge {
        Edge::from((s, c))
    }

    #[test]
    fn termination_beats_readd() {
        let snap: EdgeSet = [e("S", "A")].into_iter().collect();
        let term: BTreeSet<Edge> = [e("S", "A")].into_iter().collect();
        assert!(commit_deltas(&snap, &term, &[e("S", "A")]).is_empty());
    }

    #[test]
    fn duplicate_accepts_dedupe() {
        let next = commit_deltas(&EdgeSet::new(), &BTreeSet::new(), &[e("A", "B"), e("A", "B")]);
        assert_eq!(next.len(), 1);
    }

    #[test]
    fn self_edges_never_committed() {
        let next = commit_deltas(&EdgeSet::new(), &BTreeSet::new(), &[e("A", "A")]);
        assert!(next.is_empty());
    }

    #[test]
    fn seeds_differ_by_agent_and_turn() {
        let a = CompanyId::from("A");
        let b = CompanyId::from("B");
        assert_ne!(agent_seed(1, 0, &a), agent_seed(1, 0, &b));
        assert_ne!(agent_seed(1, 0, &a), agent_seed(1, 1, &a));
        assert_eq!(agent_seed(1, 0, &a), agent_seed(1, 0, &a));
    }

    #[test]
    fn missing_reply_is_a_decline() {
        let mut inbox = Inbox::default();
        inbox.wants_to_buy.push(InboxEntry {
            requester: "A".into(),
            industry: "x".into(),
            features: Default::default(),
            extra_info: String::new(),
            note: None,
        });
        let replies = align_replies(&"B".into(), &inbox, &[]);
        assert_eq!(replies.len(), 1);
        assert!(!replies[0].accepted);
        assert_eq!(replies[0].direction, ReplyDirection::RequesterWantsToBuy);
    }
}
