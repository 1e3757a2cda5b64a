#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use scsim_agents::engine::PolicyMap;
use scsim_agents::protocol::{AgentPolicy, Inbox, PlanRecord, PolicyError, ReplyRecord, RequestRecord};
use scsim_agents::AgentView;
use scsim_core::query::{CandidateList, QueryConstraint};
use scsim_core::{CompanyId, CompanyRecord, Dataset, EdgeSet, FeatureVector};

pub fn id(s: &str) -> CompanyId {
    CompanyId::from(s)
}

/// Firms with one feature `q`; `values[c][t]` is firm `c`'s value at step `t`.
pub fn dataset(names: &[&str], values: &[Vec<f64>], edges: Vec<EdgeSet>) -> Dataset {
    let horizon = edges.len();
    let companies = names
        .iter()
        .zip(values)
        .map(|(n, v)| CompanyRecord {
            id: id(n),
            industry: "parts".into(),
            features: v.iter().map(|&x| FeatureVector(vec![x])).collect(),
            knowledge: String::new(),
            extra: Default::default(),
        })
        .collect();
    Dataset::new(
        companies,
        edges,
        String::new(),
        vec!["q".into()],
        (0..horizon).map(|t| format!("t{t}")).collect(),
    )
    .unwrap()
}

/// Plans nothing; replies from a fixed table keyed by (target, requester), declining anything unlisted.
pub struct TablePolicy {
    pub accept: BTreeMap<(CompanyId, CompanyId), bool>,
}

impl AgentPolicy for TablePolicy {
    fn name(&self) -> &str {
        "table"
    }

    fn plan(&self, _: &AgentView, _: u64) -> Result<Vec<PlanRecord>, PolicyError> {
        Ok(vec![])
    }

    fn constrain(&self, _: &AgentView, _: &[PlanRecord], _: u64) -> Result<Vec<QueryConstraint>, PolicyError> {
        Ok(vec![])
    }

    fn request(
        &self,
        _: &AgentView,
        _: &[PlanRecord],
        _: &[QueryConstraint],
        _: &[CandidateList],
        _: u64,
    ) -> Result<Vec<Vec<RequestRecord>>, PolicyError> {
        Ok(vec![])
    }

    fn reply(&self, view: &AgentView, inbox: &Inbox, _: u64) -> Result<Vec<ReplyRecord>, PolicyError> {
        Ok(inbox
            .entries()
            .map(|(direction, e)| ReplyRecord {
                requester: e.requester.clone(),
                accepted: self.accept.get(&(view.company.clone(), e.requester.clone())).copied().unwrap_or(false),
                reason: "table".into(),
                direction,
            })
            .collect())
    }
}

pub fn same_policy(d: &Dataset, p: Arc<dyn AgentPolicy>) -> PolicyMap {
    d.company_ids().map(|c| (c.clone(), p.clone())).collect()
}
