//! Deterministic threshold policy.

use std::collections::BTreeMap;

use scsim_core::query::{CandidateList, QueryConstraint};
use scsim_core::CompanyId;
use serde::{Deserialize, Serialize};

use crate::protocol::{AgentPolicy, Inbox, PlanRecord, PolicyError, ReplyRecord, RequestKind, RequestRecord};
use crate::view::{AgentView, ViewStep};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub min_suppliers: usize,
    /// Partners whose mean feature score falls below this are dropped.
    pub cutoff: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            min_suppliers: 2,
            cutoff: 40.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RulePolicy {
    pub params: RuleParams,
}

impl RulePolicy {
    pub fn new(params: RuleParams) -> Self {
        Self { params }
    }
}

fn collaborators(step: &ViewStep) -> usize {
    step.suppliers.len() + step.customers.len()
}

/// Collaborator count fell between the first and last step of the window.
pub fn performance_declined(view: &AgentView) -> bool {
    let first = view.window.first().map_or(0, collaborators);
    let last = view.window.last().map_or(0, collaborators);
    last < first
}

/// Current partners with their mean feature score; a firm on both sides appears once.
pub fn partner_means(view: &AgentView) -> BTreeMap<CompanyId, f64> {
    let step = view.current();
    step.suppliers
        .iter()
        .chain(&step.customers)
        .map(|p| (p.id.clone(), p.features.mean()))
        .collect()
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

impl AgentPolicy for RulePolicy {
    fn name(&self) -> &str {
        "rule"
    }

    fn plan(&self, view: &AgentView, _seed: u64) -> Result<Vec<PlanRecord>, PolicyError> {
        let mut plans = Vec::new();
        let suppliers = view.current().suppliers.len();
        if suppliers < self.params.min_suppliers {
            plans.push(PlanRecord {
                description: "Add a supplier".to_string(),
                reason: format!("{suppliers} suppliers, below the minimum of {}", self.params.min_suppliers),
                seek_collaboration: true,
                seek_suppliers: true,
            });
        }
        if performance_declined(view) {
            plans.push(PlanRecord {
                description: "Add a customer".to_string(),
                reason: "collaborator count declined over the reference window".to_string(),
                seek_collaboration: true,
                seek_suppliers: false,
            });
        }
        let weak = partner_means(view).values().filter(|&&m| m < self.params.cutoff).count();
        if weak > 0 {
            plans.push(PlanRecord {
                description: "Drop weak partners".to_string(),
                reason: format!("{weak} partners score below {}", self.params.cutoff),
                seek_collaboration: false,
                seek_suppliers: false,
            });
        }
        Ok(plans)
    }

    fn constrain(&self, view: &AgentView, plans: &[PlanRecord], _seed: u64) -> Result<Vec<QueryConstraint>, PolicyError> {
        Ok(plans.iter().map(|_| QueryConstraint::uniform(&view.feature_names)).collect())
    }

    fn request(
        &self,
        view: &AgentView,
        plans: &[PlanRecord],
        _constraints: &[QueryConstraint],
        candidates: &[CandidateList],
        _seed: u64,
    ) -> Result<Vec<Vec<RequestRecord>>, PolicyError> {
        let means = partner_means(view);
        Ok(plans
            .iter()
            .zip(candidates)
            .enumerate()
            .map(|(i, (plan, list))| {
                let kind = plan.request_kind();
                if kind == RequestKind::Terminate {
                    means
                        .iter()
                        .filter(|(_, &m)| m < self.params.cutoff)
                        .map(|(id, m)| RequestRecord {
                            plan_index: i,
                            target: id.clone(),
                            chosen: true,
                            reason: format!("mean score {m:.2} below cutoff"),
                            extra_info: String::new(),
                            kind,
                        })
                        .collect()
                } else {
                    list.entries
                        .iter()
                        .enumerate()
                        .map(|(rank, c)| RequestRecord {
                            plan_index: i,
                            target: c.id.clone(),
                            chosen: rank == 0,
                            reason: format!("candidate rank {} with score {:.4}", rank + 1, c.score),
                            extra_info: String::new(),
                            kind,
                        })
                        .collect()
                }
            })
            .collect())
    }

    fn reply(&self, view: &AgentView, inbox: &Inbox, _seed: u64) -> Result<Vec<ReplyRecord>, PolicyError> {
        let mut means: Vec<f64> = partner_means(view).into_values().collect();
        let bar = median(&mut means);
        Ok(inbox
            .entries()
            .map(|(direction, e)| {
                let score = e.features.mean();
                let accepted = bar.is_none_or(|b| score >= b);
                ReplyRecord {
                    requester: e.requester.clone(),
                    accepted,
                    reason: match bar {
                        None => "no current partners to compare against".to_string(),
                        Some(b) => format!("requester mean {score:.2} vs partner median {b:.2}"),
                    },
                    direction,
                }
            })
            .collect())
    }
}
