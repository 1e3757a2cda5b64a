//! What one agent can see at the start of a turn.

use std::collections::BTreeMap;

use scsim_core::model::{customers_in, suppliers_in};
use scsim_core::{CompanyId, Dataset, FeatureVector, ModelError, Timeline};
use serde::{Deserialize, Serialize};

/// Global and per-firm knowledge text in force for a turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub global: String,
    pub companies: BTreeMap<CompanyId, String>,
}

impl KnowledgeBase {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            global: dataset.global_knowledge.clone(),
            companies: dataset
                .companies
                .iter()
                .map(|(id, c)| (id.clone(), c.knowledge.clone()))
                .collect(),
        }
    }

    pub fn company(&self, id: &CompanyId) -> &str {
        self.companies.get(id).map_or("", String::as_str)
    }
}

/// Shared, read-only turn input.
#[derive(Clone, Copy)]
pub struct World<'a> {
    pub dataset: &'a Dataset,
    pub timeline: &'a Timeline,
    pub knowledge: &'a KnowledgeBase,
}

impl World<'_> {
    /// The timestamp agents deliberate on: the last one on the timeline.
    pub fn current(&self) -> usize {
        self.timeline.last_index().expect("timeline is never empty")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartnerInfo {
    pub id: CompanyId,
    pub industry: String,
    pub features: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewStep {
    pub t: usize,
    pub label: String,
    pub features: FeatureVector,
    pub suppliers: Vec<PartnerInfo>,
    pub customers: Vec<PartnerInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub company: CompanyId,
    pub industry: String,
    pub global_knowledge: String,
    pub knowledge: String,
    pub feature_names: Vec<String>,
    /// Oldest first; the last step is the turn's timestamp.
    pub window: Vec<ViewStep>,
}

impl AgentView {
    pub fn current(&self) -> &ViewStep {
        self.window.last().expect("window is never empty")
    }
}

fn partner_info(world: &World<'_>, id: &CompanyId, t: usize) -> Result<PartnerInfo, ModelError> {
    Ok(PartnerInfo {
        id: id.clone(),
        industry: world.dataset.company(id)?.industry.clone(),
        features: world.timeline.features(t)?.get(id).cloned().unwrap_or_default(),
    })
}

/// View of `id` over the `reference_length` timestamps ending at `t`.
pub fn build_view(world: &World<'_>, id: &CompanyId, t: usize, reference_length: usize) -> Result<AgentView, ModelError> {
    let record = world.dataset.company(id)?;
    let start = (t + 1).saturating_sub(reference_length.max(1));
    let mut window = Vec::with_capacity(t + 1 - start);
    for step in start..=t {
        let edges = world.timeline.edges(step)?;
        let suppliers = suppliers_in(&edges, id)
            .iter()
            .map(|s| partner_info(world, s, step))
            .collect::<Result<_, _>>()?;
        let customers = customers_in(&edges, id)
            .iter()
            .map(|c| partner_info(world, c, step))
            .collect::<Result<_, _>>()?;
        window.push(ViewStep {
            t: step,
            label: world.timeline.labels[step].clone(),
            features: world.timeline.features(step)?.get(id).cloned().unwrap_or_default(),
            suppliers,
            customers,
        });
    }
    Ok(AgentView {
        company: id.clone(),
        industry: record.industry.clone(),
        global_knowledge: world.knowledge.global.clone(),
        knowledge: world.knowledge.company(id).to_string(),
        feature_names: world.dataset.feature_names.clone(),
        window,
    })
}
