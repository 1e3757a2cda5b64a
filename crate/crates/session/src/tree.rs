//! The simulation path tree: observed history as a chain, simulated turns as branches.

use std::sync::Arc;

use scsim_agents::{AgentTurnRecord, KnowledgeBase};
use scsim_core::{Dataset, EdgeSet, FeatureFrame, Timeline};
use serde::{Deserialize, Serialize};

use crate::adjust::Adjustment;
use crate::SessionError;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Historical,
    Simulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Historical,
    Simulated,
    Active,
}

/// How a simulated node came to be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Run { run: usize },
    Adjusted {
        from: NodeId,
        adjustments: Vec<Adjustment>,
        /// Some reply outcome was forced rather than re-decided.
        synthetic: bool,
    },
}

/// The turn that produced a simulated node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnData {
    pub records: Vec<AgentTurnRecord>,
    pub knowledge: KnowledgeBase,
    pub seed: u64,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub t: usize,
    pub label: String,
    pub kind: NodeKind,
    pub edges: Arc<EdgeSet>,
    pub features: Arc<FeatureFrame>,
    pub turn: Option<Arc<TurnData>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathTree {
    nodes: Vec<SimulationNode>,
    active: NodeId,
}

impl PathTree {
    /// One historical node per observed timestamp; the last one is active.
    pub fn historical(dataset: &Dataset) -> Result<Self, SessionError> {
        let mut nodes = Vec::with_capacity(dataset.horizon());
        for t in 0..dataset.horizon() {
            nodes.push(SimulationNode {
                id: t,
                parent: t.checked_sub(1),
                t,
                label: dataset.timestamps[t].clone(),
                kind: NodeKind::Historical,
                edges: dataset.network_at(t)?,
                features: Arc::new(dataset.features_at(t)?),
                turn: None,
            });
        }
        let active = nodes
            .len()
            .checked_sub(1)
            .ok_or_else(|| SessionError::InvalidConfig("dataset has no timestamps".into()))?;
        Ok(Self { nodes, active })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SimulationNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&SimulationNode, SessionError> {
        self.nodes.get(id).ok_or(SessionError::UnknownNode(id))
    }

    pub fn active(&self) -> NodeId {
        self.active
    }

    pub fn set_active(&mut self, id: NodeId) -> Result<(), SessionError> {
        self.node(id)?;
        self.active = id;
        Ok(())
    }

    pub fn status(&self, id: NodeId) -> Result<NodeStatus, SessionError> {
        let n = self.node(id)?;
        Ok(if id == self.active {
            NodeStatus::Active
        } else if n.kind == NodeKind::Historical {
            NodeStatus::Historical
        } else {
            NodeStatus::Simulated
        })
    }

    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.parent == Some(id)).map(|n| n.id).collect()
    }

    /// Root to `id`, inclusive.
    pub fn path(&self, id: NodeId) -> Result<Vec<NodeId>, SessionError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = self.node(p)?;
        }
        path.reverse();
        Ok(path)
    }

    /// Network and features along the path ending at `id`.
    pub fn timeline(&self, dataset: &Dataset, id: NodeId) -> Result<Timeline, SessionError> {
        let mut timeline = dataset.timeline().truncated(0);
        for id in self.path(id)? {
            let n = self.node(id)?;
            timeline.push(n.label.clone(), n.edges.clone(), n.features.clone())?;
        }
        Ok(timeline)
    }

    pub fn push(&mut self, mut node: SimulationNode) -> NodeId {
        node.id = self.nodes.len();
        let id = node.id;
        self.nodes.push(node);
        id
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !self.nodes.iter().any(|c| c.parent == Some(n.id)))
            .map(|n| n.id)
            .collect()
    }
}
