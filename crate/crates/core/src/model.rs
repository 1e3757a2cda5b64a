//! Companies, features, and the temporal supplier→customer network.
//!
//! A [`Dataset`] is immutable after load. Edge sets are stored behind `Arc`
//! so snapshots handed out to callers are never affected by later commits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{file}:{line}: {message}")]
    ParseError {
        file: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: edge references unknown company `{id}`")]
    UnknownCompanyInEdge { line: usize, id: String },
    #[error("feature `{feature}` of `{company}` at `{timestamp}` is {value}, outside [0, 100]")]
    FeatureOutOfRange {
        company: String,
        feature: String,
        timestamp: String,
        value: f64,
    },
    #[error("line {line}: duplicate edge {supplier} -> {customer} at `{timestamp}`")]
    DuplicateEdge {
        line: usize,
        supplier: String,
        customer: String,
        timestamp: String,
    },
    #[error("line {line}: self edge on `{id}`")]
    SelfEdge { line: usize, id: String },
    #[error("timestamp {index} out of range (have {len})")]
    TimestampOutOfRange { index: usize, len: usize },
    #[error("unknown company `{0}`")]
    UnknownCompany(String),
    #[error("edge {supplier} -> {customer} absent at timestamp {index}")]
    EdgeAbsent {
        supplier: String,
        customer: String,
        index: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Opaque company identifier, e.g. `Company-4838`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompanyId(String);

impl CompanyId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(ModelError::Invalid("empty company id".into()));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for CompanyId {
    fn from(value: &str) -> Self {
        Self(value.to_string())
    }
}

impl fmt::Display for CompanyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Position on the time axis. Historical indices precede simulated ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub index: usize,
    pub label: String,
}

/// Directed supplier→customer relation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub supplier: CompanyId,
    pub customer: CompanyId,
}

impl Edge {
    pub fn new(supplier: impl Into<CompanyId>, customer: impl Into<CompanyId>) -> Self {
        Self {
            supplier: supplier.into(),
            customer: customer.into(),
        }
    }

    pub fn is_self_edge(&self) -> bool {
        self.supplier == self.customer
    }

    pub fn involves(&self, id: &CompanyId) -> bool {
        &self.supplier == id || &self.customer == id
    }
}

impl From<(&str, &str)> for Edge {
    fn from((s, c): (&str, &str)) -> Self {
        Edge::new(s, c)
    }
}

pub type EdgeSet = BTreeSet<Edge>;

/// Feature values aligned with [`Dataset::feature_names`], each in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(index).copied()
    }
}

/// Features of every company at one timestamp.
pub type FeatureFrame = BTreeMap<CompanyId, FeatureVector>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub id: CompanyId,
    pub industry: String,
    /// One entry per historical timestamp.
    pub features: Vec<FeatureVector>,
    pub knowledge: String,
    /// Static columns beyond `industry`; carried through ingest, never scored.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeLifecycle {
    Initiate,
    Maintain,
    Terminate,
}

/// Per-timestamp edge sets over a fixed node set.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TemporalNetwork {
    nodes: Arc<BTreeSet<CompanyId>>,
    snapshots: Vec<Arc<EdgeSet>>,
}

impl TemporalNetwork {
    pub fn new(nodes: BTreeSet<CompanyId>, snapshots: Vec<EdgeSet>) -> Result<Self, ModelError> {
        let net = Self {
            nodes: Arc::new(nodes),
            snapshots: snapshots.into_iter().map(Arc::new).collect(),
        };
        for (t, edges) in net.snapshots.iter().enumerate() {
            net.check_edges(edges, t)?;
        }
        Ok(net)
    }

    fn check_edges(&self, edges: &EdgeSet, t: usize) -> Result<(), ModelError> {
        for e in edges {
            if e.is_self_edge() {
                return Err(ModelError::SelfEdge {
                    line: t,
                    id: e.supplier.to_string(),
                });
            }
            for id in [&e.supplier, &e.customer] {
                if !self.nodes.contains(id) {
                    return Err(ModelError::UnknownCompanyInEdge {
                        line: t,
                        id: id.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<CompanyId> {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Appends a snapshot after validating it against the node set.
    pub fn push(&mut self, edges: Arc<EdgeSet>) -> Result<(), ModelError> {
        self.check_edges(&edges, self.snapshots.len())?;
        self.snapshots.push(edges);
        Ok(())
    }

    /// Returns a copy truncated to the first `len` timestamps.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            nodes: Arc::clone(&self.nodes),
            snapshots: self.snapshots[..len.min(self.snapshots.len())].to_vec(),
        }
    }

    pub fn at(&self, t: usize) -> Result<Arc<EdgeSet>, ModelError> {
        self.snapshots
            .get(t)
            .cloned()
            .ok_or(ModelError::TimestampOutOfRange {
                index: t,
                len: self.snapshots.len(),
            })
    }

    pub fn snapshots(&self) -> &[Arc<EdgeSet>] {
        &self.snapshots
    }

    fn check_company(&self, id: &CompanyId) -> Result<(), ModelError> {
        if self.nodes.contains(id) {
            Ok(())
        } else {
            Err(ModelError::UnknownCompany(id.to_string()))
        }
    }

    pub fn suppliers_of(&self, id: &CompanyId, t: usize) -> Result<BTreeSet<CompanyId>, ModelError> {
        self.check_company(id)?;
        let edges = self.at(t)?;
        Ok(suppliers_in(&edges, id))
    }

    pub fn customers_of(&self, id: &CompanyId, t: usize) -> Result<BTreeSet<CompanyId>, ModelError> {
        self.check_company(id)?;
        let edges = self.at(t)?;
        Ok(customers_in(&edges, id))
    }

    /// Lifecycle stage of an edge present at `t`.
    ///
    /// An edge present for a single step both initiates and terminates there;
    /// it is labelled `Terminate`. At the last stored timestamp nothing is known
    /// about `t + 1`, so an edge there never terminates.
    pub fn lifecycle(&self, edge: &Edge, t: usize) -> Result<EdgeLifecycle, ModelError> {
        let here = self.at(t)?;
        if !here.contains(edge) {
            return Err(ModelError::EdgeAbsent {
                supplier: edge.supplier.to_string(),
                customer: edge.customer.to_string(),
                index: t,
            });
        }
        let ends = self
            .snapshots
            .get(t + 1)
            .is_some_and(|next| !next.contains(edge));
        if ends {
            return Ok(EdgeLifecycle::Terminate);
        }
        let starts = t == 0 || !self.snapshots[t - 1].contains(edge);
        Ok(if starts {
            EdgeLifecycle::Initiate
        } else {
            EdgeLifecycle::Maintain
        })
    }
}

pub fn suppliers_in(edges: &EdgeSet, id: &CompanyId) -> BTreeSet<CompanyId> {
    edges
        .iter()
        .filter(|e| &e.customer == id)
        .map(|e| e.supplier.clone())
        .collect()
}

pub fn customers_in(edges: &EdgeSet, id: &CompanyId) -> BTreeSet<CompanyId> {
    edges
        .iter()
        .filter(|e| &e.supplier == id)
        .map(|e| e.customer.clone())
        .collect()
}

/// Suppliers and customers of `id` combined.
pub fn partners_in(edges: &EdgeSet, id: &CompanyId) -> BTreeSet<CompanyId> {
    edges
        .iter()
        .filter_map(|e| {
            if &e.supplier == id {
                Some(e.customer.clone())
            } else if &e.customer == id {
                Some(e.supplier.clone())
            } else {
                None
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub companies: BTreeMap<CompanyId, CompanyRecord>,
    pub network: TemporalNetwork,
    pub global_knowledge: String,
    pub feature_names: Vec<String>,
    /// Labels of the historical timestamps, in order.
    pub timestamps: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant ingest would check.
    pub fn new(
        companies: Vec<CompanyRecord>,
        edges: Vec<EdgeSet>,
        global_knowledge: String,
        feature_names: Vec<String>,
        timestamps: Vec<String>,
    ) -> Result<Self, ModelError> {
        if edges.len() != timestamps.len() {
            return Err(ModelError::Invalid(format!(
                "{} edge snapshots for {} timestamps",
                edges.len(),
                timestamps.len()
            )));
        }
        let mut map = BTreeMap::new();
        for c in companies {
            if c.industry.trim().is_empty() {
                return Err(ModelError::Invalid(format!("company `{}` has no industry", c.id)));
            }
            if c.features.len() != timestamps.len() {
                return Err(ModelError::Invalid(format!(
                    "company `{}` has {} feature rows, expected {}",
                    c.id,
                    c.features.len(),
                    timestamps.len()
                )));
            }
            for (t, fv) in c.features.iter().enumerate() {
                if fv.0.len() != feature_names.len() {
                    return Err(ModelError::Invalid(format!(
                        "company `{}` feature width mismatch at `{}`",
                        c.id, timestamps[t]
                    )));
                }
                for (f, &v) in fv.0.iter().enumerate() {
                    if !(0.0..=100.0).contains(&v) {
                        return Err(ModelError::FeatureOutOfRange {
                            company: c.id.to_string(),
                            feature: feature_names[f].clone(),
                            timestamp: timestamps[t].clone(),
                            value: v,
                        });
                    }
                }
            }
            let id = c.id.clone();
            if map.insert(id.clone(), c).is_some() {
                return Err(ModelError::Invalid(format!("duplicate company `{id}`")));
            }
        }
        let nodes = map.keys().cloned().collect();
        let network = TemporalNetwork::new(nodes, edges)?;
        Ok(Self {
            companies: map,
            network,
            global_knowledge,
            feature_names,
            timestamps,
        })
    }

    /// Number of historical timestamps.
    pub fn horizon(&self) -> usize {
        self.timestamps.len()
    }

    pub fn company(&self, id: &CompanyId) -> Result<&CompanyRecord, ModelError> {
        self.companies
            .get(id)
            .ok_or_else(|| ModelError::UnknownCompany(id.to_string()))
    }

    pub fn company_ids(&self) -> impl Iterator<Item = &CompanyId> {
        self.companies.keys()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn network_at(&self, t: usize) -> Result<Arc<EdgeSet>, ModelError> {
        self.network.at(t)
    }

    pub fn features_at(&self, t: usize) -> Result<FeatureFrame, ModelError> {
        if t >= self.horizon() {
            return Err(ModelError::TimestampOutOfRange {
                index: t,
                len: self.horizon(),
            });
        }
        Ok(self
            .companies
            .iter()
            .map(|(id, c)| (id.clone(), c.features[t].clone()))
            .collect())
    }

    /// Observed history as a [`Timeline`].
    pub fn timeline(&self) -> Timeline {
        Timeline {
            labels: self.timestamps.clone(),
            network: self.network.clone(),
            features: (0..self.horizon())
                .map(|t| Arc::new(self.features_at(t).expect("in range")))
                .collect(),
        }
    }
}

/// Network and features along one path of the simulation: historical steps
/// followed by any simulated ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    pub labels: Vec<String>,
    pub network: TemporalNetwork,
    pub features: Vec<Arc<FeatureFrame>>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn last_index(&self) -> Option<usize> {
        self.len().checked_sub(1)
    }

    pub fn edges(&self, t: usize) -> Result<Arc<EdgeSet>, ModelError> {
        self.network.at(t)
    }

    pub fn features(&self, t: usize) -> Result<&FeatureFrame, ModelError> {
        self.features
            .get(t)
            .map(|f| f.as_ref())
            .ok_or(ModelError::TimestampOutOfRange {
                index: t,
                len: self.features.len(),
            })
    }

    pub fn timestamp(&self, t: usize) -> Result<Timestamp, ModelError> {
        self.labels
            .get(t)
            .map(|label| Timestamp {
                index: t,
                label: label.clone(),
            })
            .ok_or(ModelError::TimestampOutOfRange {
                index: t,
                len: self.labels.len(),
            })
    }

    pub fn push(
        &mut self,
        label: String,
        edges: Arc<EdgeSet>,
        features: Arc<FeatureFrame>,
    ) -> Result<(), ModelError> {
        self.network.push(edges)?;
        self.labels.push(label);
        self.features.push(features);
        Ok(())
    }

    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            labels: self.labels[..len].to_vec(),
            network: self.network.truncated(len),
            features: self.features[..len].to_vec(),
        }
    }
}

/// Label for the timestamp after `label`: `2024Q4` → `2025Q1`, otherwise `t{index}`.
pub fn next_label(label: &str, index: usize) -> String {
    if let Some((year, quarter)) = label.split_once('Q') {
        if let (Ok(y), Ok(q)) = (year.parse::<i32>(), quarter.parse::<u32>()) {
            if (1..=4).contains(&q) {
                return if q == 4 {
                    format!("{}Q1", y + 1)
                } else {
                    format!("{y}Q{}", q + 1)
                };
            }
        }
    }
    format!("t{index}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(snaps: &[&[(&str, &str)]]) -> TemporalNetwork {
        let nodes = ["A", "B", "C", "D"].iter().map(|&s| CompanyId::from(s)).collect();
        TemporalNetwork::new(
            nodes,
            snaps
                .iter()
                .map(|s| s.iter().map(|&e| Edge::from(e)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_step_edge_terminates() {
        let n = net(&[&[], &[], &[("A", "B")], &[]]);
        assert_eq!(n.lifecycle(&("A", "B").into(), 2).unwrap(), EdgeLifecycle::Terminate);
    }

    #[test]
    fn interior_step_maintains() {
        let n = net(&[&[], &[("A", "B")], &[("A", "B")], &[("A", "B")], &[("A", "B")], &[]]);
        assert_eq!(n.lifecycle(&("A", "B").into(), 2).unwrap(), EdgeLifecycle::Maintain);
        assert_eq!(n.lifecycle(&("A", "B").into(), 1).unwrap(), EdgeLifecycle::Initiate);
    }

    #[test]
    fn last_step_of_run_terminates() {
        let n = net(&[&[], &[("A", "B")], &[("A", "B")], &[("A", "B")], &[]]);
        assert_eq!(n.lifecycle(&("A", "B").into(), 3).unwrap(), EdgeLifecycle::Terminate);
    }

    #[test]
    fn edge_at_final_snapshot_does_not_terminate() {
        let n = net(&[&[("A", "B")], &[("A", "B")]]);
        assert_eq!(n.lifecycle(&("A", "B").into(), 1).unwrap(), EdgeLifecycle::Maintain);
        assert_eq!(n.lifecycle(&("A", "B").into(), 0).unwrap(), EdgeLifecycle::Initiate);
    }

    #[test]
    fn lifecycle_of_absent_edge_errors() {
        let n = net(&[&[("A", "B")]]);
        assert!(matches!(
            n.lifecycle(&("B", "A").into(), 0),
            Err(ModelError::EdgeAbsent { .. })
        ));
    }

    #[test]
    fn supplier_and_customer_queries() {
        let n = net(&[&[("A", "B")]]);
        let a = CompanyId::from("A");
        let b = CompanyId::from("B");
        let c = CompanyId::from("C");
        assert_eq!(n.suppliers_of(&b, 0).unwrap(), [a.clone()].into());
        assert_eq!(n.customers_of(&a, 0).unwrap(), [b].into());
        assert!(n.suppliers_of(&c, 0).unwrap().is_empty());
        assert!(n.customers_of(&c, 0).unwrap().is_empty());
        assert!(matches!(
            n.customers_of(&"Z".into(), 0),
            Err(ModelError::UnknownCompany(_))
        ));
        assert!(matches!(n.at(1), Err(ModelError::TimestampOutOfRange { .. })));
    }

    #[test]
    fn rejects_self_edges_in_snapshots() {
        let nodes = [CompanyId::from("A")].into();
        let err = TemporalNetwork::new(nodes, vec![[Edge::from(("A", "A"))].into()]).unwrap_err();
        assert!(matches!(err, ModelError::SelfEdge { .. }));
    }

    #[test]
    fn quarter_labels_roll_over() {
        assert_eq!(next_label("2024Q4", 8), "2025Q1");
        assert_eq!(next_label("2023Q2", 1), "2023Q3");
        assert_eq!(next_label("week-3", 9), "t9");
    }
}
