//! Firm performance over one network snapshot: collaborator count and PageRank.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{partners_in, CompanyId, EdgeSet, ModelError, TemporalNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("PageRank needs at least one node")]
    EmptyNodeSet,
    #[error("edge endpoint `{0}` is not in the node set")]
    UnknownNode(String),
    #[error("invalid PageRank parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type PerformanceMap = BTreeMap<CompanyId, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceMetricKind {
    CollaboratorCount,
    PageRank,
}

impl PerformanceMetricKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::CollaboratorCount => "collaborator_count",
            Self::PageRank => "pagerank",
        }
    }
}

impl fmt::Display for PerformanceMetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerformanceMetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "collaborator_count" | "collaborators" => Ok(Self::CollaboratorCount),
            "pagerank" | "page_rank" => Ok(Self::PageRank),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageRankResult {
    pub scores: PerformanceMap,
    pub iterations: usize,
    /// False when `max_iter` was reached before the L1 delta fell below `tol`.
    pub converged: bool,
}

/// Distinct counterparties of `id` at `t`, counting a firm that is both
/// supplier and customer once.
pub fn collaborator_count(network: &TemporalNetwork, id: &CompanyId, t: usize) -> Result<usize, MetricError> {
    if !network.nodes().contains(id) {
        return Err(ModelError::UnknownCompany(id.to_string()).into());
    }
    Ok(partners_in(&*network.at(t)?, id).len())
}

/// Power iteration over the supplier→customer graph. Mass from dangling nodes
/// is spread uniformly; the result is renormalised to sum to one.
pub fn pagerank(
    edges: &EdgeSet,
    nodes: &BTreeSet<CompanyId>,
    config: PageRankConfig,
) -> Result<PageRankResult, MetricError> {
    if nodes.is_empty() {
        return Err(MetricError::EmptyNodeSet);
    }
    if !(config.damping > 0.0 && config.damping < 1.0) || !(config.tol > 0.0) {
        return Err(MetricError::InvalidParameters(format!(
            "damping {} must be in (0,1) and tol {} > 0",
            config.damping, config.tol
        )));
    }
    let index: BTreeMap<&CompanyId, usize> = nodes.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let n = nodes.len();
    let mut out_links: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        let s = *index
            .get(&e.supplier)
            .ok_or_else(|| MetricError::UnknownNode(e.supplier.to_string()))?;
        let c = *index
            .get(&e.customer)
            .ok_or_else(|| MetricError::UnknownNode(e.customer.to_string()))?;
        out_links[s].push(c);
    }

    let d = config.damping;
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&i| out_links[i].is_empty()).map(|i| rank[i]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for (i, links) in out_links.iter().enumerate() {
            if links.is_empty() {
                continue;
            }
            let share = d * rank[i] / links.len() as f64;
            for &j in links {
                next[j] += share;
            }
        }
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    let total: f64 = rank.iter().sum();
    let scores = nodes
        .iter()
        .zip(rank)
        .map(|(id, r)| (id.clone(), r / total))
        .collect();
    Ok(PageRankResult {
        scores,
        iterations,
        converged,
    })
}

/// A performance metric over one snapshot.
pub trait PerformanceMetric: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, edges: &EdgeSet, nodes: &BTreeSet<CompanyId>) -> Result<PerformanceMap, MetricError>;
}

pub struct CollaboratorCount;

impl PerformanceMetric for CollaboratorCount {
    fn name(&self) -> &str {
        PerformanceMetricKind::CollaboratorCount.name()
    }

    fn evaluate(&self, edges: &EdgeSet, nodes: &BTreeSet<CompanyId>) -> Result<PerformanceMap, MetricError> {
        Ok(nodes
            .iter()
            .map(|id| (id.clone(), partners_in(edges, id).len() as f64))
            .collect())
    }
}

pub struct PageRank(pub PageRankConfig);

impl PerformanceMetric for PageRank {
    fn name(&self) -> &str {
        PerformanceMetricKind::PageRank.name()
    }

    fn evaluate(&self, edges: &EdgeSet, nodes: &BTreeSet<CompanyId>) -> Result<PerformanceMap, MetricError> {
        let result = pagerank(edges, nodes, self.0)?;
        if !result.converged {
            log::warn!("PageRank stopped after {} iterations without converging", result.iterations);
        }
        Ok(result.scores)
    }
}

/// Named metrics; starts with the two built-in kinds.
pub struct MetricRegistry {
    metrics: BTreeMap<String, Box<dyn PerformanceMetric>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut r = Self {
            metrics: BTreeMap::new(),
        };
        r.register(Box::new(CollaboratorCount));
        r.register(Box::new(PageRank(PageRankConfig::default())));
        r
    }
}

impl MetricRegistry {
    pub fn register(&mut self, metric: Box<dyn PerformanceMetric>) {
        self.metrics.insert(metric.name().to_string(), metric);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PerformanceMetric, MetricError> {
        let key = name
            .parse::<PerformanceMetricKind>()
            .map(|k| k.name().to_string())
            .unwrap_or_else(|_| name.to_string());
        self.metrics
            .get(&key)
            .map(|m| m.as_ref())
            .ok_or_else(|| MetricError::UnknownMetric(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }
}

/// Scores every node of `network` at `t` with the chosen metric.
pub fn performance(
    network: &TemporalNetwork,
    kind: PerformanceMetricKind,
    t: usize,
) -> Result<PerformanceMap, MetricError> {
    let edges = network.at(t)?;
    evaluate_kind(kind, &edges, network.nodes())
}

pub fn evaluate_kind(
    kind: PerformanceMetricKind,
    edges: &EdgeSet,
    nodes: &BTreeSet<CompanyId>,
) -> Result<PerformanceMap, MetricError> {
    match kind {
        PerformanceMetricKind::CollaboratorCount => CollaboratorCount.evaluate(edges, nodes),
        PerformanceMetricKind::PageRank => PageRank(PageRankConfig::default()).evaluate(edges, nodes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Edge;

    fn ids(names: &[&str]) -> BTreeSet<CompanyId> {
        names.iter().map(|&s| CompanyId::from(s)).collect()
    }

    fn edges(list: &[(&str, &str)]) -> EdgeSet {
        list.iter().map(|&e| Edge::from(e)).collect()
    }

    #[test]
    fn two_cycle_is_uniform() {
        let r = pagerank(&edges(&[("A", "B"), ("B", "A")]), &ids(&["A", "B"]), Default::default()).unwrap();
        assert!(r.converged);
        for v in r.scores.values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_nodes_are_uniform() {
        let r = pagerank(&EdgeSet::new(), &ids(&["A", "B", "C"]), Default::default()).unwrap();
        for v in r.scores.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_node_set_errors() {
        assert_eq!(
            pagerank(&EdgeSet::new(), &BTreeSet::new(), Default::default()),
            Err(MetricError::EmptyNodeSet)
        );
    }

    #[test]
    fn unconverged_run_is_flagged() {
        let cfg = PageRankConfig {
            max_iter: 1,
            ..Default::default()
        };
        let r = pagerank(&edges(&[("A", "B"), ("B", "C")]), &ids(&["A", "B", "C"]), cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn collaborator_counts() {
        let nodes = ids(&["A", "B", "C", "D"]);
        let net = TemporalNetwork::new(nodes, vec![edges(&[("A", "B"), ("B", "C")])]).unwrap();
        assert_eq!(collaborator_count(&net, &"B".into(), 0).unwrap(), 2);
        assert_eq!(collaborator_count(&net, &"A".into(), 0).unwrap(), 1);
        assert_eq!(collaborator_count(&net, &"D".into(), 0).unwrap(), 0);
        assert!(collaborator_count(&net, &"Z".into(), 0).is_err());
    }

    #[test]
    fn star_collaborators_and_unknown_kind() {
        let nodes = ids(&["A", "B", "C", "D"]);
        let net = TemporalNetwork::new(nodes, vec![edges(&[("A", "B"), ("A", "C"), ("A", "D")])]).unwrap();
        let perf = performance(&net, PerformanceMetricKind::CollaboratorCount, 0).unwrap();
        assert_eq!(perf[&CompanyId::from("A")], 3.0);
        assert_eq!(perf[&CompanyId::from("C")], 1.0);
        assert!(matches!(
            "betweenness".parse::<PerformanceMetricKind>(),
            Err(MetricError::UnknownMetric(_))
        ));
        assert!(MetricRegistry::default().get("betweenness").is_err());
        assert!(MetricRegistry::default().get("PageRank").is_ok());
    }
}
