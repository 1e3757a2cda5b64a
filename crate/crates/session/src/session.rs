//! One interactive session: a dataset, its path tree, and the action journal.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use scsim_agents::engine::{resolve_turn, run_turn, TurnConfig};
use scsim_agents::simulate::features_for;
use scsim_agents::{AgentTurnRecord, KnowledgeBase, PolicyMap, World};
use scsim_core::explain::ExplainSet;
use scsim_core::horizon::FeatureForecaster;
use scsim_core::ingest::{companies_csv, edges_csv, parse_dataset};
use scsim_core::model::next_label;
use scsim_core::{CompanyId, Dataset, Edge, EdgeSet, FeatureFrame};
use serde::{Deserialize, Serialize};

use crate::adjust::{self, Adjustment, TurnContext};
use crate::config::SessionConfig;
use crate::tree::{NodeId, NodeKind, Origin, PathTree, SimulationNode, TurnData};
use crate::SessionError;

/// The dataset as imported, kept verbatim so exports are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub companies_csv: String,
    pub edges_csv: String,
    pub global_knowledge: String,
}

impl DatasetSource {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            companies_csv: companies_csv(dataset),
            edges_csv: edges_csv(dataset),
            global_knowledge: dataset.global_knowledge.clone(),
        }
    }

    pub fn parse(&self) -> Result<Dataset, SessionError> {
        Ok(parse_dataset(&self.companies_csv, &self.edges_csv, &self.global_knowledge)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum KnowledgeScope {
    Global,
    Company { company: CompanyId },
}

/// Every state-changing action, in order. Replaying the journal against the
/// recorded nodes reproduces the session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Created {
        config: SessionConfig,
        dataset: DatasetSource,
    },
    Run {
        from: NodeId,
        turns: usize,
        seed: u64,
        nodes: Vec<NodeId>,
    },
    Staged {
        node: NodeId,
        adjustment: Adjustment,
    },
    Reset {
        node: NodeId,
    },
    Applied {
        node: NodeId,
        branch: NodeId,
        synthetic: bool,
    },
    Knowledge {
        scope: KnowledgeScope,
        text: String,
    },
    Activated {
        node: NodeId,
    },
    Configured {
        config: SessionConfig,
    },
}

/// A prepared multi-turn run that can execute without holding the session.
pub struct RunJob {
    dataset: Arc<Dataset>,
    timeline: scsim_core::Timeline,
    from: NodeId,
    turns: usize,
    knowledge: KnowledgeBase,
    policies: PolicyMap,
    forecaster: Arc<Mutex<FeatureForecaster>>,
    config: TurnConfig,
    seed: u64,
    run: usize,
}

pub struct RunStep {
    pub label: String,
    pub edges: Arc<EdgeSet>,
    pub features: Arc<FeatureFrame>,
    pub records: Vec<AgentTurnRecord>,
}

pub struct RunResult {
    pub from: NodeId,
    pub run: usize,
    pub seed: u64,
    pub knowledge: KnowledgeBase,
    pub steps: Vec<RunStep>,
}

impl RunJob {
    pub fn turns(&self) -> usize {
        self.turns
    }

    /// Runs every turn; `progress(done)` is called after each one.
    pub fn execute(mut self, progress: impl Fn(usize)) -> Result<RunResult, SessionError> {
        let mut steps = Vec::with_capacity(self.turns);
        for done in 0..self.turns {
            let world = World {
                dataset: &self.dataset,
                timeline: &self.timeline,
                knowledge: &self.knowledge,
            };
            let outcome = run_turn(&world, &self.policies, &self.config, self.seed)?;
            for f in outcome.failures() {
                log::warn!("turn at {}: {} no-op after {} failure: {}", outcome.t, f.company, f.stage, f.message);
            }
            let t = self.timeline.len();
            let label = next_step_label(&self.dataset, &self.timeline, t);
            let frame = {
                let mut f = self.forecaster.lock().expect("forecaster lock");
                Arc::new(features_for(&self.dataset, &mut f, t)?)
            };
            let edges = Arc::new(outcome.edges);
            self.timeline.push(label.clone(), edges.clone(), frame.clone())?;
            steps.push(RunStep {
                label,
                edges,
                features: frame,
                records: outcome.records,
            });
            progress(done + 1);
        }
        Ok(RunResult {
            from: self.from,
            run: self.run,
            seed: self.seed,
            knowledge: self.knowledge,
            steps,
        })
    }
}

fn next_step_label(dataset: &Dataset, timeline: &scsim_core::Timeline, t: usize) -> String {
    if t < dataset.horizon() {
        dataset.timestamps[t].clone()
    } else {
        next_label(timeline.labels.last().map(String::as_str).unwrap_or(""), t)
    }
}

pub struct Session {
    dataset: Arc<Dataset>,
    source: DatasetSource,
    config: SessionConfig,
    tree: PathTree,
    knowledge: KnowledgeBase,
    journal: Vec<JournalEvent>,
    staged: BTreeMap<NodeId, Vec<Adjustment>>,
    forecaster: Arc<Mutex<FeatureForecaster>>,
    policy_override: Option<PolicyMap>,
    runs: usize,
    explain_cache: Mutex<BTreeMap<NodeId, Arc<ExplainSet>>>,
}

impl Session {
    pub fn new(dataset: Dataset, config: SessionConfig) -> Result<Self, SessionError> {
        let source = DatasetSource::of(&dataset);
        Self::from_source(dataset, source, config)
    }

    fn from_source(dataset: Dataset, source: DatasetSource, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let tree = PathTree::historical(&dataset)?;
        let forecaster = FeatureForecaster::fit(&dataset, config.horizon_model, config.horizon_window, config.horizon_lambda)?;
        let knowledge = KnowledgeBase::from_dataset(&dataset);
        let journal = vec![JournalEvent::Created {
            config: config.clone(),
            dataset: source.clone(),
        }];
        Ok(Self {
            dataset: Arc::new(dataset),
            source,
            config,
            tree,
            knowledge,
            journal,
            staged: BTreeMap::new(),
            forecaster: Arc::new(Mutex::new(forecaster)),
            policy_override: None,
            runs: 0,
            explain_cache: Mutex::new(BTreeMap::new()),
        })
    }

    /// Uses `policies` instead of the configured policy for every later turn.
    pub fn with_policies(mut self, policies: PolicyMap) -> Self {
        self.policy_override = Some(policies);
        self
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn source(&self) -> &DatasetSource {
        &self.source
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn tree(&self) -> &PathTree {
        &self.tree
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.knowledge
    }

    pub fn journal(&self) -> &[JournalEvent] {
        &self.journal
    }

    pub fn staged(&self, node: NodeId) -> &[Adjustment] {
        self.staged.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn forecaster(&self) -> &Arc<Mutex<FeatureForecaster>> {
        &self.forecaster
    }

    fn policies(&self) -> Result<PolicyMap, SessionError> {
        match &self.policy_override {
            Some(p) => Ok(p.clone()),
            None => self.config.policy.policy_map(&self.dataset),
        }
    }

    /// Replaces the settings. Model choices that feed the feature extension
    /// refit it; existing nodes are left untouched.
    pub fn configure(&mut self, config: SessionConfig) -> Result<(), SessionError> {
        config.validate()?;
        if (config.horizon_model, config.horizon_window, config.horizon_lambda)
            != (self.config.horizon_model, self.config.horizon_window, self.config.horizon_lambda)
        {
            let f = FeatureForecaster::fit(&self.dataset, config.horizon_model, config.horizon_window, config.horizon_lambda)?;
            self.forecaster = Arc::new(Mutex::new(f));
        }
        self.explain_cache.lock().expect("cache lock").clear();
        self.config = config.clone();
        self.journal.push(JournalEvent::Configured { config });
        Ok(())
    }

    pub fn prepare_run(&mut self, from: NodeId, turns: usize) -> Result<RunJob, SessionError> {
        if turns == 0 {
            return Err(SessionError::InvalidConfig("turns must be at least 1".into()));
        }
        let timeline = self.tree.timeline(&self.dataset, from)?;
        let run = self.runs;
        self.runs += 1;
        Ok(RunJob {
            dataset: self.dataset.clone(),
            timeline,
            from,
            turns,
            knowledge: self.knowledge.clone(),
            policies: self.policies()?,
            forecaster: self.forecaster.clone(),
            config: self.config.turn_config(),
            seed: self.config.seed.wrapping_add(run as u64),
            run,
        })
    }

    /// Adds the run's nodes as a new chain below its start node and makes the
    /// last one active.
    pub fn commit_run(&mut self, result: RunResult) -> Result<Vec<NodeId>, SessionError> {
        let start = self.tree.node(result.from)?;
        let mut parent = result.from;
        let mut t = start.t;
        let mut nodes = Vec::with_capacity(result.steps.len());
        let knowledge = result.knowledge;
        for step in result.steps {
            t += 1;
            let id = self.tree.push(SimulationNode {
                id: 0,
                parent: Some(parent),
                t,
                label: step.label,
                kind: NodeKind::Simulated,
                edges: step.edges,
                features: step.features,
                turn: Some(Arc::new(TurnData {
                    records: step.records,
                    knowledge: knowledge.clone(),
                    seed: result.seed,
                    origin: Origin::Run { run: result.run },
                })),
            });
            nodes.push(id);
            parent = id;
        }
        if let Some(&last) = nodes.last() {
            self.tree.set_active(last)?;
        }
        self.journal.push(JournalEvent::Run {
            from: result.from,
            turns: nodes.len(),
            seed: result.seed,
            nodes: nodes.clone(),
        });
        Ok(nodes)
    }

    pub fn run(&mut self, from: NodeId, turns: usize) -> Result<Vec<NodeId>, SessionError> {
        let job = self.prepare_run(from, turns)?;
        let result = job.execute(|_| {})?;
        self.commit_run(result)
    }

    pub fn set_active(&mut self, node: NodeId) -> Result<(), SessionError> {
        self.tree.set_active(node)?;
        self.journal.push(JournalEvent::Activated { node });
        Ok(())
    }

    fn turn_of(&self, node: NodeId) -> Result<Arc<TurnData>, SessionError> {
        self.tree.node(node)?.turn.clone().ok_or(SessionError::NodeNotSimulated(node))
    }

    pub fn stage_adjustment(&mut self, node: NodeId, adjustment: Adjustment) -> Result<&[Adjustment], SessionError> {
        let turn = self.turn_of(node)?;
        adjust::validate(&adjustment, &turn.records)?;
        self.staged.entry(node).or_default().push(adjustment.clone());
        self.journal.push(JournalEvent::Staged { node, adjustment });
        Ok(self.staged(node))
    }

    pub fn reset_adjustments(&mut self, node: NodeId) -> Result<(), SessionError> {
        self.tree.node(node)?;
        self.staged.remove(&node);
        self.journal.push(JournalEvent::Reset { node });
        Ok(())
    }

    /// Recomputes the turn that produced `node` with its staged adjustments.
    /// The result is a new sibling of `node`; `node` itself is unchanged.
    pub fn apply_adjustments(&mut self, node: NodeId) -> Result<NodeId, SessionError> {
        let adjustments = self.staged.get(&node).cloned().unwrap_or_default();
        if adjustments.is_empty() {
            return Err(SessionError::NothingStaged(node));
        }
        let turn = self.turn_of(node)?;
        let target = self.tree.node(node)?.clone();
        let parent_id = target.parent.ok_or(SessionError::NodeNotSimulated(node))?;
        let parent = self.tree.node(parent_id)?.clone();
        let timeline = self.tree.timeline(&self.dataset, parent_id)?;
        let turn_config = self.config.turn_config();
        let ctx = TurnContext {
            dataset: &self.dataset,
            edges: &parent.edges,
            features: &parent.features,
            candidates_k: turn_config.candidates_k,
        };
        let recompute = adjust::prepare(&turn.records, &adjustments, &ctx)?;
        let world = World {
            dataset: &self.dataset,
            timeline: &timeline,
            knowledge: &turn.knowledge,
        };
        let policies = self.policies()?;
        let outcome = resolve_turn(
            &world,
            &recompute.deliberations,
            &policies,
            &turn_config,
            turn.seed,
            &recompute.overrides,
        )?;
        let branch = self.tree.push(SimulationNode {
            id: 0,
            parent: Some(parent_id),
            t: target.t,
            label: target.label.clone(),
            kind: NodeKind::Simulated,
            edges: Arc::new(outcome.edges),
            features: target.features.clone(),
            turn: Some(Arc::new(TurnData {
                records: outcome.records,
                knowledge: turn.knowledge.clone(),
                seed: turn.seed,
                origin: Origin::Adjusted {
                    from: node,
                    adjustments,
                    synthetic: recompute.synthetic,
                },
            })),
        });
        self.staged.remove(&node);
        self.tree.set_active(branch)?;
        self.journal.push(JournalEvent::Applied {
            node,
            branch,
            synthetic: recompute.synthetic,
        });
        Ok(branch)
    }

    /// Changes knowledge for every later turn; recorded turns keep theirs.
    pub fn update_knowledge(&mut self, scope: KnowledgeScope, text: String) -> Result<(), SessionError> {
        match &scope {
            KnowledgeScope::Global => self.knowledge.global = text.clone(),
            KnowledgeScope::Company { company } => {
                if !self.dataset.companies.contains_key(company) {
                    return Err(SessionError::UnknownCompany(company.clone()));
                }
                self.knowledge.companies.insert(company.clone(), text.clone());
            }
        }
        self.journal.push(JournalEvent::Knowledge { scope, text });
        Ok(())
    }

    /// Explain models fitted on the path ending at `node`, cached per node.
    pub fn explain_set(&self, node: NodeId) -> Result<Arc<ExplainSet>, SessionError> {
        if let Some(e) = self.explain_cache.lock().expect("cache lock").get(&node) {
            return Ok(e.clone());
        }
        let timeline = self.tree.timeline(&self.dataset, node)?;
        let set = Arc::new(ExplainSet::fit(&self.dataset, &timeline, self.config.explain_config())?);
        self.explain_cache.lock().expect("cache lock").insert(node, set.clone());
        Ok(set)
    }

    /// Edges added or removed relative to the parent that no applied delta
    /// in the node's turn accounts for. Empty for a consistent node.
    pub fn unexplained_edges(&self, node: NodeId) -> Result<Vec<Edge>, SessionError> {
        let n = self.tree.node(node)?;
        let (Some(turn), Some(p)) = (&n.turn, n.parent) else {
            return Ok(Vec::new());
        };
        let parent = self.tree.node(p)?;
        let applied: BTreeSet<&Edge> = turn.records.iter().flat_map(|r| r.applied.iter().map(|d| &d.edge)).collect();
        Ok(n.edges
            .symmetric_difference(&parent.edges)
            .filter(|e| !applied.contains(e))
            .cloned()
            .collect())
    }

    /// JSON Lines: the journal, then one line per simulated node, then one
    /// line per (node, firm) turn record.
    pub fn export(&self) -> Result<String, SessionError> {
        let mut out = String::new();
        for (seq, entry) in self.journal.iter().enumerate() {
            push_line(&mut out, &ExportLine::Journal { seq, entry: entry.clone() })?;
        }
        let simulated: Vec<&SimulationNode> = self.tree.nodes().iter().filter(|n| n.kind == NodeKind::Simulated).collect();
        for n in &simulated {
            let turn = n.turn.as_ref().ok_or(SessionError::NodeNotSimulated(n.id))?;
            push_line(
                &mut out,
                &ExportLine::Node {
                    id: n.id,
                    parent: n.parent.ok_or(SessionError::NodeNotSimulated(n.id))?,
                    t: n.t,
                    label: n.label.clone(),
                    edges: (*n.edges).clone(),
                    features: (*n.features).clone(),
                    knowledge: turn.knowledge.clone(),
                    seed: turn.seed,
                    origin: turn.origin.clone(),
                },
            )?;
        }
        for n in &simulated {
            if let Some(turn) = &n.turn {
                for record in &turn.records {
                    push_line(
                        &mut out,
                        &ExportLine::Turn {
                            node: n.id,
                            record: record.clone(),
                        },
                    )?;
                }
            }
        }
        Ok(out)
    }

    /// Rebuilds a session from [`Session::export`] output.
    pub fn import(text: &str) -> Result<Self, SessionError> {
        let mut journal = Vec::new();
        let mut nodes: Vec<(usize, ExportLine)> = Vec::new();
        let mut records: BTreeMap<NodeId, Vec<AgentTurnRecord>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| SessionError::Import { line: i + 1, message };
            let parsed: ExportLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            match parsed {
                ExportLine::Journal { seq, entry } => {
                    if seq != journal.len() {
                        return Err(err(format!("journal entry {seq} out of order")));
                    }
                    journal.push(entry);
                }
                ExportLine::Turn { node, record } => records.entry(node).or_default().push(record),
                node @ ExportLine::Node { .. } => nodes.push((i + 1, node)),
            }
        }
        let Some(JournalEvent::Created { config, dataset: source }) = journal.first().cloned() else {
            return Err(SessionError::Import {
                line: 1,
                message: "first line must be the session creation entry".into(),
            });
        };
        let dataset = source.parse()?;
        let mut session = Self::from_source(dataset, source, config)?;
        for (line, n) in nodes {
            let ExportLine::Node {
                id,
                parent,
                t,
                label,
                edges,
                features,
                knowledge,
                seed,
                origin,
            } = n
            else {
                unreachable!()
            };
            if id != session.tree.len() {
                return Err(SessionError::Import {
                    line,
                    message: format!("node {id} out of order"),
                });
            }
            session.tree.node(parent).map_err(|e| SessionError::Import {
                line,
                message: e.to_string(),
            })?;
            session.tree.push(SimulationNode {
                id,
                parent: Some(parent),
                t,
                label,
                kind: NodeKind::Simulated,
                edges: Arc::new(edges),
                features: Arc::new(features),
                turn: Some(Arc::new(TurnData {
                    records: records.remove(&id).unwrap_or_default(),
                    knowledge,
                    seed,
                    origin,
                })),
            });
        }
        if let Some((&node, _)) = records.iter().next() {
            return Err(SessionError::Import {
                line: 0,
                message: format!("turn records for unknown node {node}"),
            });
        }
        for event in journal.iter().skip(1) {
            session.replay(event)?;
        }
        session.journal = journal;
        Ok(session)
    }

    fn replay(&mut self, event: &JournalEvent) -> Result<(), SessionError> {
        match event {
            JournalEvent::Created { .. } => {}
            JournalEvent::Run { nodes, .. } => {
                self.runs += 1;
                if let Some(&last) = nodes.last() {
                    self.tree.set_active(last)?;
                }
            }
            JournalEvent::Staged { node, adjustment } => self.staged.entry(*node).or_default().push(adjustment.clone()),
            JournalEvent::Reset { node } => {
                self.staged.remove(node);
            }
            JournalEvent::Applied { node, branch, .. } => {
                self.staged.remove(node);
                self.tree.set_active(*branch)?;
            }
            JournalEvent::Knowledge { scope, text } => match scope {
                KnowledgeScope::Global => self.knowledge.global = text.clone(),
                KnowledgeScope::Company { company } => {
                    self.knowledge.companies.insert(company.clone(), text.clone());
                }
            },
            JournalEvent::Activated { node } => self.tree.set_active(*node)?,
            JournalEvent::Configured { config } => {
                let c = config.clone();
                self.configure(c)?;
                self.journal.pop();
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ExportLine {
    Journal {
        seq: usize,
        entry: JournalEvent,
    },
    Node {
        id: NodeId,
        parent: NodeId,
        t: usize,
        label: String,
        edges: EdgeSet,
        features: FeatureFrame,
        knowledge: KnowledgeBase,
        seed: u64,
        origin: Origin,
    },
    Turn {
        node: NodeId,
        record: AgentTurnRecord,
    },
}

fn push_line(out: &mut String, line: &ExportLine) -> Result<(), SessionError> {
    out.push_str(&serde_json::to_string(line)?);
    out.push('\n');
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scsim_core::synthetic::{generate, SyntheticConfig};

    fn small() -> Dataset {
        generate(SyntheticConfig {
            firms: 10,
            quarters: 5,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn run_extends_active_chain() {
        let mut s = Session::new(small(), SessionConfig::default()).unwrap();
        let h = s.tree().active();
        let nodes = s.run(h, 3).unwrap();
        assert_eq!(nodes.len(), 3);
        assert_eq!(s.tree().active(), nodes[2]);
        assert_eq!(s.tree().node(nodes[0]).unwrap().parent, Some(h));
        assert_eq!(s.tree().node(nodes[2]).unwrap().t, h + 3);
    }

    #[test]
    fn rerun_from_same_node_branches() {
        let mut s = Session::new(small(), SessionConfig::default()).unwrap();
        let h = s.tree().active();
        let a = s.run(h, 1).unwrap();
        let b = s.run(h, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(s.tree().children(h), vec![a[0], b[0]]);
    }

    #[test]
    fn fresh_export_is_journal_only() {
        let s = Session::new(small(), SessionConfig::default()).unwrap();
        let text = s.export().unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("{\"type\":\"journal\""));
    }
}
