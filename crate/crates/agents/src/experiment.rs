//! Repeated one-step predictions for focal firms, scored against the observed next step.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use scsim_core::evaluation::{build_report, CrPooling, EvalError, EvalReport, RunObservation};
use scsim_core::CompanyId;
use scsim_core::Dataset;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_turn, EngineError, PolicyMap, TurnConfig};
use crate::protocol::PolicyFailure;
use crate::view::{KnowledgeBase, World};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("predicting step {target} needs {needed} prior steps, only {available} available")]
    InsufficientHistory { target: usize, needed: usize, available: usize },
    #[error("unknown focal company `{0}`")]
    UnknownFocal(CompanyId),
    #[error("no focal companies given")]
    NoFocal,
    #[error("{runs} runs over {firms} firms leaves some firm with fewer than 2 runs")]
    TooFewRuns { runs: usize, firms: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] scsim_core::ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub history_len: usize,
    /// Total runs, split as evenly as possible across focal firms.
    pub runs: usize,
    pub seed_base: u64,
    #[serde(default)]
    pub pooling: CrPooling,
    /// Observed step to predict; defaults to the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(default = "default_k")]
    pub candidates_k: usize,
}

fn default_k() -> usize {
    scsim_core::query::DEFAULT_K
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            history_len: 4,
            runs: 80,
            seed_base: 0,
            pooling: CrPooling::Slot,
            target: None,
            candidates_k: scsim_core::query::DEFAULT_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run: usize,
    pub firm: CompanyId,
    pub seed: u64,
}

/// Splits `runs` over `focal` in order; earlier firms take the remainder.
pub fn plan_runs(focal: &[CompanyId], runs: usize, seed_base: u64) -> Vec<RunPlan> {
    let n = focal.len().max(1);
    let mut out = Vec::with_capacity(runs);
    let mut run = 0;
    for (i, firm) in focal.iter().enumerate() {
        let count = runs / n + usize::from(i < runs % n);
        for _ in 0..count {
            out.push(RunPlan {
                run,
                firm: firm.clone(),
                seed: seed_base.wrapping_add(run as u64),
            });
            run += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub report: EvalReport,
    pub plan: Vec<RunPlan>,
    pub observations: Vec<RunObservation>,
    pub failures: Vec<PolicyFailure>,
}

/// Every run starts from the observed history before `target`; only the
/// focal firm deliberates, every firm replies. `factory(run, seed)` supplies
/// the policies for that run.
pub fn run_experiment<F>(
    dataset: &Dataset,
    factory: F,
    focal: &[CompanyId],
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError>
where
    F: Fn(usize, u64) -> PolicyMap + Sync,
{
    if focal.is_empty() {
        return Err(ExperimentError::NoFocal);
    }
    for id in focal {
        if !dataset.companies.contains_key(id) {
            return Err(ExperimentError::UnknownFocal(id.clone()));
        }
    }
    if config.runs < 2 * focal.len() {
        return Err(ExperimentError::TooFewRuns {
            runs: config.runs,
            firms: focal.len(),
        });
    }
    let target = config.target.unwrap_or(dataset.horizon().saturating_sub(1));
    if config.history_len == 0 || target < config.history_len || target >= dataset.horizon() {
        return Err(ExperimentError::InsufficientHistory {
            target,
            needed: config.history_len.max(1),
            available: target.min(dataset.horizon()),
        });
    }
    let timeline = dataset.timeline().truncated(target);
    let knowledge = KnowledgeBase::from_dataset(dataset);
    let observed = dataset.network_at(target)?;
    let prev = dataset.network_at(target - 1)?;
    let plan = plan_runs(focal, config.runs, config.seed_base);

    let results: Vec<Result<(RunObservation, Vec<PolicyFailure>), ExperimentError>> = plan
        .par_iter()
        .map(|p| {
            let policies = factory(p.run, p.seed);
            let turn = TurnConfig {
                reference_length: config.history_len,
                candidates_k: config.candidates_k,
                deliberating: Some(BTreeSet::from([p.firm.clone()])),
                parallel: false,
            };
            let world = World {
                dataset,
                timeline: &timeline,
                knowledge: &knowledge,
            };
            let outcome = run_turn(&world, &policies, &turn, p.seed)?;
            let failures = outcome.failures().cloned().collect();
            Ok((
                RunObservation {
                    firm: p.firm.clone(),
                    run: p.run,
                    prev: (*prev).clone(),
                    predicted: outcome.edges,
                    observed: (*observed).clone(),
                    universe: dataset.company_ids().filter(|id| **id != p.firm).cloned().collect(),
                },
                failures,
            ))
        })
        .collect();
    let mut observations = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        let (obs, f) = r?;
        observations.push(obs);
        failures.extend(f);
    }
    let report = build_report(&observations, config.pooling)?;
    Ok(ExperimentResult {
        report,
        plan,
        observations,
        failures,
    })
}

/// Runs per firm in a plan.
pub fn runs_per_firm(plan: &[RunPlan]) -> BTreeMap<CompanyId, usize> {
    let mut m = BTreeMap::new();
    for p in plan {
        *m.entry(p.firm.clone()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_runs_over_four_firms() {
        let focal: Vec<CompanyId> = ["A", "B", "C", "D"].iter().map(|s| CompanyId::from(*s)).collect();
        let plan = plan_runs(&focal, 80, 100);
        assert_eq!(plan.len(), 80);
        assert!(runs_per_firm(&plan).values().all(|&n| n == 20));
        assert_eq!(plan[79].seed, 179);
    }

    #[test]
    fn remainder_goes_to_first_firms() {
        let focal: Vec<CompanyId> = ["A", "B", "C"].iter().map(|s| CompanyId::from(*s)).collect();
        let counts = runs_per_firm(&plan_runs(&focal, 7, 0));
        assert_eq!(counts.values().copied().collect::<Vec<_>>(), vec![3, 2, 2]);
    }
}
