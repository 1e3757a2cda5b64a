//! Multi-turn driver: each turn appends one timestamp to the timeline.

use std::sync::Arc;

use scsim_core::horizon::{FeatureForecaster, HorizonError};
use scsim_core::model::next_label;
use scsim_core::{Dataset, FeatureFrame, ModelError, Timeline};
use thiserror::Error;

use crate::engine::{run_turn, EngineError, PolicyMap, TurnConfig, TurnOutcome};
use crate::view::{KnowledgeBase, World};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Horizon(#[from] HorizonError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("timeline is empty")]
    EmptyTimeline,
}

/// Features for timestamp `t`: observed when `t` is inside the history, forecast otherwise.
pub fn features_for(dataset: &Dataset, forecaster: &mut FeatureForecaster, t: usize) -> Result<FeatureFrame, SimulationError> {
    if t < dataset.horizon() {
        Ok(dataset.features_at(t)?)
    } else {
        Ok(forecaster.frame_at(t)?.clone())
    }
}

/// Appends the outcome of a turn to `timeline`.
pub fn extend_timeline(
    dataset: &Dataset,
    timeline: &mut Timeline,
    forecaster: &mut FeatureForecaster,
    outcome: &TurnOutcome,
) -> Result<(), SimulationError> {
    let t = timeline.len();
    let prev = timeline.labels.last().ok_or(SimulationError::EmptyTimeline)?;
    let label = if t < dataset.horizon() {
        dataset.timestamps[t].clone()
    } else {
        next_label(prev, t)
    };
    let frame = features_for(dataset, forecaster, t)?;
    timeline.push(label, Arc::new(outcome.edges.clone()), Arc::new(frame))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    dataset: &Dataset,
    start: Timeline,
    knowledge: &KnowledgeBase,
    policies: &PolicyMap,
    forecaster: &mut FeatureForecaster,
    turns: usize,
    config: &TurnConfig,
    seed: u64,
) -> Result<(Timeline, Vec<TurnOutcome>), SimulationError> {
    if start.is_empty() {
        return Err(SimulationError::EmptyTimeline);
    }
    let mut timeline = start;
    let mut outcomes = Vec::with_capacity(turns);
    for _ in 0..turns {
        let world = World {
            dataset,
            timeline: &timeline,
            knowledge,
        };
        let outcome = run_turn(&world, policies, config, seed)?;
        for f in outcome.failures() {
            log::warn!("turn at {}: {} no-op after {} failure: {}", outcome.t, f.company, f.stage, f.message);
        }
        extend_timeline(dataset, &mut timeline, forecaster, &outcome)?;
        outcomes.push(outcome);
    }
    Ok((timeline, outcomes))
}
