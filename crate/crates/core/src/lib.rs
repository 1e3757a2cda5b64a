//! Core of the supply-chain simulator: the temporal network model, performance
//! metrics, candidate queries, feature forecasting, attribution, evaluation
//! statistics and layout geometry.

pub mod evaluation;
pub mod explain;
pub mod horizon;
pub mod ingest;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod query;
pub mod regression;
pub mod synthetic;

pub use model::{
    CompanyId, CompanyRecord, Dataset, Edge, EdgeLifecycle, EdgeSet, FeatureFrame, FeatureVector, ModelError,
    TemporalNetwork, Timeline, Timestamp,
};
