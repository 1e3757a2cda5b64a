//! Per-firm performance predictors over own features and first-order
//! connections, with Shapley attribution.
//!
//! Network structure enters the design as a supplier count, a customer count,
//! and one 0/1 presence column per counterpart that ever neighbours the focal
//! firm. Presence columns give every partner its own attribution, which the
//! focus layout places one berry per partner. A [`StructureEncoder`] can
//! replace that encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::horizon::BoxStats;
use crate::metrics::{evaluate_kind, MetricError, PerformanceMap, PerformanceMetricKind};
use crate::model::{customers_in, partners_in, suppliers_in, CompanyId, Dataset, ModelError, Timeline};
use crate::regression::{
    lasso, least_squares, select_lambda_loo, LassoConfig, Regressor, RegressionError, LAMBDA_GRID,
};

pub const SHAPLEY_PERMUTATIONS: usize = 16_384;
pub const SHAPLEY_SEED: u64 = 0x5eed_5a9e;
pub const MIN_SAMPLES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("need at least {MIN_SAMPLES} timestamps, got {0}")]
    TooFewSamples(usize),
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no predictor for `{0}`")]
    MissingPredictor(String),
    #[error("unknown explain model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainModelKind {
    Linear,
    Lasso,
}

impl fmt::Display for ExplainModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Lasso => "lasso",
        })
    }
}

impl FromStr for ExplainModelKind {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear_regression" => Ok(Self::Linear),
            "lasso" | "lasso_regression" => Ok(Self::Lasso),
            _ => Err(ExplainError::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainFeatureSpace {
    pub names: Vec<String>,
    /// Number of own (dataset) features at the front of `names`.
    pub own_features: usize,
    /// Counterparts with a presence column, in column order.
    pub partners: Vec<CompanyId>,
}

impl ExplainFeatureSpace {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn supplier_count_index(&self) -> usize {
        self.own_features
    }

    pub fn customer_count_index(&self) -> usize {
        self.own_features + 1
    }

    pub fn presence_index(&self, partner: &CompanyId) -> Option<usize> {
        self.partners
            .iter()
            .position(|p| p == partner)
            .map(|i| self.own_features + 2 + i)
    }
}

pub fn presence_name(partner: &CompanyId) -> String {
    format!("partner:{partner}")
}

/// Turns the focal firm's neighbourhood at one timestamp into design columns.
pub trait StructureEncoder: Send + Sync {
    fn columns(&self, timeline: &Timeline, focal: &CompanyId, timestamps: &[usize]) -> Result<Vec<String>, ExplainError>;
    fn encode(&self, timeline: &Timeline, focal: &CompanyId, t: usize, columns: &[String]) -> Result<Vec<f64>, ExplainError>;
}

/// Counts plus one presence indicator per counterpart.
pub struct PresenceEncoder;

impl StructureEncoder for PresenceEncoder {
    fn columns(&self, timeline: &Timeline, focal: &CompanyId, timestamps: &[usize]) -> Result<Vec<String>, ExplainError> {
        let mut partners = BTreeSet::new();
        for &t in timestamps {
            partners.extend(partners_in(&*timeline.edges(t)?, focal));
        }
        let mut cols = vec!["supplier_count".to_string(), "customer_count".to_string()];
        cols.extend(partners.iter().map(presence_name));
        Ok(cols)
    }

    fn encode(&self, timeline: &Timeline, focal: &CompanyId, t: usize, columns: &[String]) -> Result<Vec<f64>, ExplainError> {
        let edges = timeline.edges(t)?;
        let current = partners_in(&edges, focal);
        let mut row = vec![
            suppliers_in(&edges, focal).len() as f64,
            customers_in(&edges, focal).len() as f64,
        ];
        for col in &columns[2..] {
            let id = col.strip_prefix("partner:").unwrap_or(col);
            row.push(if current.contains(&CompanyId::from(id)) { 1.0 } else { 0.0 });
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub timestamps: Vec<usize>,
    pub space: ExplainFeatureSpace,
}

impl DesignMatrix {
    pub fn row_at(&self, t: usize) -> Option<&[f64]> {
        self.timestamps.iter().position(|&x| x == t).map(|i| self.rows[i].as_slice())
    }
}

/// Performance of every firm at each requested timestamp.
pub fn performance_series(
    timeline: &Timeline,
    metric: PerformanceMetricKind,
    timestamps: &[usize],
) -> Result<BTreeMap<usize, PerformanceMap>, ExplainError> {
    timestamps
        .iter()
        .map(|&t| {
            let edges = timeline.edges(t)?;
            Ok((t, evaluate_kind(metric, &edges, timeline.network.nodes())?))
        })
        .collect()
}

pub fn build_design_matrix(
    timeline: &Timeline,
    focal: &CompanyId,
    timestamps: &[usize],
    feature_names: &[String],
    metric: PerformanceMetricKind,
) -> Result<DesignMatrix, ExplainError> {
    let perf = performance_series(timeline, metric, timestamps)?;
    build_design_matrix_with(&PresenceEncoder, timeline, focal, timestamps, feature_names, &perf)
}

pub fn build_design_matrix_with(
    encoder: &dyn StructureEncoder,
    timeline: &Timeline,
    focal: &CompanyId,
    timestamps: &[usize],
    feature_names: &[String],
    performance: &BTreeMap<usize, PerformanceMap>,
) -> Result<DesignMatrix, ExplainError> {
    if timestamps.len() < MIN_SAMPLES {
        return Err(ExplainError::TooFewSamples(timestamps.len()));
    }
    if !timeline.network.nodes().contains(focal) {
        return Err(ModelError::UnknownCompany(focal.to_string()).into());
    }
    let structure = encoder.columns(timeline, focal, timestamps)?;
    let mut rows = Vec::with_capacity(timestamps.len());
    let mut targets = Vec::with_capacity(timestamps.len());
    for &t in timestamps {
        let own = timeline
            .features(t)?
            .get(focal)
            .ok_or_else(|| ModelError::UnknownCompany(focal.to_string()))?;
        let mut row = own.0.clone();
        row.extend(encoder.encode(timeline, focal, t, &structure)?);
        rows.push(row);
        let score = performance
            .get(&t)
            .and_then(|m| m.get(focal))
            .ok_or_else(|| ModelError::TimestampOutOfRange { index: t, len: timeline.len() })?;
        targets.push(*score);
    }
    let partners = structure[2..]
        .iter()
        .map(|c| CompanyId::from(c.strip_prefix("partner:").unwrap_or(c)))
        .collect();
    let mut names = feature_names.to_vec();
    names.extend(structure);
    Ok(DesignMatrix {
        rows,
        targets,
        timestamps: timestamps.to_vec(),
        space: ExplainFeatureSpace {
            names,
            own_features: feature_names.len(),
            partners,
        },
    })
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub kind: ExplainModelKind,
    pub lambda: Option<f64>,
    pub model: Arc<dyn Regressor>,
    /// Training column means; the attribution baseline.
    pub means: Vec<f64>,
    /// The design was rank deficient; a minimum-norm solution was used.
    pub singular: bool,
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict(x)
    }
}

/// Fits a predictor. `lambda = None` selects the Lasso penalty by
/// leave-one-out over [`LAMBDA_GRID`].
pub fn fit_explainer(
    x: &[Vec<f64>],
    y: &[f64],
    kind: ExplainModelKind,
    lambda: Option<f64>,
) -> Result<Predictor, ExplainError> {
    match kind {
        ExplainModelKind::Linear => {
            let fit = least_squares(x, y)?;
            if fit.rank_deficient {
                log::debug!("singular design (rank {} of {}), using minimum-norm fit", fit.rank, fit.model.coefficients.len());
            }
            Ok(Predictor {
                kind,
                lambda: None,
                means: fit.model.means.clone(),
                model: Arc::new(fit.model),
                singular: fit.rank_deficient,
            })
        }
        ExplainModelKind::Lasso => {
            let lambda = match lambda {
                Some(l) => l,
                None => select_lambda_loo(x, y, &LAMBDA_GRID, LassoConfig::default())?.0,
            };
            let fit = lasso(x, y, lambda, LassoConfig::default())?;
            if !fit.converged {
                log::warn!("lasso stopped after {} sweeps without converging", fit.sweeps);
            }
            Ok(Predictor {
                kind,
                lambda: Some(lambda),
                means: fit.model.means.clone(),
                model: Arc::new(fit.model),
                singular: false,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub prediction: f64,
    pub phi: Vec<Contribution>,
}

impl Attribution {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.phi.iter().find(|c| c.feature == feature).map(|c| c.phi)
    }

    pub fn total(&self) -> f64 {
        self.base_value + self.phi.iter().map(|c| c.phi).sum::<f64>()
    }
}

/// Shapley values of `x` against a single baseline point.
///
/// Additive models get the exact `β_i (x_i − baseline_i)`; anything else is
/// estimated from [`SHAPLEY_PERMUTATIONS`] permutations with a fixed seed.
pub fn shapley(
    model: &dyn Regressor,
    names: &[String],
    x: &[f64],
    baseline: &[f64],
) -> Result<Attribution, ExplainError> {
    let p = model.n_features();
    for len in [x.len(), baseline.len(), names.len()] {
        if len != p {
            return Err(ExplainError::DimensionMismatch { got: len, expected: p });
        }
    }
    let base_value = model.predict(baseline);
    let prediction = model.predict(x);
    let values = match model.linear() {
        Some(lin) => lin
            .coefficients
            .iter()
            .zip(x.iter().zip(baseline))
            .map(|(b, (xi, mi))| b * (xi - mi))
            .collect(),
        None => sampled_shapley(model, x, baseline, SHAPLEY_PERMUTATIONS, SHAPLEY_SEED),
    };
    Ok(Attribution {
        base_value,
        prediction,
        phi: names
            .iter()
            .zip(values)
            .map(|(n, phi)| Contribution {
                feature: n.clone(),
                phi,
            })
            .collect(),
    })
}

pub fn attribute(predictor: &Predictor, space: &ExplainFeatureSpace, x: &[f64]) -> Result<Attribution, ExplainError> {
    shapley(predictor.model.as_ref(), &space.names, x, &predictor.means)
}

/// Permutation-sampling estimate. Each drawn order is walked in all of its
/// cyclic rotations and again reversed, so every feature is visited at every
/// position equally often. Per-walk marginals telescope, so the estimate
/// satisfies efficiency up to rounding. `permutations` is the walk budget.
pub fn sampled_shapley(model: &dyn Regressor, x: &[f64], baseline: &[f64], permutations: usize, seed: u64) -> Vec<f64> {
    let p = x.len();
    let mut phi = vec![0.0; p];
    if p == 0 {
        return phi;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    let draws = permutations.div_ceil(2 * p).max(1);
    let walk = |order: &[usize], phi: &mut [f64]| {
        let mut z = baseline.to_vec();
        let mut prev = model.predict(&z);
        for &i in order {
            z[i] = x[i];
            let cur = model.predict(&z);
            phi[i] += cur - prev;
            prev = cur;
        }
    };
    for _ in 0..draws {
        order.shuffle(&mut rng);
        for _ in 0..2 {
            for _ in 0..p {
                walk(&order, &mut phi);
                order.rotate_left(1);
            }
            order.reverse();
        }
    }
    let count = (2 * p * draws) as f64;
    phi.iter_mut().for_each(|v| *v /= count);
    phi
}

/// Customer share of absolute partner attribution: `C / (S + C)`, 0.5 when both are zero.
pub fn influence_ratio(
    attr: &Attribution,
    space: &ExplainFeatureSpace,
    suppliers: &BTreeSet<CompanyId>,
    customers: &BTreeSet<CompanyId>,
) -> f64 {
    let side = |set: &BTreeSet<CompanyId>| -> f64 {
        set.iter()
            .filter_map(|id| space.presence_index(id))
            .map(|i| attr.phi[i].phi.abs())
            .sum()
    };
    let s = side(suppliers);
    let c = side(customers);
    if s + c == 0.0 {
        0.5
    } else {
        c / (s + c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoilSummary {
    pub group_mean_performance: f64,
    pub focal_contribution: f64,
    /// −1, 0 or +1.
    pub polarity: i8,
    /// |contribution| relative to the largest group of the same focal firm and timestamp.
    pub magnitude: f64,
    /// Members skipped for lack of a predictor.
    #[serde(default)]
    pub missing: Vec<CompanyId>,
}

/// Per-firm predictors and attributions over one timeline.
#[derive(Clone, Debug)]
pub struct CompanyExplainer {
    pub design: DesignMatrix,
    pub predictor: Predictor,
    pub attributions: Vec<Attribution>,
}

impl CompanyExplainer {
    pub fn attribution_at(&self, t: usize) -> Option<&Attribution> {
        self.design
            .timestamps
            .iter()
            .position(|&x| x == t)
            .map(|i| &self.attributions[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub kind: ExplainModelKind,
    /// `None` selects by leave-one-out (Lasso only).
    pub lambda: Option<f64>,
    pub metric: PerformanceMetricKind,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            kind: ExplainModelKind::Lasso,
            lambda: None,
            metric: PerformanceMetricKind::PageRank,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExplainSet {
    pub config: ExplainConfig,
    pub performance: BTreeMap<usize, PerformanceMap>,
    pub explainers: BTreeMap<CompanyId, CompanyExplainer>,
    pub failures: BTreeMap<CompanyId, String>,
}

impl ExplainSet {
    /// Fits one predictor per firm over every timestamp of `timeline`.
    pub fn fit(dataset: &Dataset, timeline: &Timeline, config: ExplainConfig) -> Result<Self, ExplainError> {
        let timestamps: Vec<usize> = (0..timeline.len()).collect();
        let performance = performance_series(timeline, config.metric, &timestamps)?;
        let mut explainers = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for id in dataset.company_ids() {
            let result = build_design_matrix_with(
                &PresenceEncoder,
                timeline,
                id,
                &timestamps,
                &dataset.feature_names,
                &performance,
            )
            .and_then(|design| {
                let predictor = fit_explainer(&design.rows, &design.targets, config.kind, config.lambda)?;
                let attributions = design
                    .rows
                    .iter()
                    .map(|row| attribute(&predictor, &design.space, row))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(CompanyExplainer {
                    design,
                    predictor,
                    attributions,
                })
            });
            match result {
                Ok(e) => {
                    explainers.insert(id.clone(), e);
                }
                Err(e) => {
                    log::warn!("no explain model for {id}: {e}");
                    failures.insert(id.clone(), e.to_string());
                }
            }
        }
        Ok(Self {
            config,
            performance,
            explainers,
            failures,
        })
    }

    pub fn get(&self, id: &CompanyId) -> Option<&CompanyExplainer> {
        self.explainers.get(id)
    }

    pub fn attribution(&self, id: &CompanyId, t: usize) -> Option<&Attribution> {
        self.explainers.get(id).and_then(|e| e.attribution_at(t))
    }

    pub fn performance_of(&self, id: &CompanyId, t: usize) -> f64 {
        self.performance
            .get(&t)
            .and_then(|m| m.get(id))
            .copied()
            .unwrap_or(0.0)
    }

    /// Raw soil summary of `focal`'s influence on `members` at `t` (magnitude unset).
    pub fn group_soil(&self, focal: &CompanyId, members: &[CompanyId], t: usize) -> SoilSummary {
        let group_mean_performance = if members.is_empty() {
            0.0
        } else {
            members.iter().map(|m| self.performance_of(m, t)).sum::<f64>() / members.len() as f64
        };
        let mut missing = Vec::new();
        let mut contributions = Vec::new();
        for m in members {
            match self.attribution(m, t) {
                Some(attr) => contributions.push(attr.get(&presence_name(focal)).unwrap_or(0.0)),
                None => {
                    log::warn!("{}", ExplainError::MissingPredictor(m.to_string()));
                    missing.push(m.clone());
                }
            }
        }
        let focal_contribution = if contributions.is_empty() {
            0.0
        } else {
            contributions.iter().sum::<f64>() / contributions.len() as f64
        };
        SoilSummary {
            group_mean_performance,
            focal_contribution,
            polarity: sign(focal_contribution),
            magnitude: 0.0,
            missing,
        }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Sets each magnitude to `|contribution| / max |contribution|` (0 when all are zero).
pub fn normalize_soils<'a>(soils: impl IntoIterator<Item = &'a mut SoilSummary>) {
    let mut soils: Vec<&mut SoilSummary> = soils.into_iter().collect();
    let max = soils
        .iter()
        .map(|s| s.focal_contribution.abs())
        .fold(0.0, f64::max);
    for s in soils.iter_mut() {
        s.magnitude = if max > 0.0 {
            s.focal_contribution.abs() / max
        } else {
            0.0
        };
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainKindReport {
    pub kind: ExplainModelKind,
    pub errors: Vec<f64>,
    pub runtimes_ms: Vec<f64>,
    pub error_box: Option<BoxStats>,
    pub runtime_box: Option<BoxStats>,
}

/// Leave-one-out absolute errors and fit times per model kind across all firms.
pub fn model_selection_report(
    dataset: &Dataset,
    timeline: &Timeline,
    kinds: &[ExplainModelKind],
    metric: PerformanceMetricKind,
    lambda: Option<f64>,
) -> Result<Vec<ExplainKindReport>, ExplainError> {
    let timestamps: Vec<usize> = (0..timeline.len()).collect();
    let perf = performance_series(timeline, metric, &timestamps)?;
    let designs: Vec<DesignMatrix> = dataset
        .company_ids()
        .filter_map(|id| {
            build_design_matrix_with(&PresenceEncoder, timeline, id, &timestamps, &dataset.feature_names, &perf).ok()
        })
        .collect();
    let mut out = Vec::new();
    for &kind in kinds {
        let mut errors = Vec::new();
        let mut runtimes = Vec::new();
        for d in &designs {
            let n = d.rows.len();
            for hold in 0..n {
                let xs: Vec<Vec<f64>> = (0..n).filter(|&i| i != hold).map(|i| d.rows[i].clone()).collect();
                let ys: Vec<f64> = (0..n).filter(|&i| i != hold).map(|i| d.targets[i]).collect();
                let started = Instant::now();
                let p = fit_explainer(&xs, &ys, kind, lambda.or(Some(0.01)))?;
                runtimes.push(started.elapsed().as_secs_f64() * 1e3);
                errors.push((p.predict(&d.rows[hold]) - d.targets[hold]).abs());
            }
        }
        out.push(ExplainKindReport {
            kind,
            error_box: BoxStats::from_samples(&errors),
            runtime_box: BoxStats::from_samples(&runtimes),
            errors,
            runtimes_ms: runtimes,
        });
    }
    Ok(out)
}
