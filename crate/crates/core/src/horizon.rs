//! Autoregressive extension of firm features past the observed horizon.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompanyId, Dataset, FeatureFrame, FeatureVector};
use crate::regression::{lasso, least_squares, LassoConfig, LinearModel, RegressionError};

pub const FEATURE_MIN: f64 = 0.0;
pub const FEATURE_MAX: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HorizonError {
    #[error("series of length {len} is too short for window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("series contains a non-finite value")]
    NonFiniteValue,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("need at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("unknown series model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesModelKind {
    Linear,
    Lasso,
}

impl fmt::Display for SeriesModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Lasso => "lasso",
        })
    }
}

impl FromStr for SeriesModelKind {
    type Err = HorizonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear_regression" => Ok(Self::Linear),
            "lasso" | "lasso_regression" => Ok(Self::Lasso),
            _ => Err(HorizonError::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtenderModel {
    pub kind: SeriesModelKind,
    pub window: usize,
    pub model: LinearModel,
}

fn windows(series: &[f64], w: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    (0..series.len() - w)
        .map(|i| (series[i..i + w].to_vec(), series[i + w]))
        .unzip()
}

/// Fits a one-step forecaster on sliding windows of length `w`.
pub fn fit_extender(series: &[f64], kind: SeriesModelKind, w: usize, lambda: f64) -> Result<ExtenderModel, HorizonError> {
    if w == 0 {
        return Err(HorizonError::InvalidWindow);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(HorizonError::NonFiniteValue);
    }
    if series.len() < w + 1 {
        return Err(HorizonError::SeriesTooShort {
            len: series.len(),
            window: w,
        });
    }
    let (x, y) = windows(series, w);
    let model = match kind {
        SeriesModelKind::Linear => least_squares(&x, &y)?.model,
        SeriesModelKind::Lasso => lasso(&x, &y, lambda, LassoConfig::default())?.model,
    };
    Ok(ExtenderModel { kind, window: w, model })
}

impl ExtenderModel {
    /// Unclamped one-step prediction from the last `window` values.
    pub fn predict_raw(&self, series: &[f64]) -> Result<f64, HorizonError> {
        if series.len() < self.window {
            return Err(HorizonError::SeriesTooShort {
                len: series.len(),
                window: self.window,
            });
        }
        Ok(self.model.predict(&series[series.len() - self.window..]))
    }
}

/// One-step prediction clamped to the feature scale.
pub fn extend(model: &ExtenderModel, series: &[f64]) -> Result<f64, HorizonError> {
    Ok(model.predict_raw(series)?.clamp(FEATURE_MIN, FEATURE_MAX))
}

/// Iterates [`extend`], feeding each prediction back in.
pub fn extend_steps(model: &ExtenderModel, series: &[f64], steps: usize) -> Result<Vec<f64>, HorizonError> {
    let mut buf = series.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = extend(model, &buf)?;
        buf.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Quantile by linear interpolation at position `p·n − 0.5` of the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeries {
    pub company: CompanyId,
    pub feature: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: SeriesModelKind,
    pub errors: Vec<f64>,
    pub runtimes_ms: Vec<f64>,
    pub error_box: Option<BoxStats>,
    pub runtime_box: Option<BoxStats>,
    pub skipped: Vec<SkippedSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionReport {
    pub folds: usize,
    pub window: usize,
    pub kinds: Vec<KindReport>,
}

/// Rolling-origin evaluation: fold `j` trains on the first `n − folds + j`
/// points of each series and scores the absolute error on the next one.
pub fn model_selection_report(
    dataset: &Dataset,
    kinds: &[SeriesModelKind],
    folds: usize,
    window: usize,
    lambda: f64,
) -> Result<ModelSelectionReport, HorizonError> {
    if folds < 2 {
        return Err(HorizonError::InvalidFolds(folds));
    }
    if window == 0 {
        return Err(HorizonError::InvalidWindow);
    }
    let n = dataset.horizon();
    let mut reports = Vec::new();
    for &kind in kinds {
        let mut errors = Vec::new();
        let mut runtimes = Vec::new();
        let mut skipped = Vec::new();
        for company in dataset.companies.values() {
            for (f, name) in dataset.feature_names.iter().enumerate() {
                let series: Vec<f64> = company.features.iter().map(|fv| fv.0[f]).collect();
                if n < folds + window + 1 {
                    skipped.push(SkippedSeries {
                        company: company.id.clone(),
                        feature: name.clone(),
                        reason: HorizonError::SeriesTooShort {
                            len: n.saturating_sub(folds),
                            window,
                        }
                        .to_string(),
                    });
                    continue;
                }
                for j in 0..folds {
                    let train = &series[..n - folds + j];
                    let started = Instant::now();
                    let model = fit_extender(train, kind, window, lambda)?;
                    let pred = extend(&model, train)?;
                    runtimes.push(started.elapsed().as_secs_f64() * 1e3);
                    errors.push((pred - series[n - folds + j]).abs());
                }
            }
        }
        reports.push(KindReport {
            kind,
            error_box: BoxStats::from_samples(&errors),
            runtime_box: BoxStats::from_samples(&runtimes),
            errors,
            runtimes_ms: runtimes,
            skipped,
        });
    }
    Ok(ModelSelectionReport {
        folds,
        window,
        kinds: reports,
    })
}

/// Per-(firm, feature) forecasters fitted once on the observed history.
///
/// Features are independent of network structure, so every simulation branch
/// shares the same extension; frames are computed lazily and cached.
#[derive(Clone, Debug)]
pub struct FeatureForecaster {
    kind: SeriesModelKind,
    history: BTreeMap<CompanyId, Vec<Vec<f64>>>,
    models: BTreeMap<CompanyId, Vec<Option<ExtenderModel>>>,
    horizon: usize,
    cache: Vec<FeatureFrame>,
}

impl FeatureForecaster {
    /// Window `w` shrinks to fit short series; series with a single point are
    /// carried forward unchanged.
    pub fn fit(dataset: &Dataset, kind: SeriesModelKind, window: usize, lambda: f64) -> Result<Self, HorizonError> {
        if window == 0 {
            return Err(HorizonError::InvalidWindow);
        }
        let horizon = dataset.horizon();
        let mut history = BTreeMap::new();
        let mut models = BTreeMap::new();
        for (id, company) in &dataset.companies {
            let mut per_feature = Vec::new();
            let mut series_list = Vec::new();
            for f in 0..dataset.feature_names.len() {
                let series: Vec<f64> = company.features.iter().map(|fv| fv.0[f]).collect();
                let w = window.min(series.len().saturating_sub(1));
                let model = if w == 0 {
                    None
                } else {
                    if w < window {
                        log::debug!("{id}: forecaster window reduced to {w}");
                    }
                    Some(fit_extender(&series, kind, w, lambda)?)
                };
                per_feature.push(model);
                series_list.push(series);
            }
            models.insert(id.clone(), per_feature);
            history.insert(id.clone(), series_list);
        }
        Ok(Self {
            kind,
            history,
            models,
            horizon,
            cache: Vec::new(),
        })
    }

    pub fn kind(&self) -> SeriesModelKind {
        self.kind
    }

    /// Features at absolute timestamp `t ≥ horizon`.
    pub fn frame_at(&mut self, t: usize) -> Result<&FeatureFrame, HorizonError> {
        assert!(t >= self.horizon, "timestamp {t} is observed, not forecast");
        while self.cache.len() <= t - self.horizon {
            let mut frame = FeatureFrame::new();
            for (id, series_list) in self.history.iter_mut() {
                let mut values = Vec::with_capacity(series_list.len());
                for (f, series) in series_list.iter_mut().enumerate() {
                    let next = match &self.models[id][f] {
                        Some(m) => extend(m, series)?,
                        None => *series.last().expect("non-empty history"),
                    };
                    series.push(next);
                    values.push(next);
                }
                frame.insert(id.clone(), FeatureVector(values));
            }
            self.cache.push(frame);
        }
        Ok(&self.cache[t - self.horizon])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_trend_is_exact() {
        let m = fit_extender(&[1.0, 2.0, 3.0, 4.0], SeriesModelKind::Linear, 2, 0.0).unwrap();
        assert!((extend(&m, &[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-6);
        let steps = extend_steps(&m, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert!((steps[0] - 5.0).abs() < 1e-6);
        assert!((steps[1] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_series_predicts_constant() {
        for kind in [SeriesModelKind::Linear, SeriesModelKind::Lasso] {
            let m = fit_extender(&[7.0; 4], kind, 2, 0.1).unwrap();
            assert!((extend(&m, &[7.0; 4]).unwrap() - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn predictions_clamp_to_scale() {
        let series = [70.0, 80.0, 90.0, 100.0];
        let m = fit_extender(&series, SeriesModelKind::Linear, 2, 0.0).unwrap();
        assert!(m.predict_raw(&[100.0, 113.0]).unwrap() > 100.0);
        assert_eq!(extend(&m, &[100.0, 113.0]).unwrap(), 100.0);
        let down = fit_extender(&[30.0, 20.0, 10.0, 0.0], SeriesModelKind::Linear, 1, 0.0).unwrap();
        assert_eq!(extend(&down, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn short_or_bad_series() {
        assert_eq!(
            fit_extender(&[1.0, 2.0], SeriesModelKind::Linear, 2, 0.0).unwrap_err(),
            HorizonError::SeriesTooShort { len: 2, window: 2 }
        );
        assert_eq!(
            fit_extender(&[1.0, f64::NAN, 3.0], SeriesModelKind::Linear, 1, 0.0).unwrap_err(),
            HorizonError::NonFiniteValue
        );
        let m = fit_extender(&[1.0, 2.0, 3.0], SeriesModelKind::Linear, 2, 0.0).unwrap();
        assert!(matches!(extend(&m, &[1.0]), Err(HorizonError::SeriesTooShort { .. })));
    }

    #[test]
    fn hazen_quartiles() {
        let b = BoxStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 1.5, 2.5, 3.5, 4.0));
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
        assert!(BoxStats::from_samples(&[]).is_none());
    }
}
