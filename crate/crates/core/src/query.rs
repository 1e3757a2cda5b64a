//! Candidate retrieval: industry filter plus weighted, pool-normalised feature scores.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{partners_in, CompanyId, Dataset, EdgeSet, FeatureFrame, FeatureVector, ModelError};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("weight for `{0}` is not finite")]
    NonFiniteWeight(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedScore {
    pub feature: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct QueryConstraint {
    /// Allowed industries; empty means any.
    pub industry_set: Vec<String>,
    pub weighted_scores: Vec<WeightedScore>,
}

impl QueryConstraint {
    pub fn uniform(feature_names: &[String]) -> Self {
        Self {
            industry_set: Vec::new(),
            weighted_scores: feature_names
                .iter()
                .map(|f| WeightedScore {
                    feature: f.clone(),
                    weight: 1.0 / feature_names.len() as f64,
                })
                .collect(),
        }
    }

    pub fn validate(&self, feature_names: &[String]) -> Result<(), QueryError> {
        for ws in &self.weighted_scores {
            if !feature_names.contains(&ws.feature) {
                return Err(QueryError::UnknownFeature(ws.feature.clone()));
            }
            if !ws.weight.is_finite() {
                return Err(QueryError::NonFiniteWeight(ws.feature.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CompanyId,
    pub score: f64,
    pub industry: String,
    pub features: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct CandidateList {
    pub entries: Vec<Candidate>,
    /// Set when no company passed the filters.
    #[serde(default)]
    pub empty_pool: bool,
}

impl CandidateList {
    pub fn ids(&self) -> impl Iterator<Item = &CompanyId> {
        self.entries.iter().map(|c| &c.id)
    }
}

/// Descending score, then ascending id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

/// Ranks companies in `features` against `constraint`.
///
/// Each weighted feature is min–max normalised over the filtered pool (a
/// constant feature maps to 0.5) and the score is the weighted sum.
pub fn query_candidates(
    dataset: &Dataset,
    features: &FeatureFrame,
    constraint: &QueryConstraint,
    exclude: &BTreeSet<CompanyId>,
    k: usize,
) -> Result<CandidateList, QueryError> {
    if k == 0 {
        return Err(QueryError::InvalidK);
    }
    constraint.validate(&dataset.feature_names)?;
    let pool: Vec<(&CompanyId, &[f64])> = features
        .iter()
        .filter(|(id, _)| !exclude.contains(*id))
        .filter(|(id, _)| {
            constraint.industry_set.is_empty()
                || dataset
                    .companies
                    .get(*id)
                    .is_some_and(|c| constraint.industry_set.contains(&c.industry))
        })
        .map(|(id, fv)| (id, fv.values()))
        .collect();
    if pool.is_empty() {
        return Ok(CandidateList {
            entries: Vec::new(),
            empty_pool: true,
        });
    }

    let mut scores = vec![0.0; pool.len()];
    for ws in &constraint.weighted_scores {
        let f = dataset.feature_index(&ws.feature).expect("validated");
        let (lo, hi) = pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(v[f]), hi.max(v[f]))
        });
        for (score, (_, v)) in scores.iter_mut().zip(&pool) {
            let normalized = if hi > lo { (v[f] - lo) / (hi - lo) } else { 0.5 };
            *score += ws.weight * normalized;
        }
    }
    let mut entries: Vec<Candidate> = pool
        .iter()
        .zip(scores)
        .map(|((id, v), score)| Candidate {
            id: (*id).clone(),
            score,
            industry: dataset.companies.get(*id).map(|c| c.industry.clone()).unwrap_or_default(),
            features: FeatureVector(v.to_vec()),
        })
        .collect();
    entries.sort_by(candidate_order);
    entries.truncate(k);
    Ok(CandidateList {
        entries,
        empty_pool: false,
    })
}

/// Convenience wrapper over the observed features at historical `t`.
pub fn query_candidates_at(
    dataset: &Dataset,
    t: usize,
    constraint: &QueryConstraint,
    exclude: &BTreeSet<CompanyId>,
    k: usize,
) -> Result<CandidateList, QueryError> {
    let frame = dataset.features_at(t)?;
    query_candidates(dataset, &frame, constraint, exclude, k)
}

/// The firm itself plus its current partners; they are never re-queried.
pub fn exclusion_set(edges: &EdgeSet, id: &CompanyId) -> BTreeSet<CompanyId> {
    let mut set = partners_in(edges, id);
    set.insert(id.clone());
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompanyRecord, Edge, FeatureVector};

    fn dataset(rows: &[(&str, &str, f64, f64)]) -> Dataset {
        let companies = rows
            .iter()
            .map(|&(id, ind, tech, op)| CompanyRecord {
                id: id.into(),
                industry: ind.into(),
                features: vec![FeatureVector(vec![tech, op])],
                knowledge: String::new(),
                extra: Default::default(),
            })
            .collect();
        Dataset::new(
            companies,
            vec![EdgeSet::new()],
            String::new(),
            vec!["tech".into(), "op".into()],
            vec!["Q1".into()],
        )
        .unwrap()
    }

    fn weights(list: &[(&str, f64)]) -> QueryConstraint {
        QueryConstraint {
            industry_set: vec![],
            weighted_scores: list
                .iter()
                .map(|&(f, w)| WeightedScore {
                    feature: f.into(),
                    weight: w,
                })
                .collect(),
        }
    }

    #[test]
    fn min_max_endpoints() {
        let ds = dataset(&[("A", "x", 80.0, 0.0), ("B", "x", 40.0, 0.0)]);
        let out = query_candidates_at(&ds, 0, &weights(&[("tech", 1.0)]), &BTreeSet::new(), 2).unwrap();
        let got: Vec<(CompanyId, f64)> = out.entries.iter().map(|c| (c.id.clone(), c.score)).collect();
        assert_eq!(got, vec![("A".into(), 1.0), ("B".into(), 0.0)]);
        assert_eq!(out.entries[0].features.values(), &[80.0, 0.0]);
    }

    #[test]
    fn constant_feature_scores_half_and_ties_break_by_id() {
        let ds = dataset(&[("B", "x", 50.0, 1.0), ("A", "x", 50.0, 1.0)]);
        let out = query_candidates_at(&ds, 0, &weights(&[("tech", 2.0)]), &BTreeSet::new(), 5).unwrap();
        assert_eq!(out.entries[0].id, CompanyId::from("A"));
        assert_eq!(out.entries[0].score, 1.0);
        assert_eq!(out.entries[1].score, 1.0);
    }

    #[test]
    fn empty_industry_pool_is_flagged() {
        let ds = dataset(&[("A", "paper", 1.0, 1.0)]);
        let mut c = weights(&[("tech", 1.0)]);
        c.industry_set = vec!["food".into()];
        let out = query_candidates_at(&ds, 0, &c, &BTreeSet::new(), 3).unwrap();
        assert!(out.entries.is_empty());
        assert!(out.empty_pool);
    }

    #[test]
    fn unknown_feature_rejected() {
        let ds = dataset(&[("A", "paper", 1.0, 1.0)]);
        let err = query_candidates_at(&ds, 0, &weights(&[("cost", 1.0)]), &BTreeSet::new(), 3).unwrap_err();
        assert_eq!(err, QueryError::UnknownFeature("cost".into()));
    }

    #[test]
    fn negative_weights_penalise() {
        let ds = dataset(&[("A", "x", 80.0, 0.0), ("B", "x", 40.0, 0.0)]);
        let out = query_candidates_at(&ds, 0, &weights(&[("tech", -1.0)]), &BTreeSet::new(), 1).unwrap();
        assert_eq!(out.entries[0].id, CompanyId::from("B"));
    }

    #[test]
    fn exclusion_covers_partners() {
        let edges: EdgeSet = [Edge::from(("S", "A")), Edge::from(("A", "C")), Edge::from(("X", "Y"))].into();
        let set = exclusion_set(&edges, &"A".into());
        assert_eq!(set, ["A", "S", "C"].iter().map(|&s| CompanyId::from(s)).collect());
        assert_eq!(exclusion_set(&EdgeSet::new(), &"A".into()), [CompanyId::from("A")].into());
    }

    #[test]
    fn fully_connected_firm_gets_empty_pool() {
        let ds = dataset(&[("A", "x", 1.0, 1.0), ("B", "x", 2.0, 1.0)]);
        let edges: EdgeSet = [Edge::from(("A", "B"))].into();
        let exclude = exclusion_set(&edges, &"A".into());
        let out = query_candidates_at(&ds, 0, &weights(&[("tech", 1.0)]), &exclude, 3).unwrap();
        assert!(out.empty_pool);
    }
}
