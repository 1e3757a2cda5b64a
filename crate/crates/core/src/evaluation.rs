//! Agreement and accuracy statistics for simulated versus observed network evolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompanyId, Edge, EdgeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("chance agreement is 1; AC1 undefined")]
    DegenerateChance,
    #[error("decision matrix is incomplete or empty: {0}")]
    InvalidMatrix(String),
    #[error("need at least 2 raters, got {0}")]
    TooFewRaters(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ConfusionMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    pub fn metrics(&self) -> ConfusionMetrics {
        let total = (self.tp + self.fp + self.fn_ + self.tn) as f64;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        ConfusionMetrics {
            acc: if total == 0.0 {
                0.0
            } else {
                (self.tp + self.tn) as f64 / total
            },
            precision,
            recall,
            f1: if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            },
        }
    }
}

pub fn confusion(
    predicted: &BTreeSet<CompanyId>,
    observed: &BTreeSet<CompanyId>,
    universe: &BTreeSet<CompanyId>,
) -> Confusion {
    let mut c = Confusion::default();
    for id in universe {
        match (predicted.contains(id), observed.contains(id)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Binary partner-prediction metrics over `universe` (focal firm excluded by the caller).
pub fn confusion_metrics(
    predicted: &BTreeSet<CompanyId>,
    observed: &BTreeSet<CompanyId>,
    universe: &BTreeSet<CompanyId>,
) -> ConfusionMetrics {
    confusion(predicted, observed, universe).metrics()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeDecision {
    Add,
    Remove,
    Keep,
}

impl EdgeDecision {
    pub const ALL: [EdgeDecision; 3] = [EdgeDecision::Add, EdgeDecision::Remove, EdgeDecision::Keep];

    pub fn index(self) -> usize {
        match self {
            Self::Add => 0,
            Self::Remove => 1,
            Self::Keep => 2,
        }
    }
}

/// Classifies each slot's transition; absent→absent slots are dropped.
pub fn edge_dynamics(prev: &EdgeSet, next: &EdgeSet, slots: &BTreeSet<Edge>) -> BTreeMap<Edge, EdgeDecision> {
    slots
        .iter()
        .filter_map(|slot| {
            let decision = match (prev.contains(slot), next.contains(slot)) {
                (false, true) => EdgeDecision::Add,
                (true, false) => EdgeDecision::Remove,
                (true, true) => EdgeDecision::Keep,
                (false, false) => return None,
            };
            Some((slot.clone(), decision))
        })
        .collect()
}

/// Items × raters of category indices in `0..categories`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub ratings: Vec<Vec<usize>>,
    pub categories: usize,
}

impl DecisionMatrix {
    pub fn new(ratings: Vec<Vec<usize>>, categories: usize) -> Result<Self, EvalError> {
        if ratings.is_empty() {
            return Err(EvalError::InvalidMatrix("no items".into()));
        }
        if categories < 2 {
            return Err(EvalError::DegenerateChance);
        }
        let raters = ratings[0].len();
        if raters < 2 {
            return Err(EvalError::TooFewRaters(raters));
        }
        for (i, row) in ratings.iter().enumerate() {
            if row.len() != raters {
                return Err(EvalError::InvalidMatrix(format!("item {i} has {} ratings, expected {raters}", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&k| k >= categories) {
                return Err(EvalError::InvalidMatrix(format!("item {i} has category {bad} >= {categories}")));
            }
        }
        Ok(Self { ratings, categories })
    }

    pub fn items(&self) -> usize {
        self.ratings.len()
    }

    pub fn raters(&self) -> usize {
        self.ratings[0].len()
    }
}

/// Gwet's first-order agreement coefficient.
pub fn gwet_ac1(m: &DecisionMatrix) -> Result<f64, EvalError> {
    let n = m.items() as f64;
    let r = m.raters() as f64;
    let k = m.categories;
    let mut pa = 0.0;
    let mut pi = vec![0.0; k];
    for row in &m.ratings {
        let mut counts = vec![0usize; k];
        for &c in row {
            counts[c] += 1;
        }
        for (cat, &rik) in counts.iter().enumerate() {
            let rik = rik as f64;
            pa += rik * (rik - 1.0) / (r * (r - 1.0));
            pi[cat] += rik / r;
        }
    }
    pa /= n;
    pi.iter_mut().for_each(|p| *p /= n);
    let pe = pi.iter().map(|p| p * (1.0 - p)).sum::<f64>() / (k as f64 - 1.0);
    if 1.0 - pe == 0.0 {
        return Err(EvalError::DegenerateChance);
    }
    if pa == 1.0 {
        return Ok(1.0);
    }
    Ok((pa - pe) / (1.0 - pe))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrBand {
    High,
    Medium,
    Low,
}

impl CrBand {
    /// High: CR > 0.8; Medium: 0.6 < CR ≤ 0.8; Low: CR ≤ 0.6.
    pub fn of(cr: f64) -> Self {
        if cr > 0.8 {
            Self::High
        } else if cr > 0.6 {
            Self::Medium
        } else {
            Self::Low
        }
    }
}

impl fmt::Display for CrBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::High => "High",
            Self::Medium => "Medium",
            Self::Low => "Low",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct BandShares {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl BandShares {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for v in values {
            total += 1;
            counts[match CrBand::of(v) {
                CrBand::High => 0,
                CrBand::Medium => 1,
                CrBand::Low => 2,
            }] += 1;
        }
        if total == 0 {
            return Self::default();
        }
        let t = total as f64;
        Self {
            high: counts[0] as f64 / t,
            medium: counts[1] as f64 / t,
            low: counts[2] as f64 / t,
        }
    }
}

/// Modal-decision share for one unit.
pub fn consistency_ratio(decisions: &[EdgeDecision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; 3];
    for d in decisions {
        counts[d.index()] += 1;
    }
    *counts.iter().max().expect("three categories") as f64 / decisions.len() as f64
}

/// Unit over which consistency is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrPooling {
    /// CR per edge slot across runs; firms report the mean over their slots.
    #[default]
    Slot,
    /// CR over all of a firm's (slot, run) decisions pooled together.
    PooledFirm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotConsistency {
    pub firm: CompanyId,
    pub slot: Edge,
    pub cr: f64,
    pub band: CrBand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pooling: CrPooling,
    pub slots: Vec<SlotConsistency>,
    /// Per-firm CR: mean of slot CRs (slot pooling) or the pooled CR.
    pub firms: BTreeMap<CompanyId, f64>,
    /// Band shares over slots (slot pooling) or firms (pooled).
    pub bands: BandShares,
}

/// `decisions[firm][slot]` lists one decision per run.
pub fn consistency_ratios(
    decisions: &BTreeMap<CompanyId, BTreeMap<Edge, Vec<EdgeDecision>>>,
    pooling: CrPooling,
) -> Result<ConsistencyReport, EvalError> {
    let mut slots = Vec::new();
    let mut firms = BTreeMap::new();
    for (firm, per_slot) in decisions {
        let mut firm_crs = Vec::new();
        let mut pooled = Vec::new();
        for (slot, runs) in per_slot {
            if runs.len() < 2 {
                return Err(EvalError::TooFewRaters(runs.len()));
            }
            let cr = consistency_ratio(runs);
            slots.push(SlotConsistency {
                firm: firm.clone(),
                slot: slot.clone(),
                cr,
                band: CrBand::of(cr),
            });
            firm_crs.push(cr);
            pooled.extend_from_slice(runs);
        }
        let value = match pooling {
            CrPooling::Slot if !firm_crs.is_empty() => firm_crs.iter().sum::<f64>() / firm_crs.len() as f64,
            CrPooling::PooledFirm if !pooled.is_empty() => consistency_ratio(&pooled),
            _ => continue,
        };
        firms.insert(firm.clone(), value);
    }
    let bands = match pooling {
        CrPooling::Slot => BandShares::from_values(slots.iter().map(|s| s.cr)),
        CrPooling::PooledFirm => BandShares::from_values(firms.values().copied()),
    };
    Ok(ConsistencyReport {
        pooling,
        slots,
        firms,
        bands,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ac1: f64,
    pub cr_bands: BandShares,
    pub runs: usize,
    pub consistency: ConsistencyReport,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 8] = [
        "ACC",
        "Precision",
        "Recall",
        "F1",
        "Gwet's AC1",
        "High CR",
        "Medium CR",
        "Low CR",
    ];

    pub fn row(&self) -> [f64; 8] {
        [
            self.acc,
            self.precision,
            self.recall,
            self.f1,
            self.ac1,
            self.cr_bands.high,
            self.cr_bands.medium,
            self.cr_bands.low,
        ]
    }

    /// Header plus one row, values as percentages with two decimals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::COLUMNS).expect("in-memory");
        w.write_record(self.row().iter().map(|v| format!("{:.2}", v * 100.0)))
            .expect("in-memory");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_table_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in Self::COLUMNS.iter().zip(self.row()) {
            map.insert((*k).to_string(), serde_json::json!(v));
        }
        serde_json::Value::Object(map)
    }
}

/// One simulated step for one focal firm, next to what was observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunObservation {
    pub firm: CompanyId,
    pub run: usize,
    /// Network the step started from.
    pub prev: EdgeSet,
    pub predicted: EdgeSet,
    pub observed: EdgeSet,
    /// Candidate partners for the confusion metrics (focal firm excluded).
    pub universe: BTreeSet<CompanyId>,
}

fn involving<'a>(edges: &'a EdgeSet, firm: &CompanyId) -> impl Iterator<Item = Edge> + 'a {
    let firm = firm.clone();
    edges.iter().filter(move |e| e.involves(&firm)).cloned()
}

/// Per-firm decision table: each slot that was live in at least one run, with
/// one decision per run in run order. A slot absent before and after in some
/// run, but live in another, counts as `Keep` for that run.
pub fn run_decisions(runs: &[RunObservation]) -> BTreeMap<CompanyId, BTreeMap<Edge, Vec<EdgeDecision>>> {
    let mut by_firm: BTreeMap<CompanyId, Vec<&RunObservation>> = BTreeMap::new();
    for r in runs {
        by_firm.entry(r.firm.clone()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (firm, mut firm_runs) in by_firm {
        firm_runs.sort_by_key(|r| r.run);
        let slots: BTreeSet<Edge> = firm_runs
            .iter()
            .flat_map(|r| involving(&r.prev, &firm).chain(involving(&r.predicted, &firm)))
            .collect();
        let mut table: BTreeMap<Edge, Vec<EdgeDecision>> = slots.iter().map(|s| (s.clone(), Vec::new())).collect();
        for r in &firm_runs {
            let d = edge_dynamics(&r.prev, &r.predicted, &slots);
            for (slot, list) in table.iter_mut() {
                list.push(d.get(slot).copied().unwrap_or(EdgeDecision::Keep));
            }
        }
        out.insert(firm, table);
    }
    out
}

/// Aggregates runs into the summary table. Confusion metrics are averaged
/// over runs. AC1 uses one matrix over all (firm, slot) items when every firm
/// has the same number of runs, otherwise the mean of per-firm AC1 values.
pub fn build_report(runs: &[RunObservation], pooling: CrPooling) -> Result<EvalReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::InvalidMatrix("no runs".into()));
    }
    let mut sums = [0.0; 4];
    for r in runs {
        let m = confusion_metrics(
            &crate::model::partners_in(&r.predicted, &r.firm),
            &crate::model::partners_in(&r.observed, &r.firm),
            &r.universe,
        );
        for (s, v) in sums.iter_mut().zip([m.acc, m.precision, m.recall, m.f1]) {
            *s += v;
        }
    }
    let n = runs.len() as f64;
    let decisions = run_decisions(runs);
    let consistency = consistency_ratios(&decisions, pooling)?;

    let rows_of = |table: &BTreeMap<Edge, Vec<EdgeDecision>>| -> Vec<Vec<usize>> {
        table.values().map(|ds| ds.iter().map(|d| d.index()).collect()).collect()
    };
    let rater_counts: BTreeSet<usize> = decisions.values().flat_map(|t| t.values().map(Vec::len)).collect();
    let ac1 = if rater_counts.is_empty() {
        log::warn!("no live edge slots in any run; AC1 undefined");
        f64::NAN
    } else if rater_counts.len() == 1 {
        let rows: Vec<Vec<usize>> = decisions.values().flat_map(rows_of).collect();
        gwet_ac1(&DecisionMatrix::new(rows, EdgeDecision::ALL.len())?)?
    } else {
        let mut values = Vec::new();
        for table in decisions.values().filter(|t| !t.is_empty()) {
            values.push(gwet_ac1(&DecisionMatrix::new(rows_of(table), EdgeDecision::ALL.len())?)?);
        }
        values.iter().sum::<f64>() / values.len() as f64
    };
    Ok(EvalReport {
        acc: sums[0] / n,
        precision: sums[1] / n,
        recall: sums[2] / n,
        f1: sums[3] / n,
        ac1,
        cr_bands: consistency.bands,
        runs: runs.len(),
        consistency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<CompanyId> {
        ids.iter().map(|&s| CompanyId::from(s)).collect()
    }

    #[test]
    fn perfect_match() {
        let universe = set(&["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"]);
        let m = confusion_metrics(&set(&["A", "B"]), &set(&["A", "B"]), &universe);
        assert_eq!((m.acc, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn closed_form_counts() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 4,
        };
        let m = c.metrics();
        assert!((m.acc - 0.7).abs() < 1e-15);
        assert_eq!(m.precision, 0.75);
        assert!((m.recall - 0.6).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction() {
        let m = confusion_metrics(&set(&[]), &set(&["A"]), &set(&["A", "B"]));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dynamics_categories() {
        let a: Edge = ("F", "A").into();
        let b: Edge = ("F", "B").into();
        let c: Edge = ("C", "F").into();
        let d: Edge = ("D", "F").into();
        let prev: EdgeSet = [a.clone(), b.clone()].into();
        let next: EdgeSet = [a.clone(), c.clone()].into();
        let out = edge_dynamics(&prev, &next, &[a.clone(), b.clone(), c.clone(), d.clone()].into());
        assert_eq!(out[&a], EdgeDecision::Keep);
        assert_eq!(out[&b], EdgeDecision::Remove);
        assert_eq!(out[&c], EdgeDecision::Add);
        assert!(!out.contains_key(&d));
    }

    #[test]
    fn ac1_hand_example() {
        let m = DecisionMatrix::new(vec![vec![0, 0], vec![0, 1]], 2).unwrap();
        assert!((gwet_ac1(&m).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn ac1_unanimous_is_one() {
        let m = DecisionMatrix::new(vec![vec![2, 2, 2], vec![0, 0, 0], vec![2, 2, 2]], 3).unwrap();
        assert_eq!(gwet_ac1(&m).unwrap(), 1.0);
    }

    #[test]
    fn matrix_validation() {
        assert!(DecisionMatrix::new(vec![vec![0, 1], vec![0]], 2).is_err());
        assert!(DecisionMatrix::new(vec![vec![0]], 2).is_err());
        assert!(DecisionMatrix::new(vec![vec![0, 3]], 3).is_err());
        assert_eq!(DecisionMatrix::new(vec![vec![0, 0]], 1), Err(EvalError::DegenerateChance));
    }

    #[test]
    fn band_boundaries() {
        use EdgeDecision::*;
        assert_eq!(CrBand::of(consistency_ratio(&[Keep; 5])), CrBand::High);
        assert_eq!(CrBand::of(consistency_ratio(&[Keep, Keep, Keep, Keep, Add])), CrBand::Medium);
        assert_eq!(CrBand::of(consistency_ratio(&[Keep, Keep, Keep, Add, Remove])), CrBand::Low);
    }

    #[test]
    fn report_csv_columns() {
        let r = EvalReport {
            acc: 0.5,
            precision: 0.25,
            recall: 1.0,
            f1: 0.4,
            ac1: 0.9,
            cr_bands: BandShares {
                high: 1.0,
                medium: 0.0,
                low: 0.0,
            },
            runs: 2,
            consistency: ConsistencyReport {
                pooling: CrPooling::Slot,
                slots: vec![],
                firms: BTreeMap::new(),
                bands: BandShares::default(),
            },
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("ACC,Precision,Recall,F1,Gwet's AC1,High CR,Medium CR,Low CR\n"));
        assert!(csv.contains("50.00,25.00,100.00,40.00,90.00,100.00,0.00,0.00"));
    }
}
