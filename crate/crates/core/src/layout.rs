//! Renderer-agnostic geometry for the global overview and the per-firm focus rows.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::{influence_ratio, normalize_soils, presence_name, ExplainSet, SoilSummary};
use crate::model::{customers_in, suppliers_in, CompanyId, Dataset, Edge, EdgeLifecycle, ModelError, Timeline};

pub const LAYOUT_VERSION: &str = "layout/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("need at least 2 companies and 1 timestamp")]
    TooSmall,
    #[error("timestamp range {start}..{end} outside 0..{len}")]
    BadRange { start: usize, end: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Row-wise 2-D principal-component scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Standardised columns that survived the constant-column filter.
    pub kept_columns: Vec<usize>,
    pub explained_variance: [f64; 2],
    /// Every row was identical; all coordinates are zero.
    pub degenerate: bool,
}

/// Standardises columns (population variance, constant columns dropped) and
/// projects onto the first two principal axes. Each axis is oriented so its
/// largest-magnitude loading is positive.
pub fn project_2d(matrix: &[Vec<f64>]) -> Projection {
    let n = matrix.len();
    let p = matrix.first().map_or(0, Vec::len);
    let nf = n as f64;
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for j in 0..p {
        let mean = matrix.iter().map(|r| r[j]).sum::<f64>() / nf;
        let var = matrix.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / nf;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            kept.push(j);
            stats.push((mean, sd));
        }
    }
    if n == 0 || kept.is_empty() {
        return Projection {
            coords: vec![[0.0, 0.0]; n],
            kept_columns: kept,
            explained_variance: [0.0, 0.0],
            degenerate: true,
        };
    }
    let z = DMatrix::from_fn(n, kept.len(), |i, k| {
        let (mean, sd) = stats[k];
        (matrix[i][kept[k]] - mean) / sd
    });
    let svd = z.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut coords = vec![[0.0, 0.0]; n];
    let mut explained = [0.0, 0.0];
    for (axis, &comp) in order.iter().take(2).enumerate() {
        let mut loading: Vec<f64> = v_t.row(comp).iter().copied().collect();
        let lead = loading
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > loading[best].abs() { i } else { best });
        if loading[lead] < 0.0 {
            loading.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = z.row(i).iter().zip(&loading).map(|(a, b)| a * b).sum();
        }
        explained[axis] = svd.singular_values[comp].powi(2) / nf;
    }
    Projection {
        coords,
        kept_columns: kept,
        explained_variance: explained,
        degenerate: false,
    }
}

fn mean_features(ids: &BTreeSet<CompanyId>, frame: &crate::model::FeatureFrame, width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    let vecs: Vec<&[f64]> = ids.iter().filter_map(|id| frame.get(id)).map(|f| f.values()).collect();
    if vecs.is_empty() {
        return acc;
    }
    for v in &vecs {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= vecs.len() as f64);
    acc
}

/// One row per (company, timestamp): own ⊕ mean supplier ⊕ mean customer
/// features ⊕ log(1 + supplier count) ⊕ log(1 + customer count).
pub fn embedding_rows(dataset: &Dataset, timeline: &Timeline) -> Result<Vec<((CompanyId, usize), Vec<f64>)>, LayoutError> {
    let width = dataset.feature_names.len();
    let mut rows = Vec::new();
    for t in 0..timeline.len() {
        let edges = timeline.edges(t)?;
        let frame = timeline.features(t)?;
        for id in dataset.company_ids() {
            let sup = suppliers_in(&edges, id);
            let cus = customers_in(&edges, id);
            let mut row = frame.get(id).map(|f| f.0.clone()).unwrap_or_else(|| vec![0.0; width]);
            row.extend(mean_features(&sup, frame, width));
            row.extend(mean_features(&cus, frame, width));
            row.push((1.0 + sup.len() as f64).ln());
            row.push((1.0 + cus.len() as f64).ln());
            rows.push(((id.clone(), t), row));
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub company: CompanyId,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    /// Position within `[0, 1]²`, scaled by the joint bounds of all panels.
    pub nx: f64,
    pub ny: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub t: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalEmbedding {
    pub version: String,
    pub panels: Vec<Panel>,
    pub points: Vec<EmbeddingPoint>,
    pub explained_variance: [f64; 2],
    pub degenerate: bool,
}

impl GlobalEmbedding {
    pub fn point(&self, company: &CompanyId, t: usize) -> Option<&EmbeddingPoint> {
        self.points.iter().find(|p| &p.company == company && p.t == t)
    }
}

/// Joint projection of every timestamp, so positions are comparable across panels.
pub fn global_embedding(dataset: &Dataset, timeline: &Timeline) -> Result<GlobalEmbedding, LayoutError> {
    if dataset.companies.len() < 2 || timeline.is_empty() {
        return Err(LayoutError::TooSmall);
    }
    let rows = embedding_rows(dataset, timeline)?;
    let matrix: Vec<Vec<f64>> = rows.iter().map(|(_, r)| r.clone()).collect();
    let proj = project_2d(&matrix);
    if proj.degenerate {
        log::warn!("global embedding input is degenerate; all coordinates are zero");
    }
    let bounds = |axis: usize| {
        proj.coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[axis]), hi.max(c[axis])))
    };
    let scale = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let (bx, by) = (bounds(0), bounds(1));
    let points = rows
        .into_iter()
        .zip(&proj.coords)
        .map(|(((company, t), _), c)| EmbeddingPoint {
            company,
            t,
            x: c[0],
            y: c[1],
            nx: scale(c[0], bx),
            ny: scale(c[1], by),
        })
        .collect();
    Ok(GlobalEmbedding {
        version: LAYOUT_VERSION.to_string(),
        panels: timeline
            .labels
            .iter()
            .enumerate()
            .map(|(t, label)| Panel { t, label: label.clone() })
            .collect(),
        points,
        explained_variance: proj.explained_variance,
        degenerate: proj.degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureArc {
    pub feature: String,
    pub value: f64,
    /// `value / 100`.
    pub radius: f64,
    pub start_angle: f64,
    pub end_angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalGlyph {
    pub performance: f64,
    /// Performance relative to the best-performing firm at this timestamp.
    pub performance_radius: f64,
    pub feature_arcs: Vec<FeatureArc>,
    /// 0 = supplier-driven, 1 = customer-driven.
    pub x_position: f64,
    pub missing_attribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Berry {
    pub company: CompanyId,
    pub performance: f64,
    /// Performance relative to the best-performing firm at this timestamp.
    pub vertical: f64,
    /// `phi / max|phi|` on this side; +1 sits closest to the focal firm.
    pub offset: f64,
    pub phi: Option<f64>,
    pub lifecycle: EdgeLifecycle,
    pub missing_attribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerryGroup {
    pub industry: String,
    pub soil: SoilSummary,
    pub berries: Vec<Berry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusFrame {
    pub t: usize,
    pub label: String,
    pub focal: FocalGlyph,
    pub suppliers: Vec<BerryGroup>,
    pub customers: Vec<BerryGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusRow {
    pub focal: CompanyId,
    pub frames: Vec<FocusFrame>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SharedSupplierLink {
    pub t: usize,
    pub focal_a: CompanyId,
    pub focal_b: CompanyId,
    pub supplier: CompanyId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusLayout {
    pub version: String,
    pub rows: Vec<FocusRow>,
    pub shared_supplier_links: Vec<SharedSupplierLink>,
}

#[derive(Clone, Copy)]
enum Side {
    Supplier,
    Customer,
}

fn side_groups(
    dataset: &Dataset,
    timeline: &Timeline,
    explain: &ExplainSet,
    focal: &CompanyId,
    partners: &BTreeSet<CompanyId>,
    side: Side,
    t: usize,
    max_perf: f64,
) -> Result<Vec<BerryGroup>, LayoutError> {
    let attr = explain.attribution(focal, t);
    let phis: BTreeMap<&CompanyId, Option<f64>> = partners
        .iter()
        .map(|p| (p, attr.and_then(|a| a.get(&presence_name(p)))))
        .collect();
    let max_abs = phis.values().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut by_industry: BTreeMap<String, Vec<Berry>> = BTreeMap::new();
    for p in partners {
        let edge = match side {
            Side::Supplier => Edge::new(p.clone(), focal.clone()),
            Side::Customer => Edge::new(focal.clone(), p.clone()),
        };
        let phi = phis[p];
        let performance = explain.performance_of(p, t);
        let berry = Berry {
            company: p.clone(),
            performance,
            vertical: if max_perf > 0.0 { performance / max_perf } else { 0.0 },
            offset: match phi {
                Some(v) if max_abs > 0.0 => v / max_abs,
                _ => 0.0,
            },
            phi,
            lifecycle: timeline.network.lifecycle(&edge, t)?,
            missing_attribution: phi.is_none(),
        };
        let industry = dataset.company(p)?.industry.clone();
        by_industry.entry(industry).or_default().push(berry);
    }
    Ok(by_industry
        .into_iter()
        .map(|(industry, berries)| {
            let members: Vec<CompanyId> = berries.iter().map(|b| b.company.clone()).collect();
            BerryGroup {
                industry,
                soil: explain.group_soil(focal, &members, t),
                berries,
            }
        })
        .collect())
}

pub fn focus_layout(
    dataset: &Dataset,
    timeline: &Timeline,
    explain: &ExplainSet,
    focal_ids: &[CompanyId],
    t_range: Range<usize>,
) -> Result<FocusLayout, LayoutError> {
    if t_range.start > t_range.end || t_range.end > timeline.len() {
        return Err(LayoutError::BadRange {
            start: t_range.start,
            end: t_range.end,
            len: timeline.len(),
        });
    }
    for id in focal_ids {
        dataset.company(id)?;
    }
    let n_features = dataset.feature_names.len().max(1);
    let sector = std::f64::consts::TAU / n_features as f64;
    let mut rows = Vec::new();
    for focal in focal_ids {
        let mut frames = Vec::new();
        for t in t_range.clone() {
            let edges = timeline.edges(t)?;
            let max_perf = explain
                .performance
                .get(&t)
                .map(|m| m.values().fold(0.0f64, |a, &b| a.max(b)))
                .unwrap_or(0.0);
            let suppliers = suppliers_in(&edges, focal);
            let customers = customers_in(&edges, focal);
            let mut supplier_groups =
                side_groups(dataset, timeline, explain, focal, &suppliers, Side::Supplier, t, max_perf)?;
            let mut customer_groups =
                side_groups(dataset, timeline, explain, focal, &customers, Side::Customer, t, max_perf)?;
            normalize_soils(
                supplier_groups
                    .iter_mut()
                    .chain(customer_groups.iter_mut())
                    .map(|g| &mut g.soil),
            );
            let features = timeline.features(t)?.get(focal).cloned().unwrap_or_default();
            let attr = explain.get(focal).and_then(|e| {
                e.attribution_at(t).map(|a| (a, &e.design.space))
            });
            let performance = explain.performance_of(focal, t);
            frames.push(FocusFrame {
                t,
                label: timeline.labels[t].clone(),
                focal: FocalGlyph {
                    performance,
                    performance_radius: if max_perf > 0.0 { performance / max_perf } else { 0.0 },
                    feature_arcs: dataset
                        .feature_names
                        .iter()
                        .zip(features.values())
                        .enumerate()
                        .map(|(i, (name, &value))| FeatureArc {
                            feature: name.clone(),
                            value,
                            radius: value / 100.0,
                            start_angle: i as f64 * sector,
                            end_angle: (i + 1) as f64 * sector,
                        })
                        .collect(),
                    x_position: attr
                        .map(|(a, space)| influence_ratio(a, space, &suppliers, &customers))
                        .unwrap_or(0.5),
                    missing_attribution: attr.is_none(),
                },
                suppliers: supplier_groups,
                customers: customer_groups,
            });
        }
        rows.push(FocusRow {
            focal: focal.clone(),
            frames,
        });
    }
    Ok(FocusLayout {
        version: LAYOUT_VERSION.to_string(),
        rows,
        shared_supplier_links: shared_suppliers(timeline, focal_ids, t_range)?,
    })
}

/// Every (focal pair, common supplier) at each timestamp.
pub fn shared_suppliers(
    timeline: &Timeline,
    focal_ids: &[CompanyId],
    t_range: Range<usize>,
) -> Result<Vec<SharedSupplierLink>, LayoutError> {
    let mut links = Vec::new();
    for t in t_range {
        let edges = timeline.edges(t)?;
        let sets: Vec<BTreeSet<CompanyId>> = focal_ids.iter().map(|f| suppliers_in(&edges, f)).collect();
        for i in 0..focal_ids.len() {
            for j in i + 1..focal_ids.len() {
                for s in sets[i].intersection(&sets[j]) {
                    links.push(SharedSupplierLink {
                        t,
                        focal_a: focal_ids[i].clone(),
                        focal_b: focal_ids[j].clone(),
                        supplier: s.clone(),
                    });
                }
            }
        }
    }
    Ok(links)
}
