//! JSON payloads for the five UI views.

use std::ops::Range;
use std::str::FromStr;

use scsim_core::explain::{model_selection_report as explain_report, ExplainModelKind};
use scsim_core::horizon::{model_selection_report as horizon_report, SeriesModelKind};
use scsim_core::layout::{focus_layout, global_embedding};
use scsim_core::CompanyId;
use serde::Serialize;
use serde_json::{json, Value};

use crate::session::Session;
use crate::tree::{NodeId, Origin};
use crate::SessionError;

pub const VIEW_VERSION: &str = "views/v1";

#[derive(Clone, Debug, PartialEq)]
pub enum ViewKind {
    Path,
    Global,
    Focus { focal: Vec<CompanyId>, range: Option<Range<usize>> },
    Adjustment { company: CompanyId },
    ControlPanel,
}

impl FromStr for ViewKind {
    type Err = SessionError;

    /// Parses the bare view name; parameters are filled in by the caller.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "path" => ViewKind::Path,
            "global" => ViewKind::Global,
            "focus" => ViewKind::Focus {
                focal: Vec::new(),
                range: None,
            },
            "adjustment" => ViewKind::Adjustment {
                company: CompanyId::from(""),
            },
            "controlpanel" | "control_panel" | "control-panel" => ViewKind::ControlPanel,
            other => return Err(SessionError::UnknownView(other.to_string())),
        })
    }
}

pub fn fetch_view(session: &Session, node: NodeId, kind: &ViewKind) -> Result<Value, SessionError> {
    session.tree().node(node)?;
    let payload = match kind {
        ViewKind::Path => path_view(session)?,
        ViewKind::Global => {
            let timeline = session.tree().timeline(session.dataset(), node)?;
            to_value(global_embedding(session.dataset(), &timeline)?)?
        }
        ViewKind::Focus { focal, range } => {
            let timeline = session.tree().timeline(session.dataset(), node)?;
            for id in focal {
                if !session.dataset().companies.contains_key(id) {
                    return Err(SessionError::UnknownCompany(id.clone()));
                }
            }
            let explain = session.explain_set(node)?;
            let range = range.clone().unwrap_or(0..timeline.len());
            to_value(focus_layout(session.dataset(), &timeline, &explain, focal, range)?)?
        }
        ViewKind::Adjustment { company } => adjustment_view(session, node, company)?,
        ViewKind::ControlPanel => control_panel(session, node)?,
    };
    Ok(json!({ "version": VIEW_VERSION, "node": node, "view": payload }))
}

fn to_value<T: Serialize>(v: T) -> Result<Value, SessionError> {
    Ok(serde_json::to_value(v)?)
}

fn path_view(session: &Session) -> Result<Value, SessionError> {
    let tree = session.tree();
    let mut nodes = Vec::with_capacity(tree.len());
    for n in tree.nodes() {
        let (origin, failures, staged) = match &n.turn {
            Some(turn) => (
                Some(match &turn.origin {
                    Origin::Run { run } => json!({ "kind": "run", "run": run }),
                    Origin::Adjusted {
                        from,
                        adjustments,
                        synthetic,
                    } => json!({
                        "kind": "adjusted",
                        "from": from,
                        "adjustments": adjustments.len(),
                        "synthetic": synthetic,
                    }),
                }),
                turn.records.iter().filter(|r| r.failure.is_some()).count(),
                session.staged(n.id).len(),
            ),
            None => (None, 0, 0),
        };
        nodes.push(json!({
            "id": n.id,
            "parent": n.parent,
            "children": tree.children(n.id),
            "t": n.t,
            "label": n.label,
            "kind": n.kind,
            "status": tree.status(n.id)?,
            "edges": n.edges.len(),
            "origin": origin,
            "failures": failures,
            "staged": staged,
        }));
    }
    Ok(json!({ "active": tree.active(), "nodes": nodes }))
}

fn adjustment_view(session: &Session, node: NodeId, company: &CompanyId) -> Result<Value, SessionError> {
    let record = session.dataset().company(company)?;
    let n = session.tree().node(node)?;
    let turn = n.turn.as_ref();
    let knowledge = turn.map_or(session.knowledge(), |t| &t.knowledge);
    let rec = turn.and_then(|t| t.records.iter().find(|r| &r.company == company));
    let explain = session.explain_set(node)?;
    Ok(json!({
        "company": company,
        "industry": record.industry,
        "t": n.t,
        "label": n.label,
        "features": n.features.get(company),
        "feature_names": session.dataset().feature_names,
        "knowledge": {
            "global": knowledge.global,
            "company": knowledge.company(company),
            "current_global": session.knowledge().global,
            "current_company": session.knowledge().company(company),
        },
        "attribution": explain.attribution(company, n.t),
        "record": rec,
        "staged": session
            .staged(node)
            .iter()
            .filter(|a| a.target.company() == company)
            .collect::<Vec<_>>(),
    }))
}

fn control_panel(session: &Session, node: NodeId) -> Result<Value, SessionError> {
    let dataset = session.dataset();
    let config = session.config();
    let n = dataset.horizon();
    let folds = n.saturating_sub(2).clamp(2, 4);
    let window = config.horizon_window.min(n.saturating_sub(folds + 1)).max(1);
    let horizon = horizon_report(
        dataset,
        &[SeriesModelKind::Linear, SeriesModelKind::Lasso],
        folds,
        window,
        config.horizon_lambda,
    )
    .map(to_value)
    .unwrap_or_else(|e| Ok(json!({ "error": e.to_string() })))?;
    let observed = dataset.timeline();
    let explain = explain_report(
        dataset,
        &observed,
        &[ExplainModelKind::Linear, ExplainModelKind::Lasso],
        config.performance_metric,
        config.explain_lambda,
    )
    .map(to_value)
    .unwrap_or_else(|e| Ok(json!({ "error": e.to_string() })))?;

    let timeline = session.tree().timeline(dataset, node)?;
    let mut series = serde_json::Map::new();
    for id in dataset.company_ids() {
        let mut per_feature = serde_json::Map::new();
        for (f, name) in dataset.feature_names.iter().enumerate() {
            let values: Vec<Option<f64>> = timeline
                .features
                .iter()
                .map(|frame| frame.get(id).and_then(|v| v.get(f)))
                .collect();
            per_feature.insert(name.clone(), json!(values));
        }
        series.insert(id.to_string(), Value::Object(per_feature));
    }
    Ok(json!({
        "config": config,
        "horizon_report": horizon,
        "explain_report": explain,
        "labels": timeline.labels,
        "observed_until": n,
        "series": series,
        "knowledge": session.knowledge(),
    }))
}
