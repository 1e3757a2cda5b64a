mod common;

use std::sync::Arc;

use common::{dataset, id, same_policy};
use scsim_agents::experiment::{run_experiment, runs_per_firm, ExperimentConfig};
use scsim_agents::llm::transport::{ChatRequest, FnTransport, TransportError};
use scsim_agents::llm::{LlmConfig, LlmPolicy};
use scsim_agents::rule::RulePolicy;
use scsim_core::evaluation::{BandShares, CrBand, CrPooling, EdgeDecision};
use scsim_core::synthetic::demo_dataset;
use scsim_core::{Edge, EdgeSet};

const FIRMS: [&str; 6] = ["F", "P1", "P2", "P3", "P4", "P5"];

fn edges(list: &[(&str, &str)]) -> EdgeSet {
    list.iter().map(|&p| Edge::from(p)).collect()
}

/// Focal F: P1 and P2 supply it, it supplies P3. Observed next: P2 gone, P4 added.
fn world() -> scsim_core::Dataset {
    let prev = edges(&[("P1", "F"), ("P2", "F"), ("F", "P3")]);
    let observed = edges(&[("P1", "F"), ("F", "P3"), ("P4", "F")]);
    let mut snaps = vec![prev; 4];
    snaps.push(observed);
    dataset(&FIRMS, &vec![vec![50.0; 5]; 6], snaps)
}

/// Per run, F's plans and requests:
/// run 0 drops P2 and adds supplier P4; run 1 only adds supplier P4;
/// run 2 drops P2 and adds customer P5. Everyone accepts.
fn scripted(run: usize, req: &ChatRequest) -> Result<String, TransportError> {
    let system = &req.messages[0].content;
    let drop = r#"{"plan": "drop P2", "reason": "late deliveries", "is_seek_collaboration": false}"#;
    let buy = r#"{"plan": "add supplier", "reason": "capacity", "is_seek_collaboration": true, "is_seek_suppliers": true}"#;
    let sell = r#"{"plan": "add customer", "reason": "demand", "is_seek_collaboration": true, "is_seek_suppliers": false}"#;
    let q = r#"{"industry_set": [], "weighted_scores": {"q": 1}}"#;
    let to = |c: &str| format!(r#"[{{"company_id": "{c}", "is_chosen": true, "reason": "scripted"}}]"#);
    let out = if system.contains("is_accepted") {
        r#"[{"company_id": "F", "is_accepted": true, "reason": "ok"}]"#.to_string()
    } else if system.contains("is_chosen") {
        match run {
            0 => format!("[{}, {}]", to("P2"), to("P4")),
            1 => format!("[{}]", to("P4")),
            _ => format!("[{}, {}]", to("P2"), to("P5")),
        }
    } else if system.contains("industry_set") {
        match run {
            1 => format!("[{q}]"),
            _ => format!("[{q}, {q}]"),
        }
    } else {
        match run {
            0 => format!("[{drop}, {buy}]"),
            1 => format!("[{buy}]"),
            _ => format!("[{drop}, {sell}]"),
        }
    };
    Ok(out)
}

#[test]
fn scripted_runs_give_the_hand_computed_report() {
    let d = world();
    let config = ExperimentConfig { runs: 3, ..ExperimentConfig::default() };
    let result = run_experiment(
        &d,
        |run, _| {
            let t = FnTransport(move |req: &ChatRequest| scripted(run, req));
            same_policy(&d, Arc::new(LlmPolicy::new(Arc::new(t), LlmConfig::new("scripted"))))
        },
        &[id("F")],
        &config,
    )
    .unwrap();
    assert!(result.failures.is_empty(), "{:?}", result.failures);
    let predicted: Vec<&EdgeSet> = result.observations.iter().map(|o| &o.predicted).collect();
    assert_eq!(predicted[0], &edges(&[("P1", "F"), ("F", "P3"), ("P4", "F")]));
    assert_eq!(predicted[1], &edges(&[("P1", "F"), ("P2", "F"), ("F", "P3"), ("P4", "F")]));
    assert_eq!(predicted[2], &edges(&[("P1", "F"), ("F", "P3"), ("F", "P5")]));

    // Partners over universe {P1..P5}, observed {P1, P3, P4}:
    //   run 0 {P1,P3,P4}: tp 3 fp 0 fn 0 tn 2
    //   run 1 {P1,P2,P3,P4}: tp 3 fp 1 fn 0 tn 1
    //   run 2 {P1,P3,P5}: tp 2 fp 1 fn 1 tn 1
    let r = &result.report;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    assert!(close(r.acc, (1.0 + 0.8 + 0.6) / 3.0));
    assert!(close(r.precision, (1.0 + 0.75 + 2.0 / 3.0) / 3.0));
    assert!(close(r.recall, (1.0 + 1.0 + 2.0 / 3.0) / 3.0));
    assert!(close(r.f1, (1.0 + 6.0 / 7.0 + 2.0 / 3.0) / 3.0));

    // Slots and decisions per run:
    //   P1→F K K K, P2→F R K R, F→P3 K K K, P4→F A A K, F→P5 K K A
    // pa = (1 + 1/3 + 1 + 1/3 + 1/3) / 5 = 3/5; shares K 10/15, R 2/15, A 3/15
    // pe = (2/9 + 26/225 + 4/25) / 2 = 56/225; AC1 = (3/5 − 56/225) / (1 − 56/225) = 79/169
    assert!(close(r.ac1, 79.0 / 169.0), "{}", r.ac1);
    use EdgeDecision::*;
    let slots: Vec<(Edge, Vec<EdgeDecision>)> = scsim_core::evaluation::run_decisions(&result.observations)[&id("F")]
        .iter()
        .map(|(e, d)| (e.clone(), d.clone()))
        .collect();
    assert_eq!(
        slots,
        vec![
            (Edge::from(("F", "P3")), vec![Keep, Keep, Keep]),
            (Edge::from(("F", "P5")), vec![Keep, Keep, Add]),
            (Edge::from(("P1", "F")), vec![Keep, Keep, Keep]),
            (Edge::from(("P2", "F")), vec![Remove, Keep, Remove]),
            (Edge::from(("P4", "F")), vec![Add, Add, Keep]),
        ]
    );
    // CRs 1, 2/3, 1, 2/3, 2/3
    assert_eq!(r.cr_bands, BandShares { high: 0.4, medium: 0.6, low: 0.0 });
    assert!(r.consistency.slots.iter().all(|s| s.band == if s.cr == 1.0 { CrBand::High } else { CrBand::Medium }));
    assert!(close(r.consistency.firms[&id("F")], (2.0 + 3.0 * 2.0 / 3.0) / 5.0));
    assert_eq!(r.runs, 3);
}

#[test]
fn default_shape_is_eighty_runs_over_four_firms() {
    let d = demo_dataset();
    let focal: Vec<_> = d.company_ids().take(4).cloned().collect();
    let config = ExperimentConfig::default();
    assert_eq!((config.history_len, config.runs), (4, 80));
    let policies = same_policy(&d, Arc::new(RulePolicy::default()));
    let result = run_experiment(&d, |_, _| policies.clone(), &focal, &config).unwrap();
    assert_eq!(result.observations.len(), 80);
    assert!(runs_per_firm(&result.plan).values().all(|&n| n == 20));
    assert_eq!(result.report.runs, 80);
    // a deterministic policy agrees with itself on every run
    assert_eq!(result.report.cr_bands.high, 1.0);
    assert!(result.report.ac1.is_nan() || result.report.ac1 == 1.0);

    let pooled = run_experiment(&d, |_, _| policies.clone(), &focal, &ExperimentConfig { pooling: CrPooling::PooledFirm, ..config }).unwrap();
    assert_eq!(pooled.report.consistency.firms.len(), 4);
}
