//! Acceptance gate: one PASS/FAIL line per criterion, then a single assertion.
//! Run with `cargo test -p scsim-server --test acceptance -- --nocapture` to see the table.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsim_agents::engine::{commit_deltas, run_turn, PolicyMap, TurnConfig, TurnOutcome};
use scsim_agents::experiment::{run_experiment, runs_per_firm, ExperimentConfig};
use scsim_agents::llm::transport::{ChatRequest, FnTransport, ReplayTransport, Transport, TransportError};
use scsim_agents::llm::{LlmConfig, LlmPolicy};
use scsim_agents::protocol::{AgentPolicy, RequestKind, Stage};
use scsim_agents::rule::RulePolicy;
use scsim_agents::simulate::simulate;
use scsim_agents::{KnowledgeBase, World};
use scsim_core::evaluation::{gwet_ac1, BandShares, CrBand, DecisionMatrix};
use scsim_core::explain::{shapley, ExplainConfig, ExplainModelKind, ExplainSet};
use scsim_core::horizon::{extend, extend_steps, fit_extender, FeatureForecaster, SeriesModelKind};
use scsim_core::metrics::{pagerank, PageRankConfig};
use scsim_core::query::{query_candidates, QueryConstraint, WeightedScore};
use scsim_core::regression::{LinearModel, Regressor};
use scsim_core::synthetic::{demo_dataset, generate, SyntheticConfig};
use scsim_core::{CompanyId, CompanyRecord, Dataset, Edge, EdgeSet, FeatureVector};
use scsim_server::commands;
use scsim_session::{AdjustAction, AdjustTarget, Adjustment, Session, SessionConfig};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn id(s: &str) -> CompanyId {
    CompanyId::from(s)
}

fn one_feature(names: &[&str], values: &[Vec<f64>], edges: Vec<EdgeSet>) -> Dataset {
    let horizon = edges.len();
    let companies = names
        .iter()
        .zip(values)
        .map(|(n, v)| CompanyRecord {
            id: id(n),
            industry: "parts".into(),
            features: v.iter().map(|&x| FeatureVector(vec![x])).collect(),
            knowledge: String::new(),
            extra: Default::default(),
        })
        .collect();
    Dataset::new(companies, edges, String::new(), vec!["q".into()], (0..horizon).map(|t| format!("t{t}")).collect()).unwrap()
}

fn all_firms(d: &Dataset, p: Arc<dyn AgentPolicy>) -> PolicyMap {
    d.company_ids().map(|c| (c.clone(), p.clone())).collect()
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Check {
    let config = SessionConfig { seed: 42, ..SessionConfig::default() };
    let mut logs = Vec::new();
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let start = Instant::now();
        logs.push(commands::simulate(demo_dataset(), config.clone(), 4).map_err(|e| e.to_string())?);
        slowest = slowest.max(start.elapsed());
    }
    ensure!(logs[0] == logs[1], "exports differ");
    ensure!(slowest < Duration::from_secs(5), "slowest run took {slowest:?}");
    Ok(format!("35 firms x 4 turns, {} identical bytes, slowest run {} ms", logs[0].len(), slowest.as_millis()))
}

// ----------------------------------------------------------- commit semantics

fn commit_semantics() -> Check {
    let e = |a: usize, b: usize| Edge::new(format!("N{a}").as_str(), format!("N{b}").as_str());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for batch in 0..1000 {
        let n = rng.random_range(2..=10);
        let mut pick = |p: f64| {
            let mut v = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if rng.random_bool(p) {
                        v.push(e(a, b));
                        if rng.random_bool(0.1) {
                            v.push(e(a, b));
                        }
                    }
                }
            }
            v
        };
        let snap: EdgeSet = pick(0.25).into_iter().filter(|x| !x.is_self_edge()).collect();
        let terminated: BTreeSet<Edge> = pick(0.15).into_iter().collect();
        let accepted = pick(0.15);
        let mut want = EdgeSet::new();
        for a in 0..n {
            for b in 0..n {
                let x = e(a, b);
                if a != b && (snap.contains(&x) || accepted.contains(&x)) && !terminated.contains(&x) {
                    want.insert(x);
                }
            }
        }
        ensure!(commit_deltas(&snap, &terminated, &accepted) == want, "batch {batch} differs");
    }
    let snap: EdgeSet = [e(0, 1)].into();
    ensure!(commit_deltas(&snap, &[e(0, 1)].into(), &[e(0, 1)]).is_empty(), "termination must win over re-add");
    ensure!(commit_deltas(&EdgeSet::new(), &BTreeSet::new(), &[e(1, 2), e(1, 2)]).len() == 1, "duplicates must collapse");
    ensure!(commit_deltas(&EdgeSet::new(), &BTreeSet::new(), &[e(3, 3)]).is_empty(), "self-edges must be dropped");
    Ok("1000 random batches on <=10 nodes equal the pairwise set oracle".into())
}

// ------------------------------------------------------------------- pagerank

fn dense_pagerank(n: usize, edges: &[(usize, usize)], d: f64) -> Vec<f64> {
    let mut out = vec![0usize; n];
    for &(a, _) in edges {
        out[a] += 1;
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    for &(s, c) in edges {
        a[(c, s)] -= d / out[s] as f64;
    }
    for j in (0..n).filter(|&j| out[j] == 0) {
        for i in 0..n {
            a[(i, j)] -= d / n as f64;
        }
    }
    let b = DVector::from_element(n, (1.0 - d) / n as f64);
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

fn pagerank_scores(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let name = |i: usize| id(&format!("N{i:02}"));
    let nodes: BTreeSet<CompanyId> = (0..n).map(name).collect();
    let set: EdgeSet = edges.iter().map(|&(a, b)| Edge::new(name(a), name(b))).collect();
    let r = pagerank(&set, &nodes, PageRankConfig::default()).unwrap();
    (0..n).map(|i| r.scores[&name(i)]).collect()
}

fn pagerank_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_sum, mut worst_dense) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let n = rng.random_range(1..=40);
        let p = rng.random_range(0.0..0.5);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b)
            .filter(|_| rng.random_bool(p))
            .collect();
        let got = pagerank_scores(n, &edges);
        worst_sum = worst_sum.max((got.iter().sum::<f64>() - 1.0).abs());
        if n <= 8 {
            let want = dense_pagerank(n, &edges, 0.85);
            for (g, w) in got.iter().zip(&want) {
                worst_dense = worst_dense.max((g - w).abs());
            }
        }
    }
    ensure!(worst_sum <= 1e-9, "sum off by {worst_sum:e}");
    ensure!(worst_dense <= 1e-8, "dense solve off by {worst_dense:e}");
    for n in 2..=12 {
        let cycle: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let both: Vec<_> = cycle.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        for edges in [cycle, both] {
            ensure!(pagerank_scores(n, &edges).iter().all(|s| (s - 1.0 / n as f64).abs() < 1e-9), "cycle of {n} not uniform");
        }
    }
    Ok(format!("max |sum-1| {worst_sum:.1e}, max dense gap {worst_dense:.1e}, cycles uniform"))
}

// -------------------------------------------------------------------- shapley

#[derive(Debug)]
struct Toy(usize);

impl Regressor for Toy {
    fn n_features(&self) -> usize {
        self.0
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut y = x[0] * x[1 % self.0] + x[self.0 - 1].sin();
        for w in x.windows(3) {
            y += 0.5 * w[0] * w[1] * w[2] - 0.3 * w[0].max(w[2]);
        }
        y
    }
}

fn exhaustive_shapley(model: &dyn Regressor, x: &[f64], base: &[f64]) -> Vec<f64> {
    let p = x.len();
    let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    let v: Vec<f64> = (0..1usize << p)
        .map(|m| model.predict(&(0..p).map(|i| if m >> i & 1 == 1 { x[i] } else { base[i] }).collect::<Vec<_>>()))
        .collect();
    (0..p)
        .map(|i| {
            (0..1usize << p)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact(k) * fact(p - k - 1) / fact(p) * (v[s | 1 << i] - v[s])
                })
                .sum()
        })
        .collect()
}

fn shapley_check() -> Check {
    let d = demo_dataset();
    let mut emitted = 0;
    let mut worst_eff = 0.0f64;
    for kind in [ExplainModelKind::Linear, ExplainModelKind::Lasso] {
        let set = ExplainSet::fit(&d, &d.timeline(), ExplainConfig { kind, ..ExplainConfig::default() }).map_err(|e| e.to_string())?;
        for a in set.explainers.values().flat_map(|e| &e.attributions) {
            worst_eff = worst_eff.max((a.total() - a.prediction).abs());
            emitted += 1;
        }
    }
    ensure!(emitted > 0 && worst_eff <= 1e-6, "efficiency gap {worst_eff:e} over {emitted} attributions");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_lin = 0.0f64;
    for _ in 0..200 {
        let p = rng.random_range(1..=12);
        let m = LinearModel {
            intercept: rng.random_range(-5.0..5.0),
            coefficients: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
            means: (0..p).map(|_| rng.random_range(0.0..100.0)).collect(),
        };
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..100.0)).collect();
        let names: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        let a = shapley(&m, &names, &x, &m.means).unwrap();
        for (j, c) in a.phi.iter().enumerate() {
            worst_lin = worst_lin.max((c.phi - m.coefficients[j] * (x[j] - m.means[j])).abs());
        }
    }
    ensure!(worst_lin <= 1e-8, "linear values off by {worst_lin:e}");

    let mut worst_sampled = 0.0f64;
    for p in 2..=10 {
        let names: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        for _ in 0..3 {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let base: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = shapley(&Toy(p), &names, &x, &base).unwrap();
            ensure!((a.total() - a.prediction).abs() <= 1e-6, "sampled attribution not efficient");
            for (c, e) in a.phi.iter().zip(exhaustive_shapley(&Toy(p), &x, &base)) {
                worst_sampled = worst_sampled.max((c.phi - e).abs());
            }
        }
    }
    ensure!(worst_sampled <= 0.02, "sampled values off by {worst_sampled}");
    Ok(format!(
        "{emitted} attributions efficient within {worst_eff:.1e}; linear gap {worst_lin:.1e}; sampled gap {worst_sampled:.4} on 2..10 features"
    ))
}

// ------------------------------------------------------------------------ ac1

fn naive_ac1(ratings: &[Vec<usize>], k: usize) -> f64 {
    let n = ratings.len() as f64;
    let (mut agree, mut total) = (0.0, 0.0);
    let mut share = vec![0.0; k];
    for row in ratings {
        let r = row.len();
        let same = (0..r).flat_map(|a| (0..r).map(move |b| (a, b))).filter(|&(a, b)| a != b && row[a] == row[b]).count();
        agree += same as f64 / (r * (r - 1)) as f64;
        for &c in row {
            share[c] += 1.0;
            total += 1.0;
        }
    }
    let pe: f64 = share.iter().map(|s| s / total * (1.0 - s / total)).sum::<f64>() / (k - 1) as f64;
    (agree / n - pe) / (1.0 - pe)
}

fn ac1_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut worst = 0.0f64;
    for _ in 0..3000 {
        let n = rng.random_range(1..=6);
        let r = rng.random_range(2..=4);
        let m: Vec<Vec<usize>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(0..3)).collect()).collect();
        let got = gwet_ac1(&DecisionMatrix::new(m.clone(), 3).unwrap()).unwrap();
        if m.iter().all(|row| row.iter().all(|&c| c == row[0])) {
            ensure!(got == 1.0, "unanimous matrix gave {got}");
        } else {
            worst = worst.max((got - naive_ac1(&m, 3)).abs());
        }
        for perm in perms {
            let relabeled: Vec<Vec<usize>> = m.iter().map(|row| row.iter().map(|&c| perm[c]).collect()).collect();
            let again = gwet_ac1(&DecisionMatrix::new(relabeled, 3).unwrap()).unwrap();
            ensure!((again - got).abs() < 1e-12, "relabeling {perm:?} changed AC1");
        }
    }
    ensure!(worst <= 1e-12, "naive formula gap {worst:e}");
    Ok(format!("3000 random matrices, max gap {worst:.1e}; unanimity and relabeling hold"))
}

// ------------------------------------------------------------------- cr bands

fn cr_bands() -> Check {
    let cases = [(1.0, CrBand::High), (0.8, CrBand::Medium), (0.6, CrBand::Low)];
    for (cr, band) in cases {
        ensure!(CrBand::of(cr) == band, "CR {cr} -> {:?}", CrBand::of(cr));
    }
    ensure!(
        BandShares::from_values([1.0, 0.8, 0.6, 0.81]) == BandShares { high: 0.5, medium: 0.25, low: 0.25 },
        "band shares"
    );
    Ok("1.0 High, 0.8 Medium, 0.6 Low".into())
}

// -------------------------------------------------------------------- horizon

fn horizon_check() -> Check {
    let m = fit_extender(&[1.0, 2.0, 3.0, 4.0], SeriesModelKind::Linear, 2, 0.0).unwrap();
    let steps = extend_steps(&m, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
    ensure!((steps[0] - 5.0).abs() < 1e-6 && (steps[1] - 6.0).abs() < 1e-6, "[1,2,3,4] extended to {steps:?}");
    let c = fit_extender(&[7.0; 4], SeriesModelKind::Linear, 2, 0.0).unwrap();
    ensure!((extend(&c, &[7.0; 4]).unwrap() - 7.0).abs() < 1e-6, "constant series drifted");
    let mut worst_affine = 0.0f64;
    for w in 1..=4 {
        for (a, b) in [(3.0, 2.5), (90.0, -4.0), (40.0, 0.0)] {
            let s: Vec<f64> = (0..12).map(|i| a + b * i as f64).collect();
            let m = fit_extender(&s, SeriesModelKind::Linear, w, 0.0).unwrap();
            let want = (a + b * 12.0).clamp(0.0, 100.0);
            worst_affine = worst_affine.max((extend(&m, &s).unwrap() - want).abs());
        }
    }
    ensure!(worst_affine <= 1e-6, "affine gap {worst_affine:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_lasso = 0.0f64;
    let mut clamped = 0;
    for _ in 0..50 {
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(10.0..90.0)).collect();
        let lin = fit_extender(&s, SeriesModelKind::Linear, 3, 0.0).unwrap();
        let las = fit_extender(&s, SeriesModelKind::Lasso, 3, 0.0).unwrap();
        for (a, b) in lin.model.coefficients.iter().zip(&las.model.coefficients) {
            worst_lasso = worst_lasso.max((a - b).abs());
        }
        let trend: Vec<f64> = (0..8).map(|i| rng.random_range(40.0..60.0) + rng.random_range(-15.0..15.0) * i as f64).collect();
        let m = fit_extender(&trend, SeriesModelKind::Linear, 2, 0.0).unwrap();
        for v in extend_steps(&m, &trend, 20).unwrap() {
            ensure!((0.0..=100.0).contains(&v), "unclamped prediction {v}");
            clamped += usize::from(v == 0.0 || v == 100.0);
        }
    }
    ensure!(worst_lasso <= 1e-6, "lasso(0) vs linear gap {worst_lasso:e}");
    ensure!(clamped > 0, "clamp never exercised");
    Ok(format!("affine gap {worst_affine:.1e}, lasso(0) gap {worst_lasso:.1e}, {clamped} predictions held at a bound"))
}

// ---------------------------------------------------------------------- query

fn query_check() -> Check {
    const F: [&str; 3] = ["tech", "op", "fin"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ties = 0;
    for round in 0..500 {
        let n = rng.random_range(1..=10);
        let companies = (0..n)
            .map(|i| CompanyRecord {
                id: id(&format!("F{i:02}")),
                industry: if i % 3 == 0 { "steel" } else { "chips" }.into(),
                features: vec![FeatureVector((0..3).map(|_| (rng.random_range(0..5) * 25) as f64).collect())],
                knowledge: String::new(),
                extra: Default::default(),
            })
            .collect();
        let d = Dataset::new(companies, vec![EdgeSet::new()], String::new(), F.map(String::from).to_vec(), vec!["Q1".into()]).unwrap();
        let mut weighted_scores = Vec::new();
        for f in F {
            if rng.random_bool(0.8) {
                let weight = if rng.random_bool(0.2) { 0.5 } else { rng.random_range(-1.0..1.0) };
                weighted_scores.push(WeightedScore { feature: f.into(), weight });
            }
        }
        let industry_set = match rng.random_range(0..3) {
            0 => vec![],
            1 => vec!["chips".to_string()],
            _ => vec!["steel".to_string()],
        };
        let c = QueryConstraint { industry_set, weighted_scores };
        let exclude: BTreeSet<CompanyId> = d.company_ids().filter(|_| rng.random_bool(0.2)).cloned().collect();
        let k = rng.random_range(1..=6);
        let frame = d.features_at(0).unwrap();

        let pool: Vec<&CompanyId> = frame
            .keys()
            .filter(|x| !exclude.contains(*x))
            .filter(|x| c.industry_set.is_empty() || c.industry_set.contains(&d.companies[*x].industry))
            .collect();
        let mut scored: Vec<(CompanyId, f64)> = pool
            .iter()
            .map(|x| {
                let s = c
                    .weighted_scores
                    .iter()
                    .map(|ws| {
                        let f = F.iter().position(|n| *n == ws.feature).unwrap();
                        let lo = pool.iter().map(|p| frame[*p].0[f]).fold(f64::INFINITY, f64::min);
                        let hi = pool.iter().map(|p| frame[*p].0[f]).fold(f64::NEG_INFINITY, f64::max);
                        ws.weight * if hi == lo { 0.5 } else { (frame[*x].0[f] - lo) / (hi - lo) }
                    })
                    .sum();
                ((*x).clone(), s)
            })
            .collect();
        let mut want = Vec::new();
        while want.len() < k && !scored.is_empty() {
            let mut best = 0;
            for i in 1..scored.len() {
                if scored[i].1 > scored[best].1 || (scored[i].1 == scored[best].1 && scored[i].0 < scored[best].0) {
                    best = i;
                }
            }
            want.push(scored.remove(best));
        }
        let got = query_candidates(&d, &frame, &c, &exclude, k).unwrap();
        ties += got.entries.windows(2).filter(|w| w[0].score == w[1].score).count();
        let got_ids: Vec<&CompanyId> = got.entries.iter().map(|e| &e.id).collect();
        let want_ids: Vec<&CompanyId> = want.iter().map(|(x, _)| x).collect();
        ensure!(got_ids == want_ids, "round {round}: {got_ids:?} vs {want_ids:?}");
        ensure!(got.empty_pool == pool.is_empty(), "round {round}: empty-pool flag");
    }
    ensure!(ties > 0, "no ties exercised");
    Ok(format!("500 random weight vectors on pools <=10 match; {ties} tied neighbours ordered by id"))
}

// ----------------------------------------------------------------- evaluation

fn scripted_focal(run: usize, req: &ChatRequest) -> Result<String, TransportError> {
    let system = &req.messages[0].content;
    let drop = r#"{"plan": "drop P2", "reason": "late", "is_seek_collaboration": false}"#;
    let buy = r#"{"plan": "add supplier", "reason": "capacity", "is_seek_collaboration": true, "is_seek_suppliers": true}"#;
    let sell = r#"{"plan": "add customer", "reason": "demand", "is_seek_collaboration": true, "is_seek_suppliers": false}"#;
    let q = r#"{"industry_set": [], "weighted_scores": {"q": 1}}"#;
    let to = |c: &str| format!(r#"[{{"company_id": "{c}", "is_chosen": true, "reason": "scripted"}}]"#);
    Ok(if system.contains("is_accepted") {
        r#"[{"company_id": "F", "is_accepted": true, "reason": "ok"}]"#.to_string()
    } else if system.contains("is_chosen") {
        match run {
            0 => format!("[{}, {}]", to("P2"), to("P4")),
            1 => format!("[{}]", to("P4")),
            _ => format!("[{}, {}]", to("P2"), to("P5")),
        }
    } else if system.contains("industry_set") {
        if run == 1 { format!("[{q}]") } else { format!("[{q}, {q}]") }
    } else {
        match run {
            0 => format!("[{drop}, {buy}]"),
            1 => format!("[{buy}]"),
            _ => format!("[{drop}, {sell}]"),
        }
    })
}

fn evaluation_pipeline() -> Check {
    let es = |l: &[(&str, &str)]| l.iter().map(|&p| Edge::from(p)).collect::<EdgeSet>();
    let mut snaps = vec![es(&[("P1", "F"), ("P2", "F"), ("F", "P3")]); 4];
    snaps.push(es(&[("P1", "F"), ("F", "P3"), ("P4", "F")]));
    let d = one_feature(&["F", "P1", "P2", "P3", "P4", "P5"], &vec![vec![50.0; 5]; 6], snaps);
    let result = run_experiment(
        &d,
        |run, _| {
            let t = FnTransport(move |req: &ChatRequest| scripted_focal(run, req));
            all_firms(&d, Arc::new(LlmPolicy::new(Arc::new(t), LlmConfig::new("scripted"))))
        },
        &[id("F")],
        &ExperimentConfig { runs: 3, ..ExperimentConfig::default() },
    )
    .map_err(|e| e.to_string())?;
    let r = &result.report;
    let hand = [
        (1.0 + 0.8 + 0.6) / 3.0,
        (1.0 + 0.75 + 2.0 / 3.0) / 3.0,
        (1.0 + 1.0 + 2.0 / 3.0) / 3.0,
        (1.0 + 6.0 / 7.0 + 2.0 / 3.0) / 3.0,
        79.0 / 169.0,
        0.4,
        0.6,
        0.0,
    ];
    for ((name, got), want) in scsim_core::evaluation::EvalReport::COLUMNS.iter().zip(r.row()).zip(hand) {
        ensure!((got - want).abs() < 1e-12, "{name}: {got} vs hand {want}");
    }

    let demo = demo_dataset();
    let focal: Vec<CompanyId> = demo.company_ids().take(4).cloned().collect();
    let policies = all_firms(&demo, Arc::new(RulePolicy::default()));
    let shape = ExperimentConfig::default();
    let big = run_experiment(&demo, |_, _| policies.clone(), &focal, &shape).map_err(|e| e.to_string())?;
    ensure!(shape.history_len == 4 && big.observations.len() == 80, "default shape");
    ensure!(runs_per_firm(&big.plan).values().all(|&n| n == 20), "runs per firm");
    Ok("5 slots x 3 scripted runs equal hand values in all 8 columns; 80 runs over 4 firms with history 4".into())
}

// ------------------------------------------------------------------ path tree

fn path_tree() -> Check {
    let data = generate(SyntheticConfig { firms: 12, quarters: 5, ..SyntheticConfig::default() }).unwrap();
    let mut s = Session::new(data, SessionConfig::default()).map_err(|e| e.to_string())?;
    let root = s.tree().active();
    let a = s.run(root, 2).map_err(|e| e.to_string())?;
    let b = s.run(root, 1).map_err(|e| e.to_string())?;
    ensure!(s.tree().children(root) == vec![a[0], b[0]], "rerun did not add a sibling");

    let bytes = |s: &Session, n: usize| {
        let node = s.tree().node(n).unwrap();
        serde_json::to_string(&(node.parent, node.t, &node.label, &*node.edges, &*node.features, node.turn.as_deref())).unwrap()
    };
    let parent = bytes(&s, a[0]);
    let child = bytes(&s, a[1]);
    let turn = s.tree().node(a[1]).unwrap().turn.clone().unwrap();
    let rec = turn.records.iter().find(|r| !r.plans.is_empty()).ok_or("no firm planned anything")?;
    s.stage_adjustment(
        a[1],
        Adjustment {
            target: AdjustTarget::Plan { company: rec.company.clone(), plan: 0 },
            action: AdjustAction::Delete,
            payload: None,
            note: None,
            author: "reviewer".into(),
            force: false,
        },
    )
    .map_err(|e| e.to_string())?;
    let branch = s.apply_adjustments(a[1]).map_err(|e| e.to_string())?;
    ensure!(s.tree().node(branch).unwrap().parent == Some(a[0]), "adjusted branch is not a sibling");
    ensure!(bytes(&s, a[0]) == parent && bytes(&s, a[1]) == child, "existing nodes changed");

    let text = s.export().map_err(|e| e.to_string())?;
    let back = Session::import(&text).map_err(|e| e.to_string())?;
    ensure!(back.export().map_err(|e| e.to_string())? == text, "re-export differs");
    Ok(format!("{} nodes, siblings on rerun and adjust, parents byte-stable, {} byte export round-trips", s.tree().len(), text.len()))
}

// ---------------------------------------------------------------- llm adapter

fn llm_adapter() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../agents/tests/fixtures/golden_two_firms");
    let expected = std::fs::read_to_string(dir.join("transcript.json")).map_err(|e| e.to_string())?;
    let d = one_feature(&["A", "B"], &[vec![60.0, 61.0, 62.0], vec![70.0, 69.0, 68.0]], vec![EdgeSet::new(); 3]);
    let kb = KnowledgeBase::from_dataset(&d);
    let replay: Arc<dyn Transport> = Arc::new(ReplayTransport::new(dir.join("exchanges")));
    let policies = all_firms(&d, Arc::new(LlmPolicy::new(replay, LlmConfig::new("scripted"))));
    let mut fc = FeatureForecaster::fit(&d, SeriesModelKind::Linear, 1, 0.0).unwrap();
    let config = TurnConfig { parallel: false, ..TurnConfig::default() };
    let (_, outcomes) = simulate(&d, d.timeline().truncated(1), &kb, &policies, &mut fc, 2, &config, 0).map_err(|e| e.to_string())?;
    let outcomes: Vec<TurnOutcome> = outcomes;
    ensure!(serde_json::to_string_pretty(&outcomes).unwrap() + "\n" == expected, "replayed transcript differs");

    let calls = Arc::new(std::sync::Mutex::new(0));
    let counter = calls.clone();
    let broken = FnTransport(move |req: &ChatRequest| {
        *counter.lock().unwrap() += 1;
        if req.messages[1].content.contains("You are company A.") {
            Ok("{ not json".to_string())
        } else {
            Ok("[]".to_string())
        }
    });
    let timeline = d.timeline().truncated(1);
    let world = World { dataset: &d, timeline: &timeline, knowledge: &kb };
    let policies = all_firms(&d, Arc::new(LlmPolicy::new(Arc::new(broken), LlmConfig::new("m"))));
    let out = run_turn(&world, &policies, &TurnConfig { parallel: false, ..TurnConfig::default() }, 0).map_err(|e| e.to_string())?;
    let failures: Vec<_> = out.failures().collect();
    ensure!(failures.len() == 1 && failures[0].company == id("A") && failures[0].stage == Stage::Plan, "{failures:?}");
    ensure!(*calls.lock().unwrap() == 4 + 1, "expected 4 calls for A and 1 for B");
    ensure!(out.edges.is_empty() && out.records[0].applied.is_empty(), "failed agent changed the network");
    Ok("2-firm 2-turn golden transcript replays exactly; bad output exhausts 3 repairs and no-ops".into())
}

// ------------------------------------------------------- negate + force oracle

fn negate_force() -> Check {
    let mut s = Session::new(demo_dataset(), SessionConfig::default()).map_err(|e| e.to_string())?;
    let root = s.tree().active();
    let node = s.run(root, 1).map_err(|e| e.to_string())?[0];
    let snap = s.tree().node(root).unwrap().edges.clone();
    let turn = s.tree().node(node).unwrap().turn.clone().unwrap();
    let (replier, reply) = turn
        .records
        .iter()
        .flat_map(|r| r.replies.iter().map(move |x| (r.company.clone(), x)))
        .find(|(_, x)| !x.accepted)
        .ok_or("rule policy declined nothing")?;
    let forced_edge = reply.direction.edge(&reply.requester, &replier);
    // a forced reply is addressed by (target, requester), so every direction between them is accepted
    let forced: Vec<Edge> = turn
        .records
        .iter()
        .filter(|r| r.company == replier)
        .flat_map(|r| &r.replies)
        .filter(|x| x.requester == reply.requester)
        .map(|x| x.direction.edge(&x.requester, &replier))
        .collect();

    // requester's chosen terminations and every accepted request, from the recorded turn
    let mut terminated = BTreeSet::new();
    let mut accepted = forced.clone();
    for r in turn.records.iter() {
        for q in r.outgoing.iter().filter(|q| q.chosen) {
            if q.kind == RequestKind::Terminate {
                for e in [Edge::new(r.company.clone(), q.target.clone()), Edge::new(q.target.clone(), r.company.clone())] {
                    if snap.contains(&e) {
                        terminated.insert(e);
                    }
                }
            }
        }
        accepted.extend(r.outcomes.iter().filter(|o| o.accepted).filter_map(|o| {
            r.outgoing.iter().find(|q| q.target == o.target && q.kind == o.kind).and_then(|q| q.proposed_edge(&r.company))
        }));
    }
    let want = commit_deltas(&snap, &terminated, &accepted);

    s.stage_adjustment(
        node,
        Adjustment {
            target: AdjustTarget::Reply { company: replier.clone(), requester: reply.requester.clone() },
            action: AdjustAction::Negate,
            payload: None,
            note: Some("Strategic partner; accept.".into()),
            author: "reviewer".into(),
            force: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let branch = s.apply_adjustments(node).map_err(|e| e.to_string())?;
    let got = &*s.tree().node(branch).unwrap().edges;
    ensure!(got.contains(&forced_edge) || terminated.contains(&forced_edge), "forced edge missing");
    ensure!(
        *got == want,
        "branch edges differ from the commit oracle (forced {forced_edge:?}): extra {:?}, missing {:?}",
        got.iter().filter(|e| !want.contains(e)).collect::<Vec<_>>(),
        want.iter().filter(|e| !got.contains(e)).collect::<Vec<_>>()
    );
    Ok(format!("forced {} -> {} and the branch equals the recomputed commit", forced_edge.supplier, forced_edge.customer))
}

#[test]
fn acceptance() {
    let checks: Vec<(&str, fn() -> Check)> = vec![
        ("determinism", determinism),
        ("commit semantics", commit_semantics),
        ("pagerank", pagerank_check),
        ("shapley", shapley_check),
        ("gwet ac1", ac1_check),
        ("cr bands", cr_bands),
        ("horizon model", horizon_check),
        ("query engine", query_check),
        ("evaluation pipeline", evaluation_pipeline),
        ("path tree", path_tree),
        ("llm adapter", llm_adapter),
        ("negate + force vs commit oracle", negate_force),
    ];
    let mut failed = Vec::new();
    for (name, check) in &checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let line = match &result {
            Ok(detail) => format!("PASS  {name:<32} {detail}"),
            Err(why) => {
                failed.push(*name);
                format!("FAIL  {name:<32} {why}")
            }
        };
        println!("{line}");
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
