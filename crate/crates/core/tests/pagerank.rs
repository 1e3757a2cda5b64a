use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scsim_core::metrics::{pagerank, PageRankConfig};
use scsim_core::{CompanyId, Edge, EdgeSet};

fn ids(n: usize) -> BTreeSet<CompanyId> {
    (0..n).map(|i| CompanyId::from(format!("N{i}").as_str())).collect()
}

fn edge(a: usize, b: usize) -> Edge {
    Edge::new(format!("N{a}").as_str(), format!("N{b}").as_str())
}

/// Solves `(I − d·M − d/n·1·danglingᵀ) x = (1−d)/n` directly.
fn dense_pagerank(n: usize, edges: &[(usize, usize)], d: f64) -> Vec<f64> {
    let mut out = vec![0usize; n];
    for &(a, _) in edges {
        out[a] += 1;
    }
    let nf = n as f64;
    let mut a = DMatrix::<f64>::identity(n, n);
    for &(s, c) in edges {
        a[(c, s)] -= d / out[s] as f64;
    }
    for j in (0..n).filter(|&j| out[j] == 0) {
        for i in 0..n {
            a[(i, j)] -= d / nf;
        }
    }
    let b = DVector::from_element(n, (1.0 - d) / nf);
    a.lu().solve(&b).expect("non-singular").iter().copied().collect()
}

fn scores_in_order(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let set: EdgeSet = edges.iter().map(|&(a, b)| edge(a, b)).collect();
    let r = pagerank(&set, &ids(n), PageRankConfig::default()).unwrap();
    assert!(r.converged);
    (0..n).map(|i| r.scores[&CompanyId::from(format!("N{i}").as_str())]).collect()
}

#[test]
fn chain_matches_dense_solve() {
    let edges = [(0, 1), (1, 2)];
    let got = scores_in_order(3, &edges);
    let want = dense_pagerank(3, &edges, 0.85);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-8, "{got:?} vs {want:?}");
    }
}

#[test]
fn cycle_is_uniform() {
    for n in 2..=8 {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        for s in scores_in_order(n, &edges) {
            assert!((s - 1.0 / n as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn edgeless_graph_is_uniform() {
    for s in scores_in_order(5, &[]) {
        assert!((s - 0.2).abs() < 1e-12);
    }
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=8).prop_flat_map(|n| {
        let pairs = proptest::collection::btree_set((0..n, 0..n), 0..=n * n);
        (Just(n), pairs.prop_map(|s| s.into_iter().filter(|(a, b)| a != b).collect()))
    })
}

proptest! {
    #[test]
    fn matches_dense_solve_and_sums_to_one((n, edges) in graph()) {
        let got = scores_in_order(n, &edges);
        let want = dense_pagerank(n, &edges, 0.85);
        prop_assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-8, "{:?} vs {:?}", got, want);
        }
    }
}
