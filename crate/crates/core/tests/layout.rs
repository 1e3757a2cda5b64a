use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scsim_core::layout::{global_embedding, project_2d};
use scsim_core::synthetic::demo_dataset;

/// Top-two principal scores from an eigendecomposition of the covariance of
/// the standardised data, each axis signed so its largest loading is positive.
fn covariance_oracle(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    let p = rows[0].len();
    let mut z = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    for j in 0..p {
        let mean = z.column(j).mean();
        let sd = (z.column(j).map(|v| (v - mean).powi(2)).sum() / n as f64).sqrt();
        z.column_mut(j).apply(|v| *v = (*v - mean) / sd);
    }
    let cov = z.transpose() * &z / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = vec![[0.0; 2]; n];
    for (axis, &k) in idx.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v = -v;
        }
        let scores = &z * v;
        for i in 0..n {
            out[i][axis] = scores[i];
        }
    }
    out
}

#[test]
fn projection_matches_covariance_eigenvectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..7).map(|_| rng.random_range(0.0..100.0)).collect()).collect();
        let got = project_2d(&rows);
        let want = covariance_oracle(&rows);
        assert!(!got.degenerate);
        for (g, w) in got.coords.iter().zip(&want) {
            assert!((g[0] - w[0]).abs() < 1e-8 && (g[1] - w[1]).abs() < 1e-8, "{g:?} vs {w:?}");
        }
    }
}

#[test]
fn collinear_rows_collapse_onto_one_axis() {
    let rows: Vec<Vec<f64>> = (0..8).map(|i| {
        let t = i as f64;
        vec![2.0 * t + 1.0, -t + 5.0, 0.5 * t]
    }).collect();
    let proj = project_2d(&rows);
    for c in &proj.coords {
        assert!(c[1].abs() < 1e-8);
    }
    let mx: f64 = proj.coords.iter().map(|c| c[0]).sum::<f64>() / 8.0;
    assert!(mx.abs() < 1e-9);
}

#[test]
fn identical_rows_are_degenerate() {
    let proj = project_2d(&vec![vec![3.0, 4.0]; 5]);
    assert!(proj.degenerate);
    assert!(proj.coords.iter().all(|c| *c == [0.0, 0.0]));
}

#[test]
fn global_embedding_is_centred_and_complete() {
    let d = demo_dataset();
    let g = global_embedding(&d, &d.timeline()).unwrap();
    let pts: Vec<_> = d
        .company_ids()
        .flat_map(|id| (0..d.horizon()).map(move |t| (id.clone(), t)))
        .map(|(id, t)| g.point(&id, t).expect("every company at every step"))
        .collect();
    assert_eq!(pts.len(), d.companies.len() * d.horizon());
    let n = pts.len() as f64;
    let mx: f64 = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my: f64 = pts.iter().map(|p| p.y).sum::<f64>() / n;
    assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
}
