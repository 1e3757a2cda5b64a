//! Seeded generator for a tiered demo supply network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{CompanyId, CompanyRecord, Dataset, Edge, EdgeSet, FeatureVector, ModelError};

pub const DEMO_FEATURES: [&str; 3] = ["Operation", "Technology", "Reputation"];
const TIERS: [&str; 5] = ["Raw Materials", "Components", "Electronics", "Assembly", "Retail"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub firms: usize,
    pub quarters: usize,
    pub first_year: i32,
    pub seed: u64,
    /// Per-quarter probability that an existing edge is dropped.
    pub churn: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            firms: 35,
            quarters: 8,
            first_year: 2023,
            seed: 7,
            churn: 0.12,
        }
    }
}

pub fn quarter_labels(first_year: i32, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("{}Q{}", first_year + (i / 4) as i32, i % 4 + 1))
        .collect()
}

fn tier_of(index: usize, firms: usize) -> usize {
    (index * TIERS.len() / firms.max(1)).min(TIERS.len() - 1)
}

/// Picks a supplier from the tier above, favouring higher mean features.
fn pick_supplier(rng: &mut ChaCha8Rng, pool: &[usize], quality: &[f64]) -> Option<usize> {
    let total: f64 = pool.iter().map(|&i| quality[i]).sum();
    if pool.is_empty() || total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    for &i in pool {
        target -= quality[i];
        if target <= 0.0 {
            return Some(i);
        }
    }
    pool.last().copied()
}

pub fn generate(config: SyntheticConfig) -> Result<Dataset, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.firms;
    let ids: Vec<CompanyId> = (0..n).map(|i| CompanyId::from(format!("C{:02}", i + 1).as_str())).collect();
    let tiers: Vec<usize> = (0..n).map(|i| tier_of(i, n)).collect();
    let mut by_tier: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &t) in tiers.iter().enumerate() {
        by_tier.entry(t).or_default().push(i);
    }

    let mut features: Vec<Vec<FeatureVector>> = vec![Vec::with_capacity(config.quarters); n];
    let mut current: Vec<Vec<f64>> = (0..n)
        .map(|_| DEMO_FEATURES.iter().map(|_| rng.random_range(20.0..90.0_f64).round()).collect())
        .collect();
    let drift: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.5_f64)).collect();

    let mut snapshots: Vec<EdgeSet> = Vec::with_capacity(config.quarters);
    let mut edges = EdgeSet::new();
    for q in 0..config.quarters {
        if q > 0 {
            for (i, row) in current.iter_mut().enumerate() {
                for v in row.iter_mut() {
                    let step = drift[i] + rng.random_range(-4.0..4.0_f64);
                    *v = (*v + step).clamp(0.0, 100.0).round();
                }
            }
        }
        for (i, row) in current.iter().enumerate() {
            features[i].push(FeatureVector(row.clone()));
        }
        let quality: Vec<f64> = current.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();

        if q > 0 {
            edges.retain(|_| rng.random::<f64>() >= config.churn);
        }
        for (customer, &tier) in tiers.iter().enumerate() {
            if tier == 0 {
                continue;
            }
            let pool = &by_tier[&(tier - 1)];
            let have = edges.iter().filter(|e| e.customer == ids[customer]).count();
            let want = if q == 0 { 2 } else { usize::from(rng.random::<f64>() < 0.25) + usize::from(have < 1) };
            for _ in 0..want {
                if let Some(s) = pick_supplier(&mut rng, pool, &quality) {
                    edges.insert(Edge::new(ids[s].clone(), ids[customer].clone()));
                }
            }
        }
        snapshots.push(edges.clone());
    }

    let companies = ids
        .iter()
        .zip(features)
        .enumerate()
        .map(|(i, (id, features))| CompanyRecord {
            id: id.clone(),
            industry: TIERS[tiers[i]].to_string(),
            features,
            knowledge: format!(
                "{id} operates in the {} tier and reviews its partners every quarter.",
                TIERS[tiers[i]].to_lowercase()
            ),
            extra: BTreeMap::new(),
        })
        .collect();
    Dataset::new(
        companies,
        snapshots,
        "Goods flow from raw materials through components, electronics and assembly to retail. \
         Firms prefer partners with strong operation, technology and reputation scores."
            .to_string(),
        DEMO_FEATURES.iter().map(|s| s.to_string()).collect(),
        quarter_labels(config.first_year, config.quarters),
    )
}

/// The default 35-firm, 8-quarter demo network.
pub fn demo_dataset() -> Dataset {
    generate(SyntheticConfig::default()).expect("default generator output is valid")
}
