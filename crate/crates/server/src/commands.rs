//! Batch commands behind the `scsim` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scsim_agents::experiment::{run_experiment, ExperimentConfig};
use scsim_core::evaluation::CrPooling;
use scsim_core::explain::{model_selection_report as explain_report, ExplainModelKind};
use scsim_core::horizon::{model_selection_report as horizon_report, SeriesModelKind};
use scsim_core::ingest::{load_dataset_dir, write_dataset};
use scsim_core::synthetic::{generate, SyntheticConfig};
use scsim_core::{CompanyId, Dataset};
use scsim_session::{Session, SessionConfig};
use serde_json::json;

pub fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(SessionConfig::default()),
    }
}

pub fn load_data(dir: &Path) -> Result<Dataset> {
    load_dataset_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

pub fn generate_to(out: &Path, config: SyntheticConfig) -> Result<Dataset> {
    let dataset = generate(config)?;
    std::fs::create_dir_all(out)?;
    write_dataset(&dataset, out)?;
    Ok(dataset)
}

/// Runs `turns` turns from the last observed step and returns the session export.
pub fn simulate(dataset: Dataset, config: SessionConfig, turns: usize) -> Result<String> {
    let mut session = Session::new(dataset, config)?;
    let from = session.tree().active();
    session.run(from, turns)?;
    Ok(session.export()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

pub struct EvaluateArgs {
    pub focal: Vec<CompanyId>,
    pub runs: usize,
    pub history_len: usize,
    pub seed: u64,
    pub target: Option<usize>,
    pub pooled_cr: bool,
    pub format: ReportFormat,
}

pub fn evaluate(dataset: &Dataset, config: &SessionConfig, args: &EvaluateArgs) -> Result<String> {
    if args.focal.is_empty() {
        bail!("give at least one focal company");
    }
    let policies = config.policy.policy_map(dataset)?;
    let exp = ExperimentConfig {
        history_len: args.history_len,
        runs: args.runs,
        seed_base: args.seed,
        pooling: if args.pooled_cr {
            CrPooling::PooledFirm
        } else {
            CrPooling::Slot
        },
        target: args.target,
        candidates_k: config.candidates_k,
    };
    let result = run_experiment(dataset, |_, _| policies.clone(), &args.focal, &exp)?;
    for f in &result.failures {
        log::warn!("{} {} stage failed: {}", f.company, f.stage, f.message);
    }
    let r = &result.report;
    Ok(match args.format {
        ReportFormat::Csv => r.to_csv(),
        ReportFormat::Json => serde_json::to_string_pretty(&json!({
            "table": r.to_table_json(),
            "report": r,
            "failures": result.failures.len(),
        }))?,
        ReportFormat::Table => {
            let mut out = String::new();
            for (k, v) in scsim_core::evaluation::EvalReport::COLUMNS.iter().zip(r.row()) {
                out.push_str(&format!("{k:>10}  {:6.2}%\n", v * 100.0));
            }
            out.push_str(&format!("{:>10}  {}\n", "runs", r.runs));
            out
        }
    })
}

/// Horizon and explain model comparisons as pretty JSON.
pub fn model_report(dataset: &Dataset, config: &SessionConfig, folds: usize, window: usize) -> Result<String> {
    let horizon = horizon_report(
        dataset,
        &[SeriesModelKind::Linear, SeriesModelKind::Lasso],
        folds,
        window,
        config.horizon_lambda,
    )?;
    let explain = explain_report(
        dataset,
        &dataset.timeline(),
        &[ExplainModelKind::Linear, ExplainModelKind::Lasso],
        config.performance_metric,
        config.explain_lambda,
    )?;
    Ok(serde_json::to_string_pretty(&json!({ "horizon": horizon, "explain": explain }))?)
}

pub fn data_dir(arg: Option<PathBuf>) -> Option<PathBuf> {
    arg.or_else(|| std::env::var_os(scsim_session::store::ENV_DATA_DIR).map(PathBuf::from))
}
