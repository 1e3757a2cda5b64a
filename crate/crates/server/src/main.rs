use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use scsim_core::synthetic::SyntheticConfig;
use scsim_core::CompanyId;
use scsim_server::commands::{self, EvaluateArgs, ReportFormat};
use scsim_session::store::Store;

#[derive(Parser)]
#[command(name = "scsim", about = "Turn-based multi-agent supply-chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Where session logs are kept; defaults to $SCSIM_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write a synthetic dataset (companies.csv, edges.csv, knowledge.txt).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 35)]
        firms: usize,
        #[arg(long, default_value_t = 8)]
        quarters: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Simulate from the last observed step and write the session log.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        /// Session settings as JSON; rule policy by default.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated one-step predictions for focal firms against the observed next step.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated company ids.
        #[arg(long, value_delimiter = ',', required = true)]
        focal: Vec<String>,
        #[arg(long, default_value_t = 80)]
        runs: usize,
        #[arg(long, default_value_t = 4)]
        history: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observed step to predict; the last one by default.
        #[arg(long)]
        target: Option<usize>,
        /// Pool consistency ratios per firm instead of per slot.
        #[arg(long)]
        pooled_cr: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Compare horizon and explain model kinds on a dataset.
    ModelReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 4)]
        window: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve { addr, data_dir } => {
            let store = Store::new(commands::data_dir(data_dir))?;
            let token = std::env::var(scsim_server::api::ENV_TOKEN).ok().filter(|t| !t.is_empty());
            let app = scsim_server::router(scsim_server::AppState::new(store, token));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on http://{addr}");
                axum::serve(listener, app).await
            })?;
        }
        Command::Generate {
            out,
            firms,
            quarters,
            seed,
        } => {
            let d = commands::generate_to(
                &out,
                SyntheticConfig {
                    firms,
                    quarters,
                    seed,
                    ..SyntheticConfig::default()
                },
            )?;
            println!("{} companies, {} timestamps -> {}", d.companies.len(), d.horizon(), out.display());
        }
        Command::Simulate {
            data,
            config,
            turns,
            seed,
            out,
        } => {
            let mut cfg = commands::load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let turns = turns.unwrap_or(cfg.simulation_turns);
            let log = commands::simulate(commands::load_data(&data)?, cfg, turns)?;
            match out {
                Some(p) => std::fs::write(p, log)?,
                None => print!("{log}"),
            }
        }
        Command::Evaluate {
            data,
            config,
            focal,
            runs,
            history,
            seed,
            target,
            pooled_cr,
            format,
        } => {
            let cfg = commands::load_config(config.as_deref())?;
            let args = EvaluateArgs {
                focal: focal.iter().map(|s| CompanyId::from(s.as_str())).collect(),
                runs,
                history_len: history,
                seed,
                target,
                pooled_cr,
                format: match format {
                    Format::Table => ReportFormat::Table,
                    Format::Csv => ReportFormat::Csv,
                    Format::Json => ReportFormat::Json,
                },
            };
            print!("{}", commands::evaluate(&commands::load_data(&data)?, &cfg, &args)?);
        }
        Command::ModelReport {
            data,
            config,
            folds,
            window,
        } => {
            let cfg = commands::load_config(config.as_deref())?;
            println!("{}", commands::model_report(&commands::load_data(&data)?, &cfg, folds, window)?);
        }
    }
    Ok(())
}
