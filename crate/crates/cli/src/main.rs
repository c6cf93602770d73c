use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sectorfolio_cli::pipeline::{Pipeline, StageSummary};
use sectorfolio_cli::RunConfig;
use sectorfolio_core::llm_gateway::GatewayMode;

/// Sector portfolio pipeline: LLM stock selection, bounded mean-variance
/// optimization, backtesting, and diagnostics with deterministic replay.
#[derive(Parser)]
#[command(name = "sectorfolio", version, about)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "sectorfolio.toml")]
    config: PathBuf,

    /// Output directory for stage artifacts and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the configured gateway mode (live, record, replay).
    #[arg(long, global = true)]
    mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline end to end.
    Run,
    /// Selection rounds, ticker validation, and universe aggregation.
    Select,
    /// Weighting rounds over each chosen universe.
    Weight,
    /// LLM-weighted and equal-weighted portfolios.
    Build,
    /// Moment estimation, efficient frontier, and optimized portfolios.
    Optimize,
    /// Per-window performance against the sector indices.
    Backtest,
    /// PCA counts, effective rank, HHI, and weight volatility.
    Diagnose,
    /// Classification grids, manifest, and content digests.
    Report,
}

fn parse_mode(s: &str) -> Result<GatewayMode, String> {
    match s {
        "live" => Ok(GatewayMode::Live),
        "record" => Ok(GatewayMode::Record),
        "replay" => Ok(GatewayMode::Replay),
        other => Err(format!("unknown mode {other:?} (live, record, replay)")),
    }
}

fn stage_exit(summary: StageSummary) -> ExitCode {
    if summary.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let mut config = RunConfig::load(&cli.config).map_err(|e| e.to_string())?;
    if let Some(mode) = &cli.mode {
        config.mode = parse_mode(mode)?;
        if matches!(config.mode, GatewayMode::Replay | GatewayMode::Record)
            && config.cassette_dir.is_none()
        {
            return Err("replay/record mode requires paths.cassette_dir".into());
        }
    }
    let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
    let out = &cli.out;
    let code = match cli.command {
        Command::Run => {
            let manifest = pipeline.run(out).map_err(|e| e.to_string())?;
            let failed = manifest.failed_cells();
            log::info!(
                "{} cells ok, {failed} failed, {} portfolios",
                manifest.successful_cells(),
                manifest.portfolio_count
            );
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Select => stage_exit(pipeline.select(out).map_err(|e| e.to_string())?),
        Command::Weight => stage_exit(pipeline.weight(out).map_err(|e| e.to_string())?),
        Command::Build => stage_exit(pipeline.build(out).map_err(|e| e.to_string())?),
        Command::Optimize => stage_exit(pipeline.optimize(out).map_err(|e| e.to_string())?),
        Command::Backtest => stage_exit(pipeline.backtest(out).map_err(|e| e.to_string())?),
        Command::Diagnose => stage_exit(pipeline.diagnose(out).map_err(|e| e.to_string())?),
        Command::Report => {
            let manifest = pipeline.report(out).map_err(|e| e.to_string())?;
            if manifest.failed_cells() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
