use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use heatcast::config::RunConfig;
use heatcast::pipeline::{load_buildings, run_pipeline, write_buildings, RunOptions, Stage};
use heatcast::synthetic::SyntheticSpec;
use heatcast::{Error, Result};

/// Probabilistic heat load forecasting and anomaly detection.
#[derive(Parser)]
#[command(name = "heatcast", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic building CSVs.
    Generate(GenerateArgs),
    /// Tune the ensemble members on the validation span.
    Tune(RunArgs),
    /// Rolling day-ahead member forecasts and the ensemble.
    Forecast(RunArgs),
    /// Fit the probabilistic models on the test span.
    Combine(RunArgs),
    /// Point metrics, CRPS and PIT tables.
    Evaluate(RunArgs),
    /// Anomaly injection experiment and ROC tables.
    Detect(RunArgs),
    /// Rebuild all tables and the report from existing checkpoints.
    Report(RunArgs),
    /// Every stage in order.
    RunAll(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Config whose `[data.synthetic]` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_buildings: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    max_test_days: Option<usize>,
    #[arg(long)]
    write_quantiles: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(m) = &self.models {
            cfg.models = m.clone();
        }
        if let Some(n) = self.max_test_days {
            cfg.runtime.max_test_days = n;
        }
        cfg.runtime.write_quantiles |= self.write_quantiles;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => RunConfig::load(p)?
            .data
            .synthetic
            .ok_or_else(|| Error::Config(format!("{} has no [data.synthetic] table", p.display())))?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_buildings {
        spec.n_buildings = n;
    }
    let series = heatcast::synthetic::generate_synthetic(&spec)?;
    for p in write_buildings(&series, &args.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(args: &RunArgs, through: Stage, checkpoints_only: bool) -> Result<()> {
    let cfg = args.load()?;
    // fail on unreadable data before creating any output
    load_buildings(&cfg)?;
    let (_, manifest) = run_pipeline(&cfg, RunOptions { through, checkpoints_only })?;
    info!("{} artifacts in {}", manifest.artifacts.len(), cfg.output_dir.display());
    println!("{}", cfg.output_dir.join(heatcast::pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Tune(a) => run(a, Stage::Tune, false),
        Command::Forecast(a) => run(a, Stage::Forecast, false),
        Command::Combine(a) => run(a, Stage::Combine, false),
        Command::Evaluate(a) => run(a, Stage::Evaluate, false),
        Command::Detect(a) => run(a, Stage::Detect, false),
        Command::Report(a) => run(a, Stage::Report, true),
        Command::RunAll(a) => run(a, Stage::Report, false),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
