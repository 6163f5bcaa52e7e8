use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use earnmore::env::PoolSchedule;
use earnmore::evaluator::{backtest, emit_report, run_baseline, Baseline, MetricsReport};
use earnmore::marketdata::synthetic::{drift_dataset, to_csv};
use earnmore::marketdata::{load_ohlcv, parse_splits, Dataset, IndicatorSpec};
use earnmore::steering::{serve, SessionManager};
use earnmore::trainer::{load_checkpoint, train, TrainConfig};

#[derive(Parser)]
#[command(name = "earnmore", version, about = "Portfolio management over customizable stock pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or generate datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train an agent and write checkpoints.
    Train(TrainArgs),
    /// Run a checkpoint over a split with scripted pool events.
    Backtest(BacktestArgs),
    /// Serve interactive backtest sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Align an OHLCV CSV, compute features and write a dataset directory.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Split file, or inline JSON `{"train": {"start": .., "end": ..}}`.
        #[arg(long)]
        splits: String,
    },
    /// Generate a synthetic market with one drifting asset and write its CSV and dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        flat: usize,
        #[arg(long, default_value_t = 400)]
        train_days: usize,
        #[arg(long, default_value_t = 120)]
        test_days: usize,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long, default_value_t = 0.01)]
        volatility: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON file; keys are training config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small CPU preset instead of the full defaults (ignored with --config).
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// JSON list of `{"date", "add", "remove"}` pool events.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated rule-based baselines to run alongside the agent.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Write each closed session's final state here as JSON.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

fn read_splits(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.exists() {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    } else if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        bail!("splits file {} not found", path.display())
    }
}

fn data(cmd: DataCommand) -> Result<()> {
    match cmd {
        DataCommand::Build {
            input,
            out,
            window,
            splits,
        } => {
            let splits = parse_splits(&read_splits(&splits)?)?;
            let bars = load_ohlcv(&input, None)?;
            let ds = Dataset::build(&bars, &IndicatorSpec::default(), window, splits)?;
            ds.save(&out)?;
            println!(
                "{} tickers, {} days, dataset hash {}",
                ds.num_stocks(),
                ds.calendar().len(),
                ds.manifest.hash()
            );
            if !ds.manifest.dropped_tickers.is_empty() {
                println!("dropped: {}", ds.manifest.dropped_tickers.join(", "));
            }
        }
        DataCommand::Synth {
            out,
            flat,
            train_days,
            test_days,
            window,
            volatility,
            seed,
        } => {
            let (bars, ds) = drift_dataset(flat, train_days, test_days, window, volatility, seed)?;
            ds.save(&out)?;
            let csv = out.join("bars.csv");
            std::fs::write(&csv, to_csv(&bars)).with_context(|| format!("writing {}", csv.display()))?;
            println!("{} tickers written to {}", ds.num_stocks(), out.display());
        }
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_path(path)?,
        None if args.desk => TrainConfig::desk(),
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        cfg.episodes = episodes;
    }
    cfg.validate()?;
    let ds = Dataset::load(&args.data)?;
    let outcome = train(&ds, cfg, Some(&args.out))?;
    println!(
        "trained {} episodes; checkpoint at {}",
        outcome.log.last().map_or(0, |r| r.episode + 1),
        args.out.join("checkpoint").display()
    );
    Ok(())
}

fn run_backtest(args: BacktestArgs) -> Result<()> {
    let ds = Dataset::load(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint, Some(&ds.manifest))?;
    let schedule = match &args.events {
        Some(path) => PoolSchedule::load(path)?,
        None => PoolSchedule::default(),
    };
    let baselines = args
        .baselines
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Baseline>())
        .collect::<Result<Vec<_>, _>>()?;
    let config = ckpt.manifest.config_hash.clone();
    let mut results = vec![backtest(&ckpt.agent, &ds, &args.split, &schedule, args.temperature)?];
    for b in baselines {
        results.push(run_baseline(b, &ds, &args.split, &schedule)?);
    }
    let reports = results
        .iter()
        .map(|r| MetricsReport::from_result(r, &config))
        .collect::<Result<Vec<_>, _>>()?;
    emit_report(&reports, &results, ds.tickers(), &args.out)?;
    println!("strategy,arr,sr,vol,mdd,cr,sor");
    for r in &reports {
        println!("{},{},{},{},{},{},{}", r.strategy, r.arr, r.sr, r.vol, r.mdd, r.cr, r.sor);
    }
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let ds = Dataset::load(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint, Some(&ds.manifest))?;
    let mut manager = SessionManager::new(
        Arc::new(ds),
        Arc::new(ckpt.agent),
        &args.checkpoint.display().to_string(),
    );
    if let Some(dir) = args.snapshots {
        manager = manager.with_snapshot_dir(dir);
    }
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(Arc::new(manager), addr))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Data(cmd) => data(cmd),
        Command::Train(args) => run_train(args),
        Command::Backtest(args) => run_backtest(args),
        Command::Serve(args) => run_serve(args),
    }
}
