//! Command-line harness: dataset generation, pretraining, reach suites,
//! and result tables.

use clap::{Parser, Subcommand};
use reach_precise::bench::{self, BenchConfig, RunDir, Scale};
use reach_precise::reach::{Strategy, ThresholdMode};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "reach-precise", version, about = "High-precision robot arm reaching experiments")]
struct Cli {
    /// TOML config; falls back to $REACH_PRECISE_CONFIG, then to the preset
    /// chosen by --scale
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in preset when no config file is given
    #[arg(long, global = true, value_enum, default_value = "desk")]
    scale: Scale,

    /// Master seed (overrides the config's seed)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output/run directory
    #[arg(long, global = true, default_value = "runs/desk")]
    out: PathBuf,

    /// Suite worker threads; 1 = deterministic reference mode
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test dataset files
    GenData,
    /// Pretrain the inverse model (resumes from a checkpoint if present)
    Pretrain,
    /// Run one reaching strategy over a target suite
    Reach {
        /// basic | s1 | s2 | parallel | baseline
        #[arg(long)]
        strategy: String,
        /// Joint resolution in degrees
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
        /// Number of targets
        #[arg(long, default_value_t = 200)]
        targets: usize,
        /// min | half
        #[arg(long, default_value = "min")]
        threshold_mode: String,
        /// Replay every trajectory and fail on mismatch > 1e-9 m
        #[arg(long)]
        audit: bool,
    },
    /// Emit result tables (2, 4, 5, 6, 7)
    Tables {
        #[arg(long, required = true, value_delimiter = ',')]
        table: Vec<u8>,
    },
    /// Replay a reach report file and verify every reported precision
    Audit {
        file: PathBuf,
    },
    /// Print the active configuration as TOML
    PrintConfig,
}

fn load_config(cli: &Cli) -> anyhow::Result<BenchConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("REACH_PRECISE_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => BenchConfig::load(&p)?,
        None => BenchConfig::preset(cli.scale, cli.seed.unwrap_or(42)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.pretrain.seed = seed;
    }
    Ok(cfg)
}

fn parse_threshold_mode(s: &str) -> anyhow::Result<ThresholdMode> {
    match s {
        "min" | "min-disp" => Ok(ThresholdMode::MinDisp),
        "half" | "half-min-disp" => Ok(ThresholdMode::HalfMinDisp),
        other => anyhow::bail!("unknown threshold mode '{other}' (expected min | half)"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let dir = RunDir::new(cli.out.clone())?;
    match &cli.command {
        Command::GenData => bench::cmd_gen_data(&cfg, &dir)?,
        Command::Pretrain => {
            bench::cmd_pretrain(&cfg, &dir)?;
        }
        Command::Reach {
            strategy,
            resolution,
            targets,
            threshold_mode,
            audit,
        } => {
            let Some(strategy) = Strategy::parse(strategy) else {
                eprintln!("error: unknown strategy '{strategy}' (expected basic | s1 | s2 | parallel | baseline)");
                std::process::exit(2);
            };
            let mode = parse_threshold_mode(threshold_mode)?;
            bench::cmd_reach(
                &cfg,
                &dir,
                strategy,
                *resolution,
                *targets,
                mode,
                cli.workers,
                *audit,
            )?;
        }
        Command::Tables { table } => bench::cmd_tables(&cfg, &dir, table, cli.workers)?,
        Command::Audit { file } => {
            let records = bench::read_records(file)?;
            bench::audit_records(&cfg, &records)?;
            println!("audit: all {} trajectories replay within 1e-9 m", records.len());
        }
        Command::PrintConfig => {
            print!("{}", toml::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
