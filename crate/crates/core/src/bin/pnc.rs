use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnc::eval::{EvalError, IngestConfig, Pipeline, PipelineConfig};

/// Progressive neural compression: training, coding and offloading experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or import the image dataset.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train the teacher classifier or an autoencoder.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Build per-channel Huffman tables.
    #[command(subcommand)]
    Tables(TablesCmd),
    /// Accuracy against encoded-size limits.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Trace-driven offloading simulations.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Recompute metrics from the record files.
    Report,
    /// Every stage, in order.
    All,
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Render the synthetic dataset.
    Gen,
    /// Load PGM/PPM images listed in a `file,label[,split]` CSV manifest.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct IngestArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
}

#[derive(Subcommand)]
enum TrainCmd {
    Teacher,
    /// Taildrop autoencoder.
    Ae,
    /// Fixed-rate baseline.
    Fixed,
}

#[derive(Subcommand)]
enum TablesCmd {
    Build,
}

#[derive(Subcommand)]
enum SweepCmd {
    Size,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Scenario x period grid.
    Grid,
    /// Switching-bandwidth run.
    Vary,
}

fn run(cli: Cli) -> Result<(), EvalError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let p = Pipeline::new(config, &cli.out)?;
    match cli.command {
        Command::Dataset(DatasetCmd::Gen) => {
            let ds = p.dataset_gen()?;
            log::info!("{} samples written", ds.samples.len());
        }
        Command::Dataset(DatasetCmd::Ingest(a)) => {
            let cfg = IngestConfig {
                channels: a.channels,
                size: a.size,
                n_classes: a.classes,
                ..IngestConfig::default()
            };
            let ds = p.dataset_ingest(&a.manifest, &cfg)?;
            log::info!("{} samples ingested", ds.samples.len());
        }
        Command::Train(TrainCmd::Teacher) => {
            p.train_teacher()?;
        }
        Command::Train(TrainCmd::Ae) => {
            p.train_ae(false)?;
        }
        Command::Train(TrainCmd::Fixed) => {
            p.train_ae(true)?;
        }
        Command::Tables(TablesCmd::Build) => p.build_tables()?,
        Command::Sweep(SweepCmd::Size) => {
            for pt in p.sweep_size()? {
                println!(
                    "{:<9} {:>6} B  acc {:.3}  K {:.2}",
                    pt.model, pt.limit_bytes, pt.accuracy, pt.mean_channels
                );
            }
        }
        Command::Sim(SimCmd::Grid) => {
            for r in p.sim_grid()? {
                if r.error.is_empty() {
                    println!(
                        "{:<14} T={:.2}s seed {:<3} acc {:.3}  full {:.3}  {:.0} B/s",
                        r.scenario,
                        r.period,
                        r.seed,
                        r.accuracy,
                        r.fully_offloaded_fraction,
                        r.throughput
                    );
                } else {
                    println!(
                        "{:<14} T={:.2}s seed {:<3} error: {}",
                        r.scenario, r.period, r.seed, r.error
                    );
                }
            }
        }
        Command::Sim(SimCmd::Vary) => {
            let r = p.sim_vary()?;
            println!(
                "acc {:.3}  full {:.3}  {:.0} B/s",
                r.accuracy, r.fully_offloaded_fraction, r.throughput
            );
        }
        Command::Report => {
            for r in p.report()? {
                println!(
                    "{:<32} acc {:.3}  full {:.3}  {:.0} B/s",
                    r.condition, r.accuracy, r.fully_offloaded_fraction, r.throughput
                );
            }
        }
        Command::All => p.run_all()?,
        Command::Config => print!("{}", p.config.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
