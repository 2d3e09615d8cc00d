use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use survgp::config::RunConfig;
use survgp::data::{read_dataset, ReadOptions};
use survgp::error::{Error, Result};
use survgp::inference::Checkpoint;
use survgp::pipeline;
use survgp::simdata::{simulate, write_simulation};

#[derive(Parser)]
#[command(name = "survgp", version, about = "Joint signal/event modeling with abstaining event prediction")]
struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run configuration (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its ground-truth sidecar.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the model and write a checkpoint.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Event-probability distributions at prediction times.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `individual_id,time_min` rows; default is the five-point schedule.
        #[arg(long)]
        times: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decisions from distributions under the configured costs.
    Decide {
        #[arg(long)]
        dists: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics of decisions against the event data.
    Evaluate {
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics over the cost grid with frontiers and AUC.
    Sweep {
        #[arg(long)]
        dists: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pick(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| Error::Validation(format!("missing {what} path")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate { out } => {
            let dir = pick(out, &cfg.output, "output")?;
            let sim = simulate(&cfg.sim)?;
            write_simulation(&dir, &sim)?;
            info!("wrote {} individuals to {}", sim.dataset.individuals.len(), dir.display());
        }
        Command::Train { data, out } => {
            let dir = pick(data, &cfg.data_dir, "data")?;
            let data = read_dataset(&dir, &ReadOptions { require_events: true, ..Default::default() })?;
            let ck = pipeline::train(&data, &cfg.train)?;
            let path = pick(out, &cfg.checkpoint, "checkpoint")?;
            ck.save(&path)?;
            info!("trained for {} iterations (converged: {})", ck.iterations, ck.converged);
        }
        Command::Predict { checkpoint, data, times, out } => {
            let ck = Checkpoint::load(&pick(checkpoint, &cfg.checkpoint, "checkpoint")?)?;
            let data = read_model_data(&pick(data, &cfg.data_dir, "data")?, &ck)?;
            let times = times.as_deref().map(pipeline::read_times).transpose()?;
            let rows = pipeline::predict(&ck, &data, times.as_ref(), cfg.horizon)?;
            pipeline::write_dists(&pick(out, &cfg.output, "output")?, &rows)?;
        }
        Command::Decide { dists, out } => {
            let rows = pipeline::decide(&pipeline::read_dists(&dists)?, &cfg.costs, cfg.mode)?;
            pipeline::write_decisions(&pick(out, &cfg.output, "output")?, &rows)?;
        }
        Command::Evaluate { decisions, data, out } => {
            let data = read_dataset(&pick(data, &cfg.data_dir, "data")?, &ReadOptions::default())?;
            let (m, excluded) = pipeline::evaluate(&pipeline::read_decisions(&decisions)?, &data, cfg.horizon)?;
            survgp::data::write_rows(
                &pick(out, &cfg.output, "output")?,
                &pipeline::METRICS_HEADER,
                [pipeline::metrics_row(cfg.mode, &cfg.costs, &m, excluded)],
            )?;
        }
        Command::Sweep { dists, data, out } => {
            let data = read_dataset(&pick(data, &cfg.data_dir, "data")?, &ReadOptions::default())?;
            let res = pipeline::run_sweep(&pipeline::read_dists(&dists)?, &data, cfg.horizon, &cfg.grid, &cfg.modes, cfg.train.seed)?;
            pipeline::write_sweep(&pick(out, &cfg.output, "output")?, &res)?;
        }
    }
    Ok(())
}

fn read_model_data(dir: &Path, ck: &Checkpoint) -> Result<survgp::data::Dataset> {
    read_dataset(
        dir,
        &ReadOptions { n_signals: Some(ck.n_signals), covariate_names: Some(ck.covariate_names.clone()), require_events: false },
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
