//! Command-line front end: generate videos, train per-video policies,
//! evaluate policies, compare methods, run the oracle and serve tables.

pub mod commands;
pub mod inputs;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::{Parser, Subcommand};
use memrl::bridge::DEFAULT_TIMEOUT;
use memrl::env::DEFAULT_STATE_BUDGET;
use memrl::tracker::VideoFamily;
use memrl::{Error, DEFAULT_CAPACITY};

pub use commands::{
    cmd_compare, cmd_dump_table, cmd_eval, cmd_gen, cmd_oracle, cmd_serve, cmd_train, EvalOptions,
    EvalReport, EvalSummary, Method, MetricsLine, RunConfig, TrainOptions, TrainRecord,
    TrainReport,
};
pub use inputs::{Manifest, TrackerSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "memrl",
    version,
    about = "Memory-bank update policies for video object tracking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct TrackerArgs {
    /// synthetic | scripted[:<table.tsv>] | bridge:<host:port or command>
    #[arg(long, default_value = "synthetic")]
    pub tracker: TrackerSpec,
    /// Seconds to wait for each bridge response.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
    pub timeout: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic videos and a manifest.
    Gen {
        #[arg(long)]
        family: VideoFamily,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 80)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one PPO policy per video.
    Train {
        /// Video specs, tables, manifests or directories holding a manifest.
        videos: Vec<PathBuf>,
        /// JSON run config with optional `train` and `sim` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Continue from checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a builtin rule or trained checkpoints.
    Eval {
        /// fifo | random | greedy | oracle | <train run dir> | <checkpoint.json>
        #[arg(long)]
        policy: Method,
        videos: Vec<PathBuf>,
        /// Run config; only the `sim` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Maximum number of states the oracle may enumerate.
        #[arg(long, default_value_t = DEFAULT_STATE_BUDGET)]
        budget: usize,
        /// Row name in comparison tables.
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate several eval runs against a baseline.
    Compare {
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "fifo")]
        baseline: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve each video exactly and dump the optimal policy.
    Oracle {
        videos: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_STATE_BUDGET)]
        budget: usize,
        #[arg(long, default_value = "synthetic")]
        tracker: TrackerSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the synthetic tracker on one video as a scripted table.
    DumpTable {
        video: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
        #[arg(long, default_value_t = DEFAULT_STATE_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a scripted table over the bridge protocol.
    Serve {
        #[arg(long)]
        table: PathBuf,
        /// Listen on this TCP address instead of stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
}

fn timeout(secs: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(secs)
        .map_err(|_| Error::Config(format!("invalid timeout {secs}")).into())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            family,
            count,
            length,
            seed,
            out,
        } => {
            let manifest = cmd_gen(family, count, length, seed, &out)?;
            println!(
                "wrote {} videos to {}",
                manifest.videos.len(),
                out.display()
            );
        }
        Command::Train {
            videos,
            config,
            seed,
            capacity,
            gamma,
            iterations,
            samples,
            tracker,
            resume,
            jobs,
            out,
        } => {
            let mut run_config = load_config(config.as_ref())?;
            let train = &mut run_config.train;
            train.seed = seed.unwrap_or(train.seed);
            train.gamma = gamma.unwrap_or(train.gamma);
            train.iterations = iterations.unwrap_or(train.iterations);
            train.samples_per_iteration = samples.unwrap_or(train.samples_per_iteration);
            let report = cmd_train(&TrainOptions {
                inputs: videos,
                tracker: tracker.tracker,
                config: run_config,
                capacity,
                out,
                jobs,
                resume,
                timeout: timeout(tracker.timeout)?,
            })?;
            print!("{}", report.table);
        }
        Command::Eval {
            policy,
            videos,
            config,
            seed,
            capacity,
            gamma,
            budget,
            label,
            tracker,
            jobs,
            out,
        } => {
            let report = cmd_eval(&EvalOptions {
                method: policy,
                inputs: videos,
                tracker: tracker.tracker,
                sim: load_config(config.as_ref())?.sim,
                capacity,
                gamma,
                seed,
                budget,
                label,
                out,
                jobs,
                timeout: timeout(tracker.timeout)?,
            })?;
            for skip in &report.summary.skipped {
                eprintln!("skipped {}: {}", skip.video_id, skip.reason);
            }
            print!("{}", report.table);
        }
        Command::Compare {
            runs,
            baseline,
            out,
        } => {
            print!("{}", cmd_compare(&runs, &baseline, out.as_deref())?);
        }
        Command::Oracle {
            videos,
            config,
            capacity,
            gamma,
            budget,
            tracker,
            out,
        } => {
            let sim = load_config(config.as_ref())?.sim;
            for r in cmd_oracle(&videos, &tracker, &sim, capacity, gamma, budget, &out)? {
                println!("{}\t{}", r.video_id, r.optimal_return);
            }
        }
        Command::DumpTable {
            video,
            config,
            capacity,
            budget,
            out,
        } => {
            let sim = load_config(config.as_ref())?.sim;
            cmd_dump_table(&video, &sim, capacity, budget, &out)?;
        }
        Command::Serve { table, listen } => cmd_serve(&table, listen.as_deref())?,
    }
    Ok(())
}

/// Exit code for a failed command: 1 for bad input, 2 for runtime failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|cause| {
        cause
            .downcast_ref::<Error>()
            .is_some_and(Error::is_validation)
            || cause.downcast_ref::<serde_json::Error>().is_some()
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
