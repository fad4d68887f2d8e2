//! `textpipe` command line: train a sentiment model, run the streaming
//! pipeline, run the 1/2/3-worker experiment, serve the query API, or
//! replay a corpus into a broker directory.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use textpipe_core::ReplayConfig;

use commands::{Profile, RunOutcome};
use config::{RunArgs, RunConfig, DEFAULT_PARTITIONS, DEFAULT_TOPIC};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Invalid input from the command line or a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "textpipe", version, about = "Real-time tweet sentiment pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Naive Bayes model on a labeled corpus
    Train {
        /// Corpus with pos/neg<TAB> labels
        #[arg(long)]
        corpus: PathBuf,
        /// Additive smoothing
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        alpha: f64,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a corpus through broker, stream engine and store once
    Run {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run the pipeline with 1, 2 and 3 workers and compare them
    Experiment {
        /// desk (1000/s for 60 s) or paper (778/s for 600 s)
        #[arg(long, default_value = "desk")]
        profile: String,
        /// Directory for per-run stores and the experiment CSV
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Serve the query API over a store directory
    Serve {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Replay a corpus into a file-backed broker directory
    Replay {
        #[arg(long)]
        broker_dir: PathBuf,
        /// Corpus file; a synthetic corpus is generated when absent
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_TOPIC)]
        topic: String,
        /// Partitions when the topic has to be created
        #[arg(long, default_value_t = DEFAULT_PARTITIONS)]
        partitions: usize,
        /// Tweets per second, 1-10000
        #[arg(long, default_value_t = 1_000.0)]
        rate: f64,
        /// Seconds
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        senders: usize,
    },
}

fn print_run(outcome: &RunOutcome) {
    let s = &outcome.summary;
    println!(
        "sent {} at {:.1}/s over {:.1}s",
        outcome.replay.sent, outcome.replay.achieved_rate, outcome.replay.elapsed_s
    );
    println!("batches {}, rows stored {}", outcome.stream.batches, outcome.rows_stored);
    println!(
        "tweets processed {}, processed time {:.3} min, latency {:.3} min",
        s.tweets_processed, s.processed_time_min, s.latency_min
    );
    if let Some(l) = &outcome.latency {
        println!(
            "per-record latency (extension): p50 {} ms, p95 {} ms, p99 {} ms, max {} ms",
            l.p50_ms, l.p95_ms, l.p99_ms, l.max_ms
        );
    }
    for path in &outcome.exports {
        println!("wrote {}", path.display());
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { corpus, alpha, out } => {
            let t = commands::cmd_train(&corpus, alpha, &out)?;
            println!(
                "trained on {} documents, vocabulary {}, accuracy {:.4}",
                t.documents,
                t.model.vocabulary().len(),
                t.accuracy
            );
            println!("wrote {}", out.display());
        }
        Command::Run { args } => {
            let base = RunConfig::new(args.store_dir.clone().unwrap_or_else(|| PathBuf::from("textpipe-store")));
            let config = args.resolve(base)?;
            print_run(&commands::cmd_run(&config, None)?);
        }
        Command::Experiment { profile, out, args } => {
            let p = Profile::by_name(&profile)
                .ok_or_else(|| UsageError(format!("unknown profile {profile:?}; use desk or paper")))?;
            let base = RunConfig {
                rate: p.rate,
                duration_s: p.duration_s,
                service_time_us: p.service_time_us,
                ..RunConfig::new(out.join("store"))
            };
            let config = args.resolve(base)?;
            let result = commands::cmd_experiment(&config, &out)?;
            println!(
                "{:<12} {:>16} {:>18} {:>11} {:>11}",
                "experiment", "tweets_processed", "processed_time_m", "latency_m", "speedup_%"
            );
            for (name, s) in &result.rows {
                println!(
                    "{:<12} {:>16} {:>18.3} {:>11.3} {:>11}",
                    name,
                    s.tweets_processed,
                    s.processed_time_min,
                    s.latency_min,
                    s.speedup_pct.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
                );
            }
            println!("wrote {}", result.csv.display());
        }
        Command::Serve { store_dir, bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(commands::serve_until(
                &store_dir,
                bind,
                |addr| println!("listening on http://{addr}"),
                commands::shutdown_signal(),
            ))?;
        }
        Command::Replay {
            broker_dir,
            corpus,
            topic,
            partitions,
            rate,
            duration,
            seed,
            senders,
        } => {
            let corpus = match corpus {
                Some(path) => textpipe_core::workload::load_corpus(&path)?,
                None => textpipe_core::workload::generate_synthetic(5_000, 2_000, seed)?,
            };
            let config = ReplayConfig {
                seed,
                senders,
                ..ReplayConfig::new(topic, rate, duration)
            };
            let r = commands::cmd_replay(&corpus, &broker_dir, &config, partitions)?;
            println!(
                "sent {} at {:.1}/s over {:.2}s; topic grew by {}",
                r.report.sent, r.report.achieved_rate, r.report.elapsed_s, r.length_delta
            );
        }
    }
    Ok(())
}

/// Error text and exit code for a failed command.
pub fn classify_error(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = classify_error(&e);
            let kind = if code == EXIT_USAGE { "usage" } else { "error" };
            eprintln!("{kind}: {e:#}");
            code
        }
    }
}
