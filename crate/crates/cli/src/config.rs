//! Run settings: flags, an optional `key=value` file, and defaults, in that
//! order of precedence.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use crate::UsageError;

pub const DEFAULT_TOPIC: &str = "tweets";
pub const DEFAULT_PARTITIONS: usize = 6;
pub const DEFAULT_SERVICE_TIME_US: u64 = 2_200;
pub const KEYSPACE: &str = "twitter";
pub const COLUMN_FAMILY: &str = "tweets";
pub const MAX_WORKERS: usize = 16;

/// Where the replayed tweets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    File(PathBuf),
    Synthetic { n: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topic: String,
    pub partitions: usize,
    pub workers: usize,
    pub batch_interval_ms: u64,
    /// Partitions of each micro-batch dataset.
    pub batch_partitions: usize,
    pub rate: f64,
    pub duration_s: f64,
    pub senders: usize,
    pub corpus: CorpusSource,
    pub store_dir: PathBuf,
    /// Trained model to load; when absent the model is trained on the
    /// corpus labels.
    pub model_path: Option<PathBuf>,
    pub seed: u64,
    /// Per-record compute budget of one worker, in microseconds.
    pub service_time_us: u64,
    pub alpha: f64,
    pub memtable_limit: usize,
    /// Directory for CSV exports; defaults to the store directory.
    pub out_dir: Option<PathBuf>,
    pub bin_s: u64,
}

impl RunConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            topic: DEFAULT_TOPIC.to_string(),
            partitions: DEFAULT_PARTITIONS,
            workers: 1,
            batch_interval_ms: 1_000,
            batch_partitions: 4,
            rate: 1_000.0,
            duration_s: 60.0,
            senders: 2,
            corpus: CorpusSource::Synthetic { n: 5_000, vocab: 2_000 },
            store_dir: store_dir.into(),
            model_path: None,
            seed: 42,
            service_time_us: DEFAULT_SERVICE_TIME_US,
            alpha: 1.0,
            memtable_limit: 10_000,
            out_dir: None,
            bin_s: 10,
        }
    }

    /// Sets the worker count and sizes batches to four tasks per worker.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self.batch_partitions = 4 * workers;
        self
    }

    pub fn exports_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(&self.store_dir)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let fail = |m: String| Err(UsageError(m));
        if self.topic.is_empty() {
            return fail("topic must not be empty".into());
        }
        if self.partitions == 0 {
            return fail("partitions must be at least 1".into());
        }
        if !(1..=MAX_WORKERS).contains(&self.workers) {
            return fail(format!("workers must be in [1, {MAX_WORKERS}], got {}", self.workers));
        }
        if self.batch_interval_ms == 0 {
            return fail("batch interval must be positive".into());
        }
        if self.batch_partitions == 0 {
            return fail("batch partitions must be at least 1".into());
        }
        if !(1.0..=10_000.0).contains(&self.rate) {
            return fail(format!("rate must be in [1, 10000], got {}", self.rate));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return fail(format!("duration must be positive, got {}", self.duration_s));
        }
        if self.senders == 0 {
            return fail("senders must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.memtable_limit == 0 {
            return fail("memtable limit must be positive".into());
        }
        if self.bin_s == 0 {
            return fail("bin size must be positive".into());
        }
        if let CorpusSource::Synthetic { n, vocab } = self.corpus {
            if n == 0 || vocab < 2 {
                return fail("synthetic corpus needs n >= 1 and vocab >= 2".into());
            }
        }
        Ok(())
    }
}

/// Reads `key=value` lines. `#` starts a comment; blank lines are ignored.
pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>, UsageError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected key=value", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(UsageError(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

const KNOWN_KEYS: &[&str] = &[
    "topic",
    "partitions",
    "workers",
    "batch-interval-ms",
    "batch-partitions",
    "rate",
    "duration",
    "senders",
    "corpus",
    "synthetic-n",
    "synthetic-vocab",
    "store-dir",
    "model",
    "seed",
    "service-time-us",
    "alpha",
    "memtable-limit",
    "out-dir",
    "bin-s",
];

/// Flags shared by `run` and `experiment`. Every flag may also be given in
/// the `--config` file under the flag name without its leading dashes.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// key=value file with defaults for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Broker topic
    #[arg(long)]
    pub topic: Option<String>,
    /// Broker partitions [default: 6]
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Stream workers, 1-16 [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Micro-batch interval in milliseconds [default: 1000]
    #[arg(long)]
    pub batch_interval_ms: Option<u64>,
    /// Dataset partitions per batch [default: 4 x workers]
    #[arg(long)]
    pub batch_partitions: Option<usize>,
    /// Replay rate in tweets per second, 1-10000 [default: 1000]
    #[arg(long)]
    pub rate: Option<f64>,
    /// Replay duration in seconds [default: 60]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Parallel sender threads [default: 2]
    #[arg(long)]
    pub senders: Option<usize>,
    /// Corpus file (one tweet per line, optional pos/neg<TAB> prefix)
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Synthetic corpus size when no corpus file is given [default: 5000]
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    /// Synthetic vocabulary size [default: 2000]
    #[arg(long)]
    pub synthetic_vocab: Option<usize>,
    /// Store directory
    #[arg(long)]
    pub store_dir: Option<PathBuf>,
    /// Trained model file; trained from the corpus labels when absent
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Seed for the synthetic corpus [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-record compute budget of one worker in microseconds; 0 disables [default: 2200]
    #[arg(long)]
    pub service_time_us: Option<u64>,
    /// Smoothing for models trained in-run [default: 1.0]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Store memtable limit in rows [default: 10000]
    #[arg(long)]
    pub memtable_limit: Option<usize>,
    /// Directory for CSV exports [default: store dir]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Series bin width in seconds [default: 10]
    #[arg(long)]
    pub bin_s: Option<u64>,
}

fn pick<T>(flag: Option<T>, file: &HashMap<String, String>, key: &str) -> Result<Option<T>, UsageError>
where
    T: FromStr,
    T::Err: Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| UsageError(format!("config key {key}: {e}")))
        })
        .transpose()
}

impl RunArgs {
    /// Merges flags over the config file over `base`.
    pub fn resolve(&self, base: RunConfig) -> Result<RunConfig, UsageError> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                parse_config_file(&text)?
            }
            None => HashMap::new(),
        };
        let mut c = base;
        if let Some(v) = pick(self.topic.clone(), &file, "topic")? {
            c.topic = v;
        }
        if let Some(v) = pick(self.partitions, &file, "partitions")? {
            c.partitions = v;
        }
        if let Some(v) = pick(self.workers, &file, "workers")? {
            c = c.with_workers(v);
        }
        if let Some(v) = pick(self.batch_interval_ms, &file, "batch-interval-ms")? {
            c.batch_interval_ms = v;
        }
        if let Some(v) = pick(self.batch_partitions, &file, "batch-partitions")? {
            c.batch_partitions = v;
        }
        if let Some(v) = pick(self.rate, &file, "rate")? {
            c.rate = v;
        }
        if let Some(v) = pick(self.duration, &file, "duration")? {
            c.duration_s = v;
        }
        if let Some(v) = pick(self.senders, &file, "senders")? {
            c.senders = v;
        }
        let synthetic_n = pick(self.synthetic_n, &file, "synthetic-n")?;
        let synthetic_vocab = pick(self.synthetic_vocab, &file, "synthetic-vocab")?;
        match pick(self.corpus.clone(), &file, "corpus")? {
            Some(path) => c.corpus = CorpusSource::File(path),
            None => {
                if let CorpusSource::Synthetic { n, vocab } = &mut c.corpus {
                    *n = synthetic_n.unwrap_or(*n);
                    *vocab = synthetic_vocab.unwrap_or(*vocab);
                }
            }
        }
        if let Some(v) = pick(self.store_dir.clone(), &file, "store-dir")? {
            c.store_dir = v;
        }
        if let Some(v) = pick(self.model.clone(), &file, "model")? {
            c.model_path = Some(v);
        }
        if let Some(v) = pick(self.seed, &file, "seed")? {
            c.seed = v;
        }
        if let Some(v) = pick(self.service_time_us, &file, "service-time-us")? {
            c.service_time_us = v;
        }
        if let Some(v) = pick(self.alpha, &file, "alpha")? {
            c.alpha = v;
        }
        if let Some(v) = pick(self.memtable_limit, &file, "memtable-limit")? {
            c.memtable_limit = v;
        }
        if let Some(v) = pick(self.out_dir.clone(), &file, "out-dir")? {
            c.out_dir = Some(v);
        }
        if let Some(v) = pick(self.bin_s, &file, "bin-s")? {
            c.bin_s = v;
        }
        c.validate()?;
        Ok(c)
    }
}
