use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use textpipe_core::metrics::{aggregate_series, summarize, write_events_csv, write_summary_csv, LatencySummary, Series};
use textpipe_core::pipeline::{Classify, StoreSink};
use textpipe_core::query::{self, QueryState};
use textpipe_core::store::{Store, StoreError};
use textpipe_core::stream::{run_streaming, StreamConfig, StreamReport};
use textpipe_core::workload::{self, generate_synthetic, load_corpus};
use textpipe_core::{
    Broker, ColumnFamily, ExperimentSummary, Metrics, NaiveBayesModel, PipelineEvent, ReplayConfig, ReplayReport,
    StoreOptions, TokenPipeline, TweetCorpus,
};

use crate::config::{CorpusSource, RunConfig, COLUMN_FAMILY, KEYSPACE};
use crate::UsageError;

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: NaiveBayesModel,
    pub documents: usize,
    pub accuracy: f64,
}

/// Trains on the labeled lines of `corpus_path` and writes the model.
pub fn cmd_train(corpus_path: &Path, alpha: f64, model_out: &Path) -> Result<TrainOutcome> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(UsageError(format!("alpha must be positive, got {alpha}")).into());
    }
    let corpus = load_corpus(corpus_path).with_context(|| format!("workload: loading {}", corpus_path.display()))?;
    let docs = corpus.labeled_docs();
    let tokens = TokenPipeline::english();
    let model = NaiveBayesModel::train(&docs, alpha, &tokens).context("classifier: training")?;
    let accuracy = model.evaluate(&docs, &tokens).context("classifier: evaluating")?;
    model
        .save(model_out)
        .with_context(|| format!("classifier: writing {}", model_out.display()))?;
    let reloaded = NaiveBayesModel::load(model_out).context("classifier: reloading saved model")?;
    reloaded.check_invariants().context("classifier: saved model")?;
    Ok(TrainOutcome {
        model,
        documents: docs.len(),
        accuracy,
    })
}

/// Everything a completed run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: ExperimentSummary,
    pub replay: ReplayReport,
    pub stream: StreamReport,
    pub rows_stored: u64,
    pub processed_total: u64,
    pub received_total: u64,
    pub events: Vec<PipelineEvent>,
    pub series: Series,
    pub latency: Option<LatencySummary>,
    pub exports: Vec<PathBuf>,
}

pub fn load_run_corpus(config: &RunConfig) -> Result<TweetCorpus> {
    match &config.corpus {
        CorpusSource::File(path) => load_corpus(path).with_context(|| format!("workload: loading {}", path.display())),
        CorpusSource::Synthetic { n, vocab } => {
            generate_synthetic(*n, *vocab, config.seed).context("workload: generating synthetic corpus")
        }
    }
}

fn run_model(config: &RunConfig, corpus: &TweetCorpus, tokens: &TokenPipeline) -> Result<NaiveBayesModel> {
    match &config.model_path {
        Some(path) => {
            let model = NaiveBayesModel::load(path).with_context(|| format!("classifier: loading {}", path.display()))?;
            model.check_invariants().context("classifier: loaded model")?;
            Ok(model)
        }
        None => NaiveBayesModel::train(&corpus.labeled_docs(), config.alpha, tokens)
            .context("classifier: training on corpus labels"),
    }
}

fn open_family(store_dir: &Path, opts: StoreOptions) -> Result<Arc<ColumnFamily>> {
    let store = Store::open(store_dir).with_context(|| format!("store: opening {}", store_dir.display()))?;
    store
        .column_family(KEYSPACE, COLUMN_FAMILY, opts)
        .with_context(|| format!("store: opening {KEYSPACE}/{COLUMN_FAMILY}"))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Checks that every sent message was consumed, classified and stored once,
/// and that processing never ran ahead of ingestion.
pub fn check_conservation(outcome: &RunOutcome) -> Result<()> {
    let sent = outcome.replay.sent;
    if outcome.rows_stored != sent || outcome.processed_total != sent || outcome.stream.records_processed != sent {
        bail!(
            "conservation violated: sent {sent}, consumed {}, processed {}, stored {}",
            outcome.stream.records_processed,
            outcome.processed_total,
            outcome.rows_stored
        );
    }
    if outcome.received_total != sent {
        bail!("conservation violated: sent {sent}, received events {}", outcome.received_total);
    }
    if let Some(p) = outcome.series.points.iter().find(|p| p.received_cum < p.processed_cum) {
        bail!(
            "processed ran ahead of received at t={}s ({} > {})",
            p.t_s,
            p.processed_cum,
            p.received_cum
        );
    }
    Ok(())
}

/// Replays the corpus through broker, stream engine and store, then
/// summarizes and exports the run. `baseline_min` is the processing time
/// the speedup is measured against.
pub fn cmd_run(config: &RunConfig, baseline_min: Option<f64>) -> Result<RunOutcome> {
    config.validate()?;
    let corpus = load_run_corpus(config)?;
    let tokens = Arc::new(TokenPipeline::english());
    let model = Arc::new(run_model(config, &corpus, &tokens)?);

    // store, then broker, then stream, then replay
    let opts = StoreOptions {
        memtable_limit: config.memtable_limit,
        ..StoreOptions::default()
    };
    let cf = open_family(&config.store_dir, opts)?;
    let existing = cf.read_all().context("store: reading existing rows")?.len();
    if existing > 0 {
        bail!(
            "store: {} already holds {existing} rows; runs need an empty store directory",
            config.store_dir.display()
        );
    }
    let broker = Broker::in_memory();
    broker
        .create_topic(&config.topic, config.partitions)
        .context("broker: creating topic")?;
    let metrics = Metrics::new(broker.clock());
    let stage = Classify::new(model, tokens, broker.clock())
        .with_service_time(Duration::from_micros(config.service_time_us));
    let stream_config = StreamConfig {
        interval_ms: config.batch_interval_ms,
        workers: config.workers,
        batch_partitions: config.batch_partitions,
        ..StreamConfig::new(config.topic.clone())
    };
    let handle = run_streaming(
        &broker,
        stream_config,
        stage.into_pipeline(),
        StoreSink::new(Arc::clone(&cf)),
        Some(metrics.clone()),
    )
    .context("stream: starting driver")?;

    let replay_config = ReplayConfig {
        seed: config.seed,
        senders: config.senders,
        ..ReplayConfig::new(config.topic.clone(), config.rate, config.duration_s)
    };
    let replayed = workload::replay(&corpus, &replay_config, &broker, Some(&metrics));
    // drain whatever arrived even when the replay failed
    let stream = handle.stop();
    let replay = replayed.context("workload: replay")?;
    let stream = stream.context("stream")?;
    match cf.flush() {
        Ok(_) | Err(StoreError::EmptyMemtable) => {}
        Err(e) => return Err(e).context("store: final flush"),
    }

    let events = metrics.events();
    let summary = summarize(&events, config.duration_s / 60.0, baseline_min).context("metrics")?;
    let series = aggregate_series(&events, config.bin_s).context("metrics")?;
    let mut outcome = RunOutcome {
        summary,
        replay,
        stream,
        rows_stored: cf.read_all().context("store: counting rows")?.len() as u64,
        processed_total: metrics.processed_total(),
        received_total: metrics.received_total(),
        latency: metrics.latency_summary(),
        events,
        series,
        exports: Vec::new(),
    };
    check_conservation(&outcome)?;

    let dir = config.exports_dir();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let events_path = dir.join("events.csv");
    write_file(&events_path, |w| Ok(write_events_csv(&outcome.events, w)?))?;
    let series_path = dir.join("series.csv");
    write_file(&series_path, |w| Ok(outcome.series.write_csv(w)?))?;
    let summary_path = dir.join("summary.csv");
    let row = vec![(format!("workers={}", config.workers), outcome.summary)];
    write_file(&summary_path, |w| Ok(write_summary_csv(&row, None, w)?))?;
    outcome.exports = vec![events_path, series_path, summary_path];
    Ok(outcome)
}

/// Rate and duration of an experiment profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub rate: f64,
    pub duration_s: f64,
    pub service_time_us: u64,
}

impl Profile {
    /// 1,000 tweets/s for one minute.
    pub const DESK: Profile = Profile {
        rate: 1_000.0,
        duration_s: 60.0,
        service_time_us: crate::config::DEFAULT_SERVICE_TIME_US,
    };
    /// About 778 tweets/s for ten minutes, with one worker handling about
    /// 515 tweets/s.
    pub const PAPER: Profile = Profile {
        rate: 778.0,
        duration_s: 600.0,
        service_time_us: 1_940,
    };

    pub fn by_name(name: &str) -> Option<Profile> {
        match name {
            "desk" => Some(Profile::DESK),
            "paper" => Some(Profile::PAPER),
            _ => None,
        }
    }
}

pub const EXPERIMENT_WORKERS: [usize; 3] = [1, 2, 3];

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<(String, ExperimentSummary)>,
    pub csv: PathBuf,
}

/// Runs `base` once per worker count on fresh stores under `out_dir`,
/// comparing each against the single-worker run. A failed run aborts the
/// rest; the CSV then holds the completed rows and an `# incomplete:` line.
pub fn cmd_experiment(base: &RunConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    base.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv = out_dir.join("experiment.csv");
    let mut rows: Vec<(String, ExperimentSummary)> = Vec::new();
    let mut baseline = None;
    for workers in EXPERIMENT_WORKERS {
        let run_dir = out_dir.join(format!("workers-{workers}"));
        let result = if run_dir.exists() {
            Err(anyhow::anyhow!(
                "{} already exists; experiments need fresh directories",
                run_dir.display()
            ))
        } else {
            let config = RunConfig {
                store_dir: run_dir.join("store"),
                out_dir: Some(run_dir.clone()),
                ..base.clone().with_workers(workers)
            };
            cmd_run(&config, baseline)
        };
        match result {
            Ok(outcome) => {
                let mut summary = outcome.summary;
                if baseline.is_none() {
                    baseline = Some(summary.processed_time_min);
                    summary.speedup_pct = None;
                }
                rows.push((format!("workers={workers}"), summary));
            }
            Err(e) => {
                let reason = format!("workers={workers} failed: {e:#}");
                write_file(&csv, |w| Ok(write_summary_csv(&rows, Some(&reason), w)?))?;
                return Err(e.context(format!("experiment run with {workers} workers")));
            }
        }
    }
    write_file(&csv, |w| Ok(write_summary_csv(&rows, None, w)?))?;
    Ok(ExperimentOutcome { rows, csv })
}

/// Serves the query API for the store under `store_dir` until `shutdown`
/// resolves. `on_bound` receives the bound address.
pub async fn serve_until<F>(
    store_dir: &Path,
    bind: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: F,
) -> Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    if !store_dir.is_dir() {
        bail!("store unavailable: {} is not a directory", store_dir.display());
    }
    let cf = open_family(store_dir, StoreOptions::default())?;
    let (listener, addr) = query::bind(bind).await.with_context(|| format!("binding {bind}"))?;
    on_bound(addr);
    let state = QueryState {
        cf,
        pipeline: Arc::new(TokenPipeline::english()),
    };
    query::serve(listener, state, shutdown).await.context("query-api")?;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub report: ReplayReport,
    pub length_delta: u64,
}

/// Replays a corpus into a file-backed broker at `broker_dir`, creating the
/// topic when it does not exist.
pub fn cmd_replay(
    corpus: &TweetCorpus,
    broker_dir: &Path,
    config: &ReplayConfig,
    partitions: usize,
) -> Result<ReplayOutcome> {
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let broker = Broker::open(broker_dir).with_context(|| format!("broker: opening {}", broker_dir.display()))?;
    if broker.topic_info(&config.topic).is_err() {
        broker
            .create_topic(&config.topic, partitions)
            .context("broker: creating topic")?;
    }
    let before = broker.topic_len(&config.topic)?;
    let report = workload::replay(corpus, config, &broker, None).context("workload: replay")?;
    let after = broker.topic_len(&config.topic)?;
    Ok(ReplayOutcome {
        report,
        length_delta: after - before,
    })
}
