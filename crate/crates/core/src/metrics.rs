//! Received/processed event capture and the run measurements derived from it.
//!
//! Every pipeline thread calls [`Metrics::record`]; the fast path is one
//! atomic add plus a push onto a lock-free queue. Aggregation works on a
//! snapshot of the event log taken with [`Metrics::events`].
//!
//! Run summaries use drain latency: the span from the first received record
//! to the last processed one, minus the ingest window.

use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam::queue::SegQueue;
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;

const MS_PER_MIN: f64 = 60_000.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no processed events recorded")]
    NoProcessedEvents,
    #[error("bin width must be at least one second")]
    InvalidBin,
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("export i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    Received,
    Processed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Received => "received",
            EventKind::Processed => "processed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineEvent {
    pub kind: EventKind,
    /// Monotonic clock reading in ms.
    pub ts: u64,
    pub record_count: u64,
}

impl PipelineEvent {
    pub fn received(ts: u64, record_count: u64) -> Self {
        PipelineEvent {
            kind: EventKind::Received,
            ts,
            record_count,
        }
    }

    pub fn processed(ts: u64, record_count: u64) -> Self {
        PipelineEvent {
            kind: EventKind::Processed,
            ts,
            record_count,
        }
    }
}

struct Inner {
    clock: Clock,
    pending: SegQueue<PipelineEvent>,
    archive: Mutex<Vec<PipelineEvent>>,
    received: AtomicU64,
    processed: AtomicU64,
    latencies: SegQueue<u64>,
    max_source_lag_ms: AtomicU64,
}

/// Shared event sink. Clones refer to the same log.
#[derive(Clone)]
pub struct Metrics {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metrics")
            .field("received", &self.received_total())
            .field("processed", &self.processed_total())
            .finish()
    }
}

impl Metrics {
    pub fn new(clock: Clock) -> Self {
        Metrics {
            inner: Arc::new(Inner {
                clock,
                pending: SegQueue::new(),
                archive: Mutex::new(Vec::new()),
                received: AtomicU64::new(0),
                processed: AtomicU64::new(0),
                latencies: SegQueue::new(),
                max_source_lag_ms: AtomicU64::new(0),
            }),
        }
    }

    pub fn clock(&self) -> Clock {
        self.inner.clock
    }

    /// Appends an event. Events with a zero count are ignored.
    pub fn record(&self, event: PipelineEvent) {
        if event.record_count == 0 {
            return;
        }
        let counter = match event.kind {
            EventKind::Received => &self.inner.received,
            EventKind::Processed => &self.inner.processed,
        };
        counter.fetch_add(event.record_count, Ordering::Relaxed);
        self.inner.pending.push(event);
    }

    pub fn record_now(&self, kind: EventKind, record_count: u64) {
        let ts = self.inner.clock.now_ms();
        self.record(PipelineEvent {
            kind,
            ts,
            record_count,
        });
    }

    pub fn received_total(&self) -> u64 {
        self.inner.received.load(Ordering::Relaxed)
    }

    pub fn processed_total(&self) -> u64 {
        self.inner.processed.load(Ordering::Relaxed)
    }

    /// Snapshot of all events so far, ordered by timestamp.
    pub fn events(&self) -> Vec<PipelineEvent> {
        let mut archive = self.inner.archive.lock();
        while let Some(e) = self.inner.pending.pop() {
            archive.push(e);
        }
        archive.sort_by_key(|e| e.ts);
        archive.clone()
    }

    /// Per-record produce → processed latency, in ms.
    pub fn record_latency(&self, ms: u64) {
        self.inner.latencies.push(ms);
    }

    /// Age of the oldest record in a freshly drained batch.
    pub fn record_source_lag(&self, ms: u64) {
        self.inner.max_source_lag_ms.fetch_max(ms, Ordering::Relaxed);
    }

    pub fn max_source_lag_ms(&self) -> u64 {
        self.inner.max_source_lag_ms.load(Ordering::Relaxed)
    }

    /// Percentiles of per-record latency. This is an extra diagnostic; the
    /// run summary itself reports drain latency.
    pub fn latency_summary(&self) -> Option<LatencySummary> {
        let mut samples = Vec::with_capacity(self.inner.latencies.len());
        while let Some(s) = self.inner.latencies.pop() {
            samples.push(s);
        }
        for &s in &samples {
            self.inner.latencies.push(s);
        }
        LatencySummary::from_samples(samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub p99_ms: u64,
    pub max_ms: u64,
}

impl LatencySummary {
    pub fn from_samples(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        // nearest rank
        let rank = |p: f64| {
            let r = (p * samples.len() as f64).ceil() as usize;
            samples[r.clamp(1, samples.len()) - 1]
        };
        Some(LatencySummary {
            count: samples.len(),
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            p99_ms: rank(0.99),
            max_ms: *samples.last().unwrap(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeriesPoint {
    /// End of the bin, in seconds since the first event.
    pub t_s: u64,
    pub received_cum: u64,
    pub processed_cum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Series {
    pub bin_s: u64,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_s", "received_cum", "processed_cum"])?;
        for p in &self.points {
            w.write_record([
                p.t_s.to_string(),
                p.received_cum.to_string(),
                p.processed_cum.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cumulative received/processed counts per `bin_s`-second bin, measured
/// from the earliest event. Point `i` counts every event with
/// `ts < origin + (i + 1) * bin`.
pub fn aggregate_series(events: &[PipelineEvent], bin_s: u64) -> Result<Series, MetricsError> {
    if bin_s == 0 {
        return Err(MetricsError::InvalidBin);
    }
    let Some(origin) = events.iter().map(|e| e.ts).min() else {
        return Ok(Series {
            bin_s,
            points: Vec::new(),
        });
    };
    let bin_ms = bin_s * 1000;
    let last = events.iter().map(|e| e.ts).max().unwrap();
    let bins = ((last - origin) / bin_ms + 1) as usize;

    let mut received = vec![0u64; bins];
    let mut processed = vec![0u64; bins];
    for e in events {
        let b = ((e.ts - origin) / bin_ms) as usize;
        match e.kind {
            EventKind::Received => received[b] += e.record_count,
            EventKind::Processed => processed[b] += e.record_count,
        }
    }
    let mut points = Vec::with_capacity(bins);
    let (mut r, mut p) = (0, 0);
    for i in 0..bins {
        r += received[i];
        p += processed[i];
        points.push(SeriesPoint {
            t_s: (i as u64 + 1) * bin_s,
            received_cum: r,
            processed_cum: p,
        });
    }
    Ok(Series { bin_s, points })
}

/// One experiment row: processed count, processing span, drain latency and
/// speedup against a baseline processing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub tweets_processed: u64,
    pub processed_time_min: f64,
    pub latency_min: f64,
    pub speedup_pct: Option<f64>,
}

/// `100 * baseline / processed`.
pub fn speedup_pct(baseline_min: f64, processed_time_min: f64) -> f64 {
    100.0 * (baseline_min / processed_time_min)
}

/// Summarizes a run. The processing span runs from the first Received event
/// (or the first event of any kind when nothing was received) to the last
/// Processed event.
pub fn summarize(
    events: &[PipelineEvent],
    ingest_duration_min: f64,
    baseline_processed_time_min: Option<f64>,
) -> Result<ExperimentSummary, MetricsError> {
    let last_processed = events
        .iter()
        .filter(|e| e.kind == EventKind::Processed)
        .map(|e| e.ts)
        .max()
        .ok_or(MetricsError::NoProcessedEvents)?;
    let first_received = events
        .iter()
        .filter(|e| e.kind == EventKind::Received)
        .map(|e| e.ts)
        .min()
        .or_else(|| events.iter().map(|e| e.ts).min())
        .unwrap();
    let tweets_processed = events
        .iter()
        .filter(|e| e.kind == EventKind::Processed)
        .map(|e| e.record_count)
        .sum();

    let processed_time_min = last_processed.saturating_sub(first_received) as f64 / MS_PER_MIN;
    Ok(ExperimentSummary {
        tweets_processed,
        processed_time_min,
        latency_min: processed_time_min - ingest_duration_min,
        speedup_pct: baseline_processed_time_min.map(|b| speedup_pct(b, processed_time_min)),
    })
}

pub fn write_events_csv<W: io::Write>(events: &[PipelineEvent], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "ts_ms", "count"])?;
    for e in events {
        w.write_record([
            e.kind.as_str().to_string(),
            e.ts.to_string(),
            e.record_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the experiment table. A missing speedup renders as `-`. When
/// `incomplete` is set, a trailing `# incomplete: ...` line marks the table
/// as partial.
pub fn write_summary_csv<W: io::Write>(
    rows: &[(String, ExperimentSummary)],
    incomplete: Option<&str>,
    mut out: W,
) -> Result<(), MetricsError> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "experiment",
            "tweets_processed",
            "processed_time_m",
            "latency_m",
            "speedup_pct",
        ])?;
        for (name, s) in rows {
            w.write_record([
                name.clone(),
                s.tweets_processed.to_string(),
                format!("{:.3}", s.processed_time_min),
                format!("{:.3}", s.latency_min),
                s.speedup_pct.map_or_else(|| "-".to_string(), |v| format!("{v:.1}")),
            ])?;
        }
        w.flush()?;
    }
    if let Some(reason) = incomplete {
        writeln!(out, "# incomplete: {}", reason.replace('\n', " "))?;
    }
    Ok(())
}
