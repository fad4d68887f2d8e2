//! Micro-batch driver: polls a broker topic every interval, turns the newly
//! arrived records into a [`Dataset`], runs the user pipeline on the worker
//! group and hands the results to a [`Sink`].

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{Dataset, StreamContext, StreamError};
use crate::broker::{Broker, ConsumerPosition, Record};
use crate::metrics::{EventKind, Metrics, PipelineEvent};

const STOP_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct SinkError(pub String);

impl SinkError {
    pub fn new(message: impl Into<String>) -> Self {
        SinkError(message.into())
    }
}

/// Offsets `[start, end)` of one partition drained into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchRange {
    pub partition: u32,
    pub start: u64,
    pub end: u64,
}

/// One interval's worth of records.
#[derive(Debug, Clone)]
pub struct MicroBatch {
    pub batch_id: u64,
    pub interval_ms: u64,
    pub records: Vec<Record>,
    pub drained: Vec<BatchRange>,
}

/// Receives pipeline output, one call per batch.
pub trait Sink<O>: Send {
    fn write_batch(&mut self, batch_id: u64, items: &[O]) -> Result<(), SinkError>;
}

impl<O, F> Sink<O> for F
where
    F: FnMut(u64, &[O]) -> Result<(), SinkError> + Send,
{
    fn write_batch(&mut self, batch_id: u64, items: &[O]) -> Result<(), SinkError> {
        self(batch_id, items)
    }
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub topic: String,
    pub group_id: String,
    pub interval_ms: u64,
    pub workers: usize,
    /// Partitions of each batch dataset. Batch records are spread over them
    /// round-robin.
    pub batch_partitions: usize,
}

impl StreamConfig {
    pub fn new(topic: impl Into<String>) -> Self {
        StreamConfig {
            topic: topic.into(),
            group_id: "stream".to_string(),
            interval_ms: 1_000,
            workers: 1,
            batch_partitions: 4,
        }
    }
}

/// Final account of a stream run.
#[derive(Debug, Clone, Default)]
pub struct StreamReport {
    pub batches: u64,
    pub records_processed: u64,
    pub items_written: u64,
    /// Drained offset ranges of every non-empty batch, in batch order.
    pub coverage: Vec<(u64, Vec<BatchRange>)>,
}

struct Progress {
    stop: AtomicBool,
    processed: AtomicU64,
    batches: AtomicU64,
}

/// Running stream. Dropping the handle without calling
/// [`StreamHandle::stop`] detaches the driver thread after signalling it to
/// stop.
pub struct StreamHandle {
    progress: Arc<Progress>,
    thread: Option<JoinHandle<Result<StreamReport, StreamError>>>,
}

impl StreamHandle {
    pub fn records_processed(&self) -> u64 {
        self.progress.processed.load(Ordering::Acquire)
    }

    pub fn batches(&self) -> u64 {
        self.progress.batches.load(Ordering::Acquire)
    }

    /// True once the driver exited, either after a stop or a failure.
    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Asks the driver to drain whatever has arrived, process it and exit.
    pub fn stop(mut self) -> Result<StreamReport, StreamError> {
        self.progress.stop.store(true, Ordering::Release);
        let thread = self.thread.take().expect("driver joined twice");
        thread.join().map_err(|_| StreamError::DriverPanicked)?
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        self.progress.stop.store(true, Ordering::Release);
    }
}

/// Starts a driver thread that consumes `config.topic` in micro-batches.
///
/// Each batch drains every partition from the group's committed offsets to
/// the current log end, runs `pipeline` over the batch dataset, writes the
/// output to `sink` (retrying once) and then commits the drained offsets.
/// With `metrics`, a Processed event is recorded per batch together with
/// per-record latency and source lag.
pub fn run_streaming<O, P, S>(
    broker: &Broker,
    config: StreamConfig,
    pipeline: P,
    sink: S,
    metrics: Option<Metrics>,
) -> Result<StreamHandle, StreamError>
where
    O: Clone + Send + Sync + 'static,
    P: Fn(Dataset<Record>) -> Dataset<O> + Send + 'static,
    S: Sink<O> + 'static,
{
    let info = broker.topic_info(&config.topic)?;
    if config.interval_ms == 0 {
        return Err(StreamError::InvalidInterval);
    }
    if config.batch_partitions == 0 {
        return Err(StreamError::InvalidPartitionCount(0));
    }
    let ctx = StreamContext::new(config.workers)?;

    let positions: Vec<u64> = (0..info.partition_count)
        .map(|p| broker.fetch_committed(&config.group_id, &config.topic, p).unwrap_or(0))
        .collect();
    let progress = Arc::new(Progress {
        stop: AtomicBool::new(false),
        processed: AtomicU64::new(0),
        batches: AtomicU64::new(0),
    });

    let driver = Driver {
        broker: broker.clone(),
        ctx,
        config,
        positions,
        progress: Arc::clone(&progress),
        metrics,
        next_batch: 0,
        report: StreamReport::default(),
    };
    let thread = thread::Builder::new()
        .name("stream-driver".into())
        .spawn(move || driver.run(pipeline, sink))
        .map_err(|e| StreamError::WorkerPool(e.to_string()))?;
    Ok(StreamHandle {
        progress,
        thread: Some(thread),
    })
}

struct Driver {
    broker: Broker,
    ctx: StreamContext,
    config: StreamConfig,
    positions: Vec<u64>,
    progress: Arc<Progress>,
    metrics: Option<Metrics>,
    next_batch: u64,
    report: StreamReport,
}

impl Driver {
    fn run<O, P, S>(mut self, pipeline: P, mut sink: S) -> Result<StreamReport, StreamError>
    where
        O: Clone + Send + Sync + 'static,
        P: Fn(Dataset<Record>) -> Dataset<O>,
        S: Sink<O>,
    {
        let interval = Duration::from_millis(self.config.interval_ms);
        let mut next_tick = Instant::now() + interval;
        loop {
            let stopping = self.wait_until(next_tick);
            next_tick += interval;

            let batch = self.drain()?;
            if !batch.records.is_empty() {
                self.process(batch, &pipeline, &mut sink)?;
            }
            if stopping {
                return Ok(self.report);
            }
        }
    }

    /// Sleeps until `deadline` or a stop request; returns whether stopping.
    fn wait_until(&self, deadline: Instant) -> bool {
        loop {
            if self.progress.stop.load(Ordering::Acquire) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            thread::sleep((deadline - now).min(STOP_POLL));
        }
    }

    fn drain(&mut self) -> Result<MicroBatch, StreamError> {
        let topic = &self.config.topic;
        let ends = self.broker.partition_lengths(topic)?;
        let mut records = Vec::new();
        let mut drained = Vec::new();
        for (p, &end) in ends.iter().enumerate() {
            let start = self.positions[p];
            if end <= start {
                continue;
            }
            let got = self
                .broker
                .consume(topic, p as u32, start, (end - start) as usize)?;
            debug_assert_eq!(got.len() as u64, end - start);
            records.extend(got);
            drained.push(BatchRange {
                partition: p as u32,
                start,
                end,
            });
        }
        let batch_id = self.next_batch;
        self.next_batch += 1;
        Ok(MicroBatch {
            batch_id,
            interval_ms: self.config.interval_ms,
            records,
            drained,
        })
    }

    fn process<O, P, S>(&mut self, batch: MicroBatch, pipeline: &P, sink: &mut S) -> Result<(), StreamError>
    where
        O: Clone + Send + Sync + 'static,
        P: Fn(Dataset<Record>) -> Dataset<O>,
        S: Sink<O>,
    {
        let n = batch.records.len() as u64;
        if let Some(m) = &self.metrics {
            let now = m.clock().now_ms();
            let oldest = batch.records.iter().map(|r| r.produce_ts).min().unwrap_or(now);
            m.record_source_lag(now.saturating_sub(oldest));
        }
        let produce_ts: Vec<u64> = if self.metrics.is_some() {
            batch.records.iter().map(|r| r.produce_ts).collect()
        } else {
            Vec::new()
        };

        let dataset = self
            .ctx
            .from_records(batch.records, self.config.batch_partitions)?;
        let output = pipeline(dataset).collect()?;

        if let Err(first) = sink.write_batch(batch.batch_id, &output) {
            log::warn!("sink rejected batch {}: {first}; retrying once", batch.batch_id);
            sink.write_batch(batch.batch_id, &output)
                .map_err(|source| StreamError::Sink {
                    batch_id: batch.batch_id,
                    source,
                })?;
        }

        if let Some(m) = &self.metrics {
            let now = m.clock().now_ms();
            m.record(PipelineEvent {
                kind: EventKind::Processed,
                ts: now,
                record_count: n,
            });
            for ts in produce_ts {
                m.record_latency(now.saturating_sub(ts));
            }
        }

        for range in &batch.drained {
            self.broker.commit_offset(&ConsumerPosition {
                group_id: self.config.group_id.clone(),
                topic: self.config.topic.clone(),
                partition: range.partition,
                committed_offset: range.end,
            })?;
            self.positions[range.partition as usize] = range.end;
        }

        self.report.batches += 1;
        self.report.records_processed += n;
        self.report.items_written += output.len() as u64;
        self.report.coverage.push((batch.batch_id, batch.drained));
        self.progress.processed.fetch_add(n, Ordering::AcqRel);
        self.progress.batches.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }
}
