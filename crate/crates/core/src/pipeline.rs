//! Broker records to stored rows: the classification stage run inside each
//! micro-batch and the sink that writes its output to a column family.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::broker::Record;
use crate::classifier::{NaiveBayesModel, Sentiment, TokenPipeline};
use crate::clock::Clock;
use crate::store::{ColumnFamily, Row, StoreError};
use crate::stream::{Dataset, Sink, SinkError};

/// Row id of a record: its key when it has one, otherwise its position.
pub fn row_id(record: &Record) -> String {
    match &record.key {
        Some(key) => String::from_utf8_lossy(key).into_owned(),
        None => format!("p{}-o{}", record.partition, record.offset),
    }
}

/// Classification stage settings.
#[derive(Clone)]
pub struct Classify {
    pub model: Arc<NaiveBayesModel>,
    pub tokens: Arc<TokenPipeline>,
    pub clock: Clock,
    /// Compute budget per record. A partition task that finishes early
    /// waits out the rest of `records × service_time`, so a worker never
    /// processes faster than `1 / service_time` records per second
    /// regardless of the host. Zero disables the budget.
    pub service_time: Duration,
}

impl Classify {
    pub fn new(model: Arc<NaiveBayesModel>, tokens: Arc<TokenPipeline>, clock: Clock) -> Self {
        Classify {
            model,
            tokens,
            clock,
            service_time: Duration::ZERO,
        }
    }

    pub fn with_service_time(mut self, service_time: Duration) -> Self {
        self.service_time = service_time;
        self
    }

    pub fn classify_record(&self, record: &Record) -> Row {
        let text = String::from_utf8_lossy(&record.payload);
        let sentiment = self.model.classify(&text, &self.tokens).sentiment;
        Row::new(row_id(record), text, sentiment, self.clock.now_ms())
    }

    fn classify_partition(&self, records: Vec<Record>) -> Vec<Row> {
        let started = Instant::now();
        let rows: Vec<Row> = records.iter().map(|r| self.classify_record(r)).collect();
        let budget = self.service_time * rows.len() as u32;
        let spent = started.elapsed();
        if budget > spent {
            thread::sleep(budget - spent);
        }
        rows
    }

    /// Appends the classification stage to a batch dataset.
    pub fn apply(&self, batch: Dataset<Record>) -> Dataset<Row> {
        let this = self.clone();
        batch.map_partitions(move |_, records| this.classify_partition(records))
    }

    /// The stage as a pipeline function for the stream driver.
    pub fn into_pipeline(self) -> impl Fn(Dataset<Record>) -> Dataset<Row> + Send + 'static {
        move |batch| self.apply(batch)
    }
}

/// Writes each batch to a column family as one group commit.
pub struct StoreSink {
    cf: Arc<ColumnFamily>,
}

impl StoreSink {
    pub fn new(cf: Arc<ColumnFamily>) -> Self {
        StoreSink { cf }
    }
}

impl Sink<Row> for StoreSink {
    fn write_batch(&mut self, batch_id: u64, items: &[Row]) -> Result<(), SinkError> {
        self.cf
            .write_batch(items)
            .map_err(|e: StoreError| SinkError::new(format!("batch {batch_id}: {e}")))
    }
}

/// Stored rows without their timestamps, sorted; equal for two runs that
/// stored the same messages with the same labels.
pub fn row_fingerprints(cf: &ColumnFamily) -> Result<Vec<(String, String, Sentiment)>, StoreError> {
    let mut rows: Vec<_> = cf
        .read_all()?
        .into_values()
        .map(|r| (r.id, r.tweet_text, r.sentiment))
        .collect();
    rows.sort();
    Ok(rows)
}
