//! Real-time text analytics pipeline.
//!
//! The crate hosts every stage of an ingest → classify → persist → query
//! pipeline inside one process:
//!
//! - [`broker`]: partitioned, append-only publish/subscribe log.
//! - [`stream`]: immutable partitioned datasets with lazy transformations and
//!   a micro-batch driver that pulls from the broker.
//! - [`classifier`]: tweet preprocessing and multinomial Naive Bayes.
//! - [`store`]: commit log → memtable → SSTable storage with bloom filters
//!   and compaction.
//! - [`workload`]: corpus loading, synthetic corpora and fixed-rate replay.
//! - [`metrics`]: received/processed event capture and run summaries.
//! - [`query`]: keyword statistics over the newest stored rows, plus the HTTP
//!   surface that serves them.
//! - [`pipeline`]: the glue that turns broker records into stored rows.

pub mod broker;
pub mod classifier;
pub mod clock;
mod hash;
pub mod metrics;
pub mod pipeline;
pub mod query;
pub mod store;
pub mod stream;
pub mod workload;

pub use broker::{Broker, BrokerError, ConsumerPosition, Produced, Record};
pub use classifier::{LabeledDoc, NaiveBayesModel, Sentiment, TokenPipeline};
pub use clock::Clock;
pub use metrics::{EventKind, ExperimentSummary, Metrics, PipelineEvent};
pub use store::{ColumnFamily, Row, StoreOptions};
pub use stream::{Dataset, StreamContext, WorkerGroup};
pub use workload::{ReplayConfig, ReplayReport, TweetCorpus};
