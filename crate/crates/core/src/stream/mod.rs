//! Immutable partitioned datasets and the micro-batch streaming driver.
//!
//! A [`Dataset`] is a lineage: a source plus an ordered list of
//! transformations. Transformations ([`Dataset::map`], [`Dataset::filter`],
//! [`Dataset::group_by_key`], ...) only extend the lineage. Actions
//! ([`Dataset::count`], [`Dataset::reduce`], [`Dataset::take`],
//! [`Dataset::collect`]) evaluate it on the context's [`WorkerGroup`], one
//! task per partition.
//!
//! Evaluation is staged: narrow transformations are fused into one
//! per-partition closure, while `group_by_key` and `cache` resolve their
//! input eagerly when an action plans the job.

mod driver;
mod worker;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::broker::BrokerError;

pub use driver::{run_streaming, BatchRange, MicroBatch, Sink, SinkError, StreamConfig, StreamHandle, StreamReport};
pub use worker::WorkerGroup;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("partition count must be at least 1, got {0}")]
    InvalidPartitionCount(usize),
    #[error("worker count must be at least 1, got {0}")]
    InvalidWorkerCount(usize),
    #[error("batch interval must be positive")]
    InvalidInterval,
    #[error("could not start worker pool: {0}")]
    WorkerPool(String),
    #[error("reduce over an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("sink rejected batch {batch_id} twice: {source}")]
    Sink { batch_id: u64, source: SinkError },
    #[error("source error: {0}")]
    Source(#[from] BrokerError),
    #[error("stream driver panicked")]
    DriverPanicked,
}

/// A user function failed (returned an error or panicked) while computing
/// one partition.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("task for partition {partition} failed: {message}")]
pub struct TaskError {
    pub partition: usize,
    pub message: String,
}

type Stage<T> = Arc<dyn Fn(usize) -> Result<Vec<T>, TaskError> + Send + Sync>;

trait Plan<T>: Send + Sync {
    fn num_partitions(&self) -> usize;
    fn lineage(&self, out: &mut Vec<&'static str>);
    fn cached(&self) -> bool {
        false
    }
    /// Resolves wide dependencies and returns a narrow per-partition compute.
    fn stage(&self, workers: &WorkerGroup) -> Result<Stage<T>, StreamError>;
}

/// Computes one partition, turning a panic into a [`TaskError`].
fn run_one<T>(stage: &Stage<T>, i: usize) -> Result<Vec<T>, TaskError> {
    catch_unwind(AssertUnwindSafe(|| stage(i))).unwrap_or_else(|panic| {
        let message = panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string());
        Err(TaskError {
            partition: i,
            message: format!("panicked: {message}"),
        })
    })
}

/// Evaluates every partition of a stage on the worker group.
fn run_stage<T: Send + 'static>(
    workers: &WorkerGroup,
    partitions: usize,
    stage: &Stage<T>,
) -> Result<Vec<Vec<T>>, TaskError> {
    workers
        .run(partitions, |i| run_one(stage, i))
        .into_iter()
        .collect()
}

struct SourcePlan<T> {
    partitions: Arc<Vec<Vec<T>>>,
}

impl<T: Clone + Send + Sync + 'static> Plan<T> for SourcePlan<T> {
    fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    fn lineage(&self, out: &mut Vec<&'static str>) {
        out.push("source");
    }

    fn stage(&self, _: &WorkerGroup) -> Result<Stage<T>, StreamError> {
        let data = Arc::clone(&self.partitions);
        Ok(Arc::new(move |i| Ok(data[i].clone())))
    }
}

type PartitionFn<S, T> = dyn Fn(usize, Vec<S>) -> Result<Vec<T>, String> + Send + Sync;

struct NarrowPlan<S, T> {
    name: &'static str,
    parent: Arc<dyn Plan<S>>,
    f: Arc<PartitionFn<S, T>>,
}

impl<S: 'static, T: 'static> Plan<T> for NarrowPlan<S, T> {
    fn num_partitions(&self) -> usize {
        self.parent.num_partitions()
    }

    fn lineage(&self, out: &mut Vec<&'static str>) {
        self.parent.lineage(out);
        out.push(self.name);
    }

    fn stage(&self, workers: &WorkerGroup) -> Result<Stage<T>, StreamError> {
        let parent = self.parent.stage(workers)?;
        let f = Arc::clone(&self.f);
        Ok(Arc::new(move |i| {
            let input = parent(i)?;
            f(i, input).map_err(|message| TaskError { partition: i, message })
        }))
    }
}

struct GroupByKeyPlan<K, V> {
    parent: Arc<dyn Plan<(K, V)>>,
    partitions: usize,
}

fn bucket_of<K: Hash>(key: &K, buckets: usize) -> usize {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    (h.finish() % buckets as u64) as usize
}

impl<K, V> Plan<(K, Vec<V>)> for GroupByKeyPlan<K, V>
where
    K: Hash + Eq + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    fn num_partitions(&self) -> usize {
        self.partitions
    }

    fn lineage(&self, out: &mut Vec<&'static str>) {
        self.parent.lineage(out);
        out.push("group_by_key");
    }

    fn stage(&self, workers: &WorkerGroup) -> Result<Stage<(K, Vec<V>)>, StreamError> {
        let n_out = self.partitions;
        let parent = self.parent.stage(workers)?;
        let bucketed: Stage<Vec<(K, V)>> = Arc::new(move |i| {
            let mut buckets: Vec<Vec<(K, V)>> = (0..n_out).map(|_| Vec::new()).collect();
            for (k, v) in parent(i)? {
                buckets[bucket_of(&k, n_out)].push((k, v));
            }
            Ok(buckets)
        });
        let map_output = run_stage(workers, self.parent.num_partitions(), &bucketed)?;

        let mut shuffled: Vec<Vec<(K, V)>> = (0..n_out).map(|_| Vec::new()).collect();
        for task_output in map_output {
            for (j, bucket) in task_output.into_iter().enumerate() {
                shuffled[j].extend(bucket);
            }
        }
        let inputs: Vec<Mutex<Vec<(K, V)>>> = shuffled.into_iter().map(Mutex::new).collect();
        let grouped = workers.run(n_out, |j| {
            let pairs = std::mem::take(&mut *inputs[j].lock());
            let mut slots: HashMap<K, usize> = HashMap::new();
            let mut out: Vec<(K, Vec<V>)> = Vec::new();
            for (k, v) in pairs {
                match slots.get(&k) {
                    Some(&slot) => out[slot].1.push(v),
                    None => {
                        slots.insert(k.clone(), out.len());
                        out.push((k, vec![v]));
                    }
                }
            }
            out
        });
        let data = Arc::new(grouped);
        Ok(Arc::new(move |j| Ok(data[j].clone())))
    }
}

struct CachePlan<T> {
    parent: Arc<dyn Plan<T>>,
    cached: Mutex<Option<Arc<Vec<Vec<T>>>>>,
    fills: AtomicU64,
}

impl<T: Clone + Send + Sync + 'static> Plan<T> for CachePlan<T> {
    fn num_partitions(&self) -> usize {
        self.parent.num_partitions()
    }

    fn lineage(&self, out: &mut Vec<&'static str>) {
        self.parent.lineage(out);
        out.push("cache");
    }

    fn cached(&self) -> bool {
        true
    }

    fn stage(&self, workers: &WorkerGroup) -> Result<Stage<T>, StreamError> {
        let mut slot = self.cached.lock();
        let data = match &*slot {
            Some(data) => Arc::clone(data),
            None => {
                let parent = self.parent.stage(workers)?;
                let parts = run_stage(workers, self.parent.num_partitions(), &parent)?;
                let data = Arc::new(parts);
                *slot = Some(Arc::clone(&data));
                self.fills.fetch_add(1, Ordering::Relaxed);
                data
            }
        };
        Ok(Arc::new(move |i| Ok(data[i].clone())))
    }
}

/// Execution context shared by every dataset built from it.
#[derive(Clone, Debug)]
pub struct StreamContext {
    workers: Arc<WorkerGroup>,
}

impl StreamContext {
    pub fn new(workers: usize) -> Result<Self, StreamError> {
        Ok(StreamContext {
            workers: Arc::new(WorkerGroup::new(workers)?),
        })
    }

    pub fn with_group(group: WorkerGroup) -> Self {
        StreamContext {
            workers: Arc::new(group),
        }
    }

    pub fn sequential() -> Self {
        Self::with_group(WorkerGroup::sequential())
    }

    pub fn workers(&self) -> &WorkerGroup {
        &self.workers
    }

    /// Distributes `records` round-robin over `partition_count` partitions.
    pub fn from_records<T>(&self, records: Vec<T>, partition_count: usize) -> Result<Dataset<T>, StreamError>
    where
        T: Clone + Send + Sync + 'static,
    {
        if partition_count == 0 {
            return Err(StreamError::InvalidPartitionCount(0));
        }
        let mut partitions: Vec<Vec<T>> = (0..partition_count)
            .map(|i| Vec::with_capacity(records.len() / partition_count + usize::from(i == 0)))
            .collect();
        for (i, r) in records.into_iter().enumerate() {
            partitions[i % partition_count].push(r);
        }
        self.from_partitions(partitions)
    }

    /// Uses the given partitioning as-is.
    pub fn from_partitions<T>(&self, partitions: Vec<Vec<T>>) -> Result<Dataset<T>, StreamError>
    where
        T: Clone + Send + Sync + 'static,
    {
        if partitions.is_empty() {
            return Err(StreamError::InvalidPartitionCount(0));
        }
        Ok(Dataset {
            ctx: self.clone(),
            plan: Arc::new(SourcePlan {
                partitions: Arc::new(partitions),
            }),
        })
    }
}

/// Immutable, lazily transformed, partitioned collection.
pub struct Dataset<T> {
    ctx: StreamContext,
    plan: Arc<dyn Plan<T>>,
}

impl<T> Clone for Dataset<T> {
    fn clone(&self) -> Self {
        Dataset {
            ctx: self.ctx.clone(),
            plan: Arc::clone(&self.plan),
        }
    }
}

impl<T> fmt::Debug for Dataset<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lineage = Vec::new();
        self.plan.lineage(&mut lineage);
        f.debug_struct("Dataset")
            .field("partitions", &self.plan.num_partitions())
            .field("lineage", &lineage)
            .finish()
    }
}

impl<T: Clone + Send + Sync + 'static> Dataset<T> {
    pub fn context(&self) -> &StreamContext {
        &self.ctx
    }

    pub fn num_partitions(&self) -> usize {
        self.plan.num_partitions()
    }

    /// The source followed by each applied transformation, oldest first.
    pub fn lineage(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        self.plan.lineage(&mut out);
        out
    }

    pub fn is_cached(&self) -> bool {
        self.plan.cached()
    }

    fn narrow<U, F>(&self, name: &'static str, f: F) -> Dataset<U>
    where
        F: Fn(usize, Vec<T>) -> Result<Vec<U>, String> + Send + Sync + 'static,
        U: 'static,
    {
        Dataset {
            ctx: self.ctx.clone(),
            plan: Arc::new(NarrowPlan {
                name,
                parent: Arc::clone(&self.plan),
                f: Arc::new(f),
            }),
        }
    }

    pub fn map<U, F>(&self, f: F) -> Dataset<U>
    where
        F: Fn(T) -> U + Send + Sync + 'static,
        U: Clone + Send + Sync + 'static,
    {
        self.narrow("map", move |_, xs| Ok(xs.into_iter().map(&f).collect()))
    }

    /// Like [`Dataset::map`], but a returned error fails the partition task.
    pub fn try_map<U, E, F>(&self, f: F) -> Dataset<U>
    where
        F: Fn(T) -> Result<U, E> + Send + Sync + 'static,
        E: fmt::Display,
        U: Clone + Send + Sync + 'static,
    {
        self.narrow("map", move |_, xs| {
            xs.into_iter().map(|x| f(x).map_err(|e| e.to_string())).collect()
        })
    }

    pub fn filter<P>(&self, predicate: P) -> Dataset<T>
    where
        P: Fn(&T) -> bool + Send + Sync + 'static,
    {
        self.narrow("filter", move |_, xs| {
            Ok(xs.into_iter().filter(|x| predicate(x)).collect())
        })
    }

    /// Transforms a whole partition at once. `f` receives the partition
    /// index and its elements.
    pub fn map_partitions<U, F>(&self, f: F) -> Dataset<U>
    where
        F: Fn(usize, Vec<T>) -> Vec<U> + Send + Sync + 'static,
        U: Clone + Send + Sync + 'static,
    {
        self.narrow("map_partitions", move |i, xs| Ok(f(i, xs)))
    }

    /// Materializes on first use and serves later actions from memory.
    pub fn cache(&self) -> Dataset<T> {
        if self.is_cached() {
            return self.clone();
        }
        Dataset {
            ctx: self.ctx.clone(),
            plan: Arc::new(CachePlan {
                parent: Arc::clone(&self.plan),
                cached: Mutex::new(None),
                fills: AtomicU64::new(0),
            }),
        }
    }

    pub fn collect_partitions(&self) -> Result<Vec<Vec<T>>, StreamError> {
        let stage = self.plan.stage(self.ctx.workers())?;
        Ok(run_stage(self.ctx.workers(), self.num_partitions(), &stage)?)
    }

    /// All elements, in partition order.
    pub fn collect(&self) -> Result<Vec<T>, StreamError> {
        Ok(self.collect_partitions()?.into_iter().flatten().collect())
    }

    pub fn count(&self) -> Result<usize, StreamError> {
        let stage = self.plan.stage(self.ctx.workers())?;
        let counting: Stage<usize> = Arc::new(move |i| Ok(vec![stage(i)?.len()]));
        Ok(run_stage(self.ctx.workers(), self.num_partitions(), &counting)?
            .into_iter()
            .flatten()
            .sum())
    }

    /// Folds every element with `op`. `op` must be associative and
    /// commutative: partitions are combined in no particular order.
    pub fn reduce<F>(&self, op: F) -> Result<T, StreamError>
    where
        F: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let stage = self.plan.stage(self.ctx.workers())?;
        let op = Arc::new(op);
        let local_op = Arc::clone(&op);
        let partials: Stage<T> = Arc::new(move |i| Ok(stage(i)?.into_iter().reduce(|a, b| local_op(a, b)).into_iter().collect()));
        run_stage(self.ctx.workers(), self.num_partitions(), &partials)?
            .into_iter()
            .flatten()
            .reduce(|a, b| op(a, b))
            .ok_or(StreamError::EmptyDataset)
    }

    /// First `n` elements in partition order. Partitions are evaluated one at
    /// a time and evaluation stops once `n` elements are available.
    pub fn take(&self, n: usize) -> Result<Vec<T>, StreamError> {
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return Ok(out);
        }
        let stage = self.plan.stage(self.ctx.workers())?;
        for i in 0..self.num_partitions() {
            for x in run_one(&stage, i)? {
                out.push(x);
                if out.len() == n {
                    return Ok(out);
                }
            }
        }
        Ok(out)
    }
}

impl<K, V> Dataset<(K, V)>
where
    K: Hash + Eq + Clone + Send + Sync + 'static,
    V: Clone + Send + Sync + 'static,
{
    /// Groups values by key. Equal keys are hashed into the same output
    /// partition; the order of values within a group is unspecified.
    pub fn group_by_key(&self) -> Dataset<(K, Vec<V>)> {
        self.group_by_key_into(self.num_partitions())
    }

    pub fn group_by_key_into(&self, partitions: usize) -> Dataset<(K, Vec<V>)> {
        Dataset {
            ctx: self.ctx.clone(),
            plan: Arc::new(GroupByKeyPlan {
                parent: Arc::clone(&self.plan),
                partitions: partitions.max(1),
            }),
        }
    }
}
