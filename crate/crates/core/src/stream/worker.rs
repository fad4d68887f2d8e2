//! Fixed-size worker group that executes partition tasks.
//!
//! With the `parallel` feature each group owns a rayon pool with exactly
//! `worker_count` threads. Without it, or for [`WorkerGroup::sequential`],
//! the tasks run one after another on the calling thread.

use std::sync::atomic::{AtomicU64, Ordering};

use super::StreamError;

pub struct WorkerGroup {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    tasks_run: AtomicU64,
}

impl std::fmt::Debug for WorkerGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerGroup")
            .field("workers", &self.workers)
            .field("parallel", &self.is_parallel())
            .finish()
    }
}

impl WorkerGroup {
    /// A group of `workers` parallel workers (sequential when the crate is
    /// built without `parallel`).
    pub fn new(workers: usize) -> Result<Self, StreamError> {
        if workers == 0 {
            return Err(StreamError::InvalidWorkerCount(workers));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .thread_name(|i| format!("stream-worker-{i}"))
                .build()
                .map_err(|e| StreamError::WorkerPool(e.to_string()))?;
            Ok(WorkerGroup {
                workers,
                pool: Some(pool),
                tasks_run: AtomicU64::new(0),
            })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(WorkerGroup {
                workers,
                tasks_run: AtomicU64::new(0),
            })
        }
    }

    /// Runs every task inline on the caller.
    pub fn sequential() -> Self {
        WorkerGroup {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
            tasks_run: AtomicU64::new(0),
        }
    }

    pub fn worker_count(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Total tasks executed by this group.
    pub fn tasks_executed(&self) -> u64 {
        self.tasks_run.load(Ordering::Relaxed)
    }

    /// Index of the current worker thread, if called from inside a task on a
    /// parallel group.
    pub fn current_worker() -> Option<usize> {
        #[cfg(feature = "parallel")]
        {
            rayon::current_thread_index()
        }
        #[cfg(not(feature = "parallel"))]
        {
            None
        }
    }

    /// Executes `task(0..tasks)` once each and returns results in task order.
    pub fn run<R, F>(&self, tasks: usize, task: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        let counted = |i| {
            self.tasks_run.fetch_add(1, Ordering::Relaxed);
            task(i)
        };
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..tasks).into_par_iter().with_max_len(1).map(counted).collect());
        }
        (0..tasks).map(counted).collect()
    }
}
