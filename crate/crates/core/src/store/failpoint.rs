//! Crash injection for durability testing.
//!
//! A [`CrashPlan`] names a point in the write path and which arrival at that
//! point should "kill" the process. On that arrival the operation stops
//! where it is (torn points first write a prefix of the pending bytes),
//! returns [`StoreError::InjectedCrash`] and the column family refuses all
//! further work, leaving its files exactly as a killed process would.

use std::collections::HashMap;

use parking_lot::Mutex;

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CrashPoint {
    /// Part of a commit-log append reached the file.
    LogAppendTorn,
    /// Whole append written, not yet synced.
    LogAppendUnsynced,
    /// Append synced, memtable not yet updated and write not acknowledged.
    LogSyncedUnacked,
    /// Part of a flushed table file written.
    FlushTableTorn,
    /// Flushed table files complete but not yet renamed into place.
    FlushBeforeRename,
    /// Flushed table live, commit log not yet truncated.
    FlushBeforeLogTruncate,
    /// Part of a compacted table file written.
    CompactTableTorn,
    /// Compacted table complete but not yet renamed into place.
    CompactBeforeRename,
    /// Compacted table live, inputs not yet deleted.
    CompactBeforeDelete,
    /// Some compaction inputs deleted.
    CompactMidDelete,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 10] = [
        CrashPoint::LogAppendTorn,
        CrashPoint::LogAppendUnsynced,
        CrashPoint::LogSyncedUnacked,
        CrashPoint::FlushTableTorn,
        CrashPoint::FlushBeforeRename,
        CrashPoint::FlushBeforeLogTruncate,
        CrashPoint::CompactTableTorn,
        CrashPoint::CompactBeforeRename,
        CrashPoint::CompactBeforeDelete,
        CrashPoint::CompactMidDelete,
    ];

    pub fn is_flush(self) -> bool {
        matches!(
            self,
            CrashPoint::FlushTableTorn | CrashPoint::FlushBeforeRename | CrashPoint::FlushBeforeLogTruncate
        )
    }

    pub fn is_compaction(self) -> bool {
        matches!(
            self,
            CrashPoint::CompactTableTorn
                | CrashPoint::CompactBeforeRename
                | CrashPoint::CompactBeforeDelete
                | CrashPoint::CompactMidDelete
        )
    }
}

/// Crash on the `occurrence`-th (1-based) arrival at `point`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrashPlan {
    pub point: CrashPoint,
    pub occurrence: u64,
}

#[derive(Default)]
pub(crate) struct Failpoints {
    state: Mutex<FailState>,
}

#[derive(Default)]
struct FailState {
    plan: Option<CrashPlan>,
    arrivals: HashMap<CrashPoint, u64>,
    crashed: Option<CrashPoint>,
}

impl Failpoints {
    pub(crate) fn arm(&self, plan: Option<CrashPlan>) {
        let mut s = self.state.lock();
        s.plan = plan;
        s.arrivals.clear();
    }

    pub(crate) fn arrivals(&self, point: CrashPoint) -> u64 {
        self.state.lock().arrivals.get(&point).copied().unwrap_or(0)
    }

    pub(crate) fn crashed(&self) -> Option<CrashPoint> {
        self.state.lock().crashed
    }

    /// Records an arrival; true when this arrival is the planned crash.
    pub(crate) fn should_crash(&self, point: CrashPoint) -> bool {
        let mut s = self.state.lock();
        let n = s.arrivals.entry(point).or_insert(0);
        *n += 1;
        let n = *n;
        if s.plan == Some(CrashPlan { point, occurrence: n }) {
            s.crashed = Some(point);
            true
        } else {
            false
        }
    }

    pub(crate) fn check(&self, point: CrashPoint) -> Result<(), StoreError> {
        if self.should_crash(point) {
            Err(StoreError::InjectedCrash(point))
        } else {
            Ok(())
        }
    }
}
