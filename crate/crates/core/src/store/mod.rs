//! Single-node log-structured store.
//!
//! Writes go to a CRC-framed commit log, then into a sorted memtable. A full
//! memtable is flushed to an immutable SSTable generation with an index and
//! a bloom filter, and the log is truncated. Reads consult the memtable and
//! then tables newest first. Tables are merged by compaction, keeping the
//! latest version of each id.
//!
//! On disk a column family lives in `<root>/<keyspace>/<cf>/`.

pub mod bloom;
mod codec;
mod commit_log;
mod failpoint;
mod sstable;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::classifier::Sentiment;

pub use bloom::BloomFilter;
pub use commit_log::ReplayOutcome;
pub use failpoint::{CrashPlan, CrashPoint};
pub use sstable::SsTableInfo;

use commit_log::{encode_records, CommitLog};
use failpoint::Failpoints;
use sstable::{parse_table_name, sync_dir, table_path, SsTable, WritePoints};

pub const COMMIT_LOG_FILE: &str = "commit.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid row: {0}")]
    InvalidRow(String),
    #[error("invalid name {0:?}: use letters, digits, '_' or '-'")]
    InvalidName(String),
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
    #[error("memtable is empty")]
    EmptyMemtable,
    #[error("compaction needs at least 2 tables, found {0}")]
    NotEnoughTables(usize),
    #[error("commit log corrupt at offset {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error("table {path} corrupt: {reason}")]
    CorruptTable { path: PathBuf, reason: String },
    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
    #[error("column family is unusable after a crash; reopen it")]
    Crashed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One classified message.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Row {
    pub id: String,
    pub tweet_text: String,
    pub sentiment: Sentiment,
    /// Milliseconds.
    pub processed_at: u64,
}

impl Row {
    pub fn new(id: impl Into<String>, tweet_text: impl Into<String>, sentiment: Sentiment, processed_at: u64) -> Row {
        Row {
            id: id.into(),
            tweet_text: tweet_text.into(),
            sentiment,
            processed_at,
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.id.is_empty() {
            return Err(StoreError::InvalidRow("id is empty".into()));
        }
        if self.id.len() > u32::MAX as usize || self.tweet_text.len() > u32::MAX as usize {
            return Err(StoreError::InvalidRow("field too long".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreOptions {
    /// Rows held in memory before a flush.
    pub memtable_limit: usize,
    /// fsync the commit log before acknowledging a write.
    pub sync_writes: bool,
    /// Compact automatically once this many tables exist; 0 disables.
    pub compaction_trigger: usize,
    pub bloom_bits_per_key: u64,
    pub bloom_hashes: u32,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            memtable_limit: 10_000,
            sync_writes: true,
            compaction_trigger: 4,
            bloom_bits_per_key: bloom::DEFAULT_BITS_PER_KEY,
            bloom_hashes: bloom::DEFAULT_HASHES,
        }
    }
}

impl StoreOptions {
    fn validate(&self) -> Result<(), StoreError> {
        if self.memtable_limit == 0 {
            return Err(StoreError::InvalidOptions("memtable_limit must be positive"));
        }
        if self.bloom_bits_per_key == 0 || self.bloom_hashes == 0 {
            return Err(StoreError::InvalidOptions("bloom parameters must be positive"));
        }
        if self.compaction_trigger == 1 {
            return Err(StoreError::InvalidOptions("compaction_trigger must be 0 or at least 2"));
        }
        Ok(())
    }
}

/// What recovery found when a column family was opened.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub tables: usize,
    pub replayed_rows: usize,
    pub discarded_tail_bytes: u64,
    pub removed_files: Vec<PathBuf>,
}

struct State {
    memtable: BTreeMap<String, Row>,
    /// Ascending generation.
    tables: Vec<Arc<SsTable>>,
}

struct Snapshot {
    memtable: Vec<Row>,
    tables: Vec<Arc<SsTable>>,
}

pub struct ColumnFamily {
    keyspace: String,
    name: String,
    dir: PathBuf,
    opts: StoreOptions,
    writer: Mutex<CommitLog>,
    state: RwLock<State>,
    compaction: Mutex<()>,
    next_gen: AtomicU64,
    faults: Failpoints,
    poisoned: AtomicBool,
    recovery: RecoveryReport,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ColumnFamily {
    /// Opens (or creates) the column family stored in `dir`, recovering from
    /// an unclean shutdown if needed.
    pub fn recover(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<ColumnFamily, StoreError> {
        let dir = dir.as_ref();
        let component = |p: Option<&Path>| {
            p.and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        let name = component(Some(dir));
        let keyspace = component(dir.parent());
        Self::open_in(dir.to_path_buf(), keyspace, name, opts)
    }

    fn open_in(dir: PathBuf, keyspace: String, name: String, opts: StoreOptions) -> Result<ColumnFamily, StoreError> {
        opts.validate()?;
        fs::create_dir_all(&dir)?;
        let mut report = RecoveryReport::default();

        let mut sst_gens = Vec::new();
        let mut sidecars = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let file_name = entry.file_name().to_string_lossy().into_owned();
            if file_name.ends_with(sstable::TMP_SUFFIX) {
                fs::remove_file(entry.path())?;
                report.removed_files.push(entry.path());
                continue;
            }
            match parse_table_name(&file_name) {
                Some((generation, sstable::SST_EXT)) => sst_gens.push(generation),
                Some((generation, sstable::IDX_EXT | sstable::BLOOM_EXT)) => sidecars.push((generation, entry.path())),
                _ => {}
            }
        }
        sst_gens.sort_unstable();
        for (generation, path) in sidecars {
            if sst_gens.binary_search(&generation).is_err() {
                fs::remove_file(&path)?;
                report.removed_files.push(path);
            }
        }

        let mut tables = Vec::with_capacity(sst_gens.len());
        for &generation in &sst_gens {
            tables.push(Arc::new(SsTable::open(
                &dir,
                generation,
                opts.bloom_bits_per_key,
                opts.bloom_hashes,
            )?));
        }
        if !report.removed_files.is_empty() {
            sync_dir(&dir)?;
        }

        let (log, rows, outcome) = CommitLog::open(&dir.join(COMMIT_LOG_FILE))?;
        let mut memtable = BTreeMap::new();
        for row in rows {
            memtable.insert(row.id.clone(), row);
        }
        report.tables = tables.len();
        report.replayed_rows = outcome.rows;
        report.discarded_tail_bytes = outcome.discarded_tail_bytes;

        let cf = ColumnFamily {
            keyspace,
            name,
            next_gen: AtomicU64::new(sst_gens.last().map_or(1, |g| g + 1)),
            dir,
            opts,
            writer: Mutex::new(log),
            state: RwLock::new(State { memtable, tables }),
            compaction: Mutex::new(()),
            faults: Failpoints::default(),
            poisoned: AtomicBool::new(false),
            recovery: report,
        };
        if cf.memtable_len() >= cf.opts.memtable_limit {
            let mut log = cf.writer.lock();
            cf.flush_locked(&mut log)?;
        }
        Ok(cf)
    }

    pub fn keyspace(&self) -> &str {
        &self.keyspace
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn options(&self) -> &StoreOptions {
        &self.opts
    }

    pub fn recovery_report(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn memtable_len(&self) -> usize {
        self.state.read().memtable.len()
    }

    pub fn sstables(&self) -> Vec<SsTableInfo> {
        self.state.read().tables.iter().map(|t| t.info()).collect()
    }

    /// Bloom filter of the table with this generation.
    pub fn bloom_filter(&self, generation: u64) -> Option<BloomFilter> {
        self.state
            .read()
            .tables
            .iter()
            .find(|t| t.generation() == generation)
            .map(|t| t.bloom().clone())
    }

    /// Arms (or with `None` disarms) crash injection and resets arrival
    /// counters.
    pub fn set_crash_plan(&self, plan: Option<CrashPlan>) {
        self.faults.arm(plan);
    }

    /// How often `point` has been reached since the plan was last set.
    pub fn crash_point_arrivals(&self, point: CrashPoint) -> u64 {
        self.faults.arrivals(point)
    }

    pub fn crashed_at(&self) -> Option<CrashPoint> {
        self.faults.crashed()
    }

    fn check_open(&self) -> Result<(), StoreError> {
        if self.poisoned.load(Ordering::Acquire) {
            Err(StoreError::Crashed)
        } else {
            Ok(())
        }
    }

    fn guard<T>(&self, result: Result<T, StoreError>) -> Result<T, StoreError> {
        if let Err(StoreError::InjectedCrash(_)) = &result {
            self.poisoned.store(true, Ordering::Release);
        }
        result
    }

    /// Durably appends `row`, then makes it visible.
    pub fn write(&self, row: Row) -> Result<(), StoreError> {
        self.write_batch(std::slice::from_ref(&row))
    }

    /// Writes `rows` in order. Rows are logged and synced in groups sized to
    /// the free memtable space, so a batch costs one sync per flush it
    /// triggers rather than one per row. On error, rows of groups that were
    /// already synced stay written.
    pub fn write_batch(&self, rows: &[Row]) -> Result<(), StoreError> {
        self.check_open()?;
        for row in rows {
            row.validate()?;
        }
        let result = self.write_batch_inner(rows);
        let result = self.guard(result);
        result?;
        self.maybe_compact()
    }

    fn write_batch_inner(&self, rows: &[Row]) -> Result<(), StoreError> {
        let mut log = self.writer.lock();
        let mut rest = rows;
        while !rest.is_empty() {
            let free = self.opts.memtable_limit.saturating_sub(self.memtable_len()).max(1);
            let (chunk, tail) = rest.split_at(free.min(rest.len()));
            rest = tail;
            self.append_logged(&mut log, chunk)?;
            {
                let mut state = self.state.write();
                for row in chunk {
                    state.memtable.insert(row.id.clone(), row.clone());
                }
            }
            if self.memtable_len() >= self.opts.memtable_limit {
                self.flush_locked(&mut log)?;
            }
        }
        Ok(())
    }

    fn append_logged(&self, log: &mut CommitLog, rows: &[Row]) -> Result<(), StoreError> {
        let bytes = encode_records(rows);
        if self.faults.should_crash(CrashPoint::LogAppendTorn) {
            log.append(&bytes[..bytes.len() / 2])?;
            return Err(StoreError::InjectedCrash(CrashPoint::LogAppendTorn));
        }
        let before = log.len()?;
        let appended = log.append(&bytes).and_then(|()| {
            if self.faults.should_crash(CrashPoint::LogAppendUnsynced) {
                return Ok(false);
            }
            if self.opts.sync_writes {
                log.sync()?;
            }
            Ok(true)
        });
        match appended {
            Ok(true) => {}
            Ok(false) => return Err(StoreError::InjectedCrash(CrashPoint::LogAppendUnsynced)),
            Err(e) => {
                if let Err(undo) = log.truncate_to(before) {
                    log::error!("could not undo failed append to {}: {undo}", log.path().display());
                    self.poisoned.store(true, Ordering::Release);
                }
                return Err(e.into());
            }
        }
        self.faults.check(CrashPoint::LogSyncedUnacked)
    }

    /// Writes the memtable out as a new table and truncates the log.
    pub fn flush(&self) -> Result<SsTableInfo, StoreError> {
        self.check_open()?;
        let result = {
            let mut log = self.writer.lock();
            self.flush_locked(&mut log)
        };
        let info = self.guard(result)?;
        self.maybe_compact()?;
        Ok(info)
    }

    fn flush_locked(&self, log: &mut CommitLog) -> Result<SsTableInfo, StoreError> {
        let rows: Vec<Row> = self.state.read().memtable.values().cloned().collect();
        if rows.is_empty() {
            return Err(StoreError::EmptyMemtable);
        }
        let generation = self.next_gen.fetch_add(1, Ordering::SeqCst);
        let table = SsTable::write(
            &self.dir,
            generation,
            &rows,
            self.opts.bloom_bits_per_key,
            self.opts.bloom_hashes,
            &self.faults,
            WritePoints {
                torn: CrashPoint::FlushTableTorn,
                before_rename: CrashPoint::FlushBeforeRename,
            },
        )?;
        self.faults.check(CrashPoint::FlushBeforeLogTruncate)?;
        // If truncation fails the table stays on disk without being used;
        // its rows are still in the log and memtable, so nothing is lost.
        log.truncate()?;
        let info = table.info();
        let mut state = self.state.write();
        state.memtable.clear();
        state.tables.push(Arc::new(table));
        Ok(info)
    }

    fn maybe_compact(&self) -> Result<(), StoreError> {
        let trigger = self.opts.compaction_trigger;
        if trigger == 0 || self.state.read().tables.len() < trigger {
            return Ok(());
        }
        match self.compact() {
            Ok(_) | Err(StoreError::NotEnoughTables(_)) => Ok(()),
            Err(e @ (StoreError::InjectedCrash(_) | StoreError::Crashed)) => Err(e),
            Err(e) => {
                log::warn!("background compaction of {}/{} failed: {e}", self.keyspace, self.name);
                Ok(())
            }
        }
    }

    /// Merges every table into one, keeping the newest version of each id.
    pub fn compact(&self) -> Result<SsTableInfo, StoreError> {
        self.check_open()?;
        let result = self.compact_inner();
        self.guard(result)
    }

    fn compact_inner(&self) -> Result<SsTableInfo, StoreError> {
        let _one_at_a_time = self.compaction.lock();
        // Holding the writer lock means no flush is midway, so every table
        // flushed after this point gets a higher generation than the output.
        let (inputs, generation) = {
            let _w = self.writer.lock();
            let inputs = self.state.read().tables.clone();
            if inputs.len() < 2 {
                return Err(StoreError::NotEnoughTables(inputs.len()));
            }
            (inputs, self.next_gen.fetch_add(1, Ordering::SeqCst))
        };

        let mut merged = BTreeMap::new();
        for table in &inputs {
            for row in table.rows()? {
                merged.insert(row.id.clone(), row);
            }
        }
        let rows: Vec<Row> = merged.into_values().collect();
        let table = SsTable::write(
            &self.dir,
            generation,
            &rows,
            self.opts.bloom_bits_per_key,
            self.opts.bloom_hashes,
            &self.faults,
            WritePoints {
                torn: CrashPoint::CompactTableTorn,
                before_rename: CrashPoint::CompactBeforeRename,
            },
        )?;
        let info = table.info();
        {
            let _w = self.writer.lock();
            let mut state = self.state.write();
            let merged_gens: Vec<u64> = inputs.iter().map(|t| t.generation()).collect();
            state.tables.retain(|t| !merged_gens.contains(&t.generation()));
            state.tables.push(Arc::new(table));
            state.tables.sort_by_key(|t| t.generation());
        }

        self.faults.check(CrashPoint::CompactBeforeDelete)?;
        for (i, old) in inputs.iter().enumerate() {
            fs::remove_file(table_path(&self.dir, old.generation(), sstable::SST_EXT))?;
            for ext in [sstable::IDX_EXT, sstable::BLOOM_EXT] {
                match fs::remove_file(table_path(&self.dir, old.generation(), ext)) {
                    Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e.into()),
                    _ => {}
                }
            }
            if i + 1 < inputs.len() {
                self.faults.check(CrashPoint::CompactMidDelete)?;
            }
        }
        sync_dir(&self.dir)?;
        Ok(info)
    }

    fn snapshot(&self) -> Snapshot {
        let state = self.state.read();
        Snapshot {
            memtable: state.memtable.values().cloned().collect(),
            tables: state.tables.clone(),
        }
    }

    pub fn read(&self, id: &str) -> Result<Option<Row>, StoreError> {
        self.check_open()?;
        let tables = {
            let state = self.state.read();
            if let Some(row) = state.memtable.get(id) {
                return Ok(Some(row.clone()));
            }
            state.tables.clone()
        };
        for table in tables.iter().rev() {
            if let Some(row) = table.get(id)? {
                return Ok(Some(row));
            }
        }
        Ok(None)
    }

    /// Latest version of every row, keyed by id.
    pub fn read_all(&self) -> Result<BTreeMap<String, Row>, StoreError> {
        self.check_open()?;
        let snap = self.snapshot();
        let mut all = BTreeMap::new();
        for table in &snap.tables {
            for row in table.rows()? {
                all.insert(row.id.clone(), row);
            }
        }
        for row in snap.memtable {
            all.insert(row.id.clone(), row);
        }
        Ok(all)
    }

    /// The `n` rows with the greatest `processed_at`, newest first; ties go
    /// to the greater id.
    pub fn scan_latest(&self, n: usize) -> Result<Vec<Row>, StoreError> {
        let mut rows: Vec<Row> = self.read_all()?.into_values().collect();
        rows.sort_by(|a, b| b.processed_at.cmp(&a.processed_at).then_with(|| b.id.cmp(&a.id)));
        rows.truncate(n);
        Ok(rows)
    }
}

/// A directory of keyspaces, each holding column families.
pub struct Store {
    root: PathBuf,
    families: Mutex<HashMap<(String, String), Arc<ColumnFamily>>>,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Store {
            root,
            families: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Opens a column family, recovering it on first use. Later calls for
    /// the same name return the open instance and ignore `opts`.
    pub fn column_family(&self, keyspace: &str, name: &str, opts: StoreOptions) -> Result<Arc<ColumnFamily>, StoreError> {
        for n in [keyspace, name] {
            if !valid_name(n) {
                return Err(StoreError::InvalidName(n.to_string()));
            }
        }
        let mut families = self.families.lock();
        let key = (keyspace.to_string(), name.to_string());
        if let Some(cf) = families.get(&key) {
            return Ok(Arc::clone(cf));
        }
        let cf = Arc::new(ColumnFamily::open_in(
            self.root.join(keyspace).join(name),
            keyspace.to_string(),
            name.to_string(),
            opts,
        )?);
        families.insert(key, Arc::clone(&cf));
        Ok(cf)
    }

    /// Column families opened through this handle.
    pub fn open_families(&self) -> Vec<(String, String)> {
        let mut names: Vec<_> = self.families.lock().keys().cloned().collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(limit: usize) -> StoreOptions {
        StoreOptions {
            memtable_limit: limit,
            compaction_trigger: 0,
            ..StoreOptions::default()
        }
    }

    fn row(id: &str, ts: u64) -> Row {
        Row::new(id, format!("text of {id}"), Sentiment::Positive, ts)
    }

    fn sst_files(dir: &Path) -> usize {
        fs::read_dir(dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".sst"))
            .count()
    }

    #[test]
    fn read_your_writes_and_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        cf.write(row("a", 1)).unwrap();
        assert_eq!(cf.read("a").unwrap(), Some(row("a", 1)));
        cf.write(Row::new("a", "later", Sentiment::Negative, 2)).unwrap();
        assert_eq!(cf.read("a").unwrap().unwrap().tweet_text, "later");
        assert_eq!(cf.read("never").unwrap(), None);
    }

    #[test]
    fn limit_reached_flushes_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        for i in 0..100 {
            cf.write(row(&format!("id{i:03}"), i)).unwrap();
        }
        assert_eq!(sst_files(cf.dir()), 1);
        assert_eq!(cf.memtable_len(), 0);
        assert_eq!(fs::metadata(cf.dir().join(COMMIT_LOG_FILE)).unwrap().len(), 0);
    }

    #[test]
    fn flush_builds_sorted_table_with_bloom() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        for id in ["c", "a", "b"] {
            cf.write(row(id, 1)).unwrap();
        }
        let info = cf.flush().unwrap();
        assert_eq!(info.entries, 3);
        assert_eq!((info.min_key.as_str(), info.max_key.as_str()), ("a", "c"));
        let bloom = cf.bloom_filter(info.generation).unwrap();
        for id in ["a", "b", "c"] {
            assert!(bloom.contains(id.as_bytes()));
        }
        assert_eq!(cf.memtable_len(), 0);
        assert_eq!(cf.read("b").unwrap(), Some(row("b", 1)));
        assert!(matches!(cf.flush(), Err(StoreError::EmptyMemtable)));
    }

    #[test]
    fn memtable_shadows_tables() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        cf.write(row("k", 1)).unwrap();
        cf.flush().unwrap();
        cf.write(row("k", 2)).unwrap();
        assert_eq!(cf.read("k").unwrap().unwrap().processed_at, 2);
    }

    #[test]
    fn disjoint_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        let mut n = 0;
        for size in [2, 3, 4] {
            for _ in 0..size {
                cf.write(row(&format!("k{n}"), n)).unwrap();
                n += 1;
            }
            cf.flush().unwrap();
        }
        let info = cf.compact().unwrap();
        assert_eq!(info.entries, 9);
        assert_eq!(cf.sstables().len(), 1);
        assert_eq!(sst_files(cf.dir()), 1);
    }

    #[test]
    fn compaction_keeps_newer_generation() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        cf.write(row("k", 1)).unwrap();
        cf.flush().unwrap();
        cf.write(row("k", 2)).unwrap();
        cf.flush().unwrap();
        cf.compact().unwrap();
        assert_eq!(cf.read("k").unwrap().unwrap().processed_at, 2);
        assert!(matches!(cf.compact(), Err(StoreError::NotEnoughTables(1))));
    }

    #[test]
    fn auto_compaction_at_trigger() {
        let dir = tempfile::tempdir().unwrap();
        let o = StoreOptions {
            memtable_limit: 10,
            compaction_trigger: 4,
            ..StoreOptions::default()
        };
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), o).unwrap();
        for i in 0..40 {
            cf.write(row(&format!("{i:02}"), i)).unwrap();
        }
        assert_eq!(cf.sstables().len(), 1);
        assert_eq!(cf.read_all().unwrap().len(), 40);
    }

    #[test]
    fn scan_latest_orders_newest_first() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(3)).unwrap();
        for (id, ts) in [("a", 5), ("b", 1), ("c", 9), ("d", 5), ("e", 2)] {
            cf.write(row(id, ts)).unwrap();
        }
        let ids: Vec<String> = cf.scan_latest(200).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["c", "d", "a", "e", "b"]);
        assert_eq!(cf.scan_latest(1).unwrap()[0].id, "c");
    }

    #[test]
    fn clean_reopen_and_unflushed_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ks/cf");
        let before = {
            let cf = ColumnFamily::recover(&path, opts(7)).unwrap();
            for i in 0..20 {
                cf.write(row(&format!("r{i}"), i)).unwrap();
            }
            cf.read_all().unwrap()
        };
        let cf = ColumnFamily::recover(&path, opts(7)).unwrap();
        assert_eq!(cf.read_all().unwrap(), before);
        assert_eq!(cf.recovery_report().replayed_rows, 20 % 7);
        assert_eq!(cf.keyspace(), "ks");
        assert_eq!(cf.name(), "cf");
    }

    #[test]
    fn torn_log_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ks/cf");
        {
            let cf = ColumnFamily::recover(&path, opts(100)).unwrap();
            for i in 0..5 {
                cf.write(row(&format!("r{i}"), i)).unwrap();
            }
        }
        let log = path.join(COMMIT_LOG_FILE);
        let len = fs::metadata(&log).unwrap().len();
        fs::OpenOptions::new().write(true).open(&log).unwrap().set_len(len - 3).unwrap();
        let cf = ColumnFamily::recover(&path, opts(100)).unwrap();
        let all = cf.read_all().unwrap();
        assert_eq!(all.len(), 4);
        assert!(!all.contains_key("r4"));
        assert!(cf.recovery_report().discarded_tail_bytes > 0);
        cf.write(row("r5", 5)).unwrap();
        drop(cf);
        assert_eq!(ColumnFamily::recover(&path, opts(100)).unwrap().read_all().unwrap().len(), 5);
    }

    #[test]
    fn corruption_before_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ks/cf");
        {
            let cf = ColumnFamily::recover(&path, opts(100)).unwrap();
            cf.write(row("a", 1)).unwrap();
            cf.write(row("b", 2)).unwrap();
        }
        let log = path.join(COMMIT_LOG_FILE);
        let mut bytes = fs::read(&log).unwrap();
        bytes[14] ^= 0xff;
        fs::write(&log, bytes).unwrap();
        assert!(matches!(
            ColumnFamily::recover(&path, opts(100)),
            Err(StoreError::CorruptLog { offset: 0, .. })
        ));
    }

    #[test]
    fn missing_sidecars_are_rebuilt_and_orphans_removed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ks/cf");
        {
            let cf = ColumnFamily::recover(&path, opts(100)).unwrap();
            cf.write(row("a", 1)).unwrap();
            cf.write(row("b", 2)).unwrap();
            cf.flush().unwrap();
        }
        fs::remove_file(path.join("gen-1.idx")).unwrap();
        fs::remove_file(path.join("gen-1.bloom")).unwrap();
        fs::write(path.join("gen-9.idx"), b"junk").unwrap();
        fs::write(path.join("gen-2.sst.tmp"), b"junk").unwrap();
        let cf = ColumnFamily::recover(&path, opts(100)).unwrap();
        assert_eq!(cf.read("b").unwrap(), Some(row("b", 2)));
        assert_eq!(cf.recovery_report().removed_files.len(), 2);
        assert!(!path.join("gen-9.idx").exists());
        cf.write(row("c", 3)).unwrap();
        assert_eq!(cf.flush().unwrap().generation, 2);
    }

    #[test]
    fn injected_crash_poisons_family() {
        let dir = tempfile::tempdir().unwrap();
        let cf = ColumnFamily::recover(dir.path().join("ks/cf"), opts(100)).unwrap();
        cf.set_crash_plan(Some(CrashPlan {
            point: CrashPoint::LogSyncedUnacked,
            occurrence: 2,
        }));
        cf.write(row("a", 1)).unwrap();
        assert!(matches!(cf.write(row("b", 1)), Err(StoreError::InjectedCrash(_))));
        assert!(matches!(cf.read("a"), Err(StoreError::Crashed)));
        assert_eq!(cf.crashed_at(), Some(CrashPoint::LogSyncedUnacked));
    }

    #[test]
    fn store_validates_names_and_reuses_handles() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(
            store.column_family("bad/name", "cf", StoreOptions::default()),
            Err(StoreError::InvalidName(_))
        ));
        let a = store.column_family("twitter", "tweets", StoreOptions::default()).unwrap();
        let b = store.column_family("twitter", "tweets", StoreOptions::default()).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.dir(), dir.path().join("twitter/tweets"));
        assert!(matches!(a.write(row("", 1)), Err(StoreError::InvalidRow(_))));
    }
}
