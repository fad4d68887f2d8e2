//! Embedded publish/subscribe log broker.
//!
//! A [`Broker`] owns named topics, each split into a fixed number of
//! partitions. A partition is an append-only log whose offsets are dense and
//! assigned by the broker at append time. Consumers pull ranges by offset and
//! record their progress with [`Broker::commit_offset`], which gives
//! at-least-once delivery across restarts.
//!
//! A broker is either purely in-memory or backed by a directory:
//!
//! ```text
//! <dir>/<topic>/partition-<i>.log   one segment per partition
//! <dir>/offsets.tsv                 committed consumer offsets
//! ```
//!
//! Segment records are `[u32 LE payload_len][u32 LE key_len][key][payload]`
//! with `key_len == 0xFFFF_FFFF` meaning "no key". Offsets are implicit by
//! position. The offsets file holds `group<TAB>topic<TAB>partition<TAB>offset`
//! lines; the last line for a given position wins.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::clock::Clock;
use crate::hash::fnv1a64;

const NO_KEY: u32 = u32::MAX;
const OFFSETS_FILE: &str = "offsets.tsv";

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("partition count must be at least 1, got {0}")]
    InvalidPartitionCount(usize),
    #[error("invalid topic name {0:?}")]
    InvalidTopicName(String),
    #[error("invalid consumer group id {0:?}")]
    InvalidGroupId(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` has no partition {partition}")]
    UnknownPartition { topic: String, partition: u32 },
    #[error("consume batch size must be positive")]
    InvalidMax,
    #[error("offset {offset} is beyond the end of {topic}/{partition} (length {log_len})")]
    OffsetBeyondLog {
        topic: String,
        partition: u32,
        offset: u64,
        log_len: u64,
    },
    #[error("commit of {requested} for {group}/{topic}/{partition} is below the committed offset {committed}")]
    NonMonotonicCommit {
        group: String,
        topic: String,
        partition: u32,
        committed: u64,
        requested: u64,
    },
    #[error("corrupt broker file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("broker i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, BrokerError>;

/// One message stored in a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub partition: u32,
    pub offset: u64,
    /// Broker clock reading at append time, in ms. Records reloaded from a
    /// segment file carry `0` since the segment format holds no timestamps.
    pub produce_ts: u64,
    pub key: Option<Vec<u8>>,
    pub payload: Vec<u8>,
}

/// Where a produced record landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Produced {
    pub partition: u32,
    pub offset: u64,
    pub produce_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicInfo {
    pub name: String,
    pub partition_count: u32,
}

/// A consumer group's committed position on one partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumerPosition {
    pub group_id: String,
    pub topic: String,
    pub partition: u32,
    pub committed_offset: u64,
}

struct PartitionLog {
    records: Vec<Record>,
    segment: Option<File>,
}

struct Partition {
    index: u32,
    log: RwLock<PartitionLog>,
}

struct Topic {
    name: String,
    partitions: Vec<Partition>,
    next_round_robin: AtomicU64,
}

impl Topic {
    fn partition(&self, index: u32) -> Result<&Partition> {
        self.partitions
            .get(index as usize)
            .ok_or_else(|| BrokerError::UnknownPartition {
                topic: self.name.clone(),
                partition: index,
            })
    }

    fn choose_partition(&self, key: Option<&[u8]>) -> u32 {
        let n = self.partitions.len() as u64;
        match key {
            Some(k) => (fnv1a64(k) % n) as u32,
            None => (self.next_round_robin.fetch_add(1, Ordering::Relaxed) % n) as u32,
        }
    }
}

type CommitKey = (String, String, u32);

struct Inner {
    dir: Option<PathBuf>,
    clock: Clock,
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    commits: Mutex<CommitTable>,
}

struct CommitTable {
    offsets: HashMap<CommitKey, u64>,
    file: Option<File>,
}

/// Handle to a broker. Cloning is cheap and every clone refers to the same
/// topics.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("dir", &self.inner.dir)
            .field("topics", &self.inner.topics.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Partition for `key` under the broker's fixed key hash (64-bit FNV-1a
/// modulo the partition count).
pub fn partition_for_key(key: &[u8], partition_count: u32) -> u32 {
    (fnv1a64(key) % partition_count as u64) as u32
}

impl Broker {
    pub fn in_memory() -> Self {
        Self::in_memory_with_clock(Clock::new())
    }

    pub fn in_memory_with_clock(clock: Clock) -> Self {
        Broker {
            inner: Arc::new(Inner {
                dir: None,
                clock,
                topics: RwLock::new(BTreeMap::new()),
                commits: Mutex::new(CommitTable {
                    offsets: HashMap::new(),
                    file: None,
                }),
            }),
        }
    }

    /// Opens (or creates) a directory-backed broker, reloading every topic
    /// segment and committed offset found there.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_clock(dir, Clock::new())
    }

    pub fn open_with_clock(dir: impl AsRef<Path>, clock: Clock) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;

        let mut topics = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let topic = load_topic(&entry.path(), &name)?;
            topics.insert(name, Arc::new(topic));
        }

        let offsets_path = dir.join(OFFSETS_FILE);
        let offsets = if offsets_path.exists() {
            load_offsets(&offsets_path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&offsets_path)?;

        Ok(Broker {
            inner: Arc::new(Inner {
                dir: Some(dir),
                clock,
                topics: RwLock::new(topics),
                commits: Mutex::new(CommitTable {
                    offsets,
                    file: Some(file),
                }),
            }),
        })
    }

    pub fn clock(&self) -> Clock {
        self.inner.clock
    }

    pub fn create_topic(&self, name: &str, partition_count: usize) -> Result<TopicInfo> {
        validate_topic_name(name)?;
        if partition_count < 1 || partition_count > u32::MAX as usize {
            return Err(BrokerError::InvalidPartitionCount(partition_count));
        }
        let mut topics = self.inner.topics.write();
        if topics.contains_key(name) {
            return Err(BrokerError::DuplicateTopic(name.to_string()));
        }

        let mut partitions = Vec::with_capacity(partition_count);
        let topic_dir = self.inner.dir.as_ref().map(|d| d.join(name));
        if let Some(td) = &topic_dir {
            fs::create_dir_all(td)?;
        }
        for index in 0..partition_count as u32 {
            let segment = match &topic_dir {
                Some(td) => Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(segment_path(td, index))?,
                ),
                None => None,
            };
            partitions.push(Partition {
                index,
                log: RwLock::new(PartitionLog {
                    records: Vec::new(),
                    segment,
                }),
            });
        }
        topics.insert(
            name.to_string(),
            Arc::new(Topic {
                name: name.to_string(),
                partitions,
                next_round_robin: AtomicU64::new(0),
            }),
        );
        Ok(TopicInfo {
            name: name.to_string(),
            partition_count: partition_count as u32,
        })
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>> {
        self.inner
            .topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    pub fn topic_info(&self, name: &str) -> Result<TopicInfo> {
        let topic = self.topic(name)?;
        Ok(TopicInfo {
            name: topic.name.clone(),
            partition_count: topic.partitions.len() as u32,
        })
    }

    pub fn topics(&self) -> Vec<TopicInfo> {
        self.inner
            .topics
            .read()
            .values()
            .map(|t| TopicInfo {
                name: t.name.clone(),
                partition_count: t.partitions.len() as u32,
            })
            .collect()
    }

    /// Appends a record. Keyed records go to `hash(key) % partitions`;
    /// keyless records rotate round-robin.
    pub fn produce(&self, topic: &str, key: Option<&[u8]>, payload: &[u8]) -> Result<Produced> {
        let topic = self.topic(topic)?;
        let partition = &topic.partitions[topic.choose_partition(key) as usize];

        let mut log = partition.log.write();
        let offset = log.records.len() as u64;
        if let Some(segment) = log.segment.as_mut() {
            segment.write_all(&encode_segment_record(key, payload))?;
        }
        let produce_ts = self.inner.clock.now_ms();
        log.records.push(Record {
            partition: partition.index,
            offset,
            produce_ts,
            key: key.map(<[u8]>::to_vec),
            payload: payload.to_vec(),
        });
        Ok(Produced {
            partition: partition.index,
            offset,
            produce_ts,
        })
    }

    /// Returns up to `max` records starting at `from_offset`. Never blocks on
    /// new data; an offset at or past the end yields an empty list.
    pub fn consume(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max: usize,
    ) -> Result<Vec<Record>> {
        if max == 0 {
            return Err(BrokerError::InvalidMax);
        }
        let topic = self.topic(topic)?;
        let log = topic.partition(partition)?.log.read();
        let len = log.records.len() as u64;
        if from_offset >= len {
            return Ok(Vec::new());
        }
        let end = from_offset.saturating_add(max as u64).min(len);
        Ok(log.records[from_offset as usize..end as usize].to_vec())
    }

    pub fn partition_len(&self, topic: &str, partition: u32) -> Result<u64> {
        let topic = self.topic(topic)?;
        let len = topic.partition(partition)?.log.read().records.len() as u64;
        Ok(len)
    }

    pub fn partition_lengths(&self, topic: &str) -> Result<Vec<u64>> {
        let topic = self.topic(topic)?;
        Ok(topic
            .partitions
            .iter()
            .map(|p| p.log.read().records.len() as u64)
            .collect())
    }

    /// Sum of all partition lengths of `topic`.
    pub fn topic_len(&self, topic: &str) -> Result<u64> {
        Ok(self.partition_lengths(topic)?.iter().sum())
    }

    pub fn commit_offset(&self, position: &ConsumerPosition) -> Result<()> {
        validate_group_id(&position.group_id)?;
        let log_len = self.partition_len(&position.topic, position.partition)?;
        if position.committed_offset > log_len {
            return Err(BrokerError::OffsetBeyondLog {
                topic: position.topic.clone(),
                partition: position.partition,
                offset: position.committed_offset,
                log_len,
            });
        }

        let key = (
            position.group_id.clone(),
            position.topic.clone(),
            position.partition,
        );
        let mut commits = self.inner.commits.lock();
        if let Some(&committed) = commits.offsets.get(&key) {
            if position.committed_offset < committed {
                return Err(BrokerError::NonMonotonicCommit {
                    group: position.group_id.clone(),
                    topic: position.topic.clone(),
                    partition: position.partition,
                    committed,
                    requested: position.committed_offset,
                });
            }
        }
        if let Some(file) = commits.file.as_mut() {
            writeln!(
                file,
                "{}\t{}\t{}\t{}",
                position.group_id, position.topic, position.partition, position.committed_offset
            )?;
        }
        commits.offsets.insert(key, position.committed_offset);
        Ok(())
    }

    pub fn fetch_committed(&self, group_id: &str, topic: &str, partition: u32) -> Option<u64> {
        self.inner
            .commits
            .lock()
            .offsets
            .get(&(group_id.to_string(), topic.to_string(), partition))
            .copied()
    }
}

fn validate_topic_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name
            .chars()
            .any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        Err(BrokerError::InvalidTopicName(name.to_string()))
    } else {
        Ok(())
    }
}

fn validate_group_id(group: &str) -> Result<()> {
    if group.is_empty() || group.chars().any(char::is_control) {
        Err(BrokerError::InvalidGroupId(group.to_string()))
    } else {
        Ok(())
    }
}

fn segment_path(topic_dir: &Path, index: u32) -> PathBuf {
    topic_dir.join(format!("partition-{index}.log"))
}

fn encode_segment_record(key: Option<&[u8]>, payload: &[u8]) -> Vec<u8> {
    let key_len = key.map_or(0, <[u8]>::len);
    let mut buf = Vec::with_capacity(8 + key_len + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    match key {
        Some(k) => buf.extend_from_slice(&(k.len() as u32).to_le_bytes()),
        None => buf.extend_from_slice(&NO_KEY.to_le_bytes()),
    }
    if let Some(k) = key {
        buf.extend_from_slice(k);
    }
    buf.extend_from_slice(payload);
    buf
}

/// Parses a segment. Returns the records and the byte length of the valid
/// prefix; anything after it is a torn tail.
fn decode_segment(bytes: &[u8], partition: u32) -> (Vec<Record>, usize) {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= 8 {
        let payload_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let key_len_raw = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let key_len = if key_len_raw == NO_KEY { 0 } else { key_len_raw as usize };
        let body = pos + 8;
        if bytes.len() - body < key_len + payload_len {
            break;
        }
        let key = (key_len_raw != NO_KEY).then(|| bytes[body..body + key_len].to_vec());
        let payload = bytes[body + key_len..body + key_len + payload_len].to_vec();
        records.push(Record {
            partition,
            offset: records.len() as u64,
            produce_ts: 0,
            key,
            payload,
        });
        pos = body + key_len + payload_len;
    }
    (records, pos)
}

fn load_topic(topic_dir: &Path, name: &str) -> Result<Topic> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(topic_dir)? {
        let file_name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(idx) = file_name
            .strip_prefix("partition-")
            .and_then(|s| s.strip_suffix(".log"))
            .and_then(|s| s.parse::<u32>().ok())
        {
            indices.push(idx);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() || indices.iter().enumerate().any(|(i, &idx)| i as u32 != idx) {
        return Err(BrokerError::Corrupt {
            path: topic_dir.to_path_buf(),
            reason: format!("partition segments are not dense: {indices:?}"),
        });
    }

    let mut partitions = Vec::with_capacity(indices.len());
    for index in indices {
        let path = segment_path(topic_dir, index);
        let mut bytes = Vec::new();
        File::open(&path)?.read_to_end(&mut bytes)?;
        let (records, valid) = decode_segment(&bytes, index);
        let segment = OpenOptions::new().append(true).open(&path)?;
        if valid < bytes.len() {
            log::warn!(
                "discarding {} torn bytes at the end of {}",
                bytes.len() - valid,
                path.display()
            );
            segment.set_len(valid as u64)?;
        }
        partitions.push(Partition {
            index,
            log: RwLock::new(PartitionLog {
                records,
                segment: Some(segment),
            }),
        });
    }
    let total: u64 = partitions
        .iter()
        .map(|p| p.log.read().records.len() as u64)
        .sum();
    Ok(Topic {
        name: name.to_string(),
        partitions,
        next_round_robin: AtomicU64::new(total),
    })
}

fn load_offsets(path: &Path) -> Result<HashMap<CommitKey, u64>> {
    let mut offsets = HashMap::new();
    let reader = BufReader::new(File::open(path)?);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields.as_slice() {
            [group, topic, partition, offset] => partition
                .parse::<u32>()
                .ok()
                .zip(offset.parse::<u64>().ok())
                .map(|(p, o)| ((group.to_string(), topic.to_string(), p), o)),
            _ => None,
        };
        match parsed {
            Some((key, offset)) => {
                offsets.insert(key, offset);
            }
            None => {
                return Err(BrokerError::Corrupt {
                    path: path.to_path_buf(),
                    reason: format!("malformed line {}", lineno + 1),
                })
            }
        }
    }
    Ok(offsets)
}
