//! Immutable sorted table files.
//!
//! A generation `N` consists of three files:
//!
//! - `gen-N.sst`: rows sorted by id, each in the shared row encoding.
//! - `gen-N.idx`: `[u32 id_len][id][u64 offset]` per row, same order.
//! - `gen-N.bloom`: bloom filter over the ids.
//!
//! Files are written under a `.tmp` suffix, synced, and renamed with the
//! `.sst` last, so a generation exists exactly when its `.sst` does.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::bloom::BloomFilter;
use super::codec::{decode_row, encode_row, Decode};
use super::failpoint::{CrashPoint, Failpoints};
use super::{Row, StoreError};

pub(crate) const SST_EXT: &str = "sst";
pub(crate) const IDX_EXT: &str = "idx";
pub(crate) const BLOOM_EXT: &str = "bloom";
pub(crate) const TMP_SUFFIX: &str = ".tmp";

pub(crate) fn table_path(dir: &Path, generation: u64, ext: &str) -> PathBuf {
    dir.join(format!("gen-{generation}.{ext}"))
}

/// Parses `gen-<N>.<ext>`.
pub(crate) fn parse_table_name(name: &str) -> Option<(u64, &str)> {
    let rest = name.strip_prefix("gen-")?;
    let (n, ext) = rest.split_once('.')?;
    Some((n.parse().ok()?, ext))
}

/// Public description of a live table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsTableInfo {
    pub generation: u64,
    pub path: PathBuf,
    pub entries: usize,
    pub min_key: String,
    pub max_key: String,
}

pub(crate) struct SsTable {
    generation: u64,
    path: PathBuf,
    file: File,
    data_len: u64,
    /// Sorted `(id, offset)` pairs.
    index: Vec<(String, u64)>,
    bloom: BloomFilter,
}

/// Which crash points a table write passes through.
pub(crate) struct WritePoints {
    pub torn: CrashPoint,
    pub before_rename: CrashPoint,
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .truncate(true)
        .write(true)
        .open(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn tmp(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(TMP_SUFFIX);
    PathBuf::from(s)
}

pub(crate) fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

impl SsTable {
    /// Writes `rows` (sorted by id, unique) as generation `generation`.
    pub(crate) fn write(
        dir: &Path,
        generation: u64,
        rows: &[Row],
        bloom_bits_per_key: u64,
        bloom_hashes: u32,
        faults: &Failpoints,
        points: WritePoints,
    ) -> Result<SsTable, StoreError> {
        debug_assert!(rows.windows(2).all(|w| w[0].id < w[1].id));
        let mut data = Vec::new();
        let mut index_bytes = Vec::new();
        let mut index = Vec::with_capacity(rows.len());
        let mut bloom = BloomFilter::with_capacity(rows.len(), bloom_bits_per_key, bloom_hashes);
        for row in rows {
            let offset = data.len() as u64;
            encode_row(row, &mut data);
            index_bytes.extend_from_slice(&(row.id.len() as u32).to_le_bytes());
            index_bytes.extend_from_slice(row.id.as_bytes());
            index_bytes.extend_from_slice(&offset.to_le_bytes());
            index.push((row.id.clone(), offset));
            bloom.insert(row.id.as_bytes());
        }

        let sst = table_path(dir, generation, SST_EXT);
        let idx = table_path(dir, generation, IDX_EXT);
        let blm = table_path(dir, generation, BLOOM_EXT);

        if faults.should_crash(points.torn) {
            write_synced(&tmp(&sst), &data[..data.len() / 2])?;
            return Err(StoreError::InjectedCrash(points.torn));
        }
        let written = (|| -> io::Result<()> {
            write_synced(&tmp(&sst), &data)?;
            write_synced(&tmp(&idx), &index_bytes)?;
            write_synced(&tmp(&blm), &bloom.to_bytes())
        })();
        if let Err(e) = written {
            for p in [&sst, &idx, &blm] {
                let _ = fs::remove_file(tmp(p));
            }
            return Err(e.into());
        }
        faults.check(points.before_rename)?;
        fs::rename(tmp(&idx), &idx)?;
        fs::rename(tmp(&blm), &blm)?;
        fs::rename(tmp(&sst), &sst)?;
        sync_dir(dir)?;

        Ok(SsTable {
            generation,
            file: File::open(&sst)?,
            path: sst,
            data_len: data.len() as u64,
            index,
            bloom,
        })
    }

    /// Opens an existing generation, rebuilding the index or bloom filter
    /// from the data file when either is missing or unreadable.
    pub(crate) fn open(dir: &Path, generation: u64, bloom_bits_per_key: u64, bloom_hashes: u32) -> Result<SsTable, StoreError> {
        let path = table_path(dir, generation, SST_EXT);
        let file = File::open(&path)?;
        let data_len = file.metadata()?.len();

        let index = fs::read(table_path(dir, generation, IDX_EXT))
            .ok()
            .and_then(|b| parse_index(&b, data_len));
        let bloom = fs::read(table_path(dir, generation, BLOOM_EXT))
            .ok()
            .and_then(|b| BloomFilter::from_bytes(&b));

        let mut table = SsTable {
            generation,
            path,
            file,
            data_len,
            index: index.clone().unwrap_or_default(),
            bloom: bloom.clone().unwrap_or_else(|| BloomFilter::with_bits(64, 1)),
        };
        if index.is_none() || bloom.is_none() {
            log::warn!("rebuilding index and bloom filter for {}", table.path.display());
            let rows = table.rows()?;
            let mut offset = 0u64;
            table.index = rows
                .iter()
                .map(|r| {
                    let entry = (r.id.clone(), offset);
                    offset += super::codec::encoded_len(r) as u64;
                    entry
                })
                .collect();
            let mut bloom = BloomFilter::with_capacity(rows.len(), bloom_bits_per_key, bloom_hashes);
            for r in &rows {
                bloom.insert(r.id.as_bytes());
            }
            table.bloom = bloom;
        }
        Ok(table)
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bloom(&self) -> &BloomFilter {
        &self.bloom
    }

    pub(crate) fn info(&self) -> SsTableInfo {
        SsTableInfo {
            generation: self.generation,
            path: self.path.clone(),
            entries: self.index.len(),
            min_key: self.index.first().map(|e| e.0.clone()).unwrap_or_default(),
            max_key: self.index.last().map(|e| e.0.clone()).unwrap_or_default(),
        }
    }

    fn in_range(&self, id: &str) -> bool {
        match (self.index.first(), self.index.last()) {
            (Some(min), Some(max)) => min.0.as_str() <= id && id <= max.0.as_str(),
            _ => false,
        }
    }

    pub(crate) fn get(&self, id: &str) -> Result<Option<Row>, StoreError> {
        if !self.bloom.contains(id.as_bytes()) || !self.in_range(id) {
            return Ok(None);
        }
        let Ok(pos) = self.index.binary_search_by(|e| e.0.as_str().cmp(id)) else {
            return Ok(None);
        };
        let start = self.index[pos].1;
        let end = self.index.get(pos + 1).map_or(self.data_len, |e| e.1);
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.read_exact_at(&mut buf, start)?;
        match decode_row(&buf) {
            Decode::Row(row, _) if row.id == id => Ok(Some(row)),
            _ => Err(self.corrupt(format!("entry for {id:?} at offset {start} is unreadable"))),
        }
    }

    /// Every row in id order.
    pub(crate) fn rows(&self) -> Result<Vec<Row>, StoreError> {
        let mut bytes = vec![0u8; self.data_len as usize];
        self.file.read_exact_at(&mut bytes, 0)?;
        let mut rows = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            match decode_row(&bytes[pos..]) {
                Decode::Row(row, used) => {
                    rows.push(row);
                    pos += used;
                }
                Decode::Incomplete => return Err(self.corrupt(format!("truncated row at offset {pos}"))),
                Decode::Invalid(why) => return Err(self.corrupt(format!("{why} at offset {pos}"))),
            }
        }
        Ok(rows)
    }

    fn corrupt(&self, reason: String) -> StoreError {
        StoreError::CorruptTable {
            path: self.path.clone(),
            reason,
        }
    }
}

fn parse_index(bytes: &[u8], data_len: u64) -> Option<Vec<(String, u64)>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let len = u32::from_le_bytes(bytes.get(pos..pos + 4)?.try_into().ok()?) as usize;
        pos += 4;
        let id = std::str::from_utf8(bytes.get(pos..pos + len)?).ok()?.to_string();
        pos += len;
        let offset = u64::from_le_bytes(bytes.get(pos..pos + 8)?.try_into().ok()?);
        pos += 8;
        if offset >= data_len || out.last().is_some_and(|(prev, _): &(String, u64)| *prev >= id) {
            return None;
        }
        out.push((id, offset));
    }
    Some(out)
}
