//! Append-only commit log. Each record is `[u32 LE crc32][row]` where the
//! CRC covers the encoded row bytes.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::codec::{decode_row, encode_row, Decode};
use super::{Row, StoreError};

pub(crate) struct CommitLog {
    path: PathBuf,
    file: File,
}

/// Outcome of replaying a log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub rows: usize,
    pub discarded_tail_bytes: u64,
}

pub(crate) fn encode_records(rows: &[Row]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut body = Vec::new();
    for row in rows {
        body.clear();
        encode_row(row, &mut body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out.extend_from_slice(&body);
    }
    out
}

impl CommitLog {
    /// Opens the log and returns its intact records. A torn or garbled final
    /// record is cut off with a warning; a bad record followed by more data
    /// is reported as [`StoreError::CorruptLog`].
    pub(crate) fn open(path: &Path) -> Result<(CommitLog, Vec<Row>, ReplayOutcome), StoreError> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut bytes)?;

        let mut rows = Vec::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            if rest.len() < 4 {
                break;
            }
            let crc = u32::from_le_bytes(rest[..4].try_into().unwrap());
            match decode_row(&rest[4..]) {
                Decode::Incomplete => break,
                Decode::Row(row, used) if crc32fast::hash(&rest[4..4 + used]) == crc => {
                    rows.push(row);
                    pos += 4 + used;
                }
                Decode::Row(_, used) if pos + 4 + used == bytes.len() => break,
                Decode::Row(..) => {
                    return Err(StoreError::CorruptLog {
                        offset: pos as u64,
                        reason: "checksum mismatch".into(),
                    })
                }
                Decode::Invalid(why) => {
                    return Err(StoreError::CorruptLog {
                        offset: pos as u64,
                        reason: why.into(),
                    })
                }
            }
        }

        let discarded = (bytes.len() - pos) as u64;
        if discarded > 0 {
            log::warn!(
                "discarding {discarded} bytes of torn commit log tail in {}",
                path.display()
            );
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        let outcome = ReplayOutcome {
            rows: rows.len(),
            discarded_tail_bytes: discarded,
        };
        Ok((
            CommitLog {
                path: path.to_path_buf(),
                file,
            },
            rows,
            outcome,
        ))
    }

    pub(crate) fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)
    }

    pub(crate) fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }

    /// Cuts the log back to `len` bytes, undoing a failed append.
    pub(crate) fn truncate_to(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_data()
    }

    /// Drops every record; the memtable they described has been flushed.
    pub(crate) fn truncate(&mut self) -> io::Result<()> {
        self.file.set_len(0)?;
        self.file.sync_all()
    }

    pub(crate) fn len(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }
}
