//! Count-only FM-index over sharded text corpora.
//!
//! Each shard is a set of documents joined by [`SEPARATOR_BYTE`]. A shard is
//! indexed on its own ([`BwtIndex`]); a [`CorpusIndex`] is the ordered list
//! of shard indexes plus a JSON manifest, and answers a count by summing the
//! per-shard counts. Matching is case-sensitive raw-byte substring matching,
//! overlapping occurrences included.

mod bwt;
mod corpus;
mod format;
pub mod sais;

use std::path::PathBuf;

use thiserror::Error;

pub use bwt::{BwtIndex, DEFAULT_CHECKPOINT_INTERVAL, SENTINEL_BYTE, SEPARATOR_BYTE};
pub use corpus::{
    partition_documents, read_documents, BuildOptions, BuildReport, CorpusIndex, Document,
    Manifest, ShardEntry, ShardText, DEFAULT_SHARD_BUDGET, MANIFEST_FILE,
};
pub use format::{deserialize_index, serialize_index, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty text")]
    EmptyText,
    #[error("text contains the reserved sentinel byte 0xFF at offset {offset}")]
    SentinelInText { offset: u64 },
    #[error("text of {len} bytes exceeds the per-shard limit")]
    TextTooLarge { len: u64 },
    #[error("checkpoint interval must be at least 1")]
    InvalidCheckpointInterval,
    #[error("invalid pattern: {0}")]
    InvalidPattern(&'static str),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not an index file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: corrupt payload ({reason})")]
    CorruptPayload { path: PathBuf, reason: String },
    #[error("shard {shard_id} ({path}) does not match its manifest checksum")]
    ShardChecksumMismatch { shard_id: u32, path: PathBuf },
    #[error("shard {shard_id} missing: {path}")]
    ShardMissing { shard_id: u32, path: PathBuf },
    #[error("manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
}

impl IndexError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A validated search pattern: non-empty, free of separator and sentinel bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern(Vec<u8>);

impl Pattern {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, IndexError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(IndexError::InvalidPattern("empty pattern"));
        }
        if bytes.contains(&SEPARATOR_BYTE) {
            return Err(IndexError::InvalidPattern("pattern contains separator byte 0x00"));
        }
        if bytes.contains(&SENTINEL_BYTE) {
            return Err(IndexError::InvalidPattern("pattern contains sentinel byte 0xFF"));
        }
        Ok(Pattern(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl TryFrom<&str> for Pattern {
    type Error = IndexError;

    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Pattern::new(s.as_bytes())
    }
}
