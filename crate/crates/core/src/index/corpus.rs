use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{deserialize_with_checksum, serialize_index, stored_checksum, FORMAT_VERSION};
use super::{BwtIndex, IndexError, Pattern, DEFAULT_CHECKPOINT_INTERVAL, SENTINEL_BYTE, SEPARATOR_BYTE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SHARD_BUDGET: usize = 256 << 20;

/// One input document. Payloads never contain separator or sentinel bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub payload: Vec<u8>,
    pub source: String,
}

impl Document {
    /// Drops reserved bytes from `payload`.
    pub fn new(payload: impl Into<Vec<u8>>, source: impl Into<String>) -> Self {
        let mut payload = payload.into();
        payload.retain(|&b| b != SEPARATOR_BYTE && b != SENTINEL_BYTE);
        Document {
            payload,
            source: source.into(),
        }
    }
}

/// Reads documents from files (one per non-empty line) and directories (one
/// per file, recursively, in sorted path order). `.gz` inputs are
/// decompressed.
pub fn read_documents(inputs: &[PathBuf]) -> Result<Vec<Document>, IndexError> {
    let mut docs = Vec::new();
    for input in inputs {
        let meta = fs::metadata(input).map_err(|e| IndexError::io(input, e))?;
        if meta.is_dir() {
            let mut files = Vec::new();
            collect_files(input, &mut files)?;
            files.sort();
            for f in files {
                let mut bytes = Vec::new();
                open_maybe_gz(&f)?
                    .read_to_end(&mut bytes)
                    .map_err(|e| IndexError::io(&f, e))?;
                let doc = Document::new(bytes, f.display().to_string());
                if !doc.payload.is_empty() {
                    docs.push(doc);
                }
            }
        } else {
            let reader = BufReader::new(open_maybe_gz(input)?);
            let label = input.display().to_string();
            for line in reader.split(b'\n') {
                let mut line = line.map_err(|e| IndexError::io(input, e))?;
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
                let doc = Document::new(line, label.clone());
                if !doc.payload.is_empty() {
                    docs.push(doc);
                }
            }
        }
    }
    Ok(docs)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IndexError> {
    for entry in fs::read_dir(dir).map_err(|e| IndexError::io(dir, e))? {
        let path = entry.map_err(|e| IndexError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>, IndexError> {
    let f = File::open(path).map_err(|e| IndexError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(MultiGzDecoder::new(f)))
    } else {
        Ok(Box::new(f))
    }
}

/// Concatenated documents of one shard.
#[derive(Debug, Clone)]
pub struct ShardText {
    pub text: Vec<u8>,
    pub document_count: u64,
    pub source_label: String,
}

impl ShardText {
    fn checksum(&self) -> String {
        hex::encode(Sha256::digest(&self.text))
    }
}

/// Groups documents into shards of at most `budget` bytes. Splits only fall
/// on document boundaries; a document larger than the budget gets its own
/// shard.
pub fn partition_documents(docs: impl IntoIterator<Item = Document>, budget: usize) -> Vec<ShardText> {
    let mut shards = Vec::new();
    let mut cur: Option<ShardText> = None;
    for doc in docs {
        if doc.payload.is_empty() {
            continue;
        }
        if let Some(s) = &cur {
            if s.text.len() + 1 + doc.payload.len() > budget {
                shards.push(cur.take().unwrap());
            }
        }
        match &mut cur {
            Some(s) => {
                s.text.push(SEPARATOR_BYTE);
                s.text.extend_from_slice(&doc.payload);
                s.document_count += 1;
                if !s.source_label.split(',').any(|l| l == doc.source) {
                    s.source_label.push(',');
                    s.source_label.push_str(&doc.source);
                }
            }
            None => {
                cur = Some(ShardText {
                    text: doc.payload,
                    document_count: 1,
                    source_label: doc.source,
                })
            }
        }
    }
    shards.extend(cur);
    shards
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub shard_id: u32,
    pub file: String,
    pub byte_length: u64,
    pub document_count: u64,
    pub source_label: String,
    /// SHA-256 of the shard text, used to skip unchanged shards on rebuild.
    pub text_checksum: String,
    /// SHA-256 stored at the end of the shard index file.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub checkpoint_interval: usize,
    pub shards: Vec<ShardEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| IndexError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IndexError::BadManifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                path,
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(manifest)
    }

    fn store(&self, dir: &Path) -> Result<PathBuf, IndexError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, json + "\n").map_err(|e| IndexError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| IndexError::io(&path, e))?;
        Ok(path)
    }

    /// Fingerprint of the indexed corpus, derived from every shard checksum.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.shards {
            h.update(s.checksum.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub checkpoint_interval: usize,
    pub shard_budget: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
            shard_budget: DEFAULT_SHARD_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub manifest_path: PathBuf,
    pub shards_built: usize,
    pub shards_reused: usize,
}

/// Loaded, checksum-verified shard indexes.
#[derive(Debug, Default)]
pub struct CorpusIndex {
    shards: Vec<BwtIndex>,
    manifest: Option<Manifest>,
}

impl CorpusIndex {
    /// An in-memory corpus with no manifest.
    pub fn from_shards(shards: Vec<BwtIndex>) -> Self {
        CorpusIndex {
            shards,
            manifest: None,
        }
    }

    /// Partitions `docs`, builds every shard whose text changed since the
    /// last build in `dir`, and writes the manifest.
    pub fn build(dir: &Path, docs: Vec<Document>, opts: &BuildOptions) -> Result<BuildReport, IndexError> {
        if opts.checkpoint_interval == 0 {
            return Err(IndexError::InvalidCheckpointInterval);
        }
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;
        let previous = Manifest::load(dir)
            .ok()
            .filter(|m| m.checkpoint_interval == opts.checkpoint_interval);
        let shards = partition_documents(docs, opts.shard_budget);

        let results: Vec<Result<(ShardEntry, bool), IndexError>> = shards
            .into_par_iter()
            .enumerate()
            .map(|(id, shard)| {
                let id = id as u32;
                let text_checksum = shard.checksum();
                let file = format!("shard-{id:05}.fpix");
                let path = dir.join(&file);
                if let Some(prev) = previous
                    .as_ref()
                    .and_then(|m| m.shards.iter().find(|s| s.shard_id == id))
                {
                    let on_disk = stored_checksum(&path).ok();
                    if prev.text_checksum == text_checksum
                        && prev.file == file
                        && on_disk.as_deref() == Some(prev.checksum.as_str())
                    {
                        return Ok((prev.clone(), false));
                    }
                }
                let index = BwtIndex::build(&shard.text, opts.checkpoint_interval)?;
                let checksum = serialize_index(&index, &path)?;
                info!("built shard {id} ({} bytes)", shard.text.len());
                Ok((
                    ShardEntry {
                        shard_id: id,
                        file,
                        byte_length: shard.text.len() as u64,
                        document_count: shard.document_count,
                        source_label: shard.source_label,
                        text_checksum,
                        checksum,
                    },
                    true,
                ))
            })
            .collect();

        let mut entries = Vec::with_capacity(results.len());
        let mut built = 0;
        for r in results {
            let (entry, fresh) = r?;
            built += fresh as usize;
            entries.push(entry);
        }
        if let Some(prev) = &previous {
            for stale in prev.shards.iter().filter(|s| s.shard_id as usize >= entries.len()) {
                let _ = fs::remove_file(dir.join(&stale.file));
            }
        }
        let reused = entries.len() - built;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            checkpoint_interval: opts.checkpoint_interval,
            shards: entries,
        };
        let manifest_path = manifest.store(dir)?;
        Ok(BuildReport {
            manifest_path,
            shards_built: built,
            shards_reused: reused,
        })
    }

    /// Loads every shard listed in `dir/manifest.json` and checks it against
    /// the manifest checksum.
    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let manifest = Manifest::load(dir)?;
        let shards = manifest
            .shards
            .par_iter()
            .map(|entry| {
                let path = dir.join(&entry.file);
                if !path.exists() {
                    return Err(IndexError::ShardMissing {
                        shard_id: entry.shard_id,
                        path,
                    });
                }
                let (index, checksum) = deserialize_with_checksum(&path)?;
                if checksum != entry.checksum || index.text_len() as u64 != entry.byte_length {
                    return Err(IndexError::ShardChecksumMismatch {
                        shard_id: entry.shard_id,
                        path,
                    });
                }
                Ok(index)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if shards.is_empty() {
            warn!("index at {} has no shards", dir.display());
        }
        Ok(CorpusIndex {
            shards,
            manifest: Some(manifest),
        })
    }

    pub fn shards(&self) -> &[BwtIndex] {
        &self.shards
    }

    pub fn manifest(&self) -> Option<&Manifest> {
        self.manifest.as_ref()
    }

    /// Corpus fingerprint for cache keys; in-memory corpora hash their BWTs.
    pub fn fingerprint(&self) -> String {
        match &self.manifest {
            Some(m) => m.fingerprint(),
            None => {
                let mut h = Sha256::new();
                for s in &self.shards {
                    h.update(Sha256::digest(s.bwt()));
                }
                hex::encode(h.finalize())
            }
        }
    }

    /// Total occurrences of `pattern` across all shards.
    pub fn count(&self, pattern: &Pattern) -> u64 {
        if self.shards.len() > 1 {
            self.shards.par_iter().map(|s| s.count(pattern)).sum()
        } else {
            self.shards.iter().map(|s| s.count(pattern)).sum()
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.shards.iter().map(|s| s.text_len() as u64).sum()
    }
}
