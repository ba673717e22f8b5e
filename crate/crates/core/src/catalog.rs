//! Entity aliases, corpus frequencies and frequency bands.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{CorpusIndex, IndexError, Pattern};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("entity {0} has no valid alias")]
    NoAliases(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const DEFAULT_HIGH_THRESHOLD: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrequencyBand {
    #[serde(rename = "B0_1K")]
    B0To1K,
    #[serde(rename = "B1K_10K")]
    B1KTo10K,
    #[serde(rename = "B10K_100K")]
    B10KTo100K,
    #[serde(rename = "HIGH")]
    High,
}

impl FrequencyBand {
    pub const ALL: [FrequencyBand; 4] = [
        FrequencyBand::B0To1K,
        FrequencyBand::B1KTo10K,
        FrequencyBand::B10KTo100K,
        FrequencyBand::High,
    ];
    pub const LOW: [FrequencyBand; 3] = [
        FrequencyBand::B0To1K,
        FrequencyBand::B1KTo10K,
        FrequencyBand::B10KTo100K,
    ];

    /// Identifier used in files: `B0_1K`, `B1K_10K`, `B10K_100K`, `HIGH`.
    pub fn id(self) -> &'static str {
        match self {
            FrequencyBand::B0To1K => "B0_1K",
            FrequencyBand::B1KTo10K => "B1K_10K",
            FrequencyBand::B10KTo100K => "B10K_100K",
            FrequencyBand::High => "HIGH",
        }
    }

    /// Human-readable range for reports.
    pub fn range_label(self) -> &'static str {
        match self {
            FrequencyBand::B0To1K => "0-1K",
            FrequencyBand::B1KTo10K => "1K-10K",
            FrequencyBand::B10KTo100K => "10K-100K",
            FrequencyBand::High => "≥100K",
        }
    }

    pub fn is_low(self) -> bool {
        self != FrequencyBand::High
    }
}

impl fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FrequencyBand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B0_1K" | "0-1K" => Ok(FrequencyBand::B0To1K),
            "B1K_10K" | "1K-10K" => Ok(FrequencyBand::B1KTo10K),
            "B10K_100K" | "10K-100K" => Ok(FrequencyBand::B10KTo100K),
            "HIGH" | "high" => Ok(FrequencyBand::High),
            other => Err(format!("unknown frequency band {other:?}")),
        }
    }
}

/// Band boundaries. Low bands are `[0, 1000]`, `[1001, 10000]` and
/// `[10001, high_threshold - 1]`; `HIGH` starts at `high_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandScheme {
    pub high_threshold: u64,
}

impl Default for BandScheme {
    fn default() -> Self {
        BandScheme {
            high_threshold: DEFAULT_HIGH_THRESHOLD,
        }
    }
}

impl BandScheme {
    /// Smallest threshold that leaves the 10K-100K band non-empty.
    pub const MIN_HIGH_THRESHOLD: u64 = 10_002;

    pub fn assign(&self, frequency: u64) -> FrequencyBand {
        match frequency {
            f if f >= self.high_threshold => FrequencyBand::High,
            0..=1_000 => FrequencyBand::B0To1K,
            1_001..=10_000 => FrequencyBand::B1KTo10K,
            _ => FrequencyBand::B10KTo100K,
        }
    }

    /// Inclusive bounds of `band`; `None` upper means unbounded.
    pub fn bounds(&self, band: FrequencyBand) -> (u64, Option<u64>) {
        match band {
            FrequencyBand::B0To1K => (0, Some(1_000)),
            FrequencyBand::B1KTo10K => (1_001, Some(10_000)),
            FrequencyBand::B10KTo100K => (10_001, Some(self.high_threshold - 1)),
            FrequencyBand::High => (self.high_threshold, None),
        }
    }
}

/// Band of `frequency` under the default 100K threshold.
pub fn assign_band(frequency: u64) -> FrequencyBand {
    BandScheme::default().assign(frequency)
}

/// Deletes bracket characters (keeping their content), turns underscores
/// into spaces, collapses whitespace runs and trims.
pub fn normalize_alias(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .filter(|c| !matches!(c, '(' | ')' | '[' | ']' | '{' | '}'))
        .map(|c| if c == '_' { ' ' } else { c })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True for non-empty names made only of ASCII letters, digits, `-`, `.`,
/// `,`, `'`, `"` and spaces.
pub fn is_valid_alias(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | ',' | '\'' | '"' | ' '))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    /// Normalized, valid and unique, in first-seen order.
    pub aliases: Vec<String>,
    pub frequency: Option<u64>,
    pub band: Option<FrequencyBand>,
}

impl EntityRecord {
    pub fn new(entity_id: impl Into<String>) -> Self {
        EntityRecord {
            entity_id: entity_id.into(),
            aliases: Vec::new(),
            frequency: None,
            band: None,
        }
    }

    /// Normalizes `raw` and adds it if valid and new. Returns whether the
    /// alias list changed.
    pub fn add_alias(&mut self, raw: &str) -> bool {
        let alias = normalize_alias(raw);
        if !is_valid_alias(&alias) || self.aliases.contains(&alias) {
            return false;
        }
        self.aliases.push(alias);
        true
    }

    pub fn with_aliases<'a>(entity_id: impl Into<String>, raw: impl IntoIterator<Item = &'a str>) -> Self {
        let mut r = EntityRecord::new(entity_id);
        for a in raw {
            r.add_alias(a);
        }
        r
    }
}

/// Persistent per-alias count cache keyed by `(alias, corpus fingerprint)`.
///
/// Backed by an append-only JSONL file. Concurrent writers are allowed;
/// identical keys resolve last-write-wins.
#[derive(Debug)]
pub struct AliasCountCache {
    entries: Mutex<HashMap<(String, String), u64>>,
    log: Option<Mutex<File>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    alias: String,
    index: String,
    count: u64,
}

impl AliasCountCache {
    pub fn in_memory() -> Self {
        AliasCountCache {
            entries: Mutex::new(HashMap::new()),
            log: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self, CatalogError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(io_err(path))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io_err(path))?;
                // A torn final line from an interrupted run is ignored.
                if let Ok(c) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert((c.alias, c.index), c.count);
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(AliasCountCache {
            entries: Mutex::new(entries),
            log: Some(Mutex::new(log)),
        })
    }

    pub fn get(&self, alias: &str, index: &str) -> Option<u64> {
        self.entries
            .lock()
            .unwrap()
            .get(&(alias.to_string(), index.to_string()))
            .copied()
    }

    pub fn put(&self, alias: &str, index: &str, count: u64) {
        self.entries
            .lock()
            .unwrap()
            .insert((alias.to_string(), index.to_string()), count);
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(&CacheLine {
                alias: alias.to_string(),
                index: index.to_string(),
                count,
            })
            .expect("cache line serializes");
            line.push('\n');
            if let Err(e) = log.lock().unwrap().write_all(line.as_bytes()) {
                warn!("alias cache append failed: {e}");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sums corpus counts over the record's aliases and stores the result.
pub fn entity_frequency(
    record: &mut EntityRecord,
    index: &CorpusIndex,
    cache: Option<&AliasCountCache>,
) -> Result<u64, CatalogError> {
    let total = alias_count_sum(record, index, &index.fingerprint(), cache)?;
    record.frequency = Some(total);
    Ok(total)
}

fn alias_count_sum(
    record: &EntityRecord,
    index: &CorpusIndex,
    fingerprint: &str,
    cache: Option<&AliasCountCache>,
) -> Result<u64, CatalogError> {
    if record.aliases.is_empty() {
        return Err(CatalogError::NoAliases(record.entity_id.clone()));
    }
    let mut total = 0;
    for alias in &record.aliases {
        if let Some(c) = cache.and_then(|c| c.get(alias, fingerprint)) {
            total += c;
            continue;
        }
        let c = index.count(&Pattern::new(alias.as_bytes())?);
        if let Some(cache) = cache {
            cache.put(alias, fingerprint, c);
        }
        total += c;
    }
    Ok(total)
}

/// Lookup of computed entity frequencies.
pub trait FrequencyLookup {
    fn frequency(&self, entity_id: &str) -> Option<u64>;
}

impl FrequencyLookup for HashMap<String, u64> {
    fn frequency(&self, entity_id: &str) -> Option<u64> {
        self.get(entity_id).copied()
    }
}

impl FrequencyLookup for BTreeMap<String, u64> {
    fn frequency(&self, entity_id: &str) -> Option<u64> {
        self.get(entity_id).copied()
    }
}

/// Entities keyed by id. Only records with at least one valid alias are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    records: BTreeMap<String, EntityRecord>,
}

impl FrequencyLookup for Catalog {
    fn frequency(&self, entity_id: &str) -> Option<u64> {
        self.records.get(entity_id).and_then(|r| r.frequency)
    }
}

impl Catalog {
    /// Builds a catalog from `(entity_id, raw_alias)` rows.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut records: BTreeMap<String, EntityRecord> = BTreeMap::new();
        for (id, alias) in rows {
            records
                .entry(id.to_string())
                .or_insert_with(|| EntityRecord::new(id))
                .add_alias(alias);
        }
        records.retain(|_, r| !r.aliases.is_empty());
        Catalog { records }
    }

    /// Reads an entity TSV: `entity_id<TAB>alias` per row. Extra columns are
    /// read as further aliases of the same entity. An `entity_id` header row
    /// is skipped.
    pub fn load_tsv(path: &Path) -> Result<Self, CatalogError> {
        let f = File::open(path).map_err(io_err(path))?;
        let mut rows: Vec<(String, String)> = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() || (i == 0 && line.starts_with("entity_id\t")) {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or_default();
            let aliases: Vec<&str> = cols.collect();
            if id.is_empty() || aliases.is_empty() {
                return Err(CatalogError::MalformedRow {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "expected entity_id and alias columns".into(),
                });
            }
            for a in aliases {
                rows.push((id.to_string(), a.to_string()));
            }
        }
        let before: std::collections::HashSet<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
        let catalog = Catalog::from_rows(rows.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        let dropped = before.len() - catalog.len();
        if dropped > 0 {
            warn!("dropped {dropped} entities without a valid alias");
        }
        Ok(catalog)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.records.get(entity_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &EntityRecord> {
        self.records.values()
    }

    pub fn insert(&mut self, record: EntityRecord) {
        self.records.insert(record.entity_id.clone(), record);
    }

    /// Computes every entity frequency in parallel and assigns bands.
    pub fn compute_frequencies(
        &mut self,
        index: &CorpusIndex,
        scheme: &BandScheme,
        cache: Option<&AliasCountCache>,
    ) -> Result<(), CatalogError> {
        let fingerprint = index.fingerprint();
        let counts: Vec<(String, u64)> = self
            .records
            .par_iter()
            .map(|(id, r)| Ok((id.clone(), alias_count_sum(r, index, &fingerprint, cache)?)))
            .collect::<Result<_, CatalogError>>()?;
        for (id, f) in counts {
            let r = self.records.get_mut(&id).expect("id from same map");
            r.frequency = Some(f);
            r.band = Some(scheme.assign(f));
        }
        Ok(())
    }

    /// Applies frequencies from a table (entities absent from it are left
    /// unassigned).
    pub fn apply_frequencies(&mut self, table: &BTreeMap<String, u64>, scheme: &BandScheme) {
        for r in self.records.values_mut() {
            if let Some(&f) = table.get(&r.entity_id) {
                r.frequency = Some(f);
                r.band = Some(scheme.assign(f));
            }
        }
    }

    /// Writes `entity_id<TAB>frequency<TAB>band` rows with a header.
    pub fn write_frequencies(&self, path: &Path) -> Result<(), CatalogError> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "entity_id\tfrequency\tband")?;
            for r in self.records.values() {
                if let (Some(f), Some(b)) = (r.frequency, r.band) {
                    writeln!(w, "{}\t{}\t{}", r.entity_id, f, b)?;
                }
            }
            w.flush()
        };
        write().map_err(io_err(path))
    }
}

/// Reads a frequency TSV written by [`Catalog::write_frequencies`].
pub fn read_frequencies(path: &Path) -> Result<BTreeMap<String, u64>, CatalogError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line.starts_with("entity_id\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let malformed = |reason: &str| CatalogError::MalformedRow {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        if cols.len() < 2 {
            return Err(malformed("expected entity_id and frequency columns"));
        }
        let f: u64 = cols[1].parse().map_err(|_| malformed("frequency is not an integer"))?;
        out.insert(cols[0].to_string(), f);
    }
    Ok(out)
}
