//! Knowledge-graph triples, relation configuration and probing divisions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BandScheme, Catalog, FrequencyBand, FrequencyLookup};

#[derive(Debug, Error)]
pub enum TripleError {
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
    #[error("relation config {path}: {reason}")]
    BadRelationConfig { path: PathBuf, reason: String },
    #[error("relation {relation_id}: {reason}")]
    Template { relation_id: String, reason: String },
    #[error("no frequency computed for entity {0}")]
    MissingFrequency(String),
    #[error("relation {0} is not symmetric and cannot be probed")]
    NotSymmetric(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TripleError + '_ {
    move |source| TripleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub relation_id: String,
    pub name: String,
    pub question_template: String,
    pub statement_template: String,
    pub symmetric: bool,
}

impl RelationSpec {
    pub fn new(id: &str, name: &str, question: &str, statement: &str) -> Self {
        RelationSpec {
            relation_id: id.to_string(),
            name: name.to_string(),
            question_template: question.to_string(),
            statement_template: statement.to_string(),
            symmetric: true,
        }
    }

    /// Checks that both templates hold `{s}` and `{o}` exactly once.
    pub fn validate(&self) -> Result<(), TripleError> {
        for (kind, t) in [
            ("question", &self.question_template),
            ("statement", &self.statement_template),
        ] {
            for ph in ["{s}", "{o}"] {
                let n = t.matches(ph).count();
                if n != 1 {
                    return Err(TripleError::Template {
                        relation_id: self.relation_id.clone(),
                        reason: format!("{kind} template has {n} occurrences of {ph}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// The four symmetric relations probed by default.
    pub fn defaults() -> Vec<RelationSpec> {
        vec![
            RelationSpec::new("P190", "twinTown", "Is {s} twinned with {o}?", "{s} is twinned with {o}."),
            RelationSpec::new("P26", "spouse", "Is {s} married to {o}?", "{s} is married to {o}."),
            RelationSpec::new(
                "P3373",
                "sibling",
                "Does {s} have a sibling named {o}?",
                "{s} has a sibling named {o}.",
            ),
            RelationSpec::new("P47", "bordersWith", "Does {s} border with {o}?", "{s} borders with {o}."),
        ]
    }

    /// Loads a JSON array of relation specs, keeping only symmetric ones.
    pub fn load_config(path: &Path) -> Result<Vec<RelationSpec>, TripleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let specs: Vec<RelationSpec> =
            serde_json::from_str(&text).map_err(|e| TripleError::BadRelationConfig {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in specs {
            s.validate()?;
            if !seen.insert(s.relation_id.clone()) {
                return Err(TripleError::BadRelationConfig {
                    path: path.to_path_buf(),
                    reason: format!("duplicate relation {}", s.relation_id),
                });
            }
            if s.symmetric {
                out.push(s);
            } else {
                warn!("relation {} is not symmetric; excluded from probing", s.relation_id);
            }
        }
        Ok(out)
    }
}

/// A stored fact `⟨subject, relation, object⟩`. Its backward form swaps
/// subject and object under the same (symmetric) relation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject_id: String,
    pub relation_id: String,
    pub object_id: String,
}

impl Triple {
    pub fn new(s: &str, r: &str, o: &str) -> Self {
        Triple {
            subject_id: s.to_string(),
            relation_id: r.to_string(),
            object_id: o.to_string(),
        }
    }

    /// Identity shared by the forward and backward probes of this fact.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.subject_id, self.relation_id, self.object_id)
    }

    pub fn swapped(&self) -> Triple {
        Triple {
            subject_id: self.object_id.clone(),
            relation_id: self.relation_id.clone(),
            object_id: self.subject_id.clone(),
        }
    }

    fn unordered_key(&self) -> (String, String, String) {
        let (a, b) = if self.subject_id <= self.object_id {
            (&self.subject_id, &self.object_id)
        } else {
            (&self.object_id, &self.subject_id)
        };
        (self.relation_id.clone(), a.clone(), b.clone())
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {}, {}⟩", self.subject_id, self.relation_id, self.object_id)
    }
}

/// Reads `subject_id<TAB>relation_id<TAB>object_id` rows, keeping triples of
/// the given relations in input order. Self-loops are skipped; exact
/// duplicates, and reversed copies of an already-seen fact, collapse to the
/// first occurrence.
pub fn load_triples(path: &Path, relations: &[RelationSpec]) -> Result<Vec<Triple>, TripleError> {
    let f = File::open(path).map_err(io_err(path))?;
    let wanted: HashSet<&str> = relations.iter().map(|r| r.relation_id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(TripleError::MalformedRow {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 3 non-empty columns, found {}", cols.len()),
            });
        }
        if i == 0 && cols == ["subject_id", "relation_id", "object_id"] {
            continue;
        }
        if !wanted.contains(cols[1]) {
            continue;
        }
        if cols[0] == cols[2] {
            warn!("{}:{}: skipping self-loop {}", path.display(), i + 1, line);
            continue;
        }
        let t = Triple::new(cols[0], cols[1], cols[2]);
        if seen.insert(t.unordered_key()) {
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Setting {
    HighToLow,
    LowToHigh,
    HighToHigh,
}

impl Setting {
    pub fn id(self) -> &'static str {
        match self {
            Setting::HighToLow => "HIGH_TO_LOW",
            Setting::LowToHigh => "LOW_TO_HIGH",
            Setting::HighToHigh => "HIGH_TO_HIGH",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Setting::HighToLow => "High → Low",
            Setting::LowToHigh => "Low → High",
            Setting::HighToHigh => "High → High",
        }
    }

    pub const ALL: [Setting; 3] = [Setting::HighToLow, Setting::LowToHigh, Setting::HighToHigh];
}

/// One `(setting, low band, relation)` cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub relation_id: String,
    pub setting: Setting,
    /// `HIGH` for the High-to-High cell.
    pub band: FrequencyBand,
}

impl CellId {
    /// File stem such as `P26__HIGH_TO_LOW__B0_1K`.
    pub fn stem(&self) -> String {
        format!("{}__{}__{}", self.relation_id, self.setting.id(), self.band.id())
    }
}

/// A probed triple with its resolved aliases and frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub subject_id: String,
    pub relation_id: String,
    pub object_id: String,
    pub subject_aliases: Vec<String>,
    pub object_aliases: Vec<String>,
    pub subject_frequency: u64,
    pub object_frequency: u64,
    /// Subject and object share an alias string.
    #[serde(default)]
    pub alias_overlap: bool,
}

impl DatasetEntry {
    pub fn triple(&self) -> Triple {
        Triple::new(&self.subject_id, &self.relation_id, &self.object_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeDataset {
    pub cell: CellId,
    pub relation: RelationSpec,
    pub entries: Vec<DatasetEntry>,
}

impl ProbeDataset {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TripleError> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).expect("entry serializes");
            w.write_all(b"\n").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_jsonl(path: &Path, cell: CellId, relation: RelationSpec) -> Result<Self, TripleError> {
        let f = File::open(path).map_err(io_err(path))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| TripleError::MalformedRow {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(ProbeDataset {
            cell,
            relation,
            entries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Neither entity is high-frequency.
    LowLow,
    /// The low entity's band was not requested.
    BandNotRequested,
    /// An entity was dropped from the catalog for lack of a valid alias.
    UnknownEntity,
    /// The relation is not configured.
    UnknownRelation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub counts: BTreeMap<SkipReason, usize>,
}

impl SkipReport {
    pub fn add(&mut self, reason: SkipReason) {
        *self.counts.entry(reason).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divisions {
    pub datasets: Vec<ProbeDataset>,
    pub skipped: SkipReport,
}

/// Assigns every triple to at most one cell by the exact bands of its
/// subject and object. Cells exist for every configured relation: one
/// High-to-Low and one Low-to-High cell per requested low band, and one
/// High-to-High cell. Cells are ordered by relation config order, then
/// setting, then band; members keep input order.
pub fn build_divisions(
    triples: &[Triple],
    relations: &[RelationSpec],
    catalog: &Catalog,
    frequencies: &dyn FrequencyLookup,
    scheme: &BandScheme,
    low_bands: &[FrequencyBand],
) -> Result<Divisions, TripleError> {
    for r in relations {
        if !r.symmetric {
            return Err(TripleError::NotSymmetric(r.relation_id.clone()));
        }
    }
    let mut low: Vec<FrequencyBand> = low_bands.iter().copied().filter(|b| b.is_low()).collect();
    low.sort();
    low.dedup();

    let mut cells: Vec<ProbeDataset> = Vec::new();
    let mut slot: BTreeMap<CellId, usize> = BTreeMap::new();
    for rel in relations {
        for setting in [Setting::HighToLow, Setting::LowToHigh] {
            for &band in &low {
                let cell = CellId {
                    relation_id: rel.relation_id.clone(),
                    setting,
                    band,
                };
                slot.insert(cell.clone(), cells.len());
                cells.push(ProbeDataset {
                    cell,
                    relation: rel.clone(),
                    entries: Vec::new(),
                });
            }
        }
        let cell = CellId {
            relation_id: rel.relation_id.clone(),
            setting: Setting::HighToHigh,
            band: FrequencyBand::High,
        };
        slot.insert(cell.clone(), cells.len());
        cells.push(ProbeDataset {
            cell,
            relation: rel.clone(),
            entries: Vec::new(),
        });
    }

    let mut skipped = SkipReport::default();
    for t in triples {
        if !relations.iter().any(|r| r.relation_id == t.relation_id) {
            skipped.add(SkipReason::UnknownRelation);
            continue;
        }
        let (Some(subj), Some(obj)) = (catalog.get(&t.subject_id), catalog.get(&t.object_id)) else {
            skipped.add(SkipReason::UnknownEntity);
            continue;
        };
        let fs = frequencies
            .frequency(&t.subject_id)
            .ok_or_else(|| TripleError::MissingFrequency(t.subject_id.clone()))?;
        let fo = frequencies
            .frequency(&t.object_id)
            .ok_or_else(|| TripleError::MissingFrequency(t.object_id.clone()))?;
        let (bs, bo) = (scheme.assign(fs), scheme.assign(fo));
        let (setting, band) = match (bs, bo) {
            (FrequencyBand::High, FrequencyBand::High) => (Setting::HighToHigh, FrequencyBand::High),
            (FrequencyBand::High, b) => (Setting::HighToLow, b),
            (b, FrequencyBand::High) => (Setting::LowToHigh, b),
            _ => {
                skipped.add(SkipReason::LowLow);
                continue;
            }
        };
        let cell = CellId {
            relation_id: t.relation_id.clone(),
            setting,
            band,
        };
        let Some(&i) = slot.get(&cell) else {
            skipped.add(SkipReason::BandNotRequested);
            continue;
        };
        let alias_overlap = subj.aliases.iter().any(|a| obj.aliases.contains(a));
        cells[i].entries.push(DatasetEntry {
            subject_id: t.subject_id.clone(),
            relation_id: t.relation_id.clone(),
            object_id: t.object_id.clone(),
            subject_aliases: subj.aliases.clone(),
            object_aliases: obj.aliases.clone(),
            subject_frequency: fs,
            object_frequency: fo,
            alias_overlap,
        });
    }
    Ok(Divisions {
        datasets: cells,
        skipped,
    })
}
