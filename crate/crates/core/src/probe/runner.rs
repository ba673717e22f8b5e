use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_answer, ChatBackend, ChatRequest, ModelEndpoint, ProbeError, Verdict};
use crate::prompt::{expand_variants, Direction, InstructionMode, PromptTemplate, TemplateKind, DEFAULT_SYNONYM_CAP};
use crate::triples::{DatasetEntry, ProbeDataset, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub triple: Triple,
    pub direction: Direction,
    pub kind: TemplateKind,
    /// Raw reply per evaluated variant; empty when the request failed.
    pub replies: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub recognized: bool,
}

/// Forward and backward recognition of one triple under one template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub subject_id: String,
    pub relation_id: String,
    pub object_id: String,
    pub template: TemplateKind,
    pub forward_recognized: bool,
    pub backward_recognized: bool,
    #[serde(default)]
    pub forward_verdicts: Vec<Verdict>,
    #[serde(default)]
    pub backward_verdicts: Vec<Verdict>,
}

impl PairedOutcome {
    pub fn key(&self) -> String {
        pair_key(
            &Triple::new(&self.subject_id, &self.relation_id, &self.object_id),
            self.template,
        )
    }
}

pub fn pair_key(triple: &Triple, template: TemplateKind) -> String {
    format!("{}|{}", triple.key(), template.id())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeOptions {
    pub model_name: String,
    pub seed: u64,
    pub cap: usize,
    /// Stop a batch at its first positive verdict.
    pub short_circuit: bool,
    pub max_concurrent: usize,
    /// Overrides the per-mode default of 8 (direct) or 512 (think) tokens.
    pub max_tokens: Option<u32>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            model_name: "mock".to_string(),
            seed: 0,
            cap: DEFAULT_SYNONYM_CAP,
            short_circuit: true,
            max_concurrent: 8,
            max_tokens: None,
        }
    }
}

impl ProbeOptions {
    pub fn max_tokens_for(&self, mode: InstructionMode) -> u32 {
        self.max_tokens.unwrap_or(match mode {
            InstructionMode::Direct => 8,
            InstructionMode::Think => 512,
        })
    }
}

/// Probes one direction of a dataset entry. The fact counts as recognized
/// when any alias variant is answered positively. A variant whose request
/// fails is recorded as unparseable; if every evaluated variant fails the
/// last error is returned.
pub fn probe_fact(
    entry: &DatasetEntry,
    direction: Direction,
    template: &PromptTemplate,
    backend: &dyn ChatBackend,
    opts: &ProbeOptions,
) -> Result<ProbeOutcome, ProbeError> {
    let triple = entry.triple();
    let batch = expand_variants(
        &triple,
        direction,
        template,
        &entry.subject_aliases,
        &entry.object_aliases,
        opts.seed,
        opts.cap,
    )?;
    let max_tokens = opts.max_tokens_for(template.mode);
    let mut replies = Vec::new();
    let mut verdicts = Vec::new();
    let mut last_error = None;
    for variant in &batch.variants {
        let request = ChatRequest {
            model: opts.model_name.clone(),
            system: variant.prompt.system.clone(),
            user: variant.prompt.user.clone(),
            temperature: ModelEndpoint::TEMPERATURE,
            max_tokens,
        };
        let verdict = match backend.complete(&request) {
            Ok(reply) => {
                let v = parse_answer(&reply, &template.vocabulary, template.mode);
                replies.push(reply);
                v
            }
            Err(e) => {
                warn!("{triple} {direction:?}: variant failed: {e}");
                replies.push(String::new());
                last_error = Some(e);
                Verdict::Unparseable
            }
        };
        verdicts.push(verdict);
        if opts.short_circuit && verdict == Verdict::Positive {
            break;
        }
    }
    if let Some(e) = last_error {
        if replies.iter().all(String::is_empty) {
            return Err(e);
        }
    }
    let recognized = verdicts.contains(&Verdict::Positive);
    Ok(ProbeOutcome {
        triple,
        direction,
        kind: template.kind,
        replies,
        verdicts,
        recognized,
    })
}

fn probe_pair(
    entry: &DatasetEntry,
    template: &PromptTemplate,
    backend: &dyn ChatBackend,
    opts: &ProbeOptions,
) -> Result<PairedOutcome, ProbeError> {
    let fwd = probe_fact(entry, Direction::Forward, template, backend, opts)?;
    let bwd = probe_fact(entry, Direction::Backward, template, backend, opts)?;
    Ok(PairedOutcome {
        subject_id: entry.subject_id.clone(),
        relation_id: entry.relation_id.clone(),
        object_id: entry.object_id.clone(),
        template: template.kind,
        forward_recognized: fwd.recognized,
        backward_recognized: bwd.recognized,
        forward_verdicts: fwd.verdicts,
        backward_verdicts: bwd.verdicts,
    })
}

/// Reads a JSONL outcome log, skipping lines that do not parse.
pub fn read_outcomes(path: &Path) -> Result<Vec<PairedOutcome>, ProbeError> {
    let io = |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    };
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path).map_err(io)?).lines() {
        let line = line.map_err(io)?;
        match serde_json::from_str(&line) {
            Ok(o) => out.push(o),
            Err(_) if line.trim().is_empty() => {}
            Err(e) => warn!("{}: dropping unreadable outcome line: {e}", path.display()),
        }
    }
    Ok(out)
}

fn write_outcomes(path: &Path, outcomes: &[PairedOutcome]) -> Result<(), ProbeError> {
    let io = |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        for o in outcomes {
            serde_json::to_writer(&mut w, o).expect("outcome serializes");
            w.write_all(b"\n").map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| io(e.into_error()))?
            .sync_all()
            .map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Probes every entry of `dataset` in both directions.
///
/// With `outcomes_path` set, each finished pair is appended to that file as
/// soon as it completes, and pairs already present are not probed again.
/// When the run finishes the file is rewritten in dataset order.
pub fn run_division(
    dataset: &ProbeDataset,
    template: &PromptTemplate,
    backend: &dyn ChatBackend,
    opts: &ProbeOptions,
    outcomes_path: Option<&Path>,
) -> Result<Vec<PairedOutcome>, ProbeError> {
    let mut done: HashMap<String, PairedOutcome> = HashMap::new();
    let wanted: HashMap<String, ()> = dataset
        .entries
        .iter()
        .map(|e| (pair_key(&e.triple(), template.kind), ()))
        .collect();
    let log = match outcomes_path {
        Some(path) => {
            for o in read_outcomes(path)? {
                if wanted.contains_key(&o.key()) {
                    done.insert(o.key(), o);
                }
            }
            // Rewrite to drop any torn trailing line before appending.
            let mut kept: Vec<PairedOutcome> = done.values().cloned().collect();
            kept.sort_by_key(|o| o.key());
            write_outcomes(path, &kept)?;
            let f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|source| ProbeError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
            Some(Mutex::new(f))
        }
        None => None,
    };
    if !done.is_empty() {
        info!("{}: resuming with {} of {} pairs done", dataset.cell.stem(), done.len(), dataset.total());
    }

    let pending: Vec<&DatasetEntry> = dataset
        .entries
        .iter()
        .filter(|e| !done.contains_key(&pair_key(&e.triple(), template.kind)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_concurrent.max(1))
        .build()
        .map_err(|e| ProbeError::Config(e.to_string()))?;
    let fresh: Vec<PairedOutcome> = pool.install(|| {
        pending
            .par_iter()
            .map(|entry| {
                let outcome = probe_pair(entry, template, backend, opts)?;
                if let (Some(log), Some(path)) = (&log, outcomes_path) {
                    let mut line = serde_json::to_string(&outcome).expect("outcome serializes");
                    line.push('\n');
                    let mut f = log.lock().unwrap();
                    f.write_all(line.as_bytes())
                        .and_then(|_| f.flush())
                        .map_err(|source| ProbeError::Io {
                            path: path.to_path_buf(),
                            source,
                        })?;
                }
                Ok(outcome)
            })
            .collect::<Result<_, ProbeError>>()
    })?;
    for o in fresh {
        done.insert(o.key(), o);
    }

    let ordered: Vec<PairedOutcome> = dataset
        .entries
        .iter()
        .filter_map(|e| done.remove(&pair_key(&e.triple(), template.kind)))
        .collect();
    if let Some(path) = outcomes_path {
        drop(log);
        write_outcomes(path, &ordered)?;
    }
    Ok(ordered)
}
