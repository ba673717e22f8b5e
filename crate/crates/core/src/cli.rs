//! Command-line definitions and the pipeline steps behind each subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{read_frequencies, AliasCountCache, Catalog, CatalogError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::index::{read_documents, BuildOptions, BuildReport, CorpusIndex, IndexError, Pattern};
use crate::probe::{CachedBackend, ChatBackend, HttpBackend, MockModel, ProbeError, ProbeOptions, ResponseCache};
use crate::prompt::{InstructionMode, PromptTemplate, TemplateKind};
use crate::report::{band_label, correlation_text, graph_degrees, Report};
use crate::stats::log1p_correlations;
use crate::triples::{build_divisions, load_triples, CellId, ProbeDataset, RelationSpec, SkipReport, TripleError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Triple(#[from] TripleError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "factprobe", version, about = "Probe directional fact recognition against corpus frequency")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON experiment config
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus file or directory (repeatable)
    #[arg(long, global = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub index_dir: Option<PathBuf>,
    /// Entity alias TSV
    #[arg(long, global = true)]
    pub entities: Option<PathBuf>,
    /// Triple TSV
    #[arg(long, global = true)]
    pub triples: Option<PathBuf>,
    /// Restrict to a relation id (repeatable)
    #[arg(long, global = true)]
    pub relation: Vec<String>,
    /// question or statement (repeatable)
    #[arg(long, global = true)]
    pub template: Vec<TemplateKind>,
    /// direct or think
    #[arg(long, global = true)]
    pub mode: Option<InstructionMode>,
    /// Base URL of an OpenAI-compatible server
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Use the offline frequency-biased mock model
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub high_threshold: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or query the corpus index
    #[command(subcommand)]
    Index(IndexCommand),
    /// Entity frequencies
    #[command(subcommand)]
    Freq(FreqCommand),
    /// Probe datasets
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Query the model
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Write result tables
    Report,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build,
    Count {
        #[arg(long)]
        pattern: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum FreqCommand {
    Compute,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    Build,
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    Run,
}

/// Loads the config file (if any), applies flag overrides and validates.
pub fn resolve_config(o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut c = ExperimentConfig::load_or_default(o.config.as_deref())?;
    if !o.corpus.is_empty() {
        c.corpus = o.corpus.clone();
    }
    if o.index_dir.is_some() {
        c.index_dir = o.index_dir.clone();
    }
    if o.entities.is_some() {
        c.entities = o.entities.clone();
    }
    if o.triples.is_some() {
        c.triples = o.triples.clone();
    }
    if !o.relation.is_empty() {
        c.relation_filter = o.relation.clone();
    }
    if !o.template.is_empty() {
        c.templates = o.template.clone();
    }
    if let Some(m) = o.mode {
        c.mode = m;
    }
    if o.endpoint.is_some() {
        c.endpoint.base_url = o.endpoint.clone();
    }
    if let Some(m) = &o.model {
        c.endpoint.model_name = m.clone();
    }
    if o.mock {
        c.use_mock = true;
    }
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(t) = o.high_threshold {
        c.high_threshold = t;
    }
    if let Some(out) = &o.out {
        c.out = out.clone();
    }
    c.validate()?;
    Ok(c)
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Missing(format!("no {what} configured")))
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn cmd_index_build(cfg: &ExperimentConfig) -> Result<BuildReport, CliError> {
    if cfg.corpus.is_empty() {
        return Err(CliError::Missing("no corpus paths configured".into()));
    }
    let docs = read_documents(&cfg.corpus)?;
    let opts = BuildOptions {
        checkpoint_interval: cfg.checkpoint_interval,
        shard_budget: cfg.shard_budget,
    };
    let report = CorpusIndex::build(&cfg.index_dir(), docs, &opts)?;
    info!(
        "index: {} shards built, {} reused",
        report.shards_built, report.shards_reused
    );
    Ok(report)
}

/// Exact occurrence count of `pattern` and the query time.
pub fn cmd_count(cfg: &ExperimentConfig, pattern: &str) -> Result<(u64, Duration), CliError> {
    let pattern = Pattern::new(pattern.as_bytes())?;
    let index = CorpusIndex::open(&cfg.index_dir())?;
    let start = Instant::now();
    let n = index.count(&pattern);
    Ok((n, start.elapsed()))
}

fn load_catalog(cfg: &ExperimentConfig) -> Result<Catalog, CliError> {
    let path = require(&cfg.entities, "entity file")?;
    Ok(Catalog::load_tsv(path)?)
}

pub fn cmd_freq_compute(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let mut catalog = load_catalog(cfg)?;
    let index = CorpusIndex::open(&cfg.index_dir())?;
    mkdir(&cfg.out)?;
    let cache = AliasCountCache::open(&cfg.alias_cache_path())?;
    catalog.compute_frequencies(&index, &cfg.scheme(), Some(&cache))?;
    let path = cfg.frequencies_path();
    catalog.write_frequencies(&path)?;
    info!("frequencies for {} entities written to {}", catalog.len(), path.display());
    Ok(path)
}

fn relations(cfg: &ExperimentConfig) -> Result<Vec<RelationSpec>, CliError> {
    let mut rels = match &cfg.relations {
        Some(p) => RelationSpec::load_config(p)?,
        None => RelationSpec::defaults(),
    };
    if !cfg.relation_filter.is_empty() {
        for id in &cfg.relation_filter {
            if !rels.iter().any(|r| &r.relation_id == id) {
                return Err(CliError::Missing(format!("relation {id} is not configured")));
            }
        }
        rels.retain(|r| cfg.relation_filter.contains(&r.relation_id));
    }
    Ok(rels)
}

/// One entry of `datasets/cells.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: CellId,
    pub relation: RelationSpec,
    pub total: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellIndex {
    pub cells: Vec<CellRecord>,
    pub skipped: SkipReport,
}

const CELLS_FILE: &str = "cells.json";

pub fn load_cells(cfg: &ExperimentConfig) -> Result<(CellIndex, Vec<ProbeDataset>), CliError> {
    let dir = cfg.datasets_dir();
    let path = dir.join(CELLS_FILE);
    if !path.exists() {
        return Err(CliError::Missing(format!(
            "{} not found; run `dataset build` first",
            path.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: CellIndex = serde_json::from_str(&text).map_err(|e| CliError::Io {
        path: path.clone(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let datasets = index
        .cells
        .iter()
        .map(|c| ProbeDataset::read_jsonl(&dir.join(&c.file), c.cell.clone(), c.relation.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((index, datasets))
}

/// Writes per-cell datasets and returns a cell-size summary table.
pub fn cmd_dataset_build(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let rels = relations(cfg)?;
    let triples_path = require(&cfg.triples, "triple file")?;
    let mut catalog = load_catalog(cfg)?;
    let triples = load_triples(triples_path, &rels)?;
    if triples.is_empty() {
        warn!("{}: no usable triples", triples_path.display());
    }
    let freq_path = cfg.frequencies_path();
    if !freq_path.exists() {
        cmd_freq_compute(cfg)?;
    }
    let table = read_frequencies(&freq_path)?;
    catalog.apply_frequencies(&table, &cfg.scheme());
    let divisions = build_divisions(&triples, &rels, &catalog, &catalog, &cfg.scheme(), &cfg.low_bands)?;

    let dir = cfg.datasets_dir();
    mkdir(&dir)?;
    let mut cells = Vec::new();
    for d in &divisions.datasets {
        let file = format!("{}.jsonl", d.cell.stem());
        d.write_jsonl(&dir.join(&file))?;
        cells.push(CellRecord {
            cell: d.cell.clone(),
            relation: d.relation.clone(),
            total: d.total(),
            file,
        });
    }
    let index = CellIndex {
        cells,
        skipped: divisions.skipped.clone(),
    };
    let path = dir.join(CELLS_FILE);
    let json = serde_json::to_string_pretty(&index).expect("cell index serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let mut summary = String::from("setting\trelation\tlow_freq\ttotal\n");
    for c in &index.cells {
        writeln!(
            summary,
            "{}\t{}\t{}\t{}",
            c.cell.setting.id(),
            c.relation.name,
            band_label(c.cell.band, &cfg.scheme()),
            c.total
        )
        .unwrap();
    }
    for (reason, n) in &index.skipped.counts {
        writeln!(summary, "# skipped {n} triples: {reason:?}").unwrap();
    }
    let spath = dir.join("summary.tsv");
    fs::write(&spath, &summary).map_err(io_err(&spath))?;
    Ok(summary)
}

fn template_for(cfg: &ExperimentConfig, relation: &RelationSpec, kind: TemplateKind) -> PromptTemplate {
    let t = PromptTemplate::for_relation(relation, kind, cfg.mode);
    match cfg.instructions.get(&kind) {
        Some(text) => t.with_instruction(text.clone()),
        None => t,
    }
}

pub fn outcomes_path(cfg: &ExperimentConfig, cell: &CellId, kind: TemplateKind) -> PathBuf {
    cfg.outcomes_dir().join(format!("{}.{}.jsonl", cell.stem(), kind.id()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeSummary {
    pub cells: usize,
    pub pairs: usize,
}

/// Probes every cell with every configured template. Finished pairs are
/// kept on disk, so an interrupted run picks up where it stopped.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<ProbeSummary, CliError> {
    let endpoint = if cfg.use_mock { None } else { Some(cfg.model_endpoint()?) };
    let (_, datasets) = load_cells(cfg)?;

    let (inner, model_name, max_concurrent): (Box<dyn ChatBackend>, String, usize) = match endpoint {
        Some(e) => {
            let name = e.model_name.clone();
            let n = e.max_concurrent_requests;
            (Box::new(HttpBackend::new(e)), name, n)
        }
        None => {
            let m = cfg.mock_config();
            let name = format!(
                "mock(seed={},high={},p_high={},p_low={})",
                m.seed, m.high_threshold, m.p_first_high, m.p_first_low
            );
            (
                Box::new(MockModel::from_datasets(m, &datasets)),
                name,
                cfg.endpoint.max_concurrent_requests,
            )
        }
    };
    mkdir(&cfg.outcomes_dir())?;
    let cache_path = cfg.response_cache_path();
    mkdir(cache_path.parent().expect("cache path has a parent"))?;
    let backend = CachedBackend::new(inner, ResponseCache::open(&cache_path)?);
    let opts = ProbeOptions {
        model_name,
        seed: cfg.seed,
        cap: cfg.synonym_cap,
        short_circuit: cfg.short_circuit,
        max_concurrent,
        max_tokens: cfg.endpoint.max_tokens,
    };

    let mut summary = ProbeSummary::default();
    for &kind in &cfg.templates {
        for d in &datasets {
            let template = template_for(cfg, &d.relation, kind);
            let path = outcomes_path(cfg, &d.cell, kind);
            let out = crate::probe::run_division(d, &template, &backend, &opts, Some(&path))?;
            info!("{} [{}]: {} pairs", d.cell.stem(), kind.id(), out.len());
            summary.cells += 1;
            summary.pairs += out.len();
        }
    }
    Ok(summary)
}

/// Writes the report files and returns their paths.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let (index, _) = load_cells(cfg)?;
    let mut report = Report::new(cfg.templates.clone(), cfg.scheme(), cfg.min_cell_size);
    for c in &index.cells {
        let mut by_template = BTreeMap::new();
        for &kind in &cfg.templates {
            let path = outcomes_path(cfg, &c.cell, kind);
            if !path.exists() {
                continue;
            }
            let outcomes = crate::probe::read_outcomes(&path)?;
            if outcomes.len() != c.total {
                warn!(
                    "{}: {} of {} pairs probed",
                    path.display(),
                    outcomes.len(),
                    c.total
                );
            }
            by_template.insert(kind, outcomes);
        }
        report.add_cell(c.cell.clone(), &c.relation.name, c.total, &by_template);
    }
    let dir = cfg.report_dir();
    let mut written = report.write(&dir).map_err(io_err(&dir))?;

    if let (Some(triples), true) = (&cfg.triples, cfg.frequencies_path().exists()) {
        let freqs = read_frequencies(&cfg.frequencies_path())?;
        let degrees = graph_degrees(triples).map_err(io_err(triples))?;
        let pairs: Vec<(u64, u64)> = freqs
            .iter()
            .map(|(id, &f)| (f, degrees.get(id).copied().unwrap_or(0)))
            .collect();
        let text = match log1p_correlations(&pairs) {
            Ok(r) => correlation_text(&r),
            Err(e) => format!("Corpus frequency vs. graph degree: not computed ({e})\n"),
        };
        let path = dir.join("correlation.txt");
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Runs a parsed command line, printing results to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.overrides)?;
    match cli.command {
        Command::Index(IndexCommand::Build) => {
            let r = cmd_index_build(&cfg)?;
            println!(
                "{} shards built, {} reused; manifest {}",
                r.shards_built,
                r.shards_reused,
                r.manifest_path.display()
            );
        }
        Command::Index(IndexCommand::Count { pattern }) => {
            let (n, t) = cmd_count(&cfg, &pattern)?;
            println!("{n}\t{:.3} ms", t.as_secs_f64() * 1e3);
        }
        Command::Freq(FreqCommand::Compute) => {
            println!("{}", cmd_freq_compute(&cfg)?.display());
        }
        Command::Dataset(DatasetCommand::Build) => {
            print!("{}", cmd_dataset_build(&cfg)?);
        }
        Command::Probe(ProbeCommand::Run) => {
            let s = cmd_probe(&cfg)?;
            println!("{} pairs over {} cell/template runs", s.pairs, s.cells);
        }
        Command::Report => {
            for p in cmd_report(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
