//! Synthetic corpus, catalog and triples with planted entity frequencies.
#![allow(dead_code)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

pub struct PlantSpec {
    pub high_entities: usize,
    /// Occurrences of the first high entity; later ones get a few more.
    pub high_freq: u64,
    pub high_threshold: u64,
    pub high_to_low: usize,
    pub low_to_high: usize,
    pub high_to_high: usize,
    pub seed: u64,
}

pub struct Planted {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub entities: PathBuf,
    pub triples: PathBuf,
    pub config: PathBuf,
    pub high_names: Vec<String>,
    pub low_names: Vec<String>,
}

// Fixed-width names so that no name occurs inside another.
pub fn high_name(i: usize) -> String {
    format!("Hent{i:05}q")
}

pub fn low_name(i: usize) -> String {
    format!("Lent{i:05}q")
}

pub fn low_freq(i: usize) -> u64 {
    (i as u64 * 7) % 200
}

fn repeat_lines(w: &mut impl Write, name: &str, count: u64) -> std::io::Result<()> {
    let per_line = 1000;
    let mut left = count;
    while left > 0 {
        let n = left.min(per_line);
        let mut line = String::with_capacity(n as usize * (name.len() + 1));
        for k in 0..n {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(name);
        }
        writeln!(w, "{line}")?;
        left -= n;
    }
    Ok(())
}

/// Writes the fixture under `root` together with a config that probes the
/// spouse relation in the 0-1K low band with the mock model.
pub fn plant(root: &Path, spec: &PlantSpec) -> Planted {
    fs::create_dir_all(root).unwrap();
    let n_low = spec.high_to_low + spec.low_to_high;
    let high_names: Vec<String> = (0..spec.high_entities).map(high_name).collect();
    let low_names: Vec<String> = (0..n_low).map(low_name).collect();
    assert!(spec.high_to_high <= spec.high_entities * (spec.high_entities - 1) / 2);

    let corpus = root.join("corpus.txt");
    {
        let mut w = BufWriter::new(File::create(&corpus).unwrap());
        writeln!(w, "A small corpus about people and places.").unwrap();
        for (i, n) in high_names.iter().enumerate() {
            repeat_lines(&mut w, n, spec.high_freq + i as u64).unwrap();
        }
        for (i, n) in low_names.iter().enumerate() {
            repeat_lines(&mut w, n, low_freq(i)).unwrap();
        }
        w.flush().unwrap();
    }

    let entities = root.join("entities.tsv");
    {
        let mut w = BufWriter::new(File::create(&entities).unwrap());
        writeln!(w, "entity_id\talias").unwrap();
        for (i, n) in high_names.iter().enumerate() {
            writeln!(w, "QH{i}\t{n}").unwrap();
        }
        for (i, n) in low_names.iter().enumerate() {
            writeln!(w, "QL{i}\t{n}").unwrap();
        }
        w.flush().unwrap();
    }

    let triples = root.join("triples.tsv");
    {
        let k = spec.high_entities;
        let mut w = BufWriter::new(File::create(&triples).unwrap());
        for j in 0..spec.high_to_low {
            writeln!(w, "QH{}\tP26\tQL{}", j % k, j).unwrap();
        }
        for j in 0..spec.low_to_high {
            writeln!(w, "QL{}\tP26\tQH{}", spec.high_to_low + j, (j * 3) % k).unwrap();
        }
        let mut pairs = 0;
        'outer: for a in 0..k {
            for b in a + 1..k {
                if pairs == spec.high_to_high {
                    break 'outer;
                }
                writeln!(w, "QH{a}\tP26\tQH{b}").unwrap();
                pairs += 1;
            }
        }
        w.flush().unwrap();
    }

    let config = root.join("config.json");
    let cfg = json!({
        "corpus": [corpus],
        "entities": entities,
        "triples": triples,
        "relation_filter": ["P26"],
        "low_bands": ["B0_1K"],
        "high_threshold": spec.high_threshold,
        "seed": spec.seed,
        "use_mock": true,
        "out": root.join("out"),
    });
    fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    Planted {
        root: root.to_path_buf(),
        corpus,
        entities,
        triples,
        config,
        high_names,
        low_names,
    }
}

/// Small fixture with the lowest permitted high threshold.
pub fn small_spec() -> PlantSpec {
    PlantSpec {
        high_entities: 6,
        high_freq: 10_002,
        high_threshold: 10_002,
        high_to_low: 12,
        low_to_high: 9,
        high_to_high: 15,
        seed: 11,
    }
}

/// Naive overlapping occurrence count.
pub fn naive_count(text: &[u8], pattern: &[u8]) -> u64 {
    if pattern.is_empty() || pattern.len() > text.len() {
        return 0;
    }
    text.windows(pattern.len()).filter(|w| *w == pattern).count() as u64
}
