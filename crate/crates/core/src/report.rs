//! Result tables: per-cell accuracies with McNemar significance, accuracy
//! ratios and the corpus/graph frequency correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::catalog::{BandScheme, FrequencyBand};
use crate::probe::PairedOutcome;
use crate::prompt::TemplateKind;
use crate::stats::{accuracies, accuracy_ratio, mcnemar, tabulate, ContingencyTable, CorrelationReport, McNemarResult};
use crate::triples::{CellId, Setting};

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateResult {
    pub table: ContingencyTable,
    /// `None` when the cell has no outcomes.
    pub accuracies: Option<(f64, f64)>,
    pub test: McNemarResult,
}

impl TemplateResult {
    pub fn from_outcomes(outcomes: &[PairedOutcome]) -> Self {
        let table = tabulate(outcomes);
        TemplateResult {
            table,
            accuracies: accuracies(&table).ok(),
            test: mcnemar(&table),
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        self.accuracies.and_then(|(f, b)| accuracy_ratio(f, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub cell: CellId,
    pub relation_name: String,
    pub total: usize,
    pub results: BTreeMap<TemplateKind, TemplateResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub templates: Vec<TemplateKind>,
    pub scheme: BandScheme,
    pub min_cell_size: usize,
    pub rows: Vec<CellRow>,
}

/// Display label of a band's range under `scheme`.
pub fn band_label(band: FrequencyBand, scheme: &BandScheme) -> String {
    let t = scheme.high_threshold;
    let compact = if t % 1000 == 0 { format!("{}K", t / 1000) } else { t.to_string() };
    match band {
        FrequencyBand::B10KTo100K => format!("10K-{compact}"),
        FrequencyBand::High => format!("≥{compact}"),
        b => b.range_label().to_string(),
    }
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.3}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn new(templates: Vec<TemplateKind>, scheme: BandScheme, min_cell_size: usize) -> Self {
        Report {
            templates,
            scheme,
            min_cell_size,
            rows: Vec::new(),
        }
    }

    /// Adds a cell. Templates missing from `outcomes` are shown as blanks.
    pub fn add_cell(
        &mut self,
        cell: CellId,
        relation_name: &str,
        total: usize,
        outcomes: &BTreeMap<TemplateKind, Vec<PairedOutcome>>,
    ) {
        let results = outcomes
            .iter()
            .map(|(k, o)| (*k, TemplateResult::from_outcomes(o)))
            .collect();
        self.rows.push(CellRow {
            cell,
            relation_name: relation_name.to_string(),
            total,
            results,
        });
    }

    /// Rows grouped by setting, keeping insertion order within a setting.
    fn blocks(&self) -> Vec<(Setting, Vec<&CellRow>)> {
        Setting::ALL
            .iter()
            .map(|&s| (s, self.rows.iter().filter(|r| r.cell.setting == s).collect::<Vec<_>>()))
            .filter(|(_, rows)| !rows.is_empty())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,relation_id,relation,low_freq,total");
        for t in &self.templates {
            let t = t.id();
            write!(out, ",{t}_forward,{t}_backward,{t}_diff,{t}_stat_sig").unwrap();
        }
        out.push('\n');
        for (setting, rows) in self.blocks() {
            for r in rows {
                write!(
                    out,
                    "{},{},{},{},{}",
                    setting.id(),
                    csv_field(&r.cell.relation_id),
                    csv_field(&r.relation_name),
                    band_label(r.cell.band, &self.scheme),
                    r.total
                )
                .unwrap();
                for t in &self.templates {
                    match r.results.get(t) {
                        Some(TemplateResult {
                            accuracies: Some((f, b)),
                            test,
                            ..
                        }) => write!(
                            out,
                            ",{},{},{},{}",
                            fmt_acc(*f),
                            fmt_acc(*b),
                            test.direction.arrow(),
                            test.significance
                        )
                        .unwrap(),
                        _ => out.push_str(",,,,"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Aligned plain-text table with one block per setting.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Option<Vec<String>>> = Vec::new();
        let mut block_titles: Vec<(usize, &'static str)> = Vec::new();
        let mut any_undefined = false;
        let mut any_small = false;

        let mut head = vec!["Relation".to_string(), "Low Freq.".into(), "Total".into()];
        for _ in &self.templates {
            head.extend(["Forward", "Backward", "Diff.", "Stat Sig."].map(String::from));
        }
        grid.push(Some(head));
        for (setting, rows) in self.blocks() {
            block_titles.push((grid.len(), setting.title()));
            grid.push(None);
            for r in rows {
                let mut total = r.total.to_string();
                if r.total < self.min_cell_size {
                    total.push('‡');
                    any_small = true;
                }
                let mut line = vec![r.relation_name.clone(), band_label(r.cell.band, &self.scheme), total];
                for t in &self.templates {
                    match r.results.get(t) {
                        Some(TemplateResult {
                            accuracies: Some((f, b)),
                            test,
                            ..
                        }) => {
                            let mut sig = test.significance.to_string();
                            if !test.defined {
                                sig.push('†');
                                any_undefined = true;
                            }
                            line.extend([fmt_acc(*f), fmt_acc(*b), test.direction.arrow().to_string(), sig]);
                        }
                        _ => line.extend(["-", "-", "-", "-"].map(String::from)),
                    }
                }
                grid.push(Some(line));
            }
        }

        let ncols = 3 + 4 * self.templates.len();
        let width = |s: &str| s.chars().count();
        let mut widths = vec![0; ncols];
        for row in grid.iter().flatten() {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(width(c));
            }
        }
        let gap = "  ";
        let sep = " | ";
        let render = |row: &[String]| {
            let mut s = String::new();
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    s.push_str(if i >= 3 && (i - 3) % 4 == 0 { sep } else { gap });
                }
                s.push_str(c);
                s.push_str(&" ".repeat(widths[i] - width(c)));
            }
            s.trim_end().to_string()
        };
        let line_width = widths.iter().sum::<usize>() + gap.len() * (ncols - 1) + self.templates.len();

        let mut out = String::new();
        // template titles over their column groups
        let mut titles = " ".repeat(widths[..3].iter().sum::<usize>() + 2 * gap.len());
        for (k, t) in self.templates.iter().enumerate() {
            let start = 3 + 4 * k;
            let group = widths[start..start + 4].iter().sum::<usize>() + 3 * gap.len();
            titles.push_str(sep);
            let title = t.title();
            titles.push_str(title);
            titles.push_str(&" ".repeat(group.saturating_sub(width(title))));
        }
        out.push_str(titles.trim_end());
        out.push('\n');
        let rule = "-".repeat(line_width);
        for (i, row) in grid.iter().enumerate() {
            match row {
                Some(cells) => {
                    out.push_str(&render(cells));
                    out.push('\n');
                    if i == 0 {
                        out.push_str(&rule);
                        out.push('\n');
                    }
                }
                None => {
                    let title = block_titles.iter().find(|(at, _)| *at == i).unwrap().1;
                    writeln!(out, "[{title}]").unwrap();
                }
            }
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str("Significance: *** p<0.001, ** p<0.01, * p<0.05, NS otherwise (McNemar, no continuity correction).\n");
        if any_undefined {
            out.push_str("† No discordant pairs; the test is undefined and reported as NS.\n");
        }
        if any_small {
            writeln!(out, "‡ Fewer than {} triples; the cell is underpowered.", self.min_cell_size).unwrap();
        }
        out
    }

    /// Forward/backward accuracy ratios, one line per cell and template.
    pub fn ratios_csv(&self) -> String {
        let mut out = String::from("setting,relation_id,relation,low_freq,template,forward,backward,ratio\n");
        for (setting, rows) in self.blocks() {
            for r in rows {
                for t in &self.templates {
                    let Some(res) = r.results.get(t) else { continue };
                    let Some((f, b)) = res.accuracies else { continue };
                    let ratio = res
                        .ratio()
                        .map(|x| format!("{x:.6}"))
                        .unwrap_or_else(|| "UNDEFINED".to_string());
                    writeln!(
                        out,
                        "{},{},{},{},{},{:.6},{:.6},{}",
                        setting.id(),
                        csv_field(&r.cell.relation_id),
                        csv_field(&r.relation_name),
                        band_label(r.cell.band, &self.scheme),
                        t.id(),
                        f,
                        b,
                        ratio
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// Full contingency tables and test statistics.
    pub fn mcnemar_csv(&self) -> String {
        let mut out = String::from(
            "setting,relation_id,band,template,total,n_tt,n_tf,n_ft,n_ff,chi_square,p_value,significance,direction,defined\n",
        );
        for (setting, rows) in self.blocks() {
            for r in rows {
                for t in &self.templates {
                    let Some(res) = r.results.get(t) else { continue };
                    let (c, m) = (&res.table, &res.test);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{:.6},{:.6e},{},{},{}",
                        setting.id(),
                        csv_field(&r.cell.relation_id),
                        r.cell.band.id(),
                        t.id(),
                        c.total(),
                        c.n_tt,
                        c.n_tf,
                        c.n_ft,
                        c.n_ff,
                        m.chi_square,
                        m.p_value,
                        m.significance,
                        serde_json::to_value(m.direction).unwrap().as_str().unwrap(),
                        m.defined
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// Writes `report.txt`, `report.csv`, `ratios.csv` and `mcnemar.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("report.txt", self.to_text()),
            ("report.csv", self.to_csv()),
            ("ratios.csv", self.ratios_csv()),
            ("mcnemar.csv", self.mcnemar_csv()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Number of triples each entity takes part in, read from a raw
/// `subject<TAB>relation<TAB>object` file without relation filtering.
pub fn graph_degrees(path: &Path) -> std::io::Result<BTreeMap<String, u64>> {
    let text = fs::read_to_string(path)?;
    let mut deg = BTreeMap::new();
    for line in text.lines() {
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            continue;
        }
        for e in [cols[0], cols[2]] {
            *deg.entry(e.to_string()).or_insert(0) += 1;
        }
    }
    Ok(deg)
}

pub fn correlation_text(r: &CorrelationReport) -> String {
    format!(
        "Corpus frequency vs. graph degree, {} entities, transform {}\nPearson r = {:.4}\nSpearman rho = {:.4}\n",
        r.n, r.transform, r.pearson_r, r.spearman_rho
    )
}
