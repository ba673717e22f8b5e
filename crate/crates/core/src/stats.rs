//! Paired recognition statistics: contingency tables, McNemar's test,
//! accuracy ratios and log-count correlations.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::probe::PairedOutcome;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no paired outcomes")]
    EmptyInput,
    #[error("at least two observations are needed, got {0}")]
    TooFewObservations(usize),
    #[error("one coordinate has zero variance")]
    DegenerateVariance,
}

/// Forward/backward recognition counts. `n_tf` is recognized forward only,
/// `n_ft` backward only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n_tt: u64,
    pub n_tf: u64,
    pub n_ft: u64,
    pub n_ff: u64,
}

impl ContingencyTable {
    pub fn new(n_tt: u64, n_tf: u64, n_ft: u64, n_ff: u64) -> Self {
        ContingencyTable { n_tt, n_tf, n_ft, n_ff }
    }

    pub fn total(&self) -> u64 {
        self.n_tt + self.n_tf + self.n_ft + self.n_ff
    }

    pub fn discordant(&self) -> u64 {
        self.n_tf + self.n_ft
    }

    pub fn add(&mut self, forward: bool, backward: bool) {
        match (forward, backward) {
            (true, true) => self.n_tt += 1,
            (true, false) => self.n_tf += 1,
            (false, true) => self.n_ft += 1,
            (false, false) => self.n_ff += 1,
        }
    }
}

pub fn tabulate<'a>(pairs: impl IntoIterator<Item = &'a PairedOutcome>) -> ContingencyTable {
    let mut t = ContingencyTable::default();
    for p in pairs {
        t.add(p.forward_recognized, p.backward_recognized);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "***")]
    P001,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "NS")]
    NotSignificant,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Significance::P001
        } else if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::NotSignificant
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Significance::P001 => "***",
            Significance::P01 => "**",
            Significance::P05 => "*",
            Significance::NotSignificant => "NS",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Favoured {
    ForwardFavoured,
    BackwardFavoured,
    Tie,
}

impl Favoured {
    pub fn arrow(self) -> &'static str {
        match self {
            Favoured::ForwardFavoured => "↑",
            Favoured::BackwardFavoured => "↓",
            Favoured::Tie => "=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub chi_square: f64,
    pub p_value: f64,
    pub significance: Significance,
    pub direction: Favoured,
    /// False when there are no discordant pairs.
    pub defined: bool,
}

/// Upper tail of the chi-squared distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

/// McNemar's test without continuity correction.
pub fn mcnemar(table: &ContingencyTable) -> McNemarResult {
    let direction = match table.n_tf.cmp(&table.n_ft) {
        std::cmp::Ordering::Greater => Favoured::ForwardFavoured,
        std::cmp::Ordering::Less => Favoured::BackwardFavoured,
        std::cmp::Ordering::Equal => Favoured::Tie,
    };
    let d = table.discordant();
    if d == 0 {
        return McNemarResult {
            chi_square: 0.0,
            p_value: 1.0,
            significance: Significance::NotSignificant,
            direction,
            defined: false,
        };
    }
    let diff = table.n_tf.abs_diff(table.n_ft) as f64;
    let chi_square = diff * diff / d as f64;
    let p_value = chi2_1_sf(chi_square);
    McNemarResult {
        chi_square,
        p_value,
        significance: Significance::from_p(p_value),
        direction,
        defined: true,
    }
}

/// Forward and backward recognition accuracy.
pub fn accuracies(table: &ContingencyTable) -> Result<(f64, f64), StatsError> {
    let total = table.total();
    if total == 0 {
        return Err(StatsError::EmptyInput);
    }
    let t = total as f64;
    Ok(((table.n_tt + table.n_tf) as f64 / t, (table.n_tt + table.n_ft) as f64 / t))
}

/// Forward over backward accuracy; `None` when backward accuracy is zero.
pub fn accuracy_ratio(forward_acc: f64, backward_acc: f64) -> Option<f64> {
    if backward_acc == 0.0 {
        None
    } else {
        Some(forward_acc / backward_acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
    pub transform: &'static str,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    assert_eq!(xs.len(), ys.len(), "coordinate lengths differ");
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn mean_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    pearson(&mean_ranks(xs), &mean_ranks(ys))
}

/// Pearson and Spearman correlation of `ln(x + 1)`-transformed counts.
pub fn log1p_correlations(pairs: &[(u64, u64)]) -> Result<CorrelationReport, StatsError> {
    let xs: Vec<f64> = pairs.iter().map(|&(a, _)| (a as f64).ln_1p()).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, b)| (b as f64).ln_1p()).collect();
    Ok(CorrelationReport {
        pearson_r: pearson(&xs, &ys)?,
        spearman_rho: spearman(&xs, &ys)?,
        n: pairs.len(),
        transform: "log(x+1)",
    })
}
