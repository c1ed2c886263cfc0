//! Imputation quality metrics over predicted/true cell pairs: exact-match
//! accuracy, KS complement, SMAPE, and MSE, plus mean/median/std summaries
//! across features.
//!
//! Categorical and text values are mapped to integers with
//! [`CategoryCodes`] before the three numeric metrics are computed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::table::{CategoryCodes, Cell, FeatureKind};

/// Numeric values closer than this count as an exact match.
pub const EXACT_MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("series is empty")]
    Empty,
    #[error("predicted and true lists differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("cell {0} cannot be scored as {1:?}")]
    Kind(Cell, FeatureKind),
}

/// How the KS complement treats categorical and text features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoricalKs {
    /// Two-sample KS over category codes.
    #[default]
    Codes,
    /// One minus the total variation distance between the two category
    /// distributions.
    Tvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPairSeries {
    pub feature: String,
    pub kind: FeatureKind,
    pub predicted: Vec<Cell>,
    pub truth: Vec<Cell>,
}

impl CellPairSeries {
    pub fn new(feature: impl Into<String>, kind: FeatureKind, predicted: Vec<Cell>, truth: Vec<Cell>) -> Result<Self, MetricError> {
        if predicted.len() != truth.len() {
            return Err(MetricError::Length(predicted.len(), truth.len()));
        }
        if predicted.is_empty() {
            return Err(MetricError::Empty);
        }
        for c in predicted.iter().chain(&truth) {
            if c.is_missing() || !c.fits(kind) {
                return Err(MetricError::Kind(c.clone(), kind));
            }
        }
        Ok(CellPairSeries {
            feature: feature.into(),
            kind,
            predicted,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    /// Numeric view of both lists. Text values are encoded with `codes`,
    /// extended with any unseen values.
    pub fn encoded(&self, codes: &CategoryCodes) -> (Vec<f64>, Vec<f64>) {
        if self.kind.is_numeric() {
            let f = |c: &Cell| c.as_f64().expect("validated numeric");
            return (self.predicted.iter().map(f).collect(), self.truth.iter().map(f).collect());
        }
        let mut codes = codes.clone();
        codes.extend(self.predicted.iter().chain(&self.truth).filter_map(Cell::as_str));
        let f = |c: &Cell| codes.get(c.as_str().expect("validated text")).expect("extended above") as f64;
        (self.predicted.iter().map(f).collect(), self.truth.iter().map(f).collect())
    }
}

fn cells_match(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => (x - y).abs() <= EXACT_MATCH_TOLERANCE,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => false,
    }
}

/// Percentage of exact matches.
pub fn accuracy(series: &CellPairSeries) -> Result<f64, MetricError> {
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = series
        .predicted
        .iter()
        .zip(&series.truth)
        .filter(|(p, t)| cells_match(p, t))
        .count();
    Ok(100.0 * hits as f64 / series.len() as f64)
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut gap: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        // step past every copy of the smallest remaining value in both lists
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        gap = gap.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(gap.clamp(0.0, 1.0))
}

/// `1 - KS` on the given numeric encoding.
pub fn ks_complement_values(predicted: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    Ok(1.0 - ks_statistic(predicted, truth)?)
}

pub fn ks_complement(series: &CellPairSeries, codes: &CategoryCodes, mode: CategoricalKs) -> Result<f64, MetricError> {
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    if !series.kind.is_numeric() && mode == CategoricalKs::Tvd {
        return Ok(tvd_complement(&series.predicted, &series.truth));
    }
    let (p, t) = series.encoded(codes);
    ks_complement_values(&p, &t)
}

fn tvd_complement(a: &[Cell], b: &[Cell]) -> f64 {
    let mut mass: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for c in a {
        mass.entry(c.as_str().unwrap_or_default()).or_default().0 += 1.0 / a.len() as f64;
    }
    for c in b {
        mass.entry(c.as_str().unwrap_or_default()).or_default().1 += 1.0 / b.len() as f64;
    }
    let tvd = 0.5 * mass.values().map(|(p, q)| (p - q).abs()).sum::<f64>();
    (1.0 - tvd).clamp(0.0, 1.0)
}

/// Mean of `|p - a| / ((|p| + |a|) / 2)`; pairs with `|p| + |a| = 0`
/// contribute zero.
pub fn smape_values(predicted: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(predicted, truth)?;
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, a)| {
            let denom = (p.abs() + a.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (p - a).abs() / denom
            }
        })
        .sum();
    Ok(total / predicted.len() as f64)
}

pub fn mse_values(predicted: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(predicted, truth)?;
    let total: f64 = predicted.iter().zip(truth).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(total / predicted.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn smape(series: &CellPairSeries, codes: &CategoryCodes) -> Result<f64, MetricError> {
    let (p, t) = series.encoded(codes);
    smape_values(&p, &t)
}

pub fn mse(series: &CellPairSeries, codes: &CategoryCodes) -> Result<f64, MetricError> {
    let (p, t) = series.encoded(codes);
    mse_values(&p, &t)
}

/// Metrics for one feature at one missing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub feature: String,
    /// Number of scored cells.
    pub n: usize,
    pub accuracy_pct: f64,
    pub ks_complement: f64,
    pub smape: f64,
    pub mse: f64,
}

pub fn score(series: &CellPairSeries, codes: &CategoryCodes, mode: CategoricalKs) -> Result<MetricRow, MetricError> {
    Ok(MetricRow {
        feature: series.feature.clone(),
        n: series.len(),
        accuracy_pct: accuracy(series)?,
        ks_complement: ks_complement(series, codes, mode)?,
        smape: smape(series, codes)?,
        mse: mse(series, codes)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AccuracyPct,
    KsComplement,
    Smape,
    Mse,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::AccuracyPct, Metric::KsComplement, Metric::Smape, Metric::Mse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AccuracyPct => "accuracy_pct",
            Metric::KsComplement => "ks_complement",
            Metric::Smape => "smape",
            Metric::Mse => "mse",
        }
    }

    pub fn of(self, row: &MetricRow) -> f64 {
        match self {
            Metric::AccuracyPct => row.accuracy_pct,
            Metric::KsComplement => row.ks_complement,
            Metric::Smape => row.smape,
            Metric::Mse => row.mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation (divides by n).
    pub std: f64,
}

pub fn summarize_values(values: &[f64]) -> Result<Summary, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Summary {
        mean,
        median,
        std: var.sqrt(),
    })
}

/// Mean, median, and population std of each metric across feature rows.
pub fn summarize(rows: &[MetricRow]) -> Result<BTreeMap<Metric, Summary>, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::Empty);
    }
    Metric::ALL
        .iter()
        .map(|&m| {
            let values: Vec<f64> = rows.iter().map(|r| m.of(r)).collect();
            Ok((m, summarize_values(&values)?))
        })
        .collect()
}
