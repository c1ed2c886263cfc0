//! Fusion of per-source recommendations into one recovered value.
//!
//! Categorical and text values are never invented: the winner is the value
//! whose proposals carry the largest summed confidence. Numeric proposals that
//! agree within a relative tolerance are merged (confidence-weighted mean by
//! default); otherwise the most confident proposal wins.
//!
//! Proposals are put into a canonical order before any arithmetic, so the
//! outcome never depends on the order they were passed in.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::recommend::Recommendation;
use crate::retrieval::Source;
use crate::table::{Cell, FeatureKind};

/// Below this mean magnitude the numeric tolerance is applied as an absolute
/// difference.
pub const NEAR_ZERO: f64 = 1e-9;

/// Relative slack used when comparing summed confidences for ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsensusError {
    #[error("no recommendations to fuse")]
    Empty,
    #[error("recommendation value {0} does not match the {1:?} target kind")]
    MixedKinds(Cell, FeatureKind),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("tolerance {0} must be a non-negative number")]
    Tolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericFusion {
    ConfidenceWeightedMean,
    HigherConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    PreferGlobal,
    PreferLocal,
}

impl TieBreak {
    fn preferred(self) -> Source {
        match self {
            TieBreak::PreferGlobal => Source::Global,
            TieBreak::PreferLocal => Source::Local,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPolicy {
    /// Relative agreement tolerance for numeric proposals.
    pub tau: f64,
    pub numeric_fusion: NumericFusion,
    pub tie_break: TieBreak,
}

impl Default for ConsensusPolicy {
    fn default() -> Self {
        ConsensusPolicy {
            tau: 0.05,
            numeric_fusion: NumericFusion::ConfidenceWeightedMean,
            tie_break: TieBreak::PreferGlobal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    Unanimous,
    ToleranceMerge,
    ConfidenceWin,
    TieBreak,
}

/// The part of a recommendation consensus needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub value: Cell,
    pub confidence: f64,
    pub source: Source,
}

impl Proposal {
    pub fn new(value: Cell, confidence: f64, source: Source) -> Self {
        Proposal {
            value,
            confidence,
            source,
        }
    }
}

impl From<&Recommendation> for Proposal {
    fn from(r: &Recommendation) -> Self {
        Proposal::new(r.value.clone(), r.confidence, r.source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub value: Cell,
    /// True when the proposals agreed (unanimous or within tolerance).
    pub agreed: bool,
    /// Sources whose proposals determined the value, deduplicated and sorted.
    pub sources: Vec<Source>,
    pub rationale: Rationale,
}

pub fn consensus(
    proposals: &[Proposal],
    kind: FeatureKind,
    policy: &ConsensusPolicy,
) -> Result<ConsensusResult, ConsensusError> {
    if proposals.is_empty() {
        return Err(ConsensusError::Empty);
    }
    if !(policy.tau >= 0.0 && policy.tau.is_finite()) {
        return Err(ConsensusError::Tolerance(policy.tau));
    }
    for p in proposals {
        if p.value.is_missing() || !p.value.fits(kind) {
            return Err(ConsensusError::MixedKinds(p.value.clone(), kind));
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(ConsensusError::Confidence(p.confidence));
        }
    }
    let mut sorted = proposals.to_vec();
    sorted.sort_by(canonical_order);
    if kind.is_numeric() {
        Ok(fuse_numeric(&sorted, policy))
    } else {
        Ok(fuse_categorical(&sorted, policy))
    }
}

/// Convenience form over full recommendations.
pub fn consensus_of(
    recs: &[Recommendation],
    kind: FeatureKind,
    policy: &ConsensusPolicy,
) -> Result<ConsensusResult, ConsensusError> {
    let proposals: Vec<Proposal> = recs.iter().map(Proposal::from).collect();
    consensus(&proposals, kind, policy)
}

fn canonical_order(a: &Proposal, b: &Proposal) -> Ordering {
    compare_values(&a.value, &b.value)
        .then(a.confidence.total_cmp(&b.confidence))
        .then(a.source.cmp(&b.source))
}

fn compare_values(a: &Cell, b: &Cell) -> Ordering {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => x.total_cmp(y),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        _ => Ordering::Equal,
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs())
}

fn unique_sources<'a>(it: impl IntoIterator<Item = &'a Proposal>) -> Vec<Source> {
    let mut s: Vec<Source> = it.into_iter().map(|p| p.source).collect();
    s.sort();
    s.dedup();
    s
}

fn fuse_categorical(sorted: &[Proposal], policy: &ConsensusPolicy) -> ConsensusResult {
    // groups of equal values; `sorted` is ordered by value so they are runs
    let mut groups: Vec<&[Proposal]> = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].value != sorted[start].value {
            groups.push(&sorted[start..i]);
            start = i;
        }
    }
    if groups.len() == 1 {
        return ConsensusResult {
            value: sorted[0].value.clone(),
            agreed: true,
            sources: unique_sources(sorted),
            rationale: Rationale::Unanimous,
        };
    }
    // within a group confidences are ascending, so the sum is order-free
    let totals: Vec<f64> = groups.iter().map(|g| g.iter().map(|p| p.confidence).sum()).collect();
    let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<usize> = (0..groups.len()).filter(|&g| nearly_equal(totals[g], best)).collect();
    let (winner, rationale) = if leaders.len() == 1 {
        (leaders[0], Rationale::ConfidenceWin)
    } else {
        let preferred = policy.tie_break.preferred();
        let pick = leaders
            .iter()
            .copied()
            .find(|&g| groups[g].iter().any(|p| p.source == preferred))
            .unwrap_or(leaders[0]);
        (pick, Rationale::TieBreak)
    };
    ConsensusResult {
        value: groups[winner][0].value.clone(),
        agreed: false,
        sources: unique_sources(groups[winner]),
        rationale,
    }
}

fn fuse_numeric(sorted: &[Proposal], policy: &ConsensusPolicy) -> ConsensusResult {
    let values: Vec<f64> = sorted.iter().map(|p| p.value.as_f64().expect("kind checked")).collect();
    let lo = values[0];
    let hi = values[values.len() - 1];
    if lo == hi {
        return ConsensusResult {
            value: Cell::Number(lo),
            agreed: true,
            sources: unique_sources(sorted),
            rationale: Rationale::Unanimous,
        };
    }
    let spread = hi - lo;
    let magnitude = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    let within = if magnitude < NEAR_ZERO {
        spread <= policy.tau
    } else {
        spread / magnitude <= policy.tau
    };
    if within {
        let value = match policy.numeric_fusion {
            NumericFusion::ConfidenceWeightedMean => {
                let total: f64 = sorted.iter().map(|p| p.confidence).sum();
                let mean = if total > 0.0 {
                    sorted.iter().zip(&values).map(|(p, v)| p.confidence * v).sum::<f64>() / total
                } else {
                    values.iter().sum::<f64>() / values.len() as f64
                };
                mean.clamp(lo, hi)
            }
            NumericFusion::HigherConfidence => {
                let (i, _) = most_confident(sorted, policy);
                values[i]
            }
        };
        return ConsensusResult {
            value: Cell::Number(value),
            agreed: true,
            sources: unique_sources(sorted),
            rationale: Rationale::ToleranceMerge,
        };
    }
    let (i, tied) = most_confident(sorted, policy);
    ConsensusResult {
        value: Cell::Number(values[i]),
        agreed: false,
        sources: vec![sorted[i].source],
        rationale: if tied { Rationale::TieBreak } else { Rationale::ConfidenceWin },
    }
}

/// Index of the most confident proposal and whether a tie had to be broken.
/// Ties go to the preferred source, then to the smallest value.
fn most_confident(sorted: &[Proposal], policy: &ConsensusPolicy) -> (usize, bool) {
    let best = sorted.iter().map(|p| p.confidence).fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<usize> = (0..sorted.len()).filter(|&i| nearly_equal(sorted[i].confidence, best)).collect();
    if leaders.len() == 1 {
        return (leaders[0], false);
    }
    let preferred = policy.tie_break.preferred();
    let pick = leaders
        .iter()
        .copied()
        .find(|&i| sorted[i].source == preferred)
        .unwrap_or(leaders[0]);
    // equal values among the leaders mean nothing was really decided
    let distinct = leaders.iter().any(|&i| sorted[i].value != sorted[leaders[0]].value);
    (pick, distinct)
}
