//! Controlled missingness injection with retained ground truth.
//!
//! Randomness comes from `rand_pcg::Pcg64` (PCG XSL RR 128/64) seeded with
//! `Pcg64::seed_from_u64(seed)`, drawing one `f64` in `[0, 1)` per eligible
//! cell in (target feature order, ascending row) order. A cell is masked when
//! its draw is strictly below its masking probability.
//!
//! * MCAR: probability `rate` for every eligible cell.
//! * MAR: probability `2 * rate * rank / (n - 1)`, clamped to `[0, 1]`, where
//!   `rank` is the 0-based rank of the row's conditioning value among the `n`
//!   rows where that value is present. Tied values share their mid-rank.
//!   Rows whose conditioning value is missing use `rate`.
//! * MNAR: the same construction ranked on the cell's own value among the
//!   present cells of its feature.
//!
//! The mean rank is `(n - 1) / 2`, so before clamping the expected masked
//! fraction equals `rate`. The rate applies to each target feature
//! independently.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::table::{Cell, MixedTable, TableError};

#[derive(Debug, thiserror::Error)]
pub enum MissingnessError {
    #[error("missing rate {0} outside (0, 1]")]
    Rate(f64),
    #[error("no target features given")]
    NoTargets,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("target feature {0:?} listed twice")]
    DuplicateTarget(String),
    #[error("MAR conditioning feature {0:?} is also a target feature")]
    ConditioningIsTarget(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar { conditioning_feature: String },
    Mnar,
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar { .. } => "mar",
            Mechanism::Mnar => "mnar",
        }
    }
}

/// Position of a single table cell, addressed by feature name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub row: usize,
    pub feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessExperiment {
    pub masked: MixedTable,
    /// Original values of every cell masked by injection. Cells that were
    /// already missing in the source table never appear here.
    #[serde(with = "truth_serde")]
    pub truth: BTreeMap<CellKey, Cell>,
    pub rate: f64,
    pub mechanism: Mechanism,
    pub target_features: Vec<String>,
    pub seed: u64,
}

impl MissingnessExperiment {
    /// Puts the held-out values back, reproducing the source table.
    pub fn restore(&self) -> MixedTable {
        let schema = self.masked.schema();
        let updates = self.truth.iter().map(|(key, cell)| {
            let c = schema.index_of(&key.feature).expect("truth keys come from the schema");
            (key.row, c, cell.clone())
        });
        self.masked
            .with_cells(updates)
            .expect("restoring original cells keeps the table valid")
    }

    pub fn masked_count(&self) -> usize {
        self.truth.len()
    }
}

mod truth_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        row: usize,
        feature: String,
        value: Cell,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<CellKey, Cell>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(k, v)| Entry {
            row: k.row,
            feature: k.feature.clone(),
            value: v.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<CellKey, Cell>, D::Error> {
        let entries: Vec<Entry> = Vec::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| {
                (
                    CellKey {
                        row: e.row,
                        feature: e.feature,
                    },
                    e.value,
                )
            })
            .collect())
    }
}

/// Masks cells of `target_features` according to `mechanism`; see the module
/// docs for the exact generator.
pub fn inject(
    table: &MixedTable,
    rate: f64,
    mechanism: &Mechanism,
    target_features: &[String],
    seed: u64,
) -> Result<MissingnessExperiment, MissingnessError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(MissingnessError::Rate(rate));
    }
    if target_features.is_empty() {
        return Err(MissingnessError::NoTargets);
    }
    let schema = table.schema();
    let mut targets = Vec::with_capacity(target_features.len());
    for name in target_features {
        let idx = schema
            .index_of(name)
            .ok_or_else(|| MissingnessError::UnknownFeature(name.clone()))?;
        if targets.contains(&idx) {
            return Err(MissingnessError::DuplicateTarget(name.clone()));
        }
        targets.push(idx);
    }
    let conditioning_ranks = match mechanism {
        Mechanism::Mar {
            conditioning_feature,
        } => {
            let c = schema
                .index_of(conditioning_feature)
                .ok_or_else(|| MissingnessError::UnknownFeature(conditioning_feature.clone()))?;
            if targets.contains(&c) {
                return Err(MissingnessError::ConditioningIsTarget(conditioning_feature.clone()));
            }
            Some(rank_probabilities(table, c, rate))
        }
        _ => None,
    };

    let mut rng = Pcg64::seed_from_u64(seed);
    let mut truth = BTreeMap::new();
    let mut updates = Vec::new();
    for &f in &targets {
        let probs: Vec<f64> = match mechanism {
            Mechanism::Mcar => vec![rate; table.n_rows()],
            Mechanism::Mar { .. } => conditioning_ranks.clone().expect("computed above"),
            Mechanism::Mnar => rank_probabilities(table, f, rate),
        };
        let name = &schema.feature(f).name;
        for (r, p) in probs.iter().enumerate() {
            let cell = table.cell(r, f);
            if cell.is_missing() {
                continue;
            }
            let draw: f64 = rng.random();
            if draw < *p {
                truth.insert(
                    CellKey {
                        row: r,
                        feature: name.clone(),
                    },
                    cell.clone(),
                );
                updates.push((r, f, Cell::Missing));
            }
        }
    }
    let masked = table.with_cells(updates)?;
    Ok(MissingnessExperiment {
        masked,
        truth,
        rate,
        mechanism: mechanism.clone(),
        target_features: target_features.to_vec(),
        seed,
    })
}

/// Per-row masking probabilities from the mid-rank of feature `f`'s present
/// values; rows with `f` missing get `rate`.
fn rank_probabilities(table: &MixedTable, f: usize, rate: f64) -> Vec<f64> {
    let mut present: Vec<(usize, &Cell)> = table
        .column(f)
        .enumerate()
        .filter(|(_, c)| c.is_present())
        .collect();
    present.sort_by(|a, b| compare_cells(a.1, b.1).then(a.0.cmp(&b.0)));
    let n = present.len();
    let mut probs = vec![rate; table.n_rows()];
    if n < 2 {
        return probs;
    }
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && compare_cells(present[start].1, present[end].1).is_eq() {
            end += 1;
        }
        let mid_rank = (start + end - 1) as f64 / 2.0;
        let p = (2.0 * rate * mid_rank / (n - 1) as f64).clamp(0.0, 1.0);
        for &(row, _) in &present[start..end] {
            probs[row] = p;
        }
        start = end;
    }
    probs
}

fn compare_cells(a: &Cell, b: &Cell) -> std::cmp::Ordering {
    match (a, b) {
        (Cell::Number(x), Cell::Number(y)) => x.total_cmp(y),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        _ => std::cmp::Ordering::Equal,
    }
}
