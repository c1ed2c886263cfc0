//! Gower distance over mixed records.
//!
//! Per-feature dissimilarity is `|a - b| / range` for numeric features and a
//! 0/1 mismatch indicator for categorical and text features. The distance is
//! the mean over features where both cells are present. With no comparable
//! feature the distance is `1.0`.
//!
//! The triangle inequality does not hold once missing cells shrink the set of
//! comparable features, so nothing downstream relies on it.

use rayon::prelude::*;

use crate::table::{Cell, MixedTable, Schema};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GowerError {
    #[error("record has {found} cells, schema has {expected} features")]
    Width { expected: usize, found: usize },
    #[error("feature {feature:?}: cells {a:?} and {b:?} do not match the feature kind")]
    Kind { feature: String, a: Cell, b: Cell },
}

/// Schema, numeric scales, and comparison flags for Gower distances.
///
/// Numeric terms are divided by the range width recorded in the schema, so a
/// context built from a normalized table (ranges `[0, 1]`) compares values
/// directly while one built from a raw table normalizes on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct GowerContext {
    schema: Schema,
    scales: Vec<f64>,
    fold_case: bool,
}

impl GowerContext {
    pub fn new(schema: &Schema) -> Self {
        let scales = (0..schema.len())
            .map(|i| schema.range(i).map_or(0.0, |r| r.width()))
            .collect();
        GowerContext {
            schema: schema.clone(),
            scales,
            fold_case: false,
        }
    }

    pub fn for_table(table: &MixedTable) -> Self {
        Self::new(table.schema())
    }

    /// Compare text and categorical values case-insensitively.
    pub fn with_case_folding(mut self, fold: bool) -> Self {
        self.fold_case = fold;
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn distance(&self, a: &[Cell], b: &[Cell]) -> Result<f64, GowerError> {
        self.distance_excluding(a, b, None)
    }

    /// Gower distance ignoring feature `skip`.
    pub fn distance_excluding(&self, a: &[Cell], b: &[Cell], skip: Option<usize>) -> Result<f64, GowerError> {
        let expected = self.schema.len();
        for r in [a, b] {
            if r.len() != expected {
                return Err(GowerError::Width {
                    expected,
                    found: r.len(),
                });
            }
        }
        let mut sum = 0.0;
        let mut comparable = 0usize;
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let term = match (x, y) {
                (Cell::Missing, _) | (_, Cell::Missing) => continue,
                (Cell::Number(x), Cell::Number(y)) if self.schema.feature(i).kind.is_numeric() => {
                    let scale = self.scales[i];
                    if scale > 0.0 {
                        ((x - y).abs() / scale).min(1.0)
                    } else if x == y {
                        0.0
                    } else {
                        1.0
                    }
                }
                (Cell::Text(x), Cell::Text(y)) if !self.schema.feature(i).kind.is_numeric() => {
                    let same = if self.fold_case {
                        x.to_lowercase() == y.to_lowercase()
                    } else {
                        x == y
                    };
                    if same {
                        0.0
                    } else {
                        1.0
                    }
                }
                _ => {
                    return Err(GowerError::Kind {
                        feature: self.schema.feature(i).name.clone(),
                        a: x.clone(),
                        b: y.clone(),
                    })
                }
            };
            sum += term;
            comparable += 1;
        }
        if comparable == 0 {
            Ok(1.0)
        } else {
            Ok((sum / comparable as f64).clamp(0.0, 1.0))
        }
    }
}

pub fn gower_distance(a: &[Cell], b: &[Cell], ctx: &GowerContext) -> Result<f64, GowerError> {
    ctx.distance(a, b)
}

/// Dense symmetric distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps row-major data without validation; see
    /// [`DistanceMatrix::validate`].
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "distance matrix must be n x n");
        DistanceMatrix { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), n, "distance matrix must be square");
                r.iter().copied()
            })
            .collect();
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Checks for exact symmetry, a zero diagonal, and entries in `[0, 1]`.
    pub fn validate(&self) -> Result<(), String> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(format!("diagonal entry ({i}, {i}) is {}", self.get(i, i)));
            }
            for j in 0..self.n {
                let d = self.get(i, j);
                if !(0.0..=1.0).contains(&d) {
                    return Err(format!("entry ({i}, {j}) = {d} outside [0, 1]"));
                }
                if d != self.get(j, i) {
                    return Err(format!("entries ({i}, {j}) and ({j}, {i}) differ"));
                }
            }
        }
        Ok(())
    }
}

/// All-pairs Gower distances. The upper triangle is computed in parallel by
/// row and mirrored, so the result is exactly symmetric.
pub fn pairwise_distances(table: &MixedTable, ctx: &GowerContext) -> Result<DistanceMatrix, GowerError> {
    let n = table.n_rows();
    let rows = table.rows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| ctx.distance(&rows[i], &rows[j]))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut data = vec![0.0; n * n];
    for (i, tail) in upper.iter().enumerate() {
        for (off, d) in tail.iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = *d;
            data[j * n + i] = *d;
        }
    }
    Ok(DistanceMatrix { n, data })
}
