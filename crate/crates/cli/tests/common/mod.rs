#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use llmdr::{Cell, Feature, FeatureKind, MixedTable, Schema, SchemaDescriptor};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Every coordinate on its own separates all four clusters, so rows that
/// keep a single observed feature after masking still cannot bridge two
/// clusters under Gower distance.
pub const CENTERS: [[f64; 3]; 4] = [[0.0, 30.0, 10.0], [10.0, 0.0, 30.0], [20.0, 20.0, 0.0], [30.0, 10.0, 20.0]];

/// Four well-separated clusters in (x, y, z) with a `label` column that is
/// the cluster name. Cluster sizes are unequal so the marginal mode is not a
/// coin flip.
pub fn planted(sizes: [usize; 4], seed: u64) -> MixedTable {
    let mut rng = Pcg64::seed_from_u64(seed);
    let schema = Schema::new(vec![
        Feature::new("x", FeatureKind::Numeric),
        Feature::new("y", FeatureKind::Numeric),
        Feature::new("z", FeatureKind::Numeric),
        Feature::new("label", FeatureKind::Categorical),
    ])
    .unwrap();
    let mut rows = Vec::new();
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let mut row: Vec<Cell> = CENTERS[c]
                .iter()
                .map(|v| Cell::Number(v + rng.random_range(-0.5..0.5)))
                .collect();
            row.push(Cell::text(format!("c{c}")));
            rows.push(row);
        }
    }
    MixedTable::new(schema, rows).unwrap()
}

/// Three-feature table (two numeric, one categorical) with six groups, each
/// feature separating every pair of groups.
pub fn three_feature(n: usize, seed: u64) -> MixedTable {
    const CITIES: [&str; 6] = ["Oslo", "Lima", "Pune", "Kyiv", "Rome", "Baku"];
    let mut rng = Pcg64::seed_from_u64(seed);
    let schema = Schema::new(vec![
        Feature::new("Age", FeatureKind::Numeric),
        Feature::new("Income", FeatureKind::Numeric),
        Feature::new("City", FeatureKind::Categorical),
    ])
    .unwrap();
    let rows = (0..n)
        .map(|i| {
            let g = i % CITIES.len();
            vec![
                Cell::Number(18.0 + 12.0 * g as f64 + rng.random_range(-0.5..0.5)),
                Cell::Number(20_000.0 + 15_000.0 * g as f64 + rng.random_range(-200.0..200.0)),
                Cell::text(CITIES[g]),
            ]
        })
        .collect();
    MixedTable::new(schema, rows).unwrap()
}

/// Random mixed table with 2 to 4 latent groups, 2 to 5 features of random
/// kinds (at least one numeric), and 20 to 60 rows.
pub fn random_mixed(rng: &mut Pcg64) -> MixedTable {
    let n_features = rng.random_range(2..=5);
    let mut features = vec![Feature::new("f0", FeatureKind::Numeric)];
    for i in 1..n_features {
        let kind = match rng.random_range(0..3) {
            0 => FeatureKind::Numeric,
            1 => FeatureKind::Categorical,
            _ => FeatureKind::Text,
        };
        features.push(Feature::new(format!("f{i}"), kind));
    }
    let groups = rng.random_range(2..=4);
    let n = rng.random_range(20..=60);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let g = rng.random_range(0..groups);
        let row = features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric => Cell::Number(g as f64 * 10.0 + rng.random_range(-1.0..1.0)),
                FeatureKind::Categorical => {
                    let v = if rng.random_bool(0.9) { g } else { rng.random_range(0..groups) };
                    Cell::text(format!("k{v}"))
                }
                FeatureKind::Text => {
                    let v = if rng.random_bool(0.9) { g } else { rng.random_range(0..groups) };
                    Cell::text(format!("note {v}"))
                }
            })
            .collect();
        rows.push(row);
    }
    MixedTable::new(Schema::new(features).unwrap(), rows).unwrap()
}

/// Writes `table` as CSV plus a schema descriptor and returns both paths.
pub fn write_dataset(dir: &Path, table: &MixedTable) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let schema = dir.join("schema.json");
    table.write_csv(fs::File::create(&data).unwrap(), "NULL").unwrap();
    let descriptor = SchemaDescriptor::new(table.schema().features().to_vec());
    fs::write(&schema, serde_json::to_string_pretty(&descriptor).unwrap()).unwrap();
    (data, schema)
}
