//! Mixed-type tables: schema, cells, CSV ingestion, min-max normalization,
//! the bracketed record serialization used in recommender prompts, and
//! frequency-ranked category codes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Sentinels treated as missing when a descriptor does not list its own.
pub const DEFAULT_MISSING_SENTINELS: [&str; 2] = ["", "NULL"];

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed schema descriptor: {0}")]
    Descriptor(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("CSV header {found:?} does not match schema features {expected:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a finite number")]
    NumericParse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} cells, schema has {expected} features")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column:?}: {kind:?} feature holds a {found} cell")]
    CellKind {
        row: usize,
        column: String,
        kind: FeatureKind,
        found: &'static str,
    },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} is numeric; category codes need a categorical or text feature")]
    NotCategorical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    /// Free text. Compared and scored like a categorical value (whole-string
    /// identity) but kept distinct so prompts can treat it differently.
    Text,
}

impl FeatureKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, FeatureKind::Numeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Feature {
            name: name.into(),
            kind,
        }
    }
}

/// Observed `(min, max)` over the present cells of a numeric feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    pub min: f64,
    pub max: f64,
}

impl NumericRange {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Ordered features plus the numeric ranges observed in the table that owns
/// the schema. `ranges[i]` is `None` for non-numeric features and for numeric
/// features without a single present cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    features: Vec<Feature>,
    ranges: Vec<Option<NumericRange>>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(TableError::Schema("feature names must be non-empty".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(TableError::Schema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
        }
        let ranges = vec![None; features.len()];
        Ok(Schema { features, ranges })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, index: usize) -> &Feature {
        &self.features[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, TableError> {
        self.index_of(name)
            .ok_or_else(|| TableError::UnknownFeature(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn range(&self, index: usize) -> Option<NumericRange> {
        self.ranges[index]
    }
}

/// One table cell. Present values are either a finite number or a string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn is_present(&self) -> bool {
        !self.is_missing()
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Whether a present cell has the representation `kind` requires.
    /// Missing cells fit every kind.
    pub fn fits(&self, kind: FeatureKind) -> bool {
        match self {
            Cell::Missing => true,
            Cell::Number(v) => kind.is_numeric() && v.is_finite(),
            Cell::Text(_) => !kind.is_numeric(),
        }
    }

    fn variant_name(&self) -> &'static str {
        match self {
            Cell::Number(_) => "number",
            Cell::Text(_) => "text",
            Cell::Missing => "missing",
        }
    }
}

/// Renders present values as they appear in CSV output and prompts; missing
/// cells render as `NULL`. Numbers use the shortest representation that
/// parses back to the same `f64`.
impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Missing => f.write_str("NULL"),
        }
    }
}

pub type Record = Vec<Cell>;

/// A rectangular table whose rows align with `schema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTable {
    schema: Schema,
    rows: Vec<Record>,
}

impl MixedTable {
    /// Builds a table and computes numeric ranges from the present cells.
    pub fn new(schema: Schema, rows: Vec<Record>) -> Result<Self, TableError> {
        let width = schema.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(TableError::RowWidth {
                    row: r,
                    expected: width,
                    found: row.len(),
                });
            }
            for (c, cell) in row.iter().enumerate() {
                let feature = schema.feature(c);
                if !cell.fits(feature.kind) {
                    return Err(TableError::CellKind {
                        row: r,
                        column: feature.name.clone(),
                        kind: feature.kind,
                        found: cell.variant_name(),
                    });
                }
            }
        }
        let mut table = MixedTable { schema, rows };
        table.recompute_ranges();
        Ok(table)
    }

    fn recompute_ranges(&mut self) {
        let ranges = (0..self.schema.len())
            .map(|c| {
                if !self.schema.feature(c).kind.is_numeric() {
                    return None;
                }
                self.rows
                    .iter()
                    .filter_map(|row| row[c].as_f64())
                    .fold(None, |acc: Option<NumericRange>, v| {
                        Some(match acc {
                            None => NumericRange { min: v, max: v },
                            Some(r) => NumericRange {
                                min: r.min.min(v),
                                max: r.max.max(v),
                            },
                        })
                    })
            })
            .collect();
        self.schema.ranges = ranges;
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &Record {
        &self.rows[index]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, feature: usize) -> &Cell {
        &self.rows[row][feature]
    }

    pub fn column(&self, feature: usize) -> impl Iterator<Item = &Cell> {
        self.rows.iter().map(move |r| &r[feature])
    }

    /// Returns a copy with the given `(row, feature, cell)` replacements applied
    /// and ranges recomputed.
    pub fn with_cells<I>(&self, updates: I) -> Result<MixedTable, TableError>
    where
        I: IntoIterator<Item = (usize, usize, Cell)>,
    {
        let mut rows = self.rows.clone();
        for (r, c, cell) in updates {
            rows[r][c] = cell;
        }
        MixedTable::new(self.schema.clone(), rows)
    }

    /// SHA-256 over the CSV rendering, hex encoded. Used to tie audit logs to
    /// the exact table a stage consumed.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        // Writing to a Vec cannot fail.
        self.write_csv(&mut buf, "NULL")
            .expect("in-memory CSV write");
        hasher.update(&buf);
        hex(&hasher.finalize())
    }

    /// Writes the table as RFC-4180 CSV with a header row. Missing cells are
    /// written as `missing`.
    pub fn write_csv<W: Write>(&self, out: W, missing: &str) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.names())?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Missing => missing.to_string(),
                other => other.to_string(),
            }))?;
        }
        w.flush().map_err(|e| TableError::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON schema descriptor accompanying a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub features: Vec<Feature>,
    #[serde(default = "default_sentinels")]
    pub missing_sentinels: Vec<String>,
}

fn default_sentinels() -> Vec<String> {
    DEFAULT_MISSING_SENTINELS.iter().map(|s| s.to_string()).collect()
}

impl SchemaDescriptor {
    pub fn new(features: Vec<Feature>) -> Self {
        SchemaDescriptor {
            features,
            missing_sentinels: default_sentinels(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_reader(file)?)
    }

    /// The sentinel used when writing missing cells back out.
    pub fn primary_sentinel(&self) -> &str {
        self.missing_sentinels.first().map_or("", String::as_str)
    }
}

/// Loads a CSV file described by a JSON schema descriptor.
pub fn load_csv(path: impl AsRef<Path>, schema_descriptor: impl AsRef<Path>) -> Result<MixedTable, TableError> {
    let descriptor = SchemaDescriptor::from_path(schema_descriptor)?;
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, &descriptor)
}

/// Parses CSV from any reader. The header must list the descriptor's features
/// in the same order. Row numbers in errors are 1-based data rows.
pub fn read_csv<R: Read>(input: R, descriptor: &SchemaDescriptor) -> Result<MixedTable, TableError> {
    let schema = Schema::new(descriptor.features.clone())?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = schema.names().map(str::to_string).collect();
    if header != expected {
        return Err(TableError::HeaderMismatch {
            expected,
            found: header,
        });
    }
    let sentinels: HashSet<&str> = descriptor
        .missing_sentinels
        .iter()
        .map(String::as_str)
        .collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.len() != schema.len() {
            return Err(TableError::RowWidth {
                row: row_no,
                expected: schema.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(schema.len());
        for (raw, feature) in record.iter().zip(schema.features()) {
            if sentinels.contains(raw) {
                row.push(Cell::Missing);
                continue;
            }
            let cell = match feature.kind {
                FeatureKind::Numeric => {
                    let v: f64 = raw.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(
                        || TableError::NumericParse {
                            row: row_no,
                            column: feature.name.clone(),
                            value: raw.to_string(),
                        },
                    )?;
                    Cell::Number(v)
                }
                FeatureKind::Categorical | FeatureKind::Text => Cell::Text(raw.to_string()),
            };
            row.push(cell);
        }
        rows.push(row);
    }
    MixedTable::new(schema, rows)
}

/// Min-max rescales every present numeric cell to `[0, 1]` using the
/// table's own ranges. Constant columns map to `0.0`; other cells are left
/// untouched.
pub fn normalize(table: &MixedTable) -> MixedTable {
    let schema = table.schema();
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, cell)| match (cell, schema.range(c)) {
                    (Cell::Number(v), Some(range)) => {
                        let width = range.width();
                        if width > 0.0 {
                            Cell::Number(((v - range.min) / width).clamp(0.0, 1.0))
                        } else {
                            Cell::Number(0.0)
                        }
                    }
                    (other, _) => other.clone(),
                })
                .collect()
        })
        .collect();
    let mut out = MixedTable {
        schema: schema.clone(),
        rows,
    };
    out.recompute_ranges();
    out
}

/// `[Name: value; Name: value]` in schema order, missing cells as `NULL`.
///
/// Injective per schema as long as no value contains `"; "` or `": "`.
pub fn serialize_record(row: &[Cell], schema: &Schema) -> String {
    let body: Vec<String> = schema
        .features()
        .iter()
        .zip(row)
        .map(|(f, cell)| format!("{}: {}", f.name, cell))
        .collect();
    format!("[{}]", body.join("; "))
}

/// Integer codes for the categories of one categorical or text feature:
/// most frequent first, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCodes {
    codes: BTreeMap<String, usize>,
}

impl CategoryCodes {
    /// Codes from an arbitrary bag of values.
    pub fn from_values<'a, I: IntoIterator<Item = &'a str>>(values: I) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in values {
            *counts.entry(v).or_default() += 1;
        }
        let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let codes = ordered
            .into_iter()
            .enumerate()
            .map(|(code, (v, _))| (v.to_string(), code))
            .collect();
        CategoryCodes { codes }
    }

    pub fn get(&self, value: &str) -> Option<usize> {
        self.codes.get(value).copied()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Assigns codes to values not seen yet, continuing after the current
    /// maximum in lexicographic order of the new values.
    pub fn extend<'a, I: IntoIterator<Item = &'a str>>(&mut self, values: I) {
        let fresh: std::collections::BTreeSet<&str> = values
            .into_iter()
            .filter(|v| !self.codes.contains_key(*v))
            .collect();
        for (next, v) in (self.codes.len()..).zip(fresh) {
            self.codes.insert(v.to_string(), next);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.codes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn into_map(self) -> BTreeMap<String, usize> {
        self.codes
    }
}

pub fn category_codes(table: &MixedTable, feature: &str) -> Result<CategoryCodes, TableError> {
    let idx = table.schema().require(feature)?;
    if table.schema().feature(idx).kind.is_numeric() {
        return Err(TableError::NotCategorical(feature.to_string()));
    }
    Ok(CategoryCodes::from_values(
        table.column(idx).filter_map(Cell::as_str),
    ))
}
