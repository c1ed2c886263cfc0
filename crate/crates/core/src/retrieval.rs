//! Retrieval over the effective samples and recommender prompt assembly.
//!
//! Ranking is exact top-k under Gower similarity (`1 - distance`) computed on
//! every feature except the one being recovered. Samples that lack the target
//! value are dropped before ranking.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gower::{GowerContext, GowerError};
use crate::table::{hex, serialize_record, Cell, MixedTable, Record, Schema};

/// The prompt template shipped with the crate.
pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../templates/prompt_v1.txt");
pub const DEFAULT_PROMPT_TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("the {0} sample set is empty")]
    EmptyIndex(Source),
    #[error("sample row {row} out of range for a {n}-row table")]
    RowOutOfRange { row: usize, n: usize },
    #[error("unknown target feature {0:?}")]
    UnknownTarget(String),
    #[error("query already has a value for {0:?}")]
    TargetPresent(String),
    #[error("no {set} sample has a value for {target:?}")]
    NothingToRetrieve { set: Source, target: String },
    #[error("top-k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Gower(#[from] GowerError),
    #[error("cannot read prompt template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt template lacks the {0} placeholder")]
    TemplatePlaceholder(&'static str),
}

/// Which effective-sample set an index or recommender draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Local effective samples: the cluster medoids.
    Local,
    /// Global effective samples: medoids plus their nearest neighbours.
    Global,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Local => "local",
            Source::Global => "global",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    source: Source,
    rows: Vec<usize>,
    records: Vec<Record>,
    ctx: GowerContext,
}

pub fn build_index(
    samples: &[usize],
    table: &MixedTable,
    ctx: &GowerContext,
    source: Source,
) -> Result<RetrievalIndex, RetrievalError> {
    if samples.is_empty() {
        return Err(RetrievalError::EmptyIndex(source));
    }
    let records = samples
        .iter()
        .map(|&r| {
            if r < table.n_rows() {
                Ok(table.row(r).clone())
            } else {
                Err(RetrievalError::RowOutOfRange { row: r, n: table.n_rows() })
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(RetrievalIndex {
        source,
        rows: samples.to_vec(),
        records,
        ctx: ctx.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub row: usize,
    pub similarity: f64,
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub source: Source,
    pub target_feature: String,
    /// Non-increasing similarity, ties by ascending row.
    pub hits: Vec<Hit>,
    pub query_fingerprint: String,
}

impl RetrievedSet {
    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn rows(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.row).collect()
    }

    pub fn mean_similarity(&self) -> f64 {
        if self.hits.is_empty() {
            return 0.0;
        }
        self.hits.iter().map(|h| h.similarity).sum::<f64>() / self.hits.len() as f64
    }
}

pub fn query_fingerprint(query: &[Cell], schema: &Schema) -> String {
    let digest = Sha256::digest(serialize_record(query, schema).as_bytes());
    hex(&digest[..8])
}

impl RetrievalIndex {
    pub fn source(&self) -> Source {
        self.source
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn schema(&self) -> &Schema {
        self.ctx.schema()
    }

    pub fn retrieve(&self, query: &[Cell], target_feature: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let schema = self.ctx.schema();
        let target = schema
            .index_of(target_feature)
            .ok_or_else(|| RetrievalError::UnknownTarget(target_feature.to_string()))?;
        if query.len() == schema.len() && query[target].is_present() {
            return Err(RetrievalError::TargetPresent(target_feature.to_string()));
        }
        let mut hits = Vec::new();
        for (row, record) in self.rows.iter().zip(&self.records) {
            if record[target].is_missing() {
                continue;
            }
            let d = self.ctx.distance_excluding(query, record, Some(target))?;
            hits.push(Hit {
                row: *row,
                similarity: 1.0 - d,
                record: record.clone(),
            });
        }
        if hits.is_empty() {
            return Err(RetrievalError::NothingToRetrieve {
                set: self.source,
                target: target_feature.to_string(),
            });
        }
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.row.cmp(&b.row)));
        hits.truncate(k);
        Ok(RetrievedSet {
            source: self.source,
            target_feature: target_feature.to_string(),
            hits,
            query_fingerprint: query_fingerprint(query, schema),
        })
    }
}

pub fn retrieve(
    index: &RetrievalIndex,
    query: &[Cell],
    target_feature: &str,
    k: usize,
) -> Result<RetrievedSet, RetrievalError> {
    index.retrieve(query, target_feature, k)
}

/// Plain-text template with `{context}`, `{query}`, and `{target}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, RetrievalError> {
        let text = text.into();
        for p in ["{context}", "{query}", "{target}"] {
            if !text.contains(p) {
                return Err(RetrievalError::TemplatePlaceholder(p));
            }
        }
        Ok(PromptTemplate { text })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, query: &[Cell], retrieved: &RetrievedSet, target_feature: &str, schema: &Schema) -> String {
        let context: Vec<String> = retrieved
            .hits
            .iter()
            .map(|h| serialize_record(&h.record, schema))
            .collect();
        self.text
            .replace("{context}", &context.join("\n"))
            .replace("{query}", &serialize_record(query, schema))
            .replace("{target}", target_feature)
    }
}

/// Renders the default template.
pub fn build_prompt(query: &[Cell], retrieved: &RetrievedSet, target_feature: &str, schema: &Schema) -> String {
    PromptTemplate::default().render(query, retrieved, target_feature, schema)
}
