//! End-to-end experiment runs.
//!
//! For each missing rate: inject missingness into the complete table, cluster
//! the masked table (never the ground truth), build the local and global
//! retrieval indices, ask both recommenders about every injected cell, fuse
//! their answers, and score the local, global, and consensus arms on the same
//! cell set.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{consensus, ConsensusPolicy, ConsensusResult, Proposal};
use crate::gower::{pairwise_distances, GowerContext, GowerError};
use crate::metrics::{score, summarize, CategoricalKs, CellPairSeries, Metric, MetricError, MetricRow, Summary};
use crate::missingness::{inject, CellKey, Mechanism, MissingnessError};
use crate::recommend::{RecommendRequest, Recommendation, Recommender, RecommenderConfig, RecoveryError};
use crate::retrieval::{build_index, PromptTemplate, RetrievalError, RetrievalIndex, Source};
use crate::stage1::{build_effective_samples, dbscan, k_distances, DbscanParams, EffectiveSampleSet, NeighbourOptions, StageOneError};
use crate::table::{category_codes, load_csv, normalize, serialize_record, CategoryCodes, Cell, MixedTable, TableError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Missingness(#[from] MissingnessError),
    #[error(transparent)]
    Gower(#[from] GowerError),
    #[error("stage I failed at missing rate {rate}: {source} (k-distances, descending: {k_distances:?})")]
    StageOne {
        rate: f64,
        #[source]
        source: StageOneError,
        k_distances: Vec<f64>,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Recommender(#[from] RecoveryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("every injected cell at missing rate {rate} was unrecoverable{}", if *.transport { " (transport exhausted)" } else { "" })]
    AllUnrecoverable { rate: f64, transport: bool },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code for the CLI: 2 configuration, 3 stage I, 4 transport
    /// exhaustion, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Table(_) | RunError::Missingness(_) => 2,
            RunError::Recommender(RecoveryError::Config(_)) => 2,
            RunError::Retrieval(RetrievalError::TemplateIo { .. } | RetrievalError::TemplatePlaceholder(_)) => 2,
            RunError::StageOne { .. } => 3,
            RunError::AllUnrecoverable { transport: true, .. } => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub out_dir: PathBuf,
    pub rates: Vec<f64>,
    pub mechanism: MechanismKind,
    /// Defaults to the first numeric feature that is not a target.
    pub mar_conditioning_feature: Option<String>,
    /// Defaults to every feature (minus the MAR conditioning feature).
    pub target_features: Option<Vec<String>>,
    pub seed: u64,
    pub dbscan: DbscanParams,
    pub t_neighbors: usize,
    pub neighbours: NeighbourOptions,
    pub top_k: usize,
    pub local: RecommenderConfig,
    pub global: RecommenderConfig,
    pub consensus: ConsensusPolicy,
    pub categorical_ks: CategoricalKs,
    pub prompt_template: Option<PathBuf>,
    pub fold_case: bool,
    /// Upper bound on concurrently processed cells.
    pub max_in_flight: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            schema: PathBuf::new(),
            out_dir: PathBuf::from("llmdr-out"),
            rates: vec![0.10, 0.20, 0.30],
            mechanism: MechanismKind::Mar,
            mar_conditioning_feature: None,
            target_features: None,
            seed: 7,
            dbscan: DbscanParams::default(),
            t_neighbors: 3,
            neighbours: NeighbourOptions::default(),
            top_k: 5,
            local: RecommenderConfig::mock(),
            global: RecommenderConfig::mock(),
            consensus: ConsensusPolicy::default(),
            categorical_ks: CategoricalKs::Codes,
            prompt_template: None,
            fold_case: false,
            max_in_flight: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.rates.is_empty() {
            return Err(RunError::Config("at least one missing rate is required".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(RunError::Config(format!("missing rate {r} outside (0, 1]")));
        }
        self.dbscan.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if self.top_k == 0 {
            return Err(RunError::Config("top-k must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(RunError::Config("max in-flight must be at least 1".into()));
        }
        self.local.validate()?;
        self.global.validate()?;
        if !(self.consensus.tau >= 0.0 && self.consensus.tau.is_finite()) {
            return Err(RunError::Config(format!("consensus tau {} must be non-negative", self.consensus.tau)));
        }
        Ok(())
    }

    /// Resolves target features and the concrete missingness mechanism
    /// against a schema.
    pub fn resolve(&self, table: &MixedTable) -> Result<(Vec<String>, Mechanism), RunError> {
        let schema = table.schema();
        let numeric: Vec<&str> = schema
            .features()
            .iter()
            .filter(|f| f.kind.is_numeric())
            .map(|f| f.name.as_str())
            .collect();
        let explicit = self.target_features.clone();
        if let Some(t) = &explicit {
            for name in t {
                schema.require(name)?;
            }
        }
        match self.mechanism {
            MechanismKind::Mcar | MechanismKind::Mnar => {
                let targets = explicit.unwrap_or_else(|| schema.names().map(str::to_string).collect());
                let m = if self.mechanism == MechanismKind::Mcar { Mechanism::Mcar } else { Mechanism::Mnar };
                Ok((targets, m))
            }
            MechanismKind::Mar => {
                let conditioning = match (&self.mar_conditioning_feature, &explicit) {
                    (Some(c), _) => c.clone(),
                    (None, Some(t)) => numeric
                        .iter()
                        .find(|n| !t.iter().any(|x| x == *n))
                        .map(|s| s.to_string())
                        .ok_or_else(|| RunError::Config("MAR needs a numeric non-target feature to condition on".into()))?,
                    (None, None) => numeric
                        .first()
                        .map(|s| s.to_string())
                        .ok_or_else(|| RunError::Config("MAR needs a numeric feature to condition on".into()))?,
                };
                schema.require(&conditioning)?;
                let targets = explicit.unwrap_or_else(|| schema.names().filter(|n| *n != conditioning).map(str::to_string).collect());
                if targets.is_empty() {
                    return Err(RunError::Config("no target features left besides the MAR conditioning feature".into()));
                }
                Ok((
                    targets,
                    Mechanism::Mar {
                        conditioning_feature: conditioning,
                    },
                ))
            }
        }
    }
}

/// One evaluation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Local,
    Global,
    Consensus,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Local, Arm::Global, Arm::Consensus];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Local => "local",
            Arm::Global => "global",
            Arm::Consensus => "consensus",
        }
    }
}

/// What one recommender did for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub retrieved_rows: Vec<usize>,
    pub similarities: Vec<f64>,
    pub value: Option<Cell>,
    pub confidence: Option<f64>,
    pub error: Option<String>,
    #[serde(default)]
    pub transport_failure: bool,
}

impl ArmOutcome {
    fn from_result(result: &Result<Recommendation, CellFailure>) -> Self {
        match result {
            Ok(rec) => ArmOutcome {
                retrieved_rows: rec.evidence.rows(),
                similarities: rec.evidence.hits.iter().map(|h| h.similarity).collect(),
                value: Some(rec.value.clone()),
                confidence: Some(rec.confidence),
                error: None,
                transport_failure: false,
            },
            Err(f) => ArmOutcome {
                retrieved_rows: f.retrieved_rows.clone(),
                similarities: f.similarities.clone(),
                value: None,
                confidence: None,
                error: Some(f.message.clone()),
                transport_failure: f.transport,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub row: usize,
    pub feature: String,
    pub query: String,
    pub truth: Cell,
    pub local: ArmOutcome,
    pub global: ArmOutcome,
    pub consensus: Option<ConsensusResult>,
    /// Scored in all three arms. False when either recommender failed.
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrecoverableCell {
    pub row: usize,
    pub feature: String,
    pub reason: String,
    pub transport: bool,
}

/// Everything produced at one missing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRun {
    pub rate: f64,
    pub masked: MixedTable,
    pub truth: BTreeMap<CellKey, Cell>,
    pub clusters: usize,
    pub noise_rows: usize,
    pub samples: EffectiveSampleSet,
    pub recovered: MixedTable,
    pub audit: Vec<AuditEntry>,
    pub unrecoverable: Vec<UnrecoverableCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBlock {
    pub rate: f64,
    pub rows: Vec<MetricRow>,
    pub summary: BTreeMap<Metric, Summary>,
    pub scored_cells: usize,
    pub unrecoverable_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub arm: Arm,
    pub blocks: Vec<RateBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub settings: RunSettings,
    pub source_fingerprint: String,
    pub runs: Vec<RateRun>,
    pub reports: BTreeMap<Arm, MetricReport>,
}

/// The configuration echo written into the audit log. Paths are left out so
/// that identical runs into different directories produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub rates: Vec<f64>,
    pub mechanism: Mechanism,
    pub target_features: Vec<String>,
    pub seed: u64,
    pub dbscan: DbscanParams,
    pub t_neighbors: usize,
    pub neighbours: NeighbourOptions,
    pub top_k: usize,
    pub local: String,
    pub global: String,
    pub consensus: ConsensusPolicy,
    pub categorical_ks: CategoricalKs,
}

#[derive(Debug, Clone)]
struct CellFailure {
    message: String,
    transport: bool,
    retrieved_rows: Vec<usize>,
    similarities: Vec<f64>,
}

impl CellFailure {
    fn retrieval(e: RetrievalError) -> Self {
        CellFailure {
            message: e.to_string(),
            transport: false,
            retrieved_rows: vec![],
            similarities: vec![],
        }
    }
}

/// Loads the configured dataset and runs every missing rate.
pub fn run_experiment(config: &RunConfig) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let table = load_csv(&config.data, &config.schema)?;
    run_on_table(&table, config)
}

/// Runs every missing rate against an in-memory complete table.
pub fn run_on_table(table: &MixedTable, config: &RunConfig) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let template = match &config.prompt_template {
        Some(p) => PromptTemplate::from_path(p)?,
        None => PromptTemplate::default(),
    };
    let local = config.local.build(template.clone())?;
    let global = config.global.build(template)?;
    run_with_recommenders(table, config, local.as_ref(), global.as_ref())
}

/// Same as [`run_on_table`] with caller-supplied recommenders.
pub fn run_with_recommenders(
    table: &MixedTable,
    config: &RunConfig,
    local: &dyn Recommender,
    global: &dyn Recommender,
) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let (targets, mechanism) = config.resolve(table)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;

    let mut codes = BTreeMap::new();
    for name in &targets {
        let idx = table.schema().require(name)?;
        if !table.schema().feature(idx).kind.is_numeric() {
            codes.insert(name.clone(), category_codes(table, name)?);
        }
    }

    let mut runs = Vec::with_capacity(config.rates.len());
    for &rate in &config.rates {
        let experiment = inject(table, rate, &mechanism, &targets, config.seed)?;
        let run = pool.install(|| run_rate(rate, experiment.masked, experiment.truth, &targets, config, local, global))?;
        runs.push(run);
    }

    let mut reports = BTreeMap::new();
    for arm in Arm::ALL {
        let blocks = runs
            .iter()
            .map(|run| score_arm(arm, run, table, &targets, &codes, config.categorical_ks))
            .collect::<Result<Vec<_>, _>>()?;
        reports.insert(arm, MetricReport { arm, blocks });
    }

    Ok(RunArtifacts {
        settings: RunSettings {
            rates: config.rates.clone(),
            mechanism,
            target_features: targets,
            seed: config.seed,
            dbscan: config.dbscan,
            t_neighbors: config.t_neighbors,
            neighbours: config.neighbours,
            top_k: config.top_k,
            local: local.describe(),
            global: global.describe(),
            consensus: config.consensus,
            categorical_ks: config.categorical_ks,
        },
        source_fingerprint: table.fingerprint(),
        runs,
        reports,
    })
}

fn run_rate(
    rate: f64,
    masked: MixedTable,
    truth: BTreeMap<CellKey, Cell>,
    targets: &[String],
    config: &RunConfig,
    local: &dyn Recommender,
    global: &dyn Recommender,
) -> Result<RateRun, RunError> {
    // Stage I runs on the normalized masked table.
    let normalized = normalize(&masked);
    let stage_ctx = GowerContext::for_table(&normalized).with_case_folding(config.fold_case);
    let dist = pairwise_distances(&normalized, &stage_ctx)?;
    let stage_one = |source: StageOneError| {
        let k = config.dbscan.min_pts.saturating_sub(1).max(1).min(dist.len().saturating_sub(1));
        RunError::StageOne {
            rate,
            source,
            k_distances: k_distances(&dist, k).unwrap_or_default(),
        }
    };
    let assignment = dbscan(&dist, config.dbscan).map_err(stage_one)?;
    let samples = build_effective_samples(&assignment, &dist, config.t_neighbors, config.neighbours).map_err(stage_one)?;
    log::info!(
        "rate {rate}: {} clusters, {} noise rows, |LES| = {}, |GES| = {}",
        assignment.k,
        assignment.noise().len(),
        samples.les.len(),
        samples.ges.len()
    );

    let ctx = GowerContext::for_table(&masked).with_case_folding(config.fold_case);
    let les_index = build_index(&samples.les, &masked, &ctx, Source::Local)?;
    let ges_index = build_index(&samples.ges, &masked, &ctx, Source::Global)?;

    let schema = masked.schema();
    let mut cells: Vec<(usize, usize, &Cell)> = truth
        .iter()
        .map(|(key, cell)| (schema.index_of(&key.feature).expect("truth keys come from the schema"), key.row, cell))
        .collect();
    cells.sort_by_key(|(f, r, _)| (*f, *r));
    debug_assert!(cells.iter().all(|(f, _, _)| targets.contains(&schema.feature(*f).name)));

    let outcomes: Vec<(AuditEntry, Option<Cell>)> = cells
        .par_iter()
        .map(|&(f, r, true_cell)| {
            recover_cell(&masked, f, r, true_cell, &les_index, &ges_index, config, local, global)
        })
        .collect::<Result<_, _>>()?;

    let mut updates = Vec::new();
    let mut audit = Vec::with_capacity(outcomes.len());
    let mut unrecoverable = Vec::new();
    for (entry, fill) in outcomes {
        let f = schema.require(&entry.feature)?;
        if let Some(v) = fill {
            updates.push((entry.row, f, v));
        }
        if !entry.recovered {
            let (reason, transport) = [&entry.local, &entry.global]
                .iter()
                .find_map(|o| o.error.clone().map(|e| (e, o.transport_failure)))
                .unwrap_or_else(|| ("no consensus".into(), false));
            unrecoverable.push(UnrecoverableCell {
                row: entry.row,
                feature: entry.feature.clone(),
                reason,
                transport,
            });
        }
        audit.push(entry);
    }
    if !audit.is_empty() && unrecoverable.len() == audit.len() {
        return Err(RunError::AllUnrecoverable {
            rate,
            transport: unrecoverable.iter().any(|u| u.transport),
        });
    }
    let recovered = masked.with_cells(updates)?;
    Ok(RateRun {
        rate,
        truth,
        clusters: assignment.k,
        noise_rows: assignment.noise().len(),
        samples,
        recovered,
        audit,
        unrecoverable,
        masked,
    })
}

#[allow(clippy::too_many_arguments)]
fn recover_cell(
    masked: &MixedTable,
    feature: usize,
    row: usize,
    true_cell: &Cell,
    les_index: &RetrievalIndex,
    ges_index: &RetrievalIndex,
    config: &RunConfig,
    local: &dyn Recommender,
    global: &dyn Recommender,
) -> Result<(AuditEntry, Option<Cell>), RunError> {
    let schema = masked.schema();
    let name = &schema.feature(feature).name;
    let kind = schema.feature(feature).kind;
    let query = masked.row(row);
    let ask = |index: &RetrievalIndex, rec: &dyn Recommender| -> Result<Recommendation, CellFailure> {
        let retrieved = index.retrieve(query, name, config.top_k).map_err(CellFailure::retrieval)?;
        rec.recommend(&RecommendRequest {
            query,
            target_feature: name,
            schema,
            retrieved: &retrieved,
        })
        .map_err(|e| CellFailure {
            transport: e.is_transport(),
            message: e.to_string(),
            retrieved_rows: retrieved.rows(),
            similarities: retrieved.hits.iter().map(|h| h.similarity).collect(),
        })
    };
    let (l, g) = rayon::join(|| ask(les_index, local), || ask(ges_index, global));
    let proposals: Vec<Proposal> = [&l, &g].iter().filter_map(|r| r.as_ref().ok()).map(Proposal::from).collect();
    let fused = if proposals.is_empty() {
        None
    } else {
        Some(consensus(&proposals, kind, &config.consensus).map_err(|e| RunError::Config(e.to_string()))?)
    };
    let entry = AuditEntry {
        row,
        feature: name.clone(),
        query: serialize_record(query, schema),
        truth: true_cell.clone(),
        local: ArmOutcome::from_result(&l),
        global: ArmOutcome::from_result(&g),
        recovered: l.is_ok() && g.is_ok(),
        consensus: fused.clone(),
    };
    Ok((entry, fused.map(|c| c.value)))
}

fn score_arm(
    arm: Arm,
    run: &RateRun,
    table: &MixedTable,
    targets: &[String],
    codes: &BTreeMap<String, CategoryCodes>,
    mode: CategoricalKs,
) -> Result<RateBlock, RunError> {
    let schema = table.schema();
    let mut rows = Vec::new();
    let mut scored = 0;
    for f in schema.features() {
        if !targets.contains(&f.name) {
            continue;
        }
        let (mut predicted, mut truth) = (Vec::new(), Vec::new());
        for e in run.audit.iter().filter(|e| e.recovered && e.feature == f.name) {
            let value = match arm {
                Arm::Local => e.local.value.clone(),
                Arm::Global => e.global.value.clone(),
                Arm::Consensus => e.consensus.as_ref().map(|c| c.value.clone()),
            };
            predicted.push(value.expect("recovered cells have all three values"));
            truth.push(e.truth.clone());
        }
        if predicted.is_empty() {
            continue;
        }
        scored += predicted.len();
        let series = CellPairSeries::new(f.name.clone(), f.kind, predicted, truth)?;
        let empty = CategoryCodes::default();
        let c = codes.get(&f.name).unwrap_or(&empty);
        rows.push(score(&series, c, mode)?);
    }
    let summary = if rows.is_empty() { BTreeMap::new() } else { summarize(&rows)? };
    Ok(RateBlock {
        rate: run.rate,
        rows,
        summary,
        scored_cells: scored,
        unrecoverable_cells: run.unrecoverable.len(),
    })
}

/// Sorted (descending) distance from each row to its `k`-th nearest
/// neighbour under Gower distance, for choosing `eps`.
pub fn kdistance_report(table: &MixedTable, ctx: &GowerContext, k: usize) -> Result<Vec<f64>, RunError> {
    let dist = pairwise_distances(table, ctx)?;
    k_distances(&dist, k).map_err(|source| RunError::StageOne {
        rate: 0.0,
        source,
        k_distances: vec![],
    })
}
