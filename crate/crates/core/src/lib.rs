//! Missing-value recovery for mixed-type tables.
//!
//! The pipeline clusters the rows that survive masking (DBSCAN over Gower
//! distance), keeps cluster medoids as a *local* effective sample set and
//! medoids plus their nearest neighbours as a *global* one, retrieves the
//! most similar samples for every missing cell, asks a recommender for a
//! value from each set, and fuses the two answers.
//!
//! ```
//! use llmdr::{gower_distance, Cell, Feature, FeatureKind, GowerContext, MixedTable, Schema};
//!
//! let schema = Schema::new(vec![
//!     Feature::new("age", FeatureKind::Numeric),
//!     Feature::new("city", FeatureKind::Categorical),
//! ])
//! .unwrap();
//! let table = MixedTable::new(
//!     schema,
//!     vec![
//!         vec![Cell::Number(20.0), Cell::text("Oslo")],
//!         vec![Cell::Number(60.0), Cell::text("Oslo")],
//!     ],
//! )
//! .unwrap();
//! let ctx = GowerContext::for_table(&table);
//! let d = gower_distance(table.row(0), table.row(1), &ctx).unwrap();
//! assert_eq!(d, 0.5);
//! ```

pub mod consensus;
pub mod gower;
pub mod harness;
pub mod metrics;
pub mod missingness;
pub mod recommend;
pub mod report;
pub mod retrieval;
pub mod stage1;
pub mod table;

pub use consensus::{consensus, consensus_of, ConsensusError, ConsensusPolicy, ConsensusResult, NumericFusion, Proposal, Rationale, TieBreak};
pub use gower::{gower_distance, pairwise_distances, DistanceMatrix, GowerContext, GowerError};
pub use harness::{kdistance_report, run_experiment, run_on_table, run_with_recommenders, Arm, MechanismKind, MetricReport, RunArtifacts, RunConfig, RunError};
pub use metrics::{accuracy, ks_complement, ks_statistic, mse, score, smape, summarize, CategoricalKs, CellPairSeries, Metric, MetricError, MetricRow, Summary};
pub use missingness::{inject, CellKey, Mechanism, MissingnessError, MissingnessExperiment};
pub use recommend::{parse_reply, recommend, ChatRecommender, HotDeck, RecommendRequest, Recommendation, Recommender, RecommenderConfig, RecommenderKind, RecoveryError};
pub use report::{emit_reports, AuditLog};
pub use retrieval::{build_index, build_prompt, PromptTemplate, RetrievalError, RetrievalIndex, RetrievedSet, Source};
pub use stage1::{build_effective_samples, dbscan, k_distances, medoid, ClusterAssignment, DbscanParams, EffectiveSampleSet, Label, NeighbourOptions, StageOneError};
pub use table::{load_csv, normalize, read_csv, serialize_record, Cell, CategoryCodes, Feature, FeatureKind, MixedTable, Schema, SchemaDescriptor, TableError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tables.md")]
    mod tables {}
    #[doc = include_str!("../../../book/src/missingness.md")]
    mod missingness {}
    #[doc = include_str!("../../../book/src/gower.md")]
    mod gower {}
    #[doc = include_str!("../../../book/src/stage1.md")]
    mod stage1 {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/recommenders.md")]
    mod recommenders {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
