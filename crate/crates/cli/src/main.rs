use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use llmdr::harness::{run_experiment, MechanismKind, RunConfig, RunError};
use llmdr::metrics::{score, CategoricalKs, CellPairSeries};
use llmdr::report::{emit_reports, rows_csv};
use llmdr::{
    kdistance_report, load_csv, normalize, CategoryCodes, ConsensusPolicy, DbscanParams, GowerContext, NeighbourOptions, NumericFusion, RecommenderConfig, TieBreak,
};

#[derive(Parser)]
#[command(name = "llmdr", version, about = "Missing-value recovery for mixed-type tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject missingness, recover it, and write per-arm reports.
    Run(RunArgs),
    /// Print sorted k-distances to help choose --eps.
    Kdist(KdistArgs),
    /// Score a predicted table against a ground-truth table.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecommenderArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Global,
    Local,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Wmean,
    Argmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum KsArg {
    Codes,
    Tvd,
}

impl From<KsArg> for CategoricalKs {
    fn from(k: KsArg) -> Self {
        match k {
            KsArg::Codes => CategoricalKs::Codes,
            KsArg::Tvd => CategoricalKs::Tvd,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    rates: Vec<f64>,
    #[arg(long, value_enum, default_value = "mar")]
    mechanism: MechanismArg,
    #[arg(long)]
    mar_conditioning_feature: Option<String>,
    #[arg(long, value_delimiter = ',')]
    target_features: Option<Vec<String>>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.15)]
    eps: f64,
    #[arg(long, default_value_t = 4)]
    min_pts: usize,
    #[arg(long, default_value_t = 3)]
    t_neighbors: usize,
    #[arg(long)]
    include_noise: bool,
    #[arg(long)]
    neighbors_within_cluster: bool,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    prompt_template: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    recommender: RecommenderArg,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    /// Cells processed concurrently (caps in-flight HTTP requests).
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 0.05)]
    consensus_tau: f64,
    #[arg(long, value_enum, default_value = "global")]
    consensus_tiebreak: TieBreakArg,
    #[arg(long, value_enum, default_value = "wmean")]
    numeric_fusion: FusionArg,
    #[arg(long, value_enum, default_value = "codes")]
    categorical_ks: KsArg,
    /// Compare text values case-insensitively.
    #[arg(long)]
    fold_case: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KdistArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 4)]
    k: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum, default_value = "codes")]
    categorical_ks: KsArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Kdist(a) => kdist(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn recommender_config(a: &RunArgs) -> Result<RecommenderConfig, RunError> {
    let mut config = match a.recommender {
        RecommenderArg::Mock => RecommenderConfig::mock(),
        RecommenderArg::Http => {
            let endpoint = a.endpoint.clone().ok_or_else(|| RunError::Config("--recommender http needs --endpoint".into()))?;
            let model = a.model.clone().ok_or_else(|| RunError::Config("--recommender http needs --model".into()))?;
            RecommenderConfig::http(endpoint, model)
        }
    };
    config.timeout_ms = a.timeout_ms;
    config.max_retries = a.max_retries;
    Ok(config)
}

fn run(a: RunArgs) -> Result<(), RunError> {
    let recommender = recommender_config(&a)?;
    let config = RunConfig {
        data: a.data.clone(),
        schema: a.schema.clone(),
        out_dir: a.out.clone(),
        rates: a.rates.clone(),
        mechanism: match a.mechanism {
            MechanismArg::Mcar => MechanismKind::Mcar,
            MechanismArg::Mar => MechanismKind::Mar,
            MechanismArg::Mnar => MechanismKind::Mnar,
        },
        mar_conditioning_feature: a.mar_conditioning_feature.clone(),
        target_features: a.target_features.clone(),
        seed: a.seed,
        dbscan: DbscanParams::new(a.eps, a.min_pts).map_err(|e| RunError::Config(e.to_string()))?,
        t_neighbors: a.t_neighbors,
        neighbours: NeighbourOptions {
            include_noise: a.include_noise,
            within_cluster: a.neighbors_within_cluster,
        },
        top_k: a.top_k,
        local: recommender.clone(),
        global: recommender,
        consensus: ConsensusPolicy {
            tau: a.consensus_tau,
            numeric_fusion: match a.numeric_fusion {
                FusionArg::Wmean => NumericFusion::ConfidenceWeightedMean,
                FusionArg::Argmax => NumericFusion::HigherConfidence,
            },
            tie_break: match a.consensus_tiebreak {
                TieBreakArg::Global => TieBreak::PreferGlobal,
                TieBreakArg::Local => TieBreak::PreferLocal,
            },
        },
        categorical_ks: a.categorical_ks.into(),
        prompt_template: a.prompt_template.clone(),
        fold_case: a.fold_case,
        max_in_flight: a.max_in_flight,
    };
    let artifacts = run_experiment(&config)?;
    for run in &artifacts.runs {
        log::info!(
            "rate {}: {} cells audited, {} unrecoverable",
            run.rate,
            run.audit.len(),
            run.unrecoverable.len()
        );
    }
    for path in emit_reports(&artifacts, &config.out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn kdist(a: KdistArgs) -> Result<(), RunError> {
    let table = normalize(&load_csv(&a.data, &a.schema)?);
    let ctx = GowerContext::for_table(&table);
    for d in kdistance_report(&table, &ctx, a.k)? {
        println!("{d}");
    }
    Ok(())
}

/// Scores every cell that is present in the truth table, per feature, and
/// prints one CSV row per feature. Cells missing from the prediction are
/// skipped.
fn metrics(a: MetricsArgs) -> Result<(), RunError> {
    let pred = load_csv(&a.pred, &a.schema)?;
    let truth = load_csv(&a.truth, &a.schema)?;
    if pred.n_rows() != truth.n_rows() {
        return Err(RunError::Config(format!(
            "prediction has {} rows, truth has {}",
            pred.n_rows(),
            truth.n_rows()
        )));
    }
    let mut rows = Vec::new();
    for (f, feature) in truth.schema().features().iter().enumerate() {
        let (p, t): (Vec<_>, Vec<_>) = pred
            .column(f)
            .zip(truth.column(f))
            .filter(|(p, t)| p.is_present() && t.is_present())
            .map(|(p, t)| (p.clone(), t.clone()))
            .unzip();
        if p.is_empty() {
            continue;
        }
        let codes = if feature.kind.is_numeric() {
            CategoryCodes::default()
        } else {
            llmdr::table::category_codes(&truth, &feature.name)?
        };
        let series = CellPairSeries::new(feature.name.clone(), feature.kind, p, t)?;
        rows.push(score(&series, &codes, a.categorical_ks.into())?);
    }
    print!("{}", rows_csv(&rows));
    Ok(())
}
