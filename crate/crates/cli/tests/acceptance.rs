//! Acceptance suite. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use llmdr::harness::{run_on_table, Arm, MechanismKind, RunArtifacts, RunConfig, RunError};
use llmdr::metrics::{accuracy, ks_complement, mse, score, smape, CategoricalKs, CellPairSeries};
use llmdr::report::{emit_reports, AuditLog, DETAIL_HEADER, SUMMARY_HEADER};
use llmdr::{
    consensus, dbscan, pairwise_distances, normalize, CategoryCodes, Cell, ConsensusPolicy, DbscanParams, DistanceMatrix,
    FeatureKind, GowerContext, MixedTable, NeighbourOptions, NumericFusion, Proposal, Rationale, Source, TieBreak,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "dbscan oracle equivalence", dbscan_oracle),
        (2, "metric oracle equivalence", metric_oracles),
        (3, "pipeline invariants", pipeline_invariants),
        (4, "determinism", determinism),
        (5, "consensus properties", consensus_properties),
        (6, "planted-cluster sanity", planted_sanity),
        (7, "degradation trend", degradation_trend),
        (8, "report shape", report_shape),
        (9, "metric boundary cases", metric_boundaries),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{detail}] in {elapsed:.2?}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{detail}] in {elapsed:.2?}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- criterion 1

/// Brute-force DBSCAN: core points joined into components by eps edges; a
/// border point joins the adjacent component whose smallest core index is
/// lowest; components are numbered by their smallest core index.
fn oracle_dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = d.len();
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| d.get(i, j) <= eps).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && d.get(i, j) <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut min_core: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let r = find(&mut parent, i);
        let e = min_core.entry(r).or_insert(i);
        *e = (*e).min(i);
    }
    let mut order: Vec<usize> = min_core.values().copied().collect();
    order.sort();
    let rank = |root: usize, mc: &BTreeMap<usize, usize>| order.iter().position(|&m| m == mc[&root]).unwrap();
    (0..n)
        .map(|i| {
            if core[i] {
                let r = find(&mut parent, i);
                Some(rank(r, &min_core))
            } else {
                (0..n)
                    .filter(|&j| core[j] && d.get(i, j) <= eps)
                    .map(|j| {
                        let r = find(&mut parent, j);
                        rank(r, &min_core)
                    })
                    .min()
            }
        })
        .collect()
}

fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

fn dbscan_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Pcg64::seed_from_u64(0xdb5c);
    let instances = 120;
    let mut clustered = 0;
    for inst in 0..instances {
        let n = rng.random_range(1..=30);
        let d = if inst % 2 == 0 {
            // quantized symmetric matrix so that d == eps ties occur
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = rng.random_range(0..=20) as f64 * 0.05;
                    rows[i][j] = v;
                    rows[j][i] = v;
                }
            }
            DistanceMatrix::from_rows(&rows)
        } else {
            let mut trng = Pcg64::seed_from_u64(rng.random());
            let mut t = common::random_mixed(&mut trng);
            let keep: Vec<_> = t.rows().iter().take(n).cloned().collect();
            t = MixedTable::new(t.schema().clone(), keep).unwrap();
            let t = normalize(&t);
            pairwise_distances(&t, &GowerContext::for_table(&t)).unwrap()
        };
        let eps = [0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5].choose(&mut rng).copied().unwrap();
        let min_pts = rng.random_range(1..=10);
        let expected = oracle_dbscan(&d, eps, min_pts);
        let assignment = dbscan(&d, DbscanParams::new(eps, min_pts).unwrap()).map_err(|e| format!("instance {inst}: {e}"))?;
        let got: Vec<Option<usize>> = assignment.labels.iter().map(|l| l.cluster()).collect();
        if assignment.k > 0 {
            clustered += 1;
        }
        ensure(canonical(&got) == canonical(&expected), || {
            format!("instance {inst} (n={n}, eps={eps}, min_pts={min_pts}): got {got:?}, oracle {expected:?}")
        })?;
        ensure(got == expected, || format!("instance {inst}: cluster numbering differs"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    ensure(clustered >= 50, || format!("only {clustered} instances produced clusters"))?;
    Ok(format!("{instances} instances, {clustered} with clusters, all match"))
}

// ---------------------------------------------------------------- criterion 2

fn brute_ks_complement(a: &[f64], b: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for v in a.iter().chain(b) {
        let fa = a.iter().filter(|x| *x <= v).count() as f64 / a.len() as f64;
        let fb = b.iter().filter(|x| *x <= v).count() as f64 / b.len() as f64;
        worst = worst.max((fa - fb).abs());
    }
    1.0 - worst
}

fn brute_smape(p: &[f64], t: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let s = p[i].abs() + t[i].abs();
        if s > 0.0 {
            total += 2.0 * (p[i] - t[i]).abs() / s;
        }
    }
    total / p.len() as f64
}

fn brute_mse(p: &[f64], t: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        total += (p[i] - t[i]).powi(2);
    }
    total / p.len() as f64
}

/// Frequency-descending codes with lexicographic ties, then unseen values in
/// lexicographic order.
fn brute_codes(reference: &[String], extra: &[String]) -> BTreeMap<String, f64> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for v in reference {
        *freq.entry(v).or_default() += 1;
    }
    let mut order: Vec<(&str, usize)> = freq.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut codes: BTreeMap<String, f64> = order.iter().enumerate().map(|(i, (v, _))| (v.to_string(), i as f64)).collect();
    let unseen: BTreeSet<&String> = extra.iter().filter(|v| !codes.contains_key(*v)).collect();
    for v in unseen {
        let next = codes.len() as f64;
        codes.insert(v.clone(), next);
    }
    codes
}

fn metric_oracles() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(0x3e7);
    let mut worst: f64 = 0.0;
    for s in 0..100 {
        let n = rng.random_range(1..=200);
        let categorical = s % 4 == 3;
        let (series, codes, p, t) = if categorical {
            let alphabet = ["a", "b", "c", "d", "e"];
            let truth: Vec<String> = (0..n).map(|_| alphabet[rng.random_range(0..4)].to_string()).collect();
            let pred: Vec<String> = (0..n).map(|_| alphabet[rng.random_range(0..5)].to_string()).collect();
            let reference: Vec<String> = (0..n).map(|_| alphabet[rng.random_range(0..3)].to_string()).collect();
            let codes = CategoryCodes::from_values(reference.iter().map(String::as_str));
            let all: Vec<String> = pred.iter().chain(&truth).cloned().collect();
            let oracle = brute_codes(&reference, &all);
            let p: Vec<f64> = pred.iter().map(|v| oracle[v]).collect();
            let t: Vec<f64> = truth.iter().map(|v| oracle[v]).collect();
            let series = CellPairSeries::new(
                "c",
                FeatureKind::Categorical,
                pred.iter().map(Cell::text).collect(),
                truth.iter().map(Cell::text).collect(),
            )
            .unwrap();
            (series, codes, p, t)
        } else {
            let quantized = s % 2 == 0;
            let draw = |rng: &mut Pcg64| {
                if quantized {
                    rng.random_range(-4..=4) as f64 * 2.5
                } else {
                    rng.random_range(-10.0..10.0)
                }
            };
            let t: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let p: Vec<f64> = t
                .iter()
                .map(|&v| if rng.random_bool(0.3) { v } else { draw(&mut rng) })
                .collect();
            let series = CellPairSeries::new(
                "x",
                FeatureKind::Numeric,
                p.iter().map(|v| Cell::Number(*v)).collect(),
                t.iter().map(|v| Cell::Number(*v)).collect(),
            )
            .unwrap();
            (series, CategoryCodes::default(), p, t)
        };
        let hits = series.predicted.iter().zip(&series.truth).filter(|(a, b)| a == b).count();
        let checks = [
            ("ks_complement", ks_complement(&series, &codes, CategoricalKs::Codes).unwrap(), brute_ks_complement(&p, &t)),
            ("smape", smape(&series, &codes).unwrap(), brute_smape(&p, &t)),
            ("mse", mse(&series, &codes).unwrap(), brute_mse(&p, &t)),
            ("accuracy", accuracy(&series).unwrap(), 100.0 * hits as f64 / n as f64),
        ];
        for (name, got, want) in checks {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            ensure(diff <= 1e-12, || format!("series {s} (n={n}) {name}: got {got}, oracle {want}"))?;
        }
        let row = score(&series, &codes, CategoricalKs::Codes).unwrap();
        ensure(row.n == n, || format!("series {s}: row count {}", row.n))?;
    }
    Ok(format!("100 series, max abs diff {worst:e}"))
}

// ---------------------------------------------------------------- criterion 3

fn random_config(rng: &mut Pcg64) -> RunConfig {
    let how_many = rng.random_range(1..=3);
    let mut rates: Vec<f64> = [0.05, 0.1, 0.2, 0.3, 0.4]
        .choose_multiple(rng, how_many)
        .copied()
        .collect();
    rates.sort_by(f64::total_cmp);
    RunConfig {
        rates,
        mechanism: *[MechanismKind::Mcar, MechanismKind::Mar, MechanismKind::Mnar].choose(rng).unwrap(),
        seed: rng.random(),
        dbscan: DbscanParams::new(*[0.2, 0.3, 0.4].choose(rng).unwrap(), rng.random_range(2..=4)).unwrap(),
        t_neighbors: rng.random_range(0..=4),
        neighbours: NeighbourOptions {
            include_noise: rng.random_bool(0.3),
            within_cluster: rng.random_bool(0.3),
        },
        top_k: rng.random_range(1..=6),
        consensus: ConsensusPolicy {
            tie_break: TieBreak::PreferGlobal,
            ..ConsensusPolicy::default()
        },
        max_in_flight: rng.random_range(1..=4),
        ..RunConfig::default()
    }
}

fn check_invariants(art: &RunArtifacts, table: &MixedTable) -> Result<(), String> {
    for run in &art.runs {
        let les = &run.samples.les;
        let ges = &run.samples.ges;
        ensure(les.len() == run.clusters, || format!("|LES| {} != K {}", les.len(), run.clusters))?;
        ensure(les.iter().all(|r| ges.contains(r)), || "LES not a subset of GES".into())?;
        let unique: HashSet<_> = ges.iter().collect();
        ensure(unique.len() == ges.len(), || format!("GES has duplicates: {ges:?}"))?;
        let audited: Vec<(usize, String)> = run.audit.iter().map(|e| (e.row, e.feature.clone())).collect();
        let audited_set: BTreeSet<_> = audited.iter().cloned().collect();
        let truth_set: BTreeSet<_> = run.truth.keys().map(|k| (k.row, k.feature.clone())).collect();
        ensure(audited.len() == audited_set.len(), || "a cell was audited twice".into())?;
        ensure(audited_set == truth_set, || "audited cells differ from injected cells".into())?;
        for e in &run.audit {
            let f = table.schema().index_of(&e.feature).unwrap();
            ensure(run.masked.cell(e.row, f).is_missing(), || "audited cell was not masked".into())?;
            ensure(&e.truth == table.cell(e.row, f), || "audit truth differs from source".into())?;
            let filled = run.recovered.cell(e.row, f);
            match &e.consensus {
                Some(c) => ensure(filled == &c.value, || "recovered table disagrees with consensus".into())?,
                None => ensure(filled.is_missing(), || "unrecovered cell was filled".into())?,
            }
        }
    }
    let scored = |arm: Arm| art.reports[&arm].blocks.iter().map(|b| b.scored_cells).collect::<Vec<_>>();
    ensure(scored(Arm::Local) == scored(Arm::Consensus) && scored(Arm::Global) == scored(Arm::Consensus), || {
        "arms scored different cell sets".into()
    })?;
    // hot-deck mocks with prefer-global: consensus never trails both arms on
    // categorical features
    for (i, block) in art.reports[&Arm::Consensus].blocks.iter().enumerate() {
        for row in &block.rows {
            let kind = table.schema().feature(table.schema().index_of(&row.feature).unwrap()).kind;
            if kind.is_numeric() {
                continue;
            }
            let arm_acc = |arm: Arm| {
                art.reports[&arm].blocks[i]
                    .rows
                    .iter()
                    .find(|r| r.feature == row.feature)
                    .unwrap()
                    .accuracy_pct
            };
            let floor = arm_acc(Arm::Local).min(arm_acc(Arm::Global));
            ensure(row.accuracy_pct >= floor - 1e-9, || {
                format!("consensus accuracy {} below min arm {floor} on {}", row.accuracy_pct, row.feature)
            })?;
        }
    }
    Ok(())
}

fn pipeline_invariants() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(0xa11);
    let (mut ok, mut skipped, mut cells) = (0, 0, 0);
    for attempt in 0..500 {
        if ok == 100 {
            break;
        }
        let table = common::random_mixed(&mut rng);
        let config = random_config(&mut rng);
        match run_on_table(&table, &config) {
            Ok(art) => {
                check_invariants(&art, &table).map_err(|e| format!("run {attempt}: {e}"))?;
                cells += art.runs.iter().map(|r| r.audit.len()).sum::<usize>();
                ok += 1;
            }
            Err(RunError::StageOne { .. } | RunError::AllUnrecoverable { .. }) => skipped += 1,
            Err(e) => return Err(format!("run {attempt}: {e}")),
        }
    }
    ensure(ok == 100, || format!("only {ok} completed runs"))?;
    Ok(format!("100 runs, {cells} audited cells, {skipped} runs skipped (no clusters or nothing recoverable), 0 violations"))
}

// ---------------------------------------------------------------- criterion 4

fn run_cli(data: &Path, schema: &Path, out: &Path, extra: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_llmdr"))
        .args(["run", "--data"])
        .arg(data)
        .arg("--schema")
        .arg(schema)
        .args([
            "--rates", "0.1,0.2,0.3", "--mechanism", "mar", "--seed", "7", "--eps", "0.15", "--min-pts", "4",
            "--t-neighbors", "3", "--top-k", "5", "--recommender", "mock",
        ])
        .args(extra)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("llmdr run failed: {}", String::from_utf8_lossy(&status.stderr))
    })
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, schema) = common::write_dataset(tmp.path(), &common::planted([40, 30, 25, 25], 11));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_cli(&data, &schema, &a, &[])?;
    run_cli(&data, &schema, &b, &[])?;
    run_cli(&data, &schema, &c, &["--max-in-flight", "1"])?;
    let (ra, rb, rc) = (dir_contents(&a), dir_contents(&b), dir_contents(&c));
    ensure(ra.len() >= 12, || format!("only {} report files", ra.len()))?;
    for (name, bytes) in &ra {
        ensure(rb.get(name) == Some(bytes), || format!("{name} differs between identical runs"))?;
        ensure(rc.get(name) == Some(bytes), || format!("{name} differs with a single worker"))?;
    }
    ensure(ra.len() == rb.len() && ra.len() == rc.len(), || "different file sets".into())?;
    Ok(format!("{} files byte-identical across 3 runs", ra.len()))
}

// ---------------------------------------------------------------- criterion 5

const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn permutations(n: usize) -> Vec<Vec<usize>> {
    match n {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    }
}

/// Every list of 1 to 3 proposals over the given values, the confidence
/// grid, and both sources.
fn proposal_lists(values: &[Cell]) -> Vec<Vec<Proposal>> {
    let mut singles = Vec::new();
    for v in values {
        for &c in &GRID {
            for s in [Source::Local, Source::Global] {
                singles.push(Proposal::new(v.clone(), c, s));
            }
        }
    }
    let mut out: Vec<Vec<Proposal>> = singles.iter().map(|p| vec![p.clone()]).collect();
    for a in &singles {
        for b in &singles {
            out.push(vec![a.clone(), b.clone()]);
            for c in &singles {
                out.push(vec![a.clone(), b.clone(), c.clone()]);
            }
        }
    }
    out
}

fn policies() -> Vec<ConsensusPolicy> {
    let mut out = Vec::new();
    for tau in [0.0, 0.05, 1.0] {
        for numeric_fusion in [NumericFusion::ConfidenceWeightedMean, NumericFusion::HigherConfidence] {
            for tie_break in [TieBreak::PreferGlobal, TieBreak::PreferLocal] {
                out.push(ConsensusPolicy {
                    tau,
                    numeric_fusion,
                    tie_break,
                });
            }
        }
    }
    out
}

fn consensus_properties() -> Outcome {
    let mut checked = 0usize;
    let categorical: Vec<Cell> = ["a", "b", "c"].into_iter().map(Cell::text).collect();
    let numeric: Vec<Cell> = [-1.0, 10.0, 10.02].into_iter().map(Cell::Number).collect();
    for (kind, values) in [(FeatureKind::Categorical, &categorical), (FeatureKind::Numeric, &numeric)] {
        for list in proposal_lists(values) {
            for policy in policies() {
                if kind == FeatureKind::Categorical && (policy.tau != 0.05 || policy.numeric_fusion != NumericFusion::ConfidenceWeightedMean) {
                    // categorical fusion ignores both knobs
                    continue;
                }
                let base = consensus(&list, kind, &policy).map_err(|e| format!("{list:?}: {e}"))?;
                checked += 1;
                // unanimity preservation
                if list.iter().all(|p| p.value == list[0].value) {
                    ensure(base.value == list[0].value && base.agreed && base.rationale == Rationale::Unanimous, || {
                        format!("unanimous {list:?} gave {base:?}")
                    })?;
                }
                // permutation invariance
                for perm in permutations(list.len()) {
                    let shuffled: Vec<Proposal> = perm.iter().map(|&i| list[i].clone()).collect();
                    let r = consensus(&shuffled, kind, &policy).unwrap();
                    ensure(r == base, || format!("order changed the result: {list:?} vs {shuffled:?}"))?;
                }
                // numeric boundedness
                if kind == FeatureKind::Numeric {
                    let v = base.value.as_f64().unwrap();
                    let lo = list.iter().map(|p| p.value.as_f64().unwrap()).fold(f64::INFINITY, f64::min);
                    let hi = list.iter().map(|p| p.value.as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
                    ensure(lo <= v && v <= hi, || format!("{v} outside [{lo}, {hi}] for {list:?}"))?;
                }
                // confidence-scaling invariance of every argmax decision
                let argmax_decided = kind == FeatureKind::Categorical
                    || base.rationale != Rationale::ToleranceMerge
                    || policy.numeric_fusion == NumericFusion::HigherConfidence;
                if argmax_decided {
                    for scale in [0.5, 0.3, 0.8] {
                        let scaled: Vec<Proposal> = list
                            .iter()
                            .map(|p| Proposal::new(p.value.clone(), p.confidence * scale, p.source))
                            .collect();
                        let r = consensus(&scaled, kind, &policy).unwrap();
                        ensure(r.value == base.value, || format!("scaling by {scale} changed the winner for {list:?}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("{checked} (proposal list, policy) cases, 0 violations"))
}

// ---------------------------------------------------------------- criteria 6 and 7

fn planted_config(rates: Vec<f64>, seed: u64) -> RunConfig {
    RunConfig {
        rates,
        mechanism: MechanismKind::Mcar,
        seed,
        ..RunConfig::default()
    }
}

/// Independent 1-NN hot-deck: range-scaled numeric gaps and 0/1 mismatches,
/// averaged over features observed in both rows, target feature excluded.
fn hot_deck_oracle(masked: &MixedTable, row: usize, target: usize) -> Option<Cell> {
    let m = masked.schema().len();
    let ranges: Vec<f64> = (0..m)
        .map(|f| {
            let vals: Vec<f64> = masked.column(f).filter_map(Cell::as_f64).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .collect();
    let dist = |a: &[Cell], b: &[Cell]| {
        let (mut sum, mut count) = (0.0, 0.0);
        for f in (0..m).filter(|&f| f != target) {
            match (&a[f], &b[f]) {
                (Cell::Number(x), Cell::Number(y)) => {
                    sum += if ranges[f] > 0.0 { ((x - y).abs() / ranges[f]).min(1.0) } else { 0.0 };
                    count += 1.0;
                }
                (Cell::Text(x), Cell::Text(y)) => {
                    sum += if x == y { 0.0 } else { 1.0 };
                    count += 1.0;
                }
                _ => {}
            }
        }
        if count == 0.0 {
            1.0
        } else {
            sum / count
        }
    };
    let query = masked.row(row);
    (0..masked.n_rows())
        .filter(|&r| r != row && masked.cell(r, target).is_present())
        .map(|r| (dist(query, masked.row(r)), r))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, r)| masked.cell(r, target).clone())
}

struct LabelScores {
    consensus: f64,
    baseline: f64,
    oracle: f64,
}

fn label_scores(art: &RunArtifacts, rate_index: usize) -> LabelScores {
    let run = &art.runs[rate_index];
    let label = run.masked.schema().index_of("label").unwrap();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in run.masked.column(label).filter_map(Cell::as_str) {
        *freq.entry(c).or_default() += 1;
    }
    let mode = freq.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(v, _)| Cell::text(*v)).unwrap();
    let cells: Vec<_> = run.audit.iter().filter(|e| e.recovered && e.feature == "label").collect();
    let n = cells.len() as f64;
    let pct = |hits: usize| 100.0 * hits as f64 / n;
    LabelScores {
        consensus: art.reports[&Arm::Consensus].blocks[rate_index]
            .rows
            .iter()
            .find(|r| r.feature == "label")
            .unwrap()
            .accuracy_pct,
        baseline: pct(cells.iter().filter(|e| e.truth == mode).count()),
        oracle: pct(cells
            .iter()
            .filter(|e| hot_deck_oracle(&run.masked, e.row, label).as_ref() == Some(&e.truth))
            .count()),
    }
}

fn planted_sanity() -> Outcome {
    let started = Instant::now();
    let table = common::planted([40, 30, 25, 25], 11);
    let art = run_on_table(&table, &planted_config(vec![0.10], 1)).map_err(|e| e.to_string())?;
    let s = label_scores(&art, 0);
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    let detail = format!(
        "K={}, consensus {:.2}%, mode baseline {:.2}%, 1-NN oracle {:.2}%",
        art.runs[0].clusters, s.consensus, s.baseline, s.oracle
    );
    ensure(s.consensus - s.baseline >= 20.0, || detail.clone())?;
    Ok(detail)
}

fn degradation_trend() -> Outcome {
    let table = common::planted([40, 30, 25, 25], 11);
    let rates = vec![0.10, 0.20, 0.30];
    let mut sums = [0.0; 3];
    for seed in 1..=10 {
        let art = run_on_table(&table, &planted_config(rates.clone(), seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        for (i, sum) in sums.iter_mut().enumerate() {
            *sum += label_scores(&art, i).consensus;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 10.0).collect();
    let detail = format!("mean consensus accuracy at 10/20/30%: {:.2} / {:.2} / {:.2}", means[0], means[1], means[2]);
    ensure(means.windows(2).all(|w| w[1] <= w[0] + 3.0), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 8

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn report_shape() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let table = common::three_feature(90, 5);
    let config = RunConfig {
        mechanism: MechanismKind::Mcar,
        dbscan: DbscanParams::new(0.15, 3).unwrap(),
        ..RunConfig::default()
    };
    let art = run_on_table(&table, &config).map_err(|e| e.to_string())?;
    emit_reports(&art, tmp.path()).map_err(|e| e.to_string())?;
    let table1 = ["Missing Rate (%)", "Feature", "Accuracy (%)", "KS-Stat", "SMAPE", "MSE"];
    ensure(DETAIL_HEADER.len() == table1.len(), || "detail columns do not line up with the reference table".into())?;
    for arm in ["local", "global", "consensus"] {
        let (header, rows) = read_csv(&tmp.path().join(format!("{arm}_detail.csv")));
        ensure(header == DETAIL_HEADER, || format!("{arm} detail header {header:?}"))?;
        ensure(rows.len() == 9, || format!("{arm} detail has {} rows", rows.len()))?;
        for row in &rows {
            ensure(["10", "20", "30"].contains(&row[0].as_str()), || format!("rate {}", row[0]))?;
            let vals: Vec<f64> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
            ensure((0.0..=100.0).contains(&vals[0]) && (0.0..=1.0).contains(&vals[1]) && vals[2] >= 0.0 && vals[3] >= 0.0, || {
                format!("out-of-range metrics {row:?}")
            })?;
        }
        let (header, rows) = read_csv(&tmp.path().join(format!("{arm}_summary.csv")));
        ensure(header == SUMMARY_HEADER, || format!("{arm} summary header {header:?}"))?;
        ensure(rows.len() == 12, || format!("{arm} summary has {} rows", rows.len()))?;
        let metrics: BTreeSet<&str> = rows.iter().map(|r| r[1].as_str()).collect();
        ensure(metrics == BTreeSet::from(["accuracy_pct", "ks_complement", "mse", "smape"]), || format!("{metrics:?}"))?;
        let text = fs::read_to_string(tmp.path().join(format!("{arm}_report.txt"))).unwrap();
        ensure(text.contains("Missing Rate (%)") && text.contains("(median)"), || "text report layout".into())?;
    }
    let loaded = AuditLog::load(tmp.path().join("audit.json")).map_err(|e| e.to_string())?;
    ensure(loaded == AuditLog::from_artifacts(&art), || "audit log does not round-trip".into())?;
    Ok("3 arms x (9 detail rows, 12 summary rows), audit log round-trips".into())
}

// ---------------------------------------------------------------- criterion 9

fn metric_boundaries() -> Outcome {
    let nums = |v: &[f64]| v.iter().map(|x| Cell::Number(*x)).collect::<Vec<_>>();
    let texts = |v: &[&str]| v.iter().map(|x| Cell::text(*x)).collect::<Vec<_>>();
    let codes = CategoryCodes::from_values(["a", "b", "c"]);
    let perfect = [
        CellPairSeries::new("x", FeatureKind::Numeric, nums(&[1.0, -2.0, 0.0, 3.5]), nums(&[1.0, -2.0, 0.0, 3.5])).unwrap(),
        CellPairSeries::new("c", FeatureKind::Categorical, texts(&["a", "b", "b"]), texts(&["a", "b", "b"])).unwrap(),
    ];
    for s in &perfect {
        for mode in [CategoricalKs::Codes, CategoricalKs::Tvd] {
            let r = score(s, &codes, mode).unwrap();
            ensure(r.accuracy_pct == 100.0 && r.smape == 0.0 && r.mse == 0.0 && r.ks_complement == 1.0, || {
                format!("perfect series scored {r:?}")
            })?;
        }
    }
    let disjoint = [
        CellPairSeries::new("x", FeatureKind::Numeric, nums(&[1.0, 2.0]), nums(&[3.0, 4.0])).unwrap(),
        CellPairSeries::new("c", FeatureKind::Categorical, texts(&["a", "a"]), texts(&["b", "c"])).unwrap(),
    ];
    for s in &disjoint {
        for mode in [CategoricalKs::Codes, CategoricalKs::Tvd] {
            let r = score(s, &codes, mode).unwrap();
            ensure(r.ks_complement == 0.0, || format!("disjoint series scored {r:?}"))?;
        }
    }
    Ok("perfect: 100/0/0/1, disjoint: ks_complement 0".into())
}
