//! Config-driven runners behind the `stratflow` command-line tool.
//!
//! Every runner is a pure function of its configuration and master seed:
//! repetitions draw from their own substreams, run in parallel and are
//! gathered in repetition order, so output files do not depend on the thread
//! count. Only the NDJSON run log carries wall-clock timestamps.

mod config;
mod diagnostics;
mod log;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::fit_gmm;
use crate::error::{Error, Result};
use crate::estimate::{
    cmc_estimate_map, format_accuracy, observed_mean, run_optimal_pipeline, run_proportional, EstimateReport, Method,
};
use crate::flow::{load_map_with_dim, save_map, train_flow, write_trace_csv, FlowArch, TraceRow, TransportMap};
use crate::sampling::{label, stream_id, RngStream, Streams};
use crate::strata::{build_selected_dims, select_high_variance_dims, select_random_dims, StrataScheme};
use crate::testbeds::{load_csv_2d, read_matrix_csv, write_matrix_csv, TargetFunction, Testbed};

pub use config::{
    load_scheme, AllocationSpec, DataSpec, ExperimentConfig, ModelSpec, SchemeSpec, DEFAULT_ALPHA,
    DEFAULT_REPETITIONS, DEFAULT_SELECTION_BUDGET,
};
pub use diagnostics::{validate_strata, Check, StrataDiagnostics, EQUIPROBABILITY_LEVEL};
pub use log::{unix_millis, RunLog};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPETITIONS_FILE: &str = "repetitions.csv";
pub const ESTIMATE_CSV_FILE: &str = "estimate.csv";
pub const ESTIMATE_JSON_FILE: &str = "estimate.json";
pub const CI_LINES_FILE: &str = "ci_lines.csv";
pub const CI_SUMMARY_FILE: &str = "ci_summary.csv";
pub const LOG_FILE: &str = "run.ndjson";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.csv";

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn opt_string(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes `n` testbed draws as CSV; byte-identical for a fixed seed.
pub fn generate(testbed: Testbed, n: usize, seed: u64, out: &Path) -> Result<()> {
    let mut rng = RngStream::new(seed, label("generate"));
    write_matrix_csv(out, testbed.dim(), &testbed.sample_n(n, &mut rng))
}

/// Reads observed data: 2-column ingestion (with optional differencing) for
/// 2-d data, a headed matrix otherwise.
pub fn load_data(spec: &DataSpec, dim: usize) -> Result<Vec<Vec<f64>>> {
    let rows = if dim == 2 { load_csv_2d(&spec.path, spec.first_difference)? } else { read_matrix_csv(&spec.path)? };
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelTrace {
    Flow { rows: Vec<TraceRow> },
    Gmm { objective: Vec<f64>, reinitialized: Vec<(usize, usize)> },
    None,
}

impl ModelTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        match self {
            ModelTrace::Flow { rows } => write_trace_csv(path, rows),
            ModelTrace::Gmm { objective, .. } => {
                let mut w = csv_writer(path)?;
                w.write_record(["iteration", "objective"])?;
                for (i, v) in objective.iter().enumerate() {
                    w.write_record([i.to_string(), v.to_string()])?;
                }
                w.flush()?;
                Ok(())
            }
            ModelTrace::None => Ok(()),
        }
    }
}

/// A transport map together with the observations it was fitted to.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub map: TransportMap,
    pub data: Option<Vec<Vec<f64>>>,
    pub trace: ModelTrace,
}

/// Fits `spec` to `data`; `seed` drives flow training or EM initialization.
pub fn fit_model(spec: &ModelSpec, testbed: Option<Testbed>, data: &[Vec<f64>], dim: usize, seed: u64) -> Result<(TransportMap, ModelTrace)> {
    match spec {
        ModelSpec::Exact => {
            let tb = testbed.ok_or_else(|| Error::Config("the exact model needs a testbed".into()))?;
            Ok((TransportMap::exact(tb)?, ModelTrace::None))
        }
        ModelSpec::Identity => Ok((TransportMap::identity(dim), ModelTrace::None)),
        ModelSpec::Flow { path: Some(p), .. } => Ok((load_map_with_dim(p, dim)?, ModelTrace::None)),
        ModelSpec::Flow { path: None, arch, train } => {
            let mut cfg = train.clone();
            cfg.seed = seed;
            let (map, rows) = train_flow(data, arch.unwrap_or_else(|| FlowArch::for_dim(dim)), &cfg)?;
            Ok((map, ModelTrace::Flow { rows }))
        }
        ModelSpec::Gmm { k, max_iters } => {
            let (model, trace) = fit_gmm(data, *k, *max_iters, seed)?;
            Ok((TransportMap::Gmm(model), ModelTrace::Gmm { objective: trace.objective, reinitialized: trace.reinitialized }))
        }
    }
}

fn needs_training(spec: &ModelSpec) -> bool {
    matches!(spec, ModelSpec::Flow { path: None, .. } | ModelSpec::Gmm { .. })
}

/// Observations used for training and for the observed-mean estimator: the
/// data file if given, otherwise a testbed sample when a model is trained or
/// a training size is set.
fn observations(cfg: &ExperimentConfig, rep: u64) -> Result<Option<Vec<Vec<f64>>>> {
    if let Some(spec) = &cfg.data {
        return load_data(spec, cfg.dim()).map(Some);
    }
    let Some(tb) = cfg.testbed else { return Ok(None) };
    if !needs_training(&cfg.model) && cfg.training_size.is_none() {
        return Ok(None);
    }
    let n = cfg.training_size.unwrap_or_else(|| tb.default_training_size());
    let mut rng = RngStream::new(cfg.seed, stream_id(&[label("training-data"), rep]));
    Ok(Some(tb.sample_n(n, &mut rng)))
}

/// Builds the model for repetition `rep` (use 0 when the model is shared).
/// The training seed is derived from the master seed, the configured
/// training seed and the repetition.
pub fn prepare_model(cfg: &ExperimentConfig, rep: u64) -> Result<FittedModel> {
    let data = observations(cfg, rep)?;
    let configured = match &cfg.model {
        ModelSpec::Flow { train, .. } => train.seed,
        _ => 0,
    };
    let seed = stream_id(&[cfg.seed, configured, rep]);
    let (map, trace) = fit_model(&cfg.model, cfg.testbed, data.as_deref().unwrap_or(&[]), cfg.dim(), seed)?;
    Ok(FittedModel { map, data, trace })
}

/// One estimate of one grid cell in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRow {
    pub rep: usize,
    pub function: String,
    pub scheme: String,
    pub truth: Option<f64>,
    pub report: EstimateReport,
    #[serde(skip)]
    pub timestamp_ms: u64,
}

impl RepetitionRow {
    pub const HEADER: [&'static str; 14] =
        ["rep", "method", "scheme", "f", "m", "R", "R_prime", "E", "SD", "AC", "CI_lo", "CI_hi", "I", "contains_I"];

    fn record(&self) -> Vec<String> {
        let r = &self.report;
        let (lo, hi) = r.ci.map_or((String::new(), String::new()), |c| (c.lo.to_string(), c.hi.to_string()));
        let contains = match (self.truth, r.ci) {
            (Some(i), Some(ci)) => u8::from(ci.contains(i)).to_string(),
            _ => String::new(),
        };
        vec![
            self.rep.to_string(),
            r.method.to_string(),
            self.scheme.clone(),
            self.function.clone(),
            r.num_strata.to_string(),
            r.budget.to_string(),
            r.pilot_budget.to_string(),
            r.estimate.to_string(),
            r.sd.to_string(),
            format_accuracy(r.accuracy),
            lo,
            hi,
            opt_string(self.truth),
            contains,
        ]
    }

    fn key(&self) -> (String, String, String, usize) {
        (self.function.clone(), self.scheme.clone(), self.report.method.to_string(), self.report.budget)
    }
}

fn finalize(report: EstimateReport, alpha: f64, truth: Option<f64>) -> Result<EstimateReport> {
    let report = report.with_ci(alpha)?;
    match truth {
        Some(i) if i != 0.0 => report.with_truth(i),
        _ => Ok(report),
    }
}

fn scheme_for_rep(
    spec: &SchemeSpec,
    idx: usize,
    map: &TransportMap,
    f: &TargetFunction,
    d: usize,
    streams: &Streams,
) -> Result<Option<StrataScheme>> {
    let select = streams.child(label("select")).child(idx as u64);
    match spec {
        SchemeSpec::RandomDims { eta, m0 } => {
            let dims = select_random_dims(d, *eta, &mut select.stream(0))?;
            Ok(Some(build_selected_dims(d, &dims, *m0)?))
        }
        SchemeSpec::HighVariance { eta, m0, selection_budget } => {
            let fx = |x: &[f64]| f.eval(x);
            let dims = select_high_variance_dims(map, &fx, d, *eta, *m0, *selection_budget, &select)?;
            Ok(Some(build_selected_dims(d, &dims, *m0)?))
        }
        other => other.build_static(d),
    }
}

/// All grid cells of one repetition, in config order: per function the
/// observed mean (when data exists), then budgets × schemes × allocations.
/// Cells with the same function and budget share one stream family, so a
/// one-stratum scheme reproduces the crude estimate.
pub fn run_repetition(cfg: &ExperimentConfig, model: &FittedModel, rep: usize) -> Result<Vec<RepetitionRow>> {
    let d = cfg.dim();
    let rep_streams = Streams::new(cfg.seed).child(label("rep")).child(rep as u64);
    let mut rows = Vec::new();
    for (fi, f) in cfg.functions.iter().enumerate() {
        let truth = cfg.testbed.and_then(|tb| tb.oracle(f));
        let fx = |x: &[f64]| f.eval(x);
        let push = |rows: &mut Vec<RepetitionRow>, scheme: String, report: EstimateReport| -> Result<()> {
            rows.push(RepetitionRow {
                rep,
                function: f.to_string(),
                scheme,
                truth,
                report: finalize(report, cfg.alpha, truth)?,
                timestamp_ms: unix_millis(),
            });
            Ok(())
        };
        if let Some(data) = &model.data {
            push(&mut rows, "observed".into(), observed_mean(data, &fx)?)?;
        }
        for &r in &cfg.budgets {
            let cell = rep_streams.child(label(&f.to_string())).child(r as u64);
            for (si, spec) in cfg.schemes.iter().enumerate() {
                let scheme_streams = rep_streams.child(fi as u64);
                match scheme_for_rep(spec, si, &model.map, f, d, &scheme_streams)? {
                    None => push(&mut rows, spec.to_string(), cmc_estimate_map(&model.map, &fx, r, &cell)?)?,
                    Some(scheme) => {
                        for alloc in &cfg.allocations {
                            let report = match alloc {
                                AllocationSpec::Prop => run_proportional(&scheme, &model.map, &fx, r, &cell)?,
                                AllocationSpec::Opt { pilot_fraction } => {
                                    run_optimal_pipeline(&scheme, &model.map, &fx, r, *pilot_fraction, &cell)?
                                }
                            };
                            push(&mut rows, spec.to_string(), report)?;
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Means over repetitions of one grid cell. `mean_ac` averages the
/// per-repetition accuracies; it is not the accuracy of `mean_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub scheme: String,
    pub function: String,
    pub num_strata: usize,
    pub budget: usize,
    pub pilot_budget: usize,
    pub repetitions: usize,
    pub truth: Option<f64>,
    pub mean_e: f64,
    pub mean_sd: f64,
    pub mean_ac: Option<f64>,
    /// Sample standard deviation of the estimates across repetitions.
    pub empirical_sd: Option<f64>,
    pub mean_ci_length: f64,
    pub coverage: Option<f64>,
}

impl AggregateRow {
    pub const HEADER: [&'static str; 14] =
        ["method", "scheme", "f", "m", "R", "R_prime", "K", "I", "E", "SD", "AC", "empirical_SD", "CI_length", "coverage"];

    fn record(&self) -> Vec<String> {
        vec![
            self.method.to_string(),
            self.scheme.clone(),
            self.function.clone(),
            self.num_strata.to_string(),
            self.budget.to_string(),
            self.pilot_budget.to_string(),
            self.repetitions.to_string(),
            opt_string(self.truth),
            self.mean_e.to_string(),
            self.mean_sd.to_string(),
            format_accuracy(self.mean_ac),
            opt_string(self.empirical_sd),
            self.mean_ci_length.to_string(),
            opt_string(self.coverage),
        ]
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Groups rows by cell in first-appearance order and averages.
pub fn aggregate(rows: &[RepetitionRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String, usize)> = Vec::new();
    for row in rows {
        let k = row.key();
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|k| {
            let cell: Vec<&RepetitionRow> = rows.iter().filter(|r| &r.key() == k).collect();
            let first = &cell[0];
            let n = cell.len();
            let mean_e = mean(cell.iter().map(|r| r.report.estimate));
            let empirical_sd = (n > 1).then(|| {
                (cell.iter().map(|r| (r.report.estimate - mean_e).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            let mean_ac = cell
                .iter()
                .map(|r| r.report.accuracy)
                .collect::<Option<Vec<f64>>>()
                .map(|v| mean(v.into_iter()));
            let coverage = first.truth.map(|i| {
                cell.iter().filter(|r| r.report.ci.is_some_and(|c| c.contains(i))).count() as f64 / n as f64
            });
            AggregateRow {
                method: first.report.method,
                scheme: first.scheme.clone(),
                function: first.function.clone(),
                num_strata: first.report.num_strata,
                budget: first.report.budget,
                pilot_budget: first.report.pilot_budget,
                repetitions: n,
                truth: first.truth,
                mean_e,
                mean_sd: mean(cell.iter().map(|r| r.report.sd)),
                mean_ac,
                empirical_sd,
                mean_ci_length: mean(cell.iter().map(|r| r.report.ci.map_or(f64::NAN, |c| c.length()))),
                coverage,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub rows: Vec<RepetitionRow>,
    pub aggregate: Vec<AggregateRow>,
    /// Trace of the shared model, when one was trained.
    pub trace: ModelTrace,
    pub map: Option<TransportMap>,
}

/// Runs `cfg.repetitions` repetitions of the whole grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let shared = if cfg.retrain_per_rep { None } else { Some(prepare_model(cfg, 0)?) };
    let per_rep: Vec<Vec<RepetitionRow>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| match &shared {
            Some(model) => run_repetition(cfg, model, rep),
            None => run_repetition(cfg, &prepare_model(cfg, rep as u64)?, rep),
        })
        .collect::<Result<_>>()?;
    let rows: Vec<RepetitionRow> = per_rep.into_iter().flatten().collect();
    let aggregate = aggregate(&rows);
    let (trace, map) = shared.map_or((ModelTrace::None, None), |m| (m.trace, Some(m.map)));
    Ok(ExperimentOutcome { config_hash: cfg.hash(), rows, aggregate, trace, map })
}

pub fn write_repetitions_csv(path: &Path, rows: &[RepetitionRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RepetitionRow::HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(AggregateRow::HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

fn log_rows(log: &mut RunLog, rows: &[RepetitionRow]) -> Result<()> {
    for row in rows {
        log.event(
            "estimate",
            Some(row.timestamp_ms),
            json!({
                "rep": row.rep,
                "f": row.function,
                "scheme": row.scheme,
                "method": row.report.method,
                "R": row.report.budget,
                "E": row.report.estimate,
                "SD": row.report.sd,
            }),
        )?;
    }
    Ok(())
}

fn open_log(dir: &Path, command: &str, cfg: &ExperimentConfig, hash: &str) -> Result<RunLog> {
    let mut log = RunLog::create(&dir.join(LOG_FILE), command, cfg.seed, hash)?;
    log.event("start", None, json!({ "config": cfg }))?;
    Ok(log)
}

fn write_shared_model(dir: &Path, outcome: &ExperimentOutcome) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if !matches!(outcome.trace, ModelTrace::None) {
        if let Some(map) = &outcome.map {
            save_map(map, &dir.join(MODEL_FILE))?;
            files.push(dir.join(MODEL_FILE));
        }
        outcome.trace.write_csv(&dir.join(TRACE_FILE))?;
        files.push(dir.join(TRACE_FILE));
    }
    Ok(files)
}

/// `experiment`: aggregate CSV, per-repetition sidecar, and the trained
/// model when one was fitted.
pub fn experiment_command(cfg: &ExperimentConfig, dir: &Path) -> Result<(ExperimentOutcome, Vec<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let outcome = run_experiment(cfg)?;
    let mut log = open_log(dir, "experiment", cfg, &outcome.config_hash)?;
    log_rows(&mut log, &outcome.rows)?;
    write_aggregate_csv(&dir.join(AGGREGATE_FILE), &outcome.aggregate)?;
    write_repetitions_csv(&dir.join(REPETITIONS_FILE), &outcome.rows)?;
    let mut files = vec![dir.join(AGGREGATE_FILE), dir.join(REPETITIONS_FILE)];
    files.extend(write_shared_model(dir, &outcome)?);
    log.finish()?;
    Ok((outcome, files))
}

/// `estimate`: one repetition of the grid, as CSV rows and full JSON reports.
pub fn estimate_command(cfg: &ExperimentConfig, dir: &Path) -> Result<(ExperimentOutcome, Vec<PathBuf>)> {
    let single = ExperimentConfig { repetitions: 1, ..cfg.clone() };
    fs::create_dir_all(dir)?;
    let outcome = run_experiment(&single)?;
    let mut log = open_log(dir, "estimate", &single, &outcome.config_hash)?;
    log_rows(&mut log, &outcome.rows)?;
    write_repetitions_csv(&dir.join(ESTIMATE_CSV_FILE), &outcome.rows)?;
    fs::write(dir.join(ESTIMATE_JSON_FILE), serde_json::to_string_pretty(&outcome.rows)? + "\n")?;
    let mut files = vec![dir.join(ESTIMATE_CSV_FILE), dir.join(ESTIMATE_JSON_FILE)];
    files.extend(write_shared_model(dir, &outcome)?);
    log.finish()?;
    Ok((outcome, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSummary {
    pub method: Method,
    pub scheme: String,
    pub function: String,
    pub budget: usize,
    pub repetitions: usize,
    pub truth: f64,
    pub coverage: f64,
    pub non_covering: usize,
    pub mean_length: f64,
}

/// Coverage summary per cell; needs a closed-form true value. The observed
/// mean is excluded since it does not vary across repetitions of a shared model.
pub fn ci_summaries(rows: &[RepetitionRow]) -> Result<Vec<CiSummary>> {
    let simulated: Vec<RepetitionRow> = rows.iter().filter(|r| r.report.method != Method::Obs).cloned().collect();
    aggregate(&simulated)
        .into_iter()
        .map(|a| {
            let truth = a.truth.ok_or_else(|| Error::Config(format!("no true value known for {}", a.function)))?;
            let coverage = a.coverage.expect("truth implies coverage");
            Ok(CiSummary {
                method: a.method,
                scheme: a.scheme,
                function: a.function,
                budget: a.budget,
                repetitions: a.repetitions,
                truth,
                coverage,
                non_covering: a.repetitions - (coverage * a.repetitions as f64).round() as usize,
                mean_length: a.mean_ci_length,
            })
        })
        .collect()
}

/// `ci-lines`: long-format interval lines plus a per-cell coverage summary.
pub fn ci_lines_command(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<CiSummary>, Vec<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let outcome = run_experiment(cfg)?;
    let summaries = ci_summaries(&outcome.rows)?;
    let mut log = open_log(dir, "ci-lines", cfg, &outcome.config_hash)?;
    log_rows(&mut log, &outcome.rows)?;

    let mut w = csv_writer(&dir.join(CI_LINES_FILE))?;
    w.write_record(["method", "scheme", "f", "R", "repetition", "E", "ci_lo", "ci_hi", "contains_I"])?;
    for row in outcome.rows.iter().filter(|r| r.report.method != Method::Obs) {
        let ci = row.report.ci.expect("finalized rows carry an interval");
        let truth = row.truth.expect("checked by ci_summaries");
        w.write_record([
            row.report.method.to_string(),
            row.scheme.clone(),
            row.function.clone(),
            row.report.budget.to_string(),
            row.rep.to_string(),
            row.report.estimate.to_string(),
            ci.lo.to_string(),
            ci.hi.to_string(),
            u8::from(ci.contains(truth)).to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(CI_SUMMARY_FILE))?;
    w.write_record(["method", "scheme", "f", "R", "K", "I", "coverage", "non_covering", "mean_length"])?;
    for s in &summaries {
        w.write_record([
            s.method.to_string(),
            s.scheme.clone(),
            s.function.clone(),
            s.budget.to_string(),
            s.repetitions.to_string(),
            s.truth.to_string(),
            s.coverage.to_string(),
            s.non_covering.to_string(),
            s.mean_length.to_string(),
        ])?;
    }
    w.flush()?;
    log.finish()?;
    Ok((summaries, vec![dir.join(CI_LINES_FILE), dir.join(CI_SUMMARY_FILE)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub n: usize,
    pub dim: usize,
    pub nll: f64,
    pub iterations: usize,
    pub model_path: PathBuf,
    pub trace_path: PathBuf,
}

/// `train`: fits a flow or mixture to a data file, writes the model and its
/// loss trace.
pub fn train_command(data: &DataSpec, dim: usize, spec: &ModelSpec, seed: u64, dir: &Path) -> Result<TrainSummary> {
    if !needs_training(spec) {
        return Err(Error::Config("train needs a flow without a path or a gmm model".into()));
    }
    fs::create_dir_all(dir)?;
    let rows = load_data(data, dim)?;
    let (map, trace) = fit_model(spec, None, &rows, dim, seed)?;
    let model_path = dir.join(MODEL_FILE);
    let trace_path = dir.join(TRACE_FILE);
    save_map(&map, &model_path)?;
    trace.write_csv(&trace_path)?;
    let iterations = match &trace {
        ModelTrace::Flow { rows } => rows.len(),
        ModelTrace::Gmm { objective, .. } => objective.len(),
        ModelTrace::None => 0,
    };
    let summary = TrainSummary {
        model: match spec {
            ModelSpec::Gmm { k, .. } => format!("gmm(k={k})"),
            _ => "flow".into(),
        },
        n: rows.len(),
        dim,
        nll: map.nll(&rows)?,
        iterations,
        model_path,
        trace_path,
    };
    fs::write(dir.join("train.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Builds a scheme for stand-alone validation; random coordinates are drawn
/// from `seed`, pilot-selected coordinates are not supported.
pub fn scheme_for_validation(spec: &SchemeSpec, d: usize, seed: u64) -> Result<StrataScheme> {
    match spec {
        SchemeSpec::Cmc => Err(Error::Config("the cmc scheme has no strata to validate".into())),
        SchemeSpec::HighVariance { .. } => {
            Err(Error::Config("pilot-selected schemes depend on a model; validate a selected-dims scheme".into()))
        }
        SchemeSpec::RandomDims { eta, m0 } => {
            let dims = select_random_dims(d, *eta, &mut RngStream::new(seed, label("select")))?;
            build_selected_dims(d, &dims, *m0)
        }
        other => Ok(other.build_static(d)?.expect("static scheme")),
    }
}

/// `validate-strata`: diagnostics JSON written to `dir`.
pub fn validate_strata_command(scheme: &StrataScheme, n_samples: usize, seed: u64, dir: &Path) -> Result<StrataDiagnostics> {
    fs::create_dir_all(dir)?;
    let diag = validate_strata(scheme, n_samples, seed);
    fs::write(dir.join("strata_diagnostics.json"), serde_json::to_string_pretty(&diag)? + "\n")?;
    Ok(diag)
}
