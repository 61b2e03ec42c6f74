//! Crude and stratified Monte Carlo estimators, budget allocation, confidence
//! intervals and the accuracy metric.
//!
//! Stratum `j` always draws from `streams.stream(j)`, and crude Monte Carlo
//! draws from `streams.stream(0)`. A one-stratum cartesian scheme therefore
//! reproduces the crude estimate exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::TransportMap;
use crate::numerics::normal_ppf;
use crate::sampling::{label, Streams};
use crate::strata::{sample_latent_in_stratum, StrataScheme};

pub const MIN_PER_STRATUM: usize = 2;
pub const DEFAULT_PILOT_FRACTION: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CMC")]
    Cmc,
    #[serde(rename = "prop")]
    Prop,
    #[serde(rename = "opt")]
    Opt,
    #[serde(rename = "general")]
    General,
    /// Sample mean of the observed data.
    #[serde(rename = "obs")]
    Obs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cmc => "CMC",
            Method::Prop => "prop",
            Method::Opt => "opt",
            Method::General => "general",
            Method::Obs => "obs",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: Vec<usize>,
    pub total: usize,
    pub method: Method,
    /// Set when an optimal allocation fell back to proportional because every
    /// pilot standard deviation was zero.
    pub fallback_proportional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub count: usize,
    pub mean: f64,
    pub sample_variance: f64,
}

impl StratumStats {
    /// Two-pass mean and unbiased variance.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sample_variance = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        Self { count: n, mean, sample_variance }
    }

    pub fn sd(&self) -> f64 {
        self.sample_variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub estimate: f64,
    pub sd: f64,
    #[serde(with = "inf_as_string", default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<ConfidenceInterval>,
    pub num_strata: usize,
    pub budget: usize,
    pub pilot_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_stratum: Option<Vec<StratumStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_per_stratum: Option<Vec<StratumStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<usize>>,
    /// `(Σ p_j ŝ_j)² / R` from the final run of the optimal pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posthoc_variance: Option<f64>,
    /// `(Σ p_j ŝ_j)²` without the budget factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posthoc_variance_unscaled: Option<f64>,
    #[serde(default)]
    pub allocation_fallback: bool,
}

pub const CSV_HEADER: [&str; 11] = ["method", "f", "m", "R", "R_prime", "E", "SD", "AC", "CI_lo", "CI_hi", "seed"];

pub fn format_accuracy(ac: Option<f64>) -> String {
    match ac {
        None => String::new(),
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) => v.to_string(),
    }
}

impl EstimateReport {
    fn new(method: Method, estimate: f64, sd: f64, num_strata: usize, budget: usize) -> Self {
        Self {
            method,
            estimate,
            sd,
            accuracy: None,
            ci: None,
            num_strata,
            budget,
            pilot_budget: 0,
            per_stratum: None,
            pilot_per_stratum: None,
            allocation: None,
            posthoc_variance: None,
            posthoc_variance_unscaled: None,
            allocation_fallback: false,
        }
    }

    /// Attaches the `1 − α` normal confidence interval.
    pub fn with_ci(mut self, alpha: f64) -> Result<Self> {
        let (lo, hi) = confidence_interval(&self, alpha)?;
        self.ci = Some(ConfidenceInterval { lo, hi, alpha });
        Ok(self)
    }

    /// Attaches the accuracy against a known true value.
    pub fn with_truth(mut self, i_true: f64) -> Result<Self> {
        self.accuracy = Some(accuracy(i_true, self.estimate)?);
        Ok(self)
    }

    pub fn csv_record(&self, f_name: &str, seed: u64) -> Vec<String> {
        let (lo, hi) = self.ci.map_or((String::new(), String::new()), |c| (c.lo.to_string(), c.hi.to_string()));
        vec![
            self.method.to_string(),
            f_name.to_string(),
            self.num_strata.to_string(),
            self.budget.to_string(),
            self.pilot_budget.to_string(),
            self.estimate.to_string(),
            self.sd.to_string(),
            format_accuracy(self.accuracy),
            lo,
            hi,
            seed.to_string(),
        ]
    }
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" }),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" => Ok(Some(f64::INFINITY)),
                "-inf" => Ok(Some(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("invalid accuracy {other:?}"))),
            },
        }
    }
}

/// Sample mean of `f` over observed data, reported with the crude standard error.
pub fn observed_mean<F>(data: &[Vec<f64>], f: &F) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut rows = data.iter();
    let mut report = cmc_estimate(|| Ok(f(rows.next().expect("r equals the data size"))), data.len())?;
    report.method = Method::Obs;
    Ok(report)
}

/// Crude Monte Carlo over `r` values produced by `draw`.
pub fn cmc_estimate<D: FnMut() -> Result<f64>>(mut draw: D, r: usize) -> Result<EstimateReport> {
    if r < 2 {
        return Err(Error::BudgetTooSmall { budget: r, strata: 1, needed: 2 });
    }
    let values = (0..r).map(|_| draw()).collect::<Result<Vec<_>>>()?;
    let stats = StratumStats::from_values(&values);
    Ok(EstimateReport::new(Method::Cmc, stats.mean, (stats.sample_variance / r as f64).sqrt(), 1, r))
}

/// Crude Monte Carlo of `f(X)` with `X` drawn from `map`.
pub fn cmc_estimate_map<F>(map: &TransportMap, f: &F, r: usize, streams: &Streams) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut rng = streams.stream(0);
    cmc_estimate(|| Ok(f(&map.sample(&mut rng)?)), r)
}

fn largest_remainder(weights: &[f64], r: usize, min: usize) -> Result<Vec<usize>> {
    let m = weights.len();
    if m == 0 {
        return Err(Error::InvalidArgument("allocation over zero strata".into()));
    }
    let needed = m * min;
    if r < needed {
        return Err(Error::BudgetTooSmall { budget: r, strata: m, needed });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("allocation weights must be finite and nonnegative: {weights:?}")));
    }
    let mut locked = vec![false; m];
    let targets = loop {
        let free_budget = (r - min * locked.iter().filter(|&&l| l).count()) as f64;
        let wsum: f64 = weights.iter().zip(&locked).filter(|(_, &l)| !l).map(|(w, _)| w).sum();
        let n_free = locked.iter().filter(|&&l| !l).count();
        let targets: Vec<f64> = weights
            .iter()
            .zip(&locked)
            .map(|(&w, &l)| match (l, wsum > 0.0) {
                (true, _) => 0.0,
                (false, true) => free_budget * w / wsum,
                (false, false) => free_budget / n_free as f64,
            })
            .collect();
        let mut changed = false;
        for j in 0..m {
            if !locked[j] && targets[j] < min as f64 {
                locked[j] = true;
                changed = true;
            }
        }
        if !changed {
            break targets;
        }
    };
    let mut counts: Vec<usize> =
        targets.iter().zip(&locked).map(|(&t, &l)| if l { min } else { t.floor() as usize }).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..m).filter(|&j| !locked[j]).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle().take(r - assigned) {
        counts[j] += 1;
    }
    Ok(counts)
}

fn check_probs(p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("stratum probabilities must be nonnegative and sum to 1, got {total}")));
    }
    Ok(())
}

/// `R_j ≈ p_j R`, floored at [`MIN_PER_STRATUM`] and rounded by largest
/// remainder (ties to the lower index) so that `Σ R_j = R`.
pub fn proportional_allocation(p: &[f64], r: usize) -> Result<Allocation> {
    check_probs(p)?;
    Ok(Allocation {
        counts: largest_remainder(p, r, MIN_PER_STRATUM)?,
        total: r,
        method: Method::Prop,
        fallback_proportional: false,
    })
}

/// Neyman allocation `R_j ∝ p_j σ_j`. All-zero `pilot_sd` falls back to
/// proportional and sets `fallback_proportional`.
pub fn optimal_allocation(p: &[f64], pilot_sd: &[f64], r: usize) -> Result<Allocation> {
    check_probs(p)?;
    if p.len() != pilot_sd.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: pilot_sd.len() });
    }
    if pilot_sd.iter().all(|&s| s == 0.0) {
        log::warn!("all pilot standard deviations are zero; using proportional allocation");
        let mut a = proportional_allocation(p, r)?;
        a.method = Method::Opt;
        a.fallback_proportional = true;
        return Ok(a);
    }
    let weights: Vec<f64> = p.iter().zip(pilot_sd).map(|(p, s)| p * s).collect();
    Ok(Allocation {
        counts: largest_remainder(&weights, r, MIN_PER_STRATUM)?,
        total: r,
        method: Method::Opt,
        fallback_proportional: false,
    })
}

/// Per-stratum statistics of `f(map(Z))` for `Z` drawn in each stratum.
pub fn stratum_samples<F>(
    scheme: &StrataScheme,
    map: &TransportMap,
    f: &F,
    counts: &[usize],
    streams: &Streams,
) -> Result<Vec<StratumStats>>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if !map.has_latent() {
        return Err(Error::NotInvertible("stratified estimation needs an invertible transport map"));
    }
    if map.dim() != scheme.dim {
        return Err(Error::DimensionMismatch { expected: scheme.dim, got: map.dim() });
    }
    if counts.len() != scheme.num_strata() {
        return Err(Error::DimensionMismatch { expected: scheme.num_strata(), got: counts.len() });
    }
    if let Some(&c) = counts.iter().find(|&&c| c < MIN_PER_STRATUM) {
        return Err(Error::BudgetTooSmall { budget: c, strata: 1, needed: MIN_PER_STRATUM });
    }
    (0..scheme.num_strata())
        .into_par_iter()
        .map(|j| {
            let id = scheme.stratum(j)?;
            let mut rng = streams.stream(j as u64);
            let values = (0..counts[j])
                .map(|_| {
                    let z = sample_latent_in_stratum(scheme, &id, &mut rng)?;
                    Ok(f(&map.forward(&z)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StratumStats::from_values(&values))
        })
        .collect()
}

/// `Ŷ = Σ p_j Ŷ_j` with variance estimate `Σ p_j² ŝ_j² / R_j`.
pub fn stratified_estimate<F>(
    scheme: &StrataScheme,
    map: &TransportMap,
    f: &F,
    alloc: &Allocation,
    streams: &Streams,
) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let stats = stratum_samples(scheme, map, f, &alloc.counts, streams)?;
    let (estimate, var) = combine(&scheme.stratum_probs, &stats);
    let method = if alloc.method == Method::Cmc { Method::General } else { alloc.method };
    let mut report = EstimateReport::new(method, estimate, var.sqrt(), scheme.num_strata(), alloc.total);
    report.per_stratum = Some(stats);
    report.allocation = Some(alloc.counts.clone());
    report.allocation_fallback = alloc.fallback_proportional;
    Ok(report)
}

fn combine(p: &[f64], stats: &[StratumStats]) -> (f64, f64) {
    let mut estimate = 0.0;
    let mut var = 0.0;
    for (p, s) in p.iter().zip(stats) {
        estimate += p * s.mean;
        var += p * p * s.sample_variance / s.count as f64;
    }
    (estimate, var)
}

/// Proportional stratified estimate with total budget `r`.
pub fn run_proportional<F>(
    scheme: &StrataScheme,
    map: &TransportMap,
    f: &F,
    r: usize,
    streams: &Streams,
) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let alloc = proportional_allocation(&scheme.stratum_probs, r)?;
    stratified_estimate(scheme, map, f, &alloc, streams)
}

/// Pilot run of `round(pilot_fraction · r)` proportional draws, Neyman
/// allocation from the pilot standard deviations, then a fresh final run of
/// size `r`. Pilot draws are not reused.
pub fn run_optimal_pipeline<F>(
    scheme: &StrataScheme,
    map: &TransportMap,
    f: &F,
    r: usize,
    pilot_fraction: f64,
    streams: &Streams,
) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if !(pilot_fraction > 0.0 && pilot_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!("pilot fraction must be positive, got {pilot_fraction}")));
    }
    let m = scheme.num_strata();
    let r_pilot = (pilot_fraction * r as f64).round() as usize;
    if r_pilot < m * MIN_PER_STRATUM {
        return Err(Error::BudgetTooSmall { budget: r_pilot, strata: m, needed: m * MIN_PER_STRATUM });
    }
    let pilot_alloc = proportional_allocation(&scheme.stratum_probs, r_pilot)?;
    let pilot = stratum_samples(scheme, map, f, &pilot_alloc.counts, &streams.child(label("pilot")))?;
    let pilot_sd: Vec<f64> = pilot.iter().map(StratumStats::sd).collect();
    let alloc = optimal_allocation(&scheme.stratum_probs, &pilot_sd, r)?;
    let mut report = stratified_estimate(scheme, map, f, &alloc, &streams.child(label("final")))?;
    let final_stats = report.per_stratum.as_ref().expect("stratified report has stats");
    let d: f64 = scheme.stratum_probs.iter().zip(final_stats).map(|(p, s)| p * s.sd()).sum();
    report.posthoc_variance = Some(d * d / r as f64);
    report.posthoc_variance_unscaled = Some(d * d);
    report.pilot_budget = r_pilot;
    report.pilot_per_stratum = Some(pilot);
    Ok(report)
}

/// `E ± z_{1−α/2} · sd`.
pub fn confidence_interval(report: &EstimateReport, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = normal_ppf(1.0 - alpha / 2.0);
    Ok((report.estimate - z * report.sd, report.estimate + z * report.sd))
}

/// `−log₁₀ |(I − E) / I|`; `+∞` when `E = I`.
pub fn accuracy(i_true: f64, e: f64) -> Result<f64> {
    if i_true == 0.0 || !i_true.is_finite() {
        return Err(Error::Domain(format!("accuracy needs a finite nonzero true value, got {i_true}")));
    }
    let rel = ((i_true - e) / i_true).abs();
    Ok(if rel == 0.0 { f64::INFINITY } else { -rel.log10() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub within: f64,
    pub between: f64,
    pub total: f64,
}

pub fn variance_decomposition(p: &[f64], means: &[f64], vars: &[f64]) -> Result<VarianceDecomposition> {
    check_probs(p)?;
    if means.len() != p.len() || vars.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: means.len().min(vars.len()) });
    }
    let mean: f64 = p.iter().zip(means).map(|(p, m)| p * m).sum();
    let within: f64 = p.iter().zip(vars).map(|(p, v)| p * v).sum();
    let between: f64 = p.iter().zip(means).map(|(p, m)| p * (m - mean) * (m - mean)).sum();
    Ok(VarianceDecomposition { within, between, total: within + between })
}
