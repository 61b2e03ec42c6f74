use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::numerics::gof::chi2_gof;
use crate::numerics::{sin_power_integral_closed, Interval};
use crate::sampling::{ar_sample_sin_power, label, standard_normal_vector, Streams};
use crate::strata::{classify_latent, sample_latent_in_stratum, SchemeKind, StrataScheme};

pub const EQUIPROBABILITY_LEVEL: f64 = 0.001;
const MAX_ROUND_TRIP_STRATA: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataDiagnostics {
    pub dim: usize,
    pub num_strata: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub scheme: Value,
}

impl StrataDiagnostics {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, passed: bool, detail: Value) -> Check {
    Check { name: name.into(), passed, detail }
}

fn equiprobability(scheme: &StrataScheme, n: usize, streams: &Streams) -> Check {
    let m = scheme.num_strata();
    if (n as f64) < 5.0 * m as f64 {
        return check("equiprobability", false, json!({"reason": format!("need at least {} samples", 5 * m)}));
    }
    let mut counts = vec![0u64; m];
    let mut rng = streams.stream(0);
    for _ in 0..n {
        counts[classify_latent(scheme, &standard_normal_vector(scheme.dim, &mut rng)).flat] += 1;
    }
    match chi2_gof(&counts, &scheme.stratum_probs) {
        Ok(t) => check(
            "equiprobability",
            t.p_value > EQUIPROBABILITY_LEVEL,
            json!({"statistic": t.statistic, "p_value": t.p_value, "level": EQUIPROBABILITY_LEVEL}),
        ),
        Err(e) => check("equiprobability", false, json!({"reason": e.to_string()})),
    }
}

fn round_trip(scheme: &StrataScheme, n: usize, streams: &Streams) -> Check {
    let m = scheme.num_strata();
    let strata = m.min(MAX_ROUND_TRIP_STRATA);
    let per = (n / strata).clamp(1, 20);
    let mut failures = 0usize;
    let mut first_failure = Value::Null;
    for j in 0..strata {
        let id = scheme.stratum(j).expect("index in range");
        let mut rng = streams.stream(j as u64);
        for _ in 0..per {
            let err = match sample_latent_in_stratum(scheme, &id, &mut rng) {
                Ok(z) => {
                    let got = classify_latent(scheme, &z).flat;
                    (got != j).then(|| format!("sample from stratum {j} classified as {got}"))
                }
                Err(e) => Some(format!("stratum {j}: {e}")),
            };
            if let Some(msg) = err {
                failures += 1;
                if first_failure.is_null() {
                    first_failure = msg.into();
                }
            }
        }
    }
    check(
        "round-trip",
        failures == 0,
        json!({"strata_checked": strata, "per_stratum": per, "failures": failures, "first_failure": first_failure}),
    )
}

/// Mean AR iterations per angular axis against `|window| / ∫_window sinᵏ`,
/// the expected count for uniform proposals accepted with probability `sinᵏ`.
fn angular_acceptance(d: usize, boundaries: &[Vec<f64>], n: usize, streams: &Streams) -> Check {
    let mut axes = Vec::new();
    let mut passed = true;
    for (i, b) in boundaries.iter().enumerate().skip(1) {
        let k = (d - 1 - i) as u32;
        let windows = b.len() + 1;
        let per = (n / (windows * (d - 2))).clamp(200, 10_000);
        let mut observed_total = 0.0;
        let mut expected_total = 0.0;
        let mut axis_ok = true;
        let mut rng = streams.stream(i as u64);
        for w in 0..windows {
            let lo = if w == 0 { 0.0 } else { b[w - 1] };
            let hi = if w == b.len() { std::f64::consts::PI } else { b[w] };
            let mass = sin_power_integral_closed(k, hi) - sin_power_integral_closed(k, lo);
            let expected = (hi - lo) / mass;
            let mut iters = 0usize;
            for _ in 0..per {
                match ar_sample_sin_power(k, Interval { lo, hi }, &mut rng) {
                    Ok(r) => iters += r.iterations,
                    Err(_) => {
                        axis_ok = false;
                        break;
                    }
                }
            }
            let observed = iters as f64 / per as f64;
            let p = 1.0 / expected;
            let se = ((1.0 - p) / (p * p) / per as f64).sqrt();
            axis_ok &= (observed - expected).abs() <= 5.0 * se + 1e-9;
            observed_total += observed;
            expected_total += expected;
        }
        passed &= axis_ok;
        axes.push(json!({
            "axis": i,
            "k": k,
            "draws_per_window": per,
            "mean_iterations": observed_total / windows as f64,
            "expected_iterations": expected_total / windows as f64,
            "passed": axis_ok,
        }));
    }
    check("ar-iterations", passed, json!({ "axes": axes }))
}

/// Runs the equiprobability, round-trip and (spherical) acceptance-rejection
/// checks on `scheme`.
pub fn validate_strata(scheme: &StrataScheme, n_samples: usize, seed: u64) -> StrataDiagnostics {
    let streams = Streams::new(seed).child(label("validate-strata"));
    let mut checks = Vec::new();
    let shape = scheme.validate_shape();
    let shape_ok = shape.is_ok();
    checks.push(check("shape", shape_ok, shape.err().map_or(Value::Null, |e| json!({"reason": e.to_string()}))));
    if shape_ok {
        checks.push(equiprobability(scheme, n_samples, &streams.child(label("equiprobability"))));
        checks.push(round_trip(scheme, n_samples, &streams.child(label("round-trip"))));
        if let SchemeKind::Spherical { angular_boundaries, .. } = &scheme.kind {
            if scheme.dim >= 3 {
                checks.push(angular_acceptance(scheme.dim, angular_boundaries, n_samples, &streams.child(label("ar"))));
            }
        }
    }
    StrataDiagnostics {
        dim: scheme.dim,
        num_strata: scheme.num_strata(),
        n_samples,
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
        scheme: scheme.describe(),
    }
}
