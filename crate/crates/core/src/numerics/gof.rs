//! Goodness-of-fit statistics used by the strata diagnostics and the test
//! suites.

use crate::error::{Error, Result};

use super::special::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson χ² test of observed counts against cell probabilities.
pub fn chi2_gof(counts: &[u64], probs: &[f64]) -> Result<TestOutcome> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: counts.len() });
    }
    if counts.len() == 1 {
        return Ok(TestOutcome { statistic: 0.0, p_value: 1.0 });
    }
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    let statistic: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = n * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = chi2_sf(statistic, (counts.len() - 1) as u32)?;
    Ok(TestOutcome { statistic, p_value })
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> TestOutcome {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    TestOutcome { statistic: d, p_value: kolmogorov_sf(d, n) }
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestOutcome {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    TestOutcome { statistic: d, p_value: kolmogorov_sf(d, na * nb / (na + nb)) }
}

/// Asymptotic Kolmogorov tail with Stephens' small-sample correction.
fn kolmogorov_sf(d: f64, n_eff: f64) -> f64 {
    let sqrt_n = n_eff.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
