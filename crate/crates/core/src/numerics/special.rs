//! Normal, chi-squared, gamma and beta distribution functions.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Standard normal distribution function Φ(x).
///
/// Evaluated through `erfc` so both tails keep full relative precision.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density φ(x).
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Inverse of [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    Ok(normal_ppf(p))
}

/// Unchecked quantile used on sampler hot paths, where `p` comes from an
/// open-interval uniform.
#[inline]
pub(crate) fn normal_ppf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1]
        return -normal_ppf(1.0 - p);
    }
    let mut x = acklam(p);
    // Halley refinement against the implemented cdf.
    for _ in 0..3 {
        if x.abs() > 37.0 {
            break;
        }
        let e = std_normal_cdf(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

/// Rational approximation with relative error around 1e-9, valid for p <= 0.5.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Natural log of the gamma function for positive arguments.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// ln B(a, b).
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete gamma pair (P(a, x), Q(a, x)).
///
/// Series below the crossover `x < a + 1`, Lentz continued fraction above.
pub fn regularized_gamma(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(Error::Domain(format!("incomplete gamma needs a > 0, x >= 0 (a={a}, x={x})")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                let p = (sum.ln() + log_prefactor).exp().min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::NonConvergence { what: "incomplete gamma series", iterations: MAX_ITER })
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                let q = (h.ln() + log_prefactor).exp().min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::NonConvergence { what: "incomplete gamma continued fraction", iterations: MAX_ITER })
    }
}

/// Chi-squared distribution function with `d` degrees of freedom: P(d/2, x/2).
pub fn chi2_cdf(x: f64, d: u32) -> Result<f64> {
    check_dof(d)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("chi2 cdf needs x >= 0, got {x}")));
    }
    Ok(regularized_gamma(0.5 * d as f64, 0.5 * x)?.0)
}

/// Upper tail of the chi-squared distribution, without cancellation.
pub fn chi2_sf(x: f64, d: u32) -> Result<f64> {
    check_dof(d)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("chi2 sf needs x >= 0, got {x}")));
    }
    Ok(regularized_gamma(0.5 * d as f64, 0.5 * x)?.1)
}

/// Inverse of [`chi2_cdf`].
pub fn chi2_quantile(p: f64, d: u32) -> Result<f64> {
    check_dof(d)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("chi2 quantile needs 0 < p < 1, got {p}")));
    }
    Ok(2.0 * gamma_quantile_unit(p, 0.5 * d as f64)?)
}

fn check_dof(d: u32) -> Result<()> {
    if d == 0 {
        return Err(Error::Domain("degrees of freedom must be >= 1".into()));
    }
    Ok(())
}

/// Quantile of Gamma(shape, scale = 1) by safeguarded Newton on P(shape, y).
pub fn gamma_quantile_unit(p: f64, shape: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(shape > 0.0) {
        return Err(Error::Domain(format!("gamma quantile needs 0 < p < 1 and shape > 0 (p={p})")));
    }
    // Wilson-Hilferty start
    let z = normal_ppf(p);
    let c = 1.0 / (9.0 * shape);
    let mut y = shape * (1.0 - c + z * c.sqrt()).powi(3);
    if !(y > 0.0) || !y.is_finite() {
        // small-p regime: P(a, y) ~ y^a / Γ(a + 1)
        y = ((p.ln() + ln_gamma(shape + 1.0)) / shape).exp();
    }

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let ln_g = ln_gamma(shape);
    for _ in 0..200 {
        let (cdf, _) = regularized_gamma(shape, y)?;
        let err = cdf - p;
        if err == 0.0 {
            return Ok(y);
        }
        if err > 0.0 {
            hi = hi.min(y);
        } else {
            lo = lo.max(y);
        }
        let log_pdf = (shape - 1.0) * y.ln() - y - ln_g;
        let pdf = log_pdf.exp();
        let mut next = if pdf > 0.0 && pdf.is_finite() { y - err / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * y.max(1e-300) };
        }
        if (next - y).abs() <= 1e-15 * y {
            return Ok(next);
        }
        y = next;
        if hi.is_finite() && (hi - lo) <= 1e-15 * hi {
            return Ok(y);
        }
    }
    Err(Error::NonConvergence { what: "gamma quantile", iterations: 200 })
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("incomplete beta needs a, b > 0 (a={a}, b={b})")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_cf(x, a, b)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a)? / b)
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NonConvergence { what: "incomplete beta continued fraction", iterations: MAX_ITER })
}

/// Student-t distribution function with `nu` degrees of freedom.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("student t needs nu > 0, got {nu}")));
    }
    let tail = 0.5 * regularized_beta(nu / (nu + x * x), 0.5 * nu, 0.5)?;
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// c_k = ∫₀^π sinᵏ(x) dx = B(1/2, (k+1)/2), the normalizer of the angular
/// densities h_k.
pub fn sin_power_norm(k: u32) -> f64 {
    let k = k as f64;
    (ln_gamma(0.5) + ln_gamma(0.5 * (k + 1.0)) - ln_gamma(0.5 * k + 1.0)).exp()
}

/// ∫₀^φ sinᵏ via the reduction formula. Used only as a cross-check oracle for
/// the quadrature-based boundary construction.
pub fn sin_power_integral_closed(k: u32, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    let (mut cur, mut j) = if k % 2 == 0 { (phi, 0) } else { (1.0 - c, 1) };
    while j < k {
        let n = (j + 2) as f64;
        cur = -s.powi(j as i32 + 1) * c / n + (n - 1.0) / n * cur;
        j += 2;
    }
    cur
}

/// Error function, re-exported for test oracles.
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Convenience constant used by change-of-variables code.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
