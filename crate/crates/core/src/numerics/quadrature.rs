use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    AdaptiveSimpson,
    GaussLegendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rule: QuadratureRule,
    pub abs_tol: f64,
    /// Maximum recursion depth of the adaptive bisection.
    pub max_subdivisions: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rule: QuadratureRule::AdaptiveSimpson, abs_tol: 1e-10, max_subdivisions: 60 }
    }
}

impl QuadratureSpec {
    pub fn with_tol(abs_tol: f64) -> Self {
        Self { abs_tol, ..Self::default() }
    }
}

/// Integrates `f` over `[a, b]` to `spec.abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Domain(format!("integration needs finite a <= b, got [{a}, {b}]")));
    }
    if !(spec.abs_tol > 0.0) || spec.max_subdivisions == 0 {
        return Err(Error::InvalidArgument("quadrature needs abs_tol > 0 and max_subdivisions >= 1".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    match spec.rule {
        QuadratureRule::AdaptiveSimpson => {
            let fa = f(a);
            let fb = f(b);
            let m = 0.5 * (a + b);
            let fm = f(m);
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, a, b, fa, fm, fb, whole, spec.abs_tol, spec.max_subdivisions)
        }
        QuadratureRule::GaussLegendre => {
            let rule = GaussLegendre::new(10);
            let whole = rule.apply(&f, a, b);
            gauss(&f, &rule, a, b, whole, spec.abs_tol, spec.max_subdivisions)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::NonConvergence { what: "adaptive Simpson quadrature", iterations: 0 });
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

fn gauss<F: Fn(f64) -> f64>(
    f: &F,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = rule.apply(f, a, m);
    let right = rule.apply(f, m, b);
    if (left + right - whole).abs() <= tol {
        return Ok(left + right);
    }
    if depth == 0 {
        return Err(Error::NonConvergence { what: "adaptive Gauss-Legendre quadrature", iterations: 0 });
    }
    Ok(gauss(f, rule, a, m, left, 0.5 * tol, depth - 1)? + gauss(f, rule, m, b, right, 0.5 * tol, depth - 1)?)
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn apply<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
