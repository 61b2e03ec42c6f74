//! Synthetic example distributions with exact samplers, closed-form
//! transports from the standard Gaussian and closed-form oracles, plus CSV
//! ingestion for observed data.

mod data;
mod targets;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone, gamma_quantile_unit, regularized_beta, std_normal_cdf};

pub use data::{load_csv_2d, read_matrix_csv, write_matrix_csv};
pub use targets::TargetFunction;

pub const STUDENT_NU: u32 = 5;
pub const STUDENT_OFF_DIAGONAL: f64 = 0.2;

const A1_NORMAL_MEAN: f64 = 0.6;
const A1_NORMAL_VAR: f64 = 0.0046;
const A1_BETA: (f64, f64) = (7.0, 1.1);

const SYNTH_MU1: [f64; 5] = [-1.0, 1.0, 2.0, 1.0, 1.0];
const SYNTH_MU2: [f64; 5] = [1.0, -0.5, 0.0, 1.2, -0.8];
const SYNTH_SIGMA1: [[f64; 5]; 5] = [
    [55.0, 8.0, 17.0, 19.0, 23.0],
    [8.0, 8.0, 8.0, 9.0, 11.0],
    [17.0, 8.0, 13.0, 15.0, 20.0],
    [19.0, 9.0, 15.0, 23.0, 24.0],
    [23.0, 11.0, 20.0, 24.0, 32.0],
];
const SYNTH_SIGMA2: [[f64; 5]; 5] = [
    [1.0, 0.8, 0.6, 0.4, -0.3],
    [0.8, 2.0, 1.0, 0.7, -0.5],
    [0.6, 1.0, 1.5, 0.9, -0.4],
    [0.4, 0.7, 0.9, 1.2, -0.2],
    [-0.3, -0.5, -0.4, -0.2, 1.0],
];
const SYNTH_NORMAL_SD: [f64; 4] = [1.0, 1.2, 1.4, 1.6];
const SYNTH_EXP_SCALE: [f64; 4] = [0.4, 0.5, 0.6, 0.7];
const SYNTH_GAMMA_SCALE: [f64; 2] = [1.6, 1.8];

/// Coordinate roles of the 30-dimensional example, 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Synth30Coord {
    Block1(usize),
    Block2(usize),
    Normal(f64),
    Exponential(f64),
    Gamma2(f64),
}

pub fn synth30_layout() -> [Synth30Coord; 30] {
    use Synth30Coord::*;
    let mut out = [Normal(1.0); 30];
    for i in 0..5 {
        out[i] = Block1(i);
        out[15 + i] = Block2(i);
    }
    for half in [0, 15] {
        for i in 0..4 {
            out[half + 5 + i] = Normal(SYNTH_NORMAL_SD[i]);
            out[half + 9 + i] = Exponential(SYNTH_EXP_SCALE[i]);
        }
        out[half + 13] = Gamma2(SYNTH_GAMMA_SCALE[0]);
        out[half + 14] = Gamma2(SYNTH_GAMMA_SCALE[1]);
    }
    out
}

/// Mean and covariance of the two correlated blocks.
pub fn synth30_blocks() -> [([f64; 5], [[f64; 5]; 5]); 2] {
    [(SYNTH_MU1, SYNTH_SIGMA1), (SYNTH_MU2, SYNTH_SIGMA2)]
}

fn cholesky_rows<const N: usize>(m: &[[f64; N]; N]) -> Result<Vec<Vec<f64>>> {
    let mat = nalgebra::DMatrix::from_fn(N, N, |i, j| m[i][j]);
    let l = mat.cholesky().ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))?.l();
    Ok((0..N).map(|i| (0..N).map(|j| l[(i, j)]).collect()).collect())
}

fn synth_factors() -> &'static [Vec<Vec<f64>>; 2] {
    static CELL: OnceLock<[Vec<Vec<f64>>; 2]> = OnceLock::new();
    CELL.get_or_init(|| {
        [cholesky_rows(&SYNTH_SIGMA1).expect("Σ1 is positive definite"), cholesky_rows(&SYNTH_SIGMA2).expect("Σ2 is positive definite")]
    })
}

/// Correlation matrix `Σ_ii = 1`, `Σ_ij = ρ` of the Student-t testbeds.
pub fn student_sigma(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { STUDENT_OFF_DIAGONAL }).collect()).collect()
}

fn student_factor(d: usize) -> &'static Vec<Vec<f64>> {
    static CELL: OnceLock<[Vec<Vec<f64>>; 2]> = OnceLock::new();
    let cells = CELL.get_or_init(|| {
        let f = |d: usize| {
            let s = student_sigma(d);
            let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| s[i][j]);
            let l = mat.cholesky().expect("positive definite").l();
            (0..d).map(|i| (0..d).map(|j| l[(i, j)]).collect()).collect()
        };
        [f(3), f(4)]
    });
    &cells[d - 3]
}

fn lower_mul(l: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    l.iter().enumerate().map(|(i, row)| (0..=i).map(|j| row[j] * z[j]).sum()).collect()
}

/// `−ln(1 − Φ(z))`, accurate in both tails.
fn neg_log_normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        -(-std_normal_cdf(z)).ln_1p()
    } else {
        -std_normal_cdf(-z).ln()
    }
}

pub fn student_t_sample(l: &[Vec<f64>], mu: &[f64], nu: u32, rng: &mut crate::sampling::RngStream) -> Vec<f64> {
    let d = mu.len();
    let z: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let w: f64 = (0..nu).map(|_| rng.standard_normal().powi(2)).sum();
    let scale = (w / nu as f64).sqrt();
    lower_mul(l, &z).iter().zip(mu).map(|(v, m)| m + v / scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Testbed {
    /// Density `x₁ e^{−x₁(x₂+1)}` on the positive quadrant.
    Example1,
    /// `½ U(0.2, 0.4) + ¼ N(0.6, 0.0046) + ¼ Beta(7, 1.1)`.
    ExampleA1,
    /// Multivariate `t₅` with unit variances and correlations 0.2.
    StudentT3,
    StudentT4,
    /// 30-dimensional mixture of correlated normal blocks, normals,
    /// exponentials and gammas.
    Synth30,
}

pub const TESTBEDS: [Testbed; 5] =
    [Testbed::Example1, Testbed::ExampleA1, Testbed::StudentT3, Testbed::StudentT4, Testbed::Synth30];

impl Testbed {
    pub fn name(self) -> &'static str {
        match self {
            Testbed::Example1 => "example1",
            Testbed::ExampleA1 => "exampleA1",
            Testbed::StudentT3 => "student-t-d3",
            Testbed::StudentT4 => "student-t-d4",
            Testbed::Synth30 => "synth30",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Testbed::Example1 => 2,
            Testbed::ExampleA1 => 1,
            Testbed::StudentT3 => 3,
            Testbed::StudentT4 => 4,
            Testbed::Synth30 => 30,
        }
    }

    pub fn default_training_size(self) -> usize {
        match self {
            Testbed::Example1 | Testbed::ExampleA1 => 1000,
            Testbed::StudentT3 | Testbed::StudentT4 => 20_000,
            Testbed::Synth30 => 500,
        }
    }

    /// Whether a closed-form map from `N(0, I)` exists.
    pub fn has_transport(self) -> bool {
        !matches!(self, Testbed::StudentT3 | Testbed::StudentT4)
    }

    pub fn sample(self, rng: &mut crate::sampling::RngStream) -> Vec<f64> {
        match self {
            Testbed::Example1 => {
                let x1 = -rng.uniform().ln();
                let x2 = -rng.uniform().ln() / x1;
                vec![x1, x2]
            }
            Testbed::ExampleA1 => {
                let u = rng.uniform();
                let x = if u < 0.5 {
                    0.2 + 0.2 * rng.uniform()
                } else if u < 0.75 {
                    A1_NORMAL_MEAN + A1_NORMAL_VAR.sqrt() * rng.standard_normal()
                } else {
                    Beta::new(A1_BETA.0, A1_BETA.1).expect("valid shape").sample(rng)
                };
                vec![x]
            }
            Testbed::StudentT3 | Testbed::StudentT4 => {
                let d = self.dim();
                student_t_sample(student_factor(d), &vec![0.0; d], STUDENT_NU, rng)
            }
            Testbed::Synth30 => {
                let [l1, l2] = synth_factors();
                let mut x = vec![0.0; 30];
                let z1: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
                let z2: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
                let b1 = lower_mul(l1, &z1);
                let b2 = lower_mul(l2, &z2);
                for (i, role) in synth30_layout().iter().enumerate() {
                    x[i] = match *role {
                        Synth30Coord::Block1(k) => SYNTH_MU1[k] + b1[k],
                        Synth30Coord::Block2(k) => SYNTH_MU2[k] + b2[k],
                        Synth30Coord::Normal(s) => s * rng.standard_normal(),
                        Synth30Coord::Exponential(s) => -s * rng.uniform().ln(),
                        Synth30Coord::Gamma2(s) => -s * (rng.uniform().ln() + rng.uniform().ln()),
                    };
                }
                x
            }
        }
    }

    pub fn sample_n(self, n: usize, rng: &mut crate::sampling::RngStream) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Closed-form map `z ↦ x` carrying `N(0, I)` to the testbed law.
    pub fn transport(self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        match self {
            Testbed::Example1 => {
                let x1 = neg_log_normal_sf(z[0]);
                Ok(vec![x1, neg_log_normal_sf(z[1]) / x1])
            }
            Testbed::ExampleA1 => Ok(vec![example_a1_quantile_from_normal(z[0])?]),
            Testbed::StudentT3 | Testbed::StudentT4 => {
                Err(Error::NotInvertible("Student-t testbed has no closed-form transport"))
            }
            Testbed::Synth30 => {
                let [l1, l2] = synth_factors();
                let b1 = lower_mul(l1, &z[0..5]);
                let b2 = lower_mul(l2, &z[15..20]);
                synth30_layout()
                    .iter()
                    .enumerate()
                    .map(|(i, role)| {
                        Ok(match *role {
                            Synth30Coord::Block1(k) => SYNTH_MU1[k] + b1[k],
                            Synth30Coord::Block2(k) => SYNTH_MU2[k] + b2[k],
                            Synth30Coord::Normal(s) => s * z[i],
                            Synth30Coord::Exponential(s) => s * neg_log_normal_sf(z[i]),
                            Synth30Coord::Gamma2(s) => s * gamma_quantile_unit(std_normal_cdf(z[i]), 2.0)?,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Closed-form `E f(X)` where one is known.
    pub fn oracle(self, f: &TargetFunction) -> Option<f64> {
        match (self, f) {
            (Testbed::Example1, TargetFunction::JPlus(t)) => Some(example1_joint_survival(*t)),
            (Testbed::Example1, TargetFunction::JMinus(t)) => Some(example1_joint_cdf(*t)),
            (Testbed::ExampleA1, TargetFunction::JMinus(t)) => example_a1_cdf(*t).ok(),
            (Testbed::ExampleA1, TargetFunction::JPlus(t)) => example_a1_cdf(*t).ok().map(|p| 1.0 - p),
            (_, TargetFunction::Const(c)) => Some(*c),
            _ => None,
        }
    }
}

/// `P(X₁ > t, X₂ > t) = e^{−t(t+1)} / (t+1)` for `t ≥ 0`.
pub fn example1_joint_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    (-t * (t + 1.0)).exp() / (t + 1.0)
}

/// `P(X₁ ≤ t, X₂ ≤ t) = 1 − e^{−t} − (1 − e^{−t(t+1)}) / (t+1)` for `t ≥ 0`.
pub fn example1_joint_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    -(-t).exp_m1() + (-t * (t + 1.0)).exp_m1() / (t + 1.0)
}

pub fn example_a1_cdf(x: f64) -> Result<f64> {
    let uniform = ((x - 0.2) / 0.2).clamp(0.0, 1.0);
    let normal = std_normal_cdf((x - A1_NORMAL_MEAN) / A1_NORMAL_VAR.sqrt());
    let beta = if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        regularized_beta(x, A1_BETA.0, A1_BETA.1)?
    };
    Ok(0.5 * uniform + 0.25 * normal + 0.25 * beta)
}

fn example_a1_sf(x: f64) -> Result<f64> {
    let uniform = ((0.4 - x) / 0.2).clamp(0.0, 1.0);
    let normal = std_normal_cdf(-(x - A1_NORMAL_MEAN) / A1_NORMAL_VAR.sqrt());
    let beta = if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        regularized_beta(1.0 - x, A1_BETA.1, A1_BETA.0)?
    };
    Ok(0.5 * uniform + 0.25 * normal + 0.25 * beta)
}

/// `F⁻¹(Φ(z))` for the Example A1 mixture, solved on the tail that keeps
/// the probability well conditioned.
fn example_a1_quantile_from_normal(z: f64) -> Result<f64> {
    let sd = A1_NORMAL_VAR.sqrt();
    let (lo, hi) = (A1_NORMAL_MEAN - 40.0 * sd, A1_NORMAL_MEAN + 40.0 * sd);
    if z <= 0.0 {
        let ln_p = std_normal_cdf(z).ln();
        find_root_monotone(|x| example_a1_cdf(x).map_or(f64::NAN, |c| c.ln() - ln_p), lo, hi, 1e-14)
    } else {
        let ln_q = std_normal_cdf(-z).ln();
        find_root_monotone(|x| example_a1_sf(x).map_or(f64::NAN, |s| ln_q - s.ln()), lo, hi, 1e-14)
    }
}

impl fmt::Display for Testbed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Testbed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TESTBEDS
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown testbed {s:?}")))
    }
}

impl Serialize for Testbed {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Testbed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
