use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Integrands `f` whose expectation `E f(X)` is estimated.
///
/// Names: `j+T` and `j-T` (all coordinates above / at most `T`), `h1`–`h3`
/// (product-based, guarded by `j+1`), `rho1`–`rho3` (scalar), `g1`–`g6`
/// (bivariate), plus `coord:I` and `const:C` for testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetFunction {
    JPlus(f64),
    JMinus(f64),
    H1,
    H2,
    H3,
    Rho1,
    Rho2,
    Rho3,
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
    Coord(usize),
    Const(f64),
}

fn all_above(x: &[f64], t: f64) -> bool {
    x.iter().all(|&v| v > t)
}

impl TargetFunction {
    /// Smallest dimension the function accepts and whether it is fixed.
    fn arity(&self) -> (usize, bool) {
        use TargetFunction::*;
        match self {
            JPlus(_) | JMinus(_) | Const(_) => (1, false),
            H1 | H2 | H3 => (2, false),
            Rho1 | Rho2 | Rho3 => (1, true),
            G1 | G2 | G3 | G4 | G5 | G6 => (2, true),
            Coord(i) => (i + 1, false),
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let (min, exact) = self.arity();
        if d < min || (exact && d != min) {
            return Err(Error::DimensionMismatch { expected: min, got: d });
        }
        Ok(())
    }

    /// Whether the function only takes the values 0 and 1.
    pub fn is_indicator(&self) -> bool {
        matches!(self, TargetFunction::JPlus(_) | TargetFunction::JMinus(_) | TargetFunction::G1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        use TargetFunction::*;
        let prod = || x.iter().product::<f64>();
        match *self {
            JPlus(t) => f64::from(all_above(x, t)),
            JMinus(t) => f64::from(x.iter().all(|&v| v <= t)),
            H1 => {
                if all_above(x, 1.0) {
                    1.0 / prod().abs().ln()
                } else {
                    0.0
                }
            }
            H2 => {
                if all_above(x, 1.0) {
                    prod().sin()
                } else {
                    0.0
                }
            }
            H3 => {
                if all_above(x, 1.0) {
                    1.0 / prod()
                } else {
                    0.0
                }
            }
            Rho1 => x[0].exp().sin(),
            Rho2 => x[0].abs().ln_1p(),
            Rho3 => 1.0 / x[0].abs().ln_1p(),
            G1 => f64::from(x[0].max(x[1]) > 0.01),
            G2 => x[1] / (1.0 + x[0] * x[0]),
            G3 => (x[0] * x[1]).abs(),
            G4 => (x[0] * x[1]).exp().cos().abs(),
            G5 => (x[0] + x[1]).ln(),
            G6 => 1.0 / (x[0] + x[1]).abs().ln().abs(),
            Coord(i) => x[i],
            Const(c) => c,
        }
    }
}

impl fmt::Display for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TargetFunction::*;
        match self {
            JPlus(t) => write!(f, "j+{t}"),
            JMinus(t) => write!(f, "j-{t}"),
            H1 => f.write_str("h1"),
            H2 => f.write_str("h2"),
            H3 => f.write_str("h3"),
            Rho1 => f.write_str("rho1"),
            Rho2 => f.write_str("rho2"),
            Rho3 => f.write_str("rho3"),
            G1 => f.write_str("g1"),
            G2 => f.write_str("g2"),
            G3 => f.write_str("g3"),
            G4 => f.write_str("g4"),
            G5 => f.write_str("g5"),
            G6 => f.write_str("g6"),
            Coord(i) => write!(f, "coord:{i}"),
            Const(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for TargetFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use TargetFunction::*;
        let bad = || Error::InvalidArgument(format!("unknown target function {s:?}"));
        let num = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        if let Some(t) = s.strip_prefix("j+") {
            return Ok(JPlus(num(t)?));
        }
        if let Some(t) = s.strip_prefix("j-") {
            return Ok(JMinus(num(t)?));
        }
        if let Some(i) = s.strip_prefix("coord:") {
            return i.parse().map(Coord).map_err(|_| bad());
        }
        if let Some(c) = s.strip_prefix("const:") {
            return Ok(Const(num(c)?));
        }
        Ok(match s {
            "h1" => H1,
            "h2" => H2,
            "h3" => H3,
            "rho1" => Rho1,
            "rho2" => Rho2,
            "rho3" => Rho3,
            "g1" => G1,
            "g2" => G2,
            "g3" => G3,
            "g4" => G4,
            "g5" => G5,
            "g6" => G6,
            _ => return Err(bad()),
        })
    }
}

impl Serialize for TargetFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
