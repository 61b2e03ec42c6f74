use crate::error::{Error, Result};

const MAX_ITER: usize = 1000;

/// Root of a monotone function on a sign-changing bracket.
///
/// Illinois-modified regula falsi with a bisection step whenever the bracket
/// fails to halve. Stops when `|g(x)| <= tol` or the bracket is narrower than
/// `tol`.
pub fn find_root_monotone<G: FnMut(f64) -> f64>(mut g: G, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo <= hi) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("root bracket [{lo}, {hi}] with tol {tol}")));
    }
    let (mut a, mut b) = (lo, hi);
    let mut ga = g(a);
    let mut gb = g(b);
    if ga.is_nan() || gb.is_nan() || ga * gb > 0.0 {
        return Err(Error::InvalidBracket { lo, hi, g_lo: ga, g_hi: gb });
    }
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    let mut side = 0i8;
    let mut width = b - a;
    for iter in 0..MAX_ITER {
        let mut x = (a * gb - b * ga) / (gb - ga);
        let forced_bisect = iter % 3 == 2 && (b - a) > 0.5 * width;
        if forced_bisect || !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        if iter % 3 == 2 {
            width = b - a;
        }
        let gx = g(x);
        if gx.abs() <= tol || (b - a) <= tol {
            return Ok(x);
        }
        if (gx > 0.0) == (gb > 0.0) {
            b = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            a = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
        if (b - a) <= tol {
            return Ok(0.5 * (a + b));
        }
    }
    Err(Error::NonConvergence { what: "monotone root finder", iterations: MAX_ITER })
}
