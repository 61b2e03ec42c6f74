//! Special functions and one-dimensional numerical routines.
//!
//! All routines are pure; the normal quantile is refined against
//! [`std_normal_cdf`] so the pair is self-consistent to machine precision.

pub mod gof;
mod quadrature;
mod root;
mod special;

pub use quadrature::{integrate, GaussLegendre, QuadratureRule, QuadratureSpec};
pub use root::find_root_monotone;
pub(crate) use special::normal_ppf;
pub use special::{
    chi2_cdf, chi2_quantile, chi2_sf, erf, gamma_quantile_unit, ln_beta, ln_gamma, regularized_beta,
    regularized_gamma, sin_power_integral_closed, sin_power_norm, std_normal_cdf, std_normal_pdf,
    std_normal_quantile, student_t_cdf, LN_SQRT_2PI,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open interval `(lo, hi]`; endpoints may be infinite where the
/// owning scheme allows it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("interval needs lo < hi, got ({lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Membership under the `(lo, hi]` convention.
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x <= self.hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normal_round_trip(x in -6.0f64..6.0) {
            let back = std_normal_quantile(std_normal_cdf(x)).unwrap();
            prop_assert!((back - x).abs() <= 1e-8);
        }

        #[test]
        fn normal_quantile_symmetry(p in 1e-12f64..0.5) {
            let a = std_normal_quantile(p).unwrap();
            let b = std_normal_quantile(1.0 - p).unwrap();
            prop_assert!((a + b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn normal_cdf_monotone(x in -8.0f64..8.0, dx in 1e-3f64..2.0) {
            prop_assert!(std_normal_cdf(x) < std_normal_cdf(x + dx));
        }

        #[test]
        fn chi2_monotone_and_round_trip(x in 0.01f64..80.0, dx in 1e-2f64..5.0, d in 1u32..40) {
            let p = chi2_cdf(x, d).unwrap();
            let q = chi2_cdf(x + dx, d).unwrap();
            prop_assert!(p <= q);
            prop_assert!(p < q || chi2_sf(x, d).unwrap() > chi2_sf(x + dx, d).unwrap());
            if p > 1e-300 && p < 1.0 - 1e-12 {
                let back = chi2_quantile(p, d).unwrap();
                prop_assert!((chi2_cdf(back, d).unwrap() - p).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn interval_convention() {
        let i = Interval::new(0.0, 1.0).unwrap();
        assert!(!i.contains(0.0));
        assert!(i.contains(1.0));
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(f64::NEG_INFINITY, 0.0).unwrap().contains(-1e300));
    }
}
