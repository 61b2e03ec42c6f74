//! Equiprobable stratifications of the d-dimensional standard Gaussian.
//!
//! Four families are supported:
//!
//! - cartesian: every coordinate split at normal quantiles `Φ⁻¹(j/m₀)`;
//! - spherical: squared radius split at χ²_d quantiles, θ split into equal
//!   arcs and each polar angle split into equal-mass intervals of `h_k ∝ sinᵏ`;
//! - radial: only the squared radius is split;
//! - selected coordinates: cartesian splits on a subset of axes.
//!
//! Every stratum is a product of half-open cells `(lo, hi]`, so
//! [`classify_latent`] is total. Stratum ids use mixed-radix encoding with the
//! last stratified axis varying fastest.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chi2_quantile, find_root_monotone, integrate, normal_ppf, sin_power_norm, Interval, QuadratureSpec};
use crate::sampling::{
    ar_sample_sin_power, cartesian_to_spherical, sphere_uniform, spherical_to_cartesian_unchecked, RngStream,
};

pub const DEFAULT_STRATUM_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Interior boundaries per dimension (`m0_per_dim[i] - 1` values each).
    Cartesian { m0_per_dim: Vec<usize>, boundaries: Vec<Vec<f64>> },
    /// `radial_boundaries` are on the squared-radius (χ²) scale.
    /// `angular_boundaries[0]` splits θ, `angular_boundaries[i]` splits φ_i
    /// whose density is `h_{d-1-i}`.
    Spherical { m_r: usize, m0: usize, radial_boundaries: Vec<f64>, angular_boundaries: Vec<Vec<f64>> },
    Radial { m_r: usize, radial_boundaries: Vec<f64> },
    SelectedDims { dims: Vec<usize>, m0: usize, boundaries: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataScheme {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: SchemeKind,
    pub stratum_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StratumId {
    pub multi: Vec<usize>,
    pub flat: usize,
}

fn checked_count(radices: &[usize], cap: usize) -> Result<usize> {
    let mut total: u128 = 1;
    for &r in radices {
        total = total.saturating_mul(r as u128);
    }
    if total > cap as u128 {
        return Err(Error::StratumCap { requested: total, cap });
    }
    Ok(total as usize)
}

fn equiprobable(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

fn normal_boundaries(m0: usize) -> Vec<f64> {
    (1..m0).map(|j| normal_ppf(j as f64 / m0 as f64)).collect()
}

fn radial_boundaries(d: usize, m_r: usize) -> Result<Vec<f64>> {
    (1..m_r).map(|j| chi2_quantile(j as f64 / m_r as f64, d as u32)).collect()
}

/// Interior boundaries splitting `(0, π)` into `m0` cells of equal `h_k` mass.
pub fn angular_boundaries(k: u32, m0: usize) -> Result<Vec<f64>> {
    let ck = sin_power_norm(k);
    let spec = QuadratureSpec::with_tol(1e-13);
    let mut out = Vec::with_capacity(m0.saturating_sub(1));
    let mut lo = 0.0;
    for j in 1..m0 {
        let target = j as f64 / m0 as f64;
        let mass = |a: f64| integrate(|x| x.sin().powi(k as i32), 0.0, a, &spec).map(|v| v / ck - target);
        // quadrature failure surfaces as NaN, which the root finder rejects
        let a = find_root_monotone(|a| mass(a).unwrap_or(f64::NAN), lo, PI, 1e-13)?;
        out.push(a);
        lo = a;
    }
    Ok(out)
}

pub fn build_cartesian(d: usize, m0: usize) -> Result<StrataScheme> {
    build_cartesian_per_dim(&vec![m0; d], DEFAULT_STRATUM_CAP)
}

pub fn build_cartesian_per_dim(m0_per_dim: &[usize], cap: usize) -> Result<StrataScheme> {
    let d = m0_per_dim.len();
    if d == 0 || m0_per_dim.contains(&0) {
        return Err(Error::InvalidArgument("cartesian scheme needs d >= 1 and every m0 >= 1".into()));
    }
    let m = checked_count(m0_per_dim, cap)?;
    Ok(StrataScheme {
        dim: d,
        kind: SchemeKind::Cartesian {
            m0_per_dim: m0_per_dim.to_vec(),
            boundaries: m0_per_dim.iter().map(|&m0| normal_boundaries(m0)).collect(),
        },
        stratum_probs: equiprobable(m),
    })
}

pub fn build_spherical(d: usize, m_r: usize, m0: usize) -> Result<StrataScheme> {
    build_spherical_capped(d, m_r, m0, DEFAULT_STRATUM_CAP)
}

pub fn build_spherical_capped(d: usize, m_r: usize, m0: usize, cap: usize) -> Result<StrataScheme> {
    if d < 2 || m_r == 0 || m0 == 0 {
        return Err(Error::InvalidArgument("spherical scheme needs d >= 2, m_r >= 1, m0 >= 1".into()));
    }
    let mut radices = vec![m_r];
    radices.extend(std::iter::repeat_n(m0, d - 1));
    let m = checked_count(&radices, cap)?;
    let mut angular = vec![(1..m0).map(|j| TAU * j as f64 / m0 as f64).collect::<Vec<_>>()];
    for i in 1..=d - 2 {
        angular.push(angular_boundaries((d - 1 - i) as u32, m0)?);
    }
    Ok(StrataScheme {
        dim: d,
        kind: SchemeKind::Spherical {
            m_r,
            m0,
            radial_boundaries: radial_boundaries(d, m_r)?,
            angular_boundaries: angular,
        },
        stratum_probs: equiprobable(m),
    })
}

pub fn build_radial(d: usize, m_r: usize) -> Result<StrataScheme> {
    if d == 0 || m_r == 0 {
        return Err(Error::InvalidArgument("radial scheme needs d >= 1 and m_r >= 1".into()));
    }
    Ok(StrataScheme {
        dim: d,
        kind: SchemeKind::Radial { m_r, radial_boundaries: radial_boundaries(d, m_r)? },
        stratum_probs: equiprobable(m_r),
    })
}

pub fn build_selected_dims(d: usize, dims: &[usize], m0: usize) -> Result<StrataScheme> {
    if dims.is_empty() || m0 == 0 {
        return Err(Error::InvalidArgument("selected-dims scheme needs at least one dim and m0 >= 1".into()));
    }
    if let Some(&bad) = dims.iter().find(|&&b| b >= d) {
        return Err(Error::InvalidArgument(format!("dimension {bad} out of range for d = {d}")));
    }
    let mut sorted = dims.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate dimensions in {dims:?}")));
    }
    let m = checked_count(&vec![m0; dims.len()], DEFAULT_STRATUM_CAP)?;
    Ok(StrataScheme {
        dim: d,
        kind: SchemeKind::SelectedDims { dims: dims.to_vec(), m0, boundaries: normal_boundaries(m0) },
        stratum_probs: equiprobable(m),
    })
}

/// `eta` distinct coordinates, uniform over subsets, returned sorted.
pub fn select_random_dims(d: usize, eta: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if eta > d || eta == 0 {
        return Err(Error::InvalidArgument(format!("cannot select {eta} of {d} dimensions")));
    }
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..eta {
        let j = i + rng.below(d - i);
        pool.swap(i, j);
    }
    let mut out = pool[..eta].to_vec();
    out.sort_unstable();
    Ok(out)
}

impl StrataScheme {
    pub fn num_strata(&self) -> usize {
        self.stratum_probs.len()
    }

    /// Mixed-radix digits, one per stratified axis.
    pub fn radices(&self) -> Vec<usize> {
        match &self.kind {
            SchemeKind::Cartesian { m0_per_dim, .. } => m0_per_dim.clone(),
            SchemeKind::Spherical { m_r, m0, .. } => {
                let mut r = vec![*m_r];
                r.extend(std::iter::repeat_n(*m0, self.dim - 1));
                r
            }
            SchemeKind::Radial { m_r, .. } => vec![*m_r],
            SchemeKind::SelectedDims { dims, m0, .. } => vec![*m0; dims.len()],
        }
    }

    pub fn stratum(&self, flat: usize) -> Result<StratumId> {
        if flat >= self.num_strata() {
            return Err(Error::InvalidArgument(format!("stratum {flat} out of range (m = {})", self.num_strata())));
        }
        let radices = self.radices();
        let mut multi = vec![0; radices.len()];
        let mut rest = flat;
        for (slot, &r) in multi.iter_mut().zip(&radices).rev() {
            *slot = rest % r;
            rest /= r;
        }
        Ok(StratumId { multi, flat })
    }

    pub fn encode(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.radices()).fold(0, |acc, (&i, r)| acc * r + i)
    }

    pub fn strata(&self) -> impl Iterator<Item = StratumId> + '_ {
        (0..self.num_strata()).map(|j| self.stratum(j).expect("in range"))
    }

    /// JSON description used for audit output.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scheme serializes")
    }

    /// Internal consistency of boundary lists with the declared counts.
    pub fn validate_shape(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        match &self.kind {
            SchemeKind::Cartesian { m0_per_dim, boundaries } => {
                if m0_per_dim.len() != self.dim || boundaries.len() != self.dim {
                    return bad("cartesian boundary lists must have one entry per dimension".into());
                }
                for (m0, b) in m0_per_dim.iter().zip(boundaries) {
                    if b.len() + 1 != *m0 || !sorted(b) {
                        return bad(format!("axis with m0 = {m0} has malformed boundaries"));
                    }
                }
            }
            SchemeKind::Spherical { m_r, m0, radial_boundaries, angular_boundaries } => {
                if radial_boundaries.len() + 1 != *m_r || !sorted(radial_boundaries) {
                    return bad("malformed radial boundaries".into());
                }
                if angular_boundaries.len() != self.dim - 1 {
                    return bad("spherical scheme needs d - 1 angular boundary lists".into());
                }
                if angular_boundaries.iter().any(|b| b.len() + 1 != *m0 || !sorted(b)) {
                    return bad("malformed angular boundaries".into());
                }
            }
            SchemeKind::Radial { m_r, radial_boundaries } => {
                if radial_boundaries.len() + 1 != *m_r || !sorted(radial_boundaries) {
                    return bad("malformed radial boundaries".into());
                }
            }
            SchemeKind::SelectedDims { dims, m0, boundaries } => {
                if boundaries.len() + 1 != *m0 || !sorted(boundaries) || dims.iter().any(|&b| b >= self.dim) {
                    return bad("malformed selected-dims scheme".into());
                }
            }
        }
        let m = self.radices().iter().product::<usize>();
        if m != self.num_strata() {
            return bad(format!("scheme declares {} strata but radices give {m}", self.num_strata()));
        }
        let total: f64 = self.stratum_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("stratum probabilities sum to {total}"));
        }
        Ok(())
    }
}

/// Index of the `(lo, hi]` cell containing `x` given sorted interior boundaries.
#[inline]
fn cell(boundaries: &[f64], x: f64) -> usize {
    boundaries.partition_point(|&b| b < x)
}

fn window(boundaries: &[f64], idx: usize, lo: f64, hi: f64) -> (f64, f64) {
    let a = if idx == 0 { lo } else { boundaries[idx - 1] };
    let b = if idx == boundaries.len() { hi } else { boundaries[idx] };
    (a, b)
}

/// The unique stratum containing `z`.
pub fn classify_latent(scheme: &StrataScheme, z: &[f64]) -> StratumId {
    debug_assert_eq!(z.len(), scheme.dim);
    let multi = match &scheme.kind {
        SchemeKind::Cartesian { boundaries, .. } => boundaries.iter().zip(z).map(|(b, &x)| cell(b, x)).collect(),
        SchemeKind::SelectedDims { dims, boundaries, .. } => dims.iter().map(|&i| cell(boundaries, z[i])).collect(),
        SchemeKind::Radial { radial_boundaries, .. } => {
            vec![cell(radial_boundaries, z.iter().map(|v| v * v).sum())]
        }
        SchemeKind::Spherical { radial_boundaries, angular_boundaries, .. } => {
            let r2: f64 = z.iter().map(|v| v * v).sum();
            let mut multi = vec![cell(radial_boundaries, r2)];
            let (mut theta, phis) = cartesian_to_spherical(z);
            if theta == 0.0 {
                theta = TAU;
            }
            multi.push(cell(&angular_boundaries[0], theta));
            for (i, phi) in phis.iter().enumerate() {
                multi.push(cell(&angular_boundaries[i + 1], *phi));
            }
            multi
        }
    };
    let flat = scheme.encode(&multi);
    StratumId { multi, flat }
}

const GUARD_CAP: usize = 10_000;

/// Redraws until the value lands strictly inside `(lo, hi]`; a miss only
/// happens at floating-point edges unless the boundaries are inconsistent.
fn guarded<G: FnMut() -> Result<f64>>(lo: f64, hi: f64, open_hi: bool, mut draw: G) -> Result<f64> {
    for _ in 0..GUARD_CAP {
        let v = draw()?;
        if v > lo && (v < hi || (!open_hi && v == hi)) {
            return Ok(v);
        }
    }
    Err(Error::IterationCap { cap: GUARD_CAP, k: 0, lo, hi })
}

/// Normal draw conditioned on the `idx`-th of `m0` equiprobable cells.
fn normal_in_cell(boundaries: &[f64], idx: usize, m0: usize, rng: &mut RngStream) -> Result<f64> {
    let (lo, hi) = window(boundaries, idx, f64::NEG_INFINITY, f64::INFINITY);
    guarded(lo, hi, false, || Ok(normal_ppf((idx as f64 + rng.uniform()) / m0 as f64)))
}

fn radius_in_shell(d: usize, boundaries: &[f64], idx: usize, m_r: usize, rng: &mut RngStream) -> Result<f64> {
    let (lo, hi) = window(boundaries, idx, 0.0, f64::INFINITY);
    Ok(guarded(lo, hi, false, || chi2_quantile((idx as f64 + rng.uniform()) / m_r as f64, d as u32))?.sqrt())
}

/// Draws `Z ~ N(0, I_d)` conditioned on `Z ∈ A^j`.
pub fn sample_latent_in_stratum(scheme: &StrataScheme, id: &StratumId, rng: &mut RngStream) -> Result<Vec<f64>> {
    let d = scheme.dim;
    match &scheme.kind {
        SchemeKind::Cartesian { m0_per_dim, boundaries } => {
            (0..d).map(|i| normal_in_cell(&boundaries[i], id.multi[i], m0_per_dim[i], rng)).collect()
        }
        SchemeKind::SelectedDims { dims, m0, boundaries } => {
            let mut z: Vec<f64> = (0..d).map(|_| f64::NAN).collect();
            for (slot, &i) in dims.iter().enumerate() {
                z[i] = normal_in_cell(boundaries, id.multi[slot], *m0, rng)?;
            }
            for v in z.iter_mut().filter(|v| v.is_nan()) {
                *v = rng.standard_normal();
            }
            Ok(z)
        }
        SchemeKind::Radial { m_r, radial_boundaries } => {
            let r = radius_in_shell(d, radial_boundaries, id.multi[0], *m_r, rng)?;
            let dir = if d == 1 {
                vec![if rng.uniform() < 0.5 { -1.0 } else { 1.0 }]
            } else {
                sphere_uniform(d, rng)?
            };
            Ok(dir.into_iter().map(|v| r * v).collect())
        }
        SchemeKind::Spherical { m_r, m0, radial_boundaries, angular_boundaries } => {
            let r = radius_in_shell(d, radial_boundaries, id.multi[0], *m_r, rng)?;
            let (tlo, thi) = window(&angular_boundaries[0], id.multi[1], 0.0, TAU);
            let theta = guarded(tlo, thi, true, || Ok(TAU * (id.multi[1] as f64 + rng.uniform()) / *m0 as f64))?;
            let mut phis = Vec::with_capacity(d - 2);
            for i in 1..=d - 2 {
                let (lo, hi) = window(&angular_boundaries[i], id.multi[i + 1], 0.0, PI);
                let k = (d - 1 - i) as u32;
                phis.push(ar_sample_sin_power(k, Interval { lo, hi }, rng)?.value);
            }
            Ok(spherical_to_cartesian_unchecked(theta, &phis).into_iter().map(|v| r * v).collect())
        }
    }
}

/// Picks the `eta` coordinates whose single-axis stratification yields the
/// largest pilot estimator standard deviation. Ties go to the lower index.
#[allow(clippy::too_many_arguments)]
pub fn select_high_variance_dims<F>(
    map: &crate::flow::TransportMap,
    f: &F,
    d: usize,
    eta: usize,
    m0: usize,
    r0: usize,
    streams: &crate::sampling::Streams,
) -> Result<Vec<usize>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if eta == 0 || eta > d {
        return Err(Error::InvalidArgument(format!("cannot select {eta} of {d} dimensions")));
    }
    if r0 < 2 * m0 {
        return Err(Error::BudgetTooSmall { budget: r0, strata: m0, needed: 2 * m0 });
    }
    let mut scored = Vec::with_capacity(d);
    for b in 0..d {
        let scheme = build_selected_dims(d, &[b], m0)?;
        let alloc = crate::estimate::proportional_allocation(&scheme.stratum_probs, r0)?;
        let report = crate::estimate::stratified_estimate(&scheme, map, f, &alloc, &streams.child(b as u64))?;
        scored.push((report.sd, b));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut dims: Vec<usize> = scored[..eta].iter().map(|&(_, b)| b).collect();
    dims.sort_unstable();
    Ok(dims)
}
