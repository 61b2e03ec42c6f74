//! Seeded substreams and primitive samplers.
//!
//! Every stream is a ChaCha8 keystream: the seed selects the key and the
//! stream id selects the ChaCha stream nonce, so `(seed, stream_id)` pairs
//! are independent counter-based sequences.

use std::f64::consts::{PI, TAU};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{normal_ppf, Interval};

/// Default cap on acceptance-rejection proposals per draw.
pub const AR_ITERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift; the bias is below 2^-64 * n.
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        normal_ppf(self.uniform())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a path of labels (repetition, phase, stratum, ...) into one stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0x243F_6A88_85A3_08D3, |acc, &p| mix64(acc ^ mix64(p)))
}

/// A family of substreams under one master seed. Children extend the label
/// path; [`Streams::stream`] closes it with an index such as a stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
    path: Vec<u64>,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        Self { seed: self.seed, path }
    }

    pub fn stream(&self, index: u64) -> RngStream {
        let mut path = self.path.clone();
        path.push(index);
        RngStream::new(self.seed, stream_id(&path))
    }
}

/// Stable numeric label for a string tag (FNV-1a).
pub fn label(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// `d` independent standard normals by inverse-cdf transform.
pub fn standard_normal_vector(d: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..d).map(|_| rng.standard_normal()).collect()
}

/// Uniform point on the unit sphere S^{d-1}.
pub fn sphere_uniform(d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::Domain(format!("sphere sampling needs d >= 2, got {d}")));
    }
    loop {
        let mut z = standard_normal_vector(d, rng);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            z.iter_mut().for_each(|v| *v /= norm);
            return Ok(z);
        }
    }
}

/// Maps `(θ, φ_1, ..., φ_{d-2})` to the unit sphere:
/// `x_1 = cos φ_1`, `x_2 = sin φ_1 cos φ_2`, ...,
/// `x_{d-1} = sin φ_1 ⋯ sin φ_{d-2} cos θ`, `x_d = sin φ_1 ⋯ sin φ_{d-2} sin θ`.
pub fn spherical_to_cartesian(theta: f64, phis: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..TAU).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0, 2π), got {theta}")));
    }
    if let Some(bad) = phis.iter().find(|p| !(0.0..=PI).contains(*p)) {
        return Err(Error::Domain(format!("polar angles must lie in [0, π], got {bad}")));
    }
    Ok(spherical_to_cartesian_unchecked(theta, phis))
}

pub(crate) fn spherical_to_cartesian_unchecked(theta: f64, phis: &[f64]) -> Vec<f64> {
    let d = phis.len() + 2;
    let mut x = Vec::with_capacity(d);
    let mut sin_prod = 1.0;
    for &phi in phis {
        let (s, c) = phi.sin_cos();
        x.push(sin_prod * c);
        sin_prod *= s;
    }
    let (s, c) = theta.sin_cos();
    x.push(sin_prod * c);
    x.push(sin_prod * s);
    x
}

/// Inverse of [`spherical_to_cartesian`] for a nonzero vector:
/// returns `(θ ∈ [0, 2π), [φ_1..φ_{d-2}] ∈ [0, π])`.
pub fn cartesian_to_spherical(x: &[f64]) -> (f64, Vec<f64>) {
    let d = x.len();
    debug_assert!(d >= 2);
    let mut phis = Vec::with_capacity(d - 2);
    // tail[i] = sqrt(x_i^2 + ... + x_{d-1}^2)
    let mut tail = vec![0.0; d + 1];
    for i in (0..d).rev() {
        tail[i] = (tail[i + 1] * tail[i + 1] + x[i] * x[i]).sqrt();
    }
    for i in 0..d - 2 {
        phis.push(tail[i + 1].atan2(x[i]));
    }
    let mut theta = x[d - 1].atan2(x[d - 2]);
    if theta < 0.0 {
        theta += TAU;
    }
    if theta >= TAU {
        theta = 0.0;
    }
    (theta, phis)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArResult {
    pub value: f64,
    pub iterations: usize,
}

/// Acceptance-rejection draw from `h_k(φ) ∝ sinᵏ φ` restricted to `window`.
///
/// Proposals are uniform on the window and accepted when `U <= sinᵏ(T)`.
pub fn ar_sample_sin_power(k: u32, window: Interval, rng: &mut RngStream) -> Result<ArResult> {
    ar_sample_sin_power_capped(k, window, rng, AR_ITERATION_CAP)
}

pub fn ar_sample_sin_power_capped(k: u32, window: Interval, rng: &mut RngStream, cap: usize) -> Result<ArResult> {
    if !(window.lo >= 0.0 && window.hi <= PI && window.lo < window.hi) {
        return Err(Error::Domain(format!("AR window ({}, {}] must lie in (0, π)", window.lo, window.hi)));
    }
    let width = window.hi - window.lo;
    for iterations in 1..=cap {
        let t = window.lo + width * rng.uniform();
        let u = rng.uniform();
        if u <= t.sin().powi(k as i32) && t > window.lo && t < window.hi {
            return Ok(ArResult { value: t, iterations });
        }
    }
    Err(Error::IterationCap { cap, k, lo: window.lo, hi: window.hi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gof::{chi2_gof, ks_one_sample};
    use crate::numerics::{sin_power_integral_closed, sin_power_norm};

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<f64> = standard_normal_vector(5, &mut RngStream::new(7, 3));
        let b: Vec<f64> = standard_normal_vector(5, &mut RngStream::new(7, 3));
        assert_eq!(a, b);
        let c = standard_normal_vector(5, &mut RngStream::new(7, 4));
        assert_ne!(a, c);
        let mut one = RngStream::new(11, 0);
        let x = standard_normal_vector(1, &mut one);
        assert_eq!(x, standard_normal_vector(1, &mut RngStream::new(11, 0)));
    }

    #[test]
    fn uniform_is_open() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn substreams_uncorrelated() {
        let s = Streams::new(42);
        let mut a = s.stream(10);
        let mut b = s.stream(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.01);
    }

    #[test]
    fn stream_ids_depend_on_whole_path() {
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
        assert_ne!(Streams::new(1).child(0).stream(1).stream_id(), Streams::new(1).child(1).stream(0).stream_id());
        assert_eq!(label("pilot"), label("pilot"));
    }

    #[test]
    fn normal_moments_and_quadrants() {
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let xs = standard_normal_vector(n, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((0.98..=1.02).contains(&var));
        let q = (0..n)
            .filter(|_| {
                let v = standard_normal_vector(2, &mut rng);
                v[0] > 0.0 && v[1] > 0.0
            })
            .count() as f64
            / n as f64;
        assert!((q - 0.25).abs() < 0.01);
    }

    #[test]
    fn sphere_points_are_unit_and_uniform() {
        let mut rng = RngStream::new(5, 0);
        let n = 100_000;
        let mut means = [0.0; 3];
        for _ in 0..n {
            let x = sphere_uniform(3, &mut rng).unwrap();
            assert!((x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..3 {
                means[i] += x[i] / n as f64;
            }
        }
        assert!(means.iter().all(|m| m.abs() < 0.02));

        let mut counts = [0u64; 8];
        for _ in 0..n {
            let x = sphere_uniform(2, &mut rng).unwrap();
            let mut a = x[1].atan2(x[0]);
            if a < 0.0 {
                a += TAU;
            }
            counts[((a / TAU * 8.0) as usize).min(7)] += 1;
        }
        assert!(chi2_gof(&counts, &[0.125; 8]).unwrap().p_value > 0.001);
        assert!(sphere_uniform(1, &mut rng).is_err());
    }

    #[test]
    fn spherical_coordinates() {
        let x = spherical_to_cartesian(1.3, &[0.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1].abs() < 1e-15 && x[2].abs() < 1e-15);
        let x = spherical_to_cartesian(PI / 2.0, &[]).unwrap();
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let x = spherical_to_cartesian(PI / 2.0, &[PI / 2.0]).unwrap();
        assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - 1.0).abs() < 1e-15);
        assert!(spherical_to_cartesian(TAU, &[]).is_err());
        assert!(spherical_to_cartesian(0.0, &[-0.1]).is_err());

        let mut rng = RngStream::new(9, 0);
        for d in 2..7 {
            for _ in 0..200 {
                let x = sphere_uniform(d, &mut rng).unwrap();
                let (theta, phis) = cartesian_to_spherical(&x);
                let back = spherical_to_cartesian(theta, &phis).unwrap();
                let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12);
                assert!((back.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ar_k1_matches_closed_form_cdf() {
        let mut rng = RngStream::new(17, 0);
        let full = Interval::new(0.0, PI).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| ar_sample_sin_power(1, full, &mut rng).unwrap().value).collect();
        let out = ks_one_sample(&xs, |x| (1.0 - x.cos()) / 2.0);
        assert!(out.p_value > 0.001, "{out:?}");
    }

    #[test]
    fn ar_mean_iterations_match_cost_constant() {
        let full = Interval::new(0.0, PI).unwrap();
        for (k, lo, hi) in [(10, 3.86, 4.27), (200, 16.9, 18.6)] {
            let mut rng = RngStream::new(23, k as u64);
            let total: usize = (0..10_000).map(|_| ar_sample_sin_power(k, full, &mut rng).unwrap().iterations).sum();
            let mean = total as f64 / 10_000.0;
            assert!((lo..=hi).contains(&mean), "k={k} mean={mean}");
            assert!((mean / (PI / sin_power_norm(k)) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn ar_truncated_windows() {
        let mut rng = RngStream::new(29, 0);
        for (k, lo, hi) in [(1, 0.2, 0.9), (3, 1.0, 2.5), (7, 2.0, 3.1)] {
            let w = Interval::new(lo, hi).unwrap();
            let mass = sin_power_integral_closed(k, hi) - sin_power_integral_closed(k, lo);
            let mut iters = 0usize;
            let xs: Vec<f64> = (0..10_000)
                .map(|_| {
                    let r = ar_sample_sin_power(k, w, &mut rng).unwrap();
                    iters += r.iterations;
                    assert!(r.value > lo && r.value < hi);
                    r.value
                })
                .collect();
            let out = ks_one_sample(&xs, |x| (sin_power_integral_closed(k, x) - sin_power_integral_closed(k, lo)) / mass);
            assert!(out.p_value > 0.001, "k={k} {out:?}");
            let expected = (hi - lo) / mass;
            assert!(((iters as f64 / 10_000.0) / expected - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn ar_cap_reports_degenerate_window() {
        let mut rng = RngStream::new(1, 0);
        let w = Interval::new(0.0, 1e-3).unwrap();
        assert!(matches!(ar_sample_sin_power_capped(30, w, &mut rng, 1000), Err(Error::IterationCap { .. })));
    }
}
