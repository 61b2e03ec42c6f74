//! Flow building blocks in the normalizing direction (data → latent).
//!
//! Each layer maps `x ↦ z`, reports `log|det ∂z/∂x|`, and has a backward pass
//! for the per-sample loss `g·z − log|det|` where `g` is the upstream gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::decimal;
use crate::sampling::RngStream;

/// Two hidden tanh layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    #[serde(with = "decimal::vec")]
    pub params: Vec<f64>,
}

struct MlpOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl Mlp {
    pub fn param_count(n_in: usize, hidden: usize, n_out: usize) -> usize {
        hidden * n_in + hidden + hidden * hidden + hidden + n_out * hidden + n_out
    }

    fn offsets(&self) -> MlpOffsets {
        let (i, h, o) = (self.n_in, self.hidden, self.n_out);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        MlpOffsets { w1, b1, w2, b2, w3, b3, end: b3 + o }
    }

    /// Glorot-uniform hidden weights, zero output layer.
    pub fn new(n_in: usize, hidden: usize, n_out: usize, rng: &mut RngStream) -> Self {
        let mut net = Self { n_in, hidden, n_out, params: vec![0.0; Self::param_count(n_in, hidden, n_out)] };
        let off = net.offsets();
        let a1 = (6.0 / (n_in + hidden) as f64).sqrt();
        for w in &mut net.params[off.w1..off.b1] {
            *w = a1 * (2.0 * rng.uniform() - 1.0);
        }
        let a2 = (6.0 / (2 * hidden) as f64).sqrt();
        for w in &mut net.params[off.w2..off.b2] {
            *w = a2 * (2.0 * rng.uniform() - 1.0);
        }
        net
    }

    fn check(&self) -> Result<()> {
        if self.params.len() != Self::param_count(self.n_in, self.hidden, self.n_out) {
            return Err(Error::DimensionMismatch {
                expected: Self::param_count(self.n_in, self.hidden, self.n_out),
                got: self.params.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], cache: &mut MlpCache) {
        let off = self.offsets();
        let p = &self.params;
        let (h, i) = (self.hidden, self.n_in);
        for r in 0..h {
            let row = &p[off.w1 + r * i..off.w1 + (r + 1) * i];
            let a = p[off.b1 + r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            cache.h1[r] = a.tanh();
        }
        for r in 0..h {
            let row = &p[off.w2 + r * h..off.w2 + (r + 1) * h];
            let a = p[off.b2 + r] + row.iter().zip(&cache.h1).map(|(w, v)| w * v).sum::<f64>();
            cache.h2[r] = a.tanh();
        }
        for r in 0..self.n_out {
            let row = &p[off.w3 + r * h..off.w3 + (r + 1) * h];
            cache.out[r] = p[off.b3 + r] + row.iter().zip(&cache.h2).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `∂ℓ/∂x` into `gx`.
    fn backward(&self, x: &[f64], cache: &mut MlpCache, gout: &[f64], grad: &mut [f64], gx: &mut [f64]) {
        let off = self.offsets();
        let p = &self.params;
        let (h, i, o) = (self.hidden, self.n_in, self.n_out);
        cache.g2.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..o {
            let go = gout[r];
            if go == 0.0 {
                continue;
            }
            grad[off.b3 + r] += go;
            let base = off.w3 + r * h;
            for c in 0..h {
                grad[base + c] += go * cache.h2[c];
                cache.g2[c] += p[base + c] * go;
            }
        }
        for c in 0..h {
            cache.g2[c] *= 1.0 - cache.h2[c] * cache.h2[c];
        }
        cache.g1.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h {
            let ga = cache.g2[r];
            grad[off.b2 + r] += ga;
            let base = off.w2 + r * h;
            for c in 0..h {
                grad[base + c] += ga * cache.h1[c];
                cache.g1[c] += p[base + c] * ga;
            }
        }
        for c in 0..h {
            cache.g1[c] *= 1.0 - cache.h1[c] * cache.h1[c];
        }
        gx.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h {
            let ga = cache.g1[r];
            grad[off.b1 + r] += ga;
            let base = off.w1 + r * i;
            for c in 0..i {
                grad[base + c] += ga * x[c];
                gx[c] += p[base + c] * ga;
            }
        }
        debug_assert_eq!(off.end, p.len());
    }
}

#[derive(Debug, Clone)]
struct MlpCache {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl MlpCache {
    fn new(net: &Mlp) -> Self {
        Self {
            h1: vec![0.0; net.hidden],
            h2: vec![0.0; net.hidden],
            out: vec![0.0; net.n_out],
            g1: vec![0.0; net.hidden],
            g2: vec![0.0; net.hidden],
        }
    }
}

/// Affine coupling: coordinates with `mask[i] = true` pass through and
/// condition the shift `t` and clamped log-scale `s` of the others,
/// `z_b = (x_b − t(x_a)) · exp(−s(x_a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub mask: Vec<bool>,
    pub clamp: f64,
    pub net: Mlp,
}

impl CouplingLayer {
    pub fn new(mask: Vec<bool>, hidden: usize, clamp: f64, rng: &mut RngStream) -> Result<Self> {
        let n_a = mask.iter().filter(|&&m| m).count();
        let n_b = mask.len() - n_a;
        if n_a == 0 || n_b == 0 {
            return Err(Error::InvalidArgument("coupling mask must split coordinates into two nonempty sets".into()));
        }
        Ok(Self { mask, clamp, net: Mlp::new(n_a, hidden, 2 * n_b, rng) })
    }

    fn split(&self, x: &[f64], xa: &mut Vec<f64>, xb: &mut Vec<f64>) {
        xa.clear();
        xb.clear();
        for (v, &m) in x.iter().zip(&self.mask) {
            if m {
                xa.push(*v)
            } else {
                xb.push(*v)
            }
        }
    }

    fn scale_shift(&self, out: &[f64], s: &mut [f64], t: &mut [f64]) {
        let n_b = s.len();
        for k in 0..n_b {
            s[k] = self.clamp * (out[k] / self.clamp).tanh();
            t[k] = out[n_b + k];
        }
    }

    fn check(&self) -> Result<()> {
        let n_a = self.mask.iter().filter(|&&m| m).count();
        let n_b = self.mask.len() - n_a;
        if self.net.n_in != n_a || self.net.n_out != 2 * n_b || n_a == 0 || n_b == 0 {
            return Err(Error::DimensionMismatch { expected: n_a, got: self.net.n_in });
        }
        self.net.check()
    }
}

/// Elementwise monotone layer `z_i = x_i + Σ_k c_ik tanh(a_ik x_i + b_ik)` with
/// `a = exp(w)` and `c = (0.95/K) tanh(v) exp(−w)`, so `∂z_i/∂x_i ∈ (0.05, 1.95)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneLayer {
    pub dim: usize,
    pub units: usize,
    /// Per coordinate: `w[0..K]`, `b[0..K]`, `v[0..K]`.
    #[serde(with = "decimal::vec")]
    pub params: Vec<f64>,
}

const MONO_GAIN: f64 = 0.95;

impl MonotoneLayer {
    pub fn new(dim: usize, units: usize) -> Self {
        let mut params = vec![0.0; 3 * units * dim];
        for i in 0..dim {
            for k in 0..units {
                let b = if units == 1 { 0.0 } else { -2.0 + 4.0 * k as f64 / (units - 1) as f64 };
                params[i * 3 * units + units + k] = b;
            }
        }
        Self { dim, units, params }
    }

    fn coord(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let k = self.units;
        let base = i * 3 * k;
        (&self.params[base..base + k], &self.params[base + k..base + 2 * k], &self.params[base + 2 * k..base + 3 * k])
    }

    /// `(z, dz/dx)` for coordinate `i`.
    fn eval(&self, i: usize, x: f64) -> (f64, f64) {
        let (w, b, v) = self.coord(i);
        let q = MONO_GAIN / self.units as f64;
        let mut z = x;
        let mut dz = 1.0;
        for k in 0..self.units {
            let t = (w[k].exp() * x + b[k]).tanh();
            let qk = q * v[k].tanh();
            z += qk * (-w[k]).exp() * t;
            dz += qk * (1.0 - t * t);
        }
        (z, dz)
    }

    fn offset_bound(&self, i: usize) -> f64 {
        let (w, _, v) = self.coord(i);
        let q = MONO_GAIN / self.units as f64;
        w.iter().zip(v).map(|(w, v)| q * v.tanh().abs() * (-w).exp()).sum()
    }

    /// Inverse of coordinate `i` by safeguarded Newton on `[z − C, z + C]`.
    fn invert(&self, i: usize, z: f64) -> Result<f64> {
        let c = self.offset_bound(i);
        let (mut lo, mut hi) = (z - c - 1e-12 * (1.0 + z.abs()), z + c + 1e-12 * (1.0 + z.abs()));
        let mut x = z;
        for _ in 0..200 {
            let (zx, dz) = self.eval(i, x);
            let r = zx - z;
            if r == 0.0 {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = x - r / dz;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::NonConvergence { what: "monotone layer inverse", iterations: 200 })
    }

    fn check(&self) -> Result<()> {
        if self.params.len() != 3 * self.units * self.dim || self.units == 0 {
            return Err(Error::DimensionMismatch { expected: 3 * self.units * self.dim, got: self.params.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Layer {
    Coupling(CouplingLayer),
    Monotone(MonotoneLayer),
}

/// Per-layer forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    x: Vec<f64>,
    xa: Vec<f64>,
    xb: Vec<f64>,
    s: Vec<f64>,
    t: Vec<f64>,
    zb: Vec<f64>,
    gxa: Vec<f64>,
    gout: Vec<f64>,
    mlp: Option<MlpCache>,
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::Coupling(c) => c.mask.len(),
            Layer::Monotone(m) => m.dim,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Layer::Coupling(c) => &c.net.params,
            Layer::Monotone(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Coupling(c) => &mut c.net.params,
            Layer::Monotone(m) => &mut m.params,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Layer::Coupling(c) => c.check(),
            Layer::Monotone(m) => m.check(),
        }
    }

    pub fn new_cache(&self) -> LayerCache {
        let d = self.dim();
        let (mlp, n_a) = match self {
            Layer::Coupling(c) => (Some(MlpCache::new(&c.net)), c.net.n_in),
            Layer::Monotone(_) => (None, 0),
        };
        let n_b = d - n_a;
        LayerCache {
            x: vec![0.0; d],
            xa: Vec::with_capacity(n_a),
            xb: Vec::with_capacity(n_b),
            s: vec![0.0; if mlp.is_some() { n_b } else { 0 }],
            t: vec![0.0; if mlp.is_some() { n_b } else { 0 }],
            zb: vec![0.0; n_b],
            gxa: vec![0.0; n_a],
            gout: vec![0.0; 2 * n_b],
            mlp,
        }
    }

    /// Data → latent step; overwrites `x` with `z` and returns `log|det ∂z/∂x|`.
    pub fn normalize(&self, x: &mut [f64], cache: &mut LayerCache) -> f64 {
        cache.x.copy_from_slice(x);
        match self {
            Layer::Coupling(c) => {
                c.split(x, &mut cache.xa, &mut cache.xb);
                let mlp = cache.mlp.as_mut().expect("coupling cache");
                c.net.forward(&cache.xa, mlp);
                c.scale_shift(&mlp.out, &mut cache.s, &mut cache.t);
                let mut logdet = 0.0;
                let mut k = 0;
                for (i, &m) in c.mask.iter().enumerate() {
                    if !m {
                        let z = (cache.xb[k] - cache.t[k]) * (-cache.s[k]).exp();
                        cache.zb[k] = z;
                        x[i] = z;
                        logdet -= cache.s[k];
                        k += 1;
                    }
                }
                logdet
            }
            Layer::Monotone(m) => {
                let mut logdet = 0.0;
                for (i, v) in x.iter_mut().enumerate() {
                    let (z, dz) = m.eval(i, *v);
                    *v = z;
                    logdet += dz.ln();
                }
                logdet
            }
        }
    }

    /// Latent → data step.
    pub fn generate(&self, z: &mut [f64]) -> Result<()> {
        match self {
            Layer::Coupling(c) => {
                let mut xa = Vec::with_capacity(c.net.n_in);
                let mut zb = Vec::with_capacity(z.len() - c.net.n_in);
                c.split(z, &mut xa, &mut zb);
                let mut cache = MlpCache::new(&c.net);
                c.net.forward(&xa, &mut cache);
                let n_b = zb.len();
                let mut s = vec![0.0; n_b];
                let mut t = vec![0.0; n_b];
                c.scale_shift(&cache.out, &mut s, &mut t);
                let mut k = 0;
                for (i, &m) in c.mask.iter().enumerate() {
                    if !m {
                        z[i] = zb[k] * s[k].exp() + t[k];
                        k += 1;
                    }
                }
                Ok(())
            }
            Layer::Monotone(m) => {
                for (i, v) in z.iter_mut().enumerate() {
                    *v = m.invert(i, *v)?;
                }
                Ok(())
            }
        }
    }

    /// Given `g = ∂ℓ/∂z` on entry, accumulates `∂(g·z − log|det|)/∂θ` into
    /// `grad` and leaves `∂ℓ/∂x` in `g`.
    pub fn backward(&self, cache: &mut LayerCache, g: &mut [f64], grad: &mut [f64]) {
        match self {
            Layer::Coupling(c) => {
                let n_b = cache.zb.len();
                let mut k = 0;
                for (i, &m) in c.mask.iter().enumerate() {
                    if !m {
                        let gz = g[i];
                        let e = (-cache.s[k]).exp();
                        // ℓ contains +s from −log|det|, and ∂z_b/∂s = −z_b
                        let gs = 1.0 - gz * cache.zb[k];
                        let u = cache.s[k] / c.clamp;
                        cache.gout[k] = gs * (1.0 - u * u);
                        cache.gout[n_b + k] = -gz * e;
                        g[i] = gz * e;
                        k += 1;
                    }
                }
                let mlp = cache.mlp.as_mut().expect("coupling cache");
                c.net.backward(&cache.xa, mlp, &cache.gout, grad, &mut cache.gxa);
                let mut ka = 0;
                for (i, &m) in c.mask.iter().enumerate() {
                    if m {
                        g[i] += cache.gxa[ka];
                        ka += 1;
                    }
                }
            }
            Layer::Monotone(m) => {
                let units = m.units;
                let q = MONO_GAIN / units as f64;
                for i in 0..m.dim {
                    let x = cache.x[i];
                    let base = i * 3 * units;
                    let (w, b, v) = m.coord(i);
                    let mut dz = 1.0;
                    for k in 0..units {
                        let t = (w[k].exp() * x + b[k]).tanh();
                        dz += q * v[k].tanh() * (1.0 - t * t);
                    }
                    let gz = g[i];
                    let inv = 1.0 / dz;
                    let mut gx = gz * dz;
                    for k in 0..units {
                        let a = w[k].exp();
                        let ea = (-w[k]).exp();
                        let t = (a * x + b[k]).tanh();
                        let s2 = 1.0 - t * t;
                        let tv = v[k].tanh();
                        let qk = q * tv;
                        let d2 = -2.0 * t * s2;
                        // (∂z/∂θ, ∂z'/∂θ) for θ ∈ {w, b, v}
                        let (zw, dw) = (qk * (s2 * x - ea * t), qk * d2 * a * x);
                        let (zb, db) = (qk * ea * s2, qk * d2);
                        let dv_gain = q * (1.0 - tv * tv);
                        let (zv, dv) = (dv_gain * ea * t, dv_gain * s2);
                        grad[base + k] += gz * zw - inv * dw;
                        grad[base + units + k] += gz * zb - inv * db;
                        grad[base + 2 * units + k] += gz * zv - inv * dv;
                        gx -= inv * qk * d2 * a;
                    }
                    g[i] = gx;
                }
            }
        }
    }
}

/// Layer stack for dimension `d`: alternating coupling layers with a monotone
/// layer after each complementary pair; `d = 1` uses monotone layers only.
pub fn default_stack(d: usize, layers: usize, hidden: usize, rng: &mut RngStream) -> Result<Vec<Layer>> {
    if d == 0 {
        return Err(Error::InvalidArgument("flow dimension must be positive".into()));
    }
    if d == 1 {
        return Ok((0..layers).map(|_| Layer::Monotone(MonotoneLayer::new(1, hidden.max(1)))).collect());
    }
    let mut patterns: Vec<Vec<bool>> = vec![(0..d).map(|i| i % 2 == 0).collect()];
    if d >= 4 {
        patterns.push((0..d).map(|i| i < d / 2).collect());
    }
    let mono_units = hidden.clamp(1, 8);
    let mut out = Vec::new();
    for l in 0..layers {
        let base = &patterns[(l / 2) % patterns.len()];
        let mask: Vec<bool> = base.iter().map(|&m| m ^ (l % 2 == 1)).collect();
        out.push(Layer::Coupling(CouplingLayer::new(mask, hidden, 5.0, rng)?));
        if l % 2 == 1 {
            out.push(Layer::Monotone(MonotoneLayer::new(d, mono_units)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed(mut layer: Layer, rng: &mut RngStream, scale: f64) -> Layer {
        for p in layer.params_mut() {
            *p += scale * (2.0 * rng.uniform() - 1.0);
        }
        layer
    }

    fn sample_layers(rng: &mut RngStream) -> Vec<Layer> {
        vec![
            perturbed(Layer::Coupling(CouplingLayer::new(vec![true, false, true], 5, 5.0, rng).unwrap()), rng, 0.5),
            perturbed(Layer::Monotone(MonotoneLayer::new(3, 4)), rng, 0.8),
        ]
    }

    #[test]
    fn fresh_layers_are_identity() {
        let mut rng = RngStream::new(1, 1);
        for layer in default_stack(3, 4, 6, &mut rng).unwrap() {
            let mut cache = layer.new_cache();
            let mut x = vec![0.3, -1.2, 2.0];
            let ld = layer.normalize(&mut x, &mut cache);
            for (a, b) in x.iter().zip([0.3, -1.2, 2.0]) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!(ld.abs() < 1e-15);
        }
    }

    #[test]
    fn layer_round_trip_and_logdet() {
        let mut rng = RngStream::new(2, 1);
        for layer in sample_layers(&mut rng) {
            let mut cache = layer.new_cache();
            for _ in 0..50 {
                let x0: Vec<f64> = (0..3).map(|_| 4.0 * (2.0 * rng.uniform() - 1.0)).collect();
                let mut z = x0.clone();
                let ld = layer.normalize(&mut z, &mut cache);
                let mut back = z.clone();
                layer.generate(&mut back).unwrap();
                for (a, b) in back.iter().zip(&x0) {
                    assert!((a - b).abs() < 1e-10);
                }
                // finite-difference Jacobian determinant
                let h = 1e-6;
                let mut jac = nalgebra::DMatrix::zeros(3, 3);
                for c in 0..3 {
                    let mut xp = x0.clone();
                    let mut xm = x0.clone();
                    xp[c] += h;
                    xm[c] -= h;
                    layer.normalize(&mut xp, &mut cache);
                    layer.normalize(&mut xm, &mut cache);
                    for r in 0..3 {
                        jac[(r, c)] = (xp[r] - xm[r]) / (2.0 * h);
                    }
                }
                assert!((jac.determinant().abs().ln() - ld).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(3, 1);
        for layer in sample_layers(&mut rng) {
            let x0 = vec![0.4, -0.9, 1.3];
            let gup = vec![0.7, -0.2, 0.5];
            let loss = |l: &Layer, x: &[f64]| {
                let mut c = l.new_cache();
                let mut z = x.to_vec();
                let ld = l.normalize(&mut z, &mut c);
                z.iter().zip(&gup).map(|(z, g)| z * g).sum::<f64>() - ld
            };
            let mut cache = layer.new_cache();
            let mut z = x0.clone();
            layer.normalize(&mut z, &mut cache);
            let mut g = gup.clone();
            let mut grad = vec![0.0; layer.params().len()];
            layer.backward(&mut cache, &mut g, &mut grad);
            let h = 1e-6;
            for i in 0..3 {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}: {fd} vs {}", g[i]);
            }
            for j in 0..layer.params().len() {
                let mut lp = layer.clone();
                let mut lm = layer.clone();
                lp.params_mut()[j] += h;
                lm.params_mut()[j] -= h;
                let fd = (loss(&lp, &x0) - loss(&lm, &x0)) / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-6 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn monotone_derivative_bounds() {
        let mut rng = RngStream::new(4, 1);
        let layer = MonotoneLayer { dim: 1, units: 3, params: (0..9).map(|_| 6.0 * (2.0 * rng.uniform() - 1.0)).collect() };
        for k in -100..=100 {
            let (_, dz) = layer.eval(0, k as f64 * 0.1);
            assert!(dz > 0.05 && dz < 1.95);
        }
    }

    #[test]
    fn masks_cover_every_coordinate() {
        let mut rng = RngStream::new(5, 1);
        for d in 2..7 {
            let stack = default_stack(d, 4, 4, &mut rng).unwrap();
            let mut transformed = vec![false; d];
            for l in &stack {
                if let Layer::Coupling(c) = l {
                    for (t, &m) in transformed.iter_mut().zip(&c.mask) {
                        *t |= !m;
                    }
                }
            }
            assert!(transformed.iter().all(|&t| t));
        }
        assert!(default_stack(1, 3, 8, &mut rng).unwrap().iter().all(|l| matches!(l, Layer::Monotone(_))));
    }
}
