//! Invertible transport maps from the standard Gaussian latent space to data
//! space, and a trainable coupling flow fitted by maximum likelihood.

mod layers;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::GmmModel;
use crate::error::{Error, Result};
use crate::numerics::LN_SQRT_2PI;
use crate::sampling::{standard_normal_vector, RngStream};
use crate::testbeds::Testbed;

pub use layers::{default_stack, CouplingLayer, Layer, LayerCache, Mlp, MonotoneLayer};
pub use train::{train_flow, write_trace_csv, FlowArch, Optimizer, TraceRow, TrainConfig};

pub const MAP_FORMAT: &str = "stratflow-map";
pub const MAP_VERSION: u32 = 1;

/// Serde helpers storing floats as shortest round-trip decimal strings.
pub(crate) mod decimal {
    pub mod vec {
        use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|t| t.parse::<f64>().map_err(|e| D::Error::custom(format!("bad decimal {t:?}: {e}"))))
                .collect()
        }
    }

    pub mod nested {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Row(#[serde(with = "super::vec")] Vec<f64>);

        pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|r| Row(r.clone())).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            Ok(Vec::<Row>::deserialize(d)?.into_iter().map(|r| r.0).collect())
        }
    }
}

/// `x = L z + μ` with `L` lower triangular, stored row-major packed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(with = "decimal::vec")]
    pub mean: Vec<f64>,
    #[serde(with = "decimal::vec")]
    pub scale: Vec<f64>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl Affine {
    pub fn new(mean: Vec<f64>, lower: &[Vec<f64>]) -> Result<Self> {
        let d = mean.len();
        if lower.len() != d || lower.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: lower.len() });
        }
        let mut scale = Vec::with_capacity(d * (d + 1) / 2);
        for (i, row) in lower.iter().enumerate() {
            scale.extend_from_slice(&row[..=i]);
        }
        let a = Self { mean, scale };
        a.check()?;
        Ok(a)
    }

    pub fn identity(d: usize) -> Self {
        let mut scale = vec![0.0; d * (d + 1) / 2];
        for i in 0..d {
            scale[tri(i, i)] = 1.0;
        }
        Self { mean: vec![0.0; d], scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.scale.len() != d * (d + 1) / 2 {
            return Err(Error::DimensionMismatch { expected: d * (d + 1) / 2, got: self.scale.len() });
        }
        if (0..d).any(|i| !(self.scale[tri(i, i)] > 0.0)) {
            return Err(Error::InvalidArgument("affine scale needs a strictly positive diagonal".into()));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.mean[i] + (0..=i).map(|j| self.scale[tri(i, j)] * z[j]).sum::<f64>())
            .collect()
    }

    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        for i in 0..d {
            let acc: f64 = (0..i).map(|j| self.scale[tri(i, j)] * z[j]).sum();
            z[i] = (x[i] - self.mean[i] - acc) / self.scale[tri(i, i)];
        }
        z
    }

    /// `log |det L|`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.scale[tri(i, i)].ln()).sum()
    }

    /// Mean and Cholesky factor of the (population) covariance of `data`.
    pub fn fit_moments(data: &[Vec<f64>]) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::InvalidArgument("moment fit needs at least two rows".into()));
        }
        let d = data[0].len();
        let mut mean = vec![0.0; d];
        for x in data {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
        for x in data {
            let c = nalgebra::DVector::from_iterator(d, x.iter().zip(&mean).map(|(v, m)| v - m));
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        let lower = cholesky_with_jitter(cov)?;
        Self::new(mean, &(0..d).map(|i| (0..d).map(|j| lower[(i, j)]).collect()).collect::<Vec<_>>())
    }
}

pub(crate) fn cholesky_with_jitter(cov: nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
    let d = cov.nrows();
    let base = (0..d).map(|i| cov[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let m = &cov + nalgebra::DMatrix::<f64>::identity(d, d) * jitter;
        if let Some(ch) = m.cholesky() {
            return Ok(ch.l());
        }
        jitter = if jitter == 0.0 { 1e-12 * base } else { jitter * 100.0 };
    }
    Err(Error::InvalidArgument("covariance is not positive definite".into()))
}

/// Whitening followed by a layer stack, written in the normalizing direction:
/// `z = layers(whiten⁻¹(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingFlow {
    pub dim: usize,
    pub whiten: Affine,
    pub layers: Vec<Layer>,
}

pub(crate) struct FlowWork {
    caches: Vec<LayerCache>,
    u: Vec<f64>,
    g: Vec<f64>,
}

impl CouplingFlow {
    pub fn new(whiten: Affine, layers: Vec<Layer>) -> Result<Self> {
        let flow = Self { dim: whiten.dim(), whiten, layers };
        flow.check()?;
        Ok(flow)
    }

    fn check(&self) -> Result<()> {
        self.whiten.check()?;
        if self.whiten.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: self.whiten.dim() });
        }
        for l in &self.layers {
            if l.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: l.dim() });
            }
            l.check()?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }

    pub(crate) fn work(&self) -> FlowWork {
        FlowWork {
            caches: self.layers.iter().map(Layer::new_cache).collect(),
            u: vec![0.0; self.dim],
            g: vec![0.0; self.dim],
        }
    }

    /// `(z, log|det ∂z/∂x|)`.
    pub fn normalize(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut w = self.work();
        let ld = self.normalize_into(x, &mut w);
        (w.u, ld)
    }

    fn normalize_into(&self, x: &[f64], w: &mut FlowWork) -> f64 {
        w.u = self.whiten.inverse(x);
        let mut ld = -self.whiten.log_det();
        for (l, c) in self.layers.iter().zip(w.caches.iter_mut()) {
            ld += l.normalize(&mut w.u, c);
        }
        ld
    }

    pub fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut u = z.to_vec();
        for l in self.layers.iter().rev() {
            l.generate(&mut u)?;
        }
        Ok(self.whiten.forward(&u))
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        let (z, ld) = self.normalize(x);
        gaussian_log_density(&z) + ld
    }

    /// Mean negative log-likelihood.
    pub fn nll(&self, data: &[Vec<f64>]) -> f64 {
        let mut w = self.work();
        let total: f64 = data
            .iter()
            .map(|x| {
                let ld = self.normalize_into(x, &mut w);
                -(gaussian_log_density(&w.u) + ld)
            })
            .sum();
        total / data.len() as f64
    }

    /// Adds the gradient of one sample's NLL into `grads` and returns that NLL.
    pub(crate) fn accumulate_gradient(&self, x: &[f64], w: &mut FlowWork, grads: &mut [Vec<f64>]) -> f64 {
        let ld = self.normalize_into(x, w);
        let loss = -(gaussian_log_density(&w.u) + ld);
        w.g.copy_from_slice(&w.u);
        for ((l, c), grad) in self.layers.iter().zip(w.caches.iter_mut()).zip(grads.iter_mut()).rev() {
            l.backward(c, &mut w.g, grad);
        }
        loss
    }

    /// Mean NLL over `data` and its gradient with respect to every layer's
    /// parameters.
    pub fn nll_and_gradient(&self, data: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.params().len()]).collect();
        let mut w = self.work();
        let mut total = 0.0;
        for x in data {
            total += self.accumulate_gradient(x, &mut w, &mut grads);
        }
        let n = data.len() as f64;
        for g in grads.iter_mut().flatten() {
            *g /= n;
        }
        (total / n, grads)
    }

    /// Adds uniform noise in `[−scale, scale]` to every trainable parameter.
    pub fn perturb(&mut self, scale: f64, rng: &mut RngStream) {
        for l in &mut self.layers {
            for p in l.params_mut() {
                *p += scale * (2.0 * rng.uniform() - 1.0);
            }
        }
    }
}

pub fn gaussian_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - z.len() as f64 * LN_SQRT_2PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransportMap {
    Identity { dim: usize },
    AffineWhiten(Affine),
    CouplingFlow(CouplingFlow),
    /// Closed-form transport of a synthetic testbed.
    Exact { testbed: Testbed },
    /// Sampling-only mixture; has no latent parameterization.
    Gmm(GmmModel),
}

impl TransportMap {
    pub fn identity(d: usize) -> Self {
        TransportMap::Identity { dim: d }
    }

    pub fn exact(testbed: Testbed) -> Result<Self> {
        if !testbed.has_transport() {
            return Err(Error::NotInvertible("testbed has no closed-form transport"));
        }
        Ok(TransportMap::Exact { testbed })
    }

    pub fn dim(&self) -> usize {
        match self {
            TransportMap::Identity { dim } => *dim,
            TransportMap::AffineWhiten(a) => a.dim(),
            TransportMap::CouplingFlow(f) => f.dim,
            TransportMap::Exact { testbed } => testbed.dim(),
            TransportMap::Gmm(g) => g.dim(),
        }
    }

    /// Whether samples can be generated from latent Gaussian draws, which
    /// stratified estimation requires.
    pub fn has_latent(&self) -> bool {
        !matches!(self, TransportMap::Gmm(_))
    }

    pub fn is_invertible(&self) -> bool {
        matches!(self, TransportMap::Identity { .. } | TransportMap::AffineWhiten(_) | TransportMap::CouplingFlow(_))
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    /// Latent `z` to data `x`.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let x = match self {
            TransportMap::Identity { .. } => z.to_vec(),
            TransportMap::AffineWhiten(a) => a.forward(z),
            TransportMap::CouplingFlow(f) => f.generate(z)?,
            TransportMap::Exact { testbed } => testbed.transport(z)?,
            TransportMap::Gmm(_) => return Err(Error::NotInvertible("mixture sampler has no latent map")),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("transport map forward"));
        }
        Ok(x)
    }

    /// Data `x` to latent `z`.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match self {
            TransportMap::Identity { .. } => Ok(x.to_vec()),
            TransportMap::AffineWhiten(a) => Ok(a.inverse(x)),
            TransportMap::CouplingFlow(f) => Ok(f.normalize(x).0),
            TransportMap::Exact { .. } => Err(Error::NotInvertible("inverse of a closed-form testbed transport")),
            TransportMap::Gmm(_) => Err(Error::NotInvertible("mixture sampler has no inverse")),
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        match self {
            TransportMap::Identity { .. } => Ok(gaussian_log_density(x)),
            TransportMap::AffineWhiten(a) => Ok(gaussian_log_density(&a.inverse(x)) - a.log_det()),
            TransportMap::CouplingFlow(f) => Ok(f.log_prob(x)),
            TransportMap::Gmm(g) => Ok(g.log_prob(x)),
            TransportMap::Exact { .. } => Err(Error::NotInvertible("density of a closed-form testbed transport")),
        }
    }

    pub fn nll(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("nll over an empty dataset".into()));
        }
        if let TransportMap::CouplingFlow(f) = self {
            data.iter().try_for_each(|x| self.check_dim(x))?;
            return Ok(f.nll(data));
        }
        let mut total = 0.0;
        for x in data {
            total -= self.log_prob(x)?;
        }
        Ok(total / data.len() as f64)
    }

    /// One draw from the map's data distribution.
    pub fn sample(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            TransportMap::Gmm(g) => Ok(g.sample_one(rng)),
            _ => self.forward(&standard_normal_vector(self.dim(), rng)),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            TransportMap::Identity { dim } if *dim == 0 => Err(Error::InvalidArgument("zero-dimensional map".into())),
            TransportMap::AffineWhiten(a) => a.check(),
            TransportMap::CouplingFlow(f) => f.check(),
            TransportMap::Gmm(g) => g.check(),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    format: String,
    version: u32,
    dim: usize,
    map: TransportMap,
}

pub fn map_to_json(map: &TransportMap) -> Result<String> {
    let doc = MapFile { format: MAP_FORMAT.into(), version: MAP_VERSION, dim: map.dim(), map: map.clone() };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn map_from_json(text: &str, path: &Path) -> Result<TransportMap> {
    let malformed = |reason: String| Error::Malformed { path: path.to_path_buf(), reason };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("version")
        .ok_or_else(|| malformed("missing version field".into()))?
        .as_u64()
        .ok_or_else(|| malformed("version must be a nonnegative integer".into()))?;
    if version != MAP_VERSION as u64 {
        return Err(Error::Version { found: version as u32, expected: MAP_VERSION });
    }
    let doc: MapFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if doc.format != MAP_FORMAT {
        return Err(malformed(format!("unexpected format tag {:?}", doc.format)));
    }
    doc.map.check()?;
    if doc.map.dim() != doc.dim {
        return Err(Error::DimensionMismatch { expected: doc.dim, got: doc.map.dim() });
    }
    Ok(doc.map)
}

pub fn save_map(map: &TransportMap, path: &Path) -> Result<()> {
    std::fs::write(path, map_to_json(map)?)?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<TransportMap> {
    map_from_json(&std::fs::read_to_string(path)?, path)
}

/// Loads a map and checks its dimension.
pub fn load_map_with_dim(path: &Path, dim: usize) -> Result<TransportMap> {
    let map = load_map(path)?;
    if map.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: map.dim() });
    }
    Ok(map)
}
