//! Full-covariance Gaussian mixture fitted by EM. Sampling only; it has no
//! latent parameterization and so cannot be stratified.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{cholesky_with_jitter, decimal};
use crate::numerics::LN_SQRT_2PI;
use crate::sampling::{label, RngStream};

/// Ridge added to every component's scatter matrix in the M-step.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
const MAX_REINIT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    #[serde(with = "decimal::vec")]
    pub weights: Vec<f64>,
    #[serde(with = "decimal::nested")]
    pub means: Vec<Vec<f64>>,
    /// Row-major packed lower Cholesky factor of each covariance.
    #[serde(with = "decimal::nested")]
    pub chol: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTrace {
    /// Penalized log-likelihood after each E-step.
    pub objective: Vec<f64>,
    /// `(iteration, component)` for each collapsed component that was reseeded.
    pub reinitialized: Vec<(usize, usize)>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn check(&self) -> Result<()> {
        let k = self.k();
        let d = self.dim;
        if self.means.len() != k || self.chol.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: self.means.len().min(self.chol.len()) });
        }
        if self.means.iter().any(|m| m.len() != d) || self.chol.iter().any(|c| c.len() != d * (d + 1) / 2) {
            return Err(Error::DimensionMismatch { expected: d, got: self.means.first().map_or(0, Vec::len) });
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be a probability vector".into()));
        }
        if self.chol.iter().any(|c| (0..d).any(|i| !(c[tri(i, i)] > 0.0))) {
            return Err(Error::InvalidArgument("covariance factors need a positive diagonal".into()));
        }
        Ok(())
    }

    fn component_log_density(&self, c: usize, x: &[f64]) -> f64 {
        let d = self.dim;
        let l = &self.chol[c];
        let mu = &self.means[c];
        let mut y = vec![0.0; d];
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for i in 0..d {
            let acc: f64 = (0..i).map(|j| l[tri(i, j)] * y[j]).sum();
            y[i] = (x[i] - mu[i] - acc) / l[tri(i, i)];
            quad += y[i] * y[i];
            logdet += l[tri(i, i)].ln();
        }
        -0.5 * quad - logdet - d as f64 * LN_SQRT_2PI
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.k()).map(|c| self.weights[c].ln() + self.component_log_density(c, x)).collect();
        log_sum_exp(&terms)
    }

    pub fn sample_one(&self, rng: &mut RngStream) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut c = self.k() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = j;
                break;
            }
        }
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let l = &self.chol[c];
        (0..d).map(|i| self.means[c][i] + (0..=i).map(|j| l[tri(i, j)] * z[j]).sum::<f64>()).collect()
    }

    pub fn sample(&self, count: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    fn penalty(&self) -> f64 {
        // (ε/2) Σ_k tr(Σ_k⁻¹) = (ε/2) Σ_k ‖L_k⁻¹‖_F²
        let d = self.dim;
        let mut total = 0.0;
        for l in &self.chol {
            let lm = nalgebra::DMatrix::from_fn(d, d, |i, j| if j <= i { l[tri(i, j)] } else { 0.0 });
            let inv = lm.try_inverse().expect("positive diagonal");
            total += inv.iter().map(|v| v * v).sum::<f64>();
        }
        0.5 * COVARIANCE_RIDGE * total
    }
}

pub fn gmm_sample(model: &GmmModel, count: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    model.sample(count, rng)
}

pub fn gmm_log_prob(model: &GmmModel, x: &[f64]) -> f64 {
    model.log_prob(x)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.below(data.len())].clone()];
    let mut dist: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            dist.iter().position(|&w| {
                acc += w;
                acc > u
            }).unwrap_or(data.len() - 1)
        } else {
            rng.below(data.len())
        };
        centers.push(data[next].clone());
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn pack_lower(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Weighted M-step for one component; `None` when its mass has collapsed.
fn m_step(data: &[Vec<f64>], resp: &[f64], k: usize, c: usize) -> Result<Option<(f64, Vec<f64>, Vec<f64>)>> {
    let d = data[0].len();
    let nk: f64 = data.iter().enumerate().map(|(i, _)| resp[i * k + c]).sum();
    if nk < 1e-8 * data.len() as f64 || nk < 1e-10 {
        return Ok(None);
    }
    let mut mu = vec![0.0; d];
    for (i, x) in data.iter().enumerate() {
        let r = resp[i * k + c];
        for (m, v) in mu.iter_mut().zip(x) {
            *m += r * v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= nk);
    let mut s = nalgebra::DMatrix::<f64>::identity(d, d) * COVARIANCE_RIDGE;
    for (i, x) in data.iter().enumerate() {
        let r = resp[i * k + c];
        let dev = nalgebra::DVector::from_iterator(d, x.iter().zip(&mu).map(|(v, m)| v - m));
        s += (&dev * dev.transpose()) * r;
    }
    s /= nk;
    Ok(Some((nk / data.len() as f64, mu, pack_lower(&cholesky_with_jitter(s)?))))
}

/// EM fit of a `k`-component mixture with k-means++ seeding.
pub fn fit_gmm(data: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<(GmmModel, GmmTrace)> {
    if k == 0 || data.is_empty() {
        return Err(Error::InvalidArgument("mixture fit needs k >= 1 and data".into()));
    }
    let d = data[0].len();
    if data.len() < k * (d + 2) {
        return Err(Error::InvalidArgument(format!("{} observations are too few for {k} components in d = {d}", data.len())));
    }
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let n = data.len();
    let mut rng = RngStream::new(seed, label("gmm-fit"));
    let centers = kmeans_pp(data, k, &mut rng);
    let mut resp = vec![0.0; n * k];
    for (i, x) in data.iter().enumerate() {
        let best = (0..k).min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b]))).unwrap();
        resp[i * k + best] = 1.0;
    }
    let global = m_step(data, &vec![1.0; n], 1, 0)?.expect("nonempty data").2;
    let mut model = GmmModel { dim: d, weights: vec![0.0; k], means: vec![vec![0.0; d]; k], chol: vec![vec![]; k] };
    let mut trace = GmmTrace { objective: Vec::new(), reinitialized: Vec::new() };
    let mut reinit_count = vec![0usize; k];

    for iter in 0..=max_iters {
        for c in 0..k {
            match m_step(data, &resp, k, c)? {
                Some((w, mu, l)) => {
                    model.weights[c] = w;
                    model.means[c] = mu;
                    model.chol[c] = l;
                }
                None => {
                    reinit_count[c] += 1;
                    if reinit_count[c] > MAX_REINIT {
                        return Err(Error::ComponentCollapse { component: c });
                    }
                    log::warn!("mixture component {c} collapsed at iteration {iter}; reseeding");
                    trace.reinitialized.push((iter, c));
                    model.weights[c] = 1.0 / n as f64;
                    model.means[c] = data[rng.below(n)].clone();
                    model.chol[c] = global.clone();
                }
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);

        let mut loglik = 0.0;
        let mut terms = vec![0.0; k];
        for (i, x) in data.iter().enumerate() {
            for (c, t) in terms.iter_mut().enumerate() {
                *t = model.weights[c].ln() + model.component_log_density(c, x);
            }
            let lse = log_sum_exp(&terms);
            loglik += lse;
            for c in 0..k {
                resp[i * k + c] = (terms[c] - lse).exp();
            }
        }
        let objective = loglik - model.penalty();
        let converged = trace
            .objective
            .last()
            .is_some_and(|&prev: &f64| (objective - prev).abs() <= 1e-10 * objective.abs().max(1.0));
        trace.objective.push(objective);
        if converged {
            break;
        }
    }
    Ok((model, trace))
}
