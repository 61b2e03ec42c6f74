use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{default_stack, Affine, CouplingFlow, TransportMap};
use crate::sampling::{label, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            validation_fraction: 0.1,
            patience: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.patience == 0 {
            return Err(Error::Config("batch_size, learning_rate and patience must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("validation_fraction {} outside [0, 0.5]", self.validation_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArch {
    pub layers: usize,
    pub hidden: usize,
}

impl FlowArch {
    pub fn for_dim(d: usize) -> Self {
        match d {
            0..=2 => Self { layers: 8, hidden: 32 },
            3..=4 => Self { layers: 10, hidden: 64 },
            _ => Self { layers: 12, hidden: 128 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
}

struct OptState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptState {
    fn new(kind: Optimizer, lr: f64, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect();
        Self { kind, lr, step: 0, m: zeros(), v: zeros() }
    }

    fn apply(&mut self, flow: &mut CouplingFlow, grads: &[Vec<f64>]) {
        self.step += 1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let c1 = 1.0 - f64::powi(b1, self.step);
        let c2 = 1.0 - f64::powi(b2, self.step);
        for (l, layer) in flow.layers.iter_mut().enumerate() {
            let params = layer.params_mut();
            for (j, p) in params.iter_mut().enumerate() {
                let g = grads[l][j];
                match self.kind {
                    Optimizer::Adam => {
                        self.m[l][j] = b1 * self.m[l][j] + (1.0 - b1) * g;
                        self.v[l][j] = b2 * self.v[l][j] + (1.0 - b2) * g * g;
                        *p -= self.lr * (self.m[l][j] / c1) / ((self.v[l][j] / c2).sqrt() + eps);
                    }
                    Optimizer::SgdMomentum => {
                        self.m[l][j] = 0.9 * self.m[l][j] + g;
                        *p -= self.lr * self.m[l][j];
                    }
                }
            }
        }
    }
}

fn shuffle(idx: &mut [usize], rng: &mut RngStream) {
    for i in (1..idx.len()).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
}

/// Fits a whitened coupling flow by minibatch maximum likelihood and returns
/// the parameters with the best validation NLL together with the loss trace.
pub fn train_flow(data: &[Vec<f64>], arch: FlowArch, config: &TrainConfig) -> Result<(TransportMap, Vec<TraceRow>)> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two observations".into()));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut rng = RngStream::new(config.seed, label("flow-train"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle(&mut order, &mut rng);
    let n_val = ((data.len() as f64 * config.validation_fraction).floor() as usize).min(data.len() - 2);
    let val: Vec<Vec<f64>> = order[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train: Vec<Vec<f64>> = order[n_val..].iter().map(|&i| data[i].clone()).collect();

    let whiten = Affine::fit_moments(&train)?;
    let mut flow = CouplingFlow::new(whiten, default_stack(d, arch.layers, arch.hidden, &mut rng)?)?;
    let shapes: Vec<usize> = flow.layers.iter().map(|l| l.params().len()).collect();
    let mut opt = OptState::new(config.optimizer, config.learning_rate, &shapes);
    let mut best = flow.clone();
    let mut best_score = f64::INFINITY;
    let mut since_best = 0;
    let mut trace = Vec::new();
    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
    let mut idx: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        shuffle(&mut idx, &mut rng);
        let mut work = flow.work();
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(config.batch_size) {
            grads.iter_mut().flatten().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += flow.accumulate_gradient(&train[i], &mut work, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, trace });
            }
            epoch_loss += loss;
            opt.apply(&mut flow, &grads);
        }
        let train_nll = epoch_loss / train.len() as f64;
        let val_nll = (!val.is_empty()).then(|| flow.nll(&val));
        let score = val_nll.unwrap_or(train_nll);
        trace.push(TraceRow { epoch, train_nll, val_nll });
        if !score.is_finite() {
            return Err(Error::TrainingDiverged { epoch, trace });
        }
        if score < best_score {
            best_score = score;
            best = flow.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    log::info!("flow training finished after {} epochs, best score {best_score}", trace.len());
    Ok((TransportMap::CouplingFlow(best), trace))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["epoch", "train_nll", "val_nll"])?;
    for row in trace {
        w.write_record([row.epoch.to_string(), row.train_nll.to_string(), row.val_nll.map_or(String::new(), |v| v.to_string())])?;
    }
    w.flush()?;
    Ok(())
}
