use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::{DEFAULT_PILOT_FRACTION, MIN_PER_STRATUM};
use crate::flow::{FlowArch, TrainConfig};
use crate::strata::{self, StrataScheme, DEFAULT_STRATUM_CAP};
use crate::testbeds::{TargetFunction, Testbed};

pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SELECTION_BUDGET: usize = 1000;

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_pilot_fraction() -> f64 {
    DEFAULT_PILOT_FRACTION
}

fn default_selection_budget() -> usize {
    DEFAULT_SELECTION_BUDGET
}

fn default_gmm_iters() -> usize {
    500
}

/// Observed data read from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub first_difference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Closed-form transport of the testbed.
    Exact,
    /// Identity map; the data law is taken to be `N(0, I)`.
    Identity,
    /// Coupling flow loaded from `path`, or trained on the observed data.
    Flow {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        arch: Option<FlowArch>,
        #[serde(default)]
        train: TrainConfig,
    },
    /// Gaussian mixture fitted by EM; usable with crude Monte Carlo only.
    Gmm {
        k: usize,
        #[serde(default = "default_gmm_iters")]
        max_iters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeSpec {
    Cmc,
    Cartesian { m0: usize },
    Spherical { m_r: usize, m0: usize },
    Radial { m_r: usize },
    SelectedDims { dims: Vec<usize>, m0: usize },
    /// `eta` coordinates drawn uniformly per repetition.
    RandomDims { eta: usize, m0: usize },
    /// `eta` coordinates with the largest single-axis pilot SD.
    HighVariance {
        eta: usize,
        m0: usize,
        #[serde(default = "default_selection_budget")]
        selection_budget: usize,
    },
    /// A serialized scheme.
    File { path: PathBuf },
}

impl SchemeSpec {
    pub fn is_cmc(&self) -> bool {
        matches!(self, SchemeSpec::Cmc)
    }

    /// Builds the scheme when it does not depend on the map or the RNG.
    pub fn build_static(&self, d: usize) -> Result<Option<StrataScheme>> {
        Ok(Some(match self {
            SchemeSpec::Cmc => return Ok(None),
            SchemeSpec::Cartesian { m0 } => strata::build_cartesian(d, *m0)?,
            SchemeSpec::Spherical { m_r, m0 } => strata::build_spherical(d, *m_r, *m0)?,
            SchemeSpec::Radial { m_r } => strata::build_radial(d, *m_r)?,
            SchemeSpec::SelectedDims { dims, m0 } => strata::build_selected_dims(d, dims, *m0)?,
            SchemeSpec::RandomDims { .. } | SchemeSpec::HighVariance { .. } => return Ok(None),
            SchemeSpec::File { path } => load_scheme(path, d)?,
        }))
    }

    /// Number of strata the scheme will have in dimension `d`.
    pub fn num_strata(&self, d: usize) -> Result<usize> {
        match self {
            SchemeSpec::Cmc => Ok(1),
            SchemeSpec::RandomDims { eta, m0 } | SchemeSpec::HighVariance { eta, m0, .. } => {
                if *eta == 0 || *eta > d {
                    return Err(Error::Config(format!("cannot select {eta} of {d} dimensions")));
                }
                let dims: Vec<usize> = (0..*eta).collect();
                Ok(strata::build_selected_dims(d, &dims, *m0)?.num_strata())
            }
            _ => Ok(self.build_static(d)?.expect("static scheme").num_strata()),
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::Cmc => f.write_str("cmc"),
            SchemeSpec::Cartesian { m0 } => write!(f, "cartesian(m0={m0})"),
            SchemeSpec::Spherical { m_r, m0 } => write!(f, "spherical(m_r={m_r};m0={m0})"),
            SchemeSpec::Radial { m_r } => write!(f, "radial(m_r={m_r})"),
            SchemeSpec::SelectedDims { dims, m0 } => {
                let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
                write!(f, "selected(dims={};m0={m0})", dims.join(" "))
            }
            SchemeSpec::RandomDims { eta, m0 } => write!(f, "random(eta={eta};m0={m0})"),
            SchemeSpec::HighVariance { eta, m0, .. } => write!(f, "high(eta={eta};m0={m0})"),
            SchemeSpec::File { path } => write!(f, "file({})", path.display()),
        }
    }
}

pub fn load_scheme(path: &Path, d: usize) -> Result<StrataScheme> {
    let text = std::fs::read_to_string(path)?;
    let scheme: StrataScheme = serde_json::from_str(&text)
        .map_err(|e| Error::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
    if scheme.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: scheme.dim });
    }
    scheme.validate_shape()?;
    if scheme.num_strata() > DEFAULT_STRATUM_CAP {
        return Err(Error::StratumCap { requested: scheme.num_strata() as u128, cap: DEFAULT_STRATUM_CAP });
    }
    Ok(scheme)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AllocationSpec {
    Prop,
    Opt {
        #[serde(default = "default_pilot_fraction")]
        pilot_fraction: f64,
    },
}

impl fmt::Display for AllocationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationSpec::Prop => f.write_str("prop"),
            AllocationSpec::Opt { .. } => f.write_str("opt"),
        }
    }
}

/// Experiment grid: every target function × budget × scheme × allocation,
/// each repeated `repetitions` times. The crude scheme ignores allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub testbed: Option<Testbed>,
    #[serde(default)]
    pub data: Option<DataSpec>,
    /// Size of the training set drawn from the testbed when no data file is given.
    #[serde(default)]
    pub training_size: Option<usize>,
    pub functions: Vec<TargetFunction>,
    pub model: ModelSpec,
    pub schemes: Vec<SchemeSpec>,
    #[serde(default = "default_allocations")]
    pub allocations: Vec<AllocationSpec>,
    pub budgets: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retrain_per_rep: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_allocations() -> Vec<AllocationSpec> {
    vec![AllocationSpec::Prop]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Data dimension implied by the testbed or, failing that, a 2-column file.
    pub fn dim(&self) -> usize {
        self.testbed.map_or(2, Testbed::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.testbed.is_none() && self.data.is_none() {
            return bad("either testbed or data must be given".into());
        }
        if self.functions.is_empty() || self.schemes.is_empty() || self.budgets.is_empty() {
            return bad("functions, schemes and budgets must be non-empty".into());
        }
        if self.allocations.is_empty() && self.schemes.iter().any(|s| !s.is_cmc()) {
            return bad("stratified schemes need at least one allocation".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        let d = self.dim();
        if self.data.as_ref().is_some_and(|s| s.first_difference) && d != 2 {
            return bad("first differencing applies to 2-column data only".into());
        }
        for f in &self.functions {
            f.check_dim(d).map_err(|e| Error::Config(format!("function {f}: {e}")))?;
        }
        match &self.model {
            ModelSpec::Exact => match self.testbed {
                Some(tb) if tb.has_transport() => {}
                Some(tb) => return bad(format!("testbed {tb} has no exact transport")),
                None => return bad("the exact model needs a testbed".into()),
            },
            ModelSpec::Gmm { k, .. } => {
                if *k == 0 {
                    return bad("gmm needs k >= 1".into());
                }
                if self.schemes.iter().any(|s| !s.is_cmc()) {
                    return bad("the gmm model has no latent space; use the cmc scheme only".into());
                }
            }
            ModelSpec::Flow { path: None, train, .. } => train.validate()?,
            ModelSpec::Flow { .. } | ModelSpec::Identity => {}
        }
        if let ModelSpec::Flow { path: Some(_), .. } = &self.model {
            if self.retrain_per_rep {
                return bad("retrain_per_rep needs a trained flow, not a model file".into());
            }
        }
        for a in &self.allocations {
            if let AllocationSpec::Opt { pilot_fraction } = a {
                if !(*pilot_fraction > 0.0 && *pilot_fraction <= 1.0) {
                    return bad(format!("pilot_fraction {pilot_fraction} outside (0, 1]"));
                }
            }
        }
        for s in &self.schemes {
            let m = s.num_strata(d).map_err(|e| Error::Config(format!("scheme {s}: {e}")))?;
            if let SchemeSpec::HighVariance { m0, selection_budget, .. } = s {
                if *selection_budget < MIN_PER_STRATUM * m0 {
                    return bad(format!("scheme {s}: selection_budget below {}", MIN_PER_STRATUM * m0));
                }
            }
            for &r in &self.budgets {
                if r < MIN_PER_STRATUM * m {
                    return bad(format!("scheme {s} with m = {m} needs R >= {}, got {r}", MIN_PER_STRATUM * m));
                }
                if s.is_cmc() {
                    continue;
                }
                for a in &self.allocations {
                    if let AllocationSpec::Opt { pilot_fraction } = a {
                        let r_pilot = (pilot_fraction * r as f64).round() as usize;
                        if r_pilot < MIN_PER_STRATUM * m {
                            return bad(format!("scheme {s}: pilot budget {r_pilot} < {} at R = {r}", MIN_PER_STRATUM * m));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Output directory: the override, else the config's own, else `out`.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir.map(Path::to_path_buf).or_else(|| self.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }
}
