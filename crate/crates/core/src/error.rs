use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid bracket [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi} do not straddle zero")]
    InvalidBracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("acceptance-rejection exceeded {cap} iterations (window [{lo}, {hi}], k = {k})")]
    IterationCap { cap: usize, k: u32, lo: f64, hi: f64 },

    #[error("scheme would have {requested} strata, above the cap of {cap}")]
    StratumCap { requested: u128, cap: usize },

    #[error("budget {budget} too small: {strata} strata need at least {needed}")]
    BudgetTooSmall { budget: usize, strata: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("map has no inverse or latent parameterization: {0}")]
    NotInvertible(&'static str),

    #[error("numerical overflow in {0}")]
    Overflow(&'static str),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, trace: Vec<crate::flow::TraceRow> },

    #[error("mixture component collapsed repeatedly (component {component})")]
    ComponentCollapse { component: usize },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
