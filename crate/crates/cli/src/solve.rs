//! Runs one engine on one registered problem.

use std::time::Instant;

use ntr_core::tr_blackbox::run_algorithm2;
use ntr_core::tr_quadratic::{run_algorithm1, run_newton_tr};
use ntr_core::trust_region::{OptimizationResult, TrError};

use crate::config::{Algorithm, ConfigError, RunConfig};
use crate::trace::{trace_csv, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("objective failure: {0}")]
    Objective(String),
    #[error("engine error: {0}")]
    Engine(TrError),
}

impl From<TrError> for SolveError {
    fn from(e: TrError) -> Self {
        match e {
            TrError::ObjectiveFailure { .. } => SolveError::Objective(e.to_string()),
            TrError::Config(m) => SolveError::Config(ConfigError::Invalid(m)),
            other => SolveError::Engine(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub result: OptimizationResult,
    pub summary: RunSummary,
    pub trace_csv: String,
    /// Holdout samples that reached a training gradient (black-box engine).
    pub holdout_leaks: Option<usize>,
}

pub fn solve(cfg: &RunConfig) -> Result<SolveOutput, SolveError> {
    let (problem, x0) = cfg.validate()?;
    let mut tr = cfg.tr.clone();
    tr.seed = cfg.seed;
    let f = |x: &[f64]| problem.evaluate(x);
    let start = Instant::now();
    let (result, holdout_leaks) = match cfg.algorithm {
        Algorithm::NewtonTr => (run_newton_tr(&f, &x0, &tr)?, None),
        Algorithm::QuadNtr => (run_algorithm1(&f, &x0, &tr, &cfg.quad)?, None),
        Algorithm::BlackboxNtr => {
            let out = run_algorithm2(&f, &x0, &tr, &cfg.blackbox)?;
            (out.result, Some(out.holdout_leaks))
        }
    };
    let summary = RunSummary::from_result(&result, start.elapsed().as_secs_f64());
    Ok(SolveOutput {
        trace_csv: trace_csv(&result.trace),
        summary,
        result,
        holdout_leaks,
    })
}
