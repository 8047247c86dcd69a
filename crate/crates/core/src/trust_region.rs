//! Pieces shared by the trust-region engines: configuration, the agreement
//! ratio, iteration records and upkeep of the interpolation set.
//!
//! Geometry work happens in the local frame `(y − x)/Δ`, where the trust
//! region is the unit ball around the origin.

use std::fmt;

use thiserror::Error;

use crate::eval::{EvalError, Evaluator};
use crate::interp::{
    self, build_newton_basis, check_adequacy, cofactor_polynomials, lagrange_polynomials, maximize_abs_in_ball,
    natural_basis, AdequacyReport, BasisOptions, BlockedPointSet, InterpError, MonomialPoly, NewtonBasis, QuadOrder,
};
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("objective returned a non-finite value at {point:?}")]
    ObjectiveFailure { point: Vec<f64> },
    #[error("training failed: {0}")]
    Training(String),
    #[error("evaluation budget of {budget} exhausted")]
    Budget { budget: usize },
    #[error(transparent)]
    Degenerate(#[from] DegenerateRatio),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Acceptance thresholds, radius factors and stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct TrConfig {
    pub eta1: f64,
    pub eta2: f64,
    /// Shrink factor on unsuccessful iterations.
    pub gamma1: f64,
    /// Expansion factor on successful iterations.
    pub gamma2: f64,
    pub delta0: f64,
    pub eps_delta: f64,
    pub eps_station: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Maximum number of distinct objective evaluations.
    pub budget: Option<usize>,
    /// Sufficient-decrease constant checked on accepted steps.
    pub beta: f64,
    pub kkt_tol: f64,
    /// Halton probes used by the adequacy test.
    pub adequacy_probes: usize,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            eta1: 0.1,
            eta2: 0.75,
            gamma1: 0.5,
            gamma2: 2.0,
            delta0: 1.0,
            eps_delta: 1e-6,
            eps_station: 1e-5,
            max_iters: 500,
            seed: 0,
            budget: None,
            beta: 1e-6,
            kkt_tol: 1e-4,
            adequacy_probes: 64,
        }
    }
}

impl TrConfig {
    pub fn validate(&self) -> Result<(), TrError> {
        let bad = |m: &str| Err(TrError::Config(m.to_string()));
        if !(0.0 < self.eta1 && self.eta1 <= self.eta2 && self.eta2 <= 1.0) {
            return bad("need 0 < eta1 <= eta2 <= 1");
        }
        if !(0.0 < self.gamma1 && self.gamma1 < 1.0 && 1.0 <= self.gamma2) {
            return bad("need 0 < gamma1 < 1 <= gamma2");
        }
        if !(self.delta0 > 0.0 && self.eps_delta > 0.0 && self.eps_station >= 0.0) {
            return bad("delta0 and eps_delta must be positive");
        }
        if self.beta < 0.0 || self.kkt_tol < 0.0 {
            return bad("beta and kkt_tol must be nonnegative");
        }
        Ok(())
    }
}

/// The model's predicted reduction is too small to divide by.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("model decrease {0:e} is below the ratio guard")]
pub struct DegenerateRatio(pub f64);

impl From<EvalError> for TrError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ObjectiveFailure { point } => TrError::ObjectiveFailure { point },
            EvalError::BudgetExceeded { budget } => TrError::Budget { budget },
        }
    }
}

/// `ρ = (f_old − f_new)/(m_old − m_new)`.
pub fn agreement_ratio(f_old: f64, f_new: f64, m_old: f64, m_new: f64) -> Result<f64, DegenerateRatio> {
    let md = m_old - m_new;
    if md.abs() < 1e-14 * (1.0 + f_old.abs()) {
        return Err(DegenerateRatio(md));
    }
    Ok((f_old - f_new) / md)
}

/// How the interpolation set or radius changed in an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    SuccessSwap,
    GeometryRepair,
    Shrink,
    Final,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateKind::SuccessSwap => "success-swap",
            UpdateKind::GeometryRepair => "geometry-repair",
            UpdateKind::Shrink => "shrink",
            UpdateKind::Final => "final",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminatedBy {
    Delta,
    Stationarity,
    Budget,
    MaxIters,
    Failure,
}

impl fmt::Display for TerminatedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminatedBy::Delta => "delta",
            TerminatedBy::Stationarity => "stationarity",
            TerminatedBy::Budget => "budget",
            TerminatedBy::MaxIters => "max_iters",
            TerminatedBy::Failure => "failure",
        })
    }
}

/// `‖(H + w*I)s + g‖`, `|w*(Δ − ‖s‖)|` and `max(0, −λ_min(H + w*I))`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub curvature: f64,
}

/// Extra terms reported by the black-box engine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeuralDiagnostics {
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub loss_delta: Option<f64>,
    pub loss_cauchy: Option<f64>,
    pub loss_local: Option<f64>,
    pub loss_agreement: Option<f64>,
    pub clarke: Option<f64>,
    pub n_w: Option<usize>,
    pub n_b: Option<usize>,
}

/// One row of the iteration trace. `x`, `f` and `delta` describe the state
/// after the iteration's update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub evals: usize,
    pub f: f64,
    pub delta: f64,
    pub rho: Option<f64>,
    pub step_norm: Option<f64>,
    pub model_decrease: Option<f64>,
    pub accepted: bool,
    pub update: UpdateKind,
    pub kkt: Option<KktResiduals>,
    pub neural: NeuralDiagnostics,
    /// On accepted steps, whether the sufficient-decrease check held.
    pub decrease_ok: Option<bool>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iters: usize,
    pub terminated_by: TerminatedBy,
    pub trace: Vec<TraceRecord>,
    /// Accepted steps whose model decrease fell below `β‖s‖²`.
    pub decrease_violations: usize,
}

/// Initial interpolation pattern: `x`, `x + ½Δe_i`, then `x + Δe_i` and
/// `x + ½Δ(e_i + e_j)` for `i < j`.
pub fn initial_pattern(x: &[f64], delta: f64) -> [Vec<Vec<f64>>; 3] {
    let n = x.len();
    let shifted = |pairs: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, v) in pairs {
            y[i] += v;
        }
        y
    };
    let lin = (0..n).map(|i| shifted(&[(i, 0.5 * delta)])).collect();
    let mut quad: Vec<Vec<f64>> = (0..n).map(|i| shifted(&[(i, delta)])).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            quad.push(shifted(&[(i, 0.5 * delta), (j, 0.5 * delta)]));
        }
    }
    [vec![x.to_vec()], lin, quad]
}

/// Evaluates every point of the initial pattern.
pub(crate) fn evaluated_pattern(x: &[f64], fx: f64, delta: f64, ev: &mut Evaluator) -> Result<BlockedPointSet, EvalError> {
    let mut set = BlockedPointSet::new(x.len());
    for (b, pts) in initial_pattern(x, delta).into_iter().enumerate() {
        for y in pts {
            let v = if b == 0 { fx } else { ev.eval(&y)? };
            set.push(b, y, Some(v)).expect("pattern fits the block sizes");
        }
    }
    Ok(set)
}

pub(crate) fn to_local(y: &[f64], center: &[f64], delta: f64) -> Vec<f64> {
    y.iter().zip(center).map(|(a, c)| (a - c) / delta).collect()
}

pub(crate) fn to_global(z: &[f64], center: &[f64], delta: f64) -> Vec<f64> {
    z.iter().zip(center).map(|(a, c)| c + delta * a).collect()
}

/// All quadratic monomials, the basis used for determinants and Lagrange
/// polynomials in the local frame.
pub(crate) fn monomial_basis(dim: usize) -> Vec<MonomialPoly> {
    natural_basis(dim, QuadOrder::Lex).into_iter().flatten().collect()
}

/// Newton basis and adequacy of the set in the local frame.
#[derive(Debug, Clone)]
pub struct GeometryStatus {
    pub local: BlockedPointSet,
    pub basis: NewtonBasis,
    pub adequacy: AdequacyReport,
}

pub fn assess_geometry(set: &BlockedPointSet, center: &[f64], delta: f64, probes: usize) -> Result<GeometryStatus, TrError> {
    let local = set.scaled(center, delta);
    let basis = build_newton_basis(&local, &BasisOptions::default())?;
    let origin = vec![0.0; set.dim()];
    let adequacy = check_adequacy(&basis, &local, &origin, 1.0, interp::default_kappa(&local), probes);
    Ok(GeometryStatus { local, basis, adequacy })
}

fn index_of(set: &BlockedPointSet, x: &[f64]) -> Option<usize> {
    set.iter().position(|p| p.x == x)
}

/// Replacement chosen by geometry repair, in global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub index: usize,
    pub point: Vec<f64>,
}

/// Picks a point to replace and its replacement. Points outside the trust
/// region go first (farthest first), each moved to the maximizer of its
/// Lagrange (or cofactor) polynomial over the ball; otherwise the
/// determinant-increasing swap of [`interp::select_exit_point_inadequate`]
/// is used. The current iterate is never removed.
pub fn plan_repair(set: &BlockedPointSet, center: &[f64], delta: f64) -> Result<Repair, TrError> {
    let local = set.scaled(center, delta);
    let basis = monomial_basis(set.dim());
    let keep: Vec<usize> = index_of(set, center).into_iter().collect();
    let pts = local.points();
    let far = (0..pts.len())
        .filter(|i| !keep.contains(i))
        .map(|i| (i, linalg::norm(pts[i])))
        .filter(|&(_, d)| d > 1.0 + 1e-9)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, _)) = far {
        let polys = match lagrange_polynomials(&local, &basis) {
            Ok(l) => l,
            Err(_) => cofactor_polynomials(&local, &basis)?,
        };
        let origin = vec![0.0; set.dim()];
        let (z, v) = maximize_abs_in_ball(&polys[i], &origin, 1.0, 8);
        if v > 1e-10 {
            return Ok(Repair {
                index: i,
                point: to_global(&z, center, delta),
            });
        }
    }
    let origin = vec![0.0; set.dim()];
    let (i, z) = interp::select_exit_point_inadequate_excluding(&local, &origin, 1.0, &basis, 8, &keep)?;
    Ok(Repair {
        index: i,
        point: to_global(&z, center, delta),
    })
}

/// Index leaving the set when the accepted point `x_new` joins it. Falls
/// back to the farthest point when the set is not poised.
pub fn plan_success_swap(set: &BlockedPointSet, center: &[f64], delta: f64, x_new: &[f64]) -> usize {
    let local = set.scaled(center, delta);
    let basis = monomial_basis(set.dim());
    let origin = vec![0.0; set.dim()];
    let z = to_local(x_new, center, delta);
    interp::select_exit_point_success(&local, &z, &basis, &origin).unwrap_or_else(|_| {
        let pts = local.points();
        (0..pts.len())
            .max_by(|&a, &b| linalg::norm(pts[a]).total_cmp(&linalg::norm(pts[b])))
            .unwrap_or(0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::poisedness_determinant;

    #[test]
    fn ratio_examples() {
        assert_eq!(agreement_ratio(3.0, 1.0, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(agreement_ratio(3.0, -1.0, 3.0, 1.0).unwrap(), 2.0);
        assert!(agreement_ratio(1.0, 2.0, 1.0, 0.5).unwrap() < 0.0);
        assert!(agreement_ratio(1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn config_orderings() {
        assert!(TrConfig::default().validate().is_ok());
        let bad = TrConfig {
            gamma1: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrConfig {
            eta1: 0.9,
            eta2: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pattern_is_the_scaled_example_set() {
        let p = initial_pattern(&[1.0, 2.0], 2.0);
        assert_eq!(p[0], vec![vec![1.0, 2.0]]);
        assert_eq!(p[1], vec![vec![2.0, 2.0], vec![1.0, 3.0]]);
        assert_eq!(p[2], vec![vec![3.0, 2.0], vec![1.0, 4.0], vec![2.0, 3.0]]);
        for n in 1..=5 {
            let x = vec![0.3; n];
            let set = BlockedPointSet::from_blocks(n, initial_pattern(&x, 0.5)).unwrap();
            let local = set.scaled(&x, 0.5);
            let d = poisedness_determinant(&local, &monomial_basis(n)).unwrap();
            assert!(d != 0.0, "n = {n}");
            assert!(build_newton_basis(&local, &BasisOptions::default()).unwrap().complete);
        }
    }

    #[test]
    fn repair_moves_far_points_inside() {
        let x = vec![0.0, 0.0];
        let mut set = BlockedPointSet::from_blocks(2, initial_pattern(&x, 4.0)).unwrap();
        let status = assess_geometry(&set, &x, 1.0, 32).unwrap();
        assert!(!status.adequacy.cardinality_ok);
        let r = plan_repair(&set, &x, 1.0).unwrap();
        assert_ne!(r.index, 0);
        assert!(linalg::norm(&r.point) <= 1.0 + 1e-9);
        set.replace(r.index, r.point, None);
        let d = poisedness_determinant(&set.scaled(&x, 1.0), &monomial_basis(2)).unwrap();
        assert!(d.abs() > 0.0);
    }
}
