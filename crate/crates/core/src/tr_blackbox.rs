//! Trust-region engine with a black-box neural model.
//!
//! Each iteration samples points inside and on the boundary of the trust
//! region, fits a sigmoid net to them with a holdout split, and finds the
//! step by descent on a child loss built from the net's input derivatives.
//! The step search runs in the frame where the trust region is the unit
//! ball and model values are divided by the net's output scale, so the
//! loss weights do not depend on the units of `x` or `f`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::eval::{EvalError, Evaluator, Objective};
use crate::interp::{select_poised_subset, BlockedPointSet};
use crate::linalg::{self, dot, leading_principal_minors, norm, SymMatrix};
use crate::neural::{
    balanced_mse, fit_balanced, split_indices, FeedForwardNet, IndexedSample, Optimizer, TrainConfig,
};
use crate::sampling::{random_ball_point, random_sphere_point, random_unit_vector, rng_from_seed, HaltonBall};
use crate::trs::solve_trust_region;
use crate::trust_region::{
    agreement_ratio, assess_geometry, plan_repair, plan_success_swap, NeuralDiagnostics, OptimizationResult,
    TerminatedBy, TrConfig, TrError, TraceRecord, UpdateKind,
};

/// An evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub f: f64,
}

/// Training data for one iteration: points strictly inside the trust
/// region and points on its boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSets {
    pub center: Vec<f64>,
    pub delta: f64,
    pub interior: Vec<Sample>,
    pub boundary: Vec<Sample>,
}

impl SampledSets {
    pub fn n_w(&self) -> usize {
        self.interior.len()
    }

    pub fn n_b(&self) -> usize {
        self.boundary.len()
    }

    fn all(&self) -> impl Iterator<Item = &Sample> {
        self.interior.iter().chain(&self.boundary)
    }
}

const BOUNDARY_TOL: f64 = 1e-10;

/// Builds the interior and boundary sets around `center`.
///
/// Points of `existing` strictly inside the ball are reused first (the
/// center, then the most recent), then the interior is topped up with
/// shifted Halton points. Existing points on the sphere are reused and the
/// rest of the boundary comes from normalized Gaussian directions. Only
/// new points cost evaluations.
pub fn sample_sets(
    ev: &mut Evaluator,
    center: &[f64],
    delta: f64,
    n_w: usize,
    n_b: usize,
    existing: &[Sample],
    seed: u64,
) -> Result<SampledSets, EvalError> {
    let mut interior: Vec<Sample> = Vec::new();
    let mut boundary: Vec<Sample> = Vec::new();
    let mut ordered: Vec<&Sample> = existing.iter().rev().collect();
    ordered.sort_by_key(|s| s.x.as_slice() != center);
    for s in ordered {
        let d = linalg::distance(&s.x, center);
        if (d - delta).abs() <= BOUNDARY_TOL * delta {
            if boundary.len() < n_b {
                boundary.push(s.clone());
            }
        } else if d < delta * (1.0 - BOUNDARY_TOL) && interior.len() < n_w {
            interior.push(s.clone());
        }
    }
    let mut halton = HaltonBall::new(center, delta, seed);
    while interior.len() < n_w {
        let y = halton.next_point();
        let f = ev.eval(&y)?;
        interior.push(Sample { x: y, f });
    }
    let mut rng = rng_from_seed(seed ^ 0xB0B0_B0B0);
    while boundary.len() < n_b {
        let y = random_sphere_point(&mut rng, center, delta);
        let f = ev.eval(&y)?;
        boundary.push(Sample { x: y, f });
    }
    Ok(SampledSets {
        center: center.to_vec(),
        delta,
        interior,
        boundary,
    })
}

fn group_mse(net: &FeedForwardNet, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| (net.value(&s.x) - s.f).powi(2)).sum::<f64>() / samples.len() as f64
}

/// Mean squared error over the interior plus the mean over the boundary.
pub fn loss_mse_lb(net: &FeedForwardNet, sets: &SampledSets) -> f64 {
    group_mse(net, &sets.interior) + group_mse(net, &sets.boundary)
}

/// Smooth step-length penalty: zero inside the trust region and
/// `r(e^{r−Δ} − 1) − r²/2 + Δ²/2` for `r = ‖s‖ > Δ`. Returns the value and
/// the derivative in `r`.
pub fn penalty_delta(r: f64, delta: f64) -> (f64, f64) {
    if r <= delta {
        return (0.0, 0.0);
    }
    let e = (r - delta).exp();
    (r * (e - 1.0) - 0.5 * r * r + 0.5 * delta * delta, e - 1.0 + r * e - r)
}

/// Which child loss drives the step search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChildLoss {
    /// Optimality conditions of the net model plus the agreement target.
    Kkt,
    /// Zero gradient, Hessian minor targets and the agreement target.
    Stationary,
    Bntr,
    #[default]
    BntrStar,
}

impl fmt::Display for ChildLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChildLoss::Kkt => "ls",
            ChildLoss::Stationary => "lprime",
            ChildLoss::Bntr => "lbntr",
            ChildLoss::BntrStar => "lbntr_star",
        })
    }
}

impl FromStr for ChildLoss {
    type Err = TrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ls" => Ok(ChildLoss::Kkt),
            "lprime" => Ok(ChildLoss::Stationary),
            "lbntr" => Ok(ChildLoss::Bntr),
            "lbntr_star" => Ok(ChildLoss::BntrStar),
            _ => Err(TrError::Config(format!("unknown child loss {s:?}"))),
        }
    }
}

/// Weights and targets of the child losses.
///
/// `penalty`, `cauchy`, `local` and `agreement` weigh the four terms of the
/// starred loss; the unstarred one uses `penalty`, `cauchy` and `agreement`
/// for its step-length, decrease and `|ρ − η″|` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackboxLossWeights {
    pub penalty: f64,
    pub cauchy: f64,
    pub local: f64,
    pub agreement: f64,
    /// Weight of `|λ_min − c|` inside the local term.
    pub local_eigen: f64,
    /// Weight of the mean squared partials inside the local term.
    pub local_gradient: f64,
    pub beta_p: f64,
    pub beta_pp: f64,
    pub eta_pp: f64,
    pub eta3: f64,
    /// Target `c` for the smallest Hessian eigenvalue.
    pub eigen_target: f64,
    /// Targets for the leading principal minors; missing entries are 0.
    pub minor_targets: Vec<f64>,
    pub kkt_stationarity: f64,
    pub kkt_complementarity: f64,
    pub kkt_curvature: f64,
    pub shifted_target: f64,
    /// Weight of the optimality-condition loss in the combined `L`.
    pub combined_kkt: f64,
    /// Weight of the agreement term in the combined `L`.
    pub combined_agreement: f64,
}

impl Default for BlackboxLossWeights {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            cauchy: 0.0,
            local: 0.1,
            agreement: 0.1,
            local_eigen: 0.0,
            local_gradient: 1.0,
            beta_p: 1e-4,
            beta_pp: 0.0,
            eta_pp: 1.0,
            eta3: 1.0,
            eigen_target: 0.0,
            minor_targets: Vec::new(),
            kkt_stationarity: 1.0,
            kkt_complementarity: 1.0,
            kkt_curvature: 0.0,
            shifted_target: 0.0,
            combined_kkt: 1.0,
            combined_agreement: 0.1,
        }
    }
}

impl BlackboxLossWeights {
    pub fn validate(&self) -> Result<(), TrError> {
        let weights = [
            self.penalty,
            self.cauchy,
            self.local,
            self.agreement,
            self.local_eigen,
            self.local_gradient,
            self.beta_pp,
            self.eta_pp,
            self.kkt_stationarity,
            self.kkt_complementarity,
            self.kkt_curvature,
            self.shifted_target,
            self.combined_kkt,
            self.combined_agreement,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(TrError::Config("black-box loss weights must be nonnegative".into()));
        }
        if !(self.beta_p > 0.0) {
            return Err(TrError::Config("beta_p must be positive".into()));
        }
        if !(self.eta3 >= 1.0) {
            return Err(TrError::Config("eta3 must be at least 1".into()));
        }
        Ok(())
    }
}

/// Step weights and the multiplier `w* = u²`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub step: Vec<f64>,
    pub multiplier_root: f64,
}

impl StepState {
    pub fn new(step: Vec<f64>, multiplier: f64) -> Self {
        Self {
            step,
            multiplier_root: multiplier.max(0.0).sqrt(),
        }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier_root * self.multiplier_root
    }
}

/// Child-loss terms at one step. For the optimality-condition loss
/// `local` holds `L_s`; for the stationary loss it holds `L′_s`. The
/// `agreement` slot holds whichever agreement term the loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChildTerms {
    pub delta: f64,
    pub cauchy: f64,
    pub local: f64,
    pub agreement: f64,
    pub total: f64,
    pub rho: f64,
}

/// How `ρ` is obtained inside the loss.
#[derive(Debug, Clone, Copy)]
enum Agreement {
    /// A true ratio, constant in `s`.
    Known(f64),
    /// `f̃(s) = m(s) + e` with a frozen model error, which gives
    /// `ρ = 1 + c/D(s)` for the model decrease `D`.
    Frozen(f64),
}

impl Agreement {
    fn rho(self, decrease: f64, g: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Agreement::Known(r) => (r, vec![0.0; g.len()]),
            Agreement::Frozen(c) => {
                if decrease.abs() < 1e-14 {
                    (1.0, vec![0.0; g.len()])
                } else {
                    let k = c / (decrease * decrease);
                    (1.0 + c / decrease, g.iter().map(|v| k * v).collect())
                }
            }
        }
    }
}

struct ModelPoint {
    m: f64,
    g: Vec<f64>,
    h: SymMatrix,
}

fn min_eigenvalue(h: &SymMatrix) -> f64 {
    linalg::smallest_eigenpair(h).map(|p| p.0).unwrap_or(f64::NAN)
}

/// Net model seen from `center` in units of `length` and `fscale`.
struct Frame<'a> {
    net: &'a FeedForwardNet,
    center: &'a [f64],
    length: f64,
    fscale: f64,
    /// Trust-region radius in this frame.
    delta: f64,
    m0: f64,
}

impl<'a> Frame<'a> {
    fn new(net: &'a FeedForwardNet, center: &'a [f64], length: f64, fscale: f64, delta: f64) -> Self {
        let m0 = net.value(center) / fscale;
        Self {
            net,
            center,
            length,
            fscale,
            delta,
            m0,
        }
    }

    fn global(&self, s: &[f64]) -> Vec<f64> {
        self.center.iter().zip(s).map(|(c, v)| c + self.length * v).collect()
    }

    fn at(&self, s: &[f64]) -> ModelPoint {
        let d = self.net.input_derivatives(&self.global(s));
        let gs = self.length / self.fscale;
        ModelPoint {
            m: d.value / self.fscale,
            g: d.gradient.iter().map(|v| v * gs).collect(),
            h: d.hessian.scaled(gs * self.length),
        }
    }

    /// Central differences in `s` of a term that depends on the Hessian.
    fn hessian_term_gradient(&self, s: &[f64], term: &dyn Fn(&SymMatrix) -> f64) -> Vec<f64> {
        let h = 1e-5 * self.delta.max(1e-12);
        (0..s.len())
            .map(|i| {
                let mut sp = s.to_vec();
                let mut sm = s.to_vec();
                sp[i] += h;
                sm[i] -= h;
                (term(&self.at(&sp).h) - term(&self.at(&sm).h)) / (2.0 * h)
            })
            .collect()
    }

    /// Child-loss terms at `(s, u)` and, when asked, the gradient in `s`
    /// and `u`.
    fn evaluate(
        &self,
        kind: ChildLoss,
        lw: &BlackboxLossWeights,
        s: &[f64],
        u: f64,
        agreement: Agreement,
        want_grad: bool,
    ) -> (ChildTerms, Vec<f64>, f64) {
        let n = s.len();
        let p = self.at(s);
        let r = norm(s);
        let decrease = self.m0 - p.m;
        let (rho, drho) = agreement.rho(decrease, &p.g);
        let mut grad = vec![0.0; n];
        let mut gu = 0.0;
        let mut t = ChildTerms {
            rho,
            ..Default::default()
        };
        let add = |grad: &mut Vec<f64>, k: f64, v: &[f64]| {
            grad.iter_mut().zip(v).for_each(|(a, b)| *a += k * b);
        };
        let mean_sq = dot(&p.g, &p.g) / n as f64;
        // d/ds of the mean squared partials.
        let mean_sq_grad = || linalg::scale(&p.h.mul_vec(&p.g), 2.0 / n as f64);
        match kind {
            ChildLoss::Kkt => {
                let w = u * u;
                let res: Vec<f64> = p.g.iter().zip(s).map(|(a, b)| a + w * b).collect();
                let comp = w * (self.delta - r);
                let shifted = min_eigenvalue(&p.h) + w - lw.shifted_target;
                let ls = lw.kkt_stationarity * dot(&res, &res)
                    + lw.kkt_complementarity * comp * comp
                    + lw.kkt_curvature * shifted * shifted;
                let la = (rho - lw.eta3).powi(2);
                t.local = ls;
                t.agreement = la;
                t.total = lw.combined_kkt * ls + lw.combined_agreement * la;
                if want_grad {
                    let a = lw.combined_kkt;
                    let hr = p.h.mul_vec(&res);
                    let shifted_res: Vec<f64> = hr.iter().zip(&res).map(|(x, y)| x + w * y).collect();
                    add(&mut grad, 2.0 * a * lw.kkt_stationarity, &shifted_res);
                    gu += a * lw.kkt_stationarity * 2.0 * dot(&res, s) * 2.0 * u;
                    if r > 0.0 {
                        add(&mut grad, -2.0 * a * lw.kkt_complementarity * comp * w / r, s);
                    }
                    gu += a * lw.kkt_complementarity * 2.0 * comp * (self.delta - r) * 2.0 * u;
                    if lw.kkt_curvature > 0.0 {
                        let target = lw.shifted_target - w;
                        let term = |h: &SymMatrix| (min_eigenvalue(h) - target).powi(2);
                        add(&mut grad, a * lw.kkt_curvature, &self.hessian_term_gradient(s, &term));
                        gu += a * lw.kkt_curvature * 2.0 * shifted * 2.0 * u;
                    }
                    add(&mut grad, lw.combined_agreement * 2.0 * (rho - lw.eta3), &drho);
                }
            }
            ChildLoss::Stationary => {
                let targets = lw.minor_targets.clone();
                let minor_term = move |h: &SymMatrix| {
                    let minors = leading_principal_minors(h).unwrap_or_default();
                    let k = minors.len().max(1) as f64;
                    minors
                        .iter()
                        .enumerate()
                        .map(|(i, m)| (m - targets.get(i).copied().unwrap_or(0.0)).powi(2))
                        .sum::<f64>()
                        / k
                };
                let la = (rho - lw.eta3).powi(2);
                t.local = mean_sq + minor_term(&p.h);
                t.agreement = la;
                t.total = t.local + la;
                if want_grad {
                    add(&mut grad, 1.0, &mean_sq_grad());
                    add(&mut grad, 1.0, &self.hessian_term_gradient(s, &minor_term));
                    add(&mut grad, 2.0 * (rho - lw.eta3), &drho);
                }
            }
            ChildLoss::Bntr | ChildLoss::BntrStar => {
                let (pen, dpen) = penalty_delta(r, self.delta);
                let q = -decrease + lw.beta_p * r * r - lw.beta_pp;
                t.delta = pen;
                t.cauchy = q.abs();
                let gap = rho - lw.eta_pp;
                if kind == ChildLoss::Bntr {
                    t.agreement = gap.abs();
                    t.total = lw.penalty * pen + lw.cauchy * t.cauchy + lw.agreement * t.agreement;
                } else {
                    let eig = min_eigenvalue(&p.h);
                    t.local = lw.local_eigen * (eig - lw.eigen_target).abs() + lw.local_gradient * mean_sq;
                    t.agreement = gap.clamp(-20.0, 20.0).cosh();
                    t.total = lw.penalty * pen + lw.cauchy * t.cauchy + lw.local * t.local + lw.agreement * t.agreement;
                }
                if want_grad {
                    if r > 0.0 {
                        add(&mut grad, lw.penalty * dpen / r, s);
                    }
                    let dq: Vec<f64> = p.g.iter().zip(s).map(|(g, v)| g + 2.0 * lw.beta_p * v).collect();
                    add(&mut grad, lw.cauchy * q.signum(), &dq);
                    if kind == ChildLoss::Bntr {
                        add(&mut grad, lw.agreement * gap.signum(), &drho);
                    } else {
                        add(&mut grad, lw.local * lw.local_gradient, &mean_sq_grad());
                        if lw.local * lw.local_eigen > 0.0 {
                            let c = lw.eigen_target;
                            let term = move |h: &SymMatrix| (min_eigenvalue(h) - c).abs();
                            add(&mut grad, lw.local * lw.local_eigen, &self.hessian_term_gradient(s, &term));
                        }
                        if gap.abs() < 20.0 {
                            add(&mut grad, lw.agreement * gap.sinh(), &drho);
                        }
                    }
                }
            }
        }
        (t, grad, gu)
    }
}

/// True `ρ` of `step` for the net model.
fn true_agreement(
    ev: &mut Evaluator,
    f_center: f64,
    net: &FeedForwardNet,
    center: &[f64],
    step: &[f64],
) -> Result<f64, TrError> {
    let trial = linalg::add(center, step);
    let f_trial = ev.eval(&trial)?;
    Ok(agreement_ratio(f_center, f_trial, net.value(center), net.value(&trial))?)
}

fn literal_terms(
    kind: ChildLoss,
    net: &FeedForwardNet,
    center: &[f64],
    state: &StepState,
    delta: f64,
    lw: &BlackboxLossWeights,
    rho: f64,
) -> ChildTerms {
    let frame = Frame::new(net, center, 1.0, 1.0, delta);
    frame
        .evaluate(kind, lw, &state.step, state.multiplier_root, Agreement::Known(rho), false)
        .0
}

/// `ζ₁‖∇m(x+s) + w*s‖² + ζ₂[w*(Δ − ‖s‖)]² + ζ₃(λ̂₁ − c̃)²` with `λ̂₁` the
/// smallest eigenvalue of `∇²m(x+s) + w*I`.
pub fn loss_ls(net: &FeedForwardNet, center: &[f64], state: &StepState, delta: f64, lw: &BlackboxLossWeights) -> f64 {
    literal_terms(ChildLoss::Kkt, net, center, state, delta, lw, lw.eta3).local
}

/// `(ρ(s) − η₃)²` with one true evaluation at `x + s`.
pub fn loss_la(
    ev: &mut Evaluator,
    f_center: f64,
    net: &FeedForwardNet,
    center: &[f64],
    step: &[f64],
    eta3: f64,
) -> Result<f64, TrError> {
    Ok((true_agreement(ev, f_center, net, center, step)? - eta3).powi(2))
}

/// `L′_s + L′_a`: mean squared partials at `x + s`, mean squared misfit of
/// the leading principal minors, and `(ρ − η₃)²`.
pub fn loss_lprime(
    ev: &mut Evaluator,
    f_center: f64,
    net: &FeedForwardNet,
    center: &[f64],
    state: &StepState,
    lw: &BlackboxLossWeights,
) -> Result<f64, TrError> {
    let rho = true_agreement(ev, f_center, net, center, &state.step)?;
    Ok(literal_terms(ChildLoss::Stationary, net, center, state, 1.0, lw, rho).total)
}

/// `γ₁L_Δ + γ₂|m(x+s) − m(x) + β′‖s‖² − β″| + γ₃|ρ − η″|`.
pub fn loss_lbntr(
    ev: &mut Evaluator,
    f_center: f64,
    net: &FeedForwardNet,
    center: &[f64],
    state: &StepState,
    delta: f64,
    lw: &BlackboxLossWeights,
) -> Result<f64, TrError> {
    let rho = true_agreement(ev, f_center, net, center, &state.step)?;
    Ok(literal_terms(ChildLoss::Bntr, net, center, state, delta, lw, rho).total)
}

/// Terms of `γ₁L_Δ + γ₂L_Cauchy + γ₃L_local + γ₄cosh(ρ − η″)`.
pub fn loss_lbntr_star(
    ev: &mut Evaluator,
    f_center: f64,
    net: &FeedForwardNet,
    center: &[f64],
    state: &StepState,
    delta: f64,
    lw: &BlackboxLossWeights,
) -> Result<ChildTerms, TrError> {
    let rho = true_agreement(ev, f_center, net, center, &state.step)?;
    Ok(literal_terms(ChildLoss::BntrStar, net, center, state, delta, lw, rho))
}

/// Engine settings beyond the shared trust-region configuration. The
/// shared `gamma1` shrinks and `gamma2` expands the radius; `gamma_moderate`
/// scales it after a moderately successful step.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackboxSettings {
    pub loss: BlackboxLossWeights,
    pub child: ChildLoss,
    pub train: TrainConfig,
    /// Hidden width; `max(8, 4n)` when unset.
    pub hidden: Option<usize>,
    pub bias: bool,
    /// Interior sample count; `(n+1)(n+2)/2` when unset.
    pub n_w: Option<usize>,
    /// Boundary sample count; `2n` when unset.
    pub n_b: Option<usize>,
    pub gamma_moderate: f64,
    pub step_starts: usize,
    pub step_iters: usize,
    pub step_learning_rate: f64,
    /// Descent steps between true evaluations that refresh `ρ`.
    pub refresh_every: usize,
    /// True evaluations allowed per step search for refreshing `ρ`.
    pub max_refreshes: usize,
    /// Accept a step beyond the boundary that lands on a model minimizer
    /// with `ρ ≥ η₂`, resetting the radius to `relax_factor·‖s‖`.
    pub relax_boundary: bool,
    pub relax_factor: f64,
    /// The Clarke proxy is checked on shrinking iterations once `Δ` falls
    /// below this value (then below each further tenth of it).
    pub clarke_delta: f64,
    pub clarke_dirs: usize,
    pub seed: u64,
}

impl Default for BlackboxSettings {
    fn default() -> Self {
        Self {
            loss: BlackboxLossWeights::default(),
            child: ChildLoss::default(),
            train: TrainConfig {
                epochs: 1500,
                learning_rate: 0.01,
                seed: 0,
                split_fraction: 0.8,
                optimizer: Optimizer::Adam,
                patience: Some(300),
            },
            hidden: None,
            bias: true,
            n_w: None,
            n_b: None,
            gamma_moderate: 1.0,
            step_starts: 3,
            step_iters: 200,
            step_learning_rate: 0.02,
            refresh_every: 25,
            max_refreshes: 2,
            relax_boundary: false,
            relax_factor: 1.0,
            clarke_delta: 1e-3,
            clarke_dirs: 8,
            seed: 0,
        }
    }
}

impl BlackboxSettings {
    pub fn validate(&self, cfg: &TrConfig) -> Result<(), TrError> {
        self.loss.validate()?;
        if !(0.0 < cfg.gamma1 && cfg.gamma1 < self.gamma_moderate && self.gamma_moderate <= 1.0 && 1.0 <= cfg.gamma2) {
            return Err(TrError::Config("need 0 < gamma1 < gamma_moderate <= 1 <= gamma2".into()));
        }
        if !(self.train.split_fraction > 0.0 && self.train.split_fraction <= 1.0) {
            return Err(TrError::Config("split_fraction must lie in (0, 1]".into()));
        }
        if self.step_starts == 0 || self.refresh_every == 0 || self.clarke_dirs < 8 {
            return Err(TrError::Config(
                "step_starts and refresh_every must be positive and clarke_dirs at least 8".into(),
            ));
        }
        if self.n_w == Some(0) {
            return Err(TrError::Config("n_w must be at least 1".into()));
        }
        Ok(())
    }

    fn hidden_width(&self, n: usize) -> usize {
        self.hidden.unwrap_or((4 * n).max(8))
    }
}

/// Diagnostics of one model fit and step search.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStepDiagnostics {
    pub train_mse: f64,
    pub test_mse: f64,
    /// Sample indices (interior first, then boundary) held out for testing.
    pub test_indices: Vec<usize>,
    /// Sample indices that entered a training gradient.
    pub gradient_indices: BTreeSet<usize>,
    pub terms: ChildTerms,
    pub model_decrease: f64,
    /// Points evaluated to refresh `ρ` during the search.
    pub refreshed: Vec<Sample>,
}

impl ModelStepDiagnostics {
    /// Test indices that reached a training gradient.
    pub fn leaked(&self) -> Vec<usize> {
        self.test_indices
            .iter()
            .copied()
            .filter(|i| self.gradient_indices.contains(i))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelStep {
    pub net: FeedForwardNet,
    /// Step inside the trust region.
    pub step: Vec<f64>,
    pub multiplier: f64,
    /// Step beyond the boundary at a model minimizer, when relaxation is on.
    pub relaxed_step: Option<Vec<f64>>,
    pub diagnostics: ModelStepDiagnostics,
}

struct FittedNet {
    net: FeedForwardNet,
    train_mse: f64,
    test_mse: f64,
    test_indices: Vec<usize>,
    gradient_indices: BTreeSet<usize>,
}

fn as_refs(groups: &[Vec<IndexedSample>]) -> Vec<Vec<&IndexedSample>> {
    groups.iter().map(|v| v.iter().collect()).collect()
}

fn fit_model(sets: &SampledSets, settings: &BlackboxSettings, seed: u64) -> Result<FittedNet, TrError> {
    let n = sets.center.len();
    let n_s = sets.interior.len();
    let indexed: Vec<IndexedSample> = sets
        .all()
        .enumerate()
        .map(|(index, s)| IndexedSample {
            index,
            x: s.x.clone(),
            y: s.f,
        })
        .collect();
    let mut rng = rng_from_seed(seed);
    let frac = settings.train.split_fraction;
    let (s_tr, s_te) = split_indices(n_s, frac, &mut rng);
    let (mut t_tr, mut t_te) = split_indices(sets.boundary.len(), frac, &mut rng);
    t_tr.iter_mut().chain(t_te.iter_mut()).for_each(|i| *i += n_s);

    // Output standardization uses training targets only.
    let train_y: Vec<f64> = s_tr.iter().chain(&t_tr).map(|&i| indexed[i].y).collect();
    let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
    let var = train_y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / train_y.len() as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let unit: Vec<IndexedSample> = indexed
        .iter()
        .map(|s| IndexedSample {
            y: (s.y - mean) / scale,
            ..s.clone()
        })
        .collect();
    let pick = |idx: &[usize], from: &[IndexedSample]| -> Vec<IndexedSample> { idx.iter().map(|&i| from[i].clone()).collect() };
    let groups = [pick(&s_tr, &unit), pick(&t_tr, &unit)];
    let tests = [pick(&s_te, &unit), pick(&t_te, &unit)];

    let sizes = [n, settings.hidden_width(n), 1];
    let mut net = FeedForwardNet::random(&sizes, settings.bias, seed.wrapping_add(1));
    net.set_input_map(sets.center.clone(), sets.delta);
    let cfg = TrainConfig {
        seed,
        ..settings.train.clone()
    };
    let (fitted, _, _, touched, _) =
        fit_balanced(net.clone(), &as_refs(&groups), &as_refs(&tests), &cfg).map_err(|e| TrError::Training(e.to_string()))?;
    net.set_params(&fitted.params());
    net.set_output_map(mean, if var > 0.0 { scale } else { 0.0 });

    let raw = |idx: &[usize]| -> Vec<IndexedSample> { idx.iter().map(|&i| indexed[i].clone()).collect() };
    let train_raw = [raw(&s_tr), raw(&t_tr)];
    let test_raw = [raw(&s_te), raw(&t_te)];
    let mut test_indices: Vec<usize> = s_te.iter().chain(&t_te).copied().collect();
    test_indices.sort_unstable();
    Ok(FittedNet {
        train_mse: balanced_mse(&net, &as_refs(&train_raw)),
        test_mse: balanced_mse(&net, &as_refs(&test_raw)),
        net,
        test_indices,
        gradient_indices: touched,
    })
}

struct Candidate {
    z: Vec<f64>,
    u: f64,
    raw: Vec<f64>,
    terms: ChildTerms,
    decrease: f64,
    gate: bool,
}

fn project_unit(z: &[f64]) -> Vec<f64> {
    let r = norm(z);
    if r > 1.0 {
        linalg::scale(z, 1.0 / r)
    } else {
        z.to_vec()
    }
}

/// Fits the net to the sampled sets and searches for the step.
///
/// The samples of each set are split independently into training and test
/// parts; the net minimizes the balanced MSE on the training parts and is
/// early-stopped on the test parts. The step search runs projected-free
/// Adam on the child loss from several starts (the trust-region step of the
/// net's Taylor quadratic, the steepest-descent boundary point, random
/// points), with `ρ` computed from a frozen model error that is refreshed by
/// a true evaluation every `refresh_every` steps. Starts that satisfy the
/// decrease gate `m(x) − m(x+s) ≥ β′‖s‖² − β″` win, then the lowest loss,
/// then the largest model decrease.
pub fn model_and_step(
    ev: &mut Evaluator,
    sets: &SampledSets,
    f_center: f64,
    settings: &BlackboxSettings,
    seed: u64,
) -> Result<ModelStep, TrError> {
    if sets.interior.len() < 2 {
        return Err(TrError::Training("need at least two interior samples".into()));
    }
    let n = sets.center.len();
    let fit = fit_model(sets, settings, seed)?;
    let net = fit.net;
    let delta = sets.delta;
    let om = net.output_map();
    let fscale = if om.scale > 0.0 { om.scale } else { 1.0 };
    let frame = Frame::new(&net, &sets.center, delta, fscale, 1.0);
    let lw = &settings.loss;
    let m_x = net.value(&sets.center);

    let p0 = frame.at(&vec![0.0; n]);
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::new();
    if let Ok(sol) = solve_trust_region(&p0.g, &p0.h, 1.0) {
        starts.push((sol.step, sol.multiplier.sqrt()));
    }
    let gn = norm(&p0.g);
    if gn > 0.0 {
        starts.push((linalg::scale(&p0.g, -1.0 / gn), gn.sqrt()));
    }
    let mut rng = rng_from_seed(seed ^ 0x5EED_57E9);
    while starts.len() < settings.step_starts {
        let z = random_ball_point(&mut rng, &vec![0.0; n], 1.0);
        starts.push((z, 0.5));
    }
    starts.truncate(settings.step_starts.max(1));

    let mut frozen = 0.0;
    let mut refreshed: Vec<Sample> = Vec::new();
    let mut refresh_open = settings.max_refreshes > 0;
    let mut candidates = Vec::new();
    for (z0, u0) in starts {
        let mut th = z0;
        th.push(u0);
        let np = n + 1;
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let mut m1 = vec![0.0; np];
        let mut m2 = vec![0.0; np];
        for k in 1..=settings.step_iters {
            if refresh_open && k % settings.refresh_every == 0 {
                let z = project_unit(&th[..n]);
                let y = frame.global(&z);
                match ev.eval(&y) {
                    Ok(f_y) => {
                        frozen = (f_center - f_y) / fscale - (frame.m0 - frame.at(&z).m);
                        refreshed.push(Sample { x: y, f: f_y });
                        refresh_open = refreshed.len() < settings.max_refreshes;
                    }
                    Err(EvalError::BudgetExceeded { .. }) => refresh_open = false,
                    Err(e) => return Err(e.into()),
                }
            }
            let (t, gz, gu) = frame.evaluate(settings.child, lw, &th[..n], th[n], Agreement::Frozen(frozen), true);
            if !t.total.is_finite() || gz.iter().any(|v| !v.is_finite()) {
                break;
            }
            let mut g = gz;
            g.push(gu);
            if norm(&g) < 1e-12 {
                break;
            }
            let c1 = 1.0 - b1.powi(k as i32);
            let c2 = 1.0 - b2.powi(k as i32);
            for i in 0..np {
                m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
                th[i] -= settings.step_learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            }
        }
        let raw = th[..n].to_vec();
        let z = project_unit(&raw);
        let (terms, _, _) = frame.evaluate(settings.child, lw, &z, th[n], Agreement::Frozen(frozen), false);
        let decrease = (frame.m0 - frame.at(&z).m) * fscale;
        let s_norm = norm(&z) * delta;
        candidates.push(Candidate {
            gate: decrease > 0.0 && decrease >= lw.beta_p * s_norm * s_norm - lw.beta_pp,
            z,
            u: th[n],
            raw,
            terms,
            decrease,
        });
    }
    let any_gate = candidates.iter().any(|c| c.gate);
    let pool: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| (c.gate || !any_gate) && c.terms.total.is_finite())
        .collect();
    let min_loss = pool.iter().map(|c| c.terms.total).fold(f64::INFINITY, f64::min);
    let best = pool
        .into_iter()
        .filter(|c| c.terms.total <= min_loss + 1e-3 * min_loss.abs() + 1e-12)
        .max_by(|a, b| a.decrease.total_cmp(&b.decrease))
        .ok_or_else(|| TrError::Training("step search produced no finite candidate".into()))?;

    let relaxed_step = if settings.relax_boundary && norm(&best.raw) > 1.0 {
        let p = frame.at(&best.raw);
        let at_min = dot(&p.g, &p.g) / n as f64 <= 1e-8 && min_eigenvalue(&p.h) > 0.0;
        at_min.then(|| linalg::scale(&best.raw, delta))
    } else {
        None
    };
    let _ = m_x;
    Ok(ModelStep {
        step: linalg::scale(&best.z, delta),
        multiplier: best.u * best.u * fscale / (delta * delta),
        relaxed_step,
        diagnostics: ModelStepDiagnostics {
            train_mse: fit.train_mse,
            test_mse: fit.test_mse,
            test_indices: fit.test_indices,
            gradient_indices: fit.gradient_indices,
            terms: best.terms,
            model_decrease: best.decrease,
            refreshed,
        },
        net,
    })
}

fn clarke_with(
    eval: &mut dyn FnMut(&[f64]) -> Result<f64, EvalError>,
    x: &[f64],
    radius: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let fx = eval(x)?;
    let mut rng = rng_from_seed(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n_dirs {
        let d = random_unit_vector(&mut rng, x.len());
        let mut worst = f64::NEG_INFINITY;
        for alpha in [radius, radius / 4.0, radius / 16.0] {
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            worst = worst.max((eval(&y)? - fx) / alpha);
        }
        best = best.min(worst);
    }
    Ok(best)
}

/// Sampled surrogate of the smallest Clarke directional derivative: the
/// minimum over random unit directions of the largest difference quotient
/// at the scales `radius`, `radius/4` and `radius/16`.
pub fn clarke_stationarity_proxy(f: Objective, x: &[f64], radius: f64, n_dirs: usize, seed: u64) -> f64 {
    let mut eval = |y: &[f64]| Ok(f(y));
    clarke_with(&mut eval, x, radius, n_dirs, seed).expect("plain evaluation cannot fail")
}

/// Run result plus the holdout audit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackboxOutcome {
    pub result: OptimizationResult,
    /// Test samples that reached a training gradient, summed over iterations.
    pub holdout_leaks: usize,
    pub fits: usize,
}

fn remember(pool: &mut Vec<Sample>, s: &Sample) {
    if !pool.iter().any(|p| p.x == s.x) {
        pool.push(s.clone());
    }
}

/// Largest poised quadratic-sized subset of the samples as a blocked set.
fn poised_subset(sets: &SampledSets) -> BlockedPointSet {
    let all: Vec<&Sample> = sets.all().collect();
    let pts: Vec<Vec<f64>> = all.iter().map(|s| s.x.clone()).collect();
    let chosen = select_poised_subset(&pts, &sets.center, sets.delta, 1e-8);
    let mut set = BlockedPointSet::new(sets.center.len());
    for (b, idx) in chosen.iter().enumerate() {
        for &i in idx {
            set.push(b, all[i].x.clone(), Some(all[i].f)).expect("subset fits the block sizes");
        }
    }
    set
}

struct State<'a> {
    ev: Evaluator<'a>,
    trace: Vec<TraceRecord>,
    x: Vec<f64>,
    fx: f64,
    delta: f64,
    iter: usize,
    violations: usize,
    leaks: usize,
    fits: usize,
}

impl State<'_> {
    fn record(&self, update: UpdateKind) -> TraceRecord {
        TraceRecord {
            iter: self.iter,
            evals: self.ev.count(),
            f: self.fx,
            delta: self.delta,
            rho: None,
            step_norm: None,
            model_decrease: None,
            accepted: false,
            update,
            kkt: None,
            neural: NeuralDiagnostics::default(),
            decrease_ok: None,
            x: self.x.clone(),
        }
    }

    fn finish(mut self, by: TerminatedBy) -> BlackboxOutcome {
        let last = self.record(UpdateKind::Final);
        self.trace.push(last);
        BlackboxOutcome {
            result: OptimizationResult {
                x: self.x,
                f: self.fx,
                evals: self.ev.count(),
                iters: self.iter,
                terminated_by: by,
                trace: self.trace,
                decrease_violations: self.violations,
            },
            holdout_leaks: self.leaks,
            fits: self.fits,
        }
    }
}

/// The trust-region method with a black-box neural model.
///
/// Per iteration: sample the sets, fit the net and search the step, then
/// test `ρ`. A very successful step multiplies `Δ` by `gamma2`, a
/// moderately successful one by `gamma_moderate`; both swap the new point
/// in. Otherwise an inadequate sample geometry is repaired, or `Δ` shrinks
/// by `gamma1` and the interior set grows by a quarter of its initial
/// size. Steps failing the decrease gate are rejected without evaluating
/// `f`. Besides the shared stopping rules, the run stops when the Clarke
/// proxy at radius `Δ` is at least `−eps_station`.
pub fn run_algorithm2(
    f: Objective,
    x0: &[f64],
    cfg: &TrConfig,
    settings: &BlackboxSettings,
) -> Result<BlackboxOutcome, TrError> {
    cfg.validate()?;
    settings.validate(cfg)?;
    let n = x0.len();
    let n_w0 = settings.n_w.unwrap_or((n + 1) * (n + 2) / 2);
    let n_b = settings.n_b.unwrap_or(2 * n);
    let lw = &settings.loss;
    let mut st = State {
        ev: Evaluator::new(f, cfg.budget),
        trace: Vec::new(),
        x: x0.to_vec(),
        fx: f64::NAN,
        delta: cfg.delta0,
        iter: 0,
        violations: 0,
        leaks: 0,
        fits: 0,
    };
    macro_rules! eval_or_stop {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(EvalError::BudgetExceeded { .. }) => return Ok(st.finish(TerminatedBy::Budget)),
                Err(EvalError::ObjectiveFailure { point }) => return Err(TrError::ObjectiveFailure { point }),
            }
        };
    }
    st.fx = eval_or_stop!(st.ev.eval(x0));
    let mut pool = vec![Sample {
        x: x0.to_vec(),
        f: st.fx,
    }];
    let mut n_w = n_w0;
    let mut clarke_gate = settings.clarke_delta;

    loop {
        if st.iter >= cfg.max_iters {
            return Ok(st.finish(TerminatedBy::MaxIters));
        }
        if st.delta < cfg.eps_delta {
            return Ok(st.finish(TerminatedBy::Delta));
        }
        st.iter += 1;
        let seed = settings.seed ^ cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (st.iter as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let sets = eval_or_stop!(sample_sets(&mut st.ev, &st.x, st.delta, n_w, n_b, &pool, seed));
        for s in sets.all() {
            remember(&mut pool, s);
        }
        let subset = poised_subset(&sets);
        let adequate = subset.len() == (n + 1) * (n + 2) / 2
            && assess_geometry(&subset, &st.x, st.delta, cfg.adequacy_probes)
                .map(|g| g.adequacy.adequate)
                .unwrap_or(false);

        let ms = match model_and_step(&mut st.ev, &sets, st.fx, settings, seed) {
            Ok(ms) => ms,
            Err(TrError::Training(_)) => {
                st.delta *= cfg.gamma1;
                let rec = st.record(UpdateKind::Shrink);
                st.trace.push(rec);
                continue;
            }
            Err(TrError::Budget { .. }) => return Ok(st.finish(TerminatedBy::Budget)),
            Err(e) => return Err(e),
        };
        st.fits += 1;
        st.leaks += ms.diagnostics.leaked().len();
        for s in &ms.diagnostics.refreshed {
            remember(&mut pool, s);
        }
        let mut neural = NeuralDiagnostics {
            train_mse: Some(ms.diagnostics.train_mse),
            test_mse: Some(ms.diagnostics.test_mse),
            loss_delta: Some(ms.diagnostics.terms.delta),
            loss_cauchy: Some(ms.diagnostics.terms.cauchy),
            loss_local: Some(ms.diagnostics.terms.local),
            loss_agreement: Some(ms.diagnostics.terms.agreement),
            clarke: None,
            n_w: Some(sets.n_w()),
            n_b: Some(sets.n_b()),
        };
        if norm(&ms.net.input_gradient(&st.x)) <= cfg.eps_station && adequate {
            return Ok(st.finish(TerminatedBy::Stationarity));
        }

        let m_x = ms.net.value(&st.x);
        let gate = |s: &[f64], decrease: f64| {
            let r = norm(s);
            decrease > 0.0 && decrease >= lw.beta_p * r * r - lw.beta_pp
        };
        let mut accepted: Option<(Vec<f64>, f64, f64, f64, f64)> = None;
        let mut tried: Option<(f64, f64, f64)> = None;
        if let Some(out) = &ms.relaxed_step {
            let trial = linalg::add(&st.x, out);
            let decrease = m_x - ms.net.value(&trial);
            if gate(out, decrease) {
                let f_t = eval_or_stop!(st.ev.eval(&trial));
                remember(&mut pool, &Sample { x: trial.clone(), f: f_t });
                if let Ok(r) = agreement_ratio(st.fx, f_t, m_x, m_x - decrease) {
                    if r >= cfg.eta2 {
                        let dn = settings.relax_factor * norm(out);
                        accepted = Some((trial, f_t, r, decrease, dn));
                    }
                }
            }
        }
        let s = ms.step.clone();
        let sn = norm(&s);
        let decrease = ms.diagnostics.model_decrease;
        if accepted.is_none() && gate(&s, decrease) {
            let trial = linalg::add(&st.x, &s);
            let f_t = eval_or_stop!(st.ev.eval(&trial));
            remember(&mut pool, &Sample { x: trial.clone(), f: f_t });
            if let Ok(r) = agreement_ratio(st.fx, f_t, m_x, m_x - decrease) {
                tried = Some((r, decrease, sn));
                if r >= cfg.eta1 {
                    let factor = if r >= cfg.eta2 { cfg.gamma2 } else { settings.gamma_moderate };
                    accepted = Some((trial, f_t, r, decrease, factor * st.delta));
                }
            }
        }

        let mut rec;
        if let Some((trial, f_t, r, dec, new_delta)) = accepted {
            if subset.len() == (n + 1) * (n + 2) / 2 {
                let out = plan_success_swap(&subset, &st.x, st.delta, &trial);
                let leaving = subset.get(out).x.clone();
                if leaving != st.x {
                    pool.retain(|p| p.x != leaving);
                }
            }
            let step_norm = linalg::distance(&trial, &st.x);
            st.x = trial;
            st.fx = f_t;
            st.delta = new_delta;
            n_w = n_w0;
            rec = st.record(UpdateKind::SuccessSwap);
            rec.accepted = true;
            rec.rho = Some(r);
            rec.step_norm = Some(step_norm);
            rec.model_decrease = Some(dec);
            let ok = dec >= lw.beta_p * step_norm * step_norm - lw.beta_pp;
            if !ok {
                st.violations += 1;
            }
            rec.decrease_ok = Some(ok);
        } else {
            if !adequate && subset.len() == (n + 1) * (n + 2) / 2 {
                match plan_repair(&subset, &st.x, st.delta) {
                    Ok(rep) => {
                        let v = eval_or_stop!(st.ev.eval(&rep.point));
                        let leaving = subset.get(rep.index).x.clone();
                        pool.retain(|p| p.x != leaving);
                        remember(&mut pool, &Sample { x: rep.point, f: v });
                        rec = st.record(UpdateKind::GeometryRepair);
                    }
                    Err(_) => {
                        st.delta *= cfg.gamma1;
                        rec = st.record(UpdateKind::Shrink);
                    }
                }
            } else if !adequate {
                // Too few poised samples: enlarge the interior set.
                n_w = (n_w + n_w0.div_ceil(4)).min(4 * n_w0);
                rec = st.record(UpdateKind::GeometryRepair);
            } else {
                let radius = st.delta;
                if radius <= clarke_gate {
                    clarke_gate *= 0.1;
                    let ev = &mut st.ev;
                    let mut eval = |y: &[f64]| ev.eval(y);
                    let proxy = eval_or_stop!(clarke_with(&mut eval, &st.x, radius, settings.clarke_dirs, seed));
                    neural.clarke = Some(proxy);
                    if proxy >= -cfg.eps_station {
                        let mut last = st.record(UpdateKind::Shrink);
                        last.neural = neural;
                        st.trace.push(last);
                        return Ok(st.finish(TerminatedBy::Stationarity));
                    }
                }
                st.delta *= cfg.gamma1;
                n_w = (n_w + n_w0.div_ceil(4)).min(4 * n_w0);
                rec = st.record(UpdateKind::Shrink);
            }
            if let Some((r, dec, sn)) = tried {
                rec.rho = Some(r);
                rec.model_decrease = Some(dec);
                rec.step_norm = Some(sn);
            } else {
                rec.model_decrease = Some(decrease);
                rec.step_norm = Some(sn);
            }
        }
        rec.neural = neural;
        st.trace.push(rec);
    }
}
