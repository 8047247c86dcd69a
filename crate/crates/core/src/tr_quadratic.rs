//! Trust-region engine whose quadratic model and step are trained together.
//!
//! The trainable weights are the model gradient, the Hessian coefficients,
//! the step and a root of the multiplier. One overall loss couples a data
//! fit over the interpolation set (parent) with the residuals of the
//! subproblem's optimality conditions (child), optionally adding a
//! Cauchy-decrease term. The classical interpolation baseline with an exact
//! subproblem solve lives here as well, sharing the same outer loop.

use rand::Rng;

use crate::eval::{EvalError, Evaluator, Objective};
use crate::interp::BlockedPointSet;
use crate::linalg::{self, norm, sym_eigen, Matrix, SymMatrix};
use crate::newton_model::{interpolate, QuadraticModel};
use crate::sampling::rng_from_seed;
use crate::trs::solve_trust_region;
use crate::trust_region::{
    agreement_ratio, assess_geometry, evaluated_pattern, plan_repair, plan_success_swap, GeometryStatus, KktResiduals,
    NeuralDiagnostics, OptimizationResult, TerminatedBy, TraceRecord, TrConfig, TrError, UpdateKind,
};

/// `(i, j)` with `i ≤ j` in row-major upper-triangle order.
fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Trainable weights of the quadratic engine.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticNtrWeights {
    pub gradient: Vec<f64>,
    /// Coefficients `w_ij`, `i ≤ j`, with `H_ij = w_ij` off the diagonal and
    /// `H_ii = ½ w_ii`.
    pub hessian_coeffs: Vec<f64>,
    pub step: Vec<f64>,
    /// `u` with multiplier `w* = u²`, which keeps `w* ≥ 0` without a constraint.
    pub multiplier_root: f64,
}

impl QuadraticNtrWeights {
    pub fn zeros(n: usize) -> Self {
        Self {
            gradient: vec![0.0; n],
            hessian_coeffs: vec![0.0; n * (n + 1) / 2],
            step: vec![0.0; n],
            multiplier_root: 0.0,
        }
    }

    pub fn from_parts(gradient: &[f64], hessian: &SymMatrix, step: &[f64], multiplier: f64) -> Self {
        let n = gradient.len();
        let hessian_coeffs = upper_pairs(n)
            .into_iter()
            .map(|(i, j)| if i == j { 2.0 * hessian.get(i, i) } else { hessian.get(i, j) })
            .collect();
        Self {
            gradient: gradient.to_vec(),
            hessian_coeffs,
            step: step.to_vec(),
            multiplier_root: multiplier.max(0.0).sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn hessian(&self) -> SymMatrix {
        hessian_from_coeffs(self.dim(), &self.hessian_coeffs)
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier_root * self.multiplier_root
    }

    fn to_params(&self) -> Vec<f64> {
        let mut p = self.gradient.clone();
        p.extend_from_slice(&self.hessian_coeffs);
        p.extend_from_slice(&self.step);
        p.push(self.multiplier_root);
        p
    }

    fn from_params(n: usize, p: &[f64]) -> Self {
        let m = n * (n + 1) / 2;
        Self {
            gradient: p[..n].to_vec(),
            hessian_coeffs: p[n..n + m].to_vec(),
            step: p[n + m..2 * n + m].to_vec(),
            multiplier_root: p[2 * n + m],
        }
    }

    /// Weights after `x ↦ x/length`, `f ↦ f/fscale`.
    fn rescaled(&self, length: f64, fscale: f64) -> Self {
        Self {
            gradient: self.gradient.iter().map(|v| v * length / fscale).collect(),
            hessian_coeffs: self.hessian_coeffs.iter().map(|v| v * length * length / fscale).collect(),
            step: self.step.iter().map(|v| v / length).collect(),
            multiplier_root: self.multiplier_root * length / fscale.sqrt(),
        }
    }
}

fn hessian_from_coeffs(n: usize, coeffs: &[f64]) -> SymMatrix {
    let mut h = SymMatrix::zeros(n);
    for ((i, j), &w) in upper_pairs(n).into_iter().zip(coeffs) {
        h.set(i, j, if i == j { 0.5 * w } else { w });
    }
    h
}

/// Weights of the three losses and of their combination.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeightsQuad {
    /// Data-fit weight in the parent loss.
    pub fit: f64,
    /// Weight of `(λ_1(H) − c)²` in the parent loss.
    pub fit_curvature: f64,
    /// `‖(H + w*I)s + g‖²` weight.
    pub stationarity: f64,
    /// `[w*(Δ − ‖s‖)]²` weight.
    pub complementarity: f64,
    /// `(λ_1(H + w*I) − c̃)²` weight.
    pub curvature: f64,
    /// Parent, child and Cauchy weights of the overall loss.
    pub parent: f64,
    pub child: f64,
    pub cauchy: f64,
    pub curvature_target: f64,
    pub shifted_curvature_target: f64,
    pub cauchy_factor: f64,
}

impl Default for LossWeightsQuad {
    fn default() -> Self {
        Self {
            fit: 1.0,
            fit_curvature: 0.0,
            stationarity: 1.0,
            complementarity: 1.0,
            curvature: 0.0,
            parent: 1.0,
            child: 1.0,
            cauchy: 0.0,
            curvature_target: 0.0,
            shifted_curvature_target: 0.0,
            cauchy_factor: 0.1,
        }
    }
}

impl LossWeightsQuad {
    pub fn validate(&self) -> Result<(), TrError> {
        let all = [
            self.fit,
            self.fit_curvature,
            self.stationarity,
            self.complementarity,
            self.curvature,
            self.parent,
            self.child,
            self.cauchy,
            self.curvature_target,
            self.shifted_curvature_target,
            self.cauchy_factor,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrError::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Optimizer settings for the overall loss.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadStepConfig {
    pub restarts: usize,
    /// Adam iterations per restart.
    pub steps: usize,
    pub learning_rate: f64,
    /// Levenberg–Marquardt iterations that finish each restart.
    pub polish_iters: usize,
    pub seed: u64,
}

impl Default for QuadStepConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            steps: 2000,
            learning_rate: 0.01,
            polish_iters: 200,
            seed: 0,
        }
    }
}

/// Displacements `y_i − x` and value differences `f(y_i) − f(x)`.
fn fit_data(set: &BlockedPointSet, center: &[f64], f_center: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>), TrError> {
    let values = set.values()?;
    let d = set.points().iter().map(|y| linalg::sub(y, center)).collect();
    let t = values.iter().map(|v| v - f_center).collect();
    Ok((d, t))
}

fn fit_residual(g: &[f64], h: &SymMatrix, d: &[f64], t: f64) -> f64 {
    linalg::dot(g, d) + 0.5 * h.quad_form(d) - t
}

fn min_eigenvalue(h: &SymMatrix) -> f64 {
    sym_eigen(h).map(|e| e.values[0]).unwrap_or(f64::NAN)
}

/// Parent loss: mean squared misfit of `m(y_i) = f(x) + gᵀs_i + ½s_iᵀHs_i`
/// with `s_i = y_i − x`, plus the optional curvature target.
pub fn loss_l1(
    weights: &QuadraticNtrWeights,
    set: &BlockedPointSet,
    center: &[f64],
    f_center: f64,
    lw: &LossWeightsQuad,
) -> Result<f64, TrError> {
    let (d, t) = fit_data(set, center, f_center)?;
    let h = weights.hessian();
    let mse = d
        .iter()
        .zip(&t)
        .map(|(d, t)| fit_residual(&weights.gradient, &h, d, *t).powi(2))
        .sum::<f64>()
        / d.len().max(1) as f64;
    let mut l = lw.fit * mse;
    if lw.fit_curvature > 0.0 {
        l += lw.fit_curvature * (min_eigenvalue(&h) - lw.curvature_target).powi(2);
    }
    Ok(l)
}

/// Child loss built from the subproblem's optimality conditions.
pub fn loss_l2(weights: &QuadraticNtrWeights, delta: f64, lw: &LossWeightsQuad) -> f64 {
    let kkt = kkt_residuals(weights, delta);
    let mut l = lw.stationarity * kkt.stationarity.powi(2) + lw.complementarity * kkt.complementarity.powi(2);
    if lw.curvature > 0.0 {
        let lam = min_eigenvalue(&weights.hessian()) + weights.multiplier();
        l += lw.curvature * (lam - lw.shifted_curvature_target).powi(2);
    }
    l
}

/// `max(0, (decrease − c*·cauchy)² − c̃)`.
pub fn loss_l3(model_decrease: f64, cauchy: f64, lw: &LossWeightsQuad) -> f64 {
    ((model_decrease - lw.cauchy_factor * cauchy).powi(2) - lw.shifted_curvature_target).max(0.0)
}

/// Exact decrease of the model along `−∇m` restricted to the ball.
pub fn cauchy_decrease(model: &QuadraticModel, delta: f64) -> f64 {
    cauchy_decrease_parts(&model.gradient, &model.hessian, delta)
}

fn cauchy_decrease_parts(g: &[f64], h: &SymMatrix, delta: f64) -> f64 {
    let gn = norm(g);
    if gn == 0.0 {
        return 0.0;
    }
    let curv = h.quad_form(g);
    let t_max = delta / gn;
    let t = if curv > 0.0 { (gn * gn / curv).min(t_max) } else { t_max };
    t * gn * gn - 0.5 * t * t * curv
}

pub fn kkt_residuals(weights: &QuadraticNtrWeights, delta: f64) -> KktResiduals {
    let h = weights.hessian();
    let w = weights.multiplier();
    let s = &weights.step;
    let r = linalg::add(&h.shifted(w).mul_vec(s), &weights.gradient);
    KktResiduals {
        stationarity: norm(&r),
        complementarity: (w * (delta - norm(s))).abs(),
        curvature: (-(min_eigenvalue(&h) + w)).max(0.0),
    }
}

/// Averaged `vvᵀ` over the eigenspace of the smallest eigenvalue, which is
/// the gradient of `λ_min` when it is simple.
fn min_eigen_gradient(h: &SymMatrix) -> (f64, Matrix) {
    let n = h.dim();
    let e = sym_eigen(h).expect("finite Hessian");
    let lam = e.values[0];
    let cluster: Vec<usize> = (0..n).filter(|&k| e.values[k] - lam < 1e-9).collect();
    let k = cluster.len() as f64;
    let vecs: Vec<Vec<f64>> = cluster.iter().map(|&c| e.vector(c)).collect();
    let p = Matrix::from_fn(n, n, |i, j| vecs.iter().map(|v| v[i] * v[j]).sum::<f64>() / k);
    (lam, p)
}

/// The overall loss as a sum of squared residuals in the local frame.
struct OverallLoss<'a> {
    n: usize,
    pairs: Vec<(usize, usize)>,
    d: &'a [Vec<f64>],
    t: &'a [f64],
    delta: f64,
    lw: LossWeightsQuad,
    cauchy_slack: f64,
}

impl<'a> OverallLoss<'a> {
    /// The same loss with the child and Cauchy terms switched off.
    fn parent_only(&self) -> OverallLoss<'a> {
        OverallLoss {
            n: self.n,
            pairs: self.pairs.clone(),
            d: self.d,
            t: self.t,
            delta: self.delta,
            lw: LossWeightsQuad {
                child: 0.0,
                cauchy: 0.0,
                ..self.lw.clone()
            },
            cauchy_slack: self.cauchy_slack,
        }
    }

    /// Mask selecting the model weights (`true`) or the step weights.
    fn model_mask(&self, model: bool) -> Vec<bool> {
        (0..self.n_params()).map(|k| (k < self.s_offset()) == model).collect()
    }
    fn n_params(&self) -> usize {
        2 * self.n + self.pairs.len() + 1
    }

    fn h_offset(&self) -> usize {
        self.n
    }

    fn s_offset(&self) -> usize {
        self.n + self.pairs.len()
    }

    fn u_index(&self) -> usize {
        self.n_params() - 1
    }

    fn hessian_grad(&self, p: &Matrix) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(i, j)| if i == j { 0.5 * p[(i, i)] } else { 2.0 * p[(i, j)] })
            .collect()
    }

    fn model_decrease(&self, th: &[f64]) -> f64 {
        let w = QuadraticNtrWeights::from_params(self.n, th);
        -(linalg::dot(&w.gradient, &w.step) + 0.5 * w.hessian().quad_form(&w.step))
    }

    /// Residuals and their Jacobian.
    fn residuals(&self, th: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n;
        let np = self.n_params();
        let (ho, so, ui) = (self.h_offset(), self.s_offset(), self.u_index());
        let w = QuadraticNtrWeights::from_params(n, th);
        let h = w.hessian();
        let u = w.multiplier_root;
        let s = &w.step;
        let lw = &self.lw;
        let mut r = Vec::new();
        let mut jac: Vec<Vec<f64>> = Vec::new();

        let a = (lw.parent * lw.fit / self.d.len().max(1) as f64).sqrt();
        if a > 0.0 {
            for (d, &t) in self.d.iter().zip(self.t) {
                let mut row = vec![0.0; np];
                row[..n].iter_mut().zip(d).for_each(|(q, v)| *q = a * v);
                for (k, &(i, j)) in self.pairs.iter().enumerate() {
                    row[ho + k] = a * if i == j { 0.25 * d[i] * d[i] } else { d[i] * d[j] };
                }
                r.push(a * fit_residual(&w.gradient, &h, d, t));
                jac.push(row);
            }
        }
        let b = (lw.parent * lw.fit_curvature).sqrt();
        if b > 0.0 {
            let (lam, p) = min_eigen_gradient(&h);
            let mut row = vec![0.0; np];
            for (k, v) in self.hessian_grad(&p).into_iter().enumerate() {
                row[ho + k] = b * v;
            }
            r.push(b * (lam - lw.curvature_target));
            jac.push(row);
        }
        let a = (lw.child * lw.stationarity).sqrt();
        if a > 0.0 {
            let hs = h.mul_vec(s);
            for k in 0..n {
                let mut row = vec![0.0; np];
                row[k] = a;
                for j in 0..n {
                    row[so + j] = a * (h.get(k, j) + if j == k { u * u } else { 0.0 });
                }
                row[ui] = a * 2.0 * u * s[k];
                for (q, &(i, j)) in self.pairs.iter().enumerate() {
                    if i == j {
                        if i == k {
                            row[ho + q] = a * 0.5 * s[i];
                        }
                    } else if i == k {
                        row[ho + q] = a * s[j];
                    } else if j == k {
                        row[ho + q] = a * s[i];
                    }
                }
                r.push(a * (hs[k] + u * u * s[k] + w.gradient[k]));
                jac.push(row);
            }
        }
        let a = (lw.child * lw.complementarity).sqrt();
        if a > 0.0 {
            let sn = norm(s);
            let mut row = vec![0.0; np];
            row[ui] = a * 2.0 * u * (self.delta - sn);
            if sn > 0.0 {
                for j in 0..n {
                    row[so + j] = -a * u * u * s[j] / sn;
                }
            }
            r.push(a * u * u * (self.delta - sn));
            jac.push(row);
        }
        let a = (lw.child * lw.curvature).sqrt();
        if a > 0.0 {
            let (lam, p) = min_eigen_gradient(&h);
            let mut row = vec![0.0; np];
            for (k, v) in self.hessian_grad(&p).into_iter().enumerate() {
                row[ho + k] = a * v;
            }
            row[ui] = a * 2.0 * u;
            r.push(a * (lam + u * u - lw.shifted_curvature_target));
            jac.push(row);
        }
        let a = lw.cauchy.sqrt();
        if a > 0.0 {
            let (d, dd) = self.cauchy_gap(th);
            let (val, scale) = if self.cauchy_slack == 0.0 {
                (d, 1.0)
            } else {
                let v = d * d - self.cauchy_slack;
                if v > 0.0 {
                    (v.sqrt(), d / v.sqrt())
                } else {
                    (0.0, 0.0)
                }
            };
            r.push(a * val);
            jac.push(dd.into_iter().map(|v| a * scale * v).collect());
        }
        (r, jac)
    }

    /// `decrease − c*·cauchy` and its gradient; the Cauchy part is
    /// piecewise, so it is differentiated by central differences.
    fn cauchy_gap(&self, th: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n;
        let (ho, so) = (self.h_offset(), self.s_offset());
        let cs = self.lw.cauchy_factor;
        let cd = |p: &[f64]| {
            let w = QuadraticNtrWeights::from_params(n, p);
            cauchy_decrease_parts(&w.gradient, &w.hessian(), self.delta)
        };
        let w = QuadraticNtrWeights::from_params(n, th);
        let h = w.hessian();
        let s = &w.step;
        let mut grad = vec![0.0; self.n_params()];
        let hs = h.mul_vec(s);
        for k in 0..n {
            grad[k] = -s[k];
            grad[so + k] = -(w.gradient[k] + hs[k]);
        }
        for (q, &(i, j)) in self.pairs.iter().enumerate() {
            grad[ho + q] = -if i == j { 0.25 * s[i] * s[i] } else { s[i] * s[j] };
        }
        for k in 0..so {
            let step = 1e-7 * (1.0 + th[k].abs());
            let mut a = th.to_vec();
            let mut b = th.to_vec();
            a[k] += step;
            b[k] -= step;
            grad[k] -= cs * (cd(&a) - cd(&b)) / (2.0 * step);
        }
        (self.model_decrease(th) - cs * cd(th), grad)
    }

    fn value_and_gradient(&self, th: &[f64]) -> (f64, Vec<f64>) {
        let (r, jac) = self.residuals(th);
        let mut g = vec![0.0; self.n_params()];
        for (ri, row) in r.iter().zip(&jac) {
            for (gk, jk) in g.iter_mut().zip(row) {
                *gk += 2.0 * ri * jk;
            }
        }
        (r.iter().map(|v| v * v).sum(), g)
    }

    fn value(&self, th: &[f64]) -> f64 {
        self.residuals(th).0.iter().map(|v| v * v).sum()
    }

    /// Keeps the step inside the trust region.
    fn project(&self, th: &mut [f64]) {
        let so = self.s_offset();
        let s = &mut th[so..so + self.n];
        let l = norm(s);
        if l > self.delta {
            s.iter_mut().for_each(|v| *v *= self.delta / l);
        }
    }

    fn adam(&self, th: &mut [f64], steps: usize, lr: f64, free: &[bool]) -> Result<(), TrError> {
        let np = th.len();
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let mut m1 = vec![0.0; np];
        let mut m2 = vec![0.0; np];
        for t in 1..=steps {
            let (l, g) = self.value_and_gradient(th);
            if !l.is_finite() {
                return Err(TrError::Training("overall loss is not finite".into()));
            }
            if l < 1e-20 {
                break;
            }
            let c1 = 1.0 - b1.powi(t as i32);
            let c2 = 1.0 - b2.powi(t as i32);
            for k in (0..np).filter(|&k| free[k]) {
                m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
                th[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
            self.project(th);
        }
        Ok(())
    }

    /// `w* = u²` has zero slope at `u = 0`, so descent can stall there with
    /// the step pinned to the boundary. Resets `u` from the least-squares
    /// multiplier `max(0, −sᵀ(Hs + g)/‖s‖²)` when that is clearly larger.
    fn reseed_multiplier(&self, th: &mut [f64]) -> bool {
        if self.value(th) < 1e-24 {
            return false;
        }
        let w = QuadraticNtrWeights::from_params(self.n, th);
        let s = &w.step;
        let ss = linalg::dot(s, s);
        if ss == 0.0 {
            return false;
        }
        let r = linalg::add(&w.hessian().mul_vec(s), &w.gradient);
        let target = (-linalg::dot(s, &r) / ss).max(0.0);
        if target <= 1.5 * w.multiplier() + 1e-12 {
            return false;
        }
        th[self.u_index()] = target.sqrt();
        true
    }

    /// Joint stages shared by every restart: step-only then all weights,
    /// each with multiplier reseeds.
    fn finish_restart(&self, mut th: Vec<f64>, iters: usize) -> Result<Candidate, TrError> {
        let all = vec![true; th.len()];
        for free in [&self.model_mask(false), &all] {
            self.polish(&mut th, iters, free);
            for _ in 0..4 {
                if !self.reseed_multiplier(&mut th) {
                    break;
                }
                self.polish(&mut th, iters, free);
            }
        }
        let loss = self.value(&th);
        if !loss.is_finite() {
            return Err(TrError::Training("overall loss is not finite".into()));
        }
        let w = QuadraticNtrWeights::from_params(self.n, &th);
        let h = w.hessian();
        let lam = min_eigenvalue(&h) + w.multiplier();
        Ok(Candidate {
            decrease: self.model_decrease(&th),
            curvature_ok: lam >= -1e-8 * (1.0 + h.frobenius_norm()),
            theta: th,
            loss,
        })
    }

    /// Model weights of `base` with the step on the boundary along the
    /// eigenvector of the smallest eigenvalue and `w* = −λ_min`.
    fn negative_curvature_start(&self, base: &[f64], sign: f64) -> Option<Vec<f64>> {
        let w = QuadraticNtrWeights::from_params(self.n, base);
        let (lam, v) = linalg::smallest_eigenpair(&w.hessian()).ok()?;
        if lam >= 0.0 {
            return None;
        }
        let mut th = base.to_vec();
        let so = self.s_offset();
        for (k, vk) in v.iter().enumerate() {
            th[so + k] = sign * self.delta * vk;
        }
        th[self.u_index()] = (-lam).sqrt();
        Some(th)
    }

    /// Projected Levenberg–Marquardt on the residual vector.
    fn polish(&self, th: &mut Vec<f64>, iters: usize, free: &[bool]) {
        let np = th.len();
        let mut mu = 1e-3;
        let mut loss = self.value(th);
        for _ in 0..iters {
            if loss < 1e-30 {
                break;
            }
            let (r, mut jac) = self.residuals(th);
            for row in &mut jac {
                row.iter_mut().zip(free).filter(|(_, f)| !**f).for_each(|(v, _)| *v = 0.0);
            }
            let mut jtj = Matrix::from_fn(np, np, |a, b| jac.iter().map(|row| row[a] * row[b]).sum());
            let jtr: Vec<f64> = (0..np).map(|a| jac.iter().zip(&r).map(|(row, ri)| row[a] * ri).sum()).collect();
            if jtr.iter().all(|v| v.abs() < 1e-300) {
                break;
            }
            let top = (0..np).map(|a| jtj[(a, a)]).fold(0.0_f64, f64::max).max(1e-300);
            let base: Vec<f64> = (0..np).map(|a| jtj[(a, a)]).collect();
            let mut improved = false;
            while mu < 1e12 {
                for a in 0..np {
                    jtj[(a, a)] = base[a] + mu * base[a].max(1e-12 * top);
                }
                let Ok(delta) = linalg::solve_linear(&jtj, &jtr) else {
                    mu *= 4.0;
                    continue;
                };
                let mut trial: Vec<f64> = th.iter().zip(&delta).map(|(a, d)| a - d).collect();
                self.project(&mut trial);
                let lt = self.value(&trial);
                if lt < loss {
                    *th = trial;
                    loss = lt;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    break;
                }
                mu *= 4.0;
            }
            if !improved {
                break;
            }
        }
    }
}

/// Losses and optimality residuals of a returned step, in the caller's units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadStepDiagnostics {
    pub loss_fit: f64,
    pub loss_kkt: f64,
    pub loss_cauchy: f64,
    pub kkt: KktResiduals,
    /// `λ_min(H + w*I)`.
    pub shifted_min_eigenvalue: f64,
    pub model_decrease: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadStep {
    pub step: Vec<f64>,
    pub weights: QuadraticNtrWeights,
    pub model: QuadraticModel,
    pub diagnostics: QuadStepDiagnostics,
}

struct Candidate {
    theta: Vec<f64>,
    loss: f64,
    decrease: f64,
    curvature_ok: bool,
}

/// Minimizes the overall loss over model and step weights.
///
/// Training runs in the frame `(y − x)/r`, `r` the largest distance from
/// `x` to a set point, with values divided by the largest `|f(y_i) − f(x)|`. Each
/// restart trains the model weights on the parent loss, then the step
/// weights on the overall loss, then all weights together; each stage runs
/// projected Adam or projected Levenberg–Marquardt.
/// Among restarts, solutions satisfying the curvature condition win, then
/// the lowest loss, then (within a relative 1e-3) the largest model decrease.
pub fn solve_step_quadratic(
    set: &BlockedPointSet,
    center: &[f64],
    f_center: f64,
    delta: f64,
    lw: &LossWeightsQuad,
    opts: &QuadStepConfig,
    warm: Option<&QuadraticNtrWeights>,
) -> Result<QuadStep, TrError> {
    let n = center.len();
    let (d, t) = fit_data(set, center, f_center)?;
    let fscale = t.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let fscale = if fscale > 0.0 { fscale } else { 1.0 };
    let spread = d.iter().map(|v| norm(v)).fold(0.0_f64, f64::max);
    let length = if spread > 0.0 { spread } else { delta };
    let dl: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|a| a / length).collect()).collect();
    let tl: Vec<f64> = t.iter().map(|v| v / fscale).collect();
    let curv_scale = length * length / fscale;
    let local_lw = LossWeightsQuad {
        curvature_target: lw.curvature_target * curv_scale,
        shifted_curvature_target: lw.shifted_curvature_target * curv_scale,
        ..lw.clone()
    };
    let objective = OverallLoss {
        n,
        pairs: upper_pairs(n),
        d: &dl,
        t: &tl,
        delta: delta / length,
        lw: local_lw,
        cauchy_slack: lw.shifted_curvature_target / (fscale * fscale),
    };

    let mut rng = rng_from_seed(opts.seed);
    let np = objective.n_params();
    let mut best: Option<Candidate> = None;
    let mut candidates = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let mut th: Vec<f64> = match (restart, warm) {
            (0, Some(w)) => w.rescaled(length, fscale).to_params(),
            _ => (0..np).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        objective.project(&mut th);
        // Parent first, then the child on the fitted model, then both.
        let parent = objective.parent_only();
        parent.adam(&mut th, opts.steps, opts.learning_rate, &objective.model_mask(true))?;
        parent.polish(&mut th, opts.polish_iters, &objective.model_mask(true));
        objective.adam(&mut th, opts.steps, opts.learning_rate, &objective.model_mask(false))?;
        candidates.push(objective.finish_restart(th, opts.polish_iters)?);
    }
    // An indefinite model can trap every restart at a saddle of the KKT
    // residual. Restart the step along the most negative curvature direction.
    if !candidates.iter().any(|c| c.curvature_ok) {
        let seed = candidates.iter().min_by(|a, b| a.loss.total_cmp(&b.loss)).map(|c| c.theta.clone());
        if let Some(base) = seed {
            for sign in [1.0, -1.0] {
                if let Some(th) = objective.negative_curvature_start(&base, sign) {
                    candidates.push(objective.finish_restart(th, opts.polish_iters)?);
                }
            }
        }
    }
    let any_ok = candidates.iter().any(|c| c.curvature_ok);
    let pool: Vec<Candidate> = candidates.into_iter().filter(|c| c.curvature_ok || !any_ok).collect();
    let min_loss = pool.iter().map(|c| c.loss).fold(f64::INFINITY, f64::min);
    for c in pool {
        if c.loss > min_loss * (1.0 + 1e-3) + 1e-14 {
            continue;
        }
        if best.as_ref().is_none_or(|b| c.decrease > b.decrease) {
            best = Some(c);
        }
    }
    let best = best.expect("at least one restart");

    let local = QuadraticNtrWeights::from_params(n, &best.theta);
    let mut weights = local.rescaled(1.0 / length, 1.0 / fscale);
    let sn = norm(&weights.step);
    if sn > delta {
        weights.step.iter_mut().for_each(|v| *v *= delta / sn);
    }
    let model = QuadraticModel {
        center: center.to_vec(),
        constant: f_center,
        gradient: weights.gradient.clone(),
        hessian: weights.hessian(),
    };
    let decrease = -model.step_value(&weights.step);
    let diagnostics = QuadStepDiagnostics {
        loss_fit: loss_l1(&weights, set, center, f_center, lw)?,
        loss_kkt: loss_l2(&weights, delta, lw),
        loss_cauchy: loss_l3(decrease, cauchy_decrease(&model, delta), lw),
        kkt: kkt_residuals(&weights, delta),
        shifted_min_eigenvalue: min_eigenvalue(&model.hessian) + weights.multiplier(),
        model_decrease: decrease,
    };
    Ok(QuadStep {
        step: weights.step.clone(),
        weights,
        model,
        diagnostics,
    })
}

/// What a step provider hands back to the outer loop.
pub(crate) struct StepProposal {
    pub step: Vec<f64>,
    pub model: QuadraticModel,
    pub kkt: KktResiduals,
}

pub(crate) struct StepRequest<'a> {
    pub set: &'a BlockedPointSet,
    pub status: &'a GeometryStatus,
    pub x: &'a [f64],
    pub fx: f64,
    pub delta: f64,
    pub iter: usize,
}

struct Run<'a> {
    ev: Evaluator<'a>,
    trace: Vec<TraceRecord>,
    x: Vec<f64>,
    fx: f64,
    delta: f64,
    iter: usize,
    violations: usize,
}

impl Run<'_> {
    fn record(&mut self, update: UpdateKind) -> TraceRecord {
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

    fn finish(mut self, by: TerminatedBy) -> OptimizationResult {
        let last = self.record(UpdateKind::Final);
        self.trace.push(last);
        OptimizationResult {
            x: self.x,
            f: self.fx,
            evals: self.ev.count(),
            iters: self.iter,
            terminated_by: by,
            trace: self.trace,
            decrease_violations: self.violations,
        }
    }
}

fn eval_failure(e: EvalError) -> Option<TrError> {
    match e {
        EvalError::ObjectiveFailure { point } => Some(TrError::ObjectiveFailure { point }),
        EvalError::BudgetExceeded { .. } => None,
    }
}

/// Outer loop shared by the quadratic engines.
pub(crate) fn run_model_tr(
    f: Objective,
    x0: &[f64],
    cfg: &TrConfig,
    solver: &mut dyn FnMut(&StepRequest) -> Result<StepProposal, TrError>,
) -> Result<OptimizationResult, TrError> {
    cfg.validate()?;
    let mut run = Run {
        ev: Evaluator::new(f, cfg.budget),
        trace: Vec::new(),
        x: x0.to_vec(),
        fx: f64::NAN,
        delta: cfg.delta0,
        iter: 0,
        violations: 0,
    };
    macro_rules! eval_or_stop {
        ($run:ident, $x:expr) => {
            match $run.ev.eval($x) {
                Ok(v) => v,
                Err(e) => match eval_failure(e) {
                    Some(err) => return Err(err),
                    None => return Ok($run.finish(TerminatedBy::Budget)),
                },
            }
        };
    }
    run.fx = eval_or_stop!(run, x0);
    let mut set = match evaluated_pattern(x0, run.fx, cfg.delta0, &mut run.ev) {
        Ok(s) => s,
        Err(e) => match eval_failure(e) {
            Some(err) => return Err(err),
            None => return Ok(run.finish(TerminatedBy::Budget)),
        },
    };

    loop {
        if run.iter >= cfg.max_iters {
            return Ok(run.finish(TerminatedBy::MaxIters));
        }
        if run.delta < cfg.eps_delta {
            return Ok(run.finish(TerminatedBy::Delta));
        }
        run.iter += 1;
        let status = assess_geometry(&set, &run.x, run.delta, cfg.adequacy_probes)?;
        if !status.basis.complete {
            match plan_repair(&set, &run.x, run.delta) {
                Ok(rep) => {
                    let v = eval_or_stop!(run, &rep.point);
                    set.replace(rep.index, rep.point, Some(v));
                    let rec = run.record(UpdateKind::GeometryRepair);
                    run.trace.push(rec);
                }
                Err(_) => {
                    run.delta *= cfg.gamma1;
                    let rec = run.record(UpdateKind::Shrink);
                    run.trace.push(rec);
                }
            }
            continue;
        }

        let req = StepRequest {
            set: &set,
            status: &status,
            x: &run.x,
            fx: run.fx,
            delta: run.delta,
            iter: run.iter,
        };
        let prop = match solver(&req) {
            Ok(p) => p,
            Err(TrError::Training(_)) => {
                run.delta *= cfg.gamma1;
                let rec = run.record(UpdateKind::Shrink);
                run.trace.push(rec);
                continue;
            }
            Err(e) => return Err(e),
        };
        if norm(&prop.model.gradient) <= cfg.eps_station && status.adequacy.adequate {
            return Ok(run.finish(TerminatedBy::Stationarity));
        }

        let s = prop.step;
        let sn = norm(&s);
        let decrease = -prop.model.step_value(&s);
        let trial = linalg::add(&run.x, &s);
        let m_old = prop.model.constant;
        let rho = if decrease > 0.0 {
            let f_trial = eval_or_stop!(run, &trial);
            agreement_ratio(run.fx, f_trial, m_old, m_old - decrease)
                .ok()
                .map(|r| (r, f_trial))
        } else {
            None
        };

        let mut rec;
        match rho {
            Some((r, f_trial)) if r >= cfg.eta1 => {
                let out = plan_success_swap(&set, &run.x, run.delta, &trial);
                set.replace(out, trial.clone(), Some(f_trial));
                run.x = trial;
                run.fx = f_trial;
                run.delta *= cfg.gamma2;
                rec = run.record(UpdateKind::SuccessSwap);
                rec.accepted = true;
                let ok = decrease >= cfg.beta * sn * sn;
                if !ok {
                    run.violations += 1;
                }
                rec.decrease_ok = Some(ok);
            }
            _ if !status.adequacy.adequate => match plan_repair(&set, &run.x, run.delta) {
                Ok(rep) => {
                    let v = eval_or_stop!(run, &rep.point);
                    set.replace(rep.index, rep.point, Some(v));
                    rec = run.record(UpdateKind::GeometryRepair);
                }
                Err(_) => {
                    run.delta *= cfg.gamma1;
                    rec = run.record(UpdateKind::Shrink);
                }
            },
            _ => {
                run.delta *= cfg.gamma1;
                rec = run.record(UpdateKind::Shrink);
            }
        }
        rec.rho = rho.map(|r| r.0);
        rec.step_norm = Some(sn);
        rec.model_decrease = Some(decrease);
        rec.kkt = Some(prop.kkt);
        run.trace.push(rec);
    }
}

/// Algorithm settings beyond the shared trust-region configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadNtrSettings {
    pub loss: LossWeightsQuad,
    pub step: QuadStepConfig,
}

/// The trust-region method with a jointly trained quadratic model and step.
pub fn run_algorithm1(
    f: Objective,
    x0: &[f64],
    cfg: &TrConfig,
    settings: &QuadNtrSettings,
) -> Result<OptimizationResult, TrError> {
    settings.loss.validate()?;
    let mut warm: Option<QuadraticNtrWeights> = None;
    let mut solver = |req: &StepRequest| -> Result<StepProposal, TrError> {
        let opts = QuadStepConfig {
            seed: settings.step.seed ^ cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ req.iter as u64,
            ..settings.step.clone()
        };
        let out = solve_step_quadratic(req.set, req.x, req.fx, req.delta, &settings.loss, &opts, warm.as_ref())?;
        warm = Some(out.weights.clone());
        Ok(StepProposal {
            step: out.step,
            model: out.model,
            kkt: out.diagnostics.kkt,
        })
    };
    run_model_tr(f, x0, cfg, &mut solver)
}

/// Classical baseline: Newton-basis interpolation model and an exact
/// subproblem solve, inside the same outer loop.
pub fn run_newton_tr(f: Objective, x0: &[f64], cfg: &TrConfig) -> Result<OptimizationResult, TrError> {
    let mut solver = |req: &StepRequest| -> Result<StepProposal, TrError> {
        let n = req.x.len();
        let origin = vec![0.0; n];
        let local = interpolate(&req.status.local, &req.status.basis, &origin)
            .map_err(|e| TrError::Training(e.to_string()))?;
        let d = req.delta;
        let model = QuadraticModel {
            center: req.x.to_vec(),
            constant: req.fx,
            gradient: local.gradient.iter().map(|v| v / d).collect(),
            hessian: local.hessian.scaled(1.0 / (d * d)),
        };
        let sol = solve_trust_region(&model.gradient, &model.hessian, d)?;
        let weights = QuadraticNtrWeights::from_parts(&model.gradient, &model.hessian, &sol.step, sol.multiplier);
        Ok(StepProposal {
            step: sol.step,
            kkt: kkt_residuals(&weights, d),
            model,
        })
    };
    run_model_tr(f, x0, cfg, &mut solver)
}
