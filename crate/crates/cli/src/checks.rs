//! Seeded diagnostic suites behind the `check` subcommand.

use ntr_core::linalg::{norm, sub, sym_eigen, SymMatrix};
use ntr_core::neural::FeedForwardNet;
use ntr_core::sampling::rng_from_seed;
use ntr_core::tr_blackbox::penalty_delta;
use ntr_core::tr_quadratic::{kkt_residuals, QuadraticNtrWeights};
use ntr_core::trs::solve_trust_region;
use rand::Rng;

/// Finite-difference step for the derivative oracles.
pub const FD_STEP: f64 = 1e-5;

/// Error of `a` against `b`, relative to `max(‖b‖∞, 1)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Worst-case discrepancies over a family of random nets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeReport {
    pub nets: usize,
    pub gradient_error: f64,
    pub hessian_error: f64,
    /// Largest `|H_rs − H_sr|` of the dense Hessian.
    pub asymmetry: f64,
    /// Closed forms against the generic path, single-hidden-layer nets only.
    pub closed_form_error: f64,
    pub closed_form_nets: usize,
}

/// A random net with 1 or 2 hidden layers of width at most 8 and input
/// dimension at most 5, plus a test point.
pub fn random_net(seed: u64) -> (FeedForwardNet, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=5);
    let mut sizes = vec![n];
    for _ in 0..rng.random_range(1..=2) {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(1);
    let bias = rng.random_bool(0.5);
    let mut net = FeedForwardNet::random(&sizes, bias, rng.random());
    let center: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_input_map(center, rng.random_range(0.5..2.0));
    net.set_output_map(rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
    let x = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    (net, x)
}

pub fn derivative_oracle(count: usize, seed: u64) -> DerivativeReport {
    let mut rep = DerivativeReport {
        nets: count,
        ..Default::default()
    };
    let h = FD_STEP;
    for k in 0..count {
        let (net, x) = random_net(seed.wrapping_add(k as u64));
        let n = x.len();
        let d = net.input_derivatives(&x);
        let mut fd_grad = Vec::with_capacity(n);
        let mut fd_hess = Vec::with_capacity(n * n);
        let mut exact_hess = Vec::with_capacity(n * n);
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            fd_grad.push((net.value(&xp) - net.value(&xm)) / (2.0 * h));
            let gp = net.input_gradient(&xp);
            let gm = net.input_gradient(&xm);
            for j in 0..n {
                fd_hess.push((gp[j] - gm[j]) / (2.0 * h));
                exact_hess.push(d.hessian.get(i, j));
                rep.asymmetry = rep.asymmetry.max((d.hessian.get(i, j) - d.hessian.get(j, i)).abs());
            }
        }
        rep.gradient_error = rep.gradient_error.max(relative_error(&d.gradient, &fd_grad));
        rep.hessian_error = rep.hessian_error.max(relative_error(&exact_hess, &fd_hess));
        if let (Ok(g), Ok(hc)) = (net.gradient_closed_form(&x), net.hessian_closed_form(&x)) {
            rep.closed_form_nets += 1;
            let hc: Vec<f64> = (0..n * n).map(|q| hc.get(q / n, q % n)).collect();
            rep.closed_form_error = rep
                .closed_form_error
                .max(relative_error(&g, &d.gradient))
                .max(relative_error(&hc, &exact_hess));
        }
    }
    rep
}

fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> SymMatrix {
    SymMatrix::from_upper(n, |_, _| rng.random_range(-2.0..2.0))
}

/// Largest `‖Av − λv‖` over seeded random symmetric matrices.
pub fn eigen_residual(count: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0_f64;
    for _ in 0..count {
        let n = rng.random_range(1..=6);
        let a = random_symmetric(&mut rng, n);
        let e = sym_eigen(&a).expect("finite input");
        for k in 0..n {
            let v = e.vector(k);
            let av = a.mul_vec(&v);
            let lv: Vec<f64> = v.iter().map(|c| c * e.values[k]).collect();
            worst = worst.max(norm(&sub(&av, &lv)));
        }
    }
    worst
}

/// Largest KKT residual of the exact subproblem solver on random data.
pub fn trs_kkt_residual(count: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0_f64;
    for _ in 0..count {
        let n = rng.random_range(1..=5);
        let h = random_symmetric(&mut rng, n);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta = rng.random_range(0.1..2.0);
        let sol = solve_trust_region(&g, &h, delta).expect("finite input");
        let w = QuadraticNtrWeights::from_parts(&g, &h, &sol.step, sol.multiplier);
        let k = kkt_residuals(&w, delta);
        let excess = (norm(&sol.step) - delta).max(0.0);
        worst = worst.max(k.stationarity).max(k.complementarity).max(k.curvature).max(excess);
    }
    worst
}

/// Jumps of the step penalty and its first two derivatives across `r = Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamReport {
    pub value_jump: f64,
    pub slope_jump: f64,
    /// One-sided second derivatives differ; this is reported, not checked.
    pub curvature_jump: f64,
}

pub fn penalty_seam(delta: f64) -> SeamReport {
    let eps = 1e-7;
    let (v_in, d_in) = penalty_delta(delta, delta);
    let (v_out, d_out) = penalty_delta(delta * (1.0 + 1e-15) + 1e-300, delta);
    let (_, d_eps) = penalty_delta(delta + eps, delta);
    SeamReport {
        value_jump: (v_out - v_in).abs(),
        slope_jump: (d_out - d_in).abs(),
        curvature_jump: (d_eps - d_out) / eps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckLine {
    Pass(&'static str),
    Fail(&'static str),
    /// Reported value that carries no verdict.
    Report(&'static str, f64),
}

impl CheckLine {
    fn verdict(name: &'static str, ok: bool) -> Self {
        if ok {
            CheckLine::Pass(name)
        } else {
            CheckLine::Fail(name)
        }
    }

    pub fn failed(&self) -> bool {
        matches!(self, CheckLine::Fail(_))
    }

    pub fn render(&self) -> String {
        match self {
            CheckLine::Pass(n) => format!("{n}: pass"),
            CheckLine::Fail(n) => format!("{n}: fail"),
            CheckLine::Report(n, v) => format!("{n}: report {}", crate::trace::fmt_f64(*v)),
        }
    }
}

/// Runs every diagnostic; `force_fail` appends a failing check.
pub fn run_checks(seed: u64, force_fail: bool) -> Vec<CheckLine> {
    let d = derivative_oracle(20, seed);
    let seam = penalty_seam(1.0);
    let mut out = vec![
        CheckLine::verdict("input_gradient_fd", d.gradient_error <= 1e-5),
        CheckLine::verdict("input_hessian_fd", d.hessian_error <= 1e-4),
        CheckLine::verdict("input_hessian_symmetric", d.asymmetry == 0.0),
        CheckLine::verdict("closed_form_derivatives", d.closed_form_nets > 0 && d.closed_form_error <= 1e-12),
        CheckLine::verdict("symmetric_eigen_residual", eigen_residual(20, seed) <= 1e-10),
        CheckLine::verdict("trust_region_kkt", trs_kkt_residual(20, seed) <= 1e-8),
        CheckLine::verdict("penalty_seam_c1", seam.value_jump <= 1e-12 && seam.slope_jump <= 1e-12),
        CheckLine::Report("penalty_seam_second_derivative_jump", seam.curvature_jump),
    ];
    if force_fail {
        out.push(CheckLine::Fail("forced_failure"));
    }
    out
}
