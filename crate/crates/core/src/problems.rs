//! Benchmark objectives: smooth and nonsmooth test functions plus the
//! worked interpolation example.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProblemError {
    #[error("unknown problem {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: &'static str,
    pub dim: usize,
    /// Default starting point.
    pub start: Vec<f64>,
    pub known_minimizer: Option<Vec<f64>>,
    pub known_minimum: Option<f64>,
    pub smooth: bool,
    pub lipschitz_note: &'static str,
    f: fn(&[f64]) -> f64,
}

impl Problem {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn example3(x: &[f64]) -> f64 {
    (x[0] - 2.0).powi(4) + (x[1] - 1.0).powi(3) + (x[0] + x[1]).exp()
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
}

/// Curvatures from 1 to 1e4, evenly spaced in the exponent.
fn quad_illcond(x: &[f64]) -> f64 {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let e = if n > 1 { 4.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
            0.5 * 10f64.powf(e) * v * v
        })
        .sum()
}

fn l1norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn maxabs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Maximum of two bowls centred at `(±1, 0)`; the kink runs along `x₁ = 0`.
fn piecewise_quad(x: &[f64]) -> f64 {
    let rest: f64 = x[1..].iter().map(|v| v * v).sum();
    ((x[0] - 1.0).powi(2) + rest).max((x[0] + 1.0).powi(2) + rest)
}

fn registry() -> Vec<Problem> {
    let origin = |n: usize| Some(vec![0.0; n]);
    let sphere_of = |name, n: usize| Problem {
        name,
        dim: n,
        start: vec![2.0; n],
        known_minimizer: origin(n),
        known_minimum: Some(0.0),
        smooth: true,
        lipschitz_note: "gradient Lipschitz with constant 2",
        f: sphere,
    };
    let mut all = vec![
        Problem {
            name: "example3",
            dim: 2,
            start: vec![0.0, 0.0],
            known_minimizer: None,
            known_minimum: None,
            smooth: true,
            lipschitz_note: "unbounded below through the cubic term; a descent fixture only",
            f: example3,
        },
        sphere_of("sphere", 2),
        sphere_of("sphere5", 5),
        sphere_of("sphere10", 10),
        Problem {
            name: "rosenbrock",
            dim: 2,
            start: vec![-1.2, 1.0],
            known_minimizer: Some(vec![1.0, 1.0]),
            known_minimum: Some(0.0),
            smooth: true,
            lipschitz_note: "gradient locally Lipschitz",
            f: rosenbrock,
        },
        Problem {
            name: "quad_illcond",
            dim: 2,
            start: vec![1.0, 1.0],
            known_minimizer: origin(2),
            known_minimum: Some(0.0),
            smooth: true,
            lipschitz_note: "Hessian diag(1, 1e4), condition number 1e4",
            f: quad_illcond,
        },
        Problem {
            name: "l1norm",
            dim: 2,
            start: vec![1.0, 1.0],
            known_minimizer: origin(2),
            known_minimum: Some(0.0),
            smooth: false,
            lipschitz_note: "Lipschitz with constant sqrt(n) in the 2-norm",
            f: l1norm,
        },
        Problem {
            name: "maxabs",
            dim: 2,
            start: vec![1.0, -0.5],
            known_minimizer: origin(2),
            known_minimum: Some(0.0),
            smooth: false,
            lipschitz_note: "Lipschitz with constant 1 in the 2-norm",
            f: maxabs,
        },
        Problem {
            name: "piecewise_quad",
            dim: 2,
            start: vec![1.5, 1.0],
            known_minimizer: origin(2),
            known_minimum: Some(1.0),
            smooth: false,
            lipschitz_note: "locally Lipschitz, kink along x1 = 0",
            f: piecewise_quad,
        },
    ];
    all.sort_by_key(|p| p.name);
    all
}

pub fn get_problem(name: &str) -> Result<Problem, ProblemError> {
    registry()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| ProblemError::Unknown(name.to_string()))
}

/// `(name, dim, smooth)` for every problem, sorted by name.
pub fn list_problems() -> Vec<(&'static str, usize, bool)> {
    registry().iter().map(|p| (p.name, p.dim, p.smooth)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tr_blackbox::clarke_stationarity_proxy;
    use approx::assert_relative_eq;

    #[test]
    fn example3_values() {
        let p = get_problem("example3").unwrap();
        assert_eq!(p.evaluate(&[0.0, 0.0]), 16.0);
        assert_relative_eq!(p.evaluate(&[1.0, 1.0]), 1.0 + 2f64.exp(), epsilon = 1e-12);
        assert_eq!(get_problem("sphere").unwrap().evaluate(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn listing_is_sorted_and_round_trips() {
        let list = list_problems();
        assert!(list.iter().any(|p| p.0 == "example3"));
        assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
        for (name, dim, smooth) in list {
            let p = get_problem(name).unwrap();
            assert_eq!((p.dim, p.smooth), (dim, smooth));
            assert_eq!(p.start.len(), dim);
            assert!(p.evaluate(&p.start).is_finite());
        }
        assert_eq!(get_problem("nope").unwrap_err(), ProblemError::Unknown("nope".into()));
    }

    #[test]
    fn known_values_are_consistent() {
        for (name, _, _) in list_problems() {
            let p = get_problem(name).unwrap();
            if let (Some(x), Some(v)) = (&p.known_minimizer, p.known_minimum) {
                assert_eq!(p.evaluate(x), v, "{name}");
            }
        }
    }

    #[test]
    fn smooth_minimizers_have_zero_fd_gradient() {
        for (name, _, smooth) in list_problems() {
            let p = get_problem(name).unwrap();
            let Some(x) = p.known_minimizer.clone().filter(|_| smooth) else {
                continue;
            };
            let h = 1e-6;
            for i in 0..p.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let g = (p.evaluate(&xp) - p.evaluate(&xm)) / (2.0 * h);
                assert!(g.abs() <= 1e-4, "{name}: {g}");
            }
        }
    }

    #[test]
    fn nonsmooth_minimizers_pass_the_clarke_proxy() {
        for (name, _, smooth) in list_problems() {
            let p = get_problem(name).unwrap();
            let Some(x) = p.known_minimizer.clone().filter(|_| !smooth) else {
                continue;
            };
            let f = |y: &[f64]| p.evaluate(y);
            assert!(clarke_stationarity_proxy(&f, &x, 1e-3, 32, 7) >= 0.0, "{name}");
        }
    }
}
