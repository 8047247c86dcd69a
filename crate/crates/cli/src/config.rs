//! Flat `key = value` run configuration.
//!
//! One file can seed any engine: trust-region keys are bare (`eta1`,
//! `delta0`, ...), quadratic-engine keys carry a `quad.` prefix and
//! black-box keys a `bb.` prefix. Unknown keys are rejected.

use std::path::PathBuf;
use std::str::FromStr;

use ntr_core::neural::Optimizer;
use ntr_core::problems::get_problem;
use ntr_core::tr_blackbox::{BlackboxSettings, ChildLoss};
use ntr_core::tr_quadratic::QuadNtrSettings;
use ntr_core::trust_region::TrConfig;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("starting point has {got} coordinates, problem `{problem}` needs {want}")]
    StartDimension { problem: String, got: usize, want: usize },
    #[error("budget must allow at least one evaluation")]
    ZeroBudget,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    NewtonTr,
    #[default]
    QuadNtr,
    BlackboxNtr,
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "newton_tr" => Ok(Algorithm::NewtonTr),
            "quad_ntr" => Ok(Algorithm::QuadNtr),
            "blackbox_ntr" => Ok(Algorithm::BlackboxNtr),
            _ => Err("expected newton_tr, quad_ntr or blackbox_ntr".into()),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::NewtonTr => "newton_tr",
            Algorithm::QuadNtr => "quad_ntr",
            Algorithm::BlackboxNtr => "blackbox_ntr",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Overrides the problem's default starting point.
    pub x0: Option<Vec<f64>>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub tr: TrConfig,
    pub quad: QuadNtrSettings,
    pub blackbox: BlackboxSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "sphere".into(),
            algorithm: Algorithm::default(),
            seed: 0,
            x0: None,
            trace: None,
            summary: None,
            tr: TrConfig::default(),
            quad: QuadNtrSettings::default(),
            blackbox: BlackboxSettings::default(),
        }
    }
}

/// Splits config text into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|t| parse_num::<f64>(key, t.trim()))
        .collect()
}

fn parse_opt_usize(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "auto" || value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: "expected true or false".into(),
        }),
    }
}

fn parse_optimizer(key: &str, value: &str) -> Result<Optimizer, ConfigError> {
    match value {
        "gd" => Ok(Optimizer::GradientDescent),
        "adam" => Ok(Optimizer::Adam),
        _ => match value.strip_prefix("momentum:") {
            Some(c) => parse_num(key, c).map(Optimizer::Momentum),
            None => Err(ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: "expected gd, adam or momentum:<coefficient>".into(),
            }),
        },
    }
}

impl RunConfig {
    /// Every accepted key, in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "problem",
        "algorithm",
        "seed",
        "budget",
        "x0",
        "trace",
        "summary",
        "eta1",
        "eta2",
        "gamma1",
        "gamma2",
        "delta0",
        "eps_delta",
        "eps_station",
        "max_iters",
        "beta",
        "kkt_tol",
        "adequacy_probes",
        "quad.fit",
        "quad.fit_curvature",
        "quad.stationarity",
        "quad.complementarity",
        "quad.curvature",
        "quad.parent",
        "quad.child",
        "quad.cauchy",
        "quad.curvature_target",
        "quad.shifted_curvature_target",
        "quad.cauchy_factor",
        "quad.restarts",
        "quad.steps",
        "quad.learning_rate",
        "quad.polish_iters",
        "quad.seed",
        "bb.child",
        "bb.penalty",
        "bb.cauchy",
        "bb.local",
        "bb.agreement",
        "bb.local_eigen",
        "bb.local_gradient",
        "bb.beta_p",
        "bb.beta_pp",
        "bb.eta_pp",
        "bb.eta3",
        "bb.eigen_target",
        "bb.minor_targets",
        "bb.kkt_stationarity",
        "bb.kkt_complementarity",
        "bb.kkt_curvature",
        "bb.shifted_target",
        "bb.combined_kkt",
        "bb.combined_agreement",
        "bb.epochs",
        "bb.learning_rate",
        "bb.train_seed",
        "bb.split_fraction",
        "bb.optimizer",
        "bb.patience",
        "bb.hidden",
        "bb.bias",
        "bb.n_w",
        "bb.n_b",
        "bb.gamma_moderate",
        "bb.step_starts",
        "bb.step_iters",
        "bb.step_learning_rate",
        "bb.refresh_every",
        "bb.max_refreshes",
        "bb.relax_boundary",
        "bb.relax_factor",
        "bb.clarke_delta",
        "bb.clarke_dirs",
        "bb.seed",
    ];

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (_, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (k, v) = (key, value);
        let tr = &mut self.tr;
        let ql = &mut self.quad.loss;
        let qs = &mut self.quad.step;
        let bb = &mut self.blackbox;
        let bl = &mut bb.loss;
        match k {
            "problem" => self.problem = v.to_string(),
            "algorithm" => {
                self.algorithm = v.parse().map_err(|reason| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    reason,
                })?
            }
            "seed" => self.seed = parse_num(k, v)?,
            "budget" => tr.budget = parse_opt_usize(k, v)?,
            "x0" => self.x0 = Some(parse_list(k, v)?),
            "trace" => self.trace = Some(PathBuf::from(v)),
            "summary" => self.summary = Some(PathBuf::from(v)),
            "eta1" => tr.eta1 = parse_num(k, v)?,
            "eta2" => tr.eta2 = parse_num(k, v)?,
            "gamma1" => tr.gamma1 = parse_num(k, v)?,
            "gamma2" => tr.gamma2 = parse_num(k, v)?,
            "delta0" => tr.delta0 = parse_num(k, v)?,
            "eps_delta" => tr.eps_delta = parse_num(k, v)?,
            "eps_station" => tr.eps_station = parse_num(k, v)?,
            "max_iters" => tr.max_iters = parse_num(k, v)?,
            "beta" => tr.beta = parse_num(k, v)?,
            "kkt_tol" => tr.kkt_tol = parse_num(k, v)?,
            "adequacy_probes" => tr.adequacy_probes = parse_num(k, v)?,
            "quad.fit" => ql.fit = parse_num(k, v)?,
            "quad.fit_curvature" => ql.fit_curvature = parse_num(k, v)?,
            "quad.stationarity" => ql.stationarity = parse_num(k, v)?,
            "quad.complementarity" => ql.complementarity = parse_num(k, v)?,
            "quad.curvature" => ql.curvature = parse_num(k, v)?,
            "quad.parent" => ql.parent = parse_num(k, v)?,
            "quad.child" => ql.child = parse_num(k, v)?,
            "quad.cauchy" => ql.cauchy = parse_num(k, v)?,
            "quad.curvature_target" => ql.curvature_target = parse_num(k, v)?,
            "quad.shifted_curvature_target" => ql.shifted_curvature_target = parse_num(k, v)?,
            "quad.cauchy_factor" => ql.cauchy_factor = parse_num(k, v)?,
            "quad.restarts" => qs.restarts = parse_num(k, v)?,
            "quad.steps" => qs.steps = parse_num(k, v)?,
            "quad.learning_rate" => qs.learning_rate = parse_num(k, v)?,
            "quad.polish_iters" => qs.polish_iters = parse_num(k, v)?,
            "quad.seed" => qs.seed = parse_num(k, v)?,
            "bb.child" => {
                bb.child = v.parse::<ChildLoss>().map_err(|e| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })?
            }
            "bb.penalty" => bl.penalty = parse_num(k, v)?,
            "bb.cauchy" => bl.cauchy = parse_num(k, v)?,
            "bb.local" => bl.local = parse_num(k, v)?,
            "bb.agreement" => bl.agreement = parse_num(k, v)?,
            "bb.local_eigen" => bl.local_eigen = parse_num(k, v)?,
            "bb.local_gradient" => bl.local_gradient = parse_num(k, v)?,
            "bb.beta_p" => bl.beta_p = parse_num(k, v)?,
            "bb.beta_pp" => bl.beta_pp = parse_num(k, v)?,
            "bb.eta_pp" => bl.eta_pp = parse_num(k, v)?,
            "bb.eta3" => bl.eta3 = parse_num(k, v)?,
            "bb.eigen_target" => bl.eigen_target = parse_num(k, v)?,
            "bb.minor_targets" => bl.minor_targets = if v.is_empty() { Vec::new() } else { parse_list(k, v)? },
            "bb.kkt_stationarity" => bl.kkt_stationarity = parse_num(k, v)?,
            "bb.kkt_complementarity" => bl.kkt_complementarity = parse_num(k, v)?,
            "bb.kkt_curvature" => bl.kkt_curvature = parse_num(k, v)?,
            "bb.shifted_target" => bl.shifted_target = parse_num(k, v)?,
            "bb.combined_kkt" => bl.combined_kkt = parse_num(k, v)?,
            "bb.combined_agreement" => bl.combined_agreement = parse_num(k, v)?,
            "bb.epochs" => bb.train.epochs = parse_num(k, v)?,
            "bb.learning_rate" => bb.train.learning_rate = parse_num(k, v)?,
            "bb.train_seed" => bb.train.seed = parse_num(k, v)?,
            "bb.split_fraction" => bb.train.split_fraction = parse_num(k, v)?,
            "bb.optimizer" => bb.train.optimizer = parse_optimizer(k, v)?,
            "bb.patience" => bb.train.patience = parse_opt_usize(k, v)?,
            "bb.hidden" => bb.hidden = parse_opt_usize(k, v)?,
            "bb.bias" => bb.bias = parse_bool(k, v)?,
            "bb.n_w" => bb.n_w = parse_opt_usize(k, v)?,
            "bb.n_b" => bb.n_b = parse_opt_usize(k, v)?,
            "bb.gamma_moderate" => bb.gamma_moderate = parse_num(k, v)?,
            "bb.step_starts" => bb.step_starts = parse_num(k, v)?,
            "bb.step_iters" => bb.step_iters = parse_num(k, v)?,
            "bb.step_learning_rate" => bb.step_learning_rate = parse_num(k, v)?,
            "bb.refresh_every" => bb.refresh_every = parse_num(k, v)?,
            "bb.max_refreshes" => bb.max_refreshes = parse_num(k, v)?,
            "bb.relax_boundary" => bb.relax_boundary = parse_bool(k, v)?,
            "bb.relax_factor" => bb.relax_factor = parse_num(k, v)?,
            "bb.clarke_delta" => bb.clarke_delta = parse_num(k, v)?,
            "bb.clarke_dirs" => bb.clarke_dirs = parse_num(k, v)?,
            "bb.seed" => bb.seed = parse_num(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
        Ok(())
    }

    /// Resolves the problem and starting point and checks the budget.
    pub fn validate(&self) -> Result<(ntr_core::problems::Problem, Vec<f64>), ConfigError> {
        let problem = get_problem(&self.problem).map_err(|_| ConfigError::UnknownProblem(self.problem.clone()))?;
        let x0 = self.x0.clone().unwrap_or_else(|| problem.start.clone());
        if x0.len() != problem.dim {
            return Err(ConfigError::StartDimension {
                problem: self.problem.clone(),
                got: x0.len(),
                want: problem.dim,
            });
        }
        // A budget smaller than the initial set is allowed: the run stops
        // with `terminated_by=budget` once sampling exhausts it.
        if self.tr.budget == Some(0) {
            return Err(ConfigError::ZeroBudget);
        }
        self.tr.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.algorithm {
            Algorithm::QuadNtr => self.quad.loss.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            Algorithm::BlackboxNtr => {
                self.blackbox.validate(&self.tr).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                self.blackbox.loss.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            Algorithm::NewtonTr => {}
        }
        Ok((problem, x0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_prefixes() {
        let cfg = RunConfig::from_text(
            "# run\nproblem = rosenbrock\nalgorithm=newton_tr  # baseline\n\neta1 = 0.2\nquad.restarts = 5\nbb.child = ls\nbb.optimizer = momentum:0.5\nx0 = 1, 2\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, "rosenbrock");
        assert_eq!(cfg.algorithm, Algorithm::NewtonTr);
        assert_eq!(cfg.tr.eta1, 0.2);
        assert_eq!(cfg.quad.step.restarts, 5);
        assert_eq!(cfg.blackbox.child, ChildLoss::Kkt);
        assert_eq!(cfg.blackbox.train.optimizer, Optimizer::Momentum(0.5));
        assert_eq!(cfg.x0, Some(vec![1.0, 2.0]));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_text("eta9 = 1").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("eta9".into()));
        assert!(e.to_string().contains("eta9"));
    }

    #[test]
    fn syntax_and_value_errors() {
        assert_eq!(RunConfig::from_text("a\n").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(
            RunConfig::from_text("eta1 = fast").unwrap_err(),
            ConfigError::BadValue { .. }
        ));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        for k in RunConfig::KEYS {
            let mut cfg = RunConfig::default();
            let v = match *k {
                "problem" => "sphere",
                "algorithm" => "quad_ntr",
                "x0" | "bb.minor_targets" => "0.5,0.5",
                "trace" | "summary" => "out.txt",
                "bb.child" => "lbntr",
                "bb.optimizer" => "adam",
                "bb.bias" | "bb.relax_boundary" => "true",
                _ => "1",
            };
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn validation_resolves_problem_and_start() {
        let mut cfg = RunConfig::default();
        let (p, x0) = cfg.validate().unwrap();
        assert_eq!(p.name, "sphere");
        assert_eq!(x0, vec![2.0, 2.0]);
        cfg.problem = "nope".into();
        assert_eq!(cfg.validate().unwrap_err(), ConfigError::UnknownProblem("nope".into()));
        cfg.problem = "sphere".into();
        cfg.x0 = Some(vec![1.0]);
        assert!(matches!(cfg.validate().unwrap_err(), ConfigError::StartDimension { .. }));
    }
}
