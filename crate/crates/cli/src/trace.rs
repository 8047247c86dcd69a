//! Trace CSV, run summaries and plot-ready series.

use std::collections::HashMap;
use std::fmt::Write as _;

use ntr_core::trust_region::{OptimizationResult, TraceRecord};
use thiserror::Error;

/// Header of every trace file, in column order.
pub const TRACE_COLUMNS: [&str; 22] = [
    "iter",
    "evals",
    "f",
    "delta",
    "rho",
    "step_norm",
    "model_decrease",
    "accepted",
    "update",
    "kkt_stationarity",
    "kkt_complementarity",
    "kkt_curvature",
    "train_mse",
    "test_mse",
    "loss_delta",
    "loss_cauchy",
    "loss_local",
    "loss_agreement",
    "clarke",
    "n_w",
    "n_b",
    "x",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    BadValue { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn row(r: &TraceRecord) -> Vec<String> {
    let kkt = r.kkt;
    let nd = &r.neural;
    vec![
        r.iter.to_string(),
        r.evals.to_string(),
        fmt_f64(r.f),
        fmt_f64(r.delta),
        opt_f64(r.rho),
        opt_f64(r.step_norm),
        opt_f64(r.model_decrease),
        r.accepted.to_string(),
        r.update.to_string(),
        opt_f64(kkt.map(|k| k.stationarity)),
        opt_f64(kkt.map(|k| k.complementarity)),
        opt_f64(kkt.map(|k| k.curvature)),
        opt_f64(nd.train_mse),
        opt_f64(nd.test_mse),
        opt_f64(nd.loss_delta),
        opt_f64(nd.loss_cauchy),
        opt_f64(nd.loss_local),
        opt_f64(nd.loss_agreement),
        opt_f64(nd.clarke),
        opt_usize(nd.n_w),
        opt_usize(nd.n_b),
        r.x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"),
    ]
}

pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS).expect("writing to memory");
    for r in records {
        w.write_record(row(r)).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is UTF-8")
}

/// Final state of a run as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_x: Vec<f64>,
    pub final_f: f64,
    pub evals: usize,
    pub iters: usize,
    pub terminated_by: String,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn from_result(res: &OptimizationResult, wall_time: f64) -> Self {
        Self {
            final_x: res.x.clone(),
            final_f: res.f,
            evals: res.evals,
            iters: res.iters,
            terminated_by: res.terminated_by.to_string(),
            wall_time,
        }
    }

    pub fn to_text(&self) -> String {
        let x: Vec<String> = self.final_x.iter().map(|v| fmt_f64(*v)).collect();
        let mut s = String::new();
        writeln!(s, "final_x={}", x.join(";")).unwrap();
        writeln!(s, "final_f={}", fmt_f64(self.final_f)).unwrap();
        writeln!(s, "evals={}", self.evals).unwrap();
        writeln!(s, "iters={}", self.iters).unwrap();
        writeln!(s, "terminated_by={}", self.terminated_by).unwrap();
        writeln!(s, "wall_time={:.6}", self.wall_time).unwrap();
        s
    }

    /// Reads the `key=value` form back.
    pub fn parse(text: &str) -> Option<Self> {
        let map: HashMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let final_x = map
            .get("final_x")?
            .split(';')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().ok())
            .collect::<Option<Vec<f64>>>()?;
        Some(Self {
            final_x,
            final_f: map.get("final_f")?.parse().ok()?,
            evals: map.get("evals")?.parse().ok()?,
            iters: map.get("iters")?.parse().ok()?,
            terminated_by: map.get("terminated_by")?.to_string(),
            wall_time: map.get("wall_time")?.parse().ok()?,
        })
    }
}

/// Two-column series extracted from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub x_label: &'static str,
    pub y_label: &'static str,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {} {}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            writeln!(s, "{} {}", fmt_f64(*x), fmt_f64(*y)).unwrap();
        }
        s
    }
}

/// `f` against evaluations, `Δ` against iterations and `ρ` against
/// iterations. Rows without a ratio are skipped in the last series.
pub fn plot_series(trace: &str) -> Result<Vec<Series>, TraceError> {
    let mut rdr = csv::Reader::from_reader(trace.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    };
    let (ci, ce, cf, cd, cr) = (col("iter")?, col("evals")?, col("f")?, col("delta")?, col("rho")?);
    let mut specs = [
        Series { name: "f_vs_evals", x_label: "evals", y_label: "f", points: Vec::new() },
        Series { name: "delta_vs_iter", x_label: "iter", y_label: "delta", points: Vec::new() },
        Series { name: "rho_vs_iter", x_label: "iter", y_label: "rho", points: Vec::new() },
    ];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<Option<f64>, TraceError> {
            let v = rec.get(c).unwrap_or("");
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| TraceError::BadValue {
                row: i + 1,
                column: headers[c].to_string(),
                value: v.to_string(),
            })
        };
        let need = |c: usize| -> Result<f64, TraceError> {
            get(c)?.ok_or_else(|| TraceError::BadValue {
                row: i + 1,
                column: headers[c].to_string(),
                value: String::new(),
            })
        };
        let (it, ev) = (need(ci)?, need(ce)?);
        specs[0].points.push((ev, need(cf)?));
        specs[1].points.push((it, need(cd)?));
        if let Some(r) = get(cr)? {
            specs[2].points.push((it, r));
        }
    }
    Ok(specs.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ntr_core::trust_region::{KktResiduals, NeuralDiagnostics, UpdateKind};

    fn record(iter: usize, rho: Option<f64>) -> TraceRecord {
        TraceRecord {
            iter,
            evals: 6 + iter,
            f: 1.0 / (iter + 1) as f64,
            delta: 0.5,
            rho,
            step_norm: Some(0.25),
            model_decrease: Some(0.1),
            accepted: rho.is_some(),
            update: UpdateKind::SuccessSwap,
            kkt: Some(KktResiduals::default()),
            neural: NeuralDiagnostics::default(),
            decrease_ok: None,
            x: vec![0.1, -0.2],
        }
    }

    #[test]
    fn csv_header_and_types() {
        let text = trace_csv(&[record(0, Some(0.9)), record(1, None)]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), TRACE_COLUMNS.len());
        assert_eq!(first[7], "true");
        assert_eq!(first[8], "success-swap");
        assert_eq!(first[21].split(';').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>(), vec![0.1, -0.2]);
        assert_eq!(first[2].parse::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn series_skip_missing_ratios() {
        let s = plot_series(&trace_csv(&[record(0, Some(0.9)), record(1, None)])).unwrap();
        assert_eq!(s[0].points, vec![(6.0, 1.0), (7.0, 0.5)]);
        assert_eq!(s[1].points.len(), 2);
        assert_eq!(s[2].points, vec![(0.0, 0.9)]);
    }

    #[test]
    fn missing_column_is_reported() {
        let e = plot_series("iter,evals,f\n0,1,2\n").unwrap_err();
        assert!(matches!(e, TraceError::MissingColumn(c) if c == "delta"));
    }

    #[test]
    fn summary_round_trips() {
        let s = RunSummary {
            final_x: vec![1.0, 2.0],
            final_f: 0.5,
            evals: 10,
            iters: 3,
            terminated_by: "delta".into(),
            wall_time: 0.25,
        };
        assert_eq!(RunSummary::parse(&s.to_text()).unwrap(), s);
    }
}
