//! Acceptance suite: one `criterion N [name]: pass|fail (details)` line per
//! criterion. Tolerances and runtime limits are pinned below; the process
//! exits nonzero when any criterion fails.

use std::f64::consts::E;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ntr_harness::checks::derivative_oracle;
use ntr_harness::config::{Algorithm, RunConfig};
use ntr_harness::solve::solve;
use ntr_core::interp::{
    basis_prefix, poisedness_determinant, select_exit_point_inadequate, BlockedPointSet, QuadOrder, Term,
};
use ntr_core::linalg::{self, norm, Matrix, SymMatrix};
use ntr_core::neural::{build_hypercube_approximator, cube_grid, Activation};
use ntr_core::problems::get_problem;
use ntr_core::sampling::rng_from_seed;
use ntr_core::tr_blackbox::clarke_stationarity_proxy;
use ntr_core::tr_quadratic::{solve_step_quadratic, LossWeightsQuad, QuadStepConfig};
use ntr_core::trust_region::initial_pattern;
use rand::Rng;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ntr-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn cli(args: &[&str]) -> ntr_harness::Outcome {
    ntr_harness::run(std::iter::once("ntr").chain(args.iter().copied()))
}

/// Polynomials from `basis` output: label, then coefficients by term name.
fn parse_tables(out: &str, header: &str) -> Vec<(String, Vec<(String, f64)>)> {
    let mut tables: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let mut open = false;
    for line in out.lines() {
        if let Some(rest) = line.strip_prefix(header) {
            tables.push((rest.trim().to_string(), Vec::new()));
            open = true;
        } else if let (true, Some(row)) = (open, line.strip_prefix("  ")) {
            let mut it = row.split_whitespace();
            let (t, v) = (it.next().unwrap(), it.next().unwrap());
            tables.last_mut().unwrap().1.push((t.to_string(), v.parse().unwrap()));
        } else {
            open = false;
        }
    }
    tables
}

fn coeff(table: &[(String, f64)], term: Term) -> f64 {
    let name = term.to_string();
    table.iter().find(|(t, _)| *t == name).map(|(_, v)| *v).unwrap()
}

fn line_value(out: &str, key: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(|r| r.trim().to_string()))
}

const EXAMPLE1: &str = "dim 2\n0 0 0\n1 0.5 0\n1 0 0.5\n2 1 0\n2 0.5 0.5\n2 0 1\n";
const EXAMPLE2: &str = "dim 2\n0 0 0\n1 1 0\n1 0 2\n2 3 0\n2 1 2\n2 2 1\n";

fn example3_f(x: f64, y: f64) -> f64 {
    (x - 2.0).powi(4) + (y - 1.0).powi(3) + (x + y).exp()
}

fn c1_example1() -> Verdict {
    let path = scratch("example1.txt");
    std::fs::write(&path, EXAMPLE1).unwrap();
    let out = cli(&["basis", path.to_str().unwrap(), "--paper-order"]);
    let tables = parse_tables(&out.stdout, "poly ");
    let want: [&[(Term, f64)]; 6] = [
        &[(Term::Const, 1.0)],
        &[(Term::Linear(0), 2.0)],
        &[(Term::Linear(1), 2.0)],
        &[(Term::Quad(0, 0), 2.0), (Term::Linear(0), -1.0)],
        &[(Term::Quad(0, 1), 4.0)],
        &[(Term::Quad(1, 1), 2.0), (Term::Linear(1), -1.0)],
    ];
    let mut worst = 0.0_f64;
    for ((_, table), w) in tables.iter().zip(want) {
        for t in ntr_core::interp::terms(2) {
            let expect = w.iter().find(|(wt, _)| *wt == t).map(|(_, c)| *c).unwrap_or(0.0);
            worst = worst.max((coeff(table, t) - expect).abs());
        }
    }
    let complete = line_value(&out.stdout, "status") == Some("complete".into());
    verdict(
        out.code == 0 && tables.len() == 6 && complete && worst <= 1e-12,
        format!("polys={} complete={complete} max_coeff_err={worst:.3e}", tables.len()),
    )
}

fn c2_example2() -> Verdict {
    let path = scratch("example2.txt");
    std::fs::write(&path, EXAMPLE2).unwrap();
    let out = cli(&["basis", path.to_str().unwrap(), "--paper-order", "--quad-order", "squares-first"]);
    let incomplete = line_value(&out.stdout, "status") == Some("incomplete".into());
    let at_n22 = line_value(&out.stdout, "failure").is_some_and(|f| f.starts_with("N_2^[2] "));
    let set = BlockedPointSet::parse(EXAMPLE2).unwrap();
    let d = poisedness_determinant(&set, &basis_prefix(2, QuadOrder::SquaresFirst, set.block_sizes())).unwrap();
    verdict(
        out.code == 0 && incomplete && at_n22 && d.abs() <= 1e-10,
        format!("incomplete={incomplete} failure_at_N_2^[2]={at_n22} determinant={d:.6e} (need |D| <= 1e-10)"),
    )
}

fn c3_example3() -> Verdict {
    let pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 0.0), (1.0, 1.0), (0.0, 2.0)];
    let blocks = [0, 1, 1, 2, 2, 2];
    let mut text = String::from("dim 2\n");
    for (&(x, y), b) in pts.iter().zip(blocks) {
        text.push_str(&format!("{b} {x} {y} {:.17e}\n", example3_f(x, y)));
    }
    let path = scratch("example3.txt");
    std::fs::write(&path, text).unwrap();
    let out = cli(&["basis", path.to_str().unwrap(), "--paper-order"]);
    let tables = parse_tables(&out.stdout, "model");
    let Some((_, m)) = tables.first() else {
        return verdict(false, format!("no model printed (exit {})", out.code));
    };
    // Regroup c0 + a1 x1 + a2 x2 + q11 x1² + q12 x1x2 + q22 x2² as
    // c0 + A x1 + B x2 + C(x1² − x1) + D x1x2 + F(x2² − x2).
    let (q11, q12, q22) = (coeff(m, Term::Quad(0, 0)), coeff(m, Term::Quad(0, 1)), coeff(m, Term::Quad(1, 1)));
    let got = [
        coeff(m, Term::Const),
        coeff(m, Term::Linear(0)) + q11,
        coeff(m, Term::Linear(1)) + q22,
        q11,
        q12,
        q22,
    ];
    let e2 = E * E;
    let want = [
        16.0,
        E - 16.0,
        E,
        (e2 - 2.0 * E + 11.0) / 2.0,
        e2 - 2.0 * E - 2.0,
        (e2 - 2.0 * E + 1.0) / 2.0,
    ];
    let rel: Vec<f64> = got.iter().zip(want).map(|(g, w)| (g - w).abs() / w.abs()).collect();
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    let bad: Vec<usize> = (0..6).filter(|&i| rel[i] > 1e-10).collect();
    let residual: f64 = line_value(&out.stdout, "max_residual").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
    verdict(
        worst <= 1e-10 && residual <= 1e-9,
        format!("max_rel_err={worst:.3e} mismatched_coeffs={bad:?} max_residual={residual:.3e}"),
    )
}

fn c4_derivatives() -> Verdict {
    let r = derivative_oracle(50, 2024);
    verdict(
        r.gradient_error <= 1e-5 && r.hessian_error <= 1e-4 && r.asymmetry == 0.0 && r.closed_form_nets > 0 && r.closed_form_error <= 1e-12,
        format!(
            "nets={} grad_err={:.3e} hess_err={:.3e} asym={:.1e} closed_form_nets={} closed_form_err={:.3e}",
            r.nets, r.gradient_error, r.hessian_error, r.asymmetry, r.closed_form_nets, r.closed_form_error
        ),
    )
}

fn c5_kkt() -> Verdict {
    let mut worst_newton = 0.0_f64;
    let mut worst_w = 0.0_f64;
    let mut worst_norm = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    for k in 0..20u64 {
        let mut rng = rng_from_seed(500 + k);
        let n = rng.random_range(1..=5);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = SymMatrix::from_upper(n, |i, j| {
            (0..n).map(|q| a[(q, i)] * a[(q, j)]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
        });
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| linalg::dot(&g, x) + 0.5 * h.quad_form(x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let newton = linalg::solve_linear(h.as_matrix(), &neg_g).unwrap();
        let x = vec![0.0; n];
        let mut set = BlockedPointSet::new(n);
        for (b, pts) in initial_pattern(&x, norm(&newton)).into_iter().enumerate() {
            for y in pts {
                let v = f(&y);
                set.push(b, y, Some(v)).unwrap();
            }
        }
        let (lw, opts) = (LossWeightsQuad::default(), QuadStepConfig::default());
        let big = solve_step_quadratic(&set, &x, 0.0, 10.0 * norm(&newton), &lw, &opts, None).unwrap();
        worst_newton = worst_newton.max(linalg::distance(&big.step, &newton) / norm(&newton));
        worst_w = worst_w.max(big.weights.multiplier());
        let delta = 0.1 * norm(&newton);
        let small = solve_step_quadratic(&set, &x, 0.0, delta, &lw, &opts, None).unwrap();
        worst_norm = worst_norm.max((norm(&small.step) - delta).abs());
        let kk = small.diagnostics.kkt;
        worst_kkt = worst_kkt.max(kk.stationarity).max(kk.complementarity).max(kk.curvature);
    }
    verdict(
        worst_newton <= 1e-3 && worst_w <= 1e-4 && worst_norm <= 1e-5 && worst_kkt <= 1e-4,
        format!("newton_rel_err={worst_newton:.3e} w*={worst_w:.3e} |norm-delta|={worst_norm:.3e} kkt={worst_kkt:.3e}"),
    )
}

fn c6_descent() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for problem in ["sphere", "sphere5"] {
        let mut cfg = RunConfig {
            problem: problem.into(),
            algorithm: Algorithm::QuadNtr,
            ..Default::default()
        };
        cfg.tr.max_iters = 200;
        cfg.tr.beta = 1e-6;
        let t = Instant::now();
        let out = solve(&cfg).unwrap();
        let res = &out.result;
        let mut violations = 0;
        let mut last_f = f64::INFINITY;
        let mut monotone = true;
        for r in res.trace.iter().filter(|r| r.accepted) {
            let s = r.step_norm.unwrap_or(0.0);
            if r.model_decrease.unwrap_or(f64::NEG_INFINITY) < 1e-6 * s * s {
                violations += 1;
            }
            monotone &= r.f <= last_f;
            last_f = r.f;
        }
        let stop = res.terminated_by.to_string();
        let stop_ok = matches!(stop.as_str(), "delta" | "stationarity");
        let dt = t.elapsed();
        ok &= res.f <= 1e-3 && res.iters <= 200 && violations == 0 && monotone && stop_ok && dt < Duration::from_secs(120);
        parts.push(format!(
            "{problem}: f={:.3e} iters={} decrease_violations={violations} monotone={monotone} stop={stop} {:.1}s",
            res.f,
            res.iters,
            dt.as_secs_f64()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c7_blackbox() -> Verdict {
    let run = |problem: &str, budget: usize| {
        let mut cfg = RunConfig {
            problem: problem.into(),
            algorithm: Algorithm::BlackboxNtr,
            ..Default::default()
        };
        cfg.tr.budget = Some(budget);
        solve(&cfg).unwrap()
    };
    let a = run("example3", 800);
    let b = run("l1norm", 1000);
    let l1 = get_problem("l1norm").unwrap();
    let f = |x: &[f64]| l1.evaluate(x);
    let x1: f64 = b.result.x.iter().map(|v| v.abs()).sum();
    let clarke = clarke_stationarity_proxy(&f, &b.result.x, 1e-2, 16, 0);
    let leaks = a.holdout_leaks.unwrap() + b.holdout_leaks.unwrap();
    verdict(
        a.result.f < 15.5 && x1 <= 0.05 && clarke >= -1e-3 && leaks == 0,
        format!(
            "example3 f={:.6e} evals={}; l1norm |x|_1={x1:.3e} clarke={clarke:.3e} evals={}; leaks={leaks}",
            a.result.f, a.result.evals, b.result.evals
        ),
    )
}

fn sup_error(edge: f64) -> f64 {
    let cubes: Vec<_> = cube_grid(1, 0.0, 1.0, edge)
        .into_iter()
        .map(|c| {
            let v = c.center()[0];
            (c, v)
        })
        .collect();
    let net = build_hypercube_approximator(&cubes, Activation::Step).unwrap();
    (0..10_000)
        .map(|k| {
            let x = (k as f64 + 0.5) / 10_000.0;
            (net.value(&[x]) - x).abs()
        })
        .fold(0.0, f64::max)
}

fn c8_hypercube() -> Verdict {
    let ratio = sup_error(1.0 / 8.0) / sup_error(1.0 / 4.0);
    let cubes: Vec<_> = cube_grid(1, 0.0, 1.0, 1.0 / 8.0)
        .into_iter()
        .map(|c| {
            let v = c.center()[0];
            (c, v)
        })
        .collect();
    let net = build_hypercube_approximator(&cubes, Activation::Step).unwrap();
    let mismatches = (0..1000)
        .filter(|&k| {
            let x = [(k as f64 + 0.5) / 1000.0];
            let reference: f64 = cubes.iter().map(|(c, v)| if c.contains(&x) { *v } else { 0.0 }).sum();
            net.value(&x) != reference
        })
        .count();
    verdict(
        (0.4..=0.6).contains(&ratio) && mismatches == 0,
        format!("sup_error_ratio={ratio:.6} exact_mismatches={mismatches}/1000"),
    )
}

fn c9_determinism() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (alg, problem, budget) in [("newton_tr", "rosenbrock", "300"), ("quad_ntr", "sphere", "200"), ("blackbox_ntr", "example3", "200")] {
        let traces: Vec<Vec<u8>> = (0..2)
            .map(|rep| {
                let path = scratch(&format!("det_{alg}_{rep}.csv"));
                let summary = scratch(&format!("det_{alg}_{rep}.txt"));
                let out = cli(&[
                    "solve", "--problem", problem, "--algorithm", alg, "--seed", "7", "--budget", budget, "--trace",
                    path.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
                ]);
                assert_eq!(out.code, 0, "{}", out.stderr);
                std::fs::read(path).unwrap()
            })
            .collect();
        let same = traces[0] == traces[1] && !traces[0].is_empty();
        ok &= same;
        parts.push(format!("{alg}={}", if same { "identical" } else { "differs" }));
    }
    verdict(ok, parts.join(" "))
}

fn c10_geometry() -> Verdict {
    let beta = basis_prefix(2, QuadOrder::Lex, [1, 2, 3]);
    let mut never_worse = 0;
    let mut tenfold = 0;
    let mut small_inputs = 0;
    for k in 0..100u64 {
        let mut rng = rng_from_seed(9000 + k);
        let center = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let radius = rng.random_range(0.5..1.0);
        // Six points on a circle are degenerate for quadratics; a tiny
        // perturbation makes the determinant small but nonzero.
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let jitter = 1e-9 * rng.random_range(-1.0..1.0);
                vec![center[0] + (radius + jitter) * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        let set = BlockedPointSet::from_blocks(2, [pts[..1].to_vec(), pts[1..3].to_vec(), pts[3..].to_vec()]).unwrap();
        let d0 = poisedness_determinant(&set, &beta).unwrap().abs();
        if d0 < 1e-6 {
            small_inputs += 1;
        }
        let d1 = match select_exit_point_inadequate(&set, &center, radius, &beta, 64) {
            Ok((i, y)) => {
                let mut next = set.clone();
                next.replace(i, y, None);
                poisedness_determinant(&next, &beta).unwrap().abs()
            }
            Err(_) => d0,
        };
        if d1 >= d0 {
            never_worse += 1;
        }
        if d0 < 1e-6 && d1 > 10.0 * d0 {
            tenfold += 1;
        }
    }
    verdict(
        never_worse == 100 && tenfold >= 95,
        format!("non_decreasing={never_worse}/100 tenfold_gain={tenfold}/{small_inputs} (inputs with |D|<1e-6)"),
    )
}

type Criterion = (&'static str, fn() -> Verdict, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("example1_golden", c1_example1, Duration::from_secs(1)),
        ("example2_golden", c2_example2, Duration::from_secs(1)),
        ("example3_golden", c3_example3, Duration::from_secs(1)),
        ("derivative_oracles", c4_derivatives, Duration::from_secs(30)),
        ("kkt_suite", c5_kkt, Duration::from_secs(120)),
        ("algorithm1_descent", c6_descent, Duration::from_secs(240)),
        ("algorithm2_suites", c7_blackbox, Duration::from_secs(300)),
        ("hypercube_construction", c8_hypercube, Duration::from_secs(10)),
        ("determinism", c9_determinism, Duration::from_secs(60)),
        ("geometry_improvement", c10_geometry, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let dt = t.elapsed();
        let ok = v.ok && dt <= *limit;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} [{name}]: {} ({}; {:.2}s of {}s)",
            i + 1,
            if ok { "pass" } else { "fail" },
            v.detail,
            dt.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
