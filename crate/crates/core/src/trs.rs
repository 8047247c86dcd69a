//! Exact solution of `min gᵀs + ½ sᵀHs  s.t. ‖s‖ ≤ Δ`.
//!
//! Works in the eigenbasis of `H`: the secular equation `‖s(w)‖ = Δ` is
//! solved by safeguarded Newton on `1/‖s(w)‖ − 1/Δ`, and the hard case
//! (gradient orthogonal to the bottom eigenspace) is completed along an
//! eigenvector.

use crate::linalg::{norm, sym_eigen, LinalgError, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrsSolution {
    pub step: Vec<f64>,
    /// Multiplier `w ≥ 0` with `(H + wI)s = −g`.
    pub multiplier: f64,
    pub on_boundary: bool,
    pub hard_case: bool,
}

/// Model value `gᵀs + ½ sᵀHs`.
pub fn quadratic_value(g: &[f64], h: &SymMatrix, s: &[f64]) -> f64 {
    crate::linalg::dot(g, s) + 0.5 * h.quad_form(s)
}

pub fn solve_trust_region(g: &[f64], h: &SymMatrix, delta: f64) -> Result<TrsSolution, LinalgError> {
    let n = g.len();
    if h.dim() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: h.dim(),
        });
    }
    let eig = sym_eigen(h)?;
    let lam = &eig.values;
    let ghat: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|i| eig.vectors[(i, k)] * g[i]).sum())
        .collect();
    let to_step = |coef: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|k| eig.vectors[(i, k)] * coef[k]).sum())
            .collect()
    };
    let scale = lam.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let gnorm = norm(g);
    let lmin = lam[0];
    let zero_tol = 1e-14 * scale;

    // s(w) in eigen coordinates; components with λ_k + w = 0 and ĝ_k = 0 drop out.
    let coef_at = |w: f64| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let d = lam[k] + w;
                if d.abs() <= zero_tol {
                    0.0
                } else {
                    -ghat[k] / d
                }
            })
            .collect()
    };

    if lmin > zero_tol {
        let c = coef_at(0.0);
        if norm(&c) <= delta {
            return Ok(TrsSolution {
                step: to_step(&c),
                multiplier: 0.0,
                on_boundary: false,
                hard_case: false,
            });
        }
    }

    let w_low = (-lmin).max(0.0);
    let bottom_tol = 1e-10 * gnorm.max(scale * delta);
    let bottom_weight: f64 = (0..n)
        .filter(|&k| (lam[k] - lmin).abs() <= 1e-10 * scale)
        .map(|k| ghat[k] * ghat[k])
        .sum::<f64>()
        .sqrt();

    if bottom_weight <= bottom_tol {
        // s(w_low) with the bottom eigenspace removed; reaching here with
        // ‖s‖ ≤ Δ implies λ_min ≤ 0.
        let mut c = coef_at(w_low);
        for k in 0..n {
            if (lam[k] - lmin).abs() <= 1e-10 * scale {
                c[k] = 0.0;
            }
        }
        let len = norm(&c);
        if len <= delta {
            if lmin >= -zero_tol {
                // Singular PSD Hessian with g in its range: the minimum-norm
                // stationary point is optimal.
                return Ok(TrsSolution {
                    step: to_step(&c),
                    multiplier: 0.0,
                    on_boundary: false,
                    hard_case: false,
                });
            }
            c[0] += (delta * delta - len * len).max(0.0).sqrt();
            return Ok(TrsSolution {
                step: to_step(&c),
                multiplier: w_low,
                on_boundary: true,
                hard_case: true,
            });
        }
    }

    // Boundary solution: find w > w_low with ‖s(w)‖ = Δ.
    let len_at = |w: f64| norm(&coef_at(w));
    let mut lo = w_low;
    let mut hi = w_low + gnorm / delta + scale + 1.0;
    while len_at(hi) > delta {
        hi *= 2.0;
    }
    let mut w = hi;
    for _ in 0..200 {
        let c = coef_at(w);
        let len = norm(&c);
        if (len - delta).abs() <= 1e-15 * delta {
            break;
        }
        if len > delta {
            lo = w;
        } else {
            hi = w;
        }
        // Newton on φ(w) = 1/‖s‖ − 1/Δ.
        let dlen: f64 = -(0..n)
            .map(|k| {
                let d = lam[k] + w;
                if d.abs() <= zero_tol {
                    0.0
                } else {
                    c[k] * c[k] / d
                }
            })
            .sum::<f64>()
            / len;
        let phi = 1.0 / len - 1.0 / delta;
        let dphi = -dlen / (len * len);
        let mut next = if dphi != 0.0 { w - phi / dphi } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 1e-16 * w.abs().max(1e-300) {
            w = next;
            break;
        }
        w = next;
    }
    let mut c = coef_at(w);
    let len = norm(&c);
    if len > 0.0 {
        for v in &mut c {
            *v *= delta / len;
        }
    }
    Ok(TrsSolution {
        step: to_step(&c),
        multiplier: w,
        on_boundary: true,
        hard_case: false,
    })
}
