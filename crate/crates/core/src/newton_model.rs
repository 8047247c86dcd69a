//! Quadratic interpolation models assembled from a Newton basis by
//! generalized finite differences.

use thiserror::Error;

use crate::interp::{BlockedPointSet, InterpError, MonomialPoly, NewtonBasis};
use crate::linalg::{self, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("Newton basis is incomplete")]
    IncompleteBasis,
    #[error("coefficient layout does not match the basis")]
    CountMismatch,
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// `m(x) = c + gᵀ(x − z) + ½(x − z)ᵀB(x − z)` about the center `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub center: Vec<f64>,
    pub constant: f64,
    pub gradient: Vec<f64>,
    pub hessian: SymMatrix,
}

impl QuadraticModel {
    pub fn zero(center: &[f64]) -> Self {
        let n = center.len();
        Self {
            center: center.to_vec(),
            constant: 0.0,
            gradient: vec![0.0; n],
            hessian: SymMatrix::zeros(n),
        }
    }

    /// Model of a monomial polynomial about `center`.
    pub fn from_poly(p: &MonomialPoly, center: &[f64]) -> Self {
        Self {
            center: center.to_vec(),
            constant: p.eval(center),
            gradient: p.gradient(center),
            hessian: p.hessian(),
        }
    }

    pub fn to_poly(&self) -> MonomialPoly {
        MonomialPoly::from_quadratic(&self.center, self.constant, &self.gradient, &self.hessian)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let s = linalg::sub(x, &self.center);
        self.constant + self.step_value(&s)
    }

    /// `gᵀs + ½ sᵀBs`, the change from the center along `s`.
    pub fn step_value(&self, s: &[f64]) -> f64 {
        linalg::dot(&self.gradient, s) + 0.5 * self.hessian.quad_form(s)
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        let s = linalg::sub(x, &self.center);
        linalg::add(&self.gradient, &self.hessian.mul_vec(&s))
    }

    /// The same quadratic expanded about another center.
    pub fn recentered(&self, center: &[f64]) -> Self {
        Self {
            center: center.to_vec(),
            constant: self.evaluate(center),
            gradient: self.gradient_at(center),
            hessian: self.hessian.clone(),
        }
    }
}

/// `λ_l(y_j^[l])` at the pivot points, per block.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceCoefficients {
    pub lambdas: Vec<Vec<f64>>,
}

/// Runs `λ_0 = f`, `λ_{l+1} = λ_l − Σ_j λ_l(y_j^[l]) N_j^[l]` on the point
/// values only.
pub fn generalized_finite_differences(
    points: &BlockedPointSet,
    basis: &NewtonBasis,
) -> Result<DifferenceCoefficients, ModelError> {
    if !basis.complete {
        return Err(ModelError::IncompleteBasis);
    }
    let pts = points.points();
    let mut lambda = points.values()?;
    let mut out = Vec::with_capacity(basis.polys.len());
    for (polys, pivots) in basis.polys.iter().zip(&basis.pivots) {
        let coeffs: Vec<f64> = pivots.iter().map(|&k| lambda[k]).collect();
        for (y, lam) in pts.iter().zip(lambda.iter_mut()) {
            for (p, c) in polys.iter().zip(&coeffs) {
                *lam -= c * p.eval(y);
            }
        }
        out.push(coeffs);
    }
    Ok(DifferenceCoefficients { lambdas: out })
}

/// Expands `Σ λ_l(y_j^[l]) N_j^[l]` and returns it as a model about `center`.
pub fn assemble_model(
    basis: &NewtonBasis,
    coeffs: &DifferenceCoefficients,
    center: &[f64],
) -> Result<QuadraticModel, ModelError> {
    if !basis.complete {
        return Err(ModelError::IncompleteBasis);
    }
    if coeffs.lambdas.len() != basis.polys.len()
        || coeffs
            .lambdas
            .iter()
            .zip(&basis.polys)
            .any(|(c, p)| c.len() != p.len())
    {
        return Err(ModelError::CountMismatch);
    }
    let mut poly = MonomialPoly::zero(center.len());
    for (polys, cs) in basis.polys.iter().zip(&coeffs.lambdas) {
        for (p, &c) in polys.iter().zip(cs) {
            poly.axpy(c, p);
        }
    }
    Ok(QuadraticModel::from_poly(&poly, center))
}

/// Basis construction, differences and assembly in one call.
pub fn interpolate(
    points: &BlockedPointSet,
    basis: &NewtonBasis,
    center: &[f64],
) -> Result<QuadraticModel, ModelError> {
    let coeffs = generalized_finite_differences(points, basis)?;
    assemble_model(basis, &coeffs, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{build_newton_basis, BasisOptions, PivotRule, QuadOrder};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn example3_f(x: &[f64]) -> f64 {
        (x[0] - 2.0).powi(4) + (x[1] - 1.0).powi(3) + (x[0] + x[1]).exp()
    }

    fn example3_set() -> BlockedPointSet {
        let mut s = BlockedPointSet::new(2);
        let blocks = [
            vec![[0.0, 0.0]],
            vec![[1.0, 0.0], [0.0, 1.0]],
            vec![[2.0, 0.0], [1.0, 1.0], [0.0, 2.0]],
        ];
        for (b, pts) in blocks.iter().enumerate() {
            for p in pts {
                s.push(b, p.to_vec(), Some(example3_f(p))).unwrap();
            }
        }
        s
    }

    fn paper_opts() -> BasisOptions {
        BasisOptions {
            pivot: PivotRule::PaperOrder,
            ..Default::default()
        }
    }

    #[test]
    fn example3_first_differences() {
        let s = example3_set();
        let b = build_newton_basis(&s, &paper_opts()).unwrap();
        let d = generalized_finite_differences(&s, &b).unwrap();
        assert_relative_eq!(d.lambdas[0][0], 16.0, epsilon = 1e-12);
        assert_relative_eq!(d.lambdas[1][0], E - 16.0, epsilon = 1e-12);
        assert_relative_eq!(d.lambdas[1][1], E, epsilon = 1e-12);
    }

    #[test]
    fn example3_interpolates() {
        let s = example3_set();
        let b = build_newton_basis(&s, &paper_opts()).unwrap();
        let m = interpolate(&s, &b, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(m.evaluate(&[0.0, 0.0]), 16.0, epsilon = 1e-12);
        assert_relative_eq!(m.evaluate(&[1.0, 1.0]), 1.0 + E * E, epsilon = 1e-12);
        for p in s.iter() {
            assert!((m.evaluate(&p.x) - p.value.unwrap()).abs() <= 1e-9 * 17.0);
        }
    }

    #[test]
    fn constant_function() {
        let mut s = example3_set();
        for k in 0..s.len() {
            s.get_mut(k).value = Some(4.5);
        }
        let b = build_newton_basis(&s, &BasisOptions::default()).unwrap();
        let d = generalized_finite_differences(&s, &b).unwrap();
        assert_eq!(d.lambdas[0], vec![4.5]);
        assert!(d.lambdas[1..].iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn newton_polynomial_gives_kronecker_coefficients() {
        let mut s = example3_set();
        let b = build_newton_basis(&s, &paper_opts()).unwrap();
        let target = b.polys[1][1].clone();
        for k in 0..s.len() {
            let v = target.eval(&s.get(k).x.clone());
            s.get_mut(k).value = Some(v);
        }
        let d = generalized_finite_differences(&s, &b).unwrap();
        for (l, cs) in d.lambdas.iter().enumerate() {
            for (j, &c) in cs.iter().enumerate() {
                let want = if (l, j) == (1, 1) { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 1e-12, "λ at ({l},{j}) = {c}");
            }
        }
    }

    #[test]
    fn zero_function_gives_zero_model() {
        let mut s = example3_set();
        for k in 0..s.len() {
            s.get_mut(k).value = Some(0.0);
        }
        let b = build_newton_basis(&s, &BasisOptions::default()).unwrap();
        let m = interpolate(&s, &b, &[0.0, 0.0]).unwrap();
        assert_eq!(m.to_poly(), MonomialPoly::zero(2));
    }

    #[test]
    fn incomplete_basis_is_rejected() {
        let mut s = BlockedPointSet::new(2);
        for (b, p) in [(0, [0.0, 0.0]), (1, [1.0, 0.0]), (1, [0.0, 2.0]), (2, [3.0, 0.0]), (2, [1.0, 2.0]), (2, [2.0, 1.0])] {
            s.push(b, p.to_vec(), Some(1.0)).unwrap();
        }
        let opts = BasisOptions {
            pivot: PivotRule::PaperOrder,
            quad_order: QuadOrder::SquaresFirst,
            ..Default::default()
        };
        let b = build_newton_basis(&s, &opts).unwrap();
        assert_eq!(generalized_finite_differences(&s, &b), Err(ModelError::IncompleteBasis));
    }

    #[test]
    fn pivot_order_does_not_change_the_model() {
        let s = example3_set();
        let a = interpolate(&s, &build_newton_basis(&s, &paper_opts()).unwrap(), &[0.0, 0.0]).unwrap();
        let b = interpolate(&s, &build_newton_basis(&s, &BasisOptions::default()).unwrap(), &[0.0, 0.0]).unwrap();
        for (x, y) in a.to_poly().coeffs().iter().zip(b.to_poly().coeffs()) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn recentering_is_exact() {
        let s = example3_set();
        let m = interpolate(&s, &build_newton_basis(&s, &paper_opts()).unwrap(), &[0.0, 0.0]).unwrap();
        let r = m.recentered(&[0.7, -0.3]);
        for x in [[0.1, 0.2], [1.5, -2.0], [0.0, 0.0]] {
            assert_relative_eq!(m.evaluate(&x), r.evaluate(&x), max_relative = 1e-12);
        }
    }

    fn random_quadratic_case(n: usize) -> impl Strategy<Value = (BlockedPointSet, f64, Vec<f64>, SymMatrix)> {
        let q = crate::interp::term_count(n);
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), q),
            -2.0..2.0f64,
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n * n),
        )
            .prop_filter_map("poised", move |(pts, c, g, h)| {
                let hm = SymMatrix::from_upper(n, |i, j| h[i * n + j]);
                let f = |x: &[f64]| c + linalg::dot(&g, x) + 0.5 * hm.quad_form(x);
                let mut s = BlockedPointSet::new(n);
                let mut k = 0;
                for b in 0..3 {
                    for _ in 0..BlockedPointSet::max_block_len(n, b) {
                        let v = f(&pts[k]);
                        s.push(b, pts[k].clone(), Some(v)).ok()?;
                        k += 1;
                    }
                }
                s.validate().ok()?;
                let basis = crate::interp::natural_basis(n, QuadOrder::Lex).concat();
                let d = crate::interp::poisedness_determinant(&s, &basis).ok()?;
                (d.abs() > 1e-3).then_some((s, c, g, hm))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn quadratic_reproduction((s, c, g, h) in (1usize..=3).prop_flat_map(random_quadratic_case)) {
            let n = g.len();
            let b = build_newton_basis(&s, &BasisOptions::default()).unwrap();
            let m = interpolate(&s, &b, &vec![0.0; n]).unwrap();
            prop_assert!((m.constant - c).abs() <= 1e-8 * (1.0 + c.abs()));
            for i in 0..n {
                prop_assert!((m.gradient[i] - g[i]).abs() <= 1e-8 * (1.0 + g[i].abs()));
                for j in 0..n {
                    prop_assert!((m.hessian.get(i, j) - h.get(i, j)).abs() <= 1e-8 * (1.0 + h.get(i, j).abs()));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn interpolation_residuals(
            (s, _, _, _) in (1usize..=3).prop_flat_map(random_quadratic_case),
            a in -1.0..1.0f64,
        ) {
            let mut s = s;
            let f = |x: &[f64]| (a * x[0]).sin() + x.iter().map(|v| v.exp()).sum::<f64>();
            for k in 0..s.len() {
                let v = f(&s.get(k).x.clone());
                s.get_mut(k).value = Some(v);
            }
            let n = s.dim();
            let b = build_newton_basis(&s, &BasisOptions::default()).unwrap();
            let m = interpolate(&s, &b, &vec![0.0; n]).unwrap();
            let fmax = s.iter().map(|p| p.value.unwrap().abs()).fold(0.0, f64::max);
            for p in s.iter() {
                prop_assert!((m.evaluate(&p.x) - p.value.unwrap()).abs() <= 1e-9 * (1.0 + fmax));
            }
        }
    }
}
