//! Newton basis report for a point-set file.

use std::fmt::Write as _;

use ntr_core::interp::{
    basis_prefix, build_newton_basis, poisedness_determinant, terms, BasisOptions, BlockedPointSet, InterpError,
    MonomialPoly, NewtonBasis,
};
use ntr_core::newton_model::{interpolate, QuadraticModel};

use crate::trace::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisReport {
    pub set: BlockedPointSet,
    pub basis: NewtonBasis,
    pub determinant: f64,
    /// Interpolation model about the first point, when values are given
    /// and the basis is complete.
    pub model: Option<QuadraticModel>,
    pub max_residual: Option<f64>,
}

pub fn basis_report(text: &str, opts: &BasisOptions) -> Result<BasisReport, InterpError> {
    let set = BlockedPointSet::parse(text)?;
    let basis = build_newton_basis(&set, opts)?;
    let beta = basis_prefix(set.dim(), opts.quad_order, set.block_sizes());
    let determinant = poisedness_determinant(&set, &beta)?;
    let mut model = None;
    let mut max_residual = None;
    if basis.complete {
        if let Ok(values) = set.values() {
            let center = set.get(0).x.clone();
            let m = interpolate(&set, &basis, &center).map_err(|e| match e {
                ntr_core::newton_model::ModelError::Interp(e) => e,
                other => InterpError::Parse {
                    line: 0,
                    message: other.to_string(),
                },
            })?;
            let r = set
                .points()
                .iter()
                .zip(&values)
                .map(|(y, v)| (m.evaluate(y) - v).abs())
                .fold(0.0, f64::max);
            model = Some(m);
            max_residual = Some(r);
        }
    }
    Ok(BasisReport {
        set,
        basis,
        determinant,
        model,
        max_residual,
    })
}

fn poly_table(out: &mut String, p: &MonomialPoly) {
    for t in terms(p.dim()) {
        writeln!(out, "  {:<8} {}", t.to_string(), fmt_f64(p.coeff(t) + 0.0)).unwrap();
    }
}

/// `N_{i+1}^[l]` as printed in reports.
pub fn poly_label(block: usize, index: usize) -> String {
    format!("N_{}^[{}]", index + 1, block)
}

impl BasisReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dim {}", self.set.dim()).unwrap();
        writeln!(s, "points {}", self.set.len()).unwrap();
        for (l, i, p, pivot) in self.basis.iter() {
            writeln!(s, "poly {} pivot {}", poly_label(l, i), pivot).unwrap();
            poly_table(&mut s, p);
        }
        writeln!(s, "determinant {}", fmt_f64(self.determinant)).unwrap();
        match &self.basis.failure {
            None => writeln!(s, "status complete").unwrap(),
            Some(f) => {
                writeln!(s, "status incomplete").unwrap();
                writeln!(
                    s,
                    "failure {} block {} index {} best_value {}",
                    poly_label(f.block, f.index),
                    f.block,
                    f.index,
                    fmt_f64(f.best_value)
                )
                .unwrap();
                poly_table(&mut s, &f.poly);
            }
        }
        if let (Some(m), Some(r)) = (&self.model, self.max_residual) {
            writeln!(s, "model").unwrap();
            poly_table(&mut s, &m.to_poly());
            writeln!(s, "max_residual {}", fmt_f64(r)).unwrap();
        }
        s
    }
}
