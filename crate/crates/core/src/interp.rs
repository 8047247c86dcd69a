//! Quadratic interpolation sets: Newton fundamental polynomials,
//! poisedness, adequacy and Lagrange-based point replacement.
//!
//! Polynomials are stored densely over the monomials
//! `1, x_1, …, x_n, x_i·x_j (i ≤ j, lexicographic)`. The order in which the
//! degree-two monomials seed the Newton sweep is a separate choice
//! ([`QuadOrder`]) because it decides which pivots the sweep meets first.

use std::fmt;

use thiserror::Error;

use crate::linalg::{self, distance, LinalgError, Lu, Matrix, SymMatrix};
use crate::sampling::HaltonBall;
use crate::trs::solve_trust_region;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("point {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("block 0 must hold exactly one point, found {0}")]
    BlockZero(usize),
    #[error("block {block} holds {len} points but at most {max} fit")]
    BlockOverflow { block: usize, len: usize, max: usize },
    #[error("points {first} and {second} coincide")]
    DuplicatePoints { first: usize, second: usize },
    #[error("{points} points but {basis} basis polynomials")]
    CountMismatch { points: usize, basis: usize },
    #[error("interpolation set is not poised")]
    NotPoised,
    #[error("Newton basis is incomplete")]
    IncompleteBasis,
    #[error("point {0} has no objective value")]
    MissingValue(usize),
    #[error("no replacement improves the interpolation determinant")]
    GeometryRepairFailed,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One monomial of the quadratic basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Const,
    Linear(usize),
    /// `x_i·x_j` with `i ≤ j`.
    Quad(usize, usize),
}

impl Term {
    pub fn degree(self) -> usize {
        match self {
            Term::Const => 0,
            Term::Linear(_) => 1,
            Term::Quad(..) => 2,
        }
    }

    /// Exponent tuple of the monomial.
    pub fn exponents(self, dim: usize) -> Vec<u32> {
        let mut e = vec![0; dim];
        match self {
            Term::Const => {}
            Term::Linear(i) => e[i] = 1,
            Term::Quad(i, j) => {
                e[i] += 1;
                e[j] += 1;
            }
        }
        e
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::Const => write!(f, "1"),
            Term::Linear(i) => write!(f, "x{}", i + 1),
            Term::Quad(i, j) if i == j => write!(f, "x{}^2", i + 1),
            Term::Quad(i, j) => write!(f, "x{}*x{}", i + 1, j + 1),
        }
    }
}

/// Number of monomials of degree ≤ 2 in `dim` variables.
pub fn term_count(dim: usize) -> usize {
    (dim + 1) * (dim + 2) / 2
}

/// Monomials in storage order.
pub fn terms(dim: usize) -> Vec<Term> {
    let mut t = vec![Term::Const];
    t.extend((0..dim).map(Term::Linear));
    for i in 0..dim {
        for j in i..dim {
            t.push(Term::Quad(i, j));
        }
    }
    t
}

fn term_index(dim: usize, term: Term) -> usize {
    match term {
        Term::Const => 0,
        Term::Linear(i) => 1 + i,
        Term::Quad(i, j) => {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            1 + dim + i * dim - i * (i.saturating_sub(1)) / 2 - i + j
        }
    }
}

/// Order in which the degree-two monomials enter the Newton sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadOrder {
    /// `x_1², x_1x_2, …, x_1x_n, x_2², …` (row-wise upper triangle).
    #[default]
    Lex,
    /// All squares first, then cross terms in lexicographic order.
    SquaresFirst,
}

impl QuadOrder {
    pub fn quad_terms(self, dim: usize) -> Vec<Term> {
        let mut out = Vec::new();
        match self {
            QuadOrder::Lex => {
                for i in 0..dim {
                    for j in i..dim {
                        out.push(Term::Quad(i, j));
                    }
                }
            }
            QuadOrder::SquaresFirst => {
                out.extend((0..dim).map(|i| Term::Quad(i, i)));
                for i in 0..dim {
                    for j in (i + 1)..dim {
                        out.push(Term::Quad(i, j));
                    }
                }
            }
        }
        out
    }
}

/// Polynomial of total degree ≤ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialPoly {
    dim: usize,
    coeffs: Vec<f64>,
}

impl MonomialPoly {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            coeffs: vec![0.0; term_count(dim)],
        }
    }

    pub fn monomial(dim: usize, term: Term) -> Self {
        let mut p = Self::zero(dim);
        p.coeffs[term_index(dim, term)] = 1.0;
        p
    }

    pub fn from_coeffs(dim: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), term_count(dim));
        Self { dim, coeffs }
    }

    /// Builds `c + bᵀ(x−z) + ½(x−z)ᵀA(x−z)` expanded in monomials.
    pub fn from_quadratic(center: &[f64], c: f64, b: &[f64], a: &SymMatrix) -> Self {
        let n = center.len();
        let mut p = Self::zero(n);
        let az = a.mul_vec(center);
        p.coeffs[0] = c - linalg::dot(b, center) + 0.5 * linalg::dot(center, &az);
        for i in 0..n {
            p.coeffs[1 + i] = b[i] - az[i];
            for j in i..n {
                let k = term_index(n, Term::Quad(i, j));
                p.coeffs[k] = if i == j { 0.5 * a.get(i, i) } else { a.get(i, j) };
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, term: Term) -> f64 {
        self.coeffs[term_index(self.dim, term)]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut v = self.coeffs[0];
        for i in 0..n {
            v += self.coeffs[1 + i] * x[i];
        }
        let mut k = 1 + n;
        for i in 0..n {
            for j in i..n {
                v += self.coeffs[k] * x[i] * x[j];
                k += 1;
            }
        }
        v
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let h = self.hessian();
        (0..n)
            .map(|i| self.coeffs[1 + i] + (0..n).map(|j| h.get(i, j) * x[j]).sum::<f64>())
            .collect()
    }

    /// Constant Hessian of the polynomial.
    pub fn hessian(&self) -> SymMatrix {
        let n = self.dim;
        let mut h = SymMatrix::zeros(n);
        let mut k = 1 + n;
        for i in 0..n {
            for j in i..n {
                let c = self.coeffs[k];
                h.set(i, j, if i == j { 2.0 * c } else { c });
                k += 1;
            }
        }
        h
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &MonomialPoly) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.coeffs {
            *a *= alpha;
        }
    }

    /// Composes with `x = center + radius·u`, returning a polynomial in `u`.
    pub fn compose_affine(&self, center: &[f64], radius: f64) -> MonomialPoly {
        let c = self.eval(center);
        let g: Vec<f64> = self.gradient(center).iter().map(|v| v * radius).collect();
        let h = self.hessian().scaled(radius * radius);
        MonomialPoly::from_quadratic(&vec![0.0; self.dim], c, &g, &h)
    }
}

impl fmt::Display for MonomialPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (t, &c) in terms(self.dim).iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            first = false;
            let a = c.abs();
            match t {
                Term::Const => write!(f, "{a}")?,
                _ if a == 1.0 => write!(f, "{t}")?,
                _ => write!(f, "{a}*{t}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// The quadratic basis `β`, grouped by degree, with the given quadratic order.
pub fn natural_basis(dim: usize, order: QuadOrder) -> [Vec<MonomialPoly>; 3] {
    [
        vec![MonomialPoly::monomial(dim, Term::Const)],
        (0..dim).map(|i| MonomialPoly::monomial(dim, Term::Linear(i))).collect(),
        order
            .quad_terms(dim)
            .into_iter()
            .map(|t| MonomialPoly::monomial(dim, t))
            .collect(),
    ]
}

/// The first `count` members of `β` in block order, for determinant and
/// Lagrange computations on (possibly partial) sets.
pub fn basis_prefix(dim: usize, order: QuadOrder, sizes: [usize; 3]) -> Vec<MonomialPoly> {
    let nb = natural_basis(dim, order);
    nb.into_iter()
        .zip(sizes)
        .flat_map(|(b, s)| b.into_iter().take(s))
        .collect()
}

/// Interpolation point with an optional objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub value: Option<f64>,
}

/// Point set organized into degree blocks `Y^[0], Y^[1], Y^[2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedPointSet {
    dim: usize,
    blocks: [Vec<SamplePoint>; 3],
}

impl BlockedPointSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            blocks: Default::default(),
        }
    }

    /// Builds a set from coordinate lists, without values.
    pub fn from_blocks(dim: usize, blocks: [Vec<Vec<f64>>; 3]) -> Result<Self, InterpError> {
        let mut s = Self::new(dim);
        for (b, pts) in blocks.into_iter().enumerate() {
            for x in pts {
                s.push(b, x, None)?;
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn max_block_len(dim: usize, block: usize) -> usize {
        match block {
            0 => 1,
            1 => dim,
            _ => dim * (dim + 1) / 2,
        }
    }

    pub fn push(&mut self, block: usize, x: Vec<f64>, value: Option<f64>) -> Result<(), InterpError> {
        if x.len() != self.dim {
            return Err(InterpError::DimensionMismatch {
                index: self.len(),
                expected: self.dim,
                actual: x.len(),
            });
        }
        let max = Self::max_block_len(self.dim, block);
        if self.blocks[block].len() >= max {
            return Err(InterpError::BlockOverflow {
                block,
                len: self.blocks[block].len() + 1,
                max,
            });
        }
        self.blocks[block].push(SamplePoint { x, value });
        Ok(())
    }

    /// Checks the block-0 cardinality and rejects coincident points.
    pub fn validate(&self) -> Result<(), InterpError> {
        if self.blocks[0].len() != 1 {
            return Err(InterpError::BlockZero(self.blocks[0].len()));
        }
        let pts = self.points();
        let spread = pts
            .iter()
            .flat_map(|a| pts.iter().map(move |b| distance(a, b)))
            .fold(0.0_f64, f64::max);
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                if distance(pts[i], pts[j]) <= 1e-12 * spread.max(f64::MIN_POSITIVE) {
                    return Err(InterpError::DuplicatePoints { first: i, second: j });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, b: usize) -> &[SamplePoint] {
        &self.blocks[b]
    }

    pub fn block_sizes(&self) -> [usize; 3] {
        [self.blocks[0].len(), self.blocks[1].len(), self.blocks[2].len()]
    }

    /// Maps a flat index (block 0 first) to `(block, position)`.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let mut k = flat;
        for b in 0..3 {
            if k < self.blocks[b].len() {
                return (b, k);
            }
            k -= self.blocks[b].len();
        }
        panic!("flat index {flat} out of range");
    }

    pub fn get(&self, flat: usize) -> &SamplePoint {
        let (b, i) = self.locate(flat);
        &self.blocks[b][i]
    }

    pub fn get_mut(&mut self, flat: usize) -> &mut SamplePoint {
        let (b, i) = self.locate(flat);
        &mut self.blocks[b][i]
    }

    pub fn points(&self) -> Vec<&[f64]> {
        self.blocks.iter().flatten().map(|p| p.x.as_slice()).collect()
    }

    pub fn values(&self) -> Result<Vec<f64>, InterpError> {
        self.blocks
            .iter()
            .flatten()
            .enumerate()
            .map(|(i, p)| p.value.ok_or(InterpError::MissingValue(i)))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SamplePoint> {
        self.blocks.iter().flatten()
    }

    /// Replaces the point at a flat index in place.
    pub fn replace(&mut self, flat: usize, x: Vec<f64>, value: Option<f64>) {
        *self.get_mut(flat) = SamplePoint { x, value };
    }

    /// Swaps the contents of two flat positions.
    pub fn swap(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let pa = self.get(a).clone();
        let pb = self.get(b).clone();
        *self.get_mut(a) = pb;
        *self.get_mut(b) = pa;
    }

    /// The same set in coordinates `(y − center)/radius`.
    pub fn scaled(&self, center: &[f64], radius: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            for p in b {
                p.x = p.x.iter().zip(center).map(|(a, c)| (a - c) / radius).collect();
            }
        }
        out
    }

    /// Parses the plain-text table format: an optional `dim N` header, then
    /// one point per line as `block x_1 … x_n [value]`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, InterpError> {
        let mut dim: Option<usize> = None;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks[0] == "dim" {
                let d = toks
                    .get(1)
                    .and_then(|t| t.parse::<usize>().ok())
                    .filter(|&d| d > 0)
                    .ok_or_else(|| InterpError::Parse {
                        line: ln + 1,
                        message: "expected `dim <positive integer>`".into(),
                    })?;
                dim = Some(d);
                continue;
            }
            let block: usize = toks[0].parse().ok().filter(|b| *b <= 2).ok_or_else(|| {
                InterpError::Parse {
                    line: ln + 1,
                    message: format!("bad block index `{}`", toks[0]),
                }
            })?;
            let nums = toks[1..]
                .iter()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| InterpError::Parse {
                    line: ln + 1,
                    message: e.to_string(),
                })?;
            rows.push((ln + 1, block, nums));
        }
        let first = rows.first().ok_or(InterpError::Parse {
            line: 0,
            message: "no points".into(),
        })?;
        let dim = dim.unwrap_or(first.2.len());
        let mut set = Self::new(dim);
        for (line, block, nums) in rows {
            let (x, value) = match nums.len() {
                l if l == dim => (nums, None),
                l if l == dim + 1 => {
                    let v = nums[dim];
                    (nums[..dim].to_vec(), Some(v))
                }
                l => {
                    return Err(InterpError::Parse {
                        line,
                        message: format!("expected {dim} or {} numbers, found {l}", dim + 1),
                    })
                }
            };
            set.push(block, x, value).map_err(|e| InterpError::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        set.validate()?;
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dim {}\n", self.dim);
        for (b, block) in self.blocks.iter().enumerate() {
            for p in block {
                s.push_str(&b.to_string());
                for v in &p.x {
                    s.push_str(&format!(" {v:.16e}"));
                }
                if let Some(v) = p.value {
                    s.push_str(&format!(" {v:.16e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// How the Newton sweep picks the point for each polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Largest `|N(y)|` over all unused points; ties go to the earliest
    /// point in block-then-input order.
    #[default]
    Max,
    /// Polynomial `i` of block `l` pivots on point `i` of block `l`, as in
    /// the hand-worked examples.
    PaperOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisOptions {
    pub pivot_threshold: f64,
    pub pivot: PivotRule,
    pub quad_order: QuadOrder,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            pivot_threshold: 1e-8,
            pivot: PivotRule::Max,
            quad_order: QuadOrder::Lex,
        }
    }
}

/// Where an incomplete sweep stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFailure {
    pub block: usize,
    /// Zero-based index of the polynomial within its block.
    pub index: usize,
    /// Largest `|N(y)|` over the admissible candidates.
    pub best_value: f64,
    /// The polynomial that found no usable pivot.
    pub poly: MonomialPoly,
}

/// Newton fundamental polynomials with their pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonBasis {
    /// `polys[l][i]` is `N_{i+1}^[l]`; on failure holds the finished ones.
    pub polys: Vec<Vec<MonomialPoly>>,
    /// Flat point index used as pivot by each polynomial.
    pub pivots: Vec<Vec<usize>>,
    pub complete: bool,
    pub failure: Option<BasisFailure>,
}

impl NewtonBasis {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &MonomialPoly, usize)> {
        self.polys.iter().enumerate().flat_map(move |(l, ps)| {
            ps.iter()
                .enumerate()
                .map(move |(i, p)| (l, i, p, self.pivots[l][i]))
        })
    }

    pub fn len(&self) -> usize {
        self.polys.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs the pivot/normalize/update sweep. `candidates` are the point
/// coordinates in block-then-input order and `slots` the number of
/// polynomials wanted per block. `forced_first` pins the block-0 pivot.
fn newton_sweep(
    dim: usize,
    candidates: &[&[f64]],
    slots: [usize; 3],
    opts: &BasisOptions,
    forced_first: Option<usize>,
) -> NewtonBasis {
    let mut work = natural_basis(dim, opts.quad_order);
    let mut used = vec![false; candidates.len()];
    let mut pivots: Vec<Vec<usize>> = vec![Vec::new(); 3];
    let offsets = [0, slots[0], slots[0] + slots[1]];

    let finished = |work: &[Vec<MonomialPoly>], pivots: &[Vec<usize>]| -> Vec<Vec<MonomialPoly>> {
        work.iter()
            .zip(pivots)
            .map(|(w, p)| w[..p.len()].to_vec())
            .collect()
    };

    for l in 0..3 {
        for i in 0..slots[l] {
            let choice = match (opts.pivot, forced_first) {
                (_, Some(k)) if l == 0 && i == 0 => Some(k),
                (PivotRule::PaperOrder, _) => Some(offsets[l] + i),
                (PivotRule::Max, _) => {
                    let mut best: Option<(usize, f64)> = None;
                    for (k, y) in candidates.iter().enumerate() {
                        if used[k] {
                            continue;
                        }
                        let v = work[l][i].eval(y).abs();
                        if best.is_none_or(|(_, b)| v > b) {
                            best = Some((k, v));
                        }
                    }
                    best.map(|(k, _)| k)
                }
            };
            let picked = choice.map(|k| (k, work[l][i].eval(candidates[k])));
            let (k, value) = match picked {
                Some((k, v)) if v.abs() >= opts.pivot_threshold => (k, v),
                other => {
                    return NewtonBasis {
                        polys: finished(&work, &pivots),
                        pivots,
                        complete: false,
                        failure: Some(BasisFailure {
                            block: l,
                            index: i,
                            best_value: other.map_or(0.0, |(_, v)| v.abs()),
                            poly: work[l][i].clone(),
                        }),
                    };
                }
            };
            let y = candidates[k];
            work[l][i].scale(1.0 / value);
            let pivot_poly = work[l][i].clone();
            for (l2, block) in work.iter_mut().enumerate().skip(l) {
                for (j, p) in block.iter_mut().enumerate() {
                    if l2 == l && j == i {
                        continue;
                    }
                    let v = p.eval(y);
                    if v != 0.0 {
                        p.axpy(-v, &pivot_poly);
                    }
                }
            }
            used[k] = true;
            pivots[l].push(k);
        }
    }
    NewtonBasis {
        polys: finished(&work, &pivots),
        pivots,
        complete: true,
        failure: None,
    }
}

/// Builds the Newton fundamental polynomials of `points`.
pub fn build_newton_basis(points: &BlockedPointSet, opts: &BasisOptions) -> Result<NewtonBasis, InterpError> {
    points.validate()?;
    let pts = points.points();
    Ok(newton_sweep(points.dim(), &pts, points.block_sizes(), opts, None))
}

/// `[φ_j(y^i)]` over the flattened points.
pub fn interpolation_matrix(points: &BlockedPointSet, basis: &[MonomialPoly]) -> Result<Matrix, InterpError> {
    if basis.len() != points.len() {
        return Err(InterpError::CountMismatch {
            points: points.len(),
            basis: basis.len(),
        });
    }
    let pts = points.points();
    Ok(Matrix::from_fn(pts.len(), basis.len(), |i, j| basis[j].eval(pts[i])))
}

/// Interpolation determinant `D(Y) = det[φ_j(y^i)]`.
pub fn poisedness_determinant(points: &BlockedPointSet, basis: &[MonomialPoly]) -> Result<f64, InterpError> {
    Ok(linalg::determinant(&interpolation_matrix(points, basis)?)?)
}

/// Geometry verdict for a Newton basis inside a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct AdequacyReport {
    pub adequate: bool,
    pub kappa_n: f64,
    pub max_abs_value: f64,
    pub cardinality_ok: bool,
}

/// Smallest admissible bound, `2^{|Y^[2]|} + 1`.
pub fn default_kappa(points: &BlockedPointSet) -> f64 {
    2f64.powi(points.block(2).len() as i32) + 1.0
}

/// Adequacy of the set in the ball. Cardinality counts points inside the
/// ball, and the "for all x in the region" bound is checked at `probes`
/// Halton points plus the interpolation points in the ball.
pub fn check_adequacy(
    basis: &NewtonBasis,
    points: &BlockedPointSet,
    center: &[f64],
    radius: f64,
    kappa_n: f64,
    probes: usize,
) -> AdequacyReport {
    let n = points.dim();
    let inside: Vec<&[f64]> = points
        .points()
        .into_iter()
        .filter(|y| distance(y, center) <= radius * (1.0 + 1e-12))
        .collect();
    let cardinality_ok = inside.len() > n;
    if !basis.complete {
        return AdequacyReport {
            adequate: false,
            kappa_n,
            max_abs_value: f64::INFINITY,
            cardinality_ok,
        };
    }
    let mut max_abs = 0.0_f64;
    let all = points.points();
    for l in 0..2 {
        for p in &basis.polys[l] {
            for &k in &basis.pivots[l + 1] {
                max_abs = max_abs.max(p.eval(all[k]).abs());
            }
        }
    }
    let mut probe_pts = HaltonBall::new(center, radius, 0).take_points(probes);
    probe_pts.extend(inside.iter().map(|y| y.to_vec()));
    for (_, _, p, _) in basis.iter() {
        for x in &probe_pts {
            max_abs = max_abs.max(p.eval(x).abs());
        }
    }
    AdequacyReport {
        adequate: cardinality_ok && max_abs <= kappa_n,
        kappa_n,
        max_abs_value: max_abs,
        cardinality_ok,
    }
}

fn expand(basis: &[MonomialPoly], coef: &[f64]) -> MonomialPoly {
    let mut p = MonomialPoly::zero(basis[0].dim());
    for (b, &c) in basis.iter().zip(coef) {
        p.axpy(c, b);
    }
    p
}

/// Lagrange polynomials `L_i(y^j) = δ_ij` expressed in monomials.
pub fn lagrange_polynomials(points: &BlockedPointSet, basis: &[MonomialPoly]) -> Result<Vec<MonomialPoly>, InterpError> {
    let m = interpolation_matrix(points, basis)?;
    let lu = Lu::factor(&m)?;
    if lu.is_singular() {
        return Err(InterpError::NotPoised);
    }
    let p = points.len();
    (0..p)
        .map(|i| {
            let mut e = vec![0.0; p];
            e[i] = 1.0;
            let c = lu.solve(&e)?;
            Ok(expand(basis, &c))
        })
        .collect()
}

/// `C_i(y) = D(Y with y^i replaced by y)` by cofactor expansion along row
/// `i`. Defined whether or not the set is poised.
pub fn cofactor_polynomials(points: &BlockedPointSet, basis: &[MonomialPoly]) -> Result<Vec<MonomialPoly>, InterpError> {
    let m = interpolation_matrix(points, basis)?;
    let p = m.rows();
    (0..p)
        .map(|i| {
            let coef = (0..p)
                .map(|k| {
                    if p == 1 {
                        return Ok(1.0);
                    }
                    let minor = Matrix::from_fn(p - 1, p - 1, |r, c| {
                        m[(if r < i { r } else { r + 1 }, if c < k { c } else { c + 1 })]
                    });
                    let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
                    Ok(sign * linalg::determinant(&minor)?)
                })
                .collect::<Result<Vec<f64>, InterpError>>()?;
            Ok(expand(basis, &coef))
        })
        .collect()
}

/// Index of the point to drop when `new_point` joins the set: the largest
/// `|L_i(new_point)|`, ties going to the point farthest from `center`, then
/// to the lowest index.
pub fn select_exit_point_success(
    points: &BlockedPointSet,
    new_point: &[f64],
    basis: &[MonomialPoly],
    center: &[f64],
) -> Result<usize, InterpError> {
    let lag = lagrange_polynomials(points, basis)?;
    let scores: Vec<f64> = lag.iter().map(|l| l.eval(new_point).abs()).collect();
    let top = scores.iter().cloned().fold(0.0_f64, f64::max);
    let tie = 1e-12 * top.max(1.0);
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s < top - tie {
            continue;
        }
        let d = distance(points.get(i).x.as_slice(), center);
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    Ok(best.map(|(i, _)| i).unwrap_or(0))
}

/// Maximizes `|p|` over the ball. The exact trust-region solutions for `p`
/// and `−p` give the global answer; `starts` extra projected-ascent runs
/// from Halton points serve as a cross-check.
pub fn maximize_abs_in_ball(p: &MonomialPoly, center: &[f64], radius: f64, starts: usize) -> (Vec<f64>, f64) {
    let g = p.gradient(center);
    let h = p.hessian();
    let mut best = (center.to_vec(), p.eval(center).abs());
    let mut consider = |x: Vec<f64>| {
        let v = p.eval(&x).abs();
        if v > best.1 {
            best = (x, v);
        }
    };
    for sign in [1.0, -1.0] {
        let gs: Vec<f64> = g.iter().map(|v| sign * v).collect();
        if let Ok(sol) = solve_trust_region(&gs, &h.scaled(sign), radius) {
            consider(linalg::add(center, &sol.step));
        }
    }
    let lip = h.frobenius_norm().max(1e-12);
    for mut x in HaltonBall::new(center, radius, 1).take_points(starts) {
        for _ in 0..50 {
            let v = p.eval(&x);
            let gx = p.gradient(&x);
            let step = v.signum() / lip;
            let mut y: Vec<f64> = x.iter().zip(&gx).map(|(a, b)| a + step * b).collect();
            let d = distance(&y, center);
            if d > radius {
                y = y
                    .iter()
                    .zip(center)
                    .map(|(a, c)| c + (a - c) * radius / d)
                    .collect();
            }
            x = y;
        }
        consider(x);
    }
    best
}

/// Geometry repair for an inadequate set: for every point find the ball
/// maximizer of its replacement polynomial, then swap the point with the
/// largest gain. Lagrange polynomials are used for poised sets and cofactor
/// polynomials otherwise, so the determinant never decreases.
pub fn select_exit_point_inadequate(
    points: &BlockedPointSet,
    center: &[f64],
    radius: f64,
    basis: &[MonomialPoly],
    candidates: usize,
) -> Result<(usize, Vec<f64>), InterpError> {
    select_exit_point_inadequate_excluding(points, center, radius, basis, candidates, &[])
}

/// As [`select_exit_point_inadequate`], never choosing an index in `keep`.
pub fn select_exit_point_inadequate_excluding(
    points: &BlockedPointSet,
    center: &[f64],
    radius: f64,
    basis: &[MonomialPoly],
    candidates: usize,
    keep: &[usize],
) -> Result<(usize, Vec<f64>), InterpError> {
    let m = interpolation_matrix(points, basis)?;
    let lu = Lu::factor(&m)?;
    let d_old = lu.determinant().abs();
    let (polys, poised) = if lu.is_singular() {
        (cofactor_polynomials(points, basis)?, false)
    } else {
        (lagrange_polynomials(points, basis)?, true)
    };
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (i, p) in polys.iter().enumerate() {
        if keep.contains(&i) {
            continue;
        }
        let (y, v) = maximize_abs_in_ball(p, center, radius, candidates);
        if best.as_ref().is_none_or(|b| v > b.2) {
            best = Some((i, y, v));
        }
    }
    let (i, y, gain) = best.ok_or(InterpError::GeometryRepairFailed)?;
    let improves = if poised {
        gain >= 1.0
    } else {
        gain > d_old && gain > 0.0
    };
    if !improves {
        return Err(InterpError::GeometryRepairFailed);
    }
    Ok((i, y))
}

/// Greedy choice of a well-poised quadratic-sized subset among `points`.
/// The point nearest `center` takes block 0; the rest are picked by
/// maximal-pivot Newton sweeps in the coordinates `(y − center)/radius`.
/// Returns the chosen indices per block; fewer than a full set when the
/// sweep stalls.
pub fn select_poised_subset(
    points: &[Vec<f64>],
    center: &[f64],
    radius: f64,
    pivot_threshold: f64,
) -> [Vec<usize>; 3] {
    let n = center.len();
    if points.is_empty() {
        return Default::default();
    }
    let scaled: Vec<Vec<f64>> = points
        .iter()
        .map(|y| y.iter().zip(center).map(|(a, c)| (a - c) / radius).collect())
        .collect();
    let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
    let nearest = (0..points.len())
        .min_by(|&a, &b| linalg::norm(&scaled[a]).total_cmp(&linalg::norm(&scaled[b])))
        .unwrap_or(0);
    let slots = [1, n, n * (n + 1) / 2];
    let opts = BasisOptions {
        pivot_threshold,
        pivot: PivotRule::Max,
        quad_order: QuadOrder::Lex,
    };
    let basis = newton_sweep(n, &refs, slots, &opts, Some(nearest));
    let mut out: [Vec<usize>; 3] = Default::default();
    out.clone_from_slice(&basis.pivots[..3]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn example1() -> BlockedPointSet {
        BlockedPointSet::from_blocks(
            2,
            [
                vec![vec![0.0, 0.0]],
                vec![vec![0.5, 0.0], vec![0.0, 0.5]],
                vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]],
            ],
        )
        .unwrap()
    }

    fn example2() -> BlockedPointSet {
        BlockedPointSet::from_blocks(
            2,
            [
                vec![vec![0.0, 0.0]],
                vec![vec![1.0, 0.0], vec![0.0, 2.0]],
                vec![vec![3.0, 0.0], vec![1.0, 2.0], vec![2.0, 1.0]],
            ],
        )
        .unwrap()
    }

    fn beta(order: QuadOrder) -> Vec<MonomialPoly> {
        natural_basis(2, order).into_iter().flatten().collect()
    }

    fn paper_opts(order: QuadOrder) -> BasisOptions {
        BasisOptions {
            pivot: PivotRule::PaperOrder,
            quad_order: order,
            ..Default::default()
        }
    }

    fn cofactor_det(m: &Matrix) -> f64 {
        let n = m.rows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = Matrix::from_fn(n - 1, n - 1, |r, c| m[(r + 1, if c < j { c } else { c + 1 })]);
                (if j % 2 == 0 { 1.0 } else { -1.0 }) * m[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }

    fn kronecker_error(basis: &NewtonBasis, points: &BlockedPointSet) -> f64 {
        let pts = points.points();
        let mut err = 0.0_f64;
        for (l, i, p, _) in basis.iter() {
            for (m, j, _, pj) in basis.iter() {
                if m > l {
                    continue;
                }
                let want = if (l, i) == (m, j) { 1.0 } else { 0.0 };
                err = err.max((p.eval(pts[pj]) - want).abs());
            }
        }
        err
    }

    #[test]
    fn term_layout() {
        assert_eq!(term_count(2), 6);
        let t = terms(3);
        for (k, term) in t.iter().enumerate() {
            assert_eq!(term_index(3, *term), k);
        }
        assert_eq!(Term::Quad(0, 1).exponents(2), vec![1, 1]);
        assert_eq!(format!("{}", Term::Quad(1, 1)), "x2^2");
    }

    #[test]
    fn quadratic_roundtrip() {
        let a = SymMatrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 4.0]]).unwrap();
        let p = MonomialPoly::from_quadratic(&[1.0, 2.0], 3.0, &[0.5, -0.5], &a);
        assert_relative_eq!(p.eval(&[1.0, 2.0]), 3.0, epsilon = 1e-14);
        let g = p.gradient(&[1.0, 2.0]);
        assert_relative_eq!(g[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(g[1], -0.5, epsilon = 1e-14);
        assert_eq!(p.hessian(), a);
    }

    #[test]
    fn example1_paper_order_final_list() {
        let b = build_newton_basis(&example1(), &paper_opts(QuadOrder::Lex)).unwrap();
        assert!(b.complete);
        let want: [&[(Term, f64)]; 6] = [
            &[(Term::Const, 1.0)],
            &[(Term::Linear(0), 2.0)],
            &[(Term::Linear(1), 2.0)],
            &[(Term::Quad(0, 0), 2.0), (Term::Linear(0), -1.0)],
            &[(Term::Quad(0, 1), 4.0)],
            &[(Term::Quad(1, 1), 2.0), (Term::Linear(1), -1.0)],
        ];
        for ((_, _, p, _), w) in b.iter().zip(want) {
            let mut expect = MonomialPoly::zero(2);
            for &(t, c) in w {
                expect.axpy(c, &MonomialPoly::monomial(2, t));
            }
            for (a, e) in p.coeffs().iter().zip(expect.coeffs()) {
                assert!((a - e).abs() <= 1e-12, "{p} vs {expect}");
            }
        }
    }

    #[test]
    fn example2_paper_order_fails_at_second_quadratic() {
        let b = build_newton_basis(&example2(), &paper_opts(QuadOrder::SquaresFirst)).unwrap();
        assert!(!b.complete);
        let f = b.failure.unwrap();
        assert_eq!((f.block, f.index), (2, 1));
        assert!(f.best_value.abs() < 1e-12);
        let mut n22 = MonomialPoly::monomial(2, Term::Quad(1, 1));
        n22.axpy(-2.0, &MonomialPoly::monomial(2, Term::Linear(1)));
        for (a, e) in f.poly.coeffs().iter().zip(n22.coeffs()) {
            assert!((a - e).abs() < 1e-12, "{}", f.poly);
        }
    }

    #[test]
    fn example2_max_pivot_is_complete() {
        let b = build_newton_basis(&example2(), &BasisOptions::default()).unwrap();
        assert!(b.complete);
        assert!(kronecker_error(&b, &example2()) < 1e-10);
    }

    #[test]
    fn one_dimensional_basis() {
        let s = BlockedPointSet::from_blocks(1, [vec![vec![0.0]], vec![vec![1.0]], vec![vec![2.0]]]).unwrap();
        let b = build_newton_basis(&s, &paper_opts(QuadOrder::Lex)).unwrap();
        assert!(b.complete);
        let c: Vec<&[f64]> = b.iter().map(|(_, _, p, _)| p.coeffs()).collect();
        assert_eq!(c[0], &[1.0, 0.0, 0.0]);
        assert_eq!(c[1], &[0.0, 1.0, 0.0]);
        assert_eq!(c[2], &[0.0, -0.5, 0.5]);
    }

    #[test]
    fn determinants() {
        let m = interpolation_matrix(&example1(), &beta(QuadOrder::Lex)).unwrap();
        let oracle = cofactor_det(&m);
        assert_relative_eq!(
            poisedness_determinant(&example1(), &beta(QuadOrder::Lex)).unwrap(),
            oracle,
            max_relative = 1e-12
        );
        let single = BlockedPointSet::from_blocks(2, [vec![vec![0.3, 0.7]], vec![], vec![]]).unwrap();
        let one = basis_prefix(2, QuadOrder::Lex, [1, 0, 0]);
        assert_eq!(poisedness_determinant(&single, &one).unwrap(), 1.0);
        assert!(matches!(
            poisedness_determinant(&single, &beta(QuadOrder::Lex)),
            Err(InterpError::CountMismatch { .. })
        ));
    }

    #[test]
    fn adequacy_examples() {
        let s = example1();
        let b = build_newton_basis(&s, &paper_opts(QuadOrder::Lex)).unwrap();
        let r = check_adequacy(&b, &s, &[0.0, 0.0], 1.0, 9.0, 200);
        assert!(r.adequate, "{r:?}");
        assert!(r.max_abs_value <= 9.0);

        let single = BlockedPointSet::from_blocks(2, [vec![vec![0.0, 0.0]], vec![], vec![]]).unwrap();
        let b1 = build_newton_basis(&single, &BasisOptions::default()).unwrap();
        let r1 = check_adequacy(&b1, &single, &[0.0, 0.0], 1.0, 9.0, 50);
        assert!(!r1.adequate && !r1.cardinality_ok);

        let s2 = example2();
        let b2 = build_newton_basis(&s2, &paper_opts(QuadOrder::SquaresFirst)).unwrap();
        let r2 = check_adequacy(&b2, &s2, &[0.0, 0.0], 3.0, 9.0, 50);
        assert!(!r2.adequate);
    }

    #[test]
    fn lagrange_examples() {
        let s = example1();
        let lag = lagrange_polynomials(&s, &beta(QuadOrder::Lex)).unwrap();
        let pts = s.points();
        for (i, l) in lag.iter().enumerate() {
            for (j, y) in pts.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((l.eval(y) - want).abs() <= 1e-10);
            }
        }
        let single = BlockedPointSet::from_blocks(2, [vec![vec![0.3, 0.7]], vec![], vec![]]).unwrap();
        let l1 = lagrange_polynomials(&single, &basis_prefix(2, QuadOrder::Lex, [1, 0, 0])).unwrap();
        assert_eq!(l1[0].coeffs()[0], 1.0);

        let line = BlockedPointSet::from_blocks(1, [vec![vec![0.0]], vec![vec![1.0]], vec![]]).unwrap();
        let l = lagrange_polynomials(&line, &basis_prefix(1, QuadOrder::Lex, [1, 1, 0])).unwrap();
        assert_relative_eq!(l[0].coeff(Term::Const), 1.0);
        assert_relative_eq!(l[0].coeff(Term::Linear(0)), -1.0);
        assert_relative_eq!(l[1].coeff(Term::Linear(0)), 1.0);
    }

    #[test]
    fn exit_point_on_success() {
        let s = example1();
        let b = beta(QuadOrder::Lex);
        let lag = lagrange_polynomials(&s, &b).unwrap();
        let x = [0.9, 0.0];
        let oracle = (0..6)
            .max_by(|&i, &j| lag[i].eval(&x).abs().total_cmp(&lag[j].eval(&x).abs()))
            .unwrap();
        assert_eq!(oracle, 3);
        assert_eq!(select_exit_point_success(&s, &x, &b, &[0.0, 0.0]).unwrap(), 3);
        for k in 0..6 {
            let y = s.get(k).x.clone();
            assert_eq!(select_exit_point_success(&s, &y, &b, &[0.0, 0.0]).unwrap(), k);
        }
        // Symmetric linear set in 1D: the barycenter scores ½ for both ends.
        let line = BlockedPointSet::from_blocks(1, [vec![vec![-1.0]], vec![vec![1.0]], vec![]]).unwrap();
        let lb = basis_prefix(1, QuadOrder::Lex, [1, 1, 0]);
        assert_eq!(select_exit_point_success(&line, &[0.0], &lb, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn repair_example2_becomes_poised_again() {
        let s = example2();
        let b = beta(QuadOrder::SquaresFirst);
        let d0 = poisedness_determinant(&s, &b).unwrap();
        let (i, y) = select_exit_point_inadequate(&s, &[0.0, 0.0], 3.0, &b, 16).unwrap();
        let mut s2 = s.clone();
        s2.replace(i, y, None);
        let d1 = poisedness_determinant(&s2, &b).unwrap();
        assert!(d1.abs() > 0.0 && d1.abs() >= d0.abs());
    }

    #[test]
    fn repair_single_point() {
        let s = BlockedPointSet::from_blocks(2, [vec![vec![0.0, 0.0]], vec![], vec![]]).unwrap();
        let b = basis_prefix(2, QuadOrder::Lex, [1, 0, 0]);
        let (i, _) = select_exit_point_inadequate(&s, &[0.0, 0.0], 1.0, &b, 4).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn repair_singular_set_uses_cofactors() {
        // Six points on the unit circle lie on one conic.
        let ring: Vec<Vec<f64>> = (0..6)
            .map(|k| {
                let t = k as f64 * std::f64::consts::PI / 3.0 + 0.1;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let s = BlockedPointSet::from_blocks(2, [vec![ring[0].clone()], ring[1..3].to_vec(), ring[3..].to_vec()]).unwrap();
        let b = beta(QuadOrder::Lex);
        assert!(poisedness_determinant(&s, &b).unwrap().abs() < 1e-12);
        let (i, y) = select_exit_point_inadequate(&s, &[0.0, 0.0], 1.0, &b, 8).unwrap();
        let mut s2 = s.clone();
        s2.replace(i, y, None);
        assert!(poisedness_determinant(&s2, &b).unwrap().abs() > 1e-3);
    }

    #[test]
    fn parse_and_write() {
        let text = "# example\n0 0 0\n1 0.5 0\n1 0 0.5\n2 1 0\n2 0.5 0.5\n2 0 1\n";
        let s = BlockedPointSet::parse(text).unwrap();
        assert_eq!(s, example1());
        let mut with_values = s.clone();
        for k in 0..6 {
            with_values.get_mut(k).value = Some(k as f64 + 0.25);
        }
        let back = BlockedPointSet::parse(&with_values.to_text()).unwrap();
        assert_eq!(back, with_values);
        assert!(matches!(BlockedPointSet::parse("0 0 0\n0 1 1\n"), Err(InterpError::Parse { .. })));
        assert!(matches!(BlockedPointSet::parse("3 0 0\n"), Err(InterpError::Parse { .. })));
        assert!(matches!(
            BlockedPointSet::parse("0 0 0\n1 0 0\n"),
            Err(InterpError::DuplicatePoints { .. })
        ));
    }

    #[test]
    fn poised_subset_is_complete_for_generic_cloud() {
        let mut rng = crate::sampling::rng_from_seed(3);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
        let sel = select_poised_subset(&pts, &[0.0, 0.0], 1.0, 1e-8);
        assert_eq!(sel[0].len() + sel[1].len() + sel[2].len(), 6);
    }

    fn random_affine(seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = crate::sampling::rng_from_seed(seed);
        loop {
            let a = Matrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            if linalg::determinant(&a).unwrap().abs() > 0.1 {
                let t = vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
                return (a, t);
            }
        }
    }

    fn map_set(s: &BlockedPointSet, a: &Matrix, t: &[f64]) -> BlockedPointSet {
        let mut out = s.clone();
        for k in 0..s.len() {
            let y = linalg::add(&a.mul_vec(&s.get(k).x), t);
            out.get_mut(k).x = y;
        }
        out
    }

    #[test]
    fn completeness_is_affine_invariant_under_max_pivoting() {
        for seed in 0..10 {
            let (a, t) = random_affine(seed);
            for s in [example1(), example2()] {
                let before = build_newton_basis(&s, &BasisOptions::default()).unwrap().complete;
                let after = build_newton_basis(&map_set(&s, &a, &t), &BasisOptions::default())
                    .unwrap()
                    .complete;
                assert_eq!(before, after);
            }
        }
    }

    fn poised_set_strategy(n: usize) -> impl Strategy<Value = BlockedPointSet> {
        let q = term_count(n);
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), q).prop_filter_map("poised", move |pts| {
            let mut s = BlockedPointSet::new(n);
            let mut k = 0;
            for b in 0..3 {
                for _ in 0..BlockedPointSet::max_block_len(n, b) {
                    s.push(b, pts[k].clone(), None).ok()?;
                    k += 1;
                }
            }
            s.validate().ok()?;
            let d = poisedness_determinant(&s, &natural_basis(n, QuadOrder::Lex).concat()).ok()?;
            (d.abs() > 1e-3).then_some(s)
        })
    }

    proptest! {
        #[test]
        fn kronecker_property(s in (1usize..=3).prop_flat_map(poised_set_strategy)) {
            let b = build_newton_basis(&s, &BasisOptions::default()).unwrap();
            prop_assert!(b.complete);
            prop_assert!(kronecker_error(&b, &s) <= 1e-10 * (1.0 + b.iter().map(|(_, _, p, _)| p.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.abs()))).fold(0.0, f64::max)));
        }

        #[test]
        fn partition_of_unity(
            s in poised_set_strategy(2),
            xs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), 50),
        ) {
            let lag = lagrange_polynomials(&s, &natural_basis(2, QuadOrder::Lex).concat()).unwrap();
            for x in xs {
                let sum: f64 = lag.iter().map(|l| l.eval(&x)).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-8);
            }
        }

        #[test]
        fn repair_never_shrinks_determinant(s in poised_set_strategy(2), r in 0.5..2.0f64) {
            let b = natural_basis(2, QuadOrder::Lex).concat();
            let d0 = poisedness_determinant(&s, &b).unwrap().abs();
            if let Ok((i, y)) = select_exit_point_inadequate(&s, &[0.0, 0.0], r, &b, 8) {
                let mut s2 = s.clone();
                s2.replace(i, y, None);
                let d1 = poisedness_determinant(&s2, &b).unwrap().abs();
                prop_assert!(d1 >= d0 * (1.0 - 1e-9));
            }
        }
    }
}
