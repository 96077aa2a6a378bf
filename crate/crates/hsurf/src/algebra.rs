//! Stratified nilpotent Lie algebras (Carnot groups in exponential
//! coordinates): structure constants, validation, dilations, the
//! left-invariant frame, the Levi-Civita connection and its curvature.
//!
//! Indices are 0-based in the API; reports and error messages print them
//! 1-based, matching the usual mathematical notation `X_1, …, X_n`.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jets::Jet3;

/// Tolerance for structural checks on floating-point constants.
pub const FLOAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("skew-symmetry violated at ({}, {}, {})", .0 + 1, .1 + 1, .2 + 1)]
    SkewSymmetryViolation(usize, usize, usize),
    #[error("Jacobi identity violated for ({}, {}, {}) in component {}", .0 + 1, .1 + 1, .2 + 1, .3 + 1)]
    JacobiViolation(usize, usize, usize, usize),
    #[error("grading violated: [X_{}, X_{}] has a component along X_{}", .0 + 1, .1 + 1, .2 + 1)]
    GradingViolation(usize, usize, usize),
    #[error("stratum {stratum} is not generated: rank {rank}, expected {expected}")]
    GenerationFailure {
        stratum: usize,
        rank: usize,
        expected: usize,
    },
    #[error("dilation parameter must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid group specification: {0}")]
    InvalidSpec(String),
}

/// One violated axiom found by [`validate_structure`].
pub type Violation = AlgebraError;

trait Coef: Clone {
    fn zero() -> Self;
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn negligible(&self) -> bool;
    fn magnitude(&self) -> f64;
}

impl Coef for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn negligible(&self) -> bool {
        self.abs() <= FLOAT_TOL
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Coef for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn negligible(&self) -> bool {
        self.is_zero()
    }
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
}

fn stratum_map(strata: &[usize]) -> Vec<usize> {
    strata
        .iter()
        .enumerate()
        .flat_map(|(s, &d)| std::iter::repeat(s + 1).take(d))
        .collect()
}

fn rank<T: Coef>(mut rows: Vec<Vec<T>>) -> usize {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        // partial pivoting by magnitude keeps the float path stable
        let piv = (r..rows.len())
            .filter(|&i| !rows[i][c].negligible())
            .max_by(|&a, &b| rows[a][c].magnitude().total_cmp(&rows[b][c].magnitude()));
        let Some(p) = piv else { continue };
        rows.swap(r, p);
        for i in 0..rows.len() {
            if i != r && !rows[i][c].negligible() {
                let f = rows[i][c].div(&rows[r][c]);
                for k in c..cols {
                    let v = rows[i][k].sub(&f.mul(&rows[r][k]));
                    rows[i][k] = v;
                }
            }
        }
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    r
}

fn check<T: Coef>(strata: &[usize], c: &[T]) -> Vec<Violation> {
    let n: usize = strata.iter().sum();
    let at = |i: usize, j: usize, r: usize| &c[(i * n + j) * n + r];
    let st = stratum_map(strata);
    let step = strata.len();
    let mut out = Vec::new();

    for i in 0..n {
        for j in i..n {
            for r in 0..n {
                if !at(i, j, r).add(at(j, i, r)).negligible() {
                    out.push(AlgebraError::SkewSymmetryViolation(i, j, r));
                }
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                for r in 0..n {
                    let mut acc = T::zero();
                    for s in 0..n {
                        acc = acc
                            .add(&at(i, j, s).mul(at(s, l, r)))
                            .add(&at(j, l, s).mul(at(s, i, r)))
                            .add(&at(l, i, s).mul(at(s, j, r)));
                    }
                    if !acc.negligible() {
                        out.push(AlgebraError::JacobiViolation(i, j, l, r));
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for r in 0..n {
                if !at(i, j, r).negligible() && st[r] != st[i] + st[j] {
                    out.push(AlgebraError::GradingViolation(i, j, r));
                }
            }
        }
    }
    // V_s = [V_1, V_{s-1}] for s = 2..k
    let start: Vec<usize> = strata
        .iter()
        .scan(0, |acc, &d| {
            let s = *acc;
            *acc += d;
            Some(s)
        })
        .collect();
    for s in 1..step {
        let target = start[s]..start[s] + strata[s];
        let mut rows = Vec::new();
        for i in 0..strata[0] {
            for j in start[s - 1]..start[s - 1] + strata[s - 1] {
                rows.push(target.clone().map(|r| at(i, j, r).clone()).collect::<Vec<T>>());
            }
        }
        let rk = rank(rows);
        if rk != strata[s] {
            out.push(AlgebraError::GenerationFailure {
                stratum: s + 1,
                rank: rk,
                expected: strata[s],
            });
        }
    }
    out
}

/// Structure constants `C[i][j][r] = ⟨[X_i, X_j], X_r⟩` in exact or
/// floating-point form.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureConstants {
    Exact(Vec<BigRational>),
    Float(Vec<f64>),
}

impl StructureConstants {
    pub fn len(&self) -> usize {
        match self {
            StructureConstants::Exact(v) => v.len(),
            StructureConstants::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            StructureConstants::Exact(v) => v.iter().map(|q| q.to_f64().unwrap_or(f64::NAN)).collect(),
            StructureConstants::Float(v) => v.clone(),
        }
    }
}

/// All violated axioms (skew-symmetry, Jacobi, grading, generation).
/// Exact constants are checked exactly, floats to [`FLOAT_TOL`].
pub fn validation_report(strata: &[usize], c: &StructureConstants) -> Result<Vec<Violation>, AlgebraError> {
    let n: usize = strata.iter().sum();
    if strata.is_empty() || strata.iter().any(|&d| d == 0) {
        return Err(AlgebraError::InvalidSpec("strata must be non-empty and positive".into()));
    }
    if c.len() != n * n * n {
        return Err(AlgebraError::DimensionMismatch {
            expected: n * n * n,
            got: c.len(),
        });
    }
    Ok(match c {
        StructureConstants::Exact(v) => check(strata, v),
        StructureConstants::Float(v) => check(strata, v),
    })
}

/// First violated axiom, if any.
pub fn validate_structure(strata: &[usize], c: &StructureConstants) -> Result<(), AlgebraError> {
    match validation_report(strata, c)?.into_iter().next() {
        Some(v) => Err(v),
        None => Ok(()),
    }
}

/// One nonzero bracket `[X_i, X_j] ∋ c X_r` in a group file (1-based, `i < j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    /// A JSON number, or a string `"p/q"` for an exact rational.
    pub c: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub strata: Vec<usize>,
    pub brackets: Vec<BracketEntry>,
}

fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (p, q) = match s.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s, "1"),
    };
    let p: BigInt = p.parse().ok()?;
    let q: BigInt = q.parse().ok()?;
    if q.is_zero() {
        return None;
    }
    Some(BigRational::new(p, q))
}

impl GroupSpec {
    /// Builds the full skew-completed tensor.  Integer and `"p/q"`
    /// coefficients keep the tensor exact; any non-integer JSON float turns
    /// the whole tensor into floating point.
    pub fn structure_constants(&self) -> Result<StructureConstants, AlgebraError> {
        let n: usize = self.strata.iter().sum();
        let mut exact: Vec<Option<BigRational>> = Vec::new();
        let mut floats = Vec::new();
        let mut all_exact = true;
        for b in &self.brackets {
            if b.i == 0 || b.j == 0 || b.r == 0 || b.i > n || b.j > n || b.r > n {
                return Err(AlgebraError::InvalidSpec(format!(
                    "bracket index out of range 1..={}: ({}, {}, {})",
                    n, b.i, b.j, b.r
                )));
            }
            if b.i >= b.j {
                return Err(AlgebraError::InvalidSpec(format!(
                    "brackets must be listed with i < j, got ({}, {})",
                    b.i, b.j
                )));
            }
            let q = match &b.c {
                serde_json::Value::Number(num) => {
                    if let Some(k) = num.as_i64() {
                        Some(BigRational::from_integer(k.into()))
                    } else {
                        None
                    }
                }
                serde_json::Value::String(s) => Some(parse_rational(s).ok_or_else(|| {
                    AlgebraError::InvalidSpec(format!("cannot parse coefficient {:?}", s))
                })?),
                other => {
                    return Err(AlgebraError::InvalidSpec(format!("bad coefficient {}", other)));
                }
            };
            let f = match (&q, &b.c) {
                (Some(q), _) => q.to_f64().unwrap_or(f64::NAN),
                (None, serde_json::Value::Number(num)) => num.as_f64().unwrap_or(f64::NAN),
                _ => unreachable!(),
            };
            all_exact &= q.is_some();
            exact.push(q);
            floats.push(f);
        }
        let idx = |i: usize, j: usize, r: usize| ((i - 1) * n + (j - 1)) * n + (r - 1);
        if all_exact {
            let mut c = vec![<BigRational as Zero>::zero(); n * n * n];
            for (b, q) in self.brackets.iter().zip(exact) {
                let q = q.expect("exact");
                c[idx(b.i, b.j, b.r)] = &c[idx(b.i, b.j, b.r)] + &q;
                c[idx(b.j, b.i, b.r)] = &c[idx(b.j, b.i, b.r)] - &q;
            }
            Ok(StructureConstants::Exact(c))
        } else {
            let mut c = vec![0.0; n * n * n];
            for (b, f) in self.brackets.iter().zip(floats) {
                c[idx(b.i, b.j, b.r)] += f;
                c[idx(b.j, b.i, b.r)] -= f;
            }
            Ok(StructureConstants::Float(c))
        }
    }
}

// Taylor coefficients of z / (1 - e^{-z}); the frame is the (finite, since
// ad is nilpotent) series of this operator applied to the basis vectors.
const BCH_COEFFS: [f64; 11] = [
    1.0,
    0.5,
    1.0 / 12.0,
    0.0,
    -1.0 / 720.0,
    0.0,
    1.0 / 30240.0,
    0.0,
    -1.0 / 1209600.0,
    0.0,
    1.0 / 47900160.0,
];

/// A validated Carnot group `G ≅ R^n` in graded exponential coordinates.
#[derive(Clone, PartialEq)]
pub struct CarnotGroup {
    strata: Vec<usize>,
    n: usize,
    stratum: Vec<usize>,
    c: Vec<f64>,
    gamma: Vec<f64>,
    exact: bool,
}

impl fmt::Debug for CarnotGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CarnotGroup")
            .field("strata", &self.strata)
            .field("exact", &self.exact)
            .finish_non_exhaustive()
    }
}

impl CarnotGroup {
    pub fn new(strata: Vec<usize>, c: StructureConstants) -> Result<Self, AlgebraError> {
        validate_structure(&strata, &c)?;
        let n: usize = strata.iter().sum();
        if strata.len() > BCH_COEFFS.len() {
            return Err(AlgebraError::InvalidSpec(format!("step {} is not supported", strata.len())));
        }
        let exact = matches!(c, StructureConstants::Exact(_));
        let c = c.to_f64();
        let mut gamma = vec![0.0; n * n * n];
        let at = |i: usize, j: usize, r: usize| c[(i * n + j) * n + r];
        for i in 0..n {
            for j in 0..n {
                for r in 0..n {
                    gamma[(i * n + j) * n + r] = 0.5 * (at(i, j, r) - at(j, r, i) + at(r, i, j));
                }
            }
        }
        Ok(CarnotGroup {
            stratum: stratum_map(&strata),
            strata,
            n,
            c,
            gamma,
            exact,
        })
    }

    pub fn from_spec(spec: &GroupSpec) -> Result<Self, AlgebraError> {
        Self::new(spec.strata.clone(), spec.structure_constants()?)
    }

    pub fn from_json(text: &str) -> Result<Self, AlgebraError> {
        let spec: GroupSpec =
            serde_json::from_str(text).map_err(|e| AlgebraError::InvalidSpec(e.to_string()))?;
        Self::from_spec(&spec)
    }

    /// Heisenberg group `H^m`, coordinates `(x_1, y_1, …, x_m, y_m, t)` and
    /// `[X_k, Y_k] = T`.
    pub fn heisenberg(m: usize) -> Self {
        assert!(m >= 1);
        let n = 2 * m + 1;
        let mut c = vec![<BigRational as Zero>::zero(); n * n * n];
        let one = BigRational::from_integer(1.into());
        for k in 0..m {
            let (x, y) = (2 * k, 2 * k + 1);
            c[(x * n + y) * n + n - 1] = one.clone();
            c[(y * n + x) * n + n - 1] = -one.clone();
        }
        Self::new(vec![2 * m, 1], StructureConstants::Exact(c)).expect("Heisenberg algebra is valid")
    }

    /// The abelian group `R^n` (step one).
    pub fn abelian(n: usize) -> Self {
        assert!(n >= 1);
        let c = vec![<BigRational as Zero>::zero(); n * n * n];
        Self::new(vec![n], StructureConstants::Exact(c)).expect("abelian algebra is valid")
    }

    /// Engel group: `[X_1, X_2] = X_3`, `[X_1, X_3] = X_4` (step 3).
    pub fn engel() -> Self {
        let spec = GroupSpec {
            strata: vec![2, 1, 1],
            brackets: vec![
                BracketEntry { i: 1, j: 2, r: 3, c: 1.into() },
                BracketEntry { i: 1, j: 3, r: 4, c: 1.into() },
            ],
        };
        Self::from_spec(&spec).expect("Engel algebra is valid")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn step(&self) -> usize {
        self.strata.len()
    }

    /// Dimension `h` of the horizontal layer.
    pub fn horizontal_dim(&self) -> usize {
        self.strata[0]
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// 1-based stratum of coordinate `i`.
    pub fn stratum(&self, i: usize) -> usize {
        self.stratum[i]
    }

    /// Indices of the second stratum.
    pub fn h2_indices(&self) -> std::ops::Range<usize> {
        let h = self.horizontal_dim();
        h..h + self.strata.get(1).copied().unwrap_or(0)
    }

    pub fn homogeneous_dimension(&self) -> usize {
        self.strata.iter().enumerate().map(|(i, d)| (i + 1) * d).sum()
    }

    pub fn c(&self, i: usize, j: usize, r: usize) -> f64 {
        self.c[(i * self.n + j) * self.n + r]
    }

    /// Christoffel symbols of the left-invariant frame:
    /// `∇_{X_i} X_j = Σ_r Γ[i][j][r] X_r`.
    pub fn gamma(&self, i: usize, j: usize, r: usize) -> f64 {
        self.gamma[(i * self.n + j) * self.n + r]
    }

    /// `C^α` as an `n×n` row-major matrix, `C^α[i][j] = C[i][j][α]`.
    pub fn c_matrix(&self, alpha: usize) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.c(i, j, alpha);
            }
        }
        m
    }

    /// Horizontal block `C_H^α` as an `h×h` row-major matrix.
    pub fn c_h_matrix(&self, alpha: usize) -> Vec<f64> {
        let h = self.horizontal_dim();
        let mut m = vec![0.0; h * h];
        for i in 0..h {
            for j in 0..h {
                m[i * h + j] = self.c(i, j, alpha);
            }
        }
        m
    }

    /// Whether this is `H^m` in the canonical ordering `(x_1, y_1, …, t)`.
    pub fn is_heisenberg(&self) -> bool {
        if self.step() != 2 || self.strata[1] != 1 || self.strata[0] % 2 != 0 {
            return false;
        }
        let n = self.n;
        let h = self.strata[0];
        for i in 0..h {
            for j in 0..h {
                let want = if i % 2 == 0 && j == i + 1 {
                    1.0
                } else if j % 2 == 0 && i == j + 1 {
                    -1.0
                } else {
                    0.0
                };
                if (self.c(i, j, n - 1) - want).abs() > FLOAT_TOL {
                    return false;
                }
            }
        }
        true
    }

    /// Intrinsic dilation `δ_t`: stratum-`s` coordinates scale by `t^s`.
    pub fn dilation(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, AlgebraError> {
        if !(t > 0.0) {
            return Err(AlgebraError::NonPositiveScale(t));
        }
        self.check_dim(x)?;
        Ok(x.iter()
            .zip(&self.stratum)
            .map(|(v, &s)| v * t.powi(s as i32))
            .collect())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), AlgebraError> {
        if x.len() != self.n {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Frame matrix entries `A[k][i]` (coordinate `k` of `X_i`) as jets at `x`.
    ///
    /// `X_i(x) = Σ_m c_m ad_x^m e_i` with `c_m` the coefficients of
    /// `z/(1-e^{-z})`; for step two this is `e_i + ½ [x, e_i]`.
    pub fn frame_jets(&self, x: &[f64], order: u8) -> Vec<Jet3> {
        let n = self.n;
        let xs = Jet3::variables(x, order);
        let mut ad: Vec<Jet3> = Vec::with_capacity(n * n);
        for r in 0..n {
            for j in 0..n {
                let mut e = Jet3::zero(n, order);
                for (i, xi) in xs.iter().enumerate() {
                    let c = self.c(i, j, r);
                    if c != 0.0 {
                        e = &e + &(xi * c);
                    }
                }
                ad.push(e);
            }
        }
        let ad_zero: Vec<bool> = (0..n * n)
            .map(|k| (0..n).all(|i| self.c(i, k % n, k / n) == 0.0))
            .collect();
        let mut a: Vec<Jet3> = (0..n * n)
            .map(|k| Jet3::constant(n, if k / n == k % n { 1.0 } else { 0.0 }, order))
            .collect();
        let mut p = a.clone();
        for coeff in BCH_COEFFS.iter().take(self.step()).skip(1) {
            let mut q = Vec::with_capacity(n * n);
            for r in 0..n {
                for j in 0..n {
                    let mut e = Jet3::zero(n, order);
                    for s in 0..n {
                        if !ad_zero[r * n + s] {
                            e = &e + &(&ad[r * n + s] * &p[s * n + j]);
                        }
                    }
                    q.push(e);
                }
            }
            p = q;
            if *coeff != 0.0 {
                for k in 0..n * n {
                    a[k] = &a[k] + &(&p[k] * *coeff);
                }
            }
        }
        a
    }

    /// Frame matrix with its first and second coordinate derivatives at `x`.
    pub fn frame_matrix(&self, x: &[f64]) -> Result<FrameMatrix, AlgebraError> {
        self.check_dim(x)?;
        let n = self.n;
        let jets = self.frame_jets(x, 2);
        let mut fm = FrameMatrix {
            n,
            a: vec![0.0; n * n],
            da: vec![0.0; n * n * n],
            dda: vec![0.0; n * n * n * n],
        };
        for k in 0..n {
            for i in 0..n {
                let j = &jets[k * n + i];
                fm.a[k * n + i] = j.value();
                let d1 = j.d1().expect("order 2");
                let d2 = j.d2().expect("order 2");
                for p in 0..n {
                    fm.da[(p * n + k) * n + i] = d1[p];
                    for q in 0..n {
                        fm.dda[((p * n + q) * n + k) * n + i] = d2[p * n + q];
                    }
                }
            }
        }
        Ok(fm)
    }

    /// `⟨R(X_i, X_j) X_h, X_k⟩` with
    /// `R(X, Y)Z = ∇_Y ∇_X Z − ∇_X ∇_Y Z − ∇_{[Y, X]} Z`.
    pub fn riemann(&self, i: usize, j: usize, h: usize, k: usize) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n {
            acc += self.gamma(i, h, r) * self.gamma(j, r, k) - self.gamma(j, h, r) * self.gamma(i, r, k)
                - self.c(j, i, r) * self.gamma(r, h, k);
        }
        acc
    }
}

/// The left-invariant frame at a point: `A[k][i]` is coordinate `k` of `X_i`,
/// with exact first and second coordinate derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    n: usize,
    a: Vec<f64>,
    da: Vec<f64>,
    dda: Vec<f64>,
}

impl FrameMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn a(&self, k: usize, i: usize) -> f64 {
        self.a[k * self.n + i]
    }

    /// `∂_p A[k][i]`.
    pub fn da(&self, p: usize, k: usize, i: usize) -> f64 {
        self.da[(p * self.n + k) * self.n + i]
    }

    /// `∂_p ∂_q A[k][i]`.
    pub fn dda(&self, p: usize, q: usize, k: usize, i: usize) -> f64 {
        let n = self.n;
        self.dda[((p * n + q) * n + k) * n + i]
    }

    /// Coordinate components of `Σ_i v_i X_i`.
    pub fn to_coordinates(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| (0..self.n).map(|i| self.a(k, i) * v[i]).sum())
            .collect()
    }

    /// Frame components of a coordinate vector (solves `A v = w`; `A` is
    /// unipotent lower-triangular in graded coordinates).
    pub fn to_frame(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut v = vec![0.0; n];
        for k in 0..n {
            let mut s = w[k];
            for i in 0..k {
                s -= self.a(k, i) * v[i];
            }
            v[k] = s / self.a(k, k);
        }
        v
    }

    pub fn determinant(&self) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.a);
        m.determinant()
    }
}
