//! Truncated Taylor jets (value plus partial derivatives up to order three)
//! and derivatives along the left-invariant frame.
//!
//! A [`Jet3`] is the degree-`order` Taylor polynomial of a scalar field at a
//! point, stored as coordinate partials.  Arithmetic on jets is exact
//! truncated arithmetic, so composing jets gives forward-mode higher-order
//! differentiation.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

use crate::algebra::FrameMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jet of order {have} cannot supply derivatives of order {need}")]
    InsufficientOrder { have: u8, need: u8 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("jet order {0} is not supported (maximum is 3)")]
    UnsupportedOrder(u8),
    #[error("field is not finite near the stencil point {0:?}")]
    NonFiniteSample(Vec<f64>),
}

pub const MAX_ORDER: u8 = 3;

/// Value and coordinate partials of a scalar field at a point.
///
/// `d2` and `d3` are dense, symmetric, row-major.  Slots above `order` are
/// empty and every accessor for them reports [`JetError::InsufficientOrder`].
#[derive(Clone, PartialEq)]
pub struct Jet3 {
    n: usize,
    order: u8,
    value: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

impl fmt::Debug for Jet3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet3")
            .field("n", &self.n)
            .field("order", &self.order)
            .field("value", &self.value)
            .field("d1", &self.d1)
            .finish_non_exhaustive()
    }
}

fn sizes(n: usize, order: u8) -> (usize, usize, usize) {
    (
        if order >= 1 { n } else { 0 },
        if order >= 2 { n * n } else { 0 },
        if order >= 3 { n * n * n } else { 0 },
    )
}

impl Jet3 {
    pub fn zero(n: usize, order: u8) -> Self {
        Self::constant(n, 0.0, order)
    }

    pub fn constant(n: usize, c: f64, order: u8) -> Self {
        assert!(order <= MAX_ORDER, "jet order above 3");
        let (s1, s2, s3) = sizes(n, order);
        Jet3 {
            n,
            order,
            value: c,
            d1: vec![0.0; s1],
            d2: vec![0.0; s2],
            d3: vec![0.0; s3],
        }
    }

    /// The coordinate function `x_i` seeded at value `xi`.
    pub fn variable(n: usize, i: usize, xi: f64, order: u8) -> Self {
        let mut j = Self::constant(n, xi, order);
        if order >= 1 {
            j.d1[i] = 1.0;
        }
        j
    }

    /// Seeds all coordinate jets at `x`.
    pub fn variables(x: &[f64], order: u8) -> Vec<Jet3> {
        (0..x.len())
            .map(|i| Self::variable(x.len(), i, x[i], order))
            .collect()
    }

    /// Builds a jet from explicit slots.  Slot lengths must agree with `order`
    /// (`d2` is `n*n`, `d3` is `n*n*n`); higher slots must be empty.
    pub fn from_parts(
        n: usize,
        order: u8,
        value: f64,
        d1: Vec<f64>,
        d2: Vec<f64>,
        d3: Vec<f64>,
    ) -> Result<Self, JetError> {
        if order > MAX_ORDER {
            return Err(JetError::UnsupportedOrder(order));
        }
        let (s1, s2, s3) = sizes(n, order);
        for (got, expected) in [(d1.len(), s1), (d2.len(), s2), (d3.len(), s3)] {
            if got != expected {
                return Err(JetError::DimensionMismatch { expected, got });
            }
        }
        Ok(Jet3 {
            n,
            order,
            value,
            d1,
            d2,
            d3,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    fn need(&self, k: u8) -> Result<(), JetError> {
        if self.order < k {
            Err(JetError::InsufficientOrder {
                have: self.order,
                need: k,
            })
        } else {
            Ok(())
        }
    }

    pub fn d1(&self) -> Result<&[f64], JetError> {
        self.need(1)?;
        Ok(&self.d1)
    }

    pub fn d2(&self) -> Result<&[f64], JetError> {
        self.need(2)?;
        Ok(&self.d2)
    }

    pub fn d3(&self) -> Result<&[f64], JetError> {
        self.need(3)?;
        Ok(&self.d3)
    }

    pub fn grad(&self, i: usize) -> Result<f64, JetError> {
        self.need(1)?;
        Ok(self.d1[i])
    }

    pub fn hess(&self, i: usize, j: usize) -> Result<f64, JetError> {
        self.need(2)?;
        Ok(self.d2[i * self.n + j])
    }

    pub fn third(&self, i: usize, j: usize, k: usize) -> Result<f64, JetError> {
        self.need(3)?;
        Ok(self.d3[(i * self.n + j) * self.n + k])
    }

    /// Drops all slots above `order`.
    pub fn truncate(&self, order: u8) -> Jet3 {
        if order >= self.order {
            return self.clone();
        }
        let (s1, s2, s3) = sizes(self.n, order);
        Jet3 {
            n: self.n,
            order,
            value: self.value,
            d1: self.d1[..s1].to_vec(),
            d2: self.d2[..s2].to_vec(),
            d3: self.d3[..s3].to_vec(),
        }
    }

    /// Jet of the partial derivative `∂_k` (one order lower).
    pub fn partial(&self, k: usize) -> Result<Jet3, JetError> {
        self.need(1)?;
        let n = self.n;
        let order = self.order - 1;
        let (s1, s2, _) = sizes(n, order);
        let mut d1 = vec![0.0; s1];
        let mut d2 = vec![0.0; s2];
        if order >= 1 {
            for i in 0..n {
                d1[i] = self.d2[i * n + k];
            }
        }
        if order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    d2[i * n + j] = self.d3[(i * n + j) * n + k];
                }
            }
        }
        Ok(Jet3 {
            n,
            order,
            value: self.d1[k],
            d1,
            d2,
            d3: Vec::new(),
        })
    }

    /// Largest absolute difference over the slots both jets carry.
    pub fn max_abs_diff(&self, other: &Jet3) -> f64 {
        let order = self.order.min(other.order);
        let (s1, s2, s3) = sizes(self.n, order);
        let mut m = (self.value - other.value).abs();
        for (a, b) in self.d1[..s1].iter().zip(&other.d1[..s1]) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.d2[..s2].iter().zip(&other.d2[..s2]) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.d3[..s3].iter().zip(&other.d3[..s3]) {
            m = m.max((a - b).abs());
        }
        m
    }

    fn binary_order(&self, other: &Jet3) -> u8 {
        assert_eq!(self.n, other.n, "jet dimension mismatch");
        self.order.min(other.order)
    }

    fn linear(&self, a: f64, other: &Jet3, b: f64) -> Jet3 {
        let order = self.binary_order(other);
        let (s1, s2, s3) = sizes(self.n, order);
        let lin = |x: &[f64], y: &[f64], s: usize| -> Vec<f64> {
            (0..s).map(|i| a * x[i] + b * y[i]).collect()
        };
        Jet3 {
            n: self.n,
            order,
            value: a * self.value + b * other.value,
            d1: lin(&self.d1, &other.d1, s1),
            d2: lin(&self.d2, &other.d2, s2),
            d3: lin(&self.d3, &other.d3, s3),
        }
    }

    pub fn scale(&self, c: f64) -> Jet3 {
        Jet3 {
            n: self.n,
            order: self.order,
            value: c * self.value,
            d1: self.d1.iter().map(|v| c * v).collect(),
            d2: self.d2.iter().map(|v| c * v).collect(),
            d3: self.d3.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add_const(&self, c: f64) -> Jet3 {
        let mut r = self.clone();
        r.value += c;
        r
    }

    fn product(&self, g: &Jet3) -> Jet3 {
        let order = self.binary_order(g);
        let n = self.n;
        let f = self;
        let (s1, s2, s3) = sizes(n, order);
        let mut d1 = vec![0.0; s1];
        let mut d2 = vec![0.0; s2];
        let mut d3 = vec![0.0; s3];
        if order >= 1 {
            for i in 0..n {
                d1[i] = f.d1[i] * g.value + f.value * g.d1[i];
            }
        }
        if order >= 2 {
            for i in 0..n {
                for j in i..n {
                    let v = f.d2[i * n + j] * g.value
                        + f.d1[i] * g.d1[j]
                        + f.d1[j] * g.d1[i]
                        + f.value * g.d2[i * n + j];
                    d2[i * n + j] = v;
                    d2[j * n + i] = v;
                }
            }
        }
        if order >= 3 {
            for i in 0..n {
                for j in i..n {
                    for k in j..n {
                        let ij = i * n + j;
                        let ik = i * n + k;
                        let jk = j * n + k;
                        let v = f.d3[ij * n + k] * g.value
                            + f.d2[ij] * g.d1[k]
                            + f.d2[ik] * g.d1[j]
                            + f.d2[jk] * g.d1[i]
                            + f.d1[i] * g.d2[jk]
                            + f.d1[j] * g.d2[ik]
                            + f.d1[k] * g.d2[ij]
                            + f.value * g.d3[ij * n + k];
                        set_sym3(&mut d3, n, i, j, k, v);
                    }
                }
            }
        }
        Jet3 {
            n,
            order,
            value: f.value * g.value,
            d1,
            d2,
            d3,
        }
    }

    /// Chain rule for `phi(self)` given `phi` and its first three derivatives
    /// evaluated at `self.value()`.
    pub fn compose(&self, phi: [f64; 4]) -> Jet3 {
        let n = self.n;
        let g = self;
        let order = self.order;
        let (s1, s2, s3) = sizes(n, order);
        let mut d1 = vec![0.0; s1];
        let mut d2 = vec![0.0; s2];
        let mut d3 = vec![0.0; s3];
        if order >= 1 {
            for i in 0..n {
                d1[i] = phi[1] * g.d1[i];
            }
        }
        if order >= 2 {
            for i in 0..n {
                for j in i..n {
                    let v = phi[2] * g.d1[i] * g.d1[j] + phi[1] * g.d2[i * n + j];
                    d2[i * n + j] = v;
                    d2[j * n + i] = v;
                }
            }
        }
        if order >= 3 {
            for i in 0..n {
                for j in i..n {
                    for k in j..n {
                        let ij = i * n + j;
                        let ik = i * n + k;
                        let jk = j * n + k;
                        let v = phi[3] * g.d1[i] * g.d1[j] * g.d1[k]
                            + phi[2] * (g.d2[ij] * g.d1[k] + g.d2[ik] * g.d1[j] + g.d2[jk] * g.d1[i])
                            + phi[1] * g.d3[ij * n + k];
                        set_sym3(&mut d3, n, i, j, k, v);
                    }
                }
            }
        }
        Jet3 {
            n,
            order,
            value: phi[0],
            d1,
            d2,
            d3,
        }
    }

    pub fn recip(&self) -> Jet3 {
        let v = self.value;
        let r = 1.0 / v;
        self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }

    pub fn sqrt(&self) -> Jet3 {
        let s = self.value.sqrt();
        let v = self.value;
        self.compose([s, 0.5 / s, -0.25 / (s * v), 0.375 / (s * v * v)])
    }

    pub fn powi(&self, k: i32) -> Jet3 {
        self.compose(power_derivatives(k as f64, |e| self.value.powi(k - e)))
    }

    pub fn powf(&self, p: f64) -> Jet3 {
        self.compose(power_derivatives(p, |e| self.value.powf(p - e as f64)))
    }

    pub fn exp(&self) -> Jet3 {
        let e = self.value.exp();
        self.compose([e; 4])
    }

    pub fn ln(&self) -> Jet3 {
        let r = 1.0 / self.value;
        self.compose([self.value.ln(), r, -r * r, 2.0 * r * r * r])
    }

    pub fn sin(&self) -> Jet3 {
        let (s, c) = self.value.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet3 {
        let (s, c) = self.value.sin_cos();
        self.compose([c, -s, -c, s])
    }

    /// Embeds a jet in fewer variables into `n` variables; variable `k` of
    /// `self` becomes variable `slots[k]`, the remaining variables are inert.
    pub fn embed(&self, n: usize, slots: &[usize]) -> Jet3 {
        assert_eq!(slots.len(), self.n);
        let m = self.n;
        let order = self.order;
        let mut out = Jet3::constant(n, self.value, order);
        if order >= 1 {
            for a in 0..m {
                out.d1[slots[a]] = self.d1[a];
            }
        }
        if order >= 2 {
            for a in 0..m {
                for b in 0..m {
                    out.d2[slots[a] * n + slots[b]] = self.d2[a * m + b];
                }
            }
        }
        if order >= 3 {
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        out.d3[(slots[a] * n + slots[b]) * n + slots[c]] =
                            self.d3[(a * m + b) * m + c];
                    }
                }
            }
        }
        out
    }
}

fn set_sym3(d3: &mut [f64], n: usize, i: usize, j: usize, k: usize, v: f64) {
    for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
        d3[(a * n + b) * n + c] = v;
    }
}

macro_rules! jet_binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl $tr<&Jet3> for &Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: &Jet3) -> Jet3 {
                let f: fn(&Jet3, &Jet3) -> Jet3 = $body;
                f(self, rhs)
            }
        }
        impl $tr<Jet3> for Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: Jet3) -> Jet3 {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Jet3> for Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: &Jet3) -> Jet3 {
                (&self).$method(rhs)
            }
        }
        impl $tr<Jet3> for &Jet3 {
            type Output = Jet3;
            fn $method(self, rhs: Jet3) -> Jet3 {
                self.$method(&rhs)
            }
        }
    };
}

jet_binop!(Add, add, |a, b| a.linear(1.0, b, 1.0));
jet_binop!(Sub, sub, |a, b| a.linear(1.0, b, -1.0));
jet_binop!(Mul, mul, |a, b| a.product(b));
jet_binop!(Div, div, |a, b| a.product(&b.recip()));

impl Mul<f64> for &Jet3 {
    type Output = Jet3;
    fn mul(self, c: f64) -> Jet3 {
        self.scale(c)
    }
}

impl Mul<f64> for Jet3 {
    type Output = Jet3;
    fn mul(self, c: f64) -> Jet3 {
        self.scale(c)
    }
}

impl Add<f64> for Jet3 {
    type Output = Jet3;
    fn add(self, c: f64) -> Jet3 {
        self.add_const(c)
    }
}

impl Neg for &Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        self.scale(-1.0)
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        self.scale(-1.0)
    }
}

/// Sum of jets (all of the same dimension); `None` for an empty input.
pub fn sum<'a, I: IntoIterator<Item = &'a Jet3>>(it: I) -> Option<Jet3> {
    let mut it = it.into_iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, j| &acc + j))
}

/// Euclidean inner product of two lists of jets.
pub fn dot(a: &[Jet3], b: &[Jet3]) -> Jet3 {
    assert_eq!(a.len(), b.len());
    let mut acc = &a[0] * &b[0];
    for k in 1..a.len() {
        acc = &acc + &(&a[k] * &b[k]);
    }
    acc
}

/// Default finite-difference step at `x`.
pub fn default_step(x: &[f64]) -> f64 {
    let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1e-4f64).max(1e-4 * inf)
}

/// Jet from a black-box callable by central finite differences.
///
/// First derivatives use the fourth-order five-point stencil, second and
/// third derivatives second-order central stencils; third-order stencils run
/// on the step `step^(3/4)` to balance truncation against cancellation.
/// All stencils are exact (up to rounding) on polynomials of degree ≤ 3.
pub fn jet_from_callable<F>(f: F, x: &[f64], order: u8, step: Option<f64>) -> Result<Jet3, JetError>
where
    F: Fn(&[f64]) -> f64,
{
    if order > MAX_ORDER {
        return Err(JetError::UnsupportedOrder(order));
    }
    let n = x.len();
    let h = step.unwrap_or_else(|| default_step(x));
    let bad = std::cell::Cell::new(false);
    let eval = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in shifts {
            y[i] += s;
        }
        let v = f(&y);
        if !v.is_finite() {
            bad.set(true);
        }
        v
    };
    let f0 = eval(&[]);
    let mut jet = Jet3::constant(n, f0, order);
    if order >= 1 {
        for i in 0..n {
            let (p1, m1) = (eval(&[(i, h)]), eval(&[(i, -h)]));
            let (p2, m2) = (eval(&[(i, 2.0 * h)]), eval(&[(i, -2.0 * h)]));
            jet.d1[i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
        }
    }
    if order >= 2 {
        for i in 0..n {
            let v = (eval(&[(i, h)]) - 2.0 * f0 + eval(&[(i, -h)])) / (h * h);
            jet.d2[i * n + i] = v;
            for j in i + 1..n {
                let v = (eval(&[(i, h), (j, h)]) - eval(&[(i, h), (j, -h)]) - eval(&[(i, -h), (j, h)])
                    + eval(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                jet.d2[i * n + j] = v;
                jet.d2[j * n + i] = v;
            }
        }
    }
    if order >= 3 {
        let h3 = h.powf(0.75);
        // second difference in i at the point shifted along j
        let dii = |i: usize, extra: &[(usize, f64)]| {
            let mut c = extra.to_vec();
            let mid = eval(&c);
            c.push((i, h3));
            let p = eval(&c);
            c.pop();
            c.push((i, -h3));
            let m = eval(&c);
            (p - 2.0 * mid + m) / (h3 * h3)
        };
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    let v = if i == j && j == k {
                        (eval(&[(i, 2.0 * h3)]) - 2.0 * eval(&[(i, h3)]) + 2.0 * eval(&[(i, -h3)])
                            - eval(&[(i, -2.0 * h3)]))
                            / (2.0 * h3 * h3 * h3)
                    } else if i == j || j == k {
                        let (a, b) = if i == j { (i, k) } else { (j, i) };
                        (dii(a, &[(b, h3)]) - dii(a, &[(b, -h3)])) / (2.0 * h3)
                    } else {
                        let mut acc = 0.0;
                        for si in [1.0, -1.0] {
                            for sj in [1.0, -1.0] {
                                for sk in [1.0, -1.0] {
                                    acc += si * sj * sk
                                        * eval(&[(i, si * h3), (j, sj * h3), (k, sk * h3)]);
                                }
                            }
                        }
                        acc / (8.0 * h3 * h3 * h3)
                    };
                    set_sym3(&mut jet.d3, n, i, j, k, v);
                }
            }
        }
    }
    if bad.get() {
        return Err(JetError::NonFiniteSample(x.to_vec()));
    }
    Ok(jet)
}

type AnalyticFn = dyn Fn(&[Jet3]) -> Jet3 + Send + Sync;
type PlainFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A scalar field on the group, either analytic (evaluated on jets, so its
/// derivatives are exact) or a black box differentiated by finite differences.
#[derive(Clone)]
pub enum ScalarField {
    Analytic(Arc<AnalyticFn>),
    FiniteDifference { f: Arc<PlainFn>, step: Option<f64> },
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Analytic(_) => f.write_str("ScalarField::Analytic"),
            ScalarField::FiniteDifference { step, .. } => {
                write!(f, "ScalarField::FiniteDifference {{ step: {:?} }}", step)
            }
        }
    }
}

impl ScalarField {
    pub fn analytic<F>(f: F) -> Self
    where
        F: Fn(&[Jet3]) -> Jet3 + Send + Sync + 'static,
    {
        ScalarField::Analytic(Arc::new(f))
    }

    pub fn finite_difference<F>(f: F, step: Option<f64>) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField::FiniteDifference {
            f: Arc::new(f),
            step,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, ScalarField::Analytic(_))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Analytic(f) => f(&Jet3::variables(x, 0)).value(),
            ScalarField::FiniteDifference { f, .. } => f(x),
        }
    }

    pub fn jet(&self, x: &[f64], order: u8) -> Result<Jet3, JetError> {
        match self {
            ScalarField::Analytic(f) => {
                if order > MAX_ORDER {
                    return Err(JetError::UnsupportedOrder(order));
                }
                Ok(f(&Jet3::variables(x, order)))
            }
            ScalarField::FiniteDifference { f, step } => jet_from_callable(|y| f(y), x, order, *step),
        }
    }

    /// The same field with derivatives forced through finite differences.
    pub fn to_finite_difference(&self, step: Option<f64>) -> ScalarField {
        match self {
            ScalarField::Analytic(f) => {
                let f = f.clone();
                ScalarField::FiniteDifference {
                    f: Arc::new(move |x: &[f64]| f(&Jet3::variables(x, 0)).value()),
                    step,
                }
            }
            ScalarField::FiniteDifference { f, .. } => ScalarField::FiniteDifference {
                f: f.clone(),
                step,
            },
        }
    }
}

/// Derivatives of a scalar along the left-invariant frame:
/// `first[i] = X_i φ`, `second[i][j] = X_i X_j φ`, `third[i][j][l] = X_i X_j X_l φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJet {
    pub order: u8,
    pub value: f64,
    pub first: Vec<f64>,
    pub second: Vec<Vec<f64>>,
    pub third: Vec<Vec<Vec<f64>>>,
}

/// Entries `A[k][i]` of the frame matrix as jets of the given order
/// (only orders ≤ 2 can be built from a [`FrameMatrix`]).
pub fn frame_entry_jets(frame: &FrameMatrix, order: u8) -> Vec<Jet3> {
    let n = frame.dim();
    let order = order.min(2);
    let mut out = Vec::with_capacity(n * n);
    for k in 0..n {
        for i in 0..n {
            let mut j = Jet3::constant(n, frame.a(k, i), order);
            if order >= 1 {
                for p in 0..n {
                    j.d1[p] = frame.da(p, k, i);
                }
            }
            if order >= 2 {
                for p in 0..n {
                    for q in 0..n {
                        j.d2[p * n + q] = frame.dda(p, q, k, i);
                    }
                }
            }
            out.push(j);
        }
    }
    out
}

/// `X_i φ` as a jet one order lower than `phi`, with `a` the frame entry
/// jets from [`frame_entry_jets`].
pub fn frame_derivative_jet(a: &[Jet3], phi: &Jet3, i: usize) -> Result<Jet3, JetError> {
    let n = phi.dim();
    let mut acc: Option<Jet3> = None;
    for k in 0..n {
        let c = &a[k * n + i];
        if c.value() == 0.0 && c.d1.iter().all(|v| *v == 0.0) && c.d2.iter().all(|v| *v == 0.0) {
            continue;
        }
        let term = c * &phi.partial(k)?;
        acc = Some(match acc {
            None => term,
            Some(s) => &s + &term,
        });
    }
    Ok(acc.unwrap_or_else(|| Jet3::zero(n, phi.order() - 1)))
}

/// Derivatives of `phi` along the frame up to the order carried by `phi`.
pub fn frame_derivatives(phi: &Jet3, frame: &FrameMatrix) -> Result<FrameJet, JetError> {
    let n = phi.dim();
    if frame.dim() != n {
        return Err(JetError::DimensionMismatch {
            expected: frame.dim(),
            got: n,
        });
    }
    let order = phi.order();
    let a = frame_entry_jets(frame, order.saturating_sub(1));
    let mut fj = FrameJet {
        order,
        value: phi.value(),
        first: Vec::new(),
        second: Vec::new(),
        third: Vec::new(),
    };
    if order == 0 {
        return Ok(fj);
    }
    let firsts: Vec<Jet3> = (0..n)
        .map(|i| frame_derivative_jet(&a, phi, i))
        .collect::<Result<_, _>>()?;
    fj.first = firsts.iter().map(|j| j.value()).collect();
    if order >= 2 {
        fj.second = vec![vec![0.0; n]; n];
        fj.third = if order >= 3 { vec![vec![vec![0.0; n]; n]; n] } else { Vec::new() };
        for j in 0..n {
            for i in 0..n {
                let xij = frame_derivative_jet(&a, &firsts[j], i)?;
                fj.second[i][j] = xij.value();
                if order >= 3 {
                    for h in 0..n {
                        fj.third[h][i][j] = frame_derivative_jet(&a, &xij, h)?.value();
                    }
                }
            }
        }
    }
    Ok(fj)
}

/// Horizontal gradient `(X_1 φ, …, X_h φ)`.
pub fn horizontal_gradient(phi: &Jet3, frame: &FrameMatrix, h: usize) -> Result<Vec<f64>, JetError> {
    let a = frame_entry_jets(frame, 0);
    (0..h)
        .map(|i| frame_derivative_jet(&a, phi, i).map(|j| j.value()))
        .collect()
}

// `d^j/dv^j v^p` for j = 0..3; the falling factorial is checked first so that
// e.g. the third derivative of `v^2` is 0 rather than `0 · ∞` at `v = 0`.
fn power_derivatives(p: f64, pow: impl Fn(i32) -> f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut fall = 1.0;
    for (j, slot) in out.iter_mut().enumerate() {
        if j > 0 {
            fall *= p - (j as f64 - 1.0);
        }
        *slot = if fall == 0.0 { 0.0 } else { fall * pow(j as i32) };
    }
    out
}
