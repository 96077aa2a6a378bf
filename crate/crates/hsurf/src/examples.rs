//! Closed-form reference surfaces: vertical hyperplanes, non-vertical
//! hyperplanes `{x_α = 0}` in step-two groups, and the hyperbolic paraboloid
//! `t = (‖x‖² − ‖y‖²)/4` in `H^m`.
//!
//! Each comes with an analytic defining function, a graph chart for
//! quadrature, and closed-form values of the quantities computed elsewhere
//! from jets.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use crate::algebra::CarnotGroup;
use crate::geometry::{adapted_hs_basis, dot, restrict, GeometryError};
use crate::jets::{Jet3, ScalarField};

type HeightFn = dyn Fn(&[Jet3]) -> Jet3 + Send + Sync;

/// How the graph coordinate is obtained from the chart coordinates.
#[derive(Clone)]
pub enum Height {
    /// `x_axis = G(u)` with `G` evaluated on jets.
    Explicit(Arc<HeightFn>),
    /// Root of `f(u, x_axis) = 0` inside `[lo, hi]`.
    Implicit { field: ScalarField, lo: f64, hi: f64 },
}

/// A hypersurface written as a graph over the coordinate hyperplane
/// orthogonal to `axis`.  Chart coordinates `u` are the remaining
/// coordinates in increasing index order.
#[derive(Clone)]
pub struct GraphChart {
    pub n: usize,
    pub axis: usize,
    pub height: Height,
}

impl std::fmt::Debug for GraphChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphChart")
            .field("n", &self.n)
            .field("axis", &self.axis)
            .finish_non_exhaustive()
    }
}

impl GraphChart {
    pub fn explicit<F>(n: usize, axis: usize, g: F) -> Self
    where
        F: Fn(&[Jet3]) -> Jet3 + Send + Sync + 'static,
    {
        GraphChart {
            n,
            axis,
            height: Height::Explicit(Arc::new(g)),
        }
    }

    pub fn implicit(n: usize, axis: usize, field: ScalarField, lo: f64, hi: f64) -> Self {
        GraphChart {
            n,
            axis,
            height: Height::Implicit { field, lo, hi },
        }
    }

    /// Coordinate indices used as chart coordinates.
    pub fn chart_axes(&self) -> Vec<usize> {
        (0..self.n).filter(|&k| k != self.axis).collect()
    }

    /// Height and its chart gradient at `u`.
    pub fn height(&self, u: &[f64]) -> Result<(f64, Vec<f64>), GeometryError> {
        match &self.height {
            Height::Explicit(g) => {
                let j = g(&Jet3::variables(u, 1));
                Ok((j.value(), j.d1()?.to_vec()))
            }
            Height::Implicit { field, lo, hi } => {
                let x_g = solve_level(field, &self.lift(u, 0.0), self.axis, *lo, *hi)?;
                let x = self.lift(u, x_g);
                let j = field.jet(&x, 1)?;
                let d = j.d1()?;
                let dg = d[self.axis];
                Ok((x_g, self.chart_axes().iter().map(|&k| -d[k] / dg).collect()))
            }
        }
    }

    /// Height as a jet in the chart variables (explicit charts only).
    pub fn height_jet(&self, u: &[f64], order: u8) -> Option<Jet3> {
        match &self.height {
            Height::Explicit(g) => Some(g(&Jet3::variables(u, order))),
            Height::Implicit { .. } => None,
        }
    }

    fn lift(&self, u: &[f64], xg: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n);
        let mut it = u.iter();
        for k in 0..self.n {
            x.push(if k == self.axis { xg } else { *it.next().expect("chart dimension") });
        }
        x
    }

    /// Point of the surface above `u`.
    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>, GeometryError> {
        Ok(self.lift(u, self.height(u)?.0))
    }

    /// Chart coordinates of a point.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.chart_axes().iter().map(|&k| x[k]).collect()
    }

    /// Point and coordinate tangent vectors `∂x/∂u_j` above `u`.
    pub fn embed_with_tangents(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>), GeometryError> {
        let (g, dg) = self.height(u)?;
        let x = self.lift(u, g);
        let tangents = self
            .chart_axes()
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let mut t = vec![0.0; self.n];
                t[k] = 1.0;
                t[self.axis] = dg[j];
                t
            })
            .collect();
        Ok((x, tangents))
    }
}

/// Safeguarded Newton/bisection for `f(x + s e_axis) = 0`, `s ∈ [lo, hi]`,
/// to `1e-12`.
pub fn solve_level(field: &ScalarField, x0: &[f64], axis: usize, lo: f64, hi: f64) -> Result<f64, GeometryError> {
    let eval = |s: f64| {
        let mut y = x0.to_vec();
        y[axis] = s;
        field.value(&y)
    };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (eval(a), eval(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(GeometryError::Invalid(format!(
            "level set not bracketed along axis {} in [{}, {}]",
            axis + 1,
            lo,
            hi
        )));
    }
    let mut s = 0.5 * (a + b);
    for _ in 0..200 {
        let mut y = x0.to_vec();
        y[axis] = s;
        let j = field.jet(&y, 1)?;
        let (fs, ds) = (j.value(), j.d1()?[axis]);
        if fs == 0.0 {
            return Ok(s);
        }
        if fs.signum() == fa.signum() {
            a = s;
            fa = fs;
        } else {
            b = s;
        }
        let newton = s - fs / ds;
        let next = if ds != 0.0 && newton > a.min(b) && newton < a.max(b) {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - s).abs() <= 1e-12 * (1.0 + s.abs()) || (b - a).abs() <= 1e-12 {
            return Ok(next);
        }
        s = next;
    }
    Ok(s)
}

/// Which reference family a surface belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleKind {
    /// `{⟨d, x_H⟩ = c}`.
    VerticalPlane { d: Vec<f64>, offset: f64 },
    /// `{x_α = 0}` in a step-two group.
    NonverticalPlane { alpha: usize },
    /// `t = (‖x‖² − ‖y‖²)/4` in `H^m`.
    Paraboloid { m: usize },
}

/// Closed-form values at a (non-characteristic) point of the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub p_h_norm: f64,
    pub nu_h: Vec<f64>,
    pub varpi: Vec<f64>,
    pub h_cc: f64,
    pub b_norm2: f64,
    pub s_norm2: f64,
    pub a_norm2: f64,
    pub b_ts: f64,
    /// `σ_H` density with respect to the chart's Lebesgue measure.
    pub sigma_h_density: f64,
    /// `L_HS ϖ` for the (single) nonzero vertical component, when known.
    pub l_hs_varpi: Option<f64>,
    /// `∂ϖ/∂ν_H°` (Heisenberg only).
    pub dvarpi_dnu0: Option<f64>,
    /// `Δ_H ϖ` for the natural extension (paraboloid only).
    pub delta_h_varpi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExampleSurface {
    pub kind: ExampleKind,
    pub group: CarnotGroup,
    pub field: ScalarField,
    pub chart: GraphChart,
}

/// Vertical hyperplane `{⟨d, x_H⟩ = offset}`.
pub fn vertical_hyperplane(group: CarnotGroup, d: Vec<f64>, offset: f64) -> Result<ExampleSurface, GeometryError> {
    let h = group.horizontal_dim();
    let n = group.dim();
    if d.len() != h || dot(&d, &d) == 0.0 {
        return Err(GeometryError::Invalid("direction must be a nonzero horizontal vector".into()));
    }
    let dd = d.clone();
    let field = ScalarField::analytic(move |x: &[Jet3]| {
        let mut acc = Jet3::constant(x[0].dim(), -offset, x[0].order());
        for (k, dk) in dd.iter().enumerate() {
            acc = &acc + &(&x[k] * *dk);
        }
        acc
    });
    let mut axis = 0;
    for k in 1..h {
        if d[k].abs() > d[axis].abs() {
            axis = k;
        }
    }
    let dd = d.clone();
    let chart = GraphChart::explicit(n, axis, move |u: &[Jet3]| {
        let mut acc = Jet3::constant(u[0].dim(), offset / dd[axis], u[0].order());
        let mut j = 0;
        for k in 0..n {
            if k == axis {
                continue;
            }
            if k < h {
                acc = &acc - &(&u[j] * (dd[k] / dd[axis]));
            }
            j += 1;
        }
        acc
    });
    Ok(ExampleSurface {
        kind: ExampleKind::VerticalPlane { d, offset },
        group,
        field,
        chart,
    })
}

/// Non-vertical hyperplane `{x_alpha = 0}`; `alpha` must lie in the second
/// stratum of a step-two group.
pub fn nonvertical_hyperplane(group: CarnotGroup, alpha: usize) -> Result<ExampleSurface, GeometryError> {
    if group.step() != 2 || !group.h2_indices().contains(&alpha) {
        return Err(GeometryError::Invalid(
            "non-vertical hyperplanes need a second-stratum coordinate of a step-two group".into(),
        ));
    }
    let n = group.dim();
    let field = ScalarField::analytic(move |x: &[Jet3]| x[alpha].clone());
    let chart = GraphChart::explicit(n, alpha, |u: &[Jet3]| Jet3::zero(u[0].dim(), u[0].order()));
    Ok(ExampleSurface {
        kind: ExampleKind::NonverticalPlane { alpha },
        group,
        field,
        chart,
    })
}

/// Hyperbolic paraboloid `t = (Σ x_k² − Σ y_k²)/4` in `H^m`, defined by
/// `f = t − (Σ x_k² − Σ y_k²)/4` (so that `ϖ > 0`).
pub fn hyperbolic_paraboloid(m: usize) -> ExampleSurface {
    let group = CarnotGroup::heisenberg(m);
    let n = 2 * m + 1;
    let quad = move |z: &[Jet3]| {
        let mut acc = Jet3::zero(z[0].dim(), z[0].order());
        for k in 0..m {
            acc = &acc + &(&(&z[2 * k] * &z[2 * k]) - &(&z[2 * k + 1] * &z[2 * k + 1]));
        }
        acc * 0.25
    };
    let field = ScalarField::analytic(move |x: &[Jet3]| &x[n - 1] - &quad(&x[..n - 1]));
    let chart = GraphChart::explicit(n, n - 1, quad);
    ExampleSurface {
        kind: ExampleKind::Paraboloid { m },
        group,
        field,
        chart,
    }
}

impl ExampleSurface {
    /// Short identifier used on the command line.
    pub fn id(&self) -> &'static str {
        match self.kind {
            ExampleKind::VerticalPlane { .. } => "vplane",
            ExampleKind::NonverticalPlane { .. } => "nvplane",
            ExampleKind::Paraboloid { .. } => "hparab",
        }
    }

    /// Whether the closed form says `x` is a characteristic point.
    pub fn is_characteristic(&self, x: &[f64]) -> bool {
        match &self.kind {
            ExampleKind::VerticalPlane { .. } => false,
            ExampleKind::NonverticalPlane { alpha } => self.c_xh(*alpha, x).iter().all(|v| *v == 0.0),
            ExampleKind::Paraboloid { m } => (0..*m).all(|k| x[2 * k] + x[2 * k + 1] == 0.0),
        }
    }

    fn c_xh(&self, alpha: usize, x: &[f64]) -> Vec<f64> {
        let h = self.group.horizontal_dim();
        let c = self.group.c_h_matrix(alpha);
        (0..h).map(|i| (0..h).map(|j| c[i * h + j] * x[j]).sum()).collect()
    }

    /// Closed-form values at a point `x` of the surface; `None` at
    /// characteristic points.
    pub fn closed_form(&self, x: &[f64]) -> Option<ClosedForm> {
        let n = self.group.dim();
        let h = self.group.horizontal_dim();
        match &self.kind {
            ExampleKind::VerticalPlane { d, .. } => {
                let norm = dot(d, d).sqrt();
                Some(ClosedForm {
                    p_h_norm: 1.0,
                    nu_h: d.iter().map(|v| v / norm).collect(),
                    varpi: vec![0.0; n - h],
                    h_cc: 0.0,
                    b_norm2: 0.0,
                    s_norm2: 0.0,
                    a_norm2: 0.0,
                    b_ts: 0.0,
                    sigma_h_density: norm / d[self.chart.axis].abs(),
                    l_hs_varpi: Some(0.0),
                    dvarpi_dnu0: self.group.is_heisenberg().then_some(0.0),
                    delta_h_varpi: Some(0.0),
                })
            }
            ExampleKind::NonverticalPlane { alpha } => {
                let cx = self.c_xh(*alpha, x);
                let r = dot(&cx, &cx).sqrt();
                if r == 0.0 {
                    return None;
                }
                let nu_h: Vec<f64> = cx.iter().map(|v| -v / r).collect();
                let w = 2.0 / r;
                let mut varpi = vec![0.0; n - h];
                varpi[alpha - h] = w;
                let c_hs = restrict(&self.group.c_h_matrix(*alpha), &adapted_hs_basis(&nu_h));
                let c_hs2: f64 = c_hs.iter().map(|v| v * v).sum();
                let a2 = w * w * c_hs2 / 4.0;
                let heis = self.group.is_heisenberg();
                Some(ClosedForm {
                    p_h_norm: (r / 2.0) / (1.0 + r * r / 4.0).sqrt(),
                    nu_h,
                    varpi,
                    h_cc: 0.0,
                    b_norm2: a2,
                    s_norm2: 0.0,
                    a_norm2: a2,
                    b_ts: a2,
                    sigma_h_density: r / 2.0,
                    l_hs_varpi: Some(-w * a2),
                    // in H^m, |C x_H| = |x_H| and ν_H° = −x_H/|x_H|
                    dvarpi_dnu0: heis.then_some(2.0 / (r * r)),
                    delta_h_varpi: heis.then(|| 2.0 * (3.0 - h as f64) / (r * r * r)),
                })
            }
            ExampleKind::Paraboloid { m } => {
                let m = *m;
                let v: Vec<f64> = (0..m).map(|k| x[2 * k] + x[2 * k + 1]).collect();
                let r2 = dot(&v, &v);
                if r2 == 0.0 {
                    return None;
                }
                let r = r2.sqrt();
                let mf = m as f64;
                let w = SQRT_2 / r;
                let mut nu_h = vec![0.0; 2 * m];
                for k in 0..m {
                    nu_h[2 * k] = -v[k] / (SQRT_2 * r);
                    nu_h[2 * k + 1] = v[k] / (SQRT_2 * r);
                }
                let gh = r / SQRT_2;
                Some(ClosedForm {
                    p_h_norm: gh / (1.0 + gh * gh).sqrt(),
                    nu_h,
                    varpi: vec![w],
                    h_cc: 0.0,
                    b_norm2: 2.0 * (mf - 1.0) / r2,
                    s_norm2: (mf - 1.0) / r2,
                    a_norm2: (mf - 1.0) / r2,
                    b_ts: 2.0 * (mf - 2.0) / r2,
                    sigma_h_density: r / SQRT_2,
                    l_hs_varpi: Some(-w * 2.0 * (mf - 2.0) / r2),
                    dvarpi_dnu0: Some(2.0 / r2),
                    delta_h_varpi: Some(2.0 * w * (3.0 - mf) / r2),
                })
            }
        }
    }

    /// A point of the surface above chart coordinates `u`.
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        self.chart.embed(u).expect("explicit chart")
    }
}

/// Looks up a builtin surface by id (`vplane`, `nvplane`, `hparab`) in the
/// given group.  `vplane` is `{x_1 = 0}`, `nvplane` is `{x_α = 0}` for the
/// first second-stratum coordinate, and `hparab` needs a Heisenberg group.
pub fn builtin(id: &str, group: &CarnotGroup) -> Result<ExampleSurface, GeometryError> {
    match id {
        "vplane" => {
            let mut d = vec![0.0; group.horizontal_dim()];
            d[0] = 1.0;
            vertical_hyperplane(group.clone(), d, 0.0)
        }
        "nvplane" => nonvertical_hyperplane(group.clone(), group.horizontal_dim()),
        "hparab" => {
            if !group.is_heisenberg() {
                return Err(GeometryError::NotHeisenberg);
            }
            Ok(hyperbolic_paraboloid(group.horizontal_dim() / 2))
        }
        other => Err(GeometryError::Invalid(format!("unknown builtin surface {:?}", other))),
    }
}
