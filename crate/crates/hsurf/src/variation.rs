//! Quadrature over graph patches: area elements, H-perimeter, first and
//! second variation, stability certificates and Rayleigh-quotient estimates.
//!
//! All node evaluations are independent and run in parallel; every sum is a
//! pairwise sum in node order, so results do not depend on thread count.

use std::io::{self, Write};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::CarnotGroup;
use crate::examples::{ExampleSurface, GraphChart};
use crate::geometry::{dot, GeometryError, LocalGeometry, EPS_CHAR};
use crate::jets::{Jet3, JetError, ScalarField};

#[derive(Debug, Error)]
pub enum VariationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("surface is not H-minimal on the patch (max |H| = {0:e})")]
    NotHMinimalOnPatch(f64),
    #[error("Gram matrix of the test functions is degenerate")]
    DegenerateGram,
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[default]
    Midpoint,
    GaussLegendre,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution::Uniform(64)
    }
}

fn default_mask() -> f64 {
    1e-3
}

fn default_minimal_tol() -> f64 {
    1e-6
}

/// Box, grid and masking parameters of a patch.  This is the JSON patch
/// format of the command line.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default)]
    pub rule: Rule,
    /// Nodes with `|P_H ν|` below this are excluded.
    #[serde(default = "default_mask")]
    pub mask: f64,
    /// Graph axis (1-based).  Defaults to the surface's own chart; when
    /// given, the height is found by solving `f = 0` along this axis.
    #[serde(default)]
    pub axis: Option<usize>,
    /// Search interval for the implicit height.
    #[serde(default)]
    pub bracket: Option<[f64; 2]>,
    /// `|H_cc|` allowed on an H-minimal patch.
    #[serde(default = "default_minimal_tol")]
    pub minimal_tol: f64,
}

impl PatchSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: usize) -> Self {
        PatchSpec {
            lo,
            hi,
            resolution: Resolution::Uniform(resolution),
            rule: Rule::Midpoint,
            mask: default_mask(),
            axis: None,
            bracket: None,
            minimal_tol: default_minimal_tol(),
        }
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rule = rule;
        self
    }

    pub fn resolutions(&self) -> Vec<usize> {
        match &self.resolution {
            Resolution::Uniform(r) => vec![*r; self.lo.len()],
            Resolution::PerAxis(v) => v.clone(),
        }
    }

    fn check(&self, d: usize) -> Result<(), VariationError> {
        let res = self.resolutions();
        if self.lo.len() != d || self.hi.len() != d || res.len() != d {
            return Err(VariationError::InvalidPatch(format!("the chart has {} coordinates", d)));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(VariationError::InvalidPatch("need lo < hi on every axis".into()));
        }
        if res.iter().any(|&r| r == 0) {
            return Err(VariationError::InvalidPatch("resolution must be positive".into()));
        }
        if !(self.mask >= 0.0) {
            return Err(VariationError::InvalidPatch("mask radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// One-dimensional nodes and weights on `[a, b]`.
pub fn rule_nodes(rule: Rule, a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    match rule {
        Rule::Midpoint => {
            let h = (b - a) / n as f64;
            (0..n).map(|k| (a + (k as f64 + 0.5) * h, h)).collect()
        }
        Rule::GaussLegendre => {
            let q = GaussLegendre::new(NonZeroUsize::new(n).expect("positive degree"));
            let mut v: Vec<(f64, f64)> = q
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (0.5 * ((b - a) * x + (b + a)), 0.5 * (b - a) * w))
                .collect();
            v.sort_by(|p, q| p.0.total_cmp(&q.0));
            v
        }
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        v.iter().fold(0.0, |a, b| a + b)
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Compactly supported polynomial bump on a box in chart coordinates,
///
/// `w(u) = amplitude · (1 + Σ tilt_j ξ_j) · Π_j (4 ξ_j (1 − ξ_j))^power`,
///
/// with `ξ_j = (u_j − lo_j)/(hi_j − lo_j)`, and `w = 0` off the box.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub amplitude: f64,
    pub power: i32,
    pub tilt: Vec<f64>,
}

impl TestFunction {
    pub fn bump(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let d = lo.len();
        TestFunction {
            lo,
            hi,
            amplitude: 1.0,
            power: 4,
            tilt: vec![0.0; d],
        }
    }

    pub fn zero(d: usize) -> Self {
        let mut w = Self::bump(vec![0.0; d], vec![1.0; d]);
        w.amplitude = 0.0;
        w
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut w = self.clone();
        w.amplitude *= c;
        w
    }

    /// A random bump whose support lies inside `[lo, hi]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, lo: &[f64], hi: &[f64]) -> Self {
        let d = lo.len();
        let mut a = Vec::with_capacity(d);
        let mut b = Vec::with_capacity(d);
        for k in 0..d {
            let len = hi[k] - lo[k];
            let width = len * rng.gen_range(0.3..0.8);
            let start = lo[k] + rng.gen_range(0.0..=1.0) * (len - width);
            a.push(start);
            b.push(start + width);
        }
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        TestFunction {
            lo: a,
            hi: b,
            amplitude: sign * rng.gen_range(0.5..2.0),
            power: 4,
            tilt: (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        }
    }

    /// A fixed family of bumps on `[lo, hi]` followed by `extra` seeded
    /// random ones.
    pub fn library(lo: &[f64], hi: &[f64], extra: usize, seed: u64) -> Vec<Self> {
        let shrink = |f: f64| -> (Vec<f64>, Vec<f64>) {
            let a = lo.iter().zip(hi).map(|(a, b)| a + f * (b - a)).collect();
            let b = lo.iter().zip(hi).map(|(a, b)| b - f * (b - a)).collect();
            (a, b)
        };
        let (a, b) = shrink(0.05);
        let mut out = vec![TestFunction::bump(a.clone(), b.clone())];
        let (c, d) = shrink(0.25);
        out.push(TestFunction::bump(c, d));
        let mut tilted = TestFunction::bump(a, b);
        tilted.tilt = (0..lo.len()).map(|k| if k % 2 == 0 { 0.8 } else { -0.6 }).collect();
        out.push(tilted);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.extend((0..extra).map(|_| TestFunction::random(&mut rng, lo, hi)));
        out
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn inside(&self, u: &[f64]) -> bool {
        self.amplitude != 0.0 && u.iter().enumerate().all(|(k, v)| *v > self.lo[k] && *v < self.hi[k])
    }

    /// `w` on jets of the chart coordinates.
    pub fn jet(&self, u: &[Jet3]) -> Jet3 {
        let n = u[0].dim();
        let ord = u[0].order();
        let vals: Vec<f64> = u.iter().map(|j| j.value()).collect();
        if !self.inside(&vals) {
            return Jet3::zero(n, ord);
        }
        let mut acc = Jet3::constant(n, 1.0, ord);
        let mut lin = Jet3::constant(n, 1.0, ord);
        for k in 0..self.dim() {
            let xi = u[k].add_const(-self.lo[k]) * (1.0 / (self.hi[k] - self.lo[k]));
            let one_minus = (&xi * -1.0) + 1.0;
            let q = (&xi * &one_minus) * 4.0;
            acc = &acc * &q.powi(self.power);
            lin = &lin + &(&xi * self.tilt[k]);
        }
        (&acc * &lin) * self.amplitude
    }

    /// Value and chart gradient.
    pub fn gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let j = self.jet(&Jet3::variables(u, 1));
        (j.value(), j.d1().map(|d| d.to_vec()).unwrap_or_else(|_| vec![0.0; u.len()]))
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.jet(&Jet3::variables(u, 0)).value()
    }
}

/// Data at one quadrature node.  Geometric quantities are NaN at masked
/// nodes.
#[derive(Serialize, Clone, Debug)]
pub struct PatchNode {
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub weight: f64,
    pub p_h_norm: f64,
    pub masked: bool,
    /// Area densities with respect to `du`.
    pub sigma_r: f64,
    pub sigma_h: f64,
    pub nu_h: Vec<f64>,
    pub varpi: Vec<f64>,
    pub h_cc: f64,
    pub s_norm2: f64,
    pub a_norm2: f64,
    pub b_ts: f64,
    /// `grad_HS` of the chart-constant extension: `h × (n−1)` map applied
    /// to the chart gradient.
    #[serde(skip)]
    grad_map: Vec<f64>,
}

impl PatchNode {
    /// `grad_HS W` (frame components) for `W(x) = w(u(x))`.
    pub fn grad_hs(&self, dw: &[f64]) -> Vec<f64> {
        let d = dw.len();
        let h = self.grad_map.len() / d.max(1);
        (0..h).map(|i| (0..d).map(|j| self.grad_map[i * d + j] * dw[j]).sum()).collect()
    }
}

/// `|det[V, T_1, …, T_{n−1}]|` with `V` and the tangents in coordinates.
fn volume(v: &[f64], tangents: &[Vec<f64>]) -> f64 {
    let n = v.len();
    let m = DMatrix::from_fn(n, n, |r, c| if c == 0 { v[r] } else { tangents[c - 1][r] });
    m.determinant().abs()
}

fn densities(geo: &LocalGeometry, tangents: &[Vec<f64>]) -> Result<(f64, f64), GeometryError> {
    let frame = geo.frame();
    let sigma_r = volume(&frame.to_coordinates(geo.nu()), tangents);
    let sigma_h = if geo.is_characteristic() {
        geo.p_h_norm() * sigma_r
    } else {
        volume(&frame.to_coordinates(&geo.nu_h_padded()?), tangents)
    };
    Ok((sigma_r, sigma_h))
}

/// `(σ_R, σ_H)` densities of the graph chart at `u`: the volume form
/// contracted with `ν` (resp. `ν_H`) evaluated on the chart tangents.
pub fn area_elements(
    group: &CarnotGroup,
    field: &ScalarField,
    chart: &GraphChart,
    u: &[f64],
) -> Result<(f64, f64), VariationError> {
    let (x, tangents) = chart.embed_with_tangents(u)?;
    let geo = LocalGeometry::new(group, field, &x, 1)?;
    if geo.is_characteristic() {
        return Err(GeometryError::CharacteristicPoint(geo.p_h_norm()).into());
    }
    Ok(densities(&geo, &tangents)?)
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct PerimeterReport {
    pub value: f64,
    pub nodes: usize,
    pub masked_nodes: usize,
    /// Chart measure of the masked nodes over the chart measure of the box.
    pub masked_fraction: f64,
    pub min_p_h_norm: f64,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct SecondVariation {
    pub value: f64,
    /// `∫|grad_HS w|² σ_H` (or `−∫ w L_HS w σ_H` on the Green route).
    pub gradient_term: f64,
    /// `∫ w² B_TS σ_H`.
    pub potential_term: f64,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct FlowCheck {
    /// `−∫ H_cc w σ_H`.
    pub integrand: f64,
    /// `(Per(t) − Per(−t)) / 2t`.
    pub flow: f64,
    pub t: f64,
    pub relative_error: f64,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct GreenCheck {
    /// `−∫ φ L_HS φ σ_H`.
    pub lhs: f64,
    /// `∫ |grad_HS φ|² σ_H`.
    pub rhs: f64,
    pub relative_gap: f64,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub enum Verdict {
    /// `ϖ_α` keeps a strict sign; `alpha` is the 1-based coordinate index.
    StableBySignDefiniteVarpi { alpha: usize },
    StableByNonnegativePotential,
    Inconclusive,
}

/// A sampled stability claim with the evidence behind it; not a proof.
#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct Certificate {
    pub verdict: Verdict,
    pub reason: String,
    pub nodes: usize,
    pub masked_nodes: usize,
    pub masked_fraction: f64,
    /// Grid cells across which `ν_H` reverses, a sign that the patch
    /// straddles the characteristic set between nodes.
    pub suspected_crossings: usize,
    pub min_p_h_norm: f64,
    pub max_b_ts: f64,
    /// `min |ϖ_α|` over the nodes for the certified `α`.
    pub varpi_margin: Option<f64>,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct RayleighEstimate {
    /// `+∞` when `∫ w² B_TS σ_H ≤ 0` on the whole span.
    pub value: f64,
    pub stiffness: Vec<f64>,
    pub potential: Vec<f64>,
}

impl RayleighEstimate {
    pub fn trivially_stable(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Smallest `K`-over-`M` generalized Rayleigh value for symmetric `d×d`
/// matrices (row-major), `K` positive definite; `+∞` if `M ≤ 0` on the
/// span (numerically: if the value would exceed `1e12`).
pub fn rayleigh_from_gram(k: &[f64], m: &[f64], d: usize) -> Result<f64, VariationError> {
    if k.len() != d * d || m.len() != d * d || d == 0 {
        return Err(VariationError::InvalidPatch("Gram matrices must be d×d".into()));
    }
    let km = DMatrix::from_row_slice(d, d, k);
    let mm = DMatrix::from_row_slice(d, d, m);
    let scale = (0..d).map(|i| km[(i, i)]).fold(0.0, f64::max);
    let chol = km.cholesky().ok_or(VariationError::DegenerateGram)?;
    let l = chol.l();
    if !(scale > 0.0) || (0..d).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return Err(VariationError::DegenerateGram);
    }
    let y = l.solve_lower_triangular(&mm).ok_or(VariationError::DegenerateGram)?;
    let z = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(VariationError::DegenerateGram)?;
    let sym = (&z + z.transpose()) * 0.5;
    let mu = SymmetricEigen::new(sym).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // a quotient beyond 1e12 only reflects roundoff in a vanishing potential
    if !(mu > 1e-12) {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / mu)
    }
}

/// A tensor-product grid on a graph chart with per-node geometry.
#[derive(Clone, Debug)]
pub struct QuadraturePatch {
    pub group: CarnotGroup,
    pub field: ScalarField,
    pub chart: GraphChart,
    pub spec: PatchSpec,
    pub nodes: Vec<PatchNode>,
    shape: Vec<usize>,
}

fn evaluate_node(
    group: &CarnotGroup,
    field: &ScalarField,
    chart: &GraphChart,
    u: Vec<f64>,
    weight: f64,
    mask: f64,
) -> Result<PatchNode, GeometryError> {
    let n = group.dim();
    let h = group.horizontal_dim();
    let (x, tangents) = chart.embed_with_tangents(&u)?;
    let f = field.jet(&x, 3)?;
    let geo = LocalGeometry::from_jet(group, &x, &f, EPS_CHAR)?;
    let (sigma_r, sigma_h) = densities(&geo, &tangents)?;
    let p_h_norm = geo.p_h_norm();
    let masked = geo.is_characteristic() || p_h_norm < mask;
    let mut node = PatchNode {
        u,
        x,
        weight,
        p_h_norm,
        masked,
        sigma_r,
        sigma_h,
        nu_h: vec![f64::NAN; h],
        varpi: vec![f64::NAN; n - h],
        h_cc: f64::NAN,
        s_norm2: f64::NAN,
        a_norm2: f64::NAN,
        b_ts: f64::NAN,
        grad_map: vec![0.0; h * (n - 1)],
    };
    if geo.is_characteristic() {
        return Ok(node);
    }
    let nu = geo.nu_h()?.to_vec();
    let frame = geo.frame();
    let axes = chart.chart_axes();
    for (j, &c) in axes.iter().enumerate() {
        let proj: f64 = (0..h).map(|l| nu[l] * frame.a(c, l)).sum();
        for i in 0..h {
            node.grad_map[i * (n - 1) + j] = frame.a(c, i) - proj * nu[i];
        }
    }
    node.nu_h = nu;
    if !masked {
        let shape = geo.shape()?;
        let dens = geo.stability_density()?;
        node.varpi = geo.varpi()?.to_vec();
        node.h_cc = shape.h_cc;
        node.s_norm2 = shape.s_norm2;
        node.a_norm2 = shape.a_norm2;
        node.b_ts = dens.b_ts;
    }
    Ok(node)
}

impl QuadraturePatch {
    pub fn new(
        group: &CarnotGroup,
        field: &ScalarField,
        chart: &GraphChart,
        spec: &PatchSpec,
    ) -> Result<Self, VariationError> {
        let n = group.dim();
        if chart.n != n {
            return Err(VariationError::InvalidPatch("chart dimension differs from the group".into()));
        }
        spec.check(n - 1)?;
        let res = spec.resolutions();
        let axes: Vec<Vec<(f64, f64)>> = (0..n - 1)
            .map(|k| rule_nodes(spec.rule, spec.lo[k], spec.hi[k], res[k]))
            .collect();
        let total: usize = res.iter().product();
        let grid: Vec<(Vec<f64>, f64)> = (0..total)
            .map(|mut idx| {
                let mut u = vec![0.0; n - 1];
                let mut w = 1.0;
                for k in (0..n - 1).rev() {
                    let (p, q) = axes[k][idx % res[k]];
                    idx /= res[k];
                    u[k] = p;
                    w *= q;
                }
                (u, w)
            })
            .collect();
        let nodes = grid
            .into_par_iter()
            .map(|(u, w)| evaluate_node(group, field, chart, u, w, spec.mask))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(QuadraturePatch {
            group: group.clone(),
            field: field.clone(),
            chart: chart.clone(),
            spec: spec.clone(),
            nodes,
            shape: res,
        })
    }

    /// Patch on a reference surface, using its own chart unless the spec
    /// names an axis.
    pub fn for_surface(surface: &ExampleSurface, spec: &PatchSpec) -> Result<Self, VariationError> {
        let chart = Self::chart_for(&surface.field, surface.group.dim(), spec)?.unwrap_or_else(|| surface.chart.clone());
        Self::new(&surface.group, &surface.field, &chart, spec)
    }

    /// Implicit chart requested by the spec, if any.
    pub fn chart_for(field: &ScalarField, n: usize, spec: &PatchSpec) -> Result<Option<GraphChart>, VariationError> {
        match spec.axis {
            None => Ok(None),
            Some(a) if a >= 1 && a <= n => {
                let [lo, hi] = spec.bracket.unwrap_or([-10.0, 10.0]);
                Ok(Some(GraphChart::implicit(n, a - 1, field.clone(), lo, hi)))
            }
            Some(a) => Err(VariationError::InvalidPatch(format!("axis {} out of range 1..={}", a, n))),
        }
    }

    pub fn resolution(&self) -> &[usize] {
        &self.shape
    }

    fn domain_measure(&self) -> f64 {
        self.spec.lo.iter().zip(&self.spec.hi).map(|(a, b)| b - a).product()
    }

    fn active(&self) -> impl Iterator<Item = &PatchNode> {
        self.nodes.iter().filter(|n| !n.masked)
    }

    fn masked_fraction(&self) -> f64 {
        let m: Vec<f64> = self.nodes.iter().filter(|n| n.masked).map(|n| n.weight).collect();
        pairwise_sum(&m) / self.domain_measure()
    }

    fn min_p_h_norm(&self) -> f64 {
        self.nodes.iter().map(|n| n.p_h_norm).fold(f64::INFINITY, f64::min)
    }

    /// `Σ weight · g(node)` over unmasked nodes.
    pub fn integrate<F>(&self, g: F) -> f64
    where
        F: Fn(&PatchNode) -> f64 + Sync,
    {
        let v: Vec<f64> = self
            .nodes
            .par_iter()
            .map(|n| if n.masked { 0.0 } else { n.weight * g(n) })
            .collect();
        pairwise_sum(&v)
    }

    fn try_integrate<F>(&self, g: F) -> Result<f64, VariationError>
    where
        F: Fn(&PatchNode) -> Result<f64, VariationError> + Sync,
    {
        let v = self
            .nodes
            .par_iter()
            .map(|n| if n.masked { Ok(0.0) } else { g(n).map(|v| n.weight * v) })
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(pairwise_sum(&v))
    }

    pub fn h_perimeter(&self) -> PerimeterReport {
        PerimeterReport {
            value: self.integrate(|n| n.sigma_h),
            nodes: self.nodes.len(),
            masked_nodes: self.nodes.iter().filter(|n| n.masked).count(),
            masked_fraction: self.masked_fraction(),
            min_p_h_norm: self.min_p_h_norm(),
        }
    }

    pub fn riemannian_area(&self) -> f64 {
        let v: Vec<f64> = self.nodes.iter().map(|n| n.weight * n.sigma_r).collect();
        pairwise_sum(&v)
    }

    /// `−∫ H_cc w σ_H`.
    pub fn first_variation(&self, w: &TestFunction) -> f64 {
        self.integrate(|n| -n.h_cc * w.value(&n.u) * n.sigma_h)
    }

    fn max_abs_h(&self) -> f64 {
        self.active().map(|n| n.h_cc.abs()).fold(0.0, f64::max)
    }

    fn require_minimal(&self) -> Result<(), VariationError> {
        let m = self.max_abs_h();
        if m > self.spec.minimal_tol {
            Err(VariationError::NotHMinimalOnPatch(m))
        } else {
            Ok(())
        }
    }

    /// `∫ (|grad_HS w|² − w² B_TS) σ_H` for an H-minimal patch.
    pub fn second_variation(&self, w: &TestFunction) -> Result<SecondVariation, VariationError> {
        self.require_minimal()?;
        let grad = self.integrate(|n| {
            let (_, dw) = w.gradient(&n.u);
            let g = n.grad_hs(&dw);
            dot(&g, &g) * n.sigma_h
        });
        let pot = self.potential_term(w);
        Ok(SecondVariation {
            value: grad - pot,
            gradient_term: grad,
            potential_term: pot,
        })
    }

    fn potential_term(&self, w: &TestFunction) -> f64 {
        self.integrate(|n| {
            let v = w.value(&n.u);
            v * v * n.b_ts * n.sigma_h
        })
    }

    /// `L_HS` of the chart-constant extension of `w` at a node.
    fn l_hs_at(&self, node: &PatchNode, w: &TestFunction) -> Result<f64, VariationError> {
        if w.value(&node.u) == 0.0 && w.gradient(&node.u).1.iter().all(|v| *v == 0.0) {
            // outside the support; the bump is C³ so L_HS w = 0 there too
            return Ok(0.0);
        }
        let f = self.field.jet(&node.x, 2)?;
        let geo = LocalGeometry::from_jet(&self.group, &node.x, &f, EPS_CHAR)?;
        let xs = Jet3::variables(&node.x, 2);
        let uj: Vec<Jet3> = self.chart.chart_axes().iter().map(|&k| xs[k].clone()).collect();
        Ok(geo.l_hs(&w.jet(&uj))?)
    }

    /// Same quantity by Green's formula: `∫ (−w L_HS w − w² B_TS) σ_H`.
    pub fn second_variation_green(&self, w: &TestFunction) -> Result<SecondVariation, VariationError> {
        self.require_minimal()?;
        let grad = self.try_integrate(|n| Ok(-w.value(&n.u) * self.l_hs_at(n, w)? * n.sigma_h))?;
        let pot = self.potential_term(w);
        Ok(SecondVariation {
            value: grad - pot,
            gradient_term: grad,
            potential_term: pot,
        })
    }

    /// `−∫ φ L_HS φ σ_H` against `∫ |grad_HS φ|² σ_H`.
    pub fn green_check(&self, phi: &TestFunction) -> Result<GreenCheck, VariationError> {
        let lhs = self.try_integrate(|n| Ok(-phi.value(&n.u) * self.l_hs_at(n, phi)? * n.sigma_h))?;
        let rhs = self.integrate(|n| {
            let (_, dw) = phi.gradient(&n.u);
            let g = n.grad_hs(&dw);
            dot(&g, &g) * n.sigma_h
        });
        let scale = lhs.abs().max(rhs.abs());
        Ok(GreenCheck {
            lhs,
            rhs,
            relative_gap: if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale },
        })
    }

    /// Number of grid cells whose corners carry opposite `ν_H`.
    pub fn suspected_crossings(&self) -> usize {
        let d = self.shape.len();
        if self.shape.iter().any(|&r| r < 2) {
            return 0;
        }
        let strides: Vec<usize> = (0..d)
            .map(|k| self.shape[k + 1..].iter().product())
            .collect();
        let cells: usize = self.shape.iter().map(|r| r - 1).product();
        (0..cells)
            .into_par_iter()
            .filter(|&c| {
                let mut rem = c;
                let mut base = 0;
                for k in (0..d).rev() {
                    let r = self.shape[k] - 1;
                    base += (rem % r) * strides[k];
                    rem /= r;
                }
                let b = &self.nodes[base];
                if b.nu_h[0].is_nan() {
                    return false;
                }
                (1..1usize << d).any(|bits| {
                    let idx = base + (0..d).filter(|k| bits >> k & 1 == 1).map(|k| strides[k]).sum::<usize>();
                    let o = &self.nodes[idx];
                    !o.nu_h[0].is_nan() && dot(&b.nu_h, &o.nu_h) < 0.0
                })
            })
            .count()
    }

    /// Sampled stability criterion: a sign-definite `ϖ_α` or a non-positive
    /// potential on a non-characteristic H-minimal patch.
    pub fn stability_certificate(&self, tol: f64) -> Result<Certificate, VariationError> {
        self.require_minimal()?;
        let h = self.group.horizontal_dim();
        let masked_nodes = self.nodes.iter().filter(|n| n.masked).count();
        let crossings = self.suspected_crossings();
        let max_b_ts = self.active().map(|n| n.b_ts).fold(f64::NEG_INFINITY, f64::max);
        let mut cert = Certificate {
            verdict: Verdict::Inconclusive,
            reason: String::new(),
            nodes: self.nodes.len(),
            masked_nodes,
            masked_fraction: self.masked_fraction(),
            suspected_crossings: crossings,
            min_p_h_norm: self.min_p_h_norm(),
            max_b_ts,
            varpi_margin: None,
        };
        if masked_nodes > 0 || crossings > 0 {
            cert.reason = format!(
                "patch meets the characteristic set ({} masked nodes, {} cells with reversed normal)",
                masked_nodes, crossings
            );
            return Ok(cert);
        }
        for k in 0..self.group.dim() - h {
            let lo = self.active().map(|n| n.varpi[k]).fold(f64::INFINITY, f64::min);
            let hi = self.active().map(|n| n.varpi[k]).fold(f64::NEG_INFINITY, f64::max);
            let margin = if lo > tol {
                lo
            } else if hi < -tol {
                -hi
            } else {
                continue;
            };
            cert.verdict = Verdict::StableBySignDefiniteVarpi { alpha: h + k + 1 };
            cert.varpi_margin = Some(margin);
            cert.reason = format!("varpi_{} keeps a strict sign on every node", h + k + 1);
            return Ok(cert);
        }
        if max_b_ts <= tol {
            cert.verdict = Verdict::StableByNonnegativePotential;
            cert.reason = "B_TS <= tol on every node".into();
        } else {
            cert.reason = "no varpi component is sign-definite and B_TS > 0 somewhere".into();
        }
        Ok(cert)
    }

    /// Generalized Rayleigh quotient `∫|grad_HS w|² / ∫ w² B_TS` minimized
    /// over the span of `basis`.
    pub fn rayleigh_estimate(&self, basis: &[TestFunction]) -> Result<RayleighEstimate, VariationError> {
        let d = basis.len();
        if d == 0 {
            return Err(VariationError::DegenerateGram);
        }
        let per_node: Vec<Option<Vec<(f64, Vec<f64>)>>> = self
            .nodes
            .par_iter()
            .map(|n| {
                (!n.masked).then(|| {
                    basis
                        .iter()
                        .map(|w| {
                            let (v, dw) = w.gradient(&n.u);
                            (v, n.grad_hs(&dw))
                        })
                        .collect()
                })
            })
            .collect();
        let mut k = vec![0.0; d * d];
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut kv = Vec::with_capacity(self.nodes.len());
                let mut mv = Vec::with_capacity(self.nodes.len());
                for (node, vals) in self.nodes.iter().zip(&per_node) {
                    if let Some(vals) = vals {
                        let s = node.weight * node.sigma_h;
                        kv.push(s * dot(&vals[i].1, &vals[j].1));
                        mv.push(s * vals[i].0 * vals[j].0 * node.b_ts);
                    }
                }
                let (a, b) = (pairwise_sum(&kv), pairwise_sum(&mv));
                k[i * d + j] = a;
                k[j * d + i] = a;
                m[i * d + j] = b;
                m[j * d + i] = b;
            }
        }
        let value = rayleigh_from_gram(&k, &m, d)?;
        Ok(RayleighEstimate {
            value,
            stiffness: k,
            potential: m,
        })
    }

    /// H-perimeter of the chart image moved by `t W`, `W = w |P_H ν| ν`,
    /// computed from the parametrisation alone:
    /// `σ_H = (Σ_{i ≤ h} det[X_i, ∂_1 x_t, …]²)^{1/2}`.
    pub fn perimeter_along(&self, w: &TestFunction, t: f64) -> Result<f64, VariationError> {
        let n = self.group.dim();
        let h = self.group.horizontal_dim();
        let push = |u: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>), VariationError> {
            let (x, tangents) = self.chart.embed_with_tangents(u)?;
            let wv = w.value(u);
            let v = if wv == 0.0 || t == 0.0 {
                vec![0.0; n]
            } else {
                let geo = LocalGeometry::new(&self.group, &self.field, &x, 1)?;
                let s = wv * geo.p_h_norm();
                let frame_v: Vec<f64> = geo.nu().iter().map(|c| c * s).collect();
                geo.frame().to_coordinates(&frame_v)
            };
            Ok((x, v, tangents))
        };
        let v = self
            .nodes
            .par_iter()
            .map(|node| -> Result<f64, VariationError> {
                let (x, v, mut tangents) = push(&node.u)?;
                let moving = v.iter().any(|c| *c != 0.0) || w.gradient(&node.u).1.iter().any(|c| *c != 0.0);
                if t != 0.0 && moving {
                    for j in 0..n - 1 {
                        let step = 1e-5 * (1.0 + node.u[j].abs());
                        let mut up = node.u.clone();
                        let mut dn = node.u.clone();
                        up[j] += step;
                        dn[j] -= step;
                        let (_, vp, _) = push(&up)?;
                        let (_, vm, _) = push(&dn)?;
                        for k in 0..n {
                            tangents[j][k] += t * (vp[k] - vm[k]) / (2.0 * step);
                        }
                    }
                }
                let xt: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + t * b).collect();
                let frame = self.group.frame_matrix(&xt).map_err(GeometryError::from)?;
                let mut acc = 0.0;
                for i in 0..h {
                    let col: Vec<f64> = (0..n).map(|k| frame.a(k, i)).collect();
                    let det = volume(&col, &tangents);
                    acc += det * det;
                }
                Ok(node.weight * acc.sqrt())
            })
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(pairwise_sum(&v))
    }

    /// Symmetric difference `(Per(t) − Per(−t)) / 2t` along `W = w |P_H ν| ν`.
    /// The one-sided quotient carries an `O(t)` term from the second
    /// variation, which can dominate on H-minimal patches.
    pub fn first_variation_flow(&self, w: &TestFunction, t: f64) -> Result<f64, VariationError> {
        Ok((self.perimeter_along(w, t)? - self.perimeter_along(w, -t)?) / (2.0 * t))
    }

    /// Integrand route against the perimeter flow.  The error is relative to
    /// `max(|I(w)|, ∫|w| σ_H)`, so that it stays meaningful on H-minimal
    /// patches where `I(w) = 0`.
    pub fn first_variation_check(&self, w: &TestFunction, t: f64) -> Result<FlowCheck, VariationError> {
        let integrand = self.first_variation(w);
        let flow = self.first_variation_flow(w, t)?;
        let scale = integrand.abs().max(self.integrate(|n| w.value(&n.u).abs() * n.sigma_h));
        Ok(FlowCheck {
            integrand,
            flow,
            t,
            relative_error: if scale == 0.0 { (flow - integrand).abs() } else { (flow - integrand).abs() / scale },
        })
    }

    /// Column names of [`QuadraturePatch::write_csv`].
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.group.dim();
        let h = self.group.horizontal_dim();
        let mut cols: Vec<String> = (1..n).map(|k| format!("u{}", k)).collect();
        cols.extend((1..=n).map(|k| format!("x{}", k)));
        cols.push("P_Hnu".into());
        cols.extend((h + 1..=n).map(|k| format!("varpi{}", k)));
        for c in ["H_cc", "S2", "A2", "B_TS", "sigmaR", "sigmaH", "masked"] {
            cols.push(c.into());
        }
        cols
    }

    /// Numeric row of a node in the order of [`QuadraturePatch::csv_header`]
    /// (the `masked` flag as 0/1).
    pub fn row_values(node: &PatchNode) -> Vec<f64> {
        let mut v: Vec<f64> = node.u.iter().chain(&node.x).copied().collect();
        v.push(node.p_h_norm);
        v.extend(&node.varpi);
        v.extend([node.h_cc, node.s_norm2, node.a_norm2, node.b_ts, node.sigma_r, node.sigma_h]);
        v.push(if node.masked { 1.0 } else { 0.0 });
        v
    }

    /// Values of one CSV column over all nodes.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.csv_header().iter().position(|c| c == name)?;
        Some(self.nodes.iter().map(|n| Self::row_values(n)[k]).collect())
    }

    /// One row per node; 17 significant digits, `nan` for undefined values.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{}", self.csv_header().join(","))?;
        for node in &self.nodes {
            let vals = Self::row_values(node);
            let (flag, nums) = vals.split_last().expect("non-empty row");
            let mut row: Vec<String> = nums.iter().map(|v| format_value(*v)).collect();
            row.push(format!("{}", *flag as u8));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        // adding +0.0 turns -0.0 into 0.0
        format!("{:.16e}", v + 0.0)
    }
}
