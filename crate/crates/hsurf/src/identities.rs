//! Pointwise residuals of the structural identities relating the shape
//! operator, the tangential operators and the stability potential.
//!
//! Each residual is `|lhs − rhs| / max(1, |lhs|, |rhs|)`, i.e. absolute for
//! small quantities and relative for large ones.

use serde::Serialize;

use crate::algebra::CarnotGroup;
use crate::curvature::NormalDerivativeRoute;
use crate::geometry::{dot, GeometryError, LocalGeometry, EPS_CHAR};
use crate::jets::{Jet3, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl IdentityResidual {
    pub fn new(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let scale = 1f64.max(lhs.abs()).max(rhs.abs());
        IdentityResidual {
            name,
            lhs,
            rhs,
            residual: (lhs - rhs).abs() / scale,
        }
    }
}

/// What to check at a point.
#[derive(Clone, Debug)]
pub struct IdentityOptions {
    /// The surface has constant horizontal mean curvature (enables the
    /// Jacobi-type identities).
    pub constant_mean_curvature: bool,
    /// Probe function for the Laplacian and Leibniz checks.
    pub probe: ScalarField,
    /// Auxiliary function multiplying `f` in the extension check.
    pub extension: ScalarField,
    /// Left-invariant vector (frame components) for the Jacobi-type checks.
    pub vector: Option<Vec<f64>>,
}

impl IdentityOptions {
    pub fn new(n: usize, constant_mean_curvature: bool) -> Self {
        IdentityOptions {
            constant_mean_curvature,
            probe: probe_function(n),
            extension: extension_function(n),
            vector: None,
        }
    }
}

/// A fixed non-polynomial test function of all coordinates.
pub fn probe_function(n: usize) -> ScalarField {
    ScalarField::analytic(move |x: &[Jet3]| {
        let mut lin = Jet3::constant(x[0].dim(), 0.3, x[0].order());
        let mut quad = Jet3::constant(x[0].dim(), 1.0, x[0].order());
        for k in 0..n {
            lin = &lin + &(&x[k] * (0.7 - 0.13 * k as f64));
            quad = &quad + &(&(&x[k] * &x[k]) * (0.05 * (k + 1) as f64));
        }
        &lin.sin() * &quad.sqrt()
    })
}

fn extension_function(n: usize) -> ScalarField {
    ScalarField::analytic(move |x: &[Jet3]| {
        let mut acc = Jet3::constant(x[0].dim(), 1.5, x[0].order());
        for k in 0..n {
            acc = &acc + &(&x[k] * (0.2 + 0.1 * k as f64));
        }
        acc.cos()
    })
}

fn default_vector(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.35 + 0.21 * i as f64 - 0.04 * (i * i) as f64).collect()
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect()
}

/// All applicable identity residuals at a non-characteristic point `x` of
/// `{f = 0}`.  Uses a third-order jet of `f`.
pub fn point_residuals(
    group: &CarnotGroup,
    field: &ScalarField,
    x: &[f64],
    opts: &IdentityOptions,
) -> Result<Vec<IdentityResidual>, GeometryError> {
    let n = group.dim();
    let h = group.horizontal_dim();
    let f = field.jet(x, 3)?;
    let geo = LocalGeometry::from_jet(group, x, &f, EPS_CHAR)?;
    geo.require_noncharacteristic()?;
    let nu = geo.nu_h()?.to_vec();
    let varpi = geo.varpi()?.to_vec();
    let shape = geo.shape()?;
    let mats = geo.varpi_matrices()?;
    let density = geo.stability_density()?;
    let mut out = Vec::new();

    // antisymmetric part of the shape operator
    let mut worst = (0.0, 0.0, 0.0);
    for p in 0..shape.dim {
        for q in 0..shape.dim {
            let lhs = shape.a[p * shape.dim + q];
            let rhs = 0.5 * mats.c_hs[p * shape.dim + q];
            if (lhs - rhs).abs() >= worst.0 {
                worst = ((lhs - rhs).abs(), lhs, rhs);
            }
        }
    }
    out.push(IdentityResidual::new("antisymmetric_part", worst.1, worst.2));

    out.push(IdentityResidual::new(
        "trace_square",
        shape.trace_b_squared(),
        shape.s_norm2 - shape.a_norm2,
    ));

    // tangential divergence of ν_H
    {
        let nu_full = geo.nu().to_vec();
        let dnu = geo.nu_h_derivatives()?;
        let mut div = 0.0;
        for k in 0..n {
            if k < h {
                div += dnu[k * n + k];
            }
            for j in 0..h {
                div += nu[j] * group.gamma(k, j, k);
            }
        }
        let mut along = 0.0;
        for k in 0..n {
            let mut inner = 0.0;
            for j in 0..h {
                inner += dnu[j * n + k] * nu_full[j];
                for r in 0..n {
                    inner += nu[j] * group.gamma(k, j, r) * nu_full[r];
                }
            }
            along += nu_full[k] * inner;
        }
        let mut cv = 0.0;
        for al in h..n {
            for b in h..n {
                for j in 0..h {
                    cv += nu_full[al] * group.c(b, j, al) * nu[j] * nu_full[b];
                }
            }
        }
        out.push(IdentityResidual::new("tangential_divergence", div - along, -shape.h_cc - cv));
    }

    // Σ_α ϖ_α D_HS(C_H^α ν_H) = 2‖A‖² + |C_H(ϖ) ν_H|²
    {
        let nuj = geo.nu_h_jets()?;
        let mut lhs = 0.0;
        for al in group.h2_indices() {
            let c = group.c_h_matrix(al);
            let y: Vec<Jet3> = (0..h)
                .map(|i| {
                    let mut acc = Jet3::zero(n, nuj[0].order());
                    for j in 0..h {
                        if c[i * h + j] != 0.0 {
                            acc = &acc + &(&nuj[j] * c[i * h + j]);
                        }
                    }
                    acc
                })
                .collect();
            lhs += varpi[al - h] * geo.d_hs(&y)?;
        }
        let cn = matvec(&mats.c_h, &nu);
        out.push(IdentityResidual::new(
            "twisted_divergence",
            lhs,
            2.0 * shape.a_norm2 + dot(&cn, &cn),
        ));
    }

    // Laplacian: decomposition vs divergence of the tangential gradient, and
    // independence of the extension off S
    let probe = opts.probe.jet(x, 2)?;
    let lap = geo.delta_hs(&probe)?;
    out.push(IdentityResidual::new("laplacian_routes", lap, geo.delta_hs_div(&probe)?));
    {
        let psi = opts.extension.jet(x, 2)?;
        let shifted = &probe + &(&f.truncate(2) * &psi);
        out.push(IdentityResidual::new("laplacian_extension", lap, geo.delta_hs(&shifted)?));
    }

    // Leibniz rule D_HS(φ Y) = φ D_HS Y + ⟨grad_HS φ, Y⟩ with Y = grad_HS ψ
    {
        let psi = opts.extension.jet(x, 3)?;
        let y = geo.grad_hs_jets(&psi)?;
        let ord = y[0].order();
        let p = probe.truncate(ord);
        let py: Vec<Jet3> = y.iter().map(|yi| &p * yi).collect();
        let yv: Vec<f64> = y.iter().map(|j| j.value()).collect();
        out.push(IdentityResidual::new(
            "leibniz",
            geo.d_hs(&py)?,
            probe.value() * geo.d_hs(&y)? + dot(&geo.grad_hs(&probe)?, &yv),
        ));
    }

    // normalised defining function
    {
        let g = geo.ndf_jet(&f)?;
        let gg = LocalGeometry::from_jet(group, x, &g, EPS_CHAR)?;
        let grad: Vec<f64> = (0..n)
            .map(|i| gg.frame_derivative(&g, i).map(|j| j.value()))
            .collect::<Result<_, _>>()?;
        let mut worst = (0.0, 0.0, 0.0);
        for i in 0..n {
            let want = if i < h { nu[i] } else { varpi[i - h] };
            if (grad[i] - want).abs() >= worst.0 {
                worst = ((grad[i] - want).abs(), grad[i], want);
            }
        }
        out.push(IdentityResidual::new("normalized_gradient", worst.1, worst.2));
        let a = geo.normal_derivative_of_normal(&f, NormalDerivativeRoute::Normalized)?;
        let b = geo.normal_derivative_of_normal(&f, NormalDerivativeRoute::ClosedForm)?;
        let (i, _) = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .enumerate()
            .fold((0, -1.0), |m, (i, d)| if d > m.1 { (i, d) } else { m });
        out.push(IdentityResidual::new("normalized_geodesic", a[i], b[i]));
    }

    if group.is_heisenberg() {
        let m = (h / 2) as f64;
        out.push(IdentityResidual::new(
            "heisenberg_norm",
            shape.b_norm2,
            shape.s_norm2 + 0.5 * (m - 1.0) * varpi[0] * varpi[0],
        ));
        if shape.h_cc.abs() <= 1e-9 {
            out.push(IdentityResidual::new(
                "heisenberg_potential",
                density.b_ts,
                geo.heisenberg_bts(1e-9)?,
            ));
        }
    }

    if opts.constant_mean_curvature {
        let vjets = geo.varpi_jets()?.to_vec();
        // L_HS ϖ_α + ϖ_α B_TS = 0
        let mut worst = (0.0, 0.0, 0.0);
        for (k, w) in vjets.iter().enumerate() {
            let lhs = geo.l_hs(w)?;
            let rhs = -varpi[k] * density.b_ts;
            if (lhs - rhs).abs() >= worst.0 {
                worst = ((lhs - rhs).abs(), lhs, rhs);
            }
        }
        out.push(IdentityResidual::new("jacobi_varpi", worst.1, worst.2));

        let v = opts.vector.clone().unwrap_or_else(|| default_vector(n));
        // f_V = ⟨V, ϖ⟩
        {
            let mut fv = Jet3::zero(n, geo.nu_h_jets()?[0].order());
            for (k, w) in vjets.iter().enumerate() {
                fv = &fv + &(w * v[h + k]);
            }
            out.push(IdentityResidual::new(
                "jacobi_vertical",
                geo.l_hs(&fv)?,
                -fv.value() * density.b_ts,
            ));
        }
        // f_H = ⟨V_H, ν_H⟩
        {
            let nuj = geo.nu_h_jets()?;
            let mut fh = Jet3::zero(n, nuj[0].order());
            for i in 0..h {
                fh = &fh + &(&nuj[i] * v[i]);
            }
            let fhv = fh.value();
            let vhs: Vec<f64> = (0..h).map(|i| v[i] - fhv * nu[i]).collect();
            let cv = matvec(&mats.c_h, &vhs);
            let pc = dot(&cv, &nu);
            let cv_hs: Vec<f64> = (0..h).map(|i| cv[i] - pc * nu[i]).collect();
            let nn = geo.normal_derivative_of_normal(&f, NormalDerivativeRoute::Normalized)?;
            let mut twist = 0.0;
            for al in group.h2_indices() {
                let g = geo.grad_hs(&vjets[al - h])?;
                let c = group.c_h_matrix(al);
                twist += dot(&matvec(&c, &g), &vhs);
            }
            let cn = matvec(&mats.c_h, &nu);
            let rhs = fhv * shape.b_norm2 + dot(&nn, &cv_hs) + twist + shape.h_cc * dot(&cn, &vhs);
            out.push(IdentityResidual::new("jacobi_horizontal", -geo.l_hs(&fh)?, rhs));
        }
    }
    Ok(out)
}

/// Worst residual of one identity over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRow {
    pub name: &'static str,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    /// Samples skipped because they were characteristic.
    pub skipped: usize,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.max_residual).fold(0.0, f64::max)
    }

    /// Adds or merges a residual under `tolerance`.
    pub fn record(&mut self, r: &IdentityResidual, tolerance: f64) {
        let res = if r.residual.is_nan() { f64::INFINITY } else { r.residual };
        match self.rows.iter_mut().find(|row| row.name == r.name) {
            Some(row) => {
                row.samples += 1;
                row.max_residual = row.max_residual.max(res);
                row.pass = row.max_residual <= row.tolerance;
            }
            None => self.rows.push(IdentityRow {
                name: r.name,
                samples: 1,
                max_residual: res,
                tolerance,
                pass: res <= tolerance,
            }),
        }
    }
}

/// Runs [`point_residuals`] at every sample and keeps the worst residual per
/// identity.  Characteristic samples are counted and skipped; other errors
/// are returned.
pub fn verify_identities(
    group: &CarnotGroup,
    field: &ScalarField,
    points: &[Vec<f64>],
    opts: &IdentityOptions,
    tolerance: f64,
) -> Result<IdentityReport, GeometryError> {
    use rayon::prelude::*;
    let per_point: Vec<Result<Option<Vec<IdentityResidual>>, GeometryError>> = points
        .par_iter()
        .map(|x| match point_residuals(group, field, x, opts) {
            Ok(r) => Ok(Some(r)),
            Err(GeometryError::CharacteristicPoint(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut report = IdentityReport::default();
    for r in per_point {
        match r? {
            Some(rs) => rs.iter().for_each(|r| report.record(r, tolerance)),
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
