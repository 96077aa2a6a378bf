//! Horizontal second fundamental form, mean curvature, the tangential
//! operators `grad_HS`, `div_HS`, `Δ_HS`, `D_HS`, `L_HS`, and the stability
//! potential `B_TS`.
//!
//! Conventions: `B_H(X, Y) = ⟨∇^H_X Y, ν_H⟩` on `HS`.  In the adapted basis
//! the operator matrix is `B[a][b] = B_H(τ_b, τ_a) = −τ_a^T J τ_b` with
//! `J[i][j] = X_j (ν_H)_i`, so that `H_cc = Tr B = −div_H ν_H` and the
//! antisymmetric part is `A = ½ C_HS(ϖ)`.

use crate::geometry::{dot, restrict, GeometryError, LocalGeometry};
use crate::jets::{Jet3, ScalarField};

/// Operator matrix of `B_H` on `HS` and its symmetric / antisymmetric parts
/// (row-major, `(h−1)×(h−1)`), with `H_cc` and squared Frobenius norms.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalShape {
    pub dim: usize,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub h_cc: f64,
    pub b_norm2: f64,
    pub s_norm2: f64,
    pub a_norm2: f64,
}

impl HorizontalShape {
    /// `Tr(B²)`.
    pub fn trace_b_squared(&self) -> f64 {
        let d = self.dim;
        let mut t = 0.0;
        for a in 0..d {
            for b in 0..d {
                t += self.b[a * d + b] * self.b[b * d + a];
            }
        }
        t
    }
}

/// Pointwise stability potential and the pieces it is assembled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityDensity {
    pub b_ts: f64,
    pub b_norm2: f64,
    pub s_norm2: f64,
    pub a_norm2: f64,
    /// `Σ_α ⟨2 grad_HS ϖ_α − C(ϖ) τ^TS_α, C^α ν_H⟩`.
    pub vertical_term: f64,
}

/// Which extension of `ν_H` off the surface is used for `∇^H_{ν_H} ν_H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalDerivativeRoute {
    /// Level sets of the defining function as given.
    Direct,
    /// Level sets of the normalised defining function `f / |grad_H f|`.
    Normalized,
    /// The closed form `−C_H(ϖ) ν_H`, valid for a normalised defining function.
    ClosedForm,
}

fn frob2(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect()
}

impl<'g> LocalGeometry<'g> {
    pub fn shape(&self) -> Result<HorizontalShape, GeometryError> {
        let h = self.h();
        let j = self.nu_h_jacobian()?;
        let basis = self.hs_basis()?;
        let d = basis.len();
        let b: Vec<f64> = restrict(&j, basis).into_iter().map(|v| -v).collect();
        let mut s = vec![0.0; d * d];
        let mut a = vec![0.0; d * d];
        for p in 0..d {
            for q in 0..d {
                s[p * d + q] = 0.5 * (b[p * d + q] + b[q * d + p]);
                a[p * d + q] = 0.5 * (b[p * d + q] - b[q * d + p]);
            }
        }
        let h_cc = -(0..h).map(|i| j[i * h + i]).sum::<f64>();
        Ok(HorizontalShape {
            dim: d,
            b_norm2: frob2(&b),
            s_norm2: frob2(&s),
            a_norm2: frob2(&a),
            b,
            s,
            a,
            h_cc,
        })
    }

    /// Horizontal mean curvature `H_cc = −div_H ν_H`.
    pub fn mean_curvature(&self) -> Result<f64, GeometryError> {
        let h = self.h();
        let j = self.nu_h_jacobian()?;
        Ok(-(0..h).map(|i| j[i * h + i]).sum::<f64>())
    }

    /// Largest entry of `B − B^T − C_HS(ϖ)`; zero when the antisymmetric part
    /// of the shape operator equals `½ C_HS(ϖ)`.
    pub fn torsion_residual(&self) -> Result<f64, GeometryError> {
        let shape = self.shape()?;
        let c_hs = self.varpi_matrices()?.c_hs;
        let d = shape.dim;
        let mut r: f64 = 0.0;
        for p in 0..d {
            for q in 0..d {
                r = r.max((shape.b[p * d + q] - shape.b[q * d + p] - c_hs[p * d + q]).abs());
            }
        }
        Ok(r)
    }

    /// `grad_H φ = (X_1 φ, …, X_h φ)`.
    pub fn grad_h(&self, phi: &Jet3) -> Result<Vec<f64>, GeometryError> {
        (0..self.h())
            .map(|i| self.frame_derivative(phi, i).map(|j| j.value()))
            .collect()
    }

    /// `grad_HS φ = grad_H φ − ⟨grad_H φ, ν_H⟩ ν_H` (horizontal components).
    pub fn grad_hs(&self, phi: &Jet3) -> Result<Vec<f64>, GeometryError> {
        let g = self.grad_h(phi)?;
        let nu = self.nu_h()?;
        let p = dot(&g, nu);
        Ok(g.iter().zip(nu).map(|(a, b)| a - p * b).collect())
    }

    /// `grad_HS φ` as jets, one order below `phi` (and below `ν_H`).
    pub fn grad_hs_jets(&self, phi: &Jet3) -> Result<Vec<Jet3>, GeometryError> {
        let h = self.h();
        let g: Vec<Jet3> = (0..h)
            .map(|i| self.frame_derivative(phi, i))
            .collect::<Result<_, _>>()?;
        let nu = self.nu_h_jets()?;
        let p = crate::jets::dot(&g, nu);
        Ok(g.iter().zip(nu).map(|(gi, ni)| gi - &(&p * ni)).collect())
    }

    /// `div_HS Y = Σ_a ⟨∇^H_{τ_a} Y, τ_a⟩` for a horizontal field given by
    /// jets of its components.
    pub fn div_hs(&self, y: &[Jet3]) -> Result<f64, GeometryError> {
        let j = self.horizontal_jacobian(y)?;
        Ok(trace_restricted(&j, self.hs_basis()?))
    }

    /// `D_HS Y = div_HS Y + ⟨C_H(ϖ) ν_H, Y⟩`.
    pub fn d_hs(&self, y: &[Jet3]) -> Result<f64, GeometryError> {
        let c_h = self.varpi_matrices()?.c_h;
        let cn = matvec(&c_h, self.nu_h()?);
        let yv: Vec<f64> = y.iter().map(|j| j.value()).collect();
        Ok(self.div_hs(y)? + dot(&cn, &yv))
    }

    /// `Δ_HS φ = Δ_H φ + H_cc ∂φ/∂ν_H − ⟨Hess_H φ ν_H, ν_H⟩`.
    pub fn delta_hs(&self, phi: &Jet3) -> Result<f64, GeometryError> {
        let h = self.h();
        let nu = self.nu_h()?.to_vec();
        let firsts: Vec<Jet3> = (0..h)
            .map(|i| self.frame_derivative(phi, i))
            .collect::<Result<_, _>>()?;
        let mut lap = 0.0;
        let mut hess_nn = 0.0;
        for i in 0..h {
            for j in 0..h {
                // X_j X_i φ
                let v = self.frame_derivative(&firsts[i], j)?.value();
                if i == j {
                    lap += v;
                }
                hess_nn += nu[i] * nu[j] * v;
            }
        }
        let dn: f64 = (0..h).map(|i| firsts[i].value() * nu[i]).sum();
        Ok(lap + self.mean_curvature()? * dn - hess_nn)
    }

    /// `Δ_HS φ` computed as `div_HS (grad_HS φ)`.
    pub fn delta_hs_div(&self, phi: &Jet3) -> Result<f64, GeometryError> {
        let g = self.grad_hs_jets(phi)?;
        self.div_hs(&g)
    }

    /// `L_HS φ = Δ_HS φ + ⟨C_H(ϖ) ν_H, grad_HS φ⟩`.
    pub fn l_hs(&self, phi: &Jet3) -> Result<f64, GeometryError> {
        let c_h = self.varpi_matrices()?.c_h;
        let cn = matvec(&c_h, self.nu_h()?);
        Ok(self.delta_hs(phi)? + dot(&cn, &self.grad_hs(phi)?))
    }

    /// `grad_H ϖ_α` for each vertical index (rows of length `h`).
    pub fn grad_h_varpi(&self) -> Result<Vec<Vec<f64>>, GeometryError> {
        self.varpi_jets()?.iter().map(|w| self.grad_h(w)).collect()
    }

    pub fn stability_density(&self) -> Result<StabilityDensity, GeometryError> {
        let n = self.dim();
        let h = self.h();
        let shape = self.shape()?;
        let nu = self.nu_h()?.to_vec();
        let mats = self.varpi_matrices()?;
        let tau_ts = self.tau_ts()?;
        let mut vertical_term = 0.0;
        for (k, al) in (h..n).enumerate() {
            let ghs = self.grad_hs(&self.varpi_jets[k])?;
            // C^α ν_H in R^n
            let mut c_nu = vec![0.0; n];
            for i in 0..n {
                for j in 0..h {
                    c_nu[i] += self.group.c(i, j, al) * nu[j];
                }
            }
            let c_tau: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| mats.c_full[i * n + j] * tau_ts[k][j]).sum())
                .collect();
            let mut v = vec![0.0; n];
            for i in 0..n {
                v[i] = if i < h { 2.0 * ghs[i] } else { 0.0 } - c_tau[i];
            }
            vertical_term += dot(&v, &c_nu);
        }
        Ok(StabilityDensity {
            b_ts: shape.b_norm2 + vertical_term,
            b_norm2: shape.b_norm2,
            s_norm2: shape.s_norm2,
            a_norm2: shape.a_norm2,
            vertical_term,
        })
    }

    /// `B_TS = ‖S_H‖² − (2 ∂ϖ/∂ν_H° − (m+1)/2 ϖ²)` on an H-minimal surface in
    /// `H^m`, with `ν_H° = −C_H ν_H`.
    pub fn heisenberg_bts(&self, minimal_tol: f64) -> Result<f64, GeometryError> {
        if !self.group.is_heisenberg() {
            return Err(GeometryError::NotHeisenberg);
        }
        let shape = self.shape()?;
        if shape.h_cc.abs() > minimal_tol {
            return Err(GeometryError::NotHMinimal(shape.h_cc));
        }
        let h = self.h();
        let m = (h / 2) as f64;
        let nu = self.nu_h()?;
        let c = self.group.c_h_matrix(h);
        let nu0: Vec<f64> = matvec(&c, nu).into_iter().map(|v| -v).collect();
        let w = self.varpi()?[0];
        let gw = self.grad_h(&self.varpi_jets[0])?;
        let dw = dot(&gw, &nu0);
        Ok(shape.s_norm2 - (2.0 * dw - 0.5 * (m + 1.0) * w * w))
    }

    /// `∇^H_{ν_H} ν_H` along the chosen extension (horizontal components).
    /// `f` is the jet the geometry was built from; it is needed for the
    /// normalised route.
    pub fn normal_derivative_of_normal(
        &self,
        f: &Jet3,
        route: NormalDerivativeRoute,
    ) -> Result<Vec<f64>, GeometryError> {
        let nu = self.nu_h()?.to_vec();
        match route {
            NormalDerivativeRoute::Direct => Ok(matvec(&self.nu_h_jacobian()?, &nu)),
            NormalDerivativeRoute::Normalized => {
                let g = self.ndf_jet(f)?;
                let geo = LocalGeometry::from_jet(self.group, &self.x, &g, crate::geometry::EPS_CHAR)?;
                Ok(matvec(&geo.nu_h_jacobian()?, &nu))
            }
            NormalDerivativeRoute::ClosedForm => {
                let c_h = self.varpi_matrices()?.c_h;
                Ok(matvec(&c_h, &nu).into_iter().map(|v| -v).collect())
            }
        }
    }
}

fn trace_restricted(j: &[f64], basis: &[Vec<f64>]) -> f64 {
    let d = basis.len();
    let r = restrict(j, basis);
    (0..d).map(|a| r[a * d + a]).sum()
}

/// `H_cc` of `{f = 0}` at `x`.
pub fn mean_curvature_h(group: &crate::algebra::CarnotGroup, field: &ScalarField, x: &[f64]) -> Result<f64, GeometryError> {
    LocalGeometry::new(group, field, x, 2)?.mean_curvature()
}

/// Horizontal shape operator of `{f = 0}` at `x`.
pub fn second_fundamental_form(
    group: &crate::algebra::CarnotGroup,
    field: &ScalarField,
    x: &[f64],
) -> Result<HorizontalShape, GeometryError> {
    LocalGeometry::new(group, field, x, 2)?.shape()
}

/// Pointwise `B_TS` of `{f = 0}` at `x`.
pub fn stability_density(
    group: &crate::algebra::CarnotGroup,
    field: &ScalarField,
    x: &[f64],
) -> Result<StabilityDensity, GeometryError> {
    LocalGeometry::new(group, field, x, 2)?.stability_density()
}
