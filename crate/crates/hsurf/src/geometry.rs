//! Local geometry of a hypersurface `S = {f = 0}`: unit normal, horizontal
//! normal `ν_H`, the normalised vertical components `ϖ`, an adapted basis of
//! the horizontal tangent space `HS`, and the `ϖ`-weighted structure
//! matrices.
//!
//! Everything is computed from a [`Jet3`] of `f` with truncated jet
//! arithmetic, so derivatives of `ν_H` and `ϖ` are exact whenever the jet of
//! `f` is.

use thiserror::Error;

use crate::algebra::{CarnotGroup, FrameMatrix};
use crate::jets::{frame_derivative_jet, frame_entry_jets, Jet3, JetError, ScalarField};

/// Default threshold on `|P_H ν|` below which a point is characteristic.
pub const EPS_CHAR: f64 = 1e-8;
/// Gradients shorter than this make the defining function degenerate.
pub const DEGENERATE_GRAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("defining function has vanishing gradient (|grad f| = {0:e})")]
    DegenerateDefiningFunction(f64),
    #[error("point is characteristic (|P_H nu| = {0:e}); the horizontal normal is undefined")]
    CharacteristicPoint(f64),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
    #[error("the group is not a Heisenberg group in canonical coordinates")]
    NotHeisenberg,
    #[error("surface is not H-minimal here (H = {0:e})")]
    NotHMinimal(f64),
    #[error("{0}")]
    Invalid(String),
}

/// Orthonormal basis `τ_2, …, τ_h` of `ν_H^⊥` inside the horizontal layer.
///
/// The canonical vector with the largest `|⟨e_i, ν_H⟩|` is dropped (ties go
/// to the smaller index), the rest are projected off `ν_H` and
/// Gram–Schmidt-orthonormalised in index order.  Each vector's first
/// non-negligible entry is made positive so the basis is deterministic.
pub fn adapted_hs_basis(nu_h: &[f64]) -> Vec<Vec<f64>> {
    let h = nu_h.len();
    let mut drop = 0;
    for i in 1..h {
        if nu_h[i].abs() > nu_h[drop].abs() {
            drop = i;
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(h.saturating_sub(1));
    for i in (0..h).filter(|&i| i != drop) {
        let mut v = vec![0.0; h];
        v[i] = 1.0;
        // two passes of modified Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            let p = dot(&v, nu_h);
            for k in 0..h {
                v[k] -= p * nu_h[k];
            }
            for b in &basis {
                let p = dot(&v, b);
                for k in 0..h {
                    v[k] -= p * b[k];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                for x in v.iter_mut() {
                    *x = -*x;
                }
            }
        }
        basis.push(v);
    }
    basis
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normal data of `S` at a point.  At characteristic points the horizontal
/// quantities are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFrame {
    /// Unit Riemannian normal in frame components.
    pub nu: Vec<f64>,
    pub p_h_norm: f64,
    pub characteristic: bool,
    pub nu_h: Option<Vec<f64>>,
    /// `ϖ_α = ν_α / |P_H ν|` for the vertical indices, in order.
    pub varpi: Option<Vec<f64>>,
    pub hs_basis: Option<Vec<Vec<f64>>>,
    /// `τ^TS_α = X_α − ϖ_α ν_H` in frame components.
    pub tau_ts: Option<Vec<Vec<f64>>>,
}

/// `C(ϖ) = Σ_α ϖ_α C^α` (`n×n`), `C_H(ϖ_{H2})` (`h×h`) and its restriction
/// `C_HS[a][b] = ⟨C_H τ_b, τ_a⟩` to the adapted basis.  Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VarpiMatrices {
    pub c_full: Vec<f64>,
    pub c_h: Vec<f64>,
    pub c_hs: Vec<f64>,
}

/// Everything known about `S` at one point, derived from a jet of `f`.
#[derive(Debug, Clone)]
pub struct LocalGeometry<'g> {
    pub(crate) group: &'g CarnotGroup,
    pub(crate) x: Vec<f64>,
    pub(crate) frame: FrameMatrix,
    pub(crate) a_jets: Vec<Jet3>,
    pub(crate) fx: Vec<Jet3>,
    pub(crate) grad_norm: f64,
    pub(crate) nu: Vec<f64>,
    pub(crate) p_h_norm: f64,
    pub(crate) characteristic: bool,
    pub(crate) nu_h_jets: Vec<Jet3>,
    pub(crate) varpi_jets: Vec<Jet3>,
    pub(crate) nu_h: Vec<f64>,
    pub(crate) varpi: Vec<f64>,
    pub(crate) hs: Vec<Vec<f64>>,
}

impl<'g> LocalGeometry<'g> {
    /// Builds the local geometry from a jet of the defining function at `x`.
    /// A jet of order `m` yields `ν_H`, `ϖ` as jets of order `m − 1`.
    pub fn from_jet(group: &'g CarnotGroup, x: &[f64], f: &Jet3, eps_char: f64) -> Result<Self, GeometryError> {
        let n = group.dim();
        if x.len() != n || f.dim() != n {
            return Err(GeometryError::Invalid(format!(
                "point/jet dimension {} / {} does not match the group dimension {}",
                x.len(),
                f.dim(),
                n
            )));
        }
        if f.order() == 0 {
            return Err(JetError::InsufficientOrder { have: 0, need: 1 }.into());
        }
        let h = group.horizontal_dim();
        let frame = group.frame_matrix(x)?;
        let a_jets = frame_entry_jets(&frame, f.order() - 1);
        let fx: Vec<Jet3> = (0..n)
            .map(|i| frame_derivative_jet(&a_jets, f, i))
            .collect::<Result<_, _>>()?;
        let grad_norm = fx.iter().map(|j| j.value() * j.value()).sum::<f64>().sqrt();
        if !(grad_norm >= DEGENERATE_GRAD) {
            return Err(GeometryError::DegenerateDefiningFunction(grad_norm));
        }
        let nu: Vec<f64> = fx.iter().map(|j| j.value() / grad_norm).collect();
        let p_h_norm = nu[..h].iter().map(|v| v * v).sum::<f64>().sqrt();
        let characteristic = p_h_norm < eps_char;
        let mut geo = LocalGeometry {
            group,
            x: x.to_vec(),
            frame,
            a_jets,
            fx,
            grad_norm,
            nu,
            p_h_norm,
            characteristic,
            nu_h_jets: Vec::new(),
            varpi_jets: Vec::new(),
            nu_h: Vec::new(),
            varpi: Vec::new(),
            hs: Vec::new(),
        };
        if !characteristic {
            let gh2 = crate::jets::dot(&geo.fx[..h], &geo.fx[..h]);
            let inv = gh2.sqrt().recip();
            geo.nu_h_jets = geo.fx[..h].iter().map(|j| j * &inv).collect();
            geo.varpi_jets = geo.fx[h..].iter().map(|j| j * &inv).collect();
            geo.nu_h = geo.nu_h_jets.iter().map(|j| j.value()).collect();
            geo.varpi = geo.varpi_jets.iter().map(|j| j.value()).collect();
            geo.hs = adapted_hs_basis(&geo.nu_h);
        }
        Ok(geo)
    }

    /// Local geometry of the zero set of `field` at `x` with a jet of the
    /// requested order.
    pub fn new(group: &'g CarnotGroup, field: &ScalarField, x: &[f64], order: u8) -> Result<Self, GeometryError> {
        let jet = field.jet(x, order)?;
        Self::from_jet(group, x, &jet, EPS_CHAR)
    }

    pub fn group(&self) -> &CarnotGroup {
        self.group
    }

    pub fn point(&self) -> &[f64] {
        &self.x
    }

    pub fn frame(&self) -> &FrameMatrix {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }

    pub fn h(&self) -> usize {
        self.group.horizontal_dim()
    }

    pub fn is_characteristic(&self) -> bool {
        self.characteristic
    }

    pub fn p_h_norm(&self) -> f64 {
        self.p_h_norm
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Norm of the full gradient `(X_1 f, …, X_n f)`.
    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    pub(crate) fn require_noncharacteristic(&self) -> Result<(), GeometryError> {
        if self.characteristic {
            Err(GeometryError::CharacteristicPoint(self.p_h_norm))
        } else {
            Ok(())
        }
    }

    pub fn nu_h(&self) -> Result<&[f64], GeometryError> {
        self.require_noncharacteristic()?;
        Ok(&self.nu_h)
    }

    pub fn varpi(&self) -> Result<&[f64], GeometryError> {
        self.require_noncharacteristic()?;
        Ok(&self.varpi)
    }

    pub fn hs_basis(&self) -> Result<&[Vec<f64>], GeometryError> {
        self.require_noncharacteristic()?;
        Ok(&self.hs)
    }

    pub fn nu_h_jets(&self) -> Result<&[Jet3], GeometryError> {
        self.require_noncharacteristic()?;
        Ok(&self.nu_h_jets)
    }

    pub fn varpi_jets(&self) -> Result<&[Jet3], GeometryError> {
        self.require_noncharacteristic()?;
        Ok(&self.varpi_jets)
    }

    /// `ν_H` padded with zeros to `n` frame components.
    pub fn nu_h_padded(&self) -> Result<Vec<f64>, GeometryError> {
        let mut v = self.nu_h()?.to_vec();
        v.resize(self.dim(), 0.0);
        Ok(v)
    }

    pub fn tau_ts(&self) -> Result<Vec<Vec<f64>>, GeometryError> {
        let n = self.dim();
        let h = self.h();
        let nu_h = self.nu_h()?;
        Ok((h..n)
            .map(|al| {
                let mut t = vec![0.0; n];
                t[al] = 1.0;
                for i in 0..h {
                    t[i] -= self.varpi[al - h] * nu_h[i];
                }
                t
            })
            .collect())
    }

    pub fn surface_frame(&self) -> SurfaceFrame {
        let ok = !self.characteristic;
        SurfaceFrame {
            nu: self.nu.clone(),
            p_h_norm: self.p_h_norm,
            characteristic: self.characteristic,
            nu_h: ok.then(|| self.nu_h.clone()),
            varpi: ok.then(|| self.varpi.clone()),
            hs_basis: ok.then(|| self.hs.clone()),
            tau_ts: self.tau_ts().ok(),
        }
    }

    /// Jet of `X_i φ` (one order below `phi`).
    pub fn frame_derivative(&self, phi: &Jet3, i: usize) -> Result<Jet3, GeometryError> {
        if phi.order() == 0 {
            return Err(JetError::InsufficientOrder { have: 0, need: 1 }.into());
        }
        let have = self.a_jets.first().map_or(0, |j| j.order());
        if phi.order() - 1 > have {
            let a = frame_entry_jets(&self.frame, phi.order() - 1);
            return Ok(frame_derivative_jet(&a, phi, i)?);
        }
        Ok(frame_derivative_jet(&self.a_jets, phi, i)?)
    }

    /// `X_k (ν_H)_i` for `i < h`, `k < n`, as an `h×n` row-major matrix.
    pub fn nu_h_derivatives(&self) -> Result<Vec<f64>, GeometryError> {
        let n = self.dim();
        let h = self.h();
        let jets = self.nu_h_jets()?;
        let mut out = vec![0.0; h * n];
        for i in 0..h {
            for k in 0..n {
                out[i * n + k] = self.frame_derivative(&jets[i], k)?.value();
            }
        }
        Ok(out)
    }

    /// Horizontal Jacobian `J[i][j] = X_j (ν_H)_i` (`h×h`).
    pub fn nu_h_jacobian(&self) -> Result<Vec<f64>, GeometryError> {
        let jets = self.nu_h_jets()?.to_vec();
        self.horizontal_jacobian(&jets)
    }

    /// `J[i][j] = X_j Y_i` for a horizontal field given by jets `Y_i`.
    pub fn horizontal_jacobian(&self, y: &[Jet3]) -> Result<Vec<f64>, GeometryError> {
        let h = self.h();
        let mut out = vec![0.0; h * h];
        for i in 0..h {
            for j in 0..h {
                out[i * h + j] = self.frame_derivative(&y[i], j)?.value();
            }
        }
        Ok(out)
    }

    pub fn varpi_matrices(&self) -> Result<VarpiMatrices, GeometryError> {
        let n = self.dim();
        let h = self.h();
        let varpi = self.varpi()?;
        let g = self.group;
        let mut c_full = vec![0.0; n * n];
        for (k, al) in (h..n).enumerate() {
            for i in 0..n {
                for j in 0..n {
                    c_full[i * n + j] += varpi[k] * g.c(i, j, al);
                }
            }
        }
        let mut c_h = vec![0.0; h * h];
        for al in g.h2_indices() {
            for i in 0..h {
                for j in 0..h {
                    c_h[i * h + j] += varpi[al - h] * g.c(i, j, al);
                }
            }
        }
        let c_hs = restrict(&c_h, &self.hs);
        Ok(VarpiMatrices { c_full, c_h, c_hs })
    }

    /// The normalised defining function `f / |grad_H f|` as a jet one order
    /// below the input (see [`ndf_normalize`]).
    pub fn ndf_jet(&self, f: &Jet3) -> Result<Jet3, GeometryError> {
        let h = self.h();
        let gh = crate::jets::dot(&self.fx[..h], &self.fx[..h]).sqrt();
        if gh.value() < DEGENERATE_GRAD {
            return Err(GeometryError::CharacteristicPoint(self.p_h_norm));
        }
        Ok(f * &gh.recip())
    }
}

/// `M[a][b] = τ_a^T m τ_b` for an `h×h` matrix `m`.
pub fn restrict(m: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let h = basis.first().map_or(0, |b| b.len());
    let d = basis.len();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..h {
                    s += basis[a][i] * m[i * h + j] * basis[b][j];
                }
            }
            out[a * d + b] = s;
        }
    }
    out
}

/// Normal data of `{f = 0}` at `x`.
pub fn surface_frame(group: &CarnotGroup, field: &ScalarField, x: &[f64]) -> Result<SurfaceFrame, GeometryError> {
    Ok(LocalGeometry::new(group, field, x, 1)?.surface_frame())
}

/// Jet of `f / |grad_H f|` at `x`, through order two.  On `S` its frame
/// gradient is `ν_H + ϖ`.
pub fn ndf_normalize(group: &CarnotGroup, field: &ScalarField, x: &[f64]) -> Result<Jet3, GeometryError> {
    let f = field.jet(x, 3)?;
    let geo = LocalGeometry::from_jet(group, x, &f, EPS_CHAR)?;
    geo.require_noncharacteristic()?;
    geo.ndf_jet(&f)
}
