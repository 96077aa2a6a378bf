mod common;

use std::f64::consts::SQRT_2;

use common::{assert_close, dot, rng, RandomGraph};
use hsurf::examples::{hyperbolic_paraboloid, nonvertical_hyperplane};
use hsurf::geometry::{adapted_hs_basis, ndf_normalize, surface_frame};
use hsurf::jets::frame_derivatives;
use hsurf::{CarnotGroup, GeometryError, Jet3, LocalGeometry, ScalarField};
use proptest::prelude::*;
use rand::Rng;

fn coordinate(k: usize, scale: f64) -> ScalarField {
    ScalarField::analytic(move |x: &[Jet3]| &x[k] * scale)
}

#[test]
fn vertical_plane_normal() {
    let g = CarnotGroup::heisenberg(1);
    let sf = surface_frame(&g, &coordinate(0, 1.0), &[0.0, 1.0, 1.0]).unwrap();
    assert_eq!(sf.nu, vec![1.0, 0.0, 0.0]);
    assert_eq!(sf.p_h_norm, 1.0);
    assert_eq!(sf.varpi, Some(vec![0.0]));
    assert_eq!(sf.nu_h, Some(vec![1.0, 0.0]));
    assert!(!sf.characteristic);
}

#[test]
fn paraboloid_varpi_at_one_one() {
    let s = hyperbolic_paraboloid(1);
    let sf = surface_frame(&s.group, &s.field, &[1.0, 1.0, 0.0]).unwrap();
    assert_close(sf.varpi.unwrap()[0], SQRT_2 / 2.0, 1e-15, "varpi");
}

#[test]
fn identity_is_characteristic_on_the_nonvertical_plane() {
    let s = nonvertical_hyperplane(CarnotGroup::heisenberg(1), 2).unwrap();
    let sf = surface_frame(&s.group, &s.field, &[0.0, 0.0, 0.0]).unwrap();
    assert!(sf.characteristic);
    assert_eq!(sf.p_h_norm, 0.0);
    assert_eq!(sf.nu, vec![0.0, 0.0, 1.0]);
    assert!(sf.nu_h.is_none() && sf.varpi.is_none() && sf.hs_basis.is_none());
    let geo = LocalGeometry::new(&s.group, &s.field, &[0.0; 3], 2).unwrap();
    assert!(matches!(geo.nu_h(), Err(GeometryError::CharacteristicPoint(_))));
    assert!(matches!(geo.mean_curvature(), Err(GeometryError::CharacteristicPoint(_))));
    // nearby points are fine
    assert!(!surface_frame(&s.group, &s.field, &[1e-3, 0.0, 0.0]).unwrap().characteristic);
}

#[test]
fn vanishing_gradient_is_degenerate() {
    let g = CarnotGroup::heisenberg(1);
    let f = ScalarField::analytic(|x: &[Jet3]| &x[0] * &x[0]);
    assert!(matches!(
        surface_frame(&g, &f, &[0.0, 1.0, 2.0]),
        Err(GeometryError::DegenerateDefiningFunction(_))
    ));
}

#[test]
fn adapted_basis_in_the_plane() {
    assert_eq!(adapted_hs_basis(&[1.0, 0.0]), vec![vec![0.0, 1.0]]);
    assert_eq!(adapted_hs_basis(&[0.0, 1.0]), vec![vec![1.0, 0.0]]);
    assert_eq!(adapted_hs_basis(&[0.0, -1.0]), vec![vec![1.0, 0.0]]);
}

fn check_orthonormal_complement(nu: &[f64], basis: &[Vec<f64>]) {
    assert_eq!(basis.len(), nu.len() - 1);
    for (a, ta) in basis.iter().enumerate() {
        assert!(dot(ta, nu).abs() < 1e-12);
        for (b, tb) in basis.iter().enumerate() {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot(ta, tb) - want).abs() < 1e-12);
        }
        let first = ta.iter().find(|v| v.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }
}

#[test]
fn adapted_basis_for_diagonal_normal() {
    let nu = [0.5; 4];
    let basis = adapted_hs_basis(&nu);
    check_orthonormal_complement(&nu, &basis);
    // the tie drops e_1; the first remaining vector comes from e_2
    // e_2 − ν/2 = (−¼, ¾, −¼, −¼), normalised and sign-fixed
    let w = 0.75f64.sqrt();
    for (got, want) in basis[0].iter().zip([0.25 / w, -0.75 / w, 0.25 / w, 0.25 / w]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(basis, adapted_hs_basis(&nu));
}

proptest! {
    #[test]
    fn adapted_basis_is_orthonormal(v in prop::collection::vec(-1.0f64..1.0, 6)) {
        let norm = dot(&v, &v).sqrt();
        prop_assume!(norm > 1e-3);
        let nu: Vec<f64> = v.iter().map(|x| x / norm).collect();
        check_orthonormal_complement(&nu, &adapted_hs_basis(&nu));
    }
}

#[test]
fn varpi_matrices_of_the_reference_surfaces() {
    let s = hyperbolic_paraboloid(1);
    let geo = LocalGeometry::new(&s.group, &s.field, &[1.0, 1.0, 0.0], 1).unwrap();
    let m = geo.varpi_matrices().unwrap();
    let w = SQRT_2 / 2.0;
    for (got, want) in m.c_h.iter().zip([0.0, w, -w, 0.0]) {
        assert_close(*got, want, 1e-15, "C_H(varpi)");
    }
    let g = CarnotGroup::heisenberg(2);
    let geo = LocalGeometry::new(&g, &coordinate(1, 1.0), &[0.3, 0.0, 1.0, -2.0, 0.5], 1).unwrap();
    let m = geo.varpi_matrices().unwrap();
    assert!(m.c_full.iter().chain(&m.c_h).chain(&m.c_hs).all(|v| *v == 0.0));
}

#[test]
fn heisenberg_varpi_matrix_is_a_multiple_of_the_symplectic_block() {
    let g = CarnotGroup::heisenberg(2);
    let surf = RandomGraph::new(5, 1);
    let c = g.c_h_matrix(4);
    let mut r = rng(2);
    for _ in 0..10 {
        let x = surf.random_point(&mut r, 1.0);
        let geo = LocalGeometry::new(&g, &surf.field, &x, 1).unwrap();
        let w = geo.varpi().unwrap()[0];
        let m = geo.varpi_matrices().unwrap();
        for k in 0..16 {
            assert_close(m.c_h[k], w * c[k], 1e-13, "C_H(varpi)");
        }
    }
}

#[test]
fn varpi_matrices_are_skew() {
    let g = CarnotGroup::engel();
    let surf = RandomGraph::new(4, 3);
    let mut r = rng(4);
    for _ in 0..10 {
        let x = surf.random_point(&mut r, 1.0);
        let m = LocalGeometry::new(&g, &surf.field, &x, 1).unwrap().varpi_matrices().unwrap();
        for (mat, d) in [(&m.c_full, 4), (&m.c_h, 2), (&m.c_hs, 1)] {
            for i in 0..d {
                for j in 0..d {
                    assert!((mat[i * d + j] + mat[j * d + i]).abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn normal_decomposes_into_horizontal_and_vertical_parts() {
    for (g, seed) in [(CarnotGroup::heisenberg(2), 5), (CarnotGroup::engel(), 6), (CarnotGroup::heisenberg(1), 7)] {
        let n = g.dim();
        let h = g.horizontal_dim();
        let surf = RandomGraph::new(n, seed);
        let mut r = rng(seed);
        for _ in 0..20 {
            let x = surf.random_point(&mut r, 1.5);
            let sf = surface_frame(&g, &surf.field, &x).unwrap();
            assert!((dot(&sf.nu, &sf.nu) - 1.0).abs() < 1e-14);
            let nu_h = sf.nu_h.as_ref().unwrap();
            let varpi = sf.varpi.as_ref().unwrap();
            for i in 0..h {
                assert!((sf.nu[i] - sf.p_h_norm * nu_h[i]).abs() < 1e-10);
            }
            for a in h..n {
                assert!((sf.nu[a] - sf.p_h_norm * varpi[a - h]).abs() < 1e-10);
            }
            // τ_j ⟂ ν, τ^TS_α ⟂ ν and ⟂ HS
            let hs = sf.hs_basis.as_ref().unwrap();
            check_orthonormal_complement(nu_h, hs);
            for t in sf.tau_ts.as_ref().unwrap() {
                assert!(dot(t, &sf.nu).abs() < 1e-12);
                for tau in hs {
                    assert!(dot(&t[..h], tau).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn normals_do_not_depend_on_the_scale_of_f() {
    let g = CarnotGroup::heisenberg(2);
    let surf = RandomGraph::new(5, 8);
    let f = surf.field.clone();
    let scaled = ScalarField::analytic(move |x: &[Jet3]| match &f {
        ScalarField::Analytic(f) => f(x) * 3.7,
        _ => unreachable!(),
    });
    let mut r = rng(9);
    for _ in 0..10 {
        let x = surf.random_point(&mut r, 1.0);
        let a = surface_frame(&g, &surf.field, &x).unwrap();
        let b = surface_frame(&g, &scaled, &x).unwrap();
        let diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff(&a.nu, &b.nu) < 1e-14);
        assert!(diff(a.varpi.as_ref().unwrap(), b.varpi.as_ref().unwrap()) < 1e-13);
        assert_eq!(a.hs_basis.as_ref().map(|v| v.len()), b.hs_basis.as_ref().map(|v| v.len()));
    }
}

#[test]
fn normalised_defining_function_of_a_scaled_plane() {
    let g = CarnotGroup::heisenberg(1);
    let x = [0.0, 0.4, -1.2];
    let j = ndf_normalize(&g, &coordinate(0, 2.0), &x).unwrap();
    let fj = frame_derivatives(&j, &g.frame_matrix(&x).unwrap()).unwrap();
    assert_close(fj.first[0], 1.0, 1e-15, "X_1");
    assert_close(fj.first[1], 0.0, 1e-15, "X_2");
    assert_close(fj.first[2], 0.0, 1e-15, "T");
}

#[test]
fn normalised_paraboloid_gradient_is_nu_h_plus_varpi() {
    let s = hyperbolic_paraboloid(1);
    let mut r = rng(10);
    for _ in 0..10 {
        let u = [r.gen_range(0.2..2.0), r.gen_range(0.2..2.0)];
        let x = s.point(&u);
        let j = ndf_normalize(&s.group, &s.field, &x).unwrap();
        let fj = frame_derivatives(&j, &s.group.frame_matrix(&x).unwrap()).unwrap();
        let sf = surface_frame(&s.group, &s.field, &x).unwrap();
        let nu_h = sf.nu_h.unwrap();
        assert_close(fj.first[0], nu_h[0], 1e-8, "X_1");
        assert_close(fj.first[1], nu_h[1], 1e-8, "X_2");
        assert_close(fj.first[2], sf.varpi.unwrap()[0], 1e-8, "T");
    }
}

#[test]
fn normalising_twice_changes_nothing_through_first_order() {
    // on H^1, |grad_H f| = |x + y|/√2 for the paraboloid, so √2 f/|x + y|
    // is already normalised on the surface
    let s = hyperbolic_paraboloid(1);
    let f = s.field.clone();
    let ndf = ScalarField::analytic(move |x: &[Jet3]| {
        let ScalarField::Analytic(f) = &f else { unreachable!() };
        let s = &x[0] + &x[1];
        f(x) * SQRT_2 / (&s * &s).sqrt()
    });
    for u in [[1.0, 1.0], [0.3, 1.7], [2.0, -0.5]] {
        let x = s.point(&u);
        let once = ndf.jet(&x, 3).unwrap();
        let twice = ndf_normalize(&s.group, &ndf, &x).unwrap();
        assert!((once.value() - twice.value()).abs() < 1e-10);
        for k in 0..3 {
            assert!((once.grad(k).unwrap() - twice.grad(k).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn normalising_needs_a_noncharacteristic_point() {
    let s = nonvertical_hyperplane(CarnotGroup::heisenberg(1), 2).unwrap();
    assert!(matches!(
        ndf_normalize(&s.group, &s.field, &[0.0, 0.0, 0.0]),
        Err(GeometryError::CharacteristicPoint(_))
    ));
}
