mod common;

use std::f64::consts::SQRT_2;

use common::{assert_close, dot, rng, RandomGraph};
use hsurf::curvature::{mean_curvature_h, second_fundamental_form, stability_density, NormalDerivativeRoute};
use hsurf::examples::{hyperbolic_paraboloid, nonvertical_hyperplane, vertical_hyperplane, ExampleSurface};
use hsurf::geometry::{adapted_hs_basis, restrict};
use hsurf::{CarnotGroup, GeometryError, Jet3, LocalGeometry, ScalarField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Point of the paraboloid over a random horizontal point with
/// `‖x + y‖ ≥ 0.3`.
fn paraboloid_point(s: &ExampleSurface, r: &mut ChaCha8Rng) -> Vec<f64> {
    let h = s.group.horizontal_dim();
    loop {
        let u: Vec<f64> = (0..h).map(|_| r.gen_range(-2.0..2.0)).collect();
        let v2: f64 = (0..h / 2).map(|k| (u[2 * k] + u[2 * k + 1]).powi(2)).sum();
        if v2 > 0.09 {
            return s.point(&u);
        }
    }
}

/// Point of `{x_α = 0}` with `|C^α x_H| ≥ 0.3`.
fn plane_point(s: &ExampleSurface, r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = s.group.dim();
    loop {
        let u: Vec<f64> = (0..n - 1).map(|_| r.gen_range(-2.0..2.0)).collect();
        let x = s.point(&u);
        if s.closed_form(&x).map_or(false, |c| c.varpi.iter().all(|w| w.abs() < 2.0 / 0.3)) {
            return x;
        }
    }
}

fn x1_plane(group: CarnotGroup) -> ExampleSurface {
    let mut d = vec![0.0; group.horizontal_dim()];
    d[0] = 1.0;
    vertical_hyperplane(group, d, 0.0).unwrap()
}

#[test]
fn reference_surfaces_are_h_minimal() {
    let mut r = rng(11);
    let g = CarnotGroup::heisenberg(2);
    let v = vertical_hyperplane(g.clone(), vec![0.3, -1.0, 0.5, 2.0], 0.7).unwrap();
    for _ in 0..200 {
        let u: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
        assert_eq!(mean_curvature_h(&g, &v.field, &v.point(&u)).unwrap(), 0.0);
    }
    for m in 1..=3 {
        let s = hyperbolic_paraboloid(m);
        for _ in 0..200 {
            let x = paraboloid_point(&s, &mut r);
            let h = mean_curvature_h(&s.group, &s.field, &x).unwrap();
            assert!(h.abs() <= 1e-9, "H_cc = {} on the paraboloid in H^{}", h, m);
        }
        let s = nonvertical_hyperplane(CarnotGroup::heisenberg(m), 2 * m).unwrap();
        for _ in 0..200 {
            let x = plane_point(&s, &mut r);
            let h = mean_curvature_h(&s.group, &s.field, &x).unwrap();
            assert!(h.abs() <= 1e-9, "H_cc = {} on the plane in H^{}", h, m);
        }
    }
    let s = hyperbolic_paraboloid(1);
    assert_close(mean_curvature_h(&s.group, &s.field, &[1.0, 1.0, 0.0]).unwrap(), 0.0, 1e-15, "H_cc(1,1)");
}

#[test]
fn characteristic_points_are_rejected() {
    let s = hyperbolic_paraboloid(1);
    let x = s.point(&[1.0, -1.0]);
    assert!(matches!(
        second_fundamental_form(&s.group, &s.field, &x),
        Err(GeometryError::CharacteristicPoint(_))
    ));
    assert!(matches!(stability_density(&s.group, &s.field, &x), Err(GeometryError::CharacteristicPoint(_))));
}

#[test]
fn vertical_plane_has_zero_shape() {
    for g in [CarnotGroup::heisenberg(1), CarnotGroup::heisenberg(3), CarnotGroup::engel()] {
        let s = x1_plane(g.clone());
        let x: Vec<f64> = (0..g.dim()).map(|k| if k == 0 { 0.0 } else { 0.4 * k as f64 - 1.0 }).collect();
        let b = second_fundamental_form(&g, &s.field, &x).unwrap();
        assert!(b.b.iter().all(|v| *v == 0.0));
        assert_eq!(b.h_cc, 0.0);
        let geo = LocalGeometry::new(&g, &s.field, &x, 3).unwrap();
        assert_eq!(geo.torsion_residual().unwrap(), 0.0);
        assert_eq!(geo.stability_density().unwrap().b_ts, 0.0);
    }
}

#[test]
fn paraboloid_shape_in_h2() {
    // x = (1, 0), y = (1, 0), so ‖x + y‖² = 4
    let s = hyperbolic_paraboloid(2);
    let x = s.point(&[1.0, 1.0, 0.0, 0.0]);
    let b = second_fundamental_form(&s.group, &s.field, &x).unwrap();
    assert_close(b.b_norm2, 0.5, 1e-12, "|B|^2");
    assert_close(b.s_norm2, 0.25, 1e-12, "|S|^2");
    assert_close(b.a_norm2, 0.25, 1e-12, "|A|^2");
    assert_close(b.h_cc, 0.0, 1e-12, "H_cc");
    for k in 0..b.b.len() {
        assert_close(b.b[k], b.s[k] + b.a[k], 1e-15, "B = S + A");
    }
}

#[test]
fn nonvertical_plane_has_no_symmetric_part() {
    let mut r = rng(12);
    for m in 1..=3 {
        let s = nonvertical_hyperplane(CarnotGroup::heisenberg(m), 2 * m).unwrap();
        for _ in 0..20 {
            let x = plane_point(&s, &mut r);
            let b = second_fundamental_form(&s.group, &s.field, &x).unwrap();
            assert!(b.s_norm2 < 1e-20, "S_H = {:?}", b.s);
        }
    }
}

#[test]
fn antisymmetric_part_is_half_the_varpi_matrix() {
    let mut r = rng(13);
    for m in 1..=3 {
        let s = hyperbolic_paraboloid(m);
        for _ in 0..20 {
            let x = paraboloid_point(&s, &mut r);
            let geo = LocalGeometry::new(&s.group, &s.field, &x, 2).unwrap();
            assert!(geo.torsion_residual().unwrap() < 1e-6);
        }
    }
    // finite-difference jets on random graphs
    for (g, seed) in [(CarnotGroup::heisenberg(1), 1), (CarnotGroup::heisenberg(2), 2), (CarnotGroup::heisenberg(3), 3)] {
        let surf = RandomGraph::new(g.dim(), seed);
        let fd = surf.field.to_finite_difference(None);
        let mut r = rng(seed + 100);
        let mut done = 0;
        while done < 20 {
            let x = surf.random_point(&mut r, 1.0);
            let Ok(geo) = LocalGeometry::new(&g, &fd, &x, 2) else { continue };
            if geo.is_characteristic() || geo.p_h_norm() < 0.05 {
                continue;
            }
            let res = geo.torsion_residual().unwrap();
            assert!(res < 1e-5, "torsion residual {} in H^{}", res, g.dim() / 2);
            done += 1;
        }
    }
}

#[test]
fn trace_of_b_squared_and_norm_identities() {
    let mut r = rng(14);
    for (g, seed) in [
        (CarnotGroup::heisenberg(1), 4),
        (CarnotGroup::heisenberg(2), 5),
        (CarnotGroup::heisenberg(3), 6),
        (CarnotGroup::engel(), 7),
        (CarnotGroup::abelian(4), 8),
    ] {
        let surf = RandomGraph::new(g.dim(), seed);
        for _ in 0..30 {
            let x = surf.random_point(&mut r, 1.5);
            let geo = LocalGeometry::new(&g, &surf.field, &x, 2).unwrap();
            if geo.p_h_norm() < 0.05 {
                continue;
            }
            let b = geo.shape().unwrap();
            let scale = 1.0 + b.b_norm2;
            assert!((b.trace_b_squared() - (b.s_norm2 - b.a_norm2)).abs() < 1e-8 * scale);
            assert!((b.b_norm2 - (b.s_norm2 + b.a_norm2)).abs() < 1e-8 * scale);
            let tr: f64 = (0..b.dim).map(|a| b.s[a * b.dim + a]).sum();
            assert!((tr - b.h_cc).abs() < 1e-8 * scale);
            if g.is_heisenberg() {
                let m = (g.horizontal_dim() / 2) as f64;
                let w = geo.varpi().unwrap()[0];
                let want = b.s_norm2 + 0.5 * (m - 1.0) * w * w;
                assert!((b.b_norm2 - want).abs() < 1e-8 * scale, "{} vs {}", b.b_norm2, want);
            }
        }
    }
}

#[test]
fn operators_annihilate_constants() {
    let s = hyperbolic_paraboloid(2);
    let x = s.point(&[0.3, 1.2, -0.4, 0.8]);
    let geo = LocalGeometry::new(&s.group, &s.field, &x, 3).unwrap();
    let c = Jet3::constant(5, 2.5, 3);
    assert!(geo.grad_hs(&c).unwrap().iter().all(|v| *v == 0.0));
    assert_eq!(geo.delta_hs(&c).unwrap(), 0.0);
    assert_eq!(geo.l_hs(&c).unwrap(), 0.0);
}

#[test]
fn laplacian_of_inverse_distance_on_the_nonvertical_plane() {
    let mut r = rng(15);
    for m in 1..=3 {
        let g = CarnotGroup::heisenberg(m);
        let h = 2 * m;
        let alpha = h;
        let s = nonvertical_hyperplane(g.clone(), alpha).unwrap();
        let c = g.c_h_matrix(alpha);
        let cc = c.clone();
        let phi = ScalarField::analytic(move |x: &[Jet3]| {
            let mut r2 = Jet3::zero(x[0].dim(), x[0].order());
            for i in 0..h {
                let mut ci = Jet3::zero(x[0].dim(), x[0].order());
                for j in 0..h {
                    ci = &ci + &(&x[j] * cc[i * h + j]);
                }
                r2 = &r2 + &(&ci * &ci);
            }
            r2.powf(-0.5)
        });
        for _ in 0..10 {
            let x = plane_point(&s, &mut r);
            let geo = LocalGeometry::new(&g, &s.field, &x, 3).unwrap();
            let nu = geo.nu_h().unwrap().to_vec();
            let cx: Vec<f64> = (0..h).map(|i| (0..h).map(|j| c[i * h + j] * x[j]).sum()).collect();
            let cn: Vec<f64> = (0..h).map(|i| (0..h).map(|j| c[i * h + j] * nu[j]).sum()).collect();
            let c_hs = restrict(&c, &adapted_hs_basis(&nu));
            let rr = dot(&cx, &cx).sqrt();
            let want = (2.0 * dot(&cn, &cn) - c_hs.iter().map(|v| v * v).sum::<f64>()) / rr.powi(3);
            let p = phi.jet(&x, 3).unwrap();
            assert_close(geo.delta_hs(&p).unwrap(), want, 1e-9 * (1.0 + want.abs()), "Δ_HS(1/|Cx|)");
            assert_close(geo.delta_hs_div(&p).unwrap(), want, 1e-9 * (1.0 + want.abs()), "div_HS grad_HS");
        }
    }
}

#[test]
fn l_hs_of_varpi() {
    let s = hyperbolic_paraboloid(1);
    let geo = LocalGeometry::new(&s.group, &s.field, &[1.0, 1.0, 0.0], 3).unwrap();
    let w = geo.varpi_jets().unwrap()[0].clone();
    assert_close(geo.l_hs(&w).unwrap(), SQRT_2 / 4.0, 1e-12, "L_HS varpi");

    let mut r = rng(16);
    for m in 1..=3 {
        let s = nonvertical_hyperplane(CarnotGroup::heisenberg(m), 2 * m).unwrap();
        for _ in 0..10 {
            let x = plane_point(&s, &mut r);
            let geo = LocalGeometry::new(&s.group, &s.field, &x, 3).unwrap();
            let w = geo.varpi_jets().unwrap()[0].clone();
            let a2 = geo.shape().unwrap().a_norm2;
            let want = -w.value() * a2;
            assert_close(geo.l_hs(&w).unwrap(), want, 1e-9 * (1.0 + want.abs()), "L_HS varpi");
        }
    }
}

#[test]
fn stability_potential_values() {
    let s = x1_plane(CarnotGroup::heisenberg(1));
    let sd = stability_density(&s.group, &s.field, &[0.0, 0.3, -2.0]).unwrap();
    assert_eq!(sd.b_ts, 0.0);

    let s = hyperbolic_paraboloid(1);
    let sd = stability_density(&s.group, &s.field, &[1.0, 1.0, 0.0]).unwrap();
    assert_close(sd.b_ts, -0.5, 1e-12, "B_TS paraboloid H^1");
    assert_close(sd.b_ts, sd.s_norm2 + sd.a_norm2 + sd.vertical_term, 1e-15, "breakdown");

    // |C x_H| = 2 in H^2
    let s = nonvertical_hyperplane(CarnotGroup::heisenberg(2), 4).unwrap();
    let x = s.point(&[2.0, 0.0, 0.0, 0.0]);
    let sd = stability_density(&s.group, &s.field, &x).unwrap();
    assert_close(sd.b_ts, 0.5, 1e-12, "B_TS plane H^2");
    assert_close(sd.b_ts, sd.a_norm2, 1e-12, "B_TS = |A|^2");
}

#[test]
fn heisenberg_potential_agrees_with_the_general_one() {
    let s = hyperbolic_paraboloid(1);
    let geo = LocalGeometry::new(&s.group, &s.field, &[1.0, 1.0, 0.0], 3).unwrap();
    assert_close(geo.heisenberg_bts(1e-9).unwrap(), -0.5, 1e-12, "H^1 paraboloid");

    let s = x1_plane(CarnotGroup::heisenberg(1));
    let geo = LocalGeometry::new(&s.group, &s.field, &[0.0, 1.0, 1.0], 3).unwrap();
    assert_eq!(geo.heisenberg_bts(1e-9).unwrap(), 0.0);

    let s = hyperbolic_paraboloid(2);
    let geo = LocalGeometry::new(&s.group, &s.field, &s.point(&[1.0, 1.0, 0.0, 0.0]), 3).unwrap();
    assert_close(geo.heisenberg_bts(1e-9).unwrap(), 0.0, 1e-12, "H^2 paraboloid");

    let mut r = rng(17);
    for m in 1..=3 {
        let s = hyperbolic_paraboloid(m);
        for _ in 0..20 {
            let x = paraboloid_point(&s, &mut r);
            let geo = LocalGeometry::new(&s.group, &s.field, &x, 3).unwrap();
            let a = geo.heisenberg_bts(1e-9).unwrap();
            let b = geo.stability_density().unwrap().b_ts;
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }
}

#[test]
fn heisenberg_potential_preconditions() {
    let g = CarnotGroup::engel();
    let s = x1_plane(g.clone());
    let geo = LocalGeometry::new(&g, &s.field, &[0.0, 1.0, 0.0, 0.0], 3).unwrap();
    assert!(matches!(geo.heisenberg_bts(1e-9), Err(GeometryError::NotHeisenberg)));

    let g = CarnotGroup::heisenberg(1);
    let sphere = ScalarField::analytic(|x: &[Jet3]| &(&(&x[0] * &x[0]) + &(&x[1] * &x[1])) + &(&x[2] * &x[2]));
    let geo = LocalGeometry::new(&g, &sphere, &[1.0, 0.0, 0.0], 3).unwrap();
    assert!(matches!(geo.heisenberg_bts(1e-9), Err(GeometryError::NotHMinimal(_))));
}

#[test]
fn normal_derivative_routes_agree_for_normalised_functions() {
    let mut r = rng(18);
    for m in 1..=2 {
        let s = hyperbolic_paraboloid(m);
        for _ in 0..10 {
            let x = paraboloid_point(&s, &mut r);
            let f = s.field.jet(&x, 3).unwrap();
            let geo = LocalGeometry::new(&s.group, &s.field, &x, 3).unwrap();
            let a = geo.normal_derivative_of_normal(&f, NormalDerivativeRoute::Normalized).unwrap();
            let b = geo.normal_derivative_of_normal(&f, NormalDerivativeRoute::ClosedForm).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", a, b);
            }
        }
    }
}
