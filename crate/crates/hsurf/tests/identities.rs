mod common;

use common::{rng, RandomGraph};
use hsurf::examples::{hyperbolic_paraboloid, nonvertical_hyperplane, vertical_hyperplane, ExampleSurface};
use hsurf::identities::{point_residuals, verify_identities, IdentityOptions, IdentityReport, IdentityResidual};
use hsurf::{CarnotGroup, Jet3, ScalarField};
use rand::Rng;

fn sample(s: &ExampleSurface, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = s.group.dim();
    let mut r = rng(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let u: Vec<f64> = (0..n - 1).map(|_| r.gen_range(-2.0..2.0)).collect();
        let x = s.point(&u);
        if s.closed_form(&x).map_or(false, |c| c.p_h_norm > 0.05) {
            out.push(x);
        }
    }
    out
}

fn families() -> Vec<ExampleSurface> {
    let mut v = Vec::new();
    for m in 1..=3 {
        v.push(hyperbolic_paraboloid(m));
        v.push(nonvertical_hyperplane(CarnotGroup::heisenberg(m), 2 * m).unwrap());
        v.push(vertical_hyperplane(CarnotGroup::heisenberg(m), (0..2 * m).map(|k| 1.0 - 0.3 * k as f64).collect(), 0.2).unwrap());
    }
    v.push(vertical_hyperplane(CarnotGroup::engel(), vec![0.6, -0.8], 0.5).unwrap());
    v
}

fn describe(s: &ExampleSurface, report: &IdentityReport) -> String {
    format!("{} in a {}-dimensional group: {:#?}", s.id(), s.group.dim(), report.rows)
}

#[test]
fn identities_hold_with_analytic_jets() {
    for (k, s) in families().iter().enumerate() {
        let pts = sample(s, 30, k as u64);
        let opts = IdentityOptions::new(s.group.dim(), true);
        let report = verify_identities(&s.group, &s.field, &pts, &opts, 1e-7).unwrap();
        assert!(report.all_pass(), "{}", describe(s, &report));
        assert_eq!(report.skipped, 0);
        assert!(report.rows.iter().any(|r| r.name == "jacobi_varpi"));
    }
}

#[test]
fn identities_hold_with_finite_difference_jets() {
    for (k, s) in families().iter().enumerate() {
        let pts = sample(s, 10, 100 + k as u64);
        let opts = IdentityOptions::new(s.group.dim(), true);
        let fd = s.field.to_finite_difference(None);
        let report = verify_identities(&s.group, &fd, &pts, &opts, 1e-4).unwrap();
        assert!(report.all_pass(), "{}", describe(s, &report));
    }
}

#[test]
fn general_surfaces_pass_the_unconditional_identities() {
    for (g, seed) in [
        (CarnotGroup::heisenberg(1), 1),
        (CarnotGroup::heisenberg(2), 2),
        (CarnotGroup::engel(), 3),
        (CarnotGroup::abelian(3), 4),
    ] {
        let surf = RandomGraph::new(g.dim(), seed);
        let mut r = rng(seed);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| surf.random_point(&mut r, 1.0)).collect();
        let opts = IdentityOptions::new(g.dim(), false);
        let report = verify_identities(&g, &surf.field, &pts, &opts, 1e-7).unwrap();
        assert!(report.all_pass(), "{:#?}", report.rows);
        assert!(!report.rows.iter().any(|r| r.name.starts_with("jacobi")));
    }
}

#[test]
fn characteristic_samples_are_skipped() {
    let s = nonvertical_hyperplane(CarnotGroup::heisenberg(1), 2).unwrap();
    let pts = vec![vec![0.0; 3], vec![1.0, 0.5, 0.0]];
    let report = verify_identities(&s.group, &s.field, &pts, &IdentityOptions::new(3, true), 1e-7).unwrap();
    assert_eq!(report.skipped, 1);
    assert!(report.rows.iter().all(|r| r.samples == 1));
}

#[test]
fn abelian_residuals_vanish() {
    // round sphere in R^3: constant mean curvature, no vertical directions
    let g = CarnotGroup::abelian(3);
    let sphere = ScalarField::analytic(|x: &[Jet3]| {
        (&(&(&x[0] * &x[0]) + &(&x[1] * &x[1])) + &(&x[2] * &x[2])).sqrt().add_const(-2.0)
    });
    let opts = IdentityOptions::new(3, true);
    let mut r = rng(5);
    for _ in 0..20 {
        let v: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let x: Vec<f64> = v.iter().map(|a| 2.0 * a / norm).collect();
        for res in point_residuals(&g, &sphere, &x, &opts).unwrap() {
            assert!(res.residual < 1e-13, "{:?}", res);
        }
    }
}

#[test]
fn tolerance_floor_makes_the_suite_fail() {
    let s = hyperbolic_paraboloid(1);
    let pts = sample(&s, 10, 7);
    let fd = s.field.to_finite_difference(None);
    let report = verify_identities(&s.group, &fd, &pts, &IdentityOptions::new(3, true), 1e-16).unwrap();
    assert!(!report.all_pass());
    assert!(report.max_residual() > 1e-16);
}

#[test]
fn residuals_are_relative_for_large_values() {
    assert_eq!(IdentityResidual::new("x", 1e-3, 0.0).residual, 1e-3);
    assert_eq!(IdentityResidual::new("x", 200.0, 100.0).residual, 0.5);
    let mut report = IdentityReport::default();
    report.record(&IdentityResidual::new("x", 0.0, f64::NAN), 1.0);
    assert!(!report.all_pass());
}
