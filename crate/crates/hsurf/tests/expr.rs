use hsurf::expr::{parse, parse_field, Expr};
use hsurf::{CarnotGroup, LocalGeometry};

fn eval(src: &str, x: &[f64]) -> f64 {
    parse(src, x.len()).unwrap().eval(x)
}

#[test]
fn arithmetic_and_precedence() {
    let x = [2.0, 3.0, 5.0];
    assert_eq!(eval("1 + 2 * 3", &x), 7.0);
    assert_eq!(eval("(1 + 2) * 3", &x), 9.0);
    assert_eq!(eval("x1 - x2 - x3", &x), -6.0);
    assert_eq!(eval("x3 / x1 / 5", &x), 0.5);
    assert_eq!(eval("-x1^2", &x), -4.0);
    assert_eq!(eval("2^3^2", &x), 512.0);
    assert_eq!(eval("x1^-1", &x), 0.5);
    assert_eq!(eval("x2^(1/2)", &x), 3f64.sqrt());
    assert_eq!(eval("sqrt(x1 * 8)", &x), 4.0);
    assert_eq!(eval("--x1 + +x2", &x), 5.0);
    assert_eq!(eval("2*pi - e", &x), 2.0 * std::f64::consts::PI - std::f64::consts::E);
    assert_eq!(eval("1.5e2 + .5 + 2E-1", &x), 150.7);
    assert_eq!(eval("t - (x^2 - y^2)/4", &[1.0, 1.0, 0.0]), 0.0);
}

#[test]
fn coordinate_names() {
    assert_eq!(parse("x5", 5).unwrap(), Expr::Var(4));
    assert_eq!(parse("t", 3).unwrap(), Expr::Var(2));
    assert!(parse("t", 5).is_err());
    assert!(parse("x0", 3).is_err());
    assert!(parse("x6", 5).is_err());
}

#[test]
fn errors_report_positions() {
    for (src, pos) in [
        ("1 +", 3),
        ("(x1 + 2", 7),
        ("x1 $ 2", 3),
        ("foo(x1)", 0),
        ("x1 ^ x2", 5),
        ("sqrt x1", 5),
        ("1 2", 2),
        ("1..2", 0),
    ] {
        let err = parse(src, 3).unwrap_err();
        assert_eq!(err.pos, pos, "{:?}: {}", src, err);
    }
    assert_eq!(parse("1 +", 3).unwrap_err().to_string(), "unexpected end of input at position 3");
}

#[test]
fn parsed_fields_have_exact_jets() {
    let f = parse_field("t - (x^2 - y^2)/4", 3).unwrap();
    let j = f.jet(&[1.0, 2.0, 3.0], 3).unwrap();
    assert_eq!(j.value(), 3.0 - (1.0 - 4.0) / 4.0);
    assert_eq!(j.grad(0).unwrap(), -0.5);
    assert_eq!(j.grad(1).unwrap(), 1.0);
    assert_eq!(j.hess(0, 0).unwrap(), -0.5);
    assert_eq!(j.third(0, 0, 0).unwrap(), 0.0);

    // the paraboloid again, now as an expression: B_TS(1, 1) = −1/2
    let g = CarnotGroup::heisenberg(1);
    let geo = LocalGeometry::new(&g, &f, &[1.0, 1.0, 0.0], 3).unwrap();
    assert!((geo.stability_density().unwrap().b_ts + 0.5).abs() < 1e-12);
}
