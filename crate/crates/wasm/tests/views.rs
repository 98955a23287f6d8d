use obstacle_wasm::{density_view, paths_view, solve_view};

const PUT: &str = "\
name = put
horizon = 1.0
[coefficients]
family = constant
a = 0.09
[driver]
family = linear
rate = 0.05
[obstacle]
family = american-put
strike = 1.0
[truncation]
lo = -3
hi = 3
";

#[test]
fn put_is_exercised_deep_in_the_money() {
    let v = solve_view(PUT, 60, 40).unwrap();
    assert_eq!(v.x().len(), 62);
    assert_eq!(v.t().len(), 41);
    assert!(v.u0().iter().zip(v.h0()).all(|(u, h)| *u >= h - 1e-12));
    let n = v.x().len();
    let row = |k: usize| v.contact()[k * n..(k + 1) * n].to_vec();
    let at = |x: f64| v.x().iter().position(|&y| y >= x).unwrap();
    assert_eq!(v.contact().len(), 41 * n);
    // deep in the money the put is exercised; at the money it is held
    assert_eq!(row(0)[at(-1.0)], 1);
    assert_eq!(row(0)[at(0.0)], 0);
    // the exercise boundary moves towards the strike as expiry approaches
    let edge = |k: usize| (at(-1.0)..at(0.0)).find(|&i| row(k)[i] == 0).unwrap();
    assert!(edge(39) >= edge(0));
}

#[test]
fn density_is_a_probability() {
    let d = density_view(PUT, 120, 80, 0.0).unwrap();
    assert_eq!(d.x().len(), d.p().len());
    assert!((d.mass() - 1.0).abs() < 1e-6);
    assert!(d.p().iter().all(|&p| p >= 0.0));
}

#[test]
fn paths_start_at_the_requested_point() {
    let p = paths_view(PUT, 0.2, 5, 50, 3).unwrap();
    let n = p.t().len();
    assert_eq!(n, 51);
    assert_eq!(p.values().len(), 5 * n);
    assert!(p.values().chunks(n).all(|c| c[0] == 0.2));
    assert_eq!(p, paths_view(PUT, 0.2, 5, 50, 3).unwrap());
}

#[test]
fn bad_scenarios_are_errors() {
    assert!(solve_view("family = ???", 10, 10).is_err());
    assert!(paths_view(PUT, 0.0, 0, 10, 1).is_err());
}
