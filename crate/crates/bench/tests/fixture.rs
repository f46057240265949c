use fracpat_bench::{fixture, gram};
use fracpat_core::oed::phi_n;

#[test]
fn fixture_produces_signal() {
    let f = fixture(10, 60).unwrap();
    let obs = f.solver.apply_w(&f.phantom, &f.design).unwrap();
    assert!(obs.max_abs() > 0.0);
}

#[test]
fn gram_fixture_has_requested_shape() {
    let f = fixture(10, 60).unwrap();
    let (basis, g) = gram(&f, 10, 3, 12).unwrap();
    assert_eq!(basis.rank(), 12);
    assert_eq!((g.n_modes, g.rank), (3, 12));
    assert!(phi_n(&[0.5, 0.2, 0.1], 100.0, &g, 1e-2).unwrap() < g.full_trace);
}
