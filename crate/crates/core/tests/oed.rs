#[path = "support/oracle.rs"]
mod oracle;

use std::sync::OnceLock;

use fracpat_core::linalg::to_dense;
use fracpat_core::oed::{
    grad_phi_n, load_gram, misfit_hessian, optimize_design, phi_n, precompute_gram,
    prior_representation, save_gram, trace_general_projection, DesignConstraints, MisfitGram,
    OptimizeOptions,
};
use fracpat_core::priors::ProjectionBasis;
use nalgebra::DMatrix;
use oracle::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 5;
const NX: usize = 10;
const NT: usize = 100;

struct Fixture {
    p: Problem,
    basis: ProjectionBasis,
    gram: MisfitGram,
    /// Dense forward maps of the unit modes ψ_k.
    w_modes: Vec<DMatrix<f64>>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let p = problem(NX, NT, 0.3, BILAP);
        let n = p.mesh.n_nodes();
        let basis = p.prior.eigenbasis(n).unwrap();
        let gram = precompute_gram(&p.solver, &basis, K, OMEGA, NX).unwrap();
        let w_modes = (1..=K)
            .map(|k| {
                let mut d = vec![0.0; K];
                d[k - 1] = 1.0;
                dense_w(&p.solver, &design(1.0, &d))
            })
            .collect();
        Fixture { p, basis, gram, w_modes }
    })
}

/// Gram restricted to the leading `n` basis vectors.
fn truncated(g: &MisfitGram, n: usize) -> MisfitGram {
    let blocks = (0..K * K)
        .map(|i| g.block(i / K, i % K).view((0, 0), (n, n)).into_owned())
        .collect();
    MisfitGram::from_blocks(blocks, K, g.lambda[..n].to_vec(), g.full_trace, g.meta.clone()).unwrap()
}

fn dense_design_w(f: &Fixture, amp: f64, d: &[f64]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(f.w_modes[0].nrows(), f.w_modes[0].ncols());
    for (k, dk) in d.iter().enumerate() {
        w += &f.w_modes[k] * (amp * dk);
    }
    w
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn gram_matches_dense_operator() {
    let f = fixture();
    let e = &f.basis.e;
    for k in 0..K {
        for l in 0..K {
            let wk = &f.w_modes[k] * e;
            let wl = &f.w_modes[l] * e;
            let dense = wk.transpose() * weight_rows(&f.p.solver, &wl);
            let err = (f.gram.block(k, l) - &dense).amax();
            assert!(err <= 1e-9 * dense.amax(), "block ({k},{l}): {err}");
        }
    }
}

#[test]
fn gram_blocks_are_symmetric() {
    let g = &fixture().gram;
    for k in 0..K {
        assert!(g.block(k, k).diagonal().iter().all(|&x| x >= 0.0));
        for l in 0..K {
            assert_eq!(g.block(k, l).transpose(), *g.block(l, k));
        }
    }
}

#[test]
fn gram_is_schedule_independent() {
    let f = fixture();
    let basis = f.basis.truncate(12).unwrap();
    let a = precompute_gram(&f.p.solver, &basis, 2, OMEGA, NX).unwrap();
    let b = precompute_gram(&f.p.solver, &basis, 2, OMEGA, NX).unwrap();
    assert_eq!(a, b);
}

#[test]
fn three_way_trace_agreement() {
    let f = fixture();
    let n = f.p.mesh.n_nodes();
    let (amp, d) = (400.0, [0.4, 0.2, 0.15, 0.1, 0.05]);
    let w = dense_design_w(f, amp, &d);
    let precision = prior_precision_dense(&f.p.mesh, &f.p.fem, BILAP);
    let rep = prior_representation(&f.p.prior, &f.basis.e).unwrap();
    for nn in [10, 30, n] {
        let g = truncated(&f.gram, nn);
        let reduced = phi_n(&d, amp, &g, SIGMA2).unwrap();
        let h = misfit_hessian(&d, amp, &g, SIGMA2).unwrap();
        let block = trace_general_projection(&h, &rep).unwrap();
        let e_n = f.basis.e.columns(0, nn).into_owned();
        let dense = dense_posterior_trace(&f.p.solver, &f.p.fem, &w, &precision, Some(&e_n), SIGMA2);
        assert!(rel(reduced, dense) < 1e-8, "N={nn}: reduced {reduced} dense {dense}");
        assert!(rel(block, dense) < 1e-8, "N={nn}: block {block} dense {dense}");
    }
    let full = dense_posterior_trace(&f.p.solver, &f.p.fem, &w, &precision, None, SIGMA2);
    let reduced = phi_n(&d, amp, &f.gram, SIGMA2).unwrap();
    assert!(rel(reduced, full) < 1e-8);
}

#[test]
fn rank_sweep_approaches_full_trace() {
    let f = fixture();
    let n = f.p.mesh.n_nodes();
    let (amp, d) = (400.0, [0.5, 0.0, 0.3, 0.0, 0.1]);
    let w = dense_design_w(f, amp, &d);
    let precision = prior_precision_dense(&f.p.mesh, &f.p.fem, BILAP);
    let full = dense_posterior_trace(&f.p.solver, &f.p.fem, &w, &precision, None, SIGMA2);
    let errs: Vec<f64> = [n / 4, n / 2, n]
        .iter()
        .map(|&nn| (phi_n(&d, amp, &truncated(&f.gram, nn), SIGMA2).unwrap() - full).abs())
        .collect();
    assert!(errs[1] <= errs[0] && errs[2] <= errs[1], "{errs:?}");
    assert!(errs[2] < 1e-8 * full);
}

#[test]
fn block_formula_with_non_eigen_basis() {
    let f = fixture();
    let n = f.p.mesh.n_nodes();
    let m = to_dense(&f.p.fem.mass);
    let q = random_m_orthonormal(&m, n, 17);
    let (amp, d) = (400.0, [0.3, -0.2, 0.1, 0.1, 0.05]);
    let w = dense_design_w(f, amp, &d);
    let precision = prior_precision_dense(&f.p.mesh, &f.p.fem, BILAP);
    let rep = prior_representation(&f.p.prior, &q).unwrap();
    for nn in [15, 60] {
        let qn = q.columns(0, nn).into_owned();
        let wq = &w * &qn;
        let h = wq.transpose() * weight_rows(&f.p.solver, &wq) / SIGMA2;
        let block = trace_general_projection(&h, &rep).unwrap();
        let dense = dense_posterior_trace(&f.p.solver, &f.p.fem, &w, &precision, Some(&qn), SIGMA2);
        assert!(rel(block, dense) < 1e-8, "N={nn}: {block} vs {dense}");
    }
}

#[test]
fn block_formula_collapses_in_eigenbasis() {
    let f = fixture();
    let rep = prior_representation(&f.p.prior, &f.basis.e).unwrap();
    let g = truncated(&f.gram, 20);
    let d = [0.2, 0.3, 0.0, 0.1, 0.2];
    let h = misfit_hessian(&d, 400.0, &g, SIGMA2).unwrap();
    let block = trace_general_projection(&h, &rep).unwrap();
    assert!(rel(block, phi_n(&d, 400.0, &g, SIGMA2).unwrap()) < 1e-10);
    let zero = trace_general_projection(&DMatrix::zeros(20, 20), &rep).unwrap();
    assert!(rel(zero, f.basis.full_trace) < 1e-8);
}

#[test]
fn zero_design_gives_prior_trace() {
    let f = fixture();
    let g = truncated(&f.gram, 20);
    let phi = phi_n(&[0.0; K], 400.0, &g, SIGMA2).unwrap();
    assert!(rel(phi, f.basis.full_trace) < 1e-12);
    assert!(grad_phi_n(&[0.0; K], 400.0, &g, SIGMA2).unwrap().iter().all(|&x| x == 0.0));
}

fn random_feasible(c: &DesignConstraints, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..K).map(|_| rng.gen_range(-0.6..0.6)).collect();
    c.project(&z)
}

fn constraints() -> DesignConstraints {
    let mut d_ref = vec![0.0; K];
    d_ref[0] = 1.0;
    DesignConstraints::new(K, OMEGA, T_FINAL, 100.0, &d_ref, 4.0).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let f = fixture();
    let g = truncated(&f.gram, 20);
    let c = constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let d = random_feasible(&c, &mut rng);
        let grad = grad_phi_n(&d, c.i_max, &g, SIGMA2).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..K)
            .map(|k| {
                let (mut dp, mut dm) = (d.clone(), d.clone());
                dp[k] += h;
                dm[k] -= h;
                (phi_n(&dp, c.i_max, &g, SIGMA2).unwrap() - phi_n(&dm, c.i_max, &g, SIGMA2).unwrap()) / (2.0 * h)
            })
            .collect();
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 1e-5 * den, "{grad:?} vs {fd:?}");
        // small step along -g decreases φ
        let eps = 1e-4 / den.max(1e-12);
        let dn: Vec<f64> = d.iter().zip(&grad).map(|(x, gx)| x - eps * gx).collect();
        assert!(phi_n(&dn, c.i_max, &g, SIGMA2).unwrap() < phi_n(&d, c.i_max, &g, SIGMA2).unwrap());
    }
}

#[test]
fn amplitude_monotonicity_and_prior_ceiling() {
    let f = fixture();
    let g = truncated(&f.gram, 30);
    let c = constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let d = random_feasible(&c, &mut rng);
        let mut prev = f64::INFINITY;
        for amp in [10.0, 50.0, 100.0, 200.0, 400.0] {
            let phi = phi_n(&d, amp, &g, SIGMA2).unwrap();
            assert!(phi <= prev + 1e-12);
            assert!(phi <= g.full_trace + 1e-12);
            prev = phi;
        }
    }
}

#[test]
fn optimizer_makes_monotone_progress() {
    let f = fixture();
    let g = truncated(&f.gram, 30);
    let c = constraints();
    let mut d0 = vec![0.0; K];
    d0[0] = 1.0;
    let opts = OptimizeOptions { maxit: 60, ..Default::default() };
    let r = optimize_design(&g, &c, &d0, SIGMA2, &opts).unwrap();
    assert!(r.history.windows(2).all(|w| w[1].phi <= w[0].phi + 1e-12));
    assert!(r.phi < r.history[0].phi);
    assert!(c.is_feasible(&r.d_opt, 1e-9));
    assert_eq!(r.i_opt, c.i_max);
    assert!(optimize_design(&g, &c, &[2.0, 0.0, 0.0, 0.0, 0.0], SIGMA2, &opts).is_err());
}

#[test]
fn gram_round_trips_through_files() {
    let f = fixture();
    let g = truncated(&f.gram, 8);
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_gram(dir.path(), &g).unwrap();
    let back = load_gram(&manifest).unwrap();
    assert_eq!(back, g);
    let first = dir.path().join("gram_1_1.csv");
    let mut body = std::fs::read_to_string(&first).unwrap();
    body.push('\n');
    std::fs::write(&first, body).unwrap();
    assert!(load_gram(&manifest).is_err());
}
