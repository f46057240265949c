//! Dense reference computations for small meshes. Everything here is built
//! from explicit matrices (one forward solve per parameter node) and LU
//! solves, sharing nothing with the matrix-free code paths beyond the
//! forward map itself.
#![allow(dead_code)]

use fracpat_core::grid_fem::{assemble, build_mesh, FemMatrices, Mesh};
use fracpat_core::linalg::to_dense;
use fracpat_core::priors::{Prior, PriorKind, PriorSpec};
use fracpat_core::{Field, FracParams, IntensityDesign, TimeGrid, WaveSolver};
use nalgebra::{DMatrix, DVector};

pub const OMEGA: f64 = 100.0 * std::f64::consts::PI;
pub const T_FINAL: f64 = 0.2;
pub const SIGMA2: f64 = 1e-2;
pub const BILAP: PriorKind = PriorKind::BiLaplacian { gamma: 1.0, delta: 8.0 };
pub const OU: PriorKind = PriorKind::OrnsteinUhlenbeck { eta: 0.1, ell: 0.1 };

pub struct Problem {
    pub mesh: Mesh,
    pub fem: FemMatrices,
    pub solver: WaveSolver,
    pub prior: Prior,
}

pub fn problem(nx: usize, nt: usize, alpha: f64, kind: PriorKind) -> Problem {
    let mesh = build_mesh(nx).unwrap();
    let fem = assemble(&mesh, 1.0, 8.0, nt, T_FINAL).unwrap();
    let params = FracParams::from_attenuation(alpha, 300.0, 1e-4).unwrap();
    let grid = TimeGrid::new(T_FINAL, nt, alpha).unwrap();
    let solver = WaveSolver::new(&mesh, &fem, params, grid).unwrap();
    let spec = PriorSpec::new(kind, Field::zeros(mesh.n_nodes())).unwrap();
    let prior = Prior::new(spec, &mesh, &fem).unwrap();
    Problem { mesh, fem, solver, prior }
}

pub fn design(amplitude: f64, d: &[f64]) -> IntensityDesign {
    IntensityDesign::new(amplitude, d.to_vec(), OMEGA, T_FINAL).unwrap()
}

/// Forward map as a dense matrix: column `i` is `W e_i` flattened
/// time-major (`t * n_obs + o`).
pub fn dense_w(solver: &WaveSolver, design: &IntensityDesign) -> DMatrix<f64> {
    let n = solver.n_nodes();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let obs = solver.apply_w(&Field(e), design).unwrap();
        cols.push(DVector::from_column_slice(obs.values.as_slice()));
    }
    DMatrix::from_columns(&cols)
}

/// `B̂ x` for a flattened series, `B̂ = blockdiag(w_t B)`.
pub fn weight_rows(solver: &WaveSolver, x: &DMatrix<f64>) -> DMatrix<f64> {
    let b = to_dense(solver.boundary());
    let n_obs = b.nrows();
    let w = solver.time_weights();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (t, wt) in w.iter().enumerate() {
        let blk = &b * x.rows(t * n_obs, n_obs) * *wt;
        out.rows_mut(t * n_obs, n_obs).copy_from(&blk);
    }
    out
}

/// `WᵀB̂W`.
pub fn misfit_gram_dense(solver: &WaveSolver, w: &DMatrix<f64>) -> DMatrix<f64> {
    let g = w.transpose() * weight_rows(solver, w);
    (&g + g.transpose()) * 0.5
}

fn inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("singular oracle matrix")
}

/// `M Γ_pr⁻¹` as an explicit symmetric matrix.
pub fn prior_precision_dense(mesh: &Mesh, fem: &FemMatrices, kind: PriorKind) -> DMatrix<f64> {
    let m = to_dense(&fem.mass);
    match kind {
        PriorKind::BiLaplacian { gamma, delta } => {
            let k = to_dense(&fem.stiffness) * delta + &m * gamma;
            &k * inverse(&m) * &k
        }
        PriorKind::OrnsteinUhlenbeck { eta, ell } => {
            let n = mesh.n_nodes();
            let mut c = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let (p, q) = (mesh.nodes[i], mesh.nodes[j]);
                    let r = (p[0] - q[0]).hypot(p[1] - q[1]);
                    c[(i, j)] = eta * eta * (-r / ell).exp();
                }
            }
            inverse(&c)
        }
    }
}

/// MAP point from the explicit normal equations
/// `(σ⁻² WᵀB̂W + MΓ⁻¹) a = σ⁻² WᵀB̂ p + MΓ⁻¹ a₀`.
pub fn dense_map(
    solver: &WaveSolver,
    w: &DMatrix<f64>,
    precision: &DMatrix<f64>,
    p_obs: &DVector<f64>,
    a0: &DVector<f64>,
    sigma2: f64,
) -> DVector<f64> {
    let lhs = misfit_gram_dense(solver, w) / sigma2 + precision;
    let bp = weight_rows(solver, &DMatrix::from_column_slice(p_obs.len(), 1, p_obs.as_slice()));
    let rhs = (w.transpose() * bp).column(0) / sigma2 + precision * a0;
    lhs.lu().solve(&rhs).expect("singular normal matrix")
}

/// `tr[(σ⁻² P W*W P + Γ⁻¹)⁻¹]` with `W* = M⁻¹WᵀB̂` and the M-orthogonal
/// projector `P = E Eᵀ M` (no projection when `e` is `None`).
pub fn dense_posterior_trace(
    solver: &WaveSolver,
    fem: &FemMatrices,
    w: &DMatrix<f64>,
    precision: &DMatrix<f64>,
    e: Option<&DMatrix<f64>>,
    sigma2: f64,
) -> f64 {
    let m = to_dense(&fem.mass);
    let m_inv = inverse(&m);
    let wtbw = misfit_gram_dense(solver, w);
    let misfit = match e {
        Some(e) => {
            let p = e * e.transpose() * &m;
            // P M⁻¹ WᵀB̂W P
            &p * &m_inv * &wtbw * &p
        }
        None => &m_inv * &wtbw,
    };
    let op = misfit / sigma2 + &m_inv * precision;
    inverse(&op).trace()
}

/// Random M-orthonormal basis by Gram–Schmidt in the mass inner product.
pub fn random_m_orthonormal(mass: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i).into_owned();
                let c = qi.dot(&(mass * &v));
                v -= qi * c;
            }
        }
        let nrm = v.dot(&(mass * &v)).sqrt();
        q.set_column(j, &(v / nrm));
    }
    q
}
