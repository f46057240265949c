//! Gaussian priors on the absorption field: the bi-Laplacian covariance
//! `(K_p⁻¹ M)²` and a dense Ornstein–Uhlenbeck covariance, with their
//! mass-orthonormal eigenbases.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::fracwave::Field;
use crate::grid_fem::{FemMatrices, Mesh};
use crate::linalg::{dense_cholesky, lincomb, mul_vec, to_dense, BandCholesky};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorKind {
    BiLaplacian { gamma: f64, delta: f64 },
    OrnsteinUhlenbeck { eta: f64, ell: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub mean: Field,
}

impl PriorSpec {
    pub fn new(kind: PriorKind, mean: Field) -> Result<Self> {
        let ok = match kind {
            PriorKind::BiLaplacian { gamma, delta } => gamma > 0.0 && delta > 0.0,
            PriorKind::OrnsteinUhlenbeck { eta, ell } => eta > 0.0 && ell > 0.0,
        };
        if !ok {
            return Err(invalid("prior", format!("hyperparameters must be positive: {kind:?}")));
        }
        Ok(Self { kind, mean })
    }
}

/// M-orthonormal eigenvectors of the prior covariance, largest eigenvalues
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    /// `n × N`, columns `e_1..e_N`.
    pub e: DMatrix<f64>,
    pub lambda: Vec<f64>,
    /// Sum of all `n` eigenvalues.
    pub full_trace: f64,
}

impl ProjectionBasis {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// `full_trace - Σ_{j≤N} λ_j`.
    pub fn tail(&self) -> f64 {
        (self.full_trace - self.lambda.iter().sum::<f64>()).max(0.0)
    }

    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.rank() {
            return Err(invalid("N", format!("rank must lie in 1..={}, got {n}", self.rank())));
        }
        Ok(Self {
            e: self.e.columns(0, n).into_owned(),
            lambda: self.lambda[..n].to_vec(),
            full_trace: self.full_trace,
        })
    }

    pub fn write_eigenvalues_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,lambda")?;
        for (j, l) in self.lambda.iter().enumerate() {
            writeln!(out, "{},{:e}", j + 1, l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Repr {
    BiLaplacian { k_prior: CsrMatrix<f64>, k_chol: BandCholesky },
    OrnsteinUhlenbeck { cov: DMatrix<f64>, cov_chol: Cholesky<f64, Dyn> },
}

/// A prior bound to a mesh: applies `Γ_pr` and `Γ_pr⁻¹` to nodal fields.
/// Both operators are self-adjoint in the mass inner product.
#[derive(Debug, Clone)]
pub struct Prior {
    spec: PriorSpec,
    mass: CsrMatrix<f64>,
    mass_chol: BandCholesky,
    repr: Repr,
}

/// `C_ij = η² exp(-|x_i - x_j| / ℓ)` at the mesh nodes.
pub fn ou_covariance(mesh: &Mesh, eta: f64, ell: f64) -> DMatrix<f64> {
    let n = mesh.n_nodes();
    DMatrix::from_fn(n, n, |i, j| {
        let (p, q) = (mesh.nodes[i], mesh.nodes[j]);
        let r = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        eta * eta * (-r / ell).exp()
    })
}

impl Prior {
    pub fn new(spec: PriorSpec, mesh: &Mesh, fem: &FemMatrices) -> Result<Self> {
        let n = mesh.n_nodes();
        if spec.mean.len() != n {
            return Err(Error::DimensionMismatch { context: "prior mean", expected: n, got: spec.mean.len() });
        }
        let mass_chol = BandCholesky::factor(&fem.mass, "mass")?;
        let repr = match spec.kind {
            PriorKind::BiLaplacian { gamma, delta } => {
                let k_prior = lincomb(delta, &fem.stiffness, gamma, &fem.mass);
                let k_chol = BandCholesky::factor(&k_prior, "prior stiffness")?;
                Repr::BiLaplacian { k_prior, k_chol }
            }
            PriorKind::OrnsteinUhlenbeck { eta, ell } => {
                let cov = ou_covariance(mesh, eta, ell);
                let cov_chol = dense_cholesky(cov.clone(), "OU covariance")?;
                Repr::OrnsteinUhlenbeck { cov, cov_chol }
            }
        };
        Ok(Self { spec, mass: fem.mass.clone(), mass_chol, repr })
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    pub fn mean(&self) -> &Field {
        &self.spec.mean
    }

    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    fn check(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch { context: "prior argument", expected: self.dim(), got: a.len() });
        }
        Ok(())
    }

    /// `Γ_pr⁻¹ a`: `M⁻¹K_p M⁻¹K_p a` or `M⁻¹C⁻¹ a`.
    pub fn apply_inv(&self, a: &Field) -> Result<Field> {
        self.check(&a.0)?;
        let out = match &self.repr {
            Repr::BiLaplacian { k_prior, .. } => {
                let t = self.mass_chol.solve(&mul_vec(k_prior, &a.0));
                self.mass_chol.solve(&mul_vec(k_prior, &t))
            }
            Repr::OrnsteinUhlenbeck { cov_chol, .. } => self.mass_chol.solve(&cov_chol.solve(&a.0)),
        };
        Ok(Field(out))
    }

    /// `Γ_pr a`: `K_p⁻¹M K_p⁻¹M a` or `C M a`.
    pub fn apply(&self, a: &Field) -> Result<Field> {
        self.check(&a.0)?;
        let out = match &self.repr {
            Repr::BiLaplacian { k_chol, .. } => {
                let t = k_chol.solve(&mul_vec(&self.mass, &a.0));
                k_chol.solve(&mul_vec(&self.mass, &t))
            }
            Repr::OrnsteinUhlenbeck { cov, .. } => cov * mul_vec(&self.mass, &a.0),
        };
        Ok(Field(out))
    }

    /// Dense OU covariance matrix, if this is an OU prior.
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        match &self.repr {
            Repr::OrnsteinUhlenbeck { cov, .. } => Some(cov),
            Repr::BiLaplacian { .. } => None,
        }
    }

    /// Sum of the diagonal of the OU covariance matrix (`n η²`).
    pub fn covariance_diag_sum(&self) -> Option<f64> {
        self.covariance().map(|c| c.diagonal().sum())
    }

    /// Leading `n_modes` eigenpairs of `Γ_pr` from a dense symmetric
    /// reduction `L⁻¹(·)L⁻ᵀ` with `M = LLᵀ`; the full spectrum also yields
    /// the trace.
    pub fn eigenbasis(&self, n_modes: usize) -> Result<ProjectionBasis> {
        let n = self.dim();
        if n_modes == 0 || n_modes > n {
            return Err(invalid("N", format!("rank must lie in 1..={n}, got {n_modes}")));
        }
        let m = dense_cholesky(to_dense(&self.mass), "mass")?;
        let l = m.l();
        let lt = l.transpose();
        let (a, inverse) = match &self.repr {
            Repr::BiLaplacian { k_prior, .. } => {
                // L⁻¹ K L⁻ᵀ, eigenvalues μ with λ = μ⁻²
                let k = to_dense(k_prior);
                let x = l.solve_lower_triangular(&k).ok_or_else(|| Error::Eigen("singular mass factor".into()))?;
                let y = l
                    .solve_lower_triangular(&x.transpose())
                    .ok_or_else(|| Error::Eigen("singular mass factor".into()))?;
                (y, true)
            }
            Repr::OrnsteinUhlenbeck { cov, .. } => (&lt * cov * &l, false),
        };
        let a = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(a, 1e-15, 10_000)
            .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
        let lambda_all: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&mu| if inverse { mu.powi(-2) } else { mu })
            .collect();
        if let Some(bad) = lambda_all.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Eigen(format!("non-positive covariance eigenvalue at index {bad}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lambda_all[j].total_cmp(&lambda_all[i]).then(i.cmp(&j)));
        let full_trace = {
            let mut sorted: Vec<f64> = order.iter().map(|&i| lambda_all[i]).collect();
            sorted.reverse();
            sorted.iter().sum()
        };
        let mut e = DMatrix::zeros(n, n_modes);
        let mut lambda = Vec::with_capacity(n_modes);
        for (c, &i) in order.iter().take(n_modes).enumerate() {
            let mut x = lt
                .solve_upper_triangular(&eig.eigenvectors.column(i).into_owned())
                .ok_or_else(|| Error::Eigen("singular mass factor".into()))?;
            let norm = crate::linalg::m_inner(&self.mass, &x, &x).sqrt();
            x /= norm;
            let imax = x.iamax();
            if x[imax] < 0.0 {
                x.neg_mut();
            }
            e.set_column(c, &x);
            lambda.push(lambda_all[i]);
        }
        Ok(ProjectionBasis { e, lambda, full_trace })
    }
}

/// `a₀ + Σ_j sqrt(λ_j) ξ_j e_j` with i.i.d. standard normal `ξ`.
pub fn sample_prior(mean: &Field, basis: &ProjectionBasis, seed: u64) -> Result<Field> {
    if basis.rank() == 0 {
        return Err(invalid("N", "sampling needs at least one eigenpair"));
    }
    if basis.e.nrows() != mean.len() {
        return Err(Error::DimensionMismatch { context: "prior sample", expected: mean.len(), got: basis.e.nrows() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = mean.0.clone();
    for (j, l) in basis.lambda.iter().enumerate() {
        let xi: f64 = StandardNormal.sample(&mut rng);
        a.axpy(l.sqrt() * xi, &basis.e.column(j), 1.0);
    }
    Ok(Field(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_fem::{assemble, build_mesh};

    fn setup(kind: PriorKind) -> (Mesh, Prior) {
        let mesh = build_mesh(10).unwrap();
        let fem = assemble(&mesh, 1.0, 8.0, 2, 1.0).unwrap();
        let spec = PriorSpec::new(kind, Field::zeros(mesh.n_nodes())).unwrap();
        let prior = Prior::new(spec, &mesh, &fem).unwrap();
        (mesh, prior)
    }

    const BILAP: PriorKind = PriorKind::BiLaplacian { gamma: 1.0, delta: 8.0 };
    const OU: PriorKind = PriorKind::OrnsteinUhlenbeck { eta: 0.1, ell: 0.1 };

    #[test]
    fn rejects_nonpositive_hyperparameters() {
        let m = Field::zeros(4);
        assert!(PriorSpec::new(PriorKind::BiLaplacian { gamma: 0.0, delta: 1.0 }, m.clone()).is_err());
        assert!(PriorSpec::new(PriorKind::OrnsteinUhlenbeck { eta: 0.1, ell: -1.0 }, m).is_err());
    }

    #[test]
    fn bilaplacian_inverse_of_constant() {
        let (mesh, p) = setup(BILAP);
        let one = Field(DVector::from_element(mesh.n_nodes(), 1.0));
        let r = p.apply_inv(&one).unwrap();
        let err = r.0.add_scalar(-1.0).amax();
        // cancellation in (M⁻¹K_p)² with norm ~1e7 at h = 0.2
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn ou_diagonal_and_decay() {
        let (mesh, p) = setup(OU);
        let c = p.covariance().unwrap();
        assert!(c.diagonal().iter().all(|&x| (x - 0.01).abs() < 1e-15));
        assert!((p.covariance_diag_sum().unwrap() - 0.01 * mesh.n_nodes() as f64).abs() < 1e-12);
        // along a grid row, entries decrease away from the diagonal node
        let i = mesh.node_index(3, 5);
        for k in 4..10 {
            let (a, b) = (mesh.node_index(k, 5), mesh.node_index(k + 1, 5));
            assert!(c[(i, b)] < c[(i, a)] && c[(i, b)] > 0.0);
        }
    }

    #[test]
    fn eigenvalues_sorted_and_trace_complete() {
        for kind in [BILAP, OU] {
            let (mesh, p) = setup(kind);
            let n = mesh.n_nodes();
            let b = p.eigenbasis(n).unwrap();
            assert!(b.lambda.windows(2).all(|w| w[1] <= w[0]));
            let s: f64 = b.lambda.iter().sum();
            assert!((s - b.full_trace).abs() <= 1e-10 * s);
            let g = b.e.transpose() * to_dense(p.mass()) * &b.e;
            assert!((g - DMatrix::identity(n, n)).amax() < 1e-10);
        }
    }

    #[test]
    fn bilaplacian_leading_mode_is_constant() {
        let (_, p) = setup(BILAP);
        let b = p.eigenbasis(3).unwrap();
        assert!((b.lambda[0] - 1.0).abs() < 1e-10);
        let e0 = b.e.column(0);
        assert!(e0.iter().all(|&x| (x - e0[0]).abs() < 1e-8));
        // constant with unit M-norm on an area-4 domain
        assert!((e0[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn ou_trace_is_trace_of_cm() {
        let (_, p) = setup(OU);
        let b = p.eigenbasis(5).unwrap();
        let cm = p.covariance().unwrap() * to_dense(p.mass());
        assert!((cm.trace() - b.full_trace).abs() < 1e-10 * b.full_trace);
        assert!((b.tail() - (b.full_trace - b.lambda.iter().sum::<f64>())).abs() < 1e-15);
    }

    #[test]
    fn eigenpairs_satisfy_operator_equation() {
        for kind in [BILAP, OU] {
            let (_, p) = setup(kind);
            let b = p.eigenbasis(8).unwrap();
            for j in 0..8 {
                let e = Field(b.e.column(j).into_owned());
                let ge = p.apply(&e).unwrap();
                assert!((ge.0 - &e.0 * b.lambda[j]).amax() < 1e-9 * b.lambda[0]);
            }
        }
    }

    #[test]
    fn rank_bounds_enforced() {
        let (mesh, p) = setup(BILAP);
        assert!(p.eigenbasis(0).is_err());
        assert!(p.eigenbasis(mesh.n_nodes() + 1).is_err());
        let b = p.eigenbasis(4).unwrap();
        assert!(b.truncate(5).is_err());
        assert_eq!(b.truncate(2).unwrap().rank(), 2);
    }

    #[test]
    fn sampling_is_reproducible() {
        let (mesh, p) = setup(BILAP);
        let b = p.eigenbasis(10).unwrap();
        let mean = Field::zeros(mesh.n_nodes());
        assert_eq!(sample_prior(&mean, &b, 7).unwrap(), sample_prior(&mean, &b, 7).unwrap());
        assert_ne!(sample_prior(&mean, &b, 7).unwrap(), sample_prior(&mean, &b, 8).unwrap());
        let empty = ProjectionBasis { e: DMatrix::zeros(mesh.n_nodes(), 0), lambda: vec![], full_trace: 1.0 };
        assert!(sample_prior(&mean, &empty, 1).is_err());
    }

    #[test]
    fn sample_coefficient_variance_matches_eigenvalue() {
        let (mesh, p) = setup(BILAP);
        let b = p.eigenbasis(6).unwrap();
        let mean = Field::zeros(mesh.n_nodes());
        let e1 = Field(b.e.column(0).into_owned());
        let draws = 1000;
        let var = (0..draws)
            .map(|s| sample_prior(&mean, &b, s).unwrap().m_inner(&e1, p.mass()).powi(2))
            .sum::<f64>()
            / draws as f64;
        assert!((var / b.lambda[0] - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn bilaplacian_spectrum_decays() {
        let mesh = build_mesh(20).unwrap();
        let fem = assemble(&mesh, 1.0, 8.0, 2, 1.0).unwrap();
        let spec = PriorSpec::new(BILAP, Field::zeros(mesh.n_nodes())).unwrap();
        let p = Prior::new(spec, &mesh, &fem).unwrap();
        let b = p.eigenbasis(110).unwrap();
        let (j0, j1) = (10usize, 109usize);
        let slope = (b.lambda[j1].ln() - b.lambda[j0].ln()) / ((j1 + 1) as f64 / (j0 + 1) as f64).ln();
        assert!(slope <= -1.5, "{slope}");
    }
}
