use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use super::{FracParams, Field, IntensityDesign, ObservationSeries, TimeGrid};
use crate::error::{Error, Result};
use crate::grid_fem::{FemMatrices, Mesh};
use crate::linalg::{lincomb, restrict, spmv, spmv_add, BandCholesky};

/// Time-quadrature used to assemble `W_i^* g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointQuadrature {
    /// Transpose of the discrete forward map: `⟨W a, g⟩ = ⟨a, W* g⟩_M` to
    /// roundoff. Required by CG and by the Gram/trace identities.
    #[default]
    Consistent,
    /// Discretize the continuous adjoint problem and integrate `∫ q i' dt`
    /// with Simpson's rule; adjoint only up to discretization error.
    Continuous,
}

/// Space-time source for [`WaveSolver::solve_with_load`].
#[derive(Debug, Clone, Copy)]
pub enum Load<'a> {
    /// `f(x,t) = a(x) s(t)`; `profile` holds `s(t_j)`, `j = 0..=nt`.
    Separable { coeffs: &'a DVector<f64>, profile: &'a [f64] },
    /// Nodal values of `f(·, t_j)` in column `j`.
    Nodal(&'a DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Nodal pressure, one column per time level.
    pub trajectory: DMatrix<f64>,
    pub obs: ObservationSeries,
}

/// Fixed-step solver for the damped wave equation on a given mesh. The
/// Newmark (β = 1/4, γ = 1/2) scheme with L1 memory is run in its equivalent
/// two-step displacement form, so the whole space-time system is block lower
/// triangular Toeplitz with one factorized diagonal block.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    params: FracParams,
    grid: TimeGrid,
    n_nodes: usize,
    interior: Vec<usize>,
    obs_nodes: Vec<usize>,
    obs_interior: Vec<usize>,
    mass: CsrMatrix<f64>,
    mass_ii: CsrMatrix<f64>,
    stiff_ii: CsrMatrix<f64>,
    boundary: CsrMatrix<f64>,
    weights: Vec<f64>,
    system: BandCholesky,
    kappa: Vec<f64>,
    quadrature: AdjointQuadrature,
    smoothing: Option<usize>,
}

impl WaveSolver {
    pub fn new(mesh: &Mesh, fem: &FemMatrices, params: FracParams, grid: TimeGrid) -> Result<Self> {
        if fem.mass.nrows() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                context: "mass matrix",
                expected: mesh.n_nodes(),
                got: fem.mass.nrows(),
            });
        }
        if fem.simpson_w.len() != grid.nt + 1 {
            return Err(Error::DimensionMismatch {
                context: "time quadrature weights",
                expected: grid.nt + 1,
                got: fem.simpson_w.len(),
            });
        }
        let pos = mesh.interior_positions();
        let obs_interior = mesh
            .obs_nodes
            .iter()
            .map(|&i| pos[i].expect("observation surface lies inside the domain"))
            .collect();
        let mass_ii = restrict(&fem.mass, &mesh.interior_nodes);
        let stiff_ii = restrict(&fem.stiffness, &mesh.interior_nodes);

        let nt = grid.nt;
        let w = &grid.caputo_w;
        let gam = |d: isize| -> f64 {
            if d < 0 {
                0.0
            } else if d == 0 {
                w[0]
            } else {
                let d = d as usize;
                w.get(d).copied().unwrap_or(0.0) - w[d - 1]
            }
        };
        let kappa: Vec<f64> = (0..=nt as isize)
            .map(|d| gam(d) + 2.0 * gam(d - 1) + gam(d - 2))
            .collect();

        let cm = params.c.powi(-2);
        let ck = grid.dt * grid.dt / 4.0;
        let s = lincomb(cm, &mass_ii, ck * (1.0 + params.b * kappa[0]), &stiff_ii);
        let system = BandCholesky::factor(&s, "time-step system")?;

        Ok(Self {
            params,
            n_nodes: mesh.n_nodes(),
            interior: mesh.interior_nodes.clone(),
            obs_nodes: mesh.obs_nodes.clone(),
            obs_interior,
            mass: fem.mass.clone(),
            mass_ii,
            stiff_ii,
            boundary: fem.boundary.clone(),
            weights: fem.simpson_w.clone(),
            system,
            kappa,
            grid,
            quadrature: AdjointQuadrature::Consistent,
            smoothing: None,
        })
    }

    pub fn with_quadrature(mut self, q: AdjointQuadrature) -> Self {
        self.quadrature = q;
        self
    }

    /// Moving-average smoothing (odd window, in time steps) applied to data
    /// before the adjoint is formed.
    pub fn with_smoothing(mut self, window: Option<usize>) -> Self {
        self.smoothing = window.filter(|&w| w > 1);
        self
    }

    pub fn params(&self) -> &FracParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_obs(&self) -> usize {
        self.obs_nodes.len()
    }

    pub fn quadrature(&self) -> AdjointQuadrature {
        self.quadrature
    }

    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    pub fn boundary(&self) -> &CsrMatrix<f64> {
        &self.boundary
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn obs_inner(&self, g: &ObservationSeries, h: &ObservationSeries) -> f64 {
        g.inner(h, &self.boundary, &self.weights)
    }

    fn check_field(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.n_nodes {
            return Err(Error::DimensionMismatch {
                context: "parameter field",
                expected: self.n_nodes,
                got: a.len(),
            });
        }
        Ok(())
    }

    fn check_obs(&self, g: &ObservationSeries) -> Result<()> {
        if g.n_obs() != self.n_obs() || g.n_times() != self.grid.nt + 1 {
            return Err(Error::DimensionMismatch {
                context: "observation series",
                expected: self.n_obs() * (self.grid.nt + 1),
                got: g.n_obs() * g.n_times(),
            });
        }
        Ok(())
    }

    /// `(M a)` restricted to interior rows.
    fn interior_load(&self, a: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes];
        spmv(&self.mass, a, &mut full);
        self.interior.iter().map(|&i| full[i]).collect()
    }

    /// `dt²/4 (s_{m-1} + 2 s_m + s_{m+1})`, with `s_{-1}` dropped and the
    /// first entry halved accordingly.
    fn stencil(&self, s: &[f64]) -> Vec<f64> {
        let c = self.grid.dt * self.grid.dt / 4.0;
        (0..self.grid.nt)
            .map(|m| {
                if m == 0 {
                    c * (s[0] + s[1])
                } else {
                    c * (s[m - 1] + 2.0 * s[m] + s[m + 1])
                }
            })
            .collect()
    }

    /// Solves the space-time system with right-hand side `rho(m, ·)` for
    /// steps `m = 0..nt`. Returns interior displacements, column `j` at `t_j`.
    fn march(&self, mut rho: impl FnMut(usize, &mut [f64])) -> Result<DMatrix<f64>> {
        let ni = self.interior.len();
        let nt = self.grid.nt;
        let cm = self.params.c.powi(-2);
        let ck = self.grid.dt * self.grid.dt / 4.0;
        let b = self.params.b;
        let mut u = vec![0.0; ni * (nt + 1)];
        let mut rhs = vec![0.0; ni];
        let mut vm = vec![0.0; ni];
        let mut vk = vec![0.0; ni];
        for m in 0..nt {
            rhs.iter_mut().for_each(|x| *x = 0.0);
            rho(m, &mut rhs);
            {
                let um = &u[m * ni..(m + 1) * ni];
                if m == 0 {
                    vm.iter_mut().for_each(|x| *x = 0.0);
                    vk.iter_mut().for_each(|x| *x = 0.0);
                } else {
                    let up = &u[(m - 1) * ni..m * ni];
                    for i in 0..ni {
                        vm[i] = -2.0 * um[i] + up[i];
                        vk[i] = 2.0 * um[i] + up[i];
                    }
                }
            }
            if b != 0.0 {
                for d in 1..=m {
                    let k = b * self.kappa[d];
                    let col = &u[(m + 1 - d) * ni..(m + 2 - d) * ni];
                    for (x, y) in vk.iter_mut().zip(col) {
                        *x += k * y;
                    }
                }
            }
            spmv_add(&self.mass_ii, -cm, &vm, &mut rhs);
            spmv_add(&self.stiff_ii, -ck, &vk, &mut rhs);
            self.system.solve_in_place(&mut rhs);
            if !rhs.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { step: m + 1 });
            }
            u[(m + 1) * ni..(m + 2) * ni].copy_from_slice(&rhs);
        }
        Ok(DMatrix::from_vec(ni, nt + 1, u))
    }

    fn to_full(&self, interior: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_nodes, interior.ncols());
        for (r, &i) in self.interior.iter().enumerate() {
            out.row_mut(i).copy_from(&interior.row(r));
        }
        out
    }

    fn observe(&self, interior: &DMatrix<f64>) -> ObservationSeries {
        let mut v = DMatrix::zeros(self.n_obs(), interior.ncols());
        for (r, &i) in self.obs_interior.iter().enumerate() {
            v.row_mut(r).copy_from(&interior.row(i));
        }
        ObservationSeries { values: v }
    }

    fn march_separable(&self, coeffs: &DVector<f64>, profile: &[f64]) -> Result<DMatrix<f64>> {
        let x = self.interior_load(coeffs.as_slice());
        let sig = self.stencil(profile);
        self.march(|m, r| {
            for (ri, xi) in r.iter_mut().zip(&x) {
                *ri = sig[m] * xi;
            }
        })
    }

    fn march_sampled(&self, loads: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.grid.dt * self.grid.dt / 4.0;
        self.march(|m, r| {
            let mut acc = |k: usize, f: f64| {
                for (ri, x) in r.iter_mut().zip(loads.column(k).iter()) {
                    *ri += c * f * x;
                }
            };
            if m > 0 {
                acc(m - 1, 1.0);
                acc(m, 2.0);
            } else {
                acc(0, 1.0);
            }
            acc(m + 1, 1.0);
        })
    }

    /// Nodal trajectory for a general source; homogeneous initial data and
    /// Dirichlet boundary.
    pub fn solve_with_load(&self, load: Load<'_>) -> Result<DMatrix<f64>> {
        let nt = self.grid.nt;
        let u = match load {
            Load::Separable { coeffs, profile } => {
                self.check_field(coeffs)?;
                if profile.len() != nt + 1 {
                    return Err(Error::DimensionMismatch {
                        context: "time profile",
                        expected: nt + 1,
                        got: profile.len(),
                    });
                }
                self.march_separable(coeffs, profile)?
            }
            Load::Nodal(f) => {
                if f.nrows() != self.n_nodes || f.ncols() != nt + 1 {
                    return Err(Error::DimensionMismatch {
                        context: "nodal source",
                        expected: self.n_nodes * (nt + 1),
                        got: f.len(),
                    });
                }
                let mut loads = DMatrix::zeros(self.interior.len(), nt + 1);
                for j in 0..=nt {
                    let col = self.interior_load(f.column(j).as_slice());
                    loads.column_mut(j).copy_from_slice(&col);
                }
                self.march_sampled(&loads)?
            }
        };
        Ok(self.to_full(&u))
    }

    pub fn solve_forward(&self, a: &Field, design: &IntensityDesign) -> Result<ForwardSolution> {
        self.check_field(&a.0)?;
        let u = self.march_separable(&a.0, &design.derivative_samples(&self.grid))?;
        Ok(ForwardSolution {
            obs: self.observe(&u),
            trajectory: self.to_full(&u),
        })
    }

    /// `W_i a`: pressure on Σ for the source `a(x) i'(t)`.
    pub fn apply_w(&self, a: &Field, design: &IntensityDesign) -> Result<ObservationSeries> {
        self.check_field(&a.0)?;
        let u = self.march_separable(&a.0, &design.derivative_samples(&self.grid))?;
        Ok(self.observe(&u))
    }

    /// Observations of the response to a unit impulse `ρ_0 = M a`; column
    /// `m` holds the traces at `t_{m+1}`. Any time profile `s` is recovered
    /// by [`Self::convolve_impulse`].
    pub fn impulse_observations(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_field(a)?;
        let x = self.interior_load(a.as_slice());
        let u = self.march(|m, r| {
            if m == 0 {
                r.copy_from_slice(&x);
            }
        })?;
        let obs = self.observe(&u);
        Ok(obs.values.columns(1, self.grid.nt).into_owned())
    }

    /// Lower-triangular Toeplitz matrix `T` with `traces(profile) = impulse · T`
    /// for impulse observations stored row-wise.
    pub fn profile_toeplitz(&self, profile: &[f64]) -> DMatrix<f64> {
        let nt = self.grid.nt;
        let sig = self.stencil(profile);
        DMatrix::from_fn(nt, nt + 1, |k, m| if m >= 1 && k < m { sig[m - 1 - k] } else { 0.0 })
    }

    pub fn convolve_impulse(&self, impulse: &DMatrix<f64>, profile: &[f64]) -> ObservationSeries {
        ObservationSeries { values: impulse * self.profile_toeplitz(profile) }
    }

    fn prepared(&self, g: &ObservationSeries) -> Result<ObservationSeries> {
        self.check_obs(g)?;
        Ok(match self.smoothing {
            Some(w) => smooth_in_time(g, w),
            None => g.clone(),
        })
    }

    /// Interior vectors `Pᵀ B (scale_j g_j)` for `j = 0..=nt`.
    fn boundary_loads(&self, g: &ObservationSeries, scale: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let nt = self.grid.nt;
        let mut out = DMatrix::zeros(self.interior.len(), nt + 1);
        let mut bg = vec![0.0; self.n_obs()];
        for j in 0..=nt {
            let s = scale(j);
            if s == 0.0 {
                continue;
            }
            spmv(&self.boundary, g.values.column(j).as_slice(), &mut bg);
            for (r, &i) in self.obs_interior.iter().enumerate() {
                out[(i, j)] = s * bg[r];
            }
        }
        out
    }

    /// Adjoint state `q` for the continuous backward problem driven by
    /// `∫_Σ g v`: terminal data zero at `T`, nodal values per time level.
    pub fn solve_adjoint(&self, g: &ObservationSeries) -> Result<DMatrix<f64>> {
        let g = self.prepared(g)?;
        Ok(self.to_full(&self.adjoint_state(&g)?))
    }

    fn adjoint_state(&self, g: &ObservationSeries) -> Result<DMatrix<f64>> {
        let nt = self.grid.nt;
        let mut loads = self.boundary_loads(g, |_| 1.0);
        reverse_columns(&mut loads);
        let mut u = self.march_sampled(&loads)?;
        debug_assert_eq!(u.ncols(), nt + 1);
        reverse_columns(&mut u);
        Ok(u)
    }

    /// `W_i^* g` with respect to the mass inner product on parameters.
    pub fn apply_wstar(&self, g: &ObservationSeries, design: &IntensityDesign) -> Result<Field> {
        let g = self.prepared(g)?;
        let s = design.derivative_samples(&self.grid);
        let ni = self.interior.len();
        let nt = self.grid.nt;
        let mut acc = DVector::<f64>::zeros(ni);
        match self.quadrature {
            AdjointQuadrature::Consistent => {
                let w = &self.weights;
                let loads = self.boundary_loads(&g, |j| if j == 0 { 0.0 } else { w[j] });
                // ρ_k = Y_{nt-k}: unweighted flip, no time stencil
                let u = self.march(|k, r| r.copy_from_slice(loads.column(nt - k).as_slice()))?;
                let sig = self.stencil(&s);
                for (m, sm) in sig.iter().enumerate() {
                    acc.axpy(*sm, &u.column(nt - m), 1.0);
                }
            }
            AdjointQuadrature::Continuous => {
                let q = self.adjoint_state(&g)?;
                for k in 0..=nt {
                    acc.axpy(self.weights[k] * s[k], &q.column(k), 1.0);
                }
            }
        }
        let mut out = DVector::zeros(self.n_nodes);
        for (r, &i) in self.interior.iter().enumerate() {
            out[i] = acc[r];
        }
        Ok(Field(out))
    }
}

fn reverse_columns(a: &mut DMatrix<f64>) {
    let n = a.ncols();
    for j in 0..n / 2 {
        a.swap_columns(j, n - 1 - j);
    }
}

/// Newmark velocities `v_{m+1} = 2 (u_{m+1} - u_m)/dt - v_m`, `v_0 = 0`.
pub fn newmark_velocities(traj: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(traj.nrows(), traj.ncols());
    for m in 0..traj.ncols().saturating_sub(1) {
        let next = (traj.column(m + 1) - traj.column(m)) * (2.0 / dt) - v.column(m);
        v.column_mut(m + 1).copy_from(&next);
    }
    v
}

/// Centered moving average along time with a window of `window` samples,
/// truncated at both ends.
pub fn smooth_in_time(g: &ObservationSeries, window: usize) -> ObservationSeries {
    let half = window / 2;
    let n = g.n_times();
    let mut out = DMatrix::zeros(g.n_obs(), n);
    for j in 0..n {
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        let cols = g.values.columns(lo, hi - lo + 1);
        let mean = cols.column_sum() / (hi - lo + 1) as f64;
        out.column_mut(j).copy_from(&mean);
    }
    ObservationSeries { values: out }
}
