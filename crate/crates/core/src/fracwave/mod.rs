//! Fractionally damped wave propagation: L1 Caputo quadrature, Newmark time
//! stepping, the observation map `W_i` and its adjoint.

mod io;
mod solver;

pub use io::{write_observations_csv, write_trajectory_csv};
pub use solver::{
    newmark_velocities, smooth_in_time, AdjointQuadrature, ForwardSolution, Load, WaveSolver,
};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{invalid, Result};
use crate::linalg::{m_inner, mul_vec};

/// Physical coefficients of `c⁻² u_tt - Δu - b ∂_t^α Δu = f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
}

impl FracParams {
    pub fn new(alpha: f64, b: f64, c: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("fractional order must lie in (0,1), got {alpha}")));
        }
        if !(c > 0.0) {
            return Err(invalid("c", "sound speed must be positive"));
        }
        if !(b >= 0.0) {
            return Err(invalid("b", "damping must be nonnegative"));
        }
        Ok(Self { alpha, b, c })
    }

    /// Damping from the power-law attenuation scale:
    /// `b = -2 c r0 / cos(π(α+1)/2)`.
    pub fn from_attenuation(alpha: f64, c: f64, r0: f64) -> Result<Self> {
        if !(r0 >= 0.0) {
            return Err(invalid("r0", "attenuation scale must be nonnegative"));
        }
        let b = -2.0 * c * r0 / (std::f64::consts::PI * (alpha + 1.0) / 2.0).cos();
        Self::new(alpha, b, c)
    }
}

/// L1 convolution weights `w_j = dt^{-α}/Γ(2-α) ((j+1)^{1-α} - j^{1-α})`,
/// `j = 0..nt`. The Caputo derivative at `t_m` is approximated by
/// `Σ_j w_j (u^{m-j} - u^{m-j-1})`.
pub fn caputo_weights(alpha: f64, dt: f64, nt: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("fractional order must lie in (0,1), got {alpha}")));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "time step must be positive"));
    }
    let scale = dt.powf(-alpha) / libm::tgamma(2.0 - alpha);
    let e = 1.0 - alpha;
    Ok((0..nt)
        .map(|j| {
            let j = j as f64;
            scale * ((j + 1.0).powf(e) - j.powf(e))
        })
        .collect())
}

/// Applies the L1 quadrature to samples `u[0..=m]`, returning `D^α u(t_m)`.
pub fn caputo_apply(weights: &[f64], u: &[f64], m: usize) -> f64 {
    (0..m).map(|j| weights[j] * (u[m - j] - u[m - j - 1])).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub nt: usize,
    pub dt: f64,
    pub caputo_w: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize, alpha: f64) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(invalid("T", "final time must be positive"));
        }
        if nt == 0 || !nt.is_multiple_of(2) {
            return Err(invalid("nt", format!("need an even positive number of steps, got {nt}")));
        }
        let dt = t_final / nt as f64;
        Ok(Self {
            t_final,
            nt,
            dt,
            caputo_w: caputo_weights(alpha, dt, nt)?,
        })
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Smallest even step count with `c dt / h <= 1`.
    pub fn cfl_steps(t_final: f64, c: f64, h: f64) -> usize {
        let n = (c * t_final / h).ceil() as usize;
        (n + n % 2).max(2)
    }
}

/// Nodal coefficient vector of a function in L²(Ω).
#[derive(Debug, Clone, PartialEq)]
pub struct Field(pub DVector<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn m_inner(&self, other: &Field, mass: &CsrMatrix<f64>) -> f64 {
        m_inner(mass, &self.0, &other.0)
    }

    pub fn m_norm(&self, mass: &CsrMatrix<f64>) -> f64 {
        self.m_inner(self, mass).max(0.0).sqrt()
    }
}

impl From<DVector<f64>> for Field {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// Laser intensity `i(t) = I [1 + Σ_k d_k sin(kωt)]` on `(0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityDesign {
    pub amplitude: f64,
    pub d: Vec<f64>,
    pub omega: f64,
    pub t_final: f64,
}

impl IntensityDesign {
    pub fn new(amplitude: f64, d: Vec<f64>, omega: f64, t_final: f64) -> Result<Self> {
        if !(amplitude > 0.0) {
            return Err(invalid("I", "amplitude must be positive"));
        }
        if !(omega > 0.0) {
            return Err(invalid("omega", "base frequency must be positive"));
        }
        if !(t_final > 0.0) {
            return Err(invalid("T", "duration must be positive"));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(invalid("d", "coefficients must be finite"));
        }
        Ok(Self { amplitude, d, omega, t_final })
    }

    /// Unit-amplitude single mode `ψ_k(t) = sin(kωt)`, `k >= 1`; as a design
    /// it contributes `i' = ψ_k'`.
    pub fn mode(k: usize, n_modes: usize, omega: f64, t_final: f64) -> Self {
        let mut d = vec![0.0; n_modes];
        d[k - 1] = 1.0;
        Self { amplitude: 1.0, d, omega, t_final }
    }

    pub fn l1(&self) -> f64 {
        self.d.iter().map(|x| x.abs()).sum()
    }

    pub fn intensity(&self, t: f64) -> f64 {
        let s: f64 = self
            .d
            .iter()
            .enumerate()
            .map(|(k, dk)| dk * ((k + 1) as f64 * self.omega * t).sin())
            .sum();
        self.amplitude * (1.0 + s)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s: f64 = self
            .d
            .iter()
            .enumerate()
            .map(|(k, dk)| {
                let w = (k + 1) as f64 * self.omega;
                dk * w * (w * t).cos()
            })
            .sum();
        self.amplitude * s
    }

    pub fn derivative_samples(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..=grid.nt).map(|j| self.derivative(grid.time(j))).collect()
    }
}

/// Pressure traces on Σ: column `j` holds the values at `t_j`, rows follow
/// `Mesh::obs_nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub values: DMatrix<f64>,
}

impl ObservationSeries {
    pub fn zeros(n_obs: usize, nt: usize) -> Self {
        Self { values: DMatrix::zeros(n_obs, nt + 1) }
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    /// `Σ_j w_j g_jᵀ B h_j`.
    pub fn inner(&self, other: &Self, boundary: &CsrMatrix<f64>, weights: &[f64]) -> f64 {
        let mut s = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let bh = mul_vec(boundary, &other.values.column(j).into_owned());
            s += w * self.values.column(j).dot(&bh);
        }
        s
    }

    pub fn norm(&self, boundary: &CsrMatrix<f64>, weights: &[f64]) -> f64 {
        self.inner(self, boundary, weights).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_weight_is_inverse_gamma() {
        let w = caputo_weights(0.5, 1.0, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[0] - 1.0 / libm::tgamma(1.5)).abs() < 1e-15);
    }

    #[test]
    fn weights_positive_and_decreasing() {
        let w = caputo_weights(0.3, 1e-3, 200).unwrap();
        assert!(w[0] > 0.0);
        assert!(w.windows(2).all(|p| p[1] > 0.0 && p[1] < p[0]));
    }

    #[test]
    fn caputo_of_constant_vanishes() {
        let w = caputo_weights(0.4, 0.01, 50).unwrap();
        let u = vec![3.0; 51];
        for m in 0..=50 {
            assert_eq!(caputo_apply(&w, &u, m), 0.0);
        }
    }

    #[test]
    fn caputo_exact_for_linear() {
        // D^α t = t^{1-α} / Γ(2-α); the L1 scheme is exact for piecewise linears
        let alpha = 0.5;
        let exact = 1.0 / libm::tgamma(1.5);
        for nt in [10, 40, 160] {
            let dt = 1.0 / nt as f64;
            let w = caputo_weights(alpha, dt, nt).unwrap();
            let u: Vec<f64> = (0..=nt).map(|j| j as f64 * dt).collect();
            assert!((caputo_apply(&w, &u, nt) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn caputo_of_square_converges() {
        // D^α t² = 2 t^{2-α} / Γ(3-α)
        let alpha = 0.5;
        let exact = 2.0 / libm::tgamma(3.0 - alpha);
        let errs: Vec<f64> = [20, 40, 80, 160]
            .iter()
            .map(|&nt| {
                let dt = 1.0 / nt as f64;
                let w = caputo_weights(alpha, dt, nt).unwrap();
                let u: Vec<f64> = (0..=nt).map(|j| (j as f64 * dt).powi(2)).collect();
                (caputo_apply(&w, &u, nt) - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|p| p[1] < p[0]));
        assert!(errs[3] < 1e-3);
    }

    #[test]
    fn damping_from_attenuation() {
        let p = FracParams::from_attenuation(0.3, 300.0, 1e-4).unwrap();
        let expect = -0.06 / (std::f64::consts::PI * 0.65).cos();
        assert!((p.b - expect).abs() < 1e-15);
        assert!(p.b > 0.0);
        assert!(FracParams::new(1.0, 0.1, 1.0).is_err());
        assert!(FracParams::new(0.5, -0.1, 1.0).is_err());
    }

    #[test]
    fn design_derivative_matches_difference_quotient() {
        let d = IntensityDesign::new(100.0, vec![0.4, -0.2, 0.1], 100.0 * std::f64::consts::PI, 0.2)
            .unwrap();
        let (t, h) = (0.0123, 1e-7);
        let fd = (d.intensity(t + h) - d.intensity(t - h)) / (2.0 * h);
        assert!((fd - d.derivative(t)).abs() < 1e-4 * d.derivative(t).abs().max(1.0));
    }

    #[test]
    fn l1_ball_keeps_intensity_nonnegative() {
        let d = IntensityDesign::new(1.0, vec![0.5, -0.3, 0.2], 7.0, 2.0).unwrap();
        assert!(d.l1() <= 1.0);
        assert!((0..2000).all(|j| d.intensity(j as f64 * 1e-3) >= -1e-15));
    }

    #[test]
    fn cfl_steps_are_even() {
        let n = TimeGrid::cfl_steps(0.2, 300.0, 0.1);
        assert_eq!(n, 600);
        assert_eq!(TimeGrid::cfl_steps(0.2, 300.0, 0.07) % 2, 0);
    }
}
