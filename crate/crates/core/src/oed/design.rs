use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::fracwave::IntensityDesign;

/// Simpson nodes and weights on `[0, T]` with at least `10 ×
/// max(1000, 40 K ωT / 2π)` intervals, enough to resolve `K` harmonics.
pub fn simpson_fine(n_modes: usize, omega: f64, t_final: f64) -> (Vec<f64>, Vec<f64>) {
    let periods = n_modes.max(1) as f64 * omega * t_final / (2.0 * std::f64::consts::PI);
    let mut m = 10 * 1000usize.max((40.0 * periods).ceil() as usize);
    m += m % 2;
    let h = t_final / m as f64;
    let t = (0..=m).map(|j| j as f64 * h).collect();
    let w = (0..=m)
        .map(|j| {
            let c = if j == 0 || j == m {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (t, w)
}

/// `‖i‖_{H¹(0,T)} = (‖i‖² + ‖i'‖²)^{1/2}`.
pub fn h1_norm_intensity(design: &IntensityDesign) -> f64 {
    let (t, w) = simpson_fine(design.d.len(), design.omega, design.t_final);
    t.iter()
        .zip(&w)
        .map(|(&t, &w)| w * (design.intensity(t).powi(2) + design.derivative(t).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean projection onto `{|x|₁ ≤ r}` by sorting and thresholding.
pub fn project_l1_ball(z: &[f64], r: f64) -> Vec<f64> {
    let l1: f64 = z.iter().map(|x| x.abs()).sum();
    if l1 <= r {
        return z.to_vec();
    }
    let mut u: Vec<f64> = z.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - r) / (j + 1) as f64;
        if uj > t {
            theta = t;
        }
    }
    z.iter().map(|&x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

/// Euclidean projection onto `{xᵀQx + 2pᵀx ≤ ρ}` for SPD `Q`, solving the
/// KKT system `x(μ) = (I + μQ)⁻¹(z - μp)` for the multiplier by bisection.
pub fn project_ellipsoid(z: &[f64], q: &SymmetricEigen<f64, nalgebra::Dyn>, p: &DVector<f64>, rho: f64) -> Vec<f64> {
    let zv = DVector::from_column_slice(z);
    let vt = q.eigenvectors.transpose();
    let g = |x: &DVector<f64>| {
        let qx = &q.eigenvectors * DVector::from_iterator(x.len(), (&vt * x).iter().zip(q.eigenvalues.iter()).map(|(a, l)| a * l));
        x.dot(&qx) + 2.0 * p.dot(x)
    };
    if g(&zv) <= rho {
        return z.to_vec();
    }
    let x_of = |mu: f64| {
        let rhs = &vt * (&zv - p * mu);
        let y = DVector::from_iterator(rhs.len(), rhs.iter().zip(q.eigenvalues.iter()).map(|(r, l)| r / (1.0 + mu * l)));
        &q.eigenvectors * y
    };
    let mut hi = 1.0;
    while g(&x_of(hi)) > rho {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(&x_of(mid)) > rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x_of(hi).iter().copied().collect()
}

/// Admissible set for `(I, d)`: `|d|₁ ≤ l1_bound` and `‖i(I, d)‖_{H¹} ≤
/// h1_bound`. The amplitude is pinned to `i_max`, the largest amplitude for
/// which the reference shape `d_ref` meets the H¹ bound; the H¹ bound then
/// becomes the ellipsoid `dᵀQd + 2pᵀd ≤ ρ` in the coefficients.
#[derive(Debug, Clone)]
pub struct DesignConstraints {
    pub l1_bound: f64,
    pub h1_bound: f64,
    pub i_max: f64,
    pub omega: f64,
    pub t_final: f64,
    q: DMatrix<f64>,
    q_eig: SymmetricEigen<f64, nalgebra::Dyn>,
    p: DVector<f64>,
    t_quad: f64,
    rho: f64,
}

impl DesignConstraints {
    /// Bound `h1_factor · ‖I₀(1 + Σ d_ref,k ψ_k)‖_{H¹}` with amplitude cap
    /// `h1_bound / ‖1 + Σ d_ref,k ψ_k‖_{H¹}`.
    pub fn new(n_modes: usize, omega: f64, t_final: f64, i_ref: f64, d_ref: &[f64], h1_factor: f64) -> Result<Self> {
        if n_modes == 0 || d_ref.len() != n_modes {
            return Err(invalid("K", format!("need K >= 1 reference coefficients, got {}", d_ref.len())));
        }
        if !(h1_factor > 0.0) {
            return Err(invalid("h1_factor", "must be positive"));
        }
        let reference = IntensityDesign::new(i_ref, d_ref.to_vec(), omega, t_final)?;
        let h1_bound = h1_factor * h1_norm_intensity(&reference);
        let unit = IntensityDesign::new(1.0, d_ref.to_vec(), omega, t_final)?;
        let i_max = h1_bound / h1_norm_intensity(&unit);

        let (t, w) = simpson_fine(n_modes, omega, t_final);
        let mut q = DMatrix::zeros(n_modes, n_modes);
        let mut p = DVector::zeros(n_modes);
        let mut psi = vec![0.0; n_modes];
        let mut dpsi = vec![0.0; n_modes];
        for (&tj, &wj) in t.iter().zip(&w) {
            for k in 0..n_modes {
                let f = (k + 1) as f64 * omega;
                psi[k] = (f * tj).sin();
                dpsi[k] = f * (f * tj).cos();
                p[k] += wj * psi[k];
            }
            for k in 0..n_modes {
                for l in 0..n_modes {
                    q[(k, l)] += wj * (psi[k] * psi[l] + dpsi[k] * dpsi[l]);
                }
            }
        }
        let t_quad: f64 = w.iter().sum();
        let rho = (h1_bound / i_max).powi(2) - t_quad;
        if !(rho > 0.0) {
            return Err(Error::Infeasible(format!("H¹ bound leaves no room for d (ρ = {rho:e})")));
        }
        let q_eig = SymmetricEigen::new(q.clone());
        Ok(Self { l1_bound: 1.0, h1_bound, i_max, omega, t_final, q, q_eig, p, t_quad, rho })
    }

    pub fn n_modes(&self) -> usize {
        self.p.len()
    }

    /// `‖i(I, d)‖_{H¹}` from the precomputed quadratic form.
    pub fn h1_norm(&self, amplitude: f64, d: &[f64]) -> f64 {
        let dv = DVector::from_column_slice(d);
        amplitude * (self.t_quad + 2.0 * self.p.dot(&dv) + dv.dot(&(&self.q * &dv))).max(0.0).sqrt()
    }

    pub fn is_feasible(&self, d: &[f64], tol: f64) -> bool {
        d.len() == self.n_modes()
            && d.iter().map(|x| x.abs()).sum::<f64>() <= self.l1_bound + tol
            && self.h1_norm(self.i_max, d) <= self.h1_bound * (1.0 + tol)
    }

    /// Projection onto the intersection by Dykstra's alternating scheme,
    /// finished by a radial pull-back so the result is exactly feasible.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        let mut x = z.to_vec();
        let mut pa = vec![0.0; n];
        let mut pb = vec![0.0; n];
        for _ in 0..10_000 {
            let ya: Vec<f64> = (0..n).map(|i| x[i] + pa[i]).collect();
            let y = project_l1_ball(&ya, self.l1_bound);
            for i in 0..n {
                pa[i] = ya[i] - y[i];
            }
            let yb: Vec<f64> = (0..n).map(|i| y[i] + pb[i]).collect();
            let xn = project_ellipsoid(&yb, &self.q_eig, &self.p, self.rho);
            for i in 0..n {
                pb[i] = yb[i] - xn[i];
            }
            let change = x.iter().zip(&xn).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let gap = y.iter().zip(&xn).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            x = xn;
            if change <= 1e-15 && gap <= 1e-14 {
                break;
            }
        }
        // both sets are convex and contain 0, so shrinking keeps the
        // ellipsoid constraint
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        if l1 > self.l1_bound {
            let s = self.l1_bound / l1;
            x.iter_mut().for_each(|v| *v *= s);
        }
        x
    }

    /// `s e_K` with the largest feasible `s`.
    pub fn max_frequency_design(&self) -> Vec<f64> {
        let k = self.n_modes() - 1;
        let (a, b) = (self.q[(k, k)], self.p[k]);
        // a s² + 2 b s - ρ = 0
        let s = (-b + (b * b + a * self.rho).sqrt()) / a;
        let mut d = vec![0.0; self.n_modes()];
        d[k] = s.min(self.l1_bound);
        d
    }
}
