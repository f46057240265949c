use nalgebra::DMatrix;

use super::gram::MisfitGram;
use crate::error::{invalid, Error, Result};
use crate::fracwave::Field;
use crate::linalg::{dense_cholesky, mul_vec};
use crate::priors::Prior;

fn check(d: &[f64], gram: &MisfitGram, sigma2: f64) -> Result<()> {
    if d.len() != gram.n_modes {
        return Err(Error::DimensionMismatch { context: "design coefficients", expected: gram.n_modes, got: d.len() });
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2", "noise variance must be positive"));
    }
    Ok(())
}

/// Projected misfit Hessian `σ⁻² I² Σ_{k,l} d_k d_l G[k][l]`.
pub fn misfit_hessian(d: &[f64], amplitude: f64, gram: &MisfitGram, sigma2: f64) -> Result<DMatrix<f64>> {
    check(d, gram, sigma2)?;
    let n = gram.rank;
    let mut h = DMatrix::zeros(n, n);
    for (k, dk) in d.iter().enumerate() {
        for (l, dl) in d.iter().enumerate() {
            let c = dk * dl;
            if c != 0.0 {
                h += gram.block(k, l) * c;
            }
        }
    }
    Ok(h * (amplitude * amplitude / sigma2))
}

/// `S = (H̃ + diag λ⁻¹)⁻¹`.
fn posterior_inverse(d: &[f64], amplitude: f64, gram: &MisfitGram, sigma2: f64) -> Result<DMatrix<f64>> {
    let mut a = misfit_hessian(d, amplitude, gram, sigma2)?;
    for (j, l) in gram.lambda.iter().enumerate() {
        a[(j, j)] += 1.0 / l;
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(dense_cholesky(a, "projected posterior precision")?.inverse())
}

/// Projected A-optimality criterion `tr[(H̃ + diag λ⁻¹)⁻¹] + Σ_{j>N} λ_j`.
pub fn phi_n(d: &[f64], amplitude: f64, gram: &MisfitGram, sigma2: f64) -> Result<f64> {
    let s = posterior_inverse(d, amplitude, gram, sigma2)?;
    Ok(s.trace() + gram.tail())
}

/// `∂φ_N/∂d_k = -σ⁻² I² tr[S² Σ_j d_j (G[k][j] + G[j][k])]`.
pub fn grad_phi_n(d: &[f64], amplitude: f64, gram: &MisfitGram, sigma2: f64) -> Result<Vec<f64>> {
    let s = posterior_inverse(d, amplitude, gram, sigma2)?;
    let s2 = &s * &s;
    let c = amplitude * amplitude / sigma2;
    let n = gram.rank;
    Ok((0..gram.n_modes)
        .map(|k| {
            let mut x = DMatrix::zeros(n, n);
            for (j, dj) in d.iter().enumerate() {
                if *dj != 0.0 {
                    x += (gram.block(k, j) + gram.block(j, k)) * *dj;
                }
            }
            // tr(S² X) with S² symmetric
            -c * s2.component_mul(&x.transpose()).sum()
        })
        .collect())
}

/// `EᵀMΓ_pr⁻¹E`: the prior precision in the coordinates of the
/// M-orthonormal columns of `e`.
pub fn prior_representation(prior: &Prior, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = e.ncols();
    let mut g = DMatrix::zeros(e.nrows(), n);
    for j in 0..n {
        let col = prior.apply_inv(&Field(e.column(j).into_owned()))?;
        g.set_column(j, &mul_vec(prior.mass(), &col.0));
    }
    let r = e.transpose() * g;
    Ok((&r + r.transpose()) * 0.5)
}

/// Exact posterior trace for a projected misfit Hessian `h` (`N × N`, head
/// coordinates) and a full prior precision representation `prior_rep`
/// (`n × n`, in an M-orthonormal basis whose first `N` vectors span the
/// projection): with blocks `A`, `B`, `D` and `L = h + A - B D⁻¹ Bᵀ`,
/// `tr = tr L⁻¹ + tr D⁻¹ + tr(D⁻¹ Bᵀ L⁻¹ B D⁻¹)`.
pub fn trace_general_projection(h: &DMatrix<f64>, prior_rep: &DMatrix<f64>) -> Result<f64> {
    let n_head = h.nrows();
    let n = prior_rep.nrows();
    if h.ncols() != n_head || prior_rep.ncols() != n || n_head == 0 || n_head > n {
        return Err(invalid("blocks", format!("inconsistent shapes {:?} and {:?}", h.shape(), prior_rep.shape())));
    }
    let a = prior_rep.view((0, 0), (n_head, n_head));
    let n_tail = n - n_head;
    if n_tail == 0 {
        let l = h + a;
        let l = (&l + l.transpose()) * 0.5;
        return Ok(dense_cholesky(l, "Schur complement")?.inverse().trace());
    }
    let b = prior_rep.view((0, n_head), (n_head, n_tail)).into_owned();
    let d = prior_rep.view((n_head, n_head), (n_tail, n_tail)).into_owned();
    let dc = dense_cholesky(d, "tail prior block")?;
    let d_inv = dc.inverse();
    let dinv_bt = dc.solve(&b.transpose());
    let l = h + a - &b * &dinv_bt;
    let l = (&l + l.transpose()) * 0.5;
    let l_inv = dense_cholesky(l, "Schur complement")?.inverse();
    let corr = dinv_bt.component_mul(&(&dinv_bt * &l_inv)).sum();
    Ok(l_inv.trace() + d_inv.trace() + corr)
}

/// `tr_M[(σ⁻²W*W + Γ⁻¹)⁻¹]` restricted to a coordinate representation:
/// the trace of the inverse of a symmetric positive definite matrix.
pub fn trace_of_inverse(a: &DMatrix<f64>) -> Result<f64> {
    let a = (a + a.transpose()) * 0.5;
    Ok(dense_cholesky(a, "posterior precision")?.inverse().trace())
}

