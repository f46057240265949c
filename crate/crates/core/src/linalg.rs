//! Sparse storage helpers and a banded Cholesky factorization.
//!
//! Structured-grid matrices in row-major node order have a bandwidth of
//! roughly one grid row, so a dense-band factorization has no fill outside
//! the band and is both simple and fast at the sizes this crate targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Builds a CSR matrix from (row, col, value) triplets, summing duplicates.
pub fn csr_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: impl IntoIterator<Item = (usize, usize, f64)>,
) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(nrows, ncols);
    for (i, j, v) in triplets {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

/// `y = A x`.
pub fn spmv(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let (offsets, cols, vals) = a.csr_data();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in offsets[i]..offsets[i + 1] {
            s += vals[p] * x[cols[p]];
        }
        *yi = s;
    }
}

/// `y += alpha * A x`.
pub fn spmv_add(a: &CsrMatrix<f64>, alpha: f64, x: &[f64], y: &mut [f64]) {
    let (offsets, cols, vals) = a.csr_data();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in offsets[i]..offsets[i + 1] {
            s += vals[p] * x[cols[p]];
        }
        *yi += alpha * s;
    }
}

pub fn mul_vec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    spmv(a, x.as_slice(), y.as_mut_slice());
    y
}

/// Principal submatrix on `keep` (a sorted list of indices).
pub fn restrict(a: &CsrMatrix<f64>, keep: &[usize]) -> CsrMatrix<f64> {
    let mut local = vec![usize::MAX; a.nrows()];
    for (l, &g) in keep.iter().enumerate() {
        local[g] = l;
    }
    let triplets = a.triplet_iter().filter_map(|(i, j, &v)| {
        let (li, lj) = (local[i], local[j]);
        (li != usize::MAX && lj != usize::MAX).then_some((li, lj, v))
    });
    csr_from_triplets(keep.len(), keep.len(), triplets)
}

/// Linear combination `alpha * A + beta * B` of two matrices of equal shape.
pub fn lincomb(alpha: f64, a: &CsrMatrix<f64>, beta: f64, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let ta = a.triplet_iter().map(|(i, j, &v)| (i, j, alpha * v));
    let tb = b.triplet_iter().map(|(i, j, &v)| (i, j, beta * v));
    csr_from_triplets(a.nrows(), a.ncols(), ta.chain(tb))
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, &v) in a.triplet_iter() {
        d[(i, j)] += v;
    }
    d
}

/// Lower half-bandwidth of a square sparse matrix.
pub fn bandwidth(a: &CsrMatrix<f64>) -> usize {
    a.triplet_iter()
        .map(|(i, j, _)| i.abs_diff(j))
        .max()
        .unwrap_or(0)
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive-definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw..=i] at offsets 0..=bw
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix<f64>, name: &'static str) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "band cholesky",
                expected: n,
                got: a.ncols(),
            });
        }
        let bw = bandwidth(a);
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for (i, j, &v) in a.triplet_iter() {
            if j <= i {
                band[i * w + (j + bw - i)] += v;
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in lo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization { matrix: name, pivot: i });
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = x[i];
            for k in lo..i {
                s -= row[k + bw - i] * x[k];
            }
            x[i] = s / row[bw];
        }
        for i in (0..n).rev() {
            x[i] /= self.band[i * w + bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            for k in lo..i {
                x[k] -= row[k + bw - i] * xi;
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `aᵀ M b`.
pub fn m_inner(m: &CsrMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mb = mul_vec(m, b);
    a.dot(&mb)
}

/// Dense Cholesky factorization; on failure the first non-positive pivot is
/// reported.
pub fn dense_cholesky(a: DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows();
    let mut l = a;
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::Factorization { matrix: name, pivot: j });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    // roundoff disagreement with nalgebra's own test; accept our factor
    Ok(Cholesky::pack_dirty(l))
}
