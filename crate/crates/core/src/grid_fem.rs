//! Structured P1 finite elements on Ω = [-1, 1]² with the observation
//! curve Σ = ∂[-0.8, 0.8]².

use std::io::Write;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::csr_from_triplets;

/// Half-width of the square whose boundary is the observation curve.
pub const SIGMA_HALF_WIDTH: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Nodes on ∂Ω, ascending.
    pub boundary_nodes: Vec<usize>,
    /// Nodes not on ∂Ω, ascending; these carry the PDE unknowns.
    pub interior_nodes: Vec<usize>,
    /// Nodes on Σ in loop order (counter-clockwise from the lower-left corner).
    pub obs_nodes: Vec<usize>,
    /// Σ edges as (local obs index, local obs index, length).
    pub obs_segments: Vec<(usize, usize, f64)>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn h(&self) -> f64 {
        2.0 / self.nx as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Signed area of triangle `t`.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Evaluates `f` at every node.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.n_nodes(), self.nodes.iter().map(|p| f(p[0], p[1])))
    }

    /// Position of every interior node within `interior_nodes`, `None` on ∂Ω.
    pub fn interior_positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.n_nodes()];
        for (l, &g) in self.interior_nodes.iter().enumerate() {
            pos[g] = Some(l);
        }
        pos
    }
}

/// Uniform right-triangle mesh with `nx` cells per axis.
pub fn build_mesh(nx: usize) -> Result<Mesh> {
    if nx < 4 {
        return Err(Error::InvalidMesh { nx, reason: "need at least 4 cells per axis" });
    }
    if !nx.is_multiple_of(10) {
        return Err(Error::InvalidMesh {
            nx,
            reason: "nx must be divisible by 10 so that Σ lies on grid lines",
        });
    }
    let np = nx + 1;
    let h = 2.0 / nx as f64;
    let idx = |i: usize, j: usize| j * np + i;

    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            nodes.push([-1.0 + i as f64 * h, -1.0 + j as f64 * h]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * nx);
    for j in 0..nx {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }

    let mut boundary_nodes = Vec::new();
    let mut interior_nodes = Vec::new();
    for j in 0..np {
        for i in 0..np {
            if i == 0 || j == 0 || i == nx || j == nx {
                boundary_nodes.push(idx(i, j));
            } else {
                interior_nodes.push(idx(i, j));
            }
        }
    }

    // Σ sits at grid index nx/10 and 9nx/10
    let (lo, hi) = (nx / 10, 9 * nx / 10);
    let mut obs_nodes = Vec::with_capacity(4 * (hi - lo));
    for i in lo..hi {
        obs_nodes.push(idx(i, lo));
    }
    for j in lo..hi {
        obs_nodes.push(idx(hi, j));
    }
    for i in (lo + 1..=hi).rev() {
        obs_nodes.push(idx(i, hi));
    }
    for j in (lo + 1..=hi).rev() {
        obs_nodes.push(idx(lo, j));
    }
    let m = obs_nodes.len();
    let obs_segments = (0..m).map(|k| (k, (k + 1) % m, h)).collect();

    Ok(Mesh {
        nx,
        nodes,
        triangles,
        boundary_nodes,
        interior_nodes,
        obs_nodes,
        obs_segments,
    })
}

/// Composite Simpson weights on `nt` uniform intervals of `[0, t_final]`.
pub fn simpson_weights(nt: usize, t_final: f64) -> Result<Vec<f64>> {
    if nt == 0 || !nt.is_multiple_of(2) {
        return Err(invalid("nt", format!("Simpson's rule needs an even positive step count, got {nt}")));
    }
    if !(t_final > 0.0) {
        return Err(invalid("T", "final time must be positive"));
    }
    let dt = t_final / nt as f64;
    Ok((0..=nt)
        .map(|j| {
            let c = if j == 0 || j == nt {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * dt / 3.0
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Mass matrix on all nodes.
    pub mass: CsrMatrix<f64>,
    /// Laplacian stiffness on all nodes (no boundary conditions applied).
    pub stiffness: CsrMatrix<f64>,
    /// `delta * stiffness + gamma * mass`.
    pub k_prior: CsrMatrix<f64>,
    /// 1-D P1 mass on Σ, indexed by position in `Mesh::obs_nodes`.
    pub boundary: CsrMatrix<f64>,
    pub simpson_w: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
}

impl FemMatrices {
    /// Σ mass matrix scattered to the full node numbering.
    pub fn boundary_full(&self, mesh: &Mesh) -> CsrMatrix<f64> {
        let n = mesh.n_nodes();
        csr_from_triplets(
            n,
            n,
            self.boundary
                .triplet_iter()
                .map(|(i, j, &v)| (mesh.obs_nodes[i], mesh.obs_nodes[j], v)),
        )
    }
}

pub fn assemble(mesh: &Mesh, gamma: f64, delta: f64, nt: usize, t_final: f64) -> Result<FemMatrices> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let simpson_w = simpson_weights(nt, t_final)?;
    let n = mesh.n_nodes();

    let mut mt = Vec::with_capacity(9 * mesh.triangles.len());
    let mut kt = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.nodes[v]).collect();
        // gradients of the barycentric coordinates
        let grads: Vec<[f64; 2]> = (0..3)
            .map(|a| {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                [(p[b][1] - p[c][1]) / (2.0 * area), (p[c][0] - p[b][0]) / (2.0 * area)]
            })
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mt.push((tri[a], tri[b], m));
                let k = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                kt.push((tri[a], tri[b], k));
            }
        }
    }
    let mass = csr_from_triplets(n, n, mt.iter().copied());
    let stiffness = csr_from_triplets(n, n, kt.iter().copied());
    let k_prior = csr_from_triplets(
        n,
        n,
        kt.iter()
            .map(|&(i, j, v)| (i, j, delta * v))
            .chain(mt.iter().map(|&(i, j, v)| (i, j, gamma * v))),
    );

    let m_obs = mesh.obs_nodes.len();
    let mut bt = Vec::with_capacity(4 * mesh.obs_segments.len());
    for &(a, b, len) in &mesh.obs_segments {
        bt.push((a, a, len / 3.0));
        bt.push((b, b, len / 3.0));
        bt.push((a, b, len / 6.0));
        bt.push((b, a, len / 6.0));
    }
    let boundary = csr_from_triplets(m_obs, m_obs, bt);

    Ok(FemMatrices {
        mass,
        stiffness,
        k_prior,
        boundary,
        simpson_w,
        gamma,
        delta,
    })
}

/// Writes a sparse matrix as `row col value` lines with 0-based indices.
pub fn write_triplets(mut out: impl Write, a: &CsrMatrix<f64>) -> Result<()> {
    for (i, j, v) in a.triplet_iter() {
        writeln!(out, "{i} {j} {v:e}")?;
    }
    Ok(())
}

/// Writes node coordinates (`id x y`) followed by triangles (`t a b c`).
pub fn write_mesh(mut out: impl Write, mesh: &Mesh) -> Result<()> {
    for (k, p) in mesh.nodes.iter().enumerate() {
        writeln!(out, "{k} {} {}", p[0], p[1])?;
    }
    for t in &mesh.triangles {
        writeln!(out, "t {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}
