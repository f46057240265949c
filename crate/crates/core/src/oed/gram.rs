use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fracwave::{IntensityDesign, WaveSolver};
use crate::priors::ProjectionBasis;

/// Discretization the Gram tensor was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub nx: usize,
    pub nt: usize,
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
    pub omega: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
}

/// `G[k][l]_{jm} = ⟨W_{ψ_k} e_j, W_{ψ_l} e_m⟩_obs` for `ψ_k = sin(kωt)`,
/// together with the prior spectrum the basis came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitGram {
    pub n_modes: usize,
    pub rank: usize,
    blocks: Vec<DMatrix<f64>>,
    pub lambda: Vec<f64>,
    pub full_trace: f64,
    pub meta: GramMeta,
}

impl MisfitGram {
    pub fn from_blocks(
        blocks: Vec<DMatrix<f64>>,
        n_modes: usize,
        lambda: Vec<f64>,
        full_trace: f64,
        meta: GramMeta,
    ) -> Result<Self> {
        let rank = lambda.len();
        if blocks.len() != n_modes * n_modes || blocks.iter().any(|b| b.shape() != (rank, rank)) {
            return Err(invalid("gram", format!("need {n_modes}² blocks of size {rank}×{rank}")));
        }
        Ok(Self { n_modes, rank, blocks, lambda, full_trace, meta })
    }

    /// Block `(k, l)`, zero-based mode indices.
    pub fn block(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.blocks[k * self.n_modes + l]
    }

    /// `full_trace - Σ_j λ_j`.
    pub fn tail(&self) -> f64 {
        (self.full_trace - self.lambda.iter().sum::<f64>()).max(0.0)
    }
}

/// Fills the Gram tensor with one PDE solve per basis vector: the system is
/// time-invariant, so the traces for every `ψ_k` follow from the impulse
/// response by a Toeplitz product. Solves run in parallel; a failure is
/// tagged with the basis index `j` (and `k = 0`, since all modes share it).
pub fn precompute_gram(solver: &WaveSolver, basis: &ProjectionBasis, n_modes: usize, omega: f64, nx: usize) -> Result<MisfitGram> {
    let rank = basis.rank();
    if rank == 0 || n_modes == 0 {
        return Err(invalid("gram", "need N >= 1 and K >= 1"));
    }
    let grid = solver.grid();
    let (nt, n_obs) = (grid.nt, solver.n_obs());

    let impulses: Vec<DMatrix<f64>> = (0..rank)
        .into_par_iter()
        .map(|j| {
            solver
                .impulse_observations(&basis.e.column(j).into_owned())
                .map_err(|e| Error::Gram { k: 0, j, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut stacked = DMatrix::zeros(rank * n_obs, nt);
    for (j, imp) in impulses.iter().enumerate() {
        stacked.rows_mut(j * n_obs, n_obs).copy_from(imp);
    }
    drop(impulses);

    // Row j of traces[k] is the flattened (time-major) series W_{ψ_k} e_j;
    // weighted[k] additionally carries the w_j B quadrature.
    let width = n_obs * (nt + 1);
    let boundary = solver.boundary();
    let w = solver.time_weights();
    let per_mode: Vec<(DMatrix<f64>, DMatrix<f64>)> = (1..=n_modes)
        .into_par_iter()
        .map(|k| {
            let profile = IntensityDesign::mode(k, n_modes, omega, grid.t_final).derivative_samples(grid);
            let series = &stacked * solver.profile_toeplitz(&profile);
            let mut flat = DMatrix::zeros(rank, width);
            let mut weighted = DMatrix::zeros(rank, width);
            let mut col = vec![0.0; n_obs];
            let mut bcol = vec![0.0; n_obs];
            for j in 0..rank {
                for t in 0..=nt {
                    for o in 0..n_obs {
                        col[o] = series[(j * n_obs + o, t)];
                    }
                    crate::linalg::spmv(boundary, &col, &mut bcol);
                    for o in 0..n_obs {
                        flat[(j, t * n_obs + o)] = col[o];
                        weighted[(j, t * n_obs + o)] = w[t] * bcol[o];
                    }
                }
            }
            (flat, weighted)
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n_modes).flat_map(|k| (k..n_modes).map(move |l| (k, l))).collect();
    let computed: Vec<DMatrix<f64>> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let g = &per_mode[k].0 * per_mode[l].1.transpose();
            if k == l {
                (&g + g.transpose()) * 0.5
            } else {
                g
            }
        })
        .collect();
    let mut blocks = vec![DMatrix::zeros(0, 0); n_modes * n_modes];
    for ((k, l), g) in pairs.into_iter().zip(computed) {
        if k != l {
            blocks[l * n_modes + k] = g.transpose();
        }
        blocks[k * n_modes + l] = g;
    }
    let p = solver.params();
    let meta = GramMeta { nx, nt, alpha: p.alpha, b: p.b, c: p.c, omega, t_final: grid.t_final };
    MisfitGram::from_blocks(blocks, n_modes, basis.lambda.clone(), basis.full_trace, meta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(flatten)]
    meta: GramMeta,
    full_trace: f64,
    checksum: String,
}

fn block_name(k: usize, l: usize) -> String {
    format!("gram_{}_{}.csv", k + 1, l + 1)
}

fn matrix_csv(a: &DMatrix<f64>) -> String {
    let mut s = String::new();
    let header: Vec<String> = (0..a.ncols()).map(|m| format!("m{m}")).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for j in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|m| format!("{:e}", a[(j, m)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn eigen_csv(lambda: &[f64]) -> String {
    let mut s = String::from("index,lambda\n");
    for (j, l) in lambda.iter().enumerate() {
        s.push_str(&format!("{},{:e}\n", j + 1, l));
    }
    s
}

fn checksum(files: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (name, body) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(body.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Writes one CSV per block, the eigenvalues, and `gram_manifest.json`;
/// returns the manifest path.
pub fn save_gram(dir: &Path, gram: &MisfitGram) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for k in 0..gram.n_modes {
        for l in 0..gram.n_modes {
            files.push((block_name(k, l), matrix_csv(gram.block(k, l))));
        }
    }
    files.push(("eigenvalues.csv".to_string(), eigen_csv(&gram.lambda)));
    for (name, body) in &files {
        fs::write(dir.join(name), body)?;
    }
    let manifest = Manifest {
        k: gram.n_modes,
        n: gram.rank,
        meta: gram.meta.clone(),
        full_trace: gram.full_trace,
        checksum: checksum(&files),
    };
    let path = dir.join("gram_manifest.json");
    let mut f = fs::File::create(&path)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f, "{text}")?;
    Ok(path)
}

fn parse_rows(body: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    body.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Format(format!("{name}: {e}"))))
                .collect()
        })
        .collect()
}

/// Reads a Gram tensor written by [`save_gram`], verifying the checksum.
pub fn load_gram(manifest_path: &Path) -> Result<MisfitGram> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest_path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("gram manifest: {e}")))?;
    let mut files = Vec::new();
    for k in 0..m.k {
        for l in 0..m.k {
            let name = block_name(k, l);
            let body = fs::read_to_string(dir.join(&name))?;
            files.push((name, body));
        }
    }
    let eig = fs::read_to_string(dir.join("eigenvalues.csv"))?;
    files.push(("eigenvalues.csv".to_string(), eig));
    if checksum(&files) != m.checksum {
        return Err(Error::Format("gram checksum mismatch".into()));
    }
    let mut blocks = Vec::with_capacity(m.k * m.k);
    for (name, body) in &files[..m.k * m.k] {
        let rows = parse_rows(body, name)?;
        if rows.len() != m.n || rows.iter().any(|r| r.len() != m.n) {
            return Err(Error::Format(format!("{name}: expected {0}×{0}", m.n)));
        }
        blocks.push(DMatrix::from_fn(m.n, m.n, |j, c| rows[j][c]));
    }
    let lambda: Vec<f64> = parse_rows(&files[m.k * m.k].1, "eigenvalues.csv")?
        .into_iter()
        .map(|r| r.get(1).copied().ok_or_else(|| Error::Format("eigenvalues.csv: missing column".into())))
        .collect::<Result<_>>()?;
    MisfitGram::from_blocks(blocks, m.k, lambda, m.full_trace, m.meta)
}
