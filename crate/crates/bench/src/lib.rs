//! Shared fixtures for the solver benchmarks.

use fracpat_core::oed::{precompute_gram, MisfitGram};
use fracpat_core::priors::{Prior, PriorKind, PriorSpec, ProjectionBasis};
use fracpat_core::{assemble, build_mesh, Field, FracParams, IntensityDesign, Result, TimeGrid, WaveSolver};

pub const OMEGA: f64 = 100.0 * std::f64::consts::PI;
pub const T_FINAL: f64 = 0.2;

pub struct Fixture {
    pub solver: WaveSolver,
    pub prior: Prior,
    pub phantom: Field,
    pub design: IntensityDesign,
}

/// Default physics on an `nx` mesh with `nt` steps and a bi-Laplacian prior.
pub fn fixture(nx: usize, nt: usize) -> Result<Fixture> {
    let mesh = build_mesh(nx)?;
    let fem = assemble(&mesh, 1.0, 8.0, nt, T_FINAL)?;
    let params = FracParams::from_attenuation(0.3, 300.0, 1e-4)?;
    let solver = WaveSolver::new(&mesh, &fem, params, TimeGrid::new(T_FINAL, nt, 0.3)?)?;
    let kind = PriorKind::BiLaplacian { gamma: 1.0, delta: 8.0 };
    let prior = Prior::new(PriorSpec::new(kind, Field::zeros(mesh.n_nodes()))?, &mesh, &fem)?;
    let phantom = Field(mesh.interpolate(|x, y| if x * x + y * y < 0.16 { 1.0 } else { 0.0 }));
    let design = IntensityDesign::new(100.0, vec![1.0, 0.0, 0.0, 0.0, 0.0], OMEGA, T_FINAL)?;
    Ok(Fixture { solver, prior, phantom, design })
}

/// Leading `rank` prior eigenpairs and the `k`-mode Gram tensor.
pub fn gram(f: &Fixture, nx: usize, k: usize, rank: usize) -> Result<(ProjectionBasis, MisfitGram)> {
    let basis = f.prior.eigenbasis(rank)?;
    let g = precompute_gram(&f.solver, &basis, k, OMEGA, nx)?;
    Ok((basis, g))
}
