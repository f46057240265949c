//! MAP estimation: preconditioned CG on the Tikhonov normal equations in the
//! mass inner product, plus noise generation and error scoring.

use std::io::Write;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fracwave::{Field, IntensityDesign, ObservationSeries, WaveSolver};
use crate::grid_fem::Mesh;
use crate::linalg::m_inner;
use crate::priors::Prior;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rtol: f64,
    pub maxit: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, maxit: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct InverseProblemSetup {
    pub design: IntensityDesign,
    pub sigma2: f64,
    pub p_obs: ObservationSeries,
    pub cg: CgOptions,
}

impl InverseProblemSetup {
    pub fn new(design: IntensityDesign, sigma2: f64, p_obs: ObservationSeries, cg: CgOptions) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(invalid("sigma2", "noise variance must be positive"));
        }
        if !(cg.rtol > 0.0) || cg.maxit == 0 {
            return Err(invalid("cg", "need rtol > 0 and maxit >= 1"));
        }
        Ok(Self { design, sigma2, p_obs, cg })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapStats {
    pub iters: usize,
    /// Final residual relative to the right-hand side, in the norm induced
    /// by the preconditioner.
    pub residual: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub a_map: Field,
    pub stats: MapStats,
}

/// `(σ⁻² W*W + Γ_pr⁻¹) v`.
pub fn apply_posterior_hessian(
    solver: &WaveSolver,
    prior: &Prior,
    design: &IntensityDesign,
    sigma2: f64,
    v: &Field,
) -> Result<Field> {
    let wv = solver.apply_w(v, design)?;
    let mut out = solver.apply_wstar(&wv, design)?.0 / sigma2;
    out += prior.apply_inv(v)?.0;
    Ok(Field(out))
}

pub fn map_estimate(setup: &InverseProblemSetup, solver: &WaveSolver, prior: &Prior) -> Result<MapResult> {
    map_estimate_monitored(setup, solver, prior, |_, _| {})
}

/// As [`map_estimate`], calling `monitor(k, x_k)` for the initial guess and
/// every iterate.
pub fn map_estimate_monitored(
    setup: &InverseProblemSetup,
    solver: &WaveSolver,
    prior: &Prior,
    mut monitor: impl FnMut(usize, &Field),
) -> Result<MapResult> {
    let mass = prior.mass();
    let dot = |a: &DVector<f64>, b: &DVector<f64>| m_inner(mass, a, b);
    let design = &setup.design;
    let s2 = setup.sigma2;
    let a0 = prior.mean();

    // b = σ⁻² W* p + Γ⁻¹ a₀ and r₀ = b - H a₀ = σ⁻² W*(p - W a₀)
    let wstar_p = solver.apply_wstar(&setup.p_obs, design)?.0 / s2;
    let rhs = &wstar_p + prior.apply_inv(a0)?.0;
    let rhs_norm = dot(&rhs, &prior.apply(&Field(rhs.clone()))?.0).max(0.0).sqrt();

    let mut x = a0.0.clone();
    let mut misfit = setup.p_obs.clone();
    misfit.values -= solver.apply_w(a0, design)?.values;
    let mut r = solver.apply_wstar(&misfit, design)?.0 / s2;
    let mut z = prior.apply(&Field(r.clone()))?.0;
    let mut rz = dot(&r, &z);
    let rel = |rz: f64| if rhs_norm > 0.0 { rz.max(0.0).sqrt() / rhs_norm } else { rz.max(0.0).sqrt() };

    monitor(0, &Field(x.clone()));
    let mut history = vec![rel(rz)];
    let mut best = (rel(rz), x.clone());
    let mut iters = 0;
    let mut p = z.clone();
    while best.0 > setup.cg.rtol && iters < setup.cg.maxit {
        let hp = apply_posterior_hessian(solver, prior, design, s2, &Field(p.clone()))?.0;
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            return Err(invalid("posterior Hessian", format!("lost positive curvature ({php:e})")));
        }
        let step = rz / php;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &hp, 1.0);
        z = prior.apply(&Field(r.clone()))?.0;
        let rz_new = dot(&r, &z);
        iters += 1;
        let res = rel(rz_new);
        if !res.is_finite() {
            return Err(Error::NonFinite { step: iters });
        }
        history.push(res);
        monitor(iters, &Field(x.clone()));
        if res < best.0 {
            best = (res, x.clone());
        }
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    let converged = best.0 <= setup.cg.rtol;
    Ok(MapResult {
        a_map: Field(best.1),
        stats: MapStats { iters, residual: best.0, converged, residual_history: history },
    })
}

/// `‖a - a_true‖_M / ‖a_true‖_M`.
pub fn rel_error(a: &Field, a_true: &Field, mass: &CsrMatrix<f64>) -> Result<f64> {
    let den = a_true.m_norm(mass);
    if den == 0.0 {
        return Err(invalid("a_true", "reference field has zero norm"));
    }
    Ok(Field(&a.0 - &a_true.0).m_norm(mass) / den)
}

/// Adds i.i.d. `N(0, σ²)` noise to every entry, time level by time level.
pub fn add_noise(obs: &ObservationSeries, sigma: f64, seed: u64) -> Result<ObservationSeries> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", "standard deviation must be nonnegative"));
    }
    let mut out = obs.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.values.as_mut_slice() {
        *v += dist.sample(&mut rng);
    }
    Ok(out)
}

/// One JSON line per reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub iters: usize,
    pub residual: f64,
    pub rel_error: Option<f64>,
    pub seed: u64,
}

impl StatsRecord {
    pub fn write_line(&self, mut out: impl Write) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{s}")?;
        Ok(())
    }
}

pub fn write_field_csv(mut out: impl Write, mesh: &Mesh, a: &Field) -> Result<()> {
    writeln!(out, "node,x,y,value")?;
    for (i, (p, v)) in mesh.nodes.iter().zip(a.0.iter()).enumerate() {
        writeln!(out, "{i},{:e},{:e},{:e}", p[0], p[1], v)?;
    }
    Ok(())
}

/// 8-bit PGM of the nodal values, min-max scaled, top row at `y = 1`.
/// Returns `(min, max)` for the sidecar scale file.
pub fn write_field_pgm(mut out: impl Write, mesh: &Mesh, a: &Field) -> Result<(f64, f64)> {
    let side = mesh.nx + 1;
    let lo = a.0.min();
    let hi = a.0.max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    write!(out, "P5\n{side} {side}\n255\n")?;
    let mut bytes = Vec::with_capacity(side * side);
    for j in (0..side).rev() {
        for i in 0..side {
            let v = (a.0[mesh.node_index(i, j)] - lo) / span;
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out.write_all(&bytes)?;
    Ok((lo, hi))
}
