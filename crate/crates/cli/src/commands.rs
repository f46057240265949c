use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fracpat_core::fracwave::{write_observations_csv, write_trajectory_csv};
use fracpat_core::map_reconstruct::{
    add_noise, map_estimate, rel_error, write_field_csv, write_field_pgm, CgOptions,
    InverseProblemSetup, MapStats, StatsRecord,
};
use fracpat_core::oed::{
    load_gram, optimize_design, phi_n, precompute_gram, save_gram, write_history_csv,
    DesignConstraints, GramMeta, MisfitGram, OptimizeOptions,
};
use fracpat_core::priors::{Prior, PriorKind, PriorSpec};
use fracpat_core::{
    assemble, build_mesh, AdjointQuadrature, FemMatrices, Field, FracParams, IntensityDesign,
    Mesh, ObservationSeries, TimeGrid, WaveSolver,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{AdjointName, ExperimentConfig, PriorKindName};
use crate::error::CliError;
use crate::phantom::build_phantom;

/// Mesh, matrices, solver and prior for one configuration.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub mesh: Mesh,
    pub fem: FemMatrices,
    pub solver: WaveSolver,
    pub prior: Prior,
    pub phantom: Field,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let nt = cfg.n_steps();
        let mesh = build_mesh(cfg.mesh.nx)?;
        let pc = &cfg.prior;
        let fem = assemble(&mesh, pc.gamma, pc.delta, nt, cfg.time.t_final)?;
        let ph = &cfg.physics;
        let params = match ph.b {
            Some(b) => FracParams::new(ph.alpha, b, ph.c)?,
            None => FracParams::from_attenuation(ph.alpha, ph.c, ph.r0)?,
        };
        let grid = TimeGrid::new(cfg.time.t_final, nt, ph.alpha)?;
        let quad = match cfg.solver.adjoint {
            AdjointName::Consistent => AdjointQuadrature::Consistent,
            AdjointName::Continuous => AdjointQuadrature::Continuous,
        };
        let solver = WaveSolver::new(&mesh, &fem, params, grid)?
            .with_quadrature(quad)
            .with_smoothing(cfg.solver.smoothing);
        let kind = match pc.kind {
            PriorKindName::Bilaplacian => PriorKind::BiLaplacian { gamma: pc.gamma, delta: pc.delta },
            PriorKindName::Ou => PriorKind::OrnsteinUhlenbeck { eta: pc.eta, ell: pc.ell },
        };
        let prior = Prior::new(PriorSpec::new(kind, Field::zeros(mesh.n_nodes()))?, &mesh, &fem)?;
        let phantom = build_phantom(&cfg.phantom, &mesh);
        Ok(Self { cfg: cfg.clone(), mesh, fem, solver, prior, phantom })
    }

    pub fn design(&self, amplitude: f64, d: &[f64]) -> Result<IntensityDesign, CliError> {
        Ok(IntensityDesign::new(amplitude, d.to_vec(), self.cfg.design.omega, self.cfg.time.t_final)?)
    }

    pub fn configured_design(&self) -> Result<IntensityDesign, CliError> {
        self.design(self.cfg.design.amplitude, &self.cfg.design.d)
    }

    fn seed(&self) -> u64 {
        self.cfg.noise.seed
    }

    /// Clean and noisy data for the phantom under `design`.
    pub fn synthesize(&self, design: &IntensityDesign) -> Result<(ObservationSeries, ObservationSeries), CliError> {
        let clean = self.solver.apply_w(&self.phantom, design)?;
        let noisy = add_noise(&clean, self.cfg.noise.sigma2.sqrt(), self.seed())?;
        Ok((clean, noisy))
    }

    pub fn reconstruct(&self, design: &IntensityDesign, data: &ObservationSeries) -> Result<(Field, MapStats), CliError> {
        let cg = CgOptions { rtol: self.cfg.solver.cg_rtol, maxit: self.cfg.solver.cg_maxit };
        let setup = InverseProblemSetup::new(design.clone(), self.cfg.noise.sigma2, data.clone(), cg)?;
        let r = map_estimate(&setup, &self.solver, &self.prior)?;
        Ok((r.a_map, r.stats))
    }

    /// Relative error against the phantom, `None` for a zero phantom.
    pub fn score(&self, a: &Field) -> Option<f64> {
        rel_error(a, &self.phantom, &self.fem.mass).ok()
    }

    fn gram_meta(&self) -> GramMeta {
        let p = self.solver.params();
        GramMeta {
            nx: self.cfg.mesh.nx,
            nt: self.solver.grid().nt,
            alpha: p.alpha,
            b: p.b,
            c: p.c,
            omega: self.cfg.design.omega,
            t_final: self.cfg.time.t_final,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = create(dir, name)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(f, "{text}")?;
    f.flush()?;
    Ok(())
}

fn write_image(ctx: &Context, dir: &Path, stem: &str, a: &Field) -> Result<(), CliError> {
    if !ctx.cfg.io.emit_images {
        return Ok(());
    }
    let mut f = create(dir, &format!("{stem}.pgm"))?;
    let (lo, hi) = write_field_pgm(&mut f, &ctx.mesh, a)?;
    f.flush()?;
    let mut s = create(dir, &format!("{stem}.scale.txt"))?;
    writeln!(s, "min {lo:e}\nmax {hi:e}")?;
    s.flush()?;
    Ok(())
}

fn write_field(ctx: &Context, dir: &Path, stem: &str, a: &Field) -> Result<(), CliError> {
    let mut f = create(dir, &format!("{stem}.csv"))?;
    write_field_csv(&mut f, &ctx.mesh, a)?;
    f.flush()?;
    write_image(ctx, dir, stem, a)
}

fn write_obs(ctx: &Context, dir: &Path, name: &str, obs: &ObservationSeries) -> Result<(), CliError> {
    let mut f = create(dir, name)?;
    write_observations_csv(&mut f, obs, &ctx.mesh.obs_nodes, ctx.solver.grid().dt)?;
    f.flush()?;
    Ok(())
}

/// Reads an observation CSV written by `forward`, checking it matches the
/// configured surface and time grid.
pub fn read_observations(ctx: &Context, path: &Path) -> Result<ObservationSeries, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let ids: Vec<usize> = header
        .iter()
        .skip(1)
        .map(|h| h.trim().parse::<usize>().map_err(|e| bad(format!("header {h:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if ids != ctx.mesh.obs_nodes {
        return Err(bad("observation nodes do not match the configured mesh".into()));
    }
    let nt = ctx.solver.grid().nt;
    let mut values = DMatrix::zeros(ids.len(), nt + 1);
    let mut rows = 0;
    for (j, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if j > nt || rec.len() != ids.len() + 1 {
            return Err(bad(format!("unexpected shape at row {}", j + 1)));
        }
        for (o, v) in rec.iter().skip(1).enumerate() {
            values[(o, j)] = v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        }
        rows += 1;
    }
    if rows != nt + 1 {
        return Err(bad(format!("expected {} time levels, found {rows}", nt + 1)));
    }
    Ok(ObservationSeries { values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardSummary {
    pub seed: u64,
    pub nt: usize,
    pub max_amplitude: f64,
}

/// Simulates the configured phantom and design; writes the clean and noisy
/// traces and the full trajectory.
pub fn cmd_forward(cfg: &ExperimentConfig, out: &Path) -> Result<ForwardSummary, CliError> {
    fs::create_dir_all(out)?;
    let ctx = Context::new(cfg)?;
    let design = ctx.configured_design()?;
    let sol = ctx.solver.solve_forward(&ctx.phantom, &design)?;
    let noisy = add_noise(&sol.obs, cfg.noise.sigma2.sqrt(), cfg.noise.seed)?;
    write_field(&ctx, out, "phantom", &ctx.phantom)?;
    write_obs(&ctx, out, "obs_clean.csv", &sol.obs)?;
    write_obs(&ctx, out, "obs_noisy.csv", &noisy)?;
    let ids: Vec<usize> = (0..ctx.mesh.n_nodes()).collect();
    let mut f = create(out, "trajectory.csv")?;
    write_trajectory_csv(&mut f, &sol.trajectory, &ids, ctx.solver.grid().dt)?;
    f.flush()?;
    let summary = ForwardSummary { seed: cfg.noise.seed, nt: ctx.solver.grid().nt, max_amplitude: sol.obs.max_abs() };
    write_json(out, "forward.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructSummary {
    pub iters: usize,
    pub residual: f64,
    pub converged: bool,
    pub rel_error: Option<f64>,
    pub seed: u64,
}

/// MAP reconstruction from `obs` (or from freshly synthesized noisy data).
pub fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path, obs: Option<&Path>) -> Result<ReconstructSummary, CliError> {
    fs::create_dir_all(out)?;
    let ctx = Context::new(cfg)?;
    let design = ctx.configured_design()?;
    let data = match obs {
        Some(p) => read_observations(&ctx, p)?,
        None => ctx.synthesize(&design)?.1,
    };
    let (a, stats) = ctx.reconstruct(&design, &data)?;
    let rel = ctx.score(&a);
    write_field(&ctx, out, "reconstruction", &a)?;
    let mut f = create(out, "stats.jsonl")?;
    StatsRecord { iters: stats.iters, residual: stats.residual, rel_error: rel, seed: cfg.noise.seed }.write_line(&mut f)?;
    f.flush()?;
    Ok(ReconstructSummary {
        iters: stats.iters,
        residual: stats.residual,
        converged: stats.converged,
        rel_error: rel,
        seed: cfg.noise.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigSummary {
    pub n: usize,
    pub lambda_1: f64,
    /// Trace of the covariance operator (sum of all eigenvalues).
    pub full_trace: f64,
    /// Sum of the diagonal of the OU covariance matrix.
    pub covariance_diag_sum: Option<f64>,
}

/// Exports the full prior spectrum.
pub fn cmd_eig(cfg: &ExperimentConfig, out: &Path) -> Result<EigSummary, CliError> {
    fs::create_dir_all(out)?;
    let ctx = Context::new(cfg)?;
    let n = ctx.mesh.n_nodes();
    let basis = ctx.prior.eigenbasis(n)?;
    let mut f = create(out, "eigenvalues.csv")?;
    basis.write_eigenvalues_csv(&mut f)?;
    f.flush()?;
    let summary = EigSummary {
        n,
        lambda_1: basis.lambda[0],
        full_trace: basis.full_trace,
        covariance_diag_sum: ctx.prior.covariance_diag_sum(),
    };
    write_json(out, "eig.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignScore {
    pub name: String,
    #[serde(rename = "I")]
    pub amplitude: f64,
    pub d: Vec<f64>,
    pub phi: f64,
    pub rel_error: Option<f64>,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OedSummary {
    #[serde(rename = "N")]
    pub rank: usize,
    pub i_max: f64,
    pub h1_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub initial: DesignScore,
    pub optimized: DesignScore,
    pub max_frequency: DesignScore,
    pub gram_manifest: PathBuf,
}

fn obtain_gram(ctx: &Context, out: &Path, manifest: Option<&Path>) -> Result<(MisfitGram, PathBuf), CliError> {
    let k = ctx.cfg.design.k;
    let rank = ctx.cfg.rank();
    if let Some(path) = manifest {
        let g = load_gram(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if g.meta != ctx.gram_meta() || g.n_modes != k || g.rank != rank {
            return Err(CliError::Config(format!(
                "{}: Gram tensor was computed for a different discretization",
                path.display()
            )));
        }
        return Ok((g, path.to_path_buf()));
    }
    let basis = ctx.prior.eigenbasis(rank)?;
    let g = precompute_gram(&ctx.solver, &basis, k, ctx.cfg.design.omega, ctx.cfg.mesh.nx)?;
    let path = save_gram(&out.join("gram"), &g)?;
    Ok((g, path))
}

/// Optimizes the intensity design and compares reconstructions from the
/// configured design, the optimum and the single highest-frequency design.
pub fn cmd_oed(cfg: &ExperimentConfig, out: &Path, gram_manifest: Option<&Path>) -> Result<OedSummary, CliError> {
    fs::create_dir_all(out)?;
    let ctx = Context::new(cfg)?;
    let (gram, manifest) = obtain_gram(&ctx, out, gram_manifest)?;
    let dc = &cfg.design;
    let constraints = DesignConstraints::new(dc.k, dc.omega, cfg.time.t_final, dc.amplitude, &dc.d, cfg.oed.h1_factor)?;
    let opts = OptimizeOptions { tol: cfg.oed.tol, maxit: cfg.oed.maxit, ..Default::default() };
    let sigma2 = cfg.noise.sigma2;
    let result = optimize_design(&gram, &constraints, &dc.d, sigma2, &opts)?;

    let mut f = create(out, "history.csv")?;
    write_history_csv(&mut f, &result.history)?;
    f.flush()?;
    let mut f = create(out, "d_opt.csv")?;
    writeln!(f, "k,d")?;
    for (k, d) in result.d_opt.iter().enumerate() {
        writeln!(f, "{},{:e}", k + 1, d)?;
    }
    f.flush()?;

    let score = |name: &str, amplitude: f64, d: &[f64]| -> Result<DesignScore, CliError> {
        let design = ctx.design(amplitude, d)?;
        let (_, noisy) = ctx.synthesize(&design)?;
        let (a, stats) = ctx.reconstruct(&design, &noisy)?;
        write_field(&ctx, out, &format!("reconstruction_{name}"), &a)?;
        Ok(DesignScore {
            name: name.to_string(),
            amplitude,
            d: d.to_vec(),
            phi: phi_n(d, amplitude, &gram, sigma2)?,
            rel_error: ctx.score(&a),
            iters: stats.iters,
        })
    };
    let initial = score("initial", dc.amplitude, &dc.d)?;
    let optimized = score("optimized", result.i_opt, &result.d_opt)?;
    let max_frequency = score("max_frequency", constraints.i_max, &constraints.max_frequency_design())?;

    let mut f = create(out, "comparison.csv")?;
    writeln!(f, "design,I,phi,rel_error,iters")?;
    for s in [&initial, &optimized, &max_frequency] {
        let rel = s.rel_error.map_or(String::from("nan"), |r| format!("{r:e}"));
        writeln!(f, "{},{:e},{:e},{},{}", s.name, s.amplitude, s.phi, rel, s.iters)?;
    }
    f.flush()?;

    let summary = OedSummary {
        rank: gram.rank,
        i_max: constraints.i_max,
        h1_bound: constraints.h1_bound,
        iterations: result.history.len() - 1,
        converged: result.converged,
        line_search_failed: result.line_search_failed,
        initial,
        optimized,
        max_frequency,
        gram_manifest: manifest,
    };
    write_json(out, "oed.json", &summary)?;
    Ok(summary)
}
