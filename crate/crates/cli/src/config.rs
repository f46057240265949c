use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub physics: PhysicsConfig,
    pub prior: PriorConfig,
    pub noise: NoiseConfig,
    pub design: DesignConfig,
    pub oed: OedConfig,
    pub solver: SolverConfig,
    pub io: IoConfig,
    pub phantom: PhantomConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Defaults to the smallest even count with `c dt / h <= 1`.
    pub nt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub alpha: f64,
    pub r0: f64,
    pub c: f64,
    /// Overrides the damping derived from `r0`.
    pub b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKindName {
    Bilaplacian,
    Ou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKindName,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub ell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(rename = "I")]
    pub amplitude: f64,
    pub d: Vec<f64>,
    pub omega: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OedConfig {
    /// Projection rank; defaults to `min(160, n/4)`.
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub tol: f64,
    pub maxit: usize,
    /// `M_H1 = h1_factor · ‖i₀‖_{H¹}` with `i₀` the configured design.
    pub h1_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointName {
    Consistent,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub cg_rtol: f64,
    pub cg_maxit: usize,
    pub adjoint: AdjointName,
    /// Moving-average window (time steps) applied to data before the adjoint.
    pub smoothing: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub outdir: PathBuf,
    pub emit_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: [f64; 2],
    /// `[radius]` for disks, `[width, height]` for rectangles.
    pub size: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shapes: Vec<Shape>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { nx: 20 }
    }
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_final: 0.2, nt: None }
    }
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { alpha: 0.3, r0: 1e-4, c: 300.0, b: None }
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { kind: PriorKindName::Bilaplacian, gamma: 1.0, delta: 8.0, eta: 0.1, ell: 0.1 }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma2: 1e-2, seed: 0 }
    }
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { amplitude: 100.0, d: vec![1.0, 0.0, 0.0, 0.0, 0.0], omega: 100.0 * PI, k: 5 }
    }
}

impl Default for OedConfig {
    fn default() -> Self {
        Self { n: None, tol: 1e-6, maxit: 500, h1_factor: 4.0 }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { cg_rtol: 1e-8, cg_maxit: 200, adjoint: AdjointName::Consistent, smoothing: None }
    }
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { outdir: PathBuf::from("out"), emit_images: true }
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shapes: vec![
                Shape { kind: ShapeKind::Disk, center: [-0.3, 0.25], size: vec![0.18], value: 1.0 },
                Shape { kind: ShapeKind::Disk, center: [0.3, 0.3], size: vec![0.15], value: 0.5 },
                Shape { kind: ShapeKind::Rect, center: [0.05, -0.3], size: vec![0.6, 0.25], value: 1.0 },
            ],
        }
    }
}


fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let nx = self.mesh.nx;
        if nx < 10 || !nx.is_multiple_of(10) {
            return Err(CliError::Config(format!("mesh.nx must be a positive multiple of 10, got {nx}")));
        }
        positive("time.T", self.time.t_final)?;
        if let Some(nt) = self.time.nt {
            if nt == 0 || nt % 2 != 0 {
                return Err(CliError::Config(format!("time.nt must be even and positive, got {nt}")));
            }
        }
        let a = self.physics.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("physics.alpha must lie in (0,1), got {a}")));
        }
        positive("physics.c", self.physics.c)?;
        if !(self.physics.r0 >= 0.0) || self.physics.b.is_some_and(|b| !(b >= 0.0)) {
            return Err(CliError::Config("physics.r0 and physics.b must be nonnegative".into()));
        }
        positive("prior.gamma", self.prior.gamma)?;
        positive("prior.delta", self.prior.delta)?;
        positive("prior.eta", self.prior.eta)?;
        positive("prior.ell", self.prior.ell)?;
        positive("noise.sigma2", self.noise.sigma2)?;
        positive("design.I", self.design.amplitude)?;
        positive("design.omega", self.design.omega)?;
        if self.design.k == 0 || self.design.d.len() != self.design.k {
            return Err(CliError::Config(format!(
                "design.d must have K = {} entries, got {}",
                self.design.k,
                self.design.d.len()
            )));
        }
        if self.design.d.iter().map(|x| x.abs()).sum::<f64>() > 1.0 + 1e-12 {
            return Err(CliError::Config("design.d must satisfy |d|₁ <= 1".into()));
        }
        if self.oed.n == Some(0) {
            return Err(CliError::Config("oed.N must be at least 1".into()));
        }
        positive("oed.tol", self.oed.tol)?;
        positive("oed.h1_factor", self.oed.h1_factor)?;
        positive("solver.cg_rtol", self.solver.cg_rtol)?;
        if self.solver.cg_maxit == 0 || self.oed.maxit == 0 {
            return Err(CliError::Config("iteration limits must be at least 1".into()));
        }
        for s in &self.phantom.shapes {
            let want = match s.kind {
                ShapeKind::Disk => 1,
                ShapeKind::Rect => 2,
            };
            if s.size.len() != want || s.size.iter().any(|&v| !(v > 0.0)) {
                return Err(CliError::Config(format!("{:?} needs {want} positive size entries", s.kind)));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.time.nt.unwrap_or_else(|| {
            fracpat_core::TimeGrid::cfl_steps(self.time.t_final, self.physics.c, 2.0 / self.mesh.nx as f64)
        })
    }

    pub fn rank(&self) -> usize {
        let n = (self.mesh.nx + 1).pow(2);
        self.oed.n.unwrap_or_else(|| 160.min(n / 4)).min(n)
    }
}
