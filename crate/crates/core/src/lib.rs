//! Photoacoustic tomography in fractionally damped media: finite element
//! discretization, forward and adjoint wave solvers, Gaussian priors, MAP
//! reconstruction and A-optimal design of the laser intensity.

pub mod error;
pub mod fracwave;
pub mod grid_fem;
pub mod linalg;
pub mod map_reconstruct;
pub mod oed;
pub mod priors;

pub use error::{Error, Result};
pub use fracwave::{
    AdjointQuadrature, Field, ForwardSolution, FracParams, IntensityDesign, ObservationSeries,
    TimeGrid, WaveSolver,
};
pub use grid_fem::{assemble, build_mesh, FemMatrices, Mesh};
