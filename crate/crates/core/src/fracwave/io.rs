use std::io::Write;

use nalgebra::DMatrix;

use super::ObservationSeries;
use crate::error::Result;

/// One row per time level: `t,<node ids...>`.
pub fn write_trajectory_csv(
    mut out: impl Write,
    traj: &DMatrix<f64>,
    node_ids: &[usize],
    dt: f64,
) -> Result<()> {
    write!(out, "t")?;
    for id in node_ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for j in 0..traj.ncols() {
        write!(out, "{:e}", j as f64 * dt)?;
        for &id in node_ids {
            write!(out, ",{:e}", traj[(id, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Observation traces with the same layout; `obs_nodes` labels the rows of
/// the series.
pub fn write_observations_csv(
    mut out: impl Write,
    obs: &ObservationSeries,
    obs_nodes: &[usize],
    dt: f64,
) -> Result<()> {
    write!(out, "t")?;
    for id in obs_nodes {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for j in 0..obs.n_times() {
        write!(out, "{:e}", j as f64 * dt)?;
        for r in 0..obs.n_obs() {
            write!(out, ",{:e}", obs.values[(r, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
