//! A-optimal design of the laser intensity: misfit Gram tensor, projected
//! posterior trace and its gradient, admissible set and projected-gradient
//! optimizer.

mod design;
mod gram;
mod optimize;
mod trace;

pub use design::{
    h1_norm_intensity, project_ellipsoid, project_l1_ball, simpson_fine, DesignConstraints,
};
pub use gram::{load_gram, precompute_gram, save_gram, GramMeta, MisfitGram};
pub use optimize::{optimize_design, write_history_csv, DesignResult, HistoryRow, OptimizeOptions};
pub use trace::{
    grad_phi_n, misfit_hessian, phi_n, prior_representation, trace_general_projection,
    trace_of_inverse,
};
