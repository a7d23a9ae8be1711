//! Time grids, seeded Brownian increments, empirical measure flows and
//! Wasserstein-2 distances (marginal, and on paths with the sup norm from `t`).

mod assignment;
mod brownian;
mod flow;
mod grid;
mod wasserstein;

pub use assignment::solve_assignment;
pub use brownian::{
    generate_brownian, generate_brownian_capped, BrownianSource, PathBundle, DEFAULT_MEMORY_CAP,
    GENERATOR_VARIANT,
};
pub use flow::{EmpiricalMarginal, FlowMetadata, FlowRole, MeasureFlow};
pub use grid::TimeGrid;
pub use wasserstein::{
    sup_cost_matrix, w2_marginal, w2_marginal_sup, w2_path_auto, w2_path_coupled, w2_path_exact,
    w2_path_exact_capped, w2_path_exact_sq_all, DistanceKind, DEFAULT_ASSIGNMENT_CAP,
};
