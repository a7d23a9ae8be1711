//! The agent's value: the coupled n-player BSDE system solved by regression
//! Monte Carlo with Picard iteration, the mean-field contract built forward
//! against a given flow, its backward cross-check, and the optimal intensities.

mod contract;
mod features;
mod intensity;
mod regression;
mod solver;

pub use contract::{
    build_meanfield_contract, build_meanfield_paths, expand_blocks, sample_y0, ContractSpec,
    DiscreteMeasure, MeanFieldContract, MeanFieldPaths, PlayerContract,
};
pub use features::Coupling;
pub use intensity::{
    meanfield_intensity, meanfield_intensity_with, optimal_intensity, optimal_intensity_from_values,
};
pub use regression::{LeastSquares, RegressionConfig};
pub use solver::{solve_meanfield_bsde, solve_nplayer, BsdeSolution, NPlayerProblem, SolveOptions};
