//! Post-hoc analytics: learning-curve time warping, parameter counting,
//! oversmoothing and empirical Lipschitz estimates.

mod contraction;
mod params;
mod smoothness;
mod warp;

pub use contraction::contraction_estimate;
pub use params::{count_params, ParamComparison, ParamReport};
pub use smoothness::{dirichlet_energy, smoothness_report, DirichletEnergy, SmoothnessReport};
pub use warp::{time_warp_fit, time_warp_fit_series, warp_grid, WarpFit, GRID_MAX, GRID_MIN, GRID_POINTS};

#[cfg(test)]
mod tests;
