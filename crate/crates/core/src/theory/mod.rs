//! Asymptotic theory of the logistic MLE: the link family, the proximal
//! operator, the `(α⋆, σ⋆, λ⋆)` fixed-point system and the Monte-Carlo
//! existence frontier.

mod fixed_point;
mod frontier;
mod link;
mod quadrature;

pub use fixed_point::{
    solve_fixed_point, solve_fixed_point_with, system_residuals, FixedPoint, SolverOptions, TheoryInputs,
};
pub use frontier::{
    build_frontier, exists_mle, frontier_cache_path, load_or_build_frontier, mc_separability_prob, FrontierCurve,
    FrontierKnot, KnotFailure, FRONTIER_SCHEMA,
};
pub use link::{prox, rho_family};
pub use quadrature::{GaussHermite, QuadratureGrid, DEFAULT_ORDER};
