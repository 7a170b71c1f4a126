//! Limit constants by quadrature and simulated convergence studies.

mod constants;
mod density;
pub mod quadrature;
mod study;

pub use constants::{
    limit_constants, theoretical_adaptive_limit, theoretical_equidistant_limit, theoretical_rebalance_limit,
    DiscountVariant, LimitConstants, QuadratureConfig, RICHARDSON_TOLERANCE,
};
pub use study::{
    isometry_bound_check, run_convergence_study, study_grid, validate_ladder, BoundLevel, BoundReport,
    ConvergenceStudy, GridConfig, LadderKind, LevelEstimate, StudyConfig, VariantArbitration, UNDERPOWERED_SE,
};
