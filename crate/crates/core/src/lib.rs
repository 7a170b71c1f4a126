//! Monte Carlo study of move-based discrete delta hedging.
//!
//! The library simulates risky-asset paths, hedges a European call either
//! on an equidistant grid or whenever the delta drifts by a fixed threshold,
//! and compares the resulting error and trade statistics with their
//! asymptotic constants computed by quadrature.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod error;
pub mod hedge;
pub mod limits;
pub mod model;
pub mod normal;
pub mod pricing;
pub mod rng;
pub mod stats;

pub use error::{HedgeError, Result};
pub use model::{MarketModel, Path, PathGenerator, TimeGrid, VolatilitySpec};
pub use pricing::{bs_closed_form, pde_surface, ContractSpec, PdeGridConfig, PricingSurface};
pub use rng::RngPolicy;
