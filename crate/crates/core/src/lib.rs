//! Multiscale forward SDEs, their averaged limits and backward stochastic
//! variational inequalities driven by them.

// `!(v > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod brownian;
pub mod bsvi;
pub mod convex;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod regression;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use brownian::{refine_brownian, sample_brownian, BrownianBatch};
pub use bsvi::{solve_bsvi, BsviOptions, BsviSolution};
pub use convex::{ConvexFunction, ScalarConvex};
pub use error::{Error, Result};
pub use forward::{euler_averaged, euler_multiscale, ForwardPathBatch, Mode, Start};
pub use grid::{make_grid, TimeGrid};
pub use regression::RegressionBasis;
pub use scenario::Scenario;
pub use stats::{MeanEstimate, Verdict};
