//! Dynamic voluntary disclosure with Poisson information arrival: regression
//! valuations, single- and multi-agent censors, market simulation, and Monte-Carlo oracles.

// Negated comparisons deliberately reject NaN; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod censor_multi;
pub mod censor_single;
pub mod error;
pub mod market;
pub mod mathkit;
pub mod oracle;
pub mod params;
pub mod paths;
pub mod regression;

pub use censor_multi::{HypIntensityForm, MultiCensor};
pub use error::{Error, Result};
pub use params::{derive, tilde_at, DerivedParams, IntensityTable, ModelSpec, TildeParams};
pub use paths::{simulate_path, simulate_paths, PathBundle, TimeGrid};
pub use regression::{RegressionLaw, VarianceConvention};
