//! Numerical workbench for CMZ structures: Young towers whose base is
//! reached through a fast subset, with polynomially decaying return tails.
//!
//! The crate builds synthetic towers with prescribed return-time tails and
//! simulates polynomially mixing systems: two falling balls, plus billiards
//! with focusing petals or flat points. It then checks tail transfer and
//! correlation decay on their output.
//!
//! * [`rv`]: regularly varying functions, index estimation, tail sums.
//! * [`tower`]: synthetic models, exact tails, Monte-Carlo tower runs.
//! * [`dynamics`]: event-driven simulators and first-return streams.
//! * [`estat`]: empirical tails, correlations, Green-Kubo, CLT diagnostics.
//! * [`curves`]: standard families, the `Z` function, growth checks.
//! * [`runner`]: JSON-configured experiments with checksummed artifacts.
//! * [`acceptance`]: the end-to-end criteria, shared by tests and the CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod curves;
pub mod dynamics;
pub mod estat;
pub mod fit;
pub mod runner;
pub mod rv;
pub mod seed;
pub mod tower;

pub use rv::{Modifier, RegVar};
pub use tower::{CmzModel, TailCurve, TailKind};
