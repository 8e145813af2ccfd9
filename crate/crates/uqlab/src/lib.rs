//! Benchmark laboratory for uncertainty quantification at desk scale.
//!
//! The crate builds three synthetic benchmark tracks end to end:
//!
//! * **Regression** — tree-biomass samples generated from an allometric
//!   ground-truth model ([`biomass`]), a Monte-Carlo reference for the
//!   aleatoric standard deviation of the labels ([`oracle`]), small
//!   heteroscedastic MLPs ([`nn`]) and the UQ inference procedures that
//!   are scored against the reference ([`uq`], [`metrics`]).
//! * **Segmentation** — toy scenes with pixel-level corruption and the
//!   logit-space entropy machinery used to compare predicted against
//!   reference aleatoric entropy ([`seg`]).
//! * **Classification** — multi-vote labels, distributional encodings,
//!   the KL training loss and calibration scoring ([`labels`]).
//!
//! Everything is deterministic given a single root [`rng::Seed`]; heavy
//! inner loops run on rayon when the `parallel` feature (default) is
//! enabled and fall back to sequential execution otherwise. Results are
//! identical either way.

pub mod bench;
pub mod biomass;
pub mod config;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub(crate) mod par;
pub mod rng;
pub mod seg;
pub mod uq;

pub use error::{Error, Result};
