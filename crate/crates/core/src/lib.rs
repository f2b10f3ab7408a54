//! Design-based estimation of mean trajectories from finite populations of
//! discretized curves.
//!
//! A population is `N` curves observed on a shared time grid of `d` points.
//! A sampling design (simple random sampling without replacement, or its
//! stratified variant) selects a subset of units; the Horvitz–Thompson
//! estimator reweights the sampled curves by their inclusion probabilities
//! to estimate the population mean trajectory, its design covariance, and
//! simultaneous confidence bands. The crate also covers the planning side
//! (dispersion-driven sample allocation across strata) and a deterministic
//! Monte Carlo harness for comparing designs on a fixed population.
//!
//! Everything downstream of a seed is reproducible: all randomness flows
//! through explicitly documented ChaCha12 streams (see `rng.rs`), so a
//! `(population, design, seed)` triple always yields the same sample.

pub mod allocate;
pub mod bands;
pub mod design;
pub mod error;
pub mod estimate;
pub mod mc;
pub mod population;

mod rng;
mod util;

pub use allocate::{Allocation, AllocationRule, StratumSummary};
pub use bands::{BandKind, ConfidenceBand};
pub use design::{Sample, SamplingDesign};
pub use error::{Error, Result};
pub use estimate::{CovarianceEstimate, FunctionalEstimate, TrueVariance};
pub use mc::{DesignConfig, ExperimentSpec, McReport, PopulationSource};
pub use population::{CurvePopulation, SyntheticSpec, TimeGrid};
pub use util::format_sig;
