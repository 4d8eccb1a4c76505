//! Nonparametric tests for temporary structural change and spatial
//! heterogeneity in spatio-temporal panels
//! `y_it = x_it β + w_it δ + ε_it`, `ε_it = ρ ε_i,t−1 + a_it`.
//!
//! * [`sieve`] and [`inference::structural_change_test`]: AR-sieve
//!   replication of each unit's residual process, then a percentile
//!   bootstrap interval for ρ.
//! * [`forward`] and [`inference::spatial_heterogeneity_test`]: forward
//!   search for a robust δ̂ at each time point, then a percentile bootstrap
//!   interval that the full-sample δ̂'s are compared against.
//! * [`inference::joint_test`]: backfitting of the two estimation phases.
//! * [`dgp`] and [`experiment`]: the simulation design and the harness that
//!   produces coverage tables.

pub mod ar1;
pub mod bootstrap;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod inference;
pub mod io;
pub mod ols;
pub mod panel;
pub mod rng;
pub mod sieve;

pub use ar1::{fit_ar1, Ar1Fit};
pub use bootstrap::{percentile_bootstrap_ci, BootstrapCI, BootstrapSettings, IntervalBasis, Statistic};
pub use dgp::{generate, calibrate_r2, DgpConfig, GroundTruth};
pub use error::{Error, Result};
pub use forward::{forward_search, forward_search_panel, ForwardSearchSettings, ForwardSearchTrace};
pub use inference::{
    joint_test, spatial_heterogeneity_test, structural_change_test, JointSettings, SpatialSettings,
    StructuralSettings, TestKind, TestOutcome,
};
pub use ols::{cooks_distance, fit_ols, Design, ModelFit};
pub use panel::{PanelDataset, PanelParts, Regressors};
pub use sieve::{collect_rho_estimates, sieve_replicate, RhoMatrix, SieveSettings};
