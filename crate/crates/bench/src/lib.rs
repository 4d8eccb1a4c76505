//! Shared fixtures for the benchmarks.

use panelshift::{generate, DgpConfig, PanelDataset};

/// A calibrated null panel of the given shape.
pub fn panel(n_units: usize, n_times: usize) -> PanelDataset {
    let config = DgpConfig { n_units, n_times, r2_target: Some(0.95), seed: 17, ..Default::default() };
    generate(&config).expect("valid benchmark configuration").0
}
