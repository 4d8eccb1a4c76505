//! AR(1) fitting of residual series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ρ̂ is clamped into `(-RHO_BOUND, RHO_BOUND)` so replication stays stationary.
pub const RHO_BOUND: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fit {
    pub rho_hat: f64,
    /// `a_t = e_t − ρ̂ e_{t−1}`, t = 1..T−1.
    pub innovations: Vec<f64>,
    /// Σ a_t² / (T − 2).
    pub innovation_variance: f64,
}

/// Conditional least squares: the no-intercept slope of `e_t` on `e_{t-1}`.
pub fn fit_ar1(series: &[f64]) -> Result<Ar1Fit> {
    if series.len() < 3 {
        return Err(Error::SeriesTooShort { len: series.len() });
    }
    let (mut cross, mut lagged) = (0.0, 0.0);
    for pair in series.windows(2) {
        cross += pair[1] * pair[0];
        lagged += pair[0] * pair[0];
    }
    if lagged == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    let rho_hat = (cross / lagged).clamp(-RHO_BOUND, RHO_BOUND);
    let innovations: Vec<f64> = series.windows(2).map(|p| p[1] - rho_hat * p[0]).collect();
    let innovation_variance =
        innovations.iter().map(|a| a * a).sum::<f64>() / (innovations.len() - 1) as f64;
    Ok(Ar1Fit {
        rho_hat,
        innovations,
        innovation_variance,
    })
}
