//! AR-sieve replication of per-unit residual processes.
//!
//! For each unit: regress the response series on its regressors, fit an
//! AR(1) to the residuals, regenerate `m` residual series by recursing the
//! fitted AR(1) with resampled innovations, rebuild pseudo-responses on top
//! of the fitted values, refit, and keep the re-estimated ρ̂ of each replicate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar1::fit_ar1;
use crate::error::{Error, Result};
use crate::ols::{Design, QrFactor};
use crate::panel::{PanelDataset, Regressors};
use crate::rng::{self, tag};

/// Discarded recursion steps before a replicate is recorded.
pub const BURN_IN: usize = 50;

/// Innovations whose spread is below this fraction of the residual scale
/// are treated as identically zero.
const ZERO_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SieveSettings {
    /// Replicates per unit (m).
    pub replicates: usize,
    pub regressors: Regressors,
}

impl Default for SieveSettings {
    fn default() -> Self {
        Self {
            replicates: 100,
            regressors: Regressors::Full,
        }
    }
}

/// Innovations minus their mean.
pub fn center(innovations: &[f64]) -> Vec<f64> {
    let mean = innovations.iter().sum::<f64>() / innovations.len() as f64;
    innovations.iter().map(|a| a - mean).collect()
}

/// Fills `out` with `e*_t = ρ̂ e*_{t−1} + a_t`, started at zero [`BURN_IN`]
/// steps before the first kept value. `pool` must already be centered.
fn replicate_into<R: Rng + ?Sized>(pool: &[f64], rho: f64, out: &mut [f64], rng: &mut R) {
    let mut e = 0.0;
    for _ in 0..BURN_IN {
        e = rho * e + pool[rng.random_range(0..pool.len())];
    }
    for slot in out.iter_mut() {
        e = rho * e + pool[rng.random_range(0..pool.len())];
        *slot = e;
    }
}

/// Generates `count` sieve replicates of length `length`, drawing
/// innovations with replacement from the centered `innovations`.
pub fn sieve_replicate<R: Rng + ?Sized>(
    innovations: &[f64],
    rho_hat: f64,
    length: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if innovations.is_empty() {
        return Err(Error::InvalidSettings("no innovations to resample".into()));
    }
    if rho_hat.is_nan() || rho_hat.abs() >= 1.0 {
        return Err(Error::InvalidSettings(format!("|rho| must be below 1, got {rho_hat}")));
    }
    let pool = center(innovations);
    Ok((0..count)
        .map(|_| {
            let mut series = vec![0.0; length];
            replicate_into(&pool, rho_hat, &mut series, rng);
            series
        })
        .collect())
}

/// Per-unit ρ̂ values from the sieve replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoMatrix {
    /// `estimates[i]` holds the successful replicates of unit i, in replicate order.
    pub estimates: Vec<Vec<f64>>,
    /// Requested replicates per unit (m).
    pub replicates: usize,
    /// ρ̂ of each unit's own residuals, before replication.
    pub direct: Vec<f64>,
    /// Replicates dropped per unit because the refit was degenerate.
    pub failed: Vec<usize>,
    pub seed: u64,
    pub seed_scheme: String,
}

impl RhoMatrix {
    pub fn n_units(&self) -> usize {
        self.estimates.len()
    }

    /// Row-major flattening of every estimate.
    pub fn values(&self) -> Vec<f64> {
        self.estimates.concat()
    }

    pub fn len(&self) -> usize {
        self.estimates.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grand_mean(&self) -> f64 {
        self.estimates.iter().flatten().sum::<f64>() / self.len() as f64
    }
}

struct UnitRhos {
    direct: f64,
    estimates: Vec<f64>,
    failed: usize,
}

fn unit_rhos(
    dataset: &PanelDataset,
    unit: usize,
    settings: &SieveSettings,
    seed: u64,
) -> Result<UnitRhos> {
    let design = dataset.unit_design(unit, settings.regressors);
    series_rhos(&design, dataset.unit_y(unit), settings.replicates, seed, unit)
}

/// Steps T.1 to T.5 for a single response series against its design.
fn series_rhos(
    design: &Design,
    y: &[f64],
    replicates: usize,
    seed: u64,
    unit: usize,
) -> Result<UnitRhos> {
    let factor = QrFactor::new(design)?;
    let fit = factor.fit(design, y)?;
    let ar = fit_ar1(&fit.residuals)?;
    let pool = center(&ar.innovations);

    // With no innovation spread the burn-in recursion collapses to zero, so
    // the replicate is anchored at the observed residual path instead.
    let scale = fit.residuals.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let anchored = pool.iter().all(|a| a.abs() <= ZERO_SPREAD * scale);

    let n_times = y.len();
    let mut e_star = vec![0.0; n_times];
    let mut y_star = vec![0.0; n_times];
    let mut estimates = Vec::with_capacity(replicates);
    let mut failed = 0;
    for k in 0..replicates {
        if anchored {
            e_star.copy_from_slice(&fit.residuals);
        } else {
            let mut rng = rng::stream(seed, &[tag::SIEVE, unit as u64, k as u64]);
            replicate_into(&pool, ar.rho_hat, &mut e_star, &mut rng);
        }
        for ((ys, f), e) in y_star.iter_mut().zip(&fit.fitted).zip(&e_star) {
            *ys = f + e;
        }
        match fit_ar1(&factor.residuals(&y_star)) {
            Ok(refit) => estimates.push(refit.rho_hat),
            Err(Error::DegenerateSeries) => failed += 1,
            Err(other) => return Err(other),
        }
    }
    Ok(UnitRhos {
        direct: ar.rho_hat,
        estimates,
        failed,
    })
}

/// Runs the per-unit sieve and collects the N×m matrix of re-estimated ρ̂.
///
/// Replicate k of unit i always draws from stream `(seed, SIEVE, i, k)`,
/// so the result does not depend on thread count.
pub fn collect_rho_estimates(
    dataset: &PanelDataset,
    settings: &SieveSettings,
    seed: u64,
) -> Result<RhoMatrix> {
    if settings.replicates == 0 {
        return Err(Error::InvalidSettings("need at least one sieve replicate".into()));
    }
    let per_unit: Vec<Result<UnitRhos>> = (0..dataset.n_units())
        .into_par_iter()
        .map(|i| unit_rhos(dataset, i, settings, seed))
        .collect();
    let mut matrix = RhoMatrix {
        estimates: Vec::with_capacity(dataset.n_units()),
        replicates: settings.replicates,
        direct: Vec::with_capacity(dataset.n_units()),
        failed: Vec::with_capacity(dataset.n_units()),
        seed,
        seed_scheme: format!("{} path=[SIEVE, unit, replicate]", rng::SEED_SCHEME),
    };
    for (unit, result) in per_unit.into_iter().enumerate() {
        let rhos = result.map_err(|e| Error::UnestimableUnit {
            unit,
            reason: e.to_string(),
        })?;
        if rhos.estimates.is_empty() {
            return Err(Error::UnestimableUnit {
                unit,
                reason: "every sieve replicate was degenerate".into(),
            });
        }
        matrix.direct.push(rhos.direct);
        matrix.estimates.push(rhos.estimates);
        matrix.failed.push(rhos.failed);
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::small_panel;
    use crate::panel::PanelParts;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_innovations_give_zero_replicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reps = sieve_replicate(&[0.0; 10], 0.9, 15, 4, &mut rng).unwrap();
        assert_eq!(reps.len(), 4);
        assert!(reps.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_count_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sieve_replicate(&[1.0, -1.0], 0.5, 10, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn rejects_nonstationary_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sieve_replicate(&[1.0, -1.0], 1.0, 10, 1, &mut rng).is_err());
        assert!(sieve_replicate(&[], 0.5, 10, 1, &mut rng).is_err());
    }

    #[test]
    fn replicate_variance_matches_stationary_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let innovations: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let reps = sieve_replicate(&innovations, 0.5, 200, 500, &mut rng).unwrap();
        let all: Vec<f64> = reps.concat();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        let target = 4.0 / 0.75;
        assert!((var / target - 1.0).abs() < 0.15, "variance {var} vs {target}");
    }

    #[test]
    fn matrix_shape_and_bounds() {
        let d = small_panel(5, 12);
        let settings = SieveSettings {
            replicates: 7,
            ..Default::default()
        };
        let m = collect_rho_estimates(&d, &settings, 3).unwrap();
        assert_eq!(m.n_units(), 5);
        assert!(m.estimates.iter().all(|row| row.len() == 7));
        assert!(m.values().iter().all(|r| r.abs() < 1.0));
        assert_eq!(m.direct.len(), 5);
    }

    #[test]
    fn matrix_is_deterministic_across_thread_counts() {
        let d = small_panel(6, 15);
        let settings = SieveSettings {
            replicates: 20,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| collect_rho_estimates(&d, &settings, 99).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_replicates_rejected() {
        let d = small_panel(3, 6);
        let settings = SieveSettings {
            replicates: 0,
            ..Default::default()
        };
        assert!(collect_rho_estimates(&d, &settings, 0).is_err());
    }

    #[test]
    fn collinear_unit_is_unestimable() {
        let mut parts = PanelParts {
            n_units: 2,
            n_times: 6,
            n_covariates: 1,
            n_neighborhood_vars: 1,
            neighborhood: vec![1, 2],
            unit_ids: vec!["a".into(), "b".into()],
            time_ids: (0..6).map(|t| t.to_string()).collect(),
            ..Default::default()
        };
        for i in 0..2 {
            for t in 0..6 {
                let x = t as f64;
                parts.x.push(x);
                // Unit 1 has w = 2x, collinear with its covariate.
                parts.w.push(if i == 1 { 2.0 * x } else { ((t * 5) % 3) as f64 });
                parts.y.push(x + (t as f64).sin());
            }
        }
        let d = PanelDataset::new(parts).unwrap();
        let err = collect_rho_estimates(&d, &SieveSettings::default(), 0).unwrap_err();
        assert!(matches!(err, Error::UnestimableUnit { unit: 1, .. }), "{err:?}");
    }

    #[test]
    fn noiseless_closure_reproduces_input_rho() {
        // Residual path is an exact AR(1) recursion, orthogonal to the design.
        let n_times = 30;
        let path: Vec<f64> = (0..n_times).map(|t| 0.6f64.powi(t as i32)).collect();
        let raw: Vec<f64> = (0..n_times).map(|t| ((t * 7) % 5) as f64 + 1.0).collect();
        let proj = raw.iter().zip(&path).map(|(a, b)| a * b).sum::<f64>()
            / path.iter().map(|b| b * b).sum::<f64>();
        let x: Vec<f64> = raw.iter().zip(&path).map(|(a, b)| a - proj * b).collect();
        let design = Design::new(n_times, 1, x.clone()).unwrap();
        let y: Vec<f64> = x.iter().zip(&path).map(|(xi, e)| 2.0 * xi + e).collect();
        let factor = QrFactor::new(&design).unwrap();
        let fit = factor.fit(&design, &y).unwrap();
        let ar = fit_ar1(&fit.residuals).unwrap();
        assert!((ar.rho_hat - 0.6).abs() < 1e-12);

        let rhos = series_rhos(&design, &y, 5, 1, 0).unwrap();
        assert_eq!(rhos.estimates.len(), 5);
        for r in &rhos.estimates {
            assert!((r - ar.rho_hat).abs() < 1e-12, "{r} vs {}", ar.rho_hat);
        }
    }
}
