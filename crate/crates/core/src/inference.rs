//! Decision procedures: structural change, spatial heterogeneity, and the
//! backfitted joint test.
//!
//! Each test builds a percentile bootstrap interval from robust estimates
//! and counts how many of the compared estimates fall outside it. The null
//! is rejected when that fraction is at least α.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{percentile_bootstrap_ci, BootstrapCI, BootstrapSettings};
use crate::error::{Error, Result};
use crate::forward::{forward_search_panel, ForwardSearchSettings, ForwardSearchTrace};
use crate::ols::fit_ols;
use crate::ols::Design;
use crate::panel::{PanelDataset, Regressors};
use crate::rng::{self, tag};
use crate::sieve::{collect_rho_estimates, RhoMatrix, SieveSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Structural,
    Spatial,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StructuralSettings {
    pub sieve: SieveSettings,
    pub bootstrap: BootstrapSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SpatialSettings {
    pub search: ForwardSearchSettings,
    pub bootstrap: BootstrapSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointSettings {
    /// The sieve always runs on partial residuals without W, whatever
    /// `structural.sieve.regressors` says.
    pub structural: StructuralSettings,
    pub spatial: SpatialSettings,
    pub max_iter: usize,
    /// Stop once the largest absolute change in (β̂ slopes, δ̂, ρ̂) is below this.
    #[serde(with = "crate::io::float_or_inf")]
    pub converge_tol: f64,
}

impl Default for JointSettings {
    fn default() -> Self {
        Self {
            structural: StructuralSettings::default(),
            spatial: SpatialSettings::default(),
            max_iter: 20,
            converge_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "test")]
pub enum TestSettings {
    Structural(StructuralSettings),
    Spatial(SpatialSettings),
    Joint(JointSettings),
}

/// Everything needed to rerun a test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub seed_scheme: String,
    pub settings: TestSettings,
    pub n_units: usize,
    pub n_times: usize,
    /// Backfitting iterations performed (joint test only).
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Sieve replicates dropped because their refit was degenerate.
    pub dropped_replicates: usize,
    /// Time points whose forward search stopped early.
    pub searches_stopped: usize,
    pub notes: Vec<String>,
}

/// Decision for one δ coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateOutcome {
    pub coordinate: usize,
    pub reject: bool,
    pub fraction_outside: f64,
    pub ci: BootstrapCI,
    pub per_item_outside: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestKind,
    pub reject: bool,
    pub fraction_outside: f64,
    /// 100 · (1 − fraction_outside).
    pub coverage_pct: f64,
    pub alpha: f64,
    pub ci: BootstrapCI,
    /// N·m for the structural test, T for the spatial test.
    pub n_statistics_checked: usize,
    pub per_item_outside: Vec<bool>,
    /// Spatial tests: one entry per W column. The top-level fields repeat
    /// the coordinate with the largest fraction outside.
    pub coordinates: Vec<CoordinateOutcome>,
    pub provenance: Provenance,
}

fn outside(values: &[f64], ci: &BootstrapCI) -> (Vec<bool>, f64) {
    let flags: Vec<bool> = values.iter().map(|&v| !ci.contains(v)).collect();
    let count = flags.iter().filter(|&&o| o).count();
    let fraction = count as f64 / values.len() as f64;
    (flags, fraction)
}

fn structural_bootstrap_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, &[tag::TEST, 0])
}

fn spatial_bootstrap_seed(seed: u64, coordinate: usize) -> u64 {
    rng::derive_seed(seed, &[tag::TEST, 1, coordinate as u64])
}

fn provenance(dataset: &PanelDataset, seed: u64, settings: TestSettings) -> Provenance {
    Provenance {
        seed,
        seed_scheme: rng::SEED_SCHEME.to_string(),
        settings,
        n_units: dataset.n_units(),
        n_times: dataset.n_times(),
        iterations: None,
        converged: None,
        dropped_replicates: 0,
        searches_stopped: 0,
        notes: Vec::new(),
    }
}

/// Phase II of the structural test on an already collected ρ̂ matrix.
pub fn structural_decision(
    rho: &RhoMatrix,
    bootstrap: &BootstrapSettings,
    seed: u64,
    provenance: Provenance,
) -> Result<TestOutcome> {
    let values = rho.values();
    let ci = percentile_bootstrap_ci(&values, bootstrap, structural_bootstrap_seed(seed))?;
    let (per_item_outside, fraction_outside) = outside(&values, &ci);
    let reject = fraction_outside >= bootstrap.alpha;
    let mut provenance = provenance;
    provenance.dropped_replicates = rho.failed.iter().sum();
    Ok(TestOutcome {
        test: TestKind::Structural,
        reject,
        fraction_outside,
        coverage_pct: 100.0 * (1.0 - fraction_outside),
        alpha: bootstrap.alpha,
        ci,
        n_statistics_checked: values.len(),
        per_item_outside,
        coordinates: Vec::new(),
        provenance,
    })
}

/// Phase II of the spatial test on per-time forward-search traces.
pub fn spatial_decision(
    traces: &[ForwardSearchTrace],
    bootstrap: &BootstrapSettings,
    seed: u64,
    provenance: Provenance,
) -> Result<TestOutcome> {
    let q = traces
        .first()
        .map(|t| t.full_fit.neighborhood_cols)
        .ok_or_else(|| Error::InvalidDataset("no time points".into()))?;
    let mut coordinates = Vec::with_capacity(q);
    for j in 0..q {
        let robust: Vec<f64> = traces.iter().map(|t| t.robust_fit.delta_hat()[j]).collect();
        let full: Vec<f64> = traces.iter().map(|t| t.full_fit.delta_hat()[j]).collect();
        let ci = percentile_bootstrap_ci(&robust, bootstrap, spatial_bootstrap_seed(seed, j))?;
        let (per_item_outside, fraction_outside) = outside(&full, &ci);
        coordinates.push(CoordinateOutcome {
            coordinate: j,
            reject: fraction_outside >= bootstrap.alpha,
            fraction_outside,
            ci,
            per_item_outside,
        });
    }
    let worst = coordinates
        .iter()
        .enumerate()
        .fold(0, |best, (j, c)| {
            if c.fraction_outside > coordinates[best].fraction_outside {
                j
            } else {
                best
            }
        });
    let top = coordinates[worst].clone();
    let mut provenance = provenance;
    provenance.searches_stopped = traces.iter().filter(|t| t.triggered()).count();
    Ok(TestOutcome {
        test: TestKind::Spatial,
        reject: coordinates.iter().any(|c| c.reject),
        fraction_outside: top.fraction_outside,
        coverage_pct: 100.0 * (1.0 - top.fraction_outside),
        alpha: bootstrap.alpha,
        ci: top.ci,
        n_statistics_checked: traces.len(),
        per_item_outside: top.per_item_outside,
        coordinates,
        provenance,
    })
}

/// AR-sieve bootstrap test of no temporary structural change.
pub fn structural_change_test(
    dataset: &PanelDataset,
    settings: &StructuralSettings,
    seed: u64,
) -> Result<TestOutcome> {
    let rho = collect_rho_estimates(dataset, &settings.sieve, seed)?;
    let prov = provenance(dataset, seed, TestSettings::Structural(settings.clone()));
    structural_decision(&rho, &settings.bootstrap, seed, prov)
}

/// Forward-search bootstrap test of no spatial heterogeneity.
pub fn spatial_heterogeneity_test(
    dataset: &PanelDataset,
    settings: &SpatialSettings,
    seed: u64,
) -> Result<TestOutcome> {
    let traces = forward_search_panel(dataset, &settings.search)?;
    let prov = provenance(dataset, seed, TestSettings::Spatial(settings.clone()));
    spatial_decision(&traces, &settings.bootstrap, seed, prov)
}

/// Pooled OLS over every (unit, time) cell; used as the backfitting start.
fn pooled_coefficients(dataset: &PanelDataset) -> Result<Vec<f64>> {
    let k = dataset.n_params();
    let mut data = Vec::with_capacity(dataset.n_units() * dataset.n_times() * k);
    let mut y = Vec::with_capacity(dataset.n_units() * dataset.n_times());
    for i in 0..dataset.n_units() {
        for t in 0..dataset.n_times() {
            data.push(1.0);
            data.extend_from_slice(dataset.x(i, t));
            data.extend_from_slice(dataset.w(i, t));
            y.push(dataset.y(i, t));
        }
    }
    let design = Design::with_neighborhood_cols(y.len(), k, dataset.n_neighborhood_vars(), data)?;
    Ok(fit_ols(&design, &y)?.coefficients)
}

/// Mean over time points of the robust coefficients, intercept dropped.
fn robust_slopes(traces: &[ForwardSearchTrace]) -> Vec<f64> {
    let k = traces[0].robust_fit.coefficients.len();
    let mut mean = vec![0.0; k - 1];
    for t in traces {
        for (m, c) in mean.iter_mut().zip(&t.robust_fit.coefficients[1..]) {
            *m += c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= traces.len() as f64);
    mean
}

/// Subtracts `w · delta` from every response.
pub fn partial_residual_panel(dataset: &PanelDataset, delta: &[f64]) -> PanelDataset {
    dataset.map_y(|i, t, y| {
        y - dataset
            .w(i, t)
            .iter()
            .zip(delta)
            .map(|(w, d)| w * d)
            .sum::<f64>()
    })
}

/// Joint test by backfitting the two estimation phases.
///
/// Each iteration (a) runs the forward search on the working panel to get
/// robust slopes and δ̂, (b) runs the sieve on the partial residuals
/// `y − w δ̂` with W left out of the unit regressions, and (c) rebuilds the
/// working panel as the AR(1) quasi-difference of the data at the sieve's
/// grand-mean ρ̂. Both decisions are then taken on the last iterates.
pub fn joint_test(
    dataset: &PanelDataset,
    settings: &JointSettings,
    seed: u64,
) -> Result<(TestOutcome, TestOutcome)> {
    if settings.max_iter == 0 {
        return Err(Error::InvalidSettings("max_iter must be at least 1".into()));
    }
    if settings.converge_tol.is_nan() || settings.converge_tol < 0.0 {
        return Err(Error::InvalidSettings("converge_tol must be nonnegative".into()));
    }
    let sieve = SieveSettings {
        regressors: Regressors::CovariatesOnly,
        ..settings.structural.sieve.clone()
    };
    let q = dataset.n_neighborhood_vars();

    let mut params = pooled_coefficients(dataset)?[1..].to_vec();
    params.push(0.0);
    let mut working = dataset.clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut last = None;
    while iterations < settings.max_iter {
        iterations += 1;
        let traces = forward_search_panel(&working, &settings.spatial.search)?;
        let slopes = robust_slopes(&traces);
        let delta = &slopes[slopes.len() - q..];
        let partial = partial_residual_panel(dataset, delta);
        let rho = collect_rho_estimates(&partial, &sieve, seed)?;
        let rho_bar = rho.grand_mean();

        let mut next = slopes.clone();
        next.push(rho_bar);
        let change = next
            .iter()
            .zip(&params)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        params = next;
        last = Some((traces, rho));
        if change < settings.converge_tol {
            converged = true;
            break;
        }
        working = dataset.quasi_difference(rho_bar);
    }
    let (traces, rho) = last.expect("at least one iteration ran");

    let mut prov = provenance(dataset, seed, TestSettings::Joint(settings.clone()));
    prov.iterations = Some(iterations);
    prov.converged = Some(converged);
    if !converged {
        prov.notes.push(format!(
            "backfitting did not converge within {} iterations; decisions use the last iterates",
            settings.max_iter
        ));
    }
    let structural = structural_decision(&rho, &settings.structural.bootstrap, seed, prov.clone())?;
    let spatial = spatial_decision(&traces, &settings.spatial.bootstrap, seed, prov)?;
    Ok((structural, spatial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::small_panel;

    fn quick_structural() -> StructuralSettings {
        StructuralSettings {
            sieve: SieveSettings {
                replicates: 10,
                ..Default::default()
            },
            bootstrap: BootstrapSettings {
                resamples: 200,
                ..Default::default()
            },
        }
    }

    #[test]
    fn identical_estimates_never_reject() {
        let rho = RhoMatrix {
            estimates: vec![vec![0.4; 10]; 3],
            replicates: 10,
            direct: vec![0.4; 3],
            failed: vec![0; 3],
            seed: 0,
            seed_scheme: String::new(),
        };
        let d = small_panel(3, 6);
        let prov = provenance(&d, 0, TestSettings::Structural(quick_structural()));
        let out = structural_decision(&rho, &quick_structural().bootstrap, 0, prov).unwrap();
        assert_eq!(out.fraction_outside, 0.0);
        assert!(!out.reject);
        assert_eq!(out.n_statistics_checked, 30);
    }

    #[test]
    fn decision_is_consistent_with_fraction() {
        let d = small_panel(8, 20);
        let out = structural_change_test(&d, &quick_structural(), 5).unwrap();
        let count = out.per_item_outside.iter().filter(|&&o| o).count();
        assert_eq!(out.fraction_outside, count as f64 / out.n_statistics_checked as f64);
        assert_eq!(out.reject, out.fraction_outside >= out.alpha);
        assert_eq!(out.n_statistics_checked, 80);
        assert_eq!(out.provenance.settings, TestSettings::Structural(quick_structural()));
    }

    #[test]
    fn spatial_test_on_homogeneous_panel() {
        let d = small_panel(16, 12);
        let settings = SpatialSettings {
            bootstrap: BootstrapSettings {
                resamples: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = spatial_heterogeneity_test(&d, &settings, 1).unwrap();
        assert_eq!(out.n_statistics_checked, 12);
        assert_eq!(out.coordinates.len(), 1);
        assert_eq!(out.reject, out.fraction_outside >= out.alpha);
        assert_eq!(
            out.fraction_outside,
            out.per_item_outside.iter().filter(|&&o| o).count() as f64 / 12.0
        );
    }

    #[test]
    fn tests_are_deterministic() {
        let d = small_panel(8, 20);
        let a = structural_change_test(&d, &quick_structural(), 9).unwrap();
        let b = structural_change_test(&d, &quick_structural(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_iteration_joint_matches_separate_tests() {
        let d = small_panel(16, 12);
        let settings = JointSettings {
            structural: quick_structural(),
            spatial: SpatialSettings {
                bootstrap: BootstrapSettings {
                    resamples: 200,
                    ..Default::default()
                },
                ..Default::default()
            },
            max_iter: 5,
            converge_tol: f64::INFINITY,
        };
        let (structural, spatial) = joint_test(&d, &settings, 21).unwrap();
        assert_eq!(structural.provenance.iterations, Some(1));
        assert_eq!(structural.provenance.converged, Some(true));

        let alone = spatial_heterogeneity_test(&d, &settings.spatial, 21).unwrap();
        assert_eq!(spatial.ci, alone.ci);
        assert_eq!(spatial.per_item_outside, alone.per_item_outside);

        let traces = forward_search_panel(&d, &settings.spatial.search).unwrap();
        let delta = robust_slopes(&traces)[2..].to_vec();
        let partial = partial_residual_panel(&d, &delta);
        let mut s = quick_structural();
        s.sieve.regressors = Regressors::CovariatesOnly;
        let alone = structural_change_test(&partial, &s, 21).unwrap();
        assert_eq!(structural.ci, alone.ci);
        assert_eq!(structural.per_item_outside, alone.per_item_outside);
    }

    #[test]
    fn joint_reports_nonconvergence() {
        let d = small_panel(16, 12);
        let settings = JointSettings {
            structural: quick_structural(),
            spatial: SpatialSettings {
                bootstrap: BootstrapSettings {
                    resamples: 200,
                    ..Default::default()
                },
                ..Default::default()
            },
            max_iter: 1,
            converge_tol: 0.0,
        };
        let (structural, spatial) = joint_test(&d, &settings, 2).unwrap();
        assert_eq!(structural.provenance.converged, Some(false));
        assert_eq!(spatial.provenance.iterations, Some(1));
        assert!(!spatial.provenance.notes.is_empty());
    }
}
