//! Forward search over a cross-section with Cook's-distance monitoring.
//!
//! The search starts from the `l` observations with the smallest absolute
//! full-sample residuals, then grows the subset one observation at a time,
//! each step re-selecting the smallest absolute residuals under the previous
//! subset's fit. It stops at the first step whose maximum Cook's distance
//! differs from the previous one by more than `tau`; the fit before that
//! step is the robust estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::{fit_ols, max_cooks_distance, Design, ModelFit};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardSearchSettings {
    /// Initial subset size; `None` means ⌈N/2⌉.
    pub initial_size: Option<usize>,
    /// Largest tolerated change in max Cook's D between consecutive steps.
    #[serde(with = "crate::io::float_or_inf")]
    pub tau: f64,
}

impl Default for ForwardSearchSettings {
    fn default() -> Self {
        Self {
            initial_size: None,
            tau: 0.5,
        }
    }
}

impl ForwardSearchSettings {
    pub fn resolve_initial_size(&self, n_obs: usize) -> usize {
        self.initial_size.unwrap_or(n_obs.div_ceil(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SearchEvent {
    /// Subset fit was singular; the subset was grown without checking tau.
    RankDeficient,
    /// An observation had leverage one; tau was not checked at this step.
    LeverageOne { observation: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// Observation indices in the subset, ascending.
    pub subset: Vec<usize>,
    pub max_cooks_d: Option<f64>,
    /// Coefficients of the subset fit, absent when the fit failed.
    pub coefficients: Option<Vec<f64>>,
    pub event: Option<SearchEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSearchTrace {
    pub steps: Vec<SearchStep>,
    /// Index into `steps` of the robust fit's subset; `None` when the
    /// search ran to completion.
    pub stop_step: Option<usize>,
    pub robust_fit: ModelFit,
    pub full_fit: ModelFit,
    pub initial_size: usize,
    pub tau: f64,
}

impl ForwardSearchTrace {
    pub fn triggered(&self) -> bool {
        self.stop_step.is_some()
    }

    pub fn max_cooks_path(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.steps.iter().map(|s| s.max_cooks_d)
    }
}

/// One exported row of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: usize,
    pub iteration: usize,
    pub subset_size: usize,
    pub max_cooks_d: Option<f64>,
    pub delta_hat: Option<f64>,
    pub stopped_here: bool,
}

/// Flattens panel traces into rows for plotting (first δ coordinate only).
pub fn trace_records(traces: &[ForwardSearchTrace]) -> Vec<TraceRecord> {
    let mut rows = Vec::new();
    for (time, trace) in traces.iter().enumerate() {
        let q = trace.full_fit.neighborhood_cols;
        let p = trace.full_fit.n_params;
        for (iteration, step) in trace.steps.iter().enumerate() {
            rows.push(TraceRecord {
                time,
                iteration,
                subset_size: step.subset.len(),
                max_cooks_d: step.max_cooks_d,
                delta_hat: step
                    .coefficients
                    .as_ref()
                    .filter(|_| q > 0)
                    .map(|c| c[p - q]),
                stopped_here: trace.stop_step == Some(iteration),
            });
        }
    }
    rows
}

/// Indices of the `k` smallest absolute residuals, ties to the lower index,
/// returned in ascending index order.
fn smallest_abs(residuals: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| {
        residuals[a]
            .abs()
            .total_cmp(&residuals[b].abs())
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

fn subset_fit(design: &Design, y: &[f64], subset: &[usize]) -> Result<ModelFit> {
    let sub = design.select_rows(subset);
    let ys: Vec<f64> = subset.iter().map(|&i| y[i]).collect();
    fit_ols(&sub, &ys)
}

/// Max Cook's D of a fit, or the event that prevented computing it.
fn monitor(fit: &ModelFit, subset: &[usize]) -> (Option<f64>, Option<SearchEvent>) {
    match max_cooks_distance(fit) {
        Ok((_, d)) => (Some(d), None),
        Err(Error::LeverageOne { index, .. }) => (
            None,
            Some(SearchEvent::LeverageOne {
                observation: subset[index],
            }),
        ),
        Err(_) => (None, None),
    }
}

/// Forward search on one cross-section.
pub fn forward_search(
    design: &Design,
    y: &[f64],
    settings: &ForwardSearchSettings,
) -> Result<ForwardSearchTrace> {
    let n = design.rows();
    let k = design.cols();
    let l = settings.resolve_initial_size(n);
    if l < k + 2 || l >= n {
        return Err(Error::InvalidSettings(format!(
            "initial subset size {l} must satisfy {} <= l < {n}",
            k + 2
        )));
    }
    if settings.tau.is_nan() || settings.tau < 0.0 {
        return Err(Error::InvalidSettings(format!("tau must be nonnegative, got {}", settings.tau)));
    }
    let full_fit = fit_ols(design, y)?;

    let subset = smallest_abs(&full_fit.residuals, l);
    let mut current = match subset_fit(design, y, &subset) {
        Ok(fit) => fit,
        Err(Error::RankDeficient { .. }) => return Err(Error::InitialSubsetSingular),
        Err(e) => return Err(e),
    };
    let (d0, event0) = monitor(&current, &subset);
    let mut steps = vec![SearchStep {
        subset,
        max_cooks_d: d0,
        coefficients: Some(current.coefficients.clone()),
        event: event0,
    }];
    let mut last_d = d0;
    let mut current_step = 0;
    let mut stop_step = None;

    for size in l + 1..=n {
        let residuals: Vec<f64> = design
            .predict(&current.coefficients)
            .iter()
            .zip(y)
            .map(|(f, yi)| yi - f)
            .collect();
        let subset = smallest_abs(&residuals, size);
        let fit = if size == n {
            Ok(full_fit.clone())
        } else {
            subset_fit(design, y, &subset)
        };
        match fit {
            Ok(fit) => {
                let (d, event) = monitor(&fit, &subset);
                steps.push(SearchStep {
                    subset,
                    max_cooks_d: d,
                    coefficients: Some(fit.coefficients.clone()),
                    event,
                });
                if let (Some(prev), Some(now)) = (last_d, d) {
                    if (now - prev).abs() > settings.tau {
                        stop_step = Some(current_step);
                        break;
                    }
                }
                if d.is_some() {
                    last_d = d;
                }
                current = fit;
                current_step = steps.len() - 1;
            }
            Err(Error::RankDeficient { .. }) => steps.push(SearchStep {
                subset,
                max_cooks_d: None,
                coefficients: None,
                event: Some(SearchEvent::RankDeficient),
            }),
            Err(e) => return Err(e),
        }
    }

    let robust_fit = if stop_step.is_some() {
        current
    } else {
        full_fit.clone()
    };
    Ok(ForwardSearchTrace {
        steps,
        stop_step,
        robust_fit,
        full_fit,
        initial_size: l,
        tau: settings.tau,
    })
}

/// Forward search at every time point of the panel.
pub fn forward_search_panel(
    dataset: &PanelDataset,
    settings: &ForwardSearchSettings,
) -> Result<Vec<ForwardSearchTrace>> {
    let results: Vec<Result<ForwardSearchTrace>> = (0..dataset.n_times())
        .into_par_iter()
        .map(|t| {
            let (design, y) = dataset.cross_section(t);
            forward_search(&design, &y, settings)
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(time, r)| {
            r.map_err(|e| match e {
                Error::InvalidSettings(_) => e,
                other => Error::UnestimableTimePoint {
                    time,
                    reason: other.to_string(),
                },
            })
        })
        .collect()
}
