//! Balanced spatio-temporal panel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::Design;

/// Which regressors enter a per-unit time-series regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regressors {
    /// Intercept, covariates and neighborhood variables.
    #[default]
    Full,
    /// Intercept and covariates; neighborhood variables are left out.
    CovariatesOnly,
}

/// An N×T panel of responses `y`, covariates `x` (p per cell) and
/// neighborhood-system variables `w` (q per cell).
///
/// Storage is unit-major: cell `(i, t)` lives at `i * n_times + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    n_units: usize,
    n_times: usize,
    n_covariates: usize,
    n_neighborhood_vars: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    neighborhood: Vec<u32>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

/// Raw arrays for building a [`PanelDataset`]; see [`PanelDataset::new`].
#[derive(Debug, Clone, Default)]
pub struct PanelParts {
    pub n_units: usize,
    pub n_times: usize,
    pub n_covariates: usize,
    pub n_neighborhood_vars: usize,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub neighborhood: Vec<u32>,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
}

impl PanelDataset {
    pub fn new(parts: PanelParts) -> Result<Self> {
        let PanelParts {
            n_units,
            n_times,
            n_covariates,
            n_neighborhood_vars,
            y,
            x,
            w,
            neighborhood,
            unit_ids,
            time_ids,
        } = parts;
        if n_units < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 units, got {n_units}")));
        }
        if n_times < 3 {
            return Err(Error::InvalidDataset(format!("need at least 3 time points, got {n_times}")));
        }
        if n_neighborhood_vars == 0 {
            return Err(Error::InvalidDataset("need at least one neighborhood variable".into()));
        }
        let cells = n_units * n_times;
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch(format!("{name}: expected {want} values, got {got}")))
            }
        };
        check("y", y.len(), cells)?;
        check("x", x.len(), cells * n_covariates)?;
        check("w", w.len(), cells * n_neighborhood_vars)?;
        check("neighborhood", neighborhood.len(), n_units)?;
        check("unit_ids", unit_ids.len(), n_units)?;
        check("time_ids", time_ids.len(), n_times)?;
        if let Some(pos) = y.iter().chain(&x).chain(&w).position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite value at flat position {pos}")));
        }
        if neighborhood.contains(&0) {
            return Err(Error::InvalidDataset("neighborhood labels start at 1".into()));
        }
        Ok(Self {
            n_units,
            n_times,
            n_covariates,
            n_neighborhood_vars,
            y,
            x,
            w,
            neighborhood,
            unit_ids,
            time_ids,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_neighborhood_vars(&self) -> usize {
        self.n_neighborhood_vars
    }

    pub fn y(&self, unit: usize, time: usize) -> f64 {
        self.y[unit * self.n_times + time]
    }

    pub fn x(&self, unit: usize, time: usize) -> &[f64] {
        let p = self.n_covariates;
        let at = (unit * self.n_times + time) * p;
        &self.x[at..at + p]
    }

    pub fn w(&self, unit: usize, time: usize) -> &[f64] {
        let q = self.n_neighborhood_vars;
        let at = (unit * self.n_times + time) * q;
        &self.w[at..at + q]
    }

    /// Response series of one unit.
    pub fn unit_y(&self, unit: usize) -> &[f64] {
        &self.y[unit * self.n_times..(unit + 1) * self.n_times]
    }

    /// Neighborhood label (1-based) of each unit.
    pub fn neighborhoods(&self) -> &[u32] {
        &self.neighborhood
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Number of regression parameters for `[1, x, w]`.
    pub fn n_params(&self) -> usize {
        1 + self.n_covariates + self.n_neighborhood_vars
    }

    fn push_row(&self, unit: usize, time: usize, regressors: Regressors, out: &mut Vec<f64>) {
        out.push(1.0);
        out.extend_from_slice(self.x(unit, time));
        if regressors == Regressors::Full {
            out.extend_from_slice(self.w(unit, time));
        }
    }

    /// T×k design of one unit's time series.
    pub fn unit_design(&self, unit: usize, regressors: Regressors) -> Design {
        let q = match regressors {
            Regressors::Full => self.n_neighborhood_vars,
            Regressors::CovariatesOnly => 0,
        };
        let cols = 1 + self.n_covariates + q;
        let mut data = Vec::with_capacity(self.n_times * cols);
        for t in 0..self.n_times {
            self.push_row(unit, t, regressors, &mut data);
        }
        Design::with_neighborhood_cols(self.n_times, cols, q, data)
            .expect("panel extents are validated at construction")
    }

    /// N×(1+p+q) cross-section at time `time`, with its responses.
    pub fn cross_section(&self, time: usize) -> (Design, Vec<f64>) {
        let cols = self.n_params();
        let mut data = Vec::with_capacity(self.n_units * cols);
        let mut y = Vec::with_capacity(self.n_units);
        for i in 0..self.n_units {
            self.push_row(i, time, Regressors::Full, &mut data);
            y.push(self.y(i, time));
        }
        let design = Design::with_neighborhood_cols(self.n_units, cols, self.n_neighborhood_vars, data)
            .expect("panel extents are validated at construction");
        (design, y)
    }

    /// Copy with the response replaced by `f(unit, time, y)`.
    pub fn map_y(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_units {
            for t in 0..self.n_times {
                let at = i * self.n_times + t;
                out.y[at] = f(i, t, self.y[at]);
            }
        }
        out
    }

    /// AR(1) quasi-difference of every series: `v_t - rho * v_{t-1}` for
    /// t ≥ 1, the first observation kept as is. Applies to y, x and w.
    pub fn quasi_difference(&self, rho: f64) -> Self {
        fn filter(values: &[f64], n_units: usize, n_times: usize, width: usize, rho: f64) -> Vec<f64> {
            let mut out = values.to_vec();
            for i in 0..n_units {
                for t in 1..n_times {
                    for j in 0..width {
                        let at = (i * n_times + t) * width + j;
                        let prev = (i * n_times + t - 1) * width + j;
                        out[at] = values[at] - rho * values[prev];
                    }
                }
            }
            out
        }
        let mut out = self.clone();
        out.y = filter(&self.y, self.n_units, self.n_times, 1, rho);
        out.x = filter(&self.x, self.n_units, self.n_times, self.n_covariates, rho);
        out.w = filter(&self.w, self.n_units, self.n_times, self.n_neighborhood_vars, rho);
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Small deterministic panel with two covariates and one W column.
    pub fn small_panel(n_units: usize, n_times: usize) -> PanelDataset {
        let mut parts = PanelParts {
            n_units,
            n_times,
            n_covariates: 2,
            n_neighborhood_vars: 1,
            ..Default::default()
        };
        for i in 0..n_units {
            for t in 0..n_times {
                let (fi, ft) = (i as f64, t as f64);
                let x1 = (fi * 1.3 + ft * 0.7).sin() * 10.0 + 100.0;
                let x2 = (fi * 0.4 - ft * 1.1).cos() * 10.0 + 50.0;
                let w = ((i * 7 + t * 3) % 11) as f64;
                parts.x.extend([x1, x2]);
                parts.w.push(w);
                parts.y.push(40.0 + 0.7 * x1 + 0.45 * x2 + 0.25 * w + (fi + 2.0 * ft).sin());
            }
            parts.neighborhood.push((i % 4) as u32 + 1);
            parts.unit_ids.push(format!("{}", i + 1));
        }
        parts.time_ids = (1..=n_times).map(|t| t.to_string()).collect();
        PanelDataset::new(parts).unwrap()
    }
}
