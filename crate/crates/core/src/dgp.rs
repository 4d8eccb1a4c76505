//! Synthetic spatio-temporal panels with optional temporary structural
//! change in ρ and spatial heterogeneity in δ.
//!
//! ```text
//! y_it = β0 + Σ_j β_j x_jit + δ_i w_it + ε_it
//! ε_it = ρ_t ε_i,t−1 + c · a_it,   a_it ~ N(0, σ_a²)
//! w_it ~ Poisson(λ_k(i)),          x_jit ~ N(μ_j, σ_j²)
//! ```
//!
//! `ρ_t = ρ′` inside the change block and `ρ` elsewhere; `δ_i = δ′` for the
//! heterogeneous units and `δ` elsewhere; `c` is the R² calibration factor.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelParts};
use crate::rng::{self, tag};

/// Steps of the error recursion discarded before t = 1.
pub const BURN_IN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Start,
    Middle,
    End,
}

impl Position {
    pub fn label(self) -> &'static str {
        match self {
            Position::Start => "Start",
            Position::Middle => "Middle",
            Position::End => "End",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    #[serde(default = "default_rho_prime")]
    pub rho_prime: f64,
    /// Share of time points inside the change block.
    pub proportion: f64,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    #[serde(default = "default_delta_prime")]
    pub delta_prime: f64,
    /// Share of units with δ′.
    pub proportion: f64,
    /// Affected units are spread over neighborhoods 1..=this.
    pub neighborhoods: usize,
}

fn default_rho_prime() -> f64 {
    0.75
}

fn default_delta_prime() -> f64 {
    1.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_times: usize,
    pub beta0: f64,
    /// One slope per covariate.
    pub slopes: Vec<f64>,
    pub covariate_means: Vec<f64>,
    pub covariate_variances: Vec<f64>,
    pub delta: f64,
    pub rho: f64,
    pub innovation_sd: f64,
    /// Poisson mean of W in each neighborhood.
    pub neighborhood_lambdas: Vec<f64>,
    pub r2_target: Option<f64>,
    pub change: Option<ChangeSpec>,
    pub heterogeneity: Option<HeterogeneitySpec>,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_units: 20,
            n_times: 40,
            beta0: 40.0,
            slopes: vec![0.70, 0.45],
            covariate_means: vec![100.0, 50.0],
            covariate_variances: vec![100.0, 100.0],
            delta: 0.25,
            rho: 0.5,
            innovation_sd: 2.0,
            neighborhood_lambdas: vec![2.0, 4.0, 6.0, 10.0],
            r2_target: None,
            change: None,
            heterogeneity: None,
            seed: 0,
        }
    }
}

/// What was injected into a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: DgpConfig,
    /// 1-based time points inside the change block.
    pub change_times: Vec<usize>,
    /// 1-based indices of units carrying δ′.
    pub heterogeneous_units: Vec<usize>,
    /// 1-based neighborhood of each unit.
    pub neighborhoods: Vec<u32>,
    /// Factor applied to every innovation.
    pub error_scale: f64,
}

/// ⌈p·n⌉ with a guard against `0.15 * 20 = 3.0000000000000004`.
fn ceil_share(proportion: f64, n: usize) -> usize {
    ((proportion * n as f64) - 1e-9).ceil().max(0.0) as usize
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSettings(msg));
        if self.n_units < 2 || self.n_times < 3 {
            return bad(format!("need N >= 2 and T >= 3, got {}x{}", self.n_units, self.n_times));
        }
        if self.slopes.len() != self.covariate_means.len()
            || self.slopes.len() != self.covariate_variances.len()
        {
            return bad("slopes, covariate_means and covariate_variances differ in length".into());
        }
        if self.covariate_variances.iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("covariate variances must be nonnegative".into());
        }
        if self.neighborhood_lambdas.is_empty() || self.neighborhood_lambdas.iter().any(|l| l.is_nan() || *l <= 0.0) {
            return bad("neighborhood lambdas must be positive".into());
        }
        if self.neighborhood_lambdas.len() > self.n_units {
            return bad("more neighborhoods than units".into());
        }
        if self.rho.is_nan() || self.rho.abs() >= 1.0 {
            return bad(format!("|rho| must be below 1, got {}", self.rho));
        }
        if self.innovation_sd.is_nan() || self.innovation_sd <= 0.0 {
            return bad("innovation_sd must be positive".into());
        }
        if let Some(r2) = self.r2_target {
            if !(r2 > 0.0 && r2 < 1.0) {
                return bad(format!("r2_target must lie in (0, 1), got {r2}"));
            }
        }
        if let Some(c) = &self.change {
            if c.rho_prime.is_nan() || c.rho_prime.abs() >= 1.0 {
                return bad(format!("|rho_prime| must be below 1, got {}", c.rho_prime));
            }
            if !(c.proportion > 0.0 && c.proportion < 1.0) {
                return bad(format!("change proportion must lie in (0, 1), got {}", c.proportion));
            }
        }
        if let Some(h) = &self.heterogeneity {
            if !(h.proportion > 0.0 && h.proportion < 1.0) {
                return bad(format!("heterogeneity proportion must lie in (0, 1), got {}", h.proportion));
            }
            if h.neighborhoods == 0 || h.neighborhoods > self.neighborhood_lambdas.len() {
                return bad(format!(
                    "heterogeneity must affect 1..={} neighborhoods, got {}",
                    self.neighborhood_lambdas.len(),
                    h.neighborhoods
                ));
            }
        }
        Ok(())
    }

    /// 1-based neighborhood of each unit: contiguous, even blocks with the
    /// remainder going to the lowest-numbered neighborhoods.
    pub fn neighborhood_assignment(&self) -> Vec<u32> {
        let k = self.neighborhood_lambdas.len();
        let (base, extra) = (self.n_units / k, self.n_units % k);
        (0..k)
            .flat_map(|g| std::iter::repeat_n(g as u32 + 1, base + usize::from(g < extra)))
            .collect()
    }

    /// 1-based time points of the change block.
    pub fn change_times(&self) -> Vec<usize> {
        let Some(spec) = &self.change else {
            return Vec::new();
        };
        let t = self.n_times;
        let k = ceil_share(spec.proportion, t).clamp(1, t);
        let offset = match spec.position {
            Position::Start => 0,
            Position::Middle => (t - k) / 2,
            Position::End => t - k,
        };
        (offset + 1..=offset + k).collect()
    }

    /// 1-based units carrying δ′: dealt round-robin over the affected
    /// neighborhoods, taking each neighborhood's lowest-index units first.
    pub fn heterogeneous_units(&self) -> Vec<usize> {
        let Some(spec) = &self.heterogeneity else {
            return Vec::new();
        };
        let count = ceil_share(spec.proportion, self.n_units).clamp(1, self.n_units);
        let labels = self.neighborhood_assignment();
        let members: Vec<Vec<usize>> = (1..=spec.neighborhoods as u32)
            .map(|g| (0..self.n_units).filter(|&i| labels[i] == g).collect())
            .collect();
        let mut taken = vec![0; members.len()];
        let mut units = Vec::with_capacity(count);
        let mut g = 0;
        while units.len() < count {
            if taken[g] < members[g].len() {
                units.push(members[g][taken[g]] + 1);
                taken[g] += 1;
            } else if taken.iter().zip(&members).all(|(t, m)| *t >= m.len()) {
                break;
            }
            g = (g + 1) % members.len();
        }
        units.sort_unstable();
        units
    }

    /// Variance of the systematic part `Σ β_j x_j + δ w` across the panel.
    pub fn systematic_variance(&self) -> f64 {
        let covariates: f64 = self
            .slopes
            .iter()
            .zip(&self.covariate_variances)
            .map(|(b, v)| b * b * v)
            .sum();
        // Var(W) of the neighborhood mixture: E[λ] + Var(λ), weighted by block size.
        let labels = self.neighborhood_assignment();
        let n = labels.len() as f64;
        let weight = |g: usize| labels.iter().filter(|&&l| l as usize == g + 1).count() as f64 / n;
        let (mut m1, mut m2) = (0.0, 0.0);
        for (g, &lambda) in self.neighborhood_lambdas.iter().enumerate() {
            m1 += weight(g) * lambda;
            m2 += weight(g) * lambda * lambda;
        }
        let var_w = m1 + (m2 - m1 * m1);
        covariates + self.delta * self.delta * var_w
    }
}

/// Innovation scale factor `c` such that `c² σ_a² / (1 − ρ²)` equals
/// `V_sys (1 − R²) / R²`. Returns 1 when no R² target is set.
pub fn calibrate_r2(config: &DgpConfig) -> f64 {
    let Some(r2) = config.r2_target else {
        return 1.0;
    };
    let target_error_var = config.systematic_variance() * (1.0 - r2) / r2;
    let ar_var = config.innovation_sd.powi(2) / (1.0 - config.rho * config.rho);
    (target_error_var / ar_var).sqrt()
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated parameters")
}

/// Generates one panel. Covariates, W, and innovations of unit i come from
/// separate streams keyed by i, so changing only the injections keeps every
/// draw identical.
pub fn generate(config: &DgpConfig) -> Result<(PanelDataset, GroundTruth)> {
    config.validate()?;
    let (n, t_len, p) = (config.n_units, config.n_times, config.slopes.len());
    let scale = calibrate_r2(config);
    let neighborhoods = config.neighborhood_assignment();
    let change_times = config.change_times();
    let hetero_units = config.heterogeneous_units();
    let in_change: Vec<bool> = (1..=t_len).map(|t| change_times.contains(&t)).collect();
    let rho_prime = config.change.as_ref().map_or(config.rho, |c| c.rho_prime);
    let delta_prime = config.heterogeneity.as_ref().map_or(config.delta, |h| h.delta_prime);

    let mut parts = PanelParts {
        n_units: n,
        n_times: t_len,
        n_covariates: p,
        n_neighborhood_vars: 1,
        y: Vec::with_capacity(n * t_len),
        x: Vec::with_capacity(n * t_len * p),
        w: Vec::with_capacity(n * t_len),
        neighborhood: neighborhoods.clone(),
        unit_ids: (1..=n).map(|i| i.to_string()).collect(),
        time_ids: (1..=t_len).map(|t| t.to_string()).collect(),
    };
    let covariate_dists: Vec<Normal<f64>> = config
        .covariate_means
        .iter()
        .zip(&config.covariate_variances)
        .map(|(m, v)| normal(*m, v.sqrt()))
        .collect();
    let innovation = normal(0.0, config.innovation_sd);

    for (i, &hood) in neighborhoods.iter().enumerate().take(n) {
        let unit = i as u64;
        let mut x_rng = rng::stream(config.seed, &[tag::DGP, 0, unit]);
        let mut w_rng = rng::stream(config.seed, &[tag::DGP, 1, unit]);
        let mut a_rng = rng::stream(config.seed, &[tag::DGP, 2, unit]);
        let lambda = config.neighborhood_lambdas[hood as usize - 1];
        let poisson = Poisson::new(lambda).expect("validated lambda");
        let delta = if hetero_units.contains(&(i + 1)) {
            delta_prime
        } else {
            config.delta
        };

        let mut e = 0.0;
        for _ in 0..BURN_IN {
            e = config.rho * e + scale * innovation.sample(&mut a_rng);
        }
        for (t, &changed) in in_change.iter().enumerate() {
            let rho_t = if changed { rho_prime } else { config.rho };
            e = rho_t * e + scale * innovation.sample(&mut a_rng);
            let w: f64 = poisson.sample(&mut w_rng);
            let mut y = config.beta0 + delta * w + e;
            for (j, dist) in covariate_dists.iter().enumerate() {
                let x = dist.sample(&mut x_rng);
                y += config.slopes[j] * x;
                parts.x.push(x);
            }
            parts.w.push(w);
            parts.y.push(y);
            debug_assert_eq!(parts.y.len(), i * t_len + t + 1);
        }
    }
    let dataset = PanelDataset::new(parts)?;
    let truth = GroundTruth {
        config: config.clone(),
        change_times,
        heterogeneous_units: hetero_units,
        neighborhoods,
        error_scale: scale,
    };
    Ok((dataset, truth))
}

/// Innovations `c·a_it` of unit `unit`, burn-in included; exposed so tests
/// can check the pairing of draws across injection settings.
pub fn unit_innovations(config: &DgpConfig, unit: usize) -> Vec<f64> {
    let mut a_rng = rng::stream(config.seed, &[tag::DGP, 2, unit as u64]);
    let innovation = normal(0.0, config.innovation_sd);
    let scale = calibrate_r2(config);
    (0..BURN_IN + config.n_times)
        .map(|_| scale * innovation.sample(&mut a_rng))
        .collect()
}

/// Draws an AR(1) series without the regression part; handy for estimator checks.
pub fn simulate_ar1<R: Rng>(rho: f64, sd: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let dist = normal(0.0, sd);
    let mut e = 0.0;
    for _ in 0..BURN_IN {
        e = rho * e + dist.sample(rng);
    }
    (0..len)
        .map(|_| {
            e = rho * e + dist.sample(rng);
            e
        })
        .collect()
}
