//! Recovery of the Brownian driver from observed price vectors: local
//! linearization and an auxiliary particle filter.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black::{call_forward, implied_vol};
use crate::calibration::MixtureSpec;
use crate::dynamics::{mixture_weights, price_jacobian, price_map, spot_factors, DriverState};
use crate::error::{Error, Result};
use crate::normal;
use crate::simulation::{simulate_driver, simulate_prices, PricePath};

/// Jacobians with a larger condition number are treated as singular.
pub const SINGULAR_JACOBIAN: f64 = 1e12;

/// Per-step output of a tracker. Index 0 is the first observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub method: String,
    pub times: Vec<f64>,
    /// Driver estimate `(w_1, ..., w_n, b)`; the posterior mean for the filter.
    pub estimates: Vec<Vec<f64>>,
    /// Posterior standard deviations (filter only).
    pub spreads: Vec<Vec<f64>>,
    /// Reconstructed price vectors.
    pub prices: Vec<Vec<f64>>,
    /// Jacobian condition number (linearization) or effective sample size (filter).
    pub diagnostics: Vec<f64>,
    /// Steps carried forward because the Jacobian was singular.
    pub flagged: Vec<bool>,
}

impl TrackResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let dim = self.estimates.first().map_or(0, Vec::len);
        let m = self.prices.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..dim).map(|i| format!("w{i}")));
        header.push("b".into());
        if !self.spreads.is_empty() {
            header.extend((1..dim).map(|i| format!("sd_w{i}")));
            header.push("sd_b".into());
        }
        header.extend((0..m).map(|j| format!("g{j}")));
        header.push(if self.method == "filter" { "ess" } else { "condition" }.into());
        header.push("flagged".into());
        wtr.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.estimates[i].iter().map(f64::to_string));
            if !self.spreads.is_empty() {
                row.extend(self.spreads[i].iter().map(f64::to_string));
            }
            row.extend(self.prices[i].iter().map(f64::to_string));
            row.push(self.diagnostics[i].to_string());
            row.push(self.flagged[i].to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Mean absolute relative error per contract against `truth`, skipping index 0.
    pub fn mean_abs_relative_error(&self, truth: &[Vec<f64>]) -> Vec<f64> {
        per_contract(&self.prices, truth, |a, b| (a / b - 1.0).abs())
    }

    /// Root mean squared relative error per contract, skipping index 0.
    pub fn relative_rmse(&self, truth: &[Vec<f64>]) -> Vec<f64> {
        per_contract(&self.prices, truth, |a, b| (a / b - 1.0).powi(2)).into_iter().map(f64::sqrt).collect()
    }
}

fn per_contract(est: &[Vec<f64>], truth: &[Vec<f64>], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let m = truth.first().map_or(0, Vec::len);
    let steps = truth.len().min(est.len());
    if steps < 2 {
        return vec![0.0; m];
    }
    (0..m).map(|j| (1..steps).map(|i| f(est[i][j], truth[i][j])).sum::<f64>() / (steps - 1) as f64).collect()
}

/// Local linearization `x_{k+1} = x_k + h'_{t_{k+1}}(x_k)^{-1} (y_{k+1} - y_k)`
/// started at the origin.
pub fn linearized_track(spec: &MixtureSpec, path: &PricePath) -> Result<TrackResult> {
    path.validate()?;
    let dim = spec.n() + 1;
    let mut x = vec![0.0; dim];
    let mut out = TrackResult {
        method: "linear".into(),
        times: path.times.clone(),
        estimates: vec![x.clone()],
        spreads: Vec::new(),
        prices: vec![price_map(spec, &DriverState::from_coords(&x, path.times[0]))?],
        diagnostics: vec![f64::NAN],
        flagged: vec![false],
    };
    for k in 0..path.len() - 1 {
        let t = path.times[k + 1];
        let jac = price_jacobian(spec, &DriverState::from_coords(&x, t))?;
        let dy = DVector::from_iterator(dim, path.prices[k + 1].iter().zip(&path.prices[k]).map(|(a, b)| a - b));
        let step = if jac.condition > SINGULAR_JACOBIAN { None } else { jac.to_matrix().lu().solve(&dy) };
        let flagged = step.is_none();
        if let Some(s) = step {
            for i in 0..dim {
                x[i] += s[i];
            }
        }
        out.estimates.push(x.clone());
        out.prices.push(price_map(spec, &DriverState::from_coords(&x, t))?);
        out.diagnostics.push(jac.condition);
        out.flagged.push(flagged);
    }
    Ok(out)
}

/// Gaussian pseudo-likelihood of a price vector around a model price.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    cov: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
}

impl GaussianNoise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::InvalidInput("covariance must be square".into()));
        }
        let sym = (&cov - cov.transpose()).abs().max();
        if sym > 1e-12 * cov.abs().max() {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        let chol =
            cov.clone().cholesky().ok_or_else(|| Error::InvalidInput("covariance must be positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { inv: chol.inverse(), cov, log_det })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("covariance must be square".into()));
        }
        Self::new(DMatrix::from_fn(m, m, |r, c| rows[r][c]))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|r| self.cov.row(r).iter().copied().collect()).collect()
    }

    pub fn log_likelihood(&self, y: &[f64], mean: &[f64]) -> f64 {
        let m = self.dim();
        let mut q = 0.0;
        for r in 0..m {
            let dr = y[r] - mean[r];
            for c in 0..m {
                q += dr * self.inv[(r, c)] * (y[c] - mean[c]);
            }
        }
        normal::mvn_log_density(q, self.log_det, m)
    }
}

/// Sample covariance (denominator `N - 1`) of row vectors.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput("covariance needs at least two samples".into()));
    }
    let m = rows[0].len();
    let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    Ok(DMatrix::from_fn(m, m, |a, b| {
        rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64
    }))
}

/// Source of a filter covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum CovariancePolicy {
    /// Sample covariance of the increments of the tracked series.
    ObservedIncrements,
    /// Sample covariance of increments of model paths simulated on the series' time grid.
    SimulatedIncrements {
        paths: usize,
        seed: u64,
    },
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
}

impl CovariancePolicy {
    pub fn resolve(&self, spec: &MixtureSpec, path: &PricePath) -> Result<GaussianNoise> {
        match self {
            CovariancePolicy::ObservedIncrements => GaussianNoise::new(sample_covariance(&path.increments())?),
            CovariancePolicy::SimulatedIncrements { paths, seed } => {
                let steps = path.len() - 1;
                let mut incs = Vec::new();
                for d in simulate_driver(*paths, steps, 1.0, spec.n() + 1, *seed) {
                    // rescale unit-step walks onto the series' time grid
                    let mut coords = vec![vec![0.0; spec.n() + 1]];
                    for k in 0..steps {
                        let dt = path.times[k + 1] - path.times[k];
                        let prev = coords[k].clone();
                        coords.push(
                            (0..prev.len())
                                .map(|i| prev[i] + dt.sqrt() * (d.coords[k + 1][i] - d.coords[k][i]))
                                .collect(),
                        );
                    }
                    let sim = crate::simulation::DriverPath { times: path.times.clone(), coords };
                    let prices = simulate_prices(spec, std::slice::from_ref(&sim))?;
                    incs.extend(prices[0].increments());
                }
                GaussianNoise::new(sample_covariance(&incs)?)
            }
            CovariancePolicy::Explicit { matrix } => GaussianNoise::from_rows(matrix),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

/// Draws `n` indices with probabilities `weights` (normalized).
pub fn resample<R: Rng + ?Sized>(weights: &[f64], n: usize, scheme: Resampling, rng: &mut R) -> Vec<usize> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    let pick = |u: f64| cum.partition_point(|&c| c <= u * total).min(weights.len() - 1);
    match scheme {
        Resampling::Multinomial => (0..n).map(|_| pick(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>();
            (0..n).map(|i| pick((i as f64 + u0) / n as f64)).collect()
        }
    }
}

/// Driver hypotheses at one time. `weights` of `None` means uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub t: f64,
    pub particles: Vec<Vec<f64>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Seed of the per-particle substreams used to reach this cloud.
    pub stream: u64,
}

impl ParticleCloud {
    pub fn at_origin(r: usize, dim: usize, t: f64) -> Self {
        Self { t, particles: vec![vec![0.0; dim]; r], weights: None, stream: 0 }
    }

    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[j],
            None => 1.0 / self.particles.len() as f64,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let dim = self.particles[0].len();
        (0..dim).map(|i| (0..self.particles.len()).map(|j| self.weight(j) * self.particles[j][i]).sum()).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..mean.len())
            .map(|i| {
                (0..self.particles.len())
                    .map(|j| self.weight(j) * (self.particles[j][i] - mean[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let q: f64 = weights.iter().map(|w| (w / s).powi(2)).sum();
    1.0 / q
}

// exp(l - max) normalized; collapse when no weight is representable.
fn normalize_log_weights(logw: &[f64], t: f64) -> Result<Vec<f64>> {
    let max = logw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || max < f64::MIN_POSITIVE.ln() {
        return Err(Error::WeightCollapse { t });
    }
    let w: Vec<f64> = logw.iter().map(|l| if l.is_nan() { 0.0 } else { (l - max).exp() }).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

fn prices_at(spec: &MixtureSpec, particles: &[Vec<f64>], t: f64) -> Result<Vec<Vec<f64>>> {
    particles.par_iter().map(|a| price_map(spec, &DriverState::from_coords(a, t))).collect()
}

fn first_stage_logs(
    spec: &MixtureSpec,
    cloud: &ParticleCloud,
    y: &[f64],
    t_next: f64,
    s1: &GaussianNoise,
) -> Result<Vec<f64>> {
    let prices = prices_at(spec, &cloud.particles, t_next)?;
    Ok(prices.iter().enumerate().map(|(j, m)| cloud.weight(j).ln() + s1.log_likelihood(y, m)).collect())
}

/// First-stage weights `lambda_j` from `Sigma_1` at `h_{t_next}(alpha_j)`.
pub fn first_stage_weights(
    spec: &MixtureSpec,
    cloud: &ParticleCloud,
    y_next: &[f64],
    t_next: f64,
    sigma1: &GaussianNoise,
) -> Result<Vec<f64>> {
    normalize_log_weights(&first_stage_logs(spec, cloud, y_next, t_next, sigma1)?, t_next)
}

/// Summary of one filter step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Effective sample size of the second-stage weights.
    pub ess: f64,
    /// Weighted mean of the moved particles' prices before final resampling.
    pub prices: Vec<f64>,
}

/// One auxiliary particle filter step.
///
/// First-stage weights, resampling, diffusion by `sqrt(dt) Z`, second-stage
/// weights (Sigma_2 likelihood over the parent's Sigma_1 likelihood), and a
/// final resampling. Particle `j` draws its noise from substream `j` of a
/// step seed taken from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn apf_step(
    spec: &MixtureSpec,
    cloud: &ParticleCloud,
    y_next: &[f64],
    t_next: f64,
    sigma1: &GaussianNoise,
    sigma2: &GaussianNoise,
    scheme: Resampling,
    rng: &mut ChaCha8Rng,
) -> Result<(ParticleCloud, StepInfo)> {
    let dt = t_next - cloud.t;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("filter step needs t_next > {}", cloud.t)));
    }
    let r = cloud.particles.len();
    let l1 = first_stage_logs(spec, cloud, y_next, t_next, sigma1)?;
    let lambda = normalize_log_weights(&l1, t_next)?;
    let parents = resample(&lambda, r, scheme, rng);

    let step_seed = rng.next_u64();
    let sd = dt.sqrt();
    let moved: Vec<Vec<f64>> = parents
        .par_iter()
        .enumerate()
        .map(|(j, &p)| {
            let mut prng = ChaCha8Rng::seed_from_u64(step_seed);
            prng.set_stream(j as u64);
            cloud.particles[p].iter().map(|a| a + sd * prng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let prices = prices_at(spec, &moved, t_next)?;
    let l2: Vec<f64> = (0..r)
        .map(|j| sigma2.log_likelihood(y_next, &prices[j]) - (l1[parents[j]] - cloud.weight(parents[j]).ln()))
        .collect();
    let collapse = prices.iter().all(|m| sigma2.log_likelihood(y_next, m) < f64::MIN_POSITIVE.ln());
    if collapse {
        return Err(Error::WeightCollapse { t: t_next });
    }
    let pi = normalize_log_weights(&l2, t_next)?;
    let m = prices[0].len();
    let info = StepInfo {
        ess: effective_sample_size(&pi),
        prices: (0..m).map(|c| (0..r).map(|j| pi[j] * prices[j][c]).sum()).collect(),
    };
    let picks = resample(&pi, r, scheme, rng);
    let next = ParticleCloud {
        t: t_next,
        particles: picks.iter().map(|&j| moved[j].clone()).collect(),
        weights: None,
        stream: step_seed,
    };
    Ok((next, info))
}

/// Filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub particles: usize,
    pub sigma1: CovariancePolicy,
    /// `None` uses Sigma_1.
    #[serde(default)]
    pub sigma2: Option<CovariancePolicy>,
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub clouds: Vec<ParticleCloud>,
    pub result: TrackResult,
    pub sigma1: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
}

/// Runs the filter over a price path from particles at the origin.
pub fn apf_run(spec: &MixtureSpec, path: &PricePath, config: &FilterConfig) -> Result<FilterRun> {
    path.validate()?;
    if config.particles == 0 {
        return Err(Error::InvalidInput("filter needs at least one particle".into()));
    }
    let dim = spec.n() + 1;
    let s1 = config.sigma1.resolve(spec, path)?;
    let s2 = match &config.sigma2 {
        Some(p) => p.resolve(spec, path)?,
        None => s1.clone(),
    };
    if s1.dim() != dim || s2.dim() != dim {
        return Err(Error::InvalidInput(format!("filter covariances must be {dim}x{dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = ParticleCloud::at_origin(config.particles, dim, path.times[0]);
    let mut result = TrackResult {
        method: "filter".into(),
        times: path.times.clone(),
        estimates: vec![cloud.mean()],
        spreads: vec![cloud.std_dev()],
        prices: vec![filtered_prices(spec, &cloud)?],
        diagnostics: vec![config.particles as f64],
        flagged: vec![false],
    };
    let mut clouds = vec![cloud.clone()];
    for k in 1..path.len() {
        let (next, info) =
            apf_step(spec, &cloud, &path.prices[k], path.times[k], &s1, &s2, config.resampling, &mut rng)?;
        cloud = next;
        result.estimates.push(cloud.mean());
        result.spreads.push(cloud.std_dev());
        result.prices.push(info.prices);
        result.diagnostics.push(info.ess);
        result.flagged.push(false);
        clouds.push(cloud.clone());
    }
    Ok(FilterRun { clouds, result, sigma1: s1.covariance(), sigma2: s2.covariance() })
}

/// Weighted average of the price map over the particles.
pub fn filtered_prices(spec: &MixtureSpec, cloud: &ParticleCloud) -> Result<Vec<f64>> {
    let prices = prices_at(spec, &cloud.particles, cloud.t)?;
    let m = prices[0].len();
    Ok((0..m).map(|c| (0..prices.len()).map(|j| cloud.weight(j) * prices[j][c]).sum()).collect())
}

/// Implied volatility of the filtered model at one strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmilePoint {
    pub strike: f64,
    pub call_forward: f64,
    pub vol: Option<f64>,
    pub error: Option<String>,
}

/// Smile of the particle-averaged model: weighted call prices inverted
/// against the filtered forward with remaining time `T - t`.
pub fn filtered_smile(spec: &MixtureSpec, cloud: &ParticleCloud, strikes: &[f64]) -> Result<Vec<SmilePoint>> {
    let rem = spec.maturity - cloud.t;
    let per_particle: Vec<(f64, Vec<f64>)> = cloud
        .particles
        .par_iter()
        .map(|a| {
            let st = DriverState::from_coords(a, cloud.t);
            let p = mixture_weights(spec, &st)?.p;
            let xt = spot_factors(spec, &st);
            let fwd = p.iter().zip(&xt).map(|(a, b)| a * b).sum();
            let calls = strikes
                .iter()
                .map(|&k| (0..p.len()).map(|i| p[i] * call_forward(xt[i], spec.sigmas[i], k, rem)).sum())
                .collect();
            Ok((fwd, calls))
        })
        .collect::<Result<_>>()?;
    let forward: f64 = (0..per_particle.len()).map(|j| cloud.weight(j) * per_particle[j].0).sum();
    Ok(strikes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let c: f64 = (0..per_particle.len()).map(|j| cloud.weight(j) * per_particle[j].1[i]).sum();
            match implied_vol(forward, k, rem, c) {
                Ok(v) => SmilePoint { strike: k, call_forward: c, vol: Some(v), error: None },
                Err(e) => SmilePoint { strike: k, call_forward: c, vol: None, error: Some(e.to_string()) },
            }
        })
        .collect())
}
