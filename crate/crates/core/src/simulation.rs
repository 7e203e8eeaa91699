//! Driver and price-path simulation, stylized vol/return correlations and
//! Monte Carlo martingale checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black::implied_vol;
use crate::calibration::MixtureSpec;
use crate::dynamics::{mixture_weights, price_map, DriverState};
use crate::error::{Error, Result};

/// Number of histogram bins on `[-1, 1]`.
pub const HISTOGRAM_BINS: usize = 50;
/// Paths whose implied-vol changes vary less than this are dropped.
pub const MIN_VOL_CHANGE_SD: f64 = 1e-10;

/// RNG for substream `stream` of a seeded family.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Driver path: `coords[i]` is `(w_1, ..., w_n, b)` at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverPath {
    pub times: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
}

/// Observed or simulated forward prices `(G^0, ..., G^n)` over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub times: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
    #[serde(default)]
    pub driver: Option<Vec<Vec<f64>>>,
}

impl PricePath {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.prices.len() || self.times.is_empty() {
            return Err(Error::InvalidInput("times and prices differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        let m = self.prices[0].len();
        if self.prices.iter().any(|p| p.len() != m) {
            return Err(Error::InvalidInput("price vectors differ in length".into()));
        }
        if let Some(d) = &self.driver {
            if d.len() != self.times.len() {
                return Err(Error::InvalidInput("driver and times differ in length".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Successive differences of the price vectors.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        self.prices.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect()
    }

    /// CSV with columns `t, g0, ..., gn` and, when present, `w1, ..., b`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let m = self.prices.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|j| format!("g{j}")));
        if let Some(d) = &self.driver {
            let dim = d.first().map_or(0, Vec::len);
            header.extend((1..dim).map(|i| format!("w{i}")));
            header.push("b".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.prices[i].iter().map(f64::to_string));
            if let Some(d) = &self.driver {
                row.extend(d[i].iter().map(f64::to_string));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Gaussian random walks from the origin with increments `N(0, dt I)`.
/// Path `i` draws from substream `i` of `seed`.
pub fn simulate_driver(n_paths: usize, n_steps: usize, dt: f64, dim: usize, seed: u64) -> Vec<DriverPath> {
    let sd = dt.max(0.0).sqrt();
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let mut x = vec![0.0; dim];
            let mut coords = Vec::with_capacity(n_steps + 1);
            coords.push(x.clone());
            for _ in 0..n_steps {
                for v in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sd * z;
                }
                coords.push(x.clone());
            }
            DriverPath { times: (0..=n_steps).map(|k| k as f64 * dt).collect(), coords }
        })
        .collect()
}

/// Applies the price map along each driver path.
pub fn simulate_prices(spec: &MixtureSpec, drivers: &[DriverPath]) -> Result<Vec<PricePath>> {
    let dim = spec.n() + 1;
    drivers
        .par_iter()
        .map(|d| {
            if d.coords.iter().any(|c| c.len() != dim) {
                return Err(Error::InvalidInput(format!("driver dimension must be {dim}")));
            }
            if d.times.last().is_some_and(|&t| t >= spec.maturity) {
                return Err(Error::AtMaturity { t: *d.times.last().unwrap(), maturity: spec.maturity });
            }
            let prices = d
                .times
                .iter()
                .zip(&d.coords)
                .map(|(&t, c)| price_map(spec, &DriverState::from_coords(c, t)))
                .collect::<Result<Vec<_>>>()?;
            Ok(PricePath { times: d.times.clone(), prices, driver: Some(d.coords.clone()) })
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Correlations for one option strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeCorrelations {
    pub strike: f64,
    /// Per retained path, in path order.
    pub correlations: Vec<f64>,
    pub mean: f64,
    pub fraction_negative: f64,
    pub histogram: Vec<u64>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedStats {
    pub bin_edges: Vec<f64>,
    pub strikes: Vec<StrikeCorrelations>,
}

impl StylizedStats {
    /// CSV with columns `bin_lo, bin_hi, count_<K>...`.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(self.strikes.iter().map(|s| format!("count_{}", s.strike)));
        wtr.write_record(&header)?;
        for b in 0..HISTOGRAM_BINS {
            let mut row = vec![self.bin_edges[b].to_string(), self.bin_edges[b + 1].to_string()];
            row.extend(self.strikes.iter().map(|s| s.histogram[b].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn histogram(values: &[f64]) -> Vec<u64> {
    let mut h = vec![0u64; HISTOGRAM_BINS];
    for v in values {
        let b = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as isize;
        h[b.clamp(0, HISTOGRAM_BINS as isize - 1) as usize] += 1;
    }
    h
}

/// Per-path correlation of forward log-returns with implied-vol changes.
///
/// Implied volatilities are inverted against the pathwise forward with
/// remaining model time `T - t`.
pub fn stylized_correlations(spec: &MixtureSpec, paths: &[PricePath]) -> Result<StylizedStats> {
    let n = spec.n();
    if n < 1 {
        return Err(Error::InvalidInput("correlations need at least one option".into()));
    }
    let per_path: Vec<Vec<Option<f64>>> = paths
        .par_iter()
        .map(|path| {
            let returns: Vec<f64> = path.prices.windows(2).map(|w| (w[1][0] / w[0][0]).ln()).collect();
            (0..n)
                .map(|j| {
                    let vols: Option<Vec<f64>> = path
                        .times
                        .iter()
                        .zip(&path.prices)
                        .map(|(&t, g)| implied_vol(g[0], spec.strikes[j], spec.maturity - t, g[j + 1]).ok())
                        .collect();
                    let vols = vols?;
                    let dv: Vec<f64> = vols.windows(2).map(|w| w[1] - w[0]).collect();
                    if dv.is_empty() || std_dev(&dv) < MIN_VOL_CHANGE_SD {
                        return None;
                    }
                    pearson(&returns, &dv)
                })
                .collect()
        })
        .collect();
    let bin_edges = (0..=HISTOGRAM_BINS).map(|b| -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64).collect();
    let strikes = (0..n)
        .map(|j| {
            let correlations: Vec<f64> = per_path.iter().filter_map(|r| r[j]).collect();
            let kept = correlations.len();
            let mean = if kept > 0 { correlations.iter().sum::<f64>() / kept as f64 } else { f64::NAN };
            let negative = correlations.iter().filter(|c| **c < 0.0).count();
            StrikeCorrelations {
                strike: spec.strikes[j],
                histogram: histogram(&correlations),
                mean,
                fraction_negative: if kept > 0 { negative as f64 / kept as f64 } else { f64::NAN },
                dropped: paths.len() - kept,
                correlations,
            }
        })
        .collect();
    Ok(StylizedStats { bin_edges, strikes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleStat {
    pub initial: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub t: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// `G^0, ..., G^n`.
    pub prices: Vec<MartingaleStat>,
    /// Mixture weights `p^k`.
    pub weights: Vec<MartingaleStat>,
}

fn summarize(samples: &[Vec<f64>], initial: &[f64]) -> Vec<MartingaleStat> {
    let n = samples.len() as f64;
    (0..initial.len())
        .map(|i| {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let z = if se > 0.0 { (mean - initial[i]) / se } else { 0.0 };
            MartingaleStat { initial: initial[i], mean, se, z }
        })
        .collect()
}

/// Compares Monte Carlo means of prices and weights at time `t` with their
/// initial values. Sample `i` draws from substream `i` of `seed`.
pub fn martingale_check(spec: &MixtureSpec, t: f64, n_samples: usize, seed: u64) -> Result<MartingaleReport> {
    if !(t > 0.0 && t < spec.maturity) || n_samples < 2 {
        return Err(Error::InvalidInput(format!("martingale check needs 0 < t < T and 2+ samples, got t={t}")));
    }
    let dim = spec.n() + 1;
    let origin = DriverState::origin(spec.n());
    let initial_prices = price_map(spec, &origin)?;
    let initial_weights = mixture_weights(spec, &origin)?.p;
    let sd = t.sqrt();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let c: Vec<f64> = (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let st = DriverState::from_coords(&c, t);
            Ok((price_map(spec, &st)?, mixture_weights(spec, &st)?.p))
        })
        .collect::<Result<_>>()?;
    let (prices, weights): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    Ok(MartingaleReport {
        t,
        n_samples,
        seed,
        prices: summarize(&prices, &initial_prices),
        weights: summarize(&weights, &initial_weights),
    })
}
