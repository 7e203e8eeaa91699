//! Run configuration (TOML) and the calibration pipeline shared by the CLI
//! and the acceptance tests.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::black::{black_forward_price, fit_smile, implied_vol, SmileExtrapolation, SmileFit};
use crate::calibration::{
    calibrate_mixture, check_static_no_arbitrage, grid_bounds, max_uniform_sigma, ArbitrageReport, Calibration,
    MarketSnapshot,
};
use crate::error::{Error, Result};
use crate::ingest::{ingest_quotes, IngestConfig, IngestReport};
use crate::tracking::FilterConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Quote CSV; relative paths resolve against the config file's directory.
    pub quotes: PathBuf,
    pub expiry: NaiveDate,
    pub rate: f64,
    #[serde(default)]
    pub volume_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub strikes: Vec<f64>,
    pub x_low: f64,
    pub x_high: f64,
    pub sigmas: Vec<f64>,
    /// Model horizon T of the driver and of the calibration matrix.
    pub maturity: f64,
    /// Price the model strikes off a quadratic smile fitted on the first date.
    #[serde(default)]
    pub use_smile: bool,
    #[serde(default)]
    pub smile_extrapolation: SmileExtrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub model: ModelConfig,
    pub filter: FilterConfig,
    pub simulation: SimulationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if cfg.market.quotes.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.market.quotes = dir.join(&cfg.market.quotes);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let n = m.strikes.len();
        if n == 0 || m.strikes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("model.strikes must be non-empty and increasing".into()));
        }
        if m.sigmas.len() != n + 2 {
            return Err(Error::Config(format!("model.sigmas needs {} entries, found {}", n + 2, m.sigmas.len())));
        }
        if !(m.x_low < m.strikes[0] && m.x_high > m.strikes[n - 1]) {
            return Err(Error::Config("grid endpoints must bracket the strikes".into()));
        }
        if !(m.maturity > 0.0) || m.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("maturity and sigmas must be positive".into()));
        }
        if self.simulation.dt * self.simulation.steps as f64 >= m.maturity {
            return Err(Error::Config("simulation must end before the model maturity".into()));
        }
        if self.filter.particles == 0 {
            return Err(Error::Config("filter.particles must be positive".into()));
        }
        Ok(())
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            expiry: self.market.expiry,
            rate: self.market.rate,
            volume_threshold: self.market.volume_threshold,
        }
    }

    /// `(x_low, K_1, ..., K_n, x_high)`.
    pub fn grid(&self) -> Vec<f64> {
        let m = &self.model;
        std::iter::once(m.x_low).chain(m.strikes.iter().copied()).chain(std::iter::once(m.x_high)).collect()
    }

    pub fn load_market(&self) -> Result<IngestReport> {
        ingest_quotes(&self.market.quotes, &self.ingest_config())
    }
}

/// Fits a quadratic smile to the implied volatilities of a snapshot's calls.
pub fn snapshot_smile(snap: &MarketSnapshot) -> Result<SmileFit> {
    let vols = snap
        .strikes
        .iter()
        .zip(&snap.option_forwards)
        .map(|(&k, &g)| implied_vol(snap.forward, k, snap.tau, g))
        .collect::<Result<Vec<_>>>()?;
    fit_smile(&snap.strikes, &vols)
}

/// Snapshot at the model strikes, either read directly or priced off the smile.
pub fn model_snapshot(snap: &MarketSnapshot, model: &ModelConfig) -> Result<(MarketSnapshot, Option<SmileFit>)> {
    let (forwards, smile) = if model.use_smile {
        let fit = snapshot_smile(snap)?.with_extrapolation(model.smile_extrapolation);
        let g = model
            .strikes
            .iter()
            .map(|&k| black_forward_price(snap.forward, fit.checked_vol(k)?, k, snap.tau))
            .collect::<Result<Vec<_>>>()?;
        (g, Some(fit))
    } else {
        let g = model
            .strikes
            .iter()
            .map(|&k| {
                snap.strikes
                    .iter()
                    .position(|&x| x == k)
                    .map(|i| snap.option_forwards[i])
                    .ok_or_else(|| Error::Config(format!("strike {k} not in the market data")))
            })
            .collect::<Result<Vec<_>>>()?;
        (g, None)
    };
    let mut out = MarketSnapshot::new(snap.tau, snap.rate, snap.forward, model.strikes.clone(), forwards)?;
    out.date = snap.date.clone();
    out.source = snap.source.clone();
    Ok((out, smile))
}

/// Everything the calibrate command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub snapshot: MarketSnapshot,
    pub smile: Option<SmileFit>,
    pub arbitrage: ArbitrageReport,
    pub grid_bounds: Option<(f64, f64)>,
    pub max_uniform_sigma: Option<f64>,
    pub calibration: Calibration,
}

pub fn calibrate_from_snapshot(snap: &MarketSnapshot, model: &ModelConfig, grid: &[f64]) -> Result<CalibrationOutput> {
    let (snapshot, smile) = model_snapshot(snap, model)?;
    let arbitrage = check_static_no_arbitrage(&snapshot);
    let bounds = if snapshot.n() >= 2 { grid_bounds(&snapshot).ok() } else { None };
    let sigma_star = max_uniform_sigma(&snapshot, grid, model.maturity).ok();
    let calibration = calibrate_mixture(&snapshot, grid, &model.sigmas, model.maturity)?;
    Ok(CalibrationOutput {
        snapshot,
        smile,
        arbitrage,
        grid_bounds: bounds,
        max_uniform_sigma: sigma_star,
        calibration,
    })
}

/// Calibrates to the first ingested date.
pub fn calibrate_config(cfg: &RunConfig, market: &IngestReport) -> Result<CalibrationOutput> {
    let first = market.snapshots.first().ok_or_else(|| Error::Config("no usable dates in the quote file".into()))?;
    calibrate_from_snapshot(first, &cfg.model, &cfg.grid())
}
