//! Black-76 forward pricing, implied volatility, put-call parity and
//! quadratic smile fitting with smile-implied densities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Lower end of the implied-volatility search bracket.
pub const IMPLIED_VOL_FLOOR: f64 = 1e-6;
/// Upper end of the implied-volatility search bracket.
pub const IMPLIED_VOL_CAP: f64 = 5.0;
/// Absolute price tolerance of the implied-volatility search.
pub const IMPLIED_VOL_PRICE_TOL: f64 = 1e-10;
/// Relative finite-difference step used for smile-implied densities.
pub const DENSITY_FD_STEP: f64 = 1e-2;

/// Continuously compounded rate and time to maturity in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountContext {
    pub rate: f64,
    pub tau: f64,
}

impl DiscountContext {
    pub fn new(rate: f64, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !rate.is_finite() {
            return Err(Error::Domain(format!("invalid discount context rate={rate} tau={tau}")));
        }
        Ok(Self { rate, tau })
    }

    pub fn discount_factor(&self) -> f64 {
        (-self.rate * self.tau).exp()
    }
}

#[inline]
pub(crate) fn d1(x: f64, sigma: f64, strike: f64, tau: f64) -> f64 {
    let sd = sigma * tau.sqrt();
    (x / strike).ln() / sd + 0.5 * sd
}

/// Black-76 call forward price without argument validation.
///
/// Handles the degenerate cases `strike == 0` (returns `x`) and zero total
/// volatility (returns the intrinsic value).
#[inline]
pub(crate) fn call_forward(x: f64, sigma: f64, strike: f64, tau: f64) -> f64 {
    if strike <= 0.0 {
        return x;
    }
    let sd = sigma * tau.sqrt();
    if sd <= 0.0 {
        return (x - strike).max(0.0);
    }
    let d1 = (x / strike).ln() / sd + 0.5 * sd;
    let price = x * normal::cdf(d1) - strike * normal::cdf(d1 - sd);
    price.clamp((x - strike).max(0.0), x)
}

/// Forward price of a European call under Black's model.
pub fn black_forward_price(x: f64, sigma: f64, strike: f64, tau: f64) -> Result<f64> {
    if !(x > 0.0) || !(strike >= 0.0) || !(sigma >= 0.0) || !(tau >= 0.0) {
        return Err(Error::Domain(format!("black_forward_price(x={x}, sigma={sigma}, K={strike}, tau={tau})")));
    }
    Ok(call_forward(x, sigma, strike, tau))
}

/// Discounts a forward price to a spot price.
pub fn discount_to_spot(forward_price: f64, ctx: &DiscountContext) -> f64 {
    forward_price * ctx.discount_factor()
}

/// Inverts Black's formula for the volatility by bisection on
/// `[IMPLIED_VOL_FLOOR, IMPLIED_VOL_CAP]`.
pub fn implied_vol(forward: f64, strike: f64, tau: f64, target: f64) -> Result<f64> {
    if !(forward > 0.0) || !(strike >= 0.0) || !(tau > 0.0) {
        return Err(Error::Domain(format!("implied_vol(forward={forward}, K={strike}, tau={tau})")));
    }
    let lower = (forward - strike).max(0.0);
    let upper = forward;
    if !(target > lower && target < upper) {
        return Err(Error::NoSolution { target, lower, upper });
    }
    let (mut lo, mut hi) = (IMPLIED_VOL_FLOOR, IMPLIED_VOL_CAP);
    let p_lo = call_forward(forward, lo, strike, tau);
    let p_hi = call_forward(forward, hi, strike, tau);
    if target < p_lo - IMPLIED_VOL_PRICE_TOL || target > p_hi + IMPLIED_VOL_PRICE_TOL {
        return Err(Error::NoSolution { target, lower: p_lo, upper: p_hi });
    }
    // Bisect to full precision; the price tolerance alone does not pin sigma
    // where vega is small.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = call_forward(forward, mid, strike, tau);
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let err = (call_forward(forward, sigma, strike, tau) - target).abs();
    if err > IMPLIED_VOL_PRICE_TOL.max(1e-14 * target) {
        return Err(Error::NoSolution { target, lower: p_lo, upper: p_hi });
    }
    Ok(sigma)
}

/// Forward of the underlying implied by put-call parity, `K + e^{r tau} (C - P)`.
pub fn forward_from_parity(call: f64, put: f64, strike: f64, ctx: &DiscountContext) -> f64 {
    strike + (call - put) / ctx.discount_factor()
}

/// How the fitted smile is evaluated outside the fitted strike range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmileExtrapolation {
    /// Keep evaluating the quadratic.
    #[default]
    Polynomial,
    /// Hold the volatility at the value of the nearest fitted endpoint.
    Flat,
}

/// Quadratic volatility smile `K -> a0 + a1 K + a2 K^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileFit {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub strike_range: [f64; 2],
    pub residuals: Vec<f64>,
    #[serde(default)]
    pub extrapolation: SmileExtrapolation,
}

impl SmileFit {
    fn poly(&self, k: f64) -> f64 {
        self.a0 + k * (self.a1 + k * self.a2)
    }

    /// Volatility at strike `k`.
    pub fn vol(&self, k: f64) -> f64 {
        match self.extrapolation {
            SmileExtrapolation::Polynomial => self.poly(k),
            SmileExtrapolation::Flat => self.poly(k.clamp(self.strike_range[0], self.strike_range[1])),
        }
    }

    pub fn with_extrapolation(mut self, extrapolation: SmileExtrapolation) -> Self {
        self.extrapolation = extrapolation;
        self
    }

    /// Volatility at `k`, rejecting non-positive values.
    pub fn checked_vol(&self, k: f64) -> Result<f64> {
        let v = self.vol(k);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::NonPositiveSmile { strike: k, vol: v })
        }
    }

    /// Smile-priced call forward.
    pub fn call_forward(&self, forward: f64, strike: f64, tau: f64) -> Result<f64> {
        let v = self.checked_vol(strike)?;
        black_forward_price(forward, v, strike, tau)
    }

    pub fn rms_residual(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        (self.residuals.iter().map(|r| r * r).sum::<f64>() / self.residuals.len() as f64).sqrt()
    }
}

/// Least-squares quadratic fit of implied volatilities against strikes.
pub fn fit_smile(strikes: &[f64], vols: &[f64]) -> Result<SmileFit> {
    if strikes.len() != vols.len() {
        return Err(Error::InvalidInput("strikes and vols differ in length".into()));
    }
    if strikes.len() < 3 {
        return Err(Error::DegenerateDesign(format!("need at least 3 points, got {}", strikes.len())));
    }
    let mut sorted = strikes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[1] > w[0]).count();
    if distinct < 3 {
        return Err(Error::DegenerateDesign(format!("only {distinct} distinct strikes")));
    }
    let (kmin, kmax) = (sorted[0], sorted[sorted.len() - 1]);
    let center = 0.5 * (kmin + kmax);
    let scale = 0.5 * (kmax - kmin);

    // Centered and scaled basis keeps the normal matrix well conditioned.
    let m = strikes.len();
    let design = DMatrix::from_fn(m, 3, |i, j| ((strikes[i] - center) / scale).powi(j as i32));
    let rhs = DVector::from_column_slice(vols);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(Error::DegenerateDesign("collinear quadratic design".into()));
    }
    let b = svd.solve(&rhs, 1e-14 * smax).map_err(|e| Error::DegenerateDesign(e.to_string()))?;

    let (c, s) = (center, scale);
    let a2 = b[2] / (s * s);
    let a1 = b[1] / s - 2.0 * b[2] * c / (s * s);
    let a0 = b[0] - b[1] * c / s + b[2] * c * c / (s * s);
    let fitted = &design * &b;
    let residuals = (0..m).map(|i| vols[i] - fitted[i]).collect();

    let fit =
        SmileFit { a0, a1, a2, strike_range: [kmin, kmax], residuals, extrapolation: SmileExtrapolation::default() };
    let mut checks = vec![kmin, kmax];
    if a2 != 0.0 {
        let vertex = -a1 / (2.0 * a2);
        if vertex > kmin && vertex < kmax {
            checks.push(vertex);
        }
    }
    for k in checks {
        fit.checked_vol(k)?;
    }
    Ok(fit)
}

/// Density of `S_T` implied by the smile-priced call curve,
/// `e^{r tau} d^2 C / dK^2`, by central differences with step `1e-2 K`.
///
/// Negative values are returned as computed.
pub fn implied_density_from_smile(
    fit: &SmileFit,
    forward: f64,
    ctx: &DiscountContext,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let df = ctx.discount_factor();
    let spot_call = |k: f64| -> Result<f64> { Ok(df * fit.call_forward(forward, k, ctx.tau)?) };
    grid.iter()
        .map(|&k| {
            if !(k > 0.0) {
                return Err(Error::Domain(format!("density grid strike {k}")));
            }
            let h = DENSITY_FD_STEP * k;
            let second = (spot_call(k + h)? - 2.0 * spot_call(k)? + spot_call(k - h)?) / (h * h);
            Ok(second / df)
        })
        .collect()
}
