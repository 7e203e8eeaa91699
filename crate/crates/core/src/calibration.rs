//! Static calibration: no-arbitrage checks, grid bounds, the closed-form
//! discrete solution, the lognormal-extended linear system, and the reachable
//! price range.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::black::call_forward;
use crate::cone::{cones_from_weights, Cone};
use crate::error::{Error, Result};

/// Components below `-NEGATIVE_TOL` are treated as genuinely negative.
pub const NEGATIVE_TOL: f64 = 1e-10;
/// Tolerance on negative components of the closed-form discrete solution.
pub const DISCRETE_NEGATIVE_TOL: f64 = 1e-12;
/// Condition numbers above this make the calibration system singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const SIGMA_CAP: f64 = 1.0;
pub const SIGMA_TOL: f64 = 1e-5;

/// Cleaned market state at one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    pub tau: f64,
    pub rate: f64,
    pub forward: f64,
    pub strikes: Vec<f64>,
    pub option_forwards: Vec<f64>,
}

impl MarketSnapshot {
    pub fn new(tau: f64, rate: f64, forward: f64, strikes: Vec<f64>, option_forwards: Vec<f64>) -> Result<Self> {
        let snap = Self { date: None, source: None, tau, rate, forward, strikes, option_forwards };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strikes.len() != self.option_forwards.len() {
            return Err(Error::InvalidInput("strikes and option forwards differ in length".into()));
        }
        if self.strikes.is_empty() {
            return Err(Error::InvalidInput("snapshot has no options".into()));
        }
        if self.strikes.windows(2).any(|w| !(w[1] > w[0])) || !(self.strikes[0] > 0.0) {
            return Err(Error::InvalidInput("strikes must be positive and strictly increasing".into()));
        }
        if !(self.forward >= 0.0) || self.option_forwards.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidInput("prices must be non-negative".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidInput(format!("tau {} < 0", self.tau)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.strikes.len()
    }

    /// `G^0, G^1, ..., G^n`.
    pub fn prices(&self) -> Vec<f64> {
        std::iter::once(self.forward).chain(self.option_forwards.iter().copied()).collect()
    }

    /// Right-hand side `(1, G^0, ..., G^n)` of the calibration system.
    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.n() + 2, std::iter::once(1.0).chain(self.prices()))
    }

    // G^j with G^0 the forward; K_0 = 0.
    fn g(&self, j: usize) -> f64 {
        if j == 0 {
            self.forward
        } else {
            self.option_forwards[j - 1]
        }
    }

    fn k(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.strikes[j - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub j: usize,
    pub value: f64,
    /// Distance to violation; negative when violated.
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub vertical: Vec<ConditionCheck>,
    pub butterfly: Vec<ConditionCheck>,
    pub passed: bool,
}

/// Evaluates the vertical-spread and butterfly conditions.
pub fn check_static_no_arbitrage(snap: &MarketSnapshot) -> ArbitrageReport {
    let n = snap.n();
    let vertical: Vec<ConditionCheck> = (1..=n)
        .map(|j| {
            let value = (snap.g(j - 1) - snap.g(j)) / (snap.k(j) - snap.k(j - 1));
            let slack = value.min(1.0 - value);
            ConditionCheck { j, value, slack, passed: slack >= 0.0 }
        })
        .collect();
    let butterfly: Vec<ConditionCheck> = (1..n)
        .map(|j| {
            let (k0, k1, k2) = (snap.k(j - 1), snap.k(j), snap.k(j + 1));
            let value = snap.g(j - 1) - (k2 - k0) / (k2 - k1) * snap.g(j) + (k1 - k0) / (k2 - k1) * snap.g(j + 1);
            ConditionCheck { j, value, slack: value, passed: value >= 0.0 }
        })
        .collect();
    let passed = vertical.iter().chain(&butterfly).all(|c| c.passed);
    ArbitrageReport { vertical, butterfly, passed }
}

/// Largest admissible bottom grid point and smallest admissible top grid point.
pub fn grid_bounds(snap: &MarketSnapshot) -> Result<(f64, f64)> {
    let n = snap.n();
    if n < 2 {
        return Err(Error::InvalidInput("grid bounds need at least two strikes".into()));
    }
    let (k1, k2) = (snap.k(1), snap.k(2));
    let (g0, g1, g2) = (snap.g(0), snap.g(1), snap.g(2));
    let den = (k2 - k1) - (g1 - g2);
    if den == 0.0 {
        return Err(Error::DivisionDegenerate("lower grid bound denominator is zero"));
    }
    let x1 = (g0 * (k2 - k1) + g2 * k1 - g1 * k2) / den;
    let (gm, gn) = (snap.g(n - 1), snap.g(n));
    if gm == gn {
        return Err(Error::DivisionDegenerate("upper grid bound is infinite (equal top option prices)"));
    }
    let xt = (gm * snap.k(n) - gn * snap.k(n - 1)) / (gm - gn);
    Ok((x1, xt))
}

/// Closed-form probabilities of the discrete model on
/// `(x1, K_1, ..., K_n, x_top)`.
pub fn solve_discrete_probabilities(snap: &MarketSnapshot, x1: f64, x_top: f64) -> Result<Vec<f64>> {
    let n = snap.n();
    if n < 2 {
        return Err(Error::InvalidInput("closed form needs at least two strikes".into()));
    }
    let g = |j: usize| snap.g(j);
    let k = |j: usize| snap.k(j);
    let mut p = vec![0.0; n + 2];
    // 1-based indices below follow the grid numbering.
    p[0] = (k(1) + g(1) - g(0)) / (k(1) - x1);
    p[1] = (x1 * (g(1) - g(2) - (k(2) - k(1))) + g(0) * (k(2) - k(1)) - g(1) * k(2) + g(2) * k(1))
        / ((k(1) - x1) * (k(2) - k(1)));
    for kk in 3..=n {
        p[kk - 1] = g(kk - 2) / (k(kk - 1) - k(kk - 2))
            - g(kk - 1) * (k(kk) - k(kk - 2)) / ((k(kk - 1) - k(kk - 2)) * (k(kk) - k(kk - 1)))
            + g(kk) / (k(kk) - k(kk - 1));
    }
    p[n] = g(n - 1) / (k(n) - k(n - 1)) - g(n) * (x_top - k(n - 1)) / ((k(n) - k(n - 1)) * (x_top - k(n)));
    p[n + 1] = g(n) / (x_top - k(n));
    if p.iter().any(|v| !v.is_finite() || *v < -DISCRETE_NEGATIVE_TOL) {
        return Err(Error::InfeasiblePrices { p });
    }
    Ok(p)
}

/// Grid `(x1, K_1, ..., K_n, x_top)` of the discrete model.
pub fn discrete_grid(strikes: &[f64], x1: f64, x_top: f64) -> Vec<f64> {
    std::iter::once(x1).chain(strikes.iter().copied()).chain(std::iter::once(x_top)).collect()
}

/// Matrix with rows `1`, `x_k` and `G^B(x_k, sigma_k, K_j, T)`.
pub fn build_extended_system(x: &[f64], sigma: &[f64], strikes: &[f64], maturity: f64) -> DMatrix<f64> {
    let m = x.len();
    DMatrix::from_fn(strikes.len() + 2, m, |row, col| match row {
        0 => 1.0,
        1 => x[col],
        _ => call_forward(x[col], sigma[col], strikes[row - 2], maturity),
    })
}

/// Payoff matrix of the discrete model (zero volatilities).
pub fn discrete_system(x: &[f64], strikes: &[f64]) -> DMatrix<f64> {
    build_extended_system(x, &vec![0.0; x.len()], strikes, 0.0)
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Solves `A p = b` by partial-pivot LU, returning `p` and the condition number.
pub fn solve_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
    let condition = condition_number(a);
    if !(condition < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let p = a.clone().lu().solve(b).ok_or(Error::SingularSystem { condition })?;
    Ok((p.iter().copied().collect(), condition))
}

/// The calibrated lognormal-mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub strikes: Vec<f64>,
    pub grid: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub p0: Vec<f64>,
    pub maturity: f64,
    /// Driver partition; filled for two strikes only.
    #[serde(default)]
    pub cones: Vec<Cone>,
}

impl MixtureSpec {
    pub fn n(&self) -> usize {
        self.strikes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n() + 2;
        if self.grid.len() != m || self.sigmas.len() != m || self.p0.len() != m {
            return Err(Error::InvalidInput(format!("mixture needs {m} grid points, sigmas and weights")));
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0)) || self.grid.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidInput("grid must be positive and sigmas non-negative".into()));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::InvalidInput("maturity must be positive".into()));
        }
        if !self.cones.is_empty() {
            let total: f64 = self.cones.iter().map(|c| c.theta).sum();
            if self.cones.len() != m || (total - 2.0 * std::f64::consts::PI).abs() > 1e-9 {
                return Err(Error::InvalidInput("cones must partition the plane".into()));
            }
        }
        Ok(())
    }

    /// Single lognormal component `k` with all weight on one cone.
    pub fn single_component(&self, k: usize) -> Self {
        let mut p0 = vec![0.0; self.p0.len()];
        p0[k] = 1.0;
        let cones = if self.cones.is_empty() { Vec::new() } else { cones_from_weights(&p0) };
        Self { p0, cones, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: MixtureSpec,
    pub condition: f64,
}

/// Solves `A p = (1, G^0, ..., G^n)` for the mixture weights at horizon `maturity`.
pub fn calibrate_mixture(snap: &MarketSnapshot, x: &[f64], sigma: &[f64], maturity: f64) -> Result<Calibration> {
    let n = snap.n();
    if x.len() != n + 2 || sigma.len() != n + 2 {
        return Err(Error::InvalidInput(format!("need {} grid points and volatilities", n + 2)));
    }
    let a = build_extended_system(x, sigma, &snap.strikes, maturity);
    let (p, condition) = solve_system(&a, &snap.rhs())?;
    let negative: Vec<usize> = (0..p.len()).filter(|&k| p[k] < -NEGATIVE_TOL).collect();
    if !negative.is_empty() {
        return Err(Error::OutOfRange { p, negative });
    }
    let cones = if n == 2 { cone_partition_from_p0(&p)? } else { Vec::new() };
    let spec =
        MixtureSpec { strikes: snap.strikes.clone(), grid: x.to_vec(), sigmas: sigma.to_vec(), p0: p, maturity, cones };
    Ok(Calibration { spec, condition })
}

/// Largest common volatility for which the calibration stays feasible.
pub fn max_uniform_sigma(snap: &MarketSnapshot, x: &[f64], maturity: f64) -> Result<f64> {
    let feasible = |s: f64| -> Result<bool> {
        match calibrate_mixture(snap, x, &vec![s; x.len()], maturity) {
            Ok(_) => Ok(true),
            Err(Error::OutOfRange { .. }) | Err(Error::SingularSystem { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if !feasible(SIGMA_FLOOR)? {
        return Err(Error::InfeasibleAtFloor { floor: SIGMA_FLOOR });
    }
    if feasible(SIGMA_CAP)? {
        return Ok(SIGMA_CAP);
    }
    let (mut lo, mut hi) = (SIGMA_FLOOR, SIGMA_CAP);
    while hi - lo > SIGMA_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Extreme price vectors `b_k = A e_k` with the probability row dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRange {
    pub extremes: Vec<Vec<f64>>,
}

impl PriceRange {
    fn matrix(&self) -> DMatrix<f64> {
        let m = self.extremes.len();
        let rows = self.extremes[0].len() + 1;
        DMatrix::from_fn(rows, m, |r, c| if r == 0 { 1.0 } else { self.extremes[c][r - 1] })
    }

    /// Barycentric coordinates of `b` with respect to the extremes.
    pub fn coordinates(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = DVector::from_iterator(b.len() + 1, std::iter::once(1.0).chain(b.iter().copied()));
        Ok(solve_system(&self.matrix(), &rhs)?.0)
    }

    pub fn contains(&self, b: &[f64]) -> Result<bool> {
        Ok(self.coordinates(b)?.iter().all(|&p| p >= -NEGATIVE_TOL))
    }
}

pub fn price_range_extremes(a: &DMatrix<f64>) -> PriceRange {
    let extremes = (0..a.ncols()).map(|c| (1..a.nrows()).map(|r| a[(r, c)]).collect()).collect();
    PriceRange { extremes }
}

/// Contiguous cones from angle 0 with widths `2 pi p0_k` (two strikes only).
pub fn cone_partition_from_p0(p0: &[f64]) -> Result<Vec<Cone>> {
    if p0.len() != 4 {
        return Err(Error::InvalidInput("cone partition is defined for two strikes only".into()));
    }
    let total: f64 = p0.iter().sum();
    if p0.iter().any(|p| *p < -NEGATIVE_TOL) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("p0 {p0:?} is not a probability vector")));
    }
    let clipped: Vec<f64> = p0.iter().map(|p| p.max(0.0) / total).collect();
    Ok(cones_from_weights(&clipped))
}
