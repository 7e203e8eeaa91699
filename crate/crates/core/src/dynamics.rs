//! Time-t mixture weights, the price map `h_t`, its Jacobian, the forward
//! density and its volatility, and determinant scans for the set where
//! `h_t` is not locally invertible.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black::{call_forward, d1};
use crate::calibration::{condition_number, MixtureSpec};
use crate::cone::{cone_probability, cone_probability_gradient, Cone};
use crate::error::{Error, Result};
use crate::normal;
use crate::quad;

/// A point `(w, b)` of the Brownian driver at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverState {
    pub w: Vec<f64>,
    pub b: f64,
    pub t: f64,
}

impl DriverState {
    pub fn new(w: Vec<f64>, b: f64, t: f64) -> Self {
        Self { w, b, t }
    }

    pub fn origin(n: usize) -> Self {
        Self { w: vec![0.0; n], b: 0.0, t: 0.0 }
    }

    /// Coordinates `(w_1, ..., w_n, b)`.
    pub fn coords(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.push(self.b);
        v
    }

    pub fn from_coords(v: &[f64], t: f64) -> Self {
        let (w, b) = v.split_at(v.len() - 1);
        Self { w: w.to_vec(), b: b[0], t }
    }
}

/// Partition of the `w`-space into regions `D_k`, evaluated through the
/// probabilities `P(w + sqrt(T - t) Z in D_k)`.
pub trait Partition: Sync {
    fn dim(&self) -> usize;
    fn weights(&self, w: &[f64], t: f64, maturity: f64) -> Vec<f64>;
    /// `grad[k][i]` = derivative of weight `k` in `w_i`.
    fn gradients(&self, w: &[f64], t: f64, maturity: f64) -> Vec<Vec<f64>>;
    /// Whether weights and gradients are evaluated to quadrature accuracy.
    fn certified(&self) -> bool;
}

/// Angular sectors of the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePartition {
    pub cones: Vec<Cone>,
}

impl Partition for ConePartition {
    fn dim(&self) -> usize {
        2
    }

    fn weights(&self, w: &[f64], t: f64, maturity: f64) -> Vec<f64> {
        let w = [w[0], w[1]];
        self.cones.iter().map(|c| cone_probability(w, t, maturity, c)).collect()
    }

    fn gradients(&self, w: &[f64], t: f64, maturity: f64) -> Vec<Vec<f64>> {
        let w = [w[0], w[1]];
        self.cones.iter().map(|c| cone_probability_gradient(w, t, maturity, c).to_vec()).collect()
    }

    fn certified(&self) -> bool {
        true
    }
}

/// Polyhedral cones `D_k = {z : <u_k, z> >= <u_j, z> for all j}` in any
/// dimension, evaluated with a fixed Monte Carlo sample (common random
/// numbers across calls). Not certified.
#[derive(Debug, Clone)]
pub struct MonteCarloPartition {
    directions: Vec<Vec<f64>>,
    samples: Vec<Vec<f64>>,
}

impl MonteCarloPartition {
    pub fn new(directions: Vec<Vec<f64>>, n_samples: usize, seed: u64) -> Result<Self> {
        let dim = directions.first().map_or(0, Vec::len);
        if dim == 0 || directions.iter().any(|u| u.len() != dim) {
            return Err(Error::InvalidInput("directions must share a positive dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n_samples).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
        Ok(Self { directions, samples })
    }

    fn region(&self, x: &[f64]) -> usize {
        let score = |u: &Vec<f64>| u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (0..self.directions.len())
            .max_by(|&a, &b| score(&self.directions[a]).total_cmp(&score(&self.directions[b])))
            .unwrap_or(0)
    }

    fn accumulate(&self, w: &[f64], t: f64, maturity: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let s = (maturity - t).sqrt();
        let dim = w.len();
        let m = self.directions.len();
        let mut counts = vec![0.0; m];
        let mut moments = vec![vec![0.0; dim]; m];
        let mut x = vec![0.0; dim];
        for z in &self.samples {
            for i in 0..dim {
                x[i] = w[i] + s * z[i];
            }
            let k = self.region(&x);
            counts[k] += 1.0;
            for i in 0..dim {
                moments[k][i] += z[i];
            }
        }
        let n = self.samples.len() as f64;
        let p = counts.iter().map(|c| c / n).collect();
        let g = moments.iter().map(|row| row.iter().map(|v| v / (n * s)).collect()).collect();
        (p, g)
    }
}

impl Partition for MonteCarloPartition {
    fn dim(&self) -> usize {
        self.directions[0].len()
    }

    fn weights(&self, w: &[f64], t: f64, maturity: f64) -> Vec<f64> {
        self.accumulate(w, t, maturity).0
    }

    fn gradients(&self, w: &[f64], t: f64, maturity: f64) -> Vec<Vec<f64>> {
        self.accumulate(w, t, maturity).1
    }

    fn certified(&self) -> bool {
        false
    }
}

fn check_state(spec: &MixtureSpec, state: &DriverState, dim: usize) -> Result<()> {
    if !(state.t >= 0.0) || !(state.t < spec.maturity) {
        return Err(Error::AtMaturity { t: state.t, maturity: spec.maturity });
    }
    if state.w.len() != dim {
        return Err(Error::InvalidInput(format!("driver has {} coordinates, partition {dim}", state.w.len())));
    }
    Ok(())
}

fn cone_partition(spec: &MixtureSpec) -> Result<ConePartition> {
    if spec.cones.len() != spec.grid.len() || spec.n() != 2 {
        return Err(Error::InvalidInput("dynamics need the two-strike cone partition".into()));
    }
    Ok(ConePartition { cones: spec.cones.clone() })
}

/// Mixture weights and their gradients at a driver state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub p: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
}

pub fn mixture_weights(spec: &MixtureSpec, state: &DriverState) -> Result<MixtureWeights> {
    mixture_weights_with(spec, &cone_partition(spec)?, state)
}

pub fn mixture_weights_with<P: Partition + ?Sized>(
    spec: &MixtureSpec,
    partition: &P,
    state: &DriverState,
) -> Result<MixtureWeights> {
    check_state(spec, state, partition.dim())?;
    Ok(MixtureWeights {
        p: partition.weights(&state.w, state.t, spec.maturity),
        grad: partition.gradients(&state.w, state.t, spec.maturity),
    })
}

/// `x_t^k = x_k exp(-sigma_k^2 t / 2 + sigma_k b)`.
pub fn spot_factors(spec: &MixtureSpec, state: &DriverState) -> Vec<f64> {
    spec.grid.iter().zip(&spec.sigmas).map(|(&x, &s)| x * (-0.5 * s * s * state.t + s * state.b).exp()).collect()
}

fn prices_from_weights(spec: &MixtureSpec, state: &DriverState, p: &[f64]) -> Vec<f64> {
    let xt = spot_factors(spec, state);
    let rem = spec.maturity - state.t;
    let mut out = Vec::with_capacity(spec.n() + 1);
    out.push(p.iter().zip(&xt).map(|(a, b)| a * b).sum());
    for &k in &spec.strikes {
        let g = (0..p.len()).map(|i| p[i] * call_forward(xt[i], spec.sigmas[i], k, rem)).sum();
        out.push(g);
    }
    out
}

/// Model forward prices `(G^0, G^1, ..., G^n)` at a driver state.
pub fn price_map(spec: &MixtureSpec, state: &DriverState) -> Result<Vec<f64>> {
    price_map_with(spec, &cone_partition(spec)?, state)
}

pub fn price_map_with<P: Partition + ?Sized>(
    spec: &MixtureSpec,
    partition: &P,
    state: &DriverState,
) -> Result<Vec<f64>> {
    check_state(spec, state, partition.dim())?;
    let p = partition.weights(&state.w, state.t, spec.maturity);
    Ok(prices_from_weights(spec, state, &p))
}

/// Jacobian of `h_t`: rows `(h^0, ..., h^n)`, columns `(w_1, ..., w_n, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianMatrix {
    pub entries: Vec<Vec<f64>>,
    pub det: f64,
    pub condition: f64,
}

impl JacobianMatrix {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let m = self.entries.len();
        DMatrix::from_fn(m, m, |r, c| self.entries[r][c])
    }
}

pub fn price_jacobian(spec: &MixtureSpec, state: &DriverState) -> Result<JacobianMatrix> {
    price_jacobian_with(spec, &cone_partition(spec)?, state)
}

pub fn price_jacobian_with<P: Partition + ?Sized>(
    spec: &MixtureSpec,
    partition: &P,
    state: &DriverState,
) -> Result<JacobianMatrix> {
    let weights = mixture_weights_with(spec, partition, state)?;
    let (p, grad) = (&weights.p, &weights.grad);
    let xt = spot_factors(spec, state);
    let rem = spec.maturity - state.t;
    let n = spec.n();
    let dim = state.w.len();
    let m = p.len();
    let mut entries = vec![vec![0.0; dim + 1]; n + 1];
    for i in 0..dim {
        entries[0][i] = (0..m).map(|k| grad[k][i] * xt[k]).sum();
    }
    entries[0][dim] = (0..m).map(|k| p[k] * spec.sigmas[k] * xt[k]).sum();
    for (j, &strike) in spec.strikes.iter().enumerate() {
        let prices: Vec<f64> = (0..m).map(|k| call_forward(xt[k], spec.sigmas[k], strike, rem)).collect();
        for i in 0..dim {
            entries[j + 1][i] = (0..m).map(|k| grad[k][i] * prices[k]).sum();
        }
        entries[j + 1][dim] = (0..m)
            .map(|k| {
                let s = spec.sigmas[k];
                let delta = if s * rem.sqrt() > 0.0 {
                    normal::cdf(d1(xt[k], s, strike, rem))
                } else if xt[k] > strike {
                    1.0
                } else {
                    0.0
                };
                p[k] * delta * s * xt[k]
            })
            .sum();
    }
    let mut jac = JacobianMatrix { entries, det: 0.0, condition: 0.0 };
    if jac.entries.len() == dim + 1 {
        let a = jac.to_matrix();
        jac.det = a.clone().lu().determinant();
        jac.condition = condition_number(&a);
    } else {
        jac.det = f64::NAN;
        jac.condition = f64::INFINITY;
    }
    Ok(jac)
}

/// Determinant of `h_t'` on a `(w_1, w_2)` grid at fixed `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetScan {
    pub t: f64,
    pub b: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `det[i][j]` at `(w1[i], w2[j])`.
    pub det: Vec<Vec<f64>>,
    /// Lower-left corners `(i, j)` of cells whose corner determinants change sign.
    pub sign_change_cells: Vec<(usize, usize)>,
}

impl DetScan {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["w1", "w2", "det"])?;
        for (i, row) in self.det.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                wtr.write_record([self.w1[i].to_string(), self.w2[j].to_string(), d.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Largest absolute difference between horizontally or vertically adjacent nodes.
    pub fn max_adjacent_jump(&self) -> f64 {
        let mut jump: f64 = 0.0;
        for i in 0..self.w1.len() {
            for j in 0..self.w2.len() {
                if i + 1 < self.w1.len() {
                    jump = jump.max((self.det[i + 1][j] - self.det[i][j]).abs());
                }
                if j + 1 < self.w2.len() {
                    jump = jump.max((self.det[i][j + 1] - self.det[i][j]).abs());
                }
            }
        }
        jump
    }
}

pub fn jacobian_det_scan(spec: &MixtureSpec, t: f64, w1: &[f64], w2: &[f64], b: f64) -> Result<DetScan> {
    let partition = cone_partition(spec)?;
    let det: Vec<Vec<f64>> = w1
        .par_iter()
        .map(|&x| {
            w2.iter()
                .map(|&y| Ok(price_jacobian_with(spec, &partition, &DriverState::new(vec![x, y], b, t))?.det))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for i in 0..w1.len().saturating_sub(1) {
        for j in 0..w2.len().saturating_sub(1) {
            let c = [det[i][j], det[i + 1][j], det[i][j + 1], det[i + 1][j + 1]];
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo <= 0.0 && hi >= 0.0 {
                cells.push((i, j));
            }
        }
    }
    Ok(DetScan { t, b, w1: w1.to_vec(), w2: w2.to_vec(), det, sign_change_cells: cells })
}

fn check_lognormal(spec: &MixtureSpec) -> Result<()> {
    if spec.sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("densities need positive component volatilities".into()));
    }
    Ok(())
}

// Lognormal component densities and their standardized log-moneyness terms.
fn components(spec: &MixtureSpec, state: &DriverState, x: f64) -> (Vec<f64>, Vec<f64>) {
    let rem = spec.maturity - state.t;
    let mut dens = Vec::with_capacity(spec.grid.len());
    let mut score = Vec::with_capacity(spec.grid.len());
    for (&xk, &s) in spec.grid.iter().zip(&spec.sigmas) {
        let num = (x / xk).ln() + 0.5 * s * s * spec.maturity - s * state.b;
        let sd = s * rem.sqrt();
        dens.push(normal::pdf(num / sd) / (x * sd));
        score.push(num / (s * rem));
    }
    (dens, score)
}

/// Forward density `f_t(x) = sum_k p_t^k f_t^k(x)`.
pub fn forward_density(spec: &MixtureSpec, state: &DriverState, x: f64) -> Result<f64> {
    let p = mixture_weights(spec, state)?.p;
    density_from_weights(spec, state, &p, x)
}

fn density_from_weights(spec: &MixtureSpec, state: &DriverState, p: &[f64], x: f64) -> Result<f64> {
    check_lognormal(spec)?;
    if !(x > 0.0) {
        return Ok(0.0);
    }
    let (dens, _) = components(spec, state, x);
    Ok(p.iter().zip(&dens).map(|(a, b)| a * b).sum())
}

/// Log-price interval holding all but a negligible tail of every component.
pub fn density_support(spec: &MixtureSpec, state: &DriverState, width_sd: f64) -> (f64, f64) {
    let rem = spec.maturity - state.t;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (xk, s) in spot_factors(spec, state).iter().zip(&spec.sigmas) {
        let mean = xk.ln() - 0.5 * s * s * rem;
        let sd = s * rem.sqrt();
        lo = lo.min(mean - width_sd * sd);
        hi = hi.max(mean + width_sd * sd);
    }
    (lo.exp(), hi.exp())
}

/// `P(S_T <= x)` under `f_t`, by quadrature in log-price.
pub fn forward_cdf(spec: &MixtureSpec, state: &DriverState, x: f64) -> Result<f64> {
    let p = mixture_weights(spec, state)?.p;
    check_lognormal(spec)?;
    if !(x > 0.0) {
        return Ok(0.0);
    }
    let (lo, _) = density_support(spec, state, 12.0);
    if x <= lo {
        return Ok(0.0);
    }
    let f = |u: f64| {
        let y = u.exp();
        density_from_weights(spec, state, &p, y).unwrap_or(0.0) * y
    };
    Ok(quad::integrate(f, lo.ln(), x.ln(), 1e-13, 0.0).clamp(0.0, 1.0))
}

/// Volatility `sigma^f` of the density in the stochastic-exponential form,
/// one component per driver coordinate `(w_1, ..., w_n, b)`.
pub fn density_volatility(spec: &MixtureSpec, state: &DriverState, x: f64) -> Result<Vec<f64>> {
    let weights = mixture_weights(spec, state)?;
    check_lognormal(spec)?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("density volatility at x={x}")));
    }
    let (dens, score) = components(spec, state, x);
    let m = dens.len();
    let f: f64 = (0..m).map(|k| weights.p[k] * dens[k]).sum();
    let mut out: Vec<f64> =
        (0..state.w.len()).map(|i| (0..m).map(|k| weights.grad[k][i] * dens[k]).sum::<f64>() / f).collect();
    out.push((0..m).map(|k| weights.p[k] * dens[k] * score[k]).sum::<f64>() / f);
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
pub(crate) mod tests {
    use super::*;
    use crate::calibration::{calibrate_mixture, MarketSnapshot};
    use proptest::prelude::*;

    /// Two-strike spec calibrated to the index snapshot.
    pub(crate) fn spec2() -> MixtureSpec {
        let snap =
            MarketSnapshot::new(58.0 / 365.0, 0.005, 1128.12, vec![1150.0, 1200.0], vec![49.615, 26.455]).unwrap();
        calibrate_mixture(&snap, &[950.0, 1150.0, 1200.0, 1300.0], &[0.18, 0.08, 0.06, 0.03], 1.0).unwrap().spec
    }

    #[test]
    fn weights_at_origin_are_p0() {
        let spec = spec2();
        let w = mixture_weights(&spec, &DriverState::origin(2)).unwrap();
        for (a, b) in w.p.iter().zip(&spec.p0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn deep_inside_cone() {
        let spec = spec2();
        for (k, c) in spec.cones.iter().enumerate() {
            let a = c.phi + 0.5 * c.theta;
            let st = DriverState::new(vec![10.0 * a.cos(), 10.0 * a.sin()], 0.0, 0.0);
            let p = mixture_weights(&spec, &st).unwrap().p;
            // the narrowest cone is not 10 sd wide at radius 10, so test the bulk
            if c.theta > 0.8 {
                assert!((p[k] - 1.0).abs() < 1e-6, "cone {k}: {p:?}");
            }
        }
    }

    #[test]
    fn repricing_at_origin() {
        let spec = spec2();
        let g = price_map(&spec, &DriverState::origin(2)).unwrap();
        for (a, b) in g.iter().zip([1128.12, 49.615, 26.455]) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn maturity_rejected() {
        let spec = spec2();
        let st = DriverState::new(vec![0.0, 0.0], 0.0, 1.0);
        assert!(matches!(price_map(&spec, &st), Err(Error::AtMaturity { .. })));
    }

    #[test]
    fn spot_factor_edge_cases() {
        let spec = spec2();
        assert_eq!(spot_factors(&spec, &DriverState::origin(2)), spec.grid);
        let mut flat = spec.clone();
        flat.sigmas = vec![0.0; 4];
        assert_eq!(spot_factors(&flat, &DriverState::new(vec![0.0, 0.0], 1.3, 0.4)), spec.grid);
    }

    #[test]
    fn density_integrates_to_one_with_forward_mean() {
        let spec = spec2();
        let st = DriverState::new(vec![0.3, -0.2], 0.1, 0.25);
        let g0 = price_map(&spec, &st).unwrap()[0];
        let p = mixture_weights(&spec, &st).unwrap().p;
        let (lo, hi) = density_support(&spec, &st, 10.0);
        let mass = quad::integrate(|x| density_from_weights(&spec, &st, &p, x).unwrap(), lo, hi, 1e-12, 0.0);
        let mean = quad::integrate(|x| x * density_from_weights(&spec, &st, &p, x).unwrap(), lo, hi, 1e-9, 0.0);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        assert!((mean / g0 - 1.0).abs() < 1e-6, "mean {mean} vs {g0}");
        assert!((forward_cdf(&spec, &st, hi).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_volatility_conserves_mass() {
        let spec = spec2();
        let st = DriverState::new(vec![-0.2, 0.4], -0.1, 0.3);
        let p = mixture_weights(&spec, &st).unwrap().p;
        let (lo, hi) = density_support(&spec, &st, 10.0);
        for i in 0..3 {
            let v = quad::integrate(
                |x| density_volatility(&spec, &st, x).unwrap()[i] * density_from_weights(&spec, &st, &p, x).unwrap(),
                lo,
                hi,
                1e-10,
                0.0,
            );
            assert!(v.abs() < 1e-6, "component {i}: {v}");
        }
    }

    #[test]
    fn single_component_has_no_weight_volatility() {
        let spec = spec2().single_component(2);
        let st = DriverState::new(vec![0.1, 0.1], 0.0, 0.2);
        let v = density_volatility(&spec, &st, 1180.0).unwrap();
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn scan_finds_zero_set() {
        let spec = spec2();
        let grid: Vec<f64> = (0..=24).map(|i| -3.0 + 0.25 * i as f64).collect();
        for &t in &[0.0, 0.5, 0.9] {
            let scan = jacobian_det_scan(&spec, t, &grid, &grid, 0.0).unwrap();
            assert!(!scan.sign_change_cells.is_empty(), "t={t}");
        }
        let scan = jacobian_det_scan(&spec, 0.5, &grid[..3], &grid[..2], 0.0).unwrap();
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("w1,w2,det\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn monte_carlo_partition_matches_quadrants() {
        // directions along the diagonals give the four quadrants
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = vec![vec![d, d], vec![-d, d], vec![-d, -d], vec![d, -d]];
        let mc = MonteCarloPartition::new(dirs, 200_000, 3).unwrap();
        assert!(!mc.certified());
        let cones = ConePartition { cones: crate::cone::cones_from_weights(&[0.25; 4]) };
        let w = [0.3, -0.4];
        let exact = cones.weights(&w, 0.2, 1.0);
        let est = mc.weights(&w, 0.2, 1.0);
        let g_exact = cones.gradients(&w, 0.2, 1.0);
        let g_est = mc.gradients(&w, 0.2, 1.0);
        for k in 0..4 {
            assert!((exact[k] - est[k]).abs() < 5e-3, "{exact:?} vs {est:?}");
            for i in 0..2 {
                assert!((g_exact[k][i] - g_est[k][i]).abs() < 1e-2);
            }
        }
    }

    fn fd_jacobian(spec: &MixtureSpec, st: &DriverState, h: f64) -> Vec<Vec<f64>> {
        let x = st.coords();
        let mut cols = Vec::new();
        for i in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let gu = price_map(spec, &DriverState::from_coords(&up, st.t)).unwrap();
            let gd = price_map(spec, &DriverState::from_coords(&dn, st.t)).unwrap();
            cols.push(gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
        }
        (0..cols[0].len()).map(|r| cols.iter().map(|c| c[r]).collect()).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_normalized(w1 in -3.0f64..3.0, w2 in -3.0f64..3.0, t in 0.0f64..0.99) {
            let spec = spec2();
            let mw = mixture_weights(&spec, &DriverState::new(vec![w1, w2], 0.0, t)).unwrap();
            prop_assert!((mw.p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for i in 0..2 {
                prop_assert!(mw.grad.iter().map(|g| g[i]).sum::<f64>().abs() < 1e-10);
            }
        }

        #[test]
        fn payoff_dominance(w1 in -3.0f64..3.0, w2 in -3.0f64..3.0, b in -2.0f64..2.0, t in 0.0f64..0.99) {
            let spec = spec2();
            let st = DriverState::new(vec![w1, w2], b, t);
            let g = price_map(&spec, &st).unwrap();
            prop_assert!(g[1] >= g[2]);
            prop_assert!(g[1] <= g[0] && g[2] >= 0.0);
            prop_assert!(g[1] >= (g[0] - 1150.0).max(0.0) - 1e-9);
            let jac = price_jacobian(&spec, &st).unwrap();
            prop_assert!(jac.entries[0][2] > 0.0);
            prop_assert!(jac.entries[1][2] <= jac.entries[0][2] && jac.entries[2][2] <= jac.entries[0][2]);
        }

        #[test]
        fn jacobian_matches_differences(w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, b in -1.0f64..1.0, t in 0.0f64..0.9) {
            let spec = spec2();
            let st = DriverState::new(vec![w1, w2], b, t);
            let jac = price_jacobian(&spec, &st).unwrap();
            let fd = fd_jacobian(&spec, &st, 1e-4);
            for r in 0..3 {
                for c in 0..3 {
                    let (a, e) = (jac.entries[r][c], fd[r][c]);
                    prop_assert!((a - e).abs() <= 1e-5 * a.abs().max(1.0), "({}, {}): {} vs {}", r, c, a, e);
                }
            }
        }

        #[test]
        fn density_volatility_matches_differences(
            w1 in -1.5f64..1.5, w2 in -1.5f64..1.5, b in -0.5f64..0.5, t in 0.0f64..0.8, x in 1000.0f64..1300.0,
        ) {
            let spec = spec2();
            let st = DriverState::new(vec![w1, w2], b, t);
            let v = density_volatility(&spec, &st, x).unwrap();
            let f = forward_density(&spec, &st, x).unwrap();
            let h = 1e-5;
            let coords = st.coords();
            for i in 0..3 {
                let mut up = coords.clone();
                let mut dn = coords.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = forward_density(&spec, &DriverState::from_coords(&up, t), x).unwrap();
                let fdn = forward_density(&spec, &DriverState::from_coords(&dn, t), x).unwrap();
                let fd = (fu - fdn) / (2.0 * h) / f;
                prop_assert!((fd - v[i]).abs() <= 1e-5 * v[i].abs().max(1e-3), "{}: {} vs {}", i, v[i], fd);
            }
        }
    }
}
