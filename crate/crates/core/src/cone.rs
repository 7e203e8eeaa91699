//! Probabilities that a Brownian point started at `w` ends in an angular
//! sector of the plane, and their gradients in `w`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::normal::{cdf, pdf};
use crate::quad;

/// Relative tolerance of the inner Gaussian integral.
pub const CONE_QUAD_REL_TOL: f64 = 1e-13;
/// Absolute floor, so that far-away cones stop refining once negligible.
pub const CONE_QUAD_ABS_TOL: f64 = 1e-300;

/// Angular sector `{r (cos a, sin a): r >= 0, a in [phi, phi + theta]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub phi: f64,
    pub theta: f64,
}

impl Cone {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    /// Splits into equal sub-cones of width at most pi/2.
    pub fn sub_cones(&self) -> Vec<Cone> {
        if self.theta <= 0.0 {
            return Vec::new();
        }
        let pieces = (self.theta / FRAC_PI_2 - 1e-12).ceil().max(1.0) as usize;
        let width = self.theta / pieces as f64;
        (0..pieces).map(|i| Cone::new(self.phi + i as f64 * width, width)).collect()
    }

    /// Whether the point lies in the closed sector.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if self.theta <= 0.0 {
            return false;
        }
        if self.theta >= 2.0 * PI {
            return true;
        }
        let a = (y.atan2(x) - self.phi).rem_euclid(2.0 * PI);
        a <= self.theta
    }
}

/// Rotation by `-phi`, taking the sector starting at `phi` to one starting at 0.
#[inline]
fn rotate(w: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * w[0] + s * w[1], -s * w[0] + c * w[1]]
}

fn base_probability(w: [f64; 2], s: f64, theta: f64) -> f64 {
    let (sin_t, cos_t) = theta.sin_cos();
    let cot = cos_t / sin_t;
    let lo = (w[1] - 10.0 * s).max(0.0);
    let hi = (w[1] + 10.0 * s).max(0.0);
    if hi <= lo {
        return 0.0;
    }
    let integrand = |y: f64| pdf((y - w[1]) / s) / s * cdf((w[0] - y * cot) / s);
    quad::integrate(integrand, lo, hi, CONE_QUAD_ABS_TOL, CONE_QUAD_REL_TOL).clamp(0.0, 1.0)
}

fn base_gradient(w: [f64; 2], s: f64, theta: f64) -> [f64; 2] {
    let (sin_t, cos_t) = theta.sin_cos();
    let along = cdf((w[0] * cos_t + w[1] * sin_t) / s);
    let gx = sin_t * pdf((w[1] * cos_t - w[0] * sin_t) / s) / s * along;
    let gy = pdf(w[1] / s) / s * cdf(w[0] / s) - cos_t * pdf((w[0] * sin_t - w[1] * cos_t) / s) / s * along;
    [gx, gy]
}

/// `P(w + sqrt(T - t) Z in cone)` for a standard bivariate normal `Z`.
///
/// Callers guarantee `t < maturity`.
pub fn cone_probability(w: [f64; 2], t: f64, maturity: f64, cone: &Cone) -> f64 {
    let s = (maturity - t).sqrt();
    cone.sub_cones().iter().map(|c| base_probability(rotate(w, c.phi), s, c.theta)).sum::<f64>().min(1.0)
}

/// Gradient of [`cone_probability`] with respect to `w`.
pub fn cone_probability_gradient(w: [f64; 2], t: f64, maturity: f64, cone: &Cone) -> [f64; 2] {
    let s = (maturity - t).sqrt();
    let mut g = [0.0; 2];
    for c in cone.sub_cones() {
        let [gx, gy] = base_gradient(rotate(w, c.phi), s, c.theta);
        let (sp, cp) = c.phi.sin_cos();
        g[0] += cp * gx - sp * gy;
        g[1] += sp * gx + cp * gy;
    }
    g
}

/// Contiguous cones starting at angle 0 with widths `2 pi p_k`.
pub fn cones_from_weights(p: &[f64]) -> Vec<Cone> {
    let mut phi = 0.0;
    p.iter()
        .map(|&pk| {
            let c = Cone::new(phi, 2.0 * PI * pk.max(0.0));
            phi += c.theta;
            c
        })
        .collect()
}
