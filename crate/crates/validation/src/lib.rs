//! Shared helpers for the acceptance checks in `tests/acceptance.rs`.

use std::path::{Path, PathBuf};

use forward_density::config::{calibrate_config, CalibrationOutput, RunConfig};
use forward_density::Result;

/// Verdict and measured values of one criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

pub fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Loads a bundled config, ingests its quotes and calibrates to the first date.
pub fn load(name: &str) -> Result<(RunConfig, CalibrationOutput)> {
    let cfg = RunConfig::load(&configs_dir().join(name))?;
    let market = cfg.load_market()?;
    let out = calibrate_config(&cfg, &market)?;
    Ok((cfg, out))
}

pub fn within(actual: &[f64], target: &[f64], tol: f64) -> bool {
    actual.len() == target.len() && actual.iter().zip(target).all(|(a, b)| (a - b).abs() <= tol)
}

/// `(a, b, ...)` with five decimals, or three-digit scientific notation for
/// very large or small magnitudes.
pub fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|x| if x.abs() >= 1e4 || (x.abs() < 1e-3 && *x != 0.0) { format!("{x:.3e}") } else { format!("{x:.5}") })
        .collect();
    format!("({})", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_is_inclusive() {
        assert!(within(&[1.0, 2.0], &[1.5, 2.0], 0.5));
        assert!(!within(&[1.0], &[1.0, 2.0], 1.0));
    }

    #[test]
    fn formatting_switches_notation() {
        assert_eq!(fmt(&[0.25, 2.0e59, 1e-5]), "(0.25000, 2.000e59, 1.000e-5)");
    }

    #[test]
    fn bundled_configs_load() {
        for name in ["paramsneq2.toml", "paramsneq5.toml"] {
            let (cfg, out) = load(name).unwrap();
            assert_eq!(out.calibration.spec.p0.len(), cfg.model.strikes.len() + 2);
        }
    }
}
