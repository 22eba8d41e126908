//! Numeric tolerance bundle shared by every module.
//!
//! The defaults are compiled in. A process may install a different bundle
//! once at startup (the CLI does this from `TDO_MPC_TOL`); every later call
//! to [`current`] sees the installed values.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative asymmetry accepted by the symmetric eigensolver.
    pub symmetry: f64,
    /// Jacobi sweeps stop once the off-diagonal norm falls below this fraction of `‖M‖`.
    pub jacobi_off_diagonal: f64,
    /// Smallest admissible `λ⁻/λ⁺` for a matrix to count as positive definite.
    pub spd_ratio: f64,
    /// Relative change that terminates the Riccati and Lyapunov fixed points.
    pub fixed_point_change: f64,
    /// Iteration cap for the Riccati and Lyapunov fixed points.
    pub fixed_point_max_iters: usize,
    /// Accepted relative Riccati residual for a user supplied terminal weight.
    pub riccati_residual: f64,
    /// Fixed-point residual certifying an oracle solution.
    pub oracle: f64,
    /// Iteration cap of the oracle's gradient polish.
    pub oracle_max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symmetry: 1e-12,
            jacobi_off_diagonal: 1e-14,
            spd_ratio: 1e-12,
            fixed_point_change: 1e-12,
            fixed_point_max_iters: 100_000,
            riccati_residual: 1e-9,
            oracle: 1e-12,
            oracle_max_iters: 10_000_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ToleranceParseError {
    #[error("expected key=value, got `{0}`")]
    Malformed(String),
    #[error("unknown tolerance key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
}

impl Tolerances {
    /// Applies comma separated `key=value` overrides, e.g. `oracle=1e-10,riccati_residual=1e-8`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, ToleranceParseError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ToleranceParseError::Malformed(item.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ToleranceParseError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            };
            let real = || -> Result<f64, ToleranceParseError> {
                match value.parse::<f64>() {
                    Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
                    _ => Err(bad()),
                }
            };
            let count = || -> Result<usize, ToleranceParseError> {
                match value.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 1.0 && v.fract() == 0.0 => Ok(v as usize),
                    _ => Err(bad()),
                }
            };
            match key {
                "symmetry" => self.symmetry = real()?,
                "jacobi_off_diagonal" => self.jacobi_off_diagonal = real()?,
                "spd_ratio" => self.spd_ratio = real()?,
                "fixed_point_change" => self.fixed_point_change = real()?,
                "fixed_point_max_iters" => self.fixed_point_max_iters = count()?,
                "riccati_residual" => self.riccati_residual = real()?,
                "oracle" => self.oracle = real()?,
                "oracle_max_iters" => self.oracle_max_iters = count()?,
                _ => return Err(ToleranceParseError::UnknownKey(key.to_string())),
            }
        }
        Ok(self)
    }
}

static INSTALLED: OnceLock<Tolerances> = OnceLock::new();

/// Installs a process-wide bundle. Returns `false` if one was already installed.
pub fn install(tolerances: Tolerances) -> bool {
    INSTALLED.set(tolerances).is_ok()
}

pub fn current() -> Tolerances {
    INSTALLED.get().copied().unwrap_or_default()
}
