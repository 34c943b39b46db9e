//! Physical parameters of the compressible micro-macro model.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Model constants. All default to 1 except the adiabatic exponent, which
/// defaults to 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Shear viscosity.
    pub mu: f64,
    /// Bulk viscosity coefficient.
    pub xi: f64,
    /// Pressure constant in `P = a rho^gamma`.
    pub a: f64,
    pub gamma: f64,
    /// Temperature-like diffusion constant of the polymer.
    pub sigma: f64,
    /// Damping constant of the polymer.
    pub r: f64,
    /// Ratio between kinetic and elastic energy.
    pub lambda: f64,
    pub deborah: f64,
    pub mach: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            mu: 1.0,
            xi: 1.0,
            a: 1.0,
            gamma: 2.0,
            sigma: 1.0,
            r: 1.0,
            lambda: 1.0,
            deborah: 1.0,
            mach: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("sigma", self.sigma),
            ("r", self.r),
            ("lambda", self.lambda),
            ("deborah", self.deborah),
            ("mach", self.mach),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(param(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(param(format!("gamma must be >= 1 (got {})", self.gamma)));
        }
        if !(self.mu >= 0.0) || !(self.mu + self.xi >= 0.0) || !(2.0 * self.mu + self.xi > 0.0) {
            return Err(param(format!(
                "viscosities need mu >= 0, mu + xi >= 0 and 2 mu + xi > 0 (got mu = {}, xi = {})",
                self.mu, self.xi
            )));
        }
        Ok(())
    }

    /// Squared linear sound speed `a gamma / Ma^2`.
    pub fn sound_speed_sq(&self) -> f64 {
        self.a * self.gamma / (self.mach * self.mach)
    }

    /// Longitudinal viscosity `2 mu + xi`.
    pub fn longitudinal_viscosity(&self) -> f64 {
        2.0 * self.mu + self.xi
    }

    /// Rate multiplying `L` in the micro equation, `sigma / De`.
    pub fn relaxation_rate(&self) -> f64 {
        self.sigma / self.deborah
    }

    /// Factor turning `e0^T B_ij g` into the stress, `lambda sigma / De`.
    pub fn stress_coefficient(&self) -> f64 {
        self.lambda * self.sigma / self.deborah
    }

    /// `P'(1 + rho) / (1 + rho)` divided by `Ma^2`.
    pub fn pressure_factor(&self, rho: f64) -> f64 {
        self.a * self.gamma * (1.0 + rho).powf(self.gamma - 2.0) / (self.mach * self.mach)
    }
}
