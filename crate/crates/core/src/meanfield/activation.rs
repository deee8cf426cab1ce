//! Activation functions.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `erf(z/√2)`.
pub fn phi(z: f64) -> f64 {
    libm::erf(z * FRAC_1_SQRT_2)
}

/// `sqrt(2/π)·exp(−z²/2)`.
pub fn phi_prime(z: f64) -> f64 {
    (2.0 / PI).sqrt() * (-0.5 * z * z).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Scaled error function; the only activation with analytic averages.
    ScaledErf,
    /// Rectified linear unit; simulated only.
    Relu,
}

impl Activation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::ScaledErf => phi(z),
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ScaledErf => phi_prime(z),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::ScaledErf => "scaled_erf",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scaled_erf" | "erf" => Ok(Activation::ScaledErf),
            "relu" => Ok(Activation::Relu),
            other => Err(format!(
                "unknown activation `{other}` (expected scaled_erf or relu)"
            )),
        }
    }
}
