//! Model parameters and the regime trichotomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::unit_sphere_area;

/// Exponent `m` and dimension `d`. Everything else is derived on demand,
/// so the derived constants can never drift out of sync.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    m: f64,
    d: usize,
}

impl Params {
    pub fn new(m: f64, d: usize) -> Result<Self> {
        if !(m.is_finite() && m > 1.0) {
            return Err(Error::InvalidParams(format!("m must be > 1, got {m}")));
        }
        if d < 3 {
            return Err(Error::InvalidParams(format!("d must be >= 3, got {d}")));
        }
        Ok(Self { m, d })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Surface area of the unit sphere in `R^d`.
    pub fn sigma_d(&self) -> f64 {
        unit_sphere_area(self.d)
    }

    /// Newtonian constant `1/((d-2) sigma_d)`.
    pub fn c_d(&self) -> f64 {
        1.0 / ((self.d as f64 - 2.0) * self.sigma_d())
    }

    /// Self-similar exponent `d/(d(m-1)+2)`.
    pub fn alpha(&self) -> f64 {
        let d = self.d as f64;
        d / (d * (self.m - 1.0) + 2.0)
    }

    pub fn beta(&self) -> f64 {
        self.alpha() / self.d as f64
    }

    /// `m - (2 - 2/d)`; positive in the subcritical regime.
    pub fn criticality_gap(&self) -> f64 {
        self.m - (2.0 - 2.0 / self.d as f64)
    }

    /// `d(m - 2 + 2/d)`, the exponent in the original-frame envelope ODE.
    pub fn envelope_exponent(&self) -> f64 {
        self.d as f64 * self.criticality_gap()
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self)
    }

    /// Volume of the ball of radius `r`.
    pub fn ball_volume(&self, r: f64) -> f64 {
        self.sigma_d() * r.powi(self.d as i32) / self.d as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supercritical,
    Critical,
    Subcritical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Supercritical => "supercritical",
            Regime::Critical => "critical",
            Regime::Subcritical => "subcritical",
        })
    }
}

pub const REGIME_TOLERANCE: f64 = 1e-12;

pub fn classify_regime(p: &Params) -> Regime {
    let gap = p.criticality_gap();
    if gap.abs() <= REGIME_TOLERANCE {
        Regime::Critical
    } else if gap < 0.0 {
        Regime::Supercritical
    } else {
        Regime::Subcritical
    }
}
