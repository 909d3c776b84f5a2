//! Initial data used by the experiments: smooth bumps, shells and the
//! two-scale datum that breaks radial monotonicity.

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::model::Params;
use crate::potentials::radial_convolve;
use crate::profile::{Dilation, RadialProfile, RadialShape, UniformBall};
use crate::quadrature::{unit_sphere_area, GaussLegendre};

/// `c exp(-1 / (1 - (r/R)^2))` inside `B(0, R)`, normalised to `mass`.
#[derive(Clone, Debug)]
pub struct SmoothBump {
    dim: usize,
    radius: f64,
    scale: f64,
    rule: GaussLegendre,
}

const BUMP_PANELS: usize = 8;

impl SmoothBump {
    pub fn new(dim: usize, radius: f64, mass: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "smooth bump needs radius > 0 and mass >= 0, got {radius}, {mass}"
            )));
        }
        let mut bump = Self { dim, radius, scale: 1.0, rule: GaussLegendre::new(24) };
        let unit = bump.mass_within(radius);
        bump.scale = mass / unit;
        Ok(bump)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn value(&self, r: f64) -> f64 {
        let x = r / self.radius;
        if x >= 1.0 {
            0.0
        } else {
            self.scale * (-1.0 / (1.0 - x * x)).exp()
        }
    }
}

impl RadialShape for SmoothBump {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mass_within(&self, r: f64) -> f64 {
        let top = r.clamp(0.0, self.radius);
        if top == 0.0 {
            return 0.0;
        }
        let w = top / BUMP_PANELS as f64;
        let k = self.dim as i32 - 1;
        let total: f64 = (0..BUMP_PANELS)
            .map(|j| {
                self.rule
                    .integrate(j as f64 * w, (j + 1) as f64 * w, |s| self.value(s) * s.powi(k))
            })
            .sum();
        unit_sphere_area(self.dim) * total
    }
}

/// Constant density on the shell `inner <= r <= outer`.
#[derive(Clone, Copy, Debug)]
pub struct UniformShell {
    pub dim: usize,
    pub inner: f64,
    pub outer: f64,
    pub height: f64,
}

impl UniformShell {
    pub fn with_mass(dim: usize, inner: f64, outer: f64, mass: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer && outer.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "shell needs 0 <= inner < outer, got {inner}, {outer}"
            )));
        }
        let d = dim as i32;
        let vol = unit_sphere_area(dim) * (outer.powi(d) - inner.powi(d)) / dim as f64;
        Ok(Self { dim, inner, outer, height: mass / vol })
    }
}

impl RadialShape for UniformShell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mass_within(&self, r: f64) -> f64 {
        let d = self.dim as i32;
        let s = r.clamp(self.inner, self.outer);
        self.height * unit_sphere_area(self.dim) * (s.powi(d) - self.inner.powi(d))
            / self.dim as f64
    }
}

/// Parameters of the datum `eps (chi_B(0,plateau) * phi) + eps^-d phi(x/eps)`,
/// with `phi` a unit-mass smooth bump of radius `bump_radius`.
#[derive(Clone, Copy, Debug)]
pub struct TwoScaleDatum {
    pub eps: f64,
    pub plateau: f64,
    pub bump_radius: f64,
}

impl Default for TwoScaleDatum {
    fn default() -> Self {
        Self { eps: 0.05, plateau: 2.0, bump_radius: 0.2 }
    }
}

impl TwoScaleDatum {
    /// Cell averages on `grid`, which must be uniform.
    pub fn sample(&self, p: &Params, grid: &RadialGrid) -> Result<RadialProfile> {
        let d = p.d();
        let phi = SmoothBump::new(d, self.bump_radius, 1.0)?;
        let ball = UniformBall { dim: d, radius: self.plateau, height: 1.0 };
        let plateau = radial_convolve(&ball.sample(grid), &phi.sample(grid), p)?;
        let spike = Dilation { inner: &phi, k: 1.0 / self.eps }.sample(grid);
        let values = plateau
            .values()
            .iter()
            .zip(spike.values())
            .map(|(a, b)| (self.eps * a + b).max(0.0))
            .collect();
        RadialProfile::new(grid.clone(), values)
    }

    /// Total mass of the datum.
    pub fn mass(&self, dim: usize) -> f64 {
        let ball = UniformBall { dim, radius: self.plateau, height: 1.0 };
        1.0 + self.eps * ball.total_mass()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_has_requested_mass() {
        let b = SmoothBump::new(3, 0.3, 2.5).unwrap();
        assert!((b.total_mass() - 2.5).abs() < 1e-12);
        assert_eq!(b.value(0.3), 0.0);
        assert!(b.value(0.0) > b.value(0.1));
    }

    #[test]
    fn shell_mass_and_support() {
        let s = UniformShell::with_mass(3, 1.0, 1.5, 2.0).unwrap();
        assert!((s.total_mass() - 2.0).abs() < 1e-13);
        assert_eq!(s.mass_within(0.9), 0.0);
        let g = RadialGrid::uniform(0.01, 300, 3).unwrap();
        let prof = s.sample(&g);
        assert!((prof.total_mass() - 2.0).abs() < 1e-12);
        assert_eq!(prof.values()[50], 0.0);
    }

    #[test]
    fn two_scale_mass() {
        let p = Params::new(2.0, 3).unwrap();
        let g = RadialGrid::uniform(0.002, 1500, 3).unwrap();
        let datum = TwoScaleDatum::default();
        let rho = datum.sample(&p, &g).unwrap();
        assert!((rho.total_mass() - datum.mass(3)).abs() < 1e-9 * datum.mass(3));
        // the spike dominates at the origin, the plateau near r = 1
        assert!(rho.values()[0] > 1e3);
        assert!((rho.values()[500] - datum.eps).abs() < 1e-9);
    }
}
