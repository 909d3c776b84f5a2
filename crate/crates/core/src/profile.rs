//! Densities and other fields on a radial grid.

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::model::Params;

/// Nonnegative piecewise-constant density: `values[i]` is the cell average.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    grid: RadialGrid,
    values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.n()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::NegativeDensity { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RadialGrid) -> Self {
        let values = vec![0.0; grid.n()];
        Self { grid, values }
    }

    /// Samples `f` at cell centers, clipping negatives to zero.
    pub fn from_centers(grid: RadialGrid, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = (0..grid.n()).map(|i| f(grid.center(i)).max(0.0)).collect();
        Self { grid, values }
    }

    /// Caller guarantees nonnegativity (solver internals).
    pub(crate) fn from_raw(grid: RadialGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.volumes())
            .map(|(v, w)| v * w)
            .sum()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Density at `r` (piecewise constant, zero outside the grid).
    pub fn density_at(&self, r: f64) -> f64 {
        if r >= self.grid.radius() {
            0.0
        } else {
            self.values[self.grid.cell_of(r)]
        }
    }

    /// Outer edge of the last cell whose value exceeds `rel * sup`.
    pub fn support_radius(&self, rel: f64) -> f64 {
        let thr = rel * self.sup();
        match self.values.iter().rposition(|&v| v > thr) {
            Some(i) => self.grid.edges()[i + 1],
            None => 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        assert!(c >= 0.0);
        Self::from_raw(self.grid.clone(), self.values.iter().map(|v| v * c).collect())
    }

    /// `sup |self - other|` on a shared grid.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `||self - other||_1` on a shared grid.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.volumes())
            .map(|((a, b), w)| (a - b).abs() * w)
            .sum())
    }
}

pub(crate) fn check_same_grid(a: &RadialGrid, b: &RadialGrid) -> Result<()> {
    if a.same_edges(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "grids differ ({} cells to r = {} vs {} cells to r = {})",
            a.n(),
            a.radius(),
            b.n(),
            b.radius()
        )))
    }
}

/// Signed values at cell centers (potentials, velocities).
#[derive(Clone, Debug, PartialEq)]
pub struct RadialField {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

/// Values at the `n + 1` cell edges, `values[0]` at `r = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

impl EdgeField {
    pub fn radii(&self) -> &[f64] {
        self.grid.edges()
    }
}

/// A radial mass distribution that can report `M(r)`, the mass inside the
/// ball of radius `r`. Sampling through `M` keeps cell masses exact.
pub trait RadialShape {
    fn dim(&self) -> usize;

    fn mass_within(&self, r: f64) -> f64;

    fn total_mass(&self) -> f64 {
        self.mass_within(f64::INFINITY)
    }

    /// Cell averages on `grid`, read off from differences of `M`.
    fn sample(&self, grid: &RadialGrid) -> RadialProfile {
        assert_eq!(grid.dim(), self.dim(), "dimension mismatch");
        let e = grid.edges();
        let mut prev = self.mass_within(e[0]);
        let values = (0..grid.n())
            .map(|i| {
                let next = self.mass_within(e[i + 1]);
                let v = ((next - prev) / grid.volumes()[i]).max(0.0);
                prev = next;
                v
            })
            .collect();
        RadialProfile::from_raw(grid.clone(), values)
    }
}

impl RadialShape for RadialProfile {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn mass_within(&self, r: f64) -> f64 {
        crate::mass::MassFunction::of(self).at(r)
    }

    fn total_mass(&self) -> f64 {
        RadialProfile::total_mass(self)
    }

    fn sample(&self, grid: &RadialGrid) -> RadialProfile {
        if grid.same_edges(&self.grid) {
            return self.clone();
        }
        crate::mass::MassFunction::of(self).sample(grid)
    }
}

/// The mass-preserving dilation `k^d f(k x)`, with mass function `M_f(k r)`.
#[derive(Clone, Copy, Debug)]
pub struct Dilation<'a, S: ?Sized> {
    pub inner: &'a S,
    pub k: f64,
}

impl<S: RadialShape + ?Sized> RadialShape for Dilation<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn mass_within(&self, r: f64) -> f64 {
        self.inner.mass_within(self.k * r)
    }

    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }
}

/// Uniform density `c` on the ball of radius `radius`.
#[derive(Clone, Copy, Debug)]
pub struct UniformBall {
    pub dim: usize,
    pub radius: f64,
    pub height: f64,
}

impl UniformBall {
    pub fn with_mass(dim: usize, radius: f64, mass: f64) -> Self {
        let vol = crate::quadrature::unit_sphere_area(dim) * radius.powi(dim as i32) / dim as f64;
        Self {
            dim,
            radius,
            height: mass / vol,
        }
    }
}

impl RadialShape for UniformBall {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mass_within(&self, r: f64) -> f64 {
        let s = r.min(self.radius).max(0.0);
        self.height * crate::quadrature::unit_sphere_area(self.dim) * s.powi(self.dim as i32)
            / self.dim as f64
    }
}

/// Pressure `u = m/(m-1) rho^{m-1}`, cellwise.
pub fn pressure(rho: &RadialProfile, p: &Params) -> RadialProfile {
    let m = p.m();
    let c = m / (m - 1.0);
    let values = rho.values.iter().map(|&v| c * pow(v, m - 1.0)).collect();
    RadialProfile::from_raw(rho.grid.clone(), values)
}

/// Inverse of [`pressure`].
pub fn density_from_pressure(u: &RadialProfile, p: &Params) -> RadialProfile {
    let m = p.m();
    let c = (m - 1.0) / m;
    let values = u
        .values
        .iter()
        .map(|&v| pow(c * v, 1.0 / (m - 1.0)))
        .collect();
    RadialProfile::from_raw(u.grid.clone(), values)
}

/// `x^e` for `x >= 0` with integer exponents taken on the fast path.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if e == e.trunc() && e.abs() <= 16.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_negative_values() {
        let g = RadialGrid::uniform(0.1, 3, 3).unwrap();
        let e = RadialProfile::new(g, vec![1.0, -0.5, 0.0]).unwrap_err();
        assert!(matches!(e, Error::NegativeDensity { index: 1, .. }));
    }

    #[test]
    fn pressure_examples() {
        let p = Params::new(2.0, 3).unwrap();
        let g = RadialGrid::uniform(0.1, 4, 3).unwrap();
        let rho = RadialProfile::new(g.clone(), vec![0.0, 1.5, 0.25, 0.0]).unwrap();
        let u = pressure(&rho, &p);
        assert_eq!(u.values(), &[0.0, 3.0, 0.5, 0.0]);
        assert_eq!(pressure(&RadialProfile::zeros(g), &p).sup(), 0.0);
    }

    #[test]
    fn pressure_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = RadialGrid::uniform(0.05, 200, 4).unwrap();
        for &m in &[1.2, 2.0, 2.7, 4.0] {
            let p = Params::new(m, 4).unwrap();
            let rho = RadialProfile::from_centers(g.clone(), |_| rng.gen_range(0.0..3.0));
            let back = density_from_pressure(&pressure(&rho, &p), &p);
            let err = rho.sup_distance(&back).unwrap();
            assert!(err < 1e-12, "m = {m}: {err}");
        }
    }

    #[test]
    fn uniform_ball_sampling_is_exact() {
        let ball = UniformBall::with_mass(3, 1.0, 1.0);
        let g = RadialGrid::uniform(0.1, 20, 3).unwrap();
        let rho = ball.sample(&g);
        assert!((rho.total_mass() - 1.0).abs() < 1e-14);
        assert!((rho.values()[0] - 3.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-14);
        assert_eq!(rho.values()[15], 0.0);
    }
}
