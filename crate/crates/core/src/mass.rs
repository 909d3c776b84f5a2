//! Mass functions and the concentration order.

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::profile::{RadialProfile, RadialShape};
use crate::quadrature::unit_sphere_area;

/// `M(r) = ∫_{B(0,r)} rho`, stored at the `n + 1` cell edges (`M(0) = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct MassFunction {
    grid: RadialGrid,
    cumulative: Vec<f64>,
}

/// Checked construction from a profile.
pub fn mass_function(rho: &RadialProfile) -> Result<MassFunction> {
    if let Some((index, &value)) = rho.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeDensity { index, value });
    }
    Ok(MassFunction::of(rho))
}

impl MassFunction {
    /// Profiles are nonnegative by construction, so this cannot fail.
    pub fn of(rho: &RadialProfile) -> Self {
        let mut cumulative = Vec::with_capacity(rho.values().len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (v, w) in rho.values().iter().zip(rho.grid().volumes()) {
            acc += v * w;
            cumulative.push(acc);
        }
        Self {
            grid: rho.grid().clone(),
            cumulative,
        }
    }

    /// Builds from edge values; `values[0]` must be 0 and the sequence nondecreasing.
    pub fn from_edge_values(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() + 1 {
            return Err(Error::GridMismatch(format!(
                "{} edge values for {} cells",
                values.len(),
                grid.n()
            )));
        }
        if values[0] != 0.0 || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Precondition(
                "mass function must start at 0 and be nondecreasing".into(),
            ));
        }
        Ok(Self {
            grid,
            cumulative: values,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    /// Values at the edges `R_0 = 0, ..., R_n`.
    pub fn at_edges(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    fn cell_density(&self, k: usize) -> f64 {
        (self.cumulative[k + 1] - self.cumulative[k]) / self.grid.volumes()[k]
    }

    /// `M(r)` for any `r`, exact for the underlying piecewise-constant density.
    pub fn at(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.grid.radius() {
            return self.total();
        }
        let k = self.grid.cell_of(r);
        let d = self.grid.dim() as i32;
        let r0 = self.grid.edges()[k];
        let shell = unit_sphere_area(self.grid.dim()) * (r.powi(d) - r0.powi(d)) / d as f64;
        self.cumulative[k] + self.cell_density(k) * shell
    }

    /// Smallest radius enclosing mass `s` (left end of flat stretches).
    pub fn quantile(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.total() {
            let last = self.cumulative.iter().position(|&c| c >= self.total());
            return self.grid.edges()[last.unwrap_or(self.grid.n())];
        }
        // first edge index j with M_j >= s; the target lies in cell j-1
        let j = self.cumulative.partition_point(|&c| c < s);
        let k = j - 1;
        let rho = self.cell_density(k);
        let d = self.grid.dim() as i32;
        let r0 = self.grid.edges()[k];
        let r1 = self.grid.edges()[k + 1];
        let rd = r0.powi(d) + (s - self.cumulative[k]) * d as f64 / (unit_sphere_area(self.grid.dim()) * rho);
        rd.powf(1.0 / d as f64).clamp(r0, r1)
    }

    /// `sup_r |self(r) - other(r)|`, evaluated at the union of both edge sets.
    pub fn sup_distance(&self, other: &MassFunction) -> f64 {
        union_edges(&self.grid, &other.grid)
            .into_iter()
            .map(|r| (self.at(r) - other.at(r)).abs())
            .fold(0.0, f64::max)
    }
}

impl RadialShape for MassFunction {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn mass_within(&self, r: f64) -> f64 {
        self.at(r)
    }

    fn total_mass(&self) -> f64 {
        self.total()
    }
}

fn union_edges(a: &RadialGrid, b: &RadialGrid) -> Vec<f64> {
    if a.same_edges(b) {
        return a.edges().to_vec();
    }
    let mut all: Vec<f64> = a.edges().iter().chain(b.edges()).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Outcome of [`precedes`]: `margin = max_r (M1 - M2)` attained at `at_radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderCheck {
    pub holds: bool,
    pub margin: f64,
    pub at_radius: f64,
}

/// `M1 ≺ M2`: `M1(r) <= M2(r) + tol` at every edge of either grid, i.e. the
/// first distribution is less concentrated than the second.
pub fn precedes(m1: &MassFunction, m2: &MassFunction, tol: f64) -> OrderCheck {
    let mut margin = f64::NEG_INFINITY;
    let mut at_radius = 0.0;
    for r in union_edges(&m1.grid, &m2.grid) {
        let gap = m1.at(r) - m2.at(r);
        if gap > margin {
            margin = gap;
            at_radius = r;
        }
    }
    OrderCheck {
        holds: margin <= tol,
        margin,
        at_radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Dilation, UniformBall};
    use std::f64::consts::PI;

    fn grid(n: usize, radius: f64) -> RadialGrid {
        RadialGrid::with_radius(radius, n, 3).unwrap()
    }

    #[test]
    fn uniform_ball_mass() {
        let g = grid(40, 2.0);
        let rho = RadialProfile::from_centers(g, |r| if r < 1.0 { 3.0 / (4.0 * PI) } else { 0.0 });
        let mf = mass_function(&rho).unwrap();
        for r in [0.1, 0.37, 0.5, 0.999] {
            assert!((mf.at(r) - r.powi(3)).abs() < 1e-14, "r = {r}");
        }
        assert!((mf.at(1.5) - 1.0).abs() < 1e-14);
        assert!((mf.total() - 1.0).abs() < 1e-14);
        assert_eq!(mf.at_edges()[0], 0.0);
    }

    #[test]
    fn zero_profile() {
        let mf = MassFunction::of(&RadialProfile::zeros(grid(10, 1.0)));
        assert!(mf.at_edges().iter().all(|&v| v == 0.0));
        assert_eq!(mf.quantile(0.5), 0.0);
    }

    #[test]
    fn wider_ball_precedes_tighter() {
        let g = grid(200, 3.0);
        let wide = MassFunction::of(&UniformBall::with_mass(3, 2.0, 1.0).sample(&g));
        let tight = MassFunction::of(&UniformBall::with_mass(3, 1.0, 1.0).sample(&g));
        assert!(precedes(&wide, &tight, 0.0).holds);
        assert!(!precedes(&tight, &wide, 0.0).holds);
        let refl = precedes(&wide, &wide, 0.0);
        assert!(refl.holds && refl.margin <= 0.0);
    }

    #[test]
    fn half_dilation_is_less_concentrated() {
        let g = grid(400, 4.0);
        let rho = RadialProfile::from_centers(g.clone(), |r| (1.0 - r * r).max(0.0));
        let dil = Dilation { inner: &rho, k: 0.5 }.sample(&g);
        let c = precedes(&MassFunction::of(&dil), &MassFunction::of(&rho), 1e-10);
        assert!(c.holds, "margin {}", c.margin);
    }

    #[test]
    fn quantile_inverts_mass() {
        let g = grid(50, 2.0);
        let rho = RadialProfile::from_centers(g, |r| if (0.5..1.2).contains(&r) { 1.0 } else { 0.2 });
        let mf = MassFunction::of(&rho);
        for i in 1..100 {
            let s = mf.total() * i as f64 / 100.0;
            assert!((mf.at(mf.quantile(s)) - s).abs() < 1e-12 * mf.total());
        }
    }

    #[test]
    fn cross_grid_comparison() {
        let a = MassFunction::of(&UniformBall::with_mass(3, 1.0, 1.0).sample(&grid(30, 2.0)));
        let b = MassFunction::of(&UniformBall::with_mass(3, 1.0, 1.0).sample(&grid(70, 2.0)));
        assert!(a.sup_distance(&b) < 1e-14);
    }
}
