//! Interaction kernels, radial convolution, the aggregation drift
//! `∂_r(rho * V) = M̃(r) / (sigma_d r^{d-1})`, potentials and the free energy.
//!
//! `M̃(r)` is the mass of `rho * ΔV` inside `B(0, r)`. For the Newtonian
//! kernel `ΔV` is the unit point mass and `M̃ = M`; for a mollified kernel
//! `ΔV = h`. Convolutions of piecewise-constant radial profiles are
//! assembled into a banded matrix mapping cell values to cell masses.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::model::Params;
use crate::profile::{pow, EdgeField, RadialField, RadialProfile, RadialShape};
use crate::quadrature::{sin_power_integral, unit_sphere_area, GaussLegendre};

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// `V = -c_d |x|^{2-d}`; `ΔV` is the unit point mass.
    Newtonian,
    /// `V = N * h` with `h >= 0` radially nonincreasing.
    Mollified(RadialProfile),
    /// Arbitrary nonnegative `ΔV = g`; monotone-decreasing not required.
    CustomLaplacian(RadialProfile),
}

impl Kernel {
    /// Validates that `h` is nonincreasing in `r`.
    pub fn mollified(h: RadialProfile) -> Result<Self> {
        if !is_nonincreasing(h.values()) {
            return Err(Error::Precondition(
                "mollifier h must be radially nonincreasing".into(),
            ));
        }
        if h.total_mass() <= 0.0 {
            return Err(Error::Precondition("mollifier h has zero mass".into()));
        }
        Ok(Kernel::Mollified(h))
    }

    /// Unit-mass Gaussian mollifier of standard deviation `width`, truncated at
    /// six widths and renormalized.
    pub fn gaussian(width: f64, dim: usize) -> Result<Self> {
        let cells = 1200;
        let grid = RadialGrid::with_radius(6.0 * width, cells, dim)?;
        let h = RadialProfile::from_centers(grid, |r| (-0.5 * (r / width).powi(2)).exp());
        let mass = h.total_mass();
        Self::mollified(h.scaled(1.0 / mass))
    }

    /// Unit-mass indicator of the ball of radius `width`.
    pub fn ball(width: f64, dim: usize) -> Result<Self> {
        let grid = RadialGrid::with_radius(width, 1, dim)?;
        let vol = grid.volumes()[0];
        Self::mollified(RadialProfile::new(grid, vec![1.0 / vol])?)
    }

    pub fn custom(g: RadialProfile) -> Self {
        Kernel::CustomLaplacian(g)
    }

    /// Unit-mass annular bump `(1 - ((r - radius)/width)^2)^2` on
    /// `|r - radius| < width`: nonnegative, continuous, not radially decreasing.
    pub fn annular(radius: f64, width: f64, dim: usize) -> Result<Self> {
        if !(width > 0.0 && radius >= width) {
            return Err(Error::InvalidParams(format!(
                "annulus needs 0 < width <= radius, got radius {radius}, width {width}"
            )));
        }
        let grid = RadialGrid::with_radius(radius + width, 1200, dim)?;
        let g = RadialProfile::from_centers(grid, |r| {
            let x = (r - radius) / width;
            if x.abs() < 1.0 { (1.0 - x * x).powi(2) } else { 0.0 }
        });
        let mass = g.total_mass();
        Ok(Kernel::CustomLaplacian(g.scaled(1.0 / mass)))
    }

    /// `||ΔV||_1`.
    pub fn laplacian_l1(&self) -> f64 {
        match self {
            Kernel::Newtonian => 1.0,
            Kernel::Mollified(h) | Kernel::CustomLaplacian(h) => h.total_mass(),
        }
    }

    /// Gridded `ΔV`, `None` for the point mass.
    pub fn laplacian(&self) -> Option<&RadialProfile> {
        match self {
            Kernel::Newtonian => None,
            Kernel::Mollified(h) | Kernel::CustomLaplacian(h) => Some(h),
        }
    }

    /// `ΔV` radially nonincreasing (always true for the point mass).
    pub fn has_decreasing_laplacian(&self) -> bool {
        self.laplacian().is_none_or(|h| is_nonincreasing(h.values()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Newtonian => "newtonian",
            Kernel::Mollified(_) => "mollified",
            Kernel::CustomLaplacian(_) => "custom",
        }
    }

    /// The kernel whose Laplacian is `k^d ΔV(k x)`; the point mass is invariant.
    pub fn dilated(&self, k: f64) -> Self {
        let dil = |h: &RadialProfile| {
            let grid = RadialGrid::with_radius(h.grid().radius() / k, h.grid().n(), h.dim())
                .expect("dilated grid");
            crate::profile::Dilation { inner: h, k }.sample(&grid)
        };
        match self {
            Kernel::Newtonian => Kernel::Newtonian,
            Kernel::Mollified(h) => Kernel::Mollified(dil(h)),
            Kernel::CustomLaplacian(h) => Kernel::CustomLaplacian(dil(h)),
        }
    }
}

/// `ΔV` tabulated as `(r, value)` points with increasing `r` starting at 0,
/// interpolated linearly onto `cells` uniform cells up to the last radius.
pub fn laplacian_from_table(rows: &[(f64, f64)], cells: usize, dim: usize) -> Result<RadialProfile> {
    if rows.len() < 2 || rows[0].0 != 0.0 {
        return Err(Error::InvalidParams("kernel table needs at least two rows starting at r = 0".into()));
    }
    if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidParams("kernel table radii must increase".into()));
    }
    let radius = rows[rows.len() - 1].0;
    let grid = RadialGrid::with_radius(radius, cells, dim)?;
    let values = grid
        .centers()
        .iter()
        .map(|&r| {
            let i = rows.partition_point(|x| x.0 <= r).clamp(1, rows.len() - 1);
            let (r0, v0) = rows[i - 1];
            let (r1, v1) = rows[i];
            v0 + (v1 - v0) * (r - r0) / (r1 - r0)
        })
        .collect();
    RadialProfile::new(grid, values)
}

fn is_nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

/// Banded linear map from cell values of `f` to the cell masses of `f * g`
/// on a uniform grid. Column `j` holds the contribution of the shell
/// `[R_j, R_{j+1})` to output cells `start[j]..start[j] + col[j].len()`.
#[derive(Clone, Debug)]
pub struct ConvolutionOperator {
    grid: RadialGrid,
    start: Vec<usize>,
    columns: Vec<Vec<f64>>,
    g_mass: f64,
}

impl ConvolutionOperator {
    pub fn new(grid: &RadialGrid, g: &RadialProfile) -> Result<Self> {
        let dr = grid
            .dr()
            .ok_or_else(|| Error::Unsupported("convolution needs a uniform grid".into()))?;
        if g.dim() != grid.dim() {
            return Err(Error::GridMismatch("kernel dimension differs from grid".into()));
        }
        let support = g.support_radius(0.0);
        let l = ((support / dr).ceil() as usize).max(1);
        let g_grid = RadialGrid::uniform(dr, l, grid.dim())?;
        let gs = g.sample(&g_grid);
        let n = grid.n();
        let dim = grid.dim();
        let anti = Antiderivatives::new(dr, gs.values());
        let gl_r = GaussLegendre::new(4);
        let gl_general = GaussLegendre::new(6);
        let (start, columns): (Vec<usize>, Vec<Vec<f64>>) = (0..n)
            .into_par_iter()
            .map(|j| {
                let lo = j.saturating_sub(l + 1);
                let hi = (j + l + 1).min(n - 1);
                let col = (lo..=hi)
                    .map(|i| {
                        if dim == 3 {
                            shell_mass_3d(&anti, &gl_r, grid.edges(), i, j)
                        } else {
                            shell_mass_general(gs.values(), dr, &gl_general, grid, i, j)
                        }
                    })
                    .collect();
                (lo, col)
            })
            .unzip();
        Ok(Self {
            grid: grid.clone(),
            start,
            columns,
            g_mass: gs.total_mass(),
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    /// Mass of `g` as seen by the operator (after resampling).
    pub fn kernel_mass(&self) -> f64 {
        self.g_mass
    }

    /// Cell masses of `f * g` for cell values `f`.
    pub fn apply_masses(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &fj) in f.iter().enumerate() {
            if fj == 0.0 {
                continue;
            }
            let s = self.start[j];
            for (o, c) in out[s..].iter_mut().zip(&self.columns[j]) {
                *o += fj * c;
            }
        }
    }

    /// Cell averages of `f * g`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_masses(f, &mut out);
        for (o, v) in out.iter_mut().zip(self.grid.volumes()) {
            *o = (*o / v).max(0.0);
        }
        out
    }
}

/// `G(t) = ∫_0^t τ g`, `G1 = ∫ G`, `G2(t) = ∫_0^t τ G(τ) dτ` for piecewise-constant `g`.
struct Antiderivatives {
    dr: f64,
    g: Vec<f64>,
    knots: Vec<[f64; 3]>,
}

impl Antiderivatives {
    fn new(dr: f64, g: &[f64]) -> Self {
        let mut knots = Vec::with_capacity(g.len() + 1);
        let mut cur = [0.0; 3];
        knots.push(cur);
        for (l, &gl) in g.iter().enumerate() {
            let t0 = l as f64 * dr;
            cur = Self::advance(cur, gl, t0, t0 + dr);
            knots.push(cur);
        }
        Self {
            dr,
            g: g.to_vec(),
            knots,
        }
    }

    fn advance(k: [f64; 3], g: f64, t0: f64, t: f64) -> [f64; 3] {
        let d = t - t0;
        let s = t + t0;
        [
            k[0] + 0.5 * g * d * s,
            k[1] + k[0] * d + g * d * d * (t + 2.0 * t0) / 6.0,
            k[2] + 0.5 * k[0] * d * s + 0.125 * g * d * d * s * s,
        ]
    }

    fn eval(&self, t: f64) -> [f64; 3] {
        let l = ((t / self.dr) as usize).min(self.g.len());
        let g = self.g.get(l).copied().unwrap_or(0.0);
        Self::advance(self.knots[l], g, l as f64 * self.dr, t)
    }
}

/// `∫_{cell i} (χ_{shell j} * g)` for `d = 3`, from the closed-form reduction
/// `(f*g)(r) = (2π/r) ∫ s f(s) [G(r+s) - G(|r-s|)] ds`.
fn shell_mass_3d(anti: &Antiderivatives, gl: &GaussLegendre, edges: &[f64], i: usize, j: usize) -> f64 {
    let (a, b) = (edges[j], edges[j + 1]);
    let t = |r: f64| {
        let hi = anti.eval(r + b);
        let lo = anti.eval(r + a);
        let mut v = (hi[2] - r * hi[1]) - (lo[2] - r * lo[1]);
        if a < r {
            let bp = b.min(r);
            let x = anti.eval(r - a);
            let y = anti.eval(r - bp);
            v -= (r * x[1] - x[2]) - (r * y[1] - y[2]);
        }
        if b > r {
            let ap = a.max(r);
            let x = anti.eval(b - r);
            let y = anti.eval(ap - r);
            v -= (x[2] + r * x[1]) - (y[2] + r * y[1]);
        }
        v
    };
    8.0 * PI * PI * gl.integrate(edges[i], edges[i + 1], |r| r * t(r))
}

/// Same quantity for `d > 3`: the angular integral over `g`'s shells is
/// exact, the radial integrals use Gauss–Legendre.
fn shell_mass_general(g: &[f64], dr: f64, gl: &GaussLegendre, grid: &RadialGrid, i: usize, j: usize) -> f64 {
    let d = grid.dim();
    let e = grid.edges();
    let sigma = unit_sphere_area(d);
    let sigma_low = unit_sphere_area(d - 1);
    let mut total = 0.0;
    for (r, wr) in gl.mapped(e[i], e[i + 1]) {
        let mut inner = 0.0;
        for (s, ws) in gl.mapped(e[j], e[j + 1]) {
            inner += ws * s.powi(d as i32 - 1) * angular(g, dr, d, r, s);
        }
        total += wr * r.powi(d as i32 - 1) * inner;
    }
    sigma * sigma_low * total
}

/// `∫_0^π g(|r e_1 - s ω|) sin^{d-2} θ dθ` for piecewise-constant `g`.
fn angular(g: &[f64], dr: f64, d: usize, r: f64, s: f64) -> f64 {
    let lo = (r - s).abs();
    let hi = r + s;
    let theta = |t: f64| {
        let c = ((r * r + s * s - t * t) / (2.0 * r * s)).clamp(-1.0, 1.0);
        sin_power_integral(d - 2, c.acos())
    };
    let l0 = (lo / dr) as usize;
    let mut acc = 0.0;
    for (l, &gl) in g.iter().enumerate().skip(l0) {
        let t0 = l as f64 * dr;
        if t0 >= hi {
            break;
        }
        let a = t0.max(lo);
        let b = (t0 + dr).min(hi);
        if b > a && gl != 0.0 {
            acc += gl * (theta(b) - theta(a));
        }
    }
    acc
}

/// Kernel prepared for repeated use on one grid.
#[derive(Clone, Debug)]
pub struct Interaction {
    kernel: Kernel,
    grid: RadialGrid,
    op: Option<ConvolutionOperator>,
}

impl Interaction {
    pub fn new(kernel: &Kernel, grid: &RadialGrid) -> Result<Self> {
        let op = match kernel.laplacian() {
            None => None,
            Some(h) => Some(ConvolutionOperator::new(grid, h)?),
        };
        Ok(Self {
            kernel: kernel.clone(),
            grid: grid.clone(),
            op,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    /// `ΔV` is the point mass, so `M̃ = M`.
    pub fn is_point_mass(&self) -> bool {
        self.op.is_none()
    }

    /// Cell averages of `rho * ΔV`.
    pub fn laplacian_density(&self, rho: &[f64]) -> Vec<f64> {
        match &self.op {
            None => rho.to_vec(),
            Some(op) => op.apply(rho),
        }
    }

    /// `M̃` at the `n + 1` edges.
    pub fn m_tilde_edges(&self, rho: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; rho.len()];
        let mut out = vec![0.0; rho.len() + 1];
        self.m_tilde_into(rho, &mut scratch, &mut out);
        out
    }

    /// Allocation-free form of [`Self::m_tilde_edges`]; `scratch` has `n` entries.
    pub fn m_tilde_into(&self, rho: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        match &self.op {
            None => scratch
                .iter_mut()
                .zip(rho.iter().zip(self.grid.volumes()))
                .for_each(|(m, (r, v))| *m = r * v),
            Some(op) => {
                op.apply_masses(rho, scratch);
                scratch.iter_mut().for_each(|m| *m = m.max(0.0));
            }
        }
        let mut acc = 0.0;
        out[0] = 0.0;
        for (o, m) in out[1..].iter_mut().zip(scratch.iter()) {
            acc += m;
            *o = acc;
        }
    }

    /// `M̃(∞) = ||ΔV||_1 · mass(rho)`.
    pub fn m_tilde_total(&self, rho: &[f64]) -> f64 {
        let mass: f64 = rho.iter().zip(self.grid.volumes()).map(|(r, v)| r * v).sum();
        mass * self.op.as_ref().map_or(1.0, |op| op.kernel_mass())
    }

    /// `∂_r(rho * V)` at edges, from edge values of `M̃`.
    pub fn drift_from_m_tilde(&self, mt: &[f64], out: &mut [f64]) {
        let sigma = unit_sphere_area(self.grid.dim());
        let e = self.grid.edges();
        let p = self.grid.dim() as i32 - 1;
        out[0] = 0.0;
        for k in 1..mt.len() {
            out[k] = mt[k] / (sigma * e[k].powi(p));
        }
    }

    pub fn drift_edges(&self, rho: &[f64]) -> Vec<f64> {
        let mt = self.m_tilde_edges(rho);
        let mut out = vec![0.0; mt.len()];
        self.drift_from_m_tilde(&mt, &mut out);
        out
    }

    pub fn potential(&self, rho: &[f64]) -> Potential {
        let q = self.laplacian_density(rho);
        let mt = self.m_tilde_edges(rho);
        Potential::new(self.grid.clone(), mt, q, self.m_tilde_total(rho))
    }
}

/// `rho * V` as a function of `r`: `-∫_r^∞ M̃(s)/(sigma s^{d-1}) ds`, with
/// `M̃` exact within cells and the exterior tail integrated in closed form.
#[derive(Clone, Debug)]
pub struct Potential {
    grid: RadialGrid,
    mt: Vec<f64>,
    q: Vec<f64>,
    suffix: Vec<f64>,
    tail: f64,
}

impl Potential {
    fn new(grid: RadialGrid, mt: Vec<f64>, q: Vec<f64>, total: f64) -> Self {
        let d = grid.dim();
        let n = grid.n();
        let big_r = grid.radius();
        let tail = total / ((d as f64 - 2.0) * unit_sphere_area(d) * big_r.powi(d as i32 - 2));
        let mut pot = Self {
            grid,
            mt,
            q,
            suffix: vec![0.0; n + 1],
            tail,
        };
        for k in (0..n).rev() {
            let e = pot.grid.edges();
            pot.suffix[k] = pot.suffix[k + 1] + pot.cell_integral(k, e[k], e[k + 1]);
        }
        pot
    }

    /// `∫_x^y M̃(s)/(sigma s^{d-1}) ds` inside cell `k`.
    fn cell_integral(&self, k: usize, x: f64, y: f64) -> f64 {
        let d = self.grid.dim();
        let df = d as f64;
        let sigma = unit_sphere_area(d);
        let r0 = self.grid.edges()[k];
        let a = self.mt[k] - self.q[k] * sigma * r0.powi(d as i32) / df;
        let quad = self.q[k] * (y * y - x * x) / (2.0 * df);
        if a == 0.0 || x == 0.0 {
            return quad;
        }
        let p = 2 - d as i32;
        a / (sigma * (df - 2.0)) * (x.powi(p) - y.powi(p)) + quad
    }

    pub fn at(&self, r: f64) -> f64 {
        let big_r = self.grid.radius();
        if r >= big_r {
            let d = self.grid.dim() as i32;
            return -self.tail * (big_r / r).powi(d - 2);
        }
        let k = self.grid.cell_of(r);
        let e = self.grid.edges();
        -(self.cell_integral(k, r, e[k + 1]) + self.suffix[k + 1] + self.tail)
    }

    pub fn at_centers(&self) -> Vec<f64> {
        (0..self.grid.n()).map(|i| self.at(self.grid.center(i))).collect()
    }

    /// Cell averages (4-point Gauss–Legendre in the radial measure).
    pub fn cell_averages(&self) -> Vec<f64> {
        let gl = GaussLegendre::new(4);
        let d = self.grid.dim() as i32;
        let sigma = unit_sphere_area(self.grid.dim());
        let e = self.grid.edges();
        (0..self.grid.n())
            .map(|i| {
                sigma * gl.integrate(e[i], e[i + 1], |r| r.powi(d - 1) * self.at(r))
                    / self.grid.volumes()[i]
            })
            .collect()
    }
}

fn check_dim(rho: &RadialProfile, p: &Params) -> Result<()> {
    if rho.dim() != p.d() {
        return Err(Error::GridMismatch(format!(
            "profile is {}-dimensional, parameters say d = {}",
            rho.dim(),
            p.d()
        )));
    }
    Ok(())
}

/// `f * g` as cell averages on `f`'s grid (which must be uniform).
pub fn radial_convolve(f: &RadialProfile, g: &RadialProfile, p: &Params) -> Result<RadialProfile> {
    check_dim(f, p)?;
    check_dim(g, p)?;
    let op = ConvolutionOperator::new(f.grid(), g)?;
    Ok(RadialProfile::from_raw(f.grid().clone(), op.apply(f.values())))
}

pub fn m_tilde(rho: &RadialProfile, k: &Kernel) -> Result<MassFunction> {
    if matches!(k, Kernel::Newtonian) {
        return Ok(MassFunction::of(rho));
    }
    let it = Interaction::new(k, rho.grid())?;
    MassFunction::from_edge_values(rho.grid().clone(), it.m_tilde_edges(rho.values()))
}

/// `∂_r(rho * V)` at cell edges; zero at the origin.
pub fn drift_derivative(rho: &RadialProfile, k: &Kernel, p: &Params) -> Result<EdgeField> {
    check_dim(rho, p)?;
    let it = Interaction::new(k, rho.grid())?;
    Ok(EdgeField {
        grid: rho.grid().clone(),
        values: it.drift_edges(rho.values()),
    })
}

/// `rho * V` at cell centres.
pub fn potential_value(rho: &RadialProfile, k: &Kernel, p: &Params) -> Result<RadialField> {
    check_dim(rho, p)?;
    let it = Interaction::new(k, rho.grid())?;
    Ok(RadialField {
        grid: rho.grid().clone(),
        values: it.potential(rho.values()).at_centers(),
    })
}

/// `F = ∫ rho^m/(m-1) + ½ ∫ rho (rho * V)`.
pub fn energy(rho: &RadialProfile, k: &Kernel, p: &Params) -> Result<f64> {
    check_dim(rho, p)?;
    let it = Interaction::new(k, rho.grid())?;
    Ok(energy_with(&it, rho.values(), p))
}

pub(crate) fn energy_with(it: &Interaction, rho: &[f64], p: &Params) -> f64 {
    let m = p.m();
    let vols = it.grid().volumes();
    let phi = it.potential(rho).cell_averages();
    rho.iter()
        .zip(vols)
        .zip(&phi)
        .map(|((&r, &v), &f)| (pow(r, m) / (m - 1.0) + 0.5 * r * f) * v)
        .sum()
}

/// Witness of the bump-gap inequality
/// `(u*ΔV)(b) - (u*ΔV)(a) <= ||ΔV||_1 (u(b) - u(a))` at the pair maximizing `u(b) - u(a)`, `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpGap {
    pub holds: bool,
    pub vacuous: bool,
    pub a: f64,
    pub b: f64,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn bump_gap_inequality_check(u: &RadialProfile, k: &Kernel, tol: f64) -> Result<BumpGap> {
    if !k.has_decreasing_laplacian() {
        return Err(Error::Precondition(
            "bump-gap inequality needs a radially decreasing ΔV".into(),
        ));
    }
    let v = u.values();
    let mut best = (0.0, 0, 0);
    let mut argmin = 0;
    for b in 1..v.len() {
        if v[b - 1] < v[argmin] {
            argmin = b - 1;
        }
        let gap = v[b] - v[argmin];
        if gap > best.0 {
            best = (gap, argmin, b);
        }
    }
    let g = u.grid();
    if best.0 <= 0.0 {
        return Ok(BumpGap {
            holds: true,
            vacuous: true,
            a: 0.0,
            b: 0.0,
            lhs: 0.0,
            rhs: 0.0,
        });
    }
    let (gap, ia, ib) = best;
    let it = Interaction::new(k, g)?;
    let conv = it.laplacian_density(v);
    let lhs = conv[ib] - conv[ia];
    let rhs = k.laplacian_l1() * gap;
    Ok(BumpGap {
        holds: lhs <= rhs + tol,
        vacuous: false,
        a: g.center(ia),
        b: g.center(ib),
        lhs,
        rhs,
    })
}
