//! Three-dimensional Cartesian harness: an explicit conservative solver on a
//! small origin-centred box, the symmetric decreasing rearrangement of a
//! field, and the comparison of a run with its symmetrized radial run.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analysis::{rearrange_cells, LpNorm};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::io::fmt_f64;
use crate::mass::{precedes, MassFunction};
use crate::model::Params;
use crate::potentials::{Interaction, Kernel};
use crate::profile::{pow, RadialProfile, RadialShape};
use crate::solver::{DriftSource, Frame, RadialSolver, SolverOptions, SolverState};

pub const MAX_CELLS_PER_AXIS: usize = 64;
/// Width of the boundary shell that must stay empty.
pub const GUARD_CELLS: usize = 2;

/// During a run, guard cells count as empty below this fraction of the sup
/// norm (the explicit stencil spreads round-off-sized mass one cell per step).
pub const GUARD_THRESHOLD: f64 = 1e-10;

/// `∫_{[-1/2,1/2]^3} dx / |x|`.
fn unit_cube_inverse_distance() -> f64 {
    3.0 * (2.0 + 3f64.sqrt()).ln() - std::f64::consts::FRAC_PI_2
}

/// Cell averages on `n^3` cubes of side `h` filling the box centred at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianField {
    n: usize,
    h: f64,
    values: Vec<f64>,
}

impl CartesianField {
    pub fn new(n: usize, h: f64, values: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_CELLS_PER_AXIS {
            return Err(Error::InvalidParams(format!(
                "cells per axis must be in 1..={MAX_CELLS_PER_AXIS}, got {n}"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParams(format!("spacing must be positive, got {h}")));
        }
        if values.len() != n * n * n {
            return Err(Error::GridMismatch(format!("expected {} values, got {}", n * n * n, values.len())));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeDensity { index: i, value: v });
        }
        let f = Self { n, h, values };
        if !f.guard_is_empty() {
            return Err(Error::Precondition(format!(
                "the outer {GUARD_CELLS} cells of the box must be zero"
            )));
        }
        Ok(f)
    }

    pub fn zeros(n: usize, h: f64) -> Result<Self> {
        Self::new(n, h, vec![0.0; n * n * n])
    }

    /// Cell averages of `f` by `s^3` midpoint subsampling.
    pub fn sample(n: usize, h: f64, subsamples: usize, f: impl Fn([f64; 3]) -> f64 + Sync) -> Result<Self> {
        let s = subsamples.max(1);
        let half = 0.5 * (n as f64);
        let values: Vec<f64> = (0..n * n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
                let mut acc = 0.0;
                for a in 0..s {
                    for b in 0..s {
                        for c in 0..s {
                            let off = |q: usize, o: usize| ((q as f64 - half) + (o as f64 + 0.5) / s as f64) * h;
                            acc += f([off(i, a), off(j, b), off(k, c)]);
                        }
                    }
                }
                acc / (s * s * s) as f64
            })
            .collect();
        Self::new(n, h, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Centre of cell `i` along an axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - 0.5 * self.n as f64) * self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(3)
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b))
    }

    fn guard_is_empty(&self) -> bool {
        self.guard_below(0.0)
    }

    fn guard_below(&self, level: f64) -> bool {
        let n = self.n;
        let g = GUARD_CELLS.min(n);
        let inside = |q: usize| q >= g && q + g < n;
        (0..n * n * n).all(|idx| {
            let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
            (inside(i) && inside(j) && inside(k)) || self.values[idx] <= level
        })
    }

    /// The field with axes permuted and reflected: `perm[a]` is the source axis of
    /// output axis `a`, and `flip[a]` mirrors it.
    pub fn transformed(&self, perm: [usize; 3], flip: [bool; 3]) -> Self {
        let n = self.n;
        let mut out = vec![0.0; self.values.len()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let dst = [i, j, k];
                    let mut src = [0; 3];
                    for a in 0..3 {
                        let q = if flip[a] { n - 1 - dst[a] } else { dst[a] };
                        src[perm[a]] = q;
                    }
                    out[self.index(i, j, k)] = self.get(src[0], src[1], src[2]);
                }
            }
        }
        Self {
            n,
            h: self.h,
            values: out,
        }
    }

    /// Largest difference between the field and its images under the 48
    /// symmetries of the cube.
    pub fn symmetry_defect(&self) -> f64 {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut worst: f64 = 0.0;
        for perm in perms {
            for bits in 0..8 {
                let flip = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
                let g = self.transformed(perm, flip);
                for (a, b) in g.values.iter().zip(&self.values) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    /// Mass within distance `r` of the origin, counting each cell at its centre.
    pub fn centre_mass_within(&self, r: f64) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [self.coordinate(i), self.coordinate(j), self.coordinate(k)];
                    if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() <= r {
                        acc += self.get(i, j, k);
                    }
                }
            }
        }
        acc * self.cell_volume()
    }

    /// Flat CSV `i,j,k,value` of the nonzero cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,k,value")?;
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    let v = self.get(i, j, k);
                    if v != 0.0 {
                        writeln!(w, "{i},{j},{k},{}", fmt_f64(v))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn metadata(&self, t: f64) -> FieldMetadata {
        FieldMetadata {
            n: self.n,
            spacing: self.h,
            origin: [-0.5 * self.n as f64 * self.h; 3],
            t,
            mass: self.total_mass(),
            sup: self.sup(),
        }
    }

    /// Reads the CSV written by [`Self::write_csv`]; missing cells are zero.
    pub fn read_csv<R: std::io::BufRead>(reader: R, n: usize, h: f64) -> Result<Self> {
        let rows = crate::io::read_table(reader, &["i", "j", "k", "value"])?;
        let mut values = vec![0.0; n * n * n];
        for (line, row) in rows.iter().enumerate() {
            let idx = |x: f64| -> Result<usize> {
                if x >= 0.0 && x.fract() == 0.0 && (x as usize) < n {
                    Ok(x as usize)
                } else {
                    Err(Error::Parse {
                        line: line + 2,
                        msg: format!("cell index {x} out of range"),
                    })
                }
            };
            let (i, j, k) = (idx(row[0])?, idx(row[1])?, idx(row[2])?);
            values[(i * n + j) * n + k] = row[3];
        }
        Self::new(n, h, values)
    }
}

impl LpNorm for CartesianField {
    fn lp_norm(&self, p_exp: f64) -> f64 {
        if p_exp.is_infinite() {
            return self.sup();
        }
        (self.values.iter().map(|v| v.powf(p_exp)).sum::<f64>() * self.cell_volume()).powf(1.0 / p_exp)
    }
}

/// JSON sidecar for a field snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub n: usize,
    pub spacing: f64,
    /// Lower corner of the box.
    pub origin: [f64; 3],
    pub t: f64,
    pub mass: f64,
    pub sup: f64,
}

/// Symmetric decreasing rearrangement of the cell values onto radial shells.
pub fn rearrange_3d(f: &CartesianField) -> RadialProfile {
    let w = f.cell_volume();
    rearrange_cells(f.values.iter().map(|&v| (v, w)).collect(), 3)
}

/// Zero-padded FFT convolution with a radial kernel tabulated on the lattice.
struct Convolver {
    n: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Convolver {
    fn new(n: usize, h: f64, v: impl Fn(f64) -> f64, origin: f64) -> Self {
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let mut table = vec![Complex::new(0.0, 0.0); m * m * m];
        let wrap = |q: usize| -> f64 {
            let q = q as isize;
            let o = if q < n as isize { q } else { q - m as isize };
            o as f64
        };
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let r = h * (wrap(a).powi(2) + wrap(b).powi(2) + wrap(c).powi(2)).sqrt();
                    let val = if r == 0.0 { origin } else { v(r) };
                    table[(a * m + b) * m + c] = Complex::new(val * h.powi(3), 0.0);
                }
            }
        }
        let mut conv = Self {
            n,
            m,
            fwd,
            inv,
            kernel_hat: Vec::new(),
            buf: vec![Complex::new(0.0, 0.0); m * m * m],
        };
        conv.transform(&mut table, false);
        conv.kernel_hat = table;
        conv
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let m = self.m;
        let fft = if inverse { &self.inv } else { &self.fwd };
        data.par_chunks_mut(m).for_each(|line| fft.process(line));
        // middle axis, one plane at a time
        data.par_chunks_mut(m * m).for_each(|plane| {
            let mut line = vec![Complex::new(0.0, 0.0); m];
            for c in 0..m {
                for b in 0..m {
                    line[b] = plane[b * m + c];
                }
                fft.process(&mut line);
                for b in 0..m {
                    plane[b * m + c] = line[b];
                }
            }
        });
        // outer axis
        let mut line = vec![Complex::new(0.0, 0.0); m];
        for bc in 0..m * m {
            for a in 0..m {
                line[a] = data[a * m * m + bc];
            }
            fft.process(&mut line);
            for a in 0..m {
                data[a * m * m + bc] = line[a];
            }
        }
    }

    /// `Φ_i = Σ_j V(x_i - x_j) f_j h^3` at the `n^3` cells.
    fn apply(&mut self, f: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mut buf = std::mem::take(&mut self.buf);
        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    buf[(i * m + j) * m + k] = Complex::new(f[(i * n + j) * n + k], 0.0);
                }
            }
        }
        self.transform(&mut buf, false);
        buf.par_iter_mut().zip(self.kernel_hat.par_iter()).for_each(|(a, b)| *a *= b);
        self.transform(&mut buf, true);
        let scale = 1.0 / (m * m * m) as f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = buf[(i * m + j) * m + k].re * scale;
                }
            }
        }
        self.buf = buf;
    }
}

fn kernel_convolver(n: usize, h: f64, k: &Kernel, p: &Params) -> Result<Convolver> {
    let c = p.c_d();
    match k {
        Kernel::Newtonian => Ok(Convolver::new(n, h, |r| -c / r, -c * unit_cube_inverse_distance() / h)),
        Kernel::Mollified(g) | Kernel::CustomLaplacian(g) => {
            // V = N * ΔV, a bounded radial function with a Newtonian tail
            let it = Interaction::new(&Kernel::Newtonian, g.grid())?;
            let pot = it.potential(g.values());
            Ok(Convolver::new(n, h, |r| pot.at(r), pot.at(0.0)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CartesianOptions {
    pub cfl_diffusion: f64,
    pub cfl_advection: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub blowup_sup_threshold: f64,
}

impl CartesianOptions {
    pub fn new(t_end: f64) -> Self {
        Self {
            cfl_diffusion: 0.4,
            cfl_advection: 0.5,
            t_end,
            snapshot_times: Vec::new(),
            blowup_sup_threshold: 1e6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CartesianTrajectory {
    pub snapshots: Vec<(f64, CartesianField)>,
    /// `(t, mass, sup)` after every step.
    pub series: Vec<(f64, f64, f64)>,
    pub steps: u64,
    pub final_field: CartesianField,
    pub t: f64,
}

/// Explicit conservative evolution: central differences of `ρ^m`, upwinded
/// drift `-∇Φ` with `Φ = ρ * V` recomputed every step, zero flux at the box.
pub fn evolve_3d(f: CartesianField, k: &Kernel, p: &Params, opts: &CartesianOptions) -> Result<CartesianTrajectory> {
    if p.d() != 3 {
        return Err(Error::Unsupported("the Cartesian solver is three-dimensional".into()));
    }
    let n = f.n;
    let h = f.h;
    let m = p.m();
    let mut conv = kernel_convolver(n, h, k, p)?;
    let mut stops: Vec<f64> = opts
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| (0.0..=opts.t_end).contains(&t))
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    let mut rho = f;
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut snapshots = Vec::new();
    let mut series = vec![(0.0, rho.total_mass(), rho.sup())];
    let mut next = 0;
    while next < stops.len() && stops[next] <= 0.0 {
        snapshots.push((0.0, rho.clone()));
        next += 1;
    }
    let total = n * n * n;
    let mut phi = vec![0.0; total];
    let mut pm = vec![0.0; total];
    let mut div = vec![0.0; total];
    let stride = [n * n, n, 1];
    while t < opts.t_end {
        conv.apply(&rho.values, &mut phi);
        let mut max_q: f64 = 0.0;
        for (q, &r) in pm.iter_mut().zip(&rho.values) {
            let a = pow(r, m - 1.0);
            max_q = max_q.max(a);
            *q = a * r;
        }
        // fluxes through the 3 lower faces of each cell
        div.iter_mut().for_each(|d| *d = 0.0);
        let mut outflow = vec![0.0; total];
        for idx in 0..total {
            let pos = [idx / (n * n), (idx / n) % n, idx % n];
            for a in 0..3 {
                if pos[a] == 0 {
                    continue;
                }
                let lo = idx - stride[a];
                let u = -(phi[idx] - phi[lo]) / h;
                let up = if u > 0.0 { rho.values[lo] } else { rho.values[idx] };
                let flux = -(pm[idx] - pm[lo]) / h + u * up;
                div[lo] += flux;
                div[idx] -= flux;
                if u > 0.0 {
                    outflow[lo] += u;
                } else {
                    outflow[idx] -= u;
                }
            }
        }
        let dt_d = if max_q > 0.0 {
            opts.cfl_diffusion * h * h / (6.0 * m * max_q)
        } else {
            f64::INFINITY
        };
        let worst = outflow.iter().fold(0.0f64, |a, &b| a.max(b));
        let dt_a = if worst > 0.0 {
            opts.cfl_advection * h / worst
        } else {
            f64::INFINITY
        };
        let stop = stops.get(next).copied().unwrap_or(opts.t_end).min(opts.t_end);
        let mut dt = dt_d.min(dt_a);
        let hit = t + dt >= stop - 1e-12 * stop.max(1.0);
        if hit {
            dt = stop - t;
        }
        if !(dt > 0.0) {
            return Err(Error::Precondition(format!("invalid time step {dt}")));
        }
        for (r, d) in rho.values.iter_mut().zip(&div) {
            *r = (*r - dt / h * d).max(0.0);
        }
        t = if hit { stop } else { t + dt };
        steps += 1;
        let sup = rho.sup();
        series.push((t, rho.total_mass(), sup));
        if !rho.guard_below(GUARD_THRESHOLD * sup) {
            return Err(Error::GuardBreach { t });
        }
        if sup > opts.blowup_sup_threshold || !sup.is_finite() {
            return Err(Error::BlowUp { t, sup });
        }
        while hit && next < stops.len() && stops[next] <= t {
            snapshots.push((t, rho.clone()));
            next += 1;
        }
    }
    Ok(CartesianTrajectory {
        snapshots,
        series,
        steps,
        final_field: rho,
        t,
    })
}

#[derive(Clone, Debug)]
pub struct ComparisonOptions {
    pub cartesian: CartesianOptions,
    /// Radial cells per Cartesian spacing.
    pub radial_refinement: usize,
    /// `tol = tolerance_constant · (h + dt) · t`.
    pub tolerance_constant: f64,
}

impl ComparisonOptions {
    pub fn new(cartesian: CartesianOptions) -> Self {
        Self {
            cartesian,
            radial_refinement: 4,
            tolerance_constant: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSnapshot {
    pub t: f64,
    pub tolerance: f64,
    /// `max_r [M_{ρ*}(r) - M_{ρ̄}(r)]`; the order holds when this is `<= tolerance`.
    pub order_margin: f64,
    pub order_radius: f64,
    /// `‖ρ‖_p - ‖ρ̄‖_p` for `p = 2, 4, ∞`.
    pub lp_gaps: [f64; 3],
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub snapshots: Vec<ComparisonSnapshot>,
    pub passed: bool,
    pub cartesian_mass_drift: f64,
    pub dt_max: f64,
}

pub const COMPARISON_EXPONENTS: [f64; 3] = [2.0, 4.0, f64::INFINITY];

/// Runs the Cartesian solver from `f0` and the radial solver from its
/// rearrangement, and checks `ρ*(t) ≺ ρ̄(t)` and `‖ρ(t)‖_p <= ‖ρ̄(t)‖_p` at
/// every snapshot.
pub fn symmetrized_comparison_run(
    f0: &CartesianField,
    k: &Kernel,
    p: &Params,
    opts: &ComparisonOptions,
) -> Result<ComparisonReport> {
    let traj = evolve_3d(f0.clone(), k, p, &opts.cartesian)?;
    let radial_runs = symmetrized_radial_run(f0, k, p, opts)?;
    let dt_max = traj
        .series
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .fold(0.0, f64::max);
    let h = f0.spacing();
    let mut snapshots = Vec::new();
    for (t, field) in &traj.snapshots {
        let bar = radial_runs
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-12 * t.max(1.0))
            .map(|(_, r)| r)
            .ok_or_else(|| Error::Precondition(format!("radial snapshot missing at t = {t}")))?;
        let tol = opts.tolerance_constant * (h + dt_max) * t;
        let star = MassFunction::of(&rearrange_3d(field));
        let order = precedes(&star, &MassFunction::of(bar), tol);
        let mut lp_gaps = [0.0; 3];
        for (g, &q) in lp_gaps.iter_mut().zip(COMPARISON_EXPONENTS.iter()) {
            *g = field.lp_norm(q) - bar.lp_norm(q);
        }
        // norms scale with the field; the tolerance is relative to the radial norm
        let lp_ok = lp_gaps
            .iter()
            .zip(COMPARISON_EXPONENTS.iter())
            .all(|(g, &q)| *g <= tol * bar.lp_norm(q).max(1e-300) / bar.total_mass().max(1e-300) + 1e-12);
        snapshots.push(ComparisonSnapshot {
            t: *t,
            tolerance: tol,
            order_margin: order.margin,
            order_radius: order.at_radius,
            lp_gaps,
            passed: order.holds && lp_ok,
        });
    }
    let m0 = f0.total_mass();
    let drift = traj
        .series
        .iter()
        .map(|s| (s.1 - m0).abs() / m0.max(1e-300))
        .fold(0.0, f64::max);
    Ok(ComparisonReport {
        passed: snapshots.iter().all(|s| s.passed),
        snapshots,
        cartesian_mass_drift: drift,
        dt_max,
    })
}

/// The radial run from `rearrange_3d(f0)` on a uniform grid covering the box,
/// stored at the Cartesian snapshot times.
pub fn symmetrized_radial_run(
    f0: &CartesianField,
    k: &Kernel,
    p: &Params,
    opts: &ComparisonOptions,
) -> Result<Vec<(f64, RadialProfile)>> {
    let star = rearrange_3d(f0);
    let h = f0.spacing();
    let half_diag = 0.5 * f0.n() as f64 * h * 3f64.sqrt();
    let dr = h / opts.radial_refinement.max(1) as f64;
    let cells = (half_diag / dr).ceil() as usize;
    let grid = RadialGrid::uniform(dr, cells, 3)?;
    let rho0 = star.sample(&grid);
    let mut so = SolverOptions::new(opts.cartesian.t_end, grid.radius());
    so.snapshot_times = opts.cartesian.snapshot_times.clone();
    so.cfl_diffusion = opts.cartesian.cfl_diffusion;
    so.cfl_advection = opts.cartesian.cfl_advection;
    so.record_energy = false;
    so.diagnostics_stride = usize::MAX;
    let mut solver = RadialSolver::new(p, &grid, DriftSource::Kernel(k.clone()), Frame::Original, so)?;
    let tr = solver.evolve(SolverState::new(rho0))?;
    Ok(tr.snapshots.into_iter().map(|s| (s.t, s.rho)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use std::f64::consts::PI;

    fn ball(n: usize, h: f64, c: [f64; 3], radius: f64) -> CartesianField {
        let height = 1.0 / (4.0 / 3.0 * PI * radius.powi(3));
        CartesianField::sample(n, h, 4, |x| {
            let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
            if d2 <= radius * radius { height } else { 0.0 }
        })
        .unwrap()
    }

    #[test]
    fn cube_average_of_inverse_distance() {
        let gl = GaussLegendre::new(24);
        // split into 8 octants so the singularity sits at a corner
        let one = gl.integrate(0.0, 0.5, |x| {
            gl.integrate(0.0, 0.5, |y| gl.integrate(0.0, 0.5, |z| 1.0 / (x * x + y * y + z * z).sqrt()))
        });
        assert!((8.0 * one - unit_cube_inverse_distance()).abs() < 1e-3);
    }

    #[test]
    fn guard_shell_is_enforced() {
        let mut v = vec![0.0; 8 * 8 * 8];
        v[0] = 1.0;
        assert!(CartesianField::new(8, 0.1, v).is_err());
        assert!(CartesianField::new(65, 0.1, vec![0.0; 65 * 65 * 65]).is_err());
    }

    #[test]
    fn zero_stays_zero() {
        let p = Params::new(2.0, 3).unwrap();
        let f = CartesianField::zeros(12, 0.2).unwrap();
        let tr = evolve_3d(f, &Kernel::Newtonian, &p, &CartesianOptions::new(0.1)).unwrap();
        assert_eq!(tr.final_field.sup(), 0.0);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let n = 8;
        let h = 0.3;
        let p = Params::new(2.0, 3).unwrap();
        let f = CartesianField::sample(n, h, 1, |x| {
            let r2 = x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2];
            if r2 < 0.5 { 1.0 + x[0] } else { 0.0 }
        })
        .unwrap();
        let mut conv = kernel_convolver(n, h, &Kernel::Newtonian, &p).unwrap();
        let mut out = vec![0.0; n * n * n];
        conv.apply(f.values(), &mut out);
        let c = p.c_d();
        for i in [2, 4, 5] {
            for j in [3, 4] {
                for k in [1, 4, 6] {
                    let mut direct = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            for e in 0..n {
                                let dx = [
                                    f.coordinate(i) - f.coordinate(a),
                                    f.coordinate(j) - f.coordinate(b),
                                    f.coordinate(k) - f.coordinate(e),
                                ];
                                let r = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
                                let v = if r == 0.0 { -c * unit_cube_inverse_distance() / h } else { -c / r };
                                direct += v * f.get(a, b, e) * h.powi(3);
                            }
                        }
                    }
                    assert!((out[f.index(i, j, k)] - direct).abs() < 1e-12, "{i} {j} {k}");
                }
            }
        }
    }

    #[test]
    fn mass_and_symmetry_are_preserved() {
        let p = Params::new(2.0, 3).unwrap();
        let f = ball(20, 0.3, [0.0; 3], 1.5);
        let m0 = f.total_mass();
        let tr = evolve_3d(f, &Kernel::Newtonian, &p, &CartesianOptions::new(0.5)).unwrap();
        let rho = &tr.final_field;
        assert!((rho.total_mass() / m0 - 1.0).abs() < 1e-8);
        assert!(rho.symmetry_defect() < 1e-6 * rho.sup());
    }

    #[test]
    fn rearrangement_is_translation_invariant_and_equimeasurable() {
        let a = ball(24, 0.25, [0.0; 3], 1.2);
        let b = ball(24, 0.25, [0.5, -0.25, 0.75], 1.2);
        let ra = rearrange_3d(&a);
        let rb = rearrange_3d(&b);
        for r in [0.3, 0.8, 1.1, 1.25, 1.6] {
            let (ma, mb) = (ra.mass_within(r), rb.mass_within(r));
            assert!((ma - mb).abs() < 0.02, "r={r}: {ma} vs {mb}");
        }
        for q in [2.0, f64::INFINITY] {
            let (x, y) = (a.lp_norm(q), ra.lp_norm(q));
            assert!((x / y - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_round_trip() {
        let f = ball(10, 0.4, [0.0; 3], 1.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = CartesianField::read_csv(&buf[..], 10, 0.4).unwrap();
        assert_eq!(f, g);
        let meta = serde_json::to_string(&f.metadata(0.0));
        assert!(meta.is_ok());
    }
}
