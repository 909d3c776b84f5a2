//! Explicit conservative finite-volume evolution in radial symmetry, in the
//! original `(x, t)` frame or the rescaled `(λ, τ)` frame, plus the implicit
//! one-step elliptic solve.
//!
//! The face flux is `A_k [ -(ρ_i^m - ρ_{i-1}^m)/Δc + u_k ρ_upwind ]` with
//! `A_k = σ_d R_k^{d-1}` and velocity `u_k = -∂_r(ρ*V)(R_k)` (rescaled:
//! `-β R_k - e^{(1-α)τ} ∂_r(ρ*h̃)`). Fluxes vanish at the origin and at the
//! outer boundary, so the discrete mass telescopes exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analysis::wasserstein_p;
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::model::Params;
use crate::potentials::{energy_with, Interaction, Kernel};
use crate::profile::{pow, EdgeField, RadialField, RadialProfile};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub cfl_diffusion: f64,
    pub cfl_advection: f64,
    pub t_end: f64,
    /// Times at which the density is stored; the step size is clipped to hit them.
    pub snapshot_times: Vec<f64>,
    pub blowup_sup_threshold: f64,
    /// Radius beyond which the support triggers a warning at 90%.
    pub domain_radius: f64,
    /// Diagnostics are recorded every this many steps (and at snapshots).
    pub diagnostics_stride: usize,
    /// Compute the free energy with each diagnostics record.
    pub record_energy: bool,
    /// Support radius threshold relative to the sup norm.
    pub support_threshold: f64,
    /// Reference for `sup_mass_err` and `w2_to_target`.
    pub target: Option<MassFunction>,
    pub max_steps: u64,
}

impl SolverOptions {
    pub fn new(t_end: f64, domain_radius: f64) -> Self {
        Self {
            cfl_diffusion: 0.4,
            cfl_advection: 0.5,
            t_end,
            snapshot_times: Vec::new(),
            blowup_sup_threshold: 1e6,
            domain_radius,
            diagnostics_stride: 1,
            record_energy: true,
            support_threshold: 1e-8,
            target: None,
            max_steps: u64::MAX,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("cfl_diffusion", self.cfl_diffusion),
            ("cfl_advection", self.cfl_advection),
            ("blowup_sup_threshold", self.blowup_sup_threshold),
            ("domain_radius", self.domain_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidParams(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// Which frame the equation is written in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    Original,
    /// `μ(λ, τ) = (t+1)^α ρ(x, t)`, `λ = x (t+1)^{-β}`, `τ = ln(t+1)`.
    /// The aggregation term is multiplied by `aggregation_scale · e^{(1-α)τ}`;
    /// a zero scale leaves the Fokker–Planck equation.
    Rescaled { aggregation_scale: f64 },
}

/// Where the drift `∂_r Φ` comes from.
#[derive(Clone, Debug)]
pub enum DriftSource {
    /// `Φ = ρ * V`, recomputed every step.
    Kernel(Kernel),
    /// A fixed `∂_r Φ` at the `n + 1` cell edges.
    Frozen(Vec<f64>),
    /// Pure porous-medium flow.
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub step: u64,
    pub mass: f64,
    pub energy: f64,
    pub sup_norm: f64,
    pub support_radius: f64,
    pub sup_mass_err: f64,
    pub w2_to_target: f64,
}

impl Diagnostics {
    pub const CSV_HEADER: [&'static str; 7] = [
        "t",
        "mass",
        "energy",
        "sup_norm",
        "support_radius",
        "sup_mass_err",
        "w2_to_target",
    ];

    pub fn csv_row(&self) -> Vec<f64> {
        vec![
            self.t,
            self.mass,
            self.energy,
            self.sup_norm,
            self.support_radius,
            self.sup_mass_err,
            self.w2_to_target,
        ]
    }
}

const RING: usize = 64;

#[derive(Clone, Debug)]
pub struct SolverState {
    pub rho: RadialProfile,
    pub t: f64,
    pub step_count: u64,
    pub dt_last: f64,
    /// The most recent diagnostics records.
    pub recent: VecDeque<Diagnostics>,
}

impl SolverState {
    pub fn new(rho: RadialProfile) -> Self {
        Self {
            rho,
            t: 0.0,
            step_count: 0,
            dt_last: 0.0,
            recent: VecDeque::with_capacity(RING),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub rho: RadialProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub t: f64,
    pub sup: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<Diagnostics>,
    pub blowup: Option<BlowUp>,
    pub warnings: Vec<String>,
    pub final_state: SolverState,
}

impl Trajectory {
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Largest time step between consecutive diagnostics rows.
    pub fn dt_max(&self) -> f64 {
        self.diagnostics.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max)
    }
}

enum DriftEval {
    Fixed(Option<Interaction>),
    Frozen(Vec<f64>),
    /// Mollified kernel in the rescaled frame: `h̃ = k^d h(k λ)` with `k = e^{βτ}`,
    /// rebuilt whenever `ln k` has moved by more than `REBUILD_LOG_STEP`.
    Dilating {
        kernel: Kernel,
        current: Interaction,
        log_k: f64,
    },
}

const REBUILD_LOG_STEP: f64 = 1e-3;

/// Reusable explicit stepper for one grid, kernel and frame.
pub struct RadialSolver {
    params: Params,
    grid: RadialGrid,
    frame: Frame,
    drift: DriftEval,
    opts: SolverOptions,
    area: Vec<f64>,
    inv_dc: Vec<f64>,
    inv_vol: Vec<f64>,
    min_width: f64,
    velocity: Vec<f64>,
    flux: Vec<f64>,
    powm: Vec<f64>,
    mt: Vec<f64>,
    scratch: Vec<f64>,
    inv_area: Vec<f64>,
}

impl RadialSolver {
    pub fn new(params: &Params, grid: &RadialGrid, drift: DriftSource, frame: Frame, opts: SolverOptions) -> Result<Self> {
        opts.validate()?;
        if grid.dim() != params.d() {
            return Err(Error::GridMismatch("grid dimension differs from d".into()));
        }
        let n = grid.n();
        let drift = match drift {
            DriftSource::Off => DriftEval::Fixed(None),
            DriftSource::Frozen(v) => {
                if v.len() != n + 1 {
                    return Err(Error::GridMismatch(format!(
                        "frozen drift has {} values for {} edges",
                        v.len(),
                        n + 1
                    )));
                }
                DriftEval::Frozen(v)
            }
            DriftSource::Kernel(k) => match (frame, &k) {
                (Frame::Rescaled { .. }, Kernel::Mollified(_) | Kernel::CustomLaplacian(_)) => DriftEval::Dilating {
                    current: Interaction::new(&k, grid)?,
                    kernel: k,
                    log_k: 0.0,
                },
                _ => DriftEval::Fixed(Some(Interaction::new(&k, grid)?)),
            },
        };
        let sigma = params.sigma_d();
        let e = grid.edges();
        let dm1 = params.d() as i32 - 1;
        let area: Vec<f64> = e.iter().map(|r| sigma * r.powi(dm1)).collect();
        let inv_area = area.iter().map(|a| if *a > 0.0 { 1.0 / a } else { 0.0 }).collect();
        let mut inv_dc = vec![0.0; n + 1];
        for k in 1..n {
            inv_dc[k] = 1.0 / (grid.center(k) - grid.center(k - 1));
        }
        let inv_vol = grid.volumes().iter().map(|v| 1.0 / v).collect();
        let min_width = (0..n).map(|i| grid.width(i)).fold(f64::INFINITY, f64::min);
        Ok(Self {
            params: *params,
            grid: grid.clone(),
            frame,
            drift,
            opts,
            area,
            inv_dc,
            inv_vol,
            min_width,
            velocity: vec![0.0; n + 1],
            flux: vec![0.0; n + 1],
            powm: vec![0.0; n],
            mt: vec![0.0; n + 1],
            scratch: vec![0.0; n],
            inv_area,
        })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    /// Current interaction (for energies and potentials).
    fn interaction(&self) -> Option<&Interaction> {
        match &self.drift {
            DriftEval::Fixed(it) => it.as_ref(),
            DriftEval::Dilating { current, .. } => Some(current),
            DriftEval::Frozen(_) => None,
        }
    }

    /// Fills `self.velocity` (outward positive) at edges `0..=active`.
    fn compute_velocity(&mut self, rho: &[f64], t: f64, active: usize) -> Result<()> {
        let factor = match self.frame {
            Frame::Original => 1.0,
            Frame::Rescaled { aggregation_scale } => {
                aggregation_scale * ((1.0 - self.params.alpha()) * t).exp()
            }
        };
        if let DriftEval::Dilating { kernel, current, log_k } = &mut self.drift {
            let target = self.params.beta() * t;
            if (target - *log_k).abs() > REBUILD_LOG_STEP {
                *current = Interaction::new(&kernel.dilated(target.exp()), &self.grid)?;
                *log_k = target;
            }
        }
        let e = &self.grid.edges()[..=active];
        let conf = match self.frame {
            Frame::Original => 0.0,
            Frame::Rescaled { .. } => self.params.beta(),
        };
        let it = match &self.drift {
            DriftEval::Fixed(Some(it)) | DriftEval::Dilating { current: it, .. } if factor != 0.0 => Some(it),
            _ => None,
        };
        let vel = &mut self.velocity[..=active];
        if let Some(it) = it {
            let mt = &mut self.mt[..=active];
            if it.is_point_mass() {
                let mut acc = 0.0;
                for ((m, r), v) in mt[1..].iter_mut().zip(rho).zip(self.grid.volumes()) {
                    acc += r * v;
                    *m = acc;
                }
            } else {
                it.m_tilde_into(rho, &mut self.scratch, &mut self.mt);
            }
            let mt = &self.mt[..=active];
            for (((u, r), m), ia) in vel.iter_mut().zip(e).zip(mt).zip(&self.inv_area[..=active]) {
                *u = -conf * r - factor * m * ia;
            }
        } else if let DriftEval::Frozen(v) = &self.drift {
            for ((u, r), d) in vel.iter_mut().zip(e).zip(&v[..=active]) {
                *u = -conf * r - factor * d;
            }
        } else {
            for (u, r) in vel.iter_mut().zip(e) {
                *u = -conf * r;
            }
        }
        self.velocity[0] = 0.0;
        let n = self.grid.n();
        self.velocity[n] = 0.0;
        Ok(())
    }

    /// One explicit step of at most `max_dt`; returns the step taken.
    fn advance(&mut self, rho: &mut [f64], t: f64, max_dt: f64) -> Result<f64> {
        let n = self.grid.n();
        let m = self.params.m();
        // cells beyond the last nonzero one (plus one) carry no flux
        let last = rho.iter().rposition(|&r| r > 0.0).unwrap_or(0);
        let active = (last + 2).min(n);
        self.compute_velocity(rho, t, active)?;
        let top = active.min(n - 1);
        let mut max_q: f64 = 0.0;
        let unit = m == 2.0;
        for (p, &r) in self.powm[..=top].iter_mut().zip(rho.iter()) {
            let q = if unit { r } else { pow(r, m - 1.0) };
            if q > max_q {
                max_q = q;
            }
            *p = q * r;
        }
        // face fluxes (without dt) and the largest outflow rate per unit volume
        self.flux[0] = 0.0;
        self.flux[n] = 0.0;
        let mut worst: f64 = 0.0;
        let mut pending = 0.0;
        {
            let vel = &self.velocity[..=top];
            let area = &self.area[..=top];
            let powm = &self.powm[..=top];
            let inv_dc = &self.inv_dc[..=top];
            let inv_vol = &self.inv_vol[..=top];
            let rho = &rho[..=top];
            let flux = &mut self.flux[..=top];
            for k in 1..=top {
                let u = vel[k];
                let a = area[k];
                let (up, out_lo, out_hi) = if u > 0.0 {
                    (rho[k - 1], a * u, 0.0)
                } else {
                    (rho[k], 0.0, -a * u)
                };
                flux[k] = a * (-(powm[k] - powm[k - 1]) * inv_dc[k] + u * up);
                let rate = (pending + out_lo) * inv_vol[k - 1];
                if rate > worst {
                    worst = rate;
                }
                pending = out_hi;
            }
        }
        let rate = pending * self.inv_vol[top];
        if rate > worst {
            worst = rate;
        }
        let d = self.params.d() as f64;
        let dt_d = if max_q > 0.0 {
            self.opts.cfl_diffusion * self.min_width * self.min_width / (2.0 * d * m * max_q)
        } else {
            f64::INFINITY
        };
        let dt_a = if worst > 0.0 {
            self.opts.cfl_advection / worst
        } else {
            f64::INFINITY
        };
        let dt = dt_d.min(dt_a).min(max_dt);
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Precondition(format!("invalid time step {dt}")));
        }
        let flux = &self.flux[..=active];
        for ((r, w), iv) in rho[..active].iter_mut().zip(flux.windows(2)).zip(&self.inv_vol) {
            let v = *r - dt * (w[1] - w[0]) * iv;
            *r = if v > 0.0 { v } else { 0.0 };
        }
        Ok(dt)
    }

    /// Velocity of the current frame at the edges (outward positive), for diagnostics.
    pub fn edge_velocity(&mut self, rho: &RadialProfile, t: f64) -> Result<Vec<f64>> {
        self.compute_velocity(rho.values(), t, self.grid.n())?;
        Ok(self.velocity.clone())
    }

    pub fn diagnostics(&self, state: &SolverState) -> Diagnostics {
        let rho = &state.rho;
        let energy = if self.opts.record_energy {
            match self.interaction() {
                Some(it) => energy_with(it, rho.values(), &self.params),
                None => {
                    let m = self.params.m();
                    rho.values()
                        .iter()
                        .zip(self.grid.volumes())
                        .map(|(r, v)| pow(*r, m) / (m - 1.0) * v)
                        .sum()
                }
            }
        } else {
            f64::NAN
        };
        let (sup_mass_err, w2) = match &self.opts.target {
            Some(target) => {
                let mf = MassFunction::of(rho);
                (
                    mf.sup_distance(target),
                    wasserstein_p(&mf, target, 2.0).unwrap_or(f64::NAN),
                )
            }
            None => (f64::NAN, f64::NAN),
        };
        Diagnostics {
            t: state.t,
            step: state.step_count,
            mass: rho.total_mass(),
            energy,
            sup_norm: rho.sup(),
            support_radius: rho.support_radius(self.opts.support_threshold),
            sup_mass_err,
            w2_to_target: w2,
        }
    }

    /// Single step, capped at `max_dt`.
    pub fn step(&mut self, state: &mut SolverState, max_dt: f64) -> Result<()> {
        let dt = self.advance(state.rho.values_mut(), state.t, max_dt)?;
        state.t += dt;
        state.dt_last = dt;
        state.step_count += 1;
        let sup = state.rho.sup();
        if sup > self.opts.blowup_sup_threshold || !sup.is_finite() {
            return Err(Error::BlowUp { t: state.t, sup });
        }
        Ok(())
    }

    /// Runs to `t_end`, storing snapshots and diagnostics.
    pub fn evolve(&mut self, mut state: SolverState) -> Result<Trajectory> {
        if !state.rho.grid().same_edges(&self.grid) {
            return Err(Error::GridMismatch("state grid differs from solver grid".into()));
        }
        let mut stops: Vec<f64> = self
            .opts
            .snapshot_times
            .iter()
            .copied()
            .filter(|&t| t >= state.t && t <= self.opts.t_end)
            .collect();
        stops.sort_by(f64::total_cmp);
        stops.dedup();
        let mut traj = Trajectory {
            snapshots: Vec::new(),
            diagnostics: Vec::new(),
            blowup: None,
            warnings: Vec::new(),
            final_state: state.clone(),
        };
        let record = |solver: &Self, state: &mut SolverState, traj: &mut Trajectory| {
            let d = solver.diagnostics(state);
            if state.recent.len() == RING {
                state.recent.pop_front();
            }
            state.recent.push_back(d);
            traj.diagnostics.push(d);
            if d.support_radius > 0.9 * solver.opts.domain_radius && traj.warnings.is_empty() {
                let msg = format!(
                    "support radius {:.4} exceeds 90% of the domain radius {} at t = {}",
                    d.support_radius, solver.opts.domain_radius, d.t
                );
                log::warn!("{msg}");
                traj.warnings.push(msg);
            }
        };
        record(self, &mut state, &mut traj);
        let mut next_stop = 0;
        while next_stop < stops.len() && stops[next_stop] <= state.t {
            traj.snapshots.push(Snapshot { t: state.t, rho: state.rho.clone() });
            next_stop += 1;
        }
        let t_end = self.opts.t_end;
        while state.t < t_end && state.step_count < self.opts.max_steps {
            let stop = stops.get(next_stop).copied().unwrap_or(t_end).min(t_end);
            let max_dt = stop - state.t;
            match self.step(&mut state, max_dt) {
                Ok(()) => {}
                Err(Error::BlowUp { t, sup }) => {
                    record(self, &mut state, &mut traj);
                    traj.blowup = Some(BlowUp { t, sup });
                    break;
                }
                Err(e) => return Err(e),
            }
            let mut hit = false;
            if (state.t - stop).abs() <= 1e-12 * stop.abs().max(1.0) {
                state.t = stop;
                hit = true;
            }
            if hit || state.step_count.is_multiple_of(self.opts.diagnostics_stride.max(1) as u64) {
                record(self, &mut state, &mut traj);
            }
            while hit && next_stop < stops.len() && stops[next_stop] <= state.t {
                traj.snapshots.push(Snapshot { t: state.t, rho: state.rho.clone() });
                next_stop += 1;
            }
        }
        if traj.diagnostics.last().map(|d| d.step) != Some(state.step_count) {
            record(self, &mut state, &mut traj);
        }
        traj.final_state = state;
        Ok(traj)
    }
}

/// One explicit step of the original-frame equation.
pub fn step(s: &SolverState, k: &Kernel, p: &Params, opts: &SolverOptions) -> Result<SolverState> {
    let mut solver = RadialSolver::new(p, s.rho.grid(), DriftSource::Kernel(k.clone()), Frame::Original, opts.clone())?;
    let mut next = s.clone();
    solver.step(&mut next, f64::INFINITY)?;
    Ok(next)
}

pub fn evolve(s: SolverState, k: &Kernel, p: &Params, opts: &SolverOptions) -> Result<Trajectory> {
    let mut solver = RadialSolver::new(p, s.rho.grid(), DriftSource::Kernel(k.clone()), Frame::Original, opts.clone())?;
    solver.evolve(s)
}

/// Evolution in the rescaled frame; times in `opts` are values of `τ`.
pub fn evolve_rescaled(s: SolverState, k: &Kernel, p: &Params, opts: &SolverOptions) -> Result<Trajectory> {
    let frame = Frame::Rescaled { aggregation_scale: 1.0 };
    let mut solver = RadialSolver::new(p, s.rho.grid(), DriftSource::Kernel(k.clone()), frame, opts.clone())?;
    solver.evolve(s)
}

/// Inward velocity `v = (m/(m-1)) ∂_r ρ^{m-1} + M̃/(σ_d r^{d-1})` at edges
/// (zero at the origin; the outer edge uses a zero ghost cell).
pub fn velocity_field(rho: &RadialProfile, k: &Kernel, p: &Params) -> Result<EdgeField> {
    let grid = rho.grid();
    let it = Interaction::new(k, grid)?;
    let drift = it.drift_edges(rho.values());
    let n = grid.n();
    let m = p.m();
    let c = m / (m - 1.0);
    let q: Vec<f64> = rho.values().iter().map(|&r| pow(r, m - 1.0)).collect();
    let mut v = vec![0.0; n + 1];
    for kk in 1..=n {
        let (qr, cr) = if kk < n {
            (q[kk], grid.center(kk))
        } else {
            (0.0, grid.radius() + 0.5 * grid.width(n - 1))
        };
        v[kk] = c * (qr - q[kk - 1]) / (cr - grid.center(kk - 1)) + drift[kk];
    }
    Ok(EdgeField {
        grid: grid.clone(),
        values: v,
    })
}

/// The drift potential `Φ` of the implicit step.
#[derive(Clone, Debug)]
pub enum DriftPotential {
    /// `Φ` at cell centres; its gradient is differenced to the edges.
    Values(RadialField),
    /// `∂_r Φ` given directly at the edges.
    EdgeGradient(EdgeField),
}

impl DriftPotential {
    fn edge_gradient(&self, grid: &RadialGrid) -> Result<Vec<f64>> {
        let n = grid.n();
        match self {
            DriftPotential::Values(f) => {
                if f.values.len() != n {
                    return Err(Error::GridMismatch("potential length differs from grid".into()));
                }
                let mut g = vec![0.0; n + 1];
                for k in 1..n {
                    g[k] = (f.values[k] - f.values[k - 1]) / (grid.center(k) - grid.center(k - 1));
                }
                Ok(g)
            }
            DriftPotential::EdgeGradient(e) => {
                if e.values.len() != n + 1 {
                    return Err(Error::GridMismatch("gradient length differs from grid".into()));
                }
                Ok(e.values.clone())
            }
        }
    }
}

/// Solves `-h Δ u^m - h ∇·(u ∇Φ) + u = g` (zero-flux boundary) by damped
/// Newton on `u`. The residual is driven below `1e-10 ‖g‖_∞`.
pub fn implicit_step(g: &RadialProfile, phi: &DriftPotential, h: f64, p: &Params) -> Result<RadialProfile> {
    if !(h > 0.0) {
        return Err(Error::InvalidParams(format!("step must be positive, got {h}")));
    }
    let grid = g.grid();
    let n = grid.n();
    let m = p.m();
    let grad = phi.edge_gradient(grid)?;
    let sigma = p.sigma_d();
    let dm1 = p.d() as i32 - 1;
    let e = grid.edges();
    let area: Vec<f64> = e.iter().map(|r| sigma * r.powi(dm1)).collect();
    let mut inv_dc = vec![0.0; n + 1];
    for k in 1..n {
        inv_dc[k] = 1.0 / (grid.center(k) - grid.center(k - 1));
    }
    let hv: Vec<f64> = grid.volumes().iter().map(|v| h / v).collect();
    let gv = g.values();
    let scale = g.sup();
    if scale == 0.0 {
        return Ok(g.clone());
    }
    let tol = 1e-10 * scale;

    let residual = |u: &[f64], out: &mut [f64]| -> f64 {
        let mut flux = vec![0.0; n + 1];
        for k in 1..n {
            let v = -grad[k];
            let up = if v > 0.0 { u[k - 1] } else { u[k] };
            flux[k] = area[k] * (-(pow(u[k], m) - pow(u[k - 1], m)) * inv_dc[k] + v * up);
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            out[i] = u[i] + hv[i] * (flux[i + 1] - flux[i]) - gv[i];
            worst = worst.max(out[i].abs());
        }
        worst
    };

    let mut u = gv.to_vec();
    let mut res = vec![0.0; n];
    let mut norm = residual(&u, &mut res);
    let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    let max_iter = 200;
    for _ in 0..max_iter {
        if norm < tol {
            return Ok(RadialProfile::from_raw(grid.clone(), u));
        }
        // Jacobian: dF_k/du_{k-1} = a, dF_k/du_k = b
        for i in 0..n {
            diag[i] = 1.0;
            lower[i] = 0.0;
            upper[i] = 0.0;
        }
        for k in 1..n {
            let v = -grad[k];
            let a = area[k] * (m * pow(u[k - 1], m - 1.0) * inv_dc[k] + v.max(0.0));
            let b = area[k] * (-m * pow(u[k], m - 1.0) * inv_dc[k] + v.min(0.0));
            // cell k-1 gains +F_k, cell k gains -F_k
            diag[k - 1] += hv[k - 1] * a;
            upper[k - 1] += hv[k - 1] * b;
            lower[k] -= hv[k] * a;
            diag[k] -= hv[k] * b;
        }
        let delta = thomas(&lower, &diag, &upper, &res);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = (u[i] - lambda * delta[i]).max(0.0);
            }
            let tn = residual(&trial, &mut trial_res);
            if tn < norm || tn < tol {
                std::mem::swap(&mut u, &mut trial);
                std::mem::swap(&mut res, &mut trial_res);
                norm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm < tol {
        return Ok(RadialProfile::from_raw(grid.clone(), u));
    }
    Err(Error::NonConvergence {
        what: "implicit step Newton iteration",
        iterations: max_iter,
        residual: norm,
    })
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / den;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
