//! Scaling-factor ODEs for the self-similar sub/supersolutions
//! `k(t)^d ρ_A(k(t) r)` and their convergence rates.

use serde::{Deserialize, Serialize};

use crate::analysis::{fit_decay_on, DecayFit, DecayModel};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::model::{Params, Regime};
use crate::potentials::{Interaction, Kernel};
use crate::profile::{Dilation, RadialProfile, RadialShape};
use crate::solver::velocity_field;
use crate::stationary::StationaryProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Subsolution,
    Supersolution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeFrame {
    Original,
    Rescaled,
}

/// Extremes of the ball average `d M̃(r) / (σ_d r^d)` of `ρ_A * ΔV` over the
/// support of the base profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub c1: f64,
    pub c2: f64,
    pub dim: usize,
    /// `‖ΔV‖_1 · base(0)`: bound on the ball average used by the rescaled supersolution.
    pub forcing_bound: f64,
}

impl EnvelopeConstants {
    /// The coefficient of the original-frame scaling ODE: the lower bound
    /// `c1 / d` of `M̃/(σ_d r^d)`. The inward velocity of a dilation is
    /// `(1 - k^γ) k^d r M̃(kr)/(σ_d (kr)^d)`; for `k > 1` the prefactor is
    /// negative, so the supersolution also needs the lower bound.
    pub fn ode_coefficient(&self) -> f64 {
        self.c1 / self.dim as f64
    }

    /// `((c1/d) γ, (c2/d) γ)` with `γ = d(m - 2 + 2/d)`: the linearized rates
    /// of the scaling ODE at the two extremes of the ball average.
    pub fn rate_bounds(&self, p: &Params) -> (f64, f64) {
        let g = p.envelope_exponent() / self.dim as f64;
        (self.c1 * g, self.c2 * g)
    }
}

pub fn envelope_constants(base: &StationaryProfile, k: &Kernel, p: &Params) -> Result<EnvelopeConstants> {
    let rho = base.profile();
    if crate::analysis::monotonicity_violation(rho) > 1e-12 * rho.sup().max(1e-300) {
        return Err(Error::Precondition("base profile must be radially decreasing".into()));
    }
    let grid = rho.grid();
    let it = Interaction::new(k, grid)?;
    let mt = it.m_tilde_edges(rho.values());
    let d = p.d() as f64;
    let sigma = p.sigma_d();
    let support = base.support_radius();
    // r → 0 limit of the ball average is (ρ * ΔV)(0)
    let centre = match k {
        Kernel::Newtonian => base.center_density(),
        _ => it.laplacian_density(rho.values())[0],
    };
    let (mut c1, mut c2) = (centre, centre);
    for (r, m) in grid.edges().iter().zip(mt.iter()).skip(1) {
        if *r > support {
            break;
        }
        let avg = d * m / (sigma * r.powi(p.d() as i32));
        c1 = c1.min(avg);
        c2 = c2.max(avg);
    }
    // the support edge itself
    let mt_support = MassFunction::from_edge_values(grid.clone(), mt)?.at(support);
    c1 = c1.min(d * mt_support / (sigma * support.powi(p.d() as i32)));
    Ok(EnvelopeConstants {
        c1,
        c2,
        dim: p.d(),
        forcing_bound: k.laplacian_l1() * base.center_density(),
    })
}

/// `k' = growth · k^power (1 - k^exponent) + forcing · k^{d+1} e^{-decay t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingOde {
    pub growth: f64,
    pub power: f64,
    pub exponent: f64,
    pub forcing: f64,
    pub decay: f64,
    pub dim: usize,
}

impl ScalingOde {
    /// Original frame: `k' = C k^{d+1} (1 - k^{d(m-2+2/d)})`.
    pub fn original(c: f64, p: &Params) -> Self {
        Self {
            growth: c,
            power: p.d() as f64 + 1.0,
            exponent: p.envelope_exponent(),
            forcing: 0.0,
            decay: 0.0,
            dim: p.d(),
        }
    }

    /// Rescaled frame: `k' = β k (1 - k^{d(m-1)+2}) + C k^{d+1} e^{(1-α)τ}`;
    /// `c = 0` gives the subsolution.
    pub fn rescaled(c: f64, p: &Params) -> Self {
        Self {
            growth: p.beta(),
            power: 1.0,
            exponent: p.d() as f64 * (p.m() - 1.0) + 2.0,
            forcing: c,
            decay: p.alpha() - 1.0,
            dim: p.d(),
        }
    }

    /// `k' = c1 k (1 - k^a) + c2 k^{d+1} e^{-b t}`.
    pub fn technical(c1: f64, c2: f64, a: f64, b: f64, dim: usize) -> Self {
        Self {
            growth: c1,
            power: 1.0,
            exponent: a,
            forcing: c2,
            decay: b,
            dim,
        }
    }

    pub fn rhs(&self, t: f64, k: f64) -> f64 {
        let mut v = self.growth * k.powf(self.power) * (1.0 - k.powf(self.exponent));
        if self.forcing != 0.0 {
            v += self.forcing * k.powi(self.dim as i32 + 1) * (-self.decay * t).exp();
        }
        v
    }

    /// Decay rate of the linearization at `k = 1` without forcing.
    pub fn linear_rate(&self) -> f64 {
        self.growth * self.exponent
    }

    /// Initial values below this threshold converge to 1:
    /// `(a c1/c2 · 2^{-d-2})^{(c1+c2)/b}`. Infinite without forcing.
    pub fn basin_threshold(&self) -> f64 {
        if self.forcing <= 0.0 {
            return f64::INFINITY;
        }
        let base = self.exponent * self.growth / self.forcing * 2f64.powi(-(self.dim as i32) - 2);
        base.powf((self.growth + self.forcing) / self.decay)
    }

    /// Guaranteed exponential rate `min(b, c1 a / 2)` inside the basin.
    pub fn basin_rate(&self) -> f64 {
        if self.forcing <= 0.0 {
            return self.linear_rate();
        }
        self.decay.min(0.5 * self.growth * self.exponent)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Output samples over `[0, t_end]`; steps are clipped to land on them.
    pub samples: usize,
    /// `k` above this counts as finite-time escape.
    pub escape: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            samples: 4000,
            escape: 1e8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnvelopeTrajectory {
    pub kind: EnvelopeKind,
    pub frame: EnvelopeFrame,
    pub ode: ScalingOde,
    pub constants: Option<EnvelopeConstants>,
    pub base: Option<StationaryProfile>,
    /// `(t, k)` at the output times.
    pub samples: Vec<(f64, f64)>,
    /// Time at which `k` escaped to infinity, if it did.
    pub divergence: Option<f64>,
    pub rate_fit: Option<DecayFit>,
}

impl EnvelopeTrajectory {
    pub fn with_base(mut self, base: StationaryProfile) -> Self {
        self.base = Some(base);
        self
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    /// `k(t)` by cubic interpolation between output samples.
    pub fn k_at(&self, t: f64) -> Result<f64> {
        let s = &self.samples;
        if s.is_empty() || t < s[0].0 || t > self.t_end() {
            return Err(Error::Precondition(format!("t = {t} outside the integrated range")));
        }
        let i = s.partition_point(|x| x.0 <= t).clamp(1, s.len()) - 1;
        if i + 1 >= s.len() || s[i].0 == t {
            return Ok(s[i].1);
        }
        let (t0, k0) = s[i];
        let (t1, k1) = s[i + 1];
        let h = t1 - t0;
        let d0 = self.ode.rhs(t0, k0) * h;
        let d1 = self.ode.rhs(t1, k1) * h;
        let x = (t - t0) / h;
        let (x2, x3) = (x * x, x * x * x);
        Ok((2.0 * x3 - 3.0 * x2 + 1.0) * k0 + (x3 - 2.0 * x2 + x) * d0 + (-2.0 * x3 + 3.0 * x2) * k1 + (x3 - x2) * d1)
    }

    /// Largest `|k - 1| e^{εt}` over the samples.
    pub fn exponential_bound(&self, eps: f64) -> f64 {
        self.samples
            .iter()
            .map(|(t, k)| (k - 1.0).abs() * (eps * t).exp())
            .fold(0.0, f64::max)
    }

    /// `(t, k, rate_fit)` rows for CSV output.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        let rate = self.rate_fit.as_ref().map_or(f64::NAN, |f| f.rate);
        self.samples.iter().map(|&(t, k)| vec![t, k, rate]).collect()
    }
}

/// Samples `(t, k)` and the time at which `k` escaped to infinity, if it did.
pub type OdeSolution = (Vec<(f64, f64)>, Option<f64>);

/// Dormand–Prince 4(5) integration of a scaling ODE on `[0, t_end]`.
pub fn integrate_scaling_ode(
    ode: &ScalingOde,
    k0: f64,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<OdeSolution> {
    if !(k0 > 0.0) || !k0.is_finite() {
        return Err(Error::InvalidParams(format!("k0 must be positive, got {k0}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidParams(format!("t_end must be positive, got {t_end}")));
    }
    let samples = opts.samples.max(1);
    let dt_out = t_end / samples as f64;
    let f = |t: f64, k: f64| ode.rhs(t, k);
    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, k0));
    let (mut t, mut k) = (0.0, k0);
    let mut h = dt_out.min(1e-3);
    let mut next = 1;
    while next <= samples {
        let target = if next == samples { t_end } else { next as f64 * dt_out };
        let mut clipped = false;
        let mut step = h;
        if t + step >= target {
            step = target - t;
            clipped = true;
        }
        let (k_new, err) = dopri_step(&f, t, k, step);
        let scale = opts.atol + opts.rtol * k.abs().max(k_new.abs());
        let ratio = err / scale;
        if ratio <= 1.0 && k_new.is_finite() {
            t = if clipped { target } else { t + step };
            k = k_new;
            if k > opts.escape {
                return Ok((out, Some(t)));
            }
            if clipped {
                out.push((t, k));
                next += 1;
            }
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            if !clipped || grow < 1.0 {
                h = step * grow;
            }
        } else {
            let shrink = if ratio.is_finite() { (0.9 * ratio.powf(-0.25)).clamp(0.1, 0.5) } else { 0.1 };
            h = step * shrink;
            if h < 1e-14 * t.abs().max(1.0) {
                // step size collapse: the solution is escaping
                return Ok((out, Some(t)));
            }
        }
    }
    Ok((out, None))
}

fn dopri_step(f: &impl Fn(f64, f64) -> f64, t: f64, y: f64, h: f64) -> (f64, f64) {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut k = [0.0; 7];
    for s in 0..7 {
        let yi = y + h * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
        k[s] = f(t + C[s] * h, yi);
    }
    let y5 = y + h * (0..7).map(|s| B5[s] * k[s]).sum::<f64>();
    let err = h * (0..7).map(|s| (B5[s] - B4[s]) * k[s]).sum::<f64>();
    (y5, err.abs())
}

/// Exponential fit of `|1 - k|` over the window `1e-6 < |1 - k| < 1e-2`.
pub fn fit_envelope_rate(samples: &[(f64, f64)]) -> Option<DecayFit> {
    let window: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(t, k)| (t, (1.0 - k).abs()))
        .filter(|&(_, e)| e > 1e-6 && e < 1e-2)
        .collect();
    if window.len() < 10 {
        return None;
    }
    fit_decay_on(&window, DecayModel::Exponential).ok()
}

/// Integrates the envelope ODE selected by `kind` and `frame`.
pub fn integrate_envelope(
    kind: EnvelopeKind,
    frame: EnvelopeFrame,
    k0: f64,
    constants: &EnvelopeConstants,
    p: &Params,
    t_end: f64,
) -> Result<EnvelopeTrajectory> {
    let ode = match frame {
        EnvelopeFrame::Original => {
            if p.regime() != Regime::Subcritical {
                return Err(Error::Precondition(format!(
                    "original-frame envelopes need the subcritical regime, got {}",
                    p.regime()
                )));
            }
            ScalingOde::original(constants.ode_coefficient(), p)
        }
        EnvelopeFrame::Rescaled => {
            if p.regime() != Regime::Supercritical {
                return Err(Error::Precondition(format!(
                    "rescaled-frame envelopes need the supercritical regime, got {}",
                    p.regime()
                )));
            }
            let c = match kind {
                EnvelopeKind::Subsolution => 0.0,
                EnvelopeKind::Supersolution => constants.forcing_bound / p.d() as f64,
            };
            ScalingOde::rescaled(c, p)
        }
    };
    let mut traj = integrate_ode_envelope(&ode, k0, t_end, &OdeOptions::default())?;
    traj.kind = kind;
    traj.frame = frame;
    traj.constants = Some(*constants);
    Ok(traj)
}

/// Integrates an arbitrary scaling ODE and fits its rate.
pub fn integrate_ode_envelope(ode: &ScalingOde, k0: f64, t_end: f64, opts: &OdeOptions) -> Result<EnvelopeTrajectory> {
    let (samples, divergence) = integrate_scaling_ode(ode, k0, t_end, opts)?;
    let rate_fit = if divergence.is_none() {
        fit_envelope_rate(&samples)
    } else {
        None
    };
    let kind = if k0 <= 1.0 {
        EnvelopeKind::Subsolution
    } else {
        EnvelopeKind::Supersolution
    };
    Ok(EnvelopeTrajectory {
        kind,
        frame: EnvelopeFrame::Original,
        ode: *ode,
        constants: None,
        base: None,
        samples,
        divergence,
        rate_fit,
    })
}

/// `k(t)^d base(k(t) r)` sampled on `grid`.
pub fn envelope_profile(traj: &EnvelopeTrajectory, t: f64, grid: &RadialGrid) -> Result<RadialProfile> {
    let base = traj
        .base
        .as_ref()
        .ok_or_else(|| Error::Precondition("trajectory has no base profile".into()))?;
    let k = traj.k_at(t)?;
    Ok(Dilation { inner: base, k }.sample(grid))
}

/// Mass function of the envelope at time `t`, on `grid`.
pub fn envelope_mass(traj: &EnvelopeTrajectory, t: f64, grid: &RadialGrid) -> Result<MassFunction> {
    let base = traj
        .base
        .as_ref()
        .ok_or_else(|| Error::Precondition("trajectory has no base profile".into()))?;
    let k = traj.k_at(t)?;
    let d = Dilation { inner: base, k };
    MassFunction::from_edge_values(grid.clone(), grid.edges().iter().map(|&r| d.mass_within(r)).collect())
}

/// `max_r [M0(r) - M_base(k r)]` over both sets of edges.
fn dilation_gap(m0: &MassFunction, base: &dyn RadialShape, k: f64, reverse: bool) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let radii = m0.grid().edges().iter().copied();
    for r in radii {
        let gap = m0.at(r) - base.mass_within(k * r);
        worst = worst.max(if reverse { -gap } else { gap });
    }
    worst
}

/// Extremal initial scaling: for a supersolution the smallest `k >= 1` with
/// `ρ0 ≺ k^d ρ_A(k·)`; for a subsolution the largest `k <= 1` with
/// `k^d ρ_A(k·) ≺ ρ0`. Found by bisection to relative precision `1e-10`.
pub fn initial_scaling(rho0: &RadialProfile, base: &StationaryProfile, kind: EnvelopeKind) -> Result<f64> {
    let m0 = MassFunction::of(rho0);
    // masses agree only to the stationary solver's tolerance
    let tol = 1e-12 * m0.total().max(base.mass()) + (m0.total() - base.mass()).abs();
    let ok = |k: f64| match kind {
        EnvelopeKind::Supersolution => dilation_gap(&m0, base, k, false) <= tol,
        EnvelopeKind::Subsolution => dilation_gap(&m0, base, k, true) <= tol,
    };
    let (mut good, mut bad) = match kind {
        EnvelopeKind::Supersolution => {
            if ok(1.0) {
                return Ok(1.0);
            }
            let mut hi = 2.0;
            let mut tries = 0;
            while !ok(hi) {
                hi *= 2.0;
                tries += 1;
                if tries > 200 {
                    return Err(Error::NonConvergence {
                        what: "supersolution dilation bracket",
                        iterations: tries,
                        residual: hi,
                    });
                }
            }
            (hi, hi / 2.0)
        }
        EnvelopeKind::Subsolution => {
            if ok(1.0) {
                return Ok(1.0);
            }
            let mut lo = 0.5;
            let mut tries = 0;
            while !ok(lo) {
                lo *= 0.5;
                tries += 1;
                if tries > 200 {
                    return Err(Error::NonConvergence {
                        what: "subsolution dilation bracket",
                        iterations: tries,
                        residual: lo,
                    });
                }
            }
            (lo, lo * 2.0)
        }
    };
    while (good - bad).abs() > 1e-10 * good {
        let mid = 0.5 * (good + bad);
        if ok(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Largest positive part of `φ σ r^{d-1} (r k'/k - v)` over edges inside the
/// support, where `v` is the inward velocity of the dilated profile. For a
/// subsolution this is `<= O(dr)`.
pub fn subsolution_residual(traj: &EnvelopeTrajectory, t: f64, kernel: &Kernel, p: &Params, grid: &RadialGrid) -> Result<f64> {
    let base = traj
        .base
        .as_ref()
        .ok_or_else(|| Error::Precondition("trajectory has no base profile".into()))?;
    let k = traj.k_at(t)?;
    let dk = traj.ode.rhs(t, k);
    let phi = envelope_profile(traj, t, grid)?;
    let v = velocity_field(&phi, kernel, p)?;
    let support = base.support_radius() / k;
    let sigma = p.sigma_d();
    let mut worst: f64 = 0.0;
    let n = grid.n();
    for (i, &r) in grid.edges().iter().enumerate().take(n).skip(1) {
        if r >= support - grid.max_width() {
            break;
        }
        let density = k.powi(p.d() as i32) * base.density(k * r);
        let lhs = r * dk / k;
        worst = worst.max(density * sigma * r.powi(p.d() as i32 - 1) * (lhs - v.values[i]));
    }
    Ok(worst)
}
