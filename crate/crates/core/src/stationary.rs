//! Radial stationary states: shooting for `(m/(m-1)) ρ^{m-1} + ρ*V = C`,
//! the Barenblatt profile, and the rescaled-frame state `μ_A`.

use statrs::function::beta::{beta, beta_reg};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::model::{Params, Regime};
use crate::potentials::{Interaction, Kernel};
use crate::profile::{pow, RadialProfile, RadialShape};
use crate::quadrature::bisect_increasing;

#[derive(Clone, Debug)]
pub struct StationaryOptions {
    /// Grid the profile is sampled on; its width also sets the shooting step.
    pub grid: RadialGrid,
    /// Shooting steps per grid cell.
    pub steps_per_cell: usize,
    pub mass_rel_tol: f64,
    /// Sup-norm tolerance of the mollified fixed point.
    pub fixed_point_tol: f64,
    pub damping: f64,
    pub max_iterations: usize,
}

impl StationaryOptions {
    pub fn new(grid: RadialGrid) -> Self {
        Self {
            grid,
            steps_per_cell: 4,
            mass_rel_tol: 1e-8,
            fixed_point_tol: 1e-8,
            damping: 0.5,
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    /// Knots `r_k` with `w = ρ^{m-1}` and `M`; the last knot is the support edge.
    Dense { r: Vec<f64>, w: Vec<f64>, m: Vec<f64> },
    Quadratic(QuadraticPressure),
}

/// A compactly supported, radially decreasing stationary profile.
#[derive(Clone, Debug)]
pub struct StationaryProfile {
    params: Params,
    newtonian: bool,
    shape: Shape,
    profile: RadialProfile,
    support_radius: f64,
    center_density: f64,
    lagrange_constant: f64,
    mass: f64,
    iterations: usize,
}

impl StationaryProfile {
    /// The profile as cell averages on the solve grid.
    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn center_density(&self) -> f64 {
        self.center_density
    }

    /// The constant `C` in `(m/(m-1)) ρ^{m-1} + ρ*V = C` on the support.
    pub fn lagrange_constant(&self) -> f64 {
        self.lagrange_constant
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Outer fixed-point iterations used (0 for the Newtonian kernel).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Pointwise density.
    pub fn density(&self, r: f64) -> f64 {
        match &self.shape {
            Shape::Quadratic(q) => q.density(r),
            Shape::Dense { r: knots, w, .. } => {
                if r >= self.support_radius {
                    return 0.0;
                }
                let k = locate(knots, r);
                let t = (r - knots[k]) / (knots[k + 1] - knots[k]);
                let wi = w[k] + t * (w[k + 1] - w[k]);
                pow(wi, 1.0 / (self.params.m() - 1.0))
            }
        }
    }

    /// Same profile sampled on another grid.
    pub fn resampled(&self, grid: &RadialGrid) -> Result<Self> {
        let mut out = self.clone();
        out.profile = sample_checked(self, grid)?;
        Ok(out)
    }

    /// `max |(m/(m-1)) ρ^{m-1} + ρ*V - C|` over cells inside the support.
    pub fn equation_residual(&self, kernel: &Kernel) -> Result<f64> {
        let grid = self.profile.grid();
        let it = Interaction::new(kernel, grid)?;
        let phi = it.potential(self.profile.values());
        let m = self.params.m();
        let c = m / (m - 1.0);
        let e = grid.edges();
        Ok((0..grid.n())
            .take_while(|&i| e[i + 1] < self.support_radius)
            .map(|i| {
                let r = grid.center(i);
                (c * pow(self.density(r), m - 1.0) + phi.at(r) - self.lagrange_constant).abs()
            })
            .fold(0.0, f64::max))
    }
}

fn locate(knots: &[f64], r: f64) -> usize {
    knots.partition_point(|&x| x <= r).saturating_sub(1).min(knots.len() - 2)
}

impl RadialShape for StationaryProfile {
    fn dim(&self) -> usize {
        self.params.d()
    }

    fn mass_within(&self, r: f64) -> f64 {
        match &self.shape {
            Shape::Quadratic(q) => q.mass_within(r),
            Shape::Dense { r: knots, w, m } => {
                if r <= 0.0 {
                    return 0.0;
                }
                if r >= self.support_radius {
                    return self.mass;
                }
                // cubic Hermite on M with M' = sigma r^{d-1} ρ
                let k = locate(knots, r);
                let (r0, r1) = (knots[k], knots[k + 1]);
                let h = r1 - r0;
                let t = (r - r0) / h;
                let sigma = self.params.sigma_d();
                let dm1 = self.params.d() as i32 - 1;
                let q = 1.0 / (self.params.m() - 1.0);
                let s0 = sigma * r0.powi(dm1) * pow(w[k], q);
                let s1 = sigma * r1.powi(dm1) * pow(w[k + 1], q);
                let (t2, t3) = (t * t, t * t * t);
                let v = (2.0 * t3 - 3.0 * t2 + 1.0) * m[k]
                    + (t3 - 2.0 * t2 + t) * h * s0
                    + (-2.0 * t3 + 3.0 * t2) * m[k + 1]
                    + (t3 - t2) * h * s1;
                v.clamp(m[k], m[k + 1])
            }
        }
    }

    fn total_mass(&self) -> f64 {
        self.mass
    }
}

fn sample_checked(shape: &StationaryProfile, grid: &RadialGrid) -> Result<RadialProfile> {
    if shape.support_radius > grid.radius() {
        return Err(Error::Precondition(format!(
            "support radius {} exceeds grid radius {}",
            shape.support_radius,
            grid.radius()
        )));
    }
    Ok(shape.sample(grid))
}

struct Shot {
    r: Vec<f64>,
    w: Vec<f64>,
    m: Vec<f64>,
}

impl Shot {
    fn support(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    fn mass(&self) -> f64 {
        self.m[self.m.len() - 1]
    }
}

/// RK4 for `w' = -((m-1)/m) drift(r, M)`, `M' = sigma r^{d-1} w^{1/(m-1)}`
/// from `(w0, 0)` until `w` changes sign. `None` if the support would pass `r_max`.
fn shoot(p: &Params, w0: f64, h: f64, r_max: f64, drift: &dyn Fn(f64, f64) -> f64) -> Option<Shot> {
    let m = p.m();
    let c = (m - 1.0) / m;
    let q = 1.0 / (m - 1.0);
    let sigma = p.sigma_d();
    let dm1 = p.d() as i32 - 1;
    let f = |r: f64, w: f64, mm: f64| (-c * drift(r, mm), sigma * r.powi(dm1) * pow(w, q));
    let step = |rc: f64, w: f64, mm: f64, h: f64| {
        let (k1w, k1m) = f(rc, w, mm);
        let (k2w, k2m) = f(rc + 0.5 * h, w + 0.5 * h * k1w, mm + 0.5 * h * k1m);
        let (k3w, k3m) = f(rc + 0.5 * h, w + 0.5 * h * k2w, mm + 0.5 * h * k2m);
        let (k4w, k4m) = f(rc + h, w + h * k3w, mm + h * k3m);
        (
            w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
            mm + h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m),
        )
    };
    let mut r = vec![0.0];
    let mut ws = vec![w0];
    let mut ms = vec![0.0];
    let (mut rc, mut w, mut mm) = (0.0, w0, 0.0);
    let mut first = true;
    loop {
        let (wn, mn) = if first {
            // Taylor start: RK stages at the origin see M = 0 and would cost an order.
            first = false;
            let m1 = sigma * h.powi(dm1 + 1) / p.d() as f64 * pow(w0, q);
            let w1 = w0 - c * drift(h, m1) * h / 2.0;
            if w1 > 0.0 {
                (w1, m1)
            } else {
                step(rc, w, mm, h)
            }
        } else {
            step(rc, w, mm, h)
        };
        if wn <= 0.0 {
            // locate the free boundary by bisection on the length of the last step
            let (mut lo, mut hi) = (0.0, h);
            let mut m_edge = mm;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (wm, mmid) = step(rc, w, mm, mid);
                if wm > 0.0 {
                    lo = mid;
                    m_edge = mmid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * (rc + h) {
                    break;
                }
            }
            let edge = rc + 0.5 * (lo + hi);
            if lo > 0.0 {
                r.push(edge);
                ws.push(0.0);
                ms.push(m_edge);
            } else {
                let last = ms.len() - 1;
                ws[last] = 0.0;
            }
            return Some(Shot { r, w: ws, m: ms });
        }
        rc += h;
        if rc > r_max {
            return None;
        }
        w = wn;
        mm = mn;
        r.push(rc);
        ws.push(w);
        ms.push(mm);
    }
}

/// Finds `w0` so the shot carries mass `target`.
fn shoot_for_mass(
    p: &Params,
    target: f64,
    h: f64,
    r_max: f64,
    rel_tol: f64,
    drift: &dyn Fn(f64, f64) -> f64,
) -> Result<Shot> {
    let mass = |w0: f64| shoot(p, w0, h, r_max, drift).map_or(f64::INFINITY, |s| s.mass());
    let (mut lo, mut hi) = (1.0, 1.0);
    let m1 = mass(1.0);
    if m1 < target {
        while mass(hi) < target {
            lo = hi;
            hi *= 4.0;
            if hi > 1e300 {
                return Err(Error::NonConvergence {
                    what: "stationary shooting bracket",
                    iterations: 0,
                    residual: target,
                });
            }
        }
    } else {
        while mass(lo) >= target {
            hi = lo;
            lo /= 4.0;
            if lo < 1e-300 {
                return Err(Error::NonConvergence {
                    what: "stationary shooting bracket",
                    iterations: 0,
                    residual: target,
                });
            }
        }
    }
    let mut best = None;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        match shoot(p, mid, h, r_max, drift) {
            Some(s) if s.mass() < target => {
                lo = mid;
                let close = (s.mass() / target - 1.0).abs() < rel_tol;
                best = Some(s);
                if close {
                    break;
                }
            }
            Some(s) => {
                hi = mid;
                let close = (s.mass() / target - 1.0).abs() < rel_tol;
                best = Some(s);
                if close {
                    break;
                }
            }
            None => hi = mid,
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    match best {
        Some(s) if (s.mass() / target - 1.0).abs() < rel_tol => Ok(s),
        Some(s) => Err(Error::NonConvergence {
            what: "stationary mass bisection",
            iterations: 200,
            residual: (s.mass() / target - 1.0).abs(),
        }),
        None => Err(Error::Precondition(format!(
            "stationary support does not fit inside r = {r_max}"
        ))),
    }
}

fn shoot_refined(
    p: &Params,
    target: f64,
    opts: &StationaryOptions,
    drift: &dyn Fn(f64, f64) -> f64,
) -> Result<Shot> {
    let r_max = opts.grid.radius();
    let h = opts.grid.max_width() / opts.steps_per_cell.max(1) as f64;
    let shot = shoot_for_mass(p, target, h, r_max, opts.mass_rel_tol, drift)?;
    // keep at least a thousand steps across the support
    if shot.support() / h < 1000.0 {
        let h = shot.support() / 1000.0;
        return shoot_for_mass(p, target, h, r_max, opts.mass_rel_tol, drift);
    }
    Ok(shot)
}

fn from_shot(p: &Params, shot: Shot, newtonian: bool, grid: &RadialGrid) -> StationaryProfile {
    let support = shot.support();
    let mass = shot.mass();
    let center = pow(shot.w[0], 1.0 / (p.m() - 1.0));
    let mut out = StationaryProfile {
        params: *p,
        newtonian,
        shape: Shape::Dense {
            r: shot.r,
            w: shot.w,
            m: shot.m,
        },
        profile: RadialProfile::zeros(grid.clone()),
        support_radius: support,
        center_density: center,
        lagrange_constant: 0.0,
        mass,
        iterations: 0,
    };
    out.profile = out.sample(grid);
    out
}

fn lagrange_from_potential(s: &StationaryProfile, kernel: &Kernel) -> Result<f64> {
    let it = Interaction::new(kernel, s.profile.grid())?;
    Ok(it.potential(s.profile.values()).at(s.support_radius))
}

/// Radially decreasing stationary state of mass `mass`.
pub fn solve_stationary(
    p: &Params,
    kernel: &Kernel,
    mass: f64,
    opts: &StationaryOptions,
) -> Result<StationaryProfile> {
    if p.regime() != Regime::Subcritical {
        return Err(Error::Unsupported(format!(
            "stationary states are computed only for subcritical m (m = {}, d = {})",
            p.m(),
            p.d()
        )));
    }
    if !(mass > 0.0) {
        return Err(Error::InvalidParams(format!("mass must be positive, got {mass}")));
    }
    if opts.grid.dim() != p.d() {
        return Err(Error::GridMismatch("grid dimension differs from d".into()));
    }
    let sigma = p.sigma_d();
    let dm1 = p.d() as i32 - 1;
    let newton_drift = |r: f64, mm: f64| if r > 0.0 { mm / (sigma * r.powi(dm1)) } else { 0.0 };
    let shot = shoot_refined(p, mass, opts, &newton_drift)?;
    let mut sol = from_shot(p, shot, true, &opts.grid);
    if matches!(kernel, Kernel::Newtonian) {
        sol.lagrange_constant = -p.c_d() * mass / sol.support_radius.powi(p.d() as i32 - 2);
        return Ok(sol);
    }

    let it = Interaction::new(kernel, &opts.grid)?;
    let mut rho = sol.profile.values().to_vec();
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iterations {
        let mt = MassFunction::from_edge_values(opts.grid.clone(), it.m_tilde_edges(&rho))?;
        let drift = |r: f64, _own: f64| if r > 0.0 { mt.at(r) / (sigma * r.powi(dm1)) } else { 0.0 };
        let shot = shoot_refined(p, mass, opts, &drift)?;
        let next = from_shot(p, shot, false, &opts.grid);
        residual = next
            .profile
            .values()
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log::debug!("stationary fixed point {iter}: sup change {residual:e}");
        if residual < opts.fixed_point_tol {
            let mut next = next;
            next.iterations = iter;
            next.lagrange_constant = lagrange_from_potential(&next, kernel)?;
            return Ok(next);
        }
        let th = opts.damping;
        for (r, n) in rho.iter_mut().zip(next.profile.values()) {
            *r = (1.0 - th) * *r + th * n;
        }
    }
    Err(Error::NonConvergence {
        what: "mollified stationary fixed point",
        iterations: opts.max_iterations,
        residual,
    })
}

/// Mass rescaling of a Newtonian stationary state:
/// `ρ_B(x) = a ρ_A(a^{-(m-2)/2} x)` with `a = (B/A)^{2/(d(m-2)+2)}`.
pub fn rescale_stationary(base: &StationaryProfile, target_mass: f64, p: &Params) -> Result<StationaryProfile> {
    if !base.newtonian {
        return Err(Error::Unsupported(
            "mass rescaling holds only for the Newtonian kernel".into(),
        ));
    }
    if !(target_mass > 0.0) {
        return Err(Error::InvalidParams(format!("mass must be positive, got {target_mass}")));
    }
    let m = p.m();
    let d = p.d() as f64;
    let ratio = target_mass / base.mass;
    let a = ratio.powf(2.0 / (d * (m - 2.0) + 2.0));
    let stretch = a.powf((m - 2.0) / 2.0);
    let wa = a.powf(m - 1.0);
    let Shape::Dense { r, w, m: mm } = &base.shape else {
        return Err(Error::Unsupported("base is not a shooting profile".into()));
    };
    let mut out = base.clone();
    out.shape = Shape::Dense {
        r: r.iter().map(|x| x * stretch).collect(),
        w: w.iter().map(|x| x * wa).collect(),
        m: mm.iter().map(|x| x * ratio).collect(),
    };
    out.support_radius = base.support_radius * stretch;
    out.center_density = base.center_density * a;
    out.lagrange_constant = base.lagrange_constant * wa;
    out.mass = base.mass * ratio;
    out.profile = sample_checked(&out, base.profile.grid())?;
    Ok(out)
}

/// Density `K (1 - r²/R²)_+^{1/(m-1)}`: the Barenblatt family.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticPressure {
    pub dim: usize,
    pub m: f64,
    pub amplitude: f64,
    pub radius: f64,
}

impl QuadraticPressure {
    fn shape_beta(&self) -> (f64, f64) {
        (self.dim as f64 / 2.0, 1.0 / (self.m - 1.0) + 1.0)
    }

    fn full_mass(&self) -> f64 {
        let (a, b) = self.shape_beta();
        crate::quadrature::unit_sphere_area(self.dim) * self.amplitude * self.radius.powi(self.dim as i32)
            / 2.0
            * beta(a, b)
    }

    pub fn density(&self, r: f64) -> f64 {
        let x = 1.0 - (r / self.radius).powi(2);
        self.amplitude * pow(x, 1.0 / (self.m - 1.0))
    }
}

impl RadialShape for QuadraticPressure {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mass_within(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.radius {
            return self.full_mass();
        }
        let (a, b) = self.shape_beta();
        self.full_mass() * beta_reg(a, b, (r / self.radius).powi(2))
    }

    fn total_mass(&self) -> f64 {
        self.full_mass()
    }
}

/// Solves for `C` in a quadratic-pressure profile `shape(C)` of mass `mass`.
fn solve_c(mass: f64, shape: impl Fn(f64) -> QuadraticPressure) -> f64 {
    let mut hi = 1.0;
    while shape(hi).total_mass() < mass {
        hi *= 2.0;
    }
    let mut lo = hi;
    while shape(lo).total_mass() > mass {
        lo *= 0.5;
    }
    bisect_increasing(lo, hi, mass, 1e-15, |c| shape(c).total_mass())
}

/// `U(x,t) = t^{-βd} (C - ((m-1)β/2m) |x|² t^{-2β})_+^{1/(m-1)}` with `C` set by the mass.
pub fn barenblatt_shape(p: &Params, mass: f64, t: f64) -> Result<QuadraticPressure> {
    if !(t > 0.0) || !(mass > 0.0) {
        return Err(Error::InvalidParams(format!(
            "barenblatt needs t > 0 and mass > 0 (t = {t}, mass = {mass})"
        )));
    }
    let (m, b, d) = (p.m(), p.beta(), p.d());
    let kappa = (m - 1.0) * b / (2.0 * m);
    let shape = |c: f64| QuadraticPressure {
        dim: d,
        m,
        amplitude: t.powf(-b * d as f64) * c.powf(1.0 / (m - 1.0)),
        radius: (c / kappa).sqrt() * t.powf(b),
    };
    Ok(shape(solve_c(mass, shape)))
}

pub fn barenblatt(p: &Params, mass: f64, t: f64, grid: &RadialGrid) -> Result<RadialProfile> {
    Ok(barenblatt_shape(p, mass, t)?.sample(grid))
}

/// `μ_A` with `(m/(m-1)) μ^{m-1} = (C - β|λ|²/2)_+`.
pub fn fokker_planck_stationary(p: &Params, mass: f64, grid: &RadialGrid) -> Result<StationaryProfile> {
    if !(mass > 0.0) {
        return Err(Error::InvalidParams(format!("mass must be positive, got {mass}")));
    }
    let (m, b, d) = (p.m(), p.beta(), p.d());
    let shape = |c: f64| QuadraticPressure {
        dim: d,
        m,
        amplitude: ((m - 1.0) * c / m).powf(1.0 / (m - 1.0)),
        radius: (2.0 * c / b).sqrt(),
    };
    let c = solve_c(mass, shape);
    let q = shape(c);
    let mut out = StationaryProfile {
        params: *p,
        newtonian: false,
        shape: Shape::Quadratic(q),
        profile: RadialProfile::zeros(grid.clone()),
        support_radius: q.radius,
        center_density: q.amplitude,
        lagrange_constant: c,
        mass: q.total_mass(),
        iterations: 0,
    };
    out.profile = sample_checked(&out, grid)?;
    Ok(out)
}
