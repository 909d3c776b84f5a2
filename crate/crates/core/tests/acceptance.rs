//! End-to-end acceptance checks. Each criterion prints one line
//! `criterion NN <name>: PASS|FAIL (...) [seconds]`; pass criterion numbers as
//! arguments to run a subset.

use aggdiff::analysis::{
    density_scheme_tolerance, free_boundary_radius, geometric_times as geometric, log_log_slope, mass_scheme_tolerance,
    monotonicity_violation, rearrange_radial, transient_fit, DecayFit,
};
use aggdiff::cartesian::{
    evolve_3d, symmetrized_comparison_run, symmetrized_radial_run, CartesianField, CartesianOptions,
    ComparisonOptions, rearrange_3d,
};
use aggdiff::envelopes::{
    envelope_constants, envelope_mass, initial_scaling, integrate_envelope, integrate_ode_envelope,
    EnvelopeFrame, EnvelopeKind, OdeOptions, ScalingOde,
};
use aggdiff::initial::{SmoothBump, TwoScaleDatum};
use aggdiff::potentials::potential_value;
use aggdiff::quadrature::GaussLegendre;
use aggdiff::solver::{
    evolve, evolve_rescaled, implicit_step, DriftPotential, DriftSource, Frame, RadialSolver, SolverOptions,
    SolverState, Trajectory,
};
use aggdiff::stationary::{fokker_planck_stationary, solve_stationary, StationaryOptions, StationaryProfile};
use aggdiff::{precedes, Dilation, Kernel, MassFunction, Params, RadialGrid, RadialProfile, RadialShape, UniformBall};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget_s: f64,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "stationary oracle", budget_s: 5.0, run: stationary_oracle },
    Criterion { id: 2, name: "scaling dichotomy", budget_s: 30.0, run: scaling_dichotomy },
    Criterion { id: 3, name: "mass comparison", budget_s: 300.0, run: mass_comparison },
    Criterion { id: 4, name: "subcritical convergence", budget_s: 600.0, run: subcritical_convergence },
    Criterion { id: 5, name: "uniqueness probe", budget_s: 600.0, run: uniqueness_probe },
    Criterion { id: 6, name: "supercritical convergence", budget_s: 600.0, run: supercritical_convergence },
    Criterion { id: 7, name: "envelope ODE suite", budget_s: 10.0, run: envelope_suite },
    Criterion { id: 8, name: "implicit step", budget_s: 300.0, run: implicit_suite },
    Criterion { id: 9, name: "one-step rearrangement", budget_s: 10.0, run: one_step_rearrangement },
    Criterion { id: 10, name: "monotonicity", budget_s: 300.0, run: monotonicity },
    Criterion { id: 11, name: "instant regularization", budget_s: 600.0, run: instant_regularization },
    Criterion { id: 12, name: "non-radial comparison", budget_s: 1800.0, run: non_radial_comparison },
    Criterion { id: 13, name: "mollified limit", budget_s: 600.0, run: mollified_limit },
    Criterion { id: 14, name: "compact support and propagation", budget_s: 600.0, run: compact_support },
];

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut passed = 0;
    let mut total = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.contains(&c.id) {
            continue;
        }
        total += 1;
        let start = Instant::now();
        let out = std::panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let in_budget = secs < c.budget_s;
        let pass = out.pass && in_budget;
        if pass {
            passed += 1;
        }
        let budget = if in_budget { String::new() } else { format!(", over the {}s budget", c.budget_s) };
        println!(
            "criterion {:>2} {}: {} ({}{}) [{:.1}s]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            budget,
            secs
        );
    }
    println!("acceptance: {passed}/{total} criteria passed");
    if passed != total {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn m2d3() -> Params {
    Params::new(2.0, 3).unwrap()
}

fn tent(grid: &RadialGrid, radius: f64, mass: f64) -> RadialProfile {
    let t = RadialProfile::from_centers(grid.clone(), |r| (1.0 - r / radius).max(0.0));
    t.scaled(mass / t.total_mass())
}

fn stationary(p: &Params, k: &Kernel, mass: f64, grid: &RadialGrid) -> StationaryProfile {
    solve_stationary(p, k, mass, &StationaryOptions::new(grid.clone())).unwrap()
}

// ---------------------------------------------------------------- 1

fn stationary_oracle() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(5.0, 2000, 3).unwrap();
    let s = stationary(&p, &Kernel::Newtonian, 1.0, &grid);
    // linear Helmholtz profile sin(r/√2)/r, normalised by quadrature
    let radius = SQRT_2 * PI;
    let gl = GaussLegendre::new(40);
    let shape_mass = 4.0 * PI * gl.integrate(0.0, radius, |r| r * (r / SQRT_2).sin());
    let centre = (1.0 / SQRT_2) / shape_mass;
    let e_r = (s.support_radius() - radius).abs() / radius;
    let e_c = (s.center_density() - centre).abs() / centre;
    Outcome::new(
        e_r < 5e-3 && e_c < 5e-3,
        format!("support rel err {e_r:.2e}, centre density rel err {e_c:.2e}, tol 5e-3"),
    )
}

// ---------------------------------------------------------------- 2

fn scaling_dichotomy() -> Outcome {
    let grid = RadialGrid::with_radius(12.0, 3000, 3).unwrap();
    let mut detail = String::new();
    let mut pass = true;
    for (m, expect) in [(3.0, 1i8), (1.8, -1), (2.0, 0)] {
        let p = Params::new(m, 3).unwrap();
        let r1 = stationary(&p, &Kernel::Newtonian, 1.0, &grid).support_radius();
        let r8 = stationary(&p, &Kernel::Newtonian, 8.0, &grid).support_radius();
        let ok = match expect {
            1 => r8 > r1,
            -1 => r8 < r1,
            _ => (r8 - r1).abs() < 5e-3 * r1,
        };
        pass &= ok;
        let _ = write!(detail, "m={m}: R(1)={r1:.4} R(8)={r8:.4}; ");
    }
    Outcome::new(pass, detail.trim_end_matches("; ").to_string())
}

// ---------------------------------------------------------------- 3

fn mass_comparison() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(6.0, 600, 3).unwrap();
    let dr = grid.dr().unwrap();
    let base = tent(&grid, 3.0, 1.0);
    let t_end = 2.0;
    let snaps: Vec<f64> = (1..=20).map(|i| t_end * i as f64 / 20.0).collect();
    let kernels = [("newtonian", Kernel::Newtonian), ("gaussian", Kernel::gaussian(0.3, 3).unwrap())];
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut checks = 0;
    for (_, k) in &kernels {
        let mut o = SolverOptions::new(t_end, grid.radius());
        o.snapshot_times = snaps.clone();
        o.record_energy = false;
        let wide = evolve(SolverState::new(base.clone()), k, &p, &o).unwrap();
        for factor in [1.1, 1.25, 1.5, 2.0, 3.0] {
            let tight = Dilation { inner: &base, k: factor }.sample(&grid);
            let narrow = evolve(SolverState::new(tight), k, &p, &o).unwrap();
            let dt = wide.dt_max().max(narrow.dt_max());
            for (a, b) in wide.snapshots.iter().zip(&narrow.snapshots) {
                let tol = 5.0 * (dr + dt) * a.t;
                let c = precedes(&MassFunction::of(&a.rho), &MassFunction::of(&b.rho), tol);
                checks += 1;
                if !c.holds {
                    violations += 1;
                }
                worst = worst.max(c.margin / tol);
            }
        }
    }
    Outcome::new(
        violations == 0,
        format!("{checks} checks, {violations} violations, worst margin/tol {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 4 and 14

struct SubcriticalRun {
    traj: Trajectory,
    base: StationaryProfile,
    rho0: RadialProfile,
    sandwich: Vec<f64>,
    t_end: f64,
}

const SUPPORT_TIMES: usize = 12;

fn subcritical_run() -> &'static SubcriticalRun {
    static RUN: std::sync::OnceLock<SubcriticalRun> = std::sync::OnceLock::new();
    RUN.get_or_init(|| {
        let p = m2d3();
        let grid = RadialGrid::with_radius(8.0, 2000, 3).unwrap();
        let base = stationary(&p, &Kernel::Newtonian, 1.0, &grid);
        let rho0 = tent(&grid, 4.0, 1.0);
        let t_end = 1000.0;
        let sandwich: Vec<f64> = (1..=40).map(|i| t_end * i as f64 / 40.0).collect();
        let mut snaps = geometric(0.1, 10.0, SUPPORT_TIMES);
        snaps.extend(&sandwich);
        snaps.sort_by(f64::total_cmp);
        snaps.dedup();
        let mut o = SolverOptions::new(t_end, grid.radius());
        o.snapshot_times = snaps;
        o.target = Some(MassFunction::of(base.profile()));
        o.diagnostics_stride = 2000;
        o.record_energy = false;
        let traj = evolve(SolverState::new(rho0.clone()), &Kernel::Newtonian, &p, &o).unwrap();
        SubcriticalRun { traj, base, rho0, sandwich, t_end }
    })
}

fn subcritical_convergence() -> Outcome {
    let p = m2d3();
    let run = subcritical_run();
    let grid = run.rho0.grid().clone();
    let consts = envelope_constants(&run.base, &Kernel::Newtonian, &p).unwrap();
    let (r1, r2) = consts.rate_bounds(&p);
    let (lo, hi) = (0.75 * r1, 1.25 * r2);

    let mass_series: Vec<(f64, f64)> = run.traj.diagnostics.iter().map(|d| (d.t, d.sup_mass_err)).collect();
    let w2_series: Vec<(f64, f64)> = run.traj.diagnostics.iter().map(|d| (d.t, d.w2_to_target)).collect();
    let fits = [transient_fit(&mass_series).ok(), transient_fit(&w2_series).ok()];
    let rates_ok = fits.iter().all(|f| f.as_ref().is_some_and(|f| f.rate > 0.0 && f.rate >= lo && f.rate <= hi));
    let rate = |f: &Option<DecayFit>| f.as_ref().map_or(f64::NAN, |f| f.rate);

    let k_sub = initial_scaling(&run.rho0, &run.base, EnvelopeKind::Subsolution).unwrap();
    let k_sup = initial_scaling(&run.rho0, &run.base, EnvelopeKind::Supersolution).unwrap();
    let sub = integrate_envelope(EnvelopeKind::Subsolution, EnvelopeFrame::Original, k_sub, &consts, &p, run.t_end)
        .unwrap()
        .with_base(run.base.clone());
    let sup = integrate_envelope(EnvelopeKind::Supersolution, EnvelopeFrame::Original, k_sup, &consts, &p, run.t_end)
        .unwrap()
        .with_base(run.base.clone());
    let tol = mass_scheme_tolerance(run.base.profile());
    let mut sandwich_margin = f64::NEG_INFINITY;
    for &t in &run.sandwich {
        let m = MassFunction::of(&run.traj.snapshot_at(t).unwrap().rho);
        let below = precedes(&envelope_mass(&sub, t, &grid).unwrap(), &m, tol);
        let above = precedes(&m, &envelope_mass(&sup, t, &grid).unwrap(), tol);
        sandwich_margin = sandwich_margin.max(below.margin).max(above.margin);
    }
    let sandwich_ok = sandwich_margin <= tol;

    let fin = &run.traj.final_state.rho;
    let rel = fin.sup_distance(run.base.profile()).unwrap() / run.base.profile().sup();
    Outcome::new(
        rates_ok && sandwich_ok && rel < 0.01,
        format!(
            "rates M {:.4e} W2 {:.4e} in [{lo:.4e}, {hi:.4e}]; sandwich margin {sandwich_margin:.2e} vs tol {tol:.2e}; final sup err {:.3}%",
            rate(&fits[0]),
            rate(&fits[1]),
            100.0 * rel
        ),
    )
}

fn compact_support() -> Outcome {
    let run = subcritical_run();
    let support = |rho: &RadialProfile| rho.support_radius(1e-8);
    let s0 = support(&run.rho0);
    let bound = 1.25 * s0.max(run.base.support_radius());
    let max_support = run
        .traj
        .snapshots
        .iter()
        .filter(|s| s.t <= 10.0)
        .map(|s| support(&s.rho))
        .fold(s0, f64::max);
    // growth of the interface, located from the pressure
    let f0 = free_boundary_radius(&run.rho0, 2.0);
    let growth: Vec<(f64, f64)> = geometric(0.1, 10.0, SUPPORT_TIMES)
        .into_iter()
        .map(|t| (t, free_boundary_radius(&run.traj.snapshot_at(t).unwrap().rho, 2.0) - f0))
        .filter(|&(_, g)| g > 0.0)
        .collect();
    let exponent = if growth.len() >= 3 { log_log_slope(&growth) } else { f64::NAN };
    Outcome::new(
        max_support <= bound && exponent >= 0.4,
        format!("max support on [0,10] {max_support:.4} <= {bound:.4}; growth exponent {exponent:.3} over {} intervals", growth.len()),
    )
}

// ---------------------------------------------------------------- 5

fn uniqueness_probe() -> Outcome {
    let p = m2d3();
    let k = Kernel::gaussian(0.5, 3).unwrap();
    let grid = RadialGrid::with_radius(8.0, 500, 3).unwrap();
    let base = stationary(&p, &k, 1.0, &grid);
    let tol = density_scheme_tolerance(base.profile());
    let t_end = 2000.0;
    let mut o = SolverOptions::new(t_end, grid.radius());
    o.record_energy = false;
    o.diagnostics_stride = 10_000;
    let a = evolve(SolverState::new(UniformBall::with_mass(3, 3.0, 1.0).sample(&grid)), &k, &p, &o).unwrap();
    let b = evolve(SolverState::new(tent(&grid, 4.0, 1.0)), &k, &p, &o).unwrap();
    let (ra, rb) = (&a.final_state.rho, &b.final_state.rho);
    let gap = ra.sup_distance(rb).unwrap();
    let to_base = ra.sup_distance(base.profile()).unwrap().max(rb.sup_distance(base.profile()).unwrap());
    Outcome::new(
        gap < 2.0 * tol,
        format!("limit gap {gap:.2e} < 2 x {tol:.2e}; distance to shooting profile {to_base:.2e}"),
    )
}

// ---------------------------------------------------------------- 6

fn supercritical_convergence() -> Outcome {
    let p = Params::new(1.2, 3).unwrap();
    let grid = RadialGrid::with_radius(6.0, 600, 3).unwrap();
    let mu = fokker_planck_stationary(&p, 1.0, &grid).unwrap();
    let rho0 = Dilation { inner: mu.profile(), k: 1.05 }.sample(&grid);
    let sup0 = rho0.sup();
    let t_end = 8.0;
    let mut o = SolverOptions::new(t_end, grid.radius());
    o.target = Some(MassFunction::of(mu.profile()));
    o.record_energy = false;
    o.diagnostics_stride = 50;
    let traj = evolve_rescaled(SolverState::new(rho0), &Kernel::Newtonian, &p, &o).unwrap();
    let series: Vec<(f64, f64)> = traj.diagnostics.iter().map(|d| (d.t, d.sup_mass_err)).collect();
    let fit = transient_fit(&series).ok();
    let max_sup = traj.diagnostics.iter().map(|d| d.sup_norm).fold(0.0, f64::max);
    let bounded = traj.blowup.is_none() && max_sup <= 10.0 * sup0;
    let rate = fit.as_ref().map_or(f64::NAN, |f| f.rate);
    Outcome::new(
        bounded && rate > 0.0,
        format!("rescaled rate {rate:.4e}; max sup {max_sup:.4e} vs initial {sup0:.4e}"),
    )
}

// ---------------------------------------------------------------- 7

fn envelope_suite() -> Outcome {
    let p = m2d3();
    let c1 = 1.0;
    let expected = c1 * p.d() as f64 * (p.m() - 2.0 + 2.0 / p.d() as f64);
    let traj = integrate_ode_envelope(&ScalingOde::original(c1, &p), 0.5, 20.0, &OdeOptions::default()).unwrap();
    let rate = traj.rate_fit.as_ref().map_or(f64::NAN, |f| f.rate);
    let rate_ok = (rate - expected).abs() <= 0.02 * expected;

    let ode = ScalingOde::technical(1.0, 1.0, 1.0, 1.0, 3);
    let delta = (1.0f64 * 1.0 * 2f64.powi(-5)).powi(2);
    let basin_ok = (ode.basin_threshold() - delta).abs() < 1e-15;
    let t_end = 40.0;
    let traj = integrate_ode_envelope(&ode, delta / 2.0, t_end, &OdeOptions::default()).unwrap();
    let scaled: Vec<(f64, f64)> = traj.samples.iter().map(|&(t, k)| (t, (k - 1.0).abs() * (t / 2.0).exp())).collect();
    let c = scaled.iter().filter(|s| s.0 <= 10.0).map(|s| s.1).fold(0.0, f64::max);
    let later = scaled.iter().filter(|s| s.0 > 10.0).map(|s| s.1).fold(0.0, f64::max);
    let k_end = traj.samples.last().unwrap().1;
    let converged = traj.divergence.is_none() && (k_end - 1.0).abs() < 1e-6 && later <= c;
    Outcome::new(
        rate_ok && basin_ok && converged,
        format!(
            "rate {rate:.5} vs {expected}; delta {:.4e}; k(40) - 1 = {:.2e}, sup |k-1|e^(t/2) {c:.3e} then {later:.3e}",
            ode.basin_threshold(),
            k_end - 1.0
        ),
    )
}

// ---------------------------------------------------------------- 8

fn random_profile(rng: &mut ChaCha8Rng, grid: &RadialGrid, reach: f64) -> RadialProfile {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.0..reach), rng.gen_range(0.1..0.6), rng.gen_range(0.1..2.0)))
        .collect();
    RadialProfile::from_centers(grid.clone(), |r| {
        bumps.iter().map(|&(c, w, a)| a * (1.0 - ((r - c) / w).powi(2)).max(0.0)).sum()
    })
}

fn implicit_suite() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(4.0, 160, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let g1 = random_profile(&mut rng, &grid, 2.5);
        let g2 = random_profile(&mut rng, &grid, 2.5);
        let f = random_profile(&mut rng, &grid, 2.5);
        let phi = DriftPotential::Values(potential_value(&f, &Kernel::Newtonian, &p).unwrap());
        let h = rng.gen_range(1e-3..1e-1);
        let u1 = implicit_step(&g1, &phi, h, &p).unwrap();
        let u2 = implicit_step(&g2, &phi, h, &p).unwrap();
        worst = worst.max(u1.l1_distance(&u2).unwrap() - g1.l1_distance(&g2).unwrap());
    }
    let contraction_ok = worst <= 1e-8;

    // chained steps against a fine explicit run with the same frozen drift
    let g0 = tent(&grid, 2.5, 1.0);
    let source = UniformBall::with_mass(3, 2.0, 1.0).sample(&grid);
    let grad = aggdiff::potentials::drift_derivative(&source, &Kernel::Newtonian, &p).unwrap();
    let t_end = 0.2;
    let mut o = SolverOptions::new(t_end, grid.radius());
    o.record_energy = false;
    o.cfl_diffusion = 0.05;
    o.cfl_advection = 0.05;
    let mut solver = RadialSolver::new(&p, &grid, DriftSource::Frozen(grad.values.clone()), Frame::Original, o).unwrap();
    let reference = solver.evolve(SolverState::new(g0.clone())).unwrap().final_state.rho;
    let phi = DriftPotential::EdgeGradient(grad);
    let errors: Vec<(f64, f64)> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&h| {
            let mut u = g0.clone();
            for _ in 0..(t_end / h).round() as usize {
                u = implicit_step(&u, &phi, h, &p).unwrap();
            }
            (h, u.l1_distance(&reference).unwrap())
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0].1 / w[1].1).log2()).collect();
    let order_ok = orders.iter().all(|&o| o >= 0.8);
    Outcome::new(
        contraction_ok && order_ok,
        format!(
            "max ||u1-u2||_1 - ||g1-g2||_1 = {worst:.2e}; errors {:?}; orders {:?}",
            errors.iter().map(|e| format!("{:.3e}", e.1)).collect::<Vec<_>>(),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn one_step_rearrangement() -> Outcome {
    let p = m2d3();
    let k = Kernel::gaussian(0.3, 3).unwrap();
    let grid = RadialGrid::with_radius(5.0, 200, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..20 {
        let f = random_profile(&mut rng, &grid, 3.0);
        let g = random_profile(&mut rng, &grid, 3.0);
        let h = rng.gen_range(1e-2..2e-1);
        let (fs, gs) = (rearrange_radial(&f), rearrange_radial(&g));
        let (fb, gb) = (fs.sample(&grid), gs.sample(&grid));
        // resampling the rearrangements is exact at edges, linear between
        let quad = MassFunction::of(&fs).sup_distance(&MassFunction::of(&fb))
            + MassFunction::of(&gs).sup_distance(&MassFunction::of(&gb));
        let u = implicit_step(&g, &DriftPotential::Values(potential_value(&f, &k, &p).unwrap()), h, &p).unwrap();
        let ubar = implicit_step(&gb, &DriftPotential::Values(potential_value(&fb, &k, &p).unwrap()), h, &p).unwrap();
        let c = precedes(&MassFunction::of(&rearrange_radial(&u)), &MassFunction::of(&ubar), 1e-8 + quad);
        if !c.holds {
            failures += 1;
        }
        worst = worst.max(c.margin);
    }
    Outcome::new(failures == 0, format!("20 pairs, {failures} failures, worst margin {worst:.2e}"))
}

// ---------------------------------------------------------------- 10

/// Round-off level of the explicit scheme relative to the current sup norm.
const MONOTONICITY_TOLERANCE: f64 = 1e-10;

fn monotonicity() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(6.0, 600, 3).unwrap();
    let data = [UniformBall::with_mass(3, 3.0, 1.0).sample(&grid), tent(&grid, 4.0, 1.0)];
    let kernels = [Kernel::Newtonian, Kernel::gaussian(0.2, 3).unwrap()];
    let mut worst_admissible: f64 = 0.0;
    for k in &kernels {
        for rho0 in &data {
            let mut o = SolverOptions::new(1.0, grid.radius());
            o.snapshot_times = (1..=50).map(|i| i as f64 / 50.0).collect();
            o.record_energy = false;
            o.diagnostics_stride = usize::MAX;
            let tr = evolve(SolverState::new(rho0.clone()), k, &p, &o).unwrap();
            for s in &tr.snapshots {
                worst_admissible = worst_admissible.max(monotonicity_violation(&s.rho) / (MONOTONICITY_TOLERANCE * s.rho.sup()));
            }
        }
    }

    let grid = RadialGrid::uniform(0.004, 750, 3).unwrap();
    let rho0 = TwoScaleDatum::default().sample(&p, &grid).unwrap();
    let kernel = Kernel::annular(1.0, 0.2, 3).unwrap();
    let t_end = 2e-3;
    let mut o = SolverOptions::new(t_end, grid.radius());
    o.snapshot_times = (1..=20).map(|i| t_end * i as f64 / 20.0).collect();
    o.record_energy = false;
    o.diagnostics_stride = usize::MAX;
    let tr = evolve(SolverState::new(rho0), &kernel, &p, &o).unwrap();
    let crossing = tr
        .snapshots
        .iter()
        .find(|s| monotonicity_violation(&s.rho) > 10.0 * MONOTONICITY_TOLERANCE * s.rho.sup())
        .map(|s| s.t);
    let peak = tr
        .snapshots
        .iter()
        .map(|s| monotonicity_violation(&s.rho) / (MONOTONICITY_TOLERANCE * s.rho.sup()))
        .fold(0.0, f64::max);
    Outcome::new(
        worst_admissible <= 10.0 && crossing.is_some_and(|t| t < 0.1),
        format!(
            "admissible violation/tol {worst_admissible:.2e} <= 10; annular kernel crosses 10x at t = {}, peak {peak:.2e}x",
            crossing.map_or("never".to_string(), |t| format!("{t:.1e}"))
        ),
    )
}

// ---------------------------------------------------------------- 11

fn instant_regularization() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(6.0, 3000, 3).unwrap();
    let base = stationary(&p, &Kernel::Newtonian, 1.0, &grid);
    let target = 1e3 * base.profile().sup();
    // radius of the unit-mass smooth bump whose peak is `target`
    let peak = |r: f64| SmoothBump::new(3, r, 1.0).unwrap().value(0.0);
    let (mut lo, mut hi) = (1e-3f64, 4.0f64);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if peak(mid) > target { lo = mid } else { hi = mid }
    }
    let bump = SmoothBump::new(3, hi, 1.0).unwrap();
    let rho0 = bump.sample(&grid);
    let sup0 = rho0.sup();
    // porous-medium time scale: a point mass reaches the peak ‖ρ0‖∞ at t0
    let alpha = p.alpha();
    let b1 = aggdiff::stationary::barenblatt_shape(&p, 1.0, 1.0).unwrap().density(0.0);
    let t0 = (b1 / sup0).powf(1.0 / alpha);
    let times = geometric(0.1 * t0, 100.0 * t0, 61);
    let mut o = SolverOptions::new(100.0 * t0, grid.radius());
    o.snapshot_times = times.clone();
    o.record_energy = false;
    o.diagnostics_stride = usize::MAX;
    let tr = evolve(SolverState::new(rho0), &Kernel::Newtonian, &p, &o).unwrap();
    let sups: Vec<(f64, f64)> = times.iter().map(|&t| (t, tr.snapshot_at(t).unwrap().rho.sup())).collect();
    // the first decade starts once the peak has halved
    let onset = sups.iter().find(|s| s.1 <= 0.5 * sup0).map_or(f64::NAN, |s| s.0);
    let pts: Vec<(f64, f64)> =
        sups.iter().copied().filter(|s| s.0 >= onset * (1.0 - 1e-12) && s.0 <= 10.0 * onset * (1.0 + 1e-12)).collect();
    let slope = if pts.len() >= 3 { log_log_slope(&pts) } else { f64::NAN };
    Outcome::new(
        slope <= -alpha + 0.15,
        format!("sup0 / sup(rho_A) = {:.0}; slope {slope:.4} over [{onset:.2e}, {:.2e}], bound {:.2}", sup0 / base.profile().sup(), 10.0 * onset, -alpha + 0.15),
    )
}

// ---------------------------------------------------------------- 12

fn balls(n: usize, h: f64, centres: &[[f64; 3]], radius: f64, mass: f64) -> CartesianField {
    let height = mass / (centres.len() as f64 * 4.0 / 3.0 * PI * radius.powi(3));
    CartesianField::sample(n, h, 4, |x| {
        centres
            .iter()
            .filter(|c| (0..3).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>() <= radius * radius)
            .count() as f64
            * height
    })
    .unwrap()
}

/// `max_t sup_r |M_{ρ*} - M_{ρ̄}| / t` for a centred ball.
fn radial_discrepancy(n: usize, h: f64, p: &Params, t_end: f64) -> f64 {
    let f0 = balls(n, h, &[[0.0; 3]], 1.2, 1.0);
    let mut co = CartesianOptions::new(t_end);
    co.snapshot_times = (1..=5).map(|i| t_end * i as f64 / 5.0).collect();
    let opts = ComparisonOptions::new(co.clone());
    let cart = evolve_3d(f0.clone(), &Kernel::Newtonian, p, &co).unwrap();
    let radial = symmetrized_radial_run(&f0, &Kernel::Newtonian, p, &opts).unwrap();
    cart.snapshots
        .iter()
        .zip(&radial)
        .map(|((t, f), (_, r))| MassFunction::of(&rearrange_3d(f)).sup_distance(&MassFunction::of(r)) / t)
        .fold(0.0, f64::max)
}

fn non_radial_comparison() -> Outcome {
    let p = m2d3();
    let t_end = 1.0;
    let (n, h) = (48, 0.2);
    // radial data first: the discrepancy must shrink like h
    let coarse = radial_discrepancy(n / 2, 2.0 * h, &p, t_end);
    let fine = radial_discrepancy(n, h, &p, t_end);
    let order = (coarse / fine).log2();
    let cross_ok = order >= 0.8;
    // calibrated constant: twice the radial-data discrepancy per unit h t
    let constant = 2.0 * fine / h;
    let mut co = CartesianOptions::new(t_end);
    co.snapshot_times = (1..=5).map(|i| t_end * i as f64 / 5.0).collect();
    let mut opts = ComparisonOptions::new(co);
    opts.tolerance_constant = constant;
    let mut detail = format!("radial cross-check order {order:.2} ({coarse:.2e} -> {fine:.2e}), tolerance constant {constant:.3e}");
    let mut pass = cross_ok;
    for (name, f0) in [
        ("two-balls", balls(n, h, &[[-1.2, 0.0, 0.0], [1.2, 0.0, 0.0]], 1.0, 1.0)),
        ("off-center-ball", balls(n, h, &[[0.8, 0.3, 0.0]], 1.2, 1.0)),
    ] {
        let rep = symmetrized_comparison_run(&f0, &Kernel::Newtonian, &p, &opts).unwrap();
        let margin = rep.snapshots.iter().map(|s| s.order_margin / s.tolerance).fold(f64::NEG_INFINITY, f64::max);
        let lp = rep.snapshots.iter().flat_map(|s| s.lp_gaps).fold(f64::NEG_INFINITY, f64::max);
        pass &= rep.passed;
        let _ = write!(detail, "; {name}: order margin/tol {margin:.2e}, max Lp gap {lp:.2e}");
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------- 13

fn mollified_limit() -> Outcome {
    let p = m2d3();
    let grid = RadialGrid::with_radius(6.0, 1200, 3).unwrap();
    let rho0 = tent(&grid, 3.0, 1.0);
    let t = 0.5;
    let run = |k: &Kernel| {
        let o = SolverOptions { record_energy: false, diagnostics_stride: usize::MAX, ..SolverOptions::new(t, grid.radius()) };
        evolve(SolverState::new(rho0.clone()), k, &p, &o).unwrap().final_state.rho
    };
    let newton = run(&Kernel::Newtonian);
    let gaps: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| run(&Kernel::gaussian(eps, 3).unwrap()).sup_distance(&newton).unwrap())
        .collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    Outcome::new(
        decreasing,
        format!("sup gaps at t = {t}: {:?}", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()),
    )
}
