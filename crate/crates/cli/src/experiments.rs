//! The experiment registry. Each experiment resolves a config (schema
//! defaults, then its preset, then user overrides), runs, and writes its
//! outputs and a [`Summary`] into a run directory.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use aggdiff::analysis::{
    free_boundary_radius, geometric_times, log_log_slope, mass_scheme_tolerance,
    monotonicity_violation, rearrange_radial, transient_fit,
};
use aggdiff::cartesian::{
    evolve_3d, rearrange_3d, symmetrized_comparison_run, symmetrized_radial_run, CartesianOptions, ComparisonOptions,
};
use aggdiff::envelopes::{
    envelope_constants, envelope_mass, initial_scaling, integrate_envelope, integrate_ode_envelope, EnvelopeFrame,
    EnvelopeKind, OdeOptions, ScalingOde,
};
use aggdiff::initial::SmoothBump;
use aggdiff::potentials::{drift_derivative, potential_value};
use aggdiff::quadrature::GaussLegendre;
use aggdiff::solver::{
    evolve, evolve_rescaled, implicit_step, Diagnostics, DriftPotential, DriftSource, Frame, RadialSolver,
    SolverOptions, SolverState, Trajectory,
};
use aggdiff::stationary::{barenblatt_shape, fokker_planck_stationary, StationaryOptions};
use aggdiff::{precedes, Dilation, Kernel, MassFunction, Params, RadialGrid, RadialProfile, RadialShape, UniformBall};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::output::RunDir;
use crate::spec::{cartesian_field, grid, initial_profile, kernel, params, stationary};
use crate::summary::Summary;

type Runner = fn(&Config, &mut RunDir, &mut Summary) -> Result<()>;

pub struct Experiment {
    pub name: &'static str,
    /// The result under test, named rather than numbered.
    pub theorem: &'static str,
    pub about: &'static str,
    /// Overrides applied on top of the schema defaults.
    pub preset: &'static [(&'static str, &'static str)],
    run: Runner,
}

pub const REGISTRY: &[Experiment] = &[
    Experiment {
        name: "stationary-profile",
        theorem: "radial stationary states; Helmholtz profile at m = 2",
        about: "shooting solve for rho_A, checked against the closed form when m = 2, d = 3",
        preset: &[("grid.n", "2000"), ("grid.radius", "5")],
        run: stationary_profile,
    },
    Experiment {
        name: "converge-subcritical",
        theorem: "exponential convergence to rho_A in the subcritical regime; envelope sandwich",
        about: "fits the decay of sup|M - M_A| and W2, checks the envelope band, sandwich and support",
        preset: &[
            ("init", "tent:4"),
            ("grid.n", "400"),
            ("grid.radius", "8"),
            ("solver.t_end", "1000"),
            ("solver.diagnostics_stride", "200"),
        ],
        run: converge_subcritical,
    },
    Experiment {
        name: "supercritical-barenblatt",
        theorem: "convergence to the Barenblatt profile in the supercritical regime (rescaled frame)",
        about: "rescaled run from a dilation of mu_A; decay rate and boundedness",
        preset: &[
            ("params.m", "1.2"),
            ("init", "stationary-dilation:1.05"),
            ("grid.n", "600"),
            ("grid.radius", "6"),
            ("solver.t_end", "8"),
            ("solver.diagnostics_stride", "50"),
        ],
        run: supercritical_barenblatt,
    },
    Experiment {
        name: "mass-comparison-sandwich",
        theorem: "mass comparison principle for radial solutions",
        about: "evolves ordered dilation pairs and checks the order of the mass functions",
        preset: &[("init", "tent:3"), ("grid.n", "300"), ("grid.radius", "6"), ("solver.t_end", "2")],
        run: mass_comparison,
    },
    Experiment {
        name: "counterexample-monotonicity",
        theorem: "loss of radial monotonicity without a decreasing kernel Laplacian",
        about: "annular Laplacian and two-scale data; monotonicity violation over time",
        preset: &[
            ("kernel.kind", "custom"),
            ("kernel.h.shape", "annulus"),
            ("kernel.h.radius", "1"),
            ("kernel.h.width", "0.2"),
            ("init", "two-scale:0.05"),
            ("grid.n", "750"),
            ("grid.radius", "3"),
            ("solver.t_end", "0.002"),
        ],
        run: counterexample_monotonicity,
    },
    Experiment {
        name: "instant-regularization",
        theorem: "instantaneous L-infinity regularization of concentrated data",
        about: "sup-norm decay of a tall bump over its first decade",
        preset: &[("grid.n", "1500"), ("grid.radius", "6")],
        run: instant_regularization,
    },
    Experiment {
        name: "mollified-limit",
        theorem: "mollified solutions converge to the Newtonian solution",
        about: "sup distance between gaussian-mollified and Newtonian runs as the width shrinks",
        preset: &[("init", "tent:3"), ("grid.n", "600"), ("grid.radius", "6"), ("solver.t_end", "0.5")],
        run: mollified_limit,
    },
    Experiment {
        name: "rearrangement-3d",
        theorem: "rearranged Cartesian solutions are dominated by the symmetrized radial solution",
        about: "Cartesian run vs radial run from the rearranged data; order and L^p domination",
        preset: &[("cartesian.n", "24"), ("cartesian.h", "0.4"), ("solver.t_end", "1")],
        run: rearrangement_3d,
    },
    Experiment {
        name: "implicit-onestep",
        theorem: "L1 contraction and rearrangement of the implicit step",
        about: "random contraction pairs, first-order chaining, one-step rearrangement order",
        preset: &[
            ("kernel.kind", "mollified"),
            ("kernel.h.shape", "gaussian"),
            ("kernel.h.width", "0.3"),
            ("grid.n", "160"),
            ("grid.radius", "4"),
            ("solver.t_end", "0.2"),
        ],
        run: implicit_onestep,
    },
    Experiment {
        name: "envelope-ode",
        theorem: "scaling ODE of the envelopes and its basin of attraction",
        about: "rate of 1 - k(t) and the forced ODE from k(0) = delta / 2",
        preset: &[("solver.t_end", "20")],
        run: envelope_ode,
    },
];

pub fn find(name: &str) -> Result<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name).ok_or_else(|| CliError::UnknownExperiment {
        name: name.to_string(),
        available: REGISTRY.iter().map(|e| e.name).collect::<Vec<_>>().join(", "),
    })
}

impl Experiment {
    /// Schema defaults, the preset, then `text` (a config file) and `sets`.
    pub fn resolve(&self, text: Option<&str>, sets: &[String]) -> Result<Config> {
        let mut cfg = Config::default();
        for (k, v) in self.preset {
            cfg.set(k, v)?;
        }
        if let Some(text) = text {
            cfg.apply_text(text)?;
        }
        for s in sets {
            cfg.set_assignment(s)?;
        }
        cfg.set("experiment", self.name)?;
        Ok(cfg)
    }
}

/// Runs the experiment named in `cfg` into `out`. Numerical failures are
/// recorded in the summary rather than returned.
pub fn run_experiment(cfg: &Config, out: &Path) -> Result<Summary> {
    let exp = find(cfg.str("experiment"))?;
    let mut dir = RunDir::create(out)?;
    dir.write_config(cfg)?;
    let mut summary = Summary::new(exp.name, exp.theorem, params_json(cfg));
    if let Err(e) = (exp.run)(cfg, &mut dir, &mut summary) {
        if matches!(e, CliError::Io(_)) {
            return Err(e);
        }
        summary.errors.push(e.to_string());
    }
    summary.finish();
    dir.write_summary(&summary)?;
    Ok(summary)
}

fn params_json(cfg: &Config) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("m".into(), json!(cfg.f64("params.m")));
    m.insert("d".into(), json!(cfg.usize("params.d")));
    m.insert("mass".into(), json!(cfg.f64("params.mass")));
    m.insert("kernel".into(), json!(cfg.str("kernel.kind")));
    if cfg.str("kernel.kind") != "newtonian" {
        m.insert("kernel_shape".into(), json!(cfg.str("kernel.h.shape")));
        m.insert("kernel_width".into(), json!(cfg.f64("kernel.h.width")));
    }
    m.insert("seed".into(), json!(cfg.u64("seed")));
    m
}

// ------------------------------------------------------------------ helpers

fn solver_options(cfg: &Config, t_end: f64, radius: f64) -> SolverOptions {
    let mut o = SolverOptions::new(t_end, radius);
    o.cfl_diffusion = cfg.f64("solver.cfl_diffusion");
    o.cfl_advection = cfg.f64("solver.cfl_advection");
    o.diagnostics_stride = cfg.usize("solver.diagnostics_stride").max(1);
    o
}

fn diagnostics_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.diagnostics.iter().map(Diagnostics::csv_row).collect()
}

fn write_diagnostics(out: &RunDir, name: &str, traj: &Trajectory) -> Result<()> {
    out.series(name, &Diagnostics::CSV_HEADER, &diagnostics_rows(traj))
}

fn write_snapshots(out: &mut RunDir, prefix: &str, traj: &Trajectory) -> Result<()> {
    for (i, s) in traj.snapshots.iter().enumerate() {
        out.snapshot(&format!("{prefix}{i:04}"), s.t, &s.rho)?;
    }
    Ok(())
}

fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| t_end * i as f64 / n as f64).collect()
}

fn merged_times(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    a.extend_from_slice(b);
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

fn random_profile(rng: &mut ChaCha8Rng, grid: &RadialGrid, reach: f64) -> RadialProfile {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.0..reach), rng.gen_range(0.1..0.6), rng.gen_range(0.1..2.0)))
        .collect();
    RadialProfile::from_centers(grid.clone(), |r| {
        bumps.iter().map(|&(c, w, a)| a * (1.0 - ((r - c) / w).powi(2)).max(0.0)).sum()
    })
}

/// Round-off level of the explicit scheme relative to the current sup norm.
const MONOTONICITY_TOLERANCE: f64 = 1e-10;

// ------------------------------------------------------------------ runners

fn stationary_profile(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let mass = cfg.f64("params.mass");
    let st = stationary(&p, &k, mass, &g)?;
    out.snapshot("profile", 0.0, st.profile())?;
    s.metric("support_radius", st.support_radius());
    s.metric("center_density", st.center_density());
    s.metric("lagrange_constant", st.lagrange_constant());
    s.metric("iterations", st.iterations() as f64);
    if let Ok(r) = st.equation_residual(&k) {
        s.metric("equation_residual", r);
    }
    let mass_err = (st.profile().total_mass() - mass).abs() / mass;
    s.at_most("mass_rel_err", mass_err, StationaryOptions::new(g.clone()).mass_rel_tol);
    if matches!(k, Kernel::Newtonian) && p.m() == 2.0 && p.d() == 3 {
        // B sin(r/√2)/r on [0, √2 π], normalised by quadrature
        let radius = SQRT_2 * PI;
        let gl = GaussLegendre::new(40);
        let shape_mass = 4.0 * PI * gl.integrate(0.0, radius, |r| r * (r / SQRT_2).sin());
        let centre = mass / SQRT_2 / shape_mass;
        let tol = cfg.f64("threshold.stationary_rel");
        s.at_most("support_rel_err", (st.support_radius() - radius).abs() / radius, tol);
        s.at_most("center_rel_err", (st.center_density() - centre).abs() / centre, tol);
    }
    Ok(())
}

fn converge_subcritical(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let mass = cfg.f64("params.mass");
    let base = stationary(&p, &k, mass, &g)?;
    let rho0 = initial_profile(cfg.str("init"), &p, &k, mass, &g)?;
    let t_end = cfg.f64("solver.t_end");
    let sandwich = uniform_times(t_end, 20);
    let early = geometric_times(1e-4 * t_end, 1e-2 * t_end, 12);
    let mut o = solver_options(cfg, t_end, g.radius());
    o.snapshot_times = merged_times(merged_times(sandwich.clone(), &early), cfg.list("solver.snapshots"));
    o.target = Some(MassFunction::of(base.profile()));
    o.record_energy = false;
    let traj = evolve(SolverState::new(rho0.clone()), &k, &p, &o)?;
    write_diagnostics(out, "diagnostics", &traj)?;
    write_snapshots(out, "rho_", &traj)?;
    out.snapshot("stationary", t_end, base.profile())?;

    let consts = envelope_constants(&base, &k, &p)?;
    let (r1, r2) = consts.rate_bounds(&p);
    let band = cfg.f64("threshold.rate_band");
    let (lo, hi) = ((1.0 - band) * r1, (1.0 + band) * r2);
    s.metric("rate_lower", lo);
    s.metric("rate_upper", hi);
    for (name, series) in [
        ("mass", traj.diagnostics.iter().map(|d| (d.t, d.sup_mass_err)).collect::<Vec<_>>()),
        ("w2", traj.diagnostics.iter().map(|d| (d.t, d.w2_to_target)).collect()),
    ] {
        let rate = transient_fit(&series).map_or(f64::NAN, |f| f.rate);
        s.metric(&format!("{name}_rate"), rate);
        s.criterion(&format!("{name}_rate_in_band"), rate, hi, "in [rate_lower, rate_upper]", rate > 0.0 && rate >= lo && rate <= hi);
    }

    let k_sub = initial_scaling(&rho0, &base, EnvelopeKind::Subsolution)?;
    let k_sup = initial_scaling(&rho0, &base, EnvelopeKind::Supersolution)?;
    let sub = integrate_envelope(EnvelopeKind::Subsolution, EnvelopeFrame::Original, k_sub, &consts, &p, t_end)?
        .with_base(base.clone());
    let sup = integrate_envelope(EnvelopeKind::Supersolution, EnvelopeFrame::Original, k_sup, &consts, &p, t_end)?
        .with_base(base.clone());
    let tol = mass_scheme_tolerance(base.profile());
    let mut rows = Vec::new();
    let mut margin = f64::NEG_INFINITY;
    for &t in &sandwich {
        let m = MassFunction::of(&traj.snapshot_at(t).expect("sandwich snapshot").rho);
        let below = precedes(&envelope_mass(&sub, t, &g)?, &m, tol).margin;
        let above = precedes(&m, &envelope_mass(&sup, t, &g)?, tol).margin;
        margin = margin.max(below).max(above);
        rows.push(vec![t, sub.k_at(t)?, sup.k_at(t)?, below, above, tol]);
    }
    out.series("sandwich", &["t", "k_sub", "k_sup", "margin_below", "margin_above", "tol"], &rows)?;
    s.at_most("sandwich_margin", margin, tol);

    let fin = &traj.final_state.rho;
    let rel = fin.sup_distance(base.profile())? / base.profile().sup();
    s.at_most("final_sup_rel_err", rel, cfg.f64("threshold.final_rel"));

    let s0 = rho0.support_radius(1e-8);
    let bound = 1.25 * s0.max(base.support_radius());
    let max_support = traj.snapshots.iter().map(|x| x.rho.support_radius(1e-8)).fold(s0, f64::max);
    s.at_most("max_support_radius", max_support, bound);
    let f0 = free_boundary_radius(&rho0, p.m());
    let growth: Vec<(f64, f64)> = early
        .iter()
        .filter_map(|&t| traj.snapshot_at(t).map(|x| (t, free_boundary_radius(&x.rho, p.m()) - f0)))
        .filter(|&(_, g)| g > 0.0)
        .collect();
    let exponent = if growth.len() >= 3 { log_log_slope(&growth) } else { f64::NAN };
    s.metric("support_growth_exponent", exponent);
    Ok(())
}

fn supercritical_barenblatt(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let mass = cfg.f64("params.mass");
    let mu = fokker_planck_stationary(&p, mass, &g)?;
    let rho0 = initial_profile(cfg.str("init"), &p, &k, mass, &g)?;
    let sup0 = rho0.sup();
    let t_end = cfg.f64("solver.t_end");
    let mut o = solver_options(cfg, t_end, g.radius());
    o.snapshot_times = merged_times(uniform_times(t_end, 8), cfg.list("solver.snapshots"));
    o.target = Some(MassFunction::of(mu.profile()));
    o.record_energy = false;
    let traj = evolve_rescaled(SolverState::new(rho0), &k, &p, &o)?;
    write_diagnostics(out, "diagnostics", &traj)?;
    write_snapshots(out, "mu_", &traj)?;
    out.snapshot("barenblatt", t_end, mu.profile())?;
    let series: Vec<(f64, f64)> = traj.diagnostics.iter().map(|d| (d.t, d.sup_mass_err)).collect();
    let rate = transient_fit(&series).map_or(f64::NAN, |f| f.rate);
    let max_sup = traj.diagnostics.iter().map(|d| d.sup_norm).fold(0.0, f64::max);
    s.metric("initial_sup", sup0);
    s.metric("max_sup", max_sup);
    s.criterion("rate", rate, 0.0, ">", rate > 0.0);
    s.at_most("sup_growth", max_sup / sup0, cfg.f64("threshold.sup_growth"));
    s.at_most("blowups", traj.blowup.iter().count() as f64, 0.0);
    Ok(())
}

fn mass_comparison(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let base = initial_profile(cfg.str("init"), &p, &k, cfg.f64("params.mass"), &g)?;
    let dr = g.max_width();
    let t_end = cfg.f64("solver.t_end");
    let mut o = solver_options(cfg, t_end, g.radius());
    o.snapshot_times = uniform_times(t_end, 20);
    o.record_energy = false;
    let wide = evolve(SolverState::new(base.clone()), &k, &p, &o)?;
    write_diagnostics(out, "diagnostics", &wide)?;
    let c = cfg.f64("threshold.order_constant");
    let (mut violations, mut worst) = (0usize, f64::NEG_INFINITY);
    let mut rows = Vec::new();
    for factor in [1.1, 1.25, 1.5, 2.0, 3.0] {
        let tight = Dilation { inner: &base, k: factor }.sample(&g);
        let narrow = evolve(SolverState::new(tight), &k, &p, &o)?;
        let dt = wide.dt_max().max(narrow.dt_max());
        for (a, b) in wide.snapshots.iter().zip(&narrow.snapshots) {
            let tol = c * (dr + dt) * a.t;
            let check = precedes(&MassFunction::of(&a.rho), &MassFunction::of(&b.rho), tol);
            violations += usize::from(!check.holds);
            worst = worst.max(check.margin / tol);
            rows.push(vec![factor, a.t, check.margin, tol]);
        }
    }
    out.series("margins", &["factor", "t", "margin", "tol"], &rows)?;
    s.metric("checks", rows.len() as f64);
    s.metric("worst_margin_over_tol", worst);
    s.at_most("violations", violations as f64, 0.0);
    Ok(())
}

fn counterexample_monotonicity(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let rho0 = initial_profile(cfg.str("init"), &p, &k, cfg.f64("params.mass"), &g)?;
    let t_end = cfg.f64("solver.t_end");
    let mut o = solver_options(cfg, t_end, g.radius());
    o.snapshot_times = merged_times(uniform_times(t_end, 20), cfg.list("solver.snapshots"));
    o.record_energy = false;
    let traj = evolve(SolverState::new(rho0.clone()), &k, &p, &o)?;
    write_snapshots(out, "rho_", &traj)?;
    let factor = cfg.f64("threshold.monotonicity_factor");
    let mut rows = vec![vec![0.0, monotonicity_violation(&rho0), factor * MONOTONICITY_TOLERANCE * rho0.sup()]];
    for snap in &traj.snapshots {
        rows.push(vec![snap.t, monotonicity_violation(&snap.rho), factor * MONOTONICITY_TOLERANCE * snap.rho.sup()]);
    }
    out.series("monotonicity", &["t", "violation", "threshold"], &rows)?;
    let crossing = rows.iter().find(|r| r[1] > r[2]).map_or(f64::NAN, |r| r[0]);
    let peak = rows.iter().map(|r| r[1] / r[2]).fold(0.0, f64::max);
    s.metric("initial_violation", rows[0][1]);
    s.metric("peak_violation_over_threshold", peak);
    s.at_most("crossing_time", crossing, cfg.f64("threshold.monotonicity_time"));
    Ok(())
}

fn instant_regularization(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let mass = cfg.f64("params.mass");
    let base = stationary(&p, &k, mass, &g)?;
    let target = cfg.f64("regularization.height_ratio") * base.profile().sup();
    // radius of the smooth bump whose peak is `target`
    let peak = |r: f64| SmoothBump::new(p.d(), r, mass).map_or(0.0, |b| b.value(0.0));
    let (mut lo, mut hi) = (1e-3f64, g.radius() / 2.0);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if peak(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho0 = SmoothBump::new(p.d(), hi, mass)?.sample(&g);
    let sup0 = rho0.sup();
    // porous-medium time scale: a point mass has peak sup0 at t0
    let alpha = p.alpha();
    let b1 = barenblatt_shape(&p, mass, 1.0)?.density(0.0);
    let t0 = (b1 / sup0).powf(1.0 / alpha);
    let times = geometric_times(0.1 * t0, 100.0 * t0, 61);
    let mut o = solver_options(cfg, 100.0 * t0, g.radius());
    o.snapshot_times = times.clone();
    o.record_energy = false;
    o.diagnostics_stride = usize::MAX;
    let traj = evolve(SolverState::new(rho0), &k, &p, &o)?;
    let sups: Vec<(f64, f64)> = traj.snapshots.iter().map(|x| (x.t, x.rho.sup())).collect();
    out.series("sup_norm", &["t", "sup_norm"], &sups.iter().map(|&(t, v)| vec![t, v]).collect::<Vec<_>>())?;
    // the first decade starts once the peak has halved
    let onset = sups.iter().find(|x| x.1 <= 0.5 * sup0).map_or(f64::NAN, |x| x.0);
    let pts: Vec<(f64, f64)> = sups
        .iter()
        .copied()
        .filter(|x| x.0 >= onset * (1.0 - 1e-12) && x.0 <= 10.0 * onset * (1.0 + 1e-12))
        .collect();
    let slope = if pts.len() >= 3 { log_log_slope(&pts) } else { f64::NAN };
    s.metric("initial_sup_over_sup_rho_a", sup0 / base.profile().sup());
    s.metric("onset", onset);
    s.metric("alpha", alpha);
    s.at_most("log_log_slope", slope, -alpha + cfg.f64("threshold.slope_slack"));
    Ok(())
}

fn mollified_limit(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, g) = (params(cfg)?, grid(cfg)?);
    let rho0 = initial_profile(cfg.str("init"), &p, &Kernel::Newtonian, cfg.f64("params.mass"), &g)?;
    let t = cfg.f64("solver.t_end");
    let run = |k: &Kernel| -> Result<RadialProfile> {
        let mut o = solver_options(cfg, t, g.radius());
        o.record_energy = false;
        o.diagnostics_stride = usize::MAX;
        Ok(evolve(SolverState::new(rho0.clone()), k, &p, &o)?.final_state.rho)
    };
    let newton = run(&Kernel::Newtonian)?;
    out.snapshot("newtonian", t, &newton)?;
    let mut rows = Vec::new();
    for (i, &eps) in cfg.list("mollified.widths").iter().enumerate() {
        let rho = run(&Kernel::gaussian(eps, p.d())?)?;
        out.snapshot(&format!("mollified_{i:02}"), t, &rho)?;
        let gap = rho.sup_distance(&newton)?;
        s.metric(&format!("gap_width_{eps}"), gap);
        rows.push(vec![eps, gap]);
    }
    out.series("gaps", &["width", "sup_gap"], &rows)?;
    let increases = rows.windows(2).filter(|w| w[1][1] >= w[0][1]).count();
    s.at_most("non_decreasing_steps", increases as f64, 0.0);
    Ok(())
}

/// `max_t sup_r |M_{ρ*} - M_{ρ̄}| / t` for a centred ball, which is radial.
fn radial_discrepancy(n: usize, h: f64, k: &Kernel, p: &Params, t_end: f64) -> Result<f64> {
    let f0 = cartesian_field("ball:1.2", n, h, 1.0)?;
    let mut co = CartesianOptions::new(t_end);
    co.snapshot_times = uniform_times(t_end, 5);
    let opts = ComparisonOptions::new(co.clone());
    let cart = evolve_3d(f0.clone(), k, p, &co)?;
    let radial = symmetrized_radial_run(&f0, k, p, &opts)?;
    Ok(cart
        .snapshots
        .iter()
        .zip(&radial)
        .map(|((t, f), (_, r))| MassFunction::of(&rearrange_3d(f)).sup_distance(&MassFunction::of(r)) / t)
        .fold(0.0, f64::max))
}

fn rearrangement_3d(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k) = (params(cfg)?, kernel(cfg)?);
    let (n, h) = (cfg.usize("cartesian.n"), cfg.f64("cartesian.h"));
    let t_end = cfg.f64("solver.t_end");
    let coarse = radial_discrepancy(n / 2, 2.0 * h, &k, &p, t_end)?;
    let fine = radial_discrepancy(n, h, &k, &p, t_end)?;
    let order = (coarse / fine).log2();
    s.metric("radial_discrepancy_coarse", coarse);
    s.metric("radial_discrepancy_fine", fine);
    s.at_least("radial_cross_check_order", order, cfg.f64("threshold.min_order"));
    let constant = cfg.f64("threshold.cartesian_calibration") * fine / h;
    s.metric("tolerance_constant", constant);

    let f0 = cartesian_field(cfg.str("cartesian.init"), n, h, cfg.f64("params.mass"))?;
    out.field("field_initial", 0.0, &f0)?;
    let mut co = CartesianOptions::new(t_end);
    co.snapshot_times = uniform_times(t_end, 5);
    let mut opts = ComparisonOptions::new(co);
    opts.tolerance_constant = constant;
    let rep = symmetrized_comparison_run(&f0, &k, &p, &opts)?;
    let rows: Vec<Vec<f64>> = rep
        .snapshots
        .iter()
        .map(|x| vec![x.t, x.tolerance, x.order_margin, x.order_radius, x.lp_gaps[0], x.lp_gaps[1], x.lp_gaps[2]])
        .collect();
    out.series("comparison", &["t", "tolerance", "order_margin", "order_radius", "lp2_gap", "lp4_gap", "lpinf_gap"], &rows)?;
    let margin = rep.snapshots.iter().map(|x| x.order_margin / x.tolerance).fold(f64::NEG_INFINITY, f64::max);
    let lp = rep.snapshots.iter().flat_map(|x| x.lp_gaps).fold(f64::NEG_INFINITY, f64::max);
    s.metric("cartesian_mass_drift", rep.cartesian_mass_drift);
    s.at_most("order_margin_over_tolerance", margin, 1.0);
    s.at_most("max_lp_gap", lp, 0.0);
    Ok(())
}

fn implicit_onestep(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let (p, k, g) = (params(cfg)?, kernel(cfg)?, grid(cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.u64("seed"));
    let reach = 0.6 * g.radius();
    let mut worst = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for _ in 0..cfg.usize("implicit.pairs") {
        let g1 = random_profile(&mut rng, &g, reach);
        let g2 = random_profile(&mut rng, &g, reach);
        let f = random_profile(&mut rng, &g, reach);
        let phi = DriftPotential::Values(potential_value(&f, &k, &p)?);
        let h = rng.gen_range(1e-3..1e-1);
        let u1 = implicit_step(&g1, &phi, h, &p)?;
        let u2 = implicit_step(&g2, &phi, h, &p)?;
        let (after, before) = (u1.l1_distance(&u2)?, g1.l1_distance(&g2)?);
        worst = worst.max(after - before);
        rows.push(vec![h, before, after]);
    }
    out.series("contraction", &["h", "l1_before", "l1_after"], &rows)?;
    s.at_most("l1_expansion", worst, cfg.f64("threshold.contraction"));

    // chained steps against an explicit run with the same frozen drift
    let t_end = cfg.f64("solver.t_end");
    let g0 = initial_profile(&format!("tent:{}", 0.625 * g.radius()), &p, &k, 1.0, &g)?;
    let source = UniformBall::with_mass(p.d(), 0.5 * g.radius(), 1.0).sample(&g);
    let grad = drift_derivative(&source, &k, &p)?;
    let mut o = solver_options(cfg, t_end, g.radius());
    o.record_energy = false;
    o.cfl_diffusion = 0.05;
    o.cfl_advection = 0.05;
    let mut solver = RadialSolver::new(&p, &g, DriftSource::Frozen(grad.values.clone()), Frame::Original, o)?;
    let reference = solver.evolve(SolverState::new(g0.clone()))?.final_state.rho;
    let phi = DriftPotential::EdgeGradient(grad);
    let mut errors = Vec::new();
    for h in [1e-2, 5e-3, 2.5e-3] {
        let mut u = g0.clone();
        for _ in 0..(t_end / h).round() as usize {
            u = implicit_step(&u, &phi, h, &p)?;
        }
        errors.push(vec![h, u.l1_distance(&reference)?]);
    }
    out.series("chaining", &["h", "l1_error"], &errors)?;
    let order = errors.windows(2).map(|w| (w[0][1] / w[1][1]).log2()).fold(f64::INFINITY, f64::min);
    s.at_least("chaining_order", order, cfg.f64("threshold.min_order"));

    // one step from rearranged data dominates the rearranged step
    let mut failures = 0usize;
    let mut margin = f64::NEG_INFINITY;
    for _ in 0..cfg.usize("implicit.rearrangement_pairs") {
        let f = random_profile(&mut rng, &g, reach);
        let h_data = random_profile(&mut rng, &g, reach);
        let h = rng.gen_range(1e-2..2e-1);
        let (fs, gs) = (rearrange_radial(&f), rearrange_radial(&h_data));
        let (fb, gb) = (fs.sample(&g), gs.sample(&g));
        let quad = MassFunction::of(&fs).sup_distance(&MassFunction::of(&fb))
            + MassFunction::of(&gs).sup_distance(&MassFunction::of(&gb));
        let u = implicit_step(&h_data, &DriftPotential::Values(potential_value(&f, &k, &p)?), h, &p)?;
        let ubar = implicit_step(&gb, &DriftPotential::Values(potential_value(&fb, &k, &p)?), h, &p)?;
        let c = precedes(&MassFunction::of(&rearrange_radial(&u)), &MassFunction::of(&ubar), 1e-8 + quad);
        failures += usize::from(!c.holds);
        margin = margin.max(c.margin);
    }
    s.metric("rearrangement_worst_margin", margin);
    s.at_most("rearrangement_failures", failures as f64, 0.0);
    Ok(())
}

fn envelope_ode(cfg: &Config, out: &mut RunDir, s: &mut Summary) -> Result<()> {
    let p = params(cfg)?;
    let c = cfg.f64("envelope.c");
    let t_end = cfg.f64("solver.t_end");
    let ode = ScalingOde::original(c, &p);
    let traj = integrate_ode_envelope(&ode, cfg.f64("envelope.k0"), t_end, &OdeOptions::default())?;
    out.series("ode", &["t", "k", "rate_fit"], &traj.csv_rows())?;
    let expected = ode.linear_rate();
    let rate = traj.rate_fit.as_ref().map_or(f64::NAN, |f| f.rate);
    s.metric("rate", rate);
    s.metric("expected_rate", expected);
    s.at_most("rate_rel_err", (rate - expected).abs() / expected, cfg.f64("threshold.ode_rate_rel"));

    // forced ODE k' = k(1 - k) + k^{d+1} e^{-t} from half its basin threshold
    let forced = ScalingOde::technical(1.0, 1.0, 1.0, 1.0, p.d());
    let delta = forced.basin_threshold();
    let horizon = 40.0;
    let basin = integrate_ode_envelope(&forced, delta / 2.0, horizon, &OdeOptions::default())?;
    out.series("basin", &["t", "k", "rate_fit"], &basin.csv_rows())?;
    let scaled: Vec<(f64, f64)> = basin.samples.iter().map(|&(t, k)| (t, (k - 1.0).abs() * (t / 2.0).exp())).collect();
    let bound = scaled.iter().filter(|x| x.0 <= 10.0).map(|x| x.1).fold(0.0, f64::max);
    let later = scaled.iter().filter(|x| x.0 > 10.0).map(|x| x.1).fold(0.0, f64::max);
    let k_end = basin.samples.last().map_or(f64::NAN, |x| x.1);
    s.metric("basin_delta", delta);
    s.metric("basin_constant", bound);
    s.at_most("basin_final_gap", (k_end - 1.0).abs(), 1e-6);
    s.at_most("basin_scaled_tail", later, bound);
    Ok(())
}
