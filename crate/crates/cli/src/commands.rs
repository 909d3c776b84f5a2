//! Command-line surface. Each subcommand returns the process exit code.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use aggdiff::analysis::{lp_norm, monotonicity_violation, transient_fit, wasserstein_p};
use aggdiff::cartesian::{evolve_3d, CartesianOptions};
use aggdiff::envelopes::{envelope_constants, integrate_envelope, EnvelopeFrame, EnvelopeKind};
use aggdiff::io::{read_table, write_profile_csv, write_table};
use aggdiff::solver::{evolve, evolve_rescaled, Diagnostics, SolverOptions, SolverState};
use aggdiff::stationary::fokker_planck_stationary;
use aggdiff::{MassFunction, Regime};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::error::{spec_error, CliError, Result};
use crate::experiments::{find, run_experiment, REGISTRY};
use crate::output::{read_snapshot_times, RunDir};
use crate::spec::{cartesian_field, grid, initial_profile, kernel, params, read_profile_file, stationary};
use crate::summary::validate;

#[derive(Parser, Debug)]
#[command(name = "aggdiff", version, about = "Radial and Cartesian experiments for diffusion-aggregation equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Print the experiment registry.
    List,
    /// Run registered experiments; exits 0 iff every criterion passes.
    Run(RunArgs),
    /// Solve for the radial stationary state and write `r,rho,M`.
    Stationary(StationaryArgs),
    /// Evolve radial data in the original frame.
    Evolve(EvolveArgs),
    /// Evolve radial data in the rescaled (self-similar) frame.
    Rescaled(EvolveArgs),
    /// Integrate a scaling ODE envelope and write `t,k,rate_fit`.
    Envelope(EnvelopeArgs),
    /// Compute a metric over the snapshots or diagnostics of a run directory.
    Analyze(AnalyzeArgs),
    /// Evolve three-dimensional Cartesian data.
    Cartesian(CartesianArgs),
    /// Check a summary.json against the published schema.
    Validate { file: PathBuf },
    /// Print the summary JSON schema.
    Schema,
}

/// Model options shared by the solver commands; each maps to a config key.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Config file of `key = value` lines, applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` assignment; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub mass: Option<f64>,
    /// newtonian | mollified | custom
    #[arg(long)]
    pub kernel: Option<String>,
    /// gaussian | ball | table | annulus
    #[arg(long)]
    pub h_shape: Option<String>,
    #[arg(long)]
    pub h_width: Option<f64>,
    #[arg(long)]
    pub h_radius: Option<f64>,
    /// CSV `r,value` for a tabulated Laplacian.
    #[arg(long)]
    pub kernel_table: Option<String>,
}

impl ModelArgs {
    fn config(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        let flags: [(&str, Option<String>); 9] = [
            ("params.m", self.m.map(|x| x.to_string())),
            ("params.d", self.d.map(|x| x.to_string())),
            ("params.mass", self.mass.map(|x| x.to_string())),
            ("kernel.kind", self.kernel.clone()),
            ("kernel.h.shape", self.h_shape.clone()),
            ("kernel.h.width", self.h_width.map(|x| x.to_string())),
            ("kernel.h.radius", self.h_radius.map(|x| x.to_string())),
            ("kernel.table.path", self.kernel_table.clone()),
            ("kernel.table.path", None),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.kernel_table.is_some() && self.h_shape.is_none() {
            cfg.set("kernel.h.shape", "table")?;
        }
        for s in &self.set {
            cfg.set_assignment(s)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment names; see `aggdiff list`.
    pub experiments: Vec<String>,
    /// Run every registered experiment.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; one subdirectory per experiment when several run.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Experiments run in parallel child processes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Print the resolved config instead of running.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct StationaryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Profile CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial-data spec, e.g. `uniform-ball:2` or `file:rho.csv`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Cell width; overrides `--n`.
    #[arg(long)]
    pub dr: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub domain_radius: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Sub,
    Super,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FrameArg {
    Original,
    Rescaled,
}

#[derive(Args, Debug)]
pub struct EnvelopeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "original")]
    pub frame: FrameArg,
    #[arg(long)]
    pub k0: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Metric {
    W2,
    Lp,
    Monotonicity,
    Rate,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Run directory written by `evolve`, `rescaled` or `run`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Exponent for `lp`; `inf` for the maximum.
    #[arg(long, default_value = "2")]
    pub p: String,
    /// Reference profile for `w2`; the last snapshot when absent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Diagnostics column fitted by `rate`.
    #[arg(long, default_value = "sup_mass_err")]
    pub column: String,
}

#[derive(Args, Debug)]
pub struct CartesianArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    /// `two-balls:a,r`, `off-center-ball:x,y,z,r` or `ball:r`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub snapshots: Option<String>,
    #[arg(long, default_value = "cartesian")]
    pub out: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Cmd::List => list(),
        Cmd::Run(a) => run(a),
        Cmd::Stationary(a) => stationary_cmd(a),
        Cmd::Evolve(a) => evolve_cmd(a, false),
        Cmd::Rescaled(a) => evolve_cmd(a, true),
        Cmd::Envelope(a) => envelope_cmd(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Cartesian(a) => cartesian_cmd(a),
        Cmd::Validate { file } => validate_cmd(&file),
        Cmd::Schema => {
            print!("{}", crate::summary::SCHEMA);
            Ok(0)
        }
    }
}

fn list() -> Result<i32> {
    let width = REGISTRY.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in REGISTRY {
        println!("{:width$}  [{}] {}", e.name, e.theorem, e.about);
    }
    Ok(0)
}

fn run(a: RunArgs) -> Result<i32> {
    let names: Vec<String> = if a.all {
        REGISTRY.iter().map(|e| e.name.to_string()).collect()
    } else {
        a.experiments.clone()
    };
    if names.is_empty() {
        return Err(CliError::UnknownExperiment {
            name: String::new(),
            available: REGISTRY.iter().map(|e| e.name).collect::<Vec<_>>().join(", "),
        });
    }
    let text = a.config.as_ref().map(fs::read_to_string).transpose()?;
    // resolve everything first so config errors surface before any run
    let configs = names
        .iter()
        .map(|n| find(n)?.resolve(text.as_deref(), &a.set))
        .collect::<Result<Vec<_>>>()?;
    if a.print_config {
        for c in &configs {
            print!("{}", c.render());
        }
        return Ok(0);
    }
    let single = configs.len() == 1;
    let dir_of = |name: &str| if single { a.out.clone() } else { a.out.join(name) };
    if a.jobs > 1 && !single {
        return run_children(&names, &a);
    }
    let mut all_pass = true;
    for cfg in &configs {
        let name = cfg.str("experiment").to_string();
        let s = run_experiment(cfg, &dir_of(&name))?;
        report(&name, s.pass, &s.errors);
        all_pass &= s.pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn report(name: &str, pass: bool, errors: &[String]) {
    println!("{name}: {}", if pass { "PASS" } else { "FAIL" });
    for e in errors {
        println!("  error: {e}");
    }
}

/// Fans the experiments out to `jobs` child processes of this executable.
fn run_children(names: &[String], a: &RunArgs) -> Result<i32> {
    let exe = std::env::current_exe()?;
    let queue = Mutex::new(names.iter().collect::<Vec<_>>());
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.min(names.len()) {
            scope.spawn(|| loop {
                let Some(name) = queue.lock().unwrap().pop() else { break };
                let mut cmd = Command::new(&exe);
                cmd.arg("run").arg(name).arg("--out").arg(a.out.join(name));
                if let Some(c) = &a.config {
                    cmd.arg("--config").arg(c);
                }
                for s in &a.set {
                    cmd.arg("--set").arg(s);
                }
                let status = cmd.output();
                results.lock().unwrap().push((name.clone(), status));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by(|x, y| x.0.cmp(&y.0));
    let mut all_pass = true;
    for (name, out) in results {
        let out = out?;
        io::stdout().write_all(&out.stdout)?;
        io::stderr().write_all(&out.stderr)?;
        all_pass &= out.status.success();
        if !out.status.success() && out.stdout.is_empty() {
            println!("{name}: FAIL (exit {:?})", out.status.code());
        }
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn stationary_cmd(a: StationaryArgs) -> Result<i32> {
    let mut cfg = a.model.config()?;
    if let Some(n) = a.n {
        cfg.set("grid.n", &n.to_string())?;
    }
    if let Some(r) = a.radius {
        cfg.set("grid.radius", &r.to_string())?;
    }
    let (p, k, g) = (params(&cfg)?, kernel(&cfg)?, grid(&cfg)?);
    let s = stationary(&p, &k, cfg.f64("params.mass"), &g)?;
    match a.out {
        Some(path) => {
            write_profile_csv(BufWriter::new(File::create(&path)?), s.profile())?;
            println!(
                "support_radius = {}\ncenter_density = {}\nlagrange_constant = {}",
                s.support_radius(),
                s.center_density(),
                s.lagrange_constant()
            );
        }
        None => write_profile_csv(io::stdout().lock(), s.profile())?,
    }
    Ok(0)
}

fn parse_times(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| spec_error(text, format!("`{s}` is not a time"))))
        .collect()
}

fn evolve_cmd(a: EvolveArgs, rescaled: bool) -> Result<i32> {
    let mut cfg = a.model.config()?;
    if let Some(r) = a.domain_radius {
        cfg.set("grid.radius", &r.to_string())?;
    }
    if let Some(n) = a.n {
        cfg.set("grid.n", &n.to_string())?;
    }
    if let Some(dr) = a.dr {
        let n = (cfg.f64("grid.radius") / dr).round().max(1.0) as usize;
        cfg.set("grid.n", &n.to_string())?;
    }
    if let Some(i) = &a.init {
        cfg.set("init", i)?;
    }
    if let Some(t) = a.t_end {
        cfg.set("solver.t_end", &t.to_string())?;
    }
    if let Some(s) = &a.snapshots {
        cfg.set("solver.snapshots", s)?;
    }
    let (p, k, g) = (params(&cfg)?, kernel(&cfg)?, grid(&cfg)?);
    let mass = cfg.f64("params.mass");
    let rho0 = initial_profile(cfg.str("init"), &p, &k, mass, &g)?;
    let g = rho0.grid().clone();
    let mut o = SolverOptions::new(cfg.f64("solver.t_end"), g.radius());
    o.cfl_diffusion = cfg.f64("solver.cfl_diffusion");
    o.cfl_advection = cfg.f64("solver.cfl_advection");
    o.snapshot_times = cfg.list("solver.snapshots").to_vec();
    o.diagnostics_stride = cfg.usize("solver.diagnostics_stride").max(1);
    // distances to the stationary state when one exists in this frame
    let total = rho0.total_mass();
    o.target = if rescaled {
        fokker_planck_stationary(&p, total, &g).ok()
    } else if p.regime() != Regime::Supercritical {
        stationary(&p, &k, total, &g).ok()
    } else {
        None
    }
    .map(|s| MassFunction::of(s.profile()));
    let state = SolverState::new(rho0);
    let traj = if rescaled { evolve_rescaled(state, &k, &p, &o)? } else { evolve(state, &k, &p, &o)? };
    let mut dir = RunDir::create(&a.out)?;
    dir.write_config(&cfg)?;
    let rows: Vec<Vec<f64>> = traj.diagnostics.iter().map(Diagnostics::csv_row).collect();
    dir.series("diagnostics", &Diagnostics::CSV_HEADER, &rows)?;
    for (i, s) in traj.snapshots.iter().enumerate() {
        dir.snapshot(&format!("rho_{i:04}"), s.t, &s.rho)?;
    }
    if traj.snapshots.last().is_none_or(|s| s.t < traj.final_state.t) {
        dir.snapshot("final", traj.final_state.t, &traj.final_state.rho)?;
    }
    let last = traj.diagnostics.last();
    println!(
        "t = {}, steps = {}, mass = {}, sup = {}",
        traj.final_state.t,
        traj.final_state.step_count,
        last.map_or(f64::NAN, |d| d.mass),
        last.map_or(f64::NAN, |d| d.sup_norm)
    );
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(b) = &traj.blowup {
        println!("blow-up at t = {} (sup {})", b.t, b.sup);
        return Ok(1);
    }
    Ok(0)
}

fn envelope_cmd(a: EnvelopeArgs) -> Result<i32> {
    let mut cfg = a.model.config()?;
    if let Some(n) = a.n {
        cfg.set("grid.n", &n.to_string())?;
    }
    if let Some(r) = a.radius {
        cfg.set("grid.radius", &r.to_string())?;
    }
    let (p, k, g) = (params(&cfg)?, kernel(&cfg)?, grid(&cfg)?);
    let mass = cfg.f64("params.mass");
    let (frame, base) = match a.frame {
        FrameArg::Original => (EnvelopeFrame::Original, stationary(&p, &k, mass, &g)?),
        FrameArg::Rescaled => (EnvelopeFrame::Rescaled, fokker_planck_stationary(&p, mass, &g)?),
    };
    let kind = match a.kind {
        KindArg::Sub => EnvelopeKind::Subsolution,
        KindArg::Super => EnvelopeKind::Supersolution,
    };
    let consts = envelope_constants(&base, &k, &p)?;
    let traj = integrate_envelope(kind, frame, a.k0, &consts, &p, a.t_end)?;
    let rows = traj.csv_rows();
    let cols = ["t", "k", "rate_fit"];
    match &a.out {
        Some(path) => write_table(BufWriter::new(File::create(path)?), &cols, &rows)?,
        None => write_table(io::stdout().lock(), &cols, &rows)?,
    }
    if let Some(t) = traj.divergence {
        eprintln!("k escaped to infinity at t = {t}");
    }
    Ok(0)
}

fn run_dimension(run: &Path) -> Result<usize> {
    match fs::read_to_string(run.join("config.resolved")) {
        Ok(text) => Ok(Config::parse(&text)?.usize("params.d")),
        Err(_) => Ok(3),
    }
}

fn analyze(a: AnalyzeArgs) -> Result<i32> {
    let out = &mut io::stdout().lock();
    if let Metric::Rate = a.metric {
        let file = File::open(a.input.join("series").join("diagnostics.csv"))?;
        let rows = read_table(BufReader::new(file), &Diagnostics::CSV_HEADER)?;
        let col = Diagnostics::CSV_HEADER
            .iter()
            .position(|c| *c == a.column)
            .ok_or_else(|| spec_error(&a.column, format!("not one of {}", Diagnostics::CSV_HEADER.join(","))))?;
        let series: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[col])).filter(|x| x.1.is_finite()).collect();
        let fit = transient_fit(&series)?;
        writeln!(out, "column,rate,intercept,window_start,window_end,samples")?;
        writeln!(out, "{},{},{},{},{},{}", a.column, fit.rate, fit.intercept, fit.window.0, fit.window.1, fit.samples)?;
        return Ok(0);
    }
    let d = run_dimension(&a.input)?;
    let snaps = read_snapshot_times(&a.input)?;
    let profiles = snaps
        .iter()
        .map(|(n, t)| Ok((*t, read_profile_file(&a.input.join("snapshots").join(format!("{n}.csv")), d)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = match a.metric {
        Metric::Monotonicity => profiles.iter().map(|(t, r)| vec![*t, monotonicity_violation(r)]).collect(),
        Metric::Lp => {
            let p = if a.p == "inf" { f64::INFINITY } else { a.p.parse().map_err(|_| spec_error(&a.p, "not an exponent"))? };
            profiles.iter().map(|(t, r)| vec![*t, lp_norm(r, p)]).collect()
        }
        Metric::W2 => {
            let reference = match &a.reference {
                Some(path) => read_profile_file(path, d)?,
                None => profiles.last().map(|x| x.1.clone()).ok_or_else(|| spec_error("snapshots", "run has no snapshots"))?,
            };
            let mref = MassFunction::of(&reference);
            profiles
                .iter()
                .map(|(t, r)| Ok(vec![*t, wasserstein_p(&MassFunction::of(r), &mref, 2.0)?]))
                .collect::<Result<_>>()?
        }
        Metric::Rate => unreachable!(),
    };
    let name = match a.metric {
        Metric::Monotonicity => "violation",
        Metric::Lp => "lp_norm",
        _ => "w2",
    };
    write_table(out, &["t", name], &rows)?;
    Ok(0)
}

fn cartesian_cmd(a: CartesianArgs) -> Result<i32> {
    let mut cfg = a.model.config()?;
    if let Some(n) = a.n {
        cfg.set("cartesian.n", &n.to_string())?;
    }
    if let Some(h) = a.h {
        cfg.set("cartesian.h", &h.to_string())?;
    }
    if let Some(i) = &a.init {
        cfg.set("cartesian.init", i)?;
    }
    if let Some(t) = a.t_end {
        cfg.set("solver.t_end", &t.to_string())?;
    }
    let (p, k) = (params(&cfg)?, kernel(&cfg)?);
    let f0 = cartesian_field(cfg.str("cartesian.init"), cfg.usize("cartesian.n"), cfg.f64("cartesian.h"), cfg.f64("params.mass"))?;
    let mut o = CartesianOptions::new(cfg.f64("solver.t_end"));
    o.cfl_diffusion = cfg.f64("solver.cfl_diffusion");
    o.cfl_advection = cfg.f64("solver.cfl_advection");
    o.snapshot_times = match &a.snapshots {
        Some(s) => parse_times(s)?,
        None => cfg.list("solver.snapshots").to_vec(),
    };
    let mut dir = RunDir::create(&a.out)?;
    dir.write_config(&cfg)?;
    dir.field("field_initial", 0.0, &f0)?;
    let traj = evolve_3d(f0, &k, &p, &o)?;
    for (i, (t, f)) in traj.snapshots.iter().enumerate() {
        dir.field(&format!("field_{i:04}"), *t, f)?;
    }
    dir.field("field_final", traj.t, &traj.final_field)?;
    let rows: Vec<Vec<f64>> = traj.series.iter().map(|&(t, m, s)| vec![t, m, s]).collect();
    dir.series("cartesian", &["t", "mass", "sup_norm"], &rows)?;
    println!("t = {}, steps = {}, mass = {}, sup = {}", traj.t, traj.steps, traj.final_field.total_mass(), traj.final_field.sup());
    Ok(0)
}

fn validate_cmd(file: &Path) -> Result<i32> {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(file)?)?;
    match validate(&doc) {
        Ok(()) => {
            println!("{}: valid", file.display());
            Ok(0)
        }
        Err(errors) => {
            for e in errors {
                println!("{}: {e}", file.display());
            }
            Ok(1)
        }
    }
}
