//! Kernels and initial data built from config values and spec strings.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use aggdiff::cartesian::CartesianField;
use aggdiff::initial::{SmoothBump, TwoScaleDatum, UniformShell};
use aggdiff::io::{read_profile_csv, read_table};
use aggdiff::potentials::laplacian_from_table;
use aggdiff::stationary::{barenblatt, fokker_planck_stationary, solve_stationary, StationaryOptions, StationaryProfile};
use aggdiff::{Dilation, Kernel, Params, RadialGrid, RadialProfile, RadialShape, Regime, UniformBall};

use crate::config::Config;
use crate::error::{spec_error, Result};

/// Cells used to tabulate a kernel read from a file.
const TABLE_CELLS: usize = 400;

pub fn params(cfg: &Config) -> Result<Params> {
    Ok(Params::new(cfg.f64("params.m"), cfg.usize("params.d"))?)
}

pub fn grid(cfg: &Config) -> Result<RadialGrid> {
    Ok(RadialGrid::with_radius(cfg.f64("grid.radius"), cfg.usize("grid.n"), cfg.usize("params.d"))?)
}

pub fn kernel(cfg: &Config) -> Result<Kernel> {
    let d = cfg.usize("params.d");
    let width = cfg.f64("kernel.h.width");
    let shape = cfg.str("kernel.h.shape");
    let kind = cfg.str("kernel.kind");
    if kind == "newtonian" {
        return Ok(Kernel::Newtonian);
    }
    let h = match shape {
        "gaussian" => Kernel::gaussian(width, d)?,
        "ball" => Kernel::ball(width, d)?,
        "annulus" => Kernel::annular(cfg.f64("kernel.h.radius"), width, d)?,
        "table" => {
            let path = cfg.str("kernel.table.path");
            let file = File::open(path).map_err(|e| spec_error(path, e.to_string()))?;
            let rows = read_table(BufReader::new(file), &["r", "value"])?;
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let lap = laplacian_from_table(&pairs, TABLE_CELLS, d)?;
            return Ok(if kind == "custom" { Kernel::custom(lap) } else { Kernel::mollified(lap)? });
        }
        other => return Err(spec_error(other, "unknown kernel shape")),
    };
    match (kind, h) {
        ("custom", k) => {
            let lap = k.laplacian().cloned().ok_or_else(|| spec_error(shape, "shape has no Laplacian"))?;
            Ok(Kernel::custom(lap))
        }
        ("mollified", Kernel::CustomLaplacian(_)) => {
            Err(spec_error(shape, "an annular Laplacian is not radially decreasing; use kernel.kind = custom"))
        }
        (_, k) => Ok(k),
    }
}

/// `name:a,b,...` split into the name and its numeric arguments.
fn split_spec(spec: &str) -> Result<(&str, Vec<f64>)> {
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    if name == "file" {
        return Ok((name, Vec::new()));
    }
    let nums = args
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| spec_error(spec, format!("`{s}` is not a number"))))
        .collect::<Result<Vec<f64>>>()?;
    Ok((name, nums))
}

fn arity(spec: &str, args: &[f64], n: usize) -> Result<()> {
    if args.len() == n {
        Ok(())
    } else {
        Err(spec_error(spec, format!("expected {n} argument(s), found {}", args.len())))
    }
}

/// The stationary profile of the experiment: `ρ_A` for `m >= 2 - 2/d`, the
/// rescaled-frame state `μ_A` otherwise.
pub fn stationary(p: &Params, k: &Kernel, mass: f64, grid: &RadialGrid) -> Result<StationaryProfile> {
    Ok(match p.regime() {
        Regime::Supercritical => fokker_planck_stationary(p, mass, grid)?,
        _ => solve_stationary(p, k, mass, &StationaryOptions::new(grid.clone()))?,
    })
}

pub const INIT_SPECS: &[&str] = &[
    "uniform-ball:R",
    "stationary-dilation:k",
    "barenblatt:t0",
    "tall-bump:eps",
    "annulus:r0,w",
    "tent:R",
    "two-scale:eps",
    "file:<csv>",
];

/// Radial initial data of total mass `mass` on `grid`. `file:` data keeps
/// its own grid.
pub fn initial_profile(spec: &str, p: &Params, k: &Kernel, mass: f64, grid: &RadialGrid) -> Result<RadialProfile> {
    let (name, a) = split_spec(spec)?;
    let d = p.d();
    let positive = |x: f64| if x > 0.0 { Ok(x) } else { Err(spec_error(spec, "arguments must be positive")) };
    Ok(match name {
        "uniform-ball" => {
            arity(spec, &a, 1)?;
            UniformBall::with_mass(d, positive(a[0])?, mass).sample(grid)
        }
        "stationary-dilation" => {
            arity(spec, &a, 1)?;
            let base = stationary(p, k, mass, grid)?;
            Dilation { inner: base.profile(), k: positive(a[0])? }.sample(grid)
        }
        "barenblatt" => {
            arity(spec, &a, 1)?;
            barenblatt(p, mass, positive(a[0])?, grid)?
        }
        "tall-bump" => {
            arity(spec, &a, 1)?;
            SmoothBump::new(d, positive(a[0])?, mass)?.sample(grid)
        }
        "annulus" => {
            arity(spec, &a, 2)?;
            UniformShell::with_mass(d, a[0], a[0] + positive(a[1])?, mass)?.sample(grid)
        }
        "tent" => {
            arity(spec, &a, 1)?;
            let r = positive(a[0])?;
            let t = RadialProfile::from_centers(grid.clone(), |x| (1.0 - x / r).max(0.0));
            let m = t.total_mass();
            if m == 0.0 {
                return Err(spec_error(spec, "tent is narrower than one cell"));
            }
            t.scaled(mass / m)
        }
        "two-scale" => {
            arity(spec, &a, 1)?;
            let datum = TwoScaleDatum { eps: positive(a[0])?, ..TwoScaleDatum::default() };
            datum.sample(p, grid)?
        }
        "file" => {
            let path = spec.split_once(':').map(|x| x.1).unwrap_or("");
            read_profile_file(Path::new(path), d)?
        }
        _ => return Err(spec_error(spec, format!("unknown initial data; expected one of {}", INIT_SPECS.join(", ")))),
    })
}

pub fn read_profile_file(path: &Path, d: usize) -> Result<RadialProfile> {
    let file = File::open(path).map_err(|e| spec_error(&path.display().to_string(), e.to_string()))?;
    Ok(read_profile_csv(BufReader::new(file), d)?)
}

pub const CARTESIAN_SPECS: &[&str] = &["two-balls:a,r", "off-center-ball:x,y,z,r", "ball:r"];

/// Uniform balls of total mass `mass` on an `n³` box of spacing `h`:
/// `two-balls:a,r` centres them at `(±a, 0, 0)`.
pub fn cartesian_field(spec: &str, n: usize, h: f64, mass: f64) -> Result<CartesianField> {
    let (name, a) = split_spec(spec)?;
    let (centres, radius) = match name {
        "two-balls" => {
            arity(spec, &a, 2)?;
            (vec![[-a[0], 0.0, 0.0], [a[0], 0.0, 0.0]], a[1])
        }
        "off-center-ball" => {
            arity(spec, &a, 4)?;
            (vec![[a[0], a[1], a[2]]], a[3])
        }
        "ball" => {
            arity(spec, &a, 1)?;
            (vec![[0.0; 3]], a[0])
        }
        _ => return Err(spec_error(spec, format!("expected one of {}", CARTESIAN_SPECS.join(", ")))),
    };
    if radius.is_nan() || radius <= 0.0 {
        return Err(spec_error(spec, "radius must be positive"));
    }
    let height = mass / (centres.len() as f64 * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3));
    let f = CartesianField::sample(n, h, 4, |x| {
        centres
            .iter()
            .filter(|c| (0..3).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>() <= radius * radius)
            .count() as f64
            * height
    })?;
    // cell sampling misses part of the ball; restore the requested mass
    let scale = mass / f.total_mass();
    Ok(CartesianField::new(n, h, f.values().iter().map(|v| v * scale).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pairs: &[(&str, &str)]) -> Config {
        let mut c = Config::default();
        for (k, v) in pairs {
            c.set(k, v).unwrap();
        }
        c
    }

    #[test]
    fn every_radial_spec_has_the_requested_mass() {
        let c = cfg(&[("grid.n", "800"), ("grid.radius", "8")]);
        let (p, g) = (params(&c).unwrap(), grid(&c).unwrap());
        for spec in ["uniform-ball:2", "stationary-dilation:1.5", "barenblatt:0.5", "tall-bump:0.3", "annulus:1,0.5", "tent:3"] {
            let rho = initial_profile(spec, &p, &Kernel::Newtonian, 2.0, &g).unwrap();
            assert!((rho.total_mass() - 2.0).abs() < 1e-6, "{spec}: {}", rho.total_mass());
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let c = Config::default();
        let (p, g) = (params(&c).unwrap(), grid(&c).unwrap());
        for spec in ["uniform-ball", "uniform-ball:x", "annulus:1", "cube:1", "tall-bump:-1"] {
            assert!(initial_profile(spec, &p, &Kernel::Newtonian, 1.0, &g).is_err(), "{spec}");
        }
        assert!(cartesian_field("two-balls:1", 8, 0.5, 1.0).is_err());
    }

    #[test]
    fn kernels_from_config() {
        assert!(matches!(kernel(&Config::default()).unwrap(), Kernel::Newtonian));
        let k = kernel(&cfg(&[("kernel.kind", "mollified"), ("kernel.h.shape", "ball")])).unwrap();
        assert!(matches!(k, Kernel::Mollified(_)));
        let k = kernel(&cfg(&[("kernel.kind", "custom"), ("kernel.h.shape", "annulus"), ("kernel.h.width", "0.2")])).unwrap();
        assert!(matches!(k, Kernel::CustomLaplacian(_)));
        assert!(kernel(&cfg(&[("kernel.kind", "mollified"), ("kernel.h.shape", "annulus")])).is_err());
    }

    #[test]
    fn cartesian_balls_have_the_requested_mass() {
        let f = cartesian_field("two-balls:1.2,1", 24, 0.25, 1.0).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 0.05);
    }
}
