//! CSV snapshots. Floats are written with 17 significant digits so a
//! write/read cycle is lossless.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::mass::MassFunction;
use crate::profile::RadialProfile;

/// Formats `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `r,rho,M` with one row per cell; `M` is the mass at the cell's outer edge.
pub fn write_profile_csv<W: Write>(mut w: W, rho: &RadialProfile) -> Result<()> {
    writeln!(w, "r,rho,M")?;
    let mf = MassFunction::of(rho);
    for (i, v) in rho.values().iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(rho.grid().center(i)),
            fmt_f64(*v),
            fmt_f64(mf.at_edges()[i + 1])
        )?;
    }
    Ok(())
}

/// Reads a profile written by [`write_profile_csv`]. Cell edges are rebuilt
/// from the centers, which are cell midpoints.
pub fn read_profile_csv<R: BufRead>(r: R, dim: usize) -> Result<RadialProfile> {
    let rows = read_table(r, &["r", "rho", "M"])?;
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "profile has no rows".into(),
        });
    }
    let centers: Vec<f64> = rows.iter().map(|row| row[0]).collect();
    let values: Vec<f64> = rows.iter().map(|row| row[1]).collect();
    let grid = grid_from_centers(&centers, dim)?;
    RadialProfile::new(grid, values)
}

fn grid_from_centers(centers: &[f64], dim: usize) -> Result<RadialGrid> {
    let n = centers.len();
    let dr = 2.0 * centers[0];
    let uniform = centers
        .iter()
        .enumerate()
        .all(|(i, &c)| (c - (i as f64 + 0.5) * dr).abs() <= 1e-9 * dr * (i as f64 + 1.0));
    if uniform {
        return RadialGrid::uniform(dr, n, dim);
    }
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    for (i, &c) in centers.iter().enumerate() {
        edges.push(2.0 * c - edges[i]);
    }
    RadialGrid::from_edges(edges, dim)
}

/// Reads a numeric CSV whose header must equal `columns`.
pub fn read_table<R: BufRead>(r: R, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    };
    let got: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if got != columns {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`, found `{}`", columns.join(","), header.trim()),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if row.len() != columns.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {} fields, found {}", columns.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes a numeric table with the given header.
pub fn write_table<W: Write>(mut w: W, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
