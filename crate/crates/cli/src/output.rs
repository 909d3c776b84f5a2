//! The `--out` directory: `config.resolved`, `summary.json`, `series/*.csv`
//! and `snapshots/*.csv` (profiles plus `snapshots/times.csv`).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use aggdiff::cartesian::CartesianField;
use aggdiff::io::{write_profile_csv, write_table};
use aggdiff::RadialProfile;

use crate::config::Config;
use crate::error::Result;
use crate::summary::Summary;

pub struct RunDir {
    root: PathBuf,
    snapshot_times: Vec<(String, f64)>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("series"))?;
        fs::create_dir_all(root.join("snapshots"))?;
        Ok(Self { root: root.to_path_buf(), snapshot_times: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_config(&self, cfg: &Config) -> Result<()> {
        fs::write(self.root.join("config.resolved"), cfg.render())?;
        Ok(())
    }

    pub fn series(&self, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let f = File::create(self.root.join("series").join(format!("{name}.csv")))?;
        write_table(BufWriter::new(f), columns, rows)?;
        Ok(())
    }

    /// Writes `snapshots/<name>.csv` and records `t` in `snapshots/times.csv`.
    pub fn snapshot(&mut self, name: &str, t: f64, rho: &RadialProfile) -> Result<()> {
        let f = File::create(self.root.join("snapshots").join(format!("{name}.csv")))?;
        write_profile_csv(BufWriter::new(f), rho)?;
        self.snapshot_times.push((name.to_string(), t));
        self.write_times()
    }

    /// Flat `i,j,k,value` CSV with a JSON sidecar holding the grid metadata.
    pub fn field(&mut self, name: &str, t: f64, f: &CartesianField) -> Result<()> {
        let dir = self.root.join("snapshots");
        f.write_csv(BufWriter::new(File::create(dir.join(format!("{name}.csv")))?))?;
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&f.metadata(t))?)?;
        Ok(())
    }

    fn write_times(&self) -> Result<()> {
        let mut text = String::from("name,t\n");
        for (n, t) in &self.snapshot_times {
            text.push_str(&format!("{n},{}\n", aggdiff::io::fmt_f64(*t)));
        }
        fs::write(self.root.join("snapshots").join("times.csv"), text)?;
        Ok(())
    }

    pub fn write_summary(&self, s: &Summary) -> Result<()> {
        fs::write(self.root.join("summary.json"), serde_json::to_string_pretty(s)? + "\n")?;
        Ok(())
    }
}

/// `(name, t)` pairs from `snapshots/times.csv`, in write order.
pub fn read_snapshot_times(run: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(run.join("snapshots").join("times.csv"))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (n, t) = line.split_once(',').ok_or_else(|| parse_error(i + 1, "expected `name,t`"))?;
        let t = t.trim().parse::<f64>().map_err(|e| parse_error(i + 1, &e.to_string()))?;
        out.push((n.to_string(), t));
    }
    Ok(out)
}

fn parse_error(line: usize, msg: &str) -> crate::error::CliError {
    aggdiff::Error::Parse { line, msg: msg.to_string() }.into()
}
