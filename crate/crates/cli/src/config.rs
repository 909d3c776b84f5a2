//! Plain-text `key = value` configuration with dotted keys.
//!
//! Every key is declared in [`SCHEMA`] with a type and a default. Parsing
//! rejects unknown keys and reports the offending line; [`Config::render`]
//! writes every key, so `parse(render(c)) == c`.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    Text,
    /// Comma-separated floats; empty means none.
    FloatList,
    /// One of the listed words.
    Choice(&'static [&'static str]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
    FloatList(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `Display` for f64 prints the shortest string that parses back
            Value::Float(x) => write!(f, "{x}"),
            Value::Int(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
            Value::FloatList(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const KERNEL_KINDS: &[&str] = &["newtonian", "mollified", "custom"];
const SHAPES: &[&str] = &["gaussian", "ball", "table", "annulus"];

pub const SCHEMA: &[Key] = &[
    Key { name: "experiment", kind: Kind::Text, default: "", help: "registry name of the experiment" },
    Key { name: "seed", kind: Kind::Int, default: "0", help: "seed for randomized suites" },
    Key { name: "params.m", kind: Kind::Float, default: "2", help: "diffusion exponent m > 1" },
    Key { name: "params.d", kind: Kind::Int, default: "3", help: "dimension d >= 3" },
    Key { name: "params.mass", kind: Kind::Float, default: "1", help: "total mass" },
    Key { name: "kernel.kind", kind: Kind::Choice(KERNEL_KINDS), default: "newtonian", help: "interaction kernel" },
    Key { name: "kernel.h.shape", kind: Kind::Choice(SHAPES), default: "gaussian", help: "shape of the Laplacian h" },
    Key { name: "kernel.h.width", kind: Kind::Float, default: "0.3", help: "width of h" },
    Key { name: "kernel.h.radius", kind: Kind::Float, default: "1", help: "centre radius of an annular h" },
    Key { name: "kernel.table.path", kind: Kind::Text, default: "", help: "CSV `r,value` for a tabulated h" },
    Key { name: "init", kind: Kind::Text, default: "uniform-ball:2", help: "initial-data spec" },
    Key { name: "grid.n", kind: Kind::Int, default: "400", help: "radial cells" },
    Key { name: "grid.radius", kind: Kind::Float, default: "8", help: "outer radius of the radial grid" },
    Key { name: "solver.t_end", kind: Kind::Float, default: "10", help: "final time (tau in the rescaled frame)" },
    Key { name: "solver.cfl_diffusion", kind: Kind::Float, default: "0.4", help: "diffusive CFL number" },
    Key { name: "solver.cfl_advection", kind: Kind::Float, default: "0.5", help: "advective CFL number" },
    Key { name: "solver.snapshots", kind: Kind::FloatList, default: "", help: "snapshot times" },
    Key { name: "solver.diagnostics_stride", kind: Kind::Int, default: "10", help: "steps between diagnostics rows" },
    Key { name: "cartesian.n", kind: Kind::Int, default: "24", help: "Cartesian cells per axis" },
    Key { name: "cartesian.h", kind: Kind::Float, default: "0.4", help: "Cartesian spacing" },
    Key { name: "cartesian.init", kind: Kind::Text, default: "two-balls:1.2,1", help: "Cartesian initial-data spec" },
    Key { name: "regularization.height_ratio", kind: Kind::Float, default: "1000", help: "initial peak over sup rho_A" },
    Key { name: "mollified.widths", kind: Kind::FloatList, default: "0.2,0.1,0.05", help: "mollifier widths, decreasing" },
    Key { name: "implicit.pairs", kind: Kind::Int, default: "100", help: "random contraction pairs" },
    Key { name: "implicit.rearrangement_pairs", kind: Kind::Int, default: "20", help: "random rearrangement pairs" },
    Key { name: "envelope.k0", kind: Kind::Float, default: "0.5", help: "initial scaling k(0)" },
    Key { name: "envelope.c", kind: Kind::Float, default: "1", help: "ODE coefficient" },
    Key { name: "threshold.stationary_rel", kind: Kind::Float, default: "0.005", help: "relative error against the closed form" },
    Key { name: "threshold.rate_band", kind: Kind::Float, default: "0.25", help: "relative widening of the envelope rate band" },
    Key { name: "threshold.final_rel", kind: Kind::Float, default: "0.01", help: "final sup error relative to sup rho_A" },
    Key { name: "threshold.order_constant", kind: Kind::Float, default: "5", help: "C in the order tolerance C (dr + dt) t" },
    Key { name: "threshold.monotonicity_factor", kind: Kind::Float, default: "10", help: "multiple of the round-off level" },
    Key { name: "threshold.monotonicity_time", kind: Kind::Float, default: "0.1", help: "crossing deadline" },
    Key { name: "threshold.slope_slack", kind: Kind::Float, default: "0.15", help: "slack on the -alpha slope" },
    Key { name: "threshold.ode_rate_rel", kind: Kind::Float, default: "0.02", help: "relative error of the ODE rate" },
    Key { name: "threshold.contraction", kind: Kind::Float, default: "1e-8", help: "L1 contraction slack" },
    Key { name: "threshold.min_order", kind: Kind::Float, default: "0.8", help: "minimum observed convergence order" },
    Key { name: "threshold.sup_growth", kind: Kind::Float, default: "10", help: "allowed growth of the sup norm" },
    Key { name: "threshold.cartesian_calibration", kind: Kind::Float, default: "2", help: "tolerance constant over the radial-data discrepancy per h" },
];

pub fn key(name: &str) -> Option<&'static Key> {
    SCHEMA.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn parse_value(k: &Key, raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    let float = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    match k.kind {
        Kind::Float => {
            let x = float(raw)?;
            if x.is_finite() {
                Ok(Value::Float(x))
            } else {
                Err(format!("`{raw}` is not finite"))
            }
        }
        Kind::Int => raw
            .parse::<u64>()
            .map(Value::Int)
            .map_err(|_| format!("`{raw}` is not a nonnegative integer")),
        Kind::Text => Ok(Value::Text(raw.to_string())),
        Kind::FloatList => {
            if raw.is_empty() {
                return Ok(Value::FloatList(Vec::new()));
            }
            raw.split(',').map(float).collect::<Result<_, _>>().map(Value::FloatList)
        }
        Kind::Choice(options) => {
            if options.contains(&raw) {
                Ok(Value::Text(raw.to_string()))
            } else {
                Err(format!("`{raw}` is not one of {}", options.join("|")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, Value>,
}

impl Default for Config {
    fn default() -> Self {
        let values = SCHEMA
            .iter()
            .map(|k| (k.name, parse_value(k, k.default).expect("schema defaults parse")))
            .collect();
        Self { values }
    }
}

impl Config {
    /// Defaults overlaid with the assignments in `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError { line: Some(i + 1), message: format!("expected `key = value`, found `{line}`") });
            };
            self.set(k.trim(), v).map_err(|mut e| {
                e.line = Some(i + 1);
                e
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, name: &str, raw: &str) -> Result<(), ConfigError> {
        let k = key(name).ok_or_else(|| ConfigError { line: None, message: format!("unknown key `{name}`") })?;
        let v = parse_value(k, raw).map_err(|m| ConfigError { line: None, message: format!("{name}: {m}") })?;
        self.values.insert(k.name, v);
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError {
            line: None,
            message: format!("expected key=value, found `{assignment}`"),
        })?;
        self.set(k.trim(), v)
    }

    /// Every key in schema order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in SCHEMA {
            out.push_str(k.name);
            out.push_str(" = ");
            out.push_str(&self.values[k.name].to_string());
            out.push('\n');
        }
        out
    }

    pub fn value(&self, name: &str) -> &Value {
        self.values.get(name).unwrap_or_else(|| panic!("`{name}` is not a schema key"))
    }

    pub fn f64(&self, name: &str) -> f64 {
        match self.value(name) {
            Value::Float(x) => *x,
            Value::Int(x) => *x as f64,
            v => panic!("`{name}` is not numeric: {v}"),
        }
    }

    pub fn usize(&self, name: &str) -> usize {
        match self.value(name) {
            Value::Int(x) => *x as usize,
            v => panic!("`{name}` is not an integer: {v}"),
        }
    }

    pub fn u64(&self, name: &str) -> u64 {
        match self.value(name) {
            Value::Int(x) => *x,
            v => panic!("`{name}` is not an integer: {v}"),
        }
    }

    pub fn str(&self, name: &str) -> &str {
        match self.value(name) {
            Value::Text(s) => s,
            v => panic!("`{name}` is not text: {v}"),
        }
    }

    pub fn list(&self, name: &str) -> &[f64] {
        match self.value(name) {
            Value::FloatList(v) => v,
            v => panic!("`{name}` is not a list: {v}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn values_round_trip() {
        let mut c = Config::default();
        c.set("params.m", "1.2345678901234567").unwrap();
        c.set("solver.snapshots", "0.1, 1e-3,2").unwrap();
        c.set("kernel.kind", "mollified").unwrap();
        c.set("experiment", "envelope-ode").unwrap();
        let back = Config::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.f64("params.m"), 1.2345678901234567);
        assert_eq!(back.list("solver.snapshots"), &[0.1, 1e-3, 2.0]);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = Config::parse("# header\nparams.m = 2\nparams.q = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("params.q"));
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in ["params.m = two", "grid.n = -3", "kernel.kind = yukawa", "just words"] {
            let e = Config::parse(text).unwrap_err();
            assert_eq!(e.line, Some(1), "{text}");
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = Config::parse("\n  # nothing\nparams.m = 3 # trailing\n\n").unwrap();
        assert_eq!(c.f64("params.m"), 3.0);
    }
}
