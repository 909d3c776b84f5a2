//! The JSON summary written by every experiment and a validator for the
//! published schema (`summary.schema.json`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA: &str = include_str!("../summary.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    /// How `value` is compared with `threshold`, e.g. `<=`.
    pub relation: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub theorem: String,
    pub params: Map<String, Value>,
    /// Non-finite values are written as `null`.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub criteria: Vec<CriterionResult>,
    /// Numerical failures, reported instead of aborting the run.
    pub errors: Vec<String>,
    pub pass: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Summary {
    pub fn new(experiment: &str, theorem: &str, params: Map<String, Value>) -> Self {
        Self {
            experiment: experiment.to_string(),
            theorem: theorem.to_string(),
            params,
            metrics: BTreeMap::new(),
            criteria: Vec::new(),
            errors: Vec::new(),
            pass: false,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), finite(value));
    }

    /// Records `value <= threshold`; NaN fails.
    pub fn at_most(&mut self, name: &str, value: f64, threshold: f64) {
        self.criterion(name, value, threshold, "<=", value <= threshold);
    }

    /// Records `value >= threshold`; NaN fails.
    pub fn at_least(&mut self, name: &str, value: f64, threshold: f64) {
        self.criterion(name, value, threshold, ">=", value >= threshold);
    }

    pub fn criterion(&mut self, name: &str, value: f64, threshold: f64, relation: &str, pass: bool) {
        self.criteria.push(CriterionResult {
            name: name.to_string(),
            value: finite(value),
            threshold: finite(threshold),
            relation: relation.to_string(),
            pass,
        });
    }

    /// Sets `pass`: every criterion passed, at least one was checked, and no error was recorded.
    pub fn finish(&mut self) {
        self.pass = self.errors.is_empty() && !self.criteria.is_empty() && self.criteria.iter().all(|c| c.pass);
    }
}

/// Checks `doc` against the schema in [`SCHEMA`]. Supports the keywords the
/// schema uses: `type`, `required`, `properties`, `items` and
/// `additionalProperties`.
pub fn validate(doc: &Value) -> Result<(), Vec<String>> {
    let schema: Value = serde_json::from_str(SCHEMA).expect("published schema is valid JSON");
    let mut errors = Vec::new();
    check(&schema, doc, "$", &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn check(schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(t) = schema.get("type") {
        let names: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => Vec::new(),
        };
        if !names.iter().any(|n| type_matches(n, v)) {
            errors.push(format!("{path}: expected {}", names.join(" or ")));
            return;
        }
    }
    if let (Some(req), Some(obj)) = (schema.get("required").and_then(Value::as_array), v.as_object()) {
        for key in req.iter().filter_map(Value::as_str) {
            if !obj.contains_key(key) {
                errors.push(format!("{path}: missing `{key}`"));
            }
        }
    }
    if let Some(obj) = v.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for (key, child) in obj {
            let sub = props.and_then(|p| p.get(key)).or_else(|| schema.get("additionalProperties"));
            if let Some(sub) = sub.filter(|s| s.is_object()) {
                check(sub, child, &format!("{path}.{key}"), errors);
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            check(items, child, &format!("{path}[{i}]"), errors);
        }
    }
}
