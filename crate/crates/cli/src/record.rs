use std::collections::BTreeMap;

use feedback_queue::ModelParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Residuals, the tolerances they were judged against, and named pass/fail
/// checks. Maps are ordered so output is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

impl Diagnostics {
    pub fn residual(&mut self, name: &str, value: f64, tol: f64) {
        self.residuals.insert(name.into(), value);
        self.tolerances.insert(name.into(), tol);
        self.checks.insert(name.into(), value <= tol);
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.into(), ok);
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|ok| *ok)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|(_, ok)| !**ok)
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub command: String,
    pub params: ModelParams,
    pub result: Value,
    pub diagnostics: Diagnostics,
    pub version: String,
}

impl OutputRecord {
    pub fn new(
        command: &str,
        params: ModelParams,
        result: Value,
        diagnostics: Diagnostics,
    ) -> Self {
        Self {
            command: command.into(),
            params,
            result,
            diagnostics,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records hold only finite numbers")
    }
}

/// Full-precision CSV: a header row, then one line per row.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}
