//! Pass/fail verification reports, printable as `key=value` lines.

use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity the check compares against its threshold.
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: value <= threshold, value, threshold }
    }

    /// Passes when `value < threshold`.
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: value < threshold, value, threshold }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Check { name: name.into(), passed, value: if passed { 1.0 } else { 0.0 }, threshold: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: String,
    pub checks: Vec<Check>,
    /// Extra measured values worth printing but not judged.
    pub values: Vec<(String, f64)>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), ..Default::default() }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn value(&mut self, key: impl Into<String>, v: f64) {
        self.values.push((key.into(), v));
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn extend(&mut self, other: Report) {
        let prefix = other.title;
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
        for (k, v) in other.values {
            self.values.push((format!("{prefix}.{k}"), v));
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "report={}", self.title);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v:e}");
        }
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "fail" };
            let _ = writeln!(out, "{}={status} value={:e} threshold={:e}", c.name, c.value, c.threshold);
        }
        let _ = writeln!(out, "passed={}", self.passed());
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_key_value())
    }
}
