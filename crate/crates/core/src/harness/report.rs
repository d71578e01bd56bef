use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// What a check's value is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Below { max: f64 },
    Within { lo: f64, hi: f64 },
    Equals { expected: f64 },
    Info,
}

impl Bound {
    fn admits(&self, v: f64) -> bool {
        match *self {
            Bound::Below { max } => v < max,
            Bound::Within { lo, hi } => lo <= v && v <= hi,
            Bound::Equals { expected } => v == expected,
            Bound::Info => true,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Bound::Below { max } => format!("< {max:e}"),
            Bound::Within { lo, hi } => format!("in [{lo}, {hi}]"),
            Bound::Equals { expected } => format!("== {expected}"),
            Bound::Info => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, bound: Bound) -> Self {
        Self {
            name: name.to_string(),
            pass: value.is_finite() && bound.admits(value),
            value,
            bound,
        }
    }

    pub fn below(name: &str, value: f64, max: f64) -> Self {
        Self::new(name, value, Bound::Below { max })
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, Bound::Within { lo, hi })
    }

    pub fn equals(name: &str, value: f64, expected: f64) -> Self {
        Self::new(name, value, Bound::Equals { expected })
    }

    pub fn info(name: &str, value: f64) -> Self {
        Self::new(name, value, Bound::Info)
    }
}

/// Outcome of one command. Verdicts are recomputed from the recorded numbers
/// only; `timing_ms` is the single field allowed to differ between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timing_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            checks: Vec::new(),
            files: Vec::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn without_timing(&self) -> Self {
        Self {
            timing_ms: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports hold plain data")
    }

    pub fn to_human(&self) -> String {
        let mut s = format!("{} (seed {})\n", self.command, self.seed);
        for c in &self.checks {
            let tag = match (&c.bound, c.pass) {
                (Bound::Info, _) => "    ",
                (_, true) => "PASS",
                (_, false) => "FAIL",
            };
            let _ = writeln!(s, "{tag} {:<28} {:>14.6e} {}", c.name, c.value, c.bound.describe());
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {f}");
        }
        for (k, v) in &self.timing_ms {
            let _ = writeln!(s, "time {k:<23} {v:>11.3} ms");
        }
        s
    }
}
