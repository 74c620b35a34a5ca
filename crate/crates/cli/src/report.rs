//! Task outputs: named invariants, JSON reports and CSV tables.

use serde::Serialize;
use serde_json::Value;

/// One checked quantity. Only asserted invariants decide the exit code.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub asserted: bool,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Invariant {
    /// Asserted `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Invariant { name: name.into(), value, tolerance, asserted: true, pass: value <= tolerance, note: None }
    }

    /// Asserted boolean outcome; `value` is 1 for true.
    pub fn holds(name: &str, ok: bool) -> Self {
        Invariant { name: name.into(), value: ok as u8 as f64, tolerance: 1.0, asserted: true, pass: ok, note: None }
    }

    /// Reported only.
    pub fn reported(name: &str, value: f64, tolerance: f64) -> Self {
        Invariant { name: name.into(), value, tolerance, asserted: false, pass: value <= tolerance, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn failed(&self) -> bool {
        self.asserted && !self.pass
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Default)]
pub struct TaskOutput {
    pub report: serde_json::Map<String, Value>,
    pub tables: Vec<Table>,
    pub invariants: Vec<Invariant>,
}

impl TaskOutput {
    pub fn put(&mut self, key: &str, v: impl Serialize) {
        self.report.insert(key.into(), serde_json::to_value(v).expect("report values serialize"));
    }

    pub fn check(&mut self, inv: Invariant) {
        self.invariants.push(inv);
    }

    pub fn failing(&self) -> Vec<String> {
        self.invariants.iter().filter(|i| i.failed()).map(|i| i.name.clone()).collect()
    }
}
