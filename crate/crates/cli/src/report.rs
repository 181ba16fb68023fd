//! Check lines, suite reports, JSON and CSV output.

use serde::Serialize;
use serde_json::Value;

/// One verified statement. `pass` holds iff `residual ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub check_id: String,
    pub paper_anchor: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckLine {
    pub fn new(check_id: impl Into<String>, anchor: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        CheckLine {
            check_id: check_id.into(),
            paper_anchor: anchor.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }

    /// Integer equality, reported as `|found − expected| ≤ 0`.
    pub fn count(check_id: impl Into<String>, anchor: impl Into<String>, found: usize, expected: usize) -> Self {
        Self::new(check_id, anchor, found.abs_diff(expected) as f64, 0.0)
    }

    /// A predicate, reported as residual 0 or 1 against tolerance 0.
    pub fn holds(check_id: impl Into<String>, anchor: impl Into<String>, ok: bool) -> Self {
        Self::new(check_id, anchor, if ok { 0.0 } else { 1.0 }, 0.0)
    }

    /// A quantity that must exceed `bound`, reported as `bound / observed ≤ 1`.
    pub fn exceeds(check_id: impl Into<String>, anchor: impl Into<String>, observed: f64, bound: f64) -> Self {
        let ratio = if observed > 0.0 { bound / observed } else { f64::INFINITY };
        let mut line = Self::new(check_id, anchor, ratio, 1.0);
        line.pass = observed > bound;
        line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckLine>,
    /// only recorded on request, since it breaks byte-identical reruns
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
    #[serde(skip)]
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn new(suite: impl Into<String>) -> Self {
        SuiteReport { suite: suite.into(), checks: Vec::new(), wall_time_s: None, details: Value::Null, elapsed_s: 0.0 }
    }

    pub fn push(&mut self, line: CheckLine) {
        self.checks.push(line);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

pub const CSV_HEADER: [&str; 6] = ["suite", "check_id", "paper_anchor", "residual", "tolerance", "pass"];

pub fn to_json(reports: &[SuiteReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn to_csv(reports: &[SuiteReport]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for c in &r.checks {
            w.write_record([
                r.suite.as_str(),
                &c.check_id,
                &c.paper_anchor,
                &format!("{:e}", c.residual),
                &format!("{:e}", c.tolerance),
                if c.pass { "true" } else { "false" },
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("utf-8 input"))
}
