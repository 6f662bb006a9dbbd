//! Structured results for validators.
//!
//! Every validation pass (atlas, bundle, connection, ...) produces a
//! [`Report`]: a flat list of named checks, each either boolean or numeric
//! (worst residual against a tolerance). Reports render as plain text for the
//! CLI and serialize as JSON for `--format structured`.

use serde::Serialize;
use std::fmt;

use crate::expr::EvalError;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst residual observed, for numeric checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<f64>,
    /// Tolerance the residual was compared against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Human-readable context: where the worst violation occurred, counts, ...
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub subject: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(subject: impl Into<String>) -> Self {
        Report { subject: subject.into(), checks: Vec::new() }
    }

    /// Record a numeric check: passes when `worst <= tol`.
    pub fn numeric(&mut self, name: impl Into<String>, worst: f64, tol: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed: worst.is_finite() && worst <= tol,
            worst: Some(worst),
            tolerance: Some(tol),
            detail: detail.into(),
        });
    }

    /// Record a numeric check whose measurement may have failed outright
    /// (e.g. an expression hit a domain error at a sample point).
    pub fn numeric_result(
        &mut self,
        name: impl Into<String>,
        worst: Result<f64, EvalError>,
        tol: f64,
        detail: impl Into<String>,
    ) {
        match worst {
            Ok(w) => self.numeric(name, w, tol, detail),
            Err(e) => self.boolean(name, false, format!("evaluation failed: {e}")),
        }
    }

    pub fn boolean(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            worst: None,
            tolerance: None,
            detail: detail.into(),
        });
    }

    /// Absorb a sub-report, prefixing its check names.
    pub fn absorb(&mut self, prefix: &str, sub: Report) {
        for mut c in sub.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {}", self.subject, if self.passed() { "PASS" } else { "FAIL" })?;
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            write!(f, "  [{status}] {}", c.name)?;
            if let (Some(w), Some(t)) = (c.worst, c.tolerance) {
                write!(f, " (worst {w:.3e}, tol {t:.1e})")?;
            }
            if !c.detail.is_empty() {
                write!(f, " - {}", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_fail_logic() {
        let mut r = Report::new("thing");
        r.numeric("residual", 1e-12, 1e-10, "");
        assert!(r.passed());
        r.numeric("other", 2e-10, 1e-10, "at sample 3");
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn non_finite_residuals_fail() {
        let mut r = Report::new("thing");
        r.numeric("residual", f64::NAN, 1e-10, "");
        assert!(!r.passed());
        r.numeric("residual2", f64::INFINITY, 1e-10, "");
        assert_eq!(r.failures().count(), 2);
    }

    #[test]
    fn text_rendering_mentions_failures() {
        let mut r = Report::new("atlas `demo`");
        r.boolean("group.closure", true, "");
        r.numeric("injection.equivariance", 3.0e-9, 1e-10, "injection 2, sample 17");
        let text = r.to_string();
        assert!(text.contains("FAIL"));
        assert!(text.contains("injection.equivariance"));
        assert!(text.contains("sample 17"));
    }

    #[test]
    fn absorb_prefixes_names() {
        let mut sub = Report::new("chart");
        sub.boolean("domain", true, "");
        let mut top = Report::new("atlas");
        top.absorb("chart[0]", sub);
        assert_eq!(top.checks[0].name, "chart[0].domain");
    }
}
