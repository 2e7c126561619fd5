//! Monte Carlo report: one row per checkpoint per test, plus per-test
//! outcomes and a global verdict.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::paths::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Diagnostic row that does not enter any decision.
    Info,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        }
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// One estimate. `se` and `target` are NaN when not applicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub test: String,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub z: f64,
    /// Absolute tolerance granted in addition to `z * se`.
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl ReportRow {
    /// Row whose verdict is `|estimate - target| <= max(tolerance, z * se)`.
    pub fn judged(test: impl Into<String>, t: f64, estimate: f64, se: f64, target: f64, z: f64, tolerance: f64) -> Self {
        let gap = (estimate - target).abs();
        let band = if se.is_nan() { tolerance } else { tolerance.max(z * se) };
        Self {
            test: test.into(),
            t,
            estimate,
            se,
            target,
            z,
            tolerance,
            verdict: Verdict::from_bool(gap <= band),
        }
    }

    pub fn info(test: impl Into<String>, t: f64, estimate: f64, se: f64, target: f64, z: f64) -> Self {
        Self {
            test: test.into(),
            t,
            estimate,
            se,
            target,
            z,
            tolerance: f64::NAN,
            verdict: Verdict::Info,
        }
    }

    /// Normal-approximation interval `estimate ± z se`.
    pub fn ci(&self) -> (f64, f64) {
        (self.estimate - self.z * self.se, self.estimate + self.z * self.se)
    }
}

/// Decision for one configured test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub name: String,
    /// Whether the underlying statistical criterion held.
    pub criterion_held: bool,
    /// Negative controls are expected to violate their criterion.
    pub negative_control: bool,
    pub note: String,
}

impl TestOutcome {
    pub fn ok(&self) -> bool {
        self.criterion_held != self.negative_control
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub rows: Vec<ReportRow>,
    pub outcomes: Vec<TestOutcome>,
    pub base_seed: u64,
    pub replications: usize,
    pub runtime_secs: f64,
}

impl MCReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(TestOutcome::ok)
    }

    pub fn rows_for<'a>(&'a self, test: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.test == test)
    }

    pub fn outcome(&self, name: &str) -> Option<&TestOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    /// CSV `test,t,estimate,se,target,z,verdict`, optionally preceded by a
    /// `#` line carrying the wall-clock time and runtime.
    pub fn write_csv<W: Write>(&self, mut w: W, timestamp: Option<u64>) -> Result<()> {
        if let Some(ts) = timestamp {
            writeln!(w, "# generated_unix={ts} runtime_s={:.3}", self.runtime_secs)?;
        }
        writeln!(w, "test,t,estimate,se,target,z,verdict")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.test,
                fmt_f64(r.t),
                fmt_f64(r.estimate),
                fmt_f64(r.se),
                fmt_f64(r.target),
                fmt_f64(r.z),
                r.verdict.as_str()
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "replications {} | base seed {} (per-replication streams derived from (seed, replication, label)) | runtime {:.2}s",
            self.replications, self.base_seed, self.runtime_secs
        );
        for r in &self.rows {
            let (lo, hi) = r.ci();
            let _ = writeln!(
                s,
                "  {:<28} t={:<10} est={:<14.6e} se={:<11.3e} ci=[{:.4e}, {:.4e}] target={:<12.6} {}",
                r.test,
                r.t,
                r.estimate,
                r.se,
                lo,
                hi,
                r.target,
                r.verdict.as_str()
            );
        }
        for o in &self.outcomes {
            let status = if o.ok() { "PASS" } else { "FAIL" };
            let control = if o.negative_control { " (negative control)" } else { "" };
            let _ = writeln!(s, "{status} {}{control}: {}", o.name, o.note);
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rule() {
        let r = ReportRow::judged("x", 1.0, 1.1, 0.02, 1.0, 4.0, 0.0);
        assert_eq!(r.verdict, Verdict::Fail);
        let r = ReportRow::judged("x", 1.0, 1.07, 0.02, 1.0, 4.0, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
        let r = ReportRow::judged("x", 1.0, 1.1, 0.0, 1.0, 4.0, 0.2);
        assert_eq!(r.verdict, Verdict::Pass);
        let r = ReportRow::judged("x", 1.0, 0.0, f64::NAN, 0.0, 4.0, 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
        let r = ReportRow::judged("x", 1.0, 1.0, f64::NAN, f64::NAN, 4.0, 1e-12);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn csv_layout() {
        let rep = MCReport {
            rows: vec![ReportRow::info("a", 2.0, 0.5, f64::NAN, f64::NAN, 4.0)],
            outcomes: vec![TestOutcome { name: "a".into(), criterion_held: false, negative_control: true, note: String::new() }],
            base_seed: 1,
            replications: 2,
            runtime_secs: 0.5,
        };
        assert!(rep.passed());
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, None).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "test,t,estimate,se,target,z,verdict\na,2.0000000000000000e0,5.0000000000000000e-1,,,4.0000000000000000e0,info\n");
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, Some(7)).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("# generated_unix=7"));
    }
}
