//! CSV tables and text summaries.
//!
//! Every CSV starts with a `# provenance:` comment line followed by the
//! header row. Floats are written with 17 significant digits.

use std::fmt::Write as _;

use crate::grid::SpaceTimeGrid;
use crate::solver::ObstacleSolution;
use crate::verify::CheckReport;

/// Where a table came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunInfo {
    pub scenario: String,
    /// Hex digest of the scenario file.
    pub sha256: String,
    pub seed: Option<u64>,
}

impl RunInfo {
    pub fn header(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!("# provenance: scenario={} sha256={} seed={}", self.scenario, self.sha256, seed)
    }
}

/// `{:.16e}`; non-finite values as `nan`, `inf`, `-inf`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, info: &RunInfo) -> String {
        let mut out = String::new();
        out.push_str(&info.header());
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// One row per check part.
pub fn checks_table(reports: &[CheckReport]) -> Table {
    let mut t = Table::new([
        "check",
        "part",
        "gated",
        "passed",
        "discrepancy",
        "bias_budget",
        "stat_budget",
        "budget",
        "nx",
        "nt",
        "paths",
        "seed",
    ]);
    for r in reports {
        let p = &r.provenance;
        let paths = p.paths.map(|v| v.to_string()).unwrap_or_default();
        let seed = p.seed.map(|v| v.to_string()).unwrap_or_default();
        t.push(vec![
            r.name.clone(),
            "*".into(),
            "true".into(),
            r.passed.to_string(),
            num(r.discrepancy),
            num(r.bias_budget),
            num(r.stat_budget),
            num(r.budget()),
            p.nx.to_string(),
            p.nt.to_string(),
            paths.clone(),
            seed.clone(),
        ]);
        for part in &r.parts {
            t.push(vec![
                r.name.clone(),
                part.label.clone(),
                part.gated.to_string(),
                part.passed().to_string(),
                num(part.discrepancy),
                num(part.bias_budget),
                num(part.stat_budget),
                num(part.budget()),
                p.nx.to_string(),
                p.nt.to_string(),
                paths.clone(),
                seed.clone(),
            ]);
        }
    }
    t
}

/// Human-readable pass/fail list.
pub fn checks_summary(info: &RunInfo, reports: &[CheckReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (sha256 {})", info.scenario, info.sha256);
    for r in reports {
        let _ = writeln!(
            out,
            "{} {:<20} discrepancy {:.6e}  budget {:.6e} (bias {:.3e} + stat {:.3e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.discrepancy,
            r.budget(),
            r.bias_budget,
            r.stat_budget
        );
        for p in r.parts.iter().filter(|p| !p.passed()) {
            let _ = writeln!(out, "     {} {:.6e} > {:.6e}", p.label, p.discrepancy, p.budget());
        }
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} of {} checks passed", reports.len() - failed, reports.len());
    out
}

/// Long-format solution table `t, x, u, r, h, contact`.
pub fn solution_table(grid: &SpaceTimeGrid, sol: &ObstacleSolution) -> Table {
    let mut t = Table::new(["t", "x", "u", "r", "h", "contact"]);
    for k in 0..=grid.nt {
        for i in 0..grid.n_nodes() {
            t.push(vec![
                num(grid.t_nodes[k]),
                num(grid.x_nodes[i]),
                num(sol.u.get(k, i)),
                num(sol.r.get(k, i)),
                num(sol.h.get(k, i)),
                u8::from(sol.is_contact(k, i)).to_string(),
            ]);
        }
    }
    t
}
