//! The named check suite run by `verify`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::problem::validate_hypotheses;
use crate::scenario::Scenario;
use crate::solver::{solve_penalized, solve_psor};
use crate::stochastic::simulate_paths;
use crate::verify::{self, CheckPart, CheckReport, ProbeFunction, Provenance, RunningProbe, TestFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CheckName {
    Hypotheses,
    Skorokhod,
    SkorokhodPenalized,
    Minimality,
    RepresentationU,
    RepresentationZ,
    MeasureIdentity,
    IntervalMeasure,
    AcMeasure,
    WeightedBounds,
}

impl CheckName {
    pub const ALL: [CheckName; 10] = [
        CheckName::Hypotheses,
        CheckName::Skorokhod,
        CheckName::SkorokhodPenalized,
        CheckName::Minimality,
        CheckName::RepresentationU,
        CheckName::RepresentationZ,
        CheckName::MeasureIdentity,
        CheckName::IntervalMeasure,
        CheckName::AcMeasure,
        CheckName::WeightedBounds,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckName::Hypotheses => "hypotheses",
            CheckName::Skorokhod => "skorokhod",
            CheckName::SkorokhodPenalized => "skorokhod-penalized",
            CheckName::Minimality => "minimality",
            CheckName::RepresentationU => "representation-u",
            CheckName::RepresentationZ => "representation-z",
            CheckName::MeasureIdentity => "measure-identity",
            CheckName::IntervalMeasure => "interval-measure",
            CheckName::AcMeasure => "ac-measure",
            CheckName::WeightedBounds => "weighted-bounds",
        }
    }

    fn needs_paths(&self) -> bool {
        matches!(self, CheckName::RepresentationZ | CheckName::MeasureIdentity | CheckName::AcMeasure)
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckName::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown check '{s}'")))
    }
}

/// Parse `all` or a comma-separated list; the result is sorted and deduplicated.
pub fn parse_checks(list: &str) -> Result<Vec<CheckName>> {
    if list.trim() == "all" {
        return Ok(CheckName::ALL.to_vec());
    }
    let mut out = list.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<CheckName>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Run `checks` on a scenario at its own grid and ensemble parameters.
pub fn run_checks(scn: &Scenario, checks: &[CheckName]) -> Result<Vec<CheckReport>> {
    let spec = &scn.spec;
    let grid = SpaceTimeGrid::for_spec(spec, scn.nx, scn.nt)?;
    let tol = &scn.tolerances;
    let opts = &scn.solver;
    let mc = scn.mc.params();
    let psor = solve_psor(spec, &grid, opts)?;
    let ensemble = if checks.iter().any(CheckName::needs_paths) {
        let (k, i) = verify::snap_probe(&grid, scn.verify.start.0, scn.verify.start.1);
        Some(simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, mc.paths, mc.seed)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(checks.len());
    for &check in checks {
        let report = match check {
            CheckName::Hypotheses => hypotheses(scn, &grid)?,
            CheckName::Skorokhod => verify::check_skorokhod(&psor, &grid, None, tol),
            CheckName::SkorokhodPenalized => {
                let n = scn.study.default_penalty;
                let pen = solve_penalized(spec, &grid, n, opts)?.to_obstacle_solution(psor.contact_tol);
                let mut r = verify::check_skorokhod(&pen, &grid, Some(n), tol);
                r.name = check.to_string();
                r
            }
            CheckName::Minimality => verify::check_minimality(spec, &grid, &scn.study.schedule(), opts, tol)?,
            CheckName::RepresentationU => {
                verify::check_representation_u(spec, &grid, &psor, &scn.verify.probes, &mc, tol)?
            }
            CheckName::RepresentationZ => {
                verify::check_representation_z(spec, &grid, &psor, ensemble.as_ref().unwrap(), mc.degree, tol)?
            }
            CheckName::MeasureIdentity => {
                let (s, x) = scn.verify.start;
                verify::check_measure_identity(
                    spec,
                    &grid,
                    &psor,
                    s,
                    x,
                    &TestFunction::DEFAULTS,
                    ensemble.as_ref(),
                    tol,
                )?
            }
            CheckName::IntervalMeasure => {
                let (t1, t2) = scn.verify.interval;
                verify::check_interval_measure(spec, &grid, &psor, t1, t2, scn.verify.set, tol)?
            }
            CheckName::AcMeasure => {
                verify::check_ac_measure(spec, &grid, &psor, ensemble.as_ref().unwrap(), mc.degree, tol)?
            }
            CheckName::WeightedBounds => weighted_bounds(scn, &grid)?,
        };
        out.push(report);
    }
    Ok(out)
}

fn hypotheses(scn: &Scenario, grid: &SpaceTimeGrid) -> Result<CheckReport> {
    let rep = validate_hypotheses(&scn.spec, scn.verify.hypothesis_probes, scn.verify.hypothesis_seed)?;
    let parts = rep.checks.iter().map(|c| CheckPart::gated(c.name, c.max_violation, 1e-12, 0.0)).collect();
    Ok(CheckReport::new(CheckName::Hypotheses.as_str(), Provenance::grid(grid), parts))
}

fn weighted_bounds(scn: &Scenario, grid: &SpaceTimeGrid) -> Result<CheckReport> {
    let spec = &scn.spec;
    let coarse = SpaceTimeGrid::for_spec(spec, (grid.nx / 2).max(4), (grid.nt / 2).max(4))?;
    let one = |_: f64| 1.0;
    let bump = |x: f64| (-x * x).exp();
    let phi = |x: f64| spec.obstacle.phi(x);
    let probes = [
        ProbeFunction { name: "one".into(), phi: &one },
        ProbeFunction { name: "bump".into(), phi: &bump },
        ProbeFunction { name: "terminal".into(), phi: &phi },
    ];
    let g_one = |_: f64, _: f64| 1.0;
    let g_drv = |t: f64, x: f64| spec.driver.g(t, x);
    let mut running = vec![RunningProbe { name: "g-one".into(), g: &g_one }];
    let active = grid.t_nodes.iter().any(|&t| grid.x_nodes.iter().any(|&x| spec.driver.g(t, x) != 0.0));
    if active {
        running.push(RunningProbe { name: "g-driver".into(), g: &g_drv });
    }
    verify::check_weighted_bounds(spec, grid, &coarse, &probes, &running, &scn.tolerances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_lists() {
        assert_eq!(parse_checks("all").unwrap().len(), CheckName::ALL.len());
        assert_eq!(
            parse_checks("minimality, skorokhod,skorokhod").unwrap(),
            vec![CheckName::Skorokhod, CheckName::Minimality]
        );
        assert!(parse_checks("skorokhod,bogus").is_err());
        for c in CheckName::ALL {
            assert_eq!(c.as_str().parse::<CheckName>().unwrap(), c);
        }
    }
}
