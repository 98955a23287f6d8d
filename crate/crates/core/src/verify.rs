//! Cross-checks between the grid solution and the stochastic schemes.
//!
//! Every check returns a [`CheckReport`] whose gated parts each compare a
//! discrepancy against a budget split into a bias part and a statistical
//! part (`3 * CI` for Monte Carlo quantities). The report passes iff every
//! gated part does; its headline numbers are those of the worst part.

use crate::error::{Error, Result};
use crate::grid::{central_difference, interp_row, solve_density, ChainStep, GridField, KernelScheme, SpaceTimeGrid};
use crate::problem::ObstacleProblemSpec;
use crate::solver::{penalization_study, ObstacleSolution, SolverOptions};
use crate::stochastic::{rbsde_chain_dp, rbsde_reflected_mc, simulate_paths, Estimate, PathEnsemble};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckPart {
    pub label: String,
    pub discrepancy: f64,
    pub bias_budget: f64,
    pub stat_budget: f64,
    /// Informational parts are reported but never fail the check.
    pub gated: bool,
}

impl CheckPart {
    pub fn gated(label: impl Into<String>, discrepancy: f64, bias_budget: f64, stat_budget: f64) -> Self {
        Self { label: label.into(), discrepancy, bias_budget, stat_budget, gated: true }
    }

    pub fn info(label: impl Into<String>, value: f64) -> Self {
        Self { label: label.into(), discrepancy: value, bias_budget: f64::NAN, stat_budget: f64::NAN, gated: false }
    }

    pub fn budget(&self) -> f64 {
        self.bias_budget + self.stat_budget
    }

    pub fn passed(&self) -> bool {
        !self.gated || self.discrepancy <= self.budget()
    }
}

/// Run parameters a report was produced with.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub nx: usize,
    pub nt: usize,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn grid(grid: &SpaceTimeGrid) -> Self {
        Self { nx: grid.nx, nt: grid.nt, paths: None, seed: None }
    }

    pub fn with_paths(mut self, paths: usize, seed: u64) -> Self {
        self.paths = Some(paths);
        self.seed = Some(seed);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub discrepancy: f64,
    pub bias_budget: f64,
    pub stat_budget: f64,
    pub passed: bool,
    pub provenance: Provenance,
    pub parts: Vec<CheckPart>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, provenance: Provenance, parts: Vec<CheckPart>) -> Self {
        let worst = parts.iter().filter(|p| p.gated).max_by(|a, b| score(a).total_cmp(&score(b))).cloned();
        let passed = parts.iter().all(CheckPart::passed);
        let (discrepancy, bias_budget, stat_budget) = match worst {
            Some(p) => (p.discrepancy, p.bias_budget, p.stat_budget),
            None => (0.0, 0.0, 0.0),
        };
        Self { name: name.into(), discrepancy, bias_budget, stat_budget, passed, provenance, parts }
    }

    pub fn budget(&self) -> f64 {
        self.bias_budget + self.stat_budget
    }

    pub fn part(&self, label: &str) -> Option<&CheckPart> {
        self.parts.iter().find(|p| p.label == label)
    }
}

/// Discrepancy-to-budget ratio; NaN discrepancies rank worst.
fn score(p: &CheckPart) -> f64 {
    if p.discrepancy.is_nan() {
        return f64::INFINITY;
    }
    let b = p.budget();
    if b > 0.0 {
        p.discrepancy / b
    } else if p.discrepancy > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Reference magnitudes below this are treated as zero by [`relative`].
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// `|a - b| / max(|b|, RELATIVE_FLOOR)`.
fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(RELATIVE_FLOOR)
}

/// Monte Carlo settings shared by the checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McParams {
    pub paths: usize,
    pub seed: u64,
    pub degree: usize,
}

/// Frozen constants and tolerances of the verification suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyTolerances {
    /// `C` in the bias budget `C (dt + dx^2)` of the value representation.
    pub c_bias_u: f64,
    /// Regression floor of the relative `Z` distance.
    pub z_floor: f64,
    /// `|u - Y0(chain-dp)|`.
    pub chain_u: f64,
    /// Relative tolerance of the measure identities.
    pub measure_rel: f64,
    pub skorokhod: f64,
    /// `C` in the `C / n` budget of a penalized solution.
    pub skorokhod_penalized_c: f64,
    /// Relative mean-square residual of the backward equation along paths.
    pub ac_residual_rel: f64,
    pub bounds_lo: f64,
    pub bounds_hi: f64,
    /// Allowed relative change of weighted ratios under refinement.
    pub refinement_rel: f64,
    pub minimality_gap: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            c_bias_u: 1.0,
            z_floor: 0.15,
            chain_u: 1e-3,
            measure_rel: 5e-2,
            skorokhod: 1e-8,
            skorokhod_penalized_c: 10.0,
            ac_residual_rel: 0.2,
            bounds_lo: 0.5,
            bounds_hi: 2.0,
            refinement_rel: 0.2,
            minimality_gap: 1e-3,
        }
    }
}

/// Grid node closest to `(s, x)`; `s` is clamped below the horizon.
pub fn snap_probe(grid: &SpaceTimeGrid, s: f64, x: f64) -> (usize, usize) {
    let k = ((s / grid.dt).round().max(0.0) as usize).min(grid.nt - 1);
    let i = grid.nearest_node(x).clamp(1, grid.nx);
    (k, i)
}

fn probe_seed(seed: u64, idx: usize) -> u64 {
    seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Compare `u(s, x)` with the reflected Monte Carlo and chain recursions.
pub fn check_representation_u(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    probes: &[(f64, f64)],
    mc: &McParams,
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let bias = tol.c_bias_u * (grid.dt + grid.dx * grid.dx);
    let mut parts = Vec::new();
    for (idx, &(s, x)) in probes.iter().enumerate() {
        let (k, i) = snap_probe(grid, s, x);
        let u = sol.u.get(k, i);
        let ens = simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, mc.paths, probe_seed(mc.seed, idx))?;
        let refl = rbsde_reflected_mc(spec, &ens, mc.degree)?;
        drop(ens);
        let dp = rbsde_chain_dp(spec, grid, k, i)?;
        let tag = format!("t={:.6},x={:.6}", grid.t_nodes[k], grid.x_nodes[i]);
        parts.push(CheckPart::gated(
            format!("reflected-mc[{tag}]"),
            (u - refl.y0.value).abs(),
            bias,
            3.0 * refl.y0.half_width,
        ));
        parts.push(CheckPart::gated(format!("chain-dp[{tag}]"), (u - dp.y0.value).abs(), tol.chain_u, 0.0));
    }
    let prov = Provenance::grid(grid).with_paths(mc.paths, mc.seed);
    Ok(CheckReport::new("representation-u", prov, parts))
}

/// `sigma(t, x) * du/dx` interpolated from slice `k`.
fn sigma_grad_row(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, u: &GridField, k: usize) -> Vec<f64> {
    let t = grid.t_nodes[k];
    let du = central_difference(grid, u.row(k));
    grid.x_nodes.iter().zip(&du).map(|(&x, d)| spec.coefficients.sigma(t, x) * d).collect()
}

/// Time-integrated mean-square distance between `sigma du/dx` along paths
/// and the regression estimator of `Z`, relative to `E int |sigma du/dx|^2`.
pub fn check_representation_z(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    ens: &PathEnsemble,
    degree: usize,
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let s_index = ensemble_start(grid, ens)?;
    let refl = rbsde_reflected_mc(spec, ens, degree)?;
    let fields = refl.paths().expect("path fields");
    let m = ens.path_count;
    let mut dist = vec![0.0; m];
    let mut energy = vec![0.0; m];
    for k in 0..ens.steps {
        let row = sigma_grad_row(spec, grid, &sol.u, s_index + k);
        let zk = &fields.z[k * m..(k + 1) * m];
        for (j, &x) in ens.x(k).iter().enumerate() {
            let zu = interp_row(grid, &row, x);
            dist[j] += grid.dt * (zk[j] - zu).powi(2);
            energy[j] += grid.dt * zu * zu;
        }
    }
    let d = Estimate::from_sample(&dist);
    let e = Estimate::from_sample(&energy);
    let scale = e.value.max(RELATIVE_FLOOR);
    let mut parts =
        vec![CheckPart::gated("relative-mean-square", d.value / scale, tol.z_floor, 3.0 * d.half_width / scale)];
    parts.push(CheckPart::info("z0-mc", refl.z0.value));
    parts.push(CheckPart::info("z0-grid", sigma_grad_row(spec, grid, &sol.u, s_index)[grid.nearest_node(ens.x_start)]));
    let prov = Provenance::grid(grid).with_paths(m, ens.seed);
    Ok(CheckReport::new("representation-z", prov, parts))
}

fn ensemble_start(grid: &SpaceTimeGrid, ens: &PathEnsemble) -> Result<usize> {
    let k = (ens.s_start / grid.dt).round() as usize;
    if k >= grid.nt
        || (grid.t_nodes[k] - ens.s_start).abs() > 1e-9
        || (ens.dt_path - grid.dt).abs() > 1e-12 * grid.dt
        || ens.steps != grid.nt - k
    {
        return Err(Error::InvalidArgument("ensemble must start on a grid time and use the grid step".into()));
    }
    Ok(k)
}

/// Test functions for the measure identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    One,
    CosX,
    /// Smooth bump in time supported on `(s, T)`.
    TimeBump,
}

impl TestFunction {
    pub const DEFAULTS: [TestFunction; 3] = [TestFunction::One, TestFunction::CosX, TestFunction::TimeBump];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::CosX => "cos-x",
            TestFunction::TimeBump => "time-bump",
        }
    }

    pub fn eval(&self, t: f64, x: f64, s: f64, horizon: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::CosX => x.cos(),
            TestFunction::TimeBump => {
                let w = (2.0 * t - s - horizon) / (horizon - s);
                if w.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - w * w)).exp()
                } else {
                    0.0
                }
            }
        }
    }
}

/// `E int xi dK` against `sum xi p r dx dt`, with the left side from the
/// chain recursion and, when an ensemble is given, from
/// `K~ = int r(t, X_t) dt` along paths.
#[allow(clippy::too_many_arguments)]
pub fn check_measure_identity(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    s: f64,
    x: f64,
    xis: &[TestFunction],
    ens: Option<&PathEnsemble>,
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let (s_index, x_index) = snap_probe(grid, s, x);
    let density = solve_density(spec, grid, s_index, x_index, KernelScheme::Implicit)?;
    let dp = rbsde_chain_dp(spec, grid, s_index, x_index)?;
    let dk = &dp.chain().expect("chain fields").dk;
    let s0 = grid.t_nodes[s_index];
    let horizon = grid.horizon();
    let mut parts = Vec::new();
    for xi in xis {
        let mut right = 0.0;
        let mut left = 0.0;
        for k in s_index..grid.nt {
            let t = grid.t_nodes[k];
            let p = density.slice_at(k).expect("density slice");
            for i in 1..=grid.nx {
                let w = xi.eval(t, grid.x_nodes[i], s0, horizon) * p[i];
                right += w * sol.r.get(k, i) * grid.dt;
                left += w * dk.get(k, i);
            }
        }
        parts.push(CheckPart::gated(format!("{}:chain-dp", xi.name()), relative(left, right), tol.measure_rel, 0.0));
        if let Some(ens) = ens {
            let k0 = ensemble_start(grid, ens)?;
            if k0 != s_index || (ens.x_start - grid.x_nodes[x_index]).abs() > 1e-12 {
                return Err(Error::InvalidArgument("ensemble does not start at the probe".into()));
            }
            let mut per_path = vec![0.0; ens.path_count];
            for k in 0..ens.steps {
                let gk = s_index + k;
                let t = grid.t_nodes[gk];
                let rrow = sol.r.row(gk);
                for (acc, &xp) in per_path.iter_mut().zip(ens.x(k)) {
                    *acc += xi.eval(t, xp, s0, horizon) * interp_row(grid, rrow, xp) * grid.dt;
                }
            }
            let e = Estimate::from_sample(&per_path);
            let stat = 3.0 * e.half_width / right.abs().max(RELATIVE_FLOOR);
            parts.push(CheckPart::gated(
                format!("{}:paths", xi.name()),
                relative(e.value, right),
                tol.measure_rel,
                stat,
            ));
        }
        parts.push(CheckPart::info(format!("{}:cells", xi.name()), right));
    }
    let mut prov = Provenance::grid(grid);
    if let Some(e) = ens {
        prov = prov.with_paths(e.path_count, e.seed);
    }
    Ok(CheckReport::new("measure-identity", prov, parts))
}

/// `mu([t1, t2) x F)` from cells against the chain expectation of
/// `int 1_F dK` summed over all starting nodes.
pub fn check_interval_measure(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    t1: f64,
    t2: f64,
    f_interval: (f64, f64),
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    if !(t1 <= t2) {
        return Err(Error::InvalidArgument(format!("need t1 <= t2, got [{t1}, {t2}]")));
    }
    let k1 = ((t1 / grid.dt).round().max(0.0) as usize).min(grid.nt);
    let k2 = ((t2 / grid.dt).round().max(0.0) as usize).min(grid.nt);
    let in_f = |x: f64| x >= f_interval.0 && x <= f_interval.1;
    let mut left = 0.0;
    let mut right = 0.0;
    if k1 < k2 {
        for k in k1..k2 {
            for i in 1..=grid.nx {
                if in_f(grid.x_nodes[i]) {
                    left += sol.r.get(k, i) * grid.dx * grid.dt;
                }
            }
        }
        // the chain recursion does not depend on where it is started
        let dp = rbsde_chain_dp(spec, grid, k1, 1)?;
        let dk = &dp.chain().expect("chain fields").dk;
        let mut w = vec![grid.dx; grid.n_nodes()];
        w[0] = 0.0;
        w[grid.nx + 1] = 0.0;
        for k in k1..k2 {
            for i in 1..=grid.nx {
                if in_f(grid.x_nodes[i]) {
                    right += w[i] * dk.get(k, i);
                }
            }
            w = ChainStep::new(spec, grid, k, KernelScheme::Implicit)?.push(&w);
        }
    }
    let parts = vec![
        CheckPart::gated("relative", relative(right, left), tol.measure_rel, 0.0),
        CheckPart::info("cells", left),
        CheckPart::info("chain", right),
    ];
    Ok(CheckReport::new("interval-measure", Provenance::grid(grid), parts))
}

/// Normalized complementarity `|sum (u - h) r| / sum r`.
pub fn skorokhod_ratio(sol: &ObstacleSolution) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..sol.u.n_times() - 1 {
        for i in 1..sol.u.n_nodes() - 1 {
            let r = sol.r.get(k, i);
            num += (sol.u.get(k, i) - sol.h.get(k, i)) * r;
            den += r;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num.abs() / den
    }
}

/// Complementarity of a solution; `n_penalty` selects the `C / n` budget.
pub fn check_skorokhod(
    sol: &ObstacleSolution,
    grid: &SpaceTimeGrid,
    n_penalty: Option<f64>,
    tol: &VerifyTolerances,
) -> CheckReport {
    let budget = match n_penalty {
        Some(n) => tol.skorokhod_penalized_c / n,
        None => tol.skorokhod,
    };
    let parts = vec![CheckPart::gated("normalized", skorokhod_ratio(sol), budget, 0.0)];
    CheckReport::new("skorokhod", Provenance::grid(grid), parts)
}

/// Along paths, `K~_t = int r(theta, X_theta) d theta` must close the
/// backward equation for `(u(t, X_t), sigma du/dx(t, X_t))`, and its mean
/// must match the chain value of `E K_T`.
pub fn check_ac_measure(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    ens: &PathEnsemble,
    degree: usize,
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let s_index = ensemble_start(grid, ens)?;
    let x_index = grid.nearest_node(ens.x_start);
    let m = ens.path_count;
    let dt = grid.dt;
    let mut resid = vec![0.0; m];
    let mut energy = vec![0.0; m];
    let mut ktil = vec![0.0; m];
    for k in 0..ens.steps {
        let gk = s_index + k;
        let t = grid.t_nodes[gk];
        let urow = sol.u.row(gk);
        let unext = sol.u.row(gk + 1);
        let zrow = sigma_grad_row(spec, grid, &sol.u, gk);
        let rrow = sol.r.row(gk);
        let xs = ens.x(k);
        let xn = ens.x(k + 1);
        let dw = ens.dw(k);
        for j in 0..m {
            let u0 = interp_row(grid, urow, xs[j]);
            let u1 = interp_row(grid, unext, xn[j]);
            let z = interp_row(grid, &zrow, xs[j]);
            let dkt = interp_row(grid, rrow, xs[j]) * dt;
            let f = spec.driver.eval(t, xs[j], u0, z);
            let e = u0 - u1 - f * dt - dkt + z * dw[j];
            resid[j] += e * e;
            energy[j] += z * z * dt;
            ktil[j] += dkt;
        }
    }
    let r = Estimate::from_sample(&resid);
    let e = Estimate::from_sample(&energy);
    let kt = Estimate::from_sample(&ktil);
    let dp = rbsde_chain_dp(spec, grid, s_index, x_index)?;
    let k_chain = dp.k_terminal.value;
    let refl = rbsde_reflected_mc(spec, ens, degree)?;

    let mut parts = Vec::new();
    let scale = e.value.max(RELATIVE_FLOOR);
    parts.push(CheckPart::gated("residual", r.value / scale, tol.ac_residual_rel, 3.0 * r.half_width / scale));
    let stat = 3.0 * kt.half_width / k_chain.abs().max(RELATIVE_FLOOR);
    parts.push(CheckPart::gated("k-terminal", relative(kt.value, k_chain), tol.measure_rel, stat));
    parts.push(CheckPart::info("k-paths", kt.value));
    parts.push(CheckPart::info("k-chain", k_chain));
    parts.push(CheckPart::info("k-reflected-mc", refl.k_terminal.value));
    let prov = Provenance::grid(grid).with_paths(m, ens.seed);
    Ok(CheckReport::new("ac-measure", prov, parts))
}

/// `E_{s,x} |phi(X_T)|` for every start node at time index `s_index`.
fn expected_abs(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    s_index: usize,
    phi: &dyn Fn(f64) -> f64,
    square: bool,
) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = grid.x_nodes.iter().map(|&x| if square { phi(x).powi(2) } else { phi(x).abs() }).collect();
    for k in (s_index..grid.nt).rev() {
        v = ChainStep::new(spec, grid, k, KernelScheme::Implicit)?.expect(&v);
    }
    Ok(v)
}

/// Ratio `int E_{0,x}|phi(X_T)| rho dx / int |phi| rho dx`.
fn weighted_ratio(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, phi: &dyn Fn(f64) -> f64) -> Result<f64> {
    let ev = expected_abs(spec, grid, 0, phi, false)?;
    let w = spec.weight;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..=grid.nx {
        let x = grid.x_nodes[i];
        num += ev[i] * w.rho(x);
        den += phi(x).abs() * w.rho(x);
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Time-integrated ratio for the running term `g`.
fn weighted_g_ratio(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, g: &dyn Fn(f64, f64) -> f64) -> Result<f64> {
    let w = spec.weight;
    let n = grid.n_nodes();
    let mut acc = vec![0.0; n];
    let mut den = 0.0;
    // backward accumulation of sum_k P_0 ... P_{k-1} |g_k| dt
    for k in (0..grid.nt).rev() {
        let t = grid.t_nodes[k];
        let gk: Vec<f64> = grid.x_nodes.iter().map(|&x| g(t, x).abs()).collect();
        for i in 1..=grid.nx {
            den += gk[i] * w.rho(grid.x_nodes[i]) * grid.dt;
        }
        let pushed = if k + 1 < grid.nt {
            ChainStep::new(spec, grid, k, KernelScheme::Implicit)?.expect(&acc)
        } else {
            acc.clone()
        };
        for i in 0..n {
            acc[i] = pushed[i] + gk[i] * grid.dt;
        }
    }
    let num: f64 = (1..=grid.nx).map(|i| acc[i] * w.rho(grid.x_nodes[i])).sum();
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Named terminal probe for weighted bounds.
pub struct ProbeFunction<'a> {
    pub name: String,
    pub phi: &'a (dyn Fn(f64) -> f64 + Sync),
}

/// Named running-term probe for weighted bounds.
pub struct RunningProbe<'a> {
    pub name: String,
    pub g: &'a (dyn Fn(f64, f64) -> f64 + Sync),
}

/// Weighted two-sided bounds for `E_{s,x}|phi(X_T)|` and for the running
/// term, their stability under refinement, and the pointwise
/// `E|phi(X_T)|^2 <= C rho^-2(x) (T - s)^(-1/2) ||phi||^2_{2,rho}` shape.
pub fn check_weighted_bounds(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    coarse: &SpaceTimeGrid,
    probes: &[ProbeFunction<'_>],
    running: &[RunningProbe<'_>],
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let mut parts = Vec::new();
    let width = tol.bounds_hi - tol.bounds_lo;
    let centre = 0.5 * (tol.bounds_hi + tol.bounds_lo);
    for p in probes {
        let fine = weighted_ratio(spec, grid, p.phi)?;
        let rough = weighted_ratio(spec, coarse, p.phi)?;
        // inside [lo, hi] iff |R - centre| <= width / 2
        parts.push(CheckPart::gated(format!("{}:ratio", p.name), (fine - centre).abs(), 0.5 * width, 0.0));
        parts.push(CheckPart::gated(format!("{}:refinement", p.name), relative(fine, rough), tol.refinement_rel, 0.0));
        parts.push(CheckPart::info(format!("{}:ratio-value", p.name), fine));
        parts.push(CheckPart::info(format!("{}:pointwise-max", p.name), pointwise_ratio(spec, grid, p.phi)?));
    }
    for r in running {
        let fine = weighted_g_ratio(spec, grid, r.g)?;
        let rough = weighted_g_ratio(spec, coarse, r.g)?;
        parts.push(CheckPart::gated(format!("{}:ratio", r.name), (fine - centre).abs(), 0.5 * width, 0.0));
        parts.push(CheckPart::gated(format!("{}:refinement", r.name), relative(fine, rough), tol.refinement_rel, 0.0));
        parts.push(CheckPart::info(format!("{}:ratio-value", r.name), fine));
    }
    Ok(CheckReport::new("weighted-bounds", Provenance::grid(grid), parts))
}

/// `max_{s, x} E_{s,x}|phi(X_T)|^2 rho^2(x) (T - s)^(1/2) / ||phi||^2_{2,rho}`
/// over a few start times.
pub fn pointwise_ratio(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, phi: &dyn Fn(f64) -> f64) -> Result<f64> {
    let w = spec.weight;
    let norm: f64 =
        (1..=grid.nx).map(|i| (phi(grid.x_nodes[i]) * w.rho(grid.x_nodes[i])).powi(2)).sum::<f64>() * grid.dx;
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for frac in [0.0, 0.5, 0.9] {
        let s_index = ((frac * grid.nt as f64) as usize).min(grid.nt - 1);
        let ev = expected_abs(spec, grid, s_index, phi, true)?;
        let span = (grid.horizon() - grid.t_nodes[s_index]).sqrt();
        for i in 1..=grid.nx {
            worst = worst.max(ev[i] * w.rho(grid.x_nodes[i]).powi(2) * span / norm);
        }
    }
    Ok(worst)
}

/// Penalized solutions approach the projected one from below and close the gap.
pub fn check_minimality(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    schedule: &[f64],
    opts: &SolverOptions,
    tol: &VerifyTolerances,
) -> Result<CheckReport> {
    let study = penalization_study(spec, grid, schedule, opts)?;
    let mut worst_excess: f64 = 0.0;
    for lvl in &study.levels {
        for (a, b) in lvl.u.values().iter().zip(study.psor.u.values()) {
            worst_excess = worst_excess.max(a - b);
        }
    }
    let gap = study.rows.last().map(|r| r.distance_to_psor).unwrap_or(0.0);
    let parts = vec![
        CheckPart::gated("excess-over-psor", worst_excess.max(0.0), opts.mono_tol, 0.0),
        CheckPart::gated("final-gap", gap, tol.minimality_gap, 0.0),
        CheckPart::info("levels", study.levels.len() as f64),
    ];
    Ok(CheckReport::new("minimality", Provenance::grid(grid), parts))
}

/// One level of a bias pre-study.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationLevel {
    pub nx: usize,
    pub nt: usize,
    /// `max(|u - Y0| - 3 CI, 0) / (dt + dx^2)` over the probes.
    pub c_u: f64,
    /// `max(relative Z distance - 3 CI, 0)`; does not scale with the grid.
    pub z_excess: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub levels: Vec<CalibrationLevel>,
    pub c_bias_u: f64,
    pub z_floor: f64,
}

/// Fit the bias constants on three resolutions `(nx, nt) * 2^-j`, `j = 2, 1, 0`,
/// and inflate the largest by `safety`.
pub fn calibrate_bias(
    spec: &ObstacleProblemSpec,
    nx: usize,
    nt: usize,
    probes: &[(f64, f64)],
    mc: &McParams,
    opts: &SolverOptions,
    safety: f64,
) -> Result<Calibration> {
    let mut levels = Vec::new();
    for j in [2u32, 1, 0] {
        let lnx = (nx >> j).max(4);
        let lnt = (nt >> j).max(4);
        let grid = SpaceTimeGrid::for_spec(spec, lnx, lnt)?;
        let sol = crate::solver::solve_psor(spec, &grid, opts)?;
        let h = grid.dt + grid.dx * grid.dx;
        let mut c_u: f64 = 0.0;
        for (idx, &(s, x)) in probes.iter().enumerate() {
            let (k, i) = snap_probe(&grid, s, x);
            let ens =
                simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, mc.paths, probe_seed(mc.seed, idx))?;
            let refl = rbsde_reflected_mc(spec, &ens, mc.degree)?;
            let excess = ((sol.u.get(k, i) - refl.y0.value).abs() - 3.0 * refl.y0.half_width).max(0.0);
            c_u = c_u.max(excess / h);
        }
        let (k, i) = probes.first().map(|&(s, x)| snap_probe(&grid, s, x)).unwrap_or((0, grid.nearest_node(0.0)));
        let ens = simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, mc.paths, mc.seed)?;
        let z = check_representation_z(spec, &grid, &sol, &ens, mc.degree, &VerifyTolerances::default())?;
        let z_excess = z.part("relative-mean-square").map(|p| (p.discrepancy - p.stat_budget).max(0.0)).unwrap_or(0.0);
        levels.push(CalibrationLevel { nx: lnx, nt: lnt, c_u, z_excess });
    }
    let c_bias_u = safety * levels.iter().fold(0.0f64, |m, l| m.max(l.c_u));
    let z_floor = safety * levels.iter().fold(0.0f64, |m, l| m.max(l.z_excess));
    Ok(Calibration { levels, c_bias_u, z_floor })
}
