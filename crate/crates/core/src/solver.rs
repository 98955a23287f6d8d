//! Backward implicit-Euler solvers for the obstacle problem.
//!
//! Every step solves, on interior nodes,
//!
//! ```text
//! (I - dt A_k) u_k = u_{k+1} + dt f(t_k, x, u_k, sigma D u_k) + dt r_k
//! ```
//!
//! where the reflection density `r_k` is either the penalty
//! `n (u_k - h_k)^-` or the multiplier of the complementarity problem
//! `min(u_k - h_k, M u_k - b_k) = 0`. The reflection measure is carried as
//! a cell density: `mu(cell) = r * dx * dt`.

use crate::error::{Error, Result};
use crate::grid::{assemble_operator, central_difference, GridField, SpaceTimeGrid};
use crate::par;
use crate::problem::{BoundaryMode, ObstacleProblemSpec, SpaceTimeFn, Weight};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub inner_tol: f64,
    pub lcp_tol: f64,
    pub mono_tol: f64,
    /// `None` means `1e-9 * (1 + ||h||_inf)`.
    pub contact_tol: Option<f64>,
    pub omega: f64,
    pub max_inner: usize,
    pub stall_window: usize,
    pub stability_c: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-11,
            lcp_tol: 1e-10,
            mono_tol: 1e-8,
            contact_tol: None,
            omega: 1.5,
            max_inner: 20_000,
            stall_window: 500,
            stability_c: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    PenalizedLimit,
    Psor,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::PenalizedLimit => write!(f, "penalized-limit"),
            Method::Psor => write!(f, "psor"),
        }
    }
}

/// Solution of the penalized equation at one penalty level.
#[derive(Clone, Debug)]
pub struct PenalizedSolution {
    pub n_penalty: f64,
    pub u: GridField,
    /// `n (u - h)^-`.
    pub r: GridField,
    /// Inner iterations per time step, indexed by time index (last entry 0).
    pub inner_iterations: Vec<usize>,
    pub h: GridField,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Largest final residual over the time steps.
    pub max_residual: f64,
    /// Sweeps (PSOR) or inner iterations (penalized) per time index.
    pub iterations: Vec<usize>,
}

/// Solution `(u, mu)` of the obstacle problem on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSolution {
    pub u: GridField,
    pub r: GridField,
    pub h: GridField,
    contact: Vec<bool>,
    pub contact_tol: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl ObstacleSolution {
    fn new(
        u: GridField,
        r: GridField,
        h: GridField,
        contact_tol: f64,
        method: Method,
        diagnostics: Diagnostics,
    ) -> Self {
        let contact = u.values().iter().zip(h.values()).map(|(u, h)| u - h <= contact_tol).collect();
        Self { u, r, h, contact, contact_tol, method, diagnostics }
    }

    #[inline]
    pub fn is_contact(&self, k: usize, i: usize) -> bool {
        self.contact[k * self.u.n_nodes() + i]
    }

    /// Number of contact nodes among interior nodes of slices `0..nt`.
    pub fn contact_count(&self) -> usize {
        let nx2 = self.u.n_nodes();
        (0..self.u.n_times() - 1).map(|k| (1..nx2 - 1).filter(|&i| self.is_contact(k, i)).count()).sum()
    }
}

impl PenalizedSolution {
    pub fn to_obstacle_solution(&self, contact_tol: f64) -> ObstacleSolution {
        let diag = Diagnostics { max_residual: 0.0, iterations: self.inner_iterations.clone() };
        ObstacleSolution::new(self.u.clone(), self.r.clone(), self.h.clone(), contact_tol, Method::PenalizedLimit, diag)
    }
}

/// Grid data of one obstacle problem.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub h: GridField,
    /// Dirichlet values at `(x_lo, x_hi)` per time index.
    pub boundary: Vec<(f64, f64)>,
    pub terminal: Vec<f64>,
}

impl DiscreteProblem {
    pub fn from_spec(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid) -> Self {
        let h = GridField::from_fn(grid, |t, x| spec.obstacle.h(t, x));
        let lo = grid.lo();
        let hi = grid.hi();
        let boundary = grid.t_nodes.iter().map(|&t| (spec.boundary_value(t, lo), spec.boundary_value(t, hi))).collect();
        let mut terminal: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.phi(x)).collect();
        if spec.truncation.mode == BoundaryMode::ClampToData {
            terminal[0] = spec.boundary_value(grid.horizon(), lo);
            terminal[grid.nx + 1] = spec.boundary_value(grid.horizon(), hi);
        }
        Self { h, boundary, terminal }
    }

    pub fn with_obstacle_field(&self, h: GridField) -> Self {
        Self { h, boundary: self.boundary.clone(), terminal: self.terminal.clone() }
    }

    fn default_contact_tol(&self) -> f64 {
        let hmax = self.h.values().iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
        1e-9 * (1.0 + hmax)
    }
}

/// Where the driver values come from during a solve.
#[derive(Clone, Copy)]
pub enum DriverSource<'a> {
    /// `f(t, x, u, sigma D u)` evaluated at the unknown slice.
    Spec,
    /// Precomputed values (Picard iteration with a frozen argument).
    Frozen(&'a GridField),
}

/// How the reflection term is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerMethod {
    Penalized(f64),
    Psor,
}

/// Driver values `f(t_k, x_i, u_i, sigma_i D u_i)` on a full node row.
pub fn driver_row(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, k: usize, u: &[f64], sigma: &[f64]) -> Vec<f64> {
    let t = grid.t_nodes[k];
    let du = central_difference(grid, u);
    (0..u.len()).map(|i| spec.driver.eval(t, grid.x_nodes[i], u[i], sigma[i] * du[i])).collect()
}

/// Driver values of a whole field.
pub fn driver_field(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, u: &GridField) -> GridField {
    let mut out = GridField::zeros(grid);
    for k in 0..=grid.nt {
        let sigma = sigma_row(spec, grid, k);
        let row = driver_row(spec, grid, k, u.row(k), &sigma);
        out.row_mut(k).copy_from_slice(&row);
    }
    out
}

fn sigma_row(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, k: usize) -> Vec<f64> {
    let t = grid.t_nodes[k];
    grid.x_nodes.iter().map(|&x| spec.coefficients.sigma(t, x)).collect()
}

struct StepSystem {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl StepSystem {
    fn new(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, k: usize) -> Result<Self> {
        let op = assemble_operator(spec, grid, k)?;
        let dt = grid.dt;
        Ok(Self {
            sub: op.lower.iter().map(|l| -dt * l).collect(),
            diag: op.diag.iter().map(|d| 1.0 - dt * d).collect(),
            sup: op.upper.iter().map(|u| -dt * u).collect(),
        })
    }

    /// `(M u)_j - b_j` for interior node `j + 1`.
    #[inline]
    fn residual(&self, u: &[f64], b: &[f64], j: usize) -> f64 {
        self.sub[j] * u[j] + self.diag[j] * u[j + 1] + self.sup[j] * u[j + 2] - b[j]
    }
}

enum Reflection {
    Penalty(f64),
    Projection,
}

struct StepOutcome {
    iterations: usize,
    residual: f64,
}

fn set_ends(spec: &ObstacleProblemSpec, problem: &DiscreteProblem, k: usize, u: &mut [f64]) {
    let n = u.len();
    match spec.truncation.mode {
        BoundaryMode::ClampToData => {
            u[0] = problem.boundary[k].0;
            u[n - 1] = problem.boundary[k].1;
        }
        BoundaryMode::Reflecting => {
            u[0] = u[1];
            u[n - 1] = u[n - 2];
        }
    }
}

/// Backward sweep shared by the penalized and the projected solvers.
fn march(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    problem: &DiscreteProblem,
    driver: DriverSource<'_>,
    reflection: Reflection,
    opts: &SolverOptions,
) -> Result<(GridField, GridField, Diagnostics)> {
    let nx = grid.nx;
    let dt = grid.dt;
    let mut u = GridField::zeros(grid);
    let mut r = GridField::zeros(grid);
    u.row_mut(grid.nt).copy_from_slice(&problem.terminal);
    let mut diag = Diagnostics { max_residual: 0.0, iterations: vec![0; grid.nt + 1] };
    let implicit_driver = matches!(driver, DriverSource::Spec) && spec.driver.depends_on_solution();

    for k in (0..grid.nt).rev() {
        let sys = StepSystem::new(spec, grid, k)?;
        let sigma = sigma_row(spec, grid, k);
        let next: Vec<f64> = u.row(k + 1).to_vec();
        let h = problem.h.row(k).to_vec();
        let mut cur = next.clone();
        set_ends(spec, problem, k, &mut cur);

        let rhs = |cur: &[f64]| -> Vec<f64> {
            let f: Vec<f64> = match driver {
                DriverSource::Spec => driver_row(spec, grid, k, cur, &sigma),
                DriverSource::Frozen(field) => field.row(k).to_vec(),
            };
            (0..nx).map(|j| next[j + 1] + dt * f[j + 1]).collect()
        };

        let mut b = rhs(&cur);
        let outcome = match reflection {
            Reflection::Penalty(n) => {
                let pen = dt * n;
                let mut it = 0;
                loop {
                    it += 1;
                    let mut change: f64 = 0.0;
                    for j in 0..nx {
                        let i = j + 1;
                        let s = b[j] - sys.sub[j] * cur[i - 1] - sys.sup[j] * cur[i + 1];
                        let v = s / sys.diag[j];
                        let new = if v >= h[i] { v } else { (s + pen * h[i]) / (sys.diag[j] + pen) };
                        change = change.max((new - cur[i]).abs());
                        cur[i] = new;
                    }
                    set_ends(spec, problem, k, &mut cur);
                    if implicit_driver {
                        b = rhs(&cur);
                    }
                    if change <= opts.inner_tol {
                        break StepOutcome { iterations: it, residual: change };
                    }
                    if it >= opts.max_inner {
                        return Err(Error::InnerDivergence { t_index: k, iterations: it, last_change: change });
                    }
                }
            }
            Reflection::Projection => {
                let omega = opts.omega;
                let mut sweeps = 0;
                let mut best = f64::INFINITY;
                let mut best_at = 0;
                loop {
                    sweeps += 1;
                    for j in 0..nx {
                        let i = j + 1;
                        let s = b[j] - sys.sub[j] * cur[i - 1] - sys.sup[j] * cur[i + 1];
                        let gs = s / sys.diag[j];
                        cur[i] = h[i].max(cur[i] + omega * (gs - cur[i]));
                    }
                    set_ends(spec, problem, k, &mut cur);
                    if implicit_driver {
                        b = rhs(&cur);
                    }
                    let mut res: f64 = 0.0;
                    for j in 0..nx {
                        let w = sys.residual(&cur, &b, j);
                        res = res.max((cur[j + 1] - h[j + 1]).min(w).abs());
                    }
                    if res <= opts.lcp_tol {
                        break StepOutcome { iterations: sweeps, residual: res };
                    }
                    if res < best * (1.0 - 1e-3) {
                        best = res;
                        best_at = sweeps;
                    } else if sweeps - best_at >= opts.stall_window {
                        return Err(Error::LcpStall { t_index: k, sweeps, residual: res });
                    }
                    if sweeps >= opts.max_inner {
                        return Err(Error::LcpStall { t_index: k, sweeps, residual: res });
                    }
                }
            }
        };

        diag.iterations[k] = outcome.iterations;
        diag.max_residual = diag.max_residual.max(outcome.residual);
        let r_row = r.row_mut(k);
        match reflection {
            Reflection::Penalty(n) => {
                for i in 1..=nx {
                    r_row[i] = n * (h[i] - cur[i]).max(0.0);
                }
            }
            Reflection::Projection => {
                let tol = opts.contact_tol.unwrap_or_else(|| problem.default_contact_tol());
                for j in 0..nx {
                    let i = j + 1;
                    if cur[i] - h[i] <= tol {
                        r_row[i] = sys.residual(&cur, &b, j).max(0.0) / dt;
                    }
                }
            }
        }
        u.row_mut(k).copy_from_slice(&cur);
    }
    Ok((u, r, diag))
}

/// Penalized equation at level `n_penalty` for a prepared discrete problem.
pub fn solve_penalized_discrete(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    problem: &DiscreteProblem,
    driver: DriverSource<'_>,
    n_penalty: f64,
    opts: &SolverOptions,
) -> Result<PenalizedSolution> {
    if !(n_penalty >= 1.0) {
        return Err(Error::InvalidArgument(format!("penalty level must be >= 1, got {n_penalty}")));
    }
    let (u, r, diag) = march(spec, grid, problem, driver, Reflection::Penalty(n_penalty), opts)?;
    Ok(PenalizedSolution { n_penalty, u, r, inner_iterations: diag.iterations, h: problem.h.clone() })
}

/// Backward implicit Euler for the penalized equation; the penalty is
/// resolved node by node inside a Gauss-Seidel fixed point.
pub fn solve_penalized(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    n_penalty: f64,
    opts: &SolverOptions,
) -> Result<PenalizedSolution> {
    let problem = DiscreteProblem::from_spec(spec, grid);
    solve_penalized_discrete(spec, grid, &problem, DriverSource::Spec, n_penalty, opts)
}

pub fn solve_psor_discrete(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    problem: &DiscreteProblem,
    driver: DriverSource<'_>,
    opts: &SolverOptions,
) -> Result<ObstacleSolution> {
    let (u, r, diag) = march(spec, grid, problem, driver, Reflection::Projection, opts)?;
    let tol = opts.contact_tol.unwrap_or_else(|| problem.default_contact_tol());
    Ok(ObstacleSolution::new(u, r, problem.h.clone(), tol, Method::Psor, diag))
}

/// Projected SOR on the per-step complementarity problem.
pub fn solve_psor(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, opts: &SolverOptions) -> Result<ObstacleSolution> {
    let problem = DiscreteProblem::from_spec(spec, grid);
    solve_psor_discrete(spec, grid, &problem, DriverSource::Spec, opts)
}

/// Discrete `W^{0,1}`-type norm: `sqrt(sum (w^2 + (dw/dx)^2) dx dt)`.
pub fn space_time_h1_norm(grid: &SpaceTimeGrid, w: &GridField) -> f64 {
    let mut s = 0.0;
    for k in 0..grid.nt {
        let row = w.row(k);
        for i in 1..=grid.nx {
            s += row[i] * row[i];
        }
        for i in 0..=grid.nx {
            let g = (row[i + 1] - row[i]) / grid.dx;
            s += g * g;
        }
    }
    (s * grid.dx * grid.dt).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub n_penalty: f64,
    pub sup_increment: f64,
    pub norm_increment: f64,
    pub distance_to_psor: f64,
}

#[derive(Clone, Debug)]
pub struct PenalizationStudy {
    pub rows: Vec<StudyRow>,
    pub levels: Vec<PenalizedSolution>,
    pub limit: ObstacleSolution,
    pub psor: ObstacleSolution,
    /// Most negative `u_n - u_{n_prev}` seen (0 when monotone).
    pub worst_decrease: f64,
}

/// Run the penalized solver along an increasing schedule and check that
/// `u_n` increases nodewise towards the projected solution.
pub fn penalization_study(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    schedule: &[f64],
    opts: &SolverOptions,
) -> Result<PenalizationStudy> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("penalty schedule must be nonempty and strictly increasing".into()));
    }
    let problem = DiscreteProblem::from_spec(spec, grid);
    let psor = solve_psor_discrete(spec, grid, &problem, DriverSource::Spec, opts)?;
    let contact_tol = opts.contact_tol.unwrap_or_else(|| problem.default_contact_tol());

    let first = solve_penalized_discrete(spec, grid, &problem, DriverSource::Spec, schedule[0], opts)?;
    let mut levels = vec![first];
    if levels[0].r.sup_norm() > 0.0 {
        let rest: Vec<Result<PenalizedSolution>> =
            par::map(&schedule[1..], |&n| solve_penalized_discrete(spec, grid, &problem, DriverSource::Spec, n, opts));
        for lvl in rest {
            levels.push(lvl?);
        }
    }

    let mut rows = Vec::with_capacity(levels.len());
    let mut worst_decrease: f64 = 0.0;
    for (idx, lvl) in levels.iter().enumerate() {
        let (sup_inc, norm_inc) = if idx == 0 {
            (0.0, 0.0)
        } else {
            let prev = &levels[idx - 1];
            let diff = lvl.u.zip_map(&prev.u, |a, b| a - b);
            for k in 0..=grid.nt {
                for (i, &d) in diff.row(k).iter().enumerate() {
                    if d < worst_decrease {
                        worst_decrease = d;
                    }
                    if d < -opts.mono_tol {
                        return Err(Error::MonotonicityViolation {
                            from: prev.n_penalty,
                            to: lvl.n_penalty,
                            t_index: k,
                            x_index: i,
                            drop: -d,
                        });
                    }
                }
            }
            (diff.sup_norm(), space_time_h1_norm(grid, &diff))
        };
        rows.push(StudyRow {
            n_penalty: lvl.n_penalty,
            sup_increment: sup_inc,
            norm_increment: norm_inc,
            distance_to_psor: lvl.u.sup_distance(&psor.u),
        });
    }
    let limit = levels.last().expect("at least one level").to_obstacle_solution(contact_tol);
    Ok(PenalizationStudy { rows, levels, limit, psor, worst_decrease })
}

/// `gamma = 1 + 4 L^2 + 8 Lambda^2 L^2 / lambda + Lambda / (2 lambda)`.
pub fn contraction_gamma(lipschitz: f64, lambda: f64, big_lambda: f64) -> f64 {
    let l2 = lipschitz * lipschitz;
    1.0 + 4.0 * l2 + 8.0 * big_lambda * big_lambda * l2 / lambda + big_lambda / (2.0 * lambda)
}

/// Discrete analogue of
/// `sup_t ||w_g(t)||^2_{2,rho} + ||w_g||^2_{2,rho,T} + lambda/2 ||grad w_g||^2_{2,rho,T}`
/// with `w_g(t) = exp(gamma t / 2) w(t)`; returns the square root.
pub fn weighted_v_norm(grid: &SpaceTimeGrid, w: &GridField, weight: Weight, gamma: f64, lambda: f64) -> f64 {
    let rho2: Vec<f64> = grid.x_nodes.iter().map(|&x| weight.rho(x).powi(2)).collect();
    let rho2_face: Vec<f64> = (0..=grid.nx).map(|i| weight.rho(grid.face(i)).powi(2)).collect();
    let mut sup: f64 = 0.0;
    let mut l2 = 0.0;
    let mut grad = 0.0;
    for k in 0..=grid.nt {
        let e = (gamma * grid.t_nodes[k]).exp();
        let row = w.row(k);
        let slice: f64 = (1..=grid.nx).map(|i| row[i] * row[i] * rho2[i]).sum::<f64>() * grid.dx * e;
        sup = sup.max(slice);
        if k < grid.nt {
            l2 += slice * grid.dt;
            let g: f64 = (0..=grid.nx)
                .map(|i| {
                    let d = (row[i + 1] - row[i]) / grid.dx;
                    d * d * rho2_face[i]
                })
                .sum();
            grad += g * grid.dx * e * grid.dt;
        }
    }
    (sup + l2 + 0.5 * lambda * grad).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardTrace {
    pub gamma: f64,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed-point iteration `v -> Phi(v)`, where `Phi(v)` solves the obstacle
/// problem with the driver frozen at `f(., ., v, sigma D v)`.
pub fn picard_outer(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    inner: InnerMethod,
    max_outer: usize,
    outer_tol: f64,
    opts: &SolverOptions,
) -> Result<(ObstacleSolution, PicardTrace)> {
    let problem = DiscreteProblem::from_spec(spec, grid);
    let contact_tol = opts.contact_tol.unwrap_or_else(|| problem.default_contact_tol());
    let c = &spec.coefficients;
    let gamma = contraction_gamma(spec.driver.lipschitz, c.lambda, c.big_lambda);
    let solve = |src: DriverSource<'_>| -> Result<ObstacleSolution> {
        match inner {
            InnerMethod::Psor => solve_psor_discrete(spec, grid, &problem, src, opts),
            InnerMethod::Penalized(n) => {
                Ok(solve_penalized_discrete(spec, grid, &problem, src, n, opts)?.to_obstacle_solution(contact_tol))
            }
        }
    };

    if !spec.driver.depends_on_solution() {
        let sol = solve(DriverSource::Spec)?;
        let trace = PicardTrace { gamma, distances: vec![], ratios: vec![], iterations: 1, converged: true };
        return Ok((sol, trace));
    }

    let mut v = GridField::zeros(grid);
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut above_one = 0;
    let mut last: Option<ObstacleSolution> = None;
    let mut converged = false;
    for _ in 0..max_outer.max(1) {
        let frozen = driver_field(spec, grid, &v);
        let sol = solve(DriverSource::Frozen(&frozen))?;
        let d = weighted_v_norm(grid, &sol.u.zip_map(&v, |a, b| a - b), spec.weight, gamma, c.lambda);
        if let Some(&prev) = distances.last() {
            let ratio = if prev > 0.0 { d / prev } else { 0.0 };
            ratios.push(ratio);
            if ratio > 1.0 {
                above_one += 1;
                if above_one >= 3 {
                    return Err(Error::NoContraction { ratios });
                }
            } else {
                above_one = 0;
            }
        }
        distances.push(d);
        v = sol.u.clone();
        last = Some(sol);
        if d <= outer_tol {
            converged = true;
            break;
        }
    }
    let iterations = distances.len();
    let sol = last.expect("at least one outer iteration");
    Ok((sol, PicardTrace { gamma, distances, ratios, iterations, converged }))
}

/// Smooth bump supported strictly inside the truncation, equal to 1 at the centre.
pub fn default_cutoff(grid: &SpaceTimeGrid) -> Vec<f64> {
    let lo = grid.lo();
    let hi = grid.hi();
    let centre = 0.5 * (lo + hi);
    let half = 0.4 * (hi - lo);
    grid.x_nodes
        .iter()
        .map(|&x| {
            let s = (x - centre) / half;
            if s.abs() < 1.0 {
                (1.0 - 1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-time residual of the energy identity
///
/// ```text
/// ||u(t) xi||^2 + int_t^T <a du, d(u xi^2)> - ||phi xi||^2
///     - 2 int_t^T <f_u, u xi^2> - 2 int_t^T int xi^2 u dmu
/// ```
///
/// for a spatial cutoff `xi` vanishing at the truncation ends.
pub fn energy_identity_residual(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    xi: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    if xi.len() != n {
        return Err(Error::InvalidArgument(format!("cutoff has {} values, grid has {n} nodes", xi.len())));
    }
    if xi[0] != 0.0 || xi[n - 1] != 0.0 {
        return Err(Error::InvalidArgument("cutoff must vanish at the truncation ends".into()));
    }
    let dx = grid.dx;
    let dt = grid.dt;
    let xi2: Vec<f64> = xi.iter().map(|v| v * v).collect();
    let f = driver_field(spec, grid, &sol.u);
    let norm2 = |row: &[f64]| -> f64 { (0..n).map(|i| (row[i] * xi[i]).powi(2)).sum::<f64>() * dx };

    // per-step contributions of the time integrals
    let mut step_terms = vec![0.0; grid.nt];
    for (k, term) in step_terms.iter_mut().enumerate() {
        let t = grid.t_nodes[k];
        let u = sol.u.row(k);
        let w: Vec<f64> = (0..n).map(|i| u[i] * xi2[i]).collect();
        let flux: f64 = (0..=grid.nx)
            .map(|i| spec.coefficients.a(t, grid.face(i)) * (u[i + 1] - u[i]) * (w[i + 1] - w[i]) / dx)
            .sum();
        let drive: f64 = (1..=grid.nx).map(|i| f.get(k, i) * w[i]).sum::<f64>() * dx;
        let reflect: f64 = (1..=grid.nx).map(|i| sol.r.get(k, i) * w[i]).sum::<f64>() * dx;
        *term = dt * (flux - 2.0 * drive - 2.0 * reflect);
    }
    let phi_term = norm2(sol.u.row(grid.nt));
    let mut out = vec![0.0; grid.nt + 1];
    let mut acc = 0.0;
    out[grid.nt] = norm2(sol.u.row(grid.nt)) - phi_term;
    for k in (0..grid.nt).rev() {
        acc += step_terms[k];
        out[k] = norm2(sol.u.row(k)) + acc - phi_term;
    }
    Ok(out)
}

/// Energy residuals under time refinement at fixed `nx`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRefinement {
    pub nts: Vec<usize>,
    /// `max_k |residual_k|` per level.
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log residual` against `log dt`.
    pub rate: f64,
}

pub fn energy_refinement(
    spec: &ObstacleProblemSpec,
    nx: usize,
    nts: &[usize],
    opts: &SolverOptions,
) -> Result<EnergyRefinement> {
    if nts.len() < 2 {
        return Err(Error::InvalidArgument("need at least two time resolutions".into()));
    }
    let residuals = par::map(nts, |&nt| -> Result<f64> {
        let grid = SpaceTimeGrid::for_spec(spec, nx, nt)?;
        let sol = solve_psor(spec, &grid, opts)?;
        let res = energy_identity_residual(spec, &grid, &sol, &default_cutoff(&grid))?;
        Ok(res.iter().fold(0.0f64, |m, r| m.max(r.abs())))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let pts: Vec<(f64, f64)> = nts
        .iter()
        .zip(&residuals)
        .map(|(&nt, &r)| ((spec.horizon / nt as f64).ln(), r.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(EnergyRefinement { nts: nts.to_vec(), residuals, rate: sxy / sxx })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AprioriReport {
    pub left: f64,
    pub right: f64,
    pub ratio: f64,
}

/// Both sides of the weighted a priori estimate (without the unknown constant).
pub fn apriori_norm_report(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    weight: Weight,
    dominating: &GridField,
) -> AprioriReport {
    let dx = grid.dx;
    let dt = grid.dt;
    let rho2: Vec<f64> = grid.x_nodes.iter().map(|&x| weight.rho(x).powi(2)).collect();
    let rho2_face: Vec<f64> = (0..=grid.nx).map(|i| weight.rho(grid.face(i)).powi(2)).collect();
    let l2 = |row: &[f64]| -> f64 { (1..=grid.nx).map(|i| row[i] * row[i] * rho2[i]).sum::<f64>() * dx };
    let grad2 = |row: &[f64]| -> f64 {
        (0..=grid.nx).map(|i| ((row[i + 1] - row[i]) / dx).powi(2) * rho2_face[i]).sum::<f64>() * dx
    };
    let p_plus = dominating.map(|v| v.max(0.0));

    let mut sup_u: f64 = 0.0;
    let mut sup_p: f64 = 0.0;
    let mut grad_u = 0.0;
    let mut mu_u = 0.0;
    let mut p_terms = 0.0;
    for k in 0..=grid.nt {
        let u = sol.u.row(k);
        let p = p_plus.row(k);
        sup_u = sup_u.max(l2(u));
        sup_p = sup_p.max(l2(p));
        if k < grid.nt {
            grad_u += grad2(u) * dt;
            mu_u += (1..=grid.nx).map(|i| u[i].abs() * rho2[i] * sol.r.get(k, i)).sum::<f64>() * dx * dt;
            let pn = p_plus.row(k + 1);
            let dp: Vec<f64> = (0..p.len()).map(|i| (pn[i] - p[i]) / dt).collect();
            let t = grid.t_nodes[k];
            let g: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.driver.g(t, x)).collect();
            p_terms += (l2(&dp) + grad2(p) + l2(&g)) * dt;
        }
    }
    let left = sup_u + grad_u + mu_u;
    let right = l2(sol.u.row(grid.nt)) + sup_p + p_terms;
    let ratio = if right > 0.0 {
        left / right
    } else if left == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    AprioriReport { left, right, ratio }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    pub solution_distance: f64,
    pub obstacle_distance: f64,
    pub ratio: f64,
    pub passed: bool,
}

/// Sup-distance of the projected solutions for two obstacles over slices
/// with `t <= T - delta`, against the sup-distance of the obstacles.
pub fn obstacle_stability(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    h1: SpaceTimeFn,
    h2: SpaceTimeFn,
    delta: f64,
    opts: &SolverOptions,
) -> Result<StabilityReport> {
    let growth = spec.obstacle.growth;
    let s1 = spec.with_obstacle(h1, growth);
    let s2 = spec.with_obstacle(h2, growth);
    let pair = [s1, s2];
    let sols: Vec<Result<ObstacleSolution>> = par::map(&pair, |s| solve_psor(s, grid, opts));
    let mut it = sols.into_iter();
    let u1 = it.next().expect("two solves")?;
    let u2 = it.next().expect("two solves")?;
    let k_max = ((grid.horizon() - delta) / grid.dt + 1e-9).floor().clamp(0.0, grid.nt as f64) as usize;
    let solution_distance = u1.u.sup_distance_through(&u2.u, k_max);
    let obstacle_distance = u1.h.sup_distance(&u2.h);
    let ratio = if obstacle_distance > 0.0 {
        solution_distance / obstacle_distance
    } else if solution_distance == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(StabilityReport { solution_distance, obstacle_distance, ratio, passed: ratio <= opts.stability_c })
}

#[derive(Clone, Debug)]
pub struct ReplacementReport {
    pub max_difference: f64,
    pub unconstrained: GridField,
}

/// Solve with `h` and with `max(h, u_free)`, `u_free` being the solution
/// without obstacle; the two should coincide.
pub fn obstacle_replacement_check(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<ReplacementReport> {
    let problem = DiscreteProblem::from_spec(spec, grid);
    let free_problem = problem.with_obstacle_field(problem.h.map(|_| f64::NEG_INFINITY));
    let free = solve_psor_discrete(spec, grid, &free_problem, DriverSource::Spec, opts)?;
    let raised = problem.with_obstacle_field(problem.h.zip_map(&free.u, f64::max));
    let pair = [problem, raised];
    let sols: Vec<Result<ObstacleSolution>> =
        par::map(&pair, |p| solve_psor_discrete(spec, grid, p, DriverSource::Spec, opts));
    let mut it = sols.into_iter();
    let a = it.next().expect("two solves")?;
    let b = it.next().expect("two solves")?;
    Ok(ReplacementReport { max_difference: a.u.sup_distance(&b.u), unconstrained: free.u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Coefficients, Driver, ObstacleData, Truncation};
    use std::sync::Arc;

    fn build(
        coef: Coefficients,
        driver: Driver,
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
        horizon: f64,
    ) -> ObstacleProblemSpec {
        ObstacleProblemSpec::new(
            coef,
            driver,
            ObstacleData::new(Arc::new(h), Arc::new(phi), (1e6, 2.0)),
            horizon,
            Weight::new(1.0),
            Truncation { lo, hi, mode: BoundaryMode::ClampToData },
        )
        .unwrap()
    }

    fn constant_spec(c: f64) -> ObstacleProblemSpec {
        build(Coefficients::constant(1.0), Driver::zero(), move |_, _| c, move |_| c, -2.0, 2.0, 1.0)
    }

    fn parabola_spec() -> ObstacleProblemSpec {
        build(
            Coefficients::constant(1.0),
            Driver::zero(),
            |_, x| 1.0 - x * x,
            |x| (1.0 - x * x).max(0.0),
            -3.0,
            3.0,
            0.5,
        )
    }

    fn put_spec(rate: f64) -> ObstacleProblemSpec {
        let payoff = |x: f64| (1.0 - x.exp()).max(0.0);
        build(
            Coefficients::constant(0.09),
            Driver::linear(rate, 0.0, 0.0),
            move |_, x| payoff(x),
            payoff,
            -3.0,
            3.0,
            1.0,
        )
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let spec = constant_spec(0.7);
        let grid = SpaceTimeGrid::for_spec(&spec, 20, 10).unwrap();
        let opts = SolverOptions::default();
        for n in [1.0, 64.0, 4096.0] {
            let s = solve_penalized(&spec, &grid, n, &opts).unwrap();
            assert!(s.u.values().iter().all(|&v| (v - 0.7).abs() < 1e-13));
            // only rounding of the tridiagonal sweep can activate the penalty
            assert!(s.r.sup_norm() <= n * 1e-14);
        }
        let p = solve_psor(&spec, &grid, &opts).unwrap();
        assert!(p.u.values().iter().all(|&v| (v - 0.7).abs() < 1e-13));
        assert!(p.r.sup_norm() < 1e-12);
        assert!(p.diagnostics.iterations[..grid.nt].iter().all(|&it| it == 1));
    }

    #[test]
    fn penalty_below_one_is_rejected() {
        let spec = constant_spec(0.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 5, 5).unwrap();
        assert!(matches!(
            solve_penalized(&spec, &grid, 0.5, &SolverOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn inactive_obstacle_gives_plain_implicit_stepping() {
        let spec = build(Coefficients::constant(1.0), Driver::zero(), |_, _| -1e6, |x| (-x * x).exp(), -6.0, 6.0, 0.5);
        let grid = SpaceTimeGrid::for_spec(&spec, 60, 20).unwrap();
        let s = solve_penalized(&spec, &grid, 1024.0, &SolverOptions::default()).unwrap();
        assert_eq!(s.r.sup_norm(), 0.0);
        // independent stepping with the Thomas solver
        let mut v: Vec<f64> = grid.x_nodes.iter().map(|&x| (-x * x).exp()).collect();
        let b0 = spec.boundary_value(0.0, grid.lo());
        for k in (0..grid.nt).rev() {
            let m = assemble_operator(&spec, &grid, k).unwrap().implicit_matrix(grid.dt);
            let mut rhs = v.clone();
            rhs[0] = b0;
            rhs[grid.nx + 1] = b0;
            v = m.solve(&rhs);
            for i in 0..grid.n_nodes() {
                assert!((v[i] - s.u.get(k, i)).abs() < 1e-9, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn negative_source_at_zero_obstacle_has_unit_density() {
        // u = 0 and -du/dt - Au - f = 1, so the reflection density is 1
        let spec = build(Coefficients::constant(1.0), Driver::constant(-1.0), |_, _| 0.0, |_| 0.0, -1.0, 1.0, 1.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 15, 10).unwrap();
        let opts = SolverOptions::default();
        let p = solve_psor(&spec, &grid, &opts).unwrap();
        for k in 0..grid.nt {
            for i in 1..=grid.nx {
                assert!(p.u.get(k, i).abs() < 1e-12);
                assert!((p.r.get(k, i) - 1.0).abs() < 1e-9);
            }
        }
        let s = solve_penalized(&spec, &grid, 1000.0, &opts).unwrap();
        for k in 0..grid.nt {
            for i in 1..=grid.nx {
                // exact discrete value: u = -1/n in the interior away from the ends is approached
                assert!(s.u.get(k, i) <= 0.0 && s.u.get(k, i) >= -1.0 / 1000.0 - 1e-12);
                assert!(s.r.get(k, i) <= 1.0 + 1e-9);
            }
        }
    }

    /// Dense active-set enumeration for `min(u - h, M u - b) = 0`.
    fn brute_force_lcp(m: &[Vec<f64>], b: &[f64], h: &[f64]) -> Vec<f64> {
        let n = b.len();
        for mask in 0u32..(1 << n) {
            let contact: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let free: Vec<usize> = (0..n).filter(|&i| !contact[i]).collect();
            let mut u: Vec<f64> = h.to_vec();
            if !free.is_empty() {
                let f = free.len();
                let mut a = vec![vec![0.0; f + 1]; f];
                for (r, &i) in free.iter().enumerate() {
                    for (c, &j) in free.iter().enumerate() {
                        a[r][c] = m[i][j];
                    }
                    a[r][f] = b[i] - (0..n).filter(|&j| contact[j]).map(|j| m[i][j] * h[j]).sum::<f64>();
                }
                for c in 0..f {
                    let piv = (c..f).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
                    a.swap(c, piv);
                    for r in 0..f {
                        if r != c {
                            let q = a[r][c] / a[c][c];
                            for cc in c..=f {
                                a[r][cc] -= q * a[c][cc];
                            }
                        }
                    }
                }
                for (r, &i) in free.iter().enumerate() {
                    u[i] = a[r][f] / a[r][r];
                }
            }
            let ok = (0..n).all(|i| {
                let w: f64 = (0..n).map(|j| m[i][j] * u[j]).sum::<f64>() - b[i];
                if contact[i] {
                    w >= -1e-12
                } else {
                    u[i] >= h[i] - 1e-12
                }
            });
            if ok {
                return u;
            }
        }
        panic!("no complementary solution found");
    }

    #[test]
    fn psor_matches_active_set_enumeration() {
        let spec = parabola_spec();
        let grid = SpaceTimeGrid::for_spec(&spec, 11, 6).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        let nx = grid.nx;
        let mut next: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.phi(x)).collect();
        next[0] = spec.boundary_value(grid.horizon(), grid.lo());
        next[nx + 1] = spec.boundary_value(grid.horizon(), grid.hi());
        let mut any_contact = false;
        for k in (0..grid.nt).rev() {
            let op = assemble_operator(&spec, &grid, k).unwrap();
            let t = grid.t_nodes[k];
            let bl = spec.boundary_value(t, grid.lo());
            let br = spec.boundary_value(t, grid.hi());
            let mut m = vec![vec![0.0; nx]; nx];
            let mut b = vec![0.0; nx];
            for j in 0..nx {
                m[j][j] = 1.0 - grid.dt * op.diag[j];
                b[j] = next[j + 1];
                if j > 0 {
                    m[j][j - 1] = -grid.dt * op.lower[j];
                } else {
                    b[j] += grid.dt * op.lower[j] * bl;
                }
                if j + 1 < nx {
                    m[j][j + 1] = -grid.dt * op.upper[j];
                } else {
                    b[j] += grid.dt * op.upper[j] * br;
                }
            }
            let h: Vec<f64> = (1..=nx).map(|i| spec.obstacle.h(t, grid.x_nodes[i])).collect();
            let u = brute_force_lcp(&m, &b, &h);
            for j in 0..nx {
                assert!((u[j] - sol.u.get(k, j + 1)).abs() < 1e-8, "k={k} j={j}");
                if sol.is_contact(k, j + 1) {
                    any_contact = true;
                } else {
                    assert_eq!(sol.r.get(k, j + 1), 0.0);
                }
                assert!(sol.r.get(k, j + 1) >= 0.0);
            }
            next = vec![bl];
            next.extend_from_slice(&u);
            next.push(br);
        }
        assert!(any_contact);
    }

    #[test]
    fn penalized_solutions_increase_towards_psor() {
        let spec = put_spec(0.05);
        let grid = SpaceTimeGrid::for_spec(&spec, 60, 40).unwrap();
        let schedule: Vec<f64> = (4..=12).map(|j| 2f64.powi(j)).collect();
        let study = penalization_study(&spec, &grid, &schedule, &SolverOptions::default()).unwrap();
        assert_eq!(study.rows.len(), schedule.len());
        assert_eq!(study.rows[0].sup_increment, 0.0);
        for w in study.rows.windows(2) {
            assert!(w[1].distance_to_psor <= w[0].distance_to_psor + 1e-12);
        }
        // gap shrinks roughly like 1/n
        let first = &study.rows[2];
        let last = study.rows.last().unwrap();
        assert!(last.distance_to_psor * last.n_penalty <= 4.0 * first.distance_to_psor * first.n_penalty);
        assert!(last.distance_to_psor < 2e-3);
        for lvl in &study.levels {
            for (a, b) in lvl.u.values().iter().zip(study.psor.u.values()) {
                assert!(*a <= b + 1e-8);
            }
        }
    }

    #[test]
    fn study_stops_after_one_level_when_obstacle_is_inactive() {
        let spec = build(Coefficients::constant(1.0), Driver::zero(), |_, _| -1e6, |x| (-x * x).exp(), -5.0, 5.0, 0.5);
        let grid = SpaceTimeGrid::for_spec(&spec, 40, 20).unwrap();
        let study = penalization_study(&spec, &grid, &[16.0, 32.0, 64.0], &SolverOptions::default()).unwrap();
        assert_eq!(study.rows.len(), 1);
        assert_eq!(study.limit.r.sup_norm(), 0.0);
    }

    #[test]
    fn schedule_must_increase() {
        let spec = constant_spec(0.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 5, 5).unwrap();
        assert!(penalization_study(&spec, &grid, &[4.0, 4.0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn inner_iteration_cap_is_reported() {
        let spec = put_spec(0.05);
        let grid = SpaceTimeGrid::for_spec(&spec, 40, 10).unwrap();
        let opts = SolverOptions { max_inner: 2, ..SolverOptions::default() };
        assert!(matches!(solve_penalized(&spec, &grid, 1e4, &opts), Err(Error::InnerDivergence { .. })));
    }

    #[test]
    fn gamma_formula() {
        assert_eq!(contraction_gamma(0.0, 1.0, 1.0), 1.5);
        let g = contraction_gamma(0.5, 0.5, 2.0);
        assert!((g - (1.0 + 1.0 + 8.0 * 4.0 * 0.25 / 0.5 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn picard_single_pass_without_dependence() {
        let spec = parabola_spec();
        let grid = SpaceTimeGrid::for_spec(&spec, 30, 20).unwrap();
        let (sol, trace) = picard_outer(&spec, &grid, InnerMethod::Psor, 20, 1e-10, &SolverOptions::default()).unwrap();
        assert_eq!(trace.iterations, 1);
        assert!(trace.ratios.is_empty());
        let direct = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        assert_eq!(sol.u.values(), direct.u.values());
    }

    #[test]
    fn picard_contracts_to_the_direct_solution() {
        let spec = put_spec(0.05);
        let grid = SpaceTimeGrid::for_spec(&spec, 50, 40).unwrap();
        let opts = SolverOptions::default();
        let (sol, trace) = picard_outer(&spec, &grid, InnerMethod::Psor, 30, 1e-9, &opts).unwrap();
        assert!(trace.converged, "{trace:?}");
        assert!(trace.ratios.iter().skip(1).all(|&r| r <= 0.6), "{trace:?}");
        let direct = solve_psor(&spec, &grid, &opts).unwrap();
        assert!(sol.u.sup_distance(&direct.u) < 1e-7);
    }

    #[test]
    fn energy_residual_vanishes_for_constants() {
        let spec = constant_spec(1.3);
        let grid = SpaceTimeGrid::for_spec(&spec, 30, 20).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        let res = energy_identity_residual(&spec, &grid, &sol, &default_cutoff(&grid)).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-12), "{res:?}");
    }

    #[test]
    fn energy_residual_is_first_order() {
        let spec = put_spec(0.05);
        let opts = SolverOptions::default();
        let mut errs = Vec::new();
        for nt in [50, 100, 200] {
            let grid = SpaceTimeGrid::for_spec(&spec, 80, nt).unwrap();
            let sol = solve_psor(&spec, &grid, &opts).unwrap();
            let res = energy_identity_residual(&spec, &grid, &sol, &default_cutoff(&grid)).unwrap();
            errs.push(res.iter().fold(0.0f64, |m, r| m.max(r.abs())));
        }
        let slope = (errs[0] / errs[2]).log2() / 2.0;
        assert!(slope >= 0.9, "{errs:?}");
    }

    #[test]
    fn cutoff_must_vanish_at_ends() {
        let spec = constant_spec(1.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 10, 5).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        assert!(energy_identity_residual(&spec, &grid, &sol, &vec![1.0; grid.n_nodes()]).is_err());
        assert!(energy_identity_residual(&spec, &grid, &sol, &[0.0; 3]).is_err());
    }

    #[test]
    fn apriori_report_of_zero_data() {
        let spec = constant_spec(0.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 20, 10).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        let rep = apriori_norm_report(&spec, &grid, &sol, spec.weight, &sol.h);
        assert_eq!(rep.left, 0.0);
        assert_eq!(rep.ratio, 0.0);
    }

    #[test]
    fn apriori_report_of_constant_data() {
        let spec = constant_spec(2.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 20, 10).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        let rep = apriori_norm_report(&spec, &grid, &sol, spec.weight, &sol.h);
        let l2: f64 = (1..=grid.nx).map(|i| 4.0 * spec.weight.rho(grid.x_nodes[i]).powi(2)).sum::<f64>() * grid.dx;
        assert!((rep.left - l2).abs() < 1e-12 * l2);
        assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
    }

    #[test]
    fn stability_under_constant_shift() {
        let spec = parabola_spec();
        let grid = SpaceTimeGrid::for_spec(&spec, 11, 8).unwrap();
        let opts = SolverOptions::default();
        let same =
            obstacle_stability(&spec, &grid, Arc::new(|_, x| 1.0 - x * x), Arc::new(|_, x| 1.0 - x * x), 0.0, &opts)
                .unwrap();
        assert_eq!(same.solution_distance, 0.0);
        // lowering the obstacle keeps phi admissible
        let eps = 1e-3;
        let rep = obstacle_stability(
            &spec,
            &grid,
            Arc::new(|_, x| 1.0 - x * x),
            Arc::new(move |_, x| 1.0 - x * x - eps),
            0.0,
            &opts,
        )
        .unwrap();
        assert!((rep.obstacle_distance - eps).abs() < 1e-12);
        assert!(rep.solution_distance <= eps * (1.0 + 1e-6));
        assert!(rep.passed);
    }

    #[test]
    fn replacement_by_max_with_free_solution() {
        let opts = SolverOptions::default();
        let spec = put_spec(0.05);
        let grid = SpaceTimeGrid::for_spec(&spec, 80, 60).unwrap();
        let rep = obstacle_replacement_check(&spec, &grid, &opts).unwrap();
        assert!(rep.max_difference <= 5e-4, "{}", rep.max_difference);
        let spec = constant_spec(0.3);
        let grid = SpaceTimeGrid::for_spec(&spec, 10, 5).unwrap();
        assert_eq!(obstacle_replacement_check(&spec, &grid, &opts).unwrap().max_difference, 0.0);
    }

    #[test]
    fn terminal_slice_is_phi() {
        let spec = parabola_spec();
        let grid = SpaceTimeGrid::for_spec(&spec, 20, 10).unwrap();
        let opts = SolverOptions::default();
        let p = solve_psor(&spec, &grid, &opts).unwrap();
        let s = solve_penalized(&spec, &grid, 100.0, &opts).unwrap();
        for i in 1..=grid.nx {
            let phi = spec.obstacle.phi(grid.x_nodes[i]);
            assert_eq!(p.u.get(grid.nt, i), phi);
            assert_eq!(s.u.get(grid.nt, i), phi);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn psor_output_is_complementary(c in -1.0f64..1.0, amp in 0.0f64..0.8, src in -2.0f64..2.0) {
            let spec = build(
                Coefficients::sine(1.0, amp, 0.5),
                Driver::constant(src),
                move |_, x| c - x * x,
                move |x| (c - x * x).max(0.0),
                -2.0, 2.0, 0.3,
            );
            let grid = SpaceTimeGrid::for_spec(&spec, 25, 12).unwrap();
            let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
            let rmax = sol.r.sup_norm().max(1.0);
            for k in 0..grid.nt {
                for i in 1..=grid.nx {
                    let gap = sol.u.get(k, i) - sol.h.get(k, i);
                    let r = sol.r.get(k, i);
                    proptest::prop_assert!(gap >= -1e-12);
                    proptest::prop_assert!(r >= 0.0);
                    proptest::prop_assert!(gap.min(r / rmax) <= 1e-9);
                }
            }
        }

        #[test]
        fn penalized_is_monotone_in_n(c in -0.5f64..1.0, n0 in 1.0f64..50.0, factor in 1.5f64..10.0) {
            let spec = build(
                Coefficients::constant(0.5),
                Driver::linear(0.1, 0.0, 0.0),
                move |_, x| c - x * x,
                move |x| (c - x * x).max(0.0),
                -2.0, 2.0, 0.4,
            );
            let grid = SpaceTimeGrid::for_spec(&spec, 20, 10).unwrap();
            let opts = SolverOptions::default();
            let a = solve_penalized(&spec, &grid, n0, &opts).unwrap();
            let b = solve_penalized(&spec, &grid, n0 * factor, &opts).unwrap();
            for (x, y) in a.u.values().iter().zip(b.u.values()) {
                proptest::prop_assert!(*y >= x - 1e-10);
            }
        }
    }
}
