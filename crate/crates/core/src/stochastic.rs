//! Path simulation, moment probes and reflected-BSDE schemes.
//!
//! Paths follow the Euler-Maruyama scheme for
//! `dX = 1/2 a_x(t, X) dt + sqrt(a(t, X)) dW`, the Ito form of the
//! generator `1/2 d/dx(a d/dx)`. Path `m` draws its normals from its own
//! ChaCha8 stream `(seed, m)`, so an ensemble does not depend on how the
//! work is split between threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{
    central_difference, interp_row, transition_kernel, ChainStep, GridField, KernelScheme, SpaceTimeGrid,
};
use crate::par;
use crate::problem::{BoundaryMode, ObstacleProblemSpec};
use crate::solver::ObstacleSolution;

/// Paths per work unit; reductions run over blocks in index order.
const BLOCK: usize = 4096;

/// Point estimate with the half-width of its 95% interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, half_width: 0.0 }
    }

    /// Mean and `1.96 * stderr` of a sample.
    pub fn from_sample(sample: &[f64]) -> Self {
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        if sample.len() < 2 {
            return Self::exact(mean);
        }
        let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { value: mean, half_width: 1.96 * (var / n).sqrt() }
    }
}

/// Simulated paths, stored by time step.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub s_start: f64,
    pub x_start: f64,
    pub dt_path: f64,
    pub steps: usize,
    pub path_count: usize,
    pub seed: u64,
    x: Vec<f64>,
    dw: Vec<f64>,
}

impl PathEnsemble {
    /// Positions of every path at step `k`.
    #[inline]
    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.path_count..(k + 1) * self.path_count]
    }

    /// Brownian increments over `[t_k, t_{k+1}]`.
    #[inline]
    pub fn dw(&self, k: usize) -> &[f64] {
        &self.dw[k * self.path_count..(k + 1) * self.path_count]
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.s_start + k as f64 * self.dt_path
    }

    pub fn path(&self, m: usize) -> Vec<f64> {
        (0..=self.steps).map(|k| self.x[k * self.path_count + m]).collect()
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn step_count(spec: &ObstacleProblemSpec, s: f64, dt_path: f64) -> Result<usize> {
    let span = spec.horizon - s;
    if !(s >= 0.0 && span > 0.0) {
        return Err(Error::InvalidArgument(format!("start time {s} must lie in [0, T)")));
    }
    if !(dt_path > 0.0 && dt_path <= span * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("path step {dt_path} must lie in (0, T - s]")));
    }
    Ok(((span / dt_path).round() as usize).max(1))
}

/// Walk one path, calling `visit(k, x_k, dw_k)`; `dw` is 0 at the last point.
fn walk_path(
    spec: &ObstacleProblemSpec,
    s: f64,
    x0: f64,
    dt: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(usize, f64, f64),
) {
    let c = &spec.coefficients;
    let sq = dt.sqrt();
    let mut x = x0;
    for k in 0..steps {
        let t = s + k as f64 * dt;
        let z: f64 = StandardNormal.sample(rng);
        let dw = sq * z;
        visit(k, x, dw);
        let (a, a_x) = c.a_and_slope(t, x).unwrap_or_else(|| (c.a(t, x), 0.0));
        x += 0.5 * a_x * dt + a.sqrt() * dw;
    }
    visit(steps, x, 0.0);
}

/// Euler-Maruyama ensemble started at `(s, x)`.
pub fn simulate_paths(
    spec: &ObstacleProblemSpec,
    s: f64,
    x: f64,
    dt_path: f64,
    path_count: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !spec.coefficients.has_derivative() {
        return Err(Error::MissingDerivative);
    }
    if path_count == 0 {
        return Err(Error::InvalidArgument("path count must be positive".into()));
    }
    let steps = step_count(spec, s, dt_path)?;
    let dt = (spec.horizon - s) / steps as f64;
    let blocks: Vec<usize> = (0..path_count.div_ceil(BLOCK)).collect();
    // each block is generated path-major, then scattered into time-major storage
    let parts: Vec<(Vec<f64>, Vec<f64>)> = par::map(&blocks, |&b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(path_count);
        let width = hi - lo;
        let mut xs = vec![0.0; width * (steps + 1)];
        let mut ws = vec![0.0; width * steps];
        for m in lo..hi {
            let mut rng = path_rng(seed, m);
            let off = m - lo;
            walk_path(spec, s, x, dt, steps, &mut rng, |k, xk, dw| {
                xs[k * width + off] = xk;
                if k < steps {
                    ws[k * width + off] = dw;
                }
            });
        }
        (xs, ws)
    });
    let mut xs = vec![0.0; path_count * (steps + 1)];
    let mut ws = vec![0.0; path_count * steps];
    for (b, (px, pw)) in parts.into_iter().enumerate() {
        let lo = b * BLOCK;
        let width = px.len() / (steps + 1);
        for k in 0..=steps {
            xs[k * path_count + lo..k * path_count + lo + width].copy_from_slice(&px[k * width..(k + 1) * width]);
            if k < steps {
                ws[k * path_count + lo..k * path_count + lo + width].copy_from_slice(&pw[k * width..(k + 1) * width]);
            }
        }
    }
    Ok(PathEnsemble { s_start: s, x_start: x, dt_path: dt, steps, path_count, seed, x: xs, dw: ws })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRatio {
    pub p: f64,
    pub ratio: f64,
    pub half_width: f64,
    /// `E sup_t |X_t|^p`.
    pub sup_moment: f64,
    /// `E |X_T|^p`.
    pub terminal_moment: f64,
    pub path_count: usize,
}

#[derive(Clone, Copy, Default)]
struct RatioSums {
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
    n: usize,
}

impl RatioSums {
    fn push(&mut self, a: f64, b: f64) {
        self.a += a;
        self.b += b;
        self.aa += a * a;
        self.bb += b * b;
        self.ab += a * b;
        self.n += 1;
    }

    fn merge(mut self, o: RatioSums) -> Self {
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.bb += o.bb;
        self.ab += o.ab;
        self.n += o.n;
        self
    }

    /// Ratio of means with a delta-method interval.
    fn finish(&self, p: f64) -> MomentRatio {
        let n = self.n as f64;
        let ma = self.a / n;
        let mb = self.b / n;
        let ratio = ma / mb;
        let va = self.aa / n - ma * ma;
        let vb = self.bb / n - mb * mb;
        let cab = self.ab / n - ma * mb;
        let var = ((va - 2.0 * ratio * cab + ratio * ratio * vb) / (n * mb * mb)).max(0.0);
        MomentRatio { p, ratio, half_width: 1.96 * var.sqrt(), sup_moment: ma, terminal_moment: mb, path_count: self.n }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 4.0) {
        return Err(Error::InvalidArgument(format!("moment exponent must be >= 4, got {p}")));
    }
    Ok(())
}

/// `E sup_t |X_t|^p / E |X_T|^p` over a stored ensemble.
pub fn moment_ratio_probe(ens: &PathEnsemble, p: f64) -> Result<MomentRatio> {
    check_exponent(p)?;
    let blocks: Vec<usize> = (0..ens.path_count.div_ceil(BLOCK)).collect();
    let parts = par::map(&blocks, |&b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(ens.path_count);
        let mut sums = RatioSums::default();
        let mut sup = vec![0.0f64; hi - lo];
        for k in 0..=ens.steps {
            for (s, x) in sup.iter_mut().zip(&ens.x(k)[lo..hi]) {
                *s = s.max(x.abs());
            }
        }
        for (j, s) in sup.iter().enumerate() {
            sums.push(s.powf(p), ens.x(ens.steps)[lo + j].abs().powf(p));
        }
        sums
    });
    Ok(parts.into_iter().fold(RatioSums::default(), RatioSums::merge).finish(p))
}

/// Same quantity as [`moment_ratio_probe`] on the ensemble that
/// [`simulate_paths`] would produce, without storing it.
pub fn moment_ratio_streaming(
    spec: &ObstacleProblemSpec,
    s: f64,
    x: f64,
    dt_path: f64,
    path_count: usize,
    seed: u64,
    p: f64,
) -> Result<MomentRatio> {
    check_exponent(p)?;
    if !spec.coefficients.has_derivative() {
        return Err(Error::MissingDerivative);
    }
    let steps = step_count(spec, s, dt_path)?;
    let dt = (spec.horizon - s) / steps as f64;
    let blocks: Vec<usize> = (0..path_count.div_ceil(BLOCK)).collect();
    let parts = par::map(&blocks, |&b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(path_count);
        let mut sums = RatioSums::default();
        for m in lo..hi {
            let mut rng = path_rng(seed, m);
            let mut sup = 0.0f64;
            let mut last = 0.0;
            walk_path(spec, s, x, dt, steps, &mut rng, |_, xk, _| {
                sup = sup.max(xk.abs());
                last = xk;
            });
            sums.push(sup.powf(p), last.abs().powf(p));
        }
        sums
    });
    Ok(parts.into_iter().fold(RatioSums::default(), RatioSums::merge).finish(p))
}

/// `E int_s^T |g(t, X_t)|^2 dt` by the trapezoidal rule along each path.
pub fn estimate_g_integral(ens: &PathEnsemble, g: impl Fn(f64, f64) -> f64 + Sync) -> Estimate {
    let per_path: Vec<f64> = {
        let mut acc = vec![0.0; ens.path_count];
        for k in 0..=ens.steps {
            let w = if k == 0 || k == ens.steps { 0.5 } else { 1.0 } * ens.dt_path;
            let t = ens.time(k);
            for (a, &x) in acc.iter_mut().zip(ens.x(k)) {
                *a += w * g(t, x).powi(2);
            }
        }
        acc
    };
    Estimate::from_sample(&per_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ChainDp,
    PenalizedMc,
    ReflectedMc,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::ChainDp => write!(f, "chain-dp"),
            Scheme::PenalizedMc => write!(f, "penalized-mc"),
            Scheme::ReflectedMc => write!(f, "reflected-mc"),
        }
    }
}

/// Per-node fields of the chain recursion (rows before `s_index` are unused).
#[derive(Clone, Debug)]
pub struct ChainFields {
    pub s_index: usize,
    pub x_index: usize,
    pub y: GridField,
    pub z: GridField,
    /// Increment of `K` over `[t_k, t_{k+1}]`, stored at row `k`.
    pub dk: GridField,
    /// Driver values used by the recursion.
    pub f: GridField,
}

/// Per-path fields of a regression scheme, stored by time step.
#[derive(Clone, Debug)]
pub struct PathFields {
    pub steps: usize,
    pub path_count: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// `dk[k * M + m]` is the increment of `K` on path `m` over `[t_k, t_{k+1}]`.
    pub dk: Vec<f64>,
}

impl PathFields {
    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.path_count..(k + 1) * self.path_count]
    }

    pub fn dk_at(&self, k: usize) -> &[f64] {
        &self.dk[k * self.path_count..(k + 1) * self.path_count]
    }

    /// `K_T` per path.
    pub fn terminal_k(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.path_count];
        for k in 0..self.steps {
            for (o, d) in out.iter_mut().zip(self.dk_at(k)) {
                *o += d;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum EstimateFields {
    Chain(ChainFields),
    Paths(PathFields),
}

#[derive(Clone, Debug)]
pub struct RbsdeEstimate {
    pub scheme: Scheme,
    pub y0: Estimate,
    pub z0: Estimate,
    /// `E K_T`.
    pub k_terminal: Estimate,
    pub n_penalty: Option<f64>,
    pub degree: Option<usize>,
    pub fields: EstimateFields,
}

impl RbsdeEstimate {
    pub fn chain(&self) -> Option<&ChainFields> {
        match &self.fields {
            EstimateFields::Chain(c) => Some(c),
            EstimateFields::Paths(_) => None,
        }
    }

    pub fn paths(&self) -> Option<&PathFields> {
        match &self.fields {
            EstimateFields::Paths(p) => Some(p),
            EstimateFields::Chain(_) => None,
        }
    }
}

fn set_chain_ends(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, k: usize, v: &mut [f64]) {
    let n = v.len();
    match spec.truncation.mode {
        BoundaryMode::ClampToData => {
            let t = grid.t_nodes[k];
            v[0] = spec.boundary_value(t, grid.lo());
            v[n - 1] = spec.boundary_value(t, grid.hi());
        }
        BoundaryMode::Reflecting => {
            v[0] = v[1];
            v[n - 1] = v[n - 2];
        }
    }
}

/// Exact backward dynamic programming on the implicit grid chain:
/// `C_k = P_k Y_{k+1} + dt f`, `Y_k = max(h_k, C_k)`, `dK_k = (h_k - C_k)^+`.
pub fn rbsde_chain_dp(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    s_index: usize,
    x_index: usize,
) -> Result<RbsdeEstimate> {
    if s_index >= grid.nt {
        return Err(Error::InvalidArgument(format!("s_index {s_index} must be < nt = {}", grid.nt)));
    }
    if x_index == 0 || x_index > grid.nx {
        return Err(Error::InvalidArgument(format!("x_index {x_index} is not an interior node")));
    }
    let n = grid.n_nodes();
    let dt = grid.dt;
    let mut y = GridField::zeros(grid);
    let mut z = GridField::zeros(grid);
    let mut dk = GridField::zeros(grid);
    let mut fu = GridField::zeros(grid);
    let mut last: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.phi(x)).collect();
    set_chain_ends(spec, grid, grid.nt, &mut last);
    y.row_mut(grid.nt).copy_from_slice(&last);
    let sig_last: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.coefficients.sigma(grid.horizon(), x)).collect();
    let d_last = central_difference(grid, &last);
    for i in 0..n {
        z.set(grid.nt, i, sig_last[i] * d_last[i]);
    }
    let dependent = spec.driver.depends_on_solution();

    for k in (s_index..grid.nt).rev() {
        let t = grid.t_nodes[k];
        let step = ChainStep::new(spec, grid, k, KernelScheme::Implicit)?;
        let mut next = y.row(k + 1).to_vec();
        set_chain_ends(spec, grid, k, &mut next);
        let cont = step.expect(&next);
        let h: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.h(t, x)).collect();
        let sigma: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.coefficients.sigma(t, x)).collect();

        let mut cur: Vec<f64> = (0..n).map(|i| h[i].max(cont[i])).collect();
        set_chain_ends(spec, grid, k, &mut cur);
        let mut f = vec![0.0; n];
        let mut c = cont.clone();
        for _ in 0..if dependent { 100 } else { 1 } {
            let du = central_difference(grid, &cur);
            for i in 0..n {
                f[i] = spec.driver.eval(t, grid.x_nodes[i], cur[i], sigma[i] * du[i]);
                c[i] = cont[i] + dt * f[i];
            }
            let mut new: Vec<f64> = (0..n).map(|i| h[i].max(c[i])).collect();
            set_chain_ends(spec, grid, k, &mut new);
            let change = new.iter().zip(&cur).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            cur = new;
            if change <= 1e-15 * (1.0 + cur.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                break;
            }
        }
        // the recorded driver row is the one that produced `cur`
        for i in 1..n - 1 {
            dk.set(k, i, (h[i] - c[i]).max(0.0));
        }
        let du = central_difference(grid, &cur);
        for i in 0..n {
            z.set(k, i, sigma[i] * du[i]);
        }
        fu.row_mut(k).copy_from_slice(&f);
        y.row_mut(k).copy_from_slice(&cur);
    }

    // E K_T by pushing the point mass forward
    let mut p = vec![0.0; n];
    p[x_index] = 1.0;
    let mut k_mean = 0.0;
    for k in s_index..grid.nt {
        k_mean += p.iter().zip(dk.row(k)).map(|(a, b)| a * b).sum::<f64>();
        p = ChainStep::new(spec, grid, k, KernelScheme::Implicit)?.push(&p);
    }

    Ok(RbsdeEstimate {
        scheme: Scheme::ChainDp,
        y0: Estimate::exact(y.get(s_index, x_index)),
        z0: Estimate::exact(z.get(s_index, x_index)),
        k_terminal: Estimate::exact(k_mean),
        n_penalty: None,
        degree: None,
        fields: EstimateFields::Chain(ChainFields { s_index, x_index, y, z, dk, f: fu }),
    })
}

/// Least-squares projection on standardized monomials `1, z, ..., z^degree`.
/// Returns fitted values for every target.
fn regress(x: &[f64], targets: &[&[f64]], degree: usize, step: usize) -> Result<Vec<Vec<f64>>> {
    let m = x.len();
    let mean = x.iter().sum::<f64>() / m as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    let sd = var.sqrt();
    // Summation rounding makes `sd` nonzero for identical samples, so test the range.
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if degree == 0 || !(hi - lo > 1e-10 * (1.0 + mean.abs())) {
        return Ok(targets
            .iter()
            .map(|t| {
                let mu = t.iter().sum::<f64>() / m as f64;
                vec![mu; m]
            })
            .collect());
    }
    let nb = degree + 1;
    let nt = targets.len();
    let basis = |v: f64, out: &mut [f64]| {
        let z = (v - mean) / sd;
        out[0] = 1.0;
        for j in 1..nb {
            out[j] = out[j - 1] * z;
        }
    };
    let blocks: Vec<usize> = (0..m.div_ceil(BLOCK)).collect();
    let parts = par::map(&blocks, |&b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(m);
        let mut gram = vec![0.0; nb * nb];
        let mut rhs = vec![0.0; nb * nt];
        let mut phi = vec![0.0; nb];
        for i in lo..hi {
            basis(x[i], &mut phi);
            for r in 0..nb {
                for c in 0..=r {
                    gram[r * nb + c] += phi[r] * phi[c];
                }
                for (j, t) in targets.iter().enumerate() {
                    rhs[j * nb + r] += phi[r] * t[i];
                }
            }
        }
        (gram, rhs)
    });
    let mut gram = vec![0.0; nb * nb];
    let mut rhs = vec![0.0; nb * nt];
    for (g, r) in parts {
        for (a, b) in gram.iter_mut().zip(&g) {
            *a += b;
        }
        for (a, b) in rhs.iter_mut().zip(&r) {
            *a += b;
        }
    }
    let g = DMatrix::from_fn(nb, nb, |r, c| if c <= r { gram[r * nb + c] } else { gram[c * nb + r] });
    let max_diag = (0..nb).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
    let singular = || Error::RegressionSingular { step, degree, paths: m };
    let chol = g.cholesky().ok_or_else(singular)?;
    let l = chol.l();
    if (0..nb).any(|i| l[(i, i)].powi(2) < 1e-13 * max_diag) {
        return Err(singular());
    }
    let mut out = Vec::with_capacity(nt);
    let mut phi = vec![0.0; nb];
    for j in 0..nt {
        let coef = chol.solve(&DVector::from_column_slice(&rhs[j * nb..(j + 1) * nb]));
        let fitted: Vec<f64> = x
            .iter()
            .map(|&v| {
                basis(v, &mut phi);
                phi.iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
            })
            .collect();
        out.push(fitted);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Projection {
    Reflect,
    Penalty(f64),
}

struct McRun {
    y0: f64,
    z0: f64,
    fields: PathFields,
}

/// Backward regression recursion over the paths `lo..hi` of an ensemble.
///
/// The estimator field is `Y_k = proj(C_k + dt f)` with `C_k` the regression
/// of `Y_{k+1}` on the basis; it also decides where the projection binds and
/// gives `dK`. The point estimate `Y_0` is taken from realized cash flows
/// under that decision rule: a path keeps its own continuation value until
/// the projection binds. The plain regression recursion compounds the
/// upward bias of the max over every step, the cash-flow value does not.
fn lsmc_run(
    spec: &ObstacleProblemSpec,
    ens: &PathEnsemble,
    lo: usize,
    hi: usize,
    proj: Projection,
    degree: usize,
) -> Result<McRun> {
    let m = hi - lo;
    let steps = ens.steps;
    let dt = ens.dt_path;
    let mut y = vec![0.0; m * (steps + 1)];
    let mut z = vec![0.0; m * (steps + 1)];
    let mut dk = vec![0.0; m * steps];
    let mut cash: Vec<f64> = ens.x(steps)[lo..hi].iter().map(|&x| spec.obstacle.phi(x)).collect();
    y[steps * m..].copy_from_slice(&cash);
    let mut weighted = vec![0.0; m];
    let mut cash0 = 0.0;
    for k in (0..steps).rev() {
        let t = ens.time(k);
        let xs = &ens.x(k)[lo..hi];
        let dws = &ens.dw(k)[lo..hi];
        let (before, after) = y.split_at_mut((k + 1) * m);
        let next = &after[..m];
        let fits = regress(xs, &[next, &cash], degree, k)?;
        let (cont, cash_cont) = (&fits[0], &fits[1]);
        // centring by the fitted mean leaves E[. dW | X] unchanged and removes its noise
        for j in 0..m {
            weighted[j] = (cash[j] - cash_cont[j]) * dws[j] / dt;
        }
        let zfit = regress(xs, &[&weighted], degree, k)?;
        let zhat = &zfit[0];
        let cur = &mut before[k * m..];
        for j in 0..m {
            let x = xs[j];
            let h = spec.obstacle.h(t, x);
            let c = cont[j] + dt * spec.driver.eval(t, x, cont[j], zhat[j]);
            let (yv, dkv) = match proj {
                Projection::Reflect if c < h => (h, h - c),
                Projection::Penalty(n) if c < h => {
                    let v = (c + dt * n * h) / (1.0 + dt * n);
                    (v, dt * n * (h - v))
                }
                _ => (c, 0.0),
            };
            cur[j] = yv;
            dk[k * m + j] = dkv;
            z[k * m + j] = zhat[j];
            let drive = dt * spec.driver.eval(t, x, cash_cont[j], zhat[j]);
            cash[j] = if dkv > 0.0 { yv } else { cash[j] + drive };
        }
        if k == 0 {
            cash0 = cash.iter().sum::<f64>() / m as f64;
        }
    }
    let z0 = z[..m].iter().sum::<f64>() / m as f64;
    Ok(McRun { y0: cash0, z0, fields: PathFields { steps, path_count: m, y, z, dk } })
}

/// Number of independent path batches used for interval estimates.
pub const BATCHES: usize = 10;

fn lsmc_estimate(
    spec: &ObstacleProblemSpec,
    ens: &PathEnsemble,
    proj: Projection,
    degree: usize,
) -> Result<RbsdeEstimate> {
    if degree > 6 {
        return Err(Error::InvalidArgument(format!("basis degree must be <= 6, got {degree}")));
    }
    let full = lsmc_run(spec, ens, 0, ens.path_count, proj, degree)?;
    let k_paths = full.fields.terminal_k();
    let k_mean = k_paths.iter().sum::<f64>() / k_paths.len() as f64;
    let (y_hw, z_hw, k_hw) = if ens.path_count >= BATCHES * 2 {
        let size = ens.path_count / BATCHES;
        let ids: Vec<usize> = (0..BATCHES).collect();
        let batches: Vec<Result<(f64, f64, f64)>> = par::map(&ids, |&b| {
            let run = lsmc_run(spec, ens, b * size, (b + 1) * size, proj, degree)?;
            let kt = run.fields.terminal_k();
            Ok((run.y0, run.z0, kt.iter().sum::<f64>() / kt.len() as f64))
        });
        let mut ys = Vec::with_capacity(BATCHES);
        let mut zs = Vec::with_capacity(BATCHES);
        let mut ks = Vec::with_capacity(BATCHES);
        for b in batches {
            let (a, c, d) = b?;
            ys.push(a);
            zs.push(c);
            ks.push(d);
        }
        (
            Estimate::from_sample(&ys).half_width,
            Estimate::from_sample(&zs).half_width,
            Estimate::from_sample(&ks).half_width,
        )
    } else {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    };
    // batch means of size M/10 have sqrt(10) times the spread of the full estimate
    let shrink = (BATCHES as f64).sqrt().recip();
    let (scheme, n_penalty) = match proj {
        Projection::Reflect => (Scheme::ReflectedMc, None),
        Projection::Penalty(n) => (Scheme::PenalizedMc, Some(n)),
    };
    Ok(RbsdeEstimate {
        scheme,
        y0: Estimate { value: full.y0, half_width: y_hw * shrink },
        z0: Estimate { value: full.z0, half_width: z_hw * shrink },
        k_terminal: Estimate { value: k_mean, half_width: k_hw * shrink },
        n_penalty,
        degree: Some(degree),
        fields: EstimateFields::Paths(full.fields),
    })
}

/// Regression Monte Carlo for the penalized BSDE with driver `f + n (y - h)^-`.
pub fn rbsde_penalized_mc(
    spec: &ObstacleProblemSpec,
    ens: &PathEnsemble,
    n_penalty: f64,
    degree: usize,
) -> Result<RbsdeEstimate> {
    if !(n_penalty >= 1.0) {
        return Err(Error::InvalidArgument(format!("penalty level must be >= 1, got {n_penalty}")));
    }
    lsmc_estimate(spec, ens, Projection::Penalty(n_penalty), degree)
}

/// Discretely reflected regression Monte Carlo.
pub fn rbsde_reflected_mc(spec: &ObstacleProblemSpec, ens: &PathEnsemble, degree: usize) -> Result<RbsdeEstimate> {
    lsmc_estimate(spec, ens, Projection::Reflect, degree)
}

#[derive(Clone, Debug, PartialEq)]
pub struct McConvergenceRow {
    pub n_penalty: f64,
    /// `sqrt(E sup_k |Y^n_k - Y_k|^2)`.
    pub y_distance: Estimate,
    /// `sqrt(E sup_k |K^n_k - K_k|^2)`.
    pub k_distance: Estimate,
    pub y0_penalized: f64,
}

fn sqrt_estimate(sample: &[f64]) -> Estimate {
    let e = Estimate::from_sample(sample);
    let v = e.value.max(0.0).sqrt();
    let hw = if v > 0.0 { e.half_width / (2.0 * v) } else { e.half_width.sqrt() };
    Estimate { value: v, half_width: hw }
}

/// Distances between penalized and reflected regression estimates on a
/// shared ensemble, per penalty level.
pub fn penalization_convergence_mc(
    spec: &ObstacleProblemSpec,
    ens: &PathEnsemble,
    schedule: &[f64],
    degree: usize,
) -> Result<Vec<McConvergenceRow>> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("penalty schedule must be nonempty and strictly increasing".into()));
    }
    if degree > 6 {
        return Err(Error::InvalidArgument(format!("basis degree must be <= 6, got {degree}")));
    }
    let m = ens.path_count;
    let refl = lsmc_run(spec, ens, 0, m, Projection::Reflect, degree)?.fields;
    let rows: Vec<Result<McConvergenceRow>> = par::map(schedule, |&n| {
        if !(n >= 1.0) {
            return Err(Error::InvalidArgument(format!("penalty level must be >= 1, got {n}")));
        }
        let run = lsmc_run(spec, ens, 0, m, Projection::Penalty(n), degree)?;
        let pen = &run.fields;
        let mut ysup = vec![0.0f64; m];
        let mut ksup = vec![0.0f64; m];
        let mut kp = vec![0.0; m];
        let mut kr = vec![0.0; m];
        for k in 0..=ens.steps {
            if k > 0 {
                for j in 0..m {
                    kp[j] += pen.dk[(k - 1) * m + j];
                    kr[j] += refl.dk[(k - 1) * m + j];
                }
            }
            for j in 0..m {
                ysup[j] = ysup[j].max((pen.y[k * m + j] - refl.y[k * m + j]).powi(2));
                ksup[j] = ksup[j].max((kp[j] - kr[j]).powi(2));
            }
        }
        Ok(McConvergenceRow {
            n_penalty: n,
            y_distance: sqrt_estimate(&ysup),
            k_distance: sqrt_estimate(&ksup),
            y0_penalized: run.y0,
        })
    });
    rows.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingValues {
    /// Value of the rule "stop when `u` touches `h`", estimated along paths.
    pub rule: Estimate,
    /// Snell envelope of the grid chain.
    pub snell: f64,
    /// Chain dynamic programming value at the same node.
    pub chain_dp: f64,
    pub gap: f64,
    /// Fraction of paths stopped before `T`.
    pub early_fraction: f64,
}

/// Snell envelope `V_k = max(h_k, P_k V_{k+1} + dt g_k)` of the grid chain,
/// computed with dense kernels; `g` is the running reward per node.
pub fn snell_envelope(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    s_index: usize,
    reward: &GridField,
) -> Result<GridField> {
    let n = grid.n_nodes();
    let mut v = GridField::zeros(grid);
    let mut last: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.phi(x)).collect();
    set_chain_ends(spec, grid, grid.nt, &mut last);
    v.row_mut(grid.nt).copy_from_slice(&last);
    for k in (s_index..grid.nt).rev() {
        let t = grid.t_nodes[k];
        let kernel = transition_kernel(spec, grid, k, KernelScheme::Implicit)?;
        let mut next = v.row(k + 1).to_vec();
        set_chain_ends(spec, grid, k, &mut next);
        let cont = kernel.expect(&next);
        let mut row: Vec<f64> =
            (0..n).map(|i| spec.obstacle.h(t, grid.x_nodes[i]).max(cont[i] + grid.dt * reward.get(k, i))).collect();
        set_chain_ends(spec, grid, k, &mut row);
        v.row_mut(k).copy_from_slice(&row);
    }
    Ok(v)
}

/// Value of the stopping rule `D = inf{t : u(t, X_t) = h(t, X_t)}` on the
/// ensemble, next to the Snell envelope of the grid chain.
///
/// The ensemble must start at grid node `(s_index, x_index)` and step with
/// the grid's `dt`.
pub fn optimal_stopping_value(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    sol: &ObstacleSolution,
    ens: &PathEnsemble,
    s_index: usize,
    x_index: usize,
) -> Result<StoppingValues> {
    if (ens.dt_path - grid.dt).abs() > 1e-12 * grid.dt
        || (ens.s_start - grid.t_nodes[s_index]).abs() > 1e-12
        || (ens.x_start - grid.x_nodes[x_index]).abs() > 1e-12
        || ens.steps != grid.nt - s_index
    {
        return Err(Error::InvalidArgument("ensemble does not start at the given grid node with the grid step".into()));
    }
    let dp = rbsde_chain_dp(spec, grid, s_index, x_index)?;
    let chain = dp.chain().expect("chain fields");
    let snell = snell_envelope(spec, grid, s_index, &chain.f)?;
    let tol = sol.contact_tol;
    let m = ens.path_count;
    let dt = grid.dt;

    let mut value = vec![0.0; m];
    let mut stopped = vec![false; m];
    for k in 0..=ens.steps {
        let gk = s_index + k;
        let t = grid.t_nodes[gk];
        let sigma_row: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.coefficients.sigma(t, x)).collect();
        let du = central_difference(grid, sol.u.row(gk));
        let urow = sol.u.row(gk);
        let hrow = sol.h.row(gk);
        for (j, &x) in ens.x(k).iter().enumerate() {
            if stopped[j] {
                continue;
            }
            if k == ens.steps {
                value[j] += spec.obstacle.phi(x);
                continue;
            }
            let gap = interp_row(grid, urow, x) - interp_row(grid, hrow, x);
            if gap <= tol {
                value[j] += spec.obstacle.h(t, x);
                stopped[j] = true;
                continue;
            }
            let u = interp_row(grid, urow, x);
            let z = interp_row(grid, &sigma_row, x) * interp_row(grid, &du, x);
            value[j] += dt * spec.driver.eval(t, x, u, z);
        }
    }
    let early = stopped.iter().filter(|&&s| s).count() as f64 / m as f64;
    let rule = Estimate::from_sample(&value);
    let snell0 = snell.get(s_index, x_index);
    Ok(StoppingValues {
        rule,
        snell: snell0,
        chain_dp: dp.y0.value,
        gap: (rule.value - snell0).abs(),
        early_fraction: early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_operator, solve_density, KernelScheme};
    use crate::problem::{BoundaryMode, Coefficients, Driver, ObstacleData, Truncation, Weight};
    use crate::solver::{solve_psor, SolverOptions};
    use std::sync::Arc;

    fn build(
        coef: Coefficients,
        driver: Driver,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> ObstacleProblemSpec {
        let h = Arc::new(h);
        ObstacleProblemSpec::new(
            coef,
            driver,
            ObstacleData::new(Arc::new(move |_, x| h(x)), Arc::new(phi), (1e6, 2.0)),
            1.0,
            Weight::new(1.0),
            Truncation { lo, hi, mode: BoundaryMode::ClampToData },
        )
        .unwrap()
    }

    fn put(driver: Driver) -> ObstacleProblemSpec {
        let p = |x: f64| (1.0 - x.exp()).max(0.0);
        build(Coefficients::constant(0.09), driver, p, p, -3.0, 3.0)
    }

    fn heat(a: f64) -> ObstacleProblemSpec {
        build(Coefficients::constant(a), Driver::zero(), |_| -1e6, |x| (-x * x).exp(), -6.0, 6.0)
    }

    fn constant(c: f64) -> ObstacleProblemSpec {
        build(Coefficients::constant(0.5), Driver::zero(), move |_| c, move |_| c, -2.0, 2.0)
    }

    #[test]
    fn terminal_variance_scales_with_coefficient() {
        for a in [1.0, 4.0] {
            let ens = simulate_paths(&heat(a), 0.0, 0.3, 0.01, 20_000, 5).unwrap();
            let sq: Vec<f64> = ens.x(ens.steps).iter().map(|x| (x - 0.3).powi(2)).collect();
            let e = Estimate::from_sample(&sq);
            assert!((e.value - a).abs() <= 3.0 * e.half_width, "a={a}: {e:?}");
            assert!(ens.x(0).iter().all(|&x| x == 0.3));
        }
    }

    #[test]
    fn increments_are_centred() {
        let ens = simulate_paths(&heat(1.0), 0.0, 0.0, 0.02, 10_000, 9).unwrap();
        let bound = 4.0 * (0.02 / 10_000f64).sqrt();
        for k in 0..ens.steps {
            let m = ens.dw(k).iter().sum::<f64>() / 10_000.0;
            assert!(m.abs() <= bound, "step {k}: {m}");
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let spec = build(Coefficients::sine(1.0, 0.5, 1.0), Driver::zero(), |_| 0.0, |_| 0.0, -5.0, 5.0);
        let a = simulate_paths(&spec, 0.0, 0.1, 0.05, 9000, 3).unwrap();
        let b = simulate_paths(&spec, 0.0, 0.1, 0.05, 9000, 3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dw, b.dw);
        let c = simulate_paths(&spec, 0.0, 0.1, 0.05, 9000, 4).unwrap();
        assert_ne!(a.x, c.x);
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let d = pool.install(|| simulate_paths(&spec, 0.0, 0.1, 0.05, 9000, 3).unwrap());
            assert_eq!(a.x, d.x);
            let m1 = moment_ratio_streaming(&spec, 0.0, 0.1, 0.05, 9000, 3, 4.0).unwrap();
            let m2 = pool.install(|| moment_ratio_streaming(&spec, 0.0, 0.1, 0.05, 9000, 3, 4.0).unwrap());
            assert_eq!(m1, m2);
            assert_eq!(m1, moment_ratio_probe(&a, 4.0).unwrap());
        }
    }

    #[test]
    fn simulation_needs_the_coefficient_derivative() {
        let coef = Coefficients::new(Arc::new(|_, _| 1.0), None, 1.0, 1.0);
        let spec = build(coef, Driver::zero(), |_| 0.0, |_| 0.0, -1.0, 1.0);
        assert_eq!(simulate_paths(&spec, 0.0, 0.0, 0.1, 10, 1).unwrap_err(), Error::MissingDerivative);
        assert!(simulate_paths(&heat(1.0), 1.0, 0.0, 0.1, 10, 1).is_err());
        assert!(simulate_paths(&heat(1.0), 0.0, 0.0, 2.0, 10, 1).is_err());
    }

    #[test]
    fn g_integral_of_constant_and_position() {
        let ens = simulate_paths(&heat(1.0), 0.0, 0.0, 0.01, 20_000, 2).unwrap();
        let one = estimate_g_integral(&ens, |_, _| 1.0);
        assert!((one.value - 1.0).abs() < 1e-12 && one.half_width < 1e-12, "{one:?}");
        let pos = estimate_g_integral(&ens, |_, x| x);
        assert!((pos.value - 0.5).abs() <= 3.0 * pos.half_width, "{pos:?}");
    }

    #[test]
    fn moment_ratio_of_brownian_motion() {
        let r = moment_ratio_streaming(&heat(1.0), 0.0, 0.0, 0.01, 100_000, 8, 4.0).unwrap();
        assert!(r.ratio >= 1.0 && r.ratio <= 3.5, "{r:?}");
        assert!(moment_ratio_streaming(&heat(1.0), 0.0, 0.0, 0.01, 100, 8, 3.0).is_err());
        // nearly frozen paths: sup and terminal moments coincide
        let still = moment_ratio_streaming(&heat(1e-8), 0.0, 5.0, 0.01, 1000, 8, 4.0).unwrap();
        assert!((still.ratio - 1.0).abs() < 1e-3, "{still:?}");
    }

    #[test]
    fn terminal_law_matches_grid_density() {
        let spec = build(Coefficients::sine(1.0, 0.5, 1.0), Driver::zero(), |_| 0.0, |_| 0.0, -6.0, 6.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 95, 200).unwrap();
        let i0 = grid.nearest_node(0.0);
        let table = solve_density(&spec, &grid, 0, i0, KernelScheme::Implicit).unwrap();
        let mass = table.slice_at(grid.nt).unwrap();
        let ens = simulate_paths(&spec, 0.0, grid.x_nodes[i0], grid.dt, 200_000, 21).unwrap();
        let mut hist = vec![0.0; grid.n_nodes()];
        for &x in ens.x(ens.steps) {
            let i = grid.nearest_node(x);
            hist[i] += 1.0 / 200_000.0;
        }
        let l1: f64 = hist.iter().zip(mass).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 5e-2, "L1 = {l1}");
    }

    #[test]
    fn chain_dp_of_constant_data() {
        let spec = constant(1.5);
        let grid = SpaceTimeGrid::for_spec(&spec, 40, 40).unwrap();
        let dp = rbsde_chain_dp(&spec, &grid, 0, 20).unwrap();
        let ch = dp.chain().unwrap();
        assert!(ch.y.values().iter().all(|&v| (v - 1.5).abs() < 1e-13));
        assert!(ch.z.values().iter().all(|&v| v.abs() < 1e-12));
        assert!(ch.dk.values().iter().all(|&v| v.abs() < 1e-13));
    }

    #[test]
    fn chain_dp_without_obstacle_is_plain_stepping() {
        let spec = heat(1.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 120, 100).unwrap();
        let dp = rbsde_chain_dp(&spec, &grid, 0, 60).unwrap();
        let y = &dp.chain().unwrap().y;
        let mut v: Vec<f64> = grid.x_nodes.iter().map(|&x| spec.obstacle.phi(x)).collect();
        for k in (0..grid.nt).rev() {
            let m = assemble_operator(&spec, &grid, k).unwrap().implicit_matrix(grid.dt);
            v[0] = spec.boundary_value(grid.t_nodes[k], grid.lo());
            v[grid.nx + 1] = spec.boundary_value(grid.t_nodes[k], grid.hi());
            v = m.solve(&v);
            for i in 0..grid.n_nodes() {
                assert!((v[i] - y.get(k, i)).abs() <= 1e-10, "k={k} i={i}");
            }
        }
        assert_eq!(dp.k_terminal.value, 0.0);
    }

    #[test]
    fn increments_of_k_are_nonnegative_and_flat_off_contact() {
        let spec = put(Driver::linear(0.05, 0.0, 0.0));
        let grid = SpaceTimeGrid::for_spec(&spec, 80, 50).unwrap();
        let i0 = grid.nearest_node(0.0);
        let dp = rbsde_chain_dp(&spec, &grid, 0, i0).unwrap();
        let ch = dp.chain().unwrap();
        for k in 0..grid.nt {
            let t = grid.t_nodes[k];
            for i in 1..=grid.nx {
                let dk = ch.dk.get(k, i);
                assert!(dk >= 0.0);
                assert!(dk == 0.0 || ch.y.get(k, i) == spec.obstacle.h(t, grid.x_nodes[i]));
            }
        }
        let ens = simulate_paths(&spec, 0.0, grid.x_nodes[i0], grid.dt, 5000, 4).unwrap();
        let refl = rbsde_reflected_mc(&spec, &ens, 3).unwrap();
        let f = refl.paths().unwrap();
        for k in 0..ens.steps {
            let t = ens.time(k);
            for (j, &x) in ens.x(k).iter().enumerate() {
                let dk = f.dk[k * 5000 + j];
                assert!(dk >= 0.0);
                assert!(dk == 0.0 || f.y[k * 5000 + j] == spec.obstacle.h(t, x));
            }
        }
    }

    #[test]
    fn identical_regressors_fall_back_to_the_mean() {
        let x = vec![1.227722772277228; 100_000];
        let t: Vec<f64> = (0..x.len()).map(|i| (i % 7) as f64).collect();
        let fit = regress(&x, &[&t], 6, 0).unwrap();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        assert!(fit[0].iter().all(|&v| v == mean));
    }

    #[test]
    fn regression_schemes_on_constant_data() {
        let spec = constant(2.0);
        let ens = simulate_paths(&spec, 0.0, 0.0, 0.02, 4000, 6).unwrap();
        for est in [rbsde_reflected_mc(&spec, &ens, 3).unwrap(), rbsde_penalized_mc(&spec, &ens, 64.0, 3).unwrap()] {
            assert!((est.y0.value - 2.0).abs() < 1e-12, "{:?}", est.y0);
            assert!(est.k_terminal.value.abs() < 1e-12);
        }
        assert!(rbsde_penalized_mc(&spec, &ens, 0.5, 3).is_err());
        assert!(rbsde_reflected_mc(&spec, &ens, 7).is_err());
    }

    #[test]
    fn inactive_obstacle_gives_sample_mean() {
        let spec = heat(1.0);
        let ens = simulate_paths(&spec, 0.0, 0.2, 0.02, 8000, 12).unwrap();
        let mean = ens.x(ens.steps).iter().map(|&x| spec.obstacle.phi(x)).sum::<f64>() / 8000.0;
        let est = rbsde_penalized_mc(&spec, &ens, 256.0, 4).unwrap();
        assert!((est.y0.value - mean).abs() < 1e-12);
        assert_eq!(est.k_terminal.value, 0.0);
    }

    #[test]
    fn snell_envelope_equals_chain_dp() {
        for driver in [Driver::zero(), Driver::constant(0.01), Driver::linear(0.05, 0.0, 0.0)] {
            let spec = put(driver);
            let grid = SpaceTimeGrid::for_spec(&spec, 60, 40).unwrap();
            let dp = rbsde_chain_dp(&spec, &grid, 0, 30).unwrap();
            let ch = dp.chain().unwrap();
            let snell = snell_envelope(&spec, &grid, 0, &ch.f).unwrap();
            let d = snell.sup_distance(&ch.y);
            assert!(d <= 1e-12, "{d}");
        }
    }

    #[test]
    fn raising_the_obstacle_never_lowers_the_value() {
        let base = put(Driver::linear(0.05, 0.0, 0.0));
        let grid = SpaceTimeGrid::for_spec(&base, 60, 40).unwrap();
        let h0 = base.obstacle.clone();
        let raised = base.with_obstacle(Arc::new(move |t, x| h0.h(t, x) + 0.02 * (-4.0 * x * x).exp()), (2.0, 0.0));
        for i in [10, 25, 30, 40] {
            let a = rbsde_chain_dp(&base, &grid, 0, i).unwrap().y0.value;
            let b = rbsde_chain_dp(&raised, &grid, 0, i).unwrap().y0.value;
            assert!(b >= a - 1e-12, "node {i}: {a} -> {b}");
        }
    }

    #[test]
    fn stopping_rule_on_constant_data() {
        let spec = constant(1.0);
        let grid = SpaceTimeGrid::for_spec(&spec, 20, 20).unwrap();
        let sol = solve_psor(&spec, &grid, &SolverOptions::default()).unwrap();
        let ens = simulate_paths(&spec, 0.0, grid.x_nodes[10], grid.dt, 500, 1).unwrap();
        let v = optimal_stopping_value(&spec, &grid, &sol, &ens, 0, 10).unwrap();
        assert!((v.rule.value - 1.0).abs() < 1e-12 && (v.snell - 1.0).abs() < 1e-12, "{v:?}");
        assert!(v.gap < 1e-12);
    }
}
