//! Space-time discretization, flux-form assembly of `A_t`, the Markov chain
//! it induces and the discrete fundamental solution.

use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::problem::{BoundaryMode, ObstacleProblemSpec};

/// Uniform grid on `[lo, hi] x [0, T]`. Node `0` and node `nx + 1` sit on
/// the truncation ends; nodes `1..=nx` are interior.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
    pub x_nodes: Vec<f64>,
    pub t_nodes: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(lo: f64, hi: f64, nx: usize, horizon: f64, nt: usize) -> Result<Self> {
        if nx == 0 || nt == 0 {
            return Err(Error::InvalidArgument(format!("grid needs nx >= 1 and nt >= 1, got nx={nx}, nt={nt}")));
        }
        if !(lo < hi) || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("grid needs lo < hi and T > 0".into()));
        }
        let dx = (hi - lo) / (nx + 1) as f64;
        let dt = horizon / nt as f64;
        let mut x_nodes: Vec<f64> = (0..nx + 2).map(|i| lo + i as f64 * dx).collect();
        x_nodes[nx + 1] = hi;
        let mut t_nodes: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();
        t_nodes[nt] = horizon;
        Ok(Self { nx, nt, dx, dt, x_nodes, t_nodes })
    }

    pub fn for_spec(spec: &ObstacleProblemSpec, nx: usize, nt: usize) -> Result<Self> {
        Self::new(spec.truncation.lo, spec.truncation.hi, nx, spec.horizon, nt)
    }

    /// Number of nodes including the two ends.
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx + 2
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.x_nodes[0]
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.x_nodes[self.nx + 1]
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.t_nodes[self.nt]
    }

    /// Nearest node index to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let i = ((x - self.lo()) / self.dx).round();
        i.clamp(0.0, (self.nx + 1) as f64) as usize
    }

    /// Time index whose slab `[t_k, t_{k+1})` contains `t` (left-constant lookup).
    pub fn time_index(&self, t: f64) -> usize {
        let k = (t / self.dt + 1e-9).floor();
        k.clamp(0.0, self.nt as f64) as usize
    }

    /// Midpoint between node `i` and node `i + 1`.
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        0.5 * (self.x_nodes[i] + self.x_nodes[i + 1])
    }

    /// The same domain with spacing halved in both directions.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.lo(), self.hi(), 2 * self.nx + 1, self.horizon(), 2 * self.nt)
    }
}

/// Values on every space-time node, stored by time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    nt1: usize,
    nx2: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { nt1: grid.nt + 1, nx2: grid.n_nodes(), data: vec![0.0; (grid.nt + 1) * grid.n_nodes()] }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..=grid.nt {
            let t = grid.t_nodes[k];
            for (v, &x) in out.row_mut(k).iter_mut().zip(&grid.x_nodes) {
                *v = f(t, x);
            }
        }
        out
    }

    #[inline]
    pub fn n_times(&self) -> usize {
        self.nt1
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx2
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.nx2 + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.data[k * self.nx2 + i] = v;
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.nx2..(k + 1) * self.nx2]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.nx2..(k + 1) * self.nx2]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { nt1: self.nt1, nx2: self.nx2, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.data.len(), other.data.len(), "grid field shapes differ");
        Self { nt1: self.nt1, nx2: self.nx2, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Largest `|self - other|` over time slices `0..=k_max` (all nodes).
    pub fn sup_distance_through(&self, other: &GridField, k_max: usize) -> f64 {
        let end = (k_max + 1).min(self.nt1) * self.nx2;
        self.data[..end].iter().zip(&other.data[..end]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sup_distance(&self, other: &GridField) -> f64 {
        self.sup_distance_through(other, self.nt1 - 1)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Piecewise-linear interpolation of slice `k` at `x`, flat beyond the ends.
    pub fn interp_x(&self, grid: &SpaceTimeGrid, k: usize, x: f64) -> f64 {
        interp_row(grid, self.row(k), x)
    }

    /// Slope of the piecewise-linear interpolant of slice `k` at `x`
    /// (zero beyond the ends).
    pub fn slope_x(&self, grid: &SpaceTimeGrid, k: usize, x: f64) -> f64 {
        let row = self.row(k);
        let s = (x - grid.lo()) / grid.dx;
        if s <= 0.0 || s >= (grid.nx + 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(grid.nx);
        (row[i + 1] - row[i]) / grid.dx
    }

    /// Left-constant in time, linear in space.
    pub fn eval(&self, grid: &SpaceTimeGrid, t: f64, x: f64) -> f64 {
        self.interp_x(grid, grid.time_index(t), x)
    }
}

/// Linear interpolation of a full node row.
pub fn interp_row(grid: &SpaceTimeGrid, row: &[f64], x: f64) -> f64 {
    let s = (x - grid.lo()) / grid.dx;
    if s <= 0.0 {
        return row[0];
    }
    let last = grid.nx + 1;
    if s >= last as f64 {
        return row[last];
    }
    let i = (s.floor() as usize).min(last - 1);
    let w = s - i as f64;
    row[i] * (1.0 - w) + row[i + 1] * w
}

/// Central differences on interior nodes, one-sided at the ends.
pub fn central_difference(grid: &SpaceTimeGrid, row: &[f64]) -> Vec<f64> {
    let n = row.len();
    let h = grid.dx;
    (0..n)
        .map(|i| {
            if i == 0 {
                (row[1] - row[0]) / h
            } else if i + 1 == n {
                (row[n - 1] - row[n - 2]) / h
            } else {
                (row[i + 1] - row[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Flux-form discretization of `A_t = 1/2 d/dx(a d/dx)` at one time slice.
///
/// Row `j` acts on interior node `j + 1`:
/// `(A u)_j = lower[j] * u[j] + diag[j] * u[j + 1] + upper[j] * u[j + 2]` with
/// `lower = a_{i-1/2} / (2 dx^2)`, `upper = a_{i+1/2} / (2 dx^2)` and
/// `diag = -(lower + upper)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    pub t_index: usize,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A u` on interior nodes for a full node vector `u` (length `nx + 2`).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|j| self.lower[j] * u[j] + self.diag[j] * u[j + 1] + self.upper[j] * u[j + 2]).collect()
    }

    /// Full-node tridiagonal for `I - dt A` with identity rows at both ends.
    pub fn implicit_matrix(&self, dt: f64) -> Tridiagonal {
        let n = self.len() + 2;
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        for j in 0..self.len() {
            sub[j + 1] = -dt * self.lower[j];
            diag[j + 1] = 1.0 - dt * self.diag[j];
            sup[j + 1] = -dt * self.upper[j];
        }
        Tridiagonal { sub, diag, sup }
    }

    /// Full-node tridiagonal for `I + dt A` with identity rows at both ends.
    pub fn explicit_matrix(&self, dt: f64) -> Tridiagonal {
        let n = self.len() + 2;
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        for j in 0..self.len() {
            sub[j + 1] = dt * self.lower[j];
            diag[j + 1] = 1.0 + dt * self.diag[j];
            sup[j + 1] = dt * self.upper[j];
        }
        Tridiagonal { sub, diag, sup }
    }
}

/// Assemble `A_t` at `t_index` from face values `a(t, x_{i +- 1/2})`.
pub fn assemble_operator(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, t_index: usize) -> Result<DiscreteOperator> {
    if t_index > grid.nt {
        return Err(Error::InvalidArgument(format!("t_index {t_index} beyond nt = {}", grid.nt)));
    }
    let t = grid.t_nodes[t_index];
    let scale = 1.0 / (2.0 * grid.dx * grid.dx);
    let faces: Vec<f64> = (0..=grid.nx).map(|i| spec.coefficients.a(t, grid.face(i)) * scale).collect();
    let mut lower: Vec<f64> = faces[..grid.nx].to_vec();
    let mut upper: Vec<f64> = faces[1..].to_vec();
    if spec.truncation.mode == BoundaryMode::Reflecting {
        lower[0] = 0.0;
        upper[grid.nx - 1] = 0.0;
    }
    let diag = lower.iter().zip(&upper).map(|(l, u)| -(l + u)).collect();
    Ok(DiscreteOperator { t_index, lower, diag, upper })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelScheme {
    /// `P = I + dt A`; needs `dt <= dx^2 / Lambda`.
    Explicit,
    /// `P = (I - dt A)^{-1}`.
    Implicit,
}

/// One step of the grid Markov chain over `[t_k, t_{k+1}]`, applied in
/// tridiagonal form.
#[derive(Clone, Debug)]
pub struct ChainStep {
    pub scheme: KernelScheme,
    matrix: Tridiagonal,
    transposed: Tridiagonal,
}

impl ChainStep {
    pub fn new(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, t_index: usize, scheme: KernelScheme) -> Result<Self> {
        check_cfl(spec, grid, scheme)?;
        let op = assemble_operator(spec, grid, t_index)?;
        let matrix = match scheme {
            KernelScheme::Explicit => op.explicit_matrix(grid.dt),
            KernelScheme::Implicit => op.implicit_matrix(grid.dt),
        };
        let transposed = matrix.transpose();
        Ok(Self { scheme, matrix, transposed })
    }

    /// `P v`: one-step conditional expectation of a full node vector.
    pub fn expect(&self, v: &[f64]) -> Vec<f64> {
        match self.scheme {
            KernelScheme::Explicit => self.matrix.mul_vec(v),
            KernelScheme::Implicit => self.matrix.solve(v),
        }
    }

    /// `P^T p`: one-step push-forward of a mass vector.
    pub fn push(&self, p: &[f64]) -> Vec<f64> {
        match self.scheme {
            KernelScheme::Explicit => self.transposed.mul_vec(p),
            KernelScheme::Implicit => self.transposed.solve(p),
        }
    }
}

fn check_cfl(spec: &ObstacleProblemSpec, grid: &SpaceTimeGrid, scheme: KernelScheme) -> Result<()> {
    if scheme == KernelScheme::Explicit {
        let limit = grid.dx * grid.dx / spec.coefficients.big_lambda;
        if grid.dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt: grid.dt, limit });
        }
    }
    Ok(())
}

/// Dense row-stochastic one-step transition matrix on all `nx + 2` nodes.
/// End nodes are absorbing.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    pub n: usize,
    pub scheme: KernelScheme,
    data: Vec<f64>,
    /// Largest negative round-off entry that was clamped to zero.
    pub clamp_magnitude: f64,
}

impl TransitionKernel {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        (0..self.n).map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Dense `P v`.
    pub fn expect(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(v).map(|(p, x)| p * x).sum()).collect()
    }
}

/// Dense transition matrix of the chain over `[t_k, t_{k+1}]`.
pub fn transition_kernel(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    t_index: usize,
    scheme: KernelScheme,
) -> Result<TransitionKernel> {
    check_cfl(spec, grid, scheme)?;
    let op = assemble_operator(spec, grid, t_index)?;
    let n = grid.n_nodes();
    let mut data = vec![0.0; n * n];
    let mut clamp: f64 = 0.0;
    match scheme {
        KernelScheme::Explicit => {
            let m = op.explicit_matrix(grid.dt);
            for i in 0..n {
                data[i * n + i] = m.diag[i];
                if i > 0 {
                    data[i * n + i - 1] = m.sub[i];
                }
                if i + 1 < n {
                    data[i * n + i + 1] = m.sup[i];
                }
            }
        }
        KernelScheme::Implicit => {
            let m = op.implicit_matrix(grid.dt);
            let mut e = vec![0.0; n];
            for j in 0..n {
                e[j] = 1.0;
                let col = m.solve(&e);
                e[j] = 0.0;
                for (i, v) in col.into_iter().enumerate() {
                    data[i * n + j] = v;
                }
            }
        }
    }
    for v in data.iter_mut() {
        if *v < 0.0 {
            clamp = clamp.max(-*v);
            *v = 0.0;
        }
    }
    Ok(TransitionKernel { n, scheme, data, clamp_magnitude: clamp })
}

/// Discrete fundamental solution `p(s, x, t, .)` from a unit mass at node
/// `x_index` and time `s_index`. Slice `j` holds the probability mass per
/// node at time index `s_index + j`; mass reaching an end node stays there
/// and is excluded from `masses`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub s_index: usize,
    pub x_index: usize,
    pub slices: Vec<Vec<f64>>,
    /// Interior mass per slice.
    pub masses: Vec<f64>,
    pub dx: f64,
}

impl DensityTable {
    pub fn t_index(&self, slice: usize) -> usize {
        self.s_index + slice
    }

    /// Slice holding time index `k`, if `k >= s_index`.
    pub fn slice_at(&self, k: usize) -> Option<&[f64]> {
        k.checked_sub(self.s_index).and_then(|j| self.slices.get(j)).map(|v| v.as_slice())
    }

    /// Density values (mass / dx) of the final slice at interior nodes.
    pub fn final_density(&self) -> Vec<f64> {
        let last = self.slices.last().expect("density table has at least one slice");
        last[1..last.len() - 1].iter().map(|m| m / self.dx).collect()
    }
}

/// Forward Kolmogorov iteration `p_{k+1} = P_k^T p_k` from a point mass.
pub fn solve_density(
    spec: &ObstacleProblemSpec,
    grid: &SpaceTimeGrid,
    s_index: usize,
    x_index: usize,
    scheme: KernelScheme,
) -> Result<DensityTable> {
    if s_index >= grid.nt {
        return Err(Error::InvalidArgument(format!("s_index {s_index} must be < nt = {}", grid.nt)));
    }
    if x_index == 0 || x_index > grid.nx {
        return Err(Error::InvalidArgument(format!("x_index {x_index} is not an interior node")));
    }
    let n = grid.n_nodes();
    let mut p = vec![0.0; n];
    p[x_index] = 1.0;
    let mut slices = Vec::with_capacity(grid.nt - s_index + 1);
    let mut masses = Vec::with_capacity(grid.nt - s_index + 1);
    masses.push(1.0);
    slices.push(p.clone());
    for k in s_index..grid.nt {
        let step = ChainStep::new(spec, grid, k, scheme)?;
        p = step.push(&p);
        for v in p.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        masses.push(p[1..n - 1].iter().sum());
        slices.push(p.clone());
    }
    Ok(DensityTable { s_index, x_index, slices, masses, dx: grid.dx })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeOptions {
    /// Nodes carrying less mass than this are excluded.
    pub min_mass: f64,
    /// Slices with elapsed time below this fraction of the table's span are excluded.
    pub min_elapsed_fraction: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { min_mass: 1e-8, min_elapsed_fraction: 0.25 }
    }
}

/// Smallest constants with
/// `c^{-1} G_{1/c}(tau, z) <= p <= C G_C(tau, z)` on the trimmed region,
/// where `G_v` is the centred Gaussian density with variance `v * tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeFit {
    pub c_low: f64,
    pub c_high: f64,
    pub points: usize,
    pub passed: bool,
}

/// Solve a monotone scalar equation `g(ln c) = target` by bisection on `ln c`.
fn bisect_log(target: f64, increasing: bool, g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let above = g(mid) > target;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub fn aronson_envelope_check(
    density: &DensityTable,
    grid: &SpaceTimeGrid,
    opts: EnvelopeOptions,
) -> Result<EnvelopeFit> {
    let x0 = grid.x_nodes[density.x_index];
    let span = (density.slices.len() - 1) as f64 * grid.dt;
    let mut c_low: f64 = 0.0;
    let mut c_high: f64 = 0.0;
    let mut points = 0usize;
    for (j, slice) in density.slices.iter().enumerate().skip(1) {
        let tau = j as f64 * grid.dt;
        if tau < opts.min_elapsed_fraction * span {
            continue;
        }
        let norm = 0.5 * (2.0 * std::f64::consts::PI * tau).ln();
        for i in 1..=grid.nx {
            let mass = slice[i];
            if mass < opts.min_mass {
                continue;
            }
            let z = grid.x_nodes[i] - x0;
            let q = z * z / (2.0 * tau);
            let target = (mass / grid.dx).ln() + norm;
            // upper: 1/2 ln C - q / C, increasing in C
            let upper = bisect_log(target, true, |lc| 0.5 * lc - q * (-lc).exp());
            // lower: -1/2 ln c - q c, decreasing in c
            let lower = bisect_log(target, false, |lc| -0.5 * lc - q * lc.exp());
            c_high = c_high.max(upper);
            c_low = c_low.max(lower);
            points += 1;
        }
    }
    if points == 0 {
        return Err(Error::GridTooCoarse("envelope region is empty after trimming".into()));
    }
    Ok(EnvelopeFit { c_low, c_high, points, passed: c_low.is_finite() && c_high.is_finite() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Coefficients, Driver, ObstacleData, Truncation, Weight};
    use std::sync::Arc;

    fn spec_with(coef: Coefficients, lo: f64, hi: f64, horizon: f64, mode: BoundaryMode) -> ObstacleProblemSpec {
        ObstacleProblemSpec::new(
            coef,
            Driver::zero(),
            ObstacleData::new(Arc::new(|_, _| -1e6), Arc::new(|_| 0.0), (1e6, 0.0)),
            horizon,
            Weight::new(0.0),
            Truncation { lo, hi, mode },
        )
        .unwrap()
    }

    fn gaussian(z: f64, var: f64) -> f64 {
        (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn constant_coefficient_gives_halved_laplacian() {
        let spec = spec_with(Coefficients::constant(1.0), -1.0, 1.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 9, 4).unwrap();
        let op = assemble_operator(&spec, &grid, 0).unwrap();
        let s = 1.0 / (2.0 * grid.dx * grid.dx);
        for j in 0..op.len() {
            assert!((op.lower[j] - s).abs() < 1e-12 * s);
            assert!((op.upper[j] - s).abs() < 1e-12 * s);
            assert!((op.diag[j] + 2.0 * s).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn affine_functions_are_annihilated() {
        let spec = spec_with(Coefficients::constant(2.5), -2.0, 3.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 17, 4).unwrap();
        let op = assemble_operator(&spec, &grid, 2).unwrap();
        let u: Vec<f64> = grid.x_nodes.iter().map(|x| 3.0 * x - 1.0).collect();
        for v in op.apply(&u) {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn constants_are_annihilated_with_variable_coefficient() {
        let spec = spec_with(Coefficients::sine(1.0, 0.5, 0.0), -3.0, 3.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 31, 4).unwrap();
        let op = assemble_operator(&spec, &grid, 1).unwrap();
        let u = vec![1.0; grid.n_nodes()];
        for v in op.apply(&u) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_kernel_row_at_cfl_half() {
        let spec = spec_with(Coefficients::constant(1.0), -1.0, 1.0, 1.0, BoundaryMode::ClampToData);
        let nx = 19;
        let dx: f64 = 2.0 / 20.0;
        let nt = (1.0 / (dx * dx / 2.0)).round() as usize;
        let grid = SpaceTimeGrid::for_spec(&spec, nx, nt).unwrap();
        assert!((grid.dt - dx * dx / 2.0).abs() < 1e-14);
        let p = transition_kernel(&spec, &grid, 0, KernelScheme::Explicit).unwrap();
        let i = 10;
        assert!((p.get(i, i - 1) - 0.25).abs() < 1e-12);
        assert!((p.get(i, i) - 0.5).abs() < 1e-12);
        assert!((p.get(i, i + 1) - 0.25).abs() < 1e-12);
        assert!(p.max_row_sum_deviation() <= 1e-12);
    }

    #[test]
    fn explicit_kernel_rejects_large_steps() {
        let spec = spec_with(Coefficients::constant(1.0), -1.0, 1.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 99, 10).unwrap();
        assert!(matches!(transition_kernel(&spec, &grid, 0, KernelScheme::Explicit), Err(Error::CflViolation { .. })));
        assert!(transition_kernel(&spec, &grid, 0, KernelScheme::Implicit).is_ok());
    }

    /// Dense Gauss-Jordan inverse, used as an independent route to `(I - dt A)^{-1}`.
    fn dense_inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m.to_vec();
        let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap()).unwrap();
            a.swap(c, piv);
            inv.swap(c, piv);
            let d = a[c][c];
            for j in 0..n {
                a[c][j] /= d;
                inv[c][j] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    for j in 0..n {
                        a[r][j] -= f * a[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn implicit_kernel_matches_dense_inverse() {
        let spec = spec_with(Coefficients::constant(1.0), -1.0, 1.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 15, 20).unwrap();
        let p = transition_kernel(&spec, &grid, 0, KernelScheme::Implicit).unwrap();
        let n = grid.n_nodes();
        let op = assemble_operator(&spec, &grid, 0).unwrap();
        let mut m = vec![vec![0.0; n]; n];
        m[0][0] = 1.0;
        m[n - 1][n - 1] = 1.0;
        for j in 0..op.len() {
            m[j + 1][j] = -grid.dt * op.lower[j];
            m[j + 1][j + 1] = 1.0 - grid.dt * op.diag[j];
            m[j + 1][j + 2] = -grid.dt * op.upper[j];
        }
        let inv = dense_inverse(&m);
        for i in 0..n {
            for j in 0..n {
                assert!((p.get(i, j) - inv[i][j]).abs() < 1e-13);
            }
        }
        // strictly positive interior rows, symmetric about the diagonal at the centre
        let c = 8;
        for j in 1..n - 1 {
            assert!(p.get(c, j) > 0.0);
        }
        for d in 1..6 {
            assert!((p.get(c, c - d) - p.get(c, c + d)).abs() < 1e-14);
        }
        assert!(p.max_row_sum_deviation() <= 1e-12);
        assert_eq!(p.clamp_magnitude, 0.0);
    }

    #[test]
    fn heat_kernel_matches_gaussian() {
        let spec = spec_with(Coefficients::constant(1.0), -6.0, 6.0, 0.5, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 399, 400).unwrap();
        let x0 = grid.nearest_node(0.0);
        assert!(grid.x_nodes[x0].abs() < 1e-12);
        let d = solve_density(&spec, &grid, 0, x0, KernelScheme::Implicit).unwrap();
        let dens = d.final_density();
        let l1: f64 =
            dens.iter().zip(&grid.x_nodes[1..=grid.nx]).map(|(p, y)| (p - gaussian(*y, 0.5)).abs() * grid.dx).sum();
        assert!(l1 <= 2e-2, "L1 = {l1}");
        for m in &d.masses {
            assert!(*m >= 0.999 && *m <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn single_step_density_is_kernel_row() {
        let spec = spec_with(Coefficients::sine(1.0, 0.5, 1.0), -4.0, 4.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 40, 10).unwrap();
        let s = grid.nt - 1;
        let d = solve_density(&spec, &grid, s, 17, KernelScheme::Implicit).unwrap();
        let p = transition_kernel(&spec, &grid, s, KernelScheme::Implicit).unwrap();
        for (j, m) in d.slices[1].iter().enumerate() {
            assert!((m - p.get(17, j)).abs() < 1e-14);
        }
    }

    #[test]
    fn density_symmetric_for_even_coefficient() {
        let coef = Coefficients::new(Arc::new(|t, x| 1.0 + 0.4 * x.cos() * (-t).exp()), None, 0.6, 1.4);
        let spec = spec_with(coef, -5.0, 5.0, 1.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 99, 50).unwrap();
        let c = grid.nearest_node(0.0);
        let d = solve_density(&spec, &grid, 0, c, KernelScheme::Implicit).unwrap();
        for slice in &d.slices {
            for k in 1..=49 {
                assert!((slice[c - k] - slice[c + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refinement_is_at_least_first_order() {
        let spec = spec_with(Coefficients::sine(1.0, 0.5, 1.0), -6.0, 6.0, 0.5, BoundaryMode::ClampToData);
        // compare on the coarse nodes: every coarse node is a fine node
        let g0 = SpaceTimeGrid::for_spec(&spec, 47, 25).unwrap();
        let g1 = g0.refined().unwrap();
        let g2 = g1.refined().unwrap();
        let final_on_coarse = |g: &SpaceTimeGrid, stride: usize| -> Vec<f64> {
            let d = solve_density(&spec, g, 0, g.nearest_node(0.0), KernelScheme::Implicit).unwrap();
            let dens: Vec<f64> = d.slices.last().unwrap().iter().map(|m| m / g.dx).collect();
            (0..g0.n_nodes()).map(|i| dens[i * stride]).collect()
        };
        let p0 = final_on_coarse(&g0, 1);
        let p1 = final_on_coarse(&g1, 2);
        let p2 = final_on_coarse(&g2, 4);
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs() * g0.dx).sum::<f64>();
        let c1 = l1(&p0, &p1);
        let c2 = l1(&p1, &p2);
        assert!(c2 <= 0.5 * c1, "changes {c1} -> {c2}");
    }

    #[test]
    fn envelope_of_heat_kernel_is_near_one() {
        // the implicit step fattens the far tails by O(dt); nt = 400 gives C_high ~ 1.07
        let spec = spec_with(Coefficients::constant(1.0), -6.0, 6.0, 0.5, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 399, 1600).unwrap();
        let d = solve_density(&spec, &grid, 0, grid.nearest_node(0.0), KernelScheme::Implicit).unwrap();
        let fit = aronson_envelope_check(&d, &grid, EnvelopeOptions::default()).unwrap();
        assert!((fit.c_low - 1.0).abs() <= 5e-2, "{fit:?}");
        assert!((fit.c_high - 1.0).abs() <= 5e-2, "{fit:?}");
    }

    #[test]
    fn envelope_of_sine_coefficient_is_bounded() {
        let spec = spec_with(Coefficients::sine(1.0, 0.5, 1.0), -7.0, 7.0, 0.5, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 400, 400).unwrap();
        let d = solve_density(&spec, &grid, 0, grid.nearest_node(0.0), KernelScheme::Implicit).unwrap();
        let fit = aronson_envelope_check(&d, &grid, EnvelopeOptions::default()).unwrap();
        assert!(fit.passed && fit.c_high <= 4.0, "{fit:?}");
    }

    #[test]
    fn empty_envelope_region_is_an_error() {
        let spec = spec_with(Coefficients::constant(1.0), -0.01, 0.01, 50.0, BoundaryMode::ClampToData);
        let grid = SpaceTimeGrid::for_spec(&spec, 1, 10).unwrap();
        let d = solve_density(&spec, &grid, 0, 1, KernelScheme::Implicit).unwrap();
        assert!(matches!(aronson_envelope_check(&d, &grid, EnvelopeOptions::default()), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn reflecting_boundary_conserves_mass() {
        let spec = spec_with(Coefficients::constant(1.0), -1.0, 1.0, 1.0, BoundaryMode::Reflecting);
        let grid = SpaceTimeGrid::for_spec(&spec, 30, 40).unwrap();
        let d = solve_density(&spec, &grid, 0, 5, KernelScheme::Implicit).unwrap();
        for m in &d.masses {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn flux_form_telescopes(u in proptest::collection::vec(-5.0f64..5.0, 22), amp in 0.0f64..0.9) {
            // sum_i (A u)_i dx equals the boundary flux difference exactly
            let spec = spec_with(Coefficients::sine(1.0, amp, 0.3), -2.0, 2.0, 1.0, BoundaryMode::ClampToData);
            let grid = SpaceTimeGrid::for_spec(&spec, 20, 5).unwrap();
            let op = assemble_operator(&spec, &grid, 3).unwrap();
            let au = op.apply(&u);
            let lhs: f64 = au.iter().sum::<f64>() * grid.dx;
            let t = grid.t_nodes[3];
            let s = 1.0 / (2.0 * grid.dx);
            let right = spec.coefficients.a(t, grid.face(grid.nx)) * (u[grid.nx + 1] - u[grid.nx]) * s;
            let left = spec.coefficients.a(t, grid.face(0)) * (u[1] - u[0]) * s;
            proptest::prop_assert!((lhs - (right - left)).abs() < 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn implicit_kernel_is_stochastic(amp in 0.0f64..0.9, nt in 1usize..50) {
            let spec = spec_with(Coefficients::sine(1.0, amp, 1.0), -3.0, 3.0, 1.0, BoundaryMode::ClampToData);
            let grid = SpaceTimeGrid::for_spec(&spec, 25, nt).unwrap();
            let p = transition_kernel(&spec, &grid, 0, KernelScheme::Implicit).unwrap();
            proptest::prop_assert!(p.max_row_sum_deviation() <= 1e-12);
            proptest::prop_assert!(p.clamp_magnitude <= 1e-14);
        }
    }
}
