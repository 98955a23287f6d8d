//! Problem data for the Cauchy obstacle problem
//!
//! ```text
//! min(u - h, -du/dt - A_t u - f(t, x, u, sigma du/dx)) = 0,   u(T) = phi,
//! A_t = 1/2 d/dx (a(t, x) d/dx)
//! ```
//!
//! on a truncated interval, together with the sampled checks of the
//! standing hypotheses (ellipticity, Lipschitz/growth bounds on the driver,
//! obstacle growth and compatibility with the terminal value).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Pure evaluator of a space-time function.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Pair evaluator `(t, x) -> (a, b)`.
pub type PairFn = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;
/// Pure evaluator of a function of space only.
pub type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Driver evaluator `(t, x, y, z) -> f`.
pub type DriverFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Diffusion coefficient `a(t, x)` with its ellipticity bounds.
#[derive(Clone)]
pub struct Coefficients {
    a: SpaceTimeFn,
    a_x: Option<SpaceTimeFn>,
    /// Optional fused evaluation of `(a, a_x)` for the path stepper.
    fused: Option<PairFn>,
    /// Lower ellipticity bound.
    pub lambda: f64,
    /// Upper ellipticity bound.
    pub big_lambda: f64,
}

impl Coefficients {
    pub fn new(a: SpaceTimeFn, a_x: Option<SpaceTimeFn>, lambda: f64, big_lambda: f64) -> Self {
        Self { a, a_x, fused: None, lambda, big_lambda }
    }

    /// `a(t, x) = a0`.
    pub fn constant(a0: f64) -> Self {
        Self::new(Arc::new(move |_, _| a0), Some(Arc::new(|_, _| 0.0)), a0, a0)
    }

    /// `a(t, x) = base + amplitude * sin(x) * exp(-decay * t)`.
    pub fn sine(base: f64, amplitude: f64, decay: f64) -> Self {
        let amp = amplitude.abs();
        let mut c = Self::new(
            Arc::new(move |t, x| base + amplitude * x.sin() * (-decay * t).exp()),
            Some(Arc::new(move |t, x| amplitude * x.cos() * (-decay * t).exp())),
            base - amp,
            base + amp,
        );
        c.fused = Some(Arc::new(move |t, x| {
            let (s, co) = x.sin_cos();
            let e = amplitude * (-decay * t).exp();
            (base + e * s, e * co)
        }));
        c
    }

    #[inline]
    pub fn a(&self, t: f64, x: f64) -> f64 {
        (self.a)(t, x)
    }

    /// `sigma = sqrt(a)`.
    #[inline]
    pub fn sigma(&self, t: f64, x: f64) -> f64 {
        self.a(t, x).sqrt()
    }

    /// Spatial derivative of `a`, if the coefficient family provides one.
    #[inline]
    pub fn a_x(&self, t: f64, x: f64) -> Option<f64> {
        self.a_x.as_ref().map(|d| d(t, x))
    }

    /// `(a, a_x)` in one call; `None` when there is no derivative.
    #[inline]
    pub fn a_and_slope(&self, t: f64, x: f64) -> Option<(f64, f64)> {
        match &self.fused {
            Some(f) => Some(f(t, x)),
            None => self.a_x(t, x).map(|d| (self.a(t, x), d)),
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.a_x.is_some()
    }
}

/// Nonlinear driver `f(t, x, y, z)` with its Lipschitz and growth data.
#[derive(Clone)]
pub struct Driver {
    f: DriverFn,
    /// Lipschitz constant in `(y, z)`.
    pub lipschitz: f64,
    /// Linear growth constant.
    pub growth: f64,
    g: SpaceTimeFn,
}

impl Driver {
    pub fn new(f: DriverFn, lipschitz: f64, growth: f64, g: SpaceTimeFn) -> Self {
        Self { f, lipschitz, growth, g }
    }

    pub fn zero() -> Self {
        Self::new(Arc::new(|_, _, _, _| 0.0), 0.0, 0.0, Arc::new(|_, _| 0.0))
    }

    /// `f = source` (independent of the solution).
    pub fn constant(source: f64) -> Self {
        Self::new(Arc::new(move |_, _, _, _| source), 0.0, 0.0, Arc::new(move |_, _| source.abs()))
    }

    /// `f = -rate * y + z_coef * z + source`.
    pub fn linear(rate: f64, z_coef: f64, source: f64) -> Self {
        let l = rate.abs().max(z_coef.abs());
        Self::new(Arc::new(move |_, _, y, z| -rate * y + z_coef * z + source), l, l, Arc::new(move |_, _| source.abs()))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64, z: f64) -> f64 {
        (self.f)(t, x, y, z)
    }

    /// Dominating function `g` of the growth bound.
    #[inline]
    pub fn g(&self, t: f64, x: f64) -> f64 {
        (self.g)(t, x)
    }

    /// Whether `f` may depend on `(y, z)`; a zero Lipschitz constant means it cannot.
    pub fn depends_on_solution(&self) -> bool {
        self.lipschitz > 0.0
    }
}

/// Obstacle `h`, terminal value `phi` and the polynomial growth bound of `h`.
#[derive(Clone)]
pub struct ObstacleData {
    h: SpaceTimeFn,
    phi: SpaceFn,
    /// `(c, beta)` with `|h(t, x)| <= c (1 + x^2)^beta`.
    pub growth: (f64, f64),
}

impl ObstacleData {
    pub fn new(h: SpaceTimeFn, phi: SpaceFn, growth: (f64, f64)) -> Self {
        Self { h, phi, growth }
    }

    #[inline]
    pub fn h(&self, t: f64, x: f64) -> f64 {
        (self.h)(t, x)
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    /// Replace the obstacle, keeping the terminal value.
    pub fn with_obstacle(&self, h: SpaceTimeFn, growth: (f64, f64)) -> Self {
        Self { h, phi: self.phi.clone(), growth }
    }
}

/// Polynomial weight `rho(x) = (1 + x^2)^(-alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weight {
    pub alpha: f64,
}

impl Weight {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }

    #[inline]
    pub fn rho(&self, x: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            (1.0 + x * x).powf(-self.alpha)
        }
    }
}

/// Far-field condition at the ends of the truncated interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Dirichlet values `max(h(t, x_b), phi(x_b))`; the chain is absorbed there.
    ClampToData,
    /// Zero flux through the end faces.
    Reflecting,
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryMode::ClampToData => write!(f, "clamp-to-data"),
            BoundaryMode::Reflecting => write!(f, "reflecting"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub lo: f64,
    pub hi: f64,
    pub mode: BoundaryMode,
}

/// Complete problem data.
#[derive(Clone)]
pub struct ObstacleProblemSpec {
    pub coefficients: Coefficients,
    pub driver: Driver,
    pub obstacle: ObstacleData,
    /// Horizon `T`.
    pub horizon: f64,
    pub weight: Weight,
    pub truncation: Truncation,
}

impl ObstacleProblemSpec {
    pub fn new(
        coefficients: Coefficients,
        driver: Driver,
        obstacle: ObstacleData,
        horizon: f64,
        weight: Weight,
        truncation: Truncation,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidProblem(format!("horizon must be positive, got {horizon}")));
        }
        if !(truncation.lo < truncation.hi) {
            return Err(Error::InvalidProblem(format!(
                "truncation requires lo < hi, got [{}, {}]",
                truncation.lo, truncation.hi
            )));
        }
        let c = &coefficients;
        if !(c.lambda > 0.0 && c.big_lambda >= c.lambda) {
            return Err(Error::InvalidProblem(format!(
                "ellipticity bounds need 0 < lambda <= Lambda, got ({}, {})",
                c.lambda, c.big_lambda
            )));
        }
        if !(weight.alpha >= 0.0) {
            return Err(Error::InvalidProblem(format!("weight exponent must be >= 0, got {}", weight.alpha)));
        }
        if driver.lipschitz < 0.0 || driver.growth < 0.0 {
            return Err(Error::InvalidProblem("driver constants must be nonnegative".into()));
        }
        Ok(Self { coefficients, driver, obstacle, horizon, weight, truncation })
    }

    /// Same problem with a different obstacle.
    pub fn with_obstacle(&self, h: SpaceTimeFn, growth: (f64, f64)) -> Self {
        let mut out = self.clone();
        out.obstacle = self.obstacle.with_obstacle(h, growth);
        out
    }

    /// Same problem with a different driver.
    pub fn with_driver(&self, driver: Driver) -> Self {
        let mut out = self.clone();
        out.driver = driver;
        out
    }

    /// Dirichlet value used at a truncation end in clamp mode.
    #[inline]
    pub fn boundary_value(&self, t: f64, x: f64) -> f64 {
        self.obstacle.h(t, x).max(self.obstacle.phi(x))
    }
}

/// Worst-case point of a sampled inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    /// Largest relative violation found (0 when the inequality holds at every probe).
    pub max_violation: f64,
    pub witness: Option<Witness>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

const VIOLATION_TOL: f64 = 1e-12;

/// Box of `(y, z)` values probed by the driver checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeBox {
    pub t: (f64, f64),
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl ProbeBox {
    pub fn for_spec(spec: &ObstacleProblemSpec) -> Self {
        Self { t: (0.0, spec.horizon), x: (spec.truncation.lo, spec.truncation.hi), y: (-10.0, 10.0), z: (-10.0, 10.0) }
    }
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self { t: (0.0, 1.0), x: (-1.0, 1.0), y: (-10.0, 10.0), z: (-10.0, 10.0) }
    }
}

/// Scrambled Halton sequence: radical inverses in bases 2, 3, 5, 7, 11, 13
/// shifted modulo 1 by a seed-derived rotation.
struct Halton {
    index: u64,
    shift: [f64; 6],
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

impl Halton {
    fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut shift = [0.0; 6];
        for s in shift.iter_mut() {
            *s = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
        }
        Self { index: 0, shift }
    }

    fn next_point(&mut self) -> [f64; 6] {
        self.index += 1;
        let mut out = [0.0; 6];
        for (d, (&b, o)) in HALTON_BASES.iter().zip(out.iter_mut()).enumerate() {
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = self.index;
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            *o = (r + self.shift[d]).fract();
        }
        out
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn lerp(range: (f64, f64), u: f64) -> f64 {
    range.0 + (range.1 - range.0) * u
}

fn finite(name: &'static str, v: f64, w: Witness) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::EvaluatorFailure { evaluator: name, t: w.t, x: w.x })
    }
}

#[derive(Default)]
struct Worst {
    violation: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn record(&mut self, violation: f64, w: Witness) {
        if violation > self.violation || (self.witness.is_none() && violation > 0.0) {
            self.violation = violation;
            self.witness = Some(w);
        }
    }

    fn finish(self, name: &'static str) -> HypothesisCheck {
        HypothesisCheck {
            name,
            max_violation: self.violation,
            witness: self.witness,
            passed: self.violation <= VIOLATION_TOL,
        }
    }
}

/// Relative excess of `lhs` over `rhs`.
#[inline]
fn excess(lhs: f64, rhs: f64) -> f64 {
    ((lhs - rhs) / rhs.abs().max(1.0)).max(0.0)
}

/// Sample the standing hypotheses at `probe_count` quasi-random points.
///
/// Checks ellipticity, the Lipschitz and growth bounds on `f`, the obstacle
/// growth bound and `phi >= h(T, .)`. Deterministic in `(spec, probe_count, seed)`.
pub fn validate_hypotheses(spec: &ObstacleProblemSpec, probe_count: usize, seed: u64) -> Result<HypothesisReport> {
    if probe_count == 0 {
        return Err(Error::InvalidArgument("probe_count must be >= 1".into()));
    }
    let bx = ProbeBox::for_spec(spec);
    let coef = &spec.coefficients;
    let drv = &spec.driver;
    let obs = &spec.obstacle;
    let (gc, gbeta) = obs.growth;
    let horizon = spec.horizon;

    let mut ellipticity = Worst::default();
    let mut lipschitz = Worst::default();
    let mut growth = Worst::default();
    let mut terminal = Worst::default();
    let mut obstacle_growth = Worst::default();

    let mut seq = Halton::new(seed);
    for _ in 0..probe_count {
        let p = seq.next_point();
        let t = lerp(bx.t, p[0]);
        let x = lerp(bx.x, p[1]);
        let y1 = lerp(bx.y, p[2]);
        let z1 = lerp(bx.z, p[3]);
        let y2 = lerp(bx.y, p[4]);
        let z2 = lerp(bx.z, p[5]);
        let w = Witness { t, x, y: y1, z: z1 };

        let a = finite("a", coef.a(t, x), w)?;
        ellipticity.record(excess(coef.lambda, a).max(excess(a, coef.big_lambda)), w);

        let f1 = finite("f", drv.eval(t, x, y1, z1), w)?;
        let f2 = finite("f", drv.eval(t, x, y2, z2), w)?;
        let fy = finite("f", drv.eval(t, x, y2, z1), w)?;
        let g = finite("g", drv.g(t, x), w)?;
        let l = drv.lipschitz;
        lipschitz.record(excess((f1 - f2).abs(), l * ((y1 - y2).abs() + (z1 - z2).abs())), w);
        lipschitz.record(excess((f1 - fy).abs(), l * (y1 - y2).abs()), w);
        growth.record(excess(f1.abs(), g + drv.growth * (y1.abs() + z1.abs())), w);

        let hx = finite("h", obs.h(t, x), w)?;
        obstacle_growth.record(excess(hx.abs(), gc * (1.0 + x * x).powf(gbeta)), w);

        let wt = Witness { t: horizon, x, y: 0.0, z: 0.0 };
        let h_t = finite("h", obs.h(horizon, x), wt)?;
        let phi = finite("phi", obs.phi(x), wt)?;
        terminal.record(excess(h_t, phi), wt);
    }

    Ok(HypothesisReport {
        checks: vec![
            ellipticity.finish("ellipticity"),
            lipschitz.finish("driver-lipschitz"),
            growth.finish("driver-growth"),
            obstacle_growth.finish("obstacle-growth"),
            terminal.finish("terminal-above-obstacle"),
        ],
    })
}

/// Empirical Lipschitz constant of the driver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    pub declared: f64,
    pub passed: bool,
}

/// Largest difference quotient `|f1 - f2| / (|y1 - y2| + |z1 - z2|)` over
/// probe pairs that share `(t, x)`. Each probe is paired with a `y`-only,
/// a `z`-only and a joint perturbation.
pub fn lipschitz_probe(driver: &Driver, domain: &ProbeBox, probe_count: usize, seed: u64) -> Result<LipschitzEstimate> {
    if probe_count < 2 {
        return Err(Error::InvalidArgument("probe_count must be >= 2".into()));
    }
    let mut seq = Halton::new(seed);
    let mut best: f64 = 0.0;
    for _ in 0..probe_count {
        let p = seq.next_point();
        let t = lerp(domain.t, p[0]);
        let x = lerp(domain.x, p[1]);
        let y1 = lerp(domain.y, p[2]);
        let z1 = lerp(domain.z, p[3]);
        let y2 = lerp(domain.y, p[4]);
        let z2 = lerp(domain.z, p[5]);
        let w = Witness { t, x, y: y1, z: z1 };
        let base = finite("f", driver.eval(t, x, y1, z1), w)?;
        for (yb, zb) in [(y2, z1), (y1, z2), (y2, z2)] {
            let d = (y1 - yb).abs() + (z1 - zb).abs();
            if d == 0.0 {
                continue;
            }
            let other = finite("f", driver.eval(t, x, yb, zb), w)?;
            best = best.max((base - other).abs() / d);
        }
    }
    Ok(LipschitzEstimate {
        estimate: best,
        declared: driver.lipschitz,
        passed: best <= driver.lipschitz * (1.0 + 1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_sine_matches_separate_evaluation() {
        let c = Coefficients::sine(1.0, 0.5, 1.0);
        for &(t, x) in &[(0.0, 0.3), (0.7, -2.1), (1.0, 5.5)] {
            let (a, d) = c.a_and_slope(t, x).unwrap();
            assert!((a - c.a(t, x)).abs() <= 1e-15);
            assert!((d - c.a_x(t, x).unwrap()).abs() <= 1e-15);
        }
        assert_eq!(Coefficients::new(Arc::new(|_, _| 1.0), None, 1.0, 1.0).a_and_slope(0.0, 0.0), None);
    }

    fn base_spec(coef: Coefficients, driver: Driver, h: f64, phi: f64) -> ObstacleProblemSpec {
        ObstacleProblemSpec::new(
            coef,
            driver,
            ObstacleData::new(Arc::new(move |_, _| h), Arc::new(move |_| phi), (h.abs().max(1e-300), 0.0)),
            1.0,
            Weight::new(0.0),
            Truncation { lo: -3.0, hi: 3.0, mode: BoundaryMode::ClampToData },
        )
        .unwrap()
    }

    #[test]
    fn constants_pass_every_hypothesis() {
        let spec = base_spec(Coefficients::constant(1.0), Driver::zero(), 0.0, 1.0);
        let rep = validate_hypotheses(&spec, 500, 7).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        for c in &rep.checks {
            assert_eq!(c.max_violation, 0.0, "{}", c.name);
        }
    }

    #[test]
    fn sine_coefficient_within_declared_bounds() {
        let spec = base_spec(Coefficients::sine(1.0, 0.5, 1.0), Driver::zero(), 0.0, 0.0);
        assert_eq!(spec.coefficients.lambda, 0.5);
        assert_eq!(spec.coefficients.big_lambda, 1.5);
        assert!(validate_hypotheses(&spec, 2000, 1).unwrap().all_passed());
    }

    #[test]
    fn terminal_below_obstacle_fails_with_witness_at_horizon() {
        let spec = base_spec(Coefficients::constant(1.0), Driver::zero(), 1.0, 0.0);
        let rep = validate_hypotheses(&spec, 100, 3).unwrap();
        let c = rep.get("terminal-above-obstacle").unwrap();
        assert!(!c.passed);
        let w = c.witness.unwrap();
        assert_eq!(w.t, 1.0);
        assert!(w.x >= -3.0 && w.x <= 3.0);
        assert!(rep.get("ellipticity").unwrap().passed);
    }

    #[test]
    fn understated_ellipticity_is_caught() {
        let mut coef = Coefficients::sine(1.0, 0.5, 0.0);
        coef.big_lambda = 1.2;
        let spec = base_spec(coef, Driver::zero(), 0.0, 0.0);
        assert!(!validate_hypotheses(&spec, 500, 3).unwrap().get("ellipticity").unwrap().passed);
    }

    #[test]
    fn non_finite_evaluator_is_an_error() {
        let coef = Coefficients::new(Arc::new(|_, x| if x > 0.0 { f64::NAN } else { 1.0 }), None, 1.0, 1.0);
        let spec = base_spec(coef, Driver::zero(), 0.0, 0.0);
        assert!(matches!(validate_hypotheses(&spec, 100, 0), Err(Error::EvaluatorFailure { evaluator: "a", .. })));
    }

    #[test]
    fn validation_is_deterministic() {
        let spec = base_spec(Coefficients::sine(1.0, 0.5, 1.0), Driver::linear(0.05, 0.1, 0.0), 0.0, 0.0);
        assert_eq!(validate_hypotheses(&spec, 300, 11).unwrap(), validate_hypotheses(&spec, 300, 11).unwrap());
    }

    #[test]
    fn lipschitz_of_linear_drivers() {
        let d = ProbeBox::default();
        let est = lipschitz_probe(&Driver::linear(0.05, 0.0, 0.0), &d, 200, 1).unwrap();
        assert!((est.estimate - 0.05).abs() < 1e-12 && est.passed);
        let est = lipschitz_probe(&Driver::zero(), &d, 200, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        let est = lipschitz_probe(&Driver::linear(0.05, 0.1, 0.0), &d, 200, 1).unwrap();
        assert!(est.estimate >= 0.1 - 1e-12 && est.estimate <= 0.15, "{est:?}");
        assert!(est.passed);
    }

    #[test]
    fn lipschitz_matches_dense_brute_force() {
        // f = -r y + k z: exhaustive pairs on a dense lattice give max(r, k).
        let (r, k) = (0.05, 0.1);
        let f = |y: f64, z: f64| -r * y + k * z;
        let pts: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let mut brute: f64 = 0.0;
        for &y1 in &pts {
            for &z1 in &pts {
                for &y2 in &pts {
                    for &z2 in &pts {
                        let d = (y1 - y2).abs() + (z1 - z2).abs();
                        if d > 0.0 {
                            brute = brute.max((f(y1, z1) - f(y2, z2)).abs() / d);
                        }
                    }
                }
            }
        }
        let est = lipschitz_probe(&Driver::linear(r, k, 0.0), &ProbeBox::default(), 500, 9).unwrap();
        assert!((est.estimate - brute).abs() < 1e-9, "{} vs {brute}", est.estimate);
    }

    #[test]
    fn understated_lipschitz_fails() {
        let mut d = Driver::linear(0.2, 0.0, 0.0);
        d.lipschitz = 0.1;
        assert!(!lipschitz_probe(&d, &ProbeBox::default(), 50, 0).unwrap().passed);
    }

    #[test]
    fn weight_basics() {
        let w = Weight::new(1.0);
        assert_eq!(w.rho(0.0), 1.0);
        assert!((w.rho(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(Weight::new(0.0).rho(1e6), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn weight_nonincreasing_in_abs_x(alpha in 0.0f64..3.0, a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let w = Weight::new(alpha);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(w.rho(hi) <= w.rho(lo));
            proptest::prop_assert!(w.rho(-hi) == w.rho(hi));
            proptest::prop_assert!(w.rho(hi) > 0.0 && w.rho(hi) <= 1.0);
        }
    }
}
