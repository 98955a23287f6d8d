//! Scenario files: flat `key = value` text with dotted sections.
//!
//! ```text
//! # comment
//! name = american-put
//! horizon = 1.0
//! [coefficients]
//! family = constant
//! a = 0.09
//! driver.family = linear
//! driver.rate = 0.05
//! ```
//!
//! A `[section]` line prefixes the keys that follow it; `[]` resets the
//! prefix. Unknown and duplicate keys are errors.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::problem::{
    BoundaryMode, Coefficients, Driver, ObstacleData, ObstacleProblemSpec, SpaceFn, Truncation, Weight,
};
use crate::solver::SolverOptions;
use crate::verify::{McParams, VerifyTolerances};

/// Obstacle level used by the `none` family.
pub const INACTIVE_LEVEL: f64 = -1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct McSettings {
    pub paths: usize,
    pub seed: u64,
    pub degree: usize,
    /// Path step; `None` uses the grid step.
    pub dt_path: Option<f64>,
}

impl McSettings {
    pub fn params(&self) -> McParams {
        McParams { paths: self.paths, seed: self.seed, degree: self.degree }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySettings {
    /// Penalties `2^k` for `k` in this inclusive range.
    pub penalty_exponents: (i32, i32),
    pub picard_max: usize,
    pub picard_tol: f64,
    /// Downward shift of the obstacle in the stability study.
    pub stability_delta: f64,
    /// Penalty of `solve --method penalized` when none is given.
    pub default_penalty: f64,
}

impl StudySettings {
    pub fn schedule(&self) -> Vec<f64> {
        (self.penalty_exponents.0..=self.penalty_exponents.1).map(|k| 2f64.powi(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySettings {
    /// `(s, x)` probes of the representation checks.
    pub probes: Vec<(f64, f64)>,
    /// Start of the measure-identity and path checks.
    pub start: (f64, f64),
    /// Time window of the interval-measure check; defaults to `[0, T]`.
    pub interval: (f64, f64),
    /// Spatial set of the interval-measure check; defaults to the truncation.
    pub set: (f64, f64),
    /// Number of quasi-random points for the hypothesis checks.
    pub hypothesis_probes: usize,
    pub hypothesis_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSettings {
    pub paths: usize,
    pub p: f64,
    pub start: (f64, f64),
}

/// Safety factor and seed of the bias pre-study.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSettings {
    pub seed: u64,
    pub safety: f64,
}

/// A parsed scenario file.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub spec: ObstacleProblemSpec,
    pub nx: usize,
    pub nt: usize,
    pub mc: McSettings,
    pub study: StudySettings,
    pub verify: VerifySettings,
    pub moments: MomentSettings,
    pub calibration: CalibrationSettings,
    pub tolerances: VerifyTolerances,
    pub solver: SolverOptions,
    /// Family names of `(coefficients, driver, obstacle, terminal)`.
    pub families: [String; 4],
    /// File contents as read.
    pub source: String,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let s = build(&mut kv, text)?;
        kv.finish()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

struct KeyValues {
    map: BTreeMap<String, (usize, String)>,
    used: std::collections::BTreeSet<String>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut prefix = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let sec = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Scenario(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if !sec.is_empty() && !valid_key(sec) {
                    return Err(Error::Scenario(format!("line {line_no}: bad section name '{sec}'")));
                }
                prefix = if sec.is_empty() { String::new() } else { format!("{sec}.") };
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Scenario(format!("line {line_no}: expected 'key = value'")))?;
            let k = k.trim();
            if !valid_key(k) {
                return Err(Error::Scenario(format!("line {line_no}: bad key '{k}'")));
            }
            let key = format!("{prefix}{k}");
            if let Some((first, _)) = map.insert(key.clone(), (line_no, v.trim().to_string())) {
                return Err(Error::Scenario(format!("line {line_no}: duplicate key '{key}' (first on line {first})")));
            }
        }
        Ok(Self { map, used: Default::default() })
    }

    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn string(&mut self, key: &str) -> Result<String> {
        self.raw(key).map(|(_, v)| v).ok_or_else(|| Error::Scenario(format!("missing key '{key}'")))
    }

    fn string_or(&mut self, key: &str, default: &str) -> String {
        self.raw(key).map(|(_, v)| v).unwrap_or_else(|| default.to_string())
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Scenario(format!("line {line}: '{key}' expects a number, got '{v}'"))),
        }
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        self.num(key)?.ok_or_else(|| Error::Scenario(format!("missing key '{key}'")))
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::Scenario(format!("line {line}: '{key}' expects comma-separated numbers"))),
        }
    }

    fn pair_or(&mut self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        match self.list(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(_) => Err(Error::Scenario(format!("'{key}' expects two numbers"))),
        }
    }

    /// `s:x, s:x, ...`
    fn points(&mut self, key: &str) -> Result<Option<Vec<(f64, f64)>>> {
        let Some((line, v)) = self.raw(key) else { return Ok(None) };
        let bad = || Error::Scenario(format!("line {line}: '{key}' expects 's:x' pairs separated by commas"));
        v.split(',')
            .map(|p| {
                let (s, x) = p.split_once(':').ok_or_else(bad)?;
                Ok((s.trim().parse().map_err(|_| bad())?, x.trim().parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn finish(&self) -> Result<()> {
        let unknown: Vec<String> = self
            .map
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .map(|(k, (l, _))| format!("'{k}' (line {l})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
}

/// `sum c_i x^i` with the bound `|p(x)| <= (sum |c_i|) (1 + x^2)^(deg / 2)`.
fn polynomial(coeffs: Vec<f64>) -> (SpaceFn, (f64, f64)) {
    let c = coeffs.iter().map(|v| v.abs()).sum::<f64>();
    let deg = coeffs.len().saturating_sub(1) as f64;
    let f = Arc::new(move |x: f64| coeffs.iter().rev().fold(0.0, |acc, &ci| acc * x + ci));
    (f, (c.max(f64::MIN_POSITIVE), 0.5 * deg))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Scenario(format!("'{name}' must be positive, got {v}")))
    }
}

fn build(kv: &mut KeyValues, text: &str) -> Result<Scenario> {
    let name = kv.string("name")?;
    let horizon = kv.f64("horizon")?;

    let coef_family = kv.string("coefficients.family")?;
    let coefficients = match coef_family.as_str() {
        "constant" => Coefficients::constant(positive("coefficients.a", kv.f64("coefficients.a")?)?),
        "sine-coef" => {
            let base = kv.f64("coefficients.base")?;
            let amp = kv.f64("coefficients.amplitude")?;
            let decay = kv.f64_or("coefficients.decay", 0.0)?;
            if !(base > amp.abs()) {
                return Err(Error::Scenario(format!("sine-coef needs base > |amplitude|, got {base}, {amp}")));
            }
            Coefficients::sine(base, amp, decay)
        }
        other => return Err(Error::Scenario(format!("unknown coefficients family '{other}'"))),
    };

    let driver_family = kv.string_or("driver.family", "zero");
    let driver = match driver_family.as_str() {
        "zero" => Driver::zero(),
        "constant" => Driver::constant(kv.f64("driver.source")?),
        "linear" => {
            Driver::linear(kv.f64("driver.rate")?, kv.f64_or("driver.z_coef", 0.0)?, kv.f64_or("driver.source", 0.0)?)
        }
        other => return Err(Error::Scenario(format!("unknown driver family '{other}'"))),
    };

    let obstacle_family = kv.string("obstacle.family")?;
    let (h, growth): (SpaceFn, (f64, f64)) = match obstacle_family.as_str() {
        "constant" => {
            let v = kv.f64("obstacle.value")?;
            (Arc::new(move |_| v), (v.abs().max(f64::MIN_POSITIVE), 0.0))
        }
        "american-put" => {
            let k = positive("obstacle.strike", kv.f64_or("obstacle.strike", 1.0)?)?;
            (Arc::new(move |x: f64| (k - x.exp()).max(0.0)), (k, 0.0))
        }
        "custom-polynomial" => {
            let c =
                kv.list("obstacle.coeffs")?.ok_or_else(|| Error::Scenario("missing key 'obstacle.coeffs'".into()))?;
            polynomial(c)
        }
        "none" => (Arc::new(|_| INACTIVE_LEVEL), (-INACTIVE_LEVEL, 0.0)),
        other => return Err(Error::Scenario(format!("unknown obstacle family '{other}'"))),
    };

    let terminal_family = kv.string_or("terminal.family", "obstacle");
    let phi: SpaceFn = match terminal_family.as_str() {
        "obstacle" => h.clone(),
        "constant" => {
            let v = kv.f64("terminal.value")?;
            Arc::new(move |_| v)
        }
        "gaussian" => {
            let amp = kv.f64_or("terminal.amplitude", 1.0)?;
            let centre = kv.f64_or("terminal.centre", 0.0)?;
            let width = positive("terminal.width", kv.f64_or("terminal.width", 1.0)?)?;
            Arc::new(move |x: f64| amp * (-0.5 * ((x - centre) / width).powi(2)).exp())
        }
        "custom-polynomial" => {
            let c =
                kv.list("terminal.coeffs")?.ok_or_else(|| Error::Scenario("missing key 'terminal.coeffs'".into()))?;
            polynomial(c).0
        }
        other => return Err(Error::Scenario(format!("unknown terminal family '{other}'"))),
    };

    let weight = Weight::new(kv.f64_or("weight.alpha", 1.0)?);
    let mode = match kv.string_or("truncation.boundary", "clamp").as_str() {
        "clamp" => BoundaryMode::ClampToData,
        "reflecting" => BoundaryMode::Reflecting,
        other => return Err(Error::Scenario(format!("unknown truncation.boundary '{other}'"))),
    };
    let truncation = Truncation { lo: kv.f64("truncation.lo")?, hi: kv.f64("truncation.hi")?, mode };

    let h_st = h.clone();
    let obstacle = ObstacleData::new(Arc::new(move |_, x| h_st(x)), phi, growth);
    let spec = ObstacleProblemSpec::new(coefficients, driver, obstacle, horizon, weight, truncation)?;

    let nx = kv.usize_or("grid.nx", 200)?;
    let nt = kv.usize_or("grid.nt", 200)?;

    let mc = McSettings {
        paths: kv.usize_or("mc.paths", 100_000)?,
        seed: kv.num("mc.seed")?.unwrap_or(1),
        degree: kv.usize_or("mc.degree", 3)?,
        dt_path: kv.num("mc.dt_path")?,
    };

    let exps = kv.pair_or("study.penalty_exponents", (4.0, 14.0))?;
    let study = StudySettings {
        penalty_exponents: (exps.0 as i32, exps.1 as i32),
        picard_max: kv.usize_or("study.picard_max", 15)?,
        picard_tol: kv.f64_or("study.picard_tol", 1e-10)?,
        stability_delta: kv.f64_or("study.stability_delta", 0.05)?,
        default_penalty: kv.f64_or("study.default_penalty", 1024.0)?,
    };
    if study.penalty_exponents.0 > study.penalty_exponents.1 || study.penalty_exponents.0 < 0 {
        return Err(Error::Scenario("study.penalty_exponents must be 0 <= lo <= hi".into()));
    }

    let probes = kv.points("verify.probes")?.unwrap_or_else(|| vec![(0.0, 0.0)]);
    let start = match kv.points("verify.start")? {
        Some(p) if p.len() == 1 => p[0],
        Some(_) => return Err(Error::Scenario("'verify.start' expects a single 's:x'".into())),
        None => probes[0],
    };
    let verify = VerifySettings {
        probes,
        start,
        interval: kv.pair_or("verify.interval", (0.0, horizon))?,
        set: kv.pair_or("verify.set", (truncation.lo, truncation.hi))?,
        hypothesis_probes: kv.usize_or("verify.hypothesis_probes", 4096)?,
        hypothesis_seed: kv.num("verify.hypothesis_seed")?.unwrap_or(17),
    };

    let moments = MomentSettings {
        paths: kv.usize_or("moments.paths", 1_000_000)?,
        p: kv.f64_or("moments.p", 4.0)?,
        start: match kv.points("moments.start")? {
            Some(p) if p.len() == 1 => p[0],
            Some(_) => return Err(Error::Scenario("'moments.start' expects a single 's:x'".into())),
            None => (0.0, 0.0),
        },
    };

    let d = VerifyTolerances::default();
    let tolerances = VerifyTolerances {
        c_bias_u: kv.f64_or("calibration.c_bias_u", d.c_bias_u)?,
        z_floor: kv.f64_or("calibration.z_floor", d.z_floor)?,
        chain_u: kv.f64_or("tolerances.chain_u", d.chain_u)?,
        measure_rel: kv.f64_or("tolerances.measure_rel", d.measure_rel)?,
        skorokhod: kv.f64_or("tolerances.skorokhod", d.skorokhod)?,
        skorokhod_penalized_c: kv.f64_or("tolerances.skorokhod_penalized_c", d.skorokhod_penalized_c)?,
        ac_residual_rel: kv.f64_or("tolerances.ac_residual_rel", d.ac_residual_rel)?,
        bounds_lo: kv.f64_or("tolerances.bounds_lo", d.bounds_lo)?,
        bounds_hi: kv.f64_or("tolerances.bounds_hi", d.bounds_hi)?,
        refinement_rel: kv.f64_or("tolerances.refinement_rel", d.refinement_rel)?,
        minimality_gap: kv.f64_or("tolerances.minimality_gap", d.minimality_gap)?,
    };
    let calibration = CalibrationSettings {
        seed: kv.num("calibration.seed")?.unwrap_or(0x5eed),
        safety: kv.f64_or("calibration.safety", 2.0)?,
    };

    let so = SolverOptions::default();
    let solver = SolverOptions {
        inner_tol: kv.f64_or("tolerances.inner_tol", so.inner_tol)?,
        lcp_tol: kv.f64_or("tolerances.lcp_tol", so.lcp_tol)?,
        mono_tol: kv.f64_or("tolerances.mono_tol", so.mono_tol)?,
        contact_tol: kv.num("tolerances.contact_tol")?.or(so.contact_tol),
        omega: kv.f64_or("tolerances.omega", so.omega)?,
        max_inner: kv.usize_or("tolerances.max_inner", so.max_inner)?,
        ..so
    };

    Ok(Scenario {
        name,
        spec,
        nx,
        nt,
        mc,
        study,
        verify,
        moments,
        calibration,
        tolerances,
        solver,
        families: [coef_family, driver_family, obstacle_family, terminal_family],
        source: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUT: &str = "
        name = put   # trailing comment
        horizon = 1
        [coefficients]
        family = constant
        a = 0.09
        []
        driver.family = linear
        driver.rate = 0.05
        obstacle.family = american-put
        truncation.lo = -3
        truncation.hi = 3
        verify.probes = 0:0, 0.5:-0.25
    ";

    #[test]
    fn sections_and_defaults() {
        let s = Scenario::parse(PUT).unwrap();
        assert_eq!(s.name, "put");
        assert_eq!(s.spec.coefficients.a(0.3, 1.0), 0.09);
        assert_eq!(s.spec.driver.eval(0.0, 0.0, 2.0, 0.0), -0.1);
        assert_eq!(s.spec.obstacle.h(0.0, 0.0), 0.0);
        assert_eq!(s.spec.obstacle.phi(-1.0), 1.0 - (-1.0f64).exp());
        assert_eq!(s.verify.probes, vec![(0.0, 0.0), (0.5, -0.25)]);
        assert_eq!(s.verify.start, (0.0, 0.0));
        assert_eq!((s.nx, s.nt), (200, 200));
        assert_eq!(s.study.schedule().len(), 11);
        assert_eq!(s.families[3], "obstacle");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let e = Scenario::parse(&format!("{PUT}\ngrid.nz = 3\n")).err().unwrap();
        assert!(e.to_string().contains("grid.nz"), "{e}");
        let e = Scenario::parse(&format!("{PUT}\nhorizon = 2\n")).err().unwrap();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn bad_values_name_the_line() {
        let e = Scenario::parse(&PUT.replace("a = 0.09", "a = fast")).err().unwrap();
        assert!(e.to_string().contains("line 6"), "{e}");
        assert!(Scenario::parse(&PUT.replace("american-put", "bermudan")).is_err());
        assert!(Scenario::parse(&PUT.replace("family = constant", "family = sine-coef")).is_err());
    }

    #[test]
    fn polynomial_families() {
        let text = PUT.replace(
            "obstacle.family = american-put",
            "obstacle.family = custom-polynomial\nobstacle.coeffs = 1, 0, -1",
        ) + "terminal.family = gaussian\nterminal.amplitude = 2\n";
        let s = Scenario::parse(&text).unwrap();
        assert_eq!(s.spec.obstacle.h(0.0, 3.0), -8.0);
        assert_eq!(s.spec.obstacle.growth, (2.0, 1.0));
        assert_eq!(s.spec.obstacle.phi(0.0), 2.0);
    }

    #[test]
    fn inactive_obstacle_family() {
        let s = Scenario::parse(&PUT.replace("american-put", "none")).unwrap();
        assert_eq!(s.spec.obstacle.h(0.2, 1.0), INACTIVE_LEVEL);
    }
}
