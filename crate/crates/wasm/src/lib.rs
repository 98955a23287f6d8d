//! Browser bindings: solve a scenario, push a transition density forward,
//! and draw sample paths. Each call takes scenario text in the same format
//! as the CLI's `.cfg` files.

use obstacle_core::grid::{solve_density, KernelScheme, SpaceTimeGrid};
use obstacle_core::scenario::Scenario;
use obstacle_core::solver::solve_psor;
use obstacle_core::stochastic::simulate_paths;
use obstacle_core::Result;
use wasm_bindgen::prelude::*;

/// Value function at `t = 0` and the contact set over time.
#[wasm_bindgen]
#[derive(Clone, Debug, PartialEq)]
pub struct SolveView {
    x: Vec<f64>,
    u0: Vec<f64>,
    h0: Vec<f64>,
    t: Vec<f64>,
    /// 1 where `u = h`, one row of `x().len()` entries per time.
    contact: Vec<u8>,
}

#[wasm_bindgen]
impl SolveView {
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    pub fn u0(&self) -> Vec<f64> {
        self.u0.clone()
    }
    pub fn h0(&self) -> Vec<f64> {
        self.h0.clone()
    }
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }
    pub fn contact(&self) -> Vec<u8> {
        self.contact.clone()
    }
}

/// Final-time density of the grid chain started at a node.
#[wasm_bindgen]
#[derive(Clone, Debug, PartialEq)]
pub struct DensityView {
    x: Vec<f64>,
    p: Vec<f64>,
    mass: f64,
}

#[wasm_bindgen]
impl DensityView {
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    pub fn p(&self) -> Vec<f64> {
        self.p.clone()
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
}

/// Sample paths stored path after path, each with `t().len()` points.
#[wasm_bindgen]
#[derive(Clone, Debug, PartialEq)]
pub struct PathsView {
    t: Vec<f64>,
    values: Vec<f64>,
    count: usize,
}

#[wasm_bindgen]
impl PathsView {
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
    pub fn count(&self) -> usize {
        self.count
    }
}

fn scenario(text: &str, nx: usize, nt: usize) -> Result<(Scenario, SpaceTimeGrid)> {
    let scn = Scenario::parse(text)?;
    let nx = if nx == 0 { scn.nx } else { nx };
    let nt = if nt == 0 { scn.nt } else { nt };
    let grid = SpaceTimeGrid::for_spec(&scn.spec, nx, nt)?;
    Ok((scn, grid))
}

/// `nx` or `nt` of 0 falls back to the scenario's grid.
pub fn solve_view(text: &str, nx: usize, nt: usize) -> Result<SolveView> {
    let (scn, grid) = scenario(text, nx, nt)?;
    let sol = solve_psor(&scn.spec, &grid, &scn.solver)?;
    let contact = (0..=grid.nt)
        .flat_map(|k| (0..grid.n_nodes()).map(move |i| (k, i)))
        .map(|(k, i)| u8::from(sol.is_contact(k, i)))
        .collect();
    Ok(SolveView {
        x: grid.x_nodes.clone(),
        u0: sol.u.row(0).to_vec(),
        h0: sol.h.row(0).to_vec(),
        t: grid.t_nodes.clone(),
        contact,
    })
}

pub fn density_view(text: &str, nx: usize, nt: usize, x0: f64) -> Result<DensityView> {
    let (scn, grid) = scenario(text, nx, nt)?;
    let i = grid.nearest_node(x0).clamp(1, grid.nx);
    let table = solve_density(&scn.spec, &grid, 0, i, KernelScheme::Implicit)?;
    Ok(DensityView {
        x: grid.x_nodes[1..=grid.nx].to_vec(),
        p: table.final_density(),
        mass: *table.masses.last().expect("density has slices"),
    })
}

pub fn paths_view(text: &str, x0: f64, count: usize, steps: usize, seed: u64) -> Result<PathsView> {
    let scn = Scenario::parse(text)?;
    let dt = scn.spec.horizon / steps.max(1) as f64;
    let ens = simulate_paths(&scn.spec, 0.0, x0, dt, count, seed)?;
    let t: Vec<f64> = (0..=ens.steps).map(|k| ens.time(k)).collect();
    let values = (0..count).flat_map(|m| ens.path(m)).collect();
    Ok(PathsView { t, values, count })
}

fn js(e: obstacle_core::Error) -> JsError {
    JsError::new(&format!("{} ({})", e, e.kind()))
}

#[wasm_bindgen]
pub fn solve(text: &str, nx: usize, nt: usize) -> std::result::Result<SolveView, JsError> {
    solve_view(text, nx, nt).map_err(js)
}

#[wasm_bindgen]
pub fn density(text: &str, nx: usize, nt: usize, x0: f64) -> std::result::Result<DensityView, JsError> {
    density_view(text, nx, nt, x0).map_err(js)
}

#[wasm_bindgen]
pub fn sample_paths(
    text: &str,
    x0: f64,
    count: usize,
    steps: usize,
    seed: u32,
) -> std::result::Result<PathsView, JsError> {
    paths_view(text, x0, count, steps, u64::from(seed)).map_err(js)
}
