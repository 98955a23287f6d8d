use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use obstacle_core::grid::SpaceTimeGrid;
use obstacle_core::problem::validate_hypotheses;
use obstacle_core::report::{self, num, RunInfo, Table};
use obstacle_core::scenario::Scenario;
use obstacle_core::solver::{
    energy_refinement, obstacle_stability, penalization_study, picard_outer, solve_penalized, solve_psor, InnerMethod,
    ObstacleSolution,
};
use obstacle_core::stochastic::{
    moment_ratio_streaming, optimal_stopping_value, penalization_convergence_mc, rbsde_chain_dp, rbsde_penalized_mc,
    rbsde_reflected_mc, simulate_paths, Estimate, RbsdeEstimate,
};
use obstacle_core::suite::{parse_checks, run_checks};
use obstacle_core::verify::{calibrate_bias, snap_probe};
use obstacle_core::Error;

#[derive(Parser)]
#[command(
    name = "obstacle",
    version,
    about = "Obstacle problems for divergence-form parabolic equations and their reflected BSDEs"
)]
struct Cli {
    /// Scenario file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Directory for CSV and text artifacts; nothing is written when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the scenario's Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (speed only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the obstacle problem on the scenario grid.
    Solve {
        #[arg(long, value_enum, default_value_t = MethodArg::Psor)]
        method: MethodArg,
        /// Penalty level for `--method penalized`.
        #[arg(long)]
        penalty: Option<f64>,
    },
    /// Run a convergence or calibration study.
    Study {
        #[arg(value_enum)]
        study: StudyKind,
    },
    /// Run named checks (`all` or a comma-separated list).
    Verify {
        #[arg(long, default_value = "all")]
        checks: String,
    },
    /// Simulate paths and compare the three reflected BSDE schemes.
    Simulate {
        #[arg(long)]
        paths: Option<usize>,
        /// Number of paths written to `paths.csv`.
        #[arg(long, default_value_t = 8)]
        keep: usize,
    },
    /// Value of the first-contact stopping rule against the Snell envelope.
    StopValue,
    /// Sup/terminal moment ratio of the diffusion and its stability under refinement.
    Moments {
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Psor,
    Penalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Penalization,
    Picard,
    Stability,
    Energy,
    McPenalization,
    Calibration,
}

struct Ctx {
    scn: Scenario,
    info: RunInfo,
    out: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, file: &str, content: &str) -> Result<(), Error> {
        if let Some(dir) = &self.out {
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(dir.join(file), content))
                .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", dir.join(file).display())))?;
        }
        Ok(())
    }

    fn emit_table(&self, file: &str, table: &Table) -> Result<(), Error> {
        self.emit(file, &table.to_csv(&self.info))
    }

    fn grid(&self) -> Result<SpaceTimeGrid, Error> {
        SpaceTimeGrid::for_spec(&self.scn.spec, self.scn.nx, self.scn.nt)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: kind={} message=\"{}\"", e.kind(), e.to_string().replace('"', "'"));
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(Scenario, RunInfo), Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Scenario("scenario is not UTF-8".into()))?;
    let mut scn = Scenario::parse(&text)?;
    if let Some(s) = seed {
        scn.mc.seed = s;
    }
    let rep = validate_hypotheses(&scn.spec, scn.verify.hypothesis_probes, scn.verify.hypothesis_seed)?;
    if let Some(c) = rep.failures().first() {
        let at = c.witness.map(|w| format!(" at t={}, x={}", w.t, w.x)).unwrap_or_default();
        return Err(Error::InvalidProblem(format!("hypothesis '{}' violated by {:e}{at}", c.name, c.max_violation)));
    }
    let digest = Sha256::digest(&bytes);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    let info = RunInfo { scenario: scn.name.clone(), sha256, seed: Some(scn.mc.seed) };
    Ok((scn, info))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))?;
    }
    let path = cli.scenario.ok_or_else(|| Error::InvalidArgument("--scenario is required".into()))?;
    let (scn, info) = load(&path, cli.seed)?;
    let ctx = Ctx { scn, info, out: cli.out };
    match cli.command {
        Command::Solve { method, penalty } => cmd_solve(&ctx, method, penalty),
        Command::Study { study } => cmd_study(&ctx, study),
        Command::Verify { checks } => cmd_verify(&ctx, &checks),
        Command::Simulate { paths, keep } => cmd_simulate(&ctx, paths, keep),
        Command::StopValue => cmd_stop_value(&ctx),
        Command::Moments { paths, p } => cmd_moments(&ctx, paths, p),
    }
}

fn start_node(ctx: &Ctx, grid: &SpaceTimeGrid) -> (usize, usize) {
    snap_probe(grid, ctx.scn.verify.start.0, ctx.scn.verify.start.1)
}

fn cmd_solve(ctx: &Ctx, method: MethodArg, penalty: Option<f64>) -> Result<ExitCode, Error> {
    let spec = &ctx.scn.spec;
    let grid = ctx.grid()?;
    let opts = &ctx.scn.solver;
    let sol: ObstacleSolution = match method {
        MethodArg::Psor => solve_psor(spec, &grid, opts)?,
        MethodArg::Penalized => {
            let n = penalty.unwrap_or(ctx.scn.study.default_penalty);
            let psor_tol = solve_psor(spec, &grid, opts)?.contact_tol;
            solve_penalized(spec, &grid, n, opts)?.to_obstacle_solution(psor_tol)
        }
    };
    ctx.emit_table("solution.csv", &report::solution_table(&grid, &sol))?;

    let mut diag = Table::new(["t_index", "t", "iterations"]);
    for (k, it) in sol.diagnostics.iterations.iter().enumerate() {
        diag.push(vec![k.to_string(), num(grid.t_nodes[k]), it.to_string()]);
    }
    ctx.emit_table("diagnostics.csv", &diag)?;

    let mut boundary = Table::new(["t", "contact_lo", "contact_hi", "contact_nodes"]);
    for k in 0..grid.nt {
        let nodes: Vec<usize> = (1..=grid.nx).filter(|&i| sol.is_contact(k, i)).collect();
        let (lo, hi) = match (nodes.first(), nodes.last()) {
            (Some(&a), Some(&b)) => (num(grid.x_nodes[a]), num(grid.x_nodes[b])),
            _ => ("nan".into(), "nan".into()),
        };
        boundary.push(vec![num(grid.t_nodes[k]), lo, hi, nodes.len().to_string()]);
    }
    ctx.emit_table("boundary.csv", &boundary)?;

    let (k, i) = start_node(ctx, &grid);
    println!("scenario {} method {} grid {}x{}", ctx.scn.name, sol.method, grid.nx, grid.nt);
    println!("u(t={}, x={}) = {}", num(grid.t_nodes[k]), num(grid.x_nodes[i]), num(sol.u.get(k, i)));
    println!("max residual {}", num(sol.diagnostics.max_residual));
    println!("contact nodes {}", sol.contact_count());
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(ctx: &Ctx, kind: StudyKind) -> Result<ExitCode, Error> {
    let scn = &ctx.scn;
    let spec = &scn.spec;
    let opts = &scn.solver;
    match kind {
        StudyKind::Penalization => {
            let grid = ctx.grid()?;
            let st = penalization_study(spec, &grid, &scn.study.schedule(), opts)?;
            let mut t = Table::new(["n_penalty", "sup_increment", "norm_increment", "distance_to_psor"]);
            for r in &st.rows {
                t.push(vec![num(r.n_penalty), num(r.sup_increment), num(r.norm_increment), num(r.distance_to_psor)]);
            }
            ctx.emit_table("study_penalization.csv", &t)?;
            println!("levels {} worst decrease {}", st.rows.len(), num(st.worst_decrease));
            if let Some(r) = st.rows.last() {
                println!("final n {} distance to psor {}", num(r.n_penalty), num(r.distance_to_psor));
            }
        }
        StudyKind::Picard => {
            let grid = ctx.grid()?;
            let (_, tr) =
                picard_outer(spec, &grid, InnerMethod::Psor, scn.study.picard_max, scn.study.picard_tol, opts)?;
            let mut t = Table::new(["iteration", "distance", "ratio"]);
            for (j, d) in tr.distances.iter().enumerate() {
                let ratio = if j == 0 { "nan".to_string() } else { num(tr.ratios[j - 1]) };
                t.push(vec![(j + 1).to_string(), num(*d), ratio]);
            }
            ctx.emit_table("study_picard.csv", &t)?;
            let worst = tr.ratios.iter().skip(1).fold(0.0f64, |m, &r| m.max(r));
            println!("gamma {} iterations {} converged {}", num(tr.gamma), tr.iterations, tr.converged);
            println!("max ratio after the first {}", num(worst));
        }
        StudyKind::Stability => {
            let grid = ctx.grid()?;
            let delta = scn.study.stability_delta;
            let obs = spec.obstacle.clone();
            let h1 = std::sync::Arc::new(move |t, x| obs.h(t, x));
            let obs = spec.obstacle.clone();
            let h2 = std::sync::Arc::new(move |t, x| obs.h(t, x) - delta);
            let margin = 0.1 * spec.horizon;
            let rep = obstacle_stability(spec, &grid, h1, h2, margin, opts)?;
            let mut t = Table::new([
                "obstacle_shift",
                "time_margin",
                "solution_distance",
                "obstacle_distance",
                "ratio",
                "passed",
            ]);
            t.push(vec![
                num(delta),
                num(margin),
                num(rep.solution_distance),
                num(rep.obstacle_distance),
                num(rep.ratio),
                rep.passed.to_string(),
            ]);
            ctx.emit_table("study_stability.csv", &t)?;
            println!(
                "solution distance {} obstacle distance {} ratio {}",
                num(rep.solution_distance),
                num(rep.obstacle_distance),
                num(rep.ratio)
            );
        }
        StudyKind::Energy => {
            let nts = [scn.nt / 2, scn.nt, scn.nt * 2];
            let rep = energy_refinement(spec, scn.nx, &nts, opts)?;
            let mut t = Table::new(["nt", "dt", "max_residual"]);
            for (nt, r) in rep.nts.iter().zip(&rep.residuals) {
                t.push(vec![nt.to_string(), num(spec.horizon / *nt as f64), num(*r)]);
            }
            ctx.emit_table("study_energy.csv", &t)?;
            println!("fitted rate in dt {}", num(rep.rate));
        }
        StudyKind::McPenalization => {
            let grid = ctx.grid()?;
            let (k, i) = start_node(ctx, &grid);
            let ens = simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, scn.mc.paths, scn.mc.seed)?;
            let schedule: Vec<f64> = [4, 6, 8, 10, 12].iter().map(|&e| 2f64.powi(e)).collect();
            let rows = penalization_convergence_mc(spec, &ens, &schedule, scn.mc.degree)?;
            let mut t =
                Table::new(["n_penalty", "y_distance", "y_half_width", "k_distance", "k_half_width", "y0_penalized"]);
            for r in &rows {
                t.push(vec![
                    num(r.n_penalty),
                    num(r.y_distance.value),
                    num(r.y_distance.half_width),
                    num(r.k_distance.value),
                    num(r.k_distance.half_width),
                    num(r.y0_penalized),
                ]);
            }
            ctx.emit_table("study_mc_penalization.csv", &t)?;
            if let Some(r) = rows.last() {
                println!(
                    "final n {} y distance {} k distance {}",
                    num(r.n_penalty),
                    num(r.y_distance.value),
                    num(r.k_distance.value)
                );
            }
        }
        StudyKind::Calibration => {
            let mut mc = scn.mc.params();
            mc.seed = scn.calibration.seed;
            let cal = calibrate_bias(spec, scn.nx, scn.nt, &scn.verify.probes, &mc, opts, scn.calibration.safety)?;
            let mut t = Table::new(["nx", "nt", "c_u", "z_excess"]);
            for l in &cal.levels {
                t.push(vec![l.nx.to_string(), l.nt.to_string(), num(l.c_u), num(l.z_excess)]);
            }
            ctx.emit_table("study_calibration.csv", &t)?;
            println!("[calibration]");
            println!("c_bias_u = {}", num(cal.c_bias_u));
            println!("z_floor = {}", num(cal.z_floor));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(ctx: &Ctx, checks: &str) -> Result<ExitCode, Error> {
    let names = parse_checks(checks)?;
    let reports = run_checks(&ctx.scn, &names)?;
    ctx.emit_table("verify.csv", &report::checks_table(&reports))?;
    let summary = report::checks_summary(&ctx.info, &reports);
    ctx.emit("verify.txt", &summary)?;
    print!("{summary}");
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed checks: {}", failed.join(","));
        Ok(ExitCode::from(1))
    }
}

fn estimate_row(name: &str, e: &RbsdeEstimate) -> Vec<String> {
    let cell = |v: &Estimate| [num(v.value), num(v.half_width)];
    let mut row = vec![name.to_string()];
    row.extend(cell(&e.y0));
    row.extend(cell(&e.z0));
    row.extend(cell(&e.k_terminal));
    row
}

fn cmd_simulate(ctx: &Ctx, paths: Option<usize>, keep: usize) -> Result<ExitCode, Error> {
    let scn = &ctx.scn;
    let spec = &scn.spec;
    let grid = ctx.grid()?;
    let (k, i) = start_node(ctx, &grid);
    let (s, x) = (grid.t_nodes[k], grid.x_nodes[i]);
    let dt = scn.mc.dt_path.unwrap_or(grid.dt);
    let m = paths.unwrap_or(scn.mc.paths);
    let ens = simulate_paths(spec, s, x, dt, m, scn.mc.seed)?;

    let mut pt = Table::new(["path", "t", "x"]);
    for j in 0..keep.min(m) {
        let xs = ens.path(j);
        for (step, xv) in xs.iter().enumerate() {
            pt.push(vec![j.to_string(), num(ens.time(step)), num(*xv)]);
        }
    }
    ctx.emit_table("paths.csv", &pt)?;

    let dp = rbsde_chain_dp(spec, &grid, k, i)?;
    let pen = rbsde_penalized_mc(spec, &ens, scn.study.default_penalty, scn.mc.degree)?;
    let refl = rbsde_reflected_mc(spec, &ens, scn.mc.degree)?;
    let mut t = Table::new(["scheme", "y0", "y0_half_width", "z0", "z0_half_width", "k_terminal", "k_half_width"]);
    t.push(estimate_row("chain-dp", &dp));
    t.push(estimate_row("penalized-mc", &pen));
    t.push(estimate_row("reflected-mc", &refl));
    ctx.emit_table("estimates.csv", &t)?;
    println!("start t={} x={} paths {} dt {}", num(s), num(x), m, num(dt));
    for row in &t.rows {
        println!("{:<13} y0 {} +- {}", row[0], row[1], row[2]);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stop_value(ctx: &Ctx) -> Result<ExitCode, Error> {
    let scn = &ctx.scn;
    let spec = &scn.spec;
    let grid = ctx.grid()?;
    let (k, i) = start_node(ctx, &grid);
    let sol = solve_psor(spec, &grid, &scn.solver)?;
    let ens = simulate_paths(spec, grid.t_nodes[k], grid.x_nodes[i], grid.dt, scn.mc.paths, scn.mc.seed)?;
    let v = optimal_stopping_value(spec, &grid, &sol, &ens, k, i)?;
    let mut t = Table::new(["rule_value", "rule_half_width", "snell", "chain_dp", "gap", "early_fraction"]);
    t.push(vec![
        num(v.rule.value),
        num(v.rule.half_width),
        num(v.snell),
        num(v.chain_dp),
        num(v.gap),
        num(v.early_fraction),
    ]);
    ctx.emit_table("stop_value.csv", &t)?;
    println!("rule {} +- {}", num(v.rule.value), num(v.rule.half_width));
    println!("snell {} chain-dp {} gap {}", num(v.snell), num(v.chain_dp), num(v.gap));
    Ok(ExitCode::SUCCESS)
}

fn cmd_moments(ctx: &Ctx, paths: Option<usize>, p: Option<f64>) -> Result<ExitCode, Error> {
    let scn = &ctx.scn;
    let spec = &scn.spec;
    let (s, x) = scn.moments.start;
    let p = p.unwrap_or(scn.moments.p);
    let m = paths.unwrap_or(scn.moments.paths);
    let dt = scn.mc.dt_path.unwrap_or(spec.horizon / scn.nt as f64);
    let levels = [(dt, m), (0.5 * dt, 4 * m)];
    let mut t = Table::new(["dt_path", "paths", "p", "ratio", "half_width", "sup_moment", "terminal_moment"]);
    let mut ratios = Vec::new();
    for (d, mm) in levels {
        let r = moment_ratio_streaming(spec, s, x, d, mm, scn.mc.seed, p)?;
        t.push(vec![
            num(d),
            mm.to_string(),
            num(p),
            num(r.ratio),
            num(r.half_width),
            num(r.sup_moment),
            num(r.terminal_moment),
        ]);
        ratios.push(r.ratio);
    }
    ctx.emit_table("moments.csv", &t)?;
    let change = (ratios[1] - ratios[0]).abs() / ratios[0].abs();
    println!("p {} ratio {} refined {} relative change {}", num(p), num(ratios[0]), num(ratios[1]), num(change));
    Ok(ExitCode::SUCCESS)
}
