//! The `levyhom` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{Case, ExperimentConfig};
use crate::effective::{effective_kernel, solve_cell};
use crate::error::{Error, Result};
use crate::experiments::{ergodic_average_check, gamma_values, run_sweep};
use crate::io::Matrix;
use crate::kernels::{check_ellipticity, KernelModel, PairTable};
use crate::operator::{assemble, assemble_effective, build_grid};
use crate::solvers::{solve_plaplace, solve_resolvent, LINEAR_TOL, NONLINEAR_TOL};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid config, kernel or input data (schema, ellipticity, symmetry)
  3  numerical failure (no convergence, non-finite values)
  4  file I/O or unreadable data file";

#[derive(Debug, Parser)]
#[command(name = "levyhom", version, about = "Homogenization of nonlocal operators with oscillating jump kernels", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Single realization seed; overrides the config's `seeds`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to LEVYHOM_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only errors are printed.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Effective kernel of the configured case.
    Effective,
    /// Principal eigenfunction of the cell problem (nonsym, or any table).
    Cell,
    /// One ε-problem (or the limit problem with `eps` absent).
    Solve,
    /// ε-sweep against the homogenized solution; CSV and JSON report.
    Sweep,
    /// Γ-functional minimum values along the sweep (p1, p2).
    Gamma,
    /// Ergodic double averages of the kernel over a box.
    Ergodic,
    /// Checks the config and kernel without writing anything.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Effective => "effective",
            Command::Cell => "cell",
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Gamma => "gamma",
            Command::Ergodic => "ergodic",
            Command::Validate => "validate",
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = json!({
                "error": e.to_string(),
                "kind": error_kind(&e),
                "exit_code": e.exit_code(),
            });
            eprintln!("{report}");
            e.exit_code()
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e.exit_code() {
        2 => "config",
        3 => "numeric",
        _ => "io",
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: ExperimentConfig,
}

impl Ctx<'_> {
    fn say(&self, line: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .cli
            .out
            .clone()
            .or_else(|| self.cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn write_json(&self, dir: &Path, name: &str, result: impl Serialize) -> Result<PathBuf> {
        let doc = json!({
            "command": self.cli.command.name(),
            "config": self.cfg,
            "result": result,
        });
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(e.to_string()))? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn thread_count(cli: &Cli) -> Result<Option<usize>> {
    if let Some(t) = cli.threads {
        return Ok(Some(t));
    }
    match std::env::var("LEVYHOM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("LEVYHOM_THREADS = {v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let ctx = Ctx { cli, cfg };
    match thread_count(cli)? {
        Some(0) => Err(Error::Config("the thread count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| dispatch(&ctx)),
        None => dispatch(&ctx),
    }
}

fn dispatch(ctx: &Ctx) -> Result<()> {
    match ctx.cli.command {
        Command::Validate => validate(ctx),
        Command::Effective => effective(ctx),
        Command::Cell => cell(ctx),
        Command::Solve => solve(ctx),
        Command::Sweep => sweep(ctx),
        Command::Gamma => gamma(ctx),
        Command::Ergodic => ergodic(ctx),
    }
}

fn validate(ctx: &Ctx) -> Result<()> {
    let kernel = ctx.cfg.kernel()?;
    let report = check_ellipticity(kernel.model(), kernel.dim(), kernel.gamma(), 4096);
    if ctx.cfg.f.is_some() && !ctx.cfg.eps_list().is_empty() {
        ctx.cfg.sweep()?;
    }
    ctx.say(format!(
        "ok: case {} in d = {}, kernel range [{}, {}] within [{}, {}]",
        kernel.model().case_name(),
        kernel.dim(),
        report.min,
        report.max,
        report.lower,
        report.upper
    ));
    Ok(())
}

fn effective(ctx: &Ctx) -> Result<()> {
    let kernel = ctx.cfg.kernel()?;
    let eff = effective_kernel(&kernel, &ctx.cfg.cell_options())?;
    ctx.say(format!("lambda_eff = {}", eff.kernel.scale));
    if let Some(se) = eff.std_error {
        ctx.say(format!("std_error = {se}"));
    }
    if !eff.kernel.modulation.is_constant() {
        ctx.say(format!("modulation = {}", eff.kernel.modulation.label()));
    }
    let dir = ctx.out_dir()?;
    ctx.write_json(
        &dir,
        "effective.json",
        json!({
            "lambda_eff": eff.kernel.scale,
            "modulation": eff.kernel.modulation.label(),
            "std_error": eff.std_error,
            "cell": eff.cell,
        }),
    )?;
    Ok(())
}

fn cell_table(cfg: &ExperimentConfig) -> Result<PairTable> {
    let kernel = cfg.kernel()?;
    match kernel.model() {
        KernelModel::NonSym { table, .. } | KernelModel::P2 { table, .. } => Ok(table.clone()),
        KernelModel::P1 { lambda, mu } => PairTable::product(lambda, mu),
        _ => Err(Error::Config(format!(
            "the cell problem needs a periodic table, not case {:?}",
            cfg.case
        ))),
    }
}

fn cell(ctx: &Ctx) -> Result<()> {
    let table = cell_table(&ctx.cfg)?;
    let opts = ctx.cfg.cell_options();
    let sol = solve_cell(&table, ctx.cfg.alpha, ctx.cfg.gamma, &opts)?;
    ctx.say(format!("lambda_eff = {}", sol.lambda_eff));
    ctx.say(format!(
        "p0 in [{}, {}], residual {:e}, {} iterations",
        sol.pmin,
        sol.p0.max(),
        sol.residual,
        sol.iterations
    ));
    let dir = ctx.out_dir()?;
    sol.p0.to_matrix().write(&dir.join("p0.txt"))?;
    ctx.write_json(&dir, "cell.json", &sol)?;
    Ok(())
}

fn solve(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let kernel = cfg.kernel()?.with_seed(cfg.first_seed());
    let eps = cfg.eps_list().first().copied();
    let h = eps.unwrap_or(1.0) / cfg.cells_per_eps as f64;
    let grid = build_grid(kernel.dim(), cfg.half_width, h)?;
    let r_near = cfg.near_cells * h;
    let op = match eps {
        Some(e) => assemble(&kernel, &kernel.environment()?, e, &grid, r_near)?,
        None => {
            let eff = effective_kernel(&kernel, &cfg.cell_options())?;
            assemble_effective(&eff.kernel, &grid, kernel.alpha(), r_near)?
        }
    };
    let f = cfg.source()?.sample(&grid)?;
    let mut result = if cfg.p == 2.0 {
        let g: Vec<f64> = f.iter().map(|v| -v).collect();
        solve_resolvent(&op, cfg.m, &g, cfg.tol.unwrap_or(LINEAR_TOL))?
    } else {
        solve_plaplace(&op, cfg.p, cfg.m, &f, cfg.tol.unwrap_or(NONLINEAR_TOL))?
    };
    if !cfg.record_wall_time {
        result.wall_ms = 0.0;
    }
    ctx.say(format!(
        "solved {} cells with {} in {} iterations, residual {:e}, ‖u‖ = {}",
        grid.len(),
        result.method,
        result.iterations,
        result.residual,
        grid.lp_norm(&result.u, cfg.p)
    ));
    let dir = ctx.out_dir()?;
    let matrix = if grid.dim == 1 {
        Matrix::row(&result.u)
    } else {
        Matrix::new(grid.m, grid.m, result.u.clone())?
    };
    matrix.write(&dir.join("u.txt"))?;
    ctx.write_json(
        &dir,
        "solve.json",
        json!({
            "eps": eps,
            "grid": grid,
            "iterations": result.iterations,
            "residual": result.residual,
            "wall_ms": result.wall_ms,
            "method": result.method,
            "objective": result.objective,
            "objective_trace_len": result.objective_trace.len(),
        }),
    )?;
    Ok(())
}

fn sweep(ctx: &Ctx) -> Result<()> {
    let config = ctx.cfg.sweep()?;
    let report = run_sweep(&config)?;
    ctx.say(format!("lambda_eff = {}", report.lambda_eff));
    for r in &report.records {
        ctx.say(format!(
            "eps = {:<10} seed = {:<4} rel_error = {:.6e}",
            r.eps, r.seed, r.rel_error
        ));
    }
    if let Some(rate) = report.rate {
        ctx.say(format!("fitted rate = {rate:.4}"));
    }
    let dir = ctx.out_dir()?;
    report.write_csv(&dir.join("sweep.csv"))?;
    ctx.write_json(&dir, "sweep.json", &report)?;
    Ok(())
}

fn gamma(ctx: &Ctx) -> Result<()> {
    if !matches!(ctx.cfg.case, Case::P1 | Case::P2) {
        return Err(Error::Config(format!(
            "gamma needs case p1 or p2, not {:?}",
            ctx.cfg.case
        )));
    }
    let rec = gamma_values(&ctx.cfg.sweep()?)?;
    ctx.say(format!("F_eff(u0) = {}", rec.limit));
    for (e, v) in rec.eps.iter().zip(&rec.values) {
        ctx.say(format!("eps = {e:<10} F_eps(u_eps) = {v}"));
    }
    let dir = ctx.out_dir()?;
    ctx.write_json(&dir, "gamma.json", &rec)?;
    Ok(())
}

fn ergodic(ctx: &Ctx) -> Result<()> {
    let kernel = ctx.cfg.kernel()?;
    let eps = ctx.cfg.eps_list();
    if eps.is_empty() {
        return Err(Error::Config("the key \"eps\" is required".into()));
    }
    let rep = ergodic_average_check(&kernel, ctx.cfg.box_side, &eps, &ctx.cfg.seeds)?;
    ctx.say(format!("target = {}", rep.target));
    for r in &rep.records {
        ctx.say(format!("eps = {:<10} mean |deviation| = {:.6e}", r.eps, r.mean_abs_deviation));
    }
    let dir = ctx.out_dir()?;
    ctx.write_json(&dir, "ergodic.json", &rep)?;
    Ok(())
}
