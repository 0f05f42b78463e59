//! ε-sweeps against the homogenized problem, Γ-functional values, ergodic
//! averages and rate fits.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{effective_kernel, solve_cell, CellOptions, CellSolution};
use crate::error::{Error, Result};
use crate::fields::{cell_average, cell_average_ratio, Point};
use crate::kernels::{EffectiveKernel, Environment, Kernel, KernelModel};
use crate::operator::{assemble, assemble_effective, build_grid, exterior_mass, DiscreteOperator, Grid};
use crate::solvers::{solve_plaplace, solve_resolvent, SolveResult, LINEAR_TOL, NONLINEAR_TOL};

/// Right-hand side `f` of `L u - m |u|^{p-2} u = f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// `amplitude · exp(-1 / (1 - |x/radius|²))` inside the ball, zero outside.
    Bump { radius: f64, amplitude: f64 },
    /// `amplitude · exp(-|x|² / (2 width²))`.
    Gaussian { width: f64, amplitude: f64 },
    /// Explicit values on the sweep grid.
    Samples(Vec<f64>),
}

impl Source {
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let d = grid.dim;
        let r2 = |x: &[f64]| x[..d].iter().map(|v| v * v).sum::<f64>();
        match self {
            Source::Bump { radius, amplitude } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidInput(format!("bump radius {radius} must be positive")));
                }
                Ok(grid.sample(|x| {
                    let s = r2(x) / (radius * radius);
                    if s < 1.0 {
                        amplitude * (-1.0 / (1.0 - s)).exp()
                    } else {
                        0.0
                    }
                }))
            }
            Source::Gaussian { width, amplitude } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidInput(format!("gaussian width {width} must be positive")));
                }
                Ok(grid.sample(|x| amplitude * (-r2(x) / (2.0 * width * width)).exp()))
            }
            Source::Samples(v) => {
                if v.len() != grid.len() {
                    return Err(Error::Mismatch(format!(
                        "source has {} values, the grid has {} cells",
                        v.len(),
                        grid.len()
                    )));
                }
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        cell: vec![i],
                        value: v[i],
                    });
                }
                Ok(v.clone())
            }
        }
    }
}

/// One ε-sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kernel: Kernel,
    pub m: f64,
    /// `2` is the linear resolvent problem.
    pub p: f64,
    pub source: Source,
    pub half_width: f64,
    /// `h = ε_min / cells_per_eps`.
    pub cells_per_eps: usize,
    /// Near-field radius in units of `h`.
    pub near_cells: f64,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    /// Realizations for random models; deterministic models use the first (or 0).
    pub seeds: Vec<u64>,
    /// Solver tolerance; linear or nonlinear default when absent.
    pub tol: Option<f64>,
    pub cell: CellOptions,
    /// Replaces the effective kernel scale (falsification runs).
    pub lambda_eff: Option<f64>,
    /// Stores solver wall times; off by default so reports are reproducible.
    pub record_wall_time: bool,
}

impl SweepConfig {
    pub fn new(kernel: Kernel, source: Source, eps: Vec<f64>) -> Self {
        SweepConfig {
            kernel,
            m: 1.0,
            p: 2.0,
            source,
            half_width: 2.0,
            cells_per_eps: 16,
            near_cells: crate::operator::DEFAULT_NEAR_CELLS,
            eps,
            seeds: vec![0],
            tol: None,
            cell: CellOptions::default(),
            lambda_eff: None,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::Config("the ε list is empty".into()));
        }
        if self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config("every ε must be positive and finite".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("the ε list must be strictly decreasing".into()));
        }
        if self.cells_per_eps < 8 {
            return Err(Error::Config(format!(
                "cells_per_eps = {} does not resolve the finest ε (need ≥ 8)",
                self.cells_per_eps
            )));
        }
        if !(self.m > 0.0) {
            return Err(Error::Config(format!("m = {} must be positive", self.m)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p = {} must exceed 1", self.p)));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tol = {t} must be positive")));
            }
        }
        if let Some(l) = self.lambda_eff {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda_eff = {l} must be positive")));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.eps[self.eps.len() - 1] / self.cells_per_eps as f64
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.kernel.dim(), self.half_width, self.h())
    }

    fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(if self.p == 2.0 { LINEAR_TOL } else { NONLINEAR_TOL })
    }

    fn seed_list(&self) -> Vec<u64> {
        if self.kernel.model().is_random() {
            if self.seeds.is_empty() {
                vec![0]
            } else {
                self.seeds.clone()
            }
        } else {
            vec![self.seeds.first().copied().unwrap_or(0)]
        }
    }

    fn r_near(&self) -> f64 {
        self.near_cells * self.h()
    }
}

/// Discrete weighted energy identity for a non-symmetric solve, all terms
/// carrying the periodic weight `p₀(x/ε)`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentity {
    /// `½ ∫∫ p Λ k (u(y) - u(x))²` over all of `ℝ^d × ℝ^d`.
    pub pair: f64,
    /// `m ∫ p u²`.
    pub mass: f64,
    /// `-∫ p u f`.
    pub rhs: f64,
    /// `½ ∫ u² L*p`, zero for the exact eigenfunction.
    pub zero_term: f64,
    /// `|pair + mass - rhs| / |rhs|`.
    pub defect: f64,
    /// `|pair + mass - rhs - zero_term| / |rhs|`, solver-level.
    pub closure: f64,
    /// Torus resolution of the grid-aligned cell problem.
    pub cell_n: usize,
    pub cell_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub eps: f64,
    pub seed: u64,
    /// Relative `L²` error (`L^p` when `p ≠ 2`) against the homogenized solution.
    pub rel_error: f64,
    /// `F^ε(u^ε)`.
    pub gamma_value: Option<f64>,
    /// `F^ε(u⁰)`.
    pub gamma_at_limit: Option<f64>,
    /// Unit-kernel `H^{α/2}` (or `W^{α/p,p}`) seminorm of `u^ε`.
    pub seminorm: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_ms: f64,
    /// `‖u^ε‖₂ m / (γ² ‖f‖₂)`, at most 1 by the resolvent bound (linear solves).
    pub resolvent_ratio: Option<f64>,
    pub energy: Option<EnergyIdentity>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRecord {
    pub iterations: usize,
    pub residual: f64,
    pub seminorm: f64,
    /// `F^eff(u⁰)`.
    pub gamma_value: Option<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub case: &'static str,
    pub dim: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub m: f64,
    pub p: f64,
    pub h: f64,
    pub half_width: f64,
    pub cells: usize,
    pub tol: f64,
    /// Scale of `Λ^eff` (times the macro modulation where present).
    pub lambda_eff: f64,
    pub lambda_eff_std_error: Option<f64>,
    pub cell: Option<CellSolution>,
    pub limit: LimitRecord,
    /// Ordered by seed, then by decreasing ε.
    pub records: Vec<SweepRecord>,
    /// Log-log slope of the seed-averaged error against ε (≥ 3 ε values).
    pub rate: Option<f64>,
    #[serde(skip)]
    pub limit_solution: Vec<f64>,
}

#[derive(Serialize)]
struct CsvRow {
    eps: f64,
    seed: u64,
    rel_l2_error: f64,
    gamma_value: Option<f64>,
    seminorm: f64,
    iters: usize,
    residual: f64,
    wall_ms: f64,
}

impl SweepReport {
    /// Records of one seed, in ε order.
    pub fn for_seed(&self, seed: u64) -> Vec<&SweepRecord> {
        self.records.iter().filter(|r| r.seed == seed).collect()
    }

    pub fn errors_for_seed(&self, seed: u64) -> Vec<f64> {
        self.for_seed(seed).iter().map(|r| r.rel_error).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                eps: r.eps,
                seed: r.seed,
                rel_l2_error: r.rel_error,
                gamma_value: r.gamma_value,
                seminorm: r.seminorm,
                iters: r.iterations,
                residual: r.residual,
                wall_ms: r.wall_ms,
            })
            .map_err(|e| Error::Numeric(format!("csv encoding failed: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Numeric(format!("csv encoding failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Mean symmetrizing weight `ν̄` where the Γ-functionals are defined.
fn mean_weight(kernel: &Kernel) -> Option<f64> {
    match kernel.model() {
        KernelModel::P1 { lambda, mu } => cell_average_ratio(mu, lambda).ok(),
        KernelModel::P2 { .. } => Some(1.0),
        _ => None,
    }
}

/// `h^d [ (−L u, u)_ν + Σ ν_i (m u_i² + 2 f_i u_i) ]`, minimized by the
/// solution of `(L - m) u = f`.
fn gamma_functional(op: &DiscreteOperator, scale: f64, m: f64, f: &[f64], u: &[f64]) -> Result<f64> {
    let ones;
    let nu = match op.weight() {
        Some(w) => w,
        None => {
            ones = vec![1.0; u.len()];
            &ones
        }
    };
    let lower: f64 = (0..u.len()).map(|i| nu[i] * (m * u[i] * u[i] + 2.0 * f[i] * u[i])).sum();
    let vol = op.grid().cell_volume();
    Ok(scale * vol * (op.energy_form(u, u)? + lower))
}

fn solve(op: &DiscreteOperator, p: f64, m: f64, f: &[f64], tol: f64) -> Result<SolveResult> {
    if p == 2.0 {
        let g: Vec<f64> = f.iter().map(|v| -v).collect();
        solve_resolvent(op, m, &g, tol)
    } else {
        solve_plaplace(op, p, m, f, tol)
    }
}

fn relative_error(grid: &Grid, p: f64, u: &[f64], reference: &[f64]) -> f64 {
    let diff: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
    let den = grid.lp_norm(reference, p);
    let num = grid.lp_norm(&diff, p);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Runs the sweep: one homogenized solve, then one ε-solve per (seed, ε)
/// on the same grid. Random environments are realized once per seed and
/// kept across ε.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let kernel = &config.kernel;
    let grid = config.grid()?;
    let alpha = kernel.alpha();
    let r_near = config.r_near();
    let tol = config.tolerance();
    let (m, p) = (config.m, config.p);
    let f = config.source.sample(&grid)?;

    let eff = effective_kernel(kernel, &config.cell)?;
    let mut eff_kernel = eff.kernel.clone();
    if let Some(l) = config.lambda_eff {
        eff_kernel = EffectiveKernel {
            modulation: eff_kernel.modulation,
            scale: l,
        };
    }
    let op0 = assemble_effective(&eff_kernel, &grid, alpha, r_near)?;
    let unit = DiscreteOperator::unit(&grid, alpha, r_near)?;
    let seminorm = |u: &[f64]| -> Result<f64> {
        if p == 2.0 {
            unit.seminorm(u)
        } else {
            unit.p_seminorm(u, p)
        }
    };
    let limit = solve(&op0, p, m, &f, tol)?;
    let nu_bar = if p == 2.0 { mean_weight(kernel) } else { None };
    let limit_gamma = nu_bar.map(|nb| gamma_functional(&op0, nb, m, &f, &limit.u)).transpose()?;
    let limit_record = LimitRecord {
        iterations: limit.iterations,
        residual: limit.residual,
        seminorm: seminorm(&limit.u)?,
        gamma_value: limit_gamma,
        norm: grid.lp_norm(&limit.u, p),
    };

    let seeds = config.seed_list();
    let envs: Vec<(u64, Kernel, Environment)> = seeds
        .iter()
        .map(|&s| {
            let k = kernel.with_seed(s);
            let env = k.environment()?;
            Ok((s, k, env))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64)> = (0..envs.len())
        .flat_map(|s| config.eps.iter().map(move |&e| (s, e)))
        .collect();
    let f_norm = grid.l2_norm(&f);
    let records: Vec<SweepRecord> = jobs
        .par_iter()
        .map(|&(s, eps)| -> Result<SweepRecord> {
            let (seed, k, env) = &envs[s];
            let annotate = |e: Error| annotate(e, eps, *seed);
            let op = assemble(k, env, eps, &grid, r_near).map_err(annotate)?;
            let start = Instant::now();
            let sol = solve(&op, p, m, &f, tol).map_err(annotate)?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let (gamma_value, gamma_at_limit) = match nu_bar {
                Some(_) => (
                    Some(gamma_functional(&op, 1.0, m, &f, &sol.u)?),
                    Some(gamma_functional(&op, 1.0, m, &f, &limit.u)?),
                ),
                None => (None, None),
            };
            let resolvent_ratio = (p == 2.0 && f_norm > 0.0)
                .then(|| grid.l2_norm(&sol.u) * m / (k.gamma().powi(2) * f_norm));
            let energy = match k.model() {
                KernelModel::NonSym { .. } if p == 2.0 => {
                    Some(energy_identity(k, eps, &op, &config.cell, m, &f, &sol.u).map_err(annotate)?)
                }
                _ => None,
            };
            Ok(SweepRecord {
                eps,
                seed: *seed,
                rel_error: relative_error(&grid, p, &sol.u, &limit.u),
                gamma_value,
                gamma_at_limit,
                seminorm: seminorm(&sol.u)?,
                iterations: sol.iterations,
                residual: sol.residual,
                wall_ms: if config.record_wall_time { wall } else { 0.0 },
                resolvent_ratio,
                energy,
            })
        })
        .collect::<Result<_>>()?;

    let rate = if config.eps.len() >= 3 {
        let mean_err: Vec<f64> = config
            .eps
            .iter()
            .map(|&e| {
                let v: Vec<f64> = records.iter().filter(|r| r.eps == e).map(|r| r.rel_error).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        estimate_rate(&mean_err, &config.eps).ok()
    } else {
        None
    };

    Ok(SweepReport {
        case: kernel.model().case_name(),
        dim: kernel.dim(),
        alpha,
        gamma: kernel.gamma(),
        m,
        p,
        h: grid.h,
        half_width: grid.half_width,
        cells: grid.len(),
        tol,
        lambda_eff: eff_kernel.scale,
        lambda_eff_std_error: eff.std_error,
        cell: eff.cell,
        limit: limit_record,
        records,
        rate,
        limit_solution: limit.u,
    })
}

fn annotate(e: Error, eps: f64, seed: u64) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("ε = {eps}, seed {seed}: {msg}")),
        Error::InvalidInput(msg) => Error::InvalidInput(format!("ε = {eps}, seed {seed}: {msg}")),
        other => other,
    }
}

/// Evaluates the weighted energy identity of a non-symmetric solve.
///
/// `p₀` comes from the cell problem discretized on the torus with the
/// grid's own cells (`N = ε/h`), so that `p₀(x_i/ε)` is a grid function of
/// the same discretization. The contribution of the far variable outside the
/// box is completed with the exterior mass, as for `κ`.
pub fn energy_identity(
    kernel: &Kernel,
    eps: f64,
    op: &DiscreteOperator,
    cell: &CellOptions,
    m: f64,
    f: &[f64],
    u: &[f64],
) -> Result<EnergyIdentity> {
    let table = match kernel.model() {
        KernelModel::NonSym { table, .. } => table,
        _ => return Err(Error::InvalidInput("the weighted energy identity needs a non-symmetric kernel".into())),
    };
    let grid = op.grid();
    let d = grid.dim;
    let n_cell = (eps / grid.h).round().max(1.0) as usize;
    let sol = solve_cell(
        table,
        kernel.alpha(),
        kernel.gamma(),
        &CellOptions {
            n: Some(n_cell),
            ..cell.clone()
        },
    )?;
    let table = table.resample(n_cell)?;
    let p0 = &sol.p0;
    let centers = grid.centers();
    let micro: Vec<Point> = centers
        .iter()
        .map(|x| {
            let mut q = [0.0; 2];
            for a in 0..d {
                q[a] = x[a] / eps;
            }
            q
        })
        .collect();
    let pw: Vec<f64> = micro.iter().map(|q| p0.eval(&q[..d])).collect();
    let torus = p0.samples();
    let kappa = op.kappa();
    let n = grid.len();
    let vol = grid.cell_volume();
    // p-weighted column level ⟨p Λ(·, ζ)⟩ per torus cell
    let col: Vec<f64> = (0..table.cells())
        .map(|c| (0..table.cells()).map(|j| torus[j] * table.at(j, c)).sum::<f64>() / table.cells() as f64)
        .collect();
    let inflow: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| exterior_mass(grid, kernel.alpha(), i) * col[table.cell_of(&micro[i][..d])])
        .collect();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = op.row(i);
            let mut pair = 0.0;
            let mut out = 0.0;
            let mut inn = 0.0;
            for j in 0..n {
                let w = row[j];
                pair += w * (u[j] - u[i]).powi(2);
                out += w;
                inn += pw[j] * op.weight_at(j, i);
            }
            let ui2 = u[i] * u[i];
            let pair_i = 0.5 * pw[i] * pair + 0.5 * ui2 * (pw[i] * kappa[i] + inflow[i]);
            let zero_i = 0.5 * ui2 * (inn - pw[i] * out + inflow[i] - pw[i] * kappa[i]);
            (pair_i, zero_i)
        })
        .collect();
    let pair = vol * rows.iter().map(|r| r.0).sum::<f64>();
    let zero_term = vol * rows.iter().map(|r| r.1).sum::<f64>();
    let mass = m * vol * (0..n).map(|i| pw[i] * u[i] * u[i]).sum::<f64>();
    let rhs = -vol * (0..n).map(|i| pw[i] * u[i] * f[i]).sum::<f64>();
    let scale = rhs.abs().max(f64::MIN_POSITIVE);
    Ok(EnergyIdentity {
        pair,
        mass,
        rhs,
        zero_term,
        defect: (pair + mass - rhs).abs() / scale,
        closure: (pair + mass - rhs - zero_term).abs() / scale,
        cell_n: n_cell,
        cell_residual: sol.residual,
    })
}

/// Minimum values of the Γ-converging functionals along a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct GammaRecord {
    pub eps: Vec<f64>,
    /// `F^ε(u^ε)`.
    pub values: Vec<f64>,
    /// `F^ε(u⁰)`, never below `F^ε(u^ε)`.
    pub at_limit: Vec<f64>,
    /// `F^eff(u⁰)`.
    pub limit: f64,
}

impl GammaRecord {
    pub fn gaps(&self) -> Vec<f64> {
        self.values.iter().map(|v| (v - self.limit).abs()).collect()
    }
}

/// Γ-functional values of a symmetric periodic (P1 or P2) linear sweep.
pub fn gamma_values(config: &SweepConfig) -> Result<GammaRecord> {
    if !matches!(config.kernel.model(), KernelModel::P1 { .. } | KernelModel::P2 { .. }) {
        return Err(Error::InvalidInput(format!(
            "Γ-functionals are defined for p1 and p2 kernels, not {}",
            config.kernel.model().case_name()
        )));
    }
    if config.p != 2.0 {
        return Err(Error::InvalidInput("Γ-functionals are evaluated for p = 2".into()));
    }
    let report = run_sweep(config)?;
    let seed = report.records[0].seed;
    let rec = report.for_seed(seed);
    Ok(GammaRecord {
        eps: rec.iter().map(|r| r.eps).collect(),
        values: rec.iter().map(|r| r.gamma_value.unwrap_or(f64::NAN)).collect(),
        at_limit: rec.iter().map(|r| r.gamma_at_limit.unwrap_or(f64::NAN)).collect(),
        limit: report.limit.gamma_value.unwrap_or(f64::NAN),
    })
}

/// Per-ε outcome of [`ergodic_average_check`].
#[derive(Debug, Clone, Serialize)]
pub struct ErgodicRecord {
    pub eps: f64,
    /// `|mean over Q×Q − target|` per seed.
    pub deviations: Vec<f64>,
    pub mean_abs_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    /// Limit of the double averages.
    pub target: f64,
    pub side: f64,
    pub records: Vec<ErgodicRecord>,
}

/// Quadrature nodes per ε-period along each axis.
const ERGODIC_NODES_PER_EPS: f64 = 8.0;

/// Averages the oscillating symmetric kernel over `Q × Q`, `Q = [0, side)^d`,
/// for every (ε, seed) and compares with its ergodic limit.
///
/// Product kernels are averaged in their symmetrized form `μ(x/ε) μ(y/ε)`
/// with limit `(E μ)²`; table and rule kernels with the macro modulation,
/// with limit the modulated double mean.
pub fn ergodic_average_check(kernel: &Kernel, side: f64, eps: &[f64], seeds: &[u64]) -> Result<ErgodicReport> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidInput(format!("box side {side} must be positive")));
    }
    if seeds.len() < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 seeds, got {}", seeds.len())));
    }
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("ε values must be positive".into()));
    }
    let d = kernel.dim();
    let records = eps
        .iter()
        .map(|&e| {
            let per_axis = ((side / e) * ERGODIC_NODES_PER_EPS).ceil() as usize;
            let nodes = per_axis.pow(d as u32);
            if nodes > 1 << 12 {
                return Err(Error::InvalidInput(format!(
                    "ε = {e} needs {nodes} quadrature nodes on the box; reduce the side"
                )));
            }
            let step = side / per_axis as f64;
            let points: Vec<Point> = (0..nodes)
                .map(|i| {
                    let mut p = [0.0; 2];
                    p[0] = (i % per_axis) as f64 * step + 0.5 * step;
                    if d == 2 {
                        p[1] = (i / per_axis) as f64 * step + 0.5 * step;
                    }
                    p
                })
                .collect();
            let deviations = seeds
                .par_iter()
                .map(|&s| {
                    let k = kernel.with_seed(s);
                    let env = k.environment()?;
                    let target = ergodic_target(&k, &points)?;
                    Ok((double_average(&k, &env, e, &points)? - target).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = deviations.iter().sum::<f64>() / deviations.len() as f64;
            Ok(ErgodicRecord {
                eps: e,
                deviations,
                mean_abs_deviation: mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let probe = [[0.5 * side, 0.5 * side]];
    let target = ergodic_target(kernel, &probe)?;
    Ok(ErgodicReport {
        target,
        side,
        records,
    })
}

fn double_average(kernel: &Kernel, env: &Environment, eps: f64, points: &[Point]) -> Result<f64> {
    let d = kernel.dim();
    let n = points.len();
    let sum: f64 = match (kernel.model(), env) {
        (KernelModel::P1 { mu, .. }, _) => {
            let v: Vec<f64> = points.iter().map(|x| mu.eval(&scale(x, eps, d)[..d])).collect();
            let s: f64 = v.iter().sum();
            s * s
        }
        (KernelModel::Q1 { .. }, Environment::Product { mu, .. }) => {
            let v: Vec<f64> = points.iter().map(|x| mu.value(&scale(x, eps, d)[..d])).collect();
            let s: f64 = v.iter().sum();
            s * s
        }
        _ => (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| kernel.eval(env, eps, &points[i][..d], &points[j][..d])).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum(),
    };
    Ok(sum / (n * n) as f64)
}

/// Double mean of the limit kernel over the quadrature nodes.
fn ergodic_target(kernel: &Kernel, points: &[Point]) -> Result<f64> {
    let d = kernel.dim();
    let modulated = |modulation: &crate::kernels::Modulation, scale: f64| -> f64 {
        let n = points.len();
        let s: f64 = (0..n)
            .map(|i| (0..n).map(|j| modulation.eval(&points[i][..d], &points[j][..d])).sum::<f64>())
            .sum();
        scale * s / (n * n) as f64
    };
    Ok(match kernel.model() {
        KernelModel::P1 { mu, .. } => cell_average(mu).powi(2),
        KernelModel::Q1 { mu, .. } => {
            let (v, p) = mu.law();
            let e: f64 = v.iter().zip(&p).map(|(a, b)| a * b).sum();
            e * e
        }
        KernelModel::P2 { modulation, table } => modulated(modulation, table.mean()),
        KernelModel::Q2 { modulation, rule, .. } => modulated(modulation, crate::effective::haar_double_mean(rule)),
        KernelModel::NonSym { table, .. } => table.mean(),
    })
}

fn scale(x: &Point, eps: f64, d: usize) -> Point {
    let mut q = [0.0; 2];
    for a in 0..d {
        q[a] = x[a] / eps;
    }
    q
}

/// Least-squares slope of `log error` against `log ε`.
pub fn estimate_rate(errors: &[f64], eps: &[f64]) -> Result<f64> {
    if errors.len() != eps.len() {
        return Err(Error::Mismatch(format!("{} errors for {} ε values", errors.len(), eps.len())));
    }
    if errors.len() < 3 {
        return Err(Error::InvalidInput("a rate needs at least 3 points".into()));
    }
    if let Some(e) = errors.iter().chain(eps).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("nonpositive value {e} in rate data")));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("ε values are all equal".into()));
    }
    Ok(sxy / sxx)
}
