//! Oscillating jump kernels `Λ^ε(x, y)` in their five structural families.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{self, cell_average, check_dim, periodic_cell, Point, RandomField, RandomFieldSpec, TorusField};
use crate::io::Matrix;

/// Scalar function of two points (macroscopic modulation or environment pair rule).
pub type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Macroscopic modulation `a(x, y)` with declared bounds `[a₀, a₁]`.
#[derive(Clone)]
pub struct Modulation {
    label: String,
    func: PairFn,
    lower: f64,
    upper: f64,
}

impl Modulation {
    pub fn constant(value: f64) -> Self {
        Modulation {
            label: format!("constant({value})"),
            func: Arc::new(move |_, _| value),
            lower: value,
            upper: value,
        }
    }

    /// `a(x, y) = base + exp(-|x - y|)`, bounded by `[base, base + 1]`.
    pub fn exp_decay(base: f64) -> Self {
        Modulation {
            label: format!("exp_decay({base})"),
            func: Arc::new(move |x, y| {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                base + (-d2.sqrt()).exp()
            }),
            lower: base,
            upper: base + 1.0,
        }
    }

    pub fn custom(label: impl Into<String>, lower: f64, upper: f64, func: PairFn) -> Self {
        Modulation {
            label: label.into(),
            func,
            lower,
            upper,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.func)(x, y)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_constant(&self) -> bool {
        self.lower == self.upper
    }
}

impl fmt::Debug for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Modulation({}, [{}, {}])", self.label, self.lower, self.upper)
    }
}

/// Piecewise-constant periodic table `Λ(ξ, η)` on torus × torus.
///
/// Stored as an `n^d × n^d` row-major matrix with rows indexed by the cell
/// of `ξ` and columns by the cell of `η`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTable {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

impl PairTable {
    pub fn from_fn(dim: usize, n: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        check_dim(dim)?;
        if n == 0 {
            return Err(Error::InvalidInput("table resolution must be positive".into()));
        }
        let len = n.pow(dim as u32);
        let centers: Vec<Point> = (0..len).map(|i| fields::cell_center(dim, n, i)).collect();
        let mut values = Vec::with_capacity(len * len);
        for (i, xi) in centers.iter().enumerate() {
            for (j, eta) in centers.iter().enumerate() {
                let v = f(&xi[..dim], &eta[..dim]);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        cell: vec![i, j],
                        value: v,
                    });
                }
                values.push(v);
            }
        }
        Ok(PairTable { dim, n, values })
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::from_fn(dim, 1, |_, _| value)
    }

    /// `Λ(ξ, η) = f(ξ) g(η)`.
    pub fn product(f: &TorusField, g: &TorusField) -> Result<Self> {
        f.same_shape(g)?;
        let len = f.len();
        let mut values = Vec::with_capacity(len * len);
        for &a in f.samples() {
            for &b in g.samples() {
                values.push(a * b);
            }
        }
        Ok(PairTable {
            dim: f.dim(),
            n: f.resolution(),
            values,
        })
    }

    pub fn from_matrix(dim: usize, m: &Matrix) -> Result<Self> {
        check_dim(dim)?;
        if m.rows != m.cols {
            return Err(Error::Mismatch(format!("pair table must be square, got {}x{}", m.rows, m.cols)));
        }
        let n = if dim == 1 {
            m.rows
        } else {
            let r = (m.rows as f64).sqrt().round() as usize;
            if r * r != m.rows {
                return Err(Error::Mismatch(format!(
                    "a 2-d pair table needs N²×N² entries, got {} rows",
                    m.rows
                )));
            }
            r
        };
        if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                cell: vec![i / m.cols, i % m.cols],
                value: m.data[i],
            });
        }
        Ok(PairTable {
            dim,
            n,
            values: m.data.clone(),
        })
    }

    pub fn to_matrix(&self) -> Matrix {
        let len = self.cells();
        Matrix {
            rows: len,
            cols: len,
            data: self.values.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Number of torus cells, `n^d`.
    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cells() + j]
    }

    pub fn cell_of(&self, xi: &[f64]) -> usize {
        let mut idx = 0;
        for &x in xi.iter().take(self.dim) {
            idx = idx * self.n + periodic_cell(x, self.n);
        }
        idx
    }

    pub fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        self.at(self.cell_of(xi), self.cell_of(eta))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean over `η` of `Λ(ξ_i, η)`.
    pub fn row_mean(&self, i: usize) -> f64 {
        let len = self.cells();
        self.values[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Piecewise-constant resampling to resolution `n`.
    pub fn resample(&self, n: usize) -> Result<Self> {
        if n == self.n {
            return Ok(self.clone());
        }
        Self::from_fn(self.dim, n, |xi, eta| self.eval(xi, eta))
    }

    /// Largest difference quotient between neighbouring cells, in either argument.
    pub fn lipschitz_quotient(&self) -> f64 {
        let len = self.cells();
        let h = 1.0 / self.n as f64;
        let neighbours = |i: usize| -> Vec<usize> {
            if self.dim == 1 {
                vec![(i + 1) % self.n]
            } else {
                let (r, c) = (i / self.n, i % self.n);
                vec![((r + 1) % self.n) * self.n + c, r * self.n + (c + 1) % self.n]
            }
        };
        let mut q: f64 = 0.0;
        for i in 0..len {
            for j in 0..len {
                let v = self.at(i, j);
                for i2 in neighbours(i) {
                    q = q.max((self.at(i2, j) - v).abs() / h);
                }
                for j2 in neighbours(j) {
                    q = q.max((self.at(i, j2) - v).abs() / h);
                }
            }
        }
        q
    }
}

/// Symmetric-in-law pair rule `G(ω₁, ω₂)` on the environment torus `Ω = T²`.
#[derive(Clone)]
pub struct PairRule {
    label: String,
    func: PairFn,
    /// Nodes per axis of the midpoint grid used for Haar averages on `Ω`.
    pub omega_grid: usize,
}

impl PairRule {
    pub fn new(label: impl Into<String>, omega_grid: usize, func: PairFn) -> Self {
        PairRule {
            label: label.into(),
            func,
            omega_grid: omega_grid.max(1),
        }
    }

    /// `G = g(ω₁) g(ω₂)` with `g(ω) = mean + ½ amplitude (cos 2πω⁽⁰⁾ + cos 2πω⁽¹⁾)`.
    pub fn cosine_product(mean: f64, amplitude: f64) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        let g = move |w: &[f64]| mean + 0.5 * amplitude * ((tau * w[0]).cos() + (tau * w[1]).cos());
        PairRule::new(
            format!("cosine_product({mean}, {amplitude})"),
            24,
            Arc::new(move |a, b| g(a) * g(b)),
        )
    }

    /// `G = c + amplitude·sin 2πω₁₀ · sin 2πω₂₀`.
    pub fn sine_perturbation(c: f64, amplitude: f64) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        PairRule::new(
            format!("sine_perturbation({c}, {amplitude})"),
            24,
            Arc::new(move |a, b| c + amplitude * (tau * a[0]).sin() * (tau * b[0]).sin()),
        )
    }

    pub fn eval(&self, w1: &[f64], w2: &[f64]) -> f64 {
        (self.func)(w1, w2)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Midpoint nodes of the Haar grid on `T²`.
    pub fn omega_nodes(&self) -> Vec<Point> {
        let n = self.omega_grid;
        (0..n * n).map(|i| fields::cell_center(2, n, i)).collect()
    }
}

impl fmt::Debug for PairRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PairRule({}, grid {})", self.label, self.omega_grid)
    }
}

/// The five kernel families.
#[derive(Debug, Clone)]
pub enum KernelModel {
    /// `λ(x/ε) μ(y/ε)` with periodic factors.
    P1 { lambda: TorusField, mu: TorusField },
    /// `a(x, y) Λ(x/ε, y/ε)` with a symmetric periodic table.
    P2 { modulation: Modulation, table: PairTable },
    /// `λ(x/ε, ω) μ(y/ε, ω)` with stationary ergodic factors.
    Q1 {
        lambda: RandomFieldSpec,
        mu: RandomFieldSpec,
    },
    /// `a(x, y) G(T_{x/ε} ω, T_{y/ε} ω)` for the torus rotation `T` started at a seeded `ω`.
    Q2 {
        modulation: Modulation,
        rule: PairRule,
        seed: u64,
    },
    /// `Λ(x/ε, y/ε)` with a non-symmetric, Lipschitz periodic table.
    NonSym { table: PairTable, lipschitz: f64 },
}

impl KernelModel {
    pub fn case_name(&self) -> &'static str {
        match self {
            KernelModel::P1 { .. } => "p1",
            KernelModel::P2 { .. } => "p2",
            KernelModel::Q1 { .. } => "q1",
            KernelModel::Q2 { .. } => "q2",
            KernelModel::NonSym { .. } => "nonsym",
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, KernelModel::Q1 { .. } | KernelModel::Q2 { .. })
    }

    /// Replaces the realization seed of a random model (no-op otherwise).
    ///
    /// Index-coupled Q1 factors stay coupled; independent ones get distinct
    /// derived seeds.
    pub fn with_seed(&self, seed: u64) -> KernelModel {
        match self {
            KernelModel::Q1 { lambda, mu } => {
                let mu_seed = if lambda.coupled_with(mu) {
                    seed
                } else {
                    seed ^ 0xD1B5_4A32_D192_ED03
                };
                KernelModel::Q1 {
                    lambda: lambda.with_seed(seed),
                    mu: mu.with_seed(mu_seed),
                }
            }
            KernelModel::Q2 { modulation, rule, .. } => KernelModel::Q2 {
                modulation: modulation.clone(),
                rule: rule.clone(),
                seed,
            },
            other => other.clone(),
        }
    }
}

/// Outcome of an ellipticity scan.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub min: f64,
    pub max: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
    /// Location of the first value outside the band.
    pub violation: Option<String>,
    pub evaluations: usize,
}

#[derive(Default)]
struct Scan {
    min: f64,
    max: f64,
    violation: Option<String>,
    evaluations: usize,
}

impl Scan {
    fn new() -> Self {
        Scan {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    fn visit(&mut self, v: f64, lo: f64, hi: f64, location: impl FnOnce() -> String) {
        self.evaluations += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        if self.violation.is_none() && !(lo..=hi).contains(&v) {
            self.violation = Some(format!("{} (value {v})", location()));
        }
    }
}

fn sample_points(rng: &mut ChaCha8Rng, dim: usize, half_width: f64) -> Point {
    let mut p = [0.0; 2];
    for c in p.iter_mut().take(dim) {
        *c = rng.random_range(-half_width..half_width);
    }
    p
}

/// Scans every table entry and, for rule-based parts, `budget` seeded samples.
///
/// Product families are checked factor by factor, as their ellipticity is
/// stated on `λ` and `μ` separately.
pub fn check_ellipticity(model: &KernelModel, dim: usize, gamma: f64, budget: usize) -> EllipticityReport {
    let (lo, hi) = (1.0 / gamma, gamma);
    let mut scan = Scan::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_E111);
    let budget = budget.max(1);
    match model {
        KernelModel::P1 { lambda, mu } => {
            for (name, f) in [("lambda", lambda), ("mu", mu)] {
                for (i, &v) in f.samples().iter().enumerate() {
                    scan.visit(v, lo, hi, || format!("{name} cell {i}"));
                }
            }
        }
        KernelModel::Q1 { lambda, mu } => {
            for (name, spec) in [("lambda", lambda), ("mu", mu)] {
                let (values, _) = spec.law();
                for (i, &v) in values.iter().enumerate() {
                    scan.visit(v, lo, hi, || format!("{name} state {i}"));
                }
            }
        }
        KernelModel::P2 { modulation, table } => {
            let len = table.cells();
            let (a0, a1) = modulation.bounds();
            for i in 0..len {
                for j in 0..len {
                    let t = table.at(i, j);
                    scan.visit(t * a0, lo, hi, || format!("table cell ({i}, {j}) with a = {a0}"));
                    scan.visit(t * a1, lo, hi, || format!("table cell ({i}, {j}) with a = {a1}"));
                }
            }
            for _ in 0..budget {
                let x = sample_points(&mut rng, dim, 4.0);
                let y = sample_points(&mut rng, dim, 4.0);
                let a = modulation.eval(&x[..dim], &y[..dim]);
                scan.visit(a * table.min(), lo, hi, || format!("a({x:?}, {y:?}) times table minimum"));
                scan.visit(a * table.max(), lo, hi, || format!("a({x:?}, {y:?}) times table maximum"));
            }
        }
        KernelModel::Q2 { modulation, rule, .. } => {
            let nodes = rule.omega_nodes();
            let stride = (nodes.len() * nodes.len() / budget).max(1);
            let (a0, a1) = modulation.bounds();
            let mut k = 0usize;
            for w1 in &nodes {
                for w2 in &nodes {
                    if k % stride == 0 {
                        let g = rule.eval(w1, w2);
                        scan.visit(g * a0, lo, hi, || format!("rule at ({w1:?}, {w2:?}) with a = {a0}"));
                        scan.visit(g * a1, lo, hi, || format!("rule at ({w1:?}, {w2:?}) with a = {a1}"));
                    }
                    k += 1;
                }
            }
            for _ in 0..budget {
                let w1 = [rng.random::<f64>(), rng.random::<f64>()];
                let w2 = [rng.random::<f64>(), rng.random::<f64>()];
                let x = sample_points(&mut rng, dim, 4.0);
                let y = sample_points(&mut rng, dim, 4.0);
                let v = modulation.eval(&x[..dim], &y[..dim]) * rule.eval(&w1, &w2);
                scan.visit(v, lo, hi, || format!("sample x={x:?} y={y:?} ω₁={w1:?} ω₂={w2:?}"));
            }
        }
        KernelModel::NonSym { table, .. } => {
            let len = table.cells();
            for i in 0..len {
                for j in 0..len {
                    scan.visit(table.at(i, j), lo, hi, || format!("table cell ({i}, {j})"));
                }
            }
        }
    }
    EllipticityReport {
        min: scan.min,
        max: scan.max,
        lower: lo,
        upper: hi,
        pass: scan.violation.is_none(),
        violation: scan.violation,
        evaluations: scan.evaluations,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub max_defect: f64,
    pub pass: bool,
    /// A pair of arguments where the swap changes the value.
    pub witness: Option<String>,
    pub evaluations: usize,
}

/// Checks `Λ(x, y, ξ, η) = Λ(y, x, η, ξ)` for the symmetric families P2 and Q2.
pub fn check_symmetry(model: &KernelModel, dim: usize, budget: usize) -> Result<SymmetryReport> {
    let mut max_defect: f64 = 0.0;
    let mut witness = None;
    let mut evaluations = 0;
    let mut record = |d: f64, w: &dyn Fn() -> String| {
        evaluations += 1;
        if d > max_defect {
            max_defect = d;
            witness = Some(w());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_5111);
    let budget = budget.max(1);
    let modulation = match model {
        KernelModel::P2 { modulation, table } => {
            let len = table.cells();
            for i in 0..len {
                for j in (i + 1)..len {
                    let d = (table.at(i, j) - table.at(j, i)).abs();
                    record(d, &|| format!("table cells ({i}, {j})"));
                }
            }
            modulation
        }
        KernelModel::Q2 { modulation, rule, .. } => {
            let nodes = rule.omega_nodes();
            let stride = (nodes.len() * nodes.len() / budget).max(1);
            let mut k = 0usize;
            for (i, w1) in nodes.iter().enumerate() {
                for w2 in &nodes[i + 1..] {
                    if k % stride == 0 {
                        let d = (rule.eval(w1, w2) - rule.eval(w2, w1)).abs();
                        record(d, &|| format!("ω₁={w1:?}, ω₂={w2:?}"));
                    }
                    k += 1;
                }
            }
            for _ in 0..budget {
                let w1 = [rng.random::<f64>(), rng.random::<f64>()];
                let w2 = [rng.random::<f64>(), rng.random::<f64>()];
                let d = (rule.eval(&w1, &w2) - rule.eval(&w2, &w1)).abs();
                record(d, &|| format!("ω₁={w1:?}, ω₂={w2:?}"));
            }
            modulation
        }
        KernelModel::NonSym { .. } => {
            return Err(Error::InvalidInput(
                "non-symmetric kernels are validated by their Lipschitz bound, not by symmetry".into(),
            ))
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "symmetry check applies to p2/q2 kernels, not {}",
                other.case_name()
            )))
        }
    };
    for _ in 0..budget {
        let x = sample_points(&mut rng, dim, 4.0);
        let y = sample_points(&mut rng, dim, 4.0);
        let d = (modulation.eval(&x[..dim], &y[..dim]) - modulation.eval(&y[..dim], &x[..dim])).abs();
        record(d, &|| format!("a at x={x:?}, y={y:?}"));
    }
    Ok(SymmetryReport {
        max_defect,
        pass: max_defect == 0.0,
        witness: if max_defect > 0.0 { witness } else { None },
        evaluations,
    })
}

/// A validated kernel: model, space dimension, order `α` and ellipticity `γ`.
#[derive(Debug, Clone)]
pub struct Kernel {
    model: KernelModel,
    dim: usize,
    alpha: f64,
    gamma: f64,
}

impl Kernel {
    pub fn new(model: KernelModel, dim: usize, alpha: f64, gamma: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidInput(format!("α = {alpha} must lie in (0, 2)")));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("γ = {gamma} must exceed 1")));
        }
        match &model {
            KernelModel::P1 { lambda, mu } => {
                lambda.same_shape(mu)?;
                if lambda.dim() != dim {
                    return Err(Error::Mismatch(format!("fields are {}-d, kernel is {dim}-d", lambda.dim())));
                }
            }
            KernelModel::P2 { table, modulation } => {
                if table.dim() != dim {
                    return Err(Error::Mismatch(format!("table is {}-d, kernel is {dim}-d", table.dim())));
                }
                let (a0, a1) = modulation.bounds();
                if !(a0 > 0.0 && a0 <= a1) {
                    return Err(Error::InvalidInput(format!("modulation bounds [{a0}, {a1}] must be positive")));
                }
            }
            KernelModel::Q1 { lambda, mu } => {
                lambda.validate()?;
                mu.validate()?;
            }
            KernelModel::Q2 { modulation, .. } => {
                let (a0, a1) = modulation.bounds();
                if !(a0 > 0.0 && a0 <= a1) {
                    return Err(Error::InvalidInput(format!("modulation bounds [{a0}, {a1}] must be positive")));
                }
            }
            KernelModel::NonSym { table, lipschitz } => {
                if table.dim() != dim {
                    return Err(Error::Mismatch(format!("table is {}-d, kernel is {dim}-d", table.dim())));
                }
                if alpha >= 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "non-symmetric kernels need α < 1, got {alpha}"
                    )));
                }
                let q = table.lipschitz_quotient();
                if q > *lipschitz {
                    return Err(Error::InvalidInput(format!(
                        "discrete Lipschitz quotient {q} exceeds the declared bound {lipschitz}"
                    )));
                }
            }
        }
        let report = check_ellipticity(&model, dim, gamma, 1024);
        if let Some(v) = report.violation {
            return Err(Error::Ellipticity {
                location: v,
                value: if report.min < report.lower { report.min } else { report.max },
                lower: report.lower,
                upper: report.upper,
            });
        }
        if matches!(model, KernelModel::P2 { .. } | KernelModel::Q2 { .. }) {
            let sym = check_symmetry(&model, dim, 1024)?;
            if !sym.pass {
                return Err(Error::InvalidInput(format!(
                    "kernel is not symmetric (defect {:e} at {})",
                    sym.max_defect,
                    sym.witness.unwrap_or_default()
                )));
            }
        }
        Ok(Kernel {
            model,
            dim,
            alpha,
            gamma,
        })
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_seed(&self, seed: u64) -> Kernel {
        Kernel {
            model: self.model.with_seed(seed),
            ..self.clone()
        }
    }

    /// Realizes the random environment (trivial for periodic models).
    pub fn environment(&self) -> Result<Environment> {
        Ok(match &self.model {
            KernelModel::Q1 { lambda, mu } => Environment::Product {
                lambda: lambda.realize(self.dim)?,
                mu: mu.realize(self.dim)?,
            },
            KernelModel::Q2 { seed, .. } => {
                let walker = RandomFieldSpec::torus_rotation(TorusField::constant(2, 1, 1.0)?, *seed);
                Environment::Rotation(walker.realize(self.dim)?)
            }
            _ => Environment::Periodic,
        })
    }

    /// Evaluates `Λ^ε(x, y)`.
    pub fn eval(&self, env: &Environment, eps: f64, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let xs = scaled(x, eps, d);
        let ys = scaled(y, eps, d);
        match (&self.model, env) {
            (KernelModel::P1 { lambda, mu }, _) => lambda.eval(&xs[..d]) * mu.eval(&ys[..d]),
            (KernelModel::P2 { modulation, table }, _) => modulation.eval(&x[..d], &y[..d]) * table.eval(&xs[..d], &ys[..d]),
            (KernelModel::NonSym { table, .. }, _) => table.eval(&xs[..d], &ys[..d]),
            (KernelModel::Q1 { .. }, Environment::Product { lambda, mu }) => lambda.value(&xs[..d]) * mu.value(&ys[..d]),
            (KernelModel::Q2 { modulation, rule, .. }, Environment::Rotation(walker)) => {
                modulation.eval(&x[..d], &y[..d]) * rule.eval(&walker.omega_at(&xs[..d]), &walker.omega_at(&ys[..d]))
            }
            _ => panic!("environment does not belong to this kernel"),
        }
    }

    /// Weight `ν(x/ε)` making the operator self-adjoint: `μ/λ` for the
    /// product families, `1` for the symmetric ones.
    pub fn symmetrizing_weight(&self, env: &Environment, eps: f64, x: &[f64]) -> Result<f64> {
        let xs = scaled(x, eps, self.dim);
        let d = self.dim;
        match (&self.model, env) {
            (KernelModel::P1 { lambda, mu }, _) => Ok(mu.eval(&xs[..d]) / lambda.eval(&xs[..d])),
            (KernelModel::Q1 { .. }, Environment::Product { lambda, mu }) => Ok(mu.value(&xs[..d]) / lambda.value(&xs[..d])),
            (KernelModel::P2 { .. }, _) | (KernelModel::Q2 { .. }, _) => Ok(1.0),
            (KernelModel::NonSym { .. }, _) => Err(Error::InvalidInput(
                "non-symmetric kernels have no symmetrizing weight".into(),
            )),
            _ => Err(Error::InvalidInput("environment does not belong to this kernel".into())),
        }
    }

    /// Per-point data for assembling `Λ^ε` on a set of grid points.
    pub fn pair_evaluator(&self, env: &Environment, eps: f64, points: &[Point]) -> Result<PairEval> {
        let d = self.dim;
        let micro: Vec<Point> = points.iter().map(|p| scaled(p, eps, d)).collect();
        let eval = match (&self.model, env) {
            (KernelModel::P1 { lambda, mu }, _) => {
                let left: Vec<f64> = micro.iter().map(|p| lambda.eval(&p[..d])).collect();
                let right: Vec<f64> = micro.iter().map(|p| mu.eval(&p[..d])).collect();
                let mean_mu = cell_average(mu);
                PairEval {
                    weight: Some(right.iter().zip(&left).map(|(m, l)| m / l).collect()),
                    exterior: left.iter().map(|l| l * mean_mu).collect(),
                    symmetric: false,
                    kind: PairKind::Product { left, right },
                }
            }
            (KernelModel::Q1 { mu: mu_spec, .. }, Environment::Product { lambda, mu }) => {
                let left: Vec<f64> = micro.iter().map(|p| lambda.value(&p[..d])).collect();
                let right: Vec<f64> = micro.iter().map(|p| mu.value(&p[..d])).collect();
                let (vals, probs) = mu_spec.law();
                let mean_mu: f64 = vals.iter().zip(&probs).map(|(v, p)| v * p).sum();
                PairEval {
                    weight: Some(right.iter().zip(&left).map(|(m, l)| m / l).collect()),
                    exterior: left.iter().map(|l| l * mean_mu).collect(),
                    symmetric: false,
                    kind: PairKind::Product { left, right },
                }
            }
            (KernelModel::P2 { table, .. }, _) | (KernelModel::NonSym { table, .. }, _) => {
                let modulation = match &self.model {
                    KernelModel::P2 { modulation, .. } => Some(modulation.clone()),
                    _ => None,
                };
                let cells: Vec<usize> = micro.iter().map(|p| table.cell_of(&p[..d])).collect();
                let exterior = cells
                    .iter()
                    .zip(points)
                    .map(|(&c, p)| {
                        let a = modulation.as_ref().map_or(1.0, |m| m.eval(&p[..d], &p[..d]));
                        a * table.row_mean(c)
                    })
                    .collect();
                let symmetric = modulation.is_some();
                PairEval {
                    weight: symmetric.then(|| vec![1.0; points.len()]),
                    exterior,
                    symmetric,
                    kind: PairKind::Table {
                        modulation,
                        table: table.clone(),
                        cells,
                        points: points.to_vec(),
                        dim: d,
                    },
                }
            }
            (KernelModel::Q2 { modulation, rule, .. }, Environment::Rotation(walker)) => {
                let omegas: Vec<Point> = micro.iter().map(|p| walker.omega_at(&p[..d])).collect();
                let nodes = rule.omega_nodes();
                let exterior = omegas
                    .iter()
                    .zip(points)
                    .map(|(w, p)| {
                        let g = nodes.iter().map(|w2| rule.eval(w, w2)).sum::<f64>() / nodes.len() as f64;
                        modulation.eval(&p[..d], &p[..d]) * g
                    })
                    .collect();
                PairEval {
                    weight: Some(vec![1.0; points.len()]),
                    exterior,
                    symmetric: true,
                    kind: PairKind::Rule {
                        modulation: modulation.clone(),
                        rule: rule.clone(),
                        omegas,
                        points: points.to_vec(),
                        dim: d,
                    },
                }
            }
            _ => return Err(Error::InvalidInput("environment does not belong to this kernel".into())),
        };
        Ok(eval)
    }
}

fn scaled(x: &[f64], eps: f64, dim: usize) -> Point {
    let mut p = [0.0; 2];
    for a in 0..dim {
        p[a] = x[a] / eps;
    }
    p
}

/// Free evaluation of `Λ^ε(x, y)`; random models need their realized environment.
pub fn eval_kernel(kernel: &Kernel, env: &Environment, eps: f64, x: &[f64], y: &[f64]) -> f64 {
    kernel.eval(env, eps, x, y)
}

pub fn symmetrizing_weight(kernel: &Kernel, env: &Environment, eps: f64, x: &[f64]) -> Result<f64> {
    kernel.symmetrizing_weight(env, eps, x)
}

/// A realized random environment.
#[derive(Debug, Clone)]
pub enum Environment {
    Periodic,
    Product { lambda: RandomField, mu: RandomField },
    Rotation(RandomField),
}

/// Homogenized kernel `Λ^eff(x, y) = a(x, y) · scale` (constant modulation
/// for the product and non-symmetric families).
#[derive(Debug, Clone)]
pub struct EffectiveKernel {
    pub modulation: Modulation,
    pub scale: f64,
}

impl EffectiveKernel {
    pub fn constant(value: f64) -> Self {
        EffectiveKernel {
            modulation: Modulation::constant(1.0),
            scale: value,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.modulation.eval(x, y) * self.scale
    }

    pub fn pair_evaluator(&self, dim: usize, points: &[Point]) -> PairEval {
        PairEval {
            weight: Some(vec![1.0; points.len()]),
            exterior: points.iter().map(|p| self.eval(&p[..dim], &p[..dim])).collect(),
            symmetric: true,
            kind: PairKind::Modulated {
                modulation: self.modulation.clone(),
                scale: self.scale,
                points: points.to_vec(),
                dim,
            },
        }
    }
}

#[derive(Debug, Clone)]
enum PairKind {
    Product {
        left: Vec<f64>,
        right: Vec<f64>,
    },
    Table {
        modulation: Option<Modulation>,
        table: PairTable,
        cells: Vec<usize>,
        points: Vec<Point>,
        dim: usize,
    },
    Rule {
        modulation: Modulation,
        rule: PairRule,
        omegas: Vec<Point>,
        points: Vec<Point>,
        dim: usize,
    },
    Modulated {
        modulation: Modulation,
        scale: f64,
        points: Vec<Point>,
        dim: usize,
    },
}

/// Kernel values `Λ_ij` between grid points, with the per-point data the
/// discretisation needs: symmetrizing weight and the exterior kernel level
/// (the kernel averaged over the far variable's period).
#[derive(Debug, Clone)]
pub struct PairEval {
    kind: PairKind,
    symmetric: bool,
    weight: Option<Vec<f64>>,
    exterior: Vec<f64>,
}

impl PairEval {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        match &self.kind {
            PairKind::Product { left, right } => left[i] * right[j],
            PairKind::Table {
                modulation,
                table,
                cells,
                points,
                dim,
            } => {
                let a = modulation
                    .as_ref()
                    .map_or(1.0, |m| m.eval(&points[i][..*dim], &points[j][..*dim]));
                a * table.at(cells[i], cells[j])
            }
            PairKind::Rule {
                modulation,
                rule,
                omegas,
                points,
                dim,
            } => modulation.eval(&points[i][..*dim], &points[j][..*dim]) * rule.eval(&omegas[i], &omegas[j]),
            PairKind::Modulated {
                modulation,
                scale,
                points,
                dim,
            } => modulation.eval(&points[i][..*dim], &points[j][..*dim]) * scale,
        }
    }

    pub fn len(&self) -> usize {
        self.exterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exterior.is_empty()
    }

    /// True when `Λ_ij = Λ_ji` by construction.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn weight(&self) -> Option<&[f64]> {
        self.weight.as_deref()
    }

    pub fn exterior_level(&self, i: usize) -> f64 {
        self.exterior[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn field(v: &[f64]) -> TorusField {
        TorusField::from_samples(1, v.len(), v.to_vec()).unwrap()
    }

    fn p1(lambda: &[f64], mu: &[f64]) -> Kernel {
        Kernel::new(
            KernelModel::P1 {
                lambda: field(lambda),
                mu: field(mu),
            },
            1,
            0.5,
            3.0,
        )
        .unwrap()
    }

    #[test]
    fn p1_evaluation() {
        let k = p1(&[1.0], &[1.0]);
        let env = k.environment().unwrap();
        assert_eq!(k.eval(&env, 0.1, &[0.3], &[-2.0]), 1.0);
        let k = p1(&[1.0, 3.0], &[1.0, 3.0]);
        assert_eq!(eval_kernel(&k, &env, 1.0, &[0.25], &[0.75]), 3.0);
    }

    #[test]
    fn p2_constant_kernel() {
        let k = Kernel::new(
            KernelModel::P2 {
                modulation: Modulation::constant(1.0),
                table: PairTable::constant(1, 1.7).unwrap(),
            },
            1,
            1.5,
            2.0,
        )
        .unwrap();
        let env = k.environment().unwrap();
        for (x, y) in [(0.0, 1.0), (-3.2, 0.01), (5.0, 5.0)] {
            assert_eq!(k.eval(&env, 0.3, &[x], &[y]), 1.7);
        }
    }

    #[test]
    fn ellipticity_reports() {
        let model = KernelModel::P1 {
            lambda: field(&[1.0 / 3.0, 3.0]),
            mu: field(&[1.0, 2.0]),
        };
        assert!(check_ellipticity(&model, 1, 3.0, 1).pass);
        let bad = KernelModel::P1 {
            lambda: field(&[1.0, 0.0, 1.0]),
            mu: field(&[1.0, 1.0, 1.0]),
        };
        let r = check_ellipticity(&bad, 1, 3.0, 1);
        assert!(!r.pass);
        assert!(r.violation.unwrap().contains("lambda cell 1"));
        assert!(matches!(
            Kernel::new(bad, 1, 0.5, 3.0),
            Err(Error::Ellipticity { .. })
        ));

        let table = PairTable::from_fn(1, 64, |a, b| 2.0 + (2.0 * PI * (a[0] - b[0])).cos()).unwrap();
        let model = KernelModel::P2 {
            modulation: Modulation::constant(1.0),
            table,
        };
        let r = check_ellipticity(&model, 1, 3.0, 100);
        assert!(r.pass && r.min >= 1.0 && r.max <= 3.0);
    }

    #[test]
    fn symmetry_reports() {
        let f = field(&[1.0, 1.5, 2.0]);
        let sym = KernelModel::P2 {
            modulation: Modulation::constant(1.0),
            table: PairTable::product(&f, &f).unwrap(),
        };
        assert!(check_symmetry(&sym, 1, 64).unwrap().pass);

        let skew = KernelModel::P2 {
            modulation: Modulation::constant(1.0),
            table: PairTable::from_fn(1, 8, |a, _| 2.0 + 0.5 * (2.0 * PI * a[0]).sin()).unwrap(),
        };
        let r = check_symmetry(&skew, 1, 64).unwrap();
        assert!(!r.pass && r.witness.is_some());

        let modulated = KernelModel::P2 {
            modulation: Modulation::exp_decay(2.0),
            table: PairTable::product(&f, &f).unwrap(),
        };
        assert!(check_symmetry(&modulated, 1, 256).unwrap().pass);

        let nonsym = KernelModel::NonSym {
            table: PairTable::constant(1, 1.0).unwrap(),
            lipschitz: 1.0,
        };
        assert!(check_symmetry(&nonsym, 1, 8).is_err());
    }

    #[test]
    fn nonsym_requires_small_alpha_and_lipschitz_table() {
        let table = PairTable::from_fn(1, 32, |a, b| 2.0 + 0.5 * (2.0 * PI * a[0]).sin() + 0.25 * (2.0 * PI * b[0]).sin()).unwrap();
        let model = KernelModel::NonSym {
            table: table.clone(),
            lipschitz: 4.0,
        };
        assert!(Kernel::new(model.clone(), 1, 0.5, 3.0).is_ok());
        assert!(Kernel::new(model, 1, 1.2, 3.0).is_err());
        let tight = KernelModel::NonSym { table, lipschitz: 0.5 };
        assert!(Kernel::new(tight, 1, 0.5, 3.0).is_err());
    }

    #[test]
    fn weights() {
        let k = p1(&[1.0, 2.0], &[1.0, 2.0]);
        let env = Environment::Periodic;
        for x in [0.1, 0.7, -1.3] {
            assert_eq!(k.symmetrizing_weight(&env, 0.5, &[x]).unwrap(), 1.0);
        }
        let k = p1(&[1.0, 1.0], &[1.0, 3.0]);
        assert_eq!(symmetrizing_weight(&k, &env, 1.0, &[0.75]).unwrap(), 3.0);
        let p2 = Kernel::new(
            KernelModel::P2 {
                modulation: Modulation::exp_decay(1.0),
                table: PairTable::constant(1, 1.0).unwrap(),
            },
            1,
            0.5,
            3.0,
        )
        .unwrap();
        assert_eq!(p2.symmetrizing_weight(&env, 0.1, &[0.3]).unwrap(), 1.0);
        let ns = Kernel::new(
            KernelModel::NonSym {
                table: PairTable::constant(1, 1.0).unwrap(),
                lipschitz: 1.0,
            },
            1,
            0.5,
            3.0,
        )
        .unwrap();
        assert!(ns.symmetrizing_weight(&env, 0.1, &[0.3]).is_err());
    }

    #[test]
    fn q2_rule_is_symmetric_and_seeded() {
        let model = KernelModel::Q2 {
            modulation: Modulation::constant(1.0),
            rule: PairRule::sine_perturbation(2.0, 0.5),
            seed: 4,
        };
        let k = Kernel::new(model, 1, 0.5, 3.0).unwrap();
        let env = k.environment().unwrap();
        let a = k.eval(&env, 0.1, &[0.3], &[0.8]);
        let b = k.eval(&env, 0.1, &[0.8], &[0.3]);
        assert_eq!(a, b);
        let env2 = k.with_seed(5).environment().unwrap();
        assert_ne!(a, k.eval(&env2, 0.1, &[0.3], &[0.8]));
    }

    proptest! {
        #[test]
        fn micro_kernels_rescale(x in -3.0f64..3.0, y in -3.0f64..3.0, eps in 0.05f64..1.0) {
            let k = p1(&[1.0, 2.0, 0.5], &[3.0, 1.0, 0.4]);
            let env = Environment::Periodic;
            let lhs = k.eval(&env, eps, &[x], &[y]);
            let rhs = k.eval(&env, 1.0, &[x / eps], &[y / eps]);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn p1_detailed_balance(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let k = p1(&[1.0, 2.0, 0.5], &[3.0, 1.0, 0.4]);
            let env = Environment::Periodic;
            let eps = 0.3;
            let lhs = k.symmetrizing_weight(&env, eps, &[x]).unwrap() * k.eval(&env, eps, &[x], &[y]);
            let rhs = k.symmetrizing_weight(&env, eps, &[y]).unwrap() * k.eval(&env, eps, &[y], &[x]);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs());
        }

        #[test]
        fn p2_swap_symmetry(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let f = field(&[1.0, 1.5, 2.0, 0.8]);
            let k = Kernel::new(KernelModel::P2 {
                modulation: Modulation::exp_decay(1.0),
                table: PairTable::product(&f, &f).unwrap(),
            }, 1, 0.5, 9.0).unwrap();
            let env = Environment::Periodic;
            prop_assert_eq!(k.eval(&env, 0.2, &[x], &[y]), k.eval(&env, 0.2, &[y], &[x]));
        }

        #[test]
        fn validated_values_within_band(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let table = PairTable::from_fn(1, 16, |a, b| 2.0 + (2.0 * PI * (a[0] - b[0])).cos()).unwrap();
            let k = Kernel::new(KernelModel::P2 { modulation: Modulation::constant(1.0), table }, 1, 0.5, 3.0).unwrap();
            let v = k.eval(&Environment::Periodic, 0.1, &[x], &[y]);
            prop_assert!((1.0 / 3.0..=3.0).contains(&v));
        }
    }

    #[test]
    fn pair_evaluator_matches_pointwise_evaluation() {
        let k = p1(&[1.0, 0.5], &[2.0, 1.0]);
        let env = Environment::Periodic;
        let pts: Vec<Point> = (0..10).map(|i| [-1.0 + 0.2 * i as f64 + 0.05, 0.0]).collect();
        let pe = k.pair_evaluator(&env, 0.25, &pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_abs_diff_eq!(pe.value(i, j), k.eval(&env, 0.25, &pts[i], &pts[j]), epsilon = 1e-15);
            }
        }
        assert!(!pe.is_symmetric());
        assert!(pe.weight().is_some());
    }
}
