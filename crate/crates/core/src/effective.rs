//! Effective kernels `Λ^eff` for the five families, including the
//! principal-eigenfunction cell problem of the non-symmetric case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{cell_average, cell_average_ratio, RandomFieldKind, RandomFieldSpec, TorusField};
use crate::kernels::{EffectiveKernel, Kernel, KernelModel, Modulation, PairRule, PairTable};
use crate::operator::{pair_base_weight, DEFAULT_NEAR_CELLS};
use crate::quadrature;

/// `(mean μ/λ)^{-1} (mean μ)²`.
pub fn effective_p1(lambda: &TorusField, mu: &TorusField) -> Result<f64> {
    let ratio = cell_average_ratio(mu, lambda)?;
    let m = cell_average(mu);
    Ok(m * m / ratio)
}

/// `a(x, y)` times the mean of the periodic table.
pub fn effective_p2(modulation: &Modulation, table: &PairTable, x: &[f64], y: &[f64]) -> f64 {
    modulation.eval(x, y) * table.mean()
}

/// Result of a Q1 expectation; `std_error` is set only for the sampled fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectation {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// `(E μ̂/λ̂)^{-1} (E μ̂)²`.
///
/// The expectations are exact when the joint law of `(λ̂, μ̂)` is
/// available in closed form: independent factors (different seeds), two
/// checkerboards on the same lattice driven by the same uniforms, or two
/// rotation profiles on the same orbit. Anything else is sampled.
pub fn effective_q1(lambda: &RandomFieldSpec, mu: &RandomFieldSpec) -> Result<Expectation> {
    lambda.validate()?;
    mu.validate()?;
    let (mv, mp) = mu.law();
    let mean_mu: f64 = mv.iter().zip(&mp).map(|(v, p)| v * p).sum();
    let ratio = if lambda.seed != mu.seed {
        let (lv, lp) = lambda.law();
        let inv: f64 = lv.iter().zip(&lp).map(|(v, p)| p / v).sum();
        Some(mean_mu * inv)
    } else {
        joint_ratio_mean(lambda, mu)
    };
    match ratio {
        Some(r) => Ok(Expectation {
            value: mean_mu * mean_mu / r,
            std_error: None,
        }),
        None => sampled_q1(lambda, mu, mean_mu),
    }
}

/// `E μ̂/λ̂` for fields driven by the same seed, when it is exact.
fn joint_ratio_mean(lambda: &RandomFieldSpec, mu: &RandomFieldSpec) -> Option<f64> {
    match (&lambda.kind, &mu.kind) {
        (RandomFieldKind::Checkerboard { cell: c1, .. }, RandomFieldKind::Checkerboard { cell: c2, .. }) if c1 == c2 => {
            // both states are quantiles of the same uniform: merge the breakpoints
            let (lv, lp) = lambda.law();
            let (mv, mp) = mu.law();
            let cum = |p: &[f64]| -> Vec<f64> {
                let mut acc = 0.0;
                p.iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            };
            let (lc, mc) = (cum(&lp), cum(&mp));
            let mut cuts: Vec<f64> = lc.iter().chain(&mc).copied().collect();
            cuts.push(0.0);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let state = |c: &[f64], u: f64| c.iter().position(|&p| u < p).unwrap_or(c.len() - 1);
            let mut s = 0.0;
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                s += (w[1] - w[0]) * mv[state(&mc, mid)] / lv[state(&lc, mid)];
            }
            Some(s)
        }
        (RandomFieldKind::TorusRotation { profile: p1 }, RandomFieldKind::TorusRotation { profile: p2 }) => {
            let (a, b) = (p1.resolution(), p2.resolution());
            let n = a / gcd(a, b) * b;
            if n > 2048 {
                return None;
            }
            let l = p1.resample(n).ok()?;
            let m = p2.resample(n).ok()?;
            cell_average_ratio(&m, &l).ok()
        }
        _ => None,
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sampled_q1(lambda: &RandomFieldSpec, mu: &RandomFieldSpec, mean_mu: f64) -> Result<Expectation> {
    const SAMPLES: usize = 1 << 16;
    let l = lambda.realize(1)?;
    let m = mu.realize(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(lambda.seed ^ 0x0A11_CE5A_5EED);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..SAMPLES {
        let x = rng.random_range(0.0..1.0e6);
        let r = m.value(&[x]) / l.value(&[x]);
        s += r;
        s2 += r * r;
    }
    let n = SAMPLES as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let value = mean_mu * mean_mu / mean;
    // delta method for 1/mean
    let se = value * (var / n).sqrt() / mean;
    Ok(Expectation {
        value,
        std_error: Some(se),
    })
}

/// `a(x, y)` times the Haar double mean of the pair rule on `Ω²`.
pub fn effective_q2(modulation: &Modulation, rule: &PairRule, x: &[f64], y: &[f64]) -> f64 {
    modulation.eval(x, y) * haar_double_mean(rule)
}

pub fn haar_double_mean(rule: &PairRule) -> f64 {
    let nodes = rule.omega_nodes();
    let total: f64 = nodes
        .par_iter()
        .map(|w1| nodes.iter().map(|w2| rule.eval(w1, w2)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / (nodes.len() * nodes.len()) as f64
}

/// Options for the torus cell problem.
#[derive(Debug, Clone, Serialize)]
pub struct CellOptions {
    /// Torus resolution per axis; the table's own resolution when absent.
    pub n: Option<usize>,
    /// Lattice images summed in each direction before the analytic tail.
    pub images: usize,
    /// Resolvent shift; `4 γ S` when absent, `S` being the row mass.
    pub shift: Option<f64>,
    /// Stopping tolerance on the estimated max-norm error of `p₀`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            n: None,
            images: 8,
            shift: None,
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

/// Discrete `L*` on the torus.
///
/// `c_k` sums the grid pair weights of all lattice images of offset `k`
/// within `images` periods and adds `h^d` times the kernel mass outside
/// that cube, spread uniformly over the torus cells.
#[derive(Debug, Clone, Serialize)]
pub struct CellOperatorDiscretization {
    pub dim: usize,
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub images: usize,
    pub shift: f64,
    /// Row mass `S = Σ_k c_k` of the symmetric base weights.
    pub row_mass: f64,
    /// Kernel mass beyond the image cube (before the `h^d` factor).
    pub tail: f64,
    #[serde(skip)]
    table: PairTable,
    #[serde(skip)]
    circulant: Vec<f64>,
    /// `Σ_j c_ij Λ_ij`.
    #[serde(skip)]
    outflow: Vec<f64>,
}

impl CellOperatorDiscretization {
    pub fn new(table: &PairTable, alpha: f64, gamma: f64, opts: &CellOptions) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidInput(format!("α = {alpha} must lie in (0, 2)")));
        }
        if opts.images == 0 {
            return Err(Error::InvalidInput("at least one lattice image is required".into()));
        }
        let dim = table.dim();
        let n = opts.n.unwrap_or(table.resolution());
        let table = table.resample(n)?;
        let h = 1.0 / n as f64;
        let reach = (opts.images * n) as i64;
        let r_near = DEFAULT_NEAR_CELLS * h;
        let len = table.cells();
        let circulant: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|idx| -> Result<f64> {
                let k = if dim == 1 {
                    [idx as i64, 0]
                } else {
                    [(idx / n) as i64, (idx % n) as i64]
                };
                let lift = |k: i64| -> Vec<i64> {
                    let mut v = Vec::new();
                    let mut o = k - (reach + k) / n as i64 * n as i64;
                    while o <= reach {
                        if o >= -reach {
                            v.push(o);
                        }
                        o += n as i64;
                    }
                    v
                };
                let xs = lift(k[0]);
                let ys = if dim == 2 { lift(k[1]) } else { vec![0] };
                let mut s = 0.0;
                for &ox in &xs {
                    for &oy in &ys {
                        s += pair_base_weight(dim, alpha, [ox, oy], h, r_near)?;
                    }
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        let tail = quadrature::outside_cube_mass(dim, alpha, opts.images as f64 + 0.5 * h);
        let vol = h.powi(dim as i32);
        let circulant: Vec<f64> = circulant.iter().map(|c| c + vol * tail).collect();
        let row_mass: f64 = circulant.iter().sum();
        let mut disc = CellOperatorDiscretization {
            dim,
            n,
            alpha,
            gamma,
            images: opts.images,
            shift: 0.0,
            row_mass,
            tail,
            table,
            circulant,
            outflow: Vec::new(),
        };
        disc.outflow = (0..len)
            .map(|i| (0..len).filter(|&j| j != i).map(|j| disc.c(i, j) * disc.table.at(i, j)).sum())
            .collect();
        disc.shift = opts.shift.unwrap_or(4.0 * gamma * row_mass);
        if !(disc.shift > 0.0) {
            return Err(Error::InvalidInput(format!("shift {} must be positive", disc.shift)));
        }
        Ok(disc)
    }

    pub fn cells(&self) -> usize {
        self.table.cells()
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    /// Weight between torus cells `i` and `j`.
    pub fn c(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        if self.dim == 1 {
            self.circulant[(j + n - i) % n]
        } else {
            let (ri, ci) = (i / n, i % n);
            let (rj, cj) = (j / n, j % n);
            self.circulant[((rj + n - ri) % n) * n + (cj + n - ci) % n]
        }
    }

    fn check(&self, q: &TorusField) -> Result<()> {
        if q.dim() != self.dim || q.resolution() != self.n {
            return Err(Error::Mismatch(format!(
                "field is {}-d at N = {}, cell operator is {}-d at N = {}",
                q.dim(),
                q.resolution(),
                self.dim,
                self.n
            )));
        }
        Ok(())
    }

    fn adjoint_raw(&self, q: &[f64]) -> Vec<f64> {
        let len = self.cells();
        (0..len)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for j in 0..len {
                    if j != i {
                        s += self.c(i, j) * self.table.at(j, i) * q[j];
                    }
                }
                s - self.outflow[i] * q[i]
            })
            .collect()
    }

    /// `(L u)_i = Σ_j c_ij Λ_ij (u_j - u_i)`, the companion of [`adjoint_apply`].
    pub fn forward_apply(&self, u: &TorusField) -> Result<TorusField> {
        self.check(u)?;
        let q = u.samples();
        let len = self.cells();
        let out = (0..len)
            .into_par_iter()
            .map(|i| {
                (0..len)
                    .filter(|&j| j != i)
                    .map(|j| self.c(i, j) * self.table.at(i, j) * (q[j] - q[i]))
                    .sum()
            })
            .collect();
        TorusField::from_samples(self.dim, self.n, out)
    }

    /// Solves `(shift - L*) y = x` by Jacobi sweeps starting from `y`.
    fn resolvent_solve(&self, x: &[f64], y: &mut Vec<f64>, tol: f64) -> Result<usize> {
        let len = self.cells();
        let mut next = vec![0.0; len];
        for sweep in 1..=10_000 {
            next.par_iter_mut().enumerate().for_each(|(i, v)| {
                let mut s = x[i];
                for j in 0..len {
                    if j != i {
                        s += self.c(i, j) * self.table.at(j, i) * y[j];
                    }
                }
                *v = s / (self.shift + self.outflow[i]);
            });
            let scale = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let diff = next.iter().zip(y.iter()).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            std::mem::swap(y, &mut next);
            if diff <= tol * scale {
                return Ok(sweep);
            }
        }
        Err(Error::NoConvergence {
            what: "inner resolvent solve",
            iterations: 10_000,
            residual: f64::NAN,
            trace: Vec::new(),
        })
    }
}

/// Discrete `(L* q)(ζ_i) = Σ_j c_ij (Λ(η_j, ζ_i) q_j - Λ(ζ_i, η_j) q_i)`.
pub fn adjoint_apply(disc: &CellOperatorDiscretization, q: &TorusField) -> Result<TorusField> {
    disc.check(q)?;
    TorusField::from_samples(disc.dim, disc.n, disc.adjoint_raw(q.samples()))
}

/// Positive kernel element of `L*`, normalized to mean 1.
#[derive(Debug, Clone, Serialize)]
pub struct CellSolution {
    pub p0: TorusField,
    /// Principal eigenvalue of `(shift - L*)^{-1}`; equals `1/shift`.
    pub eigenvalue: f64,
    pub shift: f64,
    /// `‖L* p₀‖_∞`.
    pub residual: f64,
    pub pmin: f64,
    pub lambda_eff: f64,
    pub iterations: usize,
}

/// Power iteration on `(shift - L*)^{-1}`.
///
/// Stops when the change between normalized iterates, inflated by the
/// observed contraction factor, drops below `tol`.
pub fn principal_eigenfunction(disc: &CellOperatorDiscretization, tol: f64, max_iter: usize) -> Result<CellSolution> {
    let len = disc.cells();
    let mut x = vec![1.0; len];
    let mut y: Vec<f64> = x.iter().map(|v| v / disc.shift).collect();
    let mut trace = Vec::new();
    let mut prev_diff = f64::INFINITY;
    let mut eigenvalue = 0.0;
    let inner_tol = (tol * 1e-3).max(1e-15);
    for it in 1..=max_iter {
        disc.resolvent_solve(&x, &mut y, inner_tol)?;
        let mean_y = y.iter().sum::<f64>() / len as f64;
        eigenvalue = mean_y;
        let next: Vec<f64> = y.iter().map(|v| v / mean_y).collect();
        let diff = next.iter().zip(&x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        x = next;
        trace.push(diff);
        let rate = if prev_diff.is_finite() && prev_diff > 0.0 {
            (diff / prev_diff).clamp(0.0, 1.0 - 1e-9)
        } else {
            0.5
        };
        prev_diff = diff;
        if diff == 0.0 || diff / (1.0 - rate) <= tol {
            let p0 = TorusField::from_samples(disc.dim, disc.n, x)?;
            let pmin = p0.min();
            if !(pmin > 0.0) {
                return Err(Error::Numeric(format!(
                    "principal eigenfunction has a nonpositive entry {pmin}"
                )));
            }
            let residual = adjoint_raw_norm(disc, p0.samples());
            let lambda_eff = effective_nonsym(disc.table(), &p0)?;
            return Ok(CellSolution {
                p0,
                eigenvalue,
                shift: disc.shift,
                residual,
                pmin,
                lambda_eff,
                iterations: it,
            });
        }
    }
    let _ = eigenvalue;
    let residual = adjoint_raw_norm(disc, &x);
    let keep = trace.len().saturating_sub(32);
    Err(Error::NoConvergence {
        what: "principal eigenfunction",
        iterations: max_iter,
        residual,
        trace: trace.split_off(keep),
    })
}

fn adjoint_raw_norm(disc: &CellOperatorDiscretization, q: &[f64]) -> f64 {
    disc.adjoint_raw(q).iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// `⟨p₀⟩^{-1} ⟨Λ p₀⟩` with `p₀` weighting the first argument.
pub fn effective_nonsym(table: &PairTable, p0: &TorusField) -> Result<f64> {
    if p0.dim() != table.dim() {
        return Err(Error::Mismatch("p₀ and table dimensions differ".into()));
    }
    let table = table.resample(p0.resolution())?;
    let len = table.cells();
    let p = p0.samples();
    let num: f64 = (0..len).map(|i| p[i] * table.row_mean(i)).sum::<f64>() / len as f64;
    Ok(num / cell_average(p0))
}

/// Solves the cell problem for a non-symmetric table.
pub fn solve_cell(table: &PairTable, alpha: f64, gamma: f64, opts: &CellOptions) -> Result<CellSolution> {
    let disc = CellOperatorDiscretization::new(table, alpha, gamma, opts)?;
    principal_eigenfunction(&disc, opts.tol, opts.max_iter)
}

/// Effective kernel of any validated model.
#[derive(Debug, Clone)]
pub struct EffectiveResult {
    pub kernel: EffectiveKernel,
    /// Sampling error of a Monte-Carlo Q1 expectation.
    pub std_error: Option<f64>,
    pub cell: Option<CellSolution>,
}

pub fn effective_kernel(kernel: &Kernel, opts: &CellOptions) -> Result<EffectiveResult> {
    let plain = |k: EffectiveKernel| EffectiveResult {
        kernel: k,
        std_error: None,
        cell: None,
    };
    Ok(match kernel.model() {
        KernelModel::P1 { lambda, mu } => plain(EffectiveKernel::constant(effective_p1(lambda, mu)?)),
        KernelModel::P2 { modulation, table } => plain(EffectiveKernel {
            modulation: modulation.clone(),
            scale: table.mean(),
        }),
        KernelModel::Q1 { lambda, mu } => {
            let e = effective_q1(lambda, mu)?;
            EffectiveResult {
                kernel: EffectiveKernel::constant(e.value),
                std_error: e.std_error,
                cell: None,
            }
        }
        KernelModel::Q2 { modulation, rule, .. } => plain(EffectiveKernel {
            modulation: modulation.clone(),
            scale: haar_double_mean(rule),
        }),
        KernelModel::NonSym { table, .. } => {
            let cell = solve_cell(table, kernel.alpha(), kernel.gamma(), opts)?;
            EffectiveResult {
                kernel: EffectiveKernel::constant(cell.lambda_eff),
                std_error: None,
                cell: Some(cell),
            }
        }
    })
}
