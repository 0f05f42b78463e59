//! Linear resolvent and fractional p-Laplace solvers on a grid.
//!
//! Linear problems are posed as `(m I - L) u = g`. The form
//! `(L - m) u = f` corresponds to `g = -f`. The nonlinear problem
//! `L_p u - m |u|^{p-2} u = f` is solved by minimizing its convex energy.

use std::collections::VecDeque;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::DiscreteOperator;

pub const LINEAR_TOL: f64 = 1e-8;
pub const LINEAR_MAX_ITER: usize = 10_000;
pub const NONLINEAR_TOL: f64 = 1e-6;
pub const NONLINEAR_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Relative residual reached.
    pub residual: f64,
    pub wall_ms: f64,
    pub method: &'static str,
    /// Final energy (nonlinear solves only).
    pub objective: Option<f64>,
    /// Energy after every accepted step (nonlinear solves only).
    pub objective_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `(m I - L) u = g` to `‖(m I - L) u - g‖₂ ≤ tol ‖g‖₂`.
///
/// Weighted-symmetric operators use Jacobi-preconditioned conjugate
/// gradients in the `ν`-inner product. Other operators use BiCGSTAB and
/// fall back to Jacobi iteration, which converges because `m I - L` is
/// strictly diagonally dominant.
pub fn solve_resolvent(op: &DiscreteOperator, m: f64, g: &[f64], tol: f64) -> Result<SolveResult> {
    solve_resolvent_capped(op, m, g, tol, LINEAR_MAX_ITER)
}

pub fn solve_resolvent_capped(op: &DiscreteOperator, m: f64, g: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
    if !(m > 0.0) {
        return Err(Error::InvalidInput(format!("m = {m} must be positive")));
    }
    if g.len() != op.len() {
        return Err(Error::Mismatch(format!("right-hand side has {} entries, grid has {}", g.len(), op.len())));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            cell: vec![i],
            value: g[i],
        });
    }
    let start = Instant::now();
    let mut result = if norm(g) == 0.0 {
        SolveResult {
            u: vec![0.0; g.len()],
            iterations: 0,
            residual: 0.0,
            wall_ms: 0.0,
            method: "trivial",
            objective: None,
            objective_trace: Vec::new(),
        }
    } else if let Some(nu) = op.weight() {
        pcg(op, nu, m, g, tol, max_iter)?
    } else {
        match bicgstab(op, m, g, tol, max_iter) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => jacobi(op, m, g, tol, max_iter)?,
            Err(e) => return Err(e),
        }
    };
    result.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

fn pcg(op: &DiscreteOperator, nu: &[f64], m: f64, g: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
    let n = g.len();
    let inv_diag: Vec<f64> = op.diag().iter().map(|d| 1.0 / (m + d)).collect();
    let gnorm = norm(g);
    let mut u = vec![0.0; n];
    let mut r = g.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = wdot(nu, &r, &z);
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        op.shifted_apply_into(m, &p, &mut ap);
        let pap = wdot(nu, &p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!("conjugate gradients lost positivity (pAp = {pap})")));
        }
        let a = rz / pap;
        for i in 0..n {
            u[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rel = norm(&r) / gnorm;
        trace.push(rel);
        if rel <= tol {
            // confirm against the true residual
            op.shifted_apply_into(m, &u, &mut ap);
            let true_rel = ap.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / gnorm;
            if true_rel <= tol {
                return Ok(SolveResult {
                    u,
                    iterations: it,
                    residual: true_rel,
                    wall_ms: 0.0,
                    method: "pcg",
                    objective: None,
                    objective_trace: Vec::new(),
                });
            }
            for i in 0..n {
                r[i] = g[i] - ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = wdot(nu, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(no_convergence("conjugate gradients", max_iter, trace))
}

fn no_convergence(what: &'static str, iterations: usize, mut trace: Vec<f64>) -> Error {
    let residual = trace.last().copied().unwrap_or(f64::NAN);
    let keep = trace.len().saturating_sub(64);
    Error::NoConvergence {
        what,
        iterations,
        residual,
        trace: trace.split_off(keep),
    }
}

fn bicgstab(op: &DiscreteOperator, m: f64, g: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
    let n = g.len();
    let inv_diag: Vec<f64> = op.diag().iter().map(|d| 1.0 / (m + d)).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(a, b)| a * b).collect() };
    let gnorm = norm(g);
    let mut u = vec![0.0; n];
    let mut r = g.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut trace = Vec::new();
    let breakdown = || Error::Numeric("BiCGSTAB breakdown".into());
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(breakdown());
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        op.shifted_apply_into(m, &y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(breakdown());
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let z = precond(&s);
        op.shifted_apply_into(m, &z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            u[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = norm(&r) / gnorm;
        if !rel.is_finite() {
            return Err(breakdown());
        }
        trace.push(rel);
        if rel <= tol {
            op.shifted_apply_into(m, &u, &mut t);
            let true_rel = t.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / gnorm;
            if true_rel <= tol {
                return Ok(SolveResult {
                    u,
                    iterations: it,
                    residual: true_rel,
                    wall_ms: 0.0,
                    method: "bicgstab",
                    objective: None,
                    objective_trace: Vec::new(),
                });
            }
            for i in 0..n {
                r[i] = g[i] - t[i];
            }
        }
    }
    Err(no_convergence("BiCGSTAB", max_iter, trace))
}

/// Jacobi iteration `u ← (g + Σ_j W_ij u_j) / (m + diag_i)`.
pub fn jacobi(op: &DiscreteOperator, m: f64, g: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
    let n = g.len();
    let gnorm = norm(g);
    let mut u = vec![0.0; n];
    let mut au = vec![0.0; n];
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        op.shifted_apply_into(m, &u, &mut au);
        let rel = au.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / gnorm;
        trace.push(rel);
        if rel <= tol {
            return Ok(SolveResult {
                u,
                iterations: it - 1,
                residual: rel,
                wall_ms: 0.0,
                method: "jacobi",
                objective: None,
                objective_trace: Vec::new(),
            });
        }
        for i in 0..n {
            u[i] += (g[i] - au[i]) / (m + op.diag()[i]);
        }
    }
    Err(no_convergence("Jacobi iteration", max_iter, trace))
}

fn weights_for(op: &DiscreteOperator) -> Result<Vec<f64>> {
    let h_d = op.grid().cell_volume();
    let nu = op.weight().ok_or_else(|| {
        Error::InvalidInput("the p-Laplace energy needs a symmetric or weighted-symmetric kernel".into())
    })?;
    Ok(nu.iter().map(|v| v * h_d).collect())
}

#[inline]
fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 3.0 {
        x * x * x.abs()
    } else {
        x.abs().powf(p)
    }
}

/// `|x|^{p-2} x`.
#[inline]
fn signed_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x
    } else if p == 3.0 {
        x * x.abs()
    } else if x == 0.0 {
        0.0
    } else {
        x.abs().powf(p - 1.0).copysign(x)
    }
}

/// Discrete energy whose minimizer solves `L_p u - m |u|^{p-2} u = f`:
///
/// `J(u) = (1/p) [½ Σ h^d ν_i W_ij |u_j - u_i|^p + Σ h^d ν_i (κ_i + m) |u_i|^p] + Σ h^d ν_i f_i u_i`.
pub fn objective_j(op: &DiscreteOperator, p: f64, m: f64, f: &[f64], u: &[f64]) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("p = {p} must exceed 1")));
    }
    if f.len() != op.len() || u.len() != op.len() {
        return Err(Error::Mismatch("grid function sizes differ from the grid".into()));
    }
    let w = weights_for(op)?;
    Ok(energy_and_gradient(op, &w, p, m, f, u, None).0)
}

/// Returns the energy and the sum of the absolute values of its terms,
/// which sets the rounding level of energy comparisons.
fn energy_and_gradient(op: &DiscreteOperator, w: &[f64], p: f64, m: f64, f: &[f64], u: &[f64], grad: Option<&mut [f64]>) -> (f64, f64) {
    use rayon::prelude::*;
    let n = u.len();
    let kappa = op.kappa();
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = op.row(i);
            let ui = u[i];
            let (mut e, mut lp) = (0.0, 0.0);
            for j in 0..n {
                let d = u[j] - ui;
                e += row[j] * abs_pow(d, p);
                lp += row[j] * signed_pow(d, p);
            }
            let local = (kappa[i] + m) * abs_pow(ui, p);
            let energy = w[i] * ((0.5 * e + local) / p + f[i] * ui);
            let magnitude = w[i] * ((0.5 * e + local) / p + (f[i] * ui).abs());
            // ∂J/∂u_i = h^d ν_i [ -Σ_j W_ij |d|^{p-2} d + (κ_i + m) |u_i|^{p-2} u_i + f_i ]
            let g = w[i] * (-lp + (kappa[i] + m) * signed_pow(ui, p) + f[i]);
            (energy, g, magnitude)
        })
        .collect();
    if let Some(grad) = grad {
        for (g, r) in grad.iter_mut().zip(&rows) {
            *g = r.1;
        }
    }
    (rows.iter().map(|r| r.0).sum(), rows.iter().map(|r| r.2).sum())
}

/// `‖-L_p u + m |u|^{p-2} u + f‖₂ / ‖f‖₂` (discrete `L²` norms).
pub fn first_order_residual(op: &DiscreteOperator, p: f64, m: f64, f: &[f64], u: &[f64]) -> Result<f64> {
    let w = weights_for(op)?;
    let mut grad = vec![0.0; u.len()];
    energy_and_gradient(op, &w, p, m, f, u, Some(&mut grad));
    Ok(relative_gradient(&grad, &w, f))
}

fn relative_gradient(grad: &[f64], w: &[f64], f: &[f64]) -> f64 {
    let num: f64 = grad.iter().zip(w).map(|(g, w)| (g / w) * (g / w)).sum::<f64>();
    let den: f64 = f.iter().map(|v| v * v).sum::<f64>();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Minimizes [`objective_j`] by preconditioned L-BFGS with Armijo backtracking.
///
/// Stops when the relative first-order residual is at most `tol`. Steps are
/// accepted on the Armijo condition and recorded in the objective trace,
/// which is therefore strictly decreasing. Once the predicted decrease drops
/// below the rounding level of the energy, steps are instead accepted when
/// the decrease estimated from the directional derivatives at both ends is
/// negative; these steps are counted but not traced.
pub fn solve_plaplace(op: &DiscreteOperator, p: f64, m: f64, f: &[f64], tol: f64) -> Result<SolveResult> {
    solve_plaplace_capped(op, p, m, f, tol, NONLINEAR_MAX_ITER)
}

pub fn solve_plaplace_capped(op: &DiscreteOperator, p: f64, m: f64, f: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
    const MEMORY: usize = 12;
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("p = {p} must exceed 1")));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidInput(format!("m = {m} must be positive")));
    }
    if f.len() != op.len() {
        return Err(Error::Mismatch(format!("right-hand side has {} entries, grid has {}", f.len(), op.len())));
    }
    let start = Instant::now();
    let n = f.len();
    let w = weights_for(op)?;
    let precond: Vec<f64> = (0..n).map(|i| 1.0 / (w[i] * (m + op.diag()[i]))).collect();
    let mut u = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let (mut energy, mut magnitude) = energy_and_gradient(op, &w, p, m, f, &u, Some(&mut grad));
    let mut trace = vec![energy];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut new_grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for it in 0..=max_iter {
        let res = relative_gradient(&grad, &w, f);
        if res <= tol || (f.iter().all(|v| *v == 0.0) && res == 0.0) {
            return Ok(SolveResult {
                u,
                iterations: it,
                residual: res,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                method: "lbfgs",
                objective: Some(energy),
                objective_trace: trace,
            });
        }
        if it == max_iter {
            break;
        }
        // two-loop recursion with a diagonal initial inverse Hessian
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        let scale = history.back().map_or(1.0, |(s, y, _)| {
            let py: f64 = y.iter().zip(&precond).map(|(y, c)| y * y * c).sum();
            if py > 0.0 {
                dot(s, y) / py
            } else {
                1.0
            }
        });
        for i in 0..n {
            q[i] *= scale * precond[i];
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += (a - b) * s[i];
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().zip(&precond).map(|(g, c)| -g * c).collect();
            slope = dot(&grad, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = u[i] + step * dir[i];
            }
            let (e, mag) = energy_and_gradient(op, &w, p, m, f, &trial, Some(&mut new_grad));
            if e < energy && e <= energy + 1e-4 * step * slope {
                accepted = Some((e, mag, true));
                break;
            }
            let noise = 1e-13 * magnitude.max(mag);
            if (step * slope).abs() < noise && e <= energy + noise {
                let end_slope = dot(&new_grad, &dir);
                if 0.5 * step * (slope + end_slope) < 0.0 && end_slope.abs() < slope.abs() {
                    accepted = Some((e, mag, false));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((e_new, mag_new, resolved)) = accepted else {
            return Err(Error::Numeric(format!(
                "line search failed at step {it} (energy {energy}, residual {res:e})"
            )));
        };
        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut grad, &mut new_grad);
        energy = e_new;
        magnitude = mag_new;
        if resolved && trace.last().is_some_and(|&last| energy < last) {
            trace.push(energy);
        }
    }
    let res = relative_gradient(&grad, &w, f);
    Err(no_convergence("p-Laplace descent", max_iter, vec![res]))
}
