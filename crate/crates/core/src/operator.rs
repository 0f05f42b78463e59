//! Grid discretisation of `L^ε` and `L⁰` on a truncated box with zero exterior data.
//!
//! Grid functions are piecewise constant on the cells of `[-R, R)^d`. The
//! discrete operator is the cell average of `L u`, which gives pair weights
//! `W_ij = Λ_ij · I_{ij} / h^d` with `I_{ij}` the double integral of
//! `|x - y|^{-d-α}` over the two cells, approximated by `h^{2d}` times the
//! midpoint value once the cells are more than `r_near` apart.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{check_dim, Point};
use crate::kernels::{EffectiveKernel, Environment, Kernel, PairEval};
use crate::quadrature;

/// Default near-field radius in units of `h`.
pub const DEFAULT_NEAR_CELLS: f64 = 12.0;

/// Largest grid the dense operator storage accepts.
pub const MAX_CELLS: usize = 4096;

/// Uniform grid on `[-R, R)^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub h: f64,
    /// Cells per axis.
    pub m: usize,
}

pub fn build_grid(dim: usize, half_width: f64, h: f64) -> Result<Grid> {
    check_dim(dim)?;
    if !(h > 0.0 && half_width > 0.0) {
        return Err(Error::InvalidInput(format!("need R > 0 and h > 0, got R = {half_width}, h = {h}")));
    }
    let ratio = 2.0 * half_width / h;
    let m = ratio.round();
    if (ratio - m).abs() > 1e-9 * ratio.max(1.0) || m < 2.0 {
        return Err(Error::InvalidInput(format!(
            "2R/h = {ratio} must be an integer of at least 2"
        )));
    }
    Ok(Grid {
        dim,
        half_width,
        h,
        m: m as usize,
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis indices of cell `i` (row-major, first axis slowest).
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        if self.dim == 1 {
            [i, 0]
        } else {
            [i / self.m, i % self.m]
        }
    }

    pub fn center(&self, i: usize) -> Point {
        let idx = self.multi_index(i);
        let mut p = [0.0; 2];
        for a in 0..self.dim {
            p[a] = -self.half_width + (idx[a] as f64 + 0.5) * self.h;
        }
        p
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Samples `f` at the cell centres.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.center(i)[..self.dim])).collect()
    }

    /// Discrete `L²` norm `(Σ h^d u_i²)^{1/2}`.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        (self.cell_volume() * u.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Discrete `L^p` norm.
    pub fn lp_norm(&self, u: &[f64], p: f64) -> f64 {
        (self.cell_volume() * u.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Mismatch(format!(
                "grid function has {} entries, grid has {} cells",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Near-field quadrature value `I_k` for cells at integer offset `k`:
/// the exact cell-pair integral of `|x - y|^{-d-α}` when `α < 1`.
///
/// For `α ≥ 1` the adjacent-cell integral diverges and `u` is read as point
/// values instead. In one dimension the weight is then `h` times the integral
/// of the hat function at `k h` against `|z|^{-1-α}`, with the first hat
/// replaced by `(z/h)²` on `[0, h]` so that the symmetric second difference
/// is exact for quadratics. In two dimensions it is the point-to-cell
/// integral times `h²`, and the axis neighbours also carry the second moment
/// of the kernel over the own cell.
pub fn near_diagonal_weight(dim: usize, alpha: f64, offset: [i64; 2], h: f64) -> Result<f64> {
    check_dim(dim)?;
    if offset[..dim].iter().all(|&k| k == 0) {
        return Err(Error::InvalidInput("no self weight exists for offset 0".into()));
    }
    if alpha < 1.0 {
        return quadrature::cell_pair_integral(dim, alpha, offset, h);
    }
    if dim == 1 {
        let k = offset[0].unsigned_abs() as f64;
        let kernel = |z: f64| z.powf(-1.0 - alpha);
        let right = quadrature::integrate(|z| (k + 1.0 - z / h) * kernel(z), k * h, (k + 1.0) * h, 1e-13, 0.0);
        let left = if k == 1.0 {
            h.powf(-alpha) / (2.0 - alpha)
        } else {
            quadrature::integrate(|z| (z / h - k + 1.0) * kernel(z), (k - 1.0) * h, k * h, 1e-13, 0.0)
        };
        return Ok(h * (left + right));
    }
    let vol = h.powi(dim as i32);
    let mut w = vol * quadrature::point_cell_integral(dim, alpha, offset, h);
    let l1: i64 = offset[..dim].iter().map(|k| k.abs()).sum();
    if l1 == 1 {
        w += vol * quadrature::core_second_moment(dim, alpha, h) / (2.0 * h * h);
    }
    Ok(w)
}

/// Midpoint value `h^{2d} |k h|^{-d-α}` used beyond the near field.
pub fn far_weight(dim: usize, alpha: f64, offset: [i64; 2], h: f64) -> f64 {
    let r2: f64 = offset[..dim].iter().map(|&k| (k as f64 * h).powi(2)).sum();
    h.powi(2 * dim as i32) * r2.powf(-0.5 * (dim as f64 + alpha))
}

/// `I_k / h^d` for the offset `k`, exact inside `r_near` and midpoint beyond.
pub(crate) fn pair_base_weight(dim: usize, alpha: f64, k: [i64; 2], h: f64, r_near: f64) -> Result<f64> {
    if k[..dim].iter().all(|&v| v == 0) {
        return Ok(0.0);
    }
    let mut k = [k[0].abs(), if dim == 2 { k[1].abs() } else { 0 }];
    // 2-d near weights are symmetric under swapping axes; order them so both hit the same value
    if k[0] < k[1] {
        k.swap(0, 1);
    }
    let dist = (k[0] as f64).hypot(k[1] as f64) * h;
    let raw = if dist <= r_near * (1.0 + 1e-12) {
        near_diagonal_weight(dim, alpha, k, h)?
    } else {
        far_weight(dim, alpha, k, h)
    };
    Ok(raw / h.powi(dim as i32))
}

/// Table of `I_k / h^d` indexed by the absolute per-axis offset.
fn base_weights(grid: &Grid, alpha: f64, r_near: f64) -> Result<Vec<f64>> {
    let m = grid.m;
    let offsets: Vec<[i64; 2]> = match grid.dim {
        1 => (0..m as i64).map(|k| [k, 0]).collect(),
        _ => (0..(m * m) as i64).map(|i| [i / m as i64, i % m as i64]).collect(),
    };
    offsets
        .par_iter()
        .map(|&k| pair_base_weight(grid.dim, alpha, k, grid.h, r_near))
        .collect()
}

fn base_index(grid: &Grid, i: usize, j: usize) -> usize {
    let a = grid.multi_index(i);
    let b = grid.multi_index(j);
    match grid.dim {
        1 => a[0].abs_diff(b[0]),
        _ => a[0].abs_diff(b[0]) * grid.m + a[1].abs_diff(b[1]),
    }
}

/// Kernel mass outside the box seen from cell `i` (cell-averaged in 1-d for `α < 1`).
pub(crate) fn exterior_mass(grid: &Grid, alpha: f64, i: usize) -> f64 {
    let x = grid.center(i);
    if grid.dim == 1 && alpha < 1.0 {
        quadrature::exterior_mass_cell_average_1d(alpha, x[0], grid.h, grid.half_width)
    } else {
        quadrature::exterior_mass_from_point(grid.dim, alpha, &x[..grid.dim], grid.half_width)
    }
}

/// Assembled discrete operator
/// `(L u)_i = Σ_{j≠i} W_ij (u_j - u_i) - κ_i u_i`.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    alpha: f64,
    w: Vec<f64>,
    kappa: Vec<f64>,
    /// `Σ_j W_ij + κ_i`.
    diag: Vec<f64>,
    weight: Option<Vec<f64>>,
    symmetric: bool,
}

impl DiscreteOperator {
    fn from_pairs(grid: &Grid, alpha: f64, r_near: f64, pairs: &PairEval) -> Result<Self> {
        let n = grid.len();
        if n > MAX_CELLS {
            return Err(Error::InvalidInput(format!(
                "{n} cells exceed the dense-storage limit of {MAX_CELLS}"
            )));
        }
        if r_near < 3.0 * grid.h * (1.0 - 1e-12) {
            return Err(Error::InvalidInput(format!(
                "near-field radius {r_near} is below 3h = {}",
                3.0 * grid.h
            )));
        }
        if pairs.len() != n {
            return Err(Error::Mismatch("pair evaluator does not match the grid".into()));
        }
        let base = base_weights(grid, alpha, r_near)?;
        let symmetric = pairs.is_symmetric();
        let mut w = vec![0.0; n * n];
        w.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            // symmetric kernels are evaluated on the upper triangle only
            let start = if symmetric { i + 1 } else { 0 };
            for j in start..n {
                if j != i {
                    row[j] = pairs.value(i, j) * base[base_index(grid, i, j)];
                }
            }
        });
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    w[i * n + j] = w[j * n + i];
                }
            }
        }
        let kappa: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| pairs.exterior_level(i) * exterior_mass(grid, alpha, i))
            .collect();
        let diag = w
            .par_chunks(n)
            .zip(kappa.par_iter())
            .map(|(row, k)| row.iter().sum::<f64>() + k)
            .collect();
        if let Some(bad) = w.iter().chain(&kappa).find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numeric(format!("assembled a negative or non-finite weight {bad}")));
        }
        Ok(DiscreteOperator {
            grid: grid.clone(),
            alpha,
            w,
            kappa,
            diag,
            weight: pairs.weight().map(|v| v.to_vec()),
            symmetric,
        })
    }

    /// Unit-kernel operator (`Λ ≡ 1`).
    pub fn unit(grid: &Grid, alpha: f64, r_near: f64) -> Result<Self> {
        assemble_effective(&EffectiveKernel::constant(1.0), grid, alpha, r_near)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// Pair weight `W_ij`.
    pub fn weight_at(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.w[i * n..(i + 1) * n]
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Symmetrizing weight `ν_i`, when one exists.
    pub fn weight(&self) -> Option<&[f64]> {
        self.weight.as_deref()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `L u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(u)?;
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let row = self.row(i);
            let mut s = 0.0;
            for (wij, uj) in row.iter().zip(u) {
                s += wij * uj;
            }
            *o = s - self.diag[i] * u[i];
        });
    }

    /// `(m I - L) u`.
    pub(crate) fn shifted_apply_into(&self, m: f64, u: &[f64], out: &mut [f64]) {
        self.apply_into(u, out);
        for (o, ui) in out.iter_mut().zip(u) {
            *o = m * ui - *o;
        }
    }

    /// `Lᵀ u`, the transpose of the assembled matrix.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(u)?;
        let n = self.len();
        Ok((0..n)
            .into_par_iter()
            .map(|j| {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.w[i * n + j] * u[i];
                }
                s - self.diag[j] * u[j]
            })
            .collect())
    }

    /// Row-major dense matrix of `m I - L`.
    pub fn shifted_dense(&self, m: f64) -> Vec<f64> {
        let n = self.len();
        let mut a: Vec<f64> = self.w.iter().map(|w| -w).collect();
        for i in 0..n {
            a[i * n + i] = m + self.diag[i];
        }
        a
    }

    fn require_weight(&self) -> Result<&[f64]> {
        self.weight().ok_or_else(|| {
            Error::InvalidInput("the energy form needs a symmetric or weighted-symmetric kernel".into())
        })
    }

    /// `½ Σ ν_i W_ij (u_j - u_i)(v_j - v_i) + Σ ν_i κ_i u_i v_i`.
    pub fn energy_form(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let nu = self.require_weight()?;
        self.grid.check_len(u)?;
        self.grid.check_len(v)?;
        let n = self.len();
        let pair: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = self.row(i);
                let mut s = 0.0;
                for j in 0..n {
                    s += row[j] * (u[j] - u[i]) * (v[j] - v[i]);
                }
                nu[i] * s
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let ext: f64 = (0..n).map(|i| nu[i] * self.kappa[i] * u[i] * v[i]).sum();
        Ok(0.5 * pair + ext)
    }

    /// `½ Σ ν_i W_ij |u_j - u_i|^p + Σ ν_i κ_i |u_i|^p` (`ν ≡ 1` when the
    /// operator has no weight).
    pub fn p_energy(&self, u: &[f64], p: f64) -> Result<f64> {
        self.grid.check_len(u)?;
        let n = self.len();
        let nu = |i: usize| self.weight.as_ref().map_or(1.0, |w| w[i]);
        let pair: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = self.row(i);
                let mut s = 0.0;
                for j in 0..n {
                    s += row[j] * (u[j] - u[i]).abs().powf(p);
                }
                nu(i) * s
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let ext: f64 = (0..n).map(|i| nu(i) * self.kappa[i] * u[i].abs().powf(p)).sum();
        Ok(0.5 * pair + ext)
    }

    /// `(h^d · energy(u, u))^{1/2}` for a unit-kernel operator, an
    /// `H^{α/2}(ℝ^d)` seminorm proxy that includes the jump to the zero exterior.
    pub fn seminorm(&self, u: &[f64]) -> Result<f64> {
        Ok((self.grid.cell_volume() * self.energy_form(u, u)?).sqrt())
    }

    /// `(h^d · p_energy(u))^{1/p}`, the `W^{α/p,p}` analogue of [`Self::seminorm`].
    pub fn p_seminorm(&self, u: &[f64], p: f64) -> Result<f64> {
        Ok((self.grid.cell_volume() * self.p_energy(u, p)?).powf(1.0 / p))
    }
}

/// Assembles `L^ε` for a kernel and its realized environment.
pub fn assemble(kernel: &Kernel, env: &Environment, eps: f64, grid: &Grid, r_near: f64) -> Result<DiscreteOperator> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("ε = {eps} must be positive")));
    }
    if grid.dim != kernel.dim() {
        return Err(Error::Mismatch(format!("grid is {}-d, kernel is {}-d", grid.dim, kernel.dim())));
    }
    let pairs = kernel.pair_evaluator(env, eps, &grid.centers())?;
    DiscreteOperator::from_pairs(grid, kernel.alpha(), r_near, &pairs)
}

/// Assembles the limit operator `L⁰` with kernel `Λ^eff`.
pub fn assemble_effective(eff: &EffectiveKernel, grid: &Grid, alpha: f64, r_near: f64) -> Result<DiscreteOperator> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidInput(format!("α = {alpha} must lie in (0, 2)")));
    }
    let pairs = eff.pair_evaluator(grid.dim, &grid.centers());
    DiscreteOperator::from_pairs(grid, alpha, r_near, &pairs)
}

/// `H^{α/2}` seminorm proxy of `u` with the unit kernel on `grid`.
pub fn fractional_seminorm(grid: &Grid, u: &[f64], alpha: f64) -> Result<f64> {
    DiscreteOperator::unit(grid, alpha, DEFAULT_NEAR_CELLS * grid.h)?.seminorm(u)
}
