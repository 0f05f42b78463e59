//! Periodic and stationary random scalar fields used as kernel coefficients.
//!
//! A [`TorusField`] stores piecewise-constant values on the `N^d` uniform
//! cells of the unit torus `[0,1)^d`. Random fields come in two concrete
//! ergodic flavours, see [`RandomFieldKind`]; every realization is fully
//! determined by its 64-bit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::Matrix;

/// A point in ℝ^d with `d ≤ 2`; unused trailing components are zero.
pub type Point = [f64; 2];

/// Ergodic rotation direction used by torus-rotation fields in one space
/// dimension: `(1, √2)` with `√2` rounded to the nearest `f64`.
pub const ROTATION_1D: [f64; 2] = [1.0, std::f64::consts::SQRT_2];

/// Linear flow `ω ↦ ω + Bξ` for two space dimensions (rows are Ω axes).
pub const ROTATION_2D: [[f64; 2]; 2] = [[1.0, std::f64::consts::SQRT_2], [1.732_050_807_568_877_2, 1.0]];

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("dimension must be 1 or 2, got {dim}")))
    }
}

/// Sampled 1-periodic scalar function on `[0,1)^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusField {
    dim: usize,
    n: usize,
    samples: Vec<f64>,
}

impl TorusField {
    /// Evaluates `generator` at every cell centre.
    pub fn from_fn(dim: usize, n: usize, generator: impl Fn(&[f64]) -> f64) -> Result<Self> {
        check_dim(dim)?;
        if n == 0 {
            return Err(Error::InvalidInput("torus resolution must be positive".into()));
        }
        let len = n.pow(dim as u32);
        let mut samples = Vec::with_capacity(len);
        for idx in 0..len {
            let c = cell_center(dim, n, idx);
            let v = generator(&c[..dim]);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    cell: unflatten(dim, n, idx),
                    value: v,
                });
            }
            samples.push(v);
        }
        Ok(TorusField { dim, n, samples })
    }

    pub fn from_samples(dim: usize, n: usize, samples: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if n == 0 || samples.len() != n.pow(dim as u32) {
            return Err(Error::Mismatch(format!(
                "a {dim}-d field of resolution {n} needs {} samples, got {}",
                n.pow(dim as u32),
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                cell: unflatten(dim, n, i),
                value: samples[i],
            });
        }
        Ok(TorusField { dim, n, samples })
    }

    pub fn constant(dim: usize, n: usize, value: f64) -> Result<Self> {
        Self::from_fn(dim, n, |_| value)
    }

    /// A single-row matrix is a 1-d field (so is a single column); a square
    /// matrix with more than one row is a 2-d field.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows == 1 || m.cols == 1 {
            Self::from_samples(1, m.data.len(), m.data.clone())
        } else if m.rows == m.cols {
            Self::from_samples(2, m.rows, m.data.clone())
        } else {
            Err(Error::Mismatch(format!(
                "a 2-d torus field needs a square table, got {}x{}",
                m.rows, m.cols
            )))
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self.dim {
            1 => Matrix::row(&self.samples),
            _ => Matrix {
                rows: self.n,
                cols: self.n,
                data: self.samples.clone(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Flat index of the cell containing `xi` (taken modulo 1).
    pub fn cell_of(&self, xi: &[f64]) -> usize {
        let mut idx = 0;
        for &x in xi.iter().take(self.dim) {
            idx = idx * self.n + periodic_cell(x, self.n);
        }
        idx
    }

    /// Periodic evaluation: `eval(ξ) == eval(ξ + k)` for integer `k`.
    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.samples[self.cell_of(xi)]
    }

    pub fn center(&self, idx: usize) -> Point {
        cell_center(self.dim, self.n, idx)
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks every sample against `[1/γ, γ]`; the error names the first bad cell.
    pub fn check_bounds(&self, gamma: f64) -> Result<()> {
        let (lo, hi) = (1.0 / gamma, gamma);
        for (i, &v) in self.samples.iter().enumerate() {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Ellipticity {
                    location: format!("cell {:?}", unflatten(self.dim, self.n, i)),
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_samples(self.dim, self.n, self.samples.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &TorusField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        Self::from_samples(
            self.dim,
            self.n,
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Piecewise-constant resampling at the centres of a finer or coarser grid.
    pub fn resample(&self, n: usize) -> Result<Self> {
        if n == self.n {
            return Ok(self.clone());
        }
        Self::from_fn(self.dim, n, |xi| self.eval(xi))
    }

    pub(crate) fn same_shape(&self, other: &TorusField) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::Mismatch(format!(
                "fields have shapes (d={}, N={}) and (d={}, N={})",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Builds a field from a pointwise rule evaluated at cell centres.
pub fn make_torus_field(dim: usize, n: usize, generator: impl Fn(&[f64]) -> f64) -> Result<TorusField> {
    TorusField::from_fn(dim, n, generator)
}

/// Exact mean of a piecewise-constant field.
pub fn cell_average(f: &TorusField) -> f64 {
    f.samples.iter().sum::<f64>() / f.samples.len() as f64
}

/// Mean of the pointwise ratio `μ/λ`.
pub fn cell_average_ratio(mu: &TorusField, lambda: &TorusField) -> Result<f64> {
    mu.same_shape(lambda)?;
    if let Some(i) = lambda.samples.iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "ratio denominator is not positive at cell {:?}",
            unflatten(lambda.dim, lambda.n, i)
        )));
    }
    let s: f64 = mu.samples.iter().zip(&lambda.samples).map(|(m, l)| m / l).sum();
    Ok(s / mu.samples.len() as f64)
}

pub(crate) fn periodic_cell(x: f64, n: usize) -> usize {
    let frac = x.rem_euclid(1.0);
    ((frac * n as f64) as usize).min(n - 1)
}

pub(crate) fn cell_center(dim: usize, n: usize, idx: usize) -> Point {
    let h = 1.0 / n as f64;
    match dim {
        1 => [(idx as f64 + 0.5) * h, 0.0],
        _ => [((idx / n) as f64 + 0.5) * h, ((idx % n) as f64 + 0.5) * h],
    }
}

fn unflatten(dim: usize, n: usize, idx: usize) -> Vec<usize> {
    match dim {
        1 => vec![idx],
        _ => vec![idx / n, idx % n],
    }
}

/// The two concrete ergodic systems.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomFieldKind {
    /// I.i.d. state per lattice cell of side `cell`, plus one uniform global
    /// shift of the lattice so that the field is stationary.
    Checkerboard {
        states: Vec<f64>,
        /// Probabilities of the states; equal weights when absent.
        weights: Option<Vec<f64>>,
        cell: f64,
    },
    /// `ξ ↦ profile(ω + Bξ)` on the 2-torus with a uniformly drawn start `ω`
    /// and the irrational flow of [`ROTATION_1D`] / [`ROTATION_2D`].
    TorusRotation { profile: TorusField },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomFieldSpec {
    pub kind: RandomFieldKind,
    pub seed: u64,
}

impl RandomFieldSpec {
    pub fn checkerboard(states: Vec<f64>, seed: u64) -> Self {
        RandomFieldSpec {
            kind: RandomFieldKind::Checkerboard {
                states,
                weights: None,
                cell: 1.0,
            },
            seed,
        }
    }

    pub fn torus_rotation(profile: TorusField, seed: u64) -> Self {
        RandomFieldSpec {
            kind: RandomFieldKind::TorusRotation { profile },
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RandomFieldSpec {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            RandomFieldKind::Checkerboard { states, weights, cell } => {
                if states.is_empty() {
                    return Err(Error::InvalidInput("empty state list".into()));
                }
                if let Some(i) = states.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        cell: vec![i],
                        value: states[i],
                    });
                }
                if !(cell.is_finite() && *cell > 0.0) {
                    return Err(Error::InvalidInput(format!("checkerboard cell size {cell} must be positive")));
                }
                if let Some(w) = weights {
                    if w.len() != states.len() {
                        return Err(Error::Mismatch(format!(
                            "{} weights for {} states",
                            w.len(),
                            states.len()
                        )));
                    }
                    if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                        return Err(Error::InvalidInput("state weights must be nonnegative with positive sum".into()));
                    }
                }
                Ok(())
            }
            RandomFieldKind::TorusRotation { profile } => {
                if profile.dim() != 2 {
                    return Err(Error::InvalidInput(
                        "torus-rotation profiles live on the 2-torus (use a square table)".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn check_bounds(&self, gamma: f64) -> Result<()> {
        let (lo, hi) = (1.0 / gamma, gamma);
        match &self.kind {
            RandomFieldKind::Checkerboard { states, .. } => {
                for (i, &v) in states.iter().enumerate() {
                    if !(lo..=hi).contains(&v) {
                        return Err(Error::Ellipticity {
                            location: format!("state {i}"),
                            value: v,
                            lower: lo,
                            upper: hi,
                        });
                    }
                }
                Ok(())
            }
            RandomFieldKind::TorusRotation { profile } => profile.check_bounds(gamma),
        }
    }

    /// The one-point law of the field as `(values, probabilities)`.
    ///
    /// For torus rotations the invariant measure is Haar measure, under which
    /// each profile cell carries equal mass.
    pub fn law(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            RandomFieldKind::Checkerboard { states, weights, .. } => (states.clone(), probabilities(states.len(), weights.as_deref())),
            RandomFieldKind::TorusRotation { profile } => {
                let n = profile.len();
                (profile.samples().to_vec(), vec![1.0 / n as f64; n])
            }
        }
    }

    /// Two specs are index-coupled when they draw from the same underlying
    /// randomness with the same partition of the probability space, so that
    /// realizations are comonotone in the state index.
    pub fn coupled_with(&self, other: &RandomFieldSpec) -> bool {
        if self.seed != other.seed {
            return false;
        }
        match (&self.kind, &other.kind) {
            (
                RandomFieldKind::Checkerboard {
                    states: s1,
                    weights: w1,
                    cell: c1,
                },
                RandomFieldKind::Checkerboard {
                    states: s2,
                    weights: w2,
                    cell: c2,
                },
            ) => {
                s1.len() == s2.len()
                    && c1 == c2
                    && probabilities(s1.len(), w1.as_deref()) == probabilities(s2.len(), w2.as_deref())
            }
            (RandomFieldKind::TorusRotation { profile: p1 }, RandomFieldKind::TorusRotation { profile: p2 }) => {
                p1.resolution() == p2.resolution()
            }
            _ => false,
        }
    }

    pub fn realize(&self, dim: usize) -> Result<RandomField> {
        check_dim(dim)?;
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let state = match &self.kind {
            RandomFieldKind::Checkerboard { states, weights, cell } => RealizedState::Checkerboard {
                states: states.clone(),
                cumulative: cumulative(&probabilities(states.len(), weights.as_deref())),
                cell: *cell,
                shift: [a * cell, if dim == 2 { b * cell } else { 0.0 }],
            },
            RandomFieldKind::TorusRotation { profile } => RealizedState::Rotation {
                profile: profile.clone(),
                omega: [a, b],
            },
        };
        Ok(RandomField {
            dim,
            seed: self.seed,
            state,
        })
    }
}

fn probabilities(n: usize, weights: Option<&[f64]>) -> Vec<f64> {
    match weights {
        Some(w) => {
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        }
        None => vec![1.0 / n as f64; n],
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Counter key of a lattice cell; streams 1.. are cells, stream 0 is the
/// global shift / start point.
fn cell_stream(c: [i64; 2]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let zig = |v: i64| ((v << 1) ^ (v >> 63)) as u64;
    (mix(zig(c[0])) ^ mix(zig(c[1]).wrapping_add(0x5851_F42D_4C95_7F2D))).max(1)
}

#[derive(Debug, Clone)]
enum RealizedState {
    Checkerboard {
        states: Vec<f64>,
        cumulative: Vec<f64>,
        cell: f64,
        shift: Point,
    },
    Rotation {
        profile: TorusField,
        omega: Point,
    },
}

/// One realization `ξ ↦ f(T_ξ ω)` of a random field, evaluable anywhere.
#[derive(Debug, Clone)]
pub struct RandomField {
    dim: usize,
    seed: u64,
    state: RealizedState,
}

impl RandomField {
    pub fn value(&self, xi: &[f64]) -> f64 {
        match &self.state {
            RealizedState::Checkerboard {
                states,
                cumulative,
                cell,
                shift,
            } => states[self.state_index(xi, cumulative, *cell, shift)],
            RealizedState::Rotation { profile, .. } => profile.eval(&self.omega_at(xi)),
        }
    }

    fn state_index(&self, xi: &[f64], cumulative: &[f64], cell: f64, shift: &Point) -> usize {
        let mut c = [0i64; 2];
        for a in 0..self.dim {
            c[a] = ((xi[a] + shift[a]) / cell).floor() as i64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(cell_stream(c));
        let u: f64 = rng.random();
        cumulative.iter().position(|&p| u < p).unwrap_or(cumulative.len() - 1)
    }

    /// Environment point `T_ξ ω`; only meaningful for torus rotations.
    pub fn omega_at(&self, xi: &[f64]) -> Point {
        match &self.state {
            RealizedState::Rotation { omega, .. } => rotate(self.dim, omega, xi),
            RealizedState::Checkerboard { .. } => [0.0, 0.0],
        }
    }

    /// Exact spatial average over the box `[0, side)^d`.
    ///
    /// Checkerboards are integrated cell by cell; rotations use a midpoint
    /// rule with 64 nodes per unit length.
    pub fn box_average(&self, side: f64) -> f64 {
        match &self.state {
            RealizedState::Checkerboard {
                states,
                cumulative,
                cell,
                shift,
            } => {
                // Lattice cells are [k·cell − shift, (k+1)·cell − shift).
                let overlaps = |a: usize| -> Vec<(i64, f64)> {
                    let first = (shift[a] / cell).floor() as i64;
                    let last = ((side + shift[a]) / cell).ceil() as i64;
                    (first..last)
                        .filter_map(|k| {
                            let lo = (k as f64 * cell - shift[a]).max(0.0);
                            let hi = ((k + 1) as f64 * cell - shift[a]).min(side);
                            (hi > lo).then_some((k, hi - lo))
                        })
                        .collect()
                };
                let cell_value = |c: [i64; 2]| {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(cell_stream(c));
                    let u: f64 = rng.random();
                    states[cumulative.iter().position(|&p| u < p).unwrap_or(cumulative.len() - 1)]
                };
                let ox = overlaps(0);
                let total = if self.dim == 1 {
                    ox.iter().map(|&(k, w)| w * cell_value([k, 0])).sum::<f64>()
                } else {
                    let oy = overlaps(1);
                    let mut s = 0.0;
                    for &(kx, wx) in &ox {
                        for &(ky, wy) in &oy {
                            s += wx * wy * cell_value([kx, ky]);
                        }
                    }
                    s
                };
                total / side.powi(self.dim as i32)
            }
            RealizedState::Rotation { .. } => {
                let per_axis = ((side * 64.0).ceil() as usize).max(1);
                let step = side / per_axis as f64;
                let mut s = 0.0;
                if self.dim == 1 {
                    for i in 0..per_axis {
                        s += self.value(&[(i as f64 + 0.5) * step]);
                    }
                    s / per_axis as f64
                } else {
                    for i in 0..per_axis {
                        for j in 0..per_axis {
                            s += self.value(&[(i as f64 + 0.5) * step, (j as f64 + 0.5) * step]);
                        }
                    }
                    s / (per_axis * per_axis) as f64
                }
            }
        }
    }
}

pub(crate) fn rotate(dim: usize, omega: &Point, xi: &[f64]) -> Point {
    if dim == 1 {
        [
            (omega[0] + ROTATION_1D[0] * xi[0]).rem_euclid(1.0),
            (omega[1] + ROTATION_1D[1] * xi[0]).rem_euclid(1.0),
        ]
    } else {
        [
            (omega[0] + ROTATION_2D[0][0] * xi[0] + ROTATION_2D[0][1] * xi[1]).rem_euclid(1.0),
            (omega[1] + ROTATION_2D[1][0] * xi[0] + ROTATION_2D[1][1] * xi[1]).rem_euclid(1.0),
        ]
    }
}

/// Axis-aligned evaluation window with `n` uniform cells per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
    pub n: usize,
}

impl Window {
    pub fn new(dim: usize, lo: Point, hi: Point, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n == 0 || (0..dim).any(|a| !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite()) {
            return Err(Error::InvalidInput("window must be a bounded nonempty box".into()));
        }
        Ok(Window { dim, lo, hi, n })
    }

    pub fn centers(&self) -> Vec<Point> {
        let step = |a: usize| (self.hi[a] - self.lo[a]) / self.n as f64;
        let coord = |a: usize, i: usize| self.lo[a] + (i as f64 + 0.5) * step(a);
        if self.dim == 1 {
            (0..self.n).map(|i| [coord(0, i), 0.0]).collect()
        } else {
            let mut v = Vec::with_capacity(self.n * self.n);
            for i in 0..self.n {
                for j in 0..self.n {
                    v.push([coord(0, i), coord(1, j)]);
                }
            }
            v
        }
    }
}

/// Values of one realization sampled at the cell centres of a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRealization {
    pub spec: RandomFieldSpec,
    pub window: Window,
    pub values: Vec<f64>,
}

impl FieldRealization {
    pub fn to_matrix(&self) -> Matrix {
        match self.window.dim {
            1 => Matrix::row(&self.values),
            _ => Matrix {
                rows: self.window.n,
                cols: self.window.n,
                data: self.values.clone(),
            },
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn sample_realization(spec: &RandomFieldSpec, window: &Window) -> Result<FieldRealization> {
    let field = spec.realize(window.dim)?;
    let values = window.centers().iter().map(|p| field.value(&p[..window.dim])).collect();
    Ok(FieldRealization {
        spec: spec.clone(),
        window: window.clone(),
        values,
    })
}

/// Spatial average of the realization with the given seed over `[0, side)^d`.
pub fn birkhoff_average(spec: &RandomFieldSpec, dim: usize, side: f64, seed: u64) -> Result<f64> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidInput(format!("box side {side} must be positive")));
    }
    Ok(spec.with_seed(seed).realize(dim)?.box_average(side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_and_table_fields() {
        let f = make_torus_field(1, 4, |_| 1.0).unwrap();
        assert_eq!(f.samples(), &[1.0; 4]);
        let g = make_torus_field(1, 2, |x| if x[0] < 0.5 { 1.0 } else { 3.0 }).unwrap();
        assert_eq!(g.samples(), &[1.0, 3.0]);
        assert_eq!(cell_average(&f), 1.0);
        assert_eq!(cell_average(&g), 2.0);
    }

    #[test]
    fn cosine_field_statistics() {
        let f = make_torus_field(1, 256, |x| 2.0 + (2.0 * PI * x[0]).cos()).unwrap();
        assert_abs_diff_eq!(f.min(), 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(f.max(), 3.0, epsilon = 1e-3);
        assert_abs_diff_eq!(cell_average(&f), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_generator_names_cell() {
        let err = make_torus_field(1, 4, |x| if x[0] > 0.5 && x[0] < 0.75 { f64::NAN } else { 1.0 }).unwrap_err();
        match err {
            Error::NonFinite { cell, .. } => assert_eq!(cell, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(make_torus_field(1, 0, |_| 1.0).is_err());
    }

    #[test]
    fn ratio_averages() {
        let a = TorusField::from_samples(1, 2, vec![1.0, 3.0]).unwrap();
        assert_eq!(cell_average_ratio(&a, &a).unwrap(), 1.0);
        let one = TorusField::constant(1, 2, 1.0).unwrap();
        assert_eq!(cell_average_ratio(&a, &one).unwrap(), 2.0);
        let mu = TorusField::from_samples(1, 2, vec![3.0, 1.0]).unwrap();
        assert_abs_diff_eq!(cell_average_ratio(&mu, &a).unwrap(), 5.0 / 3.0, epsilon = 1e-15);
        let other = TorusField::constant(1, 4, 1.0).unwrap();
        assert!(matches!(cell_average_ratio(&a, &other), Err(Error::Mismatch(_))));
    }

    #[test]
    fn two_d_indexing_is_row_major_and_periodic() {
        let f = make_torus_field(2, 4, |x| 10.0 * x[0] + x[1]).unwrap();
        assert_eq!(f.len(), 16);
        assert_eq!(f.eval(&[0.1, 0.6]), f.samples()[2]);
        assert_eq!(f.eval(&[0.1 + 3.0, 0.6 - 2.0]), f.eval(&[0.1, 0.6]));
        let m = f.to_matrix();
        assert_eq!(TorusField::from_matrix(&m).unwrap(), f);
    }

    #[test]
    fn bounds_report_the_cell() {
        let f = TorusField::from_samples(1, 3, vec![1.0, 0.0, 2.0]).unwrap();
        match f.check_bounds(3.0).unwrap_err() {
            Error::Ellipticity { location, .. } => assert!(location.contains('1')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TorusField::from_samples(1, 2, vec![1.0 / 3.0, 3.0]).unwrap().check_bounds(3.0).is_ok());
    }

    #[test]
    fn single_state_checkerboard_is_constant() {
        let spec = RandomFieldSpec::checkerboard(vec![2.5], 7);
        let w = Window::new(1, [-3.0, 0.0], [5.0, 0.0], 40).unwrap();
        let r = sample_realization(&spec, &w).unwrap();
        assert!(r.values.iter().all(|&v| v == 2.5));
        assert!(sample_realization(&RandomFieldSpec::checkerboard(vec![], 1), &w).is_err());
    }

    #[test]
    fn realizations_are_deterministic() {
        let spec = RandomFieldSpec::checkerboard(vec![1.0, 3.0], 42);
        let w = Window::new(2, [0.0, 0.0], [6.0, 6.0], 24).unwrap();
        let a = sample_realization(&spec, &w).unwrap();
        let b = sample_realization(&spec, &w).unwrap();
        assert_eq!(a.values, b.values);
        let c = sample_realization(&spec.with_seed(43), &w).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn checkerboard_mean_within_three_standard_errors() {
        // 10^4 unit cells sampled once each: σ = 1 for states {1,3}.
        let spec = RandomFieldSpec::checkerboard(vec![1.0, 3.0], 2024);
        let field = spec.realize(1).unwrap();
        let n = 10_000;
        let mean = (0..n).map(|k| field.value(&[k as f64 + 0.5])).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn birkhoff_constant_and_rotation() {
        let c = RandomFieldSpec::checkerboard(vec![1.7], 0);
        for side in [0.5, 8.0, 33.3] {
            assert_abs_diff_eq!(birkhoff_average(&c, 1, side, 5).unwrap(), 1.7, epsilon = 1e-14);
        }
        let profile = make_torus_field(2, 256, |w| 2.0 + (2.0 * PI * w[0]).cos()).unwrap();
        let rot = RandomFieldSpec::torus_rotation(profile, 3);
        let e8 = (birkhoff_average(&rot, 1, 8.3, 3).unwrap() - 2.0).abs();
        let e128 = (birkhoff_average(&rot, 1, 128.3, 3).unwrap() - 2.0).abs();
        assert!(e128 < e8 && e128 < 5e-3, "{e8} {e128}");
    }

    #[test]
    fn birkhoff_deviation_shrinks_with_box() {
        let spec = RandomFieldSpec::checkerboard(vec![1.0, 3.0], 0);
        let dev = |side: f64| {
            (0..30)
                .map(|s| (birkhoff_average(&spec, 1, side, s).unwrap() - 2.0).abs())
                .sum::<f64>()
                / 30.0
        };
        let (d8, d32, d128) = (dev(8.0), dev(32.0), dev(128.0));
        assert!(d8 > d32 && d32 > d128, "{d8} {d32} {d128}");
    }

    #[test]
    fn box_average_matches_fine_quadrature() {
        let spec = RandomFieldSpec::checkerboard(vec![1.0, 2.0, 5.0], 11);
        for dim in [1, 2] {
            let f = spec.realize(dim).unwrap();
            let side = 5.3;
            let n = 1060;
            let w = Window::new(dim, [0.0, 0.0], [side, side], n).unwrap();
            let pts = w.centers();
            let q = pts.iter().map(|p| f.value(&p[..dim])).sum::<f64>() / pts.len() as f64;
            assert_abs_diff_eq!(f.box_average(side), q, epsilon = 2e-2);
        }
    }

    #[test]
    fn coupled_fields_share_cells() {
        let mu = RandomFieldSpec::checkerboard(vec![1.0, 3.0], 9);
        let lambda = RandomFieldSpec::checkerboard(vec![1.0, 1.0 / 3.0], 9);
        assert!(mu.coupled_with(&lambda));
        let (fm, fl) = (mu.realize(1).unwrap(), lambda.realize(1).unwrap());
        for k in 0..50 {
            let x = [k as f64 * 0.37];
            assert_abs_diff_eq!(fm.value(&x) * fl.value(&x), 1.0, epsilon = 1e-15);
        }
        assert!(!mu.coupled_with(&lambda.with_seed(10)));
    }

    proptest! {
        #[test]
        fn cell_average_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                                  xs in proptest::collection::vec(-5.0f64..5.0, 8),
                                  ys in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let f = TorusField::from_samples(1, 8, xs).unwrap();
            let g = TorusField::from_samples(1, 8, ys).unwrap();
            let combo = f.zip_with(&g, |x, y| a * x + b * y).unwrap();
            let lhs = cell_average(&combo);
            let rhs = a * cell_average(&f) + b * cell_average(&g);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn average_stays_in_ellipticity_band(xs in proptest::collection::vec(0.25f64..4.0, 1..32)) {
            let n = xs.len();
            let f = TorusField::from_samples(1, n, xs).unwrap();
            let m = cell_average(&f);
            prop_assert!((0.25..=4.0).contains(&m));
        }

        #[test]
        fn evaluation_is_periodic(x in -10.0f64..10.0, k in -5i32..5) {
            let f = make_torus_field(1, 16, |v| 1.0 + v[0]).unwrap();
            prop_assert_eq!(f.eval(&[x]), f.eval(&[x + k as f64]));
        }
    }
}
