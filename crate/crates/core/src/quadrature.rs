//! Quadrature for the power-law kernel `|z|^{-d-α}`.
//!
//! Cell-pair weights are exact double integrals over two grid cells. In one
//! dimension they come from a closed-form second antiderivative; in two
//! dimensions the double integral is first reduced to a single integral
//! against the tensor "tent" overlap function and then integrated with an
//! adaptive Gauss–Kronrod rule, switching to polar coordinates on the
//! quadrants that touch the singularity.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of a smooth or mildly singular
/// integrand on `[a, b]`.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (whole, err) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, whole, err)];
    let mut total = whole;
    let mut total_err = err;
    let mut evaluations = 0usize;
    while total_err > abs_tol.max(rel_tol * total.abs()) && evaluations < 4000 {
        // bisect the interval with the largest error estimate
        let (k, _) = intervals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, iv)| if iv.3 > best.1 { (i, iv.3) } else { best });
        let (lo, hi, val, e) = intervals.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-12 * (b - a).abs() {
            intervals.push((lo, hi, val, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - val;
        total_err += e1 + e2 - e;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
        evaluations += 1;
    }
    // re-sum to shed accumulated cancellation from the running updates
    intervals.iter().map(|iv| iv.2).sum()
}

/// Second antiderivative of `t^{-1-α}` for `α ∈ (0,1)`, vanishing at 0.
fn phi(t: f64, alpha: f64) -> f64 {
    -t.powf(1.0 - alpha) / (alpha * (1.0 - alpha))
}

/// Exact `∫_{cell 0} ∫_{cell k} |x - y|^{-d-α} dy dx` for cells of side `h`.
///
/// Only defined for `α < 1`, where the adjacent-cell integral is finite; the
/// self-interaction `k = 0` never enters the scheme and is rejected.
pub fn cell_pair_integral(dim: usize, alpha: f64, offset: [i64; 2], h: f64) -> Result<f64> {
    if offset[..dim].iter().all(|&k| k == 0) {
        return Err(Error::InvalidInput("no self weight exists for offset 0".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "cell-pair integrals diverge for adjacent cells when α = {alpha} ≥ 1"
        )));
    }
    match dim {
        1 => {
            let k = offset[0].unsigned_abs() as f64;
            // Φ((k+1)h) - 2Φ(kh) + Φ((k-1)h)
            Ok(phi((k + 1.0) * h, alpha) - 2.0 * phi(k * h, alpha) + phi((k - 1.0) * h, alpha))
        }
        2 => Ok(cell_pair_2d(alpha, [offset[0].unsigned_abs(), offset[1].unsigned_abs()], h)),
        _ => Err(Error::InvalidInput(format!("dimension {dim} unsupported"))),
    }
}

/// 2-d cell pair via `∫ T(z₁ - k₁h) T(z₂ - k₂h) |z|^{-2-α} dz` with the tent
/// `T(s) = (h - |s|)₊`, split into the four quadrants where `T⊗T` is bilinear.
fn cell_pair_2d(alpha: f64, k: [u64; 2], h: f64) -> f64 {
    let mut total = 0.0;
    for qa in 0..2 {
        for qb in 0..2 {
            // on [k h - h, k h] the tent is z - (k-1)h, on [k h, k h + h] it is (k+1)h - z
            let seg = |k: u64, q: usize| -> (f64, f64, f64, f64) {
                let kf = k as f64;
                if q == 0 {
                    ((kf - 1.0) * h, kf * h, -(kf - 1.0) * h, 1.0)
                } else {
                    (kf * h, (kf + 1.0) * h, (kf + 1.0) * h, -1.0)
                }
            };
            let (a0, a1, c1, d1) = seg(k[0], qa);
            let (b0, b1, c2, d2) = seg(k[1], qb);
            total += bilinear_rect(alpha, (a0, a1, c1, d1), (b0, b1, c2, d2));
        }
    }
    total
}

/// `∫_{[a0,a1]×[b0,b1]} (c1 + d1 z₁)(c2 + d2 z₂) |z|^{-2-α} dz`, where the
/// rectangle either avoids the origin or has it as a corner.
fn bilinear_rect(alpha: f64, x: (f64, f64, f64, f64), y: (f64, f64, f64, f64)) -> f64 {
    let (a0, a1, c1, d1) = x;
    let (b0, b1, c2, d2) = y;
    let touches = a0.min(a1) <= 0.0 && a0.max(a1) >= 0.0 && b0.min(b1) <= 0.0 && b0.max(b1) >= 0.0;
    if !touches {
        let inner = |z1: f64| {
            let wx = c1 + d1 * z1;
            wx * integrate(
                |z2| (c2 + d2 * z2) * (z1 * z1 + z2 * z2).powf(-1.0 - 0.5 * alpha),
                b0,
                b1,
                1e-13,
                0.0,
            )
        };
        return integrate(inner, a0, a1, 1e-12, 0.0);
    }
    // Reflect so the rectangle is [0, A] × [0, B]; the weight stays bilinear.
    let (sx, lenx) = if a1 > 0.0 { (1.0, a1) } else { (-1.0, -a0) };
    let (sy, leny) = if b1 > 0.0 { (1.0, b1) } else { (-1.0, -b0) };
    let (c1, d1) = (c1, d1 * sx);
    let (c2, d2) = (c2, d2 * sy);
    debug_assert!((c1 * c2).abs() < 1e-300, "weight must vanish at the singular corner");
    let radial = move |theta: f64| {
        let (s, c) = theta.sin_cos();
        let rho = if c * leny > s * lenx { lenx / c } else { leny / s };
        // w(r cosθ, r sinθ) = r (c1 d2 sinθ + c2 d1 cosθ) + r² d1 d2 cosθ sinθ
        let lin = c1 * d2 * s + c2 * d1 * c;
        let quad = d1 * d2 * c * s;
        lin * rho.powf(1.0 - alpha) / (1.0 - alpha) + quad * rho.powf(2.0 - alpha) / (2.0 - alpha)
    };
    let corner = (leny / lenx).atan();
    integrate(radial, 0.0, corner, 1e-13, 0.0) + integrate(radial, corner, 0.5 * PI, 1e-13, 0.0)
}

/// `∫_{cell k} |z|^{-d-α} dz` over the cell of side `h` centred at `k h`.
pub fn point_cell_integral(dim: usize, alpha: f64, offset: [i64; 2], h: f64) -> f64 {
    match dim {
        1 => {
            let k = offset[0].unsigned_abs() as f64;
            let lo = (k - 0.5) * h;
            let hi = (k + 0.5) * h;
            (lo.powf(-alpha) - hi.powf(-alpha)) / alpha
        }
        _ => {
            let (k0, k1) = (offset[0] as f64, offset[1] as f64);
            integrate(
                |z1| {
                    integrate(
                        |z2| (z1 * z1 + z2 * z2).powf(-1.0 - 0.5 * alpha),
                        (k1 - 0.5) * h,
                        (k1 + 0.5) * h,
                        1e-13,
                        0.0,
                    )
                },
                (k0 - 0.5) * h,
                (k0 + 0.5) * h,
                1e-12,
                0.0,
            )
        }
    }
}

/// Second moment `∫_{cell 0} z₁² |z|^{-d-α} dz` of the kernel over the
/// central cell, finite for every `α < 2`.
pub fn core_second_moment(dim: usize, alpha: f64, h: f64) -> f64 {
    match dim {
        1 => 2.0 * (0.5 * h).powf(2.0 - alpha) / (2.0 - alpha),
        _ => {
            // polar: ∫ cos²θ ρ(θ)^{2-α}/(2-α) dθ with ρ the distance to the square's edge
            let half = 0.5 * h;
            let f = |theta: f64| {
                let (s, c) = theta.sin_cos();
                let rho = half / c.abs().max(s.abs());
                c * c * rho.powf(2.0 - alpha) / (2.0 - alpha)
            };
            let mut total = 0.0;
            for q in 0..8 {
                let a = q as f64 * 0.25 * PI;
                total += integrate(f, a, a + 0.25 * PI, 1e-13, 0.0);
            }
            total
        }
    }
}

/// `∫_{|z|_∞ > a} |z|^{-d-α} dz`: mass of the kernel outside the cube of
/// half-width `a` (a ball in one dimension).
pub fn outside_cube_mass(dim: usize, alpha: f64, a: f64) -> f64 {
    match dim {
        1 => 2.0 * a.powf(-alpha) / alpha,
        _ => {
            let c = integrate(|t: f64| t.cos().powf(alpha), 0.0, 0.25 * PI, 1e-14, 0.0);
            8.0 / alpha * a.powf(-alpha) * c
        }
    }
}

/// `∫_{|z| > r} |z|^{-d-α} dz` for a ball of radius `r`.
pub fn outside_ball_mass(dim: usize, alpha: f64, r: f64) -> f64 {
    match dim {
        1 => 2.0 * r.powf(-alpha) / alpha,
        _ => 2.0 * PI * r.powf(-alpha) / alpha,
    }
}

/// Kernel mass seen from `x` outside the box `[-R, R]^d`.
pub fn exterior_mass_from_point(dim: usize, alpha: f64, x: &[f64], half_width: f64) -> f64 {
    let r = half_width;
    match dim {
        1 => ((r - x[0]).powf(-alpha) + (r + x[0]).powf(-alpha)) / alpha,
        _ => {
            // (1/α) ∫ ρ(θ)^{-α} dθ, ρ = distance to the boundary along θ
            let (px, py) = (x[0], x[1]);
            let rho = |theta: f64| {
                let (s, c) = theta.sin_cos();
                let tx = if c > 0.0 {
                    (r - px) / c
                } else if c < 0.0 {
                    (-r - px) / c
                } else {
                    f64::INFINITY
                };
                let ty = if s > 0.0 {
                    (r - py) / s
                } else if s < 0.0 {
                    (-r - py) / s
                } else {
                    f64::INFINITY
                };
                tx.min(ty)
            };
            let mut cuts = vec![
                (r - py).atan2(r - px),
                (r - py).atan2(-r - px),
                (-r - py).atan2(-r - px),
                (-r - py).atan2(r - px),
            ];
            for c in cuts.iter_mut() {
                if *c < 0.0 {
                    *c += 2.0 * PI;
                }
            }
            cuts.push(0.0);
            cuts.push(2.0 * PI);
            cuts.sort_by(f64::total_cmp);
            cuts.windows(2)
                .map(|w| integrate(|t| rho(t).powf(-alpha), w[0], w[1], 1e-12, 0.0))
                .sum::<f64>()
                / alpha
        }
    }
}

/// Cell average over `[x-h/2, x+h/2]` of the one-dimensional exterior mass
/// `((R-x)^{-α} + (R+x)^{-α})/α`; finite for `α < 1`.
pub fn exterior_mass_cell_average_1d(alpha: f64, x: f64, h: f64, half_width: f64) -> f64 {
    let r = half_width;
    let g = |t: f64| t.max(0.0).powf(1.0 - alpha);
    let (lo, hi) = (x - 0.5 * h, x + 0.5 * h);
    // ∫_lo^hi (R - s)^{-α} ds = [g(R - lo) - g(R - hi)]/(1-α), similarly for R + s
    let right = (g(r - lo) - g(r - hi)) / (1.0 - alpha);
    let left = (g(r + hi) - g(r + lo)) / (1.0 - alpha);
    (right + left) / (alpha * h)
}
