//! Mollifiers and lattice/continuum transfer: centred cardinal B-splines,
//! a smooth compactly supported bump, convolution `Θ_h * f` evaluated at
//! lattice sites, and the interpolation `I_h φ_h(x) = Σ_y h^d φ_h(y) Θ_h(x-y)`.
//!
//! The B-spline of order `k` is normalised so that its transform is
//! `Π_j (sin(ξ_j/2)/(ξ_j/2))^k` and its support is `(-k/2, k/2)^d`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BoxFunction, GridFunction, LatticeDomain, PeriodicBox};

/// Minimum ratio between the mollifier scale and the fine quadrature grid.
pub const MIN_REFINEMENT: f64 = 8.0;

/// One-dimensional centred cardinal B-spline of order `k ≥ 1`.
///
/// Order 1 is the indicator of `(-1/2, 1/2)` with value `1/2` at the jumps,
/// which keeps the integer-shift partition of unity exact everywhere.
pub fn bspline_1d(k: usize, x: f64) -> f64 {
    assert!(k >= 1, "B-spline order must be >= 1");
    let half = 0.5 * k as f64;
    if x.abs() >= half {
        return if k == 1 && x.abs() == half { 0.5 } else { 0.0 };
    }
    if k == 1 {
        return 1.0;
    }
    // de Boor–Cox recursion on the knots -k/2, …, k/2, bottom-up.
    // b[i] holds B_{order}(t - (i - (k - order)/2 - ...)), tracked via left knots.
    let t = x + half; // shift so the support is (0, k)
    let mut b = vec![0.0; k];
    for (i, slot) in b.iter_mut().enumerate() {
        let left = i as f64;
        *slot = if t >= left && t < left + 1.0 { 1.0 } else { 0.0 };
    }
    for order in 2..=k {
        for i in 0..=(k - order) {
            let left = i as f64;
            let denom = (order - 1) as f64;
            b[i] = ((t - left) * b[i] + (left + order as f64 - t) * b[i + 1]) / denom;
        }
    }
    b[0]
}

/// Tensor-product B-spline `Π_j B_k(x_j)`.
pub fn bspline_eval(k: usize, x: &[f64]) -> f64 {
    x.iter().map(|&xi| bspline_1d(k, xi)).product()
}

/// `Π_j (sin(ξ_j/2)/(ξ_j/2))^k`.
pub fn bspline_ft(k: usize, xi: &[f64]) -> f64 {
    xi.iter()
        .map(|&w| {
            let half = 0.5 * w;
            let sinc = if half == 0.0 { 1.0 } else { half.sin() / half };
            sinc.powi(k as i32)
        })
        .product()
}

/// Unnormalised bump `exp(-1/(1-x²))` on `(-1, 1)`.
fn raw_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        // trapezoid is spectrally accurate for a C^∞ compactly supported integrand
        let n = 20_000;
        let step = 2.0 / n as f64;
        (1..n).map(|i| raw_bump(-1.0 + i as f64 * step)).sum::<f64>() * step
    })
}

/// Normalised 1-d smooth bump with support `(-1, 1)` and integral 1.
pub fn smooth_bump_1d(x: f64) -> f64 {
    raw_bump(x) / bump_mass()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MollifierKind {
    /// Centred B-spline of the given order.
    BSpline(usize),
    /// Tensor product of C^∞ bumps `exp(-1/(1-x²))`, support `(-1,1)^d`.
    SmoothBump,
}

/// `Θ_h(x) = h^{-d} Θ(x/h)` for a tensor-product profile `Θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub kind: MollifierKind,
    pub dim: usize,
    pub h: f64,
}

impl Mollifier {
    pub fn bspline(k: usize, dim: usize, h: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("B-spline order must be >= 1".into()));
        }
        Ok(Self {
            kind: MollifierKind::BSpline(k),
            dim,
            h,
        })
    }

    pub fn smooth_bump(dim: usize, h: f64) -> Self {
        Self {
            kind: MollifierKind::SmoothBump,
            dim,
            h,
        }
    }

    /// Unit-scale 1-d profile.
    pub fn profile(&self, x: f64) -> f64 {
        match self.kind {
            MollifierKind::BSpline(k) => bspline_1d(k, x),
            MollifierKind::SmoothBump => smooth_bump_1d(x),
        }
    }

    /// Half-width of the unit-scale support.
    pub fn unit_radius(&self) -> f64 {
        match self.kind {
            MollifierKind::BSpline(k) => 0.5 * k as f64,
            MollifierKind::SmoothBump => 1.0,
        }
    }

    /// Half-width of the support of `Θ_h`.
    pub fn radius(&self) -> f64 {
        self.h * self.unit_radius()
    }

    /// `Θ_h(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / self.h;
        x.iter().map(|&xi| self.profile(xi * inv) * inv).product()
    }
}

/// Quadrature weights of `Θ_h(x - y_j)` over the fine nodes `y_j = h_f·j`
/// along one axis, normalised to sum to 1. Returns the first node index.
fn axis_weights(moll: &Mollifier, x: f64, h_fine: f64) -> (i64, Vec<f64>) {
    let r = moll.radius();
    let first = ((x - r) / h_fine).ceil() as i64;
    let last = ((x + r) / h_fine).floor() as i64;
    let mut w: Vec<f64> = (first..=last)
        .map(|j| moll.profile((x - j as f64 * h_fine) / moll.h))
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for v in &mut w {
            *v /= total;
        }
    }
    (first, w)
}

/// Tensor-product quadrature of `∫ Θ_h(x - y) f(y) dy` on the fine box.
/// With `wrap = false` the stencil must stay inside the box window.
fn convolve_at(f: &BoxFunction, moll: &Mollifier, x: &[f64], wrap: bool) -> Result<f64> {
    let bx = f.box_();
    let d = bx.dim();
    let per_axis: Vec<(i64, Vec<f64>)> = x.iter().map(|&xa| axis_weights(moll, xa, bx.h())).collect();
    if !wrap {
        for (a, (first, w)) in per_axis.iter().enumerate() {
            let last = first + w.len() as i64 - 1;
            if *first < bx.origin()[a] || last >= bx.origin()[a] + bx.n() as i64 {
                return Err(Error::SupportOutsideBox);
            }
        }
    }
    let mut counter = vec![0usize; d];
    let mut m = vec![0i64; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for a in 0..d {
            let (first, ref ws) = per_axis[a];
            w *= ws[counter[a]];
            m[a] = first + counter[a] as i64;
        }
        if w != 0.0 {
            total += w * f.at(&m);
        }
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(total);
            }
            a -= 1;
            counter[a] += 1;
            if counter[a] < per_axis[a].1.len() {
                break;
            }
            counter[a] = 0;
        }
    }
}

fn check_resolution(fine_h: f64, moll: &Mollifier) -> Result<()> {
    let ratio = moll.h / fine_h;
    if ratio < MIN_REFINEMENT * (1.0 - 1e-12) {
        return Err(Error::InsufficientResolution {
            ratio,
            required: MIN_REFINEMENT,
        });
    }
    Ok(())
}

/// `(Θ_h * f)(x)` at every site of `targets`, by fine-grid quadrature with
/// weights normalised to sum to one (constants are reproduced exactly).
pub fn mollify_convolve(f_ref: &BoxFunction, moll: &Mollifier, targets: &Arc<LatticeDomain>) -> Result<GridFunction> {
    check_resolution(f_ref.box_().h(), moll)?;
    if targets.dim() != f_ref.box_().dim() || moll.dim != targets.dim() {
        return Err(Error::DomainMismatch("mollifier, fine box and targets differ in dimension".into()));
    }
    let values = (0..targets.len())
        .into_par_iter()
        .map(|i| convolve_at(f_ref, moll, &targets.coord(i), false))
        .collect::<Result<Vec<f64>>>()?;
    GridFunction::new(targets.clone(), values)
}

/// `(Θ_h * f)` at every site of `coarse` (periodic).
pub fn mollify_convolve_box(f_ref: &BoxFunction, moll: &Mollifier, coarse: &PeriodicBox) -> Result<BoxFunction> {
    check_resolution(f_ref.box_().h(), moll)?;
    let coords = coarse.coords();
    let values = coords
        .par_iter()
        .map(|x| convolve_at(f_ref, moll, x, true))
        .collect::<Result<Vec<f64>>>()?;
    BoxFunction::new(coarse.clone(), values)
}

/// `I_h φ_h(x) = Σ_y φ_h(y) B_k((x - y)/h)` sampled on the sites of `eval`.
///
/// Evaluated by scattering each coefficient onto the eval nodes inside its
/// support; the eval grid must resolve `h/8` or finer.
pub fn interpolate(phi: &GridFunction, k: usize, eval: &PeriodicBox) -> Result<BoxFunction> {
    let dom = phi.domain();
    let h = dom.h();
    if k == 0 {
        return Err(Error::InvalidArgument("B-spline order must be >= 1".into()));
    }
    if eval.dim() != dom.dim() {
        return Err(Error::DomainMismatch("interpolation grid has a different dimension".into()));
    }
    let ratio = h / eval.h();
    if ratio < MIN_REFINEMENT * (1.0 - 1e-12) {
        return Err(Error::InsufficientResolution {
            ratio,
            required: MIN_REFINEMENT,
        });
    }
    let d = dom.dim();
    let half = 0.5 * k as f64 * h;
    let mut out = BoxFunction::zeros(eval.clone());
    let mut counter = vec![0usize; d];
    let mut m = vec![0i64; d];
    for (i, &coef) in phi.values().iter().enumerate() {
        if coef == 0.0 {
            continue;
        }
        let y = dom.coord(i);
        let axes: Vec<(i64, Vec<f64>)> = y
            .iter()
            .map(|&ya| {
                let first = ((ya - half) / eval.h()).ceil() as i64;
                let last = ((ya + half) / eval.h()).floor() as i64;
                let w = (first..=last)
                    .map(|j| bspline_1d(k, (j as f64 * eval.h() - ya) / h))
                    .collect();
                (first, w)
            })
            .collect();
        counter.iter_mut().for_each(|c| *c = 0);
        'scatter: loop {
            let mut w = coef;
            for a in 0..d {
                w *= axes[a].1[counter[a]];
                m[a] = axes[a].0 + counter[a] as i64;
            }
            if w != 0.0 {
                let idx = eval.wrap(&m);
                out.values_mut()[idx] += w;
            }
            let mut a = d;
            loop {
                if a == 0 {
                    break 'scatter;
                }
                a -= 1;
                counter[a] += 1;
                if counter[a] < axes[a].1.len() {
                    break;
                }
                counter[a] = 0;
            }
        }
    }
    Ok(out)
}

/// Numerical transform `∫ B_k(x) e^{-iξx} dx` (real, B_k is even) by
/// composite Simpson on each polynomial piece. Used to cross-check
/// [`bspline_ft`].
pub fn bspline_ft_quadrature(k: usize, xi: f64) -> f64 {
    let half = 0.5 * k as f64;
    let pieces = k;
    let per_piece = 400;
    let mut total = 0.0;
    for p in 0..pieces {
        let a = -half + p as f64;
        let step = 1.0 / per_piece as f64;
        let f = |x: f64| bspline_1d(k, x) * (xi * x).cos();
        // interior evaluation avoids the order-1 half-values at the ends
        let eps = if k == 1 { 1e-15 } else { 0.0 };
        let mut acc = f(a + eps) + f(a + 1.0 - eps);
        for i in 1..per_piece {
            acc += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += acc * step / 3.0;
    }
    total
}

/// `|F Θ(ξ)| · |ξ/2|^k / (Π_j sin²(ξ_j/2))^{k/2}`, bounded by 1 for the
/// B-spline; exposed for decay diagnostics.
pub fn bspline_decay_ratio(k: usize, xi: &[f64]) -> f64 {
    let norm: f64 = xi.iter().map(|x| 0.25 * x * x).sum::<f64>().sqrt();
    let sines: f64 = xi.iter().map(|x| (0.5 * x).sin().powi(2)).sum::<f64>();
    if sines == 0.0 {
        return 0.0;
    }
    bspline_ft(k, xi).abs() * norm.powi(k as i32) / sines.powf(0.5 * k as f64)
}

/// Frequency where `|F θ|` of the smooth bump first drops below `level`,
/// scanning outward; a crude empirical handle on its decay.
pub fn smooth_bump_decay_frequency(level: f64) -> f64 {
    let n = 4000;
    let step = 2.0 / n as f64;
    let ft = |xi: f64| -> f64 {
        (1..n)
            .map(|i| {
                let x = -1.0 + i as f64 * step;
                smooth_bump_1d(x) * (xi * x).cos()
            })
            .sum::<f64>()
            * step
    };
    let mut xi = 0.0;
    while xi < 400.0 * PI {
        if ft(xi).abs() < level {
            return xi;
        }
        xi += 0.25;
    }
    f64::INFINITY
}
