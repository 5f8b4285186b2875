//! Fourier conventions on `hZ^d` and on periodic boxes, the discrete symbol
//! `M_h(ξ)² = Σ_j (4/h²) sin²(ξ_j h / 2)`, and the Poisson folding check.
//!
//! Conventions: the lattice transform is `F_h[u](ξ) = h^d Σ_x e^{-iξ·x} u(x)`;
//! on a box of period `L` its inverse is `u(x) = L^{-d} Σ_k e^{iξ_k·x} F_h[u](ξ_k)`
//! with `ξ_k = 2πk/L`, `k` in the centred range `-n/2+1 ..= n/2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{BoxFunction, PeriodicBox};

/// `M_h(ξ)² = Σ_j (4/h²) sin²(ξ_j h/2)`.
pub fn mh_squared(xi: &[f64], h: f64) -> f64 {
    let c = 4.0 / (h * h);
    xi.iter()
        .map(|&x| {
            let s = (0.5 * x * h).sin();
            c * s * s
        })
        .sum()
}

/// Stateless evaluator of the lattice symbol at fixed `(d, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolEvaluator {
    pub dim: usize,
    pub h: f64,
}

impl SymbolEvaluator {
    pub fn new(dim: usize, h: f64) -> Self {
        Self { dim, h }
    }

    pub fn mh_squared(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        mh_squared(xi, self.h)
    }

    /// `M_h(ξ)^{2s}`, with `s = 0` giving exactly 1.
    pub fn power(&self, xi: &[f64], s: f64) -> f64 {
        if s == 0.0 {
            1.0
        } else {
            self.mh_squared(xi).powf(s)
        }
    }
}

/// Centred frequency index for FFT slot `k` of an `n`-point transform.
/// The Nyquist slot `n/2` maps to `+n/2`.
pub fn centered_index(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// In-place unnormalised d-dimensional FFT over a row-major `n^d` array.
/// `inverse` selects the `e^{+2πi jk/n}` kernel.
pub fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    let mut planner = FftPlanner::new();
    let fft: std::sync::Arc<dyn Fft<f64>> = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let total = data.len();
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..total).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (t, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + t * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (t, v) in line.iter().enumerate() {
                    data[start + t * stride] = *v;
                }
            }
        }
    }
}

/// Frequency-domain samples of a box function at `ξ_k = 2πk/L`.
#[derive(Debug, Clone)]
pub struct SpectrumGrid {
    bx: PeriodicBox,
    amps: Vec<Complex64>,
}

impl SpectrumGrid {
    pub fn box_(&self) -> &PeriodicBox {
        &self.bx
    }

    /// Amplitudes in FFT slot order (row-major over slots).
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// Frequency of flat slot `idx`, written into `xi`.
    pub fn frequency(&self, idx: usize, xi: &mut [f64]) {
        frequency_of(&self.bx, idx, xi);
    }

    /// Multiplies every amplitude by `symbol(ξ_k)`.
    pub fn multiply(&mut self, symbol: impl Fn(&[f64]) -> f64) {
        let mut xi = vec![0.0; self.bx.dim()];
        for idx in 0..self.amps.len() {
            frequency_of(&self.bx, idx, &mut xi);
            self.amps[idx] *= symbol(&xi);
        }
    }
}

fn frequency_of(bx: &PeriodicBox, mut idx: usize, xi: &mut [f64]) {
    let n = bx.n();
    let dk = 2.0 * PI / bx.period();
    for a in (0..bx.dim()).rev() {
        xi[a] = dk * centered_index(idx % n, n) as f64;
        idx /= n;
    }
}

/// Phase `e^{-iξ_k·h·origin}` that moves box index 0 to lattice index `origin`.
fn origin_phase(bx: &PeriodicBox, idx: usize, xi: &mut [f64]) -> Complex64 {
    frequency_of(bx, idx, xi);
    let arg: f64 = xi
        .iter()
        .zip(bx.origin())
        .map(|(k, &o)| k * o as f64 * bx.h())
        .sum();
    Complex64::from_polar(1.0, -arg)
}

/// `F_h[u](ξ_k) = h^d Σ_x e^{-iξ_k·x} u(x)` at every box frequency, via FFT.
pub fn dft_forward(u: &BoxFunction) -> SpectrumGrid {
    let bx = u.box_().clone();
    let mut amps: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut amps, bx.n(), bx.dim(), false);
    let hd = bx.h().powi(bx.dim() as i32);
    let mut xi = vec![0.0; bx.dim()];
    for (idx, a) in amps.iter_mut().enumerate() {
        *a *= origin_phase(&bx, idx, &mut xi) * hd;
    }
    SpectrumGrid { bx, amps }
}

/// Inverse of [`dft_forward`]; returns the real part.
pub fn dft_inverse(spec: &SpectrumGrid) -> BoxFunction {
    let bx = spec.bx.clone();
    let mut xi = vec![0.0; bx.dim()];
    let mut data: Vec<Complex64> = spec
        .amps
        .iter()
        .enumerate()
        .map(|(idx, a)| a * origin_phase(&bx, idx, &mut xi).conj())
        .collect();
    fft_nd(&mut data, bx.n(), bx.dim(), true);
    let scale = 1.0 / bx.period().powi(bx.dim() as i32);
    let values = data.iter().map(|c| c.re * scale).collect();
    BoxFunction::new(bx, values).expect("spectrum and box sizes agree")
}

/// Applies the Fourier multiplier `symbol` to a box function.
pub fn apply_multiplier(u: &BoxFunction, symbol: impl Fn(&[f64]) -> f64) -> BoxFunction {
    let mut spec = dft_forward(u);
    spec.multiply(symbol);
    dft_inverse(&spec)
}

/// Isotropic Gaussian `g(x) = exp(-|x|²/(2σ²))` together with its continuous
/// transform `F g(ξ) = (2πσ²)^{d/2} exp(-σ²|ξ|²/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub width: f64,
}

impl GaussianPair {
    /// `g(x) = e^{-|x|²}`.
    pub fn unit() -> Self {
        Self {
            width: std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (-r2 / (2.0 * self.width * self.width)).exp()
    }

    pub fn ft(&self, xi: &[f64]) -> f64 {
        let s2 = self.width * self.width;
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        (2.0 * PI * s2).powf(0.5 * xi.len() as f64) * (-0.5 * s2 * r2).exp()
    }

    /// Radius beyond which `g < 1e-300`.
    fn cutoff(&self) -> f64 {
        self.width * (2.0 * 300.0 * std::f64::consts::LN_10).sqrt()
    }
}

/// Lattice transform of `g` at `ξ` by direct summation over `hZ^d`.
pub fn lattice_transform(g: &GaussianPair, h: f64, xi: &[f64]) -> f64 {
    let d = xi.len();
    let r = (g.cutoff() / h).ceil() as i64;
    let mut m = vec![-r; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    loop {
        for a in 0..d {
            x[a] = h * m[a] as f64;
        }
        let gx = g.eval(&x);
        if gx > 0.0 {
            let phase: f64 = xi.iter().zip(&x).map(|(k, y)| k * y).sum();
            // g is even, so the sine part cancels
            total += gx * phase.cos();
        }
        let mut a = d;
        loop {
            if a == 0 {
                return total * h.powi(d as i32);
            }
            a -= 1;
            if m[a] < r {
                m[a] += 1;
                break;
            }
            m[a] = -r;
        }
    }
}

/// Max over the box frequencies strictly inside `(-π/h, π/h)^d` of
/// `|F_h[g](ξ) - Σ_{|ζ|_∞ ≤ R·2π/h} F g(ξ+ζ)|`, where `R = fold_radius`.
pub fn poisson_fold_check(g: &GaussianPair, bx: &PeriodicBox, fold_radius: usize) -> f64 {
    let d = bx.dim();
    let h = bx.h();
    let n = bx.n();
    let period = 2.0 * PI / h;
    let r = fold_radius as i64;
    let mut worst: f64 = 0.0;
    let mut xi = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    for idx in 0..bx.len() {
        // skip the Nyquist planes, which sit on the boundary of the cell
        let mut rem = idx;
        let mut on_edge = false;
        for _ in 0..d {
            on_edge |= rem % n == n / 2;
            rem /= n;
        }
        if on_edge {
            continue;
        }
        frequency_of(bx, idx, &mut xi);
        let lhs = lattice_transform(g, h, &xi);
        let mut m = vec![-r; d];
        let mut rhs = 0.0;
        'fold: loop {
            for a in 0..d {
                shifted[a] = xi[a] + period * m[a] as f64;
            }
            rhs += g.ft(&shifted);
            let mut a = d;
            loop {
                if a == 0 {
                    break 'fold;
                }
                a -= 1;
                if m[a] < r {
                    m[a] += 1;
                    break;
                }
                m[a] = -r;
            }
        }
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
