//! Exact sampling of the discrete fractional Gaussian field with zero
//! exterior values.
//!
//! The field on `Ω_h` has density proportional to `exp(-½ h^d φᵀAφ)`, i.e.
//! it is `N(0, P^{-1})` with precision `P = h^d A`. Samples are drawn as
//! `φ = L^{-T} z` where `P = LLᵀ` and `z` is standard normal.
//!
//! Random numbers: replica `r` of seed `s` uses ChaCha8 seeded with `s` on
//! stream `r`. Each standard normal consumes one 64-bit word `b` and is the
//! inverse normal CDF of `((b >> 11) + ½) 2^{-53}`, so every sample is a pure
//! function of `(seed, replica)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Result;
use crate::fraclap::KernelMatrix;
use crate::grid::{GridFunction, LatticeDomain};
use crate::stats;

/// Condition numbers beyond this trigger a warning.
pub const CONDITION_WARNING: f64 = 1e12;

const CHUNK: usize = 2048;

/// Per-replica random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub replica: u64,
}

impl RngSpec {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self { seed, replica }
    }

    pub fn generator(&self) -> NormalStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replica);
        NormalStream {
            rng,
            normal: Normal::standard(),
        }
    }

    /// `n` standard normals from this stream.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut g = self.generator();
        (0..n).map(|_| g.next_normal()).collect()
    }
}

/// Standard normals by inversion.
pub struct NormalStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl NormalStream {
    /// Uniform on the open interval `(0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.next_uniform();
        self.normal.inverse_cdf(u)
    }
}

/// `P = h^d A` with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct PrecisionOperator {
    domain: Arc<LatticeDomain>,
    s: f64,
    precision: DMatrix<f64>,
    lower: DMatrix<f64>,
    upper: DMatrix<f64>,
    condition: f64,
}

impl PrecisionOperator {
    pub fn new(a: &KernelMatrix) -> Self {
        let hd = a.domain().cell_volume();
        let precision = a.matrix() * hd;
        let lower = a.cholesky().l() * hd.sqrt();
        let upper = lower.transpose();
        Self {
            domain: a.domain().clone(),
            s: a.order(),
            precision,
            lower,
            upper,
            condition: a.condition_estimate(),
        }
    }

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.domain
    }

    pub fn order(&self) -> f64 {
        self.s
    }

    pub fn len(&self) -> usize {
        self.precision.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Condition estimate inherited from the kernel matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn conditioning_warning(&self) -> Option<String> {
        (self.condition > CONDITION_WARNING).then(|| {
            format!(
                "precision operator is ill-conditioned (estimate {:.3e}, s = {}); reduce the grid size",
                self.condition, self.s
            )
        })
    }

    /// `φ = L^{-T} z`.
    pub fn sample_values(&self, rng: RngSpec) -> Vec<f64> {
        let z = DVector::from_vec(rng.normals(self.len()));
        self.upper
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a zero pivot")
            .as_slice()
            .to_vec()
    }
}

pub fn sample(p: &PrecisionOperator, rng: RngSpec) -> GridFunction {
    GridFunction::new(p.domain.clone(), p.sample_values(rng)).expect("finite sample")
}

/// `P^{-1}`, symmetrised.
pub fn analytic_covariance(p: &PrecisionOperator) -> DMatrix<f64> {
    let n = p.len();
    let inv_u = p
        .upper
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a zero pivot");
    let c = &inv_u * inv_u.transpose();
    (&c + c.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnsembleOptions {
    pub keep_samples: bool,
    pub covariance: bool,
}

/// `N` replicas with summary statistics; replica `i` uses `RngSpec::new(seed, i)`.
#[derive(Debug, Clone)]
pub struct FieldEnsemble {
    pub operator: Arc<PrecisionOperator>,
    pub seed: u64,
    pub replicas: usize,
    pub samples: Option<Vec<GridFunction>>,
    pub mean: Vec<f64>,
    /// Unbiased empirical covariance (when requested).
    pub covariance: Option<DMatrix<f64>>,
    /// `max_x φ_i(x)` per replica, in replica order.
    pub maxima: Vec<f64>,
}

/// Parallel over replicas; accumulation runs in replica order so the result
/// does not depend on the thread count.
pub fn ensemble(p: &Arc<PrecisionOperator>, seed: u64, n: usize, opts: EnsembleOptions) -> FieldEnsemble {
    assert!(n >= 1, "ensemble needs at least one replica");
    let sites = p.len();
    let mut mean = DVector::<f64>::zeros(sites);
    let mut m2 = opts.covariance.then(|| DMatrix::<f64>::zeros(sites, sites));
    let mut maxima = Vec::with_capacity(n);
    let mut kept = opts.keep_samples.then(Vec::new);
    let mut count = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let block: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|i| p.sample_values(RngSpec::new(seed, i as u64)))
            .collect();
        for values in block {
            let x = DVector::from_column_slice(&values);
            count += 1.0;
            let delta = &x - &mean;
            mean += &delta / count;
            if let Some(m2) = m2.as_mut() {
                let delta2 = &x - &mean;
                m2.ger(1.0, &delta, &delta2, 1.0);
            }
            maxima.push(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            if let Some(k) = kept.as_mut() {
                k.push(GridFunction::new(p.domain.clone(), values).expect("finite sample"));
            }
        }
    }
    let covariance = m2.map(|m| {
        let c = if n > 1 { m / (n as f64 - 1.0) } else { m };
        (&c + c.transpose()) * 0.5
    });
    FieldEnsemble {
        operator: p.clone(),
        seed,
        replicas: n,
        samples: kept,
        mean: mean.as_slice().to_vec(),
        covariance,
        maxima,
    }
}

/// Sorted per-replica maxima with summary quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxStatistic {
    pub sorted: Vec<f64>,
    /// `(probability, quantile)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

pub const MAX_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

pub fn max_statistic(e: &FieldEnsemble) -> MaxStatistic {
    let sorted = stats::sorted(&e.maxima);
    let quantiles = MAX_QUANTILES.iter().map(|&p| (p, stats::quantile(&sorted, p))).collect();
    MaxStatistic { sorted, quantiles }
}

/// `(φ, f)_{L²_h} = h^d Σ φ f`.
pub fn pairing(phi: &[f64], f: &GridFunction) -> f64 {
    f.domain().cell_volume() * phi.iter().zip(f.values()).map(|(a, b)| a * b).sum::<f64>()
}

/// Mean over sites and axes of `|φ(x + h e_a) - φ(x)|²/h²` with zero
/// exterior values.
pub fn mean_squared_gradient(phi: &GridFunction) -> f64 {
    let dom = phi.domain();
    let d = dom.dim();
    let h = dom.h();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut nb = vec![0i64; d];
    for (i, m) in dom.sites().enumerate() {
        for a in 0..d {
            nb.copy_from_slice(m);
            nb[a] += 1;
            let next = dom.index_of(&nb).map_or(0.0, |j| phi.values()[j]);
            total += ((next - phi.values()[i]) / h).powi(2);
            count += 1;
        }
    }
    total / count as f64
}

/// Sample lag-1 autocorrelation along the enumeration order's last axis.
pub fn lag_one_autocorrelation(phi: &GridFunction) -> f64 {
    let dom = phi.domain();
    let d = dom.dim();
    let v = phi.values();
    let mean = stats::mean(v);
    let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    let mut nb = vec![0i64; d];
    let mut cov = 0.0;
    for (i, m) in dom.sites().enumerate() {
        nb.copy_from_slice(m);
        nb[d - 1] += 1;
        if let Some(j) = dom.index_of(&nb) {
            cov += (v[i] - mean) * (v[j] - mean);
        }
    }
    cov / var
}

/// Convenience for building a precision operator straight from a domain.
pub fn precision_for(dom: &Arc<LatticeDomain>, s: f64, q: Option<usize>) -> Result<PrecisionOperator> {
    Ok(PrecisionOperator::new(&crate::fraclap::assemble_matrix(dom, s, q)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, Shape};
    use crate::solver::dual_norm_restricted;

    fn dom(shape: Shape, h: f64) -> Arc<LatticeDomain> {
        Arc::new(build_domain(&shape, h).unwrap())
    }

    #[test]
    fn normal_stream_is_deterministic_and_standard() {
        let a = RngSpec::new(7, 3).normals(1000);
        assert_eq!(a, RngSpec::new(7, 3).normals(1000));
        assert_ne!(a, RngSpec::new(7, 4).normals(1000));
        assert_ne!(a, RngSpec::new(8, 3).normals(1000));
        let z = RngSpec::new(1, 0).normals(200_000);
        let m = stats::mean(&z);
        let v = stats::variance(&z);
        assert!(m.abs() < 4.0 / (200_000f64).sqrt());
        assert!((v - 1.0).abs() < 0.02);
        let sorted = stats::sorted(&z);
        let nd = Normal::standard();
        let d = stats::ks_one_sample(&sorted, |x| nd.cdf(x));
        assert!(stats::ks_p_value(d, sorted.len()) > 0.01);
    }

    #[test]
    fn precision_factor_reproduces_p() {
        let d = dom(Shape::unit_cube(2), 1.0 / 7.0);
        for s in [0.5, 1.0, 2.5] {
            let p = precision_for(&d, s, None).unwrap();
            let llt = p.lower() * p.lower().transpose();
            assert!((llt - p.precision()).norm() <= 1e-10 * p.precision().norm());
        }
    }

    #[test]
    fn single_site_law() {
        let d = dom(Shape::interval(0.0, 1.0), 0.5);
        let p = precision_for(&d, 1.0, None).unwrap();
        assert!((p.precision()[(0, 0)] - 4.0).abs() < 1e-14);
        let c = analytic_covariance(&p);
        assert!((c[(0, 0)] - 0.25).abs() < 1e-15);
        let a = sample(&p, RngSpec::new(11, 5));
        let b = sample(&p, RngSpec::new(11, 5));
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn laplacian_covariance_matches_direct_inverse() {
        let d = dom(Shape::interval(0.0, 1.0), 0.25);
        let p = precision_for(&d, 1.0, None).unwrap();
        let tri = DMatrix::from_fn(3, 3, |i, j| match (i as i64 - j as i64).abs() {
            0 => 32.0,
            1 => -16.0,
            _ => 0.0,
        });
        let direct = tri.try_inverse().unwrap() / 0.25;
        let c = analytic_covariance(&p);
        assert!((&c - &direct).amax() < 1e-12);
        // discrete Green's function of -u'' with zero boundary values
        for i in 0..3 {
            for j in 0..3 {
                let (x, y) = ((i + 1) as f64 * 0.25, (j + 1) as f64 * 0.25);
                let g = x.min(y) * (1.0 - x.max(y));
                assert!((c[(i, j)] - g).abs() < 1e-12);
            }
        }
        assert!((&c - c.transpose()).amax() < 1e-10);
    }

    #[test]
    fn pairing_variance_is_dual_norm() {
        let d = dom(Shape::Ball { center: vec![0.5, 0.5], radius: 0.5 }, 0.125);
        let a = crate::fraclap::assemble_matrix(&d, 0.8, None).unwrap();
        let p = PrecisionOperator::new(&a);
        let c = analytic_covariance(&p);
        let f = GridFunction::from_fn(d.clone(), |x| x[0] - 2.0 * x[1] * x[1]).unwrap();
        let fv = DVector::from_column_slice(f.values());
        let hd = d.cell_volume();
        let var = hd * hd * fv.dot(&(&c * &fv));
        let dual = dual_norm_restricted(&f, &a).unwrap();
        assert!((var - dual * dual).abs() < 1e-12 * var);
    }

    #[test]
    fn ensemble_summaries() {
        let d = dom(Shape::unit_cube(1), 0.2);
        let p = Arc::new(precision_for(&d, 1.0, None).unwrap());
        let one = ensemble(&p, 3, 1, EnsembleOptions { keep_samples: true, covariance: true });
        let s0 = one.samples.as_ref().unwrap()[0].values().to_vec();
        assert_eq!(one.mean, s0);
        assert_eq!(one.maxima.len(), 1);

        let e = ensemble(&p, 3, 3000, EnsembleOptions { keep_samples: true, covariance: true });
        assert_eq!(e.maxima.len(), 3000);
        let samples = e.samples.as_ref().unwrap();
        for (i, s) in samples.iter().enumerate().step_by(397) {
            assert_eq!(s.values(), sample(&p, RngSpec::new(3, i as u64)).values());
            let mx = s.values().iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(e.maxima[i], mx);
        }
        // accumulators agree with a two-pass computation
        let n = samples.len() as f64;
        let k = d.len();
        let mut mean = vec![0.0; k];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.values()) {
                *m += v / n;
            }
        }
        for (a, b) in mean.iter().zip(&e.mean) {
            assert!((a - b).abs() < 1e-12);
        }
        let cov = e.covariance.as_ref().unwrap();
        for i in 0..k {
            for j in 0..k {
                let c: f64 = samples
                    .iter()
                    .map(|s| (s.values()[i] - mean[i]) * (s.values()[j] - mean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!((c - cov[(i, j)]).abs() < 1e-12);
            }
        }
        let c = analytic_covariance(&p);
        let max_var = (0..k).map(|i| c[(i, i)]).fold(0.0, f64::max);
        let bound = 4.0 * (max_var / n).sqrt();
        assert!(e.mean.iter().all(|m| m.abs() <= bound));
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let d = dom(Shape::unit_cube(2), 0.2);
        let p = Arc::new(precision_for(&d, 1.5, None).unwrap());
        let opts = EnsembleOptions { keep_samples: false, covariance: true };
        let run = |t| crate::with_threads(t, || ensemble(&p, 99, 5000, opts));
        let (a, b) = (run(1), run(3));
        assert_eq!(a.maxima, b.maxima);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.covariance, b.covariance);
    }

    #[test]
    fn single_site_maxima_are_normal_and_symmetric() {
        let d = dom(Shape::interval(0.0, 1.0), 0.5);
        let p = Arc::new(precision_for(&d, 1.0, None).unwrap());
        let e = ensemble(&p, 21, 5000, EnsembleOptions::default());
        let ms = max_statistic(&e);
        let law = Normal::new(0.0, 0.5).unwrap();
        let dist = stats::ks_one_sample(&ms.sorted, |x| law.cdf(x));
        assert!(stats::ks_p_value(dist, 5000) > 0.01, "KS {dist}");
        let neg: Vec<f64> = stats::sorted(&e.maxima.iter().map(|x| -x).collect::<Vec<_>>());
        let dneg = stats::ks_one_sample(&neg, |x| law.cdf(x));
        assert!(stats::ks_p_value(dneg, 5000) > 0.01);
        assert_eq!(ms.quantiles.len(), MAX_QUANTILES.len());
        assert!(ms.quantiles.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn smoothness_increases_with_order() {
        let d = dom(Shape::interval(0.0, 1.0), 1.0 / 32.0);
        let mut prev = f64::INFINITY;
        for s in [0.5, 1.0, 2.0, 3.0] {
            let p = Arc::new(precision_for(&d, s, None).unwrap());
            let e = ensemble(&p, 5, 400, EnsembleOptions { keep_samples: true, covariance: false });
            let g: f64 = e.samples.unwrap().iter().map(mean_squared_gradient).sum::<f64>() / 400.0;
            assert!(g < prev, "s={s}: {g} >= {prev}");
            prev = g;
        }
    }

    #[test]
    fn maxima_grow_with_the_domain() {
        let h = 1.0 / 16.0;
        let small = dom(Shape::interval(0.0, 0.5), h);
        let large = dom(Shape::interval(0.0, 1.0), h);
        let e_s = ensemble(&Arc::new(precision_for(&small, 1.5, None).unwrap()), 1, 4000, EnsembleOptions::default());
        let e_l = ensemble(&Arc::new(precision_for(&large, 1.5, None).unwrap()), 2, 4000, EnsembleOptions::default());
        let (a, b) = (stats::sorted(&e_s.maxima), stats::sorted(&e_l.maxima));
        // F_large(x) ≤ F_small(x) + 0.02 on a grid of thresholds
        for i in 0..200 {
            let x = -1.0 + 0.015 * i as f64;
            let fa = a.partition_point(|v| *v <= x) as f64 / a.len() as f64;
            let fb = b.partition_point(|v| *v <= x) as f64 / b.len() as f64;
            assert!(fa - fb >= -0.02, "x={x}: {fa} vs {fb}");
        }
    }
}
