//! Eigen-decomposition of the restricted operator and the series
//! representation of the field.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fraclap::KernelMatrix;
use crate::grid::{GridFunction, LatticeDomain};
use crate::sampler::RngSpec;
use crate::stats;

/// Eigenpairs of `A` with eigenvectors orthonormal in `L²_h`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    domain: Arc<LatticeDomain>,
    eigenvalues: Vec<f64>,
    /// Column `j` holds `v_j`, scaled so that `h^d v_jᵀ v_k = δ_jk`.
    vectors: DMatrix<f64>,
}

pub fn decompose(a: &KernelMatrix) -> Result<SpectralDecomposition> {
    let n = a.len();
    let eig = SymmetricEigen::try_new(a.matrix().clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if eigenvalues.first().is_some_and(|&l| l <= 0.0) {
        return Err(Error::Eigen(format!("smallest eigenvalue {} is not positive", eigenvalues[0])));
    }
    let scale = a.domain().cell_volume().sqrt().recip();
    let vectors = DMatrix::from_fn(n, n, |r, c| {
        let col = order[c];
        // fix the sign so the largest entry of each vector is positive
        let v = eig.eigenvectors.column(col);
        let pivot = v.iamax();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        sign * scale * v[r]
    });
    Ok(SpectralDecomposition {
        domain: a.domain().clone(),
        eigenvalues,
        vectors,
    })
}

impl SpectralDecomposition {
    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.domain
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, j: usize) -> GridFunction {
        GridFunction::new(self.domain.clone(), self.vectors.column(j).iter().copied().collect())
            .expect("finite eigenvector")
    }

    /// `Σ_{j<modes} λ_j^{-1} v_j v_jᵀ`.
    pub fn series_covariance(&self, modes: usize) -> DMatrix<f64> {
        let n = self.len();
        let mut c = DMatrix::zeros(n, n);
        for j in 0..modes.min(n) {
            let v = self.vectors.column(j);
            c.ger(1.0 / self.eigenvalues[j], &v, &v, 1.0);
        }
        c
    }
}

/// `Σ_j X_j λ_j^{-1/2} v_j` with `X_j` the standard normals of `rng`.
pub fn series_sample(dec: &SpectralDecomposition, rng: RngSpec) -> GridFunction {
    let x = rng.normals(dec.len());
    let coef = DVector::from_iterator(dec.len(), x.iter().zip(&dec.eigenvalues).map(|(x, l)| x / l.sqrt()));
    let values = &dec.vectors * coef;
    GridFunction::new(dec.domain.clone(), values.as_slice().to_vec()).expect("finite sample")
}

/// Fraction of the spectrum used by [`weyl_fit`]: `(start, end)` as
/// fractions of the mode count, 1-based modes `j` with `start·n < j ≤ end·n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeylWindow {
    pub start: f64,
    pub end: f64,
}

impl Default for WeylWindow {
    fn default() -> Self {
        Self {
            start: 1.0 / 3.0,
            end: 2.0 / 3.0,
        }
    }
}

impl WeylWindow {
    pub fn modes(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        let lo = (self.start * n as f64).floor() as usize + 1;
        let hi = (self.end * n as f64).floor() as usize;
        lo..=hi
    }
}

/// Least-squares slope of `log λ_j` against `log j` over `window`.
pub fn weyl_fit(dec: &SpectralDecomposition, window: WeylWindow) -> Result<f64> {
    weyl_fit_values(&dec.eigenvalues, window)
}

pub fn weyl_fit_values(eigenvalues: &[f64], window: WeylWindow) -> Result<f64> {
    let n = eigenvalues.len();
    if n < 30 {
        return Err(Error::InvalidArgument(format!("Weyl fit needs at least 30 modes, got {n}")));
    }
    let range = window.modes(n);
    if range.end() <= range.start() || *range.end() > n {
        return Err(Error::InvalidArgument("Weyl window selects fewer than two modes".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = range
        .map(|j| ((j as f64).ln(), eigenvalues[j - 1].ln()))
        .unzip();
    Ok(stats::ls_slope(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fraclap::assemble_matrix;
    use crate::grid::{build_domain, Shape};
    use crate::sampler::{analytic_covariance, sample, PrecisionOperator};
    use std::f64::consts::PI;

    fn interval(h: f64) -> Arc<LatticeDomain> {
        Arc::new(build_domain(&Shape::interval(0.0, 1.0), h).unwrap())
    }

    /// Middle-third slope of the closed-form tridiagonal spectrum, computed
    /// independently of the library.
    fn tridiagonal_weyl(n: usize, power: i32) -> f64 {
        let h = 1.0 / (n + 1) as f64;
        let lo = n / 3 + 1;
        let hi = 2 * n / 3;
        let pts: Vec<(f64, f64)> = (lo..=hi)
            .map(|j| {
                let l = (2.0 - 2.0 * (j as f64 * PI * h).cos()) / (h * h);
                ((j as f64).ln(), power as f64 * l.ln())
            })
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        num / den
    }

    #[test]
    fn single_site_decomposition() {
        let a = assemble_matrix(&interval(0.5), 1.0, None).unwrap();
        let dec = decompose(&a).unwrap();
        assert!((dec.eigenvalues()[0] - 8.0).abs() < 1e-12);
        assert!((dec.vectors()[(0, 0)] - 2f64.sqrt()).abs() < 1e-14);
        let c = dec.series_covariance(1);
        assert!((c[(0, 0)] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn laplacian_spectrum_and_trace() {
        let n = 40;
        let h = 1.0 / (n + 1) as f64;
        let dom = interval(h);
        let a = assemble_matrix(&dom, 1.0, None).unwrap();
        let dec = decompose(&a).unwrap();
        for (j, l) in dec.eigenvalues().iter().enumerate() {
            let want = (2.0 - 2.0 * ((j + 1) as f64 * PI * h).cos()) / (h * h);
            assert!((l - want).abs() < 1e-9 * want);
        }
        for s in [0.5, 1.5] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let dec = decompose(&a).unwrap();
            let trace: f64 = dec.eigenvalues().iter().sum();
            let want = n as f64 * a.matrix()[(0, 0)];
            assert!((trace - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn eigenpairs_are_orthonormal_in_l2h() {
        let dom = Arc::new(build_domain(&Shape::unit_cube(2), 1.0 / 8.0).unwrap());
        let a = assemble_matrix(&dom, 0.7, None).unwrap();
        let dec = decompose(&a).unwrap();
        let hd = dom.cell_volume();
        let v = dec.vectors();
        let gram = v.transpose() * v * hd;
        assert!((gram - DMatrix::<f64>::identity(dom.len(), dom.len())).amax() < 1e-10);
        for j in 0..dom.len() {
            let vj = v.column(j);
            let r = (a.matrix() * vj - vj * dec.eigenvalues()[j]).norm() / vj.norm();
            assert!(r <= 1e-9 * dec.eigenvalues()[j]);
        }
        assert!(dec.eigenvalues()[0] > 0.0);
    }

    #[test]
    fn series_covariance_equals_precision_inverse() {
        let dom = Arc::new(build_domain(&Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }, 0.35).unwrap());
        for s in [0.4, 1.0, 2.2] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let dec = decompose(&a).unwrap();
            let c = analytic_covariance(&PrecisionOperator::new(&a));
            assert!((dec.series_covariance(dec.len()) - &c).amax() < 1e-8 * c.amax().max(1.0));
        }
    }

    #[test]
    fn series_sample_single_site_and_determinism() {
        let a = assemble_matrix(&interval(0.5), 1.0, None).unwrap();
        let dec = decompose(&a).unwrap();
        let rng = RngSpec::new(4, 9);
        let x = rng.normals(1)[0];
        let v = series_sample(&dec, rng).values()[0];
        assert!((v - x * 2f64.sqrt() / 8f64.sqrt()).abs() < 1e-15);
        // same stream, same field as the precision sampler for one site
        let p = PrecisionOperator::new(&a);
        assert!((sample(&p, rng).values()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn weyl_fit_matches_independent_slope() {
        let n = 100;
        let dom = interval(1.0 / (n + 1) as f64);
        let dec = decompose(&assemble_matrix(&dom, 1.0, None).unwrap()).unwrap();
        let fit = weyl_fit(&dec, WeylWindow::default()).unwrap();
        assert!((fit - tridiagonal_weyl(n, 1)).abs() < 1e-9);
        // the low third sits in the regime where the lattice resolves the modes
        let low = weyl_fit(&dec, WeylWindow { start: 0.0, end: 1.0 / 3.0 }).unwrap();
        assert!((low - 2.0).abs() < 0.05, "{low}");
        assert!(weyl_fit_values(&[1.0; 10], WeylWindow::default()).is_err());
    }

    #[test]
    fn restriction_breaks_the_semigroup() {
        let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.25).unwrap());
        assert_eq!(dom.len(), 3);
        let half = assemble_matrix(&dom, 0.5, None).unwrap();
        let one = assemble_matrix(&dom, 1.0, None).unwrap();
        let gap = (half.matrix() * half.matrix() - one.matrix()).norm();
        assert!(gap > 1e-3 * one.matrix().norm(), "gap {gap}");
    }
}
