//! Dirichlet problems for `(-Δ_h)^s` on `Ω_h`, discrete Sobolev norms on the
//! full lattice, and the mollified error functional.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{embed, BoxFunction, GridFunction, PeriodicBox};
use crate::fraclap::KernelMatrix;
use crate::mollify::{mollify_convolve_box, Mollifier};
use crate::spectral::{dft_forward, SymbolEvaluator};

/// Default relative residual tolerance for the iterative solver.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Default period-to-extent ratio when a lattice function is placed in a box.
pub const DEFAULT_PADDING: f64 = 4.0;

/// `(-Δ_h)^s u_h = g` on `Ω_h`, `u_h = 0` outside.
#[derive(Debug, Clone)]
pub struct DirichletProblem<'a> {
    pub matrix: &'a KernelMatrix,
    pub rhs: GridFunction,
}

impl<'a> DirichletProblem<'a> {
    pub fn new(matrix: &'a KernelMatrix, rhs: GridFunction) -> Result<Self> {
        if rhs.domain().as_ref() != matrix.domain().as_ref() {
            return Err(Error::DomainMismatch("right-hand side lives on a different domain".into()));
        }
        Ok(Self { matrix, rhs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMethod {
    Direct,
    /// Jacobi-preconditioned conjugate gradient with relative residual `tol`.
    Iterative { tol: f64 },
}

pub fn solve_dirichlet(p: &DirichletProblem<'_>, method: SolveMethod) -> Result<GridFunction> {
    let dom = p.matrix.domain().clone();
    let g = DVector::from_column_slice(p.rhs.values());
    let u = match method {
        SolveMethod::Direct => p.matrix.cholesky().solve(&g),
        SolveMethod::Iterative { tol } => {
            if !(tol > 0.0) {
                return Err(Error::InvalidArgument("CG tolerance must be positive".into()));
            }
            conjugate_gradient(p.matrix, &g, tol)?
        }
    };
    GridFunction::new(dom, u.as_slice().to_vec())
}

fn conjugate_gradient(a: &KernelMatrix, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let m = a.matrix();
    let n = b.len();
    let inv_diag = DVector::from_iterator(n, (0..n).map(|i| 1.0 / m[(i, i)]));
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let cap = 20 * n.max(1);
    let mut history = Vec::new();
    for _ in 0..cap {
        let ap = m * &p;
        let alpha = rz / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rel = r.norm() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(x);
        }
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * p;
        rz = rz_new;
    }
    Err(Error::CgNotConverged {
        iterations: cap,
        last: history.last().copied().unwrap_or(1.0),
        history,
    })
}

/// Exponent and quadrature settings for a discrete Sobolev norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRequest {
    pub sigma: f64,
    /// `Ḣ^σ_h` (symbol `M_h^{2σ}`) when true, `H^σ_h` (`(1 + M_h²)^σ`) otherwise.
    pub homogeneous: bool,
    /// Frequency oversampling factor `Q ≥ 1`.
    pub oversampling: usize,
}

impl NormRequest {
    /// Homogeneous norm with the default oversampling: 1 when `σ` is an
    /// integer (the integrand is then a trigonometric polynomial), 8 otherwise.
    pub fn homogeneous(sigma: f64) -> Self {
        Self {
            sigma,
            homogeneous: true,
            oversampling: default_oversampling(sigma),
        }
    }

    pub fn inhomogeneous(sigma: f64) -> Self {
        Self {
            sigma,
            homogeneous: false,
            oversampling: default_oversampling(sigma),
        }
    }

    pub fn with_oversampling(mut self, q: usize) -> Self {
        self.oversampling = q;
        self
    }
}

pub fn default_oversampling(sigma: f64) -> usize {
    if sigma.fract() == 0.0 {
        1
    } else {
        8
    }
}

/// `‖u‖_{Ḣ^σ_h(hZ^d)}` (or `H^σ_h`) of the zero extension of `u`.
///
/// The function is placed in a box with period at least four times its
/// extent and the frequency integral is evaluated by the trapezoid rule on
/// `Q`-times oversampled box frequencies. Negative homogeneous exponents drop
/// the `ξ = 0` node.
pub fn sobolev_norm_full_lattice(u: &GridFunction, req: NormRequest) -> Result<f64> {
    let bx = PeriodicBox::enclosing(u.domain(), DEFAULT_PADDING)?;
    sobolev_norm_box(&embed(u, &bx)?, req)
}

/// As [`sobolev_norm_full_lattice`] for a box function that vanishes near the
/// window edges (it is zero-padded by `Q` before transforming).
pub fn sobolev_norm_box(u: &BoxFunction, req: NormRequest) -> Result<f64> {
    if req.oversampling == 0 {
        return Err(Error::InvalidArgument("oversampling must be >= 1".into()));
    }
    let d = u.box_().dim();
    if req.homogeneous && req.sigma <= -0.5 * d as f64 {
        let mass: f64 = u.values().iter().sum();
        let scale: f64 = u.values().iter().map(|v| v.abs()).sum();
        if mass.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NormDivergent { sigma: req.sigma });
        }
    }
    let padded = u.zero_padded(req.oversampling)?;
    let spec = dft_forward(&padded);
    let sym = SymbolEvaluator::new(d, padded.box_().h());
    let mut xi = vec![0.0; d];
    let mut total = 0.0;
    for (idx, amp) in spec.amplitudes().iter().enumerate() {
        spec.frequency(idx, &mut xi);
        let m2 = sym.mh_squared(&xi);
        let weight = if req.homogeneous {
            if m2 == 0.0 {
                if req.sigma == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                m2.powf(req.sigma)
            }
        } else {
            (1.0 + m2).powf(req.sigma)
        };
        total += weight * amp.norm_sqr();
    }
    let volume = padded.box_().period().powi(d as i32);
    Ok((total / volume).max(0.0).sqrt())
}

/// `sqrt(h^d fᵀ A^{-1} f)`, the dual norm `‖f‖_{Ḣ^{-s}_h(Ω_h)}`.
pub fn dual_norm_restricted(f: &GridFunction, a: &KernelMatrix) -> Result<f64> {
    if f.domain().as_ref() != a.domain().as_ref() {
        return Err(Error::DomainMismatch("dual norm: f and A live on different domains".into()));
    }
    let fv = DVector::from_column_slice(f.values());
    let x = a.cholesky().solve(&fv);
    Ok((f.domain().cell_volume() * fv.dot(&x)).max(0.0).sqrt())
}

/// `h^d uᵀ A u = ‖u‖²_{Ḣ^s_h}` for `u` supported in `Ω_h`.
pub fn energy_norm_sq(u: &GridFunction, a: &KernelMatrix) -> Result<f64> {
    if u.domain().as_ref() != a.domain().as_ref() {
        return Err(Error::DomainMismatch("energy norm: u and A live on different domains".into()));
    }
    let uv = DVector::from_column_slice(u.values());
    Ok(u.domain().cell_volume() * uv.dot(&(a.matrix() * &uv)))
}

/// `‖θ_h * u - u_h‖_{Ḣ^s_h(hZ^d)}`.
///
/// `u_ref` samples `u` on a fine box whose spacing divides `h` with ratio
/// at least 8 and whose lattice contains `hZ^d`; `θ_h * u` is evaluated at
/// every coarse box site and `u_h` is zero-extended.
pub fn error_functional(
    u_ref: &BoxFunction,
    u_h: &GridFunction,
    theta: &Mollifier,
    s: f64,
    oversampling: Option<usize>,
) -> Result<f64> {
    let h = u_h.domain().h();
    let coarse = coarse_box_for(u_ref.box_(), h)?;
    let smooth = mollify_convolve_box(u_ref, theta, &coarse)?;
    let discrete = embed(u_h, &coarse)?;
    let diff: Vec<f64> = smooth.values().iter().zip(discrete.values()).map(|(a, b)| a - b).collect();
    let diff = BoxFunction::new(coarse, diff)?;
    let mut req = NormRequest::homogeneous(s);
    if let Some(q) = oversampling {
        req.oversampling = q;
    }
    sobolev_norm_box(&diff, req)
}

/// The coarse box of spacing `h` sharing the window of `fine`.
pub fn coarse_box_for(fine: &PeriodicBox, h: f64) -> Result<PeriodicBox> {
    let ratio_f = h / fine.h();
    let ratio = ratio_f.round();
    if (ratio_f - ratio).abs() > 1e-9 * ratio_f || ratio < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fine spacing {} does not divide h = {h}",
            fine.h()
        )));
    }
    if ratio < crate::mollify::MIN_REFINEMENT {
        return Err(Error::InsufficientResolution {
            ratio,
            required: crate::mollify::MIN_REFINEMENT,
        });
    }
    let coarse = fine.coarsened(ratio as usize)?;
    // keep the exact h of the lattice domain to make embedding checks strict
    PeriodicBox::new(coarse.dim(), h, coarse.n(), coarse.origin().to_vec())
}

/// `u_h` on `Ω_h` for the right-hand side `g`, and the Galerkin quantities
/// `h^d u_hᵀ g` and `h^d u_hᵀ A u_h`.
pub fn galerkin_check(a: &KernelMatrix, g: &GridFunction) -> Result<(GridFunction, f64, f64)> {
    let u = solve_dirichlet(&DirichletProblem::new(a, g.clone())?, SolveMethod::Direct)?;
    let hd = g.domain().cell_volume();
    let pairing = hd * u.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>();
    Ok((u.clone(), pairing, energy_norm_sq(&u, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fraclap::assemble_matrix;
    use crate::grid::{build_domain, l2h_inner, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::grid::LatticeDomain;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn interval(h: f64) -> Arc<LatticeDomain> {
        Arc::new(build_domain(&Shape::interval(0.0, 1.0), h).unwrap())
    }

    fn delta_at_origin(h: f64) -> GridFunction {
        let dom = Arc::new(build_domain(&Shape::interval(-h * 0.5, h * 0.5), h).unwrap());
        GridFunction::new(dom, vec![1.0]).unwrap()
    }

    #[test]
    fn laplacian_solve_is_exact_on_quadratics() {
        let dom = interval(1.0 / 16.0);
        let a = assemble_matrix(&dom, 1.0, None).unwrap();
        let g = GridFunction::new(dom.clone(), vec![1.0; dom.len()]).unwrap();
        let p = DirichletProblem::new(&a, g).unwrap();
        for method in [SolveMethod::Direct, SolveMethod::Iterative { tol: 1e-12 }] {
            let u = solve_dirichlet(&p, method).unwrap();
            for (i, v) in u.values().iter().enumerate() {
                let x = dom.coord(i)[0];
                assert!((v - x * (1.0 - x) / 2.0).abs() < 1e-12, "{method:?} x={x}");
            }
        }
    }

    #[test]
    fn single_site_and_zero_solves() {
        let dom = interval(0.5);
        let a = assemble_matrix(&dom, 1.0, None).unwrap();
        let u = solve_dirichlet(
            &DirichletProblem::new(&a, GridFunction::new(dom.clone(), vec![1.0]).unwrap()).unwrap(),
            SolveMethod::Direct,
        )
        .unwrap();
        assert!((u.values()[0] - 0.125).abs() < 1e-14);
        let z = GridFunction::zeros(dom.clone());
        for method in [SolveMethod::Direct, SolveMethod::Iterative { tol: 1e-10 }] {
            let u = solve_dirichlet(&DirichletProblem::new(&a, z.clone()).unwrap(), method).unwrap();
            assert!(u.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn direct_residual_and_solver_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dom = Arc::new(build_domain(&Shape::unit_cube(2), 1.0 / 9.0).unwrap());
        for s in [0.5, 1.3, 2.0] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let g: Vec<f64> = (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = GridFunction::new(dom.clone(), g).unwrap();
            let p = DirichletProblem::new(&a, g.clone()).unwrap();
            let ud = solve_dirichlet(&p, SolveMethod::Direct).unwrap();
            let ui = solve_dirichlet(&p, SolveMethod::Iterative { tol: 1e-12 }).unwrap();
            let uv = DVector::from_column_slice(ud.values());
            let gv = DVector::from_column_slice(g.values());
            assert!((a.matrix() * &uv - &gv).norm() <= 1e-10 * gv.norm());
            let diff = (DVector::from_column_slice(ui.values()) - &uv).norm();
            assert!(diff <= 1e-8 * uv.norm(), "s={s}: {diff}");
        }
    }

    #[test]
    fn cg_reports_history_when_capped() {
        let dom = Arc::new(build_domain(&Shape::unit_cube(2), 1.0 / 12.0).unwrap());
        let a = assemble_matrix(&dom, 3.0, None).unwrap();
        let g = GridFunction::new(dom.clone(), (0..dom.len()).map(|i| (i as f64).sin()).collect()).unwrap();
        let err = solve_dirichlet(&DirichletProblem::new(&a, g).unwrap(), SolveMethod::Iterative { tol: 1e-300 })
            .unwrap_err();
        match err {
            Error::CgNotConverged { iterations, history, .. } => {
                assert_eq!(iterations, 20 * dom.len());
                assert_eq!(history.len(), iterations);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let delta = delta_at_origin(1.0);
        let n1 = sobolev_norm_full_lattice(&delta, NormRequest::homogeneous(1.0)).unwrap();
        assert!((n1 * n1 - 2.0).abs() < 1e-12, "{n1}");
        let nh = sobolev_norm_full_lattice(&delta, NormRequest::homogeneous(0.5)).unwrap();
        // the kink of |ξ| at 0 limits the trapezoid rule to O(dξ²)
        assert!((nh * nh - 4.0 / PI).abs() < 1e-3, "{nh}");
        // oversampling converges to the closed form
        let nh = sobolev_norm_full_lattice(&delta, NormRequest::homogeneous(0.5).with_oversampling(512)).unwrap();
        assert!((nh * nh - 4.0 / PI).abs() < 1e-7, "{nh}");

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dom = Arc::new(build_domain(&Shape::unit_cube(2), 0.1).unwrap());
        let u = GridFunction::new(dom.clone(), (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let n0 = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(0.0)).unwrap();
        assert!((n0 - l2h_inner(&u, &u).unwrap().sqrt()).abs() < 1e-10);
        let z = GridFunction::zeros(dom);
        assert_eq!(sobolev_norm_full_lattice(&z, NormRequest::homogeneous(1.7)).unwrap(), 0.0);
    }

    #[test]
    fn integer_sobolev_norm_matches_energy_and_doubling_q_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dom = interval(1.0 / 20.0);
        let u = GridFunction::new(dom.clone(), (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        for s in [1.0, 2.0] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let e = energy_norm_sq(&u, &a).unwrap();
            let n = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(s)).unwrap();
            assert!((n * n - e).abs() < 1e-10 * e);
        }
        for s in [0.3, 0.75, 1.25] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let e = energy_norm_sq(&u, &a).unwrap();
            let n8 = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(s)).unwrap();
            let n16 = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(s).with_oversampling(16)).unwrap();
            assert!((n8 - n16).abs() <= 1e-3 * n16);
            assert!((n16 * n16 - e).abs() < 1e-3 * e, "s={s}: {} vs {e}", n16 * n16);
        }
    }

    #[test]
    fn inhomogeneous_norm_dominates_and_negative_mass_check() {
        let dom = interval(0.1);
        let u = GridFunction::new(dom.clone(), vec![1.0; dom.len()]).unwrap();
        let hom = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(1.0)).unwrap();
        let inh = sobolev_norm_full_lattice(&u, NormRequest::inhomogeneous(1.0)).unwrap();
        let l2 = l2h_inner(&u, &u).unwrap();
        assert!((inh * inh - (hom * hom + l2)).abs() < 1e-10);
        assert!(matches!(
            sobolev_norm_full_lattice(&u, NormRequest::homogeneous(-0.5)),
            Err(Error::NormDivergent { .. })
        ));
        // zero-mean data has a finite negative norm
        let vals: Vec<f64> = (0..dom.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut vals = vals;
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter_mut().for_each(|v| *v -= mean);
        let w = GridFunction::new(dom, vals).unwrap();
        assert!(sobolev_norm_full_lattice(&w, NormRequest::homogeneous(-0.75)).unwrap() > 0.0);
    }

    #[test]
    fn dual_norm_examples_and_galerkin_identity() {
        let dom = interval(0.5);
        let a = assemble_matrix(&dom, 1.0, None).unwrap();
        let f = GridFunction::new(dom.clone(), vec![1.0]).unwrap();
        assert!((dual_norm_restricted(&f, &a).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(dual_norm_restricted(&GridFunction::zeros(dom), &a).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dom = Arc::new(build_domain(&Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }, 0.2).unwrap());
        for s in [0.5, 1.0, 1.6] {
            let a = assemble_matrix(&dom, s, None).unwrap();
            let g = GridFunction::new(dom.clone(), (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let (u, pairing, energy) = galerkin_check(&a, &g).unwrap();
            let dual = dual_norm_restricted(&g, &a).unwrap();
            assert!((pairing - energy).abs() <= 1e-9 * energy);
            assert!((dual * dual - energy).abs() <= 1e-9 * energy);
            // energy of the solve also matches the full-lattice norm
            let n = sobolev_norm_full_lattice(&u, NormRequest::homogeneous(s).with_oversampling(16)).unwrap();
            assert!((n * n - energy).abs() <= 2e-3 * energy, "s={s}");
        }
    }

    #[test]
    fn full_lattice_norm_is_h_consistent() {
        let u = |x: f64| if x > 0.2 && x < 0.8 { ((x - 0.2) * (0.8 - x) / 0.09).powi(4) } else { 0.0 };
        let mut prev: Option<f64> = None;
        let mut prev_diff = f64::INFINITY;
        for &h in &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
            let dom = interval(h);
            let g = GridFunction::from_fn(dom, |x| u(x[0])).unwrap();
            let n = sobolev_norm_full_lattice(&g, NormRequest::homogeneous(0.75)).unwrap();
            if let Some(p) = prev {
                let diff = (n - p).abs();
                assert!(diff < prev_diff);
                prev_diff = diff;
            }
            prev = Some(n);
        }
        assert!(prev_diff < 1e-2 * prev.unwrap(), "{prev_diff} {prev:?}");
    }

    #[test]
    fn error_functional_reductions() {
        let h = 1.0 / 16.0;
        let fine = PeriodicBox::new(1, h / 16.0, 1024, vec![-256]).unwrap();
        let u = |x: f64| if x > 0.0 && x < 1.0 { (4.0 * x * (1.0 - x)).powi(6) } else { 0.0 };
        let u_ref = BoxFunction::from_fn(fine.clone(), |x| u(x[0]));
        let dom = interval(h);
        let theta = Mollifier::smooth_bump(1, h);

        // u ≡ 0 and u_h = 0
        let zero = BoxFunction::zeros(fine.clone());
        let zh = GridFunction::zeros(dom.clone());
        assert_eq!(error_functional(&zero, &zh, &theta, 1.0, None).unwrap(), 0.0);

        // σ = 0: plain L²_h distance between θ_h*u on the lattice and u_h
        let uh = GridFunction::from_fn(dom.clone(), |x| u(x[0])).unwrap();
        let e0 = error_functional(&u_ref, &uh, &theta, 0.0, None).unwrap();
        let coarse = coarse_box_for(&fine, h).unwrap();
        let sm = mollify_convolve_box(&u_ref, &theta, &coarse).unwrap();
        let direct: f64 = coarse
            .coords()
            .iter()
            .zip(sm.values())
            .map(|(x, v)| {
                let w = if x[0] > 0.0 && x[0] < 1.0 - 1e-12 { u(x[0]) } else { 0.0 };
                (v - w).powi(2)
            })
            .sum::<f64>()
            * h;
        assert!((e0 - direct.sqrt()).abs() < 1e-12);
        // and that distance is the O(h²) mollification bias
        assert!(e0 < 2e-2);

        let coarse_ref = BoxFunction::zeros(PeriodicBox::new(1, h / 4.0, 256, vec![-64]).unwrap());
        assert!(matches!(
            error_functional(&coarse_ref, &zh, &theta, 1.0, None),
            Err(Error::InsufficientResolution { .. })
        ));
    }
}
