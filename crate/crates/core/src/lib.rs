//! Fourier-multiplier finite differences for the fractional (polyharmonic)
//! Laplacian on lattice domains with zero exterior values, exact sampling of
//! the associated discrete fractional Gaussian fields, and the experiment
//! drivers used to check their convergence behaviour.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: lattice domains, grid functions, periodic boxes.
//! * [`spectral`]: the discrete symbol, box Fourier transforms, Poisson folding.
//! * [`fraclap`]: kernel tables, restricted kernel matrices, box multipliers.
//! * [`solver`]: Dirichlet solves, discrete Sobolev norms, error functional.
//! * [`mollify`]: B-splines, smooth bumps, lattice convolution, interpolation.
//! * [`sampler`]: precision factorisation, exact sampling, ensembles.
//! * [`eigen`]: spectral decomposition, series sampler, Weyl fits.
//! * [`experiments`] and [`config`]: the batch experiment driver behind the CLI.

pub mod config;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod fraclap;
pub mod grid;
pub mod mollify;
pub mod sampler;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

/// Runs `f` inside a dedicated rayon pool with `threads` workers.
///
/// Every parallel code path in the crate is written so that its output does
/// not depend on the worker count; this helper exists so callers (and the
/// determinism tests) can pin it anyway.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("failed to build rayon thread pool");
    pool.install(f)
}
