use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty domain: no lattice point of spacing {h} lies inside the shape")]
    EmptyDomain { h: f64 },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("periodic box too small: need at least n = {required_n} sites per axis (have {n})")]
    BoxTooSmall { n: usize, required_n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "kernel matrix is not positive definite (s = {s}, quadrature nodes per axis = {nodes}); \
         increase the quadrature refinement q"
    )]
    NotPositiveDefinite { s: f64, nodes: usize },

    #[error("conjugate gradient did not converge in {iterations} iterations (last relative residual {last:e})")]
    CgNotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("norm divergent: homogeneous exponent {sigma} <= -d/2 with nonzero total mass")]
    NormDivergent { sigma: f64 },

    #[error("insufficient resolution: fine grid is only {ratio:.3}x finer than h (need >= {required})")]
    InsufficientResolution { ratio: f64, required: f64 },

    #[error("mollifier support leaves the box window at a target site; enlarge the box padding")]
    SupportOutsideBox,

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
