//! Batch experiments behind the command-line driver.
//!
//! Every `run_*` function is a pure function of its [`ExperimentConfig`]: it
//! returns the bytes of each output file plus a short text report, and the
//! caller decides where to write them. Parallel sections never change the
//! bytes produced.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use image::{codecs::png::PngEncoder, ImageEncoder};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, TestFunction};
use crate::eigen::{decompose, weyl_fit, WeylWindow};
use crate::error::{Error, Result};
use crate::fraclap::{apply_continuous_reference, assemble_matrix, commute_check, kernel_entry, COMMUTE_TEST_WIDTH};
use crate::grid::{build_domain, BoxFunction, GridFunction, LatticeDomain, PeriodicBox, Shape};
use crate::mollify::{bspline_1d, mollify_convolve, Mollifier};
use crate::sampler::{
    analytic_covariance, ensemble, lag_one_autocorrelation, max_statistic, mean_squared_gradient, sample,
    EnsembleOptions, PrecisionOperator, RngSpec, MAX_QUANTILES,
};
use crate::solver::{
    dual_norm_restricted, energy_norm_sq, error_functional, solve_dirichlet, DirichletProblem, SolveMethod,
};
use crate::spectral::{poisson_fold_check, GaussianPair};
use crate::stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files and report produced by one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    /// `(file name, contents)` in a fixed order.
    pub files: Vec<(String, Vec<u8>)>,
    pub report: String,
    /// False when a self-test check failed.
    pub passed: bool,
    pub warnings: Vec<String>,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

/// CSV writer: a version/config-hash comment line, a header row, then rows.
struct Csv {
    text: String,
}

impl Csv {
    fn new(hash: &str, header: &[&str]) -> Self {
        let short = &hash[..hash.len().min(16)];
        Self {
            text: format!("# fracfield {VERSION} config={short}\n{}\n", header.join(",")),
        }
    }

    fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

enum Cell {
    Num(f64),
    Int(u64),
    Opt(Option<f64>),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Opt(x) => x.map(num).unwrap_or_default(),
            Cell::Text(t) => t.clone(),
        }
    }
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    match cfg.kind {
        ExperimentKind::Converge => run_converge(cfg, hash),
        ExperimentKind::Variance => run_variance(cfg, hash),
        ExperimentKind::Sample => run_sample(cfg, hash),
        ExperimentKind::Maxstat => run_maxstat(cfg, hash),
        ExperimentKind::Spectrum => run_spectrum(cfg, hash),
        ExperimentKind::Selftest => run_selftest(cfg, hash),
    }
}

// ---------------------------------------------------------------- converge

/// Smooth compactly supported test function `Π_a (1 - ((x_a - c_a)/r)²)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub power: i32,
}

impl PolyBump {
    /// Bump centred in the bounding box of `shape`, small enough that its
    /// support cube fits inside the inscribed ball of the box.
    pub fn inside(shape: &Shape) -> Result<Self> {
        let (lo, hi) = shape.bounds();
        let d = lo.len() as f64;
        let half = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min);
        Ok(Self {
            center: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            radius: 0.75 * half / d.sqrt(),
            power: 8,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(&xa, &c)| {
                let t = (xa - c) / self.radius;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - t * t).powi(self.power)
                }
            })
            .product()
    }
}

#[derive(Debug, Clone)]
pub struct ConvergeParams {
    pub shape: Shape,
    pub s: f64,
    pub h_list: Vec<f64>,
    pub bspline_order: usize,
    pub period: f64,
    pub fine_ratio: usize,
    pub oversampling: Option<usize>,
    pub quadrature: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeResult {
    pub h: Vec<f64>,
    pub error: Vec<f64>,
    /// Order between consecutive rows (`None` for the first).
    pub pair_order: Vec<Option<f64>>,
    pub fitted_order: Option<f64>,
}

/// Box of spacing `h`, period close to `period`, window centred on `center`.
fn centred_box(h: f64, period: f64, center: &[f64]) -> Result<PeriodicBox> {
    let mut n = (period / h).round().max(2.0) as usize;
    n += n % 2;
    let origin = center.iter().map(|c| (c / h).round() as i64 - (n as i64) / 2).collect();
    PeriodicBox::new(center.len(), h, n, origin)
}

/// Fine box shared by every `h` in `h_list` (each `h` is a multiple of its
/// spacing, which is `min(h) / fine_ratio`).
fn fine_box(shape: &Shape, h_list: &[f64], fine_ratio: usize, period: f64) -> Result<PeriodicBox> {
    let (lo, hi) = shape.bounds();
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let h_max = h_list[0];
    let h_min = h_list[h_list.len() - 1];
    let ratio = h_max / h_min;
    let ratio_int = ratio.round();
    if (ratio - ratio_int).abs() > 1e-9 * ratio || h_list.iter().any(|h| ((h / h_min) - (h / h_min).round()).abs() > 1e-9 * h / h_min) {
        return Err(Error::Config("every h must be an integer multiple of the smallest".into()));
    }
    let coarse = centred_box(h_max, period, &center)?;
    coarse.refined(ratio_int as usize * fine_ratio)
}

/// `‖θ_h * u - u_h‖_{Ḣ^s_h}` for a manufactured `u` over a list of `h`.
pub fn converge_study(p: &ConvergeParams) -> Result<ConvergeResult> {
    let dim = p.shape.dim()?;
    let u = PolyBump::inside(&p.shape)?;
    let fine = fine_box(&p.shape, &p.h_list, p.fine_ratio, p.period)?;
    let u_fine = BoxFunction::from_fn(fine.clone(), |x| u.eval(x));
    if fine
        .coords()
        .iter()
        .zip(u_fine.values())
        .any(|(x, v)| *v != 0.0 && !p.shape.contains(x, 0.0))
    {
        return Err(Error::Config("manufactured solution is not supported inside the domain".into()));
    }
    let f_fine = apply_continuous_reference(&u_fine, p.s);
    let mut error = Vec::new();
    for &h in &p.h_list {
        let dom = Arc::new(build_domain(&p.shape, h)?);
        let a = assemble_matrix(&dom, p.s, p.quadrature)?;
        let big = Mollifier::bspline(p.bspline_order, dim, h)?;
        let g = mollify_convolve(&f_fine, &big, &dom)?;
        let u_h = solve_dirichlet(&DirichletProblem::new(&a, g)?, SolveMethod::Direct)?;
        let theta = Mollifier::smooth_bump(dim, h);
        error.push(error_functional(&u_fine, &u_h, &theta, p.s, p.oversampling)?);
    }
    let pair_order = std::iter::once(None)
        .chain(
            p.h_list
                .windows(2)
                .zip(error.windows(2))
                .map(|(h, e)| Some((e[1] / e[0]).ln() / (h[1] / h[0]).ln())),
        )
        .collect();
    let fitted_order = (p.h_list.len() >= 2).then(|| stats::convergence_order(&p.h_list, &error));
    Ok(ConvergeResult {
        h: p.h_list.clone(),
        error,
        pair_order,
        fitted_order,
    })
}

pub fn run_converge(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let mut csv = Csv::new(hash, &["s", "h", "error", "pair_order", "fitted_order"]);
    let mut report = String::new();
    for &s in &cfg.s {
        let r = converge_study(&ConvergeParams {
            shape: cfg.domain.clone(),
            s,
            h_list: cfg.h.clone(),
            bspline_order: cfg.k,
            period: cfg.period,
            fine_ratio: cfg.fine_ratio,
            oversampling: cfg.oversampling,
            quadrature: cfg.quadrature,
        })?;
        for i in 0..r.h.len() {
            csv.row(&[
                Cell::Num(s),
                Cell::Num(r.h[i]),
                Cell::Num(r.error[i]),
                Cell::Opt(r.pair_order[i]),
                Cell::Opt(r.fitted_order),
            ]);
        }
        match r.fitted_order {
            Some(o) => writeln!(report, "s = {s}: fitted order {o:.4}").unwrap(),
            None => writeln!(report, "s = {s}: single h, error {:.6e}", r.error[0]).unwrap(),
        }
    }
    Ok(ExperimentOutput {
        files: vec![("converge.csv".into(), csv.into_bytes())],
        report,
        passed: true,
        warnings: vec![],
    })
}

// ---------------------------------------------------------------- variance

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub h: Vec<f64>,
    /// `V(h) = ‖Θ_h * f‖²_{Ḣ^{-s}_h(Ω_h)}`.
    pub v: Vec<f64>,
    /// `|V(h_i) - V(h_{i-1})|`.
    pub cauchy: Vec<Option<f64>>,
    /// Richardson reference from the three finest values.
    pub v_ref: f64,
    /// Estimated order used by the extrapolation.
    pub order: Option<f64>,
    /// Monte Carlo `(variance, standard error)` per `h` when requested.
    pub monte_carlo: Vec<Option<(f64, f64)>>,
}

/// Right-hand sides `Θ_h * f` on `Ω_h`.
fn mollified_test_function(
    shape: &Shape,
    h_list: &[f64],
    k: usize,
    f: TestFunction,
    fine_ratio: usize,
) -> Result<Vec<GridFunction>> {
    let (lo, hi) = shape.bounds();
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let fine = fine_box(shape, h_list, fine_ratio, 2.0 * extent + 2.0 * h_list[0] * k as f64)?;
    let bump = PolyBump::inside(shape)?;
    let f_fine = BoxFunction::from_fn(fine, |x| match f {
        TestFunction::Bump => bump.eval(x),
        TestFunction::One => 1.0,
        TestFunction::Zero => 0.0,
    });
    h_list
        .iter()
        .map(|&h| {
            let dom = Arc::new(build_domain(shape, h)?);
            mollify_convolve(&f_fine, &Mollifier::bspline(k, dom.dim(), h)?, &dom)
        })
        .collect()
}

/// Richardson extrapolation from the last three values of a sequence at
/// geometrically refined `h`. Returns `(reference, order)`.
pub fn richardson(h: &[f64], v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len();
    if n < 2 {
        return (v[n - 1], None);
    }
    let r = h[n - 2] / h[n - 1];
    let d2 = v[n - 1] - v[n - 2];
    let p = if n >= 3 {
        let d1 = v[n - 2] - v[n - 3];
        if d2 == 0.0 || d1 == 0.0 {
            return (v[n - 1], None);
        }
        (d1 / d2).abs().ln() / r.ln()
    } else {
        2.0
    };
    (v[n - 1] + d2 / (r.powf(p) - 1.0), Some(p))
}

pub fn variance_study(
    shape: &Shape,
    s: f64,
    h_list: &[f64],
    k: usize,
    f: TestFunction,
    quadrature: Option<usize>,
    replicas: usize,
    seed: u64,
) -> Result<VarianceResult> {
    let rhs = mollified_test_function(shape, h_list, k, f, 8)?;
    let mut v = Vec::new();
    let mut monte_carlo = Vec::new();
    for (level, g) in rhs.iter().enumerate() {
        let a = assemble_matrix(g.domain(), s, quadrature)?;
        let dual = dual_norm_restricted(g, &a)?;
        v.push(dual * dual);
        if replicas > 1 {
            // (I_h φ_h, f) = (φ_h, Θ_h * f)_{L²_h} because Θ is even
            let p = PrecisionOperator::new(&a);
            let level_seed = derived_seed(seed, level as u64);
            let hd = g.domain().cell_volume();
            let x: Vec<f64> = (0..replicas)
                .into_par_iter()
                .map(|i| {
                    let phi = p.sample_values(RngSpec::new(level_seed, i as u64));
                    hd * phi.iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let m2: Vec<f64> = x.iter().map(|x| x * x).collect();
            let var = stats::mean(&m2);
            let se = (stats::variance(&m2) / replicas as f64).sqrt();
            monte_carlo.push(Some((var, se)));
        } else {
            monte_carlo.push(None);
        }
    }
    let cauchy = std::iter::once(None)
        .chain(v.windows(2).map(|w| Some((w[1] - w[0]).abs())))
        .collect();
    let (v_ref, order) = richardson(h_list, &v);
    Ok(VarianceResult {
        h: h_list.to_vec(),
        v,
        cauchy,
        v_ref,
        order,
        monte_carlo,
    })
}

/// Seed for an independent sub-experiment (`splitmix64` of `seed + index`).
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_variance(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let mut csv = Csv::new(hash, &["s", "h", "v", "cauchy_diff", "ref_diff", "v_ref", "mc_variance", "mc_stderr"]);
    let mut report = String::new();
    for (i, &s) in cfg.s.iter().enumerate() {
        let r = variance_study(
            &cfg.domain,
            s,
            &cfg.h,
            cfg.k,
            cfg.test_function,
            cfg.quadrature,
            cfg.replicas,
            derived_seed(cfg.seed, i as u64),
        )?;
        for j in 0..r.h.len() {
            let mc = r.monte_carlo[j];
            csv.row(&[
                Cell::Num(s),
                Cell::Num(r.h[j]),
                Cell::Num(r.v[j]),
                Cell::Opt(r.cauchy[j]),
                Cell::Num((r.v[j] - r.v_ref).abs()),
                Cell::Num(r.v_ref),
                Cell::Opt(mc.map(|m| m.0)),
                Cell::Opt(mc.map(|m| m.1)),
            ]);
        }
        writeln!(
            report,
            "s = {s}: V_ref = {:.15e} (order {})",
            r.v_ref,
            r.order.map_or("n/a".to_string(), |p| format!("{p:.4}"))
        )
        .unwrap();
    }
    Ok(ExperimentOutput {
        files: vec![("variance.csv".into(), csv.into_bytes())],
        report,
        passed: true,
        warnings: vec![],
    })
}

// ---------------------------------------------------------------- sample

/// Grayscale PNG of a 2-d field on its bounding box (zero exterior),
/// bilinearly interpolated by `scale` pixels per lattice spacing.
pub fn heightmap_png(phi: &GridFunction, scale: usize) -> Result<Vec<u8>> {
    let dom = phi.domain();
    if dom.dim() != 2 {
        return Err(Error::InvalidArgument("heightmaps need d = 2".into()));
    }
    let (lo, hi) = dom.bounding_box();
    // one ring of exterior zeros around the bounding box
    let (nx, ny) = ((hi[0] - lo[0] + 3) as usize, (hi[1] - lo[1] + 3) as usize);
    let mut grid = vec![0.0; nx * ny];
    for (m, v) in dom.sites().zip(phi.values()) {
        grid[(m[0] - lo[0] + 1) as usize * ny + (m[1] - lo[1] + 1) as usize] = *v;
    }
    let min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let scale = scale.max(1);
    let (w, hgt) = ((ny - 1) * scale + 1, (nx - 1) * scale + 1);
    let mut pixels = vec![0u8; w * hgt];
    for py in 0..hgt {
        for px in 0..w {
            let (fx, fy) = (py as f64 / scale as f64, px as f64 / scale as f64);
            let (i, j) = ((fx as usize).min(nx - 2), (fy as usize).min(ny - 2));
            let (tx, ty) = (fx - i as f64, fy - j as f64);
            let at = |a: usize, b: usize| grid[a * ny + b];
            let v = at(i, j) * (1.0 - tx) * (1.0 - ty)
                + at(i + 1, j) * tx * (1.0 - ty)
                + at(i, j + 1) * (1.0 - tx) * ty
                + at(i + 1, j + 1) * tx * ty;
            // first axis runs up the image
            pixels[(hgt - 1 - py) * w + px] = (255.0 * (v - min) / span).round() as u8;
        }
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&pixels, w as u32, hgt as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(out)
}

fn tag(x: f64) -> String {
    format!("{x}").replace('.', "p")
}

pub fn run_sample(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let mut csv = Csv::new(
        hash,
        &["s", "h", "replica", "sites", "mean_sq_gradient", "lag1_autocorrelation", "max", "min"],
    );
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut report = String::new();
    for (hi, &h) in cfg.h.iter().enumerate() {
        let dom = Arc::new(build_domain(&cfg.domain, h)?);
        for &s in &cfg.s {
            let p = PrecisionOperator::new(&assemble_matrix(&dom, s, cfg.quadrature)?);
            if let Some(w) = p.conditioning_warning() {
                warnings.push(w);
            }
            let mut grad = 0.0;
            for r in 0..cfg.replicas {
                // matched seeds: replica r uses the same stream for every s
                let phi = sample(&p, RngSpec::new(derived_seed(cfg.seed, hi as u64), r as u64));
                let (mx, mn) = phi
                    .values()
                    .iter()
                    .fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), v| (a.max(*v), b.min(*v)));
                let g = mean_squared_gradient(&phi);
                grad += g / cfg.replicas as f64;
                csv.row(&[
                    Cell::Num(s),
                    Cell::Num(h),
                    Cell::Int(r as u64),
                    Cell::Int(dom.len() as u64),
                    Cell::Num(g),
                    Cell::Num(lag_one_autocorrelation(&phi)),
                    Cell::Num(mx),
                    Cell::Num(mn),
                ]);
                let stem = format!("sample_s{}_h{}_r{r}", tag(s), hi);
                let mut dump = Vec::new();
                phi.write_text(&mut dump)?;
                files.push((format!("{stem}.txt"), dump));
                if cfg.heightmap && dom.dim() == 2 {
                    files.push((format!("{stem}.png"), heightmap_png(&phi, cfg.heightmap_scale)?));
                }
            }
            writeln!(report, "h = {h}, s = {s}: {} sites, mean squared gradient {grad:.6e}", dom.len()).unwrap();
        }
    }
    files.insert(0, ("sample.csv".into(), csv.into_bytes()));
    Ok(ExperimentOutput {
        files,
        report,
        passed: true,
        warnings,
    })
}

// ---------------------------------------------------------------- maxstat

#[derive(Debug, Clone, PartialEq)]
pub struct MaxLevel {
    pub h: f64,
    pub sorted: Vec<f64>,
    pub quantiles: Vec<(f64, f64)>,
    /// KS distance to the previous (coarser) level.
    pub ks_prev: Option<f64>,
}

/// Maxima ensembles over `h_list`; level `i` uses `derived_seed(seed, i)`.
pub fn maxstat_study(
    shape: &Shape,
    s: f64,
    h_list: &[f64],
    replicas: usize,
    seed: u64,
    quadrature: Option<usize>,
) -> Result<Vec<MaxLevel>> {
    let d = shape.dim()?;
    if d as f64 >= 2.0 * s {
        return Err(Error::Config(format!(
            "convergence of the maximum needs d < 2s (d = {d}, s = {s})"
        )));
    }
    let mut levels: Vec<MaxLevel> = Vec::new();
    for (i, &h) in h_list.iter().enumerate() {
        let dom = Arc::new(build_domain(shape, h)?);
        let p = Arc::new(PrecisionOperator::new(&assemble_matrix(&dom, s, quadrature)?));
        let e = ensemble(&p, derived_seed(seed, i as u64), replicas, EnsembleOptions::default());
        let ms = max_statistic(&e);
        let ks_prev = match levels.last() {
            Some(prev) if replicas > 1 => Some(stats::ks_two_sample(&prev.sorted, &ms.sorted)),
            _ => None,
        };
        levels.push(MaxLevel {
            h,
            sorted: ms.sorted,
            quantiles: ms.quantiles,
            ks_prev,
        });
    }
    Ok(levels)
}

pub fn run_maxstat(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let mut header = vec!["s", "h", "replicas"];
    let qnames: Vec<String> = MAX_QUANTILES.iter().map(|p| format!("q{:02}", (p * 100.0).round())).collect();
    header.extend(qnames.iter().map(String::as_str));
    header.extend(["mean", "ks_prev"]);
    let mut csv = Csv::new(hash, &header);
    let mut maxima = Csv::new(hash, &["s", "h", "rank", "max"]);
    let mut report = String::new();
    for (i, &s) in cfg.s.iter().enumerate() {
        let levels = maxstat_study(&cfg.domain, s, &cfg.h, cfg.replicas, derived_seed(cfg.seed, i as u64), cfg.quadrature)?;
        for l in &levels {
            let mut row = vec![Cell::Num(s), Cell::Num(l.h), Cell::Int(cfg.replicas as u64)];
            row.extend(l.quantiles.iter().map(|q| Cell::Num(q.1)));
            row.push(Cell::Num(stats::mean(&l.sorted)));
            row.push(Cell::Opt(l.ks_prev));
            csv.row(&row);
            for (rank, m) in l.sorted.iter().enumerate() {
                maxima.row(&[Cell::Num(s), Cell::Num(l.h), Cell::Int(rank as u64), Cell::Num(*m)]);
            }
            writeln!(
                report,
                "s = {s}, h = {}: median max {:.4}, KS to previous {}",
                l.h,
                l.quantiles[2].1,
                l.ks_prev.map_or("-".to_string(), |k| format!("{k:.4}"))
            )
            .unwrap();
        }
    }
    Ok(ExperimentOutput {
        files: vec![
            ("maxstat.csv".into(), csv.into_bytes()),
            ("maxima.csv".into(), maxima.into_bytes()),
        ],
        report,
        passed: true,
        warnings: vec![],
    })
}

// ---------------------------------------------------------------- spectrum

pub fn run_spectrum(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let mut spectrum = Csv::new(hash, &["s", "h", "j", "lambda"]);
    let mut weyl = Csv::new(hash, &["s", "h", "modes", "window_start", "window_end", "exponent", "target"]);
    let mut report = String::new();
    let window = WeylWindow {
        start: cfg.weyl_start,
        end: cfg.weyl_end,
    };
    let d = cfg.dim() as f64;
    for &s in &cfg.s {
        for &h in &cfg.h {
            let dom = Arc::new(build_domain(&cfg.domain, h)?);
            let dec = decompose(&assemble_matrix(&dom, s, cfg.quadrature)?)?;
            for (j, l) in dec.eigenvalues().iter().enumerate() {
                spectrum.row(&[Cell::Num(s), Cell::Num(h), Cell::Int(j as u64 + 1), Cell::Num(*l)]);
            }
            let fit = weyl_fit(&dec, window).ok();
            weyl.row(&[
                Cell::Num(s),
                Cell::Num(h),
                Cell::Int(dec.len() as u64),
                Cell::Num(window.start),
                Cell::Num(window.end),
                Cell::Opt(fit),
                Cell::Num(2.0 * s / d),
            ]);
            writeln!(
                report,
                "s = {s}, h = {h}: {} modes, Weyl exponent {} (continuum {})",
                dec.len(),
                fit.map_or("n/a".to_string(), |f| format!("{f:.4}")),
                2.0 * s / d
            )
            .unwrap();
        }
    }
    Ok(ExperimentOutput {
        files: vec![
            ("spectrum.csv".into(), spectrum.into_bytes()),
            ("weyl.csv".into(), weyl.into_bytes()),
        ],
        report,
        passed: true,
        warnings: vec![],
    })
}

// ---------------------------------------------------------------- selftest

/// Largest `‖u‖_{L²_h} / ‖u‖_{Ḣ^s_h}` over `count` white-noise fields on
/// `shape`, one value per `h`. The energy norm is `h^d uᵀAu`.
pub fn poincare_ratios(shape: &Shape, s: f64, h_list: &[f64], count: usize, seed: u64) -> Result<Vec<f64>> {
    h_list
        .iter()
        .enumerate()
        .map(|(level, &h)| {
            let dom = Arc::new(build_domain(shape, h)?);
            let a = assemble_matrix(&dom, s, None)?;
            let hd = dom.cell_volume();
            let mut worst: f64 = 0.0;
            for i in 0..count {
                let z = RngSpec::new(derived_seed(seed, level as u64), i as u64).normals(dom.len());
                let l2 = hd * z.iter().map(|v| v * v).sum::<f64>();
                let u = GridFunction::new(dom.clone(), z)?;
                worst = worst.max((l2 / energy_norm_sq(&u, &a)?).sqrt());
            }
            Ok(worst)
        })
        .collect()
}

/// Entrywise `max |Σ_j λ_j^{-1} v_j v_jᵀ - (h^d A)^{-1}|` on `dom`.
pub fn covariance_equivalence_gap(dom: &Arc<LatticeDomain>, s: f64) -> Result<f64> {
    let a = assemble_matrix(dom, s, None)?;
    let dec = decompose(&a)?;
    let c = analytic_covariance(&PrecisionOperator::new(&a));
    Ok((dec.series_covariance(dec.len()) - c).amax())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        tolerance,
        passed: value.is_finite() && value <= tolerance,
    }
}

fn stencil_deviation(dim: usize, s: f64, expected: &[(Vec<i64>, f64)], q: Option<usize>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (m, want) in expected {
        let mut full = m.clone();
        full.resize(dim, 0);
        worst = worst.max((kernel_entry(&full, 1.0, s, q)? - want).abs());
    }
    Ok(worst)
}

/// The closed-form oracle suite. `q` overrides the kernel quadrature.
pub fn selftest_checks(q: Option<usize>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    out.push(check(
        "laplacian_stencil_1d",
        stencil_deviation(1, 1.0, &[(vec![0], 2.0), (vec![1], -1.0), (vec![2], 0.0)], q)?,
        1e-10,
    ));
    out.push(check(
        "laplacian_stencil_2d",
        stencil_deviation(2, 1.0, &[(vec![0, 0], 4.0), (vec![1, 0], -1.0), (vec![0, 1], -1.0), (vec![1, 1], 0.0)], q)?,
        1e-10,
    ));
    out.push(check(
        "bilaplacian_stencil_1d",
        stencil_deviation(1, 2.0, &[(vec![0], 6.0), (vec![1], -4.0), (vec![2], 1.0), (vec![3], 0.0)], q)?,
        1e-10,
    ));
    out.push(check(
        "half_laplacian_kernel",
        stencil_deviation(1, 0.5, &[(vec![0], 4.0 / PI), (vec![1], -4.0 / (3.0 * PI))], q)?,
        1e-6,
    ));
    let g = GaussianPair { width: COMMUTE_TEST_WIDTH };
    out.push(check("commutation", commute_check(&g, &PeriodicBox::centered(1, 0.5, 64)?, 1.0), 1e-8));
    out.push(check(
        "poisson_folding",
        poisson_fold_check(&GaussianPair::unit(), &PeriodicBox::centered(1, 0.5, 32)?, 3),
        1e-8,
    ));
    let mut pou: f64 = 0.0;
    for k in 1..=4 {
        for i in 0..97 {
            let x = -2.0 + 4.0 * i as f64 / 96.0;
            let sum: f64 = (-8..=8).map(|m| bspline_1d(k, x - m as f64)).sum();
            pou = pou.max((sum - 1.0).abs());
        }
    }
    out.push(check("partition_of_unity", pou, 1e-12));
    let single = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.5)?);
    let c = analytic_covariance(&PrecisionOperator::new(&assemble_matrix(&single, 1.0, q)?));
    out.push(check("single_site_variance", (c[(0, 0)] - 0.25).abs(), 1e-12));
    let twenty = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 1.0 / 21.0)?);
    out.push(check("covariance_equivalence", covariance_equivalence_gap(&twenty, 0.75)?, 1e-8));
    let h_list: Vec<f64> = (3..=6).map(|e| 1.0 / f64::from(1u32 << e)).collect();
    let mut poincare: f64 = 0.0;
    for s in [0.5, 1.0, 1.5] {
        let r = poincare_ratios(&Shape::interval(0.0, 1.0), s, &h_list, 200, 17)?;
        poincare = poincare.max(r.iter().cloned().fold(0.0, f64::max) / r[0]);
    }
    out.push(check("poincare_ratio", poincare, 1.1));
    let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 1.0 / 16.0)?);
    let a = assemble_matrix(&dom, 1.0, q)?;
    let u = solve_dirichlet(
        &DirichletProblem::new(&a, GridFunction::new(dom.clone(), vec![1.0; dom.len()])?)?,
        SolveMethod::Direct,
    )?;
    let exact = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = dom.coord(i)[0];
            (v - 0.5 * x * (1.0 - x)).abs()
        })
        .fold(0.0, f64::max);
    out.push(check("laplacian_solve_exactness", exact, 1e-12));
    Ok(out)
}

pub fn run_selftest(cfg: &ExperimentConfig, hash: &str) -> Result<ExperimentOutput> {
    let checks = selftest_checks(cfg.quadrature)?;
    let mut csv = Csv::new(hash, &["check", "status", "value", "tolerance"]);
    let mut report = String::new();
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        csv.row(&[Cell::Text(c.name.into()), Cell::Text(status.into()), Cell::Num(c.value), Cell::Num(c.tolerance)]);
        writeln!(report, "{status} {:<28} value {:.3e} (tolerance {:.1e})", c.name, c.value, c.tolerance).unwrap();
    }
    let passed = checks.iter().all(|c| c.passed);
    writeln!(
        report,
        "{} of {} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    )
    .unwrap();
    Ok(ExperimentOutput {
        files: vec![("selftest.csv".into(), csv.into_bytes())],
        report,
        passed,
        warnings: vec![],
    })
}

/// Empirical covariance of `count` samples against `P^{-1}`: the largest
/// entrywise deviation in units of its standard error.
pub fn covariance_z_score(p: &Arc<PrecisionOperator>, seed: u64, count: usize) -> f64 {
    let e = ensemble(p, seed, count, EnsembleOptions { keep_samples: false, covariance: true });
    let emp = e.covariance.expect("covariance requested");
    let c = analytic_covariance(p);
    let n = c.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)] * c[(i, j)]) / count as f64).sqrt();
            worst = worst.max((emp[(i, j)] - c[(i, j)]).abs() / se);
        }
    }
    worst
}

/// `h^{2d} fᵀ P^{-1} f` for a dense covariance; used to cross-check dual norms.
pub fn pairing_variance(c: &DMatrix<f64>, f: &GridFunction) -> f64 {
    let hd = f.domain().cell_volume();
    let v = DVector::from_column_slice(f.values());
    hd * hd * v.dot(&(c * &v))
}
