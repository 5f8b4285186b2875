//! Lattice domains `Ω ∩ hZ^d`, grid functions with zero exterior extension,
//! and periodic boxes used as the finite stand-in for the full lattice.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative margin (in units of `h`) inside which a lattice point counts as
/// lying on a boundary. Boundary points are exterior.
const BOUNDARY_EPS: f64 = 1e-9;

/// Bounded open subsets of `R^d` built from boxes and balls.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Open axis-aligned box `Π (lo_j, hi_j)`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Open ball.
    Ball { center: Vec<f64>, radius: f64 },
    Union(Vec<Shape>),
    Intersection(Vec<Shape>),
}

impl Shape {
    /// The unit cube `(0,1)^d`.
    pub fn unit_cube(dim: usize) -> Self {
        Shape::Box {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Shape::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> Result<usize> {
        match self {
            Shape::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidShape("box corners disagree in dimension".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidShape("box needs lo < hi on every axis".into()));
                }
                Ok(lo.len())
            }
            Shape::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidShape("ball needs a center and a positive radius".into()));
                }
                Ok(center.len())
            }
            Shape::Union(parts) | Shape::Intersection(parts) => {
                let first = parts
                    .first()
                    .ok_or_else(|| Error::InvalidShape("empty boolean combination".into()))?
                    .dim()?;
                for p in &parts[1..] {
                    if p.dim()? != first {
                        return Err(Error::InvalidShape("mixed dimensions in combination".into()));
                    }
                }
                Ok(first)
            }
        }
    }

    /// Strict (open-set) membership; points within `eps` of a boundary are outside.
    pub fn contains(&self, x: &[f64], eps: f64) -> bool {
        match self {
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&xi, (&a, &b))| xi > a + eps && xi < b - eps),
            Shape::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2.sqrt() < radius - eps
            }
            Shape::Union(parts) => parts.iter().any(|p| p.contains(x, eps)),
            Shape::Intersection(parts) => parts.iter().all(|p| p.contains(x, eps)),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of the closure.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Union(parts) => fold_bounds(parts, f64::min, f64::max),
            Shape::Intersection(parts) => fold_bounds(parts, f64::max, f64::min),
        }
    }
}

fn fold_bounds(
    parts: &[Shape],
    lo_op: fn(f64, f64) -> f64,
    hi_op: fn(f64, f64) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = parts[0].bounds();
    for p in &parts[1..] {
        let (l, h) = p.bounds();
        for j in 0..lo.len() {
            lo[j] = lo_op(lo[j], l[j]);
            hi[j] = hi_op(hi[j], h[j]);
        }
    }
    (lo, hi)
}

/// The lattice discretisation `Ω_h = Ω ∩ hZ^d`.
///
/// Sites are stored as integer multi-indices `m` (coordinate `h·m`) in
/// lexicographic order, first axis slowest.
#[derive(Debug, Clone)]
pub struct LatticeDomain {
    dim: usize,
    h: f64,
    shape: Shape,
    sites: Vec<i64>,
    bbox_lo: Vec<i64>,
    bbox_hi: Vec<i64>,
    lookup: HashMap<Vec<i64>, usize>,
}

impl PartialEq for LatticeDomain {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.h == other.h && self.sites == other.sites
    }
}

/// Builds `Ω ∩ hZ^d`. Lattice points on `∂Ω` are exterior.
pub fn build_domain(shape: &Shape, h: f64) -> Result<LatticeDomain> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("spacing h must be positive, got {h}")));
    }
    let dim = shape.dim()?;
    let (lo, hi) = shape.bounds();
    let first: Vec<i64> = lo.iter().map(|a| (a / h).floor() as i64).collect();
    let last: Vec<i64> = hi.iter().map(|b| (b / h).ceil() as i64).collect();

    let eps = BOUNDARY_EPS * h;
    let mut sites = Vec::new();
    let mut m = first.clone();
    let mut x = vec![0.0; dim];
    'outer: loop {
        for j in 0..dim {
            x[j] = h * m[j] as f64;
        }
        if shape.contains(&x, eps) {
            sites.extend_from_slice(&m);
        }
        // odometer, last axis fastest
        let mut axis = dim;
        loop {
            if axis == 0 {
                break 'outer;
            }
            axis -= 1;
            if m[axis] < last[axis] {
                m[axis] += 1;
                break;
            }
            m[axis] = first[axis];
        }
    }
    if sites.is_empty() {
        return Err(Error::EmptyDomain { h });
    }

    let mut bbox_lo = vec![i64::MAX; dim];
    let mut bbox_hi = vec![i64::MIN; dim];
    let mut lookup = HashMap::with_capacity(sites.len() / dim);
    for (i, m) in sites.chunks(dim).enumerate() {
        for j in 0..dim {
            bbox_lo[j] = bbox_lo[j].min(m[j]);
            bbox_hi[j] = bbox_hi[j].max(m[j]);
        }
        lookup.insert(m.to_vec(), i);
    }
    Ok(LatticeDomain {
        dim,
        h,
        shape: shape.clone(),
        sites,
        bbox_lo,
        bbox_hi,
        lookup,
    })
}

impl LatticeDomain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Number of interior sites.
    pub fn len(&self) -> usize {
        self.sites.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Multi-index of site `i`.
    pub fn site(&self, i: usize) -> &[i64] {
        &self.sites[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sites(&self) -> impl Iterator<Item = &[i64]> {
        self.sites.chunks(self.dim)
    }

    pub fn coord(&self, i: usize) -> Vec<f64> {
        self.site(i).iter().map(|&m| m as f64 * self.h).collect()
    }

    pub fn index_of(&self, m: &[i64]) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    /// Inclusive integer bounding box of the sites.
    pub fn bounding_box(&self) -> (&[i64], &[i64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// Largest `|m_i - m_j|_∞` over pairs of sites.
    pub fn max_offset(&self) -> i64 {
        (0..self.dim)
            .map(|j| self.bbox_hi[j] - self.bbox_lo[j])
            .max()
            .unwrap_or(0)
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
}

/// Real values on the sites of a [`LatticeDomain`], extended by zero to the
/// rest of `hZ^d`.
#[derive(Debug, Clone)]
pub struct GridFunction {
    domain: Arc<LatticeDomain>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: Arc<LatticeDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "grid function has {} values for {} sites",
                values.len(),
                domain.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid function values must be finite".into()));
        }
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: Arc<LatticeDomain>) -> Self {
        let n = domain.len();
        Self {
            domain,
            values: vec![0.0; n],
        }
    }

    /// Samples `f` at the site coordinates.
    pub fn from_fn(domain: Arc<LatticeDomain>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..domain.len()).map(|i| f(&domain.coord(i))).collect();
        Self::new(domain, values)
    }

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_domain(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    /// Plain-text dump: a `#` header with `d`, `h` and site count, then one
    /// line `m_1 … m_d value` per site.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.domain.dim();
        writeln!(w, "# d={} h={:.17e} sites={}", d, self.domain.h(), self.domain.len())?;
        for (m, v) in self.domain.sites().zip(&self.values) {
            for idx in m {
                write!(w, "{idx} ")?;
            }
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }
}

/// Parsed form of a [`GridFunction::write_text`] dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub dim: usize,
    pub h: f64,
    pub sites: Vec<Vec<i64>>,
    pub values: Vec<f64>,
}

pub fn read_grid_dump<R: BufRead>(r: R) -> Result<GridDump> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing header".into()))??;
    let mut dim = None;
    let mut h = None;
    let mut count = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token {tok}")))?;
        let bad = |_| Error::Parse(format!("bad header value {tok}"));
        match k {
            "d" => dim = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "h" => h = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "sites" => count = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => {}
        }
    }
    let (dim, h, count) = match (dim, h, count) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Parse("header needs d, h and sites".into())),
    };
    let mut sites = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != dim + 1 {
            return Err(Error::Parse(format!("expected {} columns: {line}", dim + 1)));
        }
        let m = toks[..dim]
            .iter()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        sites.push(m);
        values.push(toks[dim].parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
    }
    if sites.len() != count {
        return Err(Error::Parse(format!("header says {count} sites, found {}", sites.len())));
    }
    Ok(GridDump { dim, h, sites, values })
}

/// The `L²_h` pairing `h^d Σ u(x) v(x)`.
pub fn l2h_inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    if !u.same_domain(v) {
        return Err(Error::DomainMismatch("l2h_inner needs functions on the same domain".into()));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok(u.domain.cell_volume() * dot)
}

/// A periodic window of `n^d` lattice sites with spacing `h`, standing in for
/// `hZ^d`. Box index `j` on axis `a` corresponds to the lattice index
/// `origin[a] + j`; indices are identified modulo `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicBox {
    dim: usize,
    h: f64,
    n: usize,
    origin: Vec<i64>,
}

impl PeriodicBox {
    pub fn new(dim: usize, h: f64, n: usize, origin: Vec<i64>) -> Result<Self> {
        if dim == 0 || origin.len() != dim {
            return Err(Error::InvalidArgument("periodic box origin must have one entry per axis".into()));
        }
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("sites per axis must be even and positive, got {n}")));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("box spacing must be positive".into()));
        }
        Ok(Self { dim, h, n, origin })
    }

    /// Box whose window is centred on the origin of `hZ^d`:
    /// lattice indices `-n/2+1 ..= n/2`.
    pub fn centered(dim: usize, h: f64, n: usize) -> Result<Self> {
        Self::new(dim, h, n, vec![1 - (n as i64) / 2; dim])
    }

    /// Smallest power-of-two box whose period is at least `padding_factor`
    /// times the domain's extent, with the domain centred in the window.
    pub fn enclosing(domain: &LatticeDomain, padding_factor: f64) -> Result<Self> {
        let (lo, hi) = domain.bounding_box();
        let extent = (0..domain.dim()).map(|j| hi[j] - lo[j] + 2).max().unwrap_or(2) as f64;
        let want = (padding_factor.max(1.0) * extent).ceil() as usize;
        let n = want.next_power_of_two().max(2);
        let origin = (0..domain.dim())
            .map(|j| (lo[j] + hi[j]).div_euclid(2) - (n as i64) / 2 + 1)
            .collect();
        Self::new(domain.dim(), domain.h(), n, origin)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Sites per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    /// Physical period `L = n h`.
    pub fn period(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// Total number of sites `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index of a box multi-index (first axis slowest).
    pub fn flat(&self, j: &[usize]) -> usize {
        j.iter().fold(0, |acc, &x| acc * self.n + x)
    }

    /// Inverse of [`flat`](Self::flat).
    pub fn unflat(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
    }

    /// Flat box index holding lattice index `m` (periodic wrap).
    pub fn wrap(&self, m: &[i64]) -> usize {
        let n = self.n as i64;
        m.iter()
            .zip(&self.origin)
            .fold(0usize, |acc, (&mi, &o)| acc * self.n + (mi - o).rem_euclid(n) as usize)
    }

    /// Lattice index of a box multi-index.
    pub fn lattice_index(&self, j: &[usize], out: &mut [i64]) {
        for a in 0..self.dim {
            out[a] = self.origin[a] + j[a] as i64;
        }
    }

    /// Physical coordinates of every box site, in flat order.
    pub fn coords(&self) -> Vec<Vec<f64>> {
        let mut j = vec![0usize; self.dim];
        (0..self.len())
            .map(|idx| {
                self.unflat(idx, &mut j);
                (0..self.dim)
                    .map(|a| (self.origin[a] + j[a] as i64) as f64 * self.h)
                    .collect()
            })
            .collect()
    }

    /// Whether the lattice index range `[lo, hi]` fits inside the window with
    /// `margin` spare sites on both sides.
    pub fn fits(&self, lo: &[i64], hi: &[i64], margin: i64) -> bool {
        (0..self.dim).all(|a| {
            lo[a] - margin >= self.origin[a] && hi[a] + margin < self.origin[a] + self.n as i64
        })
    }

    /// Same window geometry at spacing `h / ratio`.
    pub fn refined(&self, ratio: usize) -> Result<Self> {
        Self::new(
            self.dim,
            self.h / ratio as f64,
            self.n * ratio,
            self.origin.iter().map(|o| o * ratio as i64).collect(),
        )
    }

    /// Same window geometry at spacing `h * ratio`; the origin and `n` must
    /// be divisible by `ratio`.
    pub fn coarsened(&self, ratio: usize) -> Result<Self> {
        let r = ratio as i64;
        if self.n % (2 * ratio) != 0 || self.origin.iter().any(|o| o % r != 0) {
            return Err(Error::InvalidArgument(format!(
                "box with n = {} and origin {:?} cannot be coarsened by {ratio}",
                self.n, self.origin
            )));
        }
        Self::new(
            self.dim,
            self.h * ratio as f64,
            self.n / ratio,
            self.origin.iter().map(|o| o / r).collect(),
        )
    }
}

impl fmt::Display for PeriodicBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "box(d={}, h={}, n={}, L={})", self.dim, self.h, self.n, self.period())
    }
}

/// Real values on every site of a [`PeriodicBox`], flat row-major order.
#[derive(Debug, Clone)]
pub struct BoxFunction {
    bx: PeriodicBox,
    values: Vec<f64>,
}

impl BoxFunction {
    pub fn new(bx: PeriodicBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != bx.len() {
            return Err(Error::InvalidArgument(format!(
                "box function has {} values for {} sites",
                values.len(),
                bx.len()
            )));
        }
        Ok(Self { bx, values })
    }

    pub fn zeros(bx: PeriodicBox) -> Self {
        let n = bx.len();
        Self {
            bx,
            values: vec![0.0; n],
        }
    }

    /// Samples `f` at the physical coordinates of every box site.
    pub fn from_fn(bx: PeriodicBox, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = bx.coords().iter().map(|x| f(x)).collect();
        Self { bx, values }
    }

    pub fn box_(&self) -> &PeriodicBox {
        &self.bx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at lattice index `m` (periodic).
    pub fn at(&self, m: &[i64]) -> f64 {
        self.values[self.bx.wrap(m)]
    }

    /// `h^d Σ |u|²`.
    pub fn l2h_norm_sq(&self) -> f64 {
        self.bx.h.powi(self.bx.dim as i32) * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Subsamples a fine box function at every `ratio`-th site.
    pub fn subsample(&self, ratio: usize) -> Result<BoxFunction> {
        let coarse = self.bx.coarsened(ratio)?;
        let mut j = vec![0usize; coarse.dim];
        let mut m = vec![0i64; coarse.dim];
        let values = (0..coarse.len())
            .map(|idx| {
                coarse.unflat(idx, &mut j);
                coarse.lattice_index(&j, &mut m);
                for x in m.iter_mut() {
                    *x *= ratio as i64;
                }
                self.at(&m)
            })
            .collect();
        BoxFunction::new(coarse, values)
    }

    /// Zero-pads to a box `factor` times larger per axis, keeping the data
    /// centred. The function is assumed to vanish near the window edges.
    pub fn zero_padded(&self, factor: usize) -> Result<BoxFunction> {
        if factor <= 1 {
            return Ok(self.clone());
        }
        let n = self.bx.n;
        let shift = ((factor - 1) * n / 2) as i64;
        let big = PeriodicBox::new(
            self.bx.dim,
            self.bx.h,
            n * factor,
            self.bx.origin.iter().map(|o| o - shift).collect(),
        )?;
        let mut out = BoxFunction::zeros(big);
        let mut j = vec![0usize; self.bx.dim];
        let mut m = vec![0i64; self.bx.dim];
        for (idx, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                self.bx.unflat(idx, &mut j);
                self.bx.lattice_index(&j, &mut m);
                let k = out.bx.wrap(&m);
                out.values[k] = v;
            }
        }
        Ok(out)
    }
}

/// Copies `u` into `bx` (zero elsewhere). Fails when the domain's bounding
/// box does not fit inside the window.
pub fn embed(u: &GridFunction, bx: &PeriodicBox) -> Result<BoxFunction> {
    embed_with_margin(u, bx, 0)
}

/// As [`embed`], additionally requiring `margin` empty sites on each side.
pub fn embed_with_margin(u: &GridFunction, bx: &PeriodicBox, margin: i64) -> Result<BoxFunction> {
    let dom = u.domain();
    if dom.dim() != bx.dim() || dom.h() != bx.h() {
        return Err(Error::DomainMismatch(format!(
            "cannot embed d={} h={} domain into {}",
            dom.dim(),
            dom.h(),
            bx
        )));
    }
    let (lo, hi) = dom.bounding_box();
    if !bx.fits(lo, hi, margin) {
        let extent = (0..dom.dim()).map(|a| hi[a] - lo[a] + 1).max().unwrap_or(1);
        let need = (extent + 2 * margin + 1) as usize;
        return Err(Error::BoxTooSmall {
            n: bx.n(),
            required_n: need + need % 2,
        });
    }
    let mut out = BoxFunction::zeros(bx.clone());
    for (m, &v) in dom.sites().zip(u.values()) {
        let k = bx.wrap(m);
        out.values[k] = v;
    }
    Ok(out)
}

/// Restriction of a box function to the sites of `domain`.
pub fn restrict(u: &BoxFunction, domain: &Arc<LatticeDomain>) -> Result<GridFunction> {
    if domain.dim() != u.bx.dim() || domain.h() != u.bx.h() {
        return Err(Error::DomainMismatch("restriction target has different d or h".into()));
    }
    let values = domain.sites().map(|m| u.at(m)).collect();
    GridFunction::new(domain.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_interval_half_spacing_has_single_site() {
        let dom = build_domain(&Shape::interval(0.0, 1.0), 0.5).unwrap();
        assert_eq!(dom.len(), 1);
        assert_eq!(dom.site(0), &[1]);
        assert_eq!(dom.coord(0), vec![0.5]);
    }

    #[test]
    fn unit_square_quarter_spacing_has_nine_sites() {
        let dom = build_domain(&Shape::unit_cube(2), 0.25).unwrap();
        assert_eq!(dom.len(), 9);
        // lexicographic, first axis slowest
        assert_eq!(dom.site(0), &[1, 1]);
        assert_eq!(dom.site(1), &[1, 2]);
        assert_eq!(dom.site(3), &[2, 1]);
        assert_eq!(dom.site(8), &[3, 3]);
    }

    #[test]
    fn too_coarse_spacing_is_empty_domain() {
        let err = build_domain(&Shape::interval(0.0, 1.0), 2.0).unwrap_err();
        assert!(matches!(err, Error::EmptyDomain { .. }));
        assert!(err.to_string().contains("empty domain"));
    }

    #[test]
    fn boundary_points_are_exterior() {
        // h = 1/3 puts lattice points exactly on both ends (up to rounding).
        let dom = build_domain(&Shape::interval(0.0, 1.0), 1.0 / 3.0).unwrap();
        assert_eq!(dom.len(), 2);
        let ball = Shape::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let dom = build_domain(&ball, 0.5).unwrap();
        // (±2,0),(0,±2) sit on the circle and are dropped
        assert!(dom.index_of(&[2, 0]).is_none());
        assert!(dom.index_of(&[1, 1]).is_some());
        assert_eq!(dom.len(), 9);
    }

    #[test]
    fn boolean_combinations() {
        let a = Shape::Box {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let b = Shape::Box {
            lo: vec![0.5, 0.0],
            hi: vec![1.5, 1.0],
        };
        let u = build_domain(&Shape::Union(vec![a.clone(), b.clone()]), 0.25).unwrap();
        let i = build_domain(&Shape::Intersection(vec![a, b]), 0.25).unwrap();
        assert_eq!(u.len(), 5 * 3);
        assert_eq!(i.len(), 1 * 3);
    }

    #[test]
    fn l2h_inner_examples() {
        let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.5).unwrap());
        let u = GridFunction::new(dom.clone(), vec![1.0]).unwrap();
        assert_eq!(l2h_inner(&u, &u).unwrap(), 0.5);
        let z = GridFunction::zeros(dom);
        assert_eq!(l2h_inner(&z, &u).unwrap(), 0.0);

        let dom2 = Arc::new(build_domain(&Shape::unit_cube(2), 0.25).unwrap());
        let one = GridFunction::new(dom2, vec![1.0; 9]).unwrap();
        assert!((l2h_inner(&one, &one).unwrap() - 9.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn l2h_inner_rejects_mismatched_domains() {
        let a = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.5).unwrap());
        let b = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.25).unwrap());
        let u = GridFunction::zeros(a);
        let v = GridFunction::zeros(b);
        assert!(matches!(l2h_inner(&u, &v), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn grid_function_rejects_nonfinite_and_wrong_length() {
        let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.25).unwrap());
        assert!(GridFunction::new(dom.clone(), vec![1.0; 2]).is_err());
        assert!(GridFunction::new(dom, vec![1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn embed_single_site_and_zero() {
        let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.5).unwrap());
        let bx = PeriodicBox::centered(1, 0.5, 8).unwrap();
        let u = GridFunction::new(dom.clone(), vec![3.0]).unwrap();
        let e = embed(&u, &bx).unwrap();
        assert_eq!(e.values().iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(e.at(&[1]), 3.0);
        assert!((e.l2h_norm_sq() - l2h_inner(&u, &u).unwrap()).abs() < 1e-15);

        let z = embed(&GridFunction::zeros(dom), &bx).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn embed_reports_required_size() {
        let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.1).unwrap());
        let bx = PeriodicBox::centered(1, 0.1, 4).unwrap();
        let u = GridFunction::zeros(dom);
        match embed(&u, &bx) {
            Err(Error::BoxTooSmall { n, required_n }) => {
                assert_eq!(n, 4);
                assert!(required_n >= 10);
                assert!(err_mentions(required_n));
            }
            other => panic!("expected BoxTooSmall, got {other:?}"),
        }
        fn err_mentions(n: usize) -> bool {
            Error::BoxTooSmall { n: 4, required_n: n }
                .to_string()
                .contains(&n.to_string())
        }
    }

    #[test]
    fn enclosing_box_is_four_times_extent() {
        let dom = build_domain(&Shape::interval(0.0, 1.0), 1.0 / 16.0).unwrap();
        let bx = PeriodicBox::enclosing(&dom, 4.0).unwrap();
        assert!(bx.period() >= 4.0);
        let (lo, hi) = dom.bounding_box();
        assert!(bx.fits(lo, hi, 8));
    }

    #[test]
    fn dump_roundtrip() {
        let dom = Arc::new(build_domain(&Shape::unit_cube(2), 0.25).unwrap());
        let u = GridFunction::from_fn(dom, |x| x[0] - 2.0 * x[1]).unwrap();
        let mut buf = Vec::new();
        u.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# d=2 h="));
        let back = read_grid_dump(&buf[..]).unwrap();
        assert_eq!(back.dim, 2);
        assert_eq!(back.h, 0.25);
        assert_eq!(back.values, u.values());
        assert_eq!(back.sites[4], vec![2, 2]);
    }

    #[test]
    fn site_enumeration_is_deterministic() {
        let s = Shape::Ball {
            center: vec![0.3, -0.2],
            radius: 0.77,
        };
        let a = build_domain(&s, 0.05).unwrap();
        let b = build_domain(&s, 0.05).unwrap();
        assert_eq!(a.sites, b.sites);
    }

    proptest! {
        #[test]
        fn embed_then_restrict_is_identity(vals in proptest::collection::vec(-5.0f64..5.0, 7)) {
            let dom = Arc::new(build_domain(&Shape::interval(0.0, 1.0), 0.125).unwrap());
            let u = GridFunction::new(dom.clone(), vals).unwrap();
            let bx = PeriodicBox::enclosing(&dom, 4.0).unwrap();
            let back = restrict(&embed(&u, &bx).unwrap(), &dom).unwrap();
            prop_assert_eq!(back.values(), u.values());
        }

        #[test]
        fn l2h_inner_bilinear_symmetric_positive(
            a in proptest::collection::vec(-3.0f64..3.0, 9),
            b in proptest::collection::vec(-3.0f64..3.0, 9),
            c in -2.0f64..2.0,
        ) {
            let dom = Arc::new(build_domain(&Shape::unit_cube(2), 0.25).unwrap());
            let u = GridFunction::new(dom.clone(), a.clone()).unwrap();
            let v = GridFunction::new(dom.clone(), b.clone()).unwrap();
            let w = GridFunction::new(dom, a.iter().zip(&b).map(|(x, y)| c * x + y).collect()).unwrap();
            let uv = l2h_inner(&u, &v).unwrap();
            prop_assert!((uv - l2h_inner(&v, &u).unwrap()).abs() < 1e-12);
            let lin = c * l2h_inner(&u, &u).unwrap() + l2h_inner(&v, &u).unwrap();
            prop_assert!((l2h_inner(&w, &u).unwrap() - lin).abs() < 1e-10);
            if a.iter().any(|x| *x != 0.0) {
                prop_assert!(l2h_inner(&u, &u).unwrap() > 0.0);
            }
        }
    }
}
