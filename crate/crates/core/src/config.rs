//! Experiment configuration: a flat `key = value` file, one experiment per
//! file, with every key overridable from the command line.
//!
//! ```text
//! experiment = converge
//! domain = box 0:1
//! s = 0.75, 1.5
//! h = 1/16, 1/32, 1/64, 1/128
//! ```
//!
//! Domain grammar: `box lo:hi [lo:hi …]`, `ball c1,c2,… r`,
//! `union{A; B; …}`, `intersect{A; B; …}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Converge,
    Variance,
    Sample,
    Maxstat,
    Spectrum,
    Selftest,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::Converge,
        Self::Variance,
        Self::Sample,
        Self::Maxstat,
        Self::Spectrum,
        Self::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Converge => "converge",
            Self::Variance => "variance",
            Self::Sample => "sample",
            Self::Maxstat => "maxstat",
            Self::Spectrum => "spectrum",
            Self::Selftest => "selftest",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test function for the variance experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    /// The shipped smooth bump.
    Bump,
    /// `f ≡ 1`.
    One,
    /// `f ≡ 0`.
    Zero,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub domain: Shape,
    pub s: Vec<f64>,
    pub h: Vec<f64>,
    pub seed: u64,
    pub replicas: usize,
    /// B-spline order `k` of `Θ`.
    pub k: usize,
    /// Frequency oversampling for discrete Sobolev norms (`None`: per-σ default).
    pub oversampling: Option<usize>,
    /// Kernel quadrature refinement (`None`: per-dimension default).
    pub quadrature: Option<usize>,
    /// Period of the fine box used by the convergence study.
    pub period: f64,
    /// Fine-grid refinement relative to the smallest `h`.
    pub fine_ratio: usize,
    pub test_function: TestFunction,
    pub weyl_start: f64,
    pub weyl_end: f64,
    pub heightmap: bool,
    /// Pixels per lattice spacing in heightmaps.
    pub heightmap_scale: usize,
    pub out: PathBuf,
    pub threads: usize,
}

/// Keys that never change results; excluded from the config hash.
const NON_RESULT_KEYS: [&str; 2] = ["out", "threads"];

const KNOWN_KEYS: [&str; 19] = [
    "experiment",
    "domain",
    "s",
    "h",
    "seed",
    "replicas",
    "k",
    "theta",
    "oversampling",
    "quadrature",
    "period",
    "fine_ratio",
    "test_function",
    "weyl_start",
    "weyl_end",
    "heightmap",
    "heightmap_scale",
    "out",
    "threads",
];

/// Raw key/value pairs before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = normalise_key(k);
            check_key(&key)?;
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalise_key(key);
        check_key(&key)?;
        self.entries.insert(key, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Hex SHA-256 of the canonical result-relevant entries.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.entries {
            if NON_RESULT_KEYS.contains(&k.as_str()) {
                continue;
            }
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let kind: ExperimentKind = self
            .get("experiment")
            .ok_or_else(|| Error::Config("missing key 'experiment'".into()))?
            .parse()?;
        let d = Defaults::for_kind(kind);
        let domain = match self.get("domain") {
            Some(v) => parse_shape(v)?,
            None => d.domain,
        };
        let s = match self.get("s") {
            Some(v) => parse_list(v, "s")?,
            None => d.s,
        };
        let h = match self.get("h") {
            Some(v) => parse_list(v, "h")?,
            None => d.h,
        };
        let theta = self.get("theta").unwrap_or("bump");
        if theta != "bump" {
            return Err(Error::Config(format!("unsupported theta '{theta}' (only 'bump')")));
        }
        let cfg = ExperimentConfig {
            kind,
            domain,
            s,
            h,
            seed: self.parse_or("seed", d.seed)?,
            replicas: self.parse_or("replicas", d.replicas)?,
            k: self.parse_or("k", 2)?,
            oversampling: self.parse_opt("oversampling")?,
            quadrature: self.parse_opt("quadrature")?,
            period: self.parse_or("period", 64.0)?,
            fine_ratio: self.parse_or("fine_ratio", 8)?,
            test_function: match self.get("test_function").unwrap_or("bump") {
                "bump" => TestFunction::Bump,
                "one" => TestFunction::One,
                "zero" => TestFunction::Zero,
                other => return Err(Error::Config(format!("unknown test_function '{other}'"))),
            },
            weyl_start: self.parse_or("weyl_start", 1.0 / 3.0)?,
            weyl_end: self.parse_or("weyl_end", 2.0 / 3.0)?,
            heightmap: self.parse_or("heightmap", false)?,
            heightmap_scale: self.parse_or("heightmap_scale", 4)?,
            out: PathBuf::from(self.get("out").unwrap_or("out")),
            threads: self.parse_or("threads", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("cannot parse value '{v}' for key '{key}'")))
            })
            .transpose()
    }
}

fn normalise_key(k: &str) -> String {
    k.trim().trim_start_matches("--").replace('-', "_")
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key '{key}'")))
    }
}

struct Defaults {
    domain: Shape,
    s: Vec<f64>,
    h: Vec<f64>,
    seed: u64,
    replicas: usize,
}

impl Defaults {
    fn for_kind(kind: ExperimentKind) -> Self {
        let unit = Shape::interval(0.0, 1.0);
        let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|e| 1.0 / f64::from(1u32 << e)).collect::<Vec<_>>();
        match kind {
            ExperimentKind::Converge => Self {
                domain: unit,
                s: vec![0.75, 1.5],
                h: pow2(4, 7),
                seed: 1,
                replicas: 0,
            },
            ExperimentKind::Variance => Self {
                domain: unit,
                s: vec![1.0],
                h: pow2(3, 7),
                seed: 1,
                replicas: 0,
            },
            ExperimentKind::Sample => Self {
                domain: Shape::unit_cube(2),
                s: vec![0.0, 0.5, 1.0, 2.0],
                h: vec![1.0 / 40.0],
                seed: 1,
                replicas: 1,
            },
            ExperimentKind::Maxstat => Self {
                domain: unit,
                s: vec![1.5],
                h: pow2(4, 6),
                seed: 1,
                replicas: 5000,
            },
            ExperimentKind::Spectrum => Self {
                domain: unit,
                s: vec![1.0],
                h: vec![1.0 / 101.0],
                seed: 1,
                replicas: 0,
            },
            ExperimentKind::Selftest => Self {
                domain: unit,
                s: vec![],
                h: vec![],
                seed: 1,
                replicas: 0,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.domain.dim().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("domain has no dimension".into()));
        }
        if self.h.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("every h must be positive".into()));
        }
        if self.h.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("h list must be strictly decreasing".into()));
        }
        if self.s.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("every s must be finite and nonnegative".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("B-spline order k must be >= 1".into()));
        }
        if self.oversampling == Some(0) || self.quadrature == Some(0) || self.fine_ratio < 8 {
            return Err(Error::Config("oversampling and quadrature must be >= 1, fine_ratio >= 8".into()));
        }
        if !(0.0..1.0).contains(&self.weyl_start) || !(self.weyl_end > self.weyl_start && self.weyl_end <= 1.0) {
            return Err(Error::Config("Weyl window must satisfy 0 <= weyl_start < weyl_end <= 1".into()));
        }
        let needs_h = !matches!(self.kind, ExperimentKind::Selftest);
        if needs_h && (self.h.is_empty() || self.s.is_empty()) {
            return Err(Error::Config(format!("experiment {} needs nonempty s and h lists", self.kind)));
        }
        match self.kind {
            ExperimentKind::Maxstat => {
                if let Some(s) = self.s.iter().find(|s| d as f64 >= 2.0 * **s) {
                    return Err(Error::Config(format!(
                        "maxstat requires d < 2s for convergence of the maximum (d = {d}, s = {s})"
                    )));
                }
                if self.replicas == 0 {
                    return Err(Error::Config("maxstat needs replicas >= 1".into()));
                }
            }
            ExperimentKind::Variance if self.replicas > 0 => {
                // the Monte Carlo cross-check pairs against the interpolated field
                if let Some(s) = self.s.iter().find(|s| self.k as f64 <= **s + 0.5 * d as f64) {
                    return Err(Error::Config(format!(
                        "interpolation needs k > s + d/2 (k = {}, s = {s}, d = {d})",
                        self.k
                    )));
                }
            }
            ExperimentKind::Converge => {
                if let Some(s) = self.s.iter().find(|s| **s <= 0.0) {
                    return Err(Error::Config(format!("converge needs s > 0 (got {s})")));
                }
                let ratio = self.h[0] / self.h[self.h.len() - 1];
                if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                    return Err(Error::Config("converge needs every h to divide the largest".into()));
                }
            }
            ExperimentKind::Sample if self.replicas == 0 => {
                return Err(Error::Config("sample needs replicas >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses comma-separated reals; each entry may be a fraction `a/b`.
pub fn parse_list(v: &str, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_number(t).ok_or_else(|| Error::Config(format!("cannot parse '{t}' in key '{key}'"))))
        .collect()
}

fn parse_number(t: &str) -> Option<f64> {
    match t.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => t.parse().ok(),
    }
}

/// Parses the domain grammar described in the module docs.
pub fn parse_shape(text: &str) -> Result<Shape> {
    let t = text.trim();
    let shape = if let Some(inner) = strip_group(t, "union") {
        Shape::Union(split_top_level(inner).iter().map(|p| parse_shape(p)).collect::<Result<_>>()?)
    } else if let Some(inner) = strip_group(t, "intersect") {
        Shape::Intersection(split_top_level(inner).iter().map(|p| parse_shape(p)).collect::<Result<_>>()?)
    } else {
        let mut words = t.split_whitespace();
        match words.next() {
            Some("box") => {
                let (mut lo, mut hi) = (Vec::new(), Vec::new());
                for w in words {
                    let (a, b) = w
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("box axis '{w}' is not 'lo:hi'")))?;
                    lo.push(num(a)?);
                    hi.push(num(b)?);
                }
                Shape::Box { lo, hi }
            }
            Some("ball") => {
                let center = words
                    .next()
                    .ok_or_else(|| Error::Config("ball needs a centre".into()))?
                    .split(',')
                    .map(num)
                    .collect::<Result<Vec<_>>>()?;
                let radius = num(words.next().ok_or_else(|| Error::Config("ball needs a radius".into()))?)?;
                if words.next().is_some() {
                    return Err(Error::Config("trailing tokens after ball radius".into()));
                }
                Shape::Ball { center, radius }
            }
            _ => return Err(Error::Config(format!("cannot parse domain '{t}'"))),
        }
    };
    shape.dim().map_err(|e| Error::Config(e.to_string()))?;
    Ok(shape)
}

fn num(t: &str) -> Result<f64> {
    parse_number(t.trim()).ok_or_else(|| Error::Config(format!("cannot parse number '{t}'")))
}

fn strip_group<'a>(t: &'a str, name: &str) -> Option<&'a str> {
    t.strip_prefix(name)?.trim_start().strip_prefix('{')?.strip_suffix('}')
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            ';' if depth == 0 => {
                parts.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    parts.push(cur);
    parts.into_iter().map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}
