//! Demonstration datasets: CSV I/O, normalization, resampling, synthetic
//! motions and out-of-sample initial states.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bounds::{focal_sum, SamplerMode, SamplerSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Demos whose final states differ by more than this do not share a target.
pub const TARGET_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo<T> {
    pub id: String,
    pub t: Vec<T>,
    /// `N × N_y`, one row per sample.
    pub states: Tensor<T>,
}

impl<T: Real> Demo<T> {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn initial(&self) -> &[T] {
        self.states.row(0)
    }

    pub fn last(&self) -> &[T] {
        self.states.row(self.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub demos: Vec<Demo<T>>,
    pub units: Units,
}

/// `normalized = (raw + shift) ⊙ scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec<T> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> NormalizationSpec<T> {
    pub fn identity(dim: usize) -> Self {
        NormalizationSpec {
            shift: vec![T::zero(); dim],
            scale: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((&v, &s), &k)| (v + s) * k)
            .collect()
    }

    pub fn invert(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((&v, &s), &k)| v / k - s)
            .collect()
    }
}

impl<T: Real> Dataset<T> {
    pub fn new(name: impl Into<String>, demos: Vec<Demo<T>>, units: Units) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::invalid("dataset has no demonstrations"))?;
        let dim = first.states.cols();
        if dim == 0 {
            return Err(Error::invalid("dataset states have no coordinates"));
        }
        for d in &demos {
            if d.states.cols() != dim
                || d.states.rank() != 2
                || d.is_empty()
                || d.t.len() != d.len()
            {
                return Err(Error::invalid(format!(
                    "demonstration `{}` is malformed",
                    d.id
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            demos,
            units,
        })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.demos[0].states.cols()
    }

    pub fn inits(&self) -> Vec<Vec<T>> {
        self.demos.iter().map(|d| d.initial().to_vec()).collect()
    }

    pub fn trajectories(&self) -> Vec<Tensor<T>> {
        self.demos.iter().map(|d| d.states.clone()).collect()
    }

    /// Mean of the demos' final states.
    pub fn target(&self) -> Vec<T> {
        let m = T::from_usize_lossy(self.len());
        let mut acc = vec![T::zero(); self.dim()];
        for d in &self.demos {
            for (a, &v) in acc.iter_mut().zip(d.last()) {
                *a = *a + v;
            }
        }
        acc.into_iter().map(|v| v / m).collect()
    }

    /// Largest distance between any demo's final state and the common target.
    pub fn target_spread(&self) -> T {
        let target = self.target();
        self.demos
            .iter()
            .map(|d| linalg::dist(d.last(), &target))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Shift the common target to the origin and scale every coordinate into
    /// `[−1, 1]`. Already-normalized data comes back unchanged with the
    /// identity spec.
    pub fn normalize(&self) -> Result<(Dataset<T>, NormalizationSpec<T>)> {
        if self.units == Units::Normalized {
            return Ok((self.clone(), NormalizationSpec::identity(self.dim())));
        }
        let spread = self.target_spread();
        if spread.as_f64() > TARGET_TOL {
            return Err(Error::invalid(format!(
                "demonstrations do not share a common target (spread {spread:e})"
            )));
        }
        let target = self.target();
        let dim = self.dim();
        let mut extent = vec![T::zero(); dim];
        for d in &self.demos {
            for i in 0..d.len() {
                for (k, (&v, &c)) in d.states.row(i).iter().zip(&target).enumerate() {
                    extent[k] = extent[k].max((v - c).abs());
                }
            }
        }
        let spec = NormalizationSpec {
            shift: target.iter().map(|&v| -v).collect(),
            scale: extent
                .into_iter()
                .map(|e| {
                    if e > T::zero() {
                        T::one() / e
                    } else {
                        T::one()
                    }
                })
                .collect(),
        };
        Ok((self.map_states(|y| spec.apply(y), Units::Normalized), spec))
    }

    /// Inverse of [`Dataset::normalize`].
    pub fn denormalize(&self, spec: &NormalizationSpec<T>) -> Dataset<T> {
        self.map_states(|y| spec.invert(y), Units::Raw)
    }

    fn map_states(&self, f: impl Fn(&[T]) -> Vec<T>, units: Units) -> Dataset<T> {
        let demos = self
            .demos
            .iter()
            .map(|d| {
                let rows: Vec<T> = (0..d.len()).flat_map(|i| f(d.states.row(i))).collect();
                Demo {
                    id: d.id.clone(),
                    t: d.t.clone(),
                    states: Tensor::raw(d.states.shape().to_vec(), rows),
                }
            })
            .collect();
        Dataset {
            name: self.name.clone(),
            demos,
            units,
        }
    }

    /// Linear interpolation of every demo onto `h` points equally spaced in
    /// index fraction. Endpoints are copied exactly.
    pub fn resample(&self, h: usize) -> Result<Dataset<T>> {
        if h < 2 {
            return Err(Error::invalid(format!(
                "resampling needs at least 2 points, got {h}"
            )));
        }
        let demos = self
            .demos
            .iter()
            .map(|d| {
                let n = d.len();
                let dim = d.states.cols();
                let mut rows = Vec::with_capacity(h * dim);
                let mut t = Vec::with_capacity(h);
                for k in 0..h {
                    let (lo, hi, frac) = interp_index(k, h, n);
                    let w = T::c(frac);
                    t.push(d.t[lo] + (d.t[hi] - d.t[lo]) * w);
                    for (&a, &b) in d.states.row(lo).iter().zip(d.states.row(hi)) {
                        rows.push(if frac == 0.0 { a } else { a + (b - a) * w });
                    }
                }
                Demo {
                    id: d.id.clone(),
                    t,
                    states: Tensor::raw(vec![h, dim], rows),
                }
            })
            .collect();
        Ok(Dataset {
            name: self.name.clone(),
            demos,
            units: self.units,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let dim = self.dim();
        let mut out = String::from("demo_id,t");
        for k in 0..dim {
            let _ = write!(out, ",y{k}");
        }
        out.push('\n');
        for d in &self.demos {
            for i in 0..d.len() {
                let _ = write!(out, "{},{}", d.id, d.t[i]);
                for v in d.states.row(i) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Dataset<T>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::parse_csv(&text, &path.display().to_string(), name)
    }

    /// Parses the `demo_id,t,y0,…` format. Rows are grouped by demo id in
    /// order of first appearance; time must increase strictly within a demo.
    pub fn parse_csv(text: &str, source: &str, name: String) -> Result<Dataset<T>> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "demo_id" || cols[1] != "t" {
            return Err(perr(hline + 1, "header must be `demo_id,t,y0,...`".into()));
        }
        let dim = cols.len() - 2;
        for (k, c) in cols[2..].iter().enumerate() {
            if *c != format!("y{k}") {
                return Err(perr(
                    hline + 1,
                    format!("expected column `y{k}`, found `{c}`"),
                ));
            }
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, (Vec<T>, Vec<T>)> = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(perr(
                    lineno,
                    format!("expected {} columns, found {}", cols.len(), fields.len()),
                ));
            }
            let parse = |s: &str| -> Result<T> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| perr(lineno, format!("`{s}` is not a number")))?;
                if !v.is_finite() {
                    return Err(perr(lineno, format!("non-finite value `{s}`")));
                }
                Ok(T::c(v))
            };
            let id = fields[0].to_string();
            if id.is_empty() {
                return Err(perr(lineno, "empty demo_id".into()));
            }
            let t = parse(fields[1])?;
            let entry = groups.entry(id.clone()).or_insert_with(|| {
                order.push(id.clone());
                (Vec::new(), Vec::new())
            });
            if let Some(&prev) = entry.0.last() {
                if !(t > prev) {
                    return Err(perr(
                        lineno,
                        format!("time {t} does not increase within demo `{id}`"),
                    ));
                }
            }
            entry.0.push(t);
            for f in &fields[2..] {
                entry.1.push(parse(f)?);
            }
        }
        if order.is_empty() {
            return Err(perr(hline + 1, "no data rows".into()));
        }
        let demos = order
            .into_iter()
            .map(|id| {
                let (t, data) = groups.remove(&id).expect("grouped id");
                let n = t.len();
                Demo {
                    id,
                    t,
                    states: Tensor::raw(vec![n, dim], data),
                }
            })
            .collect();
        let ds = Dataset::new(name, demos, Units::Raw)?;
        let spread = ds.target_spread();
        if spread.as_f64() > TARGET_TOL {
            log::warn!("{source}: demonstrations end at different states (spread {spread:e})");
        }
        Ok(ds)
    }
}

/// Index pair and weight for sample `k` of `h` over a length-`n` sequence.
fn interp_index(k: usize, h: usize, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    if k == h - 1 {
        return (n - 1, n - 1, 0.0);
    }
    let pos = k as f64 * (n - 1) as f64 / (h - 1) as f64;
    let lo = (pos.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Sine,
    SCurve,
    Line,
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Sine => "sine",
            MotionKind::SCurve => "s_curve",
            MotionKind::Line => "line",
        })
    }
}

impl FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(MotionKind::Sine),
            "s_curve" | "s-curve" | "scurve" => Ok(MotionKind::SCurve),
            "line" => Ok(MotionKind::Line),
            _ => Err(Error::invalid(format!(
                "unknown motion kind `{s}` (expected sine, s_curve or line)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: MotionKind,
    pub demos: usize,
    pub horizon: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Parametric motions ending at the origin. Demo `m` starts at a seeded
/// perturbation of a common start point; time runs over `[0, 1]`.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset<f64>> {
    if spec.demos == 0 || spec.horizon < 2 || spec.dim == 0 || !(spec.noise_std >= 0.0) {
        return Err(Error::invalid(
            "synthesis needs M ≥ 1, H ≥ 2, dim ≥ 1 and noise ≥ 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let base: Vec<f64> = (0..dim)
        .map(|k| match k {
            0 => -1.0,
            1 => 0.6,
            _ => 0.4 * if k % 2 == 0 { 1.0 } else { -1.0 },
        })
        .collect();
    let h = spec.horizon;
    let mut demos = Vec::with_capacity(spec.demos);
    for m in 0..spec.demos {
        let start: Vec<f64> = base.iter().map(|&b| b + 0.1 * normal(&mut rng)).collect();
        // Offset direction: start rotated by a quarter turn in the first plane.
        let mut dir = vec![0.0; dim];
        if dim == 1 {
            dir[0] = 1.0;
        } else {
            dir[0] = -start[1];
            dir[1] = start[0];
            let n = linalg::norm2(&dir);
            dir.iter_mut().for_each(|v| *v /= n);
        }
        let amp = 0.3 * linalg::norm2(&start);
        let mut rows = Vec::with_capacity(h * dim);
        let mut t = Vec::with_capacity(h);
        for i in 0..h {
            let tau = i as f64 / (h - 1) as f64;
            let s = 1.0 - (1.0 - tau) * (1.0 - tau);
            let wiggle = match spec.kind {
                MotionKind::Line => 0.0,
                MotionKind::Sine => amp * (2.0 * std::f64::consts::PI * s).sin(),
                MotionKind::SCurve => amp * (std::f64::consts::PI * s).sin() * (1.0 - 2.0 * s),
            };
            let envelope = (std::f64::consts::PI * s).sin();
            for k in 0..dim {
                let mut v = (1.0 - s) * start[k] + wiggle * dir[k];
                if spec.noise_std > 0.0 {
                    v += spec.noise_std * envelope * normal(&mut rng);
                }
                rows.push(if i == h - 1 { 0.0 } else { v });
            }
            t.push(tau);
        }
        demos.push(Demo {
            id: m.to_string(),
            t,
            states: Tensor::raw(vec![h, dim], rows),
        });
    }
    Dataset::new(format!("{}", spec.kind), demos, Units::Raw)
}

/// Draws out-of-sample initial states.
///
/// Hypersphere mode picks a demo uniformly and a point uniformly in the ball
/// of radius `radius_scale·‖y0^m‖` around its start. With `radius_scale = 0`
/// the dataset's own initial states are returned, in order. Region mode
/// draws uniformly (by rejection) from the multi-focal region whose scale is
/// the largest focal sum over those balls.
pub fn sample_oos_inits<T: Real>(ds: &Dataset<T>, spec: &SamplerSpec) -> Result<Vec<Vec<T>>> {
    if !(spec.radius_scale >= 0.0 && spec.radius_scale.is_finite()) {
        return Err(Error::invalid("radius scale must be non-negative"));
    }
    let inits: Vec<Vec<f64>> = ds
        .inits()
        .into_iter()
        .map(|v| v.into_iter().map(|x| x.as_f64()).collect())
        .collect();
    let cast = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::c).collect() };
    if spec.radius_scale == 0.0 {
        return Ok(ds.inits());
    }
    if inits.iter().all(|y| linalg::norm2(y) == 0.0) {
        return Err(Error::invalid(
            "every initial state is at the origin; sampling radius is degenerate",
        ));
    }
    let dim = ds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ball = |rng: &mut ChaCha8Rng, centre: &[f64], radius: f64| -> Vec<f64> {
        let dir: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = linalg::norm2(&dir).max(f64::MIN_POSITIVE);
        let u: f64 = rng.random();
        let r = radius * u.powf(1.0 / dim as f64);
        centre
            .iter()
            .zip(&dir)
            .map(|(&c, &d)| c + r * d / n)
            .collect()
    };
    match spec.mode {
        SamplerMode::Hypersphere => Ok((0..spec.count)
            .map(|_| {
                let m = rng.random_range(0..inits.len());
                let radius = spec.radius_scale * linalg::norm2(&inits[m]);
                cast(ball(&mut rng, &inits[m], radius))
            })
            .collect()),
        SamplerMode::RegionUniform => {
            let mean_norm =
                inits.iter().map(|y| linalg::norm2(y)).sum::<f64>() / inits.len() as f64;
            let reach = spec.radius_scale * mean_norm;
            let r = inits
                .iter()
                .map(|y| focal_sum(&inits, y))
                .fold(0.0f64, f64::max)
                + inits.len() as f64 * reach;
            let centre = &inits[0];
            let mut out = Vec::with_capacity(spec.count);
            let max_tries = 100_000usize.saturating_mul(spec.count.max(1));
            let mut tries = 0;
            while out.len() < spec.count {
                tries += 1;
                if tries > max_tries {
                    return Err(Error::invalid("region sampler rejected too many draws"));
                }
                let p: Vec<f64> = centre
                    .iter()
                    .map(|&c| c + r * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                if focal_sum(&inits, &p) <= r {
                    out.push(cast(p));
                }
            }
            Ok(out)
        }
    }
}
