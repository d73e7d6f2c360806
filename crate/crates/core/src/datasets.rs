//! Synthetic target distributions, gluon-jet ingestion, particle
//! initialization and CSV I/O for point sets.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array2, Array3, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_bandwidth, Bandwidth};
use crate::sample::SampleMatrix;
use crate::seed;

pub const GLUON_JETS: usize = 177_252;
pub const GLUON_PARTICLES: usize = 30;
pub const GLUON_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MickeyParams {
    pub head_radius: f64,
    pub ear_radius: f64,
    /// Ear centers sit at `(+-ear_offset, ear_offset)`.
    pub ear_offset: f64,
}

impl Default for MickeyParams {
    fn default() -> Self {
        MickeyParams {
            head_radius: 1.0,
            ear_radius: 0.45,
            ear_offset: 0.9,
        }
    }
}

impl MickeyParams {
    fn disks(&self) -> [([f64; 2], f64); 3] {
        [
            ([0.0, 0.0], self.head_radius),
            ([-self.ear_offset, self.ear_offset], self.ear_radius),
            ([self.ear_offset, self.ear_offset], self.ear_radius),
        ]
    }

    pub fn in_head(&self, p: [f64; 2]) -> bool {
        p[0] * p[0] + p[1] * p[1] <= self.head_radius * self.head_radius
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.disks()
            .iter()
            .any(|(c, r)| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r)
    }
}

pub fn sample_mickey(n: usize, seed: u64, params: &MickeyParams) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if !(params.head_radius > 0.0 && params.ear_radius > 0.0) {
        return Err(Error::invalid("disk radii must be positive"));
    }
    let disks = params.disks();
    let lo = disks.map(|(c, r)| [c[0] - r, c[1] - r]);
    let hi = disks.map(|(c, r)| [c[0] + r, c[1] + r]);
    let (x0, y0) = (lo.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), lo.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min));
    let (x1, y1) = (hi.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max), hi.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max));

    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((n, 2));
    let mut filled = 0;
    while filled < n {
        let p = [rng.random_range(x0..x1), rng.random_range(y0..y1)];
        if params.contains(p) {
            out[[filled, 0]] = p[0];
            out[[filled, 1]] = p[1];
            filled += 1;
        }
    }
    SampleMatrix::new(out)
}

/// Two half-annuli: the upper one centered at the origin and the lower one
/// centered at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoMoonsParams {
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub offset: [f64; 2],
}

impl Default for TwoMoonsParams {
    fn default() -> Self {
        TwoMoonsParams {
            inner_radius: 0.8,
            outer_radius: 1.2,
            offset: [1.0, 0.4],
        }
    }
}

impl TwoMoonsParams {
    pub fn in_upper(&self, p: [f64; 2]) -> bool {
        let r2 = p[0] * p[0] + p[1] * p[1];
        p[1] >= 0.0 && r2 >= self.inner_radius.powi(2) && r2 <= self.outer_radius.powi(2)
    }

    pub fn in_lower(&self, p: [f64; 2]) -> bool {
        let q = [p[0] - self.offset[0], self.offset[1] - p[1]];
        self.in_upper(q)
    }

    fn boundary(&self, lower: bool, per_edge: usize) -> Vec<[f64; 2]> {
        let (ri, ro) = (self.inner_radius, self.outer_radius);
        let mut pts = Vec::with_capacity(4 * per_edge);
        for k in 0..per_edge {
            let t = k as f64 / (per_edge - 1) as f64;
            let th = PI * t;
            let r = ri + (ro - ri) * t;
            pts.push([ri * th.cos(), ri * th.sin()]);
            pts.push([ro * th.cos(), ro * th.sin()]);
            pts.push([r, 0.0]);
            pts.push([-r, 0.0]);
        }
        if lower {
            for p in pts.iter_mut() {
                *p = [p[0] + self.offset[0], self.offset[1] - p[1]];
            }
        }
        pts
    }

    /// Rejects parameters whose moons overlap; returns the (discretized)
    /// distance between them.
    pub fn validate(&self) -> Result<f64> {
        if !(self.inner_radius > 0.0 && self.outer_radius > self.inner_radius) {
            return Err(Error::invalid("moon radii must satisfy 0 < inner < outer"));
        }
        let a = self.boundary(false, 1000);
        let b = self.boundary(true, 1000);
        if a.iter().any(|&p| self.in_lower(p)) || b.iter().any(|&p| self.in_upper(p)) {
            return Err(Error::invalid("two-moons parameters make the components intersect"));
        }
        let mut gap = f64::INFINITY;
        for p in &a {
            for q in &b {
                gap = gap.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        Ok(gap)
    }
}

pub fn sample_two_moons(n: usize, seed: u64, params: &TwoMoonsParams) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    params.validate()?;
    let (ri2, ro2) = (params.inner_radius.powi(2), params.outer_radius.powi(2));
    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((n, 2));
    // The moons have equal area; alternating rows keeps the split exact.
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let th = rng.random_range(0.0..PI);
        let r = rng.random_range(ri2..ro2).sqrt();
        let (x, y) = (r * th.cos(), r * th.sin());
        if i % 2 == 0 {
            row[0] = x;
            row[1] = y;
        } else {
            row[0] = x + params.offset[0];
            row[1] = params.offset[1] - y;
        }
    }
    SampleMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArcParams {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Radial noise is `U(0, radial_noise)`.
    pub radial_noise: f64,
    /// Row-major rotation applied to `(r cos t, r sin t, 0)`.
    pub rotation: [[f64; 3]; 3],
}

impl Default for ArcParams {
    fn default() -> Self {
        ArcParams {
            theta_min: 0.0,
            theta_max: PI,
            radial_noise: 1e-2,
            rotation: default_arc_rotation(),
        }
    }
}

/// Rotation by pi/4 about the x axis followed by pi/6 about the z axis.
pub fn default_arc_rotation() -> [[f64; 3]; 3] {
    let (a, b) = (PI / 4.0, PI / 6.0);
    let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
    let rz = [[b.cos(), -b.sin(), 0.0], [b.sin(), b.cos(), 0.0], [0.0, 0.0, 1.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| rz[i][k] * rx[k][j]).sum();
        }
    }
    r
}

pub fn sample_arc(n: usize, seed: u64, params: &ArcParams) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if !(params.theta_max > params.theta_min) || params.radial_noise < 0.0 {
        return Err(Error::invalid("arc needs theta_min < theta_max and nonnegative noise"));
    }
    let rot = params.rotation;
    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((n, 3));
    for mut row in out.rows_mut() {
        let th = rng.random_range(params.theta_min..params.theta_max);
        let r = 1.0 + params.radial_noise * rng.random::<f64>();
        let p = [r * th.cos(), r * th.sin(), 0.0];
        for i in 0..3 {
            row[i] = (0..3).map(|k| rot[i][k] * p[k]).sum();
        }
    }
    SampleMatrix::new(out)
}

/// Uniform on the unit half-sphere `{|x| = 1, x_{d-1} >= 0}` in `R^d`.
pub fn sample_hypersemisphere(n: usize, d: usize, seed: u64) -> Result<SampleMatrix> {
    if n == 0 || d < 2 {
        return Err(Error::invalid("hypersemisphere needs n >= 1 and d >= 2"));
    }
    let mut rng = seed::rng(seed);
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        let norm = loop {
            row.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        row /= norm;
        if row[d - 1] < 0.0 {
            row[d - 1] = -row[d - 1];
        }
    }
    SampleMatrix::new(out)
}

/// Per-coordinate affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    /// Population mean and standard deviation of each column. Constant
    /// columns get unit scale.
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Normalization {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.scale[j] + self.mean[j]);
        }
        out
    }
}

/// Reads the `jets x 30 x 4` gluon array from a `.npy` file (f32 or f64) and
/// returns the first three features of one particle slot, `jets x 3`.
pub fn load_gluon_slice(path: &Path, particle_index: usize, jets: usize) -> Result<Array2<f64>> {
    if particle_index >= GLUON_PARTICLES {
        return Err(Error::invalid(format!(
            "particle index {particle_index} out of range 0..{GLUON_PARTICLES}"
        )));
    }
    let expected = format!("expected a .npy array of shape {jets}x{GLUON_PARTICLES}x{GLUON_FEATURES}");
    let data: Array3<f64> = match ndarray_npy::read_npy::<_, Array3<f64>>(path) {
        Ok(a) => a,
        Err(_) => ndarray_npy::read_npy::<_, Array3<f32>>(path)
            .map(|a| a.mapv(f64::from))
            .map_err(|e| Error::Format(format!("{}: {e}; {expected}", path.display())))?,
    };
    if data.dim() != (jets, GLUON_PARTICLES, GLUON_FEATURES) {
        let (a, b, c) = data.dim();
        return Err(Error::Format(format!(
            "{}: found shape {a}x{b}x{c}; {expected}",
            path.display()
        )));
    }
    Ok(data.slice(s![.., particle_index, 0..3]).to_owned())
}

/// Standardized random subsample of one gluon particle slot.
///
/// The normalizer is fitted on the returned subsample.
pub fn load_gluon(
    path: &Path,
    particle_index: usize,
    n_train: usize,
    seed: u64,
    jets: usize,
) -> Result<(SampleMatrix, Normalization)> {
    let raw = load_gluon_slice(path, particle_index, jets)?;
    if n_train == 0 || n_train > raw.nrows() {
        return Err(Error::invalid(format!(
            "n_train must be in 1..={}, got {n_train}",
            raw.nrows()
        )));
    }
    let mut rng = seed::rng(seed);
    let idx = index::sample(&mut rng, raw.nrows(), n_train).into_vec();
    let sub = raw.select(Axis(0), &idx);
    let norm = Normalization::fit(&sub);
    Ok((SampleMatrix::new(norm.apply(&sub))?, norm))
}

/// Disjoint random training and reference draws from one gluon particle
/// slot, both standardized with the normalizer fitted on the training draw.
pub fn gluon_split(
    path: &Path,
    particle_index: usize,
    n_train: usize,
    n_reference: usize,
    seed: u64,
    jets: usize,
) -> Result<(SampleMatrix, SampleMatrix, Normalization)> {
    let raw = load_gluon_slice(path, particle_index, jets)?;
    if n_train == 0 || n_reference == 0 || n_train + n_reference > raw.nrows() {
        return Err(Error::invalid(format!(
            "need 1 <= n_train, n_reference and n_train + n_reference <= {}",
            raw.nrows()
        )));
    }
    let mut rng = seed::rng(seed);
    let idx = index::sample(&mut rng, raw.nrows(), n_train + n_reference).into_vec();
    let train = raw.select(Axis(0), &idx[..n_train]);
    let reference = raw.select(Axis(0), &idx[n_train..]);
    let norm = Normalization::fit(&train);
    Ok((
        SampleMatrix::new(norm.apply(&train))?,
        SampleMatrix::new(norm.apply(&reference))?,
        norm,
    ))
}

/// Particle initialization policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitPolicy {
    /// Training points drawn without replacement (with replacement when more
    /// particles than points are requested) plus `N(0, eps / 100)` jitter.
    SubsampleJitter,
    UniformBox { lo: f64, hi: f64 },
    Explicit { points: SampleMatrix },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::SubsampleJitter
    }
}

/// `eps` sets the jitter scale; the median heuristic on `train` is used when absent.
pub fn init_particles(
    policy: &InitPolicy,
    m: usize,
    d: usize,
    seed: u64,
    train: Option<&SampleMatrix>,
    eps: Option<Bandwidth>,
) -> Result<SampleMatrix> {
    let mut rng = seed::rng(seed);
    match policy {
        InitPolicy::Explicit { points } => Ok(points.clone()),
        InitPolicy::UniformBox { lo, hi } => {
            if !(lo < hi) || m == 0 || d == 0 {
                return Err(Error::invalid("uniform box needs lo < hi and positive sizes"));
            }
            SampleMatrix::new(Array2::from_shape_fn((m, d), |_| rng.random_range(*lo..*hi)))
        }
        InitPolicy::SubsampleJitter => {
            let train = train.ok_or_else(|| {
                Error::invalid("subsample-jitter initialization needs training data")
            })?;
            if m == 0 {
                return Err(Error::invalid("particle count must be positive"));
            }
            if train.dim() != d {
                return Err(Error::invalid("training data dimension does not match"));
            }
            let eps = match eps {
                Some(e) => e,
                None => median_bandwidth(train)?,
            };
            let sd = eps.value().sqrt() / 10.0;
            let n = train.count();
            let idx: Vec<usize> = if m <= n {
                index::sample(&mut rng, n, m).into_vec()
            } else {
                (0..m).map(|_| rng.random_range(0..n)).collect()
            };
            let mut out = train.as_array().select(Axis(0), &idx);
            out.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
            SampleMatrix::new(out)
        }
    }
}

/// Named dataset with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DatasetSpec {
    Mickey {
        #[serde(default)]
        params: MickeyParams,
    },
    TwoMoons {
        #[serde(default)]
        params: TwoMoonsParams,
    },
    Arc {
        #[serde(default)]
        params: ArcParams,
    },
    Hypersemisphere { d: usize },
    Gluon {
        path: std::path::PathBuf,
        particle_index: usize,
        #[serde(default = "default_jets")]
        jets: usize,
    },
}

fn default_jets() -> usize {
    GLUON_JETS
}

impl DatasetSpec {
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Mickey { .. } => "mickey".into(),
            DatasetSpec::TwoMoons { .. } => "two_moons".into(),
            DatasetSpec::Arc { .. } => "arc".into(),
            DatasetSpec::Hypersemisphere { d } => format!("hypersemisphere_d{d}"),
            DatasetSpec::Gluon { particle_index, .. } => format!("gluon_p{particle_index}"),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Mickey { .. } | DatasetSpec::TwoMoons { .. } => 2,
            DatasetSpec::Arc { .. } | DatasetSpec::Gluon { .. } => 3,
            DatasetSpec::Hypersemisphere { d } => *d,
        }
    }

    /// Draws `n` samples. Gluon data is not synthetic; use [`load_gluon`].
    pub fn generate(&self, n: usize, seed: u64) -> Result<SampleMatrix> {
        match self {
            DatasetSpec::Mickey { params } => sample_mickey(n, seed, params),
            DatasetSpec::TwoMoons { params } => sample_two_moons(n, seed, params),
            DatasetSpec::Arc { params } => sample_arc(n, seed, params),
            DatasetSpec::Hypersemisphere { d } => sample_hypersemisphere(n, *d, seed),
            DatasetSpec::Gluon { .. } => Err(Error::invalid(
                "gluon data is loaded from file, not generated",
            )),
        }
    }
}

pub fn write_csv(path: &Path, x: &SampleMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = (0..x.dim()).map(|j| format!("x_{j}")).collect();
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(fmt)?;
    for row in x.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<SampleMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut cols = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row: Vec<f64> = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), line + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Format(format!("{} row {}: ragged row", path.display(), line + 1)))
            }
            _ => {}
        }
        data.extend(row);
    }
    let cols = cols.ok_or_else(|| Error::Format(format!("{}: no data rows", path.display())))?;
    let rows = data.len() / cols;
    SampleMatrix::new(Array2::from_shape_vec((rows, cols), data).expect("consistent shape"))
}
