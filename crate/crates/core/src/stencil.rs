//! Stencil kernels, grids, the direct (reference) evaluator and the
//! throughput metric.
//!
//! Offsets and grid extents are listed slowest axis first: `[x]` in 1D,
//! `[y, x]` in 2D and `[z, y, x]` in 3D. Grids are row-major in that order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Star,
    Box,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Shape::Star),
            "box" => Ok(Shape::Box),
            other => Err(Error::InvalidStencil(format!("unknown shape `{other}`"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Star => "star",
            Shape::Box => "box",
        })
    }
}

/// A constant-coefficient stencil: a set of neighbour offsets with weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StencilSpec {
    name: String,
    dims: usize,
    shape: Shape,
    k: usize,
    /// Sorted lexicographically by offset.
    points: Vec<(Vec<i32>, f64)>,
}

impl StencilSpec {
    pub fn new(
        name: impl Into<String>,
        dims: usize,
        shape: Shape,
        k: usize,
        points: Vec<(Vec<i32>, f64)>,
    ) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(Error::InvalidStencil(format!("dims must be 1, 2 or 3, got {dims}")));
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidStencil(format!("kernel extent k={k} must be odd")));
        }
        if points.is_empty() {
            return Err(Error::InvalidStencil("stencil has no points".into()));
        }
        let radius = (k / 2) as i32;
        let mut map = BTreeMap::new();
        for (offset, weight) in points {
            if offset.len() != dims {
                return Err(Error::InvalidStencil(format!(
                    "offset {offset:?} has {} components, expected {dims}",
                    offset.len()
                )));
            }
            if offset.iter().any(|o| o.abs() > radius) {
                return Err(Error::InvalidStencil(format!("offset {offset:?} lies outside radius {radius}")));
            }
            if shape == Shape::Star && offset.iter().filter(|o| **o != 0).count() > 1 {
                return Err(Error::InvalidStencil(format!("offset {offset:?} is off-axis in a star stencil")));
            }
            if !weight.is_finite() {
                return Err(Error::InvalidStencil(format!("weight {weight} at {offset:?}")));
            }
            if map.insert(offset.clone(), weight).is_some() {
                return Err(Error::InvalidStencil(format!("duplicate offset {offset:?}")));
            }
        }
        Ok(Self { name: name.into(), dims, shape, k, points: map.into_iter().collect() })
    }

    /// Single-point stencil with weight 1 at the origin.
    pub fn identity(dims: usize) -> Self {
        Self::new("identity", dims, Shape::Box, 1, vec![(vec![0; dims], 1.0)]).expect("identity stencil is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> usize {
        self.k / 2
    }

    pub fn points(&self) -> &[(Vec<i32>, f64)] {
        &self.points
    }

    pub fn weight(&self, offset: &[i32]) -> f64 {
        self.points.binary_search_by(|(o, _)| o.as_slice().cmp(offset)).map(|i| self.points[i].1).unwrap_or(0.0)
    }

    /// Number of nonzero weights.
    pub fn nnz(&self) -> usize {
        self.points.iter().filter(|(_, w)| *w != 0.0).count()
    }

    /// Weights over the full `k^dims` hypercube, row-major with the slowest
    /// axis first; absent offsets contribute explicit zeros.
    pub fn dense_weights(&self) -> Vec<f64> {
        let k = self.k;
        let r = self.radius() as i32;
        let total = k.pow(self.dims as u32);
        let mut out = vec![0.0; total];
        for (offset, w) in &self.points {
            let idx = offset.iter().fold(0usize, |acc, o| acc * k + (o + r) as usize);
            out[idx] = *w;
        }
        out
    }
}

/// Storage precision tag of a grid. The reference evaluator ignores it and
/// always works in f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPrecision {
    #[default]
    Exact64,
    Emulated16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    values: Vec<f64>,
    precision: GridPrecision,
}

impl Grid {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidGrid(format!("{} axes", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero extent in {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != values.len() {
            return Err(Error::InvalidGrid(format!("{} values for extents {dims:?}", values.len())));
        }
        Ok(Self { dims, values, precision: GridPrecision::Exact64 })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = dims.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            values.push(f(&idx));
            for axis in (0..dims.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < dims[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Self::new(dims, values)
    }

    pub fn with_precision(mut self, precision: GridPrecision) -> Self {
        self.precision = precision;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn precision(&self) -> GridPrecision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, coord: &[usize]) -> usize {
        coord.iter().zip(&self.dims).fold(0, |acc, (c, d)| acc * d + c)
    }

    pub fn get(&self, coord: &[usize]) -> f64 {
        self.values[self.flat_index(coord)]
    }
}

/// Checks that every grid axis admits at least one full kernel placement.
pub fn check_extents(dims: &[usize], k: usize) -> Result<()> {
    for (axis, &extent) in dims.iter().enumerate() {
        if extent < k {
            return Err(Error::GridTooSmall { axis, extent, k });
        }
    }
    Ok(())
}

/// Reference evaluator: applies the stencil `steps` times with valid-region
/// semantics, so every axis shrinks by `k - 1` per step. Accumulates in f64
/// in offset order regardless of the grid's precision tag.
pub fn direct_apply(spec: &StencilSpec, grid: &Grid, steps: usize) -> Result<Grid> {
    if steps == 0 {
        return Err(Error::ZeroSteps);
    }
    if grid.dims().len() != spec.dims() {
        return Err(Error::InvalidGrid(format!("{}-D grid for a {}-D stencil", grid.dims().len(), spec.dims())));
    }
    let mut current = grid.clone();
    for _ in 0..steps {
        current = apply_once(spec, &current)?;
    }
    Ok(current.with_precision(grid.precision()))
}

fn apply_once(spec: &StencilSpec, grid: &Grid) -> Result<Grid> {
    let k = spec.k();
    check_extents(grid.dims(), k)?;
    let r = spec.radius() as i64;
    let in_dims = grid.dims();
    let out_dims: Vec<usize> = in_dims.iter().map(|n| n - k + 1).collect();

    // Row-major strides of the input grid.
    let mut strides = vec![1usize; in_dims.len()];
    for axis in (0..in_dims.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * in_dims[axis + 1];
    }
    let taps: Vec<(usize, f64)> = spec
        .points()
        .iter()
        .map(|(offset, w)| {
            let delta = offset.iter().zip(&strides).map(|(o, s)| ((*o as i64 + r) as usize) * s).sum();
            (delta, *w)
        })
        .collect();

    let values = grid.values();
    Grid::from_fn(out_dims, |out| {
        let base: usize = out.iter().zip(&strides).map(|(c, s)| c * s).sum();
        taps.iter().map(|(d, w)| w * values[base + d]).sum()
    })
}

/// Folds `t` successive applications into one kernel by self-convolution
/// of the weights. The fused extent is `t * (k - 1) + 1`.
pub fn fuse_time_steps(spec: &StencilSpec, t: usize) -> Result<StencilSpec> {
    if t == 0 {
        return Err(Error::ZeroSteps);
    }
    if t == 1 {
        return Ok(spec.clone());
    }
    if spec.k() == 1 {
        // A single tap stays a single tap, with its weight raised to t.
        let (offset, w) = &spec.points()[0];
        return StencilSpec::new(spec.name(), spec.dims(), spec.shape(), 1, vec![(offset.clone(), w.powi(t as i32))]);
    }
    let base: BTreeMap<Vec<i32>, f64> = spec.points().iter().cloned().collect();
    let mut acc = base.clone();
    for _ in 1..t {
        let mut next: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
        for (a, wa) in &acc {
            for (b, wb) in &base {
                let sum: Vec<i32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                *next.entry(sum).or_insert(0.0) += wa * wb;
            }
        }
        acc = next;
    }
    let k = t * (spec.k() - 1) + 1;
    let on_axes = acc.keys().all(|o| o.iter().filter(|c| **c != 0).count() <= 1);
    let shape = if on_axes { Shape::Star } else { Shape::Box };
    StencilSpec::new(spec.name(), spec.dims(), shape, k, acc.into_iter().collect())
}

/// Stencil-update throughput: `T * prod(N_i) / (t * 1e9)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Throughput {
    pub gstencils_per_sec: f64,
    pub iterations: u64,
    pub point_counts: Vec<u64>,
    pub seconds: f64,
}

pub fn gstencil_rate(iterations: u64, dims: &[u64], seconds: f64) -> Result<Throughput> {
    if seconds <= 0.0 || !seconds.is_finite() {
        return Err(Error::NonPositiveTime(seconds));
    }
    let points: f64 = dims.iter().map(|d| *d as f64).product();
    Ok(Throughput {
        gstencils_per_sec: iterations as f64 * points / (seconds * 1e9),
        iterations,
        point_counts: dims.to_vec(),
        seconds,
    })
}

/// Benchmark kernel with its reference problem configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub points: usize,
    /// Grid extents of the reference problem, slowest axis first.
    pub problem: &'static [usize],
    pub time_steps: usize,
    /// Thread-block output region, recorded in emitted kernels only.
    pub block: &'static [usize],
}

pub const PRESETS: [Preset; 8] = [
    Preset { name: "Heat-1D", points: 3, problem: &[10_240_000], time_steps: 10_000, block: &[1024] },
    Preset { name: "1D5P", points: 5, problem: &[10_240_000], time_steps: 10_000, block: &[1024] },
    Preset { name: "Heat-2D", points: 5, problem: &[10240, 10240], time_steps: 10240, block: &[32, 64] },
    Preset { name: "Box-2D9P", points: 9, problem: &[10240, 10240], time_steps: 10240, block: &[32, 64] },
    Preset { name: "Star-2D13P", points: 13, problem: &[10240, 10240], time_steps: 10240, block: &[32, 64] },
    Preset { name: "Box-2D49P", points: 49, problem: &[10240, 10240], time_steps: 10240, block: &[32, 64] },
    Preset { name: "Heat-3D", points: 7, problem: &[1024, 1024, 1024], time_steps: 1024, block: &[8, 64] },
    Preset { name: "Box-3D27P", points: 27, problem: &[1024, 1024, 1024], time_steps: 1024, block: &[8, 64] },
];

pub fn find_preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name)).ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

// Binomial smoothing rows; all preset weights are dyadic so that sums over
// dyadic grids stay exact in f64.
const BINOMIAL3: [f64; 3] = [1.0, 2.0, 1.0];
const BINOMIAL5: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
const BINOMIAL7: [f64; 7] = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];

fn outer_box(dims: usize, row: &[f64], scale: f64) -> Vec<(Vec<i32>, f64)> {
    let k = row.len();
    let r = (k / 2) as i32;
    let total = k.pow(dims as u32);
    (0..total)
        .map(|mut idx| {
            let mut offset = vec![0i32; dims];
            let mut w = scale;
            for axis in (0..dims).rev() {
                let i = idx % k;
                idx /= k;
                offset[axis] = i as i32 - r;
                w *= row[i];
            }
            (offset, w)
        })
        .collect()
}

fn star(dims: usize, center: f64, arm: &[f64]) -> Vec<(Vec<i32>, f64)> {
    let mut pts = vec![(vec![0; dims], center)];
    for axis in 0..dims {
        for (d, w) in arm.iter().enumerate() {
            for sign in [-1i32, 1] {
                let mut o = vec![0; dims];
                o[axis] = sign * (d as i32 + 1);
                pts.push((o, *w));
            }
        }
    }
    pts
}

/// Builds the stencil for a named benchmark kernel.
pub fn preset(name: &str) -> Result<StencilSpec> {
    let p = find_preset(name)?;
    let (dims, shape, k, points) = match p.name {
        "Heat-1D" => (1, Shape::Star, 3, outer_box(1, &BINOMIAL3, 0.25)),
        "1D5P" => (1, Shape::Star, 5, outer_box(1, &BINOMIAL5, 1.0 / 16.0)),
        "Heat-2D" => (2, Shape::Star, 3, star(2, 0.5, &[0.125])),
        "Box-2D9P" => (2, Shape::Box, 3, outer_box(2, &BINOMIAL3, 1.0 / 16.0)),
        "Star-2D13P" => (2, Shape::Star, 7, star(2, 0.25, &[3.0 / 32.0, 2.0 / 32.0, 1.0 / 32.0])),
        "Box-2D49P" => (2, Shape::Box, 7, outer_box(2, &BINOMIAL7, 1.0 / 4096.0)),
        "Heat-3D" => (3, Shape::Star, 3, star(3, 0.25, &[0.125])),
        "Box-3D27P" => (3, Shape::Box, 3, outer_box(3, &BINOMIAL3, 1.0 / 64.0)),
        _ => unreachable!("preset table and builder out of sync"),
    };
    StencilSpec::new(p.name, dims, shape, k, points)
}

/// Parses the plain-text stencil document:
///
/// ```text
/// # comment
/// name  = my-kernel
/// dims  = 2
/// shape = star
/// k     = 3
/// point = 0 0 : 0.5
/// point = -1 0 : 0.125
/// ```
///
/// Offsets are whitespace-separated integers, slowest axis first.
pub fn parse_stencil_spec(text: &str) -> Result<StencilSpec> {
    let mut name = None;
    let mut dims = None;
    let mut shape = None;
    let mut k = None;
    let mut points = Vec::new();

    fn set_once<T>(slot: &mut Option<T>, v: T, key: &str, line: usize) -> Result<()> {
        if slot.replace(v).is_some() {
            return Err(Error::Parse { line, msg: format!("`{key}` given twice") });
        }
        Ok(())
    }

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got `{content}`") })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| Error::Parse { line, msg };
        match key {
            "name" => set_once(&mut name, value.to_string(), key, line)?,
            "dims" => {
                let d = value.parse::<usize>().map_err(|e| bad(format!("dims: {e}")))?;
                set_once(&mut dims, d, key, line)?
            }
            "shape" => {
                let s = value.parse::<Shape>().map_err(|e| bad(e.to_string()))?;
                set_once(&mut shape, s, key, line)?
            }
            "k" => {
                let v = value.parse::<usize>().map_err(|e| bad(format!("k: {e}")))?;
                set_once(&mut k, v, key, line)?
            }
            "point" => {
                let (offs, w) =
                    value.split_once(':').ok_or_else(|| bad("point needs `<offsets> : <weight>`".into()))?;
                let offset = offs
                    .split_whitespace()
                    .map(|t| t.parse::<i32>().map_err(|e| bad(format!("offset `{t}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let weight = w.trim().parse::<f64>().map_err(|e| bad(format!("weight `{}`: {e}", w.trim())))?;
                points.push((offset, weight));
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    let missing = |key: &str| Error::Parse { line: 0, msg: format!("missing `{key}`") };
    StencilSpec::new(
        name.ok_or_else(|| missing("name"))?,
        dims.ok_or_else(|| missing("dims"))?,
        shape.ok_or_else(|| missing("shape"))?,
        k.ok_or_else(|| missing("k"))?,
        points,
    )
}

/// Renders a spec in the document format accepted by [`parse_stencil_spec`].
pub fn format_stencil_spec(spec: &StencilSpec) -> String {
    let mut out =
        format!("name = {}\ndims = {}\nshape = {}\nk = {}\n", spec.name(), spec.dims(), spec.shape(), spec.k());
    for (offset, w) in spec.points() {
        let offs: Vec<String> = offset.iter().map(|o| o.to_string()).collect();
        out.push_str(&format!("point = {} : {w:?}\n", offs.join(" ")));
    }
    out
}
