//! Closed-form cost model for a morphed sparse kernel and the exhaustive
//! search over merge factors.

use std::cmp::Ordering;

use serde::Serialize;

use crate::convert::structured_matching;
use crate::emu::FragmentShape;
use crate::error::{Error, Result};
use crate::morph::{BlockMeta, Geometry, MAX_MERGE};
use crate::stencil::StencilSpec;

const A100_SPARSE: &str = include_str!("../hardware/a100-sparse.hw");
const A100_DENSE: &str = include_str!("../hardware/a100-dense.hw");

pub const HARDWARE_PRESETS: [&str; 2] = ["a100-sparse", "a100-dense"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardwareDescriptor {
    pub name: String,
    /// Cycles per fragment MMA on one tensor core.
    pub cpi_tcu: f64,
    pub frequency_hz: f64,
    pub n_tcu: f64,
    /// Global-memory bandwidth, bytes/s.
    pub bw_global: f64,
    /// Shared-memory bandwidth, bytes/s.
    pub bw_shared: f64,
    pub fragment: FragmentShape,
    pub bytes_per_element: f64,
}

impl HardwareDescriptor {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cpi_tcu", self.cpi_tcu),
            ("frequency_hz", self.frequency_hz),
            ("n_tcu", self.n_tcu),
            ("bw_global", self.bw_global),
            ("bw_shared", self.bw_shared),
            ("bytes_per_element", self.bytes_per_element),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHardware(format!("{name} must be positive, got {v}")));
            }
        }
        FragmentShape::new(self.fragment.m, self.fragment.k, self.fragment.n)?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut nums: [Option<f64>; 6] = [None; 6];
        let keys = ["cpi_tcu", "frequency_hz", "n_tcu", "bw_global", "bw_shared", "bytes_per_element"];
        let mut fragment = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            match key {
                "name" => name = Some(value.to_string()),
                "fragment" => fragment = Some(value.parse::<FragmentShape>().map_err(|e| err(e.to_string()))?),
                _ => {
                    let slot =
                        keys.iter().position(|k| *k == key).ok_or_else(|| err(format!("unknown key '{key}'")))?;
                    let v: f64 = value.parse().map_err(|_| err(format!("'{value}' is not a number")))?;
                    nums[slot] = Some(v);
                }
            }
        }
        let missing = |k: &str| Error::Parse { line: 0, msg: format!("missing key '{k}'") };
        let get = |i: usize| nums[i].ok_or_else(|| missing(keys[i]));
        let hw = Self {
            name: name.ok_or_else(|| missing("name"))?,
            cpi_tcu: get(0)?,
            frequency_hz: get(1)?,
            n_tcu: get(2)?,
            bw_global: get(3)?,
            bw_shared: get(4)?,
            fragment: fragment.ok_or_else(|| missing("fragment"))?,
            bytes_per_element: get(5)?,
        };
        hw.validate()?;
        Ok(hw)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "a100-sparse" => Self::parse(A100_SPARSE),
            "a100-dense" => Self::parse(A100_DENSE),
            _ => Err(Error::UnknownPreset(name.to_string())),
        }
    }
}

/// Model output for one `(r1, r2)` candidate. Times in seconds, volumes
/// in bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfEstimate {
    pub r1: usize,
    pub r2: usize,
    pub m_prime: usize,
    pub k_prime: usize,
    /// Shared dimension after zero-column padding and 4-alignment.
    pub k_converted: usize,
    pub n_prime: usize,
    pub padding: usize,
    pub n_mma: usize,
    pub t_compute: f64,
    pub t_memory: f64,
    pub t_total: f64,
    pub data_r: f64,
    pub data_w: f64,
    pub data_trans_r: f64,
    pub data_trans_w: f64,
}

pub fn n_mma(m: usize, k: usize, n: usize, frag: FragmentShape) -> usize {
    m.div_ceil(frag.m) * k.div_ceil(frag.k) * n.div_ceil(frag.n)
}

/// The `m` of the transfer-volume term: the row extent of the input, which
/// is the second-to-last axis (1 for 1-D grids).
pub fn transfer_row_extent(grid_dims: &[usize]) -> usize {
    if grid_dims.len() >= 2 {
        grid_dims[grid_dims.len() - 2]
    } else {
        1
    }
}

/// Zero columns and aligned shared dimension the converter will produce
/// for this geometry.
pub fn converted_k(meta: &BlockMeta) -> Result<(usize, usize)> {
    let p = structured_matching(meta)?.zero_padding();
    let k = meta.segments * meta.blocks * meta.block_size + p;
    Ok((p, k.div_ceil(4) * 4))
}

pub fn estimate(hw: &HardwareDescriptor, grid_dims: &[usize], k: usize, r1: usize, r2: usize) -> Result<PerfEstimate> {
    hw.validate()?;
    let geo = Geometry::new(grid_dims.len(), k, grid_dims, r1, r2)?;
    let meta = BlockMeta {
        segments: geo.kz(),
        blocks: geo.blocks(),
        block_size: geo.block_size(),
        block_row_count: r2,
        block_rows: r1,
        k,
    };
    let (padding, k_converted) = converted_k(&meta)?;
    let (m_prime, k_prime, n_prime) = (geo.m_prime(), geo.k_prime(), geo.n_prime());
    let n_mma = n_mma(m_prime, k_converted, n_prime, hw.fragment);
    let t_compute = n_mma as f64 * hw.cpi_tcu / (hw.frequency_hz * hw.n_tcu);

    let bytes = hw.bytes_per_element;
    let grid_bytes = grid_dims.iter().product::<usize>() as f64 * bytes;
    let (data_r, data_w) = (grid_bytes, grid_bytes);
    let m = transfer_row_extent(grid_dims) as f64;
    let trans = k_prime as f64 * (m / 2.0 + n_prime as f64) * bytes;
    let (data_trans_r, data_trans_w) = (trans, trans);
    let t_memory = ((data_r + data_w) / hw.bw_global).max((data_trans_w + data_trans_r) / hw.bw_shared);
    Ok(PerfEstimate {
        r1,
        r2,
        m_prime,
        k_prime,
        k_converted,
        n_prime,
        padding,
        n_mma,
        t_compute,
        t_memory,
        t_total: t_compute.max(t_memory),
        data_r,
        data_w,
        data_trans_r,
        data_trans_w,
    })
}

/// Candidate merge factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace(Vec<(usize, usize)>);

impl SearchSpace {
    pub fn new(points: Vec<(usize, usize)>) -> Self {
        Self(points)
    }

    /// Every `(r1, r2)` in `[1, max_r]^2`; 1-D kernels only vary `r1`.
    pub fn full(dims: usize, max_r: usize) -> Self {
        let r2_max = if dims == 1 { 1 } else { max_r };
        Self((1..=max_r).flat_map(|r1| (1..=r2_max).map(move |r2| (r1, r2))).collect())
    }

    pub fn default_for(dims: usize) -> Self {
        Self::full(dims, MAX_MERGE)
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub estimate: PerfEstimate,
    /// Zero fraction of the converted kernel matrix.
    pub sparsity: f64,
}

/// Ranking order: model time, then fewer merged outputs, then smaller `r1`.
pub fn rank_order(a: &PerfEstimate, b: &PerfEstimate) -> Ordering {
    a.t_total.total_cmp(&b.t_total).then((a.r1 * a.r2).cmp(&(b.r1 * b.r2))).then(a.r1.cmp(&b.r1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exploration {
    /// All feasible candidates, best first.
    pub ranked: Vec<Candidate>,
    /// Points skipped because the grid is too small for them.
    pub infeasible: Vec<(usize, usize)>,
}

impl Exploration {
    pub fn best(&self) -> &Candidate {
        &self.ranked[0]
    }
}

pub fn explore_layouts(
    hw: &HardwareDescriptor,
    spec: &StencilSpec,
    grid_dims: &[usize],
    space: &SearchSpace,
) -> Result<Exploration> {
    hw.validate()?;
    if grid_dims.len() != spec.dims() {
        return Err(Error::InvalidGrid(format!("{}-D stencil on a {}-D grid", spec.dims(), grid_dims.len())));
    }
    let nnz = spec.nnz() as f64;
    let mut ranked = Vec::new();
    let mut infeasible = Vec::new();
    for &(r1, r2) in space.points() {
        match estimate(hw, grid_dims, spec.k(), r1, r2) {
            Ok(e) => {
                let sparsity = 1.0 - nnz / e.k_converted as f64;
                ranked.push(Candidate { estimate: e, sparsity });
            }
            Err(Error::InvalidMerge { .. }) => infeasible.push((r1, r2)),
            Err(e) => return Err(e),
        }
    }
    if ranked.is_empty() {
        return Err(Error::EmptySearchSpace);
    }
    ranked.sort_by(|a, b| rank_order(&a.estimate, &b.estimate));
    Ok(Exploration { ranked, infeasible })
}

/// Gigastencil updates per second for `iterations` sweeps over a grid of
/// `points` cells taking `seconds`.
pub fn model_gstencils(iterations: u64, grid_dims: &[usize], seconds: f64) -> f64 {
    let cells: f64 = grid_dims.iter().map(|d| *d as f64).product();
    iterations as f64 * cells / (seconds * 1e9)
}
