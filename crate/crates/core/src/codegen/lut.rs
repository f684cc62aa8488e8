//! Host-side address tables.
//!
//! Addresses are element offsets into the *padded* input grid (each axis
//! extended so every tile window is in range) and the padded output grid.
//! The address of `B''[row, col]` is
//! `block_origin[block(col)] + tile_offset[local(col)] + slot_offset[row]`,
//! so the device never divides or takes a modulus.
//!
//! Binary layout (little-endian), written by [`LookupTable::to_bytes`]:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SLUT"
//! 4       4     u32 version (1)
//! 8       12    u32 x3  padded input extents (z, y, x)
//! 20      12    u32 x3  padded output extents (z, y, x)
//! 32      8     u32 x2  tiles per block (y, x)
//! 40      8     u32 x2  merge factors (r1, r2)
//! 48      24    u32 x6  entry counts: slots, tiles, blocks,
//!                       output rows, output tiles, output blocks
//! 72      ...   i32 arrays in that order: slot offsets, tile offsets,
//!               block origins, output row offsets, output tile offsets,
//!               output block origins; -1 marks a zero slot
//! ```

use serde::Serialize;

use crate::convert::Permutation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::morph::{Geometry, MorphedLayout, RowSource};
use crate::stencil::Grid;

/// Slot offset of an appended zero row.
pub const LUT_ZERO: i64 = -1;
pub const LUT_MAGIC: &[u8; 4] = b"SLUT";

/// Output region handled by one thread block, in output points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockConfig {
    pub rows: usize,
    pub cols: usize,
}

impl BlockConfig {
    /// Reads a preset block shape: `[cols]` or `[rows, cols]`.
    pub fn from_extents(extents: &[usize]) -> Result<Self> {
        let cfg = match extents {
            [c] => Self { rows: 1, cols: *c },
            [r, c] => Self { rows: *r, cols: *c },
            _ => return Err(Error::InvalidPlan(format!("block shape {extents:?} needs one or two extents"))),
        };
        if cfg.rows == 0 || cfg.cols == 0 {
            return Err(Error::InvalidPlan("block extents must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn default_for(dims: usize) -> Self {
        match dims {
            1 => Self { rows: 1, cols: 1024 },
            2 => Self { rows: 32, cols: 64 },
            _ => Self { rows: 8, cols: 64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    geometry: Geometry,
    block_config: BlockConfig,
    padded_in: [usize; 3],
    padded_out: [usize; 3],
    /// Tiles per block along (y, x).
    tiles_per_block: (usize, usize),
    /// Blocks along (z, y, x).
    blocks: (usize, usize, usize),
    slot_offsets: Vec<i64>,
    tile_offsets: Vec<i64>,
    block_origins: Vec<i64>,
    out_row_offsets: Vec<i64>,
    out_tile_offsets: Vec<i64>,
    out_block_origins: Vec<i64>,
}

/// Table for `layout` after padding its rows to the permutation length
/// and reordering them by `perm`.
pub fn build_lut(layout: &MorphedLayout, perm: &Permutation, block: BlockConfig) -> Result<LookupTable> {
    let sources = layout.row_sources();
    if perm.len() < sources.len() {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for {} rows",
            perm.len(),
            sources.len()
        )));
    }
    let rows: Vec<RowSource> =
        perm.order().iter().map(|&o| sources.get(o).copied().unwrap_or(RowSource::Zero)).collect();
    LookupTable::from_rows(layout.geometry(), &rows, block)
}

impl LookupTable {
    pub fn from_rows(geo: &Geometry, rows: &[RowSource], block: BlockConfig) -> Result<Self> {
        let (r1, r2) = (geo.r1(), geo.r2());
        let (tz, ty, tx) = geo.tiles();
        let padded_in = [tz + geo.kz() - 1, ty * r2 + geo.ky() - 1, tx * r1 + geo.kx() - 1];
        let padded_out = [tz, ty * r2, tx * r1];
        let total = padded_in.iter().product::<usize>().max(padded_out.iter().product());
        if total > i32::MAX as usize {
            return Err(Error::InvalidPlan(format!("padded grid of {total} elements exceeds 32-bit offsets")));
        }
        let tpb = (block.rows.div_ceil(r2).min(ty), block.cols.div_ceil(r1).min(tx));
        let blocks = (tz, ty.div_ceil(tpb.0), tx.div_ceil(tpb.1));
        let (plane, pitch) = ((padded_in[1] * padded_in[2]) as i64, padded_in[2] as i64);
        let (oplane, opitch) = ((padded_out[1] * padded_out[2]) as i64, padded_out[2] as i64);

        let slot_offsets = rows
            .iter()
            .map(|s| match s {
                RowSource::Slot(i) => {
                    let (c, pr, pc) = geo.slot(*i);
                    c as i64 * plane + pr as i64 * pitch + pc as i64
                }
                RowSource::Zero => LUT_ZERO,
            })
            .collect();
        let mut tile_offsets = Vec::with_capacity(tpb.0 * tpb.1);
        let mut out_tile_offsets = Vec::with_capacity(tpb.0 * tpb.1);
        for ly in 0..tpb.0 {
            for lx in 0..tpb.1 {
                tile_offsets.push((ly * r2) as i64 * pitch + (lx * r1) as i64);
                out_tile_offsets.push((ly * r2) as i64 * opitch + (lx * r1) as i64);
            }
        }
        let mut block_origins = Vec::with_capacity(blocks.0 * blocks.1 * blocks.2);
        let mut out_block_origins = Vec::with_capacity(block_origins.capacity());
        for z in 0..blocks.0 {
            for by in 0..blocks.1 {
                for bx in 0..blocks.2 {
                    let (y, x) = ((by * tpb.0 * r2) as i64, (bx * tpb.1 * r1) as i64);
                    block_origins.push(z as i64 * plane + y * pitch + x);
                    out_block_origins.push(z as i64 * oplane + y * opitch + x);
                }
            }
        }
        let out_row_offsets = (0..r1 * r2).map(|q| (q / r1) as i64 * opitch + (q % r1) as i64).collect();
        Ok(Self {
            geometry: geo.clone(),
            block_config: block,
            padded_in,
            padded_out,
            tiles_per_block: tpb,
            blocks,
            slot_offsets,
            tile_offsets,
            block_origins,
            out_row_offsets,
            out_tile_offsets,
            out_block_origins,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn block_config(&self) -> BlockConfig {
        self.block_config
    }
    pub fn padded_input(&self) -> [usize; 3] {
        self.padded_in
    }
    pub fn padded_output(&self) -> [usize; 3] {
        self.padded_out
    }
    pub fn tiles_per_block(&self) -> (usize, usize) {
        self.tiles_per_block
    }
    pub fn block_count(&self) -> usize {
        self.block_origins.len()
    }
    pub fn slot_offsets(&self) -> &[i64] {
        &self.slot_offsets
    }
    pub fn tile_offsets(&self) -> &[i64] {
        &self.tile_offsets
    }
    pub fn block_origins(&self) -> &[i64] {
        &self.block_origins
    }
    pub fn out_row_offsets(&self) -> &[i64] {
        &self.out_row_offsets
    }
    pub fn out_tile_offsets(&self) -> &[i64] {
        &self.out_tile_offsets
    }
    pub fn out_block_origins(&self) -> &[i64] {
        &self.out_block_origins
    }

    /// `(block, local tile)` of operand column `col`.
    fn locate(&self, col: usize) -> (usize, usize) {
        let (z, ty, tx) = self.geometry.tile(col);
        let (tpy, tpx) = self.tiles_per_block;
        let block = (z * self.blocks.1 + ty / tpy) * self.blocks.2 + tx / tpx;
        (block, (ty % tpy) * tpx + tx % tpx)
    }

    /// Padded-input offset of `B''[row, col]`, `None` for zero rows.
    pub fn input_offset(&self, row: usize, col: usize) -> Option<usize> {
        let slot = self.slot_offsets[row];
        if slot == LUT_ZERO {
            return None;
        }
        let (b, t) = self.locate(col);
        Some((self.block_origins[b] + self.tile_offsets[t] + slot) as usize)
    }

    /// Padded-output offset written by product entry `(row, col)`.
    pub fn output_offset(&self, row: usize, col: usize) -> usize {
        let (b, t) = self.locate(col);
        (self.out_block_origins[b] + self.out_tile_offsets[t] + self.out_row_offsets[row]) as usize
    }

    /// Reads `B''[row, col]` through the table; cells of the padding
    /// outside the real grid read as zero.
    pub fn gather(&self, grid: &Grid, row: usize, col: usize) -> f64 {
        let Some(off) = self.input_offset(row, col) else { return 0.0 };
        let [_, py, px] = self.padded_in;
        let full = [off / (py * px), (off / px) % py, off % px];
        let coord = &full[3 - grid.dims().len()..];
        if coord.iter().zip(grid.dims()).all(|(c, n)| c < n) {
            grid.get(coord)
        } else {
            0.0
        }
    }

    pub fn materialize(&self, grid: &Grid) -> Matrix {
        let cols = self.geometry.n_prime();
        let mut b = Matrix::zeros(self.slot_offsets.len(), cols);
        for r in 0..self.slot_offsets.len() {
            for c in 0..cols {
                b.set(r, c, self.gather(grid, r, c));
            }
        }
        b
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = LUT_MAGIC.to_vec();
        let mut word = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        word(1);
        self.padded_in.iter().for_each(|v| word(*v));
        self.padded_out.iter().for_each(|v| word(*v));
        word(self.tiles_per_block.0);
        word(self.tiles_per_block.1);
        word(self.geometry.r1());
        word(self.geometry.r2());
        let tables = self.tables();
        for t in &tables {
            word(t.len());
        }
        for t in tables {
            for v in t {
                out.extend_from_slice(&(*v as i32).to_le_bytes());
            }
        }
        out
    }

    fn tables(&self) -> [&[i64]; 6] {
        [
            &self.slot_offsets,
            &self.tile_offsets,
            &self.block_origins,
            &self.out_row_offsets,
            &self.out_tile_offsets,
            &self.out_block_origins,
        ]
    }
}
