//! Layout morphing: flattening a stencil into a kernel-vector times
//! im2row-style matrix product, then crushing the duplicated input entries
//! of `r1` horizontally and `r2` vertically adjacent placements into one
//! column, which turns the kernel vector into a staircase-patterned matrix.
//!
//! Index conventions (fixed, relied on by every later stage):
//!
//! * rows of `A'`: `q = dy * r1 + dx` for the output at `(dy, dx)` inside a
//!   `r2 x r1` merge tile (column-major over the `r1 x r2` tile);
//! * columns of `A'` / rows of `B'`: `(c * blocks + pr) * g + pc`, where `c`
//!   is the depth tap (3D only), `pr < ky + r2 - 1` the patch row and
//!   `pc < kx + r1 - 1` the patch column;
//! * columns of `B'`: merge tiles, row-major over `(z, ty, tx)`.
//!
//! 1D stencils are treated as a single row (`ky = 1`, so only `r2 = 1` fits).
//! 3D stencils morph the two fastest axes; the depth taps become `k`
//! stacked staircase segments along the shared dimension and the slowest
//! output axis is folded into the tile order.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stencil::{check_extents, Grid, StencilSpec};

/// Upper bound on each merge factor (one fragment extent).
pub const MAX_MERGE: usize = 16;

/// Shape bookkeeping shared by the flattened and the crushed layouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    dims: usize,
    k: usize,
    grid: Vec<usize>,
    r1: usize,
    r2: usize,
    /// Depth taps folded into the shared dimension (`k` in 3D, else 1).
    kz: usize,
    /// Kernel rows (`1` in 1D, else `k`).
    ky: usize,
    /// Output extents `(z, y, x)`; unused leading axes are 1.
    out: [usize; 3],
    tiles_y: usize,
    tiles_x: usize,
}

impl Geometry {
    pub fn new(dims: usize, k: usize, grid: &[usize], r1: usize, r2: usize) -> Result<Self> {
        if grid.len() != dims {
            return Err(Error::InvalidGrid(format!("{}-D grid for a {dims}-D stencil", grid.len())));
        }
        check_extents(grid, k)?;
        let merge_err = |msg: String| Error::InvalidMerge { r1, r2, msg };
        if r1 == 0 || r2 == 0 {
            return Err(merge_err("merge factors must be at least 1".into()));
        }
        if r1 > MAX_MERGE || r2 > MAX_MERGE {
            return Err(merge_err(format!("merge factors are capped at {MAX_MERGE}")));
        }
        let o: Vec<usize> = grid.iter().map(|n| n - k + 1).collect();
        let out = match dims {
            1 => [1, 1, o[0]],
            2 => [1, o[0], o[1]],
            _ => [o[0], o[1], o[2]],
        };
        if r1 > out[2] {
            return Err(merge_err(format!("r1 exceeds the {} output columns", out[2])));
        }
        if r2 > out[1] {
            return Err(merge_err(format!("r2 exceeds the {} output rows", out[1])));
        }
        Ok(Self {
            dims,
            k,
            grid: grid.to_vec(),
            r1,
            r2,
            kz: if dims == 3 { k } else { 1 },
            ky: if dims == 1 { 1 } else { k },
            out,
            tiles_y: out[1].div_ceil(r2),
            tiles_x: out[2].div_ceil(r1),
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }
    pub fn r1(&self) -> usize {
        self.r1
    }
    pub fn r2(&self) -> usize {
        self.r2
    }
    pub fn kz(&self) -> usize {
        self.kz
    }
    pub fn ky(&self) -> usize {
        self.ky
    }
    pub fn kx(&self) -> usize {
        self.k
    }
    pub fn out(&self) -> [usize; 3] {
        self.out
    }
    pub fn tiles(&self) -> (usize, usize, usize) {
        (self.out[0], self.tiles_y, self.tiles_x)
    }
    /// Block columns per staircase segment.
    pub fn blocks(&self) -> usize {
        self.ky + self.r2 - 1
    }
    /// Columns per block.
    pub fn block_size(&self) -> usize {
        self.k + self.r1 - 1
    }
    pub fn m_prime(&self) -> usize {
        self.r1 * self.r2
    }
    pub fn k_prime(&self) -> usize {
        self.kz * self.blocks() * self.block_size()
    }
    pub fn n_prime(&self) -> usize {
        self.out[0] * self.tiles_y * self.tiles_x
    }
    /// Number of real (unpadded) output points.
    pub fn output_count(&self) -> usize {
        self.out.iter().product()
    }
    pub fn output_dims(&self) -> Vec<usize> {
        self.out[3 - self.dims..].to_vec()
    }

    /// Splits a shared-dimension index into `(c, pr, pc)`.
    pub fn slot(&self, i: usize) -> (usize, usize, usize) {
        let g = self.block_size();
        let per_seg = self.blocks() * g;
        (i / per_seg, (i % per_seg) / g, i % g)
    }

    /// Splits a tile index into `(z, ty, tx)`.
    pub fn tile(&self, j: usize) -> (usize, usize, usize) {
        let tx = j % self.tiles_x;
        let rest = j / self.tiles_x;
        (rest / self.tiles_y, rest % self.tiles_y, tx)
    }

    /// Grid coordinate read by shared-dimension slot `i` of tile `j`, or
    /// `None` when it falls in the virtual zero padding.
    pub fn input_coord(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        let (c, pr, pc) = self.slot(i);
        let (z, ty, tx) = self.tile(j);
        let full = [z + c, ty * self.r2 + pr, tx * self.r1 + pc];
        let coord = &full[3 - self.dims..];
        coord.iter().zip(&self.grid).all(|(c, n)| c < n).then(|| coord.to_vec())
    }

    /// Output coordinate produced at `(row, col)` of the morphed product, or
    /// `None` for a padded position that is dropped at write-back.
    pub fn output_coord(&self, row: usize, col: usize) -> Option<Vec<usize>> {
        let (dy, dx) = (row / self.r1, row % self.r1);
        let (z, ty, tx) = self.tile(col);
        let full = [z, ty * self.r2 + dy, tx * self.r1 + dx];
        (full[1] < self.out[1] && full[2] < self.out[2]).then(|| full[3 - self.dims..].to_vec())
    }
}

/// `(m', k', n')` for a 2D `k x k` stencil on an `m x n` grid, with the
/// output extents virtually padded to multiples of `r2` (rows) and `r1`
/// (columns).
pub fn morph_dims(k: usize, m: usize, n: usize, r1: usize, r2: usize) -> Result<(usize, usize, usize)> {
    let g = Geometry::new(2, k, &[m, n], r1, r2)?;
    Ok((g.m_prime(), g.k_prime(), g.n_prime()))
}

/// Where a row of `B` reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowSource {
    /// Shared-dimension slot of the unpermuted layout.
    Slot(usize),
    /// Appended all-zero row.
    Zero,
}

/// Kernel weights as a single row vector plus the im2row index map.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedForm {
    spec: StencilSpec,
    geometry: Geometry,
    a_vector: Vec<f64>,
}

impl FlattenedForm {
    pub fn spec(&self) -> &StencilSpec {
        &self.spec
    }
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn a_vector(&self) -> &[f64] {
        &self.a_vector
    }
    pub fn b_dims(&self) -> (usize, usize) {
        (self.a_vector.len(), self.geometry.n_prime())
    }
    /// Grid cell covered by kernel position `row` of placement `col`.
    pub fn b_map(&self, row: usize, col: usize) -> Result<Option<Vec<usize>>> {
        let (rows, cols) = self.b_dims();
        if row >= rows || col >= cols {
            return Err(Error::OutOfRange { row, col, rows, cols });
        }
        Ok(self.geometry.input_coord(row, col))
    }
}

pub fn flatten(spec: &StencilSpec, grid_dims: &[usize]) -> Result<FlattenedForm> {
    let geometry = Geometry::new(spec.dims(), spec.k(), grid_dims, 1, 1)?;
    Ok(FlattenedForm { spec: spec.clone(), geometry, a_vector: spec.dense_weights() })
}

/// Self-similar staircase descriptor of a morphed kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMeta {
    /// Stacked staircase segments (depth taps).
    pub segments: usize,
    /// Block columns per segment.
    pub blocks: usize,
    /// Columns per block (`g`).
    pub block_size: usize,
    /// Block rows of the block-level matrix (`r2`).
    pub block_row_count: usize,
    /// Rows per block (`r1`).
    pub block_rows: usize,
    pub k: usize,
}

/// Kernel matrix `A'` plus the lazy index map defining `B'`.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphedLayout {
    spec: StencilSpec,
    geometry: Geometry,
    a_matrix: Matrix,
    rows: Vec<RowSource>,
}

impl MorphedLayout {
    pub(crate) fn from_parts(spec: StencilSpec, geometry: Geometry, a_matrix: Matrix, rows: Vec<RowSource>) -> Self {
        debug_assert_eq!(a_matrix.cols(), rows.len());
        Self { spec, geometry, a_matrix, rows }
    }

    pub fn spec(&self) -> &StencilSpec {
        &self.spec
    }
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn a_matrix(&self) -> &Matrix {
        &self.a_matrix
    }
    pub fn row_sources(&self) -> &[RowSource] {
        &self.rows
    }
    pub fn r1(&self) -> usize {
        self.geometry.r1
    }
    pub fn r2(&self) -> usize {
        self.geometry.r2
    }
    pub fn b_dims(&self) -> (usize, usize) {
        (self.rows.len(), self.geometry.n_prime())
    }

    pub fn block_meta(&self) -> BlockMeta {
        let g = &self.geometry;
        BlockMeta {
            segments: g.kz,
            blocks: g.blocks(),
            block_size: g.block_size(),
            block_row_count: g.r2,
            block_rows: g.r1,
            k: g.k,
        }
    }

    /// Grid coordinate behind `B'[row, col]`, `None` for zero padding.
    pub fn b_map(&self, row: usize, col: usize) -> Result<Option<Vec<usize>>> {
        let (rows, cols) = self.b_dims();
        if row >= rows || col >= cols {
            return Err(Error::OutOfRange { row, col, rows, cols });
        }
        Ok(match self.rows[row] {
            RowSource::Slot(i) => self.geometry.input_coord(i, col),
            RowSource::Zero => None,
        })
    }

    /// Fills `out` with column `col` of `B'` read from `grid`.
    pub fn fill_b_column(&self, grid: &Grid, col: usize, out: &mut [f64]) -> Result<()> {
        let (rows, cols) = self.b_dims();
        if col >= cols || out.len() != rows {
            return Err(Error::OutOfRange { row: out.len(), col, rows, cols });
        }
        for (dst, src) in out.iter_mut().zip(&self.rows) {
            *dst = match src {
                RowSource::Slot(i) => self.geometry.input_coord(*i, col).map_or(0.0, |c| grid.get(&c)),
                RowSource::Zero => 0.0,
            };
        }
        Ok(())
    }

    /// Materializes all of `B'`. Intended for desk-scale grids only.
    pub fn materialize_b(&self, grid: &Grid) -> Result<Matrix> {
        self.check_grid(grid)?;
        let (rows, cols) = self.b_dims();
        let mut b = Matrix::zeros(rows, cols);
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            self.fill_b_column(grid, j, &mut col)?;
            for (i, v) in col.iter().enumerate() {
                b.set(i, j, *v);
            }
        }
        Ok(b)
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dims() != self.geometry.grid() {
            return Err(Error::DimensionMismatch(format!(
                "grid {:?} for a layout built on {:?}",
                grid.dims(),
                self.geometry.grid()
            )));
        }
        Ok(())
    }

    /// Scatters a morphed product `A' x B'` back to the output grid,
    /// dropping padded positions.
    pub fn scatter_output(&self, product: &Matrix) -> Result<Grid> {
        let g = &self.geometry;
        if product.rows() != g.m_prime() || product.cols() != g.n_prime() {
            return Err(Error::DimensionMismatch(format!(
                "product is {}x{}, layout expects {}x{}",
                product.rows(),
                product.cols(),
                g.m_prime(),
                g.n_prime()
            )));
        }
        let dims = g.output_dims();
        let mut values = vec![0.0; g.output_count()];
        for q in 0..product.rows() {
            for j in 0..product.cols() {
                if let Some(c) = g.output_coord(q, j) {
                    let idx = c.iter().zip(&dims).fold(0, |acc, (c, d)| acc * d + c);
                    values[idx] = product.get(q, j);
                }
            }
        }
        Grid::new(dims, values)
    }

    /// `A' x B'(grid)` in plain f64, scattered to the output grid.
    pub fn evaluate(&self, grid: &Grid) -> Result<Grid> {
        let b = self.materialize_b(grid)?;
        self.scatter_output(&self.a_matrix.matmul(&b)?)
    }

    /// CSV dump of `A'` followed by a blank line and the first `max_cols`
    /// columns of `B'` for `grid`.
    pub fn debug_csv(&self, grid: &Grid, max_cols: usize) -> Result<String> {
        let mut out = String::new();
        for r in 0..self.a_matrix.rows() {
            let row: Vec<String> = self.a_matrix.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out.push('\n');
        let (rows, cols) = self.b_dims();
        let shown = cols.min(max_cols);
        let mut b = vec![vec![0.0; shown]; rows];
        let mut col = vec![0.0; rows];
        for j in 0..shown {
            self.fill_b_column(grid, j, &mut col)?;
            for (row, v) in b.iter_mut().zip(&col) {
                row[j] = *v;
            }
        }
        for row in b {
            let row: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        Ok(out)
    }
}

/// Merges every `r1` horizontally and `r2` vertically adjacent kernel
/// placements into one deduplicated column of `B'`, expanding the kernel
/// vector into the `(r1 r2) x k'` staircase matrix `A'`.
pub fn crush(flat: &FlattenedForm, r1: usize, r2: usize) -> Result<MorphedLayout> {
    let spec = flat.spec();
    let geometry = Geometry::new(spec.dims(), spec.k(), flat.geometry().grid(), r1, r2)?;
    let weights = flat.a_vector();
    let (ky, kx) = (geometry.ky(), geometry.kx());
    let k_prime = geometry.k_prime();
    let mut a = Matrix::zeros(geometry.m_prime(), k_prime);
    for dy in 0..r2 {
        for dx in 0..r1 {
            let q = dy * r1 + dx;
            for col in 0..k_prime {
                let (c, pr, pc) = geometry.slot(col);
                let (Some(a_off), Some(b_off)) = (pr.checked_sub(dy), pc.checked_sub(dx)) else {
                    continue;
                };
                if a_off < ky && b_off < kx {
                    a.set(q, col, weights[(c * ky + a_off) * kx + b_off]);
                }
            }
        }
    }
    let rows = (0..k_prime).map(RowSource::Slot).collect();
    Ok(MorphedLayout::from_parts(spec.clone(), geometry, a, rows))
}

/// First nonzero of `m` outside the band `r <= c <= r + k - 1`.
pub fn staircase_violation(m: &Matrix, k: usize) -> Option<(usize, usize)> {
    (0..m.rows())
        .find_map(|r| (0..m.cols()).find_map(|c| (m.get(r, c) != 0.0 && !(r <= c && c < r + k)).then_some((r, c))))
}

/// First violation of the self-similar staircase property: block-level
/// pattern (blocks as scalars) and every nonzero block must both keep their
/// support inside the `k`-wide band. Entries are checked in the layout's
/// current column order.
pub fn self_similar_violation(a: &Matrix, meta: &BlockMeta) -> Option<(usize, usize)> {
    let g = meta.block_size;
    let expected_cols = meta.segments * meta.blocks * g;
    let expected_rows = meta.block_row_count * meta.block_rows;
    if a.cols() != expected_cols || a.rows() != expected_rows {
        // Padded or permuted beyond the descriptor: report the first cell
        // past the described region.
        return Some((expected_rows.min(a.rows()), expected_cols.min(a.cols())));
    }
    for seg in 0..meta.segments {
        for by in 0..meta.block_row_count {
            for bc in 0..meta.blocks {
                let r0 = by * meta.block_rows;
                let c0 = (seg * meta.blocks + bc) * g;
                let in_band = by <= bc && bc < by + meta.k;
                for lr in 0..meta.block_rows {
                    for lc in 0..g {
                        if a.get(r0 + lr, c0 + lc) == 0.0 {
                            continue;
                        }
                        if !in_band || !(lr <= lc && lc < lr + meta.k) {
                            return Some((r0 + lr, c0 + lc));
                        }
                    }
                }
            }
        }
    }
    None
}

/// Whether the layout's kernel matrix keeps the self-similar staircase
/// support. See [`self_similar_violation`] for the failing cell.
pub fn verify_staircase(layout: &MorphedLayout) -> bool {
    self_similar_violation(layout.a_matrix(), &layout.block_meta()).is_none()
}

/// `B'[row, col]` read from `grid`.
pub fn b_entry(layout: &MorphedLayout, grid: &Grid, row: usize, col: usize) -> Result<f64> {
    layout.check_grid(grid)?;
    Ok(layout.b_map(row, col)?.map_or(0.0, |c| grid.get(&c)))
}
