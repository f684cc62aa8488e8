//! Software model of sparse tensor-core fragments.
//!
//! A 2:4 operand keeps two values and two 2-bit positions per group of
//! four columns. A fragment MMA computes `D = decompress(A) * B + C`;
//! the tiled driver walks `(m-tile, n-tile, k-tile)` and counts issues.

pub mod blob;

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::morph::MorphedLayout;
use crate::stencil::Grid;

/// Fragment extents `(M, K, N)`: `A` is `M x K`, `B` is `K x N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct FragmentShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl FragmentShape {
    pub const M16_K16_N8: FragmentShape = FragmentShape { m: 16, k: 16, n: 8 };
    pub const M16_K32_N8: FragmentShape = FragmentShape { m: 16, k: 32, n: 8 };
    pub const DEFAULTS: [FragmentShape; 2] = [Self::M16_K16_N8, Self::M16_K32_N8];

    pub fn new(m: usize, k: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 || !k.is_multiple_of(4) {
            return Err(Error::InvalidHardware(format!(
                "fragment {m}x{k}x{n}: extents must be positive and K a multiple of 4"
            )));
        }
        Ok(Self { m, k, n })
    }
}

impl fmt::Display for FragmentShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.k, self.n)
    }
}

impl FromStr for FragmentShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidHardware(format!("bad fragment '{s}', expected MxKxN")))?;
        match parts[..] {
            [m, k, n] => Self::new(m, k, n),
            _ => Err(Error::InvalidHardware(format!("bad fragment '{s}', expected MxKxN"))),
        }
    }
}

/// Compressed 2:4 matrix: per row and 4-group, two values and their
/// strictly increasing in-group positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparse24Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    meta: Vec<[u8; 2]>,
}

impl Sparse24Matrix {
    /// Checks shape and metadata (positions below 4, `pos0 < pos1`).
    pub fn from_parts(rows: usize, cols: usize, values: Vec<f64>, meta: Vec<[u8; 2]>) -> Result<Self> {
        if !cols.is_multiple_of(4) || values.len() != rows * cols / 2 || meta.len() != rows * cols / 4 {
            return Err(Error::DimensionMismatch(format!(
                "{} values and {} metadata groups for a {rows}x{cols} 2:4 matrix",
                values.len(),
                meta.len()
            )));
        }
        let groups = cols / 4;
        for (i, [p0, p1]) in meta.iter().enumerate() {
            if *p1 > 3 || p0 >= p1 {
                return Err(Error::InvalidMetadata {
                    row: i / groups.max(1),
                    group: i % groups.max(1),
                    msg: format!("positions ({p0}, {p1}) must satisfy 0 <= pos0 < pos1 <= 3"),
                });
            }
        }
        Ok(Self { rows, cols, values, meta })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Logical (uncompressed) column count.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn groups(&self) -> usize {
        self.cols / 4
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metadata(&self) -> &[[u8; 2]] {
        &self.meta
    }

    /// Kept values and positions of one group.
    pub fn group(&self, row: usize, group: usize) -> ([f64; 2], [u8; 2]) {
        let g = row * self.groups() + group;
        ([self.values[2 * g], self.values[2 * g + 1]], self.meta[g])
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    fn rounded(&self) -> Vec<f64> {
        self.values.iter().map(|v| round16(*v)).collect()
    }
}

/// Packs a 2:4-compliant dense matrix. Groups with fewer than two
/// nonzeros fill the spare slots with zero values at the smallest unused
/// positions.
pub fn compress_24(dense: &Matrix) -> Result<Sparse24Matrix> {
    if !dense.cols().is_multiple_of(4) {
        return Err(Error::DimensionMismatch(format!("{} columns is not a multiple of 4", dense.cols())));
    }
    let groups = dense.cols() / 4;
    let mut values = Vec::with_capacity(dense.rows() * groups * 2);
    let mut meta = Vec::with_capacity(dense.rows() * groups);
    for r in 0..dense.rows() {
        for (g, chunk) in dense.row(r).chunks(4).enumerate() {
            let nz: Vec<usize> = (0..4).filter(|&p| chunk[p] != 0.0).collect();
            if nz.len() > 2 {
                return Err(Error::Not24 { row: r, group: g, count: nz.len() });
            }
            let mut pos = nz.clone();
            for p in 0..4 {
                if pos.len() == 2 {
                    break;
                }
                if !pos.contains(&p) {
                    pos.push(p);
                }
            }
            pos.sort_unstable();
            values.push(chunk[pos[0]]);
            values.push(chunk[pos[1]]);
            meta.push([pos[0] as u8, pos[1] as u8]);
        }
    }
    Sparse24Matrix::from_parts(dense.rows(), dense.cols(), values, meta)
}

pub fn decompress(sparse: &Sparse24Matrix) -> Matrix {
    let mut out = Matrix::zeros(sparse.rows, sparse.cols);
    for r in 0..sparse.rows {
        for g in 0..sparse.groups() {
            let (vals, pos) = sparse.group(r, g);
            for s in 0..2 {
                out.set(r, g * 4 + pos[s] as usize, vals[s]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValuePrecision {
    Exact64,
    Round16,
}

impl FromStr for ValuePrecision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact64" => Ok(Self::Exact64),
            "round16" => Ok(Self::Round16),
            _ => Err(Error::InvalidPlan(format!("unknown precision '{s}', expected exact64 or round16"))),
        }
    }
}

impl fmt::Display for ValuePrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact64 => "exact64",
            Self::Round16 => "round16",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumulatePrecision {
    F32,
    Exact64,
}

/// Arithmetic of the emulated fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EmulationConfig {
    value_precision: ValuePrecision,
    accumulate: AccumulatePrecision,
}

impl EmulationConfig {
    pub fn new(value_precision: ValuePrecision, accumulate: AccumulatePrecision) -> Result<Self> {
        if value_precision == ValuePrecision::Exact64 && accumulate != AccumulatePrecision::Exact64 {
            return Err(Error::InvalidPlan("exact64 values need exact64 accumulation".into()));
        }
        Ok(Self { value_precision, accumulate })
    }

    pub fn exact64() -> Self {
        Self { value_precision: ValuePrecision::Exact64, accumulate: AccumulatePrecision::Exact64 }
    }

    /// Half-precision inputs (round to nearest even), f32 accumulation.
    pub fn round16() -> Self {
        Self { value_precision: ValuePrecision::Round16, accumulate: AccumulatePrecision::F32 }
    }

    pub fn for_precision(p: ValuePrecision) -> Self {
        match p {
            ValuePrecision::Exact64 => Self::exact64(),
            ValuePrecision::Round16 => Self::round16(),
        }
    }

    pub fn value_precision(&self) -> ValuePrecision {
        self.value_precision
    }

    pub fn accumulate(&self) -> AccumulatePrecision {
        self.accumulate
    }

    fn input(&self, v: f64) -> f64 {
        match self.value_precision {
            ValuePrecision::Exact64 => v,
            ValuePrecision::Round16 => round16(v),
        }
    }

    #[inline]
    fn acc(&self, acc: f64, prod: f64) -> f64 {
        match self.accumulate {
            AccumulatePrecision::Exact64 => acc + prod,
            AccumulatePrecision::F32 => (acc as f32 + prod as f32) as f64,
        }
    }

    fn acc_init(&self, c: f64) -> f64 {
        match self.accumulate {
            AccumulatePrecision::Exact64 => c,
            AccumulatePrecision::F32 => c as f32 as f64,
        }
    }
}

/// Nearest half-precision value, ties to even.
pub fn round16(v: f64) -> f64 {
    f16::from_f64(v).to_f64()
}

/// Accumulates one fragment product into `acc` (`M x N`, row-major).
/// `values` are the (possibly pre-rounded) compressed values of `a`; the
/// fragment covers rows `row0..row0+M` and groups `group0..group0+K/4`,
/// rows past the end of `a` read as zero. `b` is `K x N` row-major.
#[allow(clippy::too_many_arguments)]
fn mma_accumulate(
    acc: &mut [f64],
    a: &Sparse24Matrix,
    values: &[f64],
    row0: usize,
    group0: usize,
    b: &[f64],
    frag: FragmentShape,
    cfg: &EmulationConfig,
) {
    let groups = a.groups();
    let frag_groups = frag.k / 4;
    for i in 0..frag.m {
        let r = row0 + i;
        if r >= a.rows {
            break;
        }
        let acc_row = &mut acc[i * frag.n..(i + 1) * frag.n];
        for lg in 0..frag_groups {
            let g = group0 + lg;
            if g >= groups {
                break;
            }
            let idx = r * groups + g;
            let pos = a.meta[idx];
            for s in 0..2 {
                let av = values[2 * idx + s];
                let b_row = &b[(lg * 4 + pos[s] as usize) * frag.n..][..frag.n];
                for (dst, bv) in acc_row.iter_mut().zip(b_row) {
                    *dst = cfg.acc(*dst, av * bv);
                }
            }
        }
    }
}

/// One fragment MMA: `D = decompress(a) * b + c`.
pub fn sparse_mma_fragment(
    a: &Sparse24Matrix,
    b: &Matrix,
    c: &Matrix,
    frag: FragmentShape,
    cfg: &EmulationConfig,
) -> Result<Matrix> {
    if a.rows != frag.m
        || a.cols != frag.k
        || b.rows() != frag.k
        || b.cols() != frag.n
        || c.rows() != frag.m
        || c.cols() != frag.n
    {
        return Err(Error::DimensionMismatch(format!(
            "fragment {frag}: got A {}x{}, B {}x{}, C {}x{}",
            a.rows,
            a.cols,
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let values = match cfg.value_precision {
        ValuePrecision::Exact64 => a.values.clone(),
        ValuePrecision::Round16 => a.rounded(),
    };
    let b: Vec<f64> = b.as_slice().iter().map(|v| cfg.input(*v)).collect();
    let mut acc: Vec<f64> = c.as_slice().iter().map(|v| cfg.acc_init(*v)).collect();
    mma_accumulate(&mut acc, a, &values, 0, 0, &b, frag, cfg);
    Matrix::from_rows(frag.m, frag.n, acc)
}

/// Source of right-hand operand columns, produced on demand.
pub trait ColumnProvider {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn fill_column(&self, col: usize, out: &mut [f64]) -> Result<()>;
}

impl ColumnProvider for Matrix {
    fn rows(&self) -> usize {
        Matrix::rows(self)
    }
    fn cols(&self) -> usize {
        Matrix::cols(self)
    }
    fn fill_column(&self, col: usize, out: &mut [f64]) -> Result<()> {
        if col >= Matrix::cols(self) || out.len() != Matrix::rows(self) {
            return Err(Error::OutOfRange { row: out.len(), col, rows: Matrix::rows(self), cols: Matrix::cols(self) });
        }
        for (r, dst) in out.iter_mut().enumerate() {
            *dst = self.get(r, col);
        }
        Ok(())
    }
}

/// Columns of a layout's `B` operand read lazily from a grid.
pub struct LayoutColumns<'a> {
    layout: &'a MorphedLayout,
    grid: &'a Grid,
}

impl<'a> LayoutColumns<'a> {
    pub fn new(layout: &'a MorphedLayout, grid: &'a Grid) -> Result<Self> {
        layout.check_grid(grid)?;
        Ok(Self { layout, grid })
    }
}

impl ColumnProvider for LayoutColumns<'_> {
    fn rows(&self) -> usize {
        self.layout.b_dims().0
    }
    fn cols(&self) -> usize {
        self.layout.b_dims().1
    }
    fn fill_column(&self, col: usize, out: &mut [f64]) -> Result<()> {
        self.layout.fill_b_column(self.grid, col, out)
    }
}

/// `decompress(a) * B` computed fragment by fragment, with edge tiles zero
/// filled. Returns the product and the number of fragment MMAs issued,
/// which is `ceil(m/M) * ceil(k/K) * ceil(n/N)`.
pub fn tiled_sparse_matmul(
    a: &Sparse24Matrix,
    b: &dyn ColumnProvider,
    frag: FragmentShape,
    cfg: &EmulationConfig,
) -> Result<(Matrix, usize)> {
    if b.rows() != a.cols {
        return Err(Error::DimensionMismatch(format!("A has {} columns, B has {} rows", a.cols, b.rows())));
    }
    if !frag.k.is_multiple_of(4) {
        return Err(Error::InvalidHardware(format!("fragment K = {} is not a multiple of 4", frag.k)));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols());
    let (mt, kt, nt) = (m.div_ceil(frag.m), k.div_ceil(frag.k), n.div_ceil(frag.n));
    let values = match cfg.value_precision {
        ValuePrecision::Exact64 => a.values.clone(),
        ValuePrecision::Round16 => a.rounded(),
    };
    let padded_k = kt * frag.k;
    let mut out = Matrix::zeros(m, n);
    let mut issued = 0;
    let mut column = vec![0.0; k];
    // Right operand panel for one n-tile: padded_k x N, row-major.
    let mut panel = vec![0.0; padded_k * frag.n];
    let mut acc = vec![0.0; frag.m * frag.n];
    for jt in 0..nt {
        panel.iter_mut().for_each(|v| *v = 0.0);
        for jj in 0..frag.n {
            let j = jt * frag.n + jj;
            if j >= n {
                break;
            }
            b.fill_column(j, &mut column)?;
            for (p, v) in column.iter().enumerate() {
                panel[p * frag.n + jj] = cfg.input(*v);
            }
        }
        for it in 0..mt {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for ktile in 0..kt {
                let b_tile = &panel[ktile * frag.k * frag.n..(ktile + 1) * frag.k * frag.n];
                mma_accumulate(&mut acc, a, &values, it * frag.m, ktile * frag.k / 4, b_tile, frag, cfg);
                issued += 1;
            }
            for ii in 0..frag.m {
                let i = it * frag.m + ii;
                if i >= m {
                    break;
                }
                for jj in 0..frag.n {
                    let j = jt * frag.n + jj;
                    if j < n {
                        out.set(i, j, acc[ii * frag.n + jj]);
                    }
                }
            }
        }
    }
    Ok((out, issued))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_row(vals: [f64; 4]) -> Matrix {
        Matrix::from_rows(1, 4, vals.to_vec()).unwrap()
    }

    fn random_24(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for g in 0..cols / 4 {
                let keep = rng.gen_range(0..=2);
                let mut pos: Vec<usize> = (0..4).collect();
                for i in 0..keep {
                    let j = rng.gen_range(i..4);
                    pos.swap(i, j);
                    m.set(r, g * 4 + pos[i], rng.gen_range(1..64) as f64 / 16.0);
                }
            }
        }
        m
    }

    #[test]
    fn compress_examples() {
        let s = compress_24(&one_row([0., 5., 0., 7.])).unwrap();
        assert_eq!(s.group(0, 0), ([5., 7.], [1, 3]));
        let s = compress_24(&one_row([0.; 4])).unwrap();
        assert_eq!(s.group(0, 0), ([0., 0.], [0, 1]));
        let s = compress_24(&one_row([0., 0., 9., 0.])).unwrap();
        assert_eq!(s.group(0, 0), ([0., 9.], [0, 2]));
        let s = compress_24(&one_row([9., 0., 0., 0.])).unwrap();
        assert_eq!(s.group(0, 0), ([9., 0.], [0, 1]));
        assert_eq!(compress_24(&one_row([1., 1., 1., 0.])), Err(Error::Not24 { row: 0, group: 0, count: 3 }));
    }

    #[test]
    fn decompress_inverts() {
        for vals in [[0., 5., 0., 7.], [0.; 4], [0., 0., 9., 0.]] {
            let d = one_row(vals);
            assert_eq!(decompress(&compress_24(&d).unwrap()), d);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_24(9, 20, &mut rng);
        assert_eq!(decompress(&compress_24(&d).unwrap()), d);
    }

    #[test]
    fn bad_metadata_rejected() {
        assert!(Sparse24Matrix::from_parts(1, 4, vec![1., 2.], vec![[2, 2]]).is_err());
        assert!(Sparse24Matrix::from_parts(1, 4, vec![1., 2.], vec![[3, 1]]).is_err());
        assert!(Sparse24Matrix::from_parts(1, 4, vec![1., 2.], vec![[0, 4]]).is_err());
        assert!(Sparse24Matrix::from_parts(1, 4, vec![1., 2.], vec![[0, 3]]).is_ok());
    }

    #[test]
    fn zero_fragment_returns_c() {
        let f = FragmentShape::M16_K16_N8;
        let a = compress_24(&Matrix::zeros(16, 16)).unwrap();
        let b = Matrix::from_rows(16, 8, (0..128).map(|v| v as f64).collect()).unwrap();
        let c = Matrix::from_rows(16, 8, (0..128).map(|v| v as f64 * 0.5).collect()).unwrap();
        assert_eq!(sparse_mma_fragment(&a, &b, &c, f, &EmulationConfig::exact64()).unwrap(), c);
    }

    #[test]
    fn selection_fragment_picks_rows() {
        // Row i keeps column 2i, so D row i = B row 2i.
        let f = FragmentShape::new(8, 16, 8).unwrap();
        let mut sel = Matrix::zeros(8, 16);
        for i in 0..8 {
            sel.set(i, 2 * i, 1.0);
        }
        let a = compress_24(&sel).unwrap();
        let b = Matrix::from_rows(16, 8, (0..128).map(|v| v as f64).collect()).unwrap();
        let d = sparse_mma_fragment(&a, &b, &Matrix::zeros(8, 8), f, &EmulationConfig::exact64()).unwrap();
        for i in 0..8 {
            assert_eq!(d.row(i), b.row(2 * i));
        }
    }

    #[test]
    fn fragment_matches_dense() {
        let f = FragmentShape::M16_K16_N8;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dense = random_24(16, 16, &mut rng);
        let b = Matrix::from_rows(16, 8, (0..128).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let z = Matrix::zeros(16, 8);
        let reference = dense.matmul(&b).unwrap();
        let a = compress_24(&dense).unwrap();
        let exact = sparse_mma_fragment(&a, &b, &z, f, &EmulationConfig::exact64()).unwrap();
        for (x, y) in exact.as_slice().iter().zip(reference.as_slice()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        let low = sparse_mma_fragment(&a, &b, &z, f, &EmulationConfig::round16()).unwrap();
        for (x, y) in low.as_slice().iter().zip(reference.as_slice()) {
            assert!((x - y).abs() <= 1e-2 * y.abs().max(1e-3), "{x} vs {y}");
        }
    }

    #[test]
    fn fragment_shape_mismatch() {
        let a = compress_24(&Matrix::zeros(16, 16)).unwrap();
        let r = sparse_mma_fragment(
            &a,
            &Matrix::zeros(16, 4),
            &Matrix::zeros(16, 8),
            FragmentShape::M16_K16_N8,
            &EmulationConfig::exact64(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn issue_counts() {
        let cfg = EmulationConfig::exact64();
        let a = compress_24(&Matrix::zeros(4, 16)).unwrap();
        let (_, n) = tiled_sparse_matmul(&a, &Matrix::zeros(16, 4), FragmentShape::M16_K16_N8, &cfg).unwrap();
        assert_eq!(n, 1);
        let a = compress_24(&Matrix::zeros(8, 80)).unwrap();
        let (_, n) = tiled_sparse_matmul(&a, &Matrix::zeros(80, 2048), FragmentShape::M16_K32_N8, &cfg).unwrap();
        assert_eq!(n, 768);
    }

    #[test]
    fn tiled_matches_dense_for_every_fragment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense = random_24(19, 36, &mut rng);
        let b = Matrix::from_rows(36, 21, (0..36 * 21).map(|_| rng.gen_range(-8..8) as f64).collect()).unwrap();
        let reference = dense.matmul(&b).unwrap();
        let a = compress_24(&dense).unwrap();
        for f in [FragmentShape::M16_K16_N8, FragmentShape::M16_K32_N8, FragmentShape::new(4, 4, 4).unwrap()] {
            let (out, _) = tiled_sparse_matmul(&a, &b, f, &EmulationConfig::exact64()).unwrap();
            assert_eq!(out, reference, "fragment {f}");
        }
    }

    #[test]
    fn round16_is_nearest_even() {
        assert_eq!(round16(1.0 + 2f64.powi(-11)), 1.0);
        assert_eq!(round16(1.0 + 3.0 * 2f64.powi(-11)), 1.0 + 2f64.powi(-9));
        assert_eq!(round16(0.1), f16::from_f32(0.1).to_f64());
    }

    #[test]
    fn config_rules() {
        assert!(EmulationConfig::new(ValuePrecision::Exact64, AccumulatePrecision::F32).is_err());
        assert_eq!("round16".parse::<ValuePrecision>().unwrap(), ValuePrecision::Round16);
        assert_eq!("16x32x8".parse::<FragmentShape>().unwrap(), FragmentShape::M16_K32_N8);
        assert!("16x30x8".parse::<FragmentShape>().is_err());
    }
}
