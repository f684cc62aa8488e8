//! Deployable artifacts of a compiled stencil: address tables, kernel
//! source text and the JSON report.

pub mod kernel;
pub mod lut;
pub mod report;

pub use kernel::{emit_kernel, lint_kernel, KernelLint};
pub use lut::{build_lut, BlockConfig, LookupTable, LUT_ZERO};
pub use report::{emit_report, Report, ReportContext, Verification, VerificationStatus, SCHEMA_VERSION};

use crate::convert::{check_24, find_24_violation, Conversion, Matcher, Permutation};
use crate::emu::{compress_24, decompress, FragmentShape, Sparse24Matrix, ValuePrecision};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::morph::self_similar_violation;
use crate::stencil::Shape;

/// Everything the emitters need for one compiled kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlan {
    pub name: String,
    pub shape: Shape,
    pub k: usize,
    pub grid: Vec<usize>,
    pub r1: usize,
    pub r2: usize,
    pub permutation: Permutation,
    /// Compressed `A''`.
    pub a: Sparse24Matrix,
    pub fragment: FragmentShape,
    pub lut: LookupTable,
    pub precision: ValuePrecision,
    pub matcher: Matcher,
    pub padding: usize,
    pub alignment: usize,
}

impl KernelPlan {
    pub fn new(
        conv: &Conversion,
        fragment: FragmentShape,
        block: BlockConfig,
        precision: ValuePrecision,
    ) -> Result<Self> {
        let layout = &conv.layout;
        if let Some((row, group, count)) = find_24_violation(layout.a_matrix()) {
            return Err(Error::Not24 { row, group, count });
        }
        let lut = LookupTable::from_rows(layout.geometry(), layout.row_sources(), block)?;
        let spec = layout.spec();
        let plan = Self {
            name: spec.name().to_string(),
            shape: spec.shape(),
            k: spec.k(),
            grid: layout.geometry().grid().to_vec(),
            r1: layout.r1(),
            r2: layout.r2(),
            permutation: conv.permutation.clone(),
            a: compress_24(layout.a_matrix())?,
            fragment,
            lut,
            precision,
            matcher: conv.matcher,
            padding: conv.padding,
            alignment: conv.alignment,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Re-checks dimensions, 2:4 compliance and, for plans built by the
    /// structured matcher, that undoing the permutation restores a
    /// self-similar staircase.
    pub fn validate(&self) -> Result<()> {
        let geo = self.lut.geometry();
        let k_conv = self.a.cols();
        let bad = |msg: String| Err(Error::InvalidPlan(msg));
        if self.a.rows() != geo.m_prime() {
            return bad(format!("A'' has {} rows, layout has {}", self.a.rows(), geo.m_prime()));
        }
        if self.permutation.len() != k_conv || self.lut.slot_offsets().len() != k_conv {
            return bad(format!(
                "shared dimension disagrees: A'' {k_conv}, permutation {}, table {}",
                self.permutation.len(),
                self.lut.slot_offsets().len()
            ));
        }
        if k_conv != geo.k_prime() + self.padding + self.alignment {
            return bad(format!("{k_conv} columns != k' + p + alignment"));
        }
        let dense = decompress(&self.a);
        if !check_24(&dense) {
            return bad("A'' is not 2:4".into());
        }
        if self.matcher == Matcher::Hierarchical {
            let inv = self.permutation.inverse();
            let k_prime = geo.k_prime();
            let mut original = Matrix::zeros(dense.rows(), k_prime);
            for r in 0..dense.rows() {
                for (old, &new) in inv.iter().enumerate() {
                    let v = dense.get(r, new);
                    if old < k_prime {
                        original.set(r, old, v);
                    } else if v != 0.0 {
                        return bad(format!("zero column {old} holds a value in row {r}"));
                    }
                }
            }
            let meta = crate::morph::BlockMeta {
                segments: geo.kz(),
                blocks: geo.blocks(),
                block_size: geo.block_size(),
                block_row_count: self.r2,
                block_rows: self.r1,
                k: self.k,
            };
            if let Some((r, c)) = self_similar_violation(&original, &meta) {
                return bad(format!("unpermuted kernel leaves the staircase at ({r}, {c})"));
            }
        }
        Ok(())
    }

    pub fn m_prime(&self) -> usize {
        self.a.rows()
    }
    pub fn k_converted(&self) -> usize {
        self.a.cols()
    }
    pub fn n_prime(&self) -> usize {
        self.lut.geometry().n_prime()
    }
    pub fn m_tiles(&self) -> usize {
        self.m_prime().div_ceil(self.fragment.m)
    }
    pub fn k_tiles(&self) -> usize {
        self.k_converted().div_ceil(self.fragment.k)
    }
    /// Zero fraction of `A''`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.a.nnz() as f64 / (self.m_prime() * self.k_converted()) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::convert;
    use crate::morph::{crush, flatten};
    use crate::stencil::{preset, StencilSpec};

    pub(crate) fn plan_for(spec: &StencilSpec, grid: &[usize], r1: usize, r2: usize) -> KernelPlan {
        let layout = crush(&flatten(spec, grid).unwrap(), r1, r2).unwrap();
        let conv = convert(&layout).unwrap();
        KernelPlan::new(
            &conv,
            FragmentShape::M16_K32_N8,
            BlockConfig::default_for(spec.dims()),
            ValuePrecision::Round16,
        )
        .unwrap()
    }

    #[test]
    fn plan_dimensions() {
        let plan = plan_for(&preset("Heat-2D").unwrap(), &[64, 64], 2, 2);
        // k' = 16 plus four zero columns: 3x3 window rows conflict too densely
        // for a perfect pairing.
        assert_eq!((plan.m_prime(), plan.k_converted()), (4, 20));
        assert_eq!(plan.padding, 4);
        assert_eq!((plan.m_tiles(), plan.k_tiles()), (1, 1));
        // 5 taps in each of 4 rows out of 4 x 20 entries.
        assert_eq!(plan.sparsity(), 1.0 - 20.0 / 80.0);
    }

    #[test]
    fn tampered_plan_rejected() {
        let mut plan = plan_for(&preset("Box-2D9P").unwrap(), &[32, 32], 2, 2);
        assert!(plan.validate().is_ok());
        let mut order = plan.permutation.order().to_vec();
        order.swap(0, 5);
        plan.permutation = Permutation::new(order).unwrap();
        assert!(matches!(plan.validate(), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn identity_plan_is_nearly_empty() {
        let plan = plan_for(&StencilSpec::identity(2), &[16, 16], 4, 4);
        assert_eq!(plan.padding, 0);
        assert_eq!(plan.sparsity(), 1.0 - 16.0 / (16.0 * 16.0));
    }
}
