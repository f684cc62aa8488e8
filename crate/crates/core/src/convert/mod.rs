//! Column pairing and the shared permutation that turns a staircase kernel
//! matrix into a 2:4 sparse operand.

mod blossom;
pub mod graph;
pub mod matching;

use serde::Serialize;

pub use graph::{build_conflict_graph, descriptor_graph, descriptor_staircase, BlockShape, ConflictGraph, Level};
pub use matching::{
    blossom_match, hierarchical_match, hierarchical_match_greedy, hierarchical_match_traced, min_padding_bruteforce,
    MatchTrace, Matching, Partner, BRUTEFORCE_LIMIT,
};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::morph::{self_similar_violation, BlockMeta, MorphedLayout, RowSource};

/// Column gather order: position `j` of the permuted operand takes
/// original column (or zero column) `order[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &o in &order {
            match seen.get_mut(o) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::InvalidMatching(format!("{o} is not a fresh index below {}", order.len()))),
            }
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, o)| i == *o)
    }

    /// Extends with fresh trailing indices until the length is a multiple
    /// of `multiple`; returns how many were added.
    pub fn pad_to_multiple(&mut self, multiple: usize) -> usize {
        let extra = (multiple - self.order.len() % multiple) % multiple;
        let n = self.order.len();
        self.order.extend(n..n + extra);
        extra
    }

    /// Inverse map: `inverse()[old] = new`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (new, &old) in self.order.iter().enumerate() {
            inv[old] = new;
        }
        inv
    }
}

/// Lays each pair out as two adjacent columns, pairs sorted by their lower
/// real index. Zero partner `z` becomes column `columns + z`.
pub fn build_permutation(matching: &Matching) -> Result<Permutation> {
    let k = matching.columns();
    let mut pairs = matching.pairs().to_vec();
    pairs.sort_by_key(|(u, _)| *u);
    let mut order = Vec::with_capacity(k + matching.zero_padding());
    for (u, p) in pairs {
        order.push(u);
        order.push(match p {
            Partner::Column(v) => v,
            Partner::Zero(z) => k + z,
        });
    }
    Permutation::new(order)
}

/// Appends zero columns to `A'` (and zero rows to `B'`) up to the
/// permutation length, then reorders both by the same permutation.
pub fn apply_pit(layout: &MorphedLayout, perm: &Permutation) -> Result<MorphedLayout> {
    let cols = layout.a_matrix().cols();
    if perm.len() < cols {
        return Err(Error::DimensionMismatch(format!("permutation of length {} for {cols} columns", perm.len())));
    }
    let extra = perm.len() - cols;
    let a = layout.a_matrix().pad_cols(extra).permute_cols(perm.order());
    let mut sources = layout.row_sources().to_vec();
    sources.extend(std::iter::repeat_n(RowSource::Zero, extra));
    let rows = perm.order().iter().map(|&o| sources[o]).collect();
    Ok(MorphedLayout::from_parts(layout.spec().clone(), layout.geometry().clone(), a, rows))
}

/// First `(row, group, nonzeros)` with more than two nonzeros among four
/// consecutive columns. A trailing partial group counts as zero padded.
pub fn find_24_violation(a: &Matrix) -> Option<(usize, usize, usize)> {
    (0..a.rows()).find_map(|r| {
        a.row(r).chunks(4).enumerate().find_map(|(g, chunk)| {
            let count = chunk.iter().filter(|v| **v != 0.0).count();
            (count > 2).then_some((r, g, count))
        })
    })
}

pub fn check_24(a: &Matrix) -> bool {
    find_24_violation(a).is_none()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    Hierarchical,
    Blossom,
}

/// A layout converted to 2:4 form.
#[derive(Debug, Clone)]
pub struct Conversion {
    /// Padded and permuted layout; `A''` is 2:4 compliant.
    pub layout: MorphedLayout,
    pub matching: Matching,
    pub permutation: Permutation,
    pub matcher: Matcher,
    /// Zero columns required by the matching.
    pub padding: usize,
    /// Extra zero columns added only to reach a multiple of four.
    pub alignment: usize,
    /// Where the self-similar check failed, if it did; such layouts go
    /// through the general matcher.
    pub staircase_violation: Option<(usize, usize)>,
}

impl Conversion {
    /// Shared-dimension length after conversion.
    pub fn k_converted(&self) -> usize {
        self.layout.a_matrix().cols()
    }
}

/// Knobs for [`convert_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConvertOptions {
    /// Testing hook: after building the permutation, swap one entry so
    /// that some 4-group receives a third nonzero.
    pub corrupt_permutation: bool,
}

/// Swaps two permutation entries so the permuted matrix breaks 2:4.
/// Returns `false` when the matrix is too sparse for that to happen.
fn corrupt(perm: &mut Permutation, padded: &Matrix) -> bool {
    let a = padded.permute_cols(perm.order());
    for r in 0..a.rows() {
        let row = a.row(r);
        for (g, chunk) in row.chunks(4).enumerate() {
            if chunk.len() < 4 || chunk.iter().filter(|v| **v != 0.0).count() != 2 {
                continue;
            }
            let hole = g * 4 + chunk.iter().position(|v| *v == 0.0).expect("two zeros");
            if let Some(j) = (0..row.len()).find(|&j| j / 4 != g && row[j] != 0.0) {
                perm.order.swap(hole, j);
                return true;
            }
        }
    }
    false
}

/// Matching for a layout that satisfies the self-similar staircase: one
/// descriptor per depth segment, concatenated.
pub fn structured_matching(meta: &BlockMeta) -> Result<Matching> {
    let seg = hierarchical_match(meta.blocks, meta.block_size, meta.k)?;
    Ok(Matching::concat(&vec![seg; meta.segments]))
}

/// Full conversion: choose a matcher, build and apply the shared
/// permutation, align to a multiple of four and confirm 2:4 compliance.
pub fn convert(layout: &MorphedLayout) -> Result<Conversion> {
    convert_with(layout, &ConvertOptions::default())
}

pub fn convert_with(layout: &MorphedLayout, opts: &ConvertOptions) -> Result<Conversion> {
    let a = layout.a_matrix();
    let staircase_violation = self_similar_violation(a, &layout.block_meta());
    let (matching, matcher) = match staircase_violation {
        None => (structured_matching(&layout.block_meta())?, Matcher::Hierarchical),
        Some(_) => {
            let graph = build_conflict_graph(a, Level::Global(BlockShape::ELEMENT))?;
            (blossom_match(&graph), Matcher::Blossom)
        }
    };
    // Check pairs against the actual entries, not just the descriptor.
    for &(u, p) in matching.pairs() {
        if let Partner::Column(v) = p {
            if let Some(r) = (0..a.rows()).find(|&r| a.get(r, u) != 0.0 && a.get(r, v) != 0.0) {
                return Err(Error::InvalidMatching(format!("columns {u} and {v} share nonzero row {r}")));
            }
        }
    }
    let padding = matching.zero_padding();
    let mut permutation = build_permutation(&matching)?;
    let alignment = permutation.pad_to_multiple(4);
    if opts.corrupt_permutation {
        let padded = a.pad_cols(permutation.len() - a.cols());
        if !corrupt(&mut permutation, &padded) {
            return Err(Error::InvalidPlan("kernel too sparse to corrupt the permutation".into()));
        }
    }
    let converted = apply_pit(layout, &permutation)?;
    if let Some((row, group, count)) = find_24_violation(converted.a_matrix()) {
        return Err(Error::Not24 { row, group, count });
    }
    Ok(Conversion { layout: converted, matching, permutation, matcher, padding, alignment, staircase_violation })
}
