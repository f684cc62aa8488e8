use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Block geometry used to read a matrix at block granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
}

impl BlockShape {
    /// 1x1 blocks: the element-level view.
    pub const ELEMENT: BlockShape = BlockShape { rows: 1, cols: 1 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Nodes are block columns; a block counts as nonzero if any entry is.
    Global(BlockShape),
    /// Nodes are the columns inside one block; edges are collected over
    /// every nonzero block.
    Local(BlockShape),
}

/// Column-conflict graph: an edge joins two columns that hold nonzeros in
/// a common row and therefore cannot share a 1:2 group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    n: usize,
    adj: Vec<Vec<bool>>,
    level: Level,
}

impl ConflictGraph {
    pub fn new(n: usize, level: Level) -> Self {
        Self { n, adj: vec![vec![false; n]; n], level }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::new(n, Level::Global(BlockShape::ELEMENT));
        for &(u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u != v {
            self.adj[u][v] = true;
            self.adj[v][u] = true;
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn level(&self) -> Level {
        self.level
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u][v]
    }

    /// Edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in u + 1..self.n {
                if self.adj[u][v] {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Adjacency-list text (one line per node: the node followed by its
    /// higher-numbered neighbours), the layout read by common graph tools.
    pub fn to_adjacency_list(&self) -> String {
        let mut out = format!("# conflict graph: {} nodes, {} edges\n", self.n, self.edge_count());
        for u in 0..self.n {
            let _ = write!(out, "{u}");
            for v in u + 1..self.n {
                if self.adj[u][v] {
                    let _ = write!(out, " {v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn add_row_clique(g: &mut ConflictGraph, nonzero_cols: &[usize]) {
    for (i, &u) in nonzero_cols.iter().enumerate() {
        for &v in &nonzero_cols[i + 1..] {
            g.add_edge(u, v);
        }
    }
}

pub fn build_conflict_graph(a: &Matrix, level: Level) -> Result<ConflictGraph> {
    let shape = match level {
        Level::Global(s) | Level::Local(s) => s,
    };
    if shape.rows == 0
        || shape.cols == 0
        || !a.rows().is_multiple_of(shape.rows)
        || !a.cols().is_multiple_of(shape.cols)
    {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix does not split into {}x{} blocks",
            a.rows(),
            a.cols(),
            shape.rows,
            shape.cols
        )));
    }
    let block_rows = a.rows() / shape.rows;
    let block_cols = a.cols() / shape.cols;
    let block_nonzero = |br: usize, bc: usize| {
        (0..shape.rows).any(|r| (0..shape.cols).any(|c| a.get(br * shape.rows + r, bc * shape.cols + c) != 0.0))
    };
    match level {
        Level::Global(_) => {
            let mut g = ConflictGraph::new(block_cols, level);
            for br in 0..block_rows {
                let cols: Vec<usize> = (0..block_cols).filter(|&bc| block_nonzero(br, bc)).collect();
                add_row_clique(&mut g, &cols);
            }
            Ok(g)
        }
        Level::Local(_) => {
            let mut g = ConflictGraph::new(shape.cols, level);
            for br in 0..block_rows {
                for bc in 0..block_cols {
                    for r in 0..shape.rows {
                        let row = br * shape.rows + r;
                        let cols: Vec<usize> =
                            (0..shape.cols).filter(|&c| a.get(row, bc * shape.cols + c) != 0.0).collect();
                        add_row_clique(&mut g, &cols);
                    }
                }
            }
            Ok(g)
        }
    }
}

/// The canonical self-similar staircase for a descriptor: `m` block
/// columns of `g` columns each, both levels banded with width `k`
/// (bands truncated at the right edge when `m` or `g` is below `k`).
pub fn descriptor_staircase(m: usize, g: usize, k: usize) -> Matrix {
    let block_rows = (m + 1).saturating_sub(k).max(1);
    let local_rows = (g + 1).saturating_sub(k).max(1);
    let mut a = Matrix::zeros(block_rows * local_rows, m * g);
    for br in 0..block_rows {
        for bc in br..(br + k).min(m) {
            for lr in 0..local_rows {
                for lc in lr..(lr + k).min(g) {
                    a.set(br * local_rows + lr, bc * g + lc, 1.0);
                }
            }
        }
    }
    a
}

/// Element-level conflict graph of [`descriptor_staircase`].
pub fn descriptor_graph(m: usize, g: usize, k: usize) -> ConflictGraph {
    build_conflict_graph(&descriptor_staircase(m, g, k), Level::Global(BlockShape::ELEMENT))
        .expect("element blocks always divide")
}
