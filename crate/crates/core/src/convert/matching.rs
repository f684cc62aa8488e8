use serde::Serialize;

use super::blossom;
use super::graph::{descriptor_graph, ConflictGraph};
use crate::error::{Error, Result};

/// Partner of a column in a 1:2 pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Partner {
    Column(usize),
    /// Synthetic all-zero column number `id`, appended after the real ones.
    Zero(usize),
}

/// A pairing of every column with either another column or a fresh zero
/// column. Pairs are stored with the lower real index first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Matching {
    columns: usize,
    pairs: Vec<(usize, Partner)>,
}

impl Matching {
    /// Validates coverage: each real column appears in exactly one pair and
    /// zero ids are exactly `0..p`.
    pub fn new(columns: usize, pairs: Vec<(usize, Partner)>) -> Result<Self> {
        let mut seen = vec![false; columns];
        let mut mark = |c: usize| -> Result<()> {
            match seen.get_mut(c) {
                Some(s) if !*s => {
                    *s = true;
                    Ok(())
                }
                Some(_) => Err(Error::InvalidMatching(format!("column {c} paired twice"))),
                None => Err(Error::InvalidMatching(format!("column {c} out of {columns}"))),
            }
        };
        let mut zeros = Vec::new();
        let mut norm = Vec::with_capacity(pairs.len());
        for (u, p) in pairs {
            mark(u)?;
            match p {
                Partner::Column(v) => {
                    mark(v)?;
                    norm.push((u.min(v), Partner::Column(u.max(v))));
                }
                Partner::Zero(z) => {
                    zeros.push(z);
                    norm.push((u, p));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidMatching(format!("column {c} left unpaired")));
        }
        zeros.sort_unstable();
        if zeros.iter().enumerate().any(|(i, z)| i != *z) {
            return Err(Error::InvalidMatching(format!("zero ids {zeros:?} are not 0..{}", zeros.len())));
        }
        Ok(Self { columns, pairs: norm })
    }

    /// Builds a matching from a mate array; exposed columns get zero
    /// partners numbered in ascending column order.
    fn from_mates(mate: &[usize]) -> Self {
        let none = blossom::unmatched();
        let mut pairs = Vec::new();
        let mut zeros = 0;
        for (u, &v) in mate.iter().enumerate() {
            if v == none {
                pairs.push((u, Partner::Zero(zeros)));
                zeros += 1;
            } else if v > u {
                pairs.push((u, Partner::Column(v)));
            }
        }
        Self { columns: mate.len(), pairs }
    }

    fn mates(&self) -> Vec<usize> {
        let mut mate = vec![blossom::unmatched(); self.columns];
        for &(u, p) in &self.pairs {
            if let Partner::Column(v) = p {
                mate[u] = v;
                mate[v] = u;
            }
        }
        mate
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn pairs(&self) -> &[(usize, Partner)] {
        &self.pairs
    }

    /// Number of zero columns the matching needs (`p`).
    pub fn zero_padding(&self) -> usize {
        self.pairs.iter().filter(|(_, p)| matches!(p, Partner::Zero(_))).count()
    }

    pub fn is_conflict_free(&self, graph: &ConflictGraph) -> bool {
        self.columns == graph.node_count()
            && self.pairs.iter().all(|&(u, p)| match p {
                Partner::Column(v) => !graph.has_edge(u, v),
                Partner::Zero(_) => true,
            })
    }

    /// Places several independent matchings side by side.
    pub fn concat(parts: &[Matching]) -> Matching {
        let mut columns = 0;
        let mut zeros = 0;
        let mut pairs = Vec::new();
        for part in parts {
            for &(u, p) in &part.pairs {
                let p = match p {
                    Partner::Column(v) => Partner::Column(v + columns),
                    Partner::Zero(z) => Partner::Zero(z + zeros),
                };
                pairs.push((u + columns, p));
            }
            columns += part.columns;
            zeros += part.zero_padding();
        }
        Matching { columns, pairs }
    }
}

/// Run record of the two-level matcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchTrace {
    /// Output of the two-level greedy pass alone.
    pub greedy: Matching,
    /// Final matching after augmenting-path repair.
    pub matching: Matching,
    /// Vertices examined by the greedy pass.
    pub node_visits: usize,
    /// Augmenting paths applied during repair.
    pub augmentations: usize,
}

fn check_descriptor(m: usize, g: usize, k: usize) -> Result<()> {
    if m == 0 || g == 0 || k == 0 {
        return Err(Error::InvalidMatching(format!("bad descriptor m={m} g={g} k={k}")));
    }
    Ok(())
}

/// The two-level greedy pass on its own: pair block `i` with `i + s1`
/// (`s1 = max(m/2, k)`), then inside each unpaired block pair column `u`
/// with `u + s2` (`s2 = max(g/2, k)`) or with a zero column, and finally
/// expand each block pair column by column. Linear in `m * g`.
///
/// Fast but not always minimal; [`hierarchical_match`] repairs it.
pub fn hierarchical_match_greedy(m: usize, g: usize, k: usize) -> Result<(Matching, usize)> {
    check_descriptor(m, g, k)?;
    let mut visits = 0;

    let s1 = (m / 2).max(k);
    let mut block_taken = vec![false; m];
    let mut block_pairs = Vec::new();
    for i in 0..m {
        visits += 1;
        if !block_taken[i] && i + s1 < m {
            block_pairs.push((i, i + s1));
            block_taken[i] = true;
            block_taken[i + s1] = true;
        }
    }

    let s2 = (g / 2).max(k);
    let mut pairs = Vec::with_capacity(m * g);
    let mut zeros = 0;
    for x in (0..m).filter(|x| !block_taken[*x]) {
        let mut taken = vec![false; g];
        for u in 0..g {
            visits += 1;
            if taken[u] {
                continue;
            }
            taken[u] = true;
            if u + s2 < g {
                taken[u + s2] = true;
                pairs.push((x * g + u, Partner::Column(x * g + u + s2)));
            } else {
                pairs.push((x * g + u, Partner::Zero(zeros)));
                zeros += 1;
            }
        }
    }

    for &(p, q) in &block_pairs {
        // Conflict freedom rests on the block distance reaching k.
        assert!(q - p >= k, "block pair ({p}, {q}) closer than {k}");
        for t in 0..g {
            visits += 2;
            pairs.push((p * g + t, Partner::Column(q * g + t)));
        }
    }
    pairs.sort_by_key(|(u, _)| *u);
    Ok((Matching { columns: m * g, pairs }, visits))
}

/// Minimal-padding matching for the self-similar staircase descriptor
/// `(m, g, k)`, with full trace.
///
/// The greedy pass runs first; if it leaves more zero columns than a
/// perfect pairing would, augmenting paths on the compatibility graph
/// (complement of the descriptor's conflict graph, restricted to columns
/// at least `k` apart) are searched from each exposed column until none
/// remain.
pub fn hierarchical_match_traced(m: usize, g: usize, k: usize) -> Result<MatchTrace> {
    let (greedy, node_visits) = hierarchical_match_greedy(m, g, k)?;
    let n = m * g;
    if greedy.zero_padding() <= n % 2 {
        return Ok(MatchTrace { matching: greedy.clone(), greedy, node_visits, augmentations: 0 });
    }
    let graph = descriptor_graph(m, g, k);
    if !greedy.is_conflict_free(&graph) {
        return Err(Error::InvalidMatching(format!("greedy pass produced a conflicting pair for m={m} g={g} k={k}")));
    }
    let mut mate = greedy.mates();
    let augmentations = blossom::maximize(n, &|u, v| u.abs_diff(v) >= k && !graph.has_edge(u, v), &mut mate);
    let matching = if augmentations == 0 { greedy.clone() } else { Matching::from_mates(&mate) };
    Ok(MatchTrace { greedy, matching, node_visits, augmentations })
}

pub fn hierarchical_match(m: usize, g: usize, k: usize) -> Result<Matching> {
    hierarchical_match_traced(m, g, k).map(|t| t.matching)
}

/// Maximum matching on the complement of an arbitrary conflict graph.
/// Used when the self-similar structure does not hold.
pub fn blossom_match(graph: &ConflictGraph) -> Matching {
    let n = graph.node_count();
    let mut mate = vec![blossom::unmatched(); n];
    blossom::maximize(n, &|u, v| !graph.has_edge(u, v), &mut mate);
    Matching::from_mates(&mate)
}

pub const BRUTEFORCE_LIMIT: usize = 12;

/// Exhaustive minimum number of zero columns for a graph of at most
/// [`BRUTEFORCE_LIMIT`] nodes, by memoized search over subsets.
pub fn min_padding_bruteforce(graph: &ConflictGraph) -> Result<usize> {
    let n = graph.node_count();
    if n > BRUTEFORCE_LIMIT {
        return Err(Error::GraphTooLarge(n));
    }
    let full = (1usize << n) - 1;
    let mut memo = vec![u8::MAX; 1 << n];
    fn solve(rest: usize, graph: &ConflictGraph, memo: &mut [u8]) -> u8 {
        if rest == 0 {
            return 0;
        }
        if memo[rest] != u8::MAX {
            return memo[rest];
        }
        let u = rest.trailing_zeros() as usize;
        let without = rest & !(1 << u);
        let mut best = 1 + solve(without, graph, memo);
        let mut others = without;
        while others != 0 {
            let v = others.trailing_zeros() as usize;
            others &= others - 1;
            if !graph.has_edge(u, v) {
                best = best.min(solve(without & !(1 << v), graph, memo));
            }
        }
        memo[rest] = best;
        best
    }
    Ok(solve(full, graph, &mut memo) as usize)
}
