//! Item interest graph and the fusion operators derived from it.
//!
//! The graph counts how often two distinct items are clicked within a small
//! window of each other. Each row is then pruned to its `K` heaviest
//! neighbours, made undirected, and turned into a row-wise linear combination
//! matrix by one of three operators: uniform averaging, symmetric degree
//! normalization, or a softmax over central-basis inner products.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ItemId = u32;

/// Default co-occurrence window radius.
pub const DEFAULT_WINDOW: usize = 2;
/// Default number of neighbours kept per item.
pub const DEFAULT_TOP_K: usize = 8;

/// A user's clicked items in time order. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ItemId>", into = "Vec<ItemId>")]
pub struct BehaviorSequence(Vec<ItemId>);

impl BehaviorSequence {
    pub fn new(items: Vec<ItemId>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("behavior sequence must not be empty"));
        }
        Ok(BehaviorSequence(items))
    }

    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<ItemId>> for BehaviorSequence {
    type Error = Error;

    fn try_from(items: Vec<ItemId>) -> Result<Self> {
        BehaviorSequence::new(items)
    }
}

impl From<BehaviorSequence> for Vec<ItemId> {
    fn from(seq: BehaviorSequence) -> Self {
        seq.0
    }
}

/// Row-compressed sparse matrix; each row is sorted by column and holds no
/// explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n_cols: usize,
    rows: Vec<Vec<(ItemId, f64)>>,
}

impl SparseRows {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseRows {
            n_cols,
            rows: vec![Vec::new(); n_rows],
        }
    }

    pub(crate) fn from_rows(n_cols: usize, rows: Vec<Vec<(ItemId, f64)>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.windows(2).all(|w| w[0].0 < w[1].0)));
        SparseRows { n_cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[(ItemId, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        match row.binary_search_by_key(&(j as ItemId), |&(c, _)| c) {
            Ok(pos) => row[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, w)| (i, j as usize, w)))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows() != self.n_cols {
            return false;
        }
        self.entries()
            .all(|(i, j, w)| (self.get(j, i) - w).abs() <= tol)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_cols));
        for (i, j, w) in self.entries() {
            out[[i, j]] = w;
        }
        out
    }

    /// `self · x` for a dense `x` with `n_cols` rows.
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_cols, "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.n_rows(), x.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, w) in row {
                dst.scaled_add(w, &x.row(j as usize));
            }
        }
        out
    }

    /// `selfᵀ · g` for a dense `g` with `n_rows` rows.
    pub fn transpose_matmul(&self, g: &Array2<f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.n_rows(), "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.n_cols, g.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let src = g.row(i);
            for &(j, w) in row {
                out.row_mut(j as usize).scaled_add(w, &src);
            }
        }
        out
    }
}

/// Weighted item co-occurrence graph. Stored entries are strictly positive
/// and the diagonal is always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceGraph {
    adj: SparseRows,
}

impl CooccurrenceGraph {
    pub fn empty(n_items: usize) -> Self {
        CooccurrenceGraph {
            adj: SparseRows::empty(n_items, n_items),
        }
    }

    /// Builds a graph from `(i, j, weight)` triples. Duplicate pairs are summed.
    pub fn from_edges(
        n_items: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<HashMap<ItemId, f64>> = vec![HashMap::new(); n_items];
        for (i, j, w) in edges {
            if i >= n_items || j >= n_items {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for {n_items} items"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop on item {i}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            *rows[i].entry(j as ItemId).or_insert(0.0) += w;
        }
        Ok(Self::from_row_maps(n_items, rows))
    }

    fn from_row_maps(n_items: usize, rows: Vec<HashMap<ItemId, f64>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|m| {
                let mut row: Vec<_> = m.into_iter().filter(|&(_, w)| w > 0.0).collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        CooccurrenceGraph {
            adj: SparseRows::from_rows(n_items, rows),
        }
    }

    pub fn n_items(&self) -> usize {
        self.adj.n_rows()
    }

    pub fn row(&self, i: usize) -> &[(ItemId, f64)] {
        self.adj.row(i)
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj.get(i, j)
    }

    pub fn n_edges(&self) -> usize {
        self.adj.nnz()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.entries()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adj.is_symmetric(0.0)
    }

    pub fn as_sparse(&self) -> &SparseRows {
        &self.adj
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.adj.to_dense()
    }

    /// Keeps the `k` heaviest entries of each row. Ties go to the smaller
    /// column index.
    pub fn prune_topk(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("top-K must be at least 1"));
        }
        let rows = self
            .adj
            .rows
            .iter()
            .map(|row| {
                if row.len() <= k {
                    return row.clone();
                }
                let mut ranked = row.clone();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.truncate(k);
                ranked.sort_unstable_by_key(|&(j, _)| j);
                ranked
            })
            .collect();
        Ok(CooccurrenceGraph {
            adj: SparseRows::from_rows(self.n_items(), rows),
        })
    }

    /// Undirected version: `w'(i,j) = max(w(i,j), w(j,i))`.
    pub fn symmetrize(&self) -> Self {
        let n = self.n_items();
        let mut rows: Vec<HashMap<ItemId, f64>> = vec![HashMap::new(); n];
        for (i, j, w) in self.edges() {
            for (a, b) in [(i, j), (j, i)] {
                let slot = rows[a].entry(b as ItemId).or_insert(0.0);
                if w > *slot {
                    *slot = w;
                }
            }
        }
        Self::from_row_maps(n, rows)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "H {}", self.n_items()).map_err(io)?;
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid(format!("{}: empty graph file", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let n_items = header
            .strip_prefix("H ")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| {
                Error::invalid(format!("{}: bad header line `{header}`", path.display()))
            })?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_edge_line(&line).ok_or_else(|| {
                Error::invalid(format!(
                    "{}:{}: malformed edge line `{line}`",
                    path.display(),
                    lineno + 2
                ))
            })?;
            edges.push(parsed);
        }
        Self::from_edges(n_items, edges)
    }
}

fn parse_edge_line(line: &str) -> Option<(usize, usize, f64)> {
    let mut it = line.split_whitespace();
    let i = it.next()?.parse().ok()?;
    let j = it.next()?.parse().ok()?;
    let w = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((i, j, w))
}

/// Sliding-window co-occurrence counts over all sequences.
///
/// For every centre position, each other position within `window` steps
/// increments `Z(centre item, other item)` by one unless both hold the same
/// item. Sequences are sharded over the rayon pool and the partial counts
/// summed, so the result does not depend on the thread count.
pub fn build_cooccurrence(
    sequences: &[BehaviorSequence],
    window: usize,
    n_items: usize,
) -> Result<CooccurrenceGraph> {
    if window == 0 {
        return Err(Error::invalid("window radius must be at least 1"));
    }
    for seq in sequences {
        if let Some(&bad) = seq.items().iter().find(|&&id| id as usize >= n_items) {
            return Err(Error::invalid(format!(
                "item id {bad} out of range for {n_items} items"
            )));
        }
    }

    const SHARD: usize = 4096;
    let counts = sequences
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut local: HashMap<(ItemId, ItemId), u64> = HashMap::new();
            for seq in chunk {
                count_windows(seq.items(), window, &mut local);
            }
            local
        })
        .reduce(HashMap::new, |mut acc, part| {
            for (k, v) in part {
                *acc.entry(k).or_insert(0) += v;
            }
            acc
        });

    let mut rows: Vec<HashMap<ItemId, f64>> = vec![HashMap::new(); n_items];
    for ((i, j), c) in counts {
        rows[i as usize].insert(j, c as f64);
    }
    Ok(CooccurrenceGraph::from_row_maps(n_items, rows))
}

fn count_windows(items: &[ItemId], window: usize, counts: &mut HashMap<(ItemId, ItemId), u64>) {
    let m = items.len();
    for c in 0..m {
        let lo = c.saturating_sub(window);
        let hi = (c + window).min(m - 1);
        for w in lo..=hi {
            if w != c && items[w] != items[c] {
                *counts.entry((items[c], items[w])).or_insert(0) += 1;
            }
        }
    }
}

/// Interest graph pipeline: count, prune, then symmetrize.
pub fn build_interest_graph(
    sequences: &[BehaviorSequence],
    window: usize,
    top_k: usize,
    n_items: usize,
) -> Result<CooccurrenceGraph> {
    Ok(build_cooccurrence(sequences, window, n_items)?
        .prune_topk(top_k)?
        .symmetrize())
}

/// Which operator turned the graph into linear-combination weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Avg,
    Gcn,
    Att,
    /// One-hot assignment of items to known interest domains.
    Partition,
}

/// Sparse linear-combination coefficients mapping central basis rows to
/// per-item central embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMatrix {
    kind: FusionKind,
    coeffs: SparseRows,
}

impl FusionMatrix {
    pub fn from_parts(kind: FusionKind, coeffs: SparseRows) -> Self {
        FusionMatrix { kind, coeffs }
    }

    pub fn kind(&self) -> FusionKind {
        self.kind
    }

    /// Number of items (rows).
    pub fn n_items(&self) -> usize {
        self.coeffs.n_rows()
    }

    /// Number of central basis rows (columns).
    pub fn n_basis(&self) -> usize {
        self.coeffs.n_cols()
    }

    pub fn row(&self, i: usize) -> &[(ItemId, f64)] {
        self.coeffs.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coeffs.get(i, j)
    }

    pub fn coeffs(&self) -> &SparseRows {
        &self.coeffs
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.coeffs.to_dense()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.coeffs.is_symmetric(tol)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.coeffs.row(i).iter().map(|&(_, w)| w).sum()
    }

    /// Largest |eigenvalue| estimate for a symmetric matrix by power iteration.
    pub fn spectral_radius(&self, iters: usize) -> f64 {
        let n = self.n_items();
        if n == 0 {
            return 0.0;
        }
        // Deterministic start vector with no special alignment.
        let mut x: Array2<f64> =
            Array2::from_shape_fn((n, 1), |(i, _)| 1.0 + ((i * 7919) % 113) as f64 / 113.0);
        let mut norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x /= norm;
        let mut estimate = 0.0;
        for _ in 0..iters {
            let y = self.coeffs.matmul(&x);
            norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            estimate = norm;
            if norm == 0.0 {
                return 0.0;
            }
            x = y / norm;
        }
        estimate
    }
}

/// Uniform weights over each row's neighbours: `1 / n_i`.
pub fn fuse_avg(graph: &CooccurrenceGraph) -> FusionMatrix {
    let rows = (0..graph.n_items())
        .map(|i| {
            let row = graph.row(i);
            let w = 1.0 / row.len() as f64;
            row.iter().map(|&(j, _)| (j, w)).collect()
        })
        .collect();
    FusionMatrix {
        kind: FusionKind::Avg,
        coeffs: SparseRows::from_rows(graph.n_items(), rows),
    }
}

/// Symmetric degree normalization `D^{-1/2} Z D^{-1/2}` with row-sum degrees.
/// Expects a symmetric graph.
pub fn fuse_gcn(graph: &CooccurrenceGraph) -> FusionMatrix {
    let degree: Vec<f64> = (0..graph.n_items())
        .map(|i| graph.row(i).iter().map(|&(_, w)| w).sum())
        .collect();
    let rows = (0..graph.n_items())
        .map(|i| {
            graph
                .row(i)
                .iter()
                .filter(|&&(j, _)| degree[j as usize] > 0.0)
                .map(|&(j, z)| (j, z / (degree[i] * degree[j as usize]).sqrt()))
                .collect()
        })
        .collect();
    FusionMatrix {
        kind: FusionKind::Gcn,
        coeffs: SparseRows::from_rows(graph.n_items(), rows),
    }
}

/// Softmax over `C_b(i)·C_b(j)` restricted to the neighbours of `i`.
pub fn fuse_att(graph: &CooccurrenceGraph, central: &Array2<f64>) -> Result<FusionMatrix> {
    if central.nrows() != graph.n_items() {
        return Err(Error::invalid(format!(
            "central basis has {} rows, graph has {} items",
            central.nrows(),
            graph.n_items()
        )));
    }
    if central.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("central basis contains non-finite entries"));
    }
    let rows = (0..graph.n_items())
        .map(|i| att_row(graph, central, i))
        .collect();
    Ok(FusionMatrix {
        kind: FusionKind::Att,
        coeffs: SparseRows::from_rows(graph.n_items(), rows),
    })
}

/// One row of the attention fusion matrix, computed on demand.
pub fn att_row(graph: &CooccurrenceGraph, central: &Array2<f64>, i: usize) -> Vec<(ItemId, f64)> {
    let row = graph.row(i);
    if row.is_empty() {
        return Vec::new();
    }
    let ci = central.row(i);
    let scores: Vec<f64> = row
        .iter()
        .map(|&(j, _)| dot(ci, central.row(j as usize)))
        .collect();
    let weights = softmax(&scores);
    row.iter().map(|&(j, _)| j).zip(weights).collect()
}

pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax.
pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One line of the sequence input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSequence {
    pub user: String,
    pub items: Vec<ItemId>,
}

pub fn read_sequences_jsonl(path: &Path) -> Result<Vec<UserSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UserSequence = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sequences_jsonl(path: &Path, sequences: &[UserSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in sequences {
        let line = serde_json::to_string(rec).map_err(|source| Error::Json {
            context: "serializing sequence".into(),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn seqs(raw: &[&[ItemId]]) -> Vec<BehaviorSequence> {
        raw.iter()
            .map(|s| BehaviorSequence::new(s.to_vec()).unwrap())
            .collect()
    }

    fn graph_from_rows(n: usize, rows: &[(usize, &[(usize, f64)])]) -> CooccurrenceGraph {
        let edges = rows
            .iter()
            .flat_map(|&(i, row)| row.iter().map(move |&(j, w)| (i, j, w)));
        CooccurrenceGraph::from_edges(n, edges).unwrap()
    }

    #[test]
    fn window_covers_whole_short_sequence() {
        let z = build_cooccurrence(&seqs(&[&[0, 1, 2]]), 2, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 1.0 };
                assert_eq!(z.weight(i, j), expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn no_sequences_no_edges() {
        let z = build_cooccurrence(&[], 3, 5).unwrap();
        assert_eq!(z.n_edges(), 0);
        assert_eq!(z.n_items(), 5);
    }

    #[test]
    fn repeated_item_skips_self_pairs() {
        let z = build_cooccurrence(&seqs(&[&[0, 1, 0]]), 1, 2).unwrap();
        assert_eq!(z.weight(0, 1), 2.0);
        assert_eq!(z.weight(1, 0), 2.0);
        assert_eq!(z.weight(0, 0), 0.0);
    }

    #[test]
    fn rejects_out_of_range_ids_and_zero_window() {
        assert!(build_cooccurrence(&seqs(&[&[0, 5]]), 1, 5).is_err());
        assert!(build_cooccurrence(&seqs(&[&[0, 1]]), 0, 5).is_err());
        assert!(BehaviorSequence::new(vec![]).is_err());
    }

    #[test]
    fn topk_keeps_heaviest() {
        let z = graph_from_rows(4, &[(0, &[(1, 5.0), (2, 3.0), (3, 1.0)])]);
        let p = z.prune_topk(2).unwrap();
        assert_eq!(p.row(0), &[(1, 5.0), (2, 3.0)]);
    }

    #[test]
    fn topk_short_row_unchanged() {
        let z = graph_from_rows(2, &[(0, &[(1, 5.0)])]);
        assert_eq!(z.prune_topk(8).unwrap(), z);
    }

    #[test]
    fn topk_ties_prefer_smaller_column() {
        let z = graph_from_rows(4, &[(0, &[(3, 2.0), (1, 2.0), (2, 2.0)])]);
        let p = z.prune_topk(2).unwrap();
        assert_eq!(p.row(0), &[(1, 2.0), (2, 2.0)]);
        assert!(z.prune_topk(0).is_err());
    }

    #[test]
    fn symmetrize_union_and_max() {
        let z = graph_from_rows(2, &[(0, &[(1, 3.0)])]).symmetrize();
        assert_eq!((z.weight(0, 1), z.weight(1, 0)), (3.0, 3.0));
        let z = graph_from_rows(2, &[(0, &[(1, 3.0)]), (1, &[(0, 5.0)])]).symmetrize();
        assert_eq!((z.weight(0, 1), z.weight(1, 0)), (5.0, 5.0));
        assert_eq!(CooccurrenceGraph::empty(3).symmetrize().n_edges(), 0);
    }

    #[test]
    fn avg_uniform_over_nonzeros() {
        let z = graph_from_rows(5, &[(0, &[(1, 2.0), (2, 5.0), (4, 1.0)])]);
        let w = fuse_avg(&z);
        let third = 1.0 / 3.0;
        assert_eq!(w.row(0), &[(1, third), (2, third), (4, third)]);
        assert!(w.row(3).is_empty());
    }

    #[test]
    fn avg_complete_island_of_four() {
        let edges = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j, 1.0)));
        let w = fuse_avg(&CooccurrenceGraph::from_edges(4, edges).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_abs_diff_eq!(w.get(i, j), expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gcn_normalization_examples() {
        let w = fuse_gcn(&graph_from_rows(2, &[(0, &[(1, 1.0)]), (1, &[(0, 1.0)])]));
        assert_eq!(w.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        let w = fuse_gcn(&graph_from_rows(2, &[(0, &[(1, 2.0)]), (1, &[(0, 2.0)])]));
        assert_eq!(w.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        let star = graph_from_rows(
            3,
            &[
                (0, &[(1, 1.0), (2, 1.0)]),
                (1, &[(0, 1.0)]),
                (2, &[(0, 1.0)]),
            ],
        );
        let w = fuse_gcn(&star);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (i, j) in [(0, 1), (0, 2), (1, 0), (2, 0)] {
            assert_abs_diff_eq!(w.get(i, j), r, epsilon = 1e-15);
        }
        assert_eq!(w.get(1, 2), 0.0);
    }

    #[test]
    fn att_examples() {
        let z = graph_from_rows(3, &[(0, &[(1, 1.0), (2, 4.0)]), (1, &[(0, 1.0)])]);
        // Row 0: scores c0·c1 and c0·c2.
        let equal = array![[1.0, 0.0], [0.5, 0.5], [0.5, -0.5]];
        let w = fuse_att(&z, &equal).unwrap();
        assert_abs_diff_eq!(w.get(0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 2), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(1, 0), 1.0, epsilon = 1e-15);

        let ln2 = std::f64::consts::LN_2;
        let skewed = array![[1.0, 0.0], [ln2, 3.0], [0.0, -1.0]];
        let w = fuse_att(&z, &skewed).unwrap();
        assert_abs_diff_eq!(w.get(0, 1), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 2), 1.0 / 3.0, epsilon = 1e-15);
        assert!(w.row(2).is_empty());
    }

    #[test]
    fn att_large_scores_do_not_overflow() {
        let z = graph_from_rows(3, &[(0, &[(1, 1.0), (2, 1.0)])]);
        let c = array![[100.0], [10.0], [9.0]];
        let w = fuse_att(&z, &c).unwrap();
        assert!(w.row(0).iter().all(|&(_, v)| v.is_finite()));
        assert_abs_diff_eq!(w.row_sum(0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn graph_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        let z = graph_from_rows(4, &[(0, &[(1, 3.0), (3, 0.5)]), (2, &[(1, 1.25)])]);
        z.write_text(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "H 4\n0 1 3\n0 3 0.5\n2 1 1.25\n");
        assert_eq!(CooccurrenceGraph::read_text(&path).unwrap(), z);
    }

    #[test]
    fn graph_file_rejects_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        std::fs::write(&path, "H 2\n1 1 2\n").unwrap();
        assert!(CooccurrenceGraph::read_text(&path).is_err());
    }
}
