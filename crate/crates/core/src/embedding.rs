//! Residual embeddings: `E = W·C_b + R`.
//!
//! `C_b` is the central embedding basis and `R` the per-item residual. With a
//! graph-derived `W` each item's central part is a combination of its
//! neighbours' basis rows. With a one-hot partition matrix `P` in place of `W`
//! the same code gives the domain-prototype form `E = P·C + R`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dot, CooccurrenceGraph, FusionKind, FusionMatrix, ItemId, SparseRows};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 18;
/// Half-width of the uniform initializer for embedding tables.
pub const INIT_SCALE: f64 = 0.05;

/// Trainable embedding parameters. `central` has one row per basis vector
/// (items for graph fusion, domains for the prototype form, none when
/// embeddings are plain lookups).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub central: Array2<f64>,
    pub residual: Array2<f64>,
}

impl EmbedParams {
    pub fn new(central: Array2<f64>, residual: Array2<f64>) -> Result<Self> {
        if central.nrows() > 0 && central.ncols() != residual.ncols() {
            return Err(Error::invalid(format!(
                "central basis dim {} != residual dim {}",
                central.ncols(),
                residual.ncols()
            )));
        }
        if central
            .iter()
            .chain(residual.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("embedding parameters must be finite"));
        }
        Ok(EmbedParams { central, residual })
    }

    /// Uniform `[-INIT_SCALE, INIT_SCALE]` initialization.
    pub fn init(n_basis: usize, n_items: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |rows| {
            Array2::from_shape_simple_fn((rows, dim), || rng.gen_range(-INIT_SCALE..=INIT_SCALE))
        };
        let central = draw(n_basis);
        let residual = draw(n_items);
        EmbedParams { central, residual }
    }

    pub fn n_items(&self) -> usize {
        self.residual.nrows()
    }

    pub fn dim(&self) -> usize {
        self.residual.ncols()
    }
}

/// Assignment of each item to exactly one interest domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    assignment: Vec<u32>,
    n_domains: usize,
}

impl PartitionSpec {
    pub fn new(assignment: Vec<u32>, n_domains: usize) -> Result<Self> {
        if n_domains == 0 {
            return Err(Error::invalid("partition needs at least one domain"));
        }
        let mut seen = vec![false; n_domains];
        for (item, &dom) in assignment.iter().enumerate() {
            let slot = seen.get_mut(dom as usize).ok_or_else(|| {
                Error::invalid(format!(
                    "item {item} assigned to domain {dom}, only {n_domains} domains"
                ))
            })?;
            *slot = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("domain {empty} has no items")));
        }
        Ok(PartitionSpec {
            assignment,
            n_domains,
        })
    }

    /// Infers the domain count as `max + 1`.
    pub fn from_assignment(assignment: Vec<u32>) -> Result<Self> {
        let n = assignment.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(assignment, n)
    }

    pub fn n_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    pub fn domain(&self, item: usize) -> usize {
        self.assignment[item] as usize
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Items of every domain, in item order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_domains];
        for (item, &dom) in self.assignment.iter().enumerate() {
            out[dom as usize].push(item);
        }
        out
    }

    /// The one-hot item × domain matrix `P`.
    pub fn to_fusion(&self) -> FusionMatrix {
        let rows = self.assignment.iter().map(|&d| vec![(d, 1.0)]).collect();
        FusionMatrix::from_parts(
            FusionKind::Partition,
            SparseRows::from_rows(self.n_domains, rows),
        )
    }
}

/// Final per-item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Array2<f64>,
}

impl EmbeddingTable {
    pub fn n_items(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.table.row(i)
    }

    /// CSV with header `item_id,e_0,…,e_{d-1}`; values printed at full
    /// (round-trip) precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let header: Vec<String> = std::iter::once("item_id".to_string())
            .chain((0..self.dim()).map(|k| format!("e_{k}")))
            .collect();
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (i, row) in self.table.rows().into_iter().enumerate() {
            write!(out, "{i}").map_err(io)?;
            for v in row {
                write!(out, ",{v:?}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let dim = reader.headers()?.len().saturating_sub(1);
        let mut data = Vec::new();
        let mut n = 0;
        for (expected_id, rec) in reader.records().enumerate() {
            let rec = rec?;
            let id: usize = rec[0]
                .parse()
                .map_err(|_| Error::invalid(format!("bad item id `{}`", &rec[0])))?;
            if id != expected_id {
                return Err(Error::invalid(format!(
                    "embedding rows out of order: expected {expected_id}, got {id}"
                )));
            }
            for field in rec.iter().skip(1) {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad value `{field}`")))?,
                );
            }
            n += 1;
        }
        let table = Array2::from_shape_vec((n, dim), data)
            .map_err(|e| Error::invalid(format!("ragged embedding CSV: {e}")))?;
        Ok(EmbeddingTable { table })
    }
}

fn check_shapes(fusion: Option<&FusionMatrix>, params: &EmbedParams) -> Result<()> {
    if let Some(w) = fusion {
        if w.n_items() != params.n_items() {
            return Err(Error::invalid(format!(
                "fusion matrix has {} rows, residual has {}",
                w.n_items(),
                params.n_items()
            )));
        }
        if w.n_basis() != params.central.nrows() {
            return Err(Error::invalid(format!(
                "fusion matrix has {} columns, central basis has {} rows",
                w.n_basis(),
                params.central.nrows()
            )));
        }
        if params.central.ncols() != params.dim() {
            return Err(Error::invalid("central and residual dimensions differ"));
        }
    }
    Ok(())
}

/// `E = W·C_b + R`, or `E = R` when there is no fusion matrix.
pub fn resolve(fusion: Option<&FusionMatrix>, params: &EmbedParams) -> Result<EmbeddingTable> {
    check_shapes(fusion, params)?;
    let table = match fusion {
        Some(w) => w.coeffs().matmul(&params.central) + &params.residual,
        None => params.residual.clone(),
    };
    Ok(EmbeddingTable { table })
}

/// One resolved row; `coeffs` is that item's fusion row.
pub(crate) fn resolve_row(
    coeffs: &[(ItemId, f64)],
    params: &EmbedParams,
    item: usize,
) -> Array1<f64> {
    let mut e = params.residual.row(item).to_owned();
    for &(j, w) in coeffs {
        e.scaled_add(w, &params.central.row(j as usize));
    }
    e
}

/// `E = P·C + R` for a known item → domain partition.
pub fn prototype_resolve(
    partition: &PartitionSpec,
    centers: &Array2<f64>,
    residual: &Array2<f64>,
) -> Result<EmbeddingTable> {
    if partition.n_items() != residual.nrows() {
        return Err(Error::invalid(format!(
            "partition covers {} items, residual has {} rows",
            partition.n_items(),
            residual.nrows()
        )));
    }
    if partition.n_domains() > centers.nrows() {
        return Err(Error::invalid(format!(
            "partition uses {} domains but only {} centers given",
            partition.n_domains(),
            centers.nrows()
        )));
    }
    if centers.ncols() != residual.ncols() {
        return Err(Error::invalid("center and residual dimensions differ"));
    }
    let mut table = residual.clone();
    for (i, mut row) in table.rows_mut().into_iter().enumerate() {
        row += &centers.row(partition.domain(i));
    }
    Ok(EmbeddingTable { table })
}

/// Gradients of `loss(E) + λ‖R‖²_F` with respect to `C_b` and `R`, given
/// `∂loss/∂E`. The fusion matrix is treated as a constant.
pub fn backward_embedding(
    grad_e: &Array2<f64>,
    fusion: Option<&FusionMatrix>,
    params: &EmbedParams,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(fusion, params)?;
    if grad_e.dim() != params.residual.dim() {
        return Err(Error::invalid(
            "gradient shape does not match embedding table",
        ));
    }
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let grad_c = match fusion {
        Some(w) => w.coeffs().transpose_matmul(grad_e),
        None => Array2::zeros(params.central.dim()),
    };
    let grad_r = grad_e + &(&params.residual * (2.0 * lambda));
    Ok((grad_c, grad_r))
}

/// Extra `∂/∂C_b` contribution from differentiating through the attention
/// softmax for item `i`, accumulated into `grad_c` rows.
///
/// `weights` is the item's attention row and `g_i = ∂loss/∂E(i)`.
pub(crate) fn att_score_backward(
    graph: &CooccurrenceGraph,
    central: &Array2<f64>,
    i: usize,
    weights: &[(ItemId, f64)],
    g_i: ArrayView1<f64>,
    mut accumulate: impl FnMut(usize, f64, ArrayView1<f64>),
) {
    debug_assert_eq!(graph.row(i).len(), weights.len());
    // ∂loss/∂W(i,j) = g_i · C_b(j)
    let gw: Vec<f64> = weights
        .iter()
        .map(|&(j, _)| dot(g_i, central.row(j as usize)))
        .collect();
    let mean: f64 = weights.iter().zip(&gw).map(|(&(_, w), g)| w * g).sum();
    let ci = central.row(i);
    for (&(j, w), g) in weights.iter().zip(&gw) {
        // ∂loss/∂s(i,j) for s(i,j) = C_b(i)·C_b(j)
        let ds = w * (g - mean);
        if ds == 0.0 {
            continue;
        }
        let j = j as usize;
        accumulate(i, ds, central.row(j));
        accumulate(j, ds, ci);
    }
}

/// Full attention-mode gradient with respect to `C_b`, including the path
/// through the softmax coefficients.
pub fn backward_embedding_att_full(
    grad_e: &Array2<f64>,
    graph: &CooccurrenceGraph,
    params: &EmbedParams,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let w = crate::graph::fuse_att(graph, &params.central)?;
    let (mut grad_c, grad_r) = backward_embedding(grad_e, Some(&w), params, lambda)?;
    for i in 0..graph.n_items() {
        att_score_backward(
            graph,
            &params.central,
            i,
            w.row(i),
            grad_e.row(i),
            |row, s, v| grad_c.row_mut(row).scaled_add(s, &v),
        );
    }
    Ok((grad_c, grad_r))
}

/// Mean row norm of `R` over mean row norm of `W·C_b`; `None` when the
/// central part vanishes.
pub fn residual_scale_ratio(fusion: Option<&FusionMatrix>, params: &EmbedParams) -> Option<f64> {
    let w = fusion?;
    let central = w.coeffs().matmul(&params.central);
    let mean_norm = |m: &Array2<f64>| {
        m.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / m.nrows().max(1) as f64
    };
    let denom = mean_norm(&central);
    (denom > 0.0).then(|| mean_norm(&params.residual) / denom)
}
