//! Graph recommenders: LightGCN and simplified LATTICE, FREEDOM and BM3.
//!
//! All four share the normalized user-item graph below. Users occupy node ids
//! `0..n_users`, items `n_users..n_users + n_items`.

mod bm3;
mod freedom;
mod lattice;
mod lightgcn;

use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::linalg::{axpy, dot, norm, sigmoid, softplus, Csr, Matrix};

pub use bm3::{train_bm3, Bm3, Bm3Batch, Bm3Config};
pub use freedom::{build_freedom, prune_edges, train_freedom, Freedom, FreedomConfig};
pub use lattice::{softmax, train_lattice, Lattice, LatticeConfig};
pub use lightgcn::{train_lightgcn, LightGcn, LightGcnConfig};

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_GRAPH_K: usize = 10;

/// Train interactions with weights `w(u, i) = 1/√(deg(u)·deg(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBipartiteGraph {
    n_users: usize,
    n_items: usize,
    edges: Vec<(usize, usize)>,
    adj: Csr,
    isolated: Vec<bool>,
}

impl NormalizedBipartiteGraph {
    /// Duplicate edges are collapsed.
    pub fn new(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Self {
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let mut du = vec![0usize; n_users];
        let mut di = vec![0usize; n_items];
        for &(u, i) in &edges {
            du[u] += 1;
            di[i] += 1;
        }
        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(u, i) in &edges {
            let w = 1.0 / ((du[u] * di[i]) as f64).sqrt();
            trip.push((u, n_users + i, w));
            trip.push((n_users + i, u, w));
        }
        let n = n_users + n_items;
        let isolated = du.iter().chain(&di).map(|&d| d == 0).collect();
        Self {
            n_users,
            n_items,
            edges,
            adj: Csr::from_triplets(n, n, trip),
            isolated,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adj
    }

    pub fn is_isolated(&self, node: usize) -> bool {
        self.isolated[node]
    }

    pub fn n_isolated_users(&self) -> usize {
        self.isolated[..self.n_users].iter().filter(|&&b| b).count()
    }

    /// One layer `x ↦ Âx`; isolated nodes copy their own row.
    pub fn step(&self, x: &Matrix) -> Matrix {
        let mut next = self.adj.mul_dense(x);
        for (node, &iso) in self.isolated.iter().enumerate() {
            if iso {
                next.row_mut(node).copy_from_slice(x.row(node));
            }
        }
        next
    }

    /// Mean of layers `0..=layers` over stacked node embeddings. The operator is
    /// symmetric, so the same call maps output gradients back to the input.
    pub fn propagate(&self, x: &Matrix, layers: usize) -> Matrix {
        assert_eq!(x.rows(), self.n_nodes());
        let mut acc = x.clone();
        let mut cur = x.clone();
        for _ in 0..layers {
            cur = self.step(&cur);
            acc.add_scaled(1.0, &cur);
        }
        acc.scale(1.0 / (layers + 1) as f64);
        acc
    }
}

/// Mean-of-layers LightGCN propagation over separate user and item tables.
pub fn lightgcn_propagate(
    graph: &NormalizedBipartiteGraph,
    user_emb: &Matrix,
    item_emb: &Matrix,
    layers: usize,
) -> (Matrix, Matrix) {
    let out = graph.propagate(&user_emb.vstack(item_emb), layers);
    let nu = graph.n_users();
    (out.slice_rows(0, nu), out.slice_rows(nu, graph.n_nodes()))
}

/// Top-k cosine neighbors per item, symmetrized and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemItemGraph {
    pub k: usize,
    /// Per-item top-k `(neighbor, cosine)` before symmetrization.
    pub topk: Vec<Vec<(u32, f64)>>,
    /// `Ŝ = D^(−1/2)·S·D^(−1/2)` over the union support of the top-k lists.
    pub normalized: Csr,
    pub frozen: bool,
}

impl ItemItemGraph {
    pub fn n_items(&self) -> usize {
        self.topk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.nnz() == 0
    }

    /// `i\tj\tweight` per stored normalized entry.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_edges_tsv(&self.normalized, path)
    }
}

pub fn write_edges_tsv(m: &Csr, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for i in 0..m.n_rows() {
        for (j, v) in m.row(i) {
            writeln!(w, "{i}\t{j}\t{v}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Symmetric normalization of a non-negative symmetric matrix; zero-degree rows stay empty.
pub fn sym_normalize(s: &Csr) -> Csr {
    let deg = s.row_sums();
    let mut trip = Vec::with_capacity(s.nnz());
    for i in 0..s.n_rows() {
        for (j, v) in s.row(i) {
            if deg[i] > 0.0 && deg[j] > 0.0 {
                trip.push((i, j, v / (deg[i].sqrt() * deg[j].sqrt())));
            }
        }
    }
    Csr::from_triplets(s.n_rows(), s.n_cols(), trip)
}

pub fn build_modality_item_graph(features: &FeatureTable, k: usize) -> Result<ItemItemGraph> {
    if k == 0 {
        return Err(Error::invalid("item graph k must be at least 1"));
    }
    let n = features.n_items();
    let rows: Vec<Vec<f64>> = (0..n).map(|r| features.row_f64(r)).collect();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    let zero = norms.iter().filter(|&&x| x == 0.0).count();
    if zero > 0 {
        log::info!("{zero} items have zero-norm features and get no neighbors");
    }
    let topk: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if norms[i] == 0.0 {
                return Vec::new();
            }
            let mut cand: Vec<(u32, f64)> = (0..n)
                .filter(|&j| j != i && norms[j] > 0.0)
                .map(|j| (j as u32, dot(&rows[i], &rows[j]) / (norms[i] * norms[j])))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(k);
            cand
        })
        .collect();
    // max(S, Sᵀ): cosine is symmetric, so the union support carries the same value.
    let mut trip = Vec::new();
    for (i, list) in topk.iter().enumerate() {
        for &(j, s) in list {
            trip.push((i, j as usize, s));
            trip.push((j as usize, i, s));
        }
    }
    trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    trip.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    let s = Csr::from_triplets(n, n, trip);
    Ok(ItemItemGraph {
        k,
        topk,
        normalized: sym_normalize(&s),
        frozen: false,
    })
}

/// BPR over final embeddings `score = user_u · item_i`: returns the summed
/// softplus loss and accumulates `∂/∂user`, `∂/∂item` into the given buffers.
pub(crate) fn bpr_embedding_grads(
    users: &Matrix,
    items: &Matrix,
    batch: &[(usize, usize, usize)],
    gu: &mut Matrix,
    gi: &mut Matrix,
) -> f64 {
    let mut loss = 0.0;
    let d = users.cols();
    let mut diff = vec![0.0; d];
    for &(u, i, j) in batch {
        let (pu, qi, qj) = (users.row(u), items.row(i), items.row(j));
        for k in 0..d {
            diff[k] = qi[k] - qj[k];
        }
        let x = dot(pu, &diff);
        loss += softplus(-x);
        let g = -sigmoid(-x);
        axpy(g, &diff, gu.row_mut(u));
        axpy(g, pu, gi.row_mut(i));
        axpy(-g, pu, gi.row_mut(j));
    }
    loss
}

/// `Σ_t (‖a_u‖² + ‖b_i‖² + ‖b_j‖²)` over a batch; gradient `2·l2·x` added when `grads` is given.
pub(crate) fn triple_l2(
    a: &Matrix,
    b: &Matrix,
    batch: &[(usize, usize, usize)],
    l2: f64,
    grads: Option<(&mut Matrix, &mut Matrix)>,
) -> f64 {
    let mut s = 0.0;
    for &(u, i, j) in batch {
        s += dot(a.row(u), a.row(u)) + dot(b.row(i), b.row(i)) + dot(b.row(j), b.row(j));
    }
    if let Some((ga, gb)) = grads {
        for &(u, i, j) in batch {
            axpy(2.0 * l2, a.row(u), ga.row_mut(u));
            axpy(2.0 * l2, b.row(i), gb.row_mut(i));
            axpy(2.0 * l2, b.row(j), gb.row_mut(j));
        }
    }
    l2 * s
}

/// Rows scaled to unit norm, zero rows kept; also returns the norms.
pub(crate) fn row_normalize(h: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for r in 0..h.rows() {
        let n = norm(h.row(r));
        norms.push(n);
        if n > 0.0 {
            out.row_mut(r).iter_mut().for_each(|x| *x /= n);
        }
    }
    (out, norms)
}

/// Backward pass of [`row_normalize`]: `(g − r (r·g)) / ‖h‖` per row.
pub(crate) fn row_normalize_backward(normalized: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(g.rows(), g.cols());
    for r in 0..g.rows() {
        if norms[r] == 0.0 {
            continue;
        }
        let rr = normalized.row(r);
        let gr = g.row(r);
        let proj = dot(rr, gr);
        let dst = out.row_mut(r);
        for k in 0..dst.len() {
            dst[k] = (gr[k] - rr[k] * proj) / norms[r];
        }
    }
    out
}

/// Checks the per-modality tables are aligned to the same item order.
pub(crate) fn check_tables(tables: &[FeatureTable], item_ids: &[String]) -> Result<()> {
    if tables.is_empty() {
        return Err(Error::invalid("at least one feature table is required"));
    }
    for t in tables {
        if t.item_ids() != item_ids {
            return Err(Error::ItemMismatch(format!(
                "feature table '{}' is not aligned to the dataset items",
                t.provenance.extractor_name
            )));
        }
    }
    Ok(())
}
