use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    bpr_embedding_grads, build_modality_item_graph, check_tables, triple_l2,
    NormalizedBipartiteGraph, DEFAULT_GRAPH_K, DEFAULT_LAYERS,
};
use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::factor::INIT_STD;
use crate::features::FeatureTable;
use crate::linalg::{Csr, Matrix};
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};
use crate::training::{self, EpochContext, TrainConfig, TrainOutcome, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreedomConfig {
    pub graph_k: usize,
    pub layers: usize,
    pub item_layers: usize,
    /// Fixed per-modality weights; uniform when `None`.
    pub modality_weights: Option<Vec<f64>>,
    pub prune_ratio: f64,
}

impl Default for FreedomConfig {
    fn default() -> Self {
        Self {
            graph_k: DEFAULT_GRAPH_K,
            layers: DEFAULT_LAYERS,
            item_layers: 1,
            modality_weights: None,
            prune_ratio: 0.2,
        }
    }
}

impl FreedomConfig {
    pub fn weights(&self, n_modalities: usize) -> Result<Vec<f64>> {
        let w = self
            .modality_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / n_modalities as f64; n_modalities]);
        if w.len() != n_modalities {
            return Err(Error::DimensionMismatch {
                expected: n_modalities,
                got: w.len(),
            });
        }
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "modality weights must be non-negative and sum to 1",
            ));
        }
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return Err(Error::invalid(format!(
                "prune_ratio {} outside [0, 1)",
                self.prune_ratio
            )));
        }
        Ok(w)
    }
}

/// Keeps `round((1 − ratio)·|E|)` edges drawn without replacement with weight
/// `1/√(deg(u)·deg(i))`, so edges between popular endpoints are dropped more often.
/// Returns kept edges in input order.
pub fn prune_edges(
    edges: &[(usize, usize)],
    n_users: usize,
    n_items: usize,
    ratio: f64,
    rng: &mut StreamRng,
) -> Vec<(usize, usize)> {
    if ratio <= 0.0 || edges.is_empty() {
        return edges.to_vec();
    }
    let mut du = vec![0usize; n_users];
    let mut di = vec![0usize; n_items];
    for &(u, i) in edges {
        du[u] += 1;
        di[i] += 1;
    }
    let n_keep = ((1.0 - ratio) * edges.len() as f64).round() as usize;
    // Efraimidis-Spirakis: the n_keep largest keys ln(U)/w form a weighted sample.
    let mut keyed: Vec<(f64, usize)> = edges
        .iter()
        .enumerate()
        .map(|(e, &(u, i))| {
            let w = 1.0 / ((du[u] * di[i]) as f64).sqrt();
            let uni: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (uni.ln() / w, e)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = keyed[..n_keep].iter().map(|k| k.1).collect();
    keep.sort_unstable();
    keep.into_iter().map(|e| edges[e]).collect()
}

/// LightGCN on a per-epoch pruned user-item graph plus convolution of item ID
/// embeddings over a frozen item-item graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Freedom {
    full_graph: NormalizedBipartiteGraph,
    train_graph: NormalizedBipartiteGraph,
    item_graph: Csr,
    pub emb: Matrix,
    pub layers: usize,
    pub item_layers: usize,
    pub prune_ratio: f64,
}

impl Freedom {
    pub fn init(
        full_graph: NormalizedBipartiteGraph,
        item_graph: Csr,
        dim: usize,
        cfg: &FreedomConfig,
        seed: u64,
    ) -> Self {
        let mut r = rng::stream(seed, 0);
        let users = Matrix::random_normal(full_graph.n_users(), dim, INIT_STD, &mut r);
        let items = Matrix::random_normal(full_graph.n_items(), dim, INIT_STD, &mut r);
        Self {
            train_graph: full_graph.clone(),
            full_graph,
            item_graph,
            emb: users.vstack(&items),
            layers: cfg.layers,
            item_layers: cfg.item_layers,
            prune_ratio: cfg.prune_ratio,
        }
    }

    /// The frozen item-item graph.
    pub fn item_graph(&self) -> &Csr {
        &self.item_graph
    }

    /// The bipartite graph used by the current epoch.
    pub fn train_graph(&self) -> &NormalizedBipartiteGraph {
        &self.train_graph
    }

    /// Replaces the epoch graph with a fresh pruning of the full graph.
    pub fn resample_graph(&mut self, rng: &mut StreamRng) {
        let kept = prune_edges(
            self.full_graph.edges(),
            self.full_graph.n_users(),
            self.full_graph.n_items(),
            self.prune_ratio,
            rng,
        );
        let g = NormalizedBipartiteGraph::new(
            self.full_graph.n_users(),
            self.full_graph.n_items(),
            &kept,
        );
        let iso = g.n_isolated_users();
        if iso > self.full_graph.n_isolated_users() {
            log::warn!("edge pruning isolated {iso} users; they propagate identity this epoch");
        }
        self.train_graph = g;
    }

    fn item_conv(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for _ in 0..self.item_layers {
            h = self.item_graph.mul_dense(&h);
        }
        h
    }

    fn forward(&self, graph: &NormalizedBipartiteGraph) -> (Matrix, Matrix) {
        let nu = graph.n_users();
        let out = graph.propagate(&self.emb, self.layers);
        let users = out.slice_rows(0, nu);
        let mut items = out.slice_rows(nu, graph.n_nodes());
        items.add_scaled(
            1.0,
            &self.item_conv(&self.emb.slice_rows(nu, graph.n_nodes())),
        );
        (users, items)
    }

    pub fn batch_loss(&self, batch: &[(usize, usize, usize)], l2: f64) -> f64 {
        self.batch_loss_grad(batch, l2).0
    }

    pub fn batch_loss_grad(&self, batch: &[(usize, usize, usize)], l2: f64) -> (f64, Matrix) {
        let g = &self.train_graph;
        let nu = g.n_users();
        let (u, i) = self.forward(g);
        let mut gu = Matrix::zeros(u.rows(), u.cols());
        let mut gi = Matrix::zeros(i.rows(), i.cols());
        let mut loss = bpr_embedding_grads(&u, &i, batch, &mut gu, &mut gi);
        let conv_back = self.item_conv(&gi);
        let mut grad = g.propagate(&gu.vstack(&gi), self.layers);
        for r in 0..conv_back.rows() {
            crate::linalg::axpy(1.0, conv_back.row(r), grad.row_mut(nu + r));
        }
        let (e_u, e_i) = (
            self.emb.slice_rows(0, nu),
            self.emb.slice_rows(nu, g.n_nodes()),
        );
        let (mut ru, mut ri) = (
            Matrix::zeros(e_u.rows(), e_u.cols()),
            Matrix::zeros(e_i.rows(), e_i.cols()),
        );
        loss += triple_l2(&e_u, &e_i, batch, l2, Some((&mut ru, &mut ri)));
        grad.add_scaled(1.0, &ru.vstack(&ri));
        (loss, grad)
    }
}

impl Trainable for Freedom {
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64> {
        self.resample_graph(rng);
        let triples = training::sample_triples(ctx, rng);
        let mut total = 0.0;
        for batch in triples.chunks(ctx.batch_size) {
            let (loss, grad) = self.batch_loss_grad(batch, ctx.l2_reg);
            total += loss;
            self.emb.add_scaled(-ctx.learning_rate, &grad);
        }
        Ok(total)
    }

    /// Scores on the unpruned train graph.
    fn scorer(&self) -> EmbeddingScorer {
        let (u, i) = self.forward(&self.full_graph);
        EmbeddingScorer::new(u, i, None)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("freedom").with_scorer(&self.scorer());
        ck.insert("embedding", self.emb.clone());
        ck
    }

    fn is_finite(&self) -> bool {
        self.emb.is_finite()
    }
}

pub fn build_freedom(
    ds: &InteractionDataset,
    features: &[FeatureTable],
    cfg: &TrainConfig,
    fc: &FreedomConfig,
) -> Result<Freedom> {
    check_tables(features, ds.item_ids())?;
    let w = fc.weights(features.len())?;
    let graphs = features
        .iter()
        .map(|t| build_modality_item_graph(t, fc.graph_k).map(|g| g.normalized))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Csr> = graphs.iter().collect();
    let item_graph = Csr::weighted_sum(&refs, &w);
    let edges: Vec<(usize, usize)> = ds.pairs_in(Split::Train).collect();
    let full = NormalizedBipartiteGraph::new(ds.n_users(), ds.n_items(), &edges);
    Ok(Freedom::init(
        full,
        item_graph,
        cfg.latent_dim,
        fc,
        cfg.seed,
    ))
}

pub fn train_freedom(
    ds: &InteractionDataset,
    features: &[FeatureTable],
    cfg: &TrainConfig,
    fc: &FreedomConfig,
) -> Result<TrainOutcome> {
    let mut m = build_freedom(ds, features, cfg, fc)?;
    training::fit(&mut m, ds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ratio_keeps_every_edge() {
        let edges = vec![(0, 0), (0, 1), (1, 1)];
        let mut r = rng::stream(1, 2);
        assert_eq!(prune_edges(&edges, 2, 2, 0.0, &mut r), edges);
    }

    #[test]
    fn keeps_rounded_share() {
        let edges: Vec<(usize, usize)> = (0..10).map(|k| (k % 3, k)).collect();
        let mut r = rng::stream(1, 2);
        assert_eq!(prune_edges(&edges, 3, 10, 0.25, &mut r).len(), 8);
    }

    #[test]
    fn rejects_bad_weights() {
        let c = FreedomConfig {
            modality_weights: Some(vec![0.3, 0.3]),
            ..FreedomConfig::default()
        };
        assert!(c.weights(2).is_err());
        assert!(FreedomConfig::default().weights(3).is_ok());
    }
}
