use serde::{Deserialize, Serialize};

use super::{bpr_embedding_grads, triple_l2, NormalizedBipartiteGraph, DEFAULT_LAYERS};
use crate::dataset::{InteractionDataset, Split};
use crate::error::Result;
use crate::factor::INIT_STD;
use crate::linalg::Matrix;
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};
use crate::training::{self, EpochContext, TrainConfig, TrainOutcome, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightGcnConfig {
    pub layers: usize,
}

impl Default for LightGcnConfig {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
        }
    }
}

/// BPR over mean-of-layers propagated embeddings; L2 on the layer-0 rows of each triple.
#[derive(Debug, Clone, PartialEq)]
pub struct LightGcn {
    pub graph: NormalizedBipartiteGraph,
    /// Stacked layer-0 embeddings, users first.
    pub emb: Matrix,
    pub layers: usize,
}

impl LightGcn {
    pub fn init(graph: NormalizedBipartiteGraph, dim: usize, layers: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let users = Matrix::random_normal(graph.n_users(), dim, INIT_STD, &mut r);
        let items = Matrix::random_normal(graph.n_items(), dim, INIT_STD, &mut r);
        Self {
            emb: users.vstack(&items),
            graph,
            layers,
        }
    }

    fn split(&self, m: &Matrix) -> (Matrix, Matrix) {
        let nu = self.graph.n_users();
        (m.slice_rows(0, nu), m.slice_rows(nu, self.graph.n_nodes()))
    }

    pub fn propagated(&self) -> (Matrix, Matrix) {
        self.split(&self.graph.propagate(&self.emb, self.layers))
    }

    /// Returns `(loss, ∂loss/∂emb)`.
    pub fn batch_loss_grad(&self, batch: &[(usize, usize, usize)], l2: f64) -> (f64, Matrix) {
        let (pu, pi) = self.propagated();
        let mut gu = Matrix::zeros(pu.rows(), pu.cols());
        let mut gi = Matrix::zeros(pi.rows(), pi.cols());
        let mut loss = bpr_embedding_grads(&pu, &pi, batch, &mut gu, &mut gi);
        let mut grad = self.graph.propagate(&gu.vstack(&gi), self.layers);
        let (e_u, e_i) = self.split(&self.emb);
        let (mut ru, mut ri) = (
            Matrix::zeros(e_u.rows(), e_u.cols()),
            Matrix::zeros(e_i.rows(), e_i.cols()),
        );
        loss += triple_l2(&e_u, &e_i, batch, l2, Some((&mut ru, &mut ri)));
        grad.add_scaled(1.0, &ru.vstack(&ri));
        (loss, grad)
    }

    pub fn batch_loss(&self, batch: &[(usize, usize, usize)], l2: f64) -> f64 {
        let (pu, pi) = self.propagated();
        let mut gu = Matrix::zeros(pu.rows(), pu.cols());
        let mut gi = Matrix::zeros(pi.rows(), pi.cols());
        let (e_u, e_i) = self.split(&self.emb);
        bpr_embedding_grads(&pu, &pi, batch, &mut gu, &mut gi)
            + triple_l2(&e_u, &e_i, batch, l2, None)
    }
}

impl Trainable for LightGcn {
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64> {
        let triples = training::sample_triples(ctx, rng);
        let mut total = 0.0;
        for batch in triples.chunks(ctx.batch_size) {
            let (loss, grad) = self.batch_loss_grad(batch, ctx.l2_reg);
            total += loss;
            self.emb.add_scaled(-ctx.learning_rate, &grad);
        }
        Ok(total)
    }

    fn scorer(&self) -> EmbeddingScorer {
        let (u, i) = self.propagated();
        EmbeddingScorer::new(u, i, None)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("lightgcn").with_scorer(&self.scorer());
        ck.insert("embedding", self.emb.clone());
        ck
    }

    fn is_finite(&self) -> bool {
        self.emb.is_finite()
    }
}

pub fn train_lightgcn(
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    gcn: &LightGcnConfig,
) -> Result<TrainOutcome> {
    let edges: Vec<(usize, usize)> = ds.pairs_in(Split::Train).collect();
    let graph = NormalizedBipartiteGraph::new(ds.n_users(), ds.n_items(), &edges);
    let mut m = LightGcn::init(graph, cfg.latent_dim, gcn.layers, cfg.seed);
    training::fit(&mut m, ds, cfg)
}
