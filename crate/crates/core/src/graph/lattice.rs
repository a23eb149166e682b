use serde::{Deserialize, Serialize};

use super::{
    bpr_embedding_grads, build_modality_item_graph, check_tables, row_normalize,
    row_normalize_backward, triple_l2, DEFAULT_GRAPH_K,
};
use crate::dataset::InteractionDataset;
use crate::error::Result;
use crate::factor::INIT_STD;
use crate::features::FeatureTable;
use crate::linalg::{dot, Csr, Matrix};
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};
use crate::training::{self, EpochContext, TrainConfig, TrainOutcome, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub graph_k: usize,
    pub graph_layers: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            graph_k: DEFAULT_GRAPH_K,
            graph_layers: 1,
        }
    }
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// MF backbone with item enhancement `z_i + normalize((A^L Q)_i)`,
/// `A = Σ_m softmax(α)_m Ŝ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub users: Matrix,
    pub items: Matrix,
    pub alpha: Vec<f64>,
    pub graphs: Vec<Csr>,
    pub layers: usize,
}

pub struct LatticeGrad {
    pub users: Matrix,
    pub items: Matrix,
    pub alpha: Vec<f64>,
}

struct Forward {
    hs: Vec<Matrix>,
    a: Csr,
    r: Matrix,
    norms: Vec<f64>,
    z: Matrix,
}

impl Lattice {
    pub fn init(
        n_users: usize,
        graphs: Vec<Csr>,
        n_items: usize,
        dim: usize,
        layers: usize,
        seed: u64,
    ) -> Self {
        let mut r = rng::stream(seed, 0);
        let users = Matrix::random_normal(n_users, dim, INIT_STD, &mut r);
        let items = Matrix::random_normal(n_items, dim, INIT_STD, &mut r);
        Self {
            users,
            items,
            alpha: vec![0.0; graphs.len()],
            graphs,
            layers,
        }
    }

    pub fn modality_weights(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }

    pub fn combined_graph(&self) -> Csr {
        let refs: Vec<&Csr> = self.graphs.iter().collect();
        Csr::weighted_sum(&refs, &self.modality_weights())
    }

    fn forward(&self) -> Forward {
        let a = self.combined_graph();
        let mut hs = vec![self.items.clone()];
        for _ in 0..self.layers {
            let next = a.mul_dense(hs.last().unwrap());
            hs.push(next);
        }
        let (r, norms) = row_normalize(hs.last().unwrap());
        let mut z = self.items.clone();
        z.add_scaled(1.0, &r);
        Forward { hs, a, r, norms, z }
    }

    /// Final item representations.
    pub fn item_repr(&self) -> Matrix {
        self.forward().z
    }

    pub fn batch_loss(&self, batch: &[(usize, usize, usize)], l2: f64) -> f64 {
        let f = self.forward();
        let mut gu = Matrix::zeros(self.users.rows(), self.users.cols());
        let mut gz = Matrix::zeros(f.z.rows(), f.z.cols());
        bpr_embedding_grads(&self.users, &f.z, batch, &mut gu, &mut gz)
            + triple_l2(&self.users, &self.items, batch, l2, None)
    }

    pub fn batch_loss_grad(&self, batch: &[(usize, usize, usize)], l2: f64) -> (f64, LatticeGrad) {
        let f = self.forward();
        let mut gu = Matrix::zeros(self.users.rows(), self.users.cols());
        let mut gz = Matrix::zeros(f.z.rows(), f.z.cols());
        let mut loss = bpr_embedding_grads(&self.users, &f.z, batch, &mut gu, &mut gz);
        let mut gi = gz.clone();
        let mut dh = row_normalize_backward(&f.r, &f.norms, &gz);
        let mut dw = vec![0.0; self.graphs.len()];
        for l in (1..=self.layers).rev() {
            for (m, g) in self.graphs.iter().enumerate() {
                dw[m] += dot(dh.as_slice(), g.mul_dense(&f.hs[l - 1]).as_slice());
            }
            dh = f.a.mul_dense(&dh);
        }
        gi.add_scaled(1.0, &dh);
        loss += triple_l2(
            &self.users,
            &self.items,
            batch,
            l2,
            Some((&mut gu, &mut gi)),
        );
        let w = self.modality_weights();
        let wd: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        let galpha = w.iter().zip(&dw).map(|(wk, dk)| wk * (dk - wd)).collect();
        (
            loss,
            LatticeGrad {
                users: gu,
                items: gi,
                alpha: galpha,
            },
        )
    }

    pub fn apply(&mut self, g: &LatticeGrad, lr: f64) {
        self.users.add_scaled(-lr, &g.users);
        self.items.add_scaled(-lr, &g.items);
        for (a, ga) in self.alpha.iter_mut().zip(&g.alpha) {
            *a -= lr * ga;
        }
    }
}

impl Trainable for Lattice {
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64> {
        let triples = training::sample_triples(ctx, rng);
        let mut total = 0.0;
        for batch in triples.chunks(ctx.batch_size) {
            let (loss, g) = self.batch_loss_grad(batch, ctx.l2_reg);
            total += loss;
            self.apply(&g, ctx.learning_rate);
        }
        Ok(total)
    }

    fn scorer(&self) -> EmbeddingScorer {
        EmbeddingScorer::new(self.users.clone(), self.item_repr(), None)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("lattice").with_scorer(&self.scorer());
        ck.insert("user_embedding", self.users.clone());
        ck.insert("item_embedding", self.items.clone());
        ck.insert_vec("modality_logits", &self.alpha);
        ck
    }

    fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite() && self.alpha.iter().all(|a| a.is_finite())
    }
}

pub fn train_lattice(
    ds: &InteractionDataset,
    features: &[FeatureTable],
    cfg: &TrainConfig,
    lc: &LatticeConfig,
) -> Result<TrainOutcome> {
    check_tables(features, ds.item_ids())?;
    let graphs = features
        .iter()
        .map(|t| build_modality_item_graph(t, lc.graph_k).map(|g| g.normalized))
        .collect::<Result<Vec<_>>>()?;
    let mut m = Lattice::init(
        ds.n_users(),
        graphs,
        ds.n_items(),
        cfg.latent_dim,
        lc.graph_layers,
        cfg.seed,
    );
    training::fit(&mut m, ds, cfg)
}
