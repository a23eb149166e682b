use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_tables, NormalizedBipartiteGraph, DEFAULT_LAYERS};
use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::factor::{features_matrix, INIT_STD};
use crate::features::FeatureTable;
use crate::linalg::{axpy, cosine_and_grad, dot, Matrix};
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};
use crate::training::{self, EpochContext, TrainConfig, TrainOutcome, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm3Config {
    pub layers: usize,
    pub dropout_p: f64,
}

impl Default for Bm3Config {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            dropout_p: 0.3,
        }
    }
}

/// Train pairs plus the dropout masks drawn for them. Mask entries are already
/// scaled: `0` or `1/(1 − p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm3Batch {
    pub pairs: Vec<(usize, usize)>,
    pub mask_u: Vec<Vec<f64>>,
    pub mask_i: Vec<Vec<f64>>,
    /// `[modality][pair]`
    pub mask_e: Vec<Vec<Vec<f64>>>,
}

fn draw_mask(dim: usize, p: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

impl Bm3Batch {
    pub fn sample(
        pairs: Vec<(usize, usize)>,
        dim: usize,
        n_modalities: usize,
        p: f64,
        rng: &mut StreamRng,
    ) -> Self {
        let mask_u = pairs.iter().map(|_| draw_mask(dim, p, rng)).collect();
        let mask_i = pairs.iter().map(|_| draw_mask(dim, p, rng)).collect();
        let mask_e = (0..n_modalities)
            .map(|_| pairs.iter().map(|_| draw_mask(dim, p, rng)).collect())
            .collect();
        Self {
            pairs,
            mask_u,
            mask_i,
            mask_e,
        }
    }

    /// Masks of ones: no dropout.
    pub fn without_dropout(pairs: Vec<(usize, usize)>, dim: usize, n_modalities: usize) -> Self {
        let ones = vec![vec![1.0; dim]; pairs.len()];
        Self {
            mask_u: ones.clone(),
            mask_i: ones.clone(),
            mask_e: vec![ones; n_modalities],
            pairs,
        }
    }
}

/// Negative-free training on LightGCN embeddings with cosine reconstruction,
/// content alignment and masked-content losses. Targets are stop-gradient views.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm3 {
    pub graph: NormalizedBipartiteGraph,
    pub emb: Matrix,
    /// `d × f_m` per modality.
    pub proj: Vec<Matrix>,
    pub features: Vec<Matrix>,
    pub layers: usize,
    pub dropout_p: f64,
}

pub struct Bm3Grad {
    pub emb: Matrix,
    pub proj: Vec<Matrix>,
}

fn masked(mask: &[f64], x: &[f64]) -> Vec<f64> {
    mask.iter().zip(x).map(|(m, v)| m * v).collect()
}

impl Bm3 {
    pub fn init(
        graph: NormalizedBipartiteGraph,
        features: Vec<Matrix>,
        dim: usize,
        cfg: &Bm3Config,
        seed: u64,
    ) -> Self {
        let mut r = rng::stream(seed, 0);
        let users = Matrix::random_normal(graph.n_users(), dim, INIT_STD, &mut r);
        let items = Matrix::random_normal(graph.n_items(), dim, INIT_STD, &mut r);
        let proj = features
            .iter()
            .enumerate()
            .map(|(m, f)| {
                Matrix::random_normal(
                    dim,
                    f.cols(),
                    INIT_STD,
                    &mut rng::stream(seed, 1 + m as u64),
                )
            })
            .collect();
        Self {
            emb: users.vstack(&items),
            graph,
            proj,
            features,
            layers: cfg.layers,
            dropout_p: cfg.dropout_p,
        }
    }

    pub fn dim(&self) -> usize {
        self.emb.cols()
    }

    fn content(&self, m: usize, i: usize) -> Vec<f64> {
        let (w, f) = (&self.proj[m], self.features[m].row(i));
        (0..w.rows()).map(|r| dot(w.row(r), f)).collect()
    }

    /// Returns the loss and, when `want_grad`, the gradient.
    pub fn batch_eval(&self, batch: &Bm3Batch, l2: f64, want_grad: bool) -> (f64, Option<Bm3Grad>) {
        let nu = self.graph.n_users();
        let d = self.dim();
        let z = self.graph.propagate(&self.emb, self.layers);
        let mut gz = Matrix::zeros(z.rows(), d);
        let mut gw: Vec<Matrix> = self
            .proj
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        let mut loss = 0.0;
        for (t, &(u, i)) in batch.pairs.iter().enumerate() {
            let (zu, zi) = (z.row(u), z.row(nu + i));
            let (c1, g1) = cosine_and_grad(&masked(&batch.mask_u[t], zu), zi);
            let (c2, g2) = cosine_and_grad(&masked(&batch.mask_i[t], zi), zu);
            loss += (1.0 - c1) + (1.0 - c2);
            if want_grad {
                let dst = gz.row_mut(u);
                for k in 0..d {
                    dst[k] -= batch.mask_u[t][k] * g1[k];
                }
                let dst = gz.row_mut(nu + i);
                for k in 0..d {
                    dst[k] -= batch.mask_i[t][k] * g2[k];
                }
            }
            for m in 0..self.proj.len() {
                let e = self.content(m, i);
                let (c3, g3) = cosine_and_grad(&e, zi);
                let mask = &batch.mask_e[m][t];
                let (c4, g4) = cosine_and_grad(&masked(mask, &e), &e);
                loss += (1.0 - c3) + (1.0 - c4);
                if want_grad {
                    let de: Vec<f64> = (0..d).map(|k| -g3[k] - mask[k] * g4[k]).collect();
                    let f = self.features[m].row(i);
                    for (r, &dr) in de.iter().enumerate() {
                        axpy(dr, f, gw[m].row_mut(r));
                    }
                }
            }
            loss += l2
                * (dot(self.emb.row(u), self.emb.row(u))
                    + dot(self.emb.row(nu + i), self.emb.row(nu + i)));
        }
        loss += l2 * self.proj.iter().map(Matrix::frobenius_sq).sum::<f64>();
        if !want_grad {
            return (loss, None);
        }
        let mut ge = self.graph.propagate(&gz, self.layers);
        for &(u, i) in &batch.pairs {
            axpy(2.0 * l2, self.emb.row(u), ge.row_mut(u));
            axpy(2.0 * l2, self.emb.row(nu + i), ge.row_mut(nu + i));
        }
        for (g, w) in gw.iter_mut().zip(&self.proj) {
            g.add_scaled(2.0 * l2, w);
        }
        (loss, Some(Bm3Grad { emb: ge, proj: gw }))
    }

    pub fn apply(&mut self, g: &Bm3Grad, lr: f64) {
        self.emb.add_scaled(-lr, &g.emb);
        for (w, gw) in self.proj.iter_mut().zip(&g.proj) {
            w.add_scaled(-lr, gw);
        }
    }
}

impl Trainable for Bm3 {
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64> {
        let mut pairs = ctx.pairs.to_vec();
        pairs.shuffle(rng);
        let mut total = 0.0;
        for chunk in pairs.chunks(ctx.batch_size) {
            let batch = Bm3Batch::sample(
                chunk.to_vec(),
                self.dim(),
                self.proj.len(),
                self.dropout_p,
                rng,
            );
            let (loss, g) = self.batch_eval(&batch, ctx.l2_reg, true);
            total += loss;
            self.apply(&g.unwrap(), ctx.learning_rate);
        }
        Ok(total)
    }

    fn scorer(&self) -> EmbeddingScorer {
        let nu = self.graph.n_users();
        let z = self.graph.propagate(&self.emb, self.layers);
        EmbeddingScorer::new(
            z.slice_rows(0, nu),
            z.slice_rows(nu, self.graph.n_nodes()),
            None,
        )
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("bm3").with_scorer(&self.scorer());
        ck.insert("embedding", self.emb.clone());
        for (m, w) in self.proj.iter().enumerate() {
            ck.insert(format!("projection.{m}"), w.clone());
        }
        ck
    }

    fn is_finite(&self) -> bool {
        self.emb.is_finite() && self.proj.iter().all(Matrix::is_finite)
    }
}

pub fn train_bm3(
    ds: &InteractionDataset,
    features: &[FeatureTable],
    cfg: &TrainConfig,
    bc: &Bm3Config,
) -> Result<TrainOutcome> {
    check_tables(features, ds.item_ids())?;
    if !(0.0..1.0).contains(&bc.dropout_p) {
        return Err(Error::invalid(format!(
            "dropout_p {} outside [0, 1)",
            bc.dropout_p
        )));
    }
    let edges: Vec<(usize, usize)> = ds.pairs_in(Split::Train).collect();
    let graph = NormalizedBipartiteGraph::new(ds.n_users(), ds.n_items(), &edges);
    let feats = features.iter().map(features_matrix).collect();
    let mut m = Bm3::init(graph, feats, cfg.latent_dim, bc, cfg.seed);
    training::fit(&mut m, ds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_vanishes_on_equal_views() {
        let g = NormalizedBipartiteGraph::new(1, 1, &[(0, 0)]);
        let feats = vec![Matrix::from_vec(1, 2, vec![1.0, 0.0])];
        let mut m = Bm3::init(
            g,
            feats,
            3,
            &Bm3Config {
                layers: 1,
                dropout_p: 0.0,
            },
            1,
        );
        m.emb = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        m.proj = vec![Matrix::from_vec(3, 2, vec![0.5, 0.0, -1.0, 0.0, 2.0, 0.0])];
        let b = Bm3Batch::without_dropout(vec![(0, 0)], 3, 1);
        let (loss, _) = m.batch_eval(&b, 0.0, false);
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn projection_gets_no_gradient_from_reconstruction() {
        // With L_align and L_mask alone able to move W, zeroing features leaves W's
        // gradient as pure weight decay.
        let g = NormalizedBipartiteGraph::new(2, 2, &[(0, 0), (1, 1), (0, 1)]);
        let feats = vec![Matrix::zeros(2, 4)];
        let m = Bm3::init(g, feats, 3, &Bm3Config::default(), 2);
        let b = Bm3Batch::without_dropout(vec![(0, 0), (1, 1)], 3, 1);
        let (_, grad) = m.batch_eval(&b, 0.0, true);
        assert!(grad.unwrap().proj[0].as_slice().iter().all(|&x| x == 0.0));
    }
}
