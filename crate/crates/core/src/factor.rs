//! BPR-MF and VBPR trained with mini-batch SGD on the BPR objective.
//!
//! Batch loss over triples `(u, i, j)`:
//!
//! ```text
//! x      = b_i − b_j + p_u·(q_i − q_j) [+ θ_u·E(f_i − f_j)]
//! L      = Σ softplus(−x) + l2·(‖p_u‖² + ‖q_i‖² + ‖q_j‖² + b_i² + b_j² [+ ‖θ_u‖²])  [+ l2·‖E‖²]
//! ```

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::linalg::{axpy, dot, sigmoid, softplus, Matrix};
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};
use crate::training::{self, EpochContext, TrainConfig, TrainOutcome, Trainable};

pub const INIT_STD: f64 = 0.01;

/// `−ln σ(pos − neg) + l2·norm_sq`, via the stable softplus form.
pub fn bpr_loss(score_pos: f64, score_neg: f64, params_norm_sq: f64, l2: f64) -> f64 {
    softplus(-(score_pos - score_neg)) + l2 * params_norm_sq
}

/// Visual/content branch of VBPR.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentBranch {
    /// `n_users × d_c`
    pub theta: Matrix,
    /// `d_c × feature_dim`
    pub proj: Matrix,
    /// `n_items × feature_dim`, fixed.
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub users: Matrix,
    pub items: Matrix,
    pub bias: Vec<f64>,
    pub content: Option<ContentBranch>,
}

/// Gradient with the same layout as [`FactorModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrad {
    pub users: Matrix,
    pub items: Matrix,
    pub bias: Vec<f64>,
    pub theta: Option<Matrix>,
    pub proj: Option<Matrix>,
}

pub fn features_matrix(features: &FeatureTable) -> Matrix {
    Matrix::from_vec(
        features.n_items(),
        features.dim(),
        features.data().iter().map(|&v| v as f64).collect(),
    )
}

impl FactorModel {
    /// Factors `N(0, 0.01²)`, biases 0. The content branch is drawn after the
    /// shared parameters so a zero feature table reproduces BPR-MF exactly.
    pub fn init(
        n_users: usize,
        n_items: usize,
        dim: usize,
        features: Option<Matrix>,
        seed: u64,
    ) -> Result<Self> {
        let mut r = rng::stream(seed, 0);
        let users = Matrix::random_normal(n_users, dim, INIT_STD, &mut r);
        let items = Matrix::random_normal(n_items, dim, INIT_STD, &mut r);
        let content = match features {
            None => None,
            Some(f) => {
                if f.rows() != n_items {
                    return Err(Error::DimensionMismatch {
                        expected: n_items,
                        got: f.rows(),
                    });
                }
                let theta = Matrix::random_normal(n_users, dim, INIT_STD, &mut r);
                let proj = Matrix::random_normal(dim, f.cols(), INIT_STD, &mut r);
                Some(ContentBranch {
                    theta,
                    proj,
                    features: f,
                })
            }
        };
        Ok(Self {
            users,
            items,
            bias: vec![0.0; n_items],
            content,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    /// `E·f` for one feature row.
    fn project(c: &ContentBranch, f: &[f64]) -> Vec<f64> {
        (0..c.proj.rows()).map(|r| dot(c.proj.row(r), f)).collect()
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        let mut s = self.bias[i] + dot(self.users.row(u), self.items.row(i));
        if let Some(c) = &self.content {
            s += dot(c.theta.row(u), &Self::project(c, c.features.row(i)));
        }
        s
    }

    fn diff_features(c: &ContentBranch, i: usize, j: usize) -> Vec<f64> {
        c.features
            .row(i)
            .iter()
            .zip(c.features.row(j))
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn batch_loss(&self, batch: &[(usize, usize, usize)], l2: f64) -> f64 {
        let mut loss = 0.0;
        for &(u, i, j) in batch {
            let mut norm_sq = dot(self.users.row(u), self.users.row(u))
                + dot(self.items.row(i), self.items.row(i))
                + dot(self.items.row(j), self.items.row(j))
                + self.bias[i] * self.bias[i]
                + self.bias[j] * self.bias[j];
            if let Some(c) = &self.content {
                norm_sq += dot(c.theta.row(u), c.theta.row(u));
            }
            loss += bpr_loss(self.score(u, i), self.score(u, j), norm_sq, l2);
        }
        if let Some(c) = &self.content {
            loss += l2 * c.proj.frobenius_sq();
        }
        loss
    }

    pub fn batch_gradient(&self, batch: &[(usize, usize, usize)], l2: f64) -> FactorGrad {
        let d = self.users.cols();
        let mut g = FactorGrad {
            users: Matrix::zeros(self.n_users(), d),
            items: Matrix::zeros(self.n_items(), d),
            bias: vec![0.0; self.n_items()],
            theta: self
                .content
                .as_ref()
                .map(|c| Matrix::zeros(c.theta.rows(), c.theta.cols())),
            proj: self.content.as_ref().map(|c| {
                let mut p = c.proj.clone();
                p.scale(2.0 * l2);
                p
            }),
        };
        for &(u, i, j) in batch {
            let x = self.score(u, i) - self.score(u, j);
            let gx = -sigmoid(-x);
            let pu = self.users.row(u);
            let (qi, qj) = (self.items.row(i), self.items.row(j));
            {
                let gu = g.users.row_mut(u);
                for k in 0..d {
                    gu[k] += gx * (qi[k] - qj[k]) + 2.0 * l2 * pu[k];
                }
            }
            axpy(gx, pu, g.items.row_mut(i));
            axpy(2.0 * l2, qi, g.items.row_mut(i));
            axpy(-gx, pu, g.items.row_mut(j));
            axpy(2.0 * l2, qj, g.items.row_mut(j));
            g.bias[i] += gx + 2.0 * l2 * self.bias[i];
            g.bias[j] += -gx + 2.0 * l2 * self.bias[j];
            if let Some(c) = &self.content {
                let df = Self::diff_features(c, i, j);
                let edf = Self::project(c, &df);
                let th = c.theta.row(u);
                let gt = g.theta.as_mut().unwrap().row_mut(u);
                for k in 0..gt.len() {
                    gt[k] += gx * edf[k] + 2.0 * l2 * th[k];
                }
                let gp = g.proj.as_mut().unwrap();
                for (r, &t) in th.iter().enumerate() {
                    axpy(gx * t, &df, gp.row_mut(r));
                }
            }
        }
        g
    }

    pub fn apply(&mut self, g: &FactorGrad, lr: f64) {
        self.users.add_scaled(-lr, &g.users);
        self.items.add_scaled(-lr, &g.items);
        for (b, gb) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
        if let Some(c) = &mut self.content {
            c.theta.add_scaled(-lr, g.theta.as_ref().unwrap());
            c.proj.add_scaled(-lr, g.proj.as_ref().unwrap());
        }
    }

    /// Flat view of every trainable parameter, in a fixed order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.users.as_slice());
        v.extend_from_slice(self.items.as_slice());
        v.extend_from_slice(&self.bias);
        if let Some(c) = &self.content {
            v.extend_from_slice(c.theta.as_slice());
            v.extend_from_slice(c.proj.as_slice());
        }
        v
    }

    pub fn set_params_flat(&mut self, v: &[f64]) {
        let mut pos = 0;
        let mut fill = |dst: &mut [f64]| {
            dst.copy_from_slice(&v[pos..pos + dst.len()]);
            pos += dst.len();
        };
        fill(self.users.as_mut_slice());
        fill(self.items.as_mut_slice());
        fill(&mut self.bias);
        if let Some(c) = &mut self.content {
            fill(c.theta.as_mut_slice());
            fill(c.proj.as_mut_slice());
        }
    }

    pub fn grad_flat(g: &FactorGrad) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(g.users.as_slice());
        v.extend_from_slice(g.items.as_slice());
        v.extend_from_slice(&g.bias);
        if let (Some(t), Some(p)) = (&g.theta, &g.proj) {
            v.extend_from_slice(t.as_slice());
            v.extend_from_slice(p.as_slice());
        }
        v
    }
}

impl Trainable for FactorModel {
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64> {
        let triples = training::sample_triples(ctx, rng);
        let mut total = 0.0;
        for batch in triples.chunks(ctx.batch_size) {
            total += self.batch_loss(batch, ctx.l2_reg);
            let g = self.batch_gradient(batch, ctx.l2_reg);
            self.apply(&g, ctx.learning_rate);
        }
        Ok(total)
    }

    /// VBPR folds the content path into wider embeddings: `[p_u | θ_u]·[q_i | E f_i]`.
    fn scorer(&self) -> EmbeddingScorer {
        match &self.content {
            None => EmbeddingScorer::new(
                self.users.clone(),
                self.items.clone(),
                Some(self.bias.clone()),
            ),
            Some(c) => {
                let mut proj_items = Matrix::zeros(self.n_items(), c.proj.rows());
                for i in 0..self.n_items() {
                    proj_items
                        .row_mut(i)
                        .copy_from_slice(&Self::project(c, c.features.row(i)));
                }
                EmbeddingScorer::new(
                    self.users.hstack(&c.theta),
                    self.items.hstack(&proj_items),
                    Some(self.bias.clone()),
                )
            }
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        let label = if self.content.is_some() {
            "vbpr"
        } else {
            "bprmf"
        };
        let mut ck = Checkpoint::new(label).with_scorer(&self.scorer());
        ck.insert("user_factors", self.users.clone());
        ck.insert("item_factors", self.items.clone());
        ck.insert_vec("item_bias", &self.bias);
        if let Some(c) = &self.content {
            ck.insert("user_content_factors", c.theta.clone());
            ck.insert("projection", c.proj.clone());
        }
        ck
    }

    fn is_finite(&self) -> bool {
        self.users.is_finite()
            && self.items.is_finite()
            && self.bias.iter().all(|b| b.is_finite())
            && self
                .content
                .as_ref()
                .is_none_or(|c| c.theta.is_finite() && c.proj.is_finite())
    }
}

pub fn train_bprmf(ds: &InteractionDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut m = FactorModel::init(ds.n_users(), ds.n_items(), cfg.latent_dim, None, cfg.seed)?;
    training::fit(&mut m, ds, cfg)
}

/// `features` must be aligned to the dataset's item order.
pub fn train_vbpr(
    ds: &InteractionDataset,
    features: &FeatureTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if features.item_ids() != ds.item_ids() {
        return Err(Error::ItemMismatch(
            "feature table is not aligned to the dataset items".into(),
        ));
    }
    let mut m = FactorModel::init(
        ds.n_users(),
        ds.n_items(),
        cfg.latent_dim,
        Some(features_matrix(features)),
        cfg.seed,
    )?;
    training::fit(&mut m, ds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpr_loss_values() {
        assert!((bpr_loss(0.3, 0.3, 0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bpr_loss(1e6, 0.0, 0.0, 0.0) < 1e-300);
        assert!((bpr_loss(1.0, -0.5, 0.0, 0.0) - 0.201413).abs() < 1e-6);
        assert!((bpr_loss(0.0, 0.0, 2.0, 0.5) - (std::f64::consts::LN_2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let ds = InteractionDataset::from_indexed(
            2,
            2,
            &[
                (0, 0, crate::dataset::Split::Train),
                (1, 1, crate::dataset::Split::Train),
            ],
        )
        .unwrap();
        let mut m = FactorModel::init(2, 2, 4, None, 7).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = training::fit(&mut m, &ds, &cfg).unwrap();
        assert_eq!(m, before);
        assert_eq!(out.curve.len(), 3);
    }

    #[test]
    fn content_scorer_matches_direct_score() {
        let f = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.5, -1.0, 0.0, 2.0]);
        let mut m = FactorModel::init(2, 3, 4, Some(f), 1).unwrap();
        m.bias = vec![0.1, -0.2, 0.3];
        let s = m.scorer();
        for u in 0..2 {
            for i in 0..3 {
                assert!((s.score(u, i) - m.score(u, i)).abs() < 1e-15);
            }
        }
    }
}
