//! Shared training loop: triple sampling, early stopping on validation Recall@20,
//! divergence guard and the training-curve log.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, Split, UserItems};
use crate::error::{Error, Result};
use crate::eval::{self, DEFAULT_K};
use crate::model::{Checkpoint, EmbeddingScorer};
use crate::rng::{self, StreamRng};

pub const LEARNING_RATES: [f64; 5] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2];
pub const L2_REGS: [f64; 2] = [1e-2, 1e-1];
pub const LATENT_DIMS: [usize; 3] = [64, 128, 256];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub latent_dim: usize,
    /// Upper bound on epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Validate every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_reg: 1e-2,
            latent_dim: 64,
            epochs: 200,
            batch_size: 1024,
            seed: 0,
            early_stop_patience: 5,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::invalid("l2_reg must be finite and >= 0"));
        }
        if self.latent_dim == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "latent_dim, batch_size and eval_every must be positive",
            ));
        }
        Ok(())
    }

    /// Whether every axis value sits on the default grid.
    pub fn on_default_grid(&self) -> bool {
        LEARNING_RATES.contains(&self.learning_rate)
            && L2_REGS.contains(&self.l2_reg)
            && LATENT_DIMS.contains(&self.latent_dim)
    }
}

/// Read-only data every epoch needs.
pub struct EpochContext<'a> {
    pub train: &'a UserItems,
    pub pairs: &'a [(usize, usize)],
    pub n_items: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epoch: usize,
}

/// `|train|` triples `(u, i⁺, i⁻)`: a uniform train interaction, then a uniform
/// negative drawn by rejection of the user's train positives.
pub fn sample_triples(ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(ctx.pairs.len());
    if ctx.pairs.is_empty() {
        return out;
    }
    for _ in 0..ctx.pairs.len() {
        let (u, i) = ctx.pairs[rng.random_range(0..ctx.pairs.len())];
        if ctx.train.items(u).len() >= ctx.n_items {
            continue;
        }
        let j = loop {
            let j = rng.random_range(0..ctx.n_items);
            if !ctx.train.contains(u, j) {
                break j;
            }
        };
        out.push((u, i, j));
    }
    out
}

/// A model the generic loop can drive.
pub trait Trainable {
    /// One pass over the data; returns the summed loss.
    fn train_epoch(&mut self, ctx: &EpochContext<'_>, rng: &mut StreamRng) -> Result<f64>;

    fn scorer(&self) -> EmbeddingScorer;

    /// All parameters, for persistence; should include the scorer snapshot.
    fn checkpoint(&self) -> Checkpoint;

    fn is_finite(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub valid_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Scorer at the best validation epoch (or the last epoch without a valid split).
    pub scorer: EmbeddingScorer,
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub best_valid_recall: Option<f64>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_curve_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(&self.curve)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Stream id of the per-epoch sampler; kept apart from initialization streams.
const SAMPLER_STREAM: u64 = 1 << 32;

pub fn fit<T: Trainable>(
    model: &mut T,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = ds.user_items(&[Split::Train]);
    let pairs = train.pairs();
    let valid = ds.user_items(&[Split::Valid]);
    let has_valid = valid.total() > 0;

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingScorer, Checkpoint)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut last_epoch = 0;

    for epoch in 1..=cfg.epochs {
        let ctx = EpochContext {
            train: &train,
            pairs: &pairs,
            n_items: ds.n_items(),
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            l2_reg: cfg.l2_reg,
            epoch,
        };
        let mut r = rng::stream(rng::mix(cfg.seed, epoch as u64), SAMPLER_STREAM);
        let loss = model.train_epoch(&ctx, &mut r)?;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        last_epoch = epoch;
        let mut point = CurvePoint {
            epoch,
            loss,
            valid_recall: None,
        };
        if has_valid && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let scorer = model.scorer();
            let (samples, _) = eval::evaluate_sets(&scorer, &train, &valid, DEFAULT_K)?;
            let recall = eval::mean_of(&samples).recall;
            point.valid_recall = Some(recall);
            if best.as_ref().is_none_or(|b| recall > b.0) {
                best = Some((recall, epoch, scorer, model.checkpoint()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        log::debug!(
            "epoch {epoch}: loss {loss:.6} valid {:?}",
            point.valid_recall
        );
        curve.push(point);
        if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    Ok(match best {
        Some((recall, epoch, scorer, checkpoint)) => TrainOutcome {
            scorer,
            checkpoint,
            curve,
            best_epoch: epoch,
            best_valid_recall: Some(recall),
            stopped_early,
        },
        None => TrainOutcome {
            scorer: model.scorer(),
            checkpoint: model.checkpoint(),
            curve,
            best_epoch: last_epoch,
            best_valid_recall: None,
            stopped_early,
        },
    })
}
