//! Study orchestration: model dispatch, grid search, the noise ablation, the
//! extractor benchmark with Borda aggregation, and the attribute study.

pub mod ablation;
pub mod attribute;
pub mod benchmark;
pub mod borda;
pub mod grid;
pub mod provenance;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::factor::{train_bprmf, train_vbpr};
use crate::features::{concat_features, FeatureTable};
use crate::graph::{
    train_bm3, train_freedom, train_lattice, train_lightgcn, Bm3Config, FreedomConfig,
    LatticeConfig, LightGcnConfig,
};
use crate::keywords::AttributeMatrix;
use crate::knn::{
    attribute_rows, fit_itemknn, interaction_rows, KnnScorer, MostPop, NeighborSource,
    RandomScorer, SimilarityConfig,
};
use crate::model::{Checkpoint, EmbeddingScorer, Scorer};
use crate::training::{TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Random,
    MostPop,
    ItemKnn,
    AttributeKnn,
    BprMf,
    LightGcn,
    Vbpr,
    Lattice,
    Freedom,
    Bm3,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 10] = [
        ModelFamily::Random,
        ModelFamily::MostPop,
        ModelFamily::ItemKnn,
        ModelFamily::AttributeKnn,
        ModelFamily::BprMf,
        ModelFamily::LightGcn,
        ModelFamily::Vbpr,
        ModelFamily::Lattice,
        ModelFamily::Freedom,
        ModelFamily::Bm3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Random => "random",
            ModelFamily::MostPop => "mostpop",
            ModelFamily::ItemKnn => "itemknn",
            ModelFamily::AttributeKnn => "attributeknn",
            ModelFamily::BprMf => "bprmf",
            ModelFamily::LightGcn => "lightgcn",
            ModelFamily::Vbpr => "vbpr",
            ModelFamily::Lattice => "lattice",
            ModelFamily::Freedom => "freedom",
            ModelFamily::Bm3 => "bm3",
        }
    }

    pub fn needs_features(self) -> bool {
        matches!(
            self,
            ModelFamily::Vbpr | ModelFamily::Lattice | ModelFamily::Freedom | ModelFamily::Bm3
        )
    }

    pub fn is_knn(self) -> bool {
        matches!(self, ModelFamily::ItemKnn | ModelFamily::AttributeKnn)
    }

    pub fn is_learned(self) -> bool {
        matches!(
            self,
            ModelFamily::BprMf
                | ModelFamily::LightGcn
                | ModelFamily::Vbpr
                | ModelFamily::Lattice
                | ModelFamily::Freedom
                | ModelFamily::Bm3
        )
    }

    /// Graph models here are reconstructions from short descriptions, not ports.
    pub fn is_simplified(self) -> bool {
        matches!(
            self,
            ModelFamily::Lattice | ModelFamily::Freedom | ModelFamily::Bm3
        )
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::invalid(format!("unknown model '{s}'")))
    }
}

/// Architecture options beyond the shared training config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub lightgcn: LightGcnConfig,
    pub lattice: LatticeConfig,
    pub freedom: FreedomConfig,
    pub bm3: Bm3Config,
}

/// Any fitted recommender.
pub enum TrainedModel {
    Embedding(EmbeddingScorer),
    Knn(KnnScorer),
    MostPop(MostPop),
    Random(RandomScorer),
}

impl Scorer for TrainedModel {
    fn n_items(&self) -> usize {
        match self {
            TrainedModel::Embedding(s) => s.n_items(),
            TrainedModel::Knn(s) => s.n_items(),
            TrainedModel::MostPop(s) => s.n_items(),
            TrainedModel::Random(s) => s.n_items(),
        }
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        match self {
            TrainedModel::Embedding(s) => s.score_user(user),
            TrainedModel::Knn(s) => s.score_user(user),
            TrainedModel::MostPop(s) => s.score_user(user),
            TrainedModel::Random(s) => s.score_user(user),
        }
    }
}

/// Side inputs a model may consume.
#[derive(Clone, Copy, Default)]
pub struct SideInputs<'a> {
    pub features: &'a [FeatureTable],
    pub attributes: Option<&'a AttributeMatrix>,
}

pub fn train_learned(
    family: ModelFamily,
    ds: &InteractionDataset,
    side: SideInputs<'_>,
    cfg: &TrainConfig,
    opts: &ModelOptions,
) -> Result<TrainOutcome> {
    if family.needs_features() && side.features.is_empty() {
        return Err(Error::invalid(format!(
            "{family} needs at least one feature table"
        )));
    }
    match family {
        ModelFamily::BprMf => train_bprmf(ds, cfg),
        ModelFamily::LightGcn => train_lightgcn(ds, cfg, &opts.lightgcn),
        ModelFamily::Vbpr => {
            if side.features.len() == 1 {
                train_vbpr(ds, &side.features[0], cfg)
            } else {
                train_vbpr(ds, &concat_features(side.features, false)?, cfg)
            }
        }
        ModelFamily::Lattice => train_lattice(ds, side.features, cfg, &opts.lattice),
        ModelFamily::Freedom => train_freedom(ds, side.features, cfg, &opts.freedom),
        ModelFamily::Bm3 => train_bm3(ds, side.features, cfg, &opts.bm3),
        other => Err(Error::invalid(format!("{other} is not a learned model"))),
    }
}

pub fn fit_knn(
    family: ModelFamily,
    ds: &InteractionDataset,
    side: SideInputs<'_>,
    sim: &SimilarityConfig,
) -> Result<KnnScorer> {
    let train = ds.user_items(&[Split::Train]);
    let model = match family {
        ModelFamily::ItemKnn => fit_itemknn(
            &interaction_rows(&train, ds.n_items()),
            sim,
            NeighborSource::Interactions,
        )?,
        ModelFamily::AttributeKnn => {
            let attrs = side
                .attributes
                .ok_or_else(|| Error::invalid("attributeknn needs an attribute matrix"))?;
            let aligned = attrs.aligned_to(ds.item_ids());
            fit_itemknn(&attribute_rows(&aligned), sim, NeighborSource::Attributes)?
        }
        other => return Err(Error::invalid(format!("{other} is not a kNN model"))),
    };
    Ok(KnnScorer {
        model,
        history: train,
    })
}

pub fn fit_baseline(
    family: ModelFamily,
    ds: &InteractionDataset,
    seed: u64,
) -> Result<TrainedModel> {
    match family {
        ModelFamily::MostPop => Ok(TrainedModel::MostPop(MostPop::fit(
            &ds.user_items(&[Split::Train]),
            ds.n_items(),
        ))),
        ModelFamily::Random => Ok(TrainedModel::Random(RandomScorer {
            seed,
            n_items: ds.n_items(),
        })),
        other => Err(Error::invalid(format!(
            "{other} is not a non-personalized baseline"
        ))),
    }
}

/// Rebuilds a scorer from a checkpoint written by any learned model.
pub fn scorer_from_checkpoint(ck: &Checkpoint) -> Result<TrainedModel> {
    Ok(TrainedModel::Embedding(ck.scorer()?))
}
