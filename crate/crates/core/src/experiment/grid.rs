//! Hyperparameter grids, the per-point trace, and validation-based selection.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_baseline, fit_knn, train_learned, ModelFamily, ModelOptions, SideInputs, TrainedModel,
};
use crate::dataset::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_topk, EvalReport, MetricSummary, RankingRequest};
use crate::knn::{SimilarityConfig, SimilarityKind, Weighting, NEIGHBOR_GRID};
use crate::model::Checkpoint;
use crate::training::{TrainConfig, L2_REGS, LATENT_DIMS, LEARNING_RATES};

/// Axes searched for one model family. Learned models use the first three,
/// kNN models the last three; non-personalized baselines have a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub family: ModelFamily,
    pub learning_rates: Vec<f64>,
    pub l2_regs: Vec<f64>,
    pub latent_dims: Vec<usize>,
    pub similarities: Vec<SimilarityKind>,
    pub neighbors: Vec<usize>,
    pub weightings: Vec<Weighting>,
    /// Epochs, batch size, seed and early stopping shared by every learned point.
    pub base: TrainConfig,
    pub options: ModelOptions,
    pub workers: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self::for_family(ModelFamily::BprMf)
    }
}

impl ExperimentGrid {
    pub fn for_family(family: ModelFamily) -> Self {
        Self {
            family,
            learning_rates: LEARNING_RATES.to_vec(),
            l2_regs: L2_REGS.to_vec(),
            latent_dims: LATENT_DIMS.to_vec(),
            similarities: SimilarityKind::ALL.to_vec(),
            neighbors: NEIGHBOR_GRID.to_vec(),
            weightings: Weighting::ALL.to_vec(),
            base: TrainConfig::default(),
            options: ModelOptions::default(),
            workers: 0,
        }
    }

    /// Collapses every axis to a single value taken from `cfg`.
    pub fn single_learned(family: ModelFamily, cfg: TrainConfig) -> Self {
        Self {
            learning_rates: vec![cfg.learning_rate],
            l2_regs: vec![cfg.l2_reg],
            latent_dims: vec![cfg.latent_dim],
            base: cfg,
            ..Self::for_family(family)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base.seed = seed;
        self
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        if self.family.is_learned() {
            for &lr in &self.learning_rates {
                for &reg in &self.l2_regs {
                    for &dim in &self.latent_dims {
                        let cfg = TrainConfig {
                            learning_rate: lr,
                            l2_reg: reg,
                            latent_dim: dim,
                            ..self.base.clone()
                        };
                        out.push(GridPoint {
                            index: out.len(),
                            label: format!("lr={lr:e},reg={reg:e},dim={dim}"),
                            config: PointConfig::Learned(cfg),
                        });
                    }
                }
            }
        } else if self.family.is_knn() {
            for &kind in &self.similarities {
                for &k in &self.neighbors {
                    for &w in &self.weightings {
                        let sim = SimilarityConfig::new(kind, k).with_weighting(w);
                        out.push(GridPoint {
                            index: out.len(),
                            label: sim.label(),
                            config: PointConfig::Knn(sim),
                        });
                    }
                }
            }
        } else {
            out.push(GridPoint {
                index: 0,
                label: self.family.as_str().to_string(),
                config: PointConfig::Baseline {
                    seed: self.base.seed,
                },
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.points().is_empty() {
            return Err(Error::invalid(format!("grid for {} is empty", self.family)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointConfig {
    Learned(TrainConfig),
    Knn(SimilarityConfig),
    Baseline { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub label: String,
    pub config: PointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Ok {
        valid: MetricSummary,
        best_epoch: Option<usize>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub point: GridPoint,
    #[serde(flatten)]
    pub status: PointStatus,
}

impl TraceEntry {
    pub fn valid(&self) -> Option<&MetricSummary> {
        match &self.status {
            PointStatus::Ok { valid, .. } => Some(valid),
            PointStatus::Failed { .. } => None,
        }
    }
}

fn rank_entries(a: &TraceEntry, b: &TraceEntry) -> Ordering {
    let (va, vb) = (a.valid().unwrap(), b.valid().unwrap());
    va.recall
        .total_cmp(&vb.recall)
        .then(va.ndcg.total_cmp(&vb.ndcg))
        .then_with(|| b.point.label.cmp(&a.point.label))
}

/// Position in `trace` of the point with the highest validation Recall@20,
/// ties broken by nDCG@20 and then by the smaller label. Failed points never win.
pub fn select_best(trace: &[TraceEntry]) -> Option<usize> {
    trace
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            e.valid()
                .is_some_and(|v| v.recall.is_finite() && v.ndcg.is_finite())
        })
        .max_by(|(_, a), (_, b)| rank_entries(a, b))
        .map(|(pos, _)| pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub family: ModelFamily,
    pub best: GridPoint,
    pub best_valid: MetricSummary,
    pub test: EvalReport,
    pub trace: Vec<TraceEntry>,
}

impl GridResult {
    pub fn n_failed(&self) -> usize {
        self.trace.iter().filter(|e| e.valid().is_none()).count()
    }

    pub fn write_trace_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(&self.trace)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A grid run plus the fitted model at the selected point.
pub struct GridRun {
    pub result: GridResult,
    pub model: TrainedModel,
    pub checkpoint: Option<Checkpoint>,
}

struct Fitted {
    model: TrainedModel,
    checkpoint: Option<Checkpoint>,
    best_epoch: Option<usize>,
}

fn fit_point(
    family: ModelFamily,
    point: &GridPoint,
    ds: &InteractionDataset,
    side: SideInputs<'_>,
    opts: &ModelOptions,
) -> Result<Fitted> {
    match &point.config {
        PointConfig::Learned(cfg) => {
            let out = train_learned(family, ds, side, cfg, opts)?;
            Ok(Fitted {
                model: TrainedModel::Embedding(out.scorer),
                checkpoint: Some(out.checkpoint),
                best_epoch: Some(out.best_epoch),
            })
        }
        PointConfig::Knn(sim) => Ok(Fitted {
            model: TrainedModel::Knn(fit_knn(family, ds, side, sim)?),
            checkpoint: None,
            best_epoch: None,
        }),
        PointConfig::Baseline { seed } => Ok(Fitted {
            model: fit_baseline(family, ds, *seed)?,
            checkpoint: None,
            best_epoch: None,
        }),
    }
}

fn run_points(
    grid: &ExperimentGrid,
    ds: &InteractionDataset,
    side: SideInputs<'_>,
) -> Vec<(TraceEntry, Option<Fitted>)> {
    let work = |point: GridPoint| {
        let outcome = fit_point(grid.family, &point, ds, side, &grid.options).and_then(|f| {
            let valid = evaluate_topk(&f.model, ds, &RankingRequest::validation(), Split::Valid)?;
            Ok((valid.mean, f))
        });
        match outcome {
            Ok((valid, f)) => (
                TraceEntry {
                    status: PointStatus::Ok {
                        valid,
                        best_epoch: f.best_epoch,
                    },
                    point,
                },
                Some(f),
            ),
            Err(e) => {
                log::warn!("grid point {} ({}) failed: {e}", point.index, point.label);
                (
                    TraceEntry {
                        point,
                        status: PointStatus::Failed {
                            reason: e.to_string(),
                        },
                    },
                    None,
                )
            }
        }
    };
    let points = grid.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers)
        .build();
    match pool {
        Ok(pool) => pool.install(|| points.into_par_iter().map(work).collect()),
        Err(_) => points.into_iter().map(work).collect(),
    }
}

/// Trains every point, selects on validation, and evaluates the selected
/// model once on test. Failing points are kept in the trace and skipped.
pub fn run_grid(
    grid: &ExperimentGrid,
    ds: &InteractionDataset,
    side: SideInputs<'_>,
) -> Result<GridRun> {
    grid.validate()?;
    let results = run_points(grid, ds, side);
    let (trace, mut fitted): (Vec<TraceEntry>, Vec<Option<Fitted>>) = results.into_iter().unzip();
    let pos = select_best(&trace).ok_or_else(|| {
        let first = trace
            .iter()
            .find_map(|e| match &e.status {
                PointStatus::Failed { reason } => Some(reason.clone()),
                _ => None,
            })
            .unwrap_or_default();
        Error::invalid(format!(
            "every grid point failed for {}; first error: {first}",
            grid.family
        ))
    })?;
    let chosen = fitted[pos].take().expect("selected point has a model");
    drop(fitted);
    let test = evaluate_topk(&chosen.model, ds, &RankingRequest::test(), Split::Test)?;
    let best_valid = *trace[pos].valid().expect("selected point succeeded");
    Ok(GridRun {
        result: GridResult {
            family: grid.family,
            best: trace[pos].point.clone(),
            best_valid,
            test,
            trace,
        },
        model: chosen.model,
        checkpoint: chosen.checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(index: usize, label: &str, recall: f64, ndcg: f64) -> TraceEntry {
        TraceEntry {
            point: GridPoint {
                index,
                label: label.into(),
                config: PointConfig::Baseline { seed: 0 },
            },
            status: PointStatus::Ok {
                valid: MetricSummary {
                    recall,
                    ndcg,
                    hr: 0.0,
                },
                best_epoch: None,
            },
        }
    }

    #[test]
    fn default_learned_grid_has_thirty_points() {
        let g = ExperimentGrid::for_family(ModelFamily::Vbpr);
        let pts = g.points();
        assert_eq!(pts.len(), 30);
        let labels: std::collections::BTreeSet<_> = pts.iter().map(|p| p.label.clone()).collect();
        assert_eq!(labels.len(), 30);
    }

    #[test]
    fn knn_grid_covers_all_axes() {
        assert_eq!(
            ExperimentGrid::for_family(ModelFamily::ItemKnn)
                .points()
                .len(),
            5 * 5 * 3
        );
        assert_eq!(
            ExperimentGrid::for_family(ModelFamily::MostPop)
                .points()
                .len(),
            1
        );
    }

    #[test]
    fn selection_prefers_recall_then_ndcg_then_label() {
        let mut trace: Vec<TraceEntry> = (0..10)
            .map(|i| entry(i, &format!("p{i}"), 0.1, 0.1))
            .collect();
        trace[7] = entry(7, "p7", 0.3, 0.0);
        assert_eq!(select_best(&trace), Some(7));
        trace[3] = entry(3, "p3", 0.3, 0.2);
        assert_eq!(select_best(&trace), Some(3));
        trace[1] = entry(1, "p1", 0.3, 0.2);
        assert_eq!(select_best(&trace), Some(1));
    }

    #[test]
    fn failed_points_are_never_selected() {
        let mut trace = vec![entry(0, "a", 0.1, 0.1)];
        trace.push(TraceEntry {
            point: trace[0].point.clone(),
            status: PointStatus::Failed {
                reason: "diverged".into(),
            },
        });
        assert_eq!(select_best(&trace), Some(0));
        assert_eq!(select_best(&trace[1..]), None);
    }

    #[test]
    fn selection_survives_json_round_trip() {
        let trace: Vec<TraceEntry> = (0..6)
            .map(|i| entry(i, &format!("p{i}"), 0.05 * i as f64 % 0.2, 0.1))
            .collect();
        let s = serde_json::to_string(&trace).unwrap();
        let back: Vec<TraceEntry> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, trace);
        assert_eq!(select_best(&back), select_best(&trace));
    }
}
