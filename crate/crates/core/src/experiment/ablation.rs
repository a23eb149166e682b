//! Feature ablation: the same model trained on Gaussian noise, moment-matched
//! multivariate noise, and the real (semantic) features.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{run_grid, ExperimentGrid};
use super::provenance::RunProvenance;
use super::{ModelFamily, SideInputs};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{paired_significance, Metric, MetricSummary, Significance, TestKind, UserSample};
use crate::features::{
    fit_moments, gaussian_noise_like, multivariate_noise_like, FeatureTable, DEFAULT_SHRINKAGE,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCondition {
    Gaussian,
    Multivariate,
    Semantic,
}

impl NoiseCondition {
    pub const ALL: [NoiseCondition; 3] = [
        NoiseCondition::Gaussian,
        NoiseCondition::Multivariate,
        NoiseCondition::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCondition::Gaussian => "gaussian",
            NoiseCondition::Multivariate => "multivariate",
            NoiseCondition::Semantic => "semantic",
        }
    }
}

impl fmt::Display for NoiseCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown feature condition '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub shrinkage: f64,
    pub test: TestKind,
    /// Seeds run concurrently; each grid then runs with `grid.workers` threads.
    pub parallel_seeds: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            shrinkage: DEFAULT_SHRINKAGE,
            test: TestKind::PairedT,
            parallel_seeds: true,
        }
    }
}

/// Test-split outcome of one (seed, condition) grid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub condition: NoiseCondition,
    pub seed: u64,
    pub best_label: String,
    pub test: MetricSummary,
    pub samples: Vec<UserSample>,
}

/// Builds the feature tables for one condition. Noise tables get a seed that
/// depends on both the run seed and the table position.
pub fn condition_features(
    condition: NoiseCondition,
    reference: &[FeatureTable],
    seed: u64,
    shrinkage: f64,
) -> Result<Vec<FeatureTable>> {
    reference
        .iter()
        .enumerate()
        .map(|(m, table)| {
            let noise_seed = rng::mix(rng::mix(seed, condition as u64 + 1), m as u64);
            match condition {
                NoiseCondition::Semantic => Ok(table.clone()),
                NoiseCondition::Gaussian => gaussian_noise_like(table, noise_seed),
                NoiseCondition::Multivariate => {
                    multivariate_noise_like(&fit_moments(table, shrinkage)?, table, noise_seed)
                }
            }
        })
        .collect()
}

pub fn run_condition(
    grid: &ExperimentGrid,
    ds: &InteractionDataset,
    reference: &[FeatureTable],
    condition: NoiseCondition,
    seed: u64,
    shrinkage: f64,
) -> Result<ConditionRun> {
    let features = condition_features(condition, reference, seed, shrinkage)?;
    let side = SideInputs {
        features: &features,
        attributes: None,
    };
    let run = run_grid(&grid.clone().with_seed(seed), ds, side)?;
    Ok(ConditionRun {
        condition,
        seed,
        best_label: run.result.best.label,
        test: run.result.test.mean,
        samples: run.result.test.samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: NoiseCondition,
    pub per_seed: Vec<MetricSummary>,
    pub mean: MetricSummary,
    /// Sample standard deviation across seeds; zero with a single seed.
    pub std: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub condition: NoiseCondition,
    pub against: NoiseCondition,
    pub metric: Metric,
    /// Mean of `condition − against` over seeds.
    pub delta: f64,
    pub significance: Significance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub family: ModelFamily,
    pub seeds: Vec<u64>,
    pub shrinkage: f64,
    pub conditions: Vec<ConditionSummary>,
    pub comparisons: Vec<Comparison>,
    pub runs: Vec<ConditionRun>,
    pub provenance: Option<RunProvenance>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize_metric(runs: &[&ConditionRun], m: Metric) -> (f64, f64) {
    let v: Vec<f64> = runs.iter().map(|r| r.test.get(m)).collect();
    mean_std(&v)
}

/// Per-user samples of `a` and `b` pooled over seeds, paired by (seed, user).
fn pooled_pairs(
    a: &[&ConditionRun],
    b: &[&ConditionRun],
    m: Metric,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for ra in a {
        let rb = b.iter().find(|r| r.seed == ra.seed).ok_or_else(|| {
            Error::invalid(format!("seed {} missing for {}", ra.seed, b[0].condition))
        })?;
        if ra.samples.len() != rb.samples.len()
            || ra
                .samples
                .iter()
                .zip(&rb.samples)
                .any(|(x, y)| x.user != y.user)
        {
            return Err(Error::invalid(format!(
                "seed {}: evaluated user sets differ",
                ra.seed
            )));
        }
        xa.extend(ra.samples.iter().map(|s| m.of(s)));
        xb.extend(rb.samples.iter().map(|s| m.of(s)));
    }
    Ok((xa, xb))
}

impl AblationReport {
    /// Aggregates completed runs: mean ± std per condition and semantic vs.
    /// each noise condition, per metric, on pooled per-user samples.
    pub fn from_runs(
        family: ModelFamily,
        shrinkage: f64,
        mut runs: Vec<ConditionRun>,
        test: TestKind,
    ) -> Result<Self> {
        runs.sort_by_key(|r| (r.condition, r.seed));
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let by_cond = |c: NoiseCondition| -> Vec<&ConditionRun> {
            runs.iter().filter(|r| r.condition == c).collect()
        };

        let mut conditions = Vec::new();
        for c in NoiseCondition::ALL {
            let rs = by_cond(c);
            if rs.is_empty() {
                continue;
            }
            let (r, rs_) = summarize_metric(&rs, Metric::Recall);
            let (n, ns) = summarize_metric(&rs, Metric::Ndcg);
            let (h, hs) = summarize_metric(&rs, Metric::Hr);
            conditions.push(ConditionSummary {
                condition: c,
                per_seed: rs.iter().map(|x| x.test).collect(),
                mean: MetricSummary {
                    recall: r,
                    ndcg: n,
                    hr: h,
                },
                std: MetricSummary {
                    recall: rs_,
                    ndcg: ns,
                    hr: hs,
                },
            });
        }

        let mut comparisons = Vec::new();
        let semantic = by_cond(NoiseCondition::Semantic);
        if !semantic.is_empty() {
            for against in [NoiseCondition::Gaussian, NoiseCondition::Multivariate] {
                let other = by_cond(against);
                if other.is_empty() {
                    continue;
                }
                for m in Metric::ALL {
                    let (a, b) = pooled_pairs(&semantic, &other, m)?;
                    let significance = paired_significance(&a, &b, test)?;
                    let (ma, _) = summarize_metric(&semantic, m);
                    let (mb, _) = summarize_metric(&other, m);
                    comparisons.push(Comparison {
                        condition: NoiseCondition::Semantic,
                        against,
                        metric: m,
                        delta: ma - mb,
                        significance,
                    });
                }
            }
        }
        Ok(Self {
            family,
            seeds,
            shrinkage,
            conditions,
            comparisons,
            runs,
            provenance: None,
        })
    }

    pub fn condition(&self, c: NoiseCondition) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|s| s.condition == c)
    }

    pub fn comparison(&self, against: NoiseCondition, metric: Metric) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.against == against && c.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per condition: mean and std of every metric, in percent.
    pub fn plot_tsv(&self) -> String {
        let mut out = String::from(
            "model\tcondition\trecall_mean\trecall_std\tndcg_mean\tndcg_std\thr_mean\thr_std\n",
        );
        for c in &self.conditions {
            out.push_str(&format!("{}\t{}", self.family, c.condition));
            for m in Metric::ALL {
                out.push_str(&format!(
                    "\t{:.4}\t{:.4}",
                    100.0 * c.mean.get(m),
                    100.0 * c.std.get(m)
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_plot_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.plot_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs the grid under every condition for every seed on one dataset.
pub fn run_noise_ablation(
    grid: &ExperimentGrid,
    ds: &InteractionDataset,
    reference: &[FeatureTable],
    seeds: &[u64],
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    if !grid.family.needs_features() {
        return Err(Error::invalid(format!(
            "{} does not consume item features",
            grid.family
        )));
    }
    if seeds.is_empty() || reference.is_empty() {
        return Err(Error::invalid(
            "ablation needs at least one seed and one reference table",
        ));
    }
    let jobs: Vec<(u64, NoiseCondition)> = seeds
        .iter()
        .flat_map(|&s| NoiseCondition::ALL.into_iter().map(move |c| (s, c)))
        .collect();
    let job = |&(seed, c): &(u64, NoiseCondition)| {
        run_condition(grid, ds, reference, c, seed, cfg.shrinkage)
    };
    let runs: Vec<ConditionRun> = if cfg.parallel_seeds {
        jobs.par_iter().map(job).collect::<Result<_>>()?
    } else {
        jobs.iter().map(job).collect::<Result<_>>()?
    };
    let mut report = AblationReport::from_runs(grid.family, cfg.shrinkage, runs, cfg.test)?;
    report.provenance = Some(RunProvenance::new(
        &(grid, cfg),
        seeds.to_vec(),
        grid.family.is_simplified(),
    )?);
    Ok(report)
}
