//! Attribute study: Attribute Item-kNN per attribute source against the
//! classical baselines on one dataset.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::grid::{run_grid, ExperimentGrid};
use super::provenance::RunProvenance;
use super::{ModelFamily, SideInputs};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{
    paired_significance, Metric, MetricSummary, SignificanceNote, TestKind, UserSample,
};
use crate::keywords::AttributeMatrix;

pub const BASELINES: [ModelFamily; 5] = [
    ModelFamily::Random,
    ModelFamily::MostPop,
    ModelFamily::ItemKnn,
    ModelFamily::BprMf,
    ModelFamily::LightGcn,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeStudyConfig {
    pub baselines: Vec<ModelFamily>,
    /// Template for learned baselines; the family field is replaced per model.
    pub learned_grid: ExperimentGrid,
    /// Template for Item-kNN and Attribute Item-kNN.
    pub knn_grid: ExperimentGrid,
    pub test: TestKind,
}

impl Default for AttributeStudyConfig {
    fn default() -> Self {
        Self {
            baselines: BASELINES.to_vec(),
            learned_grid: ExperimentGrid::for_family(ModelFamily::BprMf),
            knn_grid: ExperimentGrid::for_family(ModelFamily::ItemKnn),
            test: TestKind::PairedT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// `family` for baselines, `attributeknn[source]` otherwise.
    pub name: String,
    pub family: ModelFamily,
    pub source: Option<String>,
    pub best_label: String,
    pub test: MetricSummary,
    pub samples: Vec<UserSample>,
    pub significance: Vec<SignificanceNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSanity {
    pub source: String,
    pub distinct_rows: usize,
    pub n_items: usize,
    /// Every item carries the same attribute vector, so similarity cannot
    /// separate items and scores follow history overlap only.
    pub uninformative: bool,
}

pub fn attribute_sanity(source: &str, m: &AttributeMatrix) -> AttributeSanity {
    let distinct: BTreeSet<&Vec<usize>> = m.active.iter().collect();
    AttributeSanity {
        source: source.to_string(),
        distinct_rows: distinct.len(),
        n_items: m.n_items(),
        uninformative: distinct.len() <= 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStudyReport {
    pub rows: Vec<StudyRow>,
    pub sanity: Vec<AttributeSanity>,
    pub provenance: Option<RunProvenance>,
}

impl AttributeStudyReport {
    pub fn row(&self, name: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Percent values; `*` marks p < 0.05 against Item-kNN on Recall@20.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\trecall@20\tndcg@20\thr@20\tconfig\n");
        for r in &self.rows {
            let star = r
                .significance
                .iter()
                .any(|n| n.metric == Metric::Recall && n.significant);
            out.push_str(&format!(
                "{}\t{:.3}{}\t{:.3}\t{:.3}\t{}\n",
                r.name,
                100.0 * r.test.recall,
                if star { "*" } else { "" },
                100.0 * r.test.ndcg,
                100.0 * r.test.hr,
                r.best_label
            ));
        }
        out
    }
}

fn grid_for(family: ModelFamily, cfg: &AttributeStudyConfig) -> ExperimentGrid {
    let template = if family.is_knn() {
        &cfg.knn_grid
    } else {
        &cfg.learned_grid
    };
    ExperimentGrid {
        family,
        ..template.clone()
    }
}

fn notes_against(
    row: &StudyRow,
    reference: &StudyRow,
    test: TestKind,
) -> Result<Vec<SignificanceNote>> {
    if row.samples.len() != reference.samples.len() {
        return Err(Error::invalid("evaluated user sets differ between rows"));
    }
    Metric::ALL
        .into_iter()
        .map(|m| {
            let a: Vec<f64> = row.samples.iter().map(|s| m.of(s)).collect();
            let b: Vec<f64> = reference.samples.iter().map(|s| m.of(s)).collect();
            let sig = paired_significance(&a, &b, test)?;
            Ok(SignificanceNote {
                metric: m,
                against: reference.name.clone(),
                p_value: sig.p_value,
                test: sig.test.clone(),
                significant: sig.significant(),
            })
        })
        .collect()
}

pub fn run_attribute_study(
    ds: &InteractionDataset,
    attributes: &[(String, AttributeMatrix)],
    cfg: &AttributeStudyConfig,
) -> Result<AttributeStudyReport> {
    let mut rows = Vec::new();
    let mut run_one =
        |family: ModelFamily, source: Option<&(String, AttributeMatrix)>| -> Result<()> {
            let side = SideInputs {
                features: &[],
                attributes: source.map(|(_, m)| m),
            };
            let run = run_grid(&grid_for(family, cfg), ds, side)?;
            rows.push(StudyRow {
                name: match source {
                    Some((name, _)) => format!("{family}[{name}]"),
                    None => family.to_string(),
                },
                family,
                source: source.map(|(n, _)| n.clone()),
                best_label: run.result.best.label,
                test: run.result.test.mean,
                samples: run.result.test.samples,
                significance: Vec::new(),
            });
            Ok(())
        };
    for &b in &cfg.baselines {
        if b.needs_features() || b == ModelFamily::AttributeKnn {
            return Err(Error::invalid(format!("{b} is not a classical baseline")));
        }
        run_one(b, None)?;
    }
    for src in attributes {
        run_one(ModelFamily::AttributeKnn, Some(src))?;
    }
    if let Some(reference) = rows
        .iter()
        .find(|r| r.family == ModelFamily::ItemKnn)
        .cloned()
    {
        for r in rows
            .iter_mut()
            .filter(|r| r.family == ModelFamily::AttributeKnn)
        {
            r.significance = notes_against(r, &reference, cfg.test)?;
        }
    }
    let sanity = attributes
        .iter()
        .map(|(n, m)| attribute_sanity(n, m))
        .collect();
    Ok(AttributeStudyReport {
        rows,
        sanity,
        provenance: Some(RunProvenance::new(
            cfg,
            vec![cfg.learned_grid.base.seed],
            false,
        )?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_are_flagged() {
        let m = AttributeMatrix {
            item_ids: vec!["a".into(), "b".into()],
            feature_names: vec!["x=1".into(), "x=other".into()],
            active: vec![vec![0], vec![0]],
        };
        assert!(attribute_sanity("same", &m).uninformative);
        let mut m2 = m.clone();
        m2.active[1] = vec![1];
        let s = attribute_sanity("diff", &m2);
        assert!(!s.uninformative);
        assert_eq!(s.distinct_rows, 2);
    }
}
