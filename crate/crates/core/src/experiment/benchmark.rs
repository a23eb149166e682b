//! Extractor benchmark: every (model, dataset, extractor) grid, best and
//! second-best markers with significance stars, and the Borda aggregate.

use serde::{Deserialize, Serialize};

use super::borda::{borda_count, BordaTable, RecallTable};
use super::grid::{run_grid, ExperimentGrid};
use super::provenance::RunProvenance;
use super::{ModelFamily, SideInputs};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{paired_significance, Metric, MetricSummary, TestKind, UserSample};
use crate::features::FeatureTable;

pub const STAR_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub model: String,
    pub dataset: String,
    pub extractor: String,
    pub test: MetricSummary,
    /// Per-user test samples; empty when the cell comes from published numbers.
    #[serde(default)]
    pub samples: Vec<UserSample>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    /// Dense rank 1 within the (model, dataset) row.
    pub best: bool,
    /// Dense rank 2.
    pub second: bool,
    /// Best differs from second best with p < 0.05.
    pub star: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedCell {
    pub cell: BenchmarkCell,
    /// Indexed like `Metric::ALL`.
    pub marks: [Mark; 3],
}

impl MarkedCell {
    pub fn mark(&self, m: Metric) -> Mark {
        self.marks[Metric::ALL.iter().position(|x| *x == m).unwrap()]
    }
}

fn distinct_desc(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

/// Assigns markers within every (model, dataset) group. Ties share a marker.
pub fn mark_cells(cells: &[BenchmarkCell], test: TestKind) -> Result<Vec<MarkedCell>> {
    let mut out: Vec<MarkedCell> = cells
        .iter()
        .map(|c| MarkedCell {
            cell: c.clone(),
            marks: [Mark::default(); 3],
        })
        .collect();
    let mut groups: Vec<(String, String)> = Vec::new();
    for c in cells {
        let key = (c.model.clone(), c.dataset.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (model, dataset) in groups {
        let idx: Vec<usize> = (0..cells.len())
            .filter(|&i| cells[i].model == model && cells[i].dataset == dataset)
            .collect();
        for (mi, m) in Metric::ALL.into_iter().enumerate() {
            let values: Vec<f64> = idx.iter().map(|&i| cells[i].test.get(m)).collect();
            let levels = distinct_desc(&values);
            let first = idx
                .iter()
                .copied()
                .find(|&i| cells[i].test.get(m) == levels[0]);
            let second = levels
                .get(1)
                .and_then(|&v| idx.iter().copied().find(|&i| cells[i].test.get(m) == v));
            for &i in &idx {
                let v = cells[i].test.get(m);
                out[i].marks[mi].best = v == levels[0];
                out[i].marks[mi].second = levels.get(1) == Some(&v);
            }
            if let (Some(a), Some(b)) = (first, second) {
                let (sa, sb) = (&cells[a].samples, &cells[b].samples);
                if !sa.is_empty() && sa.len() == sb.len() {
                    let xa: Vec<f64> = sa.iter().map(|s| m.of(s)).collect();
                    let xb: Vec<f64> = sb.iter().map(|s| m.of(s)).collect();
                    let sig = paired_significance(&xa, &xb, test)?;
                    if sig.p_value < STAR_ALPHA {
                        for &i in &idx {
                            if out[i].marks[mi].best {
                                out[i].marks[mi].star = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn recall_table(cells: &[BenchmarkCell]) -> Result<RecallTable> {
    let mut t = RecallTable::new();
    for c in cells {
        t.insert(&c.model, &c.dataset, &c.extractor, c.test.recall)?;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<MarkedCell>,
    pub borda: BordaTable,
    pub provenance: Option<RunProvenance>,
}

impl BenchmarkReport {
    /// Reporting path only: markers and Borda from already computed cells.
    pub fn from_cells(cells: Vec<BenchmarkCell>, test: TestKind) -> Result<Self> {
        let table = recall_table(&cells)?;
        let borda = borda_count(&table, table.extractors.len())?;
        Ok(Self {
            cells: mark_cells(&cells, test)?,
            borda,
            provenance: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Long-format table in percent. `**v**` best, `__v__` second best, trailing `*` significant.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tdataset\textractor\trecall@20\tndcg@20\thr@20\n");
        for mc in &self.cells {
            let c = &mc.cell;
            out.push_str(&format!("{}\t{}\t{}", c.model, c.dataset, c.extractor));
            for (mi, m) in Metric::ALL.into_iter().enumerate() {
                let v = format!("{:.3}", 100.0 * c.test.get(m));
                let mk = mc.marks[mi];
                let mut s = if mk.best {
                    format!("**{v}**")
                } else if mk.second {
                    format!("__{v}__")
                } else {
                    v
                };
                if mk.star {
                    s.push('*');
                }
                out.push('\t');
                out.push_str(&s);
            }
            out.push('\n');
        }
        out
    }
}

pub struct BenchmarkDataset {
    pub name: String,
    pub dataset: InteractionDataset,
    /// `(extractor name, tables)`; several tables are fused by the model.
    pub extractors: Vec<(String, Vec<FeatureTable>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelFamily>,
    pub grid: ExperimentGrid,
    pub test: TestKind,
}

pub fn run_extractor_benchmark(
    datasets: &[BenchmarkDataset],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if cfg.models.is_empty() || datasets.is_empty() {
        return Err(Error::invalid(
            "benchmark needs at least one model and one dataset",
        ));
    }
    let mut cells = Vec::new();
    for d in datasets {
        for &model in &cfg.models {
            if !model.needs_features() {
                return Err(Error::invalid(format!(
                    "{model} does not consume extractor features"
                )));
            }
            for (name, tables) in &d.extractors {
                log::info!("benchmark: {model} on {} with {name}", d.name);
                let grid = ExperimentGrid {
                    family: model,
                    ..cfg.grid.clone()
                };
                let side = SideInputs {
                    features: tables,
                    attributes: None,
                };
                let run = run_grid(&grid, &d.dataset, side)?;
                cells.push(BenchmarkCell {
                    model: model.to_string(),
                    dataset: d.name.clone(),
                    extractor: name.clone(),
                    test: run.result.test.mean,
                    samples: run.result.test.samples,
                });
            }
        }
    }
    let mut report = BenchmarkReport::from_cells(cells, cfg.test)?;
    report.provenance = Some(RunProvenance::new(
        cfg,
        vec![cfg.grid.base.seed],
        cfg.models.iter().any(|m| m.is_simplified()),
    )?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(ext: &str, recalls: &[f64]) -> BenchmarkCell {
        let samples: Vec<UserSample> = recalls
            .iter()
            .enumerate()
            .map(|(u, &r)| UserSample {
                user: u,
                recall: r,
                ndcg: r / 2.0,
                hr: (r > 0.0) as u8 as f64,
            })
            .collect();
        BenchmarkCell {
            model: "vbpr".into(),
            dataset: "baby".into(),
            extractor: ext.into(),
            test: crate::eval::mean_of(&samples),
            samples,
        }
    }

    #[test]
    fn two_extractor_fixture_marks() {
        let strong: Vec<f64> = (0..40).map(|u| 0.5 + 0.01 * (u % 7) as f64).collect();
        let weak: Vec<f64> = (0..40).map(|u| 0.1 + 0.01 * (u % 5) as f64).collect();
        let rep = BenchmarkReport::from_cells(
            vec![cell("a", &weak), cell("b", &strong)],
            TestKind::PairedT,
        )
        .unwrap();
        let (a, b) = (&rep.cells[0], &rep.cells[1]);
        assert!(b.mark(Metric::Recall).best && b.mark(Metric::Recall).star);
        assert!(a.mark(Metric::Recall).second && !a.mark(Metric::Recall).star);
        assert_eq!(rep.borda.overall, vec![0.0, 1.0]);
        let tsv = rep.to_tsv();
        assert!(tsv.contains("__"), "{tsv}");
        assert!(tsv.lines().nth(2).unwrap().contains("*\t"));
    }

    #[test]
    fn close_extractors_get_no_star() {
        let x: Vec<f64> = (0..30).map(|u| (u % 3) as f64 * 0.1).collect();
        let mut y = x.clone();
        y[0] += 0.05;
        y[1] -= 0.04;
        let rep =
            BenchmarkReport::from_cells(vec![cell("a", &x), cell("b", &y)], TestKind::PairedT)
                .unwrap();
        assert!(rep.cells.iter().all(|c| !c.mark(Metric::Recall).star));
    }

    #[test]
    fn ties_share_best() {
        let x = [0.2, 0.4];
        let rep = BenchmarkReport::from_cells(
            vec![cell("a", &x), cell("b", &x), cell("c", &[0.0, 0.1])],
            TestKind::PairedT,
        )
        .unwrap();
        assert!(rep.cells[0].mark(Metric::Recall).best && rep.cells[1].mark(Metric::Recall).best);
        assert!(rep.cells[2].mark(Metric::Recall).second);
        assert_eq!(rep.borda.overall, vec![1.5, 1.5, 0.0]);
    }
}
