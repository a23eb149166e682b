//! Borda-count aggregation of per-extractor Recall across models and datasets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recall values indexed by (model, dataset, extractor). Insertion order of
/// first appearance fixes the row and column order of every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub extractors: Vec<String>,
    cells: BTreeMap<(String, String, String), f64>,
}

fn remember(list: &mut Vec<String>, name: &str) {
    if !list.iter().any(|n| n == name) {
        list.push(name.to_string());
    }
}

impl RecallTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        model: &str,
        dataset: &str,
        extractor: &str,
        recall: f64,
    ) -> Result<()> {
        if !recall.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite recall for ({model}, {dataset}, {extractor})"
            )));
        }
        remember(&mut self.models, model);
        remember(&mut self.datasets, dataset);
        remember(&mut self.extractors, extractor);
        self.cells.insert(
            (
                model.to_string(),
                dataset.to_string(),
                extractor.to_string(),
            ),
            recall,
        );
        Ok(())
    }

    pub fn get(&self, model: &str, dataset: &str, extractor: &str) -> Option<f64> {
        self.cells
            .get(&(
                model.to_string(),
                dataset.to_string(),
                extractor.to_string(),
            ))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Long-format TSV: `model  dataset  extractor  recall`, with a header row.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut table = Self::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n as u64 + 2;
            let rec = rec.map_err(|e| Error::Parse {
                path: path.into(),
                line,
                reason: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    reason: format!("expected 4 columns, got {}", rec.len()),
                });
            }
            let recall: f64 = rec[3].trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                reason: format!("bad recall '{}'", &rec[3]),
            })?;
            table.insert(rec[0].trim(), rec[1].trim(), rec[2].trim(), recall)?;
        }
        Ok(table)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("model\tdataset\textractor\trecall\n");
        for m in &self.models {
            for d in &self.datasets {
                for e in &self.extractors {
                    if let Some(v) = self.get(m, d, e) {
                        out.push_str(&format!("{m}\t{d}\t{e}\t{v}\n"));
                    }
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Points for `values` ranked descending: `n − rank` with 1-based ranks, tied
/// values sharing the mean of the points their positions would earn.
pub fn rank_points(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut points = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let sum: f64 = (start..end).map(|pos| (n - 1 - pos) as f64).sum();
        let shared = sum / (end - start) as f64;
        for &idx in &order[start..end] {
            points[idx] = shared;
        }
        start = end;
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BordaTable {
    pub extractors: Vec<String>,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    /// `per_dataset[d][e]`
    pub per_dataset: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
    /// 1-based; equal scores share the smaller rank.
    pub overall_rank: Vec<usize>,
}

impl BordaTable {
    pub fn dataset_scores(&self, dataset: &str) -> Option<&[f64]> {
        let d = self.datasets.iter().position(|n| n == dataset)?;
        Some(&self.per_dataset[d])
    }

    pub fn score(&self, dataset: &str, extractor: &str) -> Option<f64> {
        let e = self.extractors.iter().position(|n| n == extractor)?;
        self.dataset_scores(dataset).map(|s| s[e])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("extractor");
        for d in &self.datasets {
            out.push('\t');
            out.push_str(d);
        }
        out.push_str("\toverall\trank\n");
        for (e, name) in self.extractors.iter().enumerate() {
            out.push_str(name);
            for scores in &self.per_dataset {
                out.push_str(&format!("\t{:.1}", scores[e]));
            }
            out.push_str(&format!(
                "\t{:.1}\t{}\n",
                self.overall[e], self.overall_rank[e]
            ));
        }
        out
    }
}

/// Aggregates per-(model, dataset) extractor rankings into Borda scores.
/// `n_extractors` must match the table's extractor count.
pub fn borda_count(table: &RecallTable, n_extractors: usize) -> Result<BordaTable> {
    if table.extractors.len() != n_extractors {
        return Err(Error::invalid(format!(
            "expected {n_extractors} extractors, table has {}",
            table.extractors.len()
        )));
    }
    if n_extractors == 0 {
        return Err(Error::invalid("no extractors to rank"));
    }
    let mut per_dataset = Vec::with_capacity(table.datasets.len());
    for d in &table.datasets {
        let mut scores = vec![0.0; n_extractors];
        for m in &table.models {
            let row = table
                .extractors
                .iter()
                .map(|e| {
                    table.get(m, d, e).ok_or_else(|| Error::MissingCell {
                        model: m.clone(),
                        dataset: d.clone(),
                        extractor: e.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            for (s, p) in scores.iter_mut().zip(rank_points(&row)) {
                *s += p;
            }
        }
        per_dataset.push(scores);
    }
    let overall: Vec<f64> = (0..n_extractors)
        .map(|e| per_dataset.iter().map(|s| s[e]).sum())
        .collect();
    let overall_rank = overall
        .iter()
        .map(|&v| 1 + overall.iter().filter(|&&o| o > v).count())
        .collect();
    Ok(BordaTable {
        extractors: table.extractors.clone(),
        datasets: table.datasets.clone(),
        models: table.models.clone(),
        per_dataset,
        overall,
        overall_rank,
    })
}
