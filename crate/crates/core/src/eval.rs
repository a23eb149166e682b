//! Full-ranking top-K evaluation and paired significance tests.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{InteractionDataset, Split, UserItems};
use crate::error::{Error, Result};
use crate::model::Scorer;

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRequest {
    pub k: usize,
    pub mask_splits: Vec<Split>,
}

impl RankingRequest {
    /// Validation-time request: K = 20, train items masked.
    pub fn validation() -> Self {
        Self {
            k: DEFAULT_K,
            mask_splits: vec![Split::Train],
        }
    }

    /// Test-time request: K = 20, train and valid items masked.
    pub fn test() -> Self {
        Self {
            k: DEFAULT_K,
            mask_splits: vec![Split::Train, Split::Valid],
        }
    }

    pub fn for_target(target: Split) -> Self {
        match target {
            Split::Test => Self::test(),
            _ => Self::validation(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSample {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
    Hr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::Ndcg, Metric::Hr];

    pub fn of(self, s: &UserSample) -> f64 {
        match self {
            Metric::Recall => s.recall,
            Metric::Ndcg => s.ndcg,
            Metric::Hr => s.hr,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
            Metric::Hr => "hr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

impl MetricSummary {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Recall => self.recall,
            Metric::Ndcg => self.ndcg,
            Metric::Hr => self.hr,
        }
    }

    /// Percentages rounded to 3 decimals.
    pub fn as_percent(&self) -> MetricSummary {
        MetricSummary {
            recall: percent(self.recall),
            ndcg: percent(self.ndcg),
            hr: percent(self.hr),
        }
    }
}

pub fn percent(x: f64) -> f64 {
    (x * 100.0 * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceNote {
    pub metric: Metric,
    pub against: String,
    pub p_value: f64,
    pub test: String,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub request: RankingRequest,
    pub target_split: Split,
    pub n_evaluated_users: usize,
    /// Users with targets whose every item was masked.
    pub n_excluded_users: usize,
    pub mean: MetricSummary,
    pub mean_pct: MetricSummary,
    pub samples: Vec<UserSample>,
    #[serde(default)]
    pub significance: Vec<SignificanceNote>,
}

impl EvalReport {
    pub fn metric_samples(&self, m: Metric) -> Vec<f64> {
        self.samples.iter().map(|s| m.of(s)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `user_id\trecall\tndcg\thr` per evaluated user.
    pub fn write_samples_tsv(&self, path: impl AsRef<Path>, user_ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "user_id\trecall\tndcg\thr").map_err(io)?;
        for s in &self.samples {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                user_ids[s.user], s.recall, s.ndcg, s.hr
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Top-`k` candidate indices by score descending, ties by index ascending.
/// `masked` must be sorted.
pub fn top_k(scores: &[f64], masked: &[u32], k: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(scores.len());
    let mut m = masked.iter().peekable();
    for (i, &s) in scores.iter().enumerate() {
        while m.peek().is_some_and(|&&x| (x as usize) < i) {
            m.next();
        }
        if m.peek().is_some_and(|&&x| x as usize == i) {
            continue;
        }
        cand.push((i, if s.is_nan() { f64::NEG_INFINITY } else { s }));
    }
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.truncate(k);
    cand.into_iter().map(|(i, _)| i).collect()
}

/// `(recall, ndcg, hr)` of a ranked list against a sorted target set.
pub fn ranking_metrics(ranked: &[usize], targets: &[u32], k: usize) -> (f64, f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, &i) in ranked.iter().take(k).enumerate() {
        if targets.binary_search(&(i as u32)).is_ok() {
            hits += 1;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..k.min(targets.len()))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let recall = hits as f64 / targets.len() as f64;
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    (recall, ndcg, if hits > 0 { 1.0 } else { 0.0 })
}

/// Core evaluation loop over explicit mask and target sets.
pub fn evaluate_sets(
    scorer: &dyn Scorer,
    mask: &UserItems,
    targets: &UserItems,
    k: usize,
) -> Result<(Vec<UserSample>, usize)> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let n_items = scorer.n_items();
    let rows: Vec<Option<UserSample>> = (0..targets.n_users())
        .into_par_iter()
        .filter(|&u| !targets.items(u).is_empty())
        .map(|u| {
            let masked: &[u32] = if u < mask.n_users() {
                mask.items(u)
            } else {
                &[]
            };
            if masked.len() >= n_items {
                return None;
            }
            let scores = scorer.score_user(u);
            let ranked = top_k(&scores, masked, k);
            assert!(
                ranked
                    .iter()
                    .all(|&i| masked.binary_search(&(i as u32)).is_err()),
                "masked item recommended to user {u}"
            );
            let (recall, ndcg, hr) = ranking_metrics(&ranked, targets.items(u), k);
            Some(UserSample {
                user: u,
                recall,
                ndcg,
                hr,
            })
        })
        .collect();
    let excluded = rows.iter().filter(|r| r.is_none()).count();
    let samples: Vec<UserSample> = rows.into_iter().flatten().collect();
    Ok((samples, excluded))
}

pub fn mean_of(samples: &[UserSample]) -> MetricSummary {
    let n = samples.len().max(1) as f64;
    MetricSummary {
        recall: samples.iter().map(|s| s.recall).sum::<f64>() / n,
        ndcg: samples.iter().map(|s| s.ndcg).sum::<f64>() / n,
        hr: samples.iter().map(|s| s.hr).sum::<f64>() / n,
    }
}

pub fn evaluate_topk(
    scorer: &dyn Scorer,
    ds: &InteractionDataset,
    req: &RankingRequest,
    target: Split,
) -> Result<EvalReport> {
    if scorer.n_items() != ds.n_items() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_items(),
            got: scorer.n_items(),
        });
    }
    let targets = ds.user_items(&[target]);
    if targets.total() == 0 {
        return Err(Error::invalid(format!(
            "split '{target}' has no interactions"
        )));
    }
    let mask = ds.user_items(&req.mask_splits);
    let (samples, excluded) = evaluate_sets(scorer, &mask, &targets, req.k)?;
    if excluded > 0 {
        log::warn!("{excluded} users excluded: every item masked");
    }
    let mean = mean_of(&samples);
    Ok(EvalReport {
        request: req.clone(),
        target_split: target,
        n_evaluated_users: samples.len(),
        n_excluded_users: excluded,
        mean,
        mean_pct: mean.as_percent(),
        samples,
        significance: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PairedT,
    Wilcoxon,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::PairedT => "paired t-test",
            TestKind::Wilcoxon => "wilcoxon signed-rank",
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "t" | "ttest" | "t_test" | "paired_t" => Ok(TestKind::PairedT),
            "wilcoxon" => Ok(TestKind::Wilcoxon),
            _ => Err(Error::invalid(format!("unknown test '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p_value: f64,
    pub test: String,
    pub n: usize,
    pub mean_diff: f64,
    /// Differences were constant and non-zero; `p_value` is 0 by convention.
    pub degenerate: bool,
}

impl Significance {
    pub fn significant(&self) -> bool {
        self.p_value < 0.05
    }
}

/// Two-sided paired test of `a` against `b`.
pub fn paired_significance(a: &[f64], b: &[f64], kind: TestKind) -> Result<Significance> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired test needs at least 2 samples"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut out = Significance {
        p_value: 1.0,
        test: kind.name().to_string(),
        n,
        mean_diff: mean,
        degenerate: false,
    };
    if d.iter().all(|&x| x == 0.0) {
        return Ok(out);
    }
    match kind {
        TestKind::PairedT => {
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // Constant differences up to rounding noise.
            if var.sqrt() <= 1e-12 * mean.abs() {
                out.p_value = 0.0;
                out.degenerate = true;
                return Ok(out);
            }
            let t = mean / (var / n as f64).sqrt();
            let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .map_err(|e| Error::invalid(e.to_string()))?;
            out.p_value = (2.0 * dist.sf(t.abs())).min(1.0);
        }
        TestKind::Wilcoxon => {
            let mut nz: Vec<f64> = d.into_iter().filter(|&x| x != 0.0).collect();
            nz.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
            let m = nz.len();
            let mut w_plus = 0.0;
            let mut tie_term = 0.0;
            let mut i = 0;
            while i < m {
                let mut j = i;
                while j + 1 < m && nz[j + 1].abs() == nz[i].abs() {
                    j += 1;
                }
                let rank = (i + j + 2) as f64 / 2.0;
                let t = (j - i + 1) as f64;
                tie_term += t * t * t - t;
                w_plus += nz[i..=j].iter().filter(|&&x| x > 0.0).count() as f64 * rank;
                i = j + 1;
            }
            let mf = m as f64;
            let mu = mf * (mf + 1.0) / 4.0;
            let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
            if var <= 0.0 {
                out.p_value = 0.0;
                out.degenerate = true;
                return Ok(out);
            }
            let z = (w_plus - mu) / var.sqrt();
            let normal = Normal::standard();
            out.p_value = (2.0 * normal.sf(z.abs())).min(1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_and_hr_on_partial_hit() {
        // targets {A=0, B=1}; top-2 = [A, X=5]
        let (r, _, hr) = ranking_metrics(&[0, 5], &[0, 1], 2);
        assert_eq!(r, 0.5);
        assert_eq!(hr, 1.0);
    }

    #[test]
    fn ideal_ranking_has_unit_ndcg() {
        let (_, n, _) = ranking_metrics(&[3, 1, 7], &[1, 3], 3);
        assert_eq!(n, 1.0);
    }

    #[test]
    fn ndcg_hits_at_one_and_three() {
        let (_, n, _) = ranking_metrics(&[0, 9, 1], &[0, 1], 3);
        let expect = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((n - expect).abs() < 1e-15);
        assert!((n - 0.91972).abs() < 1e-5);
    }

    #[test]
    fn top_k_masks_and_breaks_ties() {
        let scores = [1.0, 3.0, 3.0, 2.0, 3.0];
        assert_eq!(top_k(&scores, &[], 3), vec![1, 2, 4]);
        assert_eq!(top_k(&scores, &[2], 3), vec![1, 4, 3]);
        assert_eq!(top_k(&scores, &[0, 1, 2, 3, 4], 3), Vec::<usize>::new());
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = vec![0.1, 0.5, 0.3];
        for kind in [TestKind::PairedT, TestKind::Wilcoxon] {
            assert_eq!(paired_significance(&a, &a, kind).unwrap().p_value, 1.0);
        }
    }

    #[test]
    fn constant_shift_is_degenerate() {
        let b: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.125).collect();
        let s = paired_significance(&a, &b, TestKind::PairedT).unwrap();
        assert!(s.p_value < 1e-10);
        assert!(s.degenerate);
    }

    #[test]
    fn t_test_matches_reference_value() {
        // d = [1, 2, 3, 4]: mean 2.5, sd 1.29099, t = 3.87298, df 3 → p = 0.030466
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0; 4];
        let s = paired_significance(&a, &b, TestKind::PairedT).unwrap();
        assert!((s.p_value - 0.030466).abs() < 1e-5, "{}", s.p_value);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(paired_significance(&[1.0, 2.0], &[1.0], TestKind::PairedT).is_err());
    }
}
