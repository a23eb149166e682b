//! Neighborhood recommenders (Item-kNN, Attribute Item-kNN) and the
//! non-personalized baselines.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::UserItems;
use crate::error::{Error, Result};
use crate::keywords::AttributeMatrix;
use crate::model::Scorer;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Cosine,
    Jaccard,
    Dot,
    Asym,
    Tversky,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 5] = [
        SimilarityKind::Cosine,
        SimilarityKind::Jaccard,
        SimilarityKind::Dot,
        SimilarityKind::Asym,
        SimilarityKind::Tversky,
    ];

    /// Set measures ignore weights and look only at supports.
    pub fn is_set_based(self) -> bool {
        matches!(
            self,
            SimilarityKind::Jaccard | SimilarityKind::Asym | SimilarityKind::Tversky
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Jaccard => "jaccard",
            SimilarityKind::Dot => "dot",
            SimilarityKind::Asym => "asym",
            SimilarityKind::Tversky => "tversky",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimilarityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown similarity '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    TfIdf,
    Bm25,
}

impl Weighting {
    pub const ALL: [Weighting; 3] = [Weighting::None, Weighting::TfIdf, Weighting::Bm25];

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::TfIdf => "tf_idf",
            Weighting::Bm25 => "bm25",
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Weighting::None),
            "tf_idf" | "tfidf" => Ok(Weighting::TfIdf),
            "bm25" => Ok(Weighting::Bm25),
            _ => Err(Error::invalid(format!("unknown weighting '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    pub alpha: f64,
    pub beta: f64,
    pub neighbors: usize,
    pub weighting: Weighting,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

/// Neighbor counts searched by the kNN grid.
pub const NEIGHBOR_GRID: [usize; 5] = [5, 10, 20, 50, 100];

impl SimilarityConfig {
    /// Config with the default `alpha`/`beta` for `kind` (asym 0.25, tversky 0.5/0.5).
    pub fn new(kind: SimilarityKind, neighbors: usize) -> Self {
        let alpha = if kind == SimilarityKind::Asym {
            0.25
        } else {
            0.5
        };
        Self {
            kind,
            alpha,
            beta: 0.5,
            neighbors,
            weighting: Weighting::None,
            bm25_k1: 1.2,
            bm25_b: 0.75,
        }
    }

    pub fn with_weighting(mut self, w: Weighting) -> Self {
        self.weighting = w;
        self
    }

    pub fn with_alpha_beta(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors must be at least 1"));
        }
        match self.kind {
            SimilarityKind::Asym if !(0.0..=1.0).contains(&self.alpha) => Err(Error::invalid(
                format!("asym alpha {} outside [0, 1]", self.alpha),
            )),
            SimilarityKind::Tversky if !(self.alpha >= 0.0 && self.beta >= 0.0) => {
                Err(Error::invalid(format!(
                    "tversky alpha/beta must be non-negative, got {}/{}",
                    self.alpha, self.beta
                )))
            }
            _ if self.bm25_k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25_b) => {
                Err(Error::invalid("bm25 needs k1 >= 0 and b in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Short stable label, e.g. `cosine-k20-tf_idf`.
    pub fn label(&self) -> String {
        let mut s = format!("{}-k{}-{}", self.kind, self.neighbors, self.weighting);
        match self.kind {
            SimilarityKind::Asym => s.push_str(&format!("-a{}", self.alpha)),
            SimilarityKind::Tversky => s.push_str(&format!("-a{}-b{}", self.alpha, self.beta)),
            _ => {}
        }
        s
    }
}

/// Sparse vector with strictly increasing indices and non-zero values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    /// Sorts, sums duplicates and drops zeros.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut out = SparseVec::default();
        for (i, v) in pairs {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        let keep: Vec<bool> = out.values.iter().map(|&v| v != 0.0).collect();
        if keep.iter().any(|k| !k) {
            let mut k = keep.iter();
            out.indices.retain(|_| *k.next().unwrap());
            let mut k = keep.iter();
            out.values.retain(|_| *k.next().unwrap());
        }
        out
    }

    pub fn binary(indices: impl IntoIterator<Item = usize>) -> Self {
        Self::from_pairs(indices.into_iter().map(|i| (i, 1.0)).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }
}

/// Pairwise statistics every measure is a function of.
#[derive(Debug, Clone, Copy)]
struct PairStats {
    dot: f64,
    inter: f64,
    norm_a: f64,
    norm_b: f64,
    size_a: f64,
    size_b: f64,
}

fn closed_form(kind: SimilarityKind, alpha: f64, beta: f64, s: PairStats) -> f64 {
    match kind {
        SimilarityKind::Dot => s.dot,
        SimilarityKind::Cosine => {
            if s.norm_a == 0.0 || s.norm_b == 0.0 {
                0.0
            } else {
                s.dot / (s.norm_a * s.norm_b)
            }
        }
        SimilarityKind::Jaccard => {
            let union = s.size_a + s.size_b - s.inter;
            if union == 0.0 {
                0.0
            } else {
                s.inter / union
            }
        }
        SimilarityKind::Asym => {
            if s.inter == 0.0 {
                0.0
            } else {
                s.inter / (s.size_a.powf(alpha) * s.size_b.powf(1.0 - alpha))
            }
        }
        SimilarityKind::Tversky => {
            let denom = s.inter + alpha * (s.size_a - s.inter) + beta * (s.size_b - s.inter);
            if s.inter == 0.0 || denom == 0.0 {
                0.0
            } else {
                s.inter / denom
            }
        }
    }
}

/// Similarity of two non-negative sparse vectors. Set measures use the supports.
pub fn similarity(a: &SparseVec, b: &SparseVec, cfg: &SimilarityConfig) -> f64 {
    let (mut dot, mut inter) = (0.0, 0.0);
    let (mut x, mut y) = (0, 0);
    while x < a.nnz() && y < b.nnz() {
        match a.indices[x].cmp(&b.indices[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                dot += a.values[x] * b.values[y];
                inter += 1.0;
                x += 1;
                y += 1;
            }
        }
    }
    closed_form(
        cfg.kind,
        cfg.alpha,
        cfg.beta,
        PairStats {
            dot,
            inter,
            norm_a: a.norm(),
            norm_b: b.norm(),
            size_a: a.nnz() as f64,
            size_b: b.nnz() as f64,
        },
    )
}

/// Reweights an `item × axis` count matrix given as one sparse row per item.
pub fn apply_weighting(rows: &[SparseVec], scheme: Weighting, k1: f64, b: f64) -> Vec<SparseVec> {
    if scheme == Weighting::None {
        return rows.to_vec();
    }
    let n = rows.len() as f64;
    let mut df = std::collections::HashMap::<usize, f64>::new();
    for r in rows {
        for &c in &r.indices {
            *df.entry(c).or_default() += 1.0;
        }
    }
    let lens: Vec<f64> = rows.iter().map(|r| r.values.iter().sum()).collect();
    let avg_len = if rows.is_empty() {
        0.0
    } else {
        lens.iter().sum::<f64>() / n
    };
    rows.iter()
        .zip(&lens)
        .map(|(r, &len)| {
            let pairs = r
                .iter()
                .map(|(c, tf)| {
                    let d = df[&c];
                    let w = match scheme {
                        Weighting::TfIdf => tf * (n / d).ln(),
                        Weighting::Bm25 => {
                            let idf = ((n - d + 0.5) / (d + 0.5) + 1.0).ln();
                            let norm = if avg_len > 0.0 { len / avg_len } else { 0.0 };
                            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
                        }
                        Weighting::None => unreachable!(),
                    };
                    (c, w)
                })
                .collect();
            SparseVec::from_pairs(pairs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborSource {
    Interactions,
    Attributes,
}

/// Per-item top-k neighbor lists. Lists exclude the item itself and are sorted by
/// weight descending, then index ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodModel {
    pub source: NeighborSource,
    neighbors: Vec<Vec<(u32, f64)>>,
    /// `reverse[j]` lists `(i, w)` for every `i` holding `j` as a neighbor.
    reverse: Vec<Vec<(u32, f64)>>,
}

impl NeighborhoodModel {
    pub fn from_lists(source: NeighborSource, neighbors: Vec<Vec<(u32, f64)>>) -> Self {
        let mut reverse = vec![Vec::new(); neighbors.len()];
        for (i, list) in neighbors.iter().enumerate() {
            for &(j, w) in list {
                reverse[j as usize].push((i as u32, w));
            }
        }
        Self {
            source,
            neighbors,
            reverse,
        }
    }

    pub fn n_items(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, item: usize) -> &[(u32, f64)] {
        &self.neighbors[item]
    }

    /// Keeps the first `k` neighbors of every list.
    pub fn truncated(&self, k: usize) -> Self {
        Self::from_lists(
            self.source,
            self.neighbors
                .iter()
                .map(|l| l[..l.len().min(k)].to_vec())
                .collect(),
        )
    }

    /// `score(i) = Σ_{j ∈ history} sim(i, j)` over stored neighbor weights.
    pub fn score_history(&self, history: &[u32]) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_items()];
        for &j in history {
            for &(i, w) in &self.reverse[j as usize] {
                scores[i as usize] += w;
            }
        }
        scores
    }

    /// One line per item: `item_id\tneighbor_id:weight,...`.
    pub fn write_tsv(&self, path: impl AsRef<Path>, item_ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, list) in self.neighbors.iter().enumerate() {
            let body: Vec<String> = list
                .iter()
                .map(|&(j, s)| format!("{}:{}", item_ids[j as usize], s))
                .collect();
            writeln!(w, "{}\t{}", item_ids[i], body.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(
        path: impl AsRef<Path>,
        item_ids: &[String],
        source: NeighborSource,
    ) -> Result<Self> {
        let path = path.as_ref();
        let index: std::collections::HashMap<&str, u32> = item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let lookup = |id: &str, line: u64| {
            index.get(id).copied().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("unknown item '{id}'"),
            })
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut neighbors = vec![Vec::new(); item_ids.len()];
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (item, rest) = line.split_once('\t').unwrap_or((line.as_str(), ""));
            let i = lookup(item, n as u64 + 1)?;
            for entry in rest.split(',').filter(|e| !e.is_empty()) {
                let (j, w) = entry.rsplit_once(':').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: n as u64 + 1,
                    reason: format!("bad neighbor entry '{entry}'"),
                })?;
                let w: f64 = w.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: n as u64 + 1,
                    reason: format!("bad weight '{w}'"),
                })?;
                neighbors[i as usize].push((lookup(j, n as u64 + 1)?, w));
            }
        }
        Ok(Self::from_lists(source, neighbors))
    }
}

/// Exact top-k neighbors over item rows via an inverted index on the axis.
pub fn fit_itemknn(
    rows: &[SparseVec],
    cfg: &SimilarityConfig,
    source: NeighborSource,
) -> Result<NeighborhoodModel> {
    cfg.validate()?;
    let n = rows.len();
    let mut k = cfg.neighbors;
    if k > n.saturating_sub(1) {
        log::warn!(
            "neighbors={k} exceeds n_items-1={}, clamping",
            n.saturating_sub(1)
        );
        k = n.saturating_sub(1);
    }
    let weighted = apply_weighting(rows, cfg.weighting, cfg.bm25_k1, cfg.bm25_b);
    let n_axis = rows
        .iter()
        .flat_map(|r| r.indices.last().copied())
        .max()
        .map_or(0, |m| m + 1);
    let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_axis];
    for (i, r) in weighted.iter().enumerate() {
        for (c, v) in r.iter() {
            postings[c].push((i as u32, v));
        }
    }
    // Set measures look at the unweighted supports, which may be wider than the
    // weighted ones when a weight rounds to zero.
    let support: Vec<Vec<u32>> = if cfg.kind.is_set_based() {
        let mut p = vec![Vec::new(); n_axis];
        for (i, r) in rows.iter().enumerate() {
            for &c in &r.indices {
                p[c].push(i as u32);
            }
        }
        p
    } else {
        Vec::new()
    };
    let norms: Vec<f64> = weighted.iter().map(SparseVec::norm).collect();
    let sizes: Vec<f64> = rows.iter().map(|r| r.nnz() as f64).collect();

    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dot = vec![0.0; n];
            let mut inter = vec![0.0; n];
            let mut touched = Vec::new();
            if cfg.kind.is_set_based() {
                for &c in &rows[i].indices {
                    for &j in &support[c] {
                        if inter[j as usize] == 0.0 {
                            touched.push(j);
                        }
                        inter[j as usize] += 1.0;
                    }
                }
            } else {
                for (c, v) in weighted[i].iter() {
                    for &(j, w) in &postings[c] {
                        if dot[j as usize] == 0.0 && inter[j as usize] == 0.0 {
                            touched.push(j);
                        }
                        dot[j as usize] += v * w;
                        inter[j as usize] += 1.0;
                    }
                }
            }
            let mut list: Vec<(u32, f64)> = touched
                .into_iter()
                .filter(|&j| j as usize != i)
                .map(|j| {
                    let j_ = j as usize;
                    let s = PairStats {
                        dot: dot[j_],
                        inter: inter[j_],
                        norm_a: norms[i],
                        norm_b: norms[j_],
                        size_a: sizes[i],
                        size_b: sizes[j_],
                    };
                    (j, closed_form(cfg.kind, cfg.alpha, cfg.beta, s))
                })
                .filter(|&(_, s)| s > 0.0)
                .collect();
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            list.truncate(k);
            list
        })
        .collect();
    Ok(NeighborhoodModel::from_lists(source, neighbors))
}

/// Item vectors as columns of the train user-item matrix.
pub fn interaction_rows(train: &UserItems, n_items: usize) -> Vec<SparseVec> {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_items];
    for u in 0..train.n_users() {
        for &i in train.items(u) {
            cols[i as usize].push((u, 1.0));
        }
    }
    cols.into_iter().map(SparseVec::from_pairs).collect()
}

/// Item vectors as binary attribute rows, in matrix row order.
pub fn attribute_rows(m: &AttributeMatrix) -> Vec<SparseVec> {
    m.active
        .iter()
        .map(|a| SparseVec::binary(a.iter().copied()))
        .collect()
}

/// A neighborhood model bound to user histories (the train interactions).
pub struct KnnScorer {
    pub model: NeighborhoodModel,
    pub history: UserItems,
}

impl Scorer for KnnScorer {
    fn n_items(&self) -> usize {
        self.model.n_items()
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        if user >= self.history.n_users() {
            return vec![0.0; self.model.n_items()];
        }
        self.model.score_history(self.history.items(user))
    }
}

/// Scores every item by its train interaction count.
#[derive(Debug, Clone, PartialEq)]
pub struct MostPop {
    counts: Vec<f64>,
}

impl MostPop {
    pub fn fit(train: &UserItems, n_items: usize) -> Self {
        Self {
            counts: train
                .item_degrees(n_items)
                .into_iter()
                .map(|d| d as f64)
                .collect(),
        }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

impl Scorer for MostPop {
    fn n_items(&self) -> usize {
        self.counts.len()
    }

    fn score_user(&self, _user: usize) -> Vec<f64> {
        self.counts.clone()
    }
}

/// Uniform scores keyed by `(seed, user)`; identical across runs and threads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomScorer {
    pub seed: u64,
    pub n_items: usize,
}

impl Scorer for RandomScorer {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        let mut r = rng::stream(self.seed, user as u64);
        (0..self.n_items).map(|_| r.random::<f64>()).collect()
    }
}
