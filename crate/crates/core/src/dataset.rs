//! Interaction ingestion, k-core filtering, per-user holdout splits and dataset statistics.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    /// Kept for provenance only; training treats every interaction as implicit feedback.
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

impl RawInteraction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating: None,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn delimiter(self) -> u8 {
        match self {
            InputFormat::Tsv => b'\t',
            InputFormat::Csv => b',',
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::invalid(format!("unknown input format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: InputFormat,
    pub strict: bool,
    /// Zero-based column holding the rating when the file has no header.
    pub rating_column: Option<usize>,
    /// Zero-based column holding the timestamp when the file has no header.
    pub timestamp_column: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: InputFormat::Tsv,
            strict: false,
            rating_column: Some(2),
            timestamp_column: Some(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedInteractions {
    pub rows: Vec<RawInteraction>,
    pub malformed: Vec<MalformedRow>,
}

impl LoadedInteractions {
    pub fn malformed_count(&self) -> usize {
        self.malformed.len()
    }
}

pub fn load_interactions(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedInteractions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(file, path, opts)
}

/// Parses interaction rows from any reader; `label` is used in error messages.
pub fn parse_interactions<R: Read>(
    reader: R,
    label: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<LoadedInteractions> {
    let label = label.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.format.delimiter())
        .has_headers(false)
        .flexible(true)
        .quoting(opts.format == InputFormat::Csv)
        .from_reader(reader);

    let mut out = LoadedInteractions::default();
    let mut rating_col = opts.rating_column;
    let mut ts_col = opts.timestamp_column;
    let mut expected_width: Option<usize> = None;
    let mut first = true;

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: label.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if first {
            first = false;
            let is_header = record.len() >= 2
                && record[0].trim().eq_ignore_ascii_case("user_id")
                && record[1].trim().eq_ignore_ascii_case("item_id");
            if is_header {
                rating_col = record
                    .iter()
                    .position(|c| c.trim().eq_ignore_ascii_case("rating"));
                ts_col = record
                    .iter()
                    .position(|c| c.trim().eq_ignore_ascii_case("timestamp"));
                expected_width = Some(record.len());
                continue;
            }
        }

        let outcome = parse_row(&record, rating_col, ts_col);
        if opts.strict {
            let width = *expected_width.get_or_insert(record.len());
            if record.len() != width {
                return Err(Error::Parse {
                    path: label.to_path_buf(),
                    line,
                    reason: format!("expected {width} columns, found {}", record.len()),
                });
            }
        }
        match outcome {
            Ok(row) => out.rows.push(row),
            Err(reason) if opts.strict => {
                return Err(Error::Parse {
                    path: label.to_path_buf(),
                    line,
                    reason,
                })
            }
            Err(reason) => out.malformed.push(MalformedRow { line, reason }),
        }
    }
    if !out.malformed.is_empty() {
        log::warn!(
            "{}: {} malformed rows skipped",
            label.display(),
            out.malformed.len()
        );
    }
    Ok(out)
}

fn parse_row(
    record: &csv::StringRecord,
    rating_col: Option<usize>,
    ts_col: Option<usize>,
) -> std::result::Result<RawInteraction, String> {
    if record.len() < 2 {
        return Err(format!(
            "expected at least 2 columns, found {}",
            record.len()
        ));
    }
    let user = record[0].trim();
    let item = record[1].trim();
    if user.is_empty() {
        return Err("empty user id".into());
    }
    if item.is_empty() {
        return Err("empty item id".into());
    }
    let optional = |col: Option<usize>| {
        col.and_then(|c| record.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    };
    let rating = optional(rating_col)
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| format!("unparsable rating '{s}'"))
        })
        .transpose()?;
    let timestamp = optional(ts_col)
        .map(|s| {
            s.parse::<i64>()
                .or_else(|_| s.parse::<f64>().map(|f| f as i64))
                .map_err(|_| format!("unparsable timestamp '{s}'"))
        })
        .transpose()?;
    Ok(RawInteraction {
        user_id: user.to_string(),
        item_id: item.to_string(),
        rating,
        timestamp,
    })
}

#[derive(Debug, Clone)]
pub struct KcoreResult {
    pub interactions: Vec<RawInteraction>,
    pub rounds: usize,
    /// Set when filtering removed everything.
    pub emptied: bool,
}

/// Iteratively removes users with fewer than `k_user` distinct items and items with
/// fewer than `k_item` distinct users until no violator remains.
///
/// The surviving rows keep their input order. Degrees count distinct partners, so
/// duplicate rows neither help nor hurt an entity.
pub fn kcore_filter(rows: &[RawInteraction], k_user: usize, k_item: usize) -> Result<KcoreResult> {
    if k_user == 0 || k_item == 0 {
        return Err(Error::invalid("k-core thresholds must be >= 1"));
    }
    let pairs: HashSet<(&str, &str)> = rows
        .iter()
        .map(|r| (r.user_id.as_str(), r.item_id.as_str()))
        .collect();
    let mut alive: HashSet<(&str, &str)> = pairs;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut udeg: HashMap<&str, usize> = HashMap::new();
        let mut ideg: HashMap<&str, usize> = HashMap::new();
        for &(u, i) in &alive {
            *udeg.entry(u).or_default() += 1;
            *ideg.entry(i).or_default() += 1;
        }
        let before = alive.len();
        alive.retain(|(u, i)| udeg[u] >= k_user && ideg[i] >= k_item);
        if alive.len() == before {
            break;
        }
    }
    let interactions: Vec<RawInteraction> = rows
        .iter()
        .filter(|r| alive.contains(&(r.user_id.as_str(), r.item_id.as_str())))
        .cloned()
        .collect();
    let emptied = interactions.is_empty() && !rows.is_empty();
    if emptied {
        log::warn!("k-core filtering (k_user={k_user}, k_item={k_item}) removed every interaction");
    }
    Ok(KcoreResult {
        interactions,
        rounds,
        emptied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must sum to 1"));
        }
        Ok(())
    }

    /// `(train, valid, test)` counts for a user with `n` interactions.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let mut valid = (n as f64 * self.valid + 1e-9).floor() as usize;
        let mut test = (n as f64 * self.test + 1e-9).floor() as usize;
        while n > 0 && valid + test >= n {
            if test >= valid && test > 0 {
                test -= 1;
            } else {
                valid -= 1;
            }
        }
        (n - valid - test, valid, test)
    }
}

/// Deduplicated implicit-feedback interactions over dense user/item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    interactions: Vec<(u32, u32)>,
    timestamps: Vec<Option<i64>>,
    splits: Vec<Split>,
}

impl InteractionDataset {
    /// Deduplicates `(user, item)` pairs keeping the earliest timestamp and assigns
    /// indices in order of first appearance. Every interaction starts in `train`.
    pub fn from_raw(rows: &[RawInteraction]) -> Self {
        let labelled: Vec<(&RawInteraction, Split)> =
            rows.iter().map(|r| (r, Split::Train)).collect();
        Self::build(&labelled)
    }

    fn build(rows: &[(&RawInteraction, Split)]) -> Self {
        let mut ds = InteractionDataset {
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            interactions: Vec::new(),
            timestamps: Vec::new(),
            splits: Vec::new(),
        };
        let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
        for (row, split) in rows {
            let u = intern(&mut ds.user_ids, &mut ds.user_index, &row.user_id);
            let i = intern(&mut ds.item_ids, &mut ds.item_index, &row.item_id);
            match seen.get(&(u, i)) {
                Some(&pos) => {
                    let earlier = match (row.timestamp, ds.timestamps[pos]) {
                        (Some(new), Some(old)) => new < old,
                        (Some(_), None) => true,
                        _ => false,
                    };
                    if earlier {
                        ds.timestamps[pos] = row.timestamp;
                        ds.splits[pos] = *split;
                    }
                }
                None => {
                    seen.insert((u, i), ds.interactions.len());
                    ds.interactions.push((u, i));
                    ds.timestamps.push(row.timestamp);
                    ds.splits.push(*split);
                }
            }
        }
        ds
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[(u32, u32)] {
        &self.interactions
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn timestamps(&self) -> &[Option<i64>] {
        &self.timestamps
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).map(|&u| u as usize)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).map(|&i| i as usize)
    }

    /// Interactions labelled `split`.
    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.interactions
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(&(u, i), _)| (u as usize, i as usize))
    }

    pub fn count_in(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// Per-user sorted item lists restricted to the given splits.
    pub fn user_items(&self, splits: &[Split]) -> UserItems {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); self.n_users()];
        for (&(u, i), s) in self.interactions.iter().zip(&self.splits) {
            if splits.contains(s) {
                lists[u as usize].push(i);
            }
        }
        UserItems::from_lists(lists)
    }

    /// Per-user random holdout. Each user's interactions are shuffled with the stream
    /// keyed by `(seed, user_index)`; the floor of each ratio goes to valid and test and
    /// the remainder to train, so every user keeps at least one training interaction.
    pub fn split_holdout(&self, ratios: SplitRatios, seed: u64) -> Result<Self> {
        ratios.validate()?;
        let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); self.n_users()];
        for (pos, &(u, _)) in self.interactions.iter().enumerate() {
            by_user[u as usize].push(pos);
        }
        let mut splits = vec![Split::Train; self.len()];
        for (u, positions) in by_user.iter_mut().enumerate() {
            let mut rng = rng::stream(seed, u as u64);
            positions.shuffle(&mut rng);
            let (n_train, n_valid, _) = ratios.counts(positions.len());
            for (k, &pos) in positions.iter().enumerate() {
                splits[pos] = if k < n_train {
                    Split::Train
                } else if k < n_train + n_valid {
                    Split::Valid
                } else {
                    Split::Test
                };
            }
        }
        Ok(Self {
            splits,
            ..self.clone()
        })
    }

    /// Rebuilds the dataset without the given items (and any users left empty).
    pub fn without_items(&self, drop: &HashSet<String>) -> Self {
        let rows: Vec<(RawInteraction, Split)> = self
            .interactions
            .iter()
            .zip(&self.splits)
            .zip(&self.timestamps)
            .filter(|((&(_, i), _), _)| !drop.contains(&self.item_ids[i as usize]))
            .map(|((&(u, i), s), ts)| {
                let mut r =
                    RawInteraction::new(&self.user_ids[u as usize], &self.item_ids[i as usize]);
                r.timestamp = *ts;
                (r, *s)
            })
            .collect();
        let refs: Vec<(&RawInteraction, Split)> = rows.iter().map(|(r, s)| (r, *s)).collect();
        Self::build(&refs)
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        compute_stats(self.n_users(), self.n_items(), self.len())
    }

    /// Writes `user_id\titem_id\tsplit` rows with a header.
    pub fn write_split_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "user_id\titem_id\tsplit").map_err(io)?;
        for (&(u, i), s) in self.interactions.iter().zip(&self.splits) {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.user_ids[u as usize], self.item_ids[i as usize], s
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a file produced by [`write_split_tsv`](Self::write_split_tsv).
    pub fn read_split_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n as u64 + 1;
            if line.trim().is_empty() || (n == 0 && line.starts_with("user_id")) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 || cols[0].is_empty() || cols[1].is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: "expected user_id, item_id, split".into(),
                });
            }
            let split = cols[2].parse::<Split>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
            rows.push((RawInteraction::new(cols[0], cols[1]), split));
        }
        let refs: Vec<(&RawInteraction, Split)> = rows.iter().map(|(r, s)| (r, *s)).collect();
        Ok(Self::build(&refs))
    }

    /// Builds a dataset directly from index pairs and split labels (synthetic data).
    /// Ids are the decimal indices; indices must be dense.
    pub fn from_indexed(
        n_users: usize,
        n_items: usize,
        pairs: &[(usize, usize, Split)],
    ) -> Result<Self> {
        let user_ids: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
        let item_ids: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let mut seen = HashSet::new();
        let mut interactions = Vec::with_capacity(pairs.len());
        let mut splits = Vec::with_capacity(pairs.len());
        let mut u_seen = vec![false; n_users];
        let mut i_seen = vec![false; n_items];
        for &(u, i, s) in pairs {
            if u >= n_users || i >= n_items {
                return Err(Error::invalid(format!("pair ({u}, {i}) out of range")));
            }
            if seen.insert((u, i)) {
                interactions.push((u as u32, i as u32));
                splits.push(s);
                u_seen[u] = true;
                i_seen[i] = true;
            }
        }
        if let Some(u) = u_seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("user {u} has no interactions")));
        }
        if let Some(i) = i_seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("item {i} has no interactions")));
        }
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.clone(), k as u32))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.clone(), k as u32))
            .collect();
        Ok(Self {
            timestamps: vec![None; interactions.len()],
            user_ids,
            item_ids,
            user_index,
            item_index,
            interactions,
            splits,
        })
    }
}

fn intern(ids: &mut Vec<String>, index: &mut HashMap<String, u32>, id: &str) -> u32 {
    if let Some(&k) = index.get(id) {
        return k;
    }
    let k = ids.len() as u32;
    ids.push(id.to_string());
    index.insert(id.to_string(), k);
    k
}

/// Per-user sorted item lists in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UserItems {
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl UserItems {
    pub fn from_lists(mut lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for list in lists.iter_mut() {
            list.sort_unstable();
            list.dedup();
            items.extend_from_slice(list);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    pub fn n_users(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn items(&self, user: usize) -> &[u32] {
        &self.items[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.items(user).binary_search(&(item as u32)).is_ok()
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }

    /// Number of users holding each item.
    pub fn item_degrees(&self, n_items: usize) -> Vec<usize> {
        let mut deg = vec![0usize; n_items];
        for &i in &self.items {
            deg[i as usize] += 1;
        }
        deg
    }

    /// All `(user, item)` pairs in user order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n_users())
            .flat_map(|u| self.items(u).iter().map(move |&i| (u, i as usize)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    /// `100 · (1 − |R| / (|U|·|I|))`, rounded to 3 decimals.
    pub sparsity_pct: f64,
}

impl DatasetStats {
    pub fn sparsity_display(&self) -> String {
        format!("{:.3}%", self.sparsity_pct)
    }
}

pub fn compute_stats(
    n_users: usize,
    n_items: usize,
    n_interactions: usize,
) -> Result<DatasetStats> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::invalid(
            "statistics need at least one user and one item",
        ));
    }
    let cells = n_users as f64 * n_items as f64;
    if n_interactions as f64 > cells {
        return Err(Error::invalid("more interactions than user-item cells"));
    }
    let raw = 100.0 * (1.0 - n_interactions as f64 / cells);
    Ok(DatasetStats {
        n_users,
        n_items,
        n_interactions,
        sparsity_pct: (raw * 1000.0).round() / 1000.0,
    })
}

/// Per-dataset k-core defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    Baby,
    Pets,
    Clothing,
}

impl DatasetProfile {
    pub fn kcore(self) -> usize {
        match self {
            DatasetProfile::Baby | DatasetProfile::Pets => 5,
            DatasetProfile::Clothing => 10,
        }
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baby" => Ok(DatasetProfile::Baby),
            "pets" => Ok(DatasetProfile::Pets),
            "clothing" => Ok(DatasetProfile::Clothing),
            other => Err(Error::invalid(format!("unknown dataset profile '{other}'"))),
        }
    }
}
