//! Item feature tables: the MMFE binary format, dataset alignment, noise baselines
//! and concatenation fusion.
//!
//! MMFE layout (little-endian):
//!
//! ```text
//! "MMFE" | version u8 = 1 | dtype u8 = 0 (f32) | reserved u16 = 0 | n_items u32 | dim u32
//! id table: n_items × (len u16 | UTF-8 bytes)
//! payload:  n_items · dim f32, row-major, in id-table order
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{put_string, Cursor};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng;

pub const MMFE_MAGIC: &[u8; 4] = b"MMFE";
pub const MMFE_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Textual,
    Multimodal,
    Noise,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
            Modality::Multimodal => "multimodal",
            Modality::Noise => "noise",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visual" => Ok(Modality::Visual),
            "textual" => Ok(Modality::Textual),
            "multimodal" => Ok(Modality::Multimodal),
            "noise" => Ok(Modality::Noise),
            other => Err(Error::invalid(format!("unknown modality '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub extractor_name: String,
    /// `None` when loaded from a file that does not record it.
    pub modality: Option<Modality>,
    pub normalized: bool,
}

impl Provenance {
    pub fn new(extractor_name: impl Into<String>, modality: Option<Modality>) -> Self {
        Self {
            extractor_name: extractor_name.into(),
            modality,
            normalized: false,
        }
    }
}

/// Dense `n_items × dim` matrix of `f32` features keyed by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    item_ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    pub provenance: Provenance,
}

impl FeatureTable {
    pub fn new(
        item_ids: Vec<String>,
        dim: usize,
        data: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if data.len() != item_ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: item_ids.len() * dim,
                got: data.len(),
            });
        }
        let mut seen = HashSet::with_capacity(item_ids.len());
        for id in &item_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Format(format!("duplicate item id '{id}'")));
            }
        }
        for (r, id) in item_ids.iter().enumerate() {
            if data[r * dim..(r + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    item_id: id.clone(),
                });
            }
        }
        Ok(Self {
            item_ids,
            dim,
            data,
            provenance,
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Row `r` widened to `f64`.
    pub fn row_f64(&self, r: usize) -> Vec<f64> {
        self.row(r).iter().map(|&v| v as f64).collect()
    }

    /// Rows scaled to unit L2 norm; zero rows stay zero.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim.max(1)) {
            let n = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
            }
        }
        let mut provenance = self.provenance.clone();
        provenance.normalized = true;
        Self {
            item_ids: self.item_ids.clone(),
            dim: self.dim,
            data,
            provenance,
        }
    }

    /// Table of zeros with the same ids and dimensionality.
    pub fn zeros_like(&self) -> Self {
        Self {
            item_ids: self.item_ids.clone(),
            dim: self.dim,
            data: vec![0.0; self.data.len()],
            provenance: Provenance::new("zeros", Some(Modality::Noise)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n =
            u32::try_from(self.n_items()).map_err(|_| Error::Format("too many items".into()))?;
        let dim =
            u32::try_from(self.dim).map_err(|_| Error::Format("dimension too large".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + self.n_items() * 8);
        out.extend_from_slice(MMFE_MAGIC);
        out.push(MMFE_VERSION);
        out.push(DTYPE_F32);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for id in &self.item_ids {
            put_string(&mut out, id)?;
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], provenance: Provenance) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != MMFE_MAGIC {
            return Err(Error::Format("bad magic, expected MMFE".into()));
        }
        let version = cur.u8()?;
        if version != MMFE_VERSION {
            return Err(Error::Format(format!("unsupported MMFE version {version}")));
        }
        let dtype = cur.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {dtype}")));
        }
        let _reserved = cur.u16()?;
        let n = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let mut item_ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            item_ids.push(cur.string()?);
        }
        let payload_len = n
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        let payload = cur.take(payload_len)?;
        if cur.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                cur.remaining()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureTable::new(item_ids, dim, data, provenance)
    }

    /// Debug format: `item_id\tv1,v2,...` per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (r, id) in self.item_ids.iter().enumerate() {
            s.push_str(id);
            s.push('\t');
            let vals: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            s.push_str(&vals.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, vals) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("line {}: expected item_id<TAB>values", n + 1))
            })?;
            let row: Vec<f32> = if vals.trim().is_empty() {
                Vec::new()
            } else {
                vals.split(',')
                    .map(|v| v.trim().parse::<f32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?
            };
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: row.len(),
                    })
                }
                _ => {}
            }
            ids.push(id.to_string());
            data.extend(row);
        }
        FeatureTable::new(ids, dim.unwrap_or(0), data, provenance)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into())
}

/// Loads an MMFE file, or the TSV debug format when the extension is `.tsv`.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let provenance = Provenance::new(stem(path), None);
    if path.extension().is_some_and(|e| e == "tsv") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return FeatureTable::from_tsv(&text, provenance);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureTable::from_bytes(&bytes, provenance)
}

/// Writes MMFE (or the TSV debug format for `.tsv` paths) via a temp file and rename.
pub fn save_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e == "tsv") {
        table.to_tsv().into_bytes()
    } else {
        table.to_bytes()?
    };
    let tmp = path.with_extension("partial");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Error,
    ZeroFill,
    DropItems,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "error" => Ok(MissingPolicy::Error),
            "zero_fill" => Ok(MissingPolicy::ZeroFill),
            "drop_items" => Ok(MissingPolicy::DropItems),
            other => Err(Error::invalid(format!(
                "unknown missing-item policy '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Aligned {
    /// Rows follow dataset item indices. Under `DropItems` the dropped items have no
    /// row; rebuild the dataset with [`InteractionDataset::without_items`] and realign.
    pub table: FeatureTable,
    pub missing: Vec<String>,
}

pub fn align_to_dataset(
    table: &FeatureTable,
    ds: &InteractionDataset,
    policy: MissingPolicy,
) -> Result<Aligned> {
    let lookup: HashMap<&str, usize> = table
        .item_ids
        .iter()
        .enumerate()
        .map(|(r, id)| (id.as_str(), r))
        .collect();
    let mut ids = Vec::with_capacity(ds.n_items());
    let mut data = Vec::with_capacity(ds.n_items() * table.dim);
    let mut missing = Vec::new();
    for id in ds.item_ids() {
        match lookup.get(id.as_str()) {
            Some(&r) => {
                ids.push(id.clone());
                data.extend_from_slice(table.row(r));
            }
            None => match policy {
                MissingPolicy::Error => return Err(Error::MissingItem(id.clone())),
                MissingPolicy::ZeroFill => {
                    ids.push(id.clone());
                    data.extend(std::iter::repeat_n(0.0f32, table.dim));
                    missing.push(id.clone());
                }
                MissingPolicy::DropItems => missing.push(id.clone()),
            },
        }
    }
    if !missing.is_empty() {
        log::warn!(
            "{} dataset items have no feature row ({:?})",
            missing.len(),
            policy
        );
    }
    Ok(Aligned {
        table: FeatureTable::new(ids, table.dim, data, table.provenance.clone())?,
        missing,
    })
}

/// I.i.d. standard-normal table. Row `r` is drawn from the stream keyed by `(seed, r)`.
pub fn gen_gaussian_noise(n_items: usize, dim: usize, seed: u64) -> Result<FeatureTable> {
    let ids = (0..n_items).map(|i| i.to_string()).collect();
    gaussian_noise_for(ids, dim, seed)
}

/// Gaussian noise with the ids and dimensionality of `reference`.
pub fn gaussian_noise_like(reference: &FeatureTable, seed: u64) -> Result<FeatureTable> {
    gaussian_noise_for(reference.item_ids.clone(), reference.dim, seed)
}

pub fn gaussian_noise_for(item_ids: Vec<String>, dim: usize, seed: u64) -> Result<FeatureTable> {
    if item_ids.is_empty() || dim == 0 {
        return Err(Error::invalid(
            "noise tables need n_items >= 1 and dim >= 1",
        ));
    }
    let mut data = vec![0.0f32; item_ids.len() * dim];
    data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
        let mut rng = rng::stream(seed, r as u64);
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z as f32;
        }
    });
    FeatureTable::new(
        item_ids,
        dim,
        data,
        Provenance::new("gaussian", Some(Modality::Noise)),
    )
}

/// Empirical first and second moments of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub covariance: Vec<f64>,
    pub n_samples: usize,
    pub shrinkage: f64,
}

impl MomentSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self, a: usize, b: usize) -> f64 {
        self.covariance[a * self.dim() + b]
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }
}

/// Shrinkage used when a config does not set one.
pub const DEFAULT_SHRINKAGE: f64 = 0.1;

/// Mean and `(n−1)`-denominator covariance, blended toward its diagonal:
/// `(1 − shrinkage)·Σ + shrinkage·diag(Σ)`.
pub fn fit_moments(table: &FeatureTable, shrinkage: f64) -> Result<MomentSummary> {
    let n = table.n_items();
    if n < 2 {
        return Err(Error::invalid("moment fitting needs at least 2 rows"));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::invalid("shrinkage must lie in [0, 1]"));
    }
    let d = table.dim;
    let x = DMatrix::from_fn(n, d, |r, c| table.data[r * d + c] as f64);
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    for a in 0..d {
        for b in 0..a {
            let sym = 0.5 * (cov[(a, b)] + cov[(b, a)]);
            let shrunk = (1.0 - shrinkage) * sym;
            cov[(a, b)] = shrunk;
            cov[(b, a)] = shrunk;
        }
    }
    let mut covariance = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            covariance.push(cov[(a, b)]);
        }
    }
    Ok(MomentSummary {
        mean: mean.iter().copied().collect(),
        covariance,
        n_samples: n,
        shrinkage,
    })
}

/// Rows `mean + L·z` with `L` the Cholesky factor of the covariance and `z` standard
/// normal from the stream keyed by `(seed, row)`.
///
/// When the covariance is not positive definite, `ε·I` with `ε = 1e-6·trace/dim` is added
/// once before giving up.
pub fn gen_multivariate_noise(
    moments: &MomentSummary,
    n_items: usize,
    seed: u64,
) -> Result<FeatureTable> {
    let ids = (0..n_items).map(|i| i.to_string()).collect();
    multivariate_noise_for(moments, ids, seed)
}

/// Multivariate noise with the ids of `reference`, moment-matched to `moments`.
pub fn multivariate_noise_like(
    moments: &MomentSummary,
    reference: &FeatureTable,
    seed: u64,
) -> Result<FeatureTable> {
    multivariate_noise_for(moments, reference.item_ids.clone(), seed)
}

pub fn multivariate_noise_for(
    moments: &MomentSummary,
    item_ids: Vec<String>,
    seed: u64,
) -> Result<FeatureTable> {
    let d = moments.dim();
    if item_ids.is_empty() || d == 0 {
        return Err(Error::invalid(
            "noise tables need n_items >= 1 and dim >= 1",
        ));
    }
    let factor = cholesky_with_jitter(&moments.cov_matrix())?;
    let mut data = vec![0.0f32; item_ids.len() * d];
    data.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
        let mut rng = rng::stream(seed, r as u64);
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (a, v) in row.iter_mut().enumerate() {
            let mut acc = moments.mean[a];
            for (b, zb) in z.iter().enumerate().take(a + 1) {
                acc += factor[(a, b)] * zb;
            }
            *v = acc as f32;
        }
    });
    FeatureTable::new(
        item_ids,
        d,
        data,
        Provenance::new("multivariate", Some(Modality::Noise)),
    )
}

fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let trace = cov.trace();
    if trace == 0.0 && cov.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(d, d));
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eps = 1e-6 * trace.abs() / d as f64;
    let jittered = cov + DMatrix::identity(d, d) * eps;
    if let Some(ch) = jittered.clone().cholesky() {
        log::info!("covariance jittered by {eps:e} before factorization");
        return Ok(ch.l());
    }
    let min_eigenvalue = jittered
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Err(Error::Factorization { min_eigenvalue })
}

/// Column-wise concatenation of tables sharing the same ids in the same order.
pub fn concat_features(tables: &[FeatureTable], l2_normalize: bool) -> Result<FeatureTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    for t in &tables[1..] {
        if let Some(pos) = (0..first.n_items().max(t.n_items()))
            .find(|&r| first.item_ids.get(r) != t.item_ids.get(r))
        {
            let id = first
                .item_ids
                .get(pos)
                .or_else(|| t.item_ids.get(pos))
                .cloned()
                .unwrap_or_default();
            return Err(Error::ItemMismatch(id));
        }
    }
    let blocks: Vec<FeatureTable> = if l2_normalize {
        tables.iter().map(|t| t.l2_normalized()).collect()
    } else {
        tables.to_vec()
    };
    let dim: usize = blocks.iter().map(|t| t.dim).sum();
    let mut data = Vec::with_capacity(first.n_items() * dim);
    for r in 0..first.n_items() {
        for t in &blocks {
            data.extend_from_slice(t.row(r));
        }
    }
    let name = blocks
        .iter()
        .map(|t| t.provenance.extractor_name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let provenance = Provenance {
        extractor_name: name,
        modality: Some(Modality::Multimodal),
        normalized: l2_normalize,
    };
    FeatureTable::new(first.item_ids.clone(), dim, data, provenance)
}
