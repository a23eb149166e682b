//! The scorer contract shared by every recommender, plus the MMCK checkpoint format.
//!
//! MMCK layout (little-endian):
//!
//! ```text
//! "MMCK" | version u8 = 1 | dtype u8 = 1 (f64) | reserved u16 = 0
//! label: len u16 | UTF-8 | n_tensors u32
//! per tensor: name (len u16 | UTF-8) | rows u32 | cols u32 | rows·cols f64 row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::binio::{put_string, Cursor};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Maps a user to relevance scores over every item. Implementations are immutable
/// after training and safe to share across scoring threads.
pub trait Scorer: Send + Sync {
    fn n_items(&self) -> usize;

    fn score_user(&self, user: usize) -> Vec<f64>;
}

/// `score(u, i) = user_u · item_i (+ bias_i)`: the final form of every latent-factor
/// and graph model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingScorer {
    pub users: Matrix,
    pub items: Matrix,
    pub item_bias: Option<Vec<f64>>,
}

impl EmbeddingScorer {
    pub fn new(users: Matrix, items: Matrix, item_bias: Option<Vec<f64>>) -> Self {
        assert_eq!(users.cols(), items.cols(), "embedding widths differ");
        if let Some(b) = &item_bias {
            assert_eq!(b.len(), items.rows());
        }
        Self {
            users,
            items,
            item_bias,
        }
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        let base = dot(self.users.row(user), self.items.row(item));
        match &self.item_bias {
            Some(b) => b[item] + base,
            None => base,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite()
            && self.items.is_finite()
            && self
                .item_bias
                .as_ref()
                .is_none_or(|b| b.iter().all(|x| x.is_finite()))
    }
}

impl Scorer for EmbeddingScorer {
    fn n_items(&self) -> usize {
        self.items.rows()
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        (0..self.items.rows())
            .map(|i| self.score(user, i))
            .collect()
    }
}

/// Named parameter tensors plus a label; the on-disk unit for trained models.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub label: String,
    pub tensors: BTreeMap<String, Matrix>,
}

pub const MMCK_MAGIC: &[u8; 4] = b"MMCK";
const MMCK_VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

impl Checkpoint {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.insert(name.into(), m);
    }

    pub fn insert_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.insert(name, Matrix::from_vec(1, v.len(), v.to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    /// Stores the scoring snapshot under `score.user`, `score.item`, `score.bias`.
    pub fn with_scorer(mut self, s: &EmbeddingScorer) -> Self {
        self.insert("score.user", s.users.clone());
        self.insert("score.item", s.items.clone());
        if let Some(b) = &s.item_bias {
            self.insert_vec("score.bias", b);
        }
        self
    }

    pub fn scorer(&self) -> Result<EmbeddingScorer> {
        let users = self
            .get("score.user")
            .ok_or_else(|| Error::Format("checkpoint lacks score.user".into()))?
            .clone();
        let items = self
            .get("score.item")
            .ok_or_else(|| Error::Format("checkpoint lacks score.item".into()))?
            .clone();
        if users.cols() != items.cols() {
            return Err(Error::DimensionMismatch {
                expected: users.cols(),
                got: items.cols(),
            });
        }
        let bias = self.get("score.bias").map(|m| m.as_slice().to_vec());
        if let Some(b) = &bias {
            if b.len() != items.rows() {
                return Err(Error::DimensionMismatch {
                    expected: items.rows(),
                    got: b.len(),
                });
            }
        }
        Ok(EmbeddingScorer::new(users, items, bias))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MMCK_MAGIC);
        out.push(MMCK_VERSION);
        out.push(DTYPE_F64);
        out.extend_from_slice(&0u16.to_le_bytes());
        put_string(&mut out, &self.label)?;
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            put_string(&mut out, name)?;
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != MMCK_MAGIC {
            return Err(Error::Format("bad magic, expected MMCK".into()));
        }
        let (version, dtype) = (cur.u8()?, cur.u8()?);
        if version != MMCK_VERSION || dtype != DTYPE_F64 {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} / dtype {dtype}"
            )));
        }
        let _reserved = cur.u16()?;
        let label = cur.string()?;
        let n = cur.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name = cur.string()?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let len = rows
                .checked_mul(cols)
                .and_then(|x| x.checked_mul(8))
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            let data = cur
                .take(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Matrix::from_vec(rows, cols, data));
        }
        if cur.remaining() != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { label, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = EmbeddingScorer::new(
            Matrix::from_vec(2, 2, vec![0.1, -0.2, f64::MIN_POSITIVE, 3.5]),
            Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            Some(vec![0.0, -1.0, 1e-300]),
        );
        let ck = Checkpoint::new("bprmf").with_scorer(&s);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.scorer().unwrap(), s);
    }

    #[test]
    fn checkpoint_rejects_truncation_and_magic() {
        let ck = Checkpoint::new("x").with_scorer(&EmbeddingScorer::new(
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            None,
        ));
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'E';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
