//! Slot-structured keyword answers → one-hot attribute matrix.
//!
//! Answers look like `[Category] {Feeding}, [Age Group] {Infant}, ...`. Each slot keeps
//! its `top_k` most frequent normalized keywords plus an `other` bucket, so five slots
//! with 50 keywords each give 255 binary features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOTS_PER_SCHEMA: usize = 5;
pub const OTHER_TOKEN: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSchema {
    pub domain_name: String,
    pub slots: Vec<String>,
}

impl PromptSchema {
    pub fn new(domain_name: impl Into<String>, slots: &[&str]) -> Result<Self> {
        let schema = Self {
            domain_name: domain_name.into(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.len() != SLOTS_PER_SCHEMA {
            return Err(Error::invalid(format!(
                "schema '{}' has {} slots, expected {SLOTS_PER_SCHEMA}",
                self.domain_name,
                self.slots.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.slots {
            if !seen.insert(slot_key(s)) {
                return Err(Error::invalid(format!("duplicate slot '{s}'")));
            }
        }
        Ok(())
    }

    pub fn baby() -> Self {
        Self::new(
            "baby",
            &[
                "Category",
                "Age Group",
                "Purpose",
                "Material",
                "Usage Context",
            ],
        )
        .unwrap()
    }

    pub fn pets() -> Self {
        Self::new(
            "pets",
            &[
                "Category",
                "Pet Type",
                "Purpose",
                "Material",
                "Usage Context",
            ],
        )
        .unwrap()
    }

    pub fn clothing() -> Self {
        Self::new(
            "clothing",
            &["Type", "Color", "Wear Location", "Material", "Style"],
        )
        .unwrap()
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "baby" => Some(Self::baby()),
            "pets" => Some(Self::pets()),
            "clothing" => Some(Self::clothing()),
            _ => None,
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: PromptSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    fn slot_position(&self, name: &str) -> Option<usize> {
        let key = slot_key(name);
        self.slots.iter().position(|s| slot_key(s) == key)
    }
}

fn slot_key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub item_id: String,
    /// One entry per schema slot, in schema order; `None` marks a missing slot.
    pub values: Vec<Option<String>>,
    pub parse_failed: bool,
}

impl AttributeRecord {
    pub fn filled(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub type SynonymMap = HashMap<String, String>;

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*([^\[\]]+?)\s*\]\s*(?:\{([^{}]*)\}?|([^\s,;\[\]{}]+))").unwrap()
    })
}

/// Extracts `[Slot] {Value}` pairs. Slot names match case-insensitively; unknown slots
/// are ignored and the first occurrence of a slot wins. Unbraced values are read as a
/// single word.
pub fn parse_structured_answer(
    item_id: &str,
    text: &str,
    schema: &PromptSchema,
    synonyms: Option<&SynonymMap>,
) -> AttributeRecord {
    let mut values: Vec<Option<String>> = vec![None; schema.slots.len()];
    for cap in answer_pattern().captures_iter(text) {
        let Some(pos) = schema.slot_position(&cap[1]) else {
            continue;
        };
        if values[pos].is_some() {
            continue;
        }
        let raw = cap
            .get(2)
            .or_else(|| cap.get(3))
            .map(|m| m.as_str())
            .unwrap_or("");
        let norm = normalize_keyword(raw, synonyms);
        if !norm.is_empty() {
            values[pos] = Some(norm);
        }
    }
    let parse_failed = values.iter().all(|v| v.is_none());
    AttributeRecord {
        item_id: item_id.to_string(),
        values,
        parse_failed,
    }
}

/// Lowercases, trims, collapses whitespace, strips surrounding punctuation, applies the
/// plural suffix rules to the final word, then the optional synonym map.
pub fn normalize_keyword(raw: &str, synonyms: Option<&SynonymMap>) -> String {
    let base = normalize_surface(raw);
    match synonyms.and_then(|m| m.get(&base)) {
        Some(canonical) => canonical.clone(),
        None => base,
    }
}

fn normalize_surface(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed
        .trim_matches(|c: char| !c.is_alphanumeric())
        .trim();
    let mut words: Vec<String> = stripped.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    words.join(" ")
}

fn singularize(word: &str) -> String {
    let n = word.chars().count();
    if n > 3 && word.ends_with("ies") {
        format!("{}y", &word[..word.len() - 3])
    } else if word.ends_with("ses") {
        word[..word.len() - 2].to_string()
    } else if n > 3 && word.ends_with('s') && !word.ends_with("ss") {
        word[..word.len() - 1].to_string()
    } else {
        word.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotVocabulary {
    pub slot: String,
    /// Descending frequency, ties broken lexicographically.
    pub retained: Vec<String>,
    pub frequencies: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordVocabulary {
    pub domain_name: String,
    pub top_k: usize,
    pub slots: Vec<SlotVocabulary>,
}

impl KeywordVocabulary {
    /// `Σ_slots (|retained| + 1)`.
    pub fn n_features(&self) -> usize {
        self.slots.iter().map(|s| s.retained.len() + 1).sum()
    }

    /// `slot=keyword` names, each slot's retained keywords followed by `slot=other`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_features());
        for s in &self.slots {
            for k in &s.retained {
                names.push(format!("{}={}", s.slot, k));
            }
            names.push(format!("{}={}", s.slot, OTHER_TOKEN));
        }
        names
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.slots
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.retained.len() + 1;
                o
            })
            .collect()
    }

    /// Distinct normalized keywords seen across all slots.
    pub fn unique_keywords(&self) -> usize {
        self.slots.iter().map(|s| s.frequencies.len()).sum()
    }
}

pub fn build_vocabulary(
    records: &[AttributeRecord],
    schema: &PromptSchema,
    top_k: usize,
) -> Result<KeywordVocabulary> {
    if records.is_empty() {
        return Err(Error::invalid("vocabulary needs at least one record"));
    }
    let mut slots = Vec::with_capacity(schema.slots.len());
    for (pos, slot) in schema.slots.iter().enumerate() {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for r in records {
            if let Some(Some(v)) = r.values.get(pos) {
                *freq.entry(v.clone()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&String, &usize)> = freq.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let retained = ranked
            .into_iter()
            .take(top_k)
            .map(|(k, _)| k.clone())
            .collect();
        slots.push(SlotVocabulary {
            slot: slot.clone(),
            retained,
            frequencies: freq,
        });
    }
    let vocab = KeywordVocabulary {
        domain_name: schema.domain_name.clone(),
        top_k,
        slots,
    };
    if vocab.n_features() < schema.slots.len() * (top_k + 1) {
        log::info!(
            "vocabulary for '{}' has {} features (fewer than {} per slot retained)",
            vocab.domain_name,
            vocab.n_features(),
            top_k
        );
    }
    Ok(vocab)
}

/// Active feature positions for one record: exactly one per slot.
pub fn encode_active(record: &AttributeRecord, vocab: &KeywordVocabulary) -> Vec<usize> {
    let offsets = vocab.offsets();
    vocab
        .slots
        .iter()
        .enumerate()
        .map(|(pos, s)| {
            let hit = record
                .values
                .get(pos)
                .and_then(|v| v.as_ref())
                .and_then(|v| s.retained.iter().position(|k| k == v));
            offsets[pos] + hit.unwrap_or(s.retained.len())
        })
        .collect()
}

pub fn encode_one_hot(record: &AttributeRecord, vocab: &KeywordVocabulary) -> Vec<u8> {
    let mut bits = vec![0u8; vocab.n_features()];
    for k in encode_active(record, vocab) {
        bits[k] = 1;
    }
    bits
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodingReport {
    pub n_records: usize,
    pub parse_failures: usize,
    /// Missing-slot count per slot, schema order.
    pub missing_per_slot: Vec<usize>,
    pub unique_keywords: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    pub item_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// Sorted active feature indices per item.
    pub active: Vec<Vec<usize>>,
}

impl AttributeMatrix {
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn dense_row(&self, r: usize) -> Vec<u8> {
        let mut bits = vec![0u8; self.n_features()];
        for &k in &self.active[r] {
            bits[k] = 1;
        }
        bits
    }

    pub fn row_sum(&self, r: usize) -> usize {
        self.active[r].len()
    }

    /// Header `item_id\t<feature names…>`, then `item_id\tb1,...,bN` per item.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "item_id\t{}", self.feature_names.join("\t")).map_err(io)?;
        for (r, id) in self.item_ids.iter().enumerate() {
            let bits: Vec<&str> = self
                .dense_row(r)
                .iter()
                .map(|&b| if b == 1 { "1" } else { "0" })
                .collect();
            writeln!(w, "{id}\t{}", bits.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty attribute matrix".into()))?;
        let feature_names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        let mut item_ids = Vec::new();
        let mut active = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, bits) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("line {}: expected item_id<TAB>bits", n + 2))
            })?;
            let row: Vec<usize> = bits
                .split(',')
                .enumerate()
                .filter(|(_, b)| b.trim() == "1")
                .map(|(k, _)| k)
                .collect();
            if bits.split(',').count() != feature_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: feature_names.len(),
                    got: bits.split(',').count(),
                });
            }
            item_ids.push(id.to_string());
            active.push(row);
        }
        Ok(Self {
            item_ids,
            feature_names,
            active,
        })
    }

    /// Rows reordered to follow `item_order`; unknown items get every slot's `other` bit.
    pub fn aligned_to(&self, item_order: &[String]) -> Self {
        let lookup: HashMap<&str, usize> = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.as_str(), r))
            .collect();
        let other_bits: Vec<usize> = self
            .feature_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.ends_with(&format!("={OTHER_TOKEN}")))
            .map(|(k, _)| k)
            .collect();
        let active = item_order
            .iter()
            .map(|id| match lookup.get(id.as_str()) {
                Some(&r) => self.active[r].clone(),
                None => other_bits.clone(),
            })
            .collect();
        Self {
            item_ids: item_order.to_vec(),
            feature_names: self.feature_names.clone(),
            active,
        }
    }
}

/// Parses every answer, builds the vocabulary and encodes the matrix.
pub fn encode_answers(
    answers: &[(String, String)],
    schema: &PromptSchema,
    synonyms: Option<&SynonymMap>,
    top_k: usize,
) -> Result<(AttributeMatrix, KeywordVocabulary, EncodingReport)> {
    let records: Vec<AttributeRecord> = answers
        .iter()
        .map(|(id, text)| parse_structured_answer(id, text, schema, synonyms))
        .collect();
    let vocab = build_vocabulary(&records, schema, top_k)?;
    let mut missing_per_slot = vec![0usize; schema.slots.len()];
    for r in &records {
        for (pos, v) in r.values.iter().enumerate() {
            if v.is_none() {
                missing_per_slot[pos] += 1;
            }
        }
    }
    let report = EncodingReport {
        n_records: records.len(),
        parse_failures: records.iter().filter(|r| r.parse_failed).count(),
        missing_per_slot,
        unique_keywords: vocab.unique_keywords(),
        n_features: vocab.n_features(),
    };
    let matrix = AttributeMatrix {
        item_ids: records.iter().map(|r| r.item_id.clone()).collect(),
        feature_names: vocab.feature_names(),
        active: records.iter().map(|r| encode_active(r, &vocab)).collect(),
    };
    Ok((matrix, vocab, report))
}

/// Reads `item_id\traw_answer_text` lines.
pub fn load_answers(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_two_column(&text, path)
}

/// Reads `variant\tcanonical` lines; both sides are surface-normalized.
pub fn load_synonyms(path: impl AsRef<Path>) -> Result<SynonymMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_two_column(&text, path)?
        .into_iter()
        .map(|(v, c)| (normalize_surface(&v), normalize_surface(&c)))
        .collect())
}

fn parse_two_column(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            reason: "expected two tab-separated columns".into(),
        })?;
        out.push((a.trim().to_string(), b.to_string()));
    }
    Ok(out)
}
