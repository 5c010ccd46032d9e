//! Speech-embedding database: audio-side style embeddings of candidate
//! prompts, with exact cosine top-K search.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CAEI" | u32 version | u32 dim | u64 count
//! per entry: u16 key length | UTF-8 key | dim × f32
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::caclap::{CaClap, StyleEmbedding};
use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"CAEI";
pub const INDEX_VERSION: u32 = 1;
/// Stored vectors whose norm deviates from one by more than this are
/// re-normalized on load. Single-precision rounding of a unit vector stays
/// well inside it.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub key: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub key: String,
    pub score: f64,
}

/// Entries in descending score order, ties broken by ascending key.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RankedResult(pub Vec<Ranked>);

impl RankedResult {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|r| r.key.as_str())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Ranked> {
        self.0.iter()
    }

    /// 1-based rank of `key`, if present.
    pub fn rank_of(&self, key: &str) -> Option<usize> {
        self.0.iter().position(|r| r.key == key).map(|p| p + 1)
    }
}

/// Ordering used for every ranking: higher score first, then smaller key.
pub fn ranking_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    keys: HashSet<String>,
}

fn norm32(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine between a query and a stored vector.
pub fn cosine_score(query: &[f64], stored: &[f32]) -> f64 {
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = query.iter().zip(stored).map(|(q, &s)| q * f64::from(s)).sum();
    (dot / (qn * norm32(stored))).clamp(-1.0, 1.0)
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            keys: HashSet::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, embedding: &StyleEmbedding) -> Result<()> {
        let key = key.into();
        if embedding.dim() != self.dim {
            return Err(Error::Shape(format!(
                "embedding of width {} for index of width {}",
                embedding.dim(),
                self.dim
            )));
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::Argument(format!("key {key} too long")));
        }
        if !self.keys.insert(key.clone()) {
            return Err(Error::DuplicateKey(key));
        }
        let vector = embedding.as_slice().iter().map(|&x| x as f32).collect();
        self.entries.push(IndexEntry { key, vector });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    /// Exact top-`k` by cosine. `k` larger than the index returns every
    /// entry.
    pub fn query(&self, query: &StyleEmbedding, k: usize) -> Result<RankedResult> {
        self.query_slice(query.as_slice(), k)
    }

    pub fn query_slice(&self, query: &[f64], k: usize) -> Result<RankedResult> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query of width {} for index of width {}",
                query.len(),
                self.dim
            )));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut scored: Vec<Ranked> = self
            .entries
            .iter()
            .map(|e| Ranked {
                key: e.key.clone(),
                score: cosine_score(query, &e.vector),
            })
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, ranking_order);
            scored.truncate(k);
        }
        scored.sort_by(ranking_order);
        Ok(RankedResult(scored))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (12 + 4 * self.dim));
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.key.len() as u16).to_le_bytes());
            out.extend_from_slice(e.key.as_bytes());
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= buf.len())
                .ok_or_else(|| Error::Format(format!("index truncated at byte {pos}")))?;
            let s = &buf[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != INDEX_MAGIC {
            return Err(Error::Format("bad magic, not a CAEI index".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != INDEX_VERSION {
            return Err(Error::Format(format!(
                "index version {version}, expected {INDEX_VERSION}"
            )));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        if count == 0 {
            return Err(Error::Format("index file has no entries".into()));
        }
        if dim == 0 {
            return Err(Error::Format("index dimension is zero".into()));
        }
        let mut index = Self::new(dim);
        for _ in 0..count {
            let klen = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let key = std::str::from_utf8(take(klen)?)
                .map_err(|_| Error::Format("key is not UTF-8".into()))?
                .to_string();
            let mut vector: Vec<f32> = take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite vector for {key}")));
            }
            let n = norm32(&vector);
            if !(n > 0.0) {
                return Err(Error::Format(format!("zero vector for {key}")));
            }
            if (n - 1.0).abs() > RENORMALIZE_TOLERANCE {
                vector.iter_mut().for_each(|v| *v = (f64::from(*v) / n) as f32);
            }
            if !index.keys.insert(key.clone()) {
                return Err(Error::Format(format!("duplicate key {key}")));
            }
            index.entries.push(IndexEntry { key, vector });
        }
        if pos != buf.len() {
            return Err(Error::Format("trailing bytes after the last entry".into()));
        }
        Ok(index)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Encodes every utterance's audio and indexes it under the utterance key, in
/// the given order.
pub fn build_index<'a>(pool: impl IntoIterator<Item = &'a Utterance>, model: &CaClap) -> Result<EmbeddingIndex> {
    let mut index = EmbeddingIndex::new(model.config().proj_dim);
    for u in pool {
        if u.audio.channels() != model.config().channels {
            return Err(Error::Shape(format!(
                "{} has {} channels, model expects {}",
                u.key(),
                u.audio.channels(),
                model.config().channels
            )));
        }
        index.insert(u.key(), &model.encode_audio(&u.audio)?)?;
    }
    if index.is_empty() {
        return Err(Error::Argument("cannot build an index from an empty pool".into()));
    }
    Ok(index)
}

/// Which pool utterances a query may retrieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolScope {
    /// Only utterances of the query's own book.
    #[default]
    SameBook,
    /// Every pool utterance.
    Global,
}

/// Key under which the single index of a global pool is stored.
pub const GLOBAL_POOL: &str = "all";

/// Audio indexes of a pool: one per book, or one for everything.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndexes {
    scope: PoolScope,
    indexes: BTreeMap<String, EmbeddingIndex>,
}

impl PoolIndexes {
    /// Indexes the audio of the pool utterances (corpus indices) in corpus
    /// order.
    pub fn build(corpus: &Corpus, pool: &[usize], model: &CaClap, scope: PoolScope) -> Result<Self> {
        Self::build_with(corpus, pool, scope, model.config().proj_dim, |u| {
            model.encode_audio(&u.audio)
        })
    }

    /// Indexes pool utterances under an arbitrary embedding.
    pub fn build_with<F>(corpus: &Corpus, pool: &[usize], scope: PoolScope, dim: usize, mut embed: F) -> Result<Self>
    where
        F: FnMut(&Utterance) -> Result<StyleEmbedding>,
    {
        let utts = corpus.utterances();
        let mut indexes: BTreeMap<String, EmbeddingIndex> = BTreeMap::new();
        for &i in pool {
            let u = utts.get(i).ok_or_else(|| Error::NotFound(format!("pool index {i}")))?;
            let name = match scope {
                PoolScope::SameBook => u.book_id.clone(),
                PoolScope::Global => GLOBAL_POOL.to_string(),
            };
            indexes
                .entry(name)
                .or_insert_with(|| EmbeddingIndex::new(dim))
                .insert(u.key(), &embed(u)?)?;
        }
        if indexes.is_empty() {
            return Err(Error::Argument("cannot build an index from an empty pool".into()));
        }
        Ok(Self { scope, indexes })
    }

    pub fn from_parts(scope: PoolScope, indexes: BTreeMap<String, EmbeddingIndex>) -> Self {
        Self { scope, indexes }
    }

    pub fn scope(&self) -> PoolScope {
        self.scope
    }

    /// The index a query from `book_id` searches.
    pub fn for_book(&self, book_id: &str) -> Result<&EmbeddingIndex> {
        let name = match self.scope {
            PoolScope::SameBook => book_id,
            PoolScope::Global => GLOBAL_POOL,
        };
        self.indexes
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("no pool index for {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingIndex)> {
        self.indexes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.indexes.values().any(|i| i.contains(key))
    }
}
