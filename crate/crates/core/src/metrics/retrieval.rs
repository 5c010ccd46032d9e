use serde::Serialize;

use crate::caclap::CaClap;
use crate::corpus::{ContextMode, Corpus, Split};
use crate::error::{Error, Result};
use crate::index::{cosine_score, PoolIndexes, PoolScope};

/// Retrieval quality over a set of single-relevant-item queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub sim: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub map_at_10: f64,
}

/// Outcome of one query: the 1-based rank of its paired audio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalItem {
    pub key: String,
    pub rank: usize,
    pub sim: f64,
}

pub fn recall_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Mean of `1/rank` over queries, counting ranks beyond `k` as zero.
pub fn map_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks
        .iter()
        .map(|&r| if r <= k { 1.0 / r as f64 } else { 0.0 })
        .sum::<f64>()
        / ranks.len() as f64
}

/// Aggregates per-query ranks (1-based) and paired similarities.
pub fn summarize(items: &[RetrievalItem]) -> Result<RetrievalReport> {
    if items.is_empty() {
        return Err(Error::Data("no retrieval queries".into()));
    }
    if let Some(bad) = items.iter().find(|i| i.rank == 0) {
        return Err(Error::Data(format!("{} has rank 0", bad.key)));
    }
    let ranks: Vec<usize> = items.iter().map(|i| i.rank).collect();
    Ok(RetrievalReport {
        queries: items.len(),
        sim: items.iter().map(|i| i.sim).sum::<f64>() / items.len() as f64,
        r_at_1: recall_at(&ranks, 1),
        r_at_5: recall_at(&ranks, 5),
        r_at_10: recall_at(&ranks, 10),
        map_at_10: map_at(&ranks, 10),
    })
}

/// Text-to-audio retrieval of each test item against the pool plus its own
/// paired audio.
///
/// The query is the item's text embedding under `context_len` and `mode`.
/// Candidates are scored exactly like index entries; a candidate outranks the
/// paired audio if its score is higher, or equal with a smaller key.
pub fn retrieval_eval(
    model: &CaClap,
    corpus: &Corpus,
    split: &Split,
    context_len: usize,
    mode: ContextMode,
    scope: PoolScope,
) -> Result<(RetrievalReport, Vec<RetrievalItem>)> {
    if split.test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let indexes = PoolIndexes::build(corpus, &split.pool, model, scope)?;
    let utts = corpus.utterances();
    let mut items = Vec::with_capacity(split.test.len());
    for &t in &split.test {
        let u = utts
            .get(t)
            .ok_or_else(|| Error::Data(format!("test index {t} outside the corpus")))?;
        let key = u.key();
        let index = indexes.for_book(&u.book_id)?;
        if index.contains(&key) {
            return Err(Error::Leakage(key));
        }
        let context = corpus.context_tokens(t, context_len, mode)?;
        let query = model.encode_text(&u.tokens, &context)?;
        let paired = model.encode_audio(&u.audio)?;
        let stored: Vec<f32> = paired.as_slice().iter().map(|&x| x as f32).collect();
        let own = cosine_score(query.as_slice(), &stored);
        let ahead = index
            .entries()
            .iter()
            .filter(|e| {
                let s = cosine_score(query.as_slice(), &e.vector);
                s > own || (s == own && e.key < key)
            })
            .count();
        items.push(RetrievalItem {
            key,
            rank: ahead + 1,
            sim: query.cosine(&paired),
        });
    }
    Ok((summarize(&items)?, items))
}
