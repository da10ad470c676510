//! Lexical embedding, per-source flat indexes, usefulness-weighted source
//! sampling and reliability-fused reranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Document, Query, SourceId, SourceSpec};
use crate::{Error, Result};

pub const EMBEDDING_DIM: usize = 256;

/// Floor applied to usefulness weights before sampling.
pub const USEFULNESS_FLOOR: f64 = 1e-6;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// L2-normalized hashed feature vector; the zero vector stands for empty text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn from_values(values: Vec<f32>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Character trigram feature hashing with hash-derived signs.
#[derive(Debug, Clone, Copy)]
pub struct Embedder {
    pub dim: usize,
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder { dim: EMBEDDING_DIM }
    }
}

impl Embedder {
    pub fn embed(&self, text: &str) -> Embedding {
        let normalized: Vec<char> = text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
            .chars()
            .collect();
        let mut acc = vec![0f64; self.dim];
        if normalized.is_empty() {
            return Embedding(vec![0.0; self.dim]);
        }
        let mut add = |gram: &[char]| {
            let s: String = gram.iter().collect();
            let h = fnv1a(s.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        };
        if normalized.len() < 3 {
            add(&normalized);
        } else {
            normalized.windows(3).for_each(&mut add);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding(vec![0.0; self.dim]);
        }
        Embedding(acc.into_iter().map(|v| (v / norm) as f32).collect())
    }
}

pub fn embed(text: &str) -> Embedding {
    Embedder::default().embed(text)
}

/// Exact flat cosine index over one source's documents.
#[derive(Debug, Clone)]
pub struct SourceIndex {
    source_id: SourceId,
    docs: Vec<Arc<Document>>,
    vectors: Vec<Embedding>,
    embedder: Embedder,
}

pub fn build_index(source: &SourceSpec) -> SourceIndex {
    SourceIndex::build(
        source.source_id,
        source.documents.iter().cloned().map(Arc::new).collect(),
        Embedder::default(),
    )
}

impl SourceIndex {
    pub fn build(source_id: SourceId, docs: Vec<Arc<Document>>, embedder: Embedder) -> Self {
        let vectors = docs.iter().map(|d| embedder.embed(&d.text)).collect();
        SourceIndex {
            source_id,
            docs,
            vectors,
            embedder,
        }
    }

    pub fn source_id(&self) -> SourceId {
        self.source_id
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Arc<Document>] {
        &self.docs
    }

    pub fn embedder(&self) -> Embedder {
        self.embedder
    }

    /// Top-`k` (document position, cosine) pairs, ties broken by ascending doc_id.
    pub fn search(&self, query: &Embedding, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, query.cosine(v)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.docs[a.0].doc_id.cmp(&self.docs[b.0].doc_id))
        });
        scored.truncate(k);
        scored
    }

    /// Serializes vectors as little-endian f32 rows plus a newline-separated doc_id sidecar.
    pub fn to_files(&self) -> (Vec<u8>, String) {
        let mut bin = Vec::with_capacity(self.vectors.len() * self.embedder.dim * 4);
        for v in &self.vectors {
            for x in v.values() {
                bin.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut ids = String::new();
        for d in &self.docs {
            ids.push_str(&d.doc_id);
            ids.push('\n');
        }
        (bin, ids)
    }

    /// Rebuilds an index from persisted vectors and the documents they describe.
    pub fn from_files(source_id: SourceId, bin: &[u8], ids: &str, docs: &[Arc<Document>]) -> Result<Self> {
        let (dim, ids, vectors) = decode_index_files(bin, ids)?;
        let by_id: BTreeMap<&str, &Arc<Document>> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let ordered = ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|d| Arc::clone(d))
                    .ok_or_else(|| Error::NotFound(format!("document {id} for persisted index")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SourceIndex {
            source_id,
            docs: ordered,
            vectors,
            embedder: Embedder { dim },
        })
    }
}

/// Decodes the persisted flat index: (dimension, doc ids, vectors).
pub fn decode_index_files(bin: &[u8], ids: &str) -> Result<(usize, Vec<String>, Vec<Embedding>)> {
    let ids: Vec<String> = ids.lines().map(str::to_string).collect();
    if ids.iter().any(String::is_empty) {
        return Err(Error::validation("empty doc_id in index sidecar"));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::validation("duplicate doc_id in index sidecar"));
    }
    if ids.is_empty() {
        return if bin.is_empty() {
            Ok((EMBEDDING_DIM, ids, Vec::new()))
        } else {
            Err(Error::validation("vector data without doc ids"))
        };
    }
    if !bin.len().is_multiple_of(4) || !(bin.len() / 4).is_multiple_of(ids.len()) || bin.is_empty() {
        return Err(Error::validation(format!(
            "{} bytes of vector data do not split into {} rows of f32",
            bin.len(),
            ids.len()
        )));
    }
    let dim = bin.len() / 4 / ids.len();
    let floats: Vec<f32> = bin
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if floats.iter().any(|f| !f.is_finite()) {
        return Err(Error::validation("non-finite value in index vectors"));
    }
    let vectors = floats.chunks_exact(dim).map(|c| Embedding(c.to_vec())).collect();
    Ok((dim, ids, vectors))
}

/// A retrieved document with its retrieval and fused scores.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub doc: Arc<Document>,
    pub source_id: SourceId,
    /// Relevance mapped into [0, 1].
    pub score_rerank: f64,
    /// Set only by [`rerank_fuse`].
    pub score_final: Option<f64>,
}

/// Weighted sampling of `n` distinct sources without replacement, weight `max(U_i, 1e-6)`.
///
/// Returned ids are sorted ascending.
pub fn sample_sources<R: Rng + ?Sized>(
    usefulness: &BTreeMap<SourceId, f64>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SourceId>> {
    if n == 0 {
        return Err(Error::validation("must sample at least one source"));
    }
    if n > usefulness.len() {
        return Err(Error::validation(format!(
            "cannot sample {n} sources from {} registered",
            usefulness.len()
        )));
    }
    let items: Vec<(SourceId, f64)> = usefulness
        .iter()
        .map(|(&id, &u)| {
            (
                id,
                if u.is_nan() {
                    USEFULNESS_FLOOR
                } else {
                    u.max(USEFULNESS_FLOOR)
                },
            )
        })
        .collect();
    let mut picked: Vec<SourceId> = items
        .choose_multiple_weighted(rng, n, |item| item.1)
        .map_err(|e| Error::validation(format!("source sampling failed: {e}")))?
        .map(|item| item.0)
        .collect();
    picked.sort();
    Ok(picked)
}

/// Top-`m` documents of one source with `score_rerank = (cosine + 1) / 2`.
pub fn retrieve(index: &SourceIndex, query: &Query, m: usize) -> Result<Vec<Candidate>> {
    if m == 0 {
        return Err(Error::validation("per-source fetch must be at least 1"));
    }
    let q = index.embedder.embed(&query.text);
    Ok(index
        .search(&q, m)
        .into_iter()
        .map(|(i, cos)| Candidate {
            doc: Arc::clone(&index.docs[i]),
            source_id: index.source_id,
            score_rerank: ((cos + 1.0) / 2.0).clamp(0.0, 1.0),
            score_final: None,
        })
        .collect())
}

/// Min-max normalized reliability per source present in the pool; 0.5 when all equal.
pub fn normalized_reliability(
    pool: &[Candidate],
    reliability: &BTreeMap<SourceId, f64>,
) -> Result<BTreeMap<SourceId, f64>> {
    let present: BTreeSet<SourceId> = pool.iter().map(|c| c.source_id).collect();
    let mut values = BTreeMap::new();
    for id in present {
        let r = *reliability
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("reliability for source {id}")))?;
        if !r.is_finite() {
            return Err(Error::validation(format!("non-finite reliability for source {id}")));
        }
        values.insert(id, r);
    }
    let min = values.values().copied().fold(f64::INFINITY, f64::min);
    let max = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    Ok(values
        .into_iter()
        .map(|(id, r)| {
            let sigma = if range > 0.0 { (r - min) / range } else { 0.5 };
            (id, sigma)
        })
        .collect())
}

/// Fuses relevance with source reliability and keeps the best `k`.
///
/// `score_final = (1 - alpha) * score_rerank + alpha * sigma(R_i)`. Selection
/// ranks by fused score, then relevance, then doc_id, then source. The
/// survivors are returned in ascending fused order so the strongest document
/// sits last in the prompt context.
pub fn rerank_fuse(
    pool: Vec<Candidate>,
    reliability: &BTreeMap<SourceId, f64>,
    alpha: f64,
    k: usize,
) -> Result<Vec<Candidate>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation(format!("alpha {alpha} is outside [0, 1]")));
    }
    if pool.is_empty() {
        return Ok(pool);
    }
    let sigma = normalized_reliability(&pool, reliability)?;
    let mut fused: Vec<Candidate> = pool
        .into_iter()
        .map(|mut c| {
            c.score_final = Some((1.0 - alpha) * c.score_rerank + alpha * sigma[&c.source_id]);
            c
        })
        .collect();
    fused.sort_by(|a, b| {
        let (fa, fb) = (a.score_final.unwrap(), b.score_final.unwrap());
        fb.partial_cmp(&fa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.score_rerank.partial_cmp(&a.score_rerank).unwrap_or(Ordering::Equal))
            .then_with(|| a.doc.doc_id.cmp(&b.doc.doc_id))
            .then_with(|| a.source_id.cmp(&b.source_id))
    });
    fused.truncate(k);
    fused.reverse();
    Ok(fused)
}
