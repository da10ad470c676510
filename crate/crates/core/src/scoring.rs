//! Sentence importance, document aggregation, grounding and score deltas.
//!
//! Two importance methods are supported. `MC_SHAPLEY` attributes the utility
//! of the answer produced from the whole document to its sentences with
//! Shapley values; `INFO` rates each sentence independently with a pluggable
//! informativeness estimator.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::answer::Answerer;
use crate::corpus::{Document, Query, SourceId};
use crate::retrieval::{Embedder, Embedding};
use crate::rng::RngKey;
use crate::text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImportanceMethod {
    #[serde(rename = "MC_SHAPLEY")]
    McShapley,
    #[serde(rename = "INFO")]
    Info,
}

impl fmt::Display for ImportanceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImportanceMethod::McShapley => "MC_SHAPLEY",
            ImportanceMethod::Info => "INFO",
        })
    }
}

impl FromStr for ImportanceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "MC_SHAPLEY" | "SHAPLEY" => Ok(ImportanceMethod::McShapley),
            "INFO" => Ok(ImportanceMethod::Info),
            _ => Err(Error::validation(format!("unknown importance method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentImportance {
    pub doc_id: String,
    pub source_id: SourceId,
    pub per_sentence: Vec<f64>,
    pub f_d: f64,
    pub grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub query_id: String,
    pub method: ImportanceMethod,
    pub per_document: Vec<DocumentImportance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDelta {
    pub source_id: SourceId,
    pub delta_r: f64,
    pub delta_u: f64,
}

/// Shapley sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapleyParams {
    /// Monte-Carlo samples per sentence.
    pub samples: usize,
    /// Enumerate exactly when a sentence has at most this many coalitions.
    pub exhaustive_limit: usize,
}

impl Default for ShapleyParams {
    fn default() -> Self {
        ShapleyParams {
            samples: 16,
            exhaustive_limit: 256,
        }
    }
}

/// Answer-similarity utility over sentence coalitions, memoized per coalition.
///
/// `F(s)` is the cosine between the embedded answer given the whole document
/// and the embedded answer given only the sentences in `s`, in document order.
pub struct CoalitionUtility<'a, A: Answerer + ?Sized> {
    doc: &'a Document,
    query: &'a Query,
    answerer: &'a A,
    embedder: Embedder,
    reference: Embedding,
    cache: RefCell<HashMap<Vec<bool>, f64>>,
}

impl<'a, A: Answerer + ?Sized> CoalitionUtility<'a, A> {
    pub fn new(doc: &'a Document, query: &'a Query, answerer: &'a A, embedder: Embedder) -> Result<Self> {
        let full = answerer.answer(query, &[doc.text.as_str()])?;
        Ok(CoalitionUtility {
            doc,
            query,
            answerer,
            embedder,
            reference: embedder.embed(&full),
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn num_players(&self) -> usize {
        self.doc.num_sentences()
    }

    pub fn value(&self, members: &[bool]) -> Result<f64> {
        if let Some(&v) = self.cache.borrow().get(members) {
            return Ok(v);
        }
        let parts: Vec<&str> = members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.doc.sentence(i))
            .collect();
        let answer = if parts.is_empty() {
            self.answerer.answer(self.query, &[])?
        } else {
            let joined = parts.join(" ");
            self.answerer.answer(self.query, &[joined.as_str()])?
        };
        let v = self.reference.cosine(&self.embedder.embed(&answer));
        self.cache.borrow_mut().insert(members.to_vec(), v);
        Ok(v)
    }

    fn marginal(&self, members: &mut [bool], player: usize) -> Result<f64> {
        members[player] = false;
        let without = self.value(members)?;
        members[player] = true;
        let with = self.value(members)?;
        members[player] = false;
        Ok(with - without)
    }
}

fn require_sentences(doc: &Document) -> Result<usize> {
    match doc.num_sentences() {
        0 => Err(Error::validation(format!("document {} has no sentences", doc.doc_id))),
        n => Ok(n),
    }
}

/// Exact Shapley values by enumerating every coalition of the other sentences.
pub fn exact_shapley<A: Answerer + ?Sized>(
    doc: &Document,
    query: &Query,
    answerer: &A,
    embedder: Embedder,
) -> Result<Vec<f64>> {
    let n = require_sentences(doc)?;
    if n > 24 {
        return Err(Error::validation(format!(
            "document {} has {n} sentences, too many to enumerate",
            doc.doc_id
        )));
    }
    let utility = CoalitionUtility::new(doc, query, answerer, embedder)?;
    // weight[k] = k! (n-k-1)! / n!
    let weights: Vec<f64> = (0..n)
        .map(|k| {
            let mut w = 1.0 / n as f64;
            for j in 1..=k {
                w *= j as f64 / (n - k - 1 + j) as f64;
            }
            w
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for player in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != player).collect();
        let mut total = 0.0;
        for mask in 0u32..(1u32 << others.len()) {
            let mut members = vec![false; n];
            for (bit, &j) in others.iter().enumerate() {
                members[j] = mask >> bit & 1 == 1;
            }
            let k = mask.count_ones() as usize;
            total += weights[k] * utility.marginal(&mut members, player)?;
        }
        out.push(total);
    }
    Ok(out)
}

/// Monte-Carlo Shapley estimate with `samples` coalitions per sentence.
///
/// A coalition is drawn by picking its size uniformly from `0..n` and then a
/// uniform subset of that size from the other sentences, which is the
/// coalition distribution induced by a uniformly random sentence ordering, so
/// the estimator is unbiased for the Shapley value. Each sentence has its own
/// stream derived from `key`, the query id, the doc id and the sentence index.
pub fn mc_shapley<A: Answerer + ?Sized>(
    doc: &Document,
    query: &Query,
    answerer: &A,
    embedder: Embedder,
    samples: usize,
    key: &RngKey,
) -> Result<Vec<f64>> {
    let n = require_sentences(doc)?;
    if samples == 0 {
        return Err(Error::validation("Shapley sample count must be at least 1"));
    }
    let utility = CoalitionUtility::new(doc, query, answerer, embedder)?;
    let mut out = Vec::with_capacity(n);
    for player in 0..n {
        let mut rng = key
            .clone()
            .with_str(&query.query_id)
            .with_str(&doc.doc_id)
            .with_u64(player as u64)
            .rng();
        let others: Vec<usize> = (0..n).filter(|&j| j != player).collect();
        let mut total = 0.0;
        for _ in 0..samples {
            let size = rng.random_range(0..n);
            let mut members = vec![false; n];
            for i in index::sample(&mut rng, others.len(), size) {
                members[others[i]] = true;
            }
            total += utility.marginal(&mut members, player)?;
        }
        out.push(total / samples as f64);
    }
    Ok(out)
}

/// Exact values when the coalition count is within the limit, otherwise sampled.
pub fn shapley_values<A: Answerer + ?Sized>(
    doc: &Document,
    query: &Query,
    answerer: &A,
    embedder: Embedder,
    params: ShapleyParams,
    key: &RngKey,
) -> Result<Vec<f64>> {
    let n = require_sentences(doc)?;
    let coalitions = 1u128 << (n - 1).min(127);
    if n <= 24 && coalitions <= params.exhaustive_limit as u128 {
        exact_shapley(doc, query, answerer, embedder)
    } else {
        mc_shapley(doc, query, answerer, embedder, params.samples, key)
    }
}

/// Scores one sentence's informativeness about the gold answer.
pub trait InformativenessEstimator {
    fn score(&self, sentence: &str, query: &Query) -> f64;
}

/// Token-overlap surrogate: `h0 * (overlap - lambda * distract)`.
///
/// `overlap` is the best fraction of any alias's tokens found in the sentence.
/// `distract` is 1 when the sentence shares at least `theta` content tokens
/// with the question but contains no gold token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalEstimator {
    pub h0: f64,
    pub lambda: f64,
    pub theta: usize,
}

impl Default for LexicalEstimator {
    fn default() -> Self {
        LexicalEstimator {
            h0: 1.0,
            lambda: 0.5,
            theta: 2,
        }
    }
}

fn alias_tokens(alias: &str) -> BTreeSet<String> {
    let all = text::tokens(alias);
    let content: BTreeSet<String> = all.iter().filter(|t| !text::is_stopword(t)).cloned().collect();
    if content.is_empty() {
        all.into_iter().collect()
    } else {
        content
    }
}

impl InformativenessEstimator for LexicalEstimator {
    fn score(&self, sentence: &str, query: &Query) -> f64 {
        let present: BTreeSet<String> = text::tokens(sentence).into_iter().collect();
        let overlap = query
            .gold_answers
            .iter()
            .map(|a| alias_tokens(a))
            .filter(|toks| !toks.is_empty())
            .map(|toks| toks.iter().filter(|t| present.contains(*t)).count() as f64 / toks.len() as f64)
            .fold(0.0, f64::max);
        let gold = text::gold_tokens(&query.gold_answers);
        let shared_query: BTreeSet<String> = text::content_tokens(&query.text)
            .into_iter()
            .filter(|t| present.contains(t))
            .collect();
        let has_gold = gold.iter().any(|t| present.contains(t));
        let distract = if shared_query.len() >= self.theta && !has_gold {
            1.0
        } else {
            0.0
        };
        self.h0 * (overlap - self.lambda * distract)
    }
}

pub fn info_score<E: InformativenessEstimator + ?Sized>(
    doc: &Document,
    query: &Query,
    estimator: &E,
) -> Result<Vec<f64>> {
    if query.gold_answers.iter().all(|a| a.trim().is_empty()) {
        return Err(Error::validation(format!(
            "query {} has no gold answers",
            query.query_id
        )));
    }
    require_sentences(doc)?;
    Ok(doc
        .sentence_texts()
        .into_iter()
        .map(|s| estimator.score(s, query))
        .collect())
}

/// Mean for Shapley scores, maximum for informativeness scores.
pub fn aggregate(scores: &[f64], method: ImportanceMethod) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("cannot aggregate an empty score list"));
    }
    Ok(match method {
        ImportanceMethod::McShapley => scores.iter().sum::<f64>() / scores.len() as f64,
        ImportanceMethod::Info => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub const DEFAULT_GROUNDING_THRESHOLD: f64 = 0.6;

/// True iff at least `tau` of the response's content tokens occur in the document.
pub fn is_grounded(response: &str, doc: &Document, tau: f64) -> bool {
    let resp = text::content_tokens(response);
    if resp.is_empty() {
        return false;
    }
    let doc_tokens: BTreeSet<String> = text::tokens(&doc.text).into_iter().collect();
    let hits = resp.iter().filter(|t| doc_tokens.contains(*t)).count();
    hits as f64 / resp.len() as f64 >= tau
}

/// Per-source reliability and usefulness deltas for one answered query.
///
/// Grounded documents move usefulness by `+f(d)` and reliability by `+f(d)`
/// when correct or `-max(f(d), 0)` when not, so a wrong answer never raises
/// reliability; ungrounded documents only lose `f(d)` usefulness. Deltas
/// from the same source add up.
pub fn compute_deltas(report: &ImportanceReport, correct: bool) -> Vec<ScoreDelta> {
    let mut acc: BTreeMap<SourceId, (f64, f64)> = BTreeMap::new();
    for d in &report.per_document {
        let e = acc.entry(d.source_id).or_insert((0.0, 0.0));
        if d.grounded {
            e.1 += d.f_d;
            e.0 += if correct { d.f_d } else { -d.f_d.max(0.0) };
        } else {
            e.1 -= d.f_d;
        }
    }
    acc.into_iter()
        .map(|(source_id, (delta_r, delta_u))| ScoreDelta {
            source_id,
            delta_r,
            delta_u,
        })
        .collect()
}

/// Histogram bins used for the score-entropy analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBins {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for EntropyBins {
    fn default() -> Self {
        // Width 0.2 with 0 and 1 at bin centers.
        EntropyBins {
            bins: 10,
            lo: -0.9,
            hi: 1.1,
        }
    }
}

impl EntropyBins {
    pub fn bin_of(&self, x: f64) -> usize {
        let t = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64).floor();
        if t.is_nan() {
            0
        } else {
            (t.max(0.0) as usize).min(self.bins - 1)
        }
    }

    /// Shannon entropy (nats) of the histogram of `scores`; values outside the
    /// range fall into the end bins.
    pub fn entropy(&self, scores: &[f64]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.bins];
        for &s in scores {
            counts[self.bin_of(s)] += 1;
        }
        let n = scores.len() as f64;
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

pub fn histogram_entropy(scores: &[f64]) -> f64 {
    EntropyBins::default().entropy(scores)
}

/// Mean per-document histogram entropy of sentence scores.
pub fn mean_entropy<'a>(rows: impl IntoIterator<Item = &'a [f64]>, bins: EntropyBins) -> f64 {
    let (sum, n) = rows
        .into_iter()
        .fold((0.0, 0usize), |(s, n), r| (s + bins.entropy(r), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
