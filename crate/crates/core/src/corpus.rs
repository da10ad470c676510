//! QA corpus loading and the simulated unreliable data environments.
//!
//! Two pollution strategies are provided. Token-level pollution gives every
//! source a full copy of the corpus and corrupts each gold-answer token
//! occurrence independently with the source's pollution probability.
//! Document-level pollution partitions the corpus into disjoint sources and
//! replaces a fixed fraction of each source's documents with fully corrupted
//! copies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{RngKey, RNG_ALGORITHM};
use crate::text::{self, Span};
use crate::{Error, Result};

/// Pollution levels of the six default sources A-F.
pub const DEFAULT_LEVELS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    pub sentences: Vec<Span>,
    pub gold_answers: Vec<String>,
    pub origin_query_ids: Vec<String>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        gold_answers: Vec<String>,
        origin_query_ids: Vec<String>,
    ) -> Self {
        let text = text.into();
        let sentences = text::split_sentences(&text);
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text,
            sentences,
            gold_answers,
            origin_query_ids,
        }
    }

    pub fn sentence(&self, i: usize) -> &str {
        self.sentences[i].slice(&self.text)
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.slice(&self.text)).collect()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    /// Checks the structural invariants; used after deserializing untrusted input.
    pub fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::validation("document with empty doc_id"));
        }
        let mut prev_end = 0usize;
        for span in &self.sentences {
            let ok = span.start <= span.end
                && span.start >= prev_end
                && span.end <= self.text.len()
                && self.text.is_char_boundary(span.start)
                && self.text.is_char_boundary(span.end);
            if !ok {
                return Err(Error::validation(format!(
                    "document {}: sentence span {}..{} is out of order or out of bounds",
                    self.doc_id, span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }

    /// True if any gold alias occurs verbatim in the text.
    pub fn is_answerable(&self) -> bool {
        self.gold_answers.iter().any(|a| text::contains_alias(&self.text, a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
}

/// Small integer source label, displayed as A, B, C, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub u32);

impl SourceId {
    pub fn label(self) -> String {
        if self.0 < 26 {
            char::from(b'A' + self.0 as u8).to_string()
        } else {
            format!("S{}", self.0)
        }
    }

    pub fn parse_label(s: &str) -> Option<SourceId> {
        let s = s.trim();
        if s.len() == 1 {
            let c = s.as_bytes()[0].to_ascii_uppercase();
            if c.is_ascii_uppercase() {
                return Some(SourceId(u32::from(c - b'A')));
            }
        }
        s.strip_prefix('S')
            .and_then(|n| n.parse().ok())
            .or_else(|| s.parse().ok())
            .map(SourceId)
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source_id: SourceId,
    pub pollution_level: f64,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub queries: Vec<Query>,
    pub documents: Vec<Document>,
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    query_id: String,
    question: String,
    answers: Vec<String>,
    doc_id: String,
    #[serde(default)]
    title: String,
    text: String,
}

pub fn load_corpus(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&raw, limit)
}

/// Parses corpus JSONL. Blank lines are skipped; `limit` caps the number of records read.
pub fn parse_corpus(input: &str, limit: Option<usize>) -> Result<Corpus> {
    let mut queries = Vec::new();
    let mut seen_queries = BTreeSet::new();
    let mut docs: Vec<Document> = Vec::new();
    let mut doc_pos: BTreeMap<String, usize> = BTreeMap::new();

    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if limit.is_some_and(|l| queries.len() >= l) {
            break;
        }
        let rec: CorpusLine = serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if rec.query_id.is_empty() || rec.doc_id.is_empty() {
            return Err(Error::parse(line_no, "empty query_id or doc_id"));
        }
        if !seen_queries.insert(rec.query_id.clone()) {
            return Err(Error::parse(line_no, format!("duplicate query_id {}", rec.query_id)));
        }
        let answers: Vec<String> = rec
            .answers
            .iter()
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();

        match doc_pos.get(&rec.doc_id) {
            Some(&p) => {
                let doc = &mut docs[p];
                if doc.text != rec.text {
                    return Err(Error::parse(
                        line_no,
                        format!("doc_id {} repeated with different text", rec.doc_id),
                    ));
                }
                for a in &answers {
                    if !doc.gold_answers.contains(a) {
                        doc.gold_answers.push(a.clone());
                    }
                }
                doc.origin_query_ids.push(rec.query_id.clone());
            }
            None => {
                doc_pos.insert(rec.doc_id.clone(), docs.len());
                docs.push(Document::new(
                    rec.doc_id.clone(),
                    rec.title,
                    rec.text,
                    answers.clone(),
                    vec![rec.query_id.clone()],
                ));
            }
        }
        queries.push((
            Query {
                query_id: rec.query_id,
                text: rec.question,
                gold_answers: answers,
            },
            rec.doc_id,
        ));
    }

    let unsupported: Vec<&str> = queries
        .iter()
        .filter(|(q, doc_id)| {
            let doc = &docs[doc_pos[doc_id]];
            q.gold_answers.is_empty() || !q.gold_answers.iter().any(|a| text::contains_alias(&doc.text, a))
        })
        .map(|(q, _)| q.query_id.as_str())
        .collect();
    if !unsupported.is_empty() {
        return Err(Error::validation(format!(
            "queries whose document contains no gold alias: {}",
            unsupported.join(", ")
        )));
    }

    Ok(Corpus {
        queries: queries.into_iter().map(|(q, _)| q).collect(),
        documents: docs,
    })
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::validation("at least one pollution level is required"));
    }
    for &l in levels {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::validation(format!("pollution level {l} is outside [0, 1]")));
        }
    }
    Ok(())
}

/// Sorted vocabulary of word tokens (original case) over a clean corpus.
pub fn vocabulary(docs: &[Document]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for d in docs {
        for span in text::word_spans(&d.text) {
            set.insert(span.slice(&d.text).to_string());
        }
    }
    set.into_iter().collect()
}

fn pick_replacement<R: Rng>(rng: &mut R, vocab: &[String], gold: &BTreeSet<String>) -> String {
    let allowed = |w: &String| !gold.contains(&w.to_lowercase());
    for _ in 0..64 {
        let w = &vocab[rng.random_range(0..vocab.len())];
        if allowed(w) {
            return w.clone();
        }
    }
    let start = rng.random_range(0..vocab.len());
    vocab[start..]
        .iter()
        .chain(&vocab[..start])
        .find(|w| allowed(w))
        .cloned()
        .unwrap_or_else(|| "x".to_string())
}

/// Replaces each gold-answer token occurrence with probability `level`.
///
/// The draw for occurrence `j` comes from `key.with_u64(j)`, so for a fixed key
/// the set of replaced occurrences only grows as `level` grows.
pub fn corrupt_document(doc: &Document, level: f64, vocab: &[String], key: &RngKey) -> Document {
    let gold = text::gold_tokens(&doc.gold_answers);
    if gold.is_empty() || vocab.is_empty() || level <= 0.0 {
        return doc.clone();
    }
    let mut out = String::with_capacity(doc.text.len());
    let mut cursor = 0;
    for (j, span) in text::word_spans(&doc.text).into_iter().enumerate() {
        let word = span.slice(&doc.text);
        if !gold.contains(&word.to_lowercase()) {
            continue;
        }
        let mut rng = key.clone().with_u64(j as u64).rng();
        let u: f64 = rng.random();
        if u < level {
            out.push_str(&doc.text[cursor..span.start]);
            out.push_str(&pick_replacement(&mut rng, vocab, &gold));
            cursor = span.end;
        }
    }
    out.push_str(&doc.text[cursor..]);
    Document::new(
        doc.doc_id.clone(),
        doc.title.clone(),
        out,
        doc.gold_answers.clone(),
        doc.origin_query_ids.clone(),
    )
}

pub fn pollute_token_level(docs: &[Document], levels: &[f64], seed: u64) -> Result<Vec<SourceSpec>> {
    check_levels(levels)?;
    let vocab = vocabulary(docs);
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let source_id = SourceId(i as u32);
            let documents = docs
                .iter()
                .map(|d| {
                    let key = RngKey::new(seed, "token-pollution")
                        .with_u64(u64::from(source_id.0))
                        .with_str(&d.doc_id);
                    corrupt_document(d, level, &vocab, &key)
                })
                .collect();
            SourceSpec {
                source_id,
                pollution_level: level,
                documents,
            }
        })
        .collect())
}

pub fn pollute_document_level(docs: &[Document], levels: &[f64], seed: u64) -> Result<Vec<SourceSpec>> {
    check_levels(levels)?;
    if docs.len() < levels.len() {
        return Err(Error::validation(format!(
            "{} documents cannot fill {} disjoint sources",
            docs.len(),
            levels.len()
        )));
    }
    let vocab = vocabulary(docs);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut RngKey::new(seed, "document-partition").rng());

    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); levels.len()];
    for (slot, &doc_idx) in order.iter().enumerate() {
        parts[slot % levels.len()].push(doc_idx);
    }

    Ok(parts
        .into_iter()
        .zip(levels)
        .enumerate()
        .map(|(i, (members, &level))| {
            let source_id = SourceId(i as u32);
            let corrupted = (level * members.len() as f64).round() as usize;
            let mut slots: Vec<usize> = (0..members.len()).collect();
            slots.shuffle(&mut RngKey::new(seed, "document-corruption").with_u64(i as u64).rng());
            let corrupt_set: BTreeSet<usize> = slots.into_iter().take(corrupted).collect();
            let mut documents: Vec<Document> = members
                .iter()
                .enumerate()
                .map(|(slot, &doc_idx)| {
                    let doc = &docs[doc_idx];
                    if corrupt_set.contains(&slot) {
                        let key = RngKey::new(seed, "document-pollution")
                            .with_u64(i as u64)
                            .with_str(&doc.doc_id);
                        corrupt_document(doc, 1.0, &vocab, &key)
                    } else {
                        doc.clone()
                    }
                })
                .collect();
            documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            SourceSpec {
                source_id,
                pollution_level: level,
                documents,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollutionStrategy {
    Token,
    Document,
}

impl std::str::FromStr for PollutionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(PollutionStrategy::Token),
            "document" => Ok(PollutionStrategy::Document),
            other => Err(Error::validation(format!(
                "unknown pollution strategy {other:?} (expected token or document)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestSource {
    pub source_id: SourceId,
    pub label: String,
    pub pollution_level: f64,
    pub file: String,
    pub documents: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub rng: String,
    pub strategy: PollutionStrategy,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub queries_file: String,
    pub clean_file: String,
    pub sources: Vec<ManifestSource>,
}

/// A generated environment: the clean corpus plus its polluted sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub strategy: PollutionStrategy,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub queries: Vec<Query>,
    pub clean: Vec<Document>,
    pub sources: Vec<SourceSpec>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Environment {
    pub fn generate(corpus: Corpus, strategy: PollutionStrategy, levels: &[f64], seed: u64) -> Result<Self> {
        let sources = match strategy {
            PollutionStrategy::Token => pollute_token_level(&corpus.documents, levels, seed)?,
            PollutionStrategy::Document => pollute_document_level(&corpus.documents, levels, seed)?,
        };
        let env = Environment {
            strategy,
            levels: levels.to_vec(),
            seed,
            queries: corpus.queries,
            clean: corpus.documents,
            sources,
        };
        env.check_coverage()?;
        Ok(env)
    }

    /// Token-level sources each cover the whole corpus; document-level sources are
    /// pairwise disjoint and together cover it.
    pub fn check_coverage(&self) -> Result<()> {
        let all: BTreeSet<&str> = self.clean.iter().map(|d| d.doc_id.as_str()).collect();
        match self.strategy {
            PollutionStrategy::Token => {
                for s in &self.sources {
                    let ids: BTreeSet<&str> = s.documents.iter().map(|d| d.doc_id.as_str()).collect();
                    if ids != all {
                        return Err(Error::validation(format!(
                            "source {} does not cover the corpus",
                            s.source_id
                        )));
                    }
                }
            }
            PollutionStrategy::Document => {
                let mut union = BTreeSet::new();
                for s in &self.sources {
                    for d in &s.documents {
                        if !union.insert(d.doc_id.as_str()) {
                            return Err(Error::validation(format!(
                                "doc_id {} appears in more than one source",
                                d.doc_id
                            )));
                        }
                    }
                }
                if union != all {
                    return Err(Error::validation("sources do not cover the corpus"));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            rng: RNG_ALGORITHM.to_string(),
            strategy: self.strategy,
            levels: self.levels.clone(),
            seed: self.seed,
            queries_file: "queries.jsonl".into(),
            clean_file: "clean.jsonl".into(),
            sources: self
                .sources
                .iter()
                .map(|s| ManifestSource {
                    source_id: s.source_id,
                    label: s.source_id.label(),
                    pollution_level: s.pollution_level,
                    file: format!("source_{}.jsonl", s.source_id.label()),
                    documents: s.documents.len(),
                })
                .collect(),
        }
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        write_jsonl(&dir.join(&manifest.queries_file), &self.queries)?;
        write_jsonl(&dir.join(&manifest.clean_file), &self.clean)?;
        for (src, entry) in self.sources.iter().zip(&manifest.sources) {
            write_jsonl(&dir.join(&entry.file), &src.documents)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = parse_manifest(&read(&dir.join(MANIFEST_FILE))?)?;
        let queries: Vec<Query> = parse_jsonl(&read(&dir.join(&manifest.queries_file))?)?;
        let clean: Vec<Document> = parse_documents(&read(&dir.join(&manifest.clean_file))?)?;
        let mut sources = Vec::new();
        for entry in &manifest.sources {
            let documents = parse_documents(&read(&dir.join(&entry.file))?)?;
            if documents.len() != entry.documents {
                return Err(Error::validation(format!(
                    "{} holds {} documents, manifest says {}",
                    entry.file,
                    documents.len(),
                    entry.documents
                )));
            }
            sources.push(SourceSpec {
                source_id: entry.source_id,
                pollution_level: entry.pollution_level,
                documents,
            });
        }
        let env = Environment {
            strategy: manifest.strategy,
            levels: manifest.levels,
            seed: manifest.seed,
            queries,
            clean,
            sources,
        };
        env.check_coverage()?;
        Ok(env)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(input: &str) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(input)?;
    if manifest.rng != RNG_ALGORITHM {
        return Err(Error::validation(format!(
            "manifest generated with rng {:?}, this build uses {:?}",
            manifest.rng, RNG_ALGORITHM
        )));
    }
    check_levels(&manifest.levels)?;
    if manifest.levels.len() != manifest.sources.len() {
        return Err(Error::validation("manifest levels and sources differ in length"));
    }
    for name in std::iter::once(&manifest.queries_file)
        .chain(std::iter::once(&manifest.clean_file))
        .chain(manifest.sources.iter().map(|s| &s.file))
    {
        if name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(Error::validation(format!("unsafe file name {name:?} in manifest")));
        }
    }
    Ok(manifest)
}

pub fn parse_jsonl<T: serde::de::DeserializeOwned>(input: &str) -> Result<Vec<T>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

/// Parses a per-source document file and checks each document's invariants.
pub fn parse_documents(input: &str) -> Result<Vec<Document>> {
    let docs: Vec<Document> = parse_jsonl(input)?;
    for d in &docs {
        d.validate()?;
    }
    Ok(docs)
}
