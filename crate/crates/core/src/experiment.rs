//! Experiment harness: environment generation, episode runs, trace files,
//! metrics and ledger audits.
//!
//! A run directory holds `trace.csv` (one row per query), `trace.json`
//! (metadata), `scores.csv` (sentence scores of every context document) and,
//! for decentralized runs, `events.jsonl` and `ledger.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::answer::{self, Answerer, HttpAnswerer, OracleAnswerer};
use crate::config::{AnswererKind, Config};
use crate::corpus::{self, Document, Environment, Manifest, PollutionStrategy, Query, SourceId};
use crate::ledger::{self, fold_events, to_fixed, Ledger, LedgerEvent};
use crate::retrieval::{Embedder, SourceIndex};
use crate::rng::{RngKey, RNG_ALGORITHM};
use crate::scoring::{self, EntropyBins, ImportanceMethod};
use crate::service::{self, Service};
use crate::{Error, Result};

pub const TRACE_FORMAT: &str = "drag-trace/1";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_META: &str = "trace.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const LEDGER_JSON: &str = "ledger.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Decentralized,
    CentralizedUnreliable,
    CentralizedReliable,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Decentralized => "decentralized",
            Mode::CentralizedUnreliable => "centralized-unreliable",
            Mode::CentralizedReliable => "centralized-reliable",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decentralized" => Ok(Mode::Decentralized),
            "centralized-unreliable" => Ok(Mode::CentralizedUnreliable),
            "centralized-reliable" => Ok(Mode::CentralizedReliable),
            _ => Err(Error::validation(format!(
                "unknown mode {s:?} (expected decentralized, centralized-unreliable or centralized-reliable)"
            ))),
        }
    }
}

pub fn cmd_generate(
    corpus_path: &Path,
    limit: Option<usize>,
    strategy: PollutionStrategy,
    levels: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    let corpus = corpus::load_corpus(corpus_path, limit)?;
    Environment::generate(corpus, strategy, levels, seed)?.write_dir(out_dir)
}

/// Query indexes for a run: a fresh seeded permutation of the query set for
/// every pass, concatenated until `count` entries exist.
pub fn query_order(num_queries: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    if num_queries == 0 {
        return out;
    }
    let mut pass = 0u64;
    while out.len() < count {
        let mut perm: Vec<usize> = (0..num_queries).collect();
        perm.shuffle(&mut RngKey::new(seed, "query-order").with_u64(pass).rng());
        out.extend(perm.into_iter().take(count - out.len()));
        pass += 1;
    }
    out
}

pub fn make_answerer(config: &Config) -> Box<dyn Answerer> {
    match config.answerer.kind {
        AnswererKind::Oracle => Box::new(OracleAnswerer),
        AnswererKind::Http => {
            let mut a = HttpAnswerer::from_env(&config.answerer.endpoint, &config.answerer.model);
            a.timeout = std::time::Duration::from_secs(config.answerer.timeout_secs);
            Box::new(a)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSource {
    pub source_id: SourceId,
    pub label: String,
    pub pollution_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub mode: Mode,
    pub rng: String,
    pub config_hash: String,
    pub config: String,
    pub queries: usize,
    pub warmup: usize,
    pub environment: Manifest,
    /// Sources whose scores appear as columns, in column order.
    pub sources: Vec<TraceSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub index: usize,
    pub query_id: String,
    pub warmup: bool,
    pub correct: bool,
    pub answer: String,
    pub sampled: Vec<SourceId>,
    /// Context documents in prompt order; the source is absent for the clean corpus.
    pub top_k: Vec<(String, Option<SourceId>)>,
    pub pool_size: usize,
    pub tx_accepted: bool,
    pub transaction_index: Option<u64>,
    pub gas: u64,
    /// (R, U) after this query, one pair per trace source.
    pub scores: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub index: usize,
    pub query_id: String,
    pub doc_id: String,
    pub source_id: SourceId,
    pub pollution_level: f64,
    pub method: ImportanceMethod,
    pub grounded: bool,
    pub f_d: f64,
    pub per_sentence: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    pub scores: Vec<ScoreRow>,
    pub ledger: Option<Ledger>,
}

impl RunOutput {
    pub fn post_warmup_accuracy(&self) -> Option<f64> {
        post_warmup_accuracy(&self.rows)
    }
}

pub fn post_warmup_accuracy(rows: &[TraceRow]) -> Option<f64> {
    let post: Vec<&TraceRow> = rows.iter().filter(|r| !r.warmup).collect();
    if post.is_empty() {
        return None;
    }
    Some(post.iter().filter(|r| r.correct).count() as f64 / post.len() as f64)
}

fn labels(ids: &[SourceId]) -> String {
    ids.iter().map(|s| s.label()).collect::<Vec<_>>().join(";")
}

/// Runs `queries` queries against the environment in the given mode.
pub fn run<A: Answerer>(
    env: &Environment,
    config: &Config,
    mode: Mode,
    queries: usize,
    warmup: usize,
    answerer: A,
) -> Result<RunOutput> {
    config.validate()?;
    if env.queries.is_empty() {
        return Err(Error::validation("environment has no queries"));
    }
    let order = query_order(env.queries.len(), queries, config.seeds.run);
    let trace_sources: Vec<TraceSource> = match mode {
        Mode::Decentralized => env
            .sources
            .iter()
            .map(|s| TraceSource {
                source_id: s.source_id,
                label: s.source_id.label(),
                pollution_level: s.pollution_level,
            })
            .collect(),
        _ => Vec::new(),
    };
    let meta = TraceMeta {
        format: TRACE_FORMAT.to_string(),
        mode,
        rng: RNG_ALGORITHM.to_string(),
        config_hash: config.hash(),
        config: config.to_toml(),
        queries,
        warmup,
        environment: env.manifest(),
        sources: trace_sources,
    };
    match mode {
        Mode::Decentralized => run_decentralized(env, config, &order, warmup, answerer, meta),
        Mode::CentralizedUnreliable | Mode::CentralizedReliable => {
            run_centralized(env, config, mode, &order, warmup, answerer, meta)
        }
    }
}

fn run_decentralized<A: Answerer>(
    env: &Environment,
    config: &Config,
    order: &[usize],
    warmup: usize,
    answerer: A,
    meta: TraceMeta,
) -> Result<RunOutput> {
    let levels: BTreeMap<SourceId, f64> = env.sources.iter().map(|s| (s.source_id, s.pollution_level)).collect();
    let sources = service::simulated_sources(&env.sources, config);
    let mut ledger = Ledger::new(config.ledger_config());
    service::register_sources(&mut ledger, &sources, config)?;
    let mut svc = Service::new(config.clone(), sources, answerer);
    let mut rows = Vec::with_capacity(order.len());
    let mut scores = Vec::new();
    for (index, &qi) in order.iter().enumerate() {
        let query = &env.queries[qi];
        let out = svc.handle_query(&mut ledger, query)?;
        let transaction_index = if out.tx_accepted {
            ledger.events().last().map(|e| e.transaction_index())
        } else {
            None
        };
        for d in &out.report.per_document {
            scores.push(ScoreRow {
                index,
                query_id: query.query_id.clone(),
                doc_id: d.doc_id.clone(),
                source_id: d.source_id,
                pollution_level: levels[&d.source_id],
                method: out.report.method,
                grounded: d.grounded,
                f_d: d.f_d,
                per_sentence: d.per_sentence.clone(),
            });
        }
        rows.push(TraceRow {
            index,
            query_id: query.query_id.clone(),
            warmup: index < warmup,
            correct: out.correct.unwrap_or(false),
            answer: out.answer,
            sampled: out.sampled_sources,
            top_k: out
                .top_k
                .iter()
                .map(|t| (t.doc_id.clone(), Some(t.source_id)))
                .collect(),
            pool_size: out.pool_size,
            tx_accepted: out.tx_accepted,
            transaction_index,
            gas: out.gas,
            scores: meta
                .sources
                .iter()
                .map(|s| {
                    let r = ledger.record(s.source_id).expect("registered above");
                    (r.r(), r.u())
                })
                .collect(),
        });
    }
    Ok(RunOutput {
        meta,
        rows,
        scores,
        ledger: Some(ledger),
    })
}

fn run_centralized<A: Answerer>(
    env: &Environment,
    config: &Config,
    mode: Mode,
    order: &[usize],
    warmup: usize,
    answerer: A,
    meta: TraceMeta,
) -> Result<RunOutput> {
    let embedder = Embedder {
        dim: config.retrieval.dim,
    };
    let (docs, origin): (Vec<Arc<Document>>, Vec<Option<SourceId>>) = match mode {
        Mode::CentralizedReliable => env.clean.iter().map(|d| (Arc::new(d.clone()), None)).unzip(),
        _ => env
            .sources
            .iter()
            .flat_map(|s| {
                s.documents
                    .iter()
                    .map(move |d| (Arc::new(d.clone()), Some(s.source_id)))
            })
            .unzip(),
    };
    let index = SourceIndex::build(SourceId(0), docs, embedder);
    let mut rows = Vec::with_capacity(order.len());
    for (i, &qi) in order.iter().enumerate() {
        let query = &env.queries[qi];
        // Most relevant document last, as in the decentralized prompt.
        let hits: Vec<usize> = index
            .search(&embedder.embed(&query.text), config.retrieval.k)
            .into_iter()
            .rev()
            .map(|(pos, _)| pos)
            .collect();
        let texts: Vec<&str> = hits.iter().map(|&p| index.documents()[p].text.as_str()).collect();
        let answer = answerer.answer(query, &texts)?;
        rows.push(TraceRow {
            index: i,
            query_id: query.query_id.clone(),
            warmup: i < warmup,
            correct: answer::is_correct(&answer, &query.gold_answers),
            answer,
            sampled: Vec::new(),
            top_k: hits
                .iter()
                .map(|&p| (index.documents()[p].doc_id.clone(), origin[p]))
                .collect(),
            pool_size: index.len(),
            tx_accepted: false,
            transaction_index: None,
            gas: 0,
            scores: Vec::new(),
        });
    }
    Ok(RunOutput {
        meta,
        rows,
        scores: Vec::new(),
        ledger: None,
    })
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn format_top_k(top: &[(String, Option<SourceId>)]) -> String {
    top.iter()
        .map(|(d, s)| match s {
            Some(s) => format!("{d}@{}", s.label()),
            None => d.clone(),
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn trace_header(sources: &[TraceSource]) -> Vec<String> {
    let mut h: Vec<String> = [
        "index",
        "query_id",
        "warmup",
        "correct",
        "answer",
        "sampled",
        "top_k",
        "pool_size",
        "tx_accepted",
        "transaction_index",
        "gas",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for s in sources {
        h.push(format!("R_{}", s.label));
        h.push(format!("U_{}", s.label));
    }
    h
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::validation(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::validation(format!("csv encoding failed: {e}")))
}

pub fn trace_csv(meta: &TraceMeta, rows: &[TraceRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &trace_header(&meta.sources),
        rows.iter().map(|r| {
            let mut v = vec![
                r.index.to_string(),
                r.query_id.clone(),
                u8::from(r.warmup).to_string(),
                u8::from(r.correct).to_string(),
                r.answer.clone(),
                labels(&r.sampled),
                format_top_k(&r.top_k),
                r.pool_size.to_string(),
                u8::from(r.tx_accepted).to_string(),
                r.transaction_index.map_or(String::new(), |t| t.to_string()),
                r.gas.to_string(),
            ];
            for &(rr, uu) in &r.scores {
                v.push(fmt6(rr));
                v.push(fmt6(uu));
            }
            v
        }),
    )
}

pub fn scores_csv(rows: &[ScoreRow]) -> Result<Vec<u8>> {
    let header: Vec<String> = [
        "index",
        "query_id",
        "doc_id",
        "source",
        "pollution_level",
        "method",
        "grounded",
        "f_d",
        "sentence_scores",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.index.to_string(),
                r.query_id.clone(),
                r.doc_id.clone(),
                r.source_id.label(),
                fmt6(r.pollution_level),
                r.method.to_string(),
                u8::from(r.grounded).to_string(),
                fmt6(r.f_d),
                r.per_sentence.iter().map(|&x| fmt6(x)).collect::<Vec<_>>().join(";"),
            ]
        }),
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(TRACE_CSV), &trace_csv(&out.meta, &out.rows)?)?;
    let mut meta = serde_json::to_vec_pretty(&out.meta)?;
    meta.push(b'\n');
    write_file(&dir.join(TRACE_META), &meta)?;
    write_file(&dir.join(SCORES_CSV), &scores_csv(&out.scores)?)?;
    if let Some(ledger) = &out.ledger {
        let mut buf = Vec::new();
        ledger::write_events_jsonl(ledger.events(), &mut buf).map_err(|e| Error::io(dir.join(EVENTS_JSONL), e))?;
        write_file(&dir.join(EVENTS_JSONL), &buf)?;
        ledger.save(dir.join(LEDGER_JSON))?;
    }
    Ok(())
}

/// Loads the environment, runs, and writes the run directory.
pub fn cmd_run(
    env_dir: &Path,
    config: &Config,
    mode: Mode,
    queries: usize,
    warmup: usize,
    out_dir: &Path,
) -> Result<RunOutput> {
    let env = Environment::read_dir(env_dir)?;
    let out = run(&env, config, mode, queries, warmup, make_answerer(config))?;
    write_run(&out, out_dir)?;
    Ok(out)
}

pub fn parse_trace_meta(input: &str) -> Result<TraceMeta> {
    let meta: TraceMeta = serde_json::from_str(input)?;
    if meta.format != TRACE_FORMAT {
        return Err(Error::validation(format!(
            "trace format {:?}, expected {TRACE_FORMAT:?}",
            meta.format
        )));
    }
    Ok(meta)
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: usize, name: &str) -> Result<T> {
    rec.get(i)
        .ok_or_else(|| Error::parse(line, format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("bad value {:?} in column {name}", &rec[i])))
}

fn flag(rec: &csv::StringRecord, i: usize, line: usize, name: &str) -> Result<bool> {
    match rec.get(i) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        _ => Err(Error::parse(line, format!("column {name} must be 0 or 1"))),
    }
}

fn parse_labels(s: &str, line: usize) -> Result<Vec<SourceId>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|l| SourceId::parse_label(l).ok_or_else(|| Error::parse(line, format!("bad source label {l:?}"))))
        .collect()
}

fn parse_top_k(s: &str, line: usize) -> Result<Vec<(String, Option<SourceId>)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|item| match item.rsplit_once('@') {
            Some((d, l)) => SourceId::parse_label(l)
                .map(|sid| (d.to_string(), Some(sid)))
                .ok_or_else(|| Error::parse(line, format!("bad source label {l:?}"))),
            None => Ok((item.to_string(), None)),
        })
        .collect()
}

fn reader(input: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input.as_bytes())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

/// Parses `trace.csv`; the header must match the metadata and the row count
/// must equal the recorded query count.
pub fn parse_trace_csv(input: &str, meta: &TraceMeta) -> Result<Vec<TraceRow>> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected = trace_header(&meta.sources);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(1, "trace header does not match its metadata"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let index: usize = field(&rec, 0, line, "index")?;
        if index != rows.len() {
            return Err(Error::parse(
                line,
                format!("expected index {}, found {index}", rows.len()),
            ));
        }
        let tx = match rec.get(9) {
            Some("") => None,
            _ => Some(field(&rec, 9, line, "transaction_index")?),
        };
        let mut scores = Vec::with_capacity(meta.sources.len());
        for j in 0..meta.sources.len() {
            let r: f64 = field(&rec, 11 + 2 * j, line, "R")?;
            let u: f64 = field(&rec, 12 + 2 * j, line, "U")?;
            scores.push((r, u));
        }
        rows.push(TraceRow {
            index,
            query_id: rec[1].to_string(),
            warmup: flag(&rec, 2, line, "warmup")?,
            correct: flag(&rec, 3, line, "correct")?,
            answer: rec[4].to_string(),
            sampled: parse_labels(&rec[5], line)?,
            top_k: parse_top_k(&rec[6], line)?,
            pool_size: field(&rec, 7, line, "pool_size")?,
            tx_accepted: flag(&rec, 8, line, "tx_accepted")?,
            transaction_index: tx,
            gas: field(&rec, 10, line, "gas")?,
            scores,
        });
    }
    if rows.len() != meta.queries {
        return Err(Error::parse(
            rows.len() + 2,
            format!("trace truncated: {} of {} rows", rows.len(), meta.queries),
        ));
    }
    Ok(rows)
}

pub fn parse_scores_csv(input: &str) -> Result<Vec<ScoreRow>> {
    let mut rdr = reader(input);
    rdr.headers().map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 9 {
            return Err(Error::parse(line, "expected 9 columns"));
        }
        let per_sentence = if rec[8].is_empty() {
            Vec::new()
        } else {
            rec[8]
                .split(';')
                .map(|x| x.parse().map_err(|_| Error::parse(line, format!("bad score {x:?}"))))
                .collect::<Result<Vec<f64>>>()?
        };
        out.push(ScoreRow {
            index: field(&rec, 0, line, "index")?,
            query_id: rec[1].to_string(),
            doc_id: rec[2].to_string(),
            source_id: SourceId::parse_label(&rec[3]).ok_or_else(|| Error::parse(line, "bad source label"))?,
            pollution_level: field(&rec, 4, line, "pollution_level")?,
            method: rec[5].parse().map_err(|_| Error::parse(line, "bad method"))?,
            grounded: flag(&rec, 6, line, "grounded")?,
            f_d: field(&rec, 7, line, "f_d")?,
            per_sentence,
        });
    }
    Ok(out)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub meta: TraceMeta,
    pub config: Config,
    pub rows: Vec<TraceRow>,
    pub scores: Vec<ScoreRow>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let meta = parse_trace_meta(&read_file(&dir.join(TRACE_META))?)?;
    let config = Config::parse(&meta.config)?;
    let rows = parse_trace_csv(&read_file(&dir.join(TRACE_CSV))?, &meta)?;
    let scores_path = dir.join(SCORES_CSV);
    let scores = if scores_path.exists() {
        parse_scores_csv(&read_file(&scores_path)?)?
    } else {
        Vec::new()
    };
    Ok(LoadedRun {
        meta,
        config,
        rows,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyBin {
    pub bin: usize,
    pub first_index: usize,
    pub last_index: usize,
    pub queries: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageBin {
    pub bin: usize,
    pub source: SourceId,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GasRow {
    pub index: usize,
    pub updates: usize,
    pub gas: u64,
    pub cumulative_gas: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub source: SourceId,
    pub pollution_level: f64,
    pub documents: usize,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub mode: Mode,
    pub queries: usize,
    pub bin_size: usize,
    pub post_warmup_accuracy: Option<f64>,
    pub accuracy: Vec<AccuracyBin>,
    pub usage: Vec<UsageBin>,
    pub gas: Vec<GasRow>,
    pub entropy: Vec<EntropyRow>,
    /// (index, source, R, U) in row order.
    pub reliability: Vec<(usize, SourceId, f64, f64)>,
}

impl Metrics {
    pub fn num_bins(&self) -> usize {
        self.accuracy.len()
    }

    pub fn usage_share(&self, bin: usize, source: SourceId) -> f64 {
        self.usage
            .iter()
            .find(|u| u.bin == bin && u.source == source)
            .map_or(0.0, |u| u.share)
    }
}

pub fn accuracy_bins(rows: &[TraceRow], bin_size: usize) -> Vec<AccuracyBin> {
    rows.chunks(bin_size.max(1))
        .enumerate()
        .map(|(bin, chunk)| AccuracyBin {
            bin,
            first_index: chunk[0].index,
            last_index: chunk[chunk.len() - 1].index,
            queries: chunk.len(),
            accuracy: chunk.iter().filter(|r| r.correct).count() as f64 / chunk.len() as f64,
        })
        .collect()
}

/// Fraction of context documents served by each source, per bin.
pub fn usage_bins(rows: &[TraceRow], sources: &[SourceId], bin_size: usize) -> Vec<UsageBin> {
    let mut out = Vec::new();
    for (bin, chunk) in rows.chunks(bin_size.max(1)).enumerate() {
        let mut counts: BTreeMap<SourceId, usize> = sources.iter().map(|&s| (s, 0)).collect();
        let mut total = 0usize;
        for r in chunk {
            for (_, s) in &r.top_k {
                if let Some(c) = s.and_then(|s| counts.get_mut(&s)) {
                    *c += 1;
                    total += 1;
                }
            }
        }
        for (source, c) in counts {
            out.push(UsageBin {
                bin,
                source,
                share: if total == 0 { 0.0 } else { c as f64 / total as f64 },
            });
        }
    }
    out
}

pub fn entropy_rows(scores: &[ScoreRow], bins: EntropyBins) -> Vec<EntropyRow> {
    let mut groups: BTreeMap<SourceId, (f64, Vec<&[f64]>)> = BTreeMap::new();
    for s in scores {
        groups
            .entry(s.source_id)
            .or_insert((s.pollution_level, Vec::new()))
            .1
            .push(&s.per_sentence);
    }
    groups
        .into_iter()
        .map(|(source, (level, rows))| EntropyRow {
            source,
            pollution_level: level,
            documents: rows.len(),
            mean_entropy: scoring::mean_entropy(rows.iter().copied(), bins),
        })
        .collect()
}

pub fn compute_metrics(run: &LoadedRun, bin_size: usize) -> Metrics {
    let sources: Vec<SourceId> = run.meta.environment.sources.iter().map(|s| s.source_id).collect();
    let usage = if run.meta.mode == Mode::CentralizedReliable {
        Vec::new()
    } else {
        usage_bins(&run.rows, &sources, bin_size)
    };
    let mut cumulative = 0u64;
    let gas = run
        .rows
        .iter()
        .map(|r| {
            cumulative += r.gas;
            GasRow {
                index: r.index,
                updates: r.sampled.len(),
                gas: r.gas,
                cumulative_gas: cumulative,
            }
        })
        .collect();
    let reliability = run
        .rows
        .iter()
        .flat_map(|r| {
            run.meta
                .sources
                .iter()
                .zip(&r.scores)
                .map(move |(s, &(rr, uu))| (r.index, s.source_id, rr, uu))
        })
        .collect();
    Metrics {
        mode: run.meta.mode,
        queries: run.rows.len(),
        bin_size,
        post_warmup_accuracy: post_warmup_accuracy(&run.rows),
        accuracy: accuracy_bins(&run.rows, bin_size),
        usage,
        gas,
        entropy: entropy_rows(&run.scores, run.config.experiment.entropy),
        reliability,
    }
}

pub fn write_metrics(m: &Metrics, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let h = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    write_file(
        &dir.join("accuracy.csv"),
        &csv_bytes(
            &h(&["bin", "first_index", "last_index", "queries", "accuracy"]),
            m.accuracy.iter().map(|a| {
                vec![
                    a.bin.to_string(),
                    a.first_index.to_string(),
                    a.last_index.to_string(),
                    a.queries.to_string(),
                    fmt6(a.accuracy),
                ]
            }),
        )?,
    )?;
    write_file(
        &dir.join("usage.csv"),
        &csv_bytes(
            &h(&["bin", "source", "share"]),
            m.usage
                .iter()
                .map(|u| vec![u.bin.to_string(), u.source.label(), fmt6(u.share)]),
        )?,
    )?;
    write_file(
        &dir.join("reliability.csv"),
        &csv_bytes(
            &h(&["index", "source", "R", "U"]),
            m.reliability
                .iter()
                .map(|&(i, s, r, u)| vec![i.to_string(), s.label(), fmt6(r), fmt6(u)]),
        )?,
    )?;
    write_file(
        &dir.join("gas.csv"),
        &csv_bytes(
            &h(&["index", "updates", "gas", "cumulative_gas", "per_update_gas"]),
            m.gas.iter().map(|g| {
                vec![
                    g.index.to_string(),
                    g.updates.to_string(),
                    g.gas.to_string(),
                    g.cumulative_gas.to_string(),
                    if g.updates == 0 {
                        String::new()
                    } else {
                        fmt6(g.gas as f64 / g.updates as f64)
                    },
                ]
            }),
        )?,
    )?;
    write_file(
        &dir.join("entropy.csv"),
        &csv_bytes(
            &h(&["source", "pollution_level", "documents", "mean_entropy"]),
            m.entropy.iter().map(|e| {
                vec![
                    e.source.label(),
                    fmt6(e.pollution_level),
                    e.documents.to_string(),
                    fmt6(e.mean_entropy),
                ]
            }),
        )?,
    )?;
    let summary = serde_json::json!({
        "mode": m.mode,
        "queries": m.queries,
        "bin_size": m.bin_size,
        "bins": m.num_bins(),
        "post_warmup_accuracy": m.post_warmup_accuracy,
        "total_gas": m.gas.last().map_or(0, |g| g.cumulative_gas),
    });
    let mut body = serde_json::to_vec_pretty(&summary)?;
    body.push(b'\n');
    write_file(&dir.join("summary.json"), &body)
}

pub fn cmd_metrics(run_dir: &Path, out_dir: &Path, bin_size: Option<usize>) -> Result<Metrics> {
    let run = load_run(run_dir)?;
    let bin = bin_size.unwrap_or(run.config.experiment.bin_size);
    if bin == 0 {
        return Err(Error::validation("bin size must be positive"));
    }
    let m = compute_metrics(&run, bin);
    write_metrics(&m, out_dir)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub events: usize,
    pub score_updates: usize,
    pub rows_checked: usize,
}

/// Checks that the event log, the ledger snapshot and every score column of
/// the trace agree.
pub fn audit_run(dir: &Path) -> Result<(AuditReport, Vec<LedgerEvent>)> {
    let run = load_run(dir)?;
    if run.meta.mode != Mode::Decentralized {
        return Err(Error::validation(format!(
            "{} runs have no ledger to audit",
            run.meta.mode
        )));
    }
    let events = ledger::parse_events_jsonl(&read_file(&dir.join(EVENTS_JSONL))?)?;
    let ledger = Ledger::load(dir.join(LEDGER_JSON))?;
    if ledger.events() != events.as_slice() {
        return Err(Error::validation("events.jsonl differs from the ledger snapshot's log"));
    }
    if &fold_events(&events)? != ledger.records() {
        return Err(Error::validation("event fold differs from the ledger's score table"));
    }
    let mut upto = 0usize;
    let mut last_tx: Option<u64> = None;
    for row in &run.rows {
        if let Some(tx) = row.transaction_index {
            if last_tx.is_some_and(|t| tx <= t) {
                return Err(Error::validation(format!(
                    "row {}: transaction index not increasing",
                    row.index
                )));
            }
            last_tx = Some(tx);
            while upto < events.len() && events[upto].transaction_index() <= tx {
                upto += 1;
            }
        } else if upto == 0 {
            upto = events
                .iter()
                .take_while(|e| matches!(e, LedgerEvent::SourceRegistered(_)))
                .count();
        }
        let table = fold_events(&events[..upto])?;
        for (s, &(r, u)) in run.meta.sources.iter().zip(&row.scores) {
            let rec = table
                .get(&s.source_id)
                .ok_or_else(|| Error::validation(format!("row {}: source {} missing", row.index, s.label)))?;
            if to_fixed(r)? != rec.reliability || to_fixed(u)? != rec.usefulness {
                return Err(Error::validation(format!(
                    "row {}: snapshot of {} disagrees with the event log",
                    row.index, s.label
                )));
            }
        }
    }
    let score_updates = events
        .iter()
        .filter(|e| matches!(e, LedgerEvent::ScoreRecordUpdated(_)))
        .count();
    Ok((
        AuditReport {
            events: events.len(),
            score_updates,
            rows_checked: run.rows.len(),
        },
        events,
    ))
}

/// Mean per-document sentence-score entropy of every source, scoring each
/// document against the query it was written for.
pub fn entropy_by_source<A: Answerer>(
    env: &Environment,
    config: &Config,
    method: ImportanceMethod,
    answerer: &A,
) -> Result<Vec<EntropyRow>> {
    let queries: BTreeMap<&str, &Query> = env.queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let embedder = Embedder {
        dim: config.retrieval.dim,
    };
    let key = RngKey::new(config.seeds.run, "entropy");
    let mut out = Vec::new();
    for src in &env.sources {
        let mut rows = Vec::new();
        for doc in &src.documents {
            let Some(q) = doc.origin_query_ids.iter().find_map(|id| queries.get(id.as_str())) else {
                continue;
            };
            let scores = match method {
                ImportanceMethod::McShapley => {
                    scoring::shapley_values(doc, q, answerer, embedder, config.shapley(), &key)?
                }
                ImportanceMethod::Info => scoring::info_score(doc, q, &config.scoring.info)?,
            };
            rows.push(scores);
        }
        out.push(EntropyRow {
            source: src.source_id,
            pollution_level: src.pollution_level,
            documents: rows.len(),
            mean_entropy: scoring::mean_entropy(rows.iter().map(Vec::as_slice), config.experiment.entropy),
        });
    }
    Ok(out)
}
