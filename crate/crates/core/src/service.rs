//! Per-query orchestration: sample sources, retrieve, fuse, answer, score,
//! and submit signed score updates to the ledger.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::answer::{self, Answerer};
use crate::config::Config;
use crate::corpus::{Query, SourceId, SourceSpec};
use crate::ledger::{
    query_hash, state_digest, to_fixed, Account, AuditInfo, ContractError, FeedbackLog, Ledger, PublicKey, ScoreRecord,
    Signature,
};
use crate::retrieval::{self, Candidate, Embedder, SourceIndex};
use crate::rng::RngKey;
use crate::scoring::{self, DocumentImportance, ImportanceMethod, ImportanceReport, ScoreDelta};
use crate::{Error, Result};

/// What a sampled source receives: the query plus the state it is asked to consent to.
#[derive(Debug, Clone)]
pub struct RetrievalRequest {
    pub query: Query,
    pub m: usize,
    pub query_log_id: u64,
    pub records: Vec<ScoreRecord>,
    pub state_digest: [u8; 32],
}

#[derive(Debug, Clone)]
pub struct SourceResponse {
    pub source_id: SourceId,
    pub candidates: Vec<Candidate>,
    pub signature: Signature,
}

/// A data source endpoint: documents plus a consent signature over the state digest.
pub trait DataSource {
    fn source_id(&self) -> SourceId;
    fn public_key(&self) -> PublicKey;
    fn serve(&self, request: &RetrievalRequest) -> Result<SourceResponse>;
}

/// An in-process source backed by a flat index and a local key pair.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    index: SourceIndex,
    account: Account,
}

impl SimulatedSource {
    pub fn new(index: SourceIndex, account: Account) -> Self {
        SimulatedSource { index, account }
    }

    pub fn from_spec(spec: &SourceSpec, key_seed: u64, embedder: Embedder) -> Self {
        let docs = spec.documents.iter().cloned().map(Arc::new).collect();
        SimulatedSource {
            index: SourceIndex::build(spec.source_id, docs, embedder),
            account: Account::derive(key_seed, spec.source_id),
        }
    }

    pub fn index(&self) -> &SourceIndex {
        &self.index
    }

    pub fn account(&self) -> &Account {
        &self.account
    }
}

impl DataSource for SimulatedSource {
    fn source_id(&self) -> SourceId {
        self.index.source_id()
    }

    fn public_key(&self) -> PublicKey {
        self.account.public_key()
    }

    /// Refuses to sign unless the digest matches the request and lists this
    /// source under its own address.
    fn serve(&self, req: &RetrievalRequest) -> Result<SourceResponse> {
        let id = self.source_id();
        let own = req
            .records
            .iter()
            .find(|r| r.source_id == id)
            .ok_or_else(|| Error::validation(format!("consent request for {id} omits its record")))?;
        if own.source_address != self.public_key() {
            return Err(Error::validation(format!(
                "consent request for {id} has a foreign address"
            )));
        }
        let digest = state_digest(&req.query.text, req.query_log_id, &req.records)?;
        if digest != req.state_digest {
            return Err(Error::validation(format!(
                "consent request for {id} has a wrong digest"
            )));
        }
        Ok(SourceResponse {
            source_id: id,
            candidates: retrieval::retrieve(&self.index, &req.query, req.m)?,
            signature: self.account.sign(&digest),
        })
    }
}

/// Registers every source with the configured initial scores.
pub fn register_sources<S: DataSource>(ledger: &mut Ledger, sources: &[S], config: &Config) -> Result<()> {
    for s in sources {
        ledger.register_source(
            s.source_id(),
            s.public_key(),
            config.ledger.initial_r,
            config.ledger.initial_u,
        )?;
    }
    Ok(())
}

/// Externally supplied judgement for a deferred query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Correct(bool),
    GroundTruth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDoc {
    pub doc_id: String,
    pub source_id: SourceId,
    pub score_rerank: f64,
    pub score_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    pub answer: String,
    /// `None` while feedback is pending.
    pub correct: Option<bool>,
    pub sampled_sources: Vec<SourceId>,
    pub pool_size: usize,
    pub top_k: Vec<TopDoc>,
    pub report: ImportanceReport,
    pub query_log_id: u64,
    pub deltas: Vec<ScoreDelta>,
    pub tx_accepted: bool,
    pub abort: Option<ContractError>,
    pub gas: u64,
}

/// Everything needed to finish a query once its verdict arrives.
#[derive(Debug, Clone)]
struct Pending {
    query: Query,
    answer: String,
    query_log_id: u64,
    sampled: Vec<SourceId>,
    signatures: BTreeMap<SourceId, Signature>,
    state_digest: [u8; 32],
    report: ImportanceReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub correct: bool,
    pub deltas: Vec<ScoreDelta>,
    pub tx_accepted: bool,
    pub abort: Option<ContractError>,
    pub gas: u64,
}

/// One service instance; any number of them may share a ledger.
pub struct Service<S: DataSource, A: Answerer> {
    config: Config,
    sources: BTreeMap<SourceId, S>,
    answerer: A,
    embedder: Embedder,
    /// Distinguishes this instance's random streams from other instances'.
    instance: String,
    deferred: bool,
    handled: u64,
    pending: BTreeMap<String, Pending>,
}

impl<S: DataSource, A: Answerer> Service<S, A> {
    pub fn new(config: Config, sources: Vec<S>, answerer: A) -> Self {
        let embedder = Embedder {
            dim: config.retrieval.dim,
        };
        Service {
            config,
            sources: sources.into_iter().map(|s| (s.source_id(), s)).collect(),
            answerer,
            embedder,
            instance: String::new(),
            deferred: false,
            handled: 0,
            pending: BTreeMap::new(),
        }
    }

    pub fn with_instance(mut self, name: impl Into<String>) -> Self {
        self.instance = name.into();
        self
    }

    /// Holds feedback until [`Service::record_feedback`] supplies a verdict.
    pub fn with_deferred_feedback(mut self, deferred: bool) -> Self {
        self.deferred = deferred;
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn answerer(&self) -> &A {
        &self.answerer
    }

    pub fn sources(&self) -> impl Iterator<Item = &S> {
        self.sources.values()
    }

    pub fn pending_queries(&self) -> impl Iterator<Item = &str> {
        self.pending.keys().map(String::as_str)
    }

    fn key(&self, domain: &str, counter: u64) -> RngKey {
        RngKey::new(self.config.seeds.run, domain)
            .with_str(&self.instance)
            .with_u64(counter)
    }

    pub fn handle_query(&mut self, ledger: &mut Ledger, query: &Query) -> Result<QueryOutcome> {
        if self.pending.contains_key(&query.query_id) {
            return Err(Error::validation(format!(
                "query {} already awaits feedback",
                query.query_id
            )));
        }
        let counter = self.handled;
        self.handled += 1;
        let cfg = self.config.retrieval;

        let usefulness: BTreeMap<SourceId, f64> = ledger
            .usefulness()
            .into_iter()
            .filter(|(id, _)| self.sources.contains_key(id))
            .collect();
        let mut rng = self.key("sample-sources", counter).with_str(&query.query_id).rng();
        let sampled = retrieval::sample_sources(&usefulness, cfg.n.min(usefulness.len()), &mut rng)?;

        let query_log_id = ledger.log_query(query_hash(&query.text), sampled.clone());
        let records = ledger.records_for(&sampled)?;
        let digest = state_digest(&query.text, query_log_id, &records)?;
        let request = RetrievalRequest {
            query: query.clone(),
            m: cfg.m,
            query_log_id,
            records,
            state_digest: digest,
        };
        let mut pool = Vec::new();
        let mut signatures = BTreeMap::new();
        for id in &sampled {
            let resp = self.sources[id].serve(&request)?;
            signatures.insert(*id, resp.signature);
            pool.extend(resp.candidates);
        }
        let pool_size = pool.len();
        let top = retrieval::rerank_fuse(pool, &ledger.reliability(), cfg.alpha, cfg.k)?;

        let context: Vec<&str> = top.iter().map(|c| c.doc.text.as_str()).collect();
        let answer = self.answerer.answer(query, &context)?;
        let report = self.importance(query, &top, &answer, counter)?;
        let top_k = top
            .iter()
            .map(|c| TopDoc {
                doc_id: c.doc.doc_id.clone(),
                source_id: c.source_id,
                score_rerank: c.score_rerank,
                score_final: c.score_final.unwrap_or(c.score_rerank),
            })
            .collect();

        let pending = Pending {
            query: query.clone(),
            answer: answer.clone(),
            query_log_id,
            sampled: sampled.clone(),
            signatures,
            state_digest: digest,
            report: report.clone(),
        };
        let mut outcome = QueryOutcome {
            query_id: query.query_id.clone(),
            answer,
            correct: None,
            sampled_sources: sampled,
            pool_size,
            top_k,
            report,
            query_log_id,
            deltas: Vec::new(),
            tx_accepted: false,
            abort: None,
            gas: 0,
        };
        if self.deferred {
            self.pending.insert(query.query_id.clone(), pending);
            return Ok(outcome);
        }
        let correct = answer::is_correct(&outcome.answer, &query.gold_answers);
        let s = settle(ledger, &pending, correct)?;
        outcome.correct = Some(s.correct);
        outcome.deltas = s.deltas;
        outcome.tx_accepted = s.tx_accepted;
        outcome.abort = s.abort;
        outcome.gas = s.gas;
        Ok(outcome)
    }

    /// Finishes a deferred query with an external verdict.
    pub fn record_feedback(&mut self, ledger: &mut Ledger, query_id: &str, verdict: Verdict) -> Result<Settlement> {
        let pending = self
            .pending
            .remove(query_id)
            .ok_or_else(|| Error::NotFound(format!("no pending feedback for query {query_id}")))?;
        let correct = match verdict {
            Verdict::Correct(c) => c,
            Verdict::GroundTruth(gt) => answer::is_correct(&pending.answer, &[gt]),
        };
        settle(ledger, &pending, correct)
    }

    fn importance(&self, query: &Query, top: &[Candidate], response: &str, counter: u64) -> Result<ImportanceReport> {
        let sc = &self.config.scoring;
        let key = self.key("shapley", counter);
        let per_document = top
            .iter()
            .map(|c| {
                let per_sentence = match sc.method {
                    ImportanceMethod::McShapley => scoring::shapley_values(
                        &c.doc,
                        query,
                        &self.answerer,
                        self.embedder,
                        self.config.shapley(),
                        &key,
                    )?,
                    ImportanceMethod::Info => scoring::info_score(&c.doc, query, &sc.info)?,
                };
                Ok(DocumentImportance {
                    doc_id: c.doc.doc_id.clone(),
                    source_id: c.source_id,
                    f_d: scoring::aggregate(&per_sentence, sc.method)?,
                    per_sentence,
                    grounded: scoring::is_grounded(response, &c.doc, sc.tau),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImportanceReport {
            query_id: query.query_id.clone(),
            method: sc.method,
            per_document,
        })
    }
}

/// New score values for every sampled source, applying deltas to the
/// ledger's current values; untouched sources keep their scores.
fn updated_scores(ledger: &Ledger, sampled: &[SourceId], deltas: &[ScoreDelta]) -> Result<Vec<(SourceId, i64, i64)>> {
    let by_source: BTreeMap<SourceId, &ScoreDelta> = deltas.iter().map(|d| (d.source_id, d)).collect();
    sampled
        .iter()
        .map(|id| {
            let rec = ledger.record(*id).ok_or(ContractError::DataSourceNotExists(*id))?;
            Ok(match by_source.get(id) {
                Some(d) => (
                    *id,
                    rec.reliability.saturating_add(to_fixed(d.delta_r)?),
                    rec.usefulness.saturating_add(to_fixed(d.delta_u)?),
                ),
                None => (*id, rec.reliability, rec.usefulness),
            })
        })
        .collect()
}

fn settle(ledger: &mut Ledger, p: &Pending, correct: bool) -> Result<Settlement> {
    let deltas = scoring::compute_deltas(&p.report, correct);
    let updates = updated_scores(ledger, &p.sampled, &deltas)?;
    let tx = FeedbackLog {
        state_digest: p.state_digest,
        signatures: p.sampled.iter().map(|id| p.signatures[id]).collect(),
        source_ids: p.sampled.clone(),
        new_r: updates.iter().map(|u| u.1).collect(),
        new_u: updates.iter().map(|u| u.2).collect(),
        info: AuditInfo {
            query: p.query.text.clone(),
            query_log_id: p.query_log_id,
            report: Some(p.report.clone()),
        },
    };
    Ok(match ledger.submit_feedback(&tx) {
        Ok(receipt) => Settlement {
            correct,
            deltas,
            tx_accepted: true,
            abort: None,
            gas: receipt.gas,
        },
        Err(e) => Settlement {
            correct,
            deltas,
            tx_accepted: false,
            abort: Some(e),
            gas: 0,
        },
    })
}

/// One simulated source per environment spec, keyed from `seeds.keys`.
pub fn simulated_sources(specs: &[SourceSpec], config: &Config) -> Vec<SimulatedSource> {
    let embedder = Embedder {
        dim: config.retrieval.dim,
    };
    specs
        .iter()
        .map(|s| SimulatedSource::from_spec(s, config.seeds.keys, embedder))
        .collect()
}
