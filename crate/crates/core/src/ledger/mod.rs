//! In-process ledger running the score-update contract.
//!
//! The ledger is a single-writer state machine. Each transaction either
//! applies completely or aborts with a [`ContractError`] and leaves the state
//! untouched. Every change to a score record is also appended to an event
//! log, and folding that log from genesis reproduces the live score table.

pub mod crypto;
pub mod digest;
pub mod gas;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SourceId;
use crate::scoring::ImportanceReport;
use crate::{Error, Result};

pub use crypto::{sign_state, verify, Account, PublicKey, Signature};
pub use digest::{from_fixed, state_digest, to_fixed, SCALE};
pub use gas::GasSchedule;

pub const DEFAULT_INITIAL_SCORE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error(
        "InvalidUpdateCount: {signatures} signatures, {sources} sources, {r} reliability and {u} usefulness values"
    )]
    InvalidUpdateCount {
        signatures: usize,
        sources: usize,
        r: usize,
        u: usize,
    },
    #[error("DataSourceNotExists: source {0}")]
    DataSourceNotExists(SourceId),
    #[error("InvalidSignature: source {0}")]
    InvalidSignature(SourceId),
    #[error("QueryAlreadyUsed: query log {0}")]
    QueryAlreadyUsed(u64),
    #[error("UnknownQueryLog: query log {0} does not exist or does not match the query")]
    UnknownQueryLog(u64),
    #[error("DataSourceAlreadyExists: source {0}")]
    DataSourceAlreadyExists(SourceId),
}

impl ContractError {
    pub fn code(&self) -> &'static str {
        match self {
            ContractError::InvalidUpdateCount { .. } => "InvalidUpdateCount",
            ContractError::DataSourceNotExists(_) => "DataSourceNotExists",
            ContractError::InvalidSignature(_) => "InvalidSignature",
            ContractError::QueryAlreadyUsed(_) => "QueryAlreadyUsed",
            ContractError::UnknownQueryLog(_) => "UnknownQueryLog",
            ContractError::DataSourceAlreadyExists(_) => "DataSourceAlreadyExists",
        }
    }
}

/// One source's on-ledger scores, fixed-point at [`SCALE`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub source_id: SourceId,
    pub source_address: PublicKey,
    pub reliability: i64,
    pub usefulness: i64,
    pub timestamp: u64,
}

impl ScoreRecord {
    pub fn r(&self) -> f64 {
        from_fixed(self.reliability)
    }

    pub fn u(&self) -> f64 {
        from_fixed(self.usefulness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryLogStatus {
    Unused,
    Used,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLog {
    pub query_log_id: u64,
    #[serde(with = "crypto::hex32")]
    pub query_hash: [u8; 32],
    pub sampled_source_ids: Vec<SourceId>,
    pub status: QueryLogStatus,
}

/// Audit payload carried by a feedback transaction and copied into its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditInfo {
    pub query: String,
    pub query_log_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ImportanceReport>,
}

impl AuditInfo {
    pub fn payload_bytes(&self) -> u64 {
        serde_json::to_vec(self).map_or(0, |v| v.len() as u64)
    }
}

pub fn query_hash(query: &str) -> [u8; 32] {
    Sha256::digest(query.as_bytes()).into()
}

/// The score-update transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLog {
    #[serde(with = "crypto::hex32")]
    pub state_digest: [u8; 32],
    pub signatures: Vec<Signature>,
    pub source_ids: Vec<SourceId>,
    /// Fixed-point reliability values to store.
    pub new_r: Vec<i64>,
    /// Fixed-point usefulness values to store.
    pub new_u: Vec<i64>,
    pub info: AuditInfo,
}

pub fn parse_feedback(input: &[u8]) -> Result<FeedbackLog> {
    Ok(serde_json::from_slice(input)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecordUpdatedEvent {
    pub source_id: SourceId,
    pub new_r: i64,
    pub new_u: i64,
    pub timestamp: u64,
    pub info: AuditInfo,
    /// Shared by all events of one transaction.
    pub transaction_index: u64,
    /// Position in the global event log.
    pub log_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRegisteredEvent {
    pub source_id: SourceId,
    pub source_address: PublicKey,
    pub reliability: i64,
    pub usefulness: i64,
    pub timestamp: u64,
    pub transaction_index: u64,
    pub log_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum LedgerEvent {
    SourceRegistered(SourceRegisteredEvent),
    ScoreRecordUpdated(ScoreRecordUpdatedEvent),
}

impl LedgerEvent {
    pub fn log_index(&self) -> u64 {
        match self {
            LedgerEvent::SourceRegistered(e) => e.log_index,
            LedgerEvent::ScoreRecordUpdated(e) => e.log_index,
        }
    }

    pub fn transaction_index(&self) -> u64 {
        match self {
            LedgerEvent::SourceRegistered(e) => e.transaction_index,
            LedgerEvent::ScoreRecordUpdated(e) => e.transaction_index,
        }
    }
}

/// Rebuilds the score table from an event log.
pub fn fold_events<'a>(events: impl IntoIterator<Item = &'a LedgerEvent>) -> Result<BTreeMap<SourceId, ScoreRecord>> {
    let mut table = BTreeMap::new();
    for ev in events {
        match ev {
            LedgerEvent::SourceRegistered(e) => {
                let rec = ScoreRecord {
                    source_id: e.source_id,
                    source_address: e.source_address,
                    reliability: e.reliability,
                    usefulness: e.usefulness,
                    timestamp: e.timestamp,
                };
                if table.insert(e.source_id, rec).is_some() {
                    return Err(Error::validation(format!(
                        "event {} registers source {} twice",
                        e.log_index, e.source_id
                    )));
                }
            }
            LedgerEvent::ScoreRecordUpdated(e) => {
                let rec: &mut ScoreRecord = table.get_mut(&e.source_id).ok_or_else(|| {
                    Error::validation(format!(
                        "event {} updates unregistered source {}",
                        e.log_index, e.source_id
                    ))
                })?;
                rec.reliability = e.new_r;
                rec.usefulness = e.new_u;
                rec.timestamp = e.timestamp;
            }
        }
    }
    Ok(table)
}

pub fn write_events_jsonl(events: &[LedgerEvent], out: &mut impl Write) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut *out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses an append-only event log; log indexes must be consecutive from 0.
pub fn parse_events_jsonl(input: &str) -> Result<Vec<LedgerEvent>> {
    let mut out: Vec<LedgerEvent> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: LedgerEvent = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if ev.log_index() != out.len() as u64 {
            return Err(Error::parse(
                i + 1,
                format!("expected log index {}, found {}", out.len(), ev.log_index()),
            ));
        }
        if let Some(prev) = out.last() {
            if ev.transaction_index() < prev.transaction_index() {
                return Err(Error::parse(i + 1, "transaction index went backwards"));
            }
        }
        out.push(ev);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub replay_guard: bool,
    pub gas: GasSchedule,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            replay_guard: true,
            gas: GasSchedule::default(),
        }
    }
}

/// Result of an accepted feedback transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Receipt {
    pub transaction_index: u64,
    pub timestamp: u64,
    pub gas: u64,
    pub events: Vec<ScoreRecordUpdatedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    config: LedgerConfig,
    clock: u64,
    next_query_log_id: u64,
    next_transaction_index: u64,
    gas_used: u64,
    records: BTreeMap<SourceId, ScoreRecord>,
    query_logs: BTreeMap<u64, QueryLog>,
    events: Vec<LedgerEvent>,
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger::new(LedgerConfig::default())
    }
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Ledger {
            config,
            clock: 0,
            next_query_log_id: 0,
            next_transaction_index: 0,
            gas_used: 0,
            records: BTreeMap::new(),
            query_logs: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn gas_used(&self) -> u64 {
        self.gas_used
    }

    pub fn record(&self, source: SourceId) -> Option<&ScoreRecord> {
        self.records.get(&source)
    }

    pub fn records(&self) -> &BTreeMap<SourceId, ScoreRecord> {
        &self.records
    }

    pub fn query_log(&self, id: u64) -> Option<&QueryLog> {
        self.query_logs.get(&id)
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn reliability(&self) -> BTreeMap<SourceId, f64> {
        self.records.iter().map(|(&k, r)| (k, r.r())).collect()
    }

    pub fn usefulness(&self) -> BTreeMap<SourceId, f64> {
        self.records.iter().map(|(&k, r)| (k, r.u())).collect()
    }

    fn push_event(&mut self, ev: impl FnOnce(u64) -> LedgerEvent) {
        let idx = self.events.len() as u64;
        self.events.push(ev(idx));
    }

    pub fn register_source(
        &mut self,
        source_id: SourceId,
        public_key: PublicKey,
        initial_r: f64,
        initial_u: f64,
    ) -> Result<ScoreRecord> {
        if self.records.contains_key(&source_id) {
            return Err(ContractError::DataSourceAlreadyExists(source_id).into());
        }
        if !public_key.is_valid() {
            return Err(Error::validation(format!(
                "source {source_id}: public key is not a valid curve point"
            )));
        }
        let (r, u) = (to_fixed(initial_r)?, to_fixed(initial_u)?);
        self.clock += 1;
        let tx = self.next_transaction_index;
        self.next_transaction_index += 1;
        self.gas_used += self.config.gas.gas(1, 0);
        let rec = ScoreRecord {
            source_id,
            source_address: public_key,
            reliability: r,
            usefulness: u,
            timestamp: self.clock,
        };
        self.records.insert(source_id, rec.clone());
        let ts = self.clock;
        self.push_event(|log_index| {
            LedgerEvent::SourceRegistered(SourceRegisteredEvent {
                source_id,
                source_address: public_key,
                reliability: r,
                usefulness: u,
                timestamp: ts,
                transaction_index: tx,
                log_index,
            })
        });
        Ok(rec)
    }

    /// Records a query attempt and the sources sampled for it, status UNUSED.
    pub fn log_query(&mut self, query_hash: [u8; 32], sampled_source_ids: Vec<SourceId>) -> u64 {
        let id = self.next_query_log_id;
        self.next_query_log_id += 1;
        self.query_logs.insert(
            id,
            QueryLog {
                query_log_id: id,
                query_hash,
                sampled_source_ids,
                status: QueryLogStatus::Unused,
            },
        );
        id
    }

    /// Current records of `sources` in ascending order, for digest construction.
    pub fn records_for(&self, sources: &[SourceId]) -> Result<Vec<ScoreRecord>> {
        let mut ids = sources.to_vec();
        ids.sort();
        ids.dedup();
        ids.iter()
            .map(|id| {
                self.records
                    .get(id)
                    .cloned()
                    .ok_or_else(|| ContractError::DataSourceNotExists(*id).into())
            })
            .collect()
    }

    pub fn gas_of(&self, tx: &FeedbackLog) -> u64 {
        self.config.gas.gas(tx.source_ids.len() as u64, tx.info.payload_bytes())
    }

    /// Validates and applies a feedback transaction atomically.
    pub fn submit_feedback(&mut self, tx: &FeedbackLog) -> std::result::Result<Receipt, ContractError> {
        let timestamp = self.clock + 1;
        let n = tx.source_ids.len();
        if tx.signatures.len() != n || tx.new_r.len() != n || tx.new_u.len() != n {
            return Err(ContractError::InvalidUpdateCount {
                signatures: tx.signatures.len(),
                sources: n,
                r: tx.new_r.len(),
                u: tx.new_u.len(),
            });
        }
        for (id, sig) in tx.source_ids.iter().zip(&tx.signatures) {
            let rec = self.records.get(id).ok_or(ContractError::DataSourceNotExists(*id))?;
            if !verify(&rec.source_address, &tx.state_digest, sig) {
                return Err(ContractError::InvalidSignature(*id));
            }
        }
        let log_id = tx.info.query_log_id;
        if self.config.replay_guard {
            let log = self
                .query_logs
                .get(&log_id)
                .ok_or(ContractError::UnknownQueryLog(log_id))?;
            if log.query_hash != query_hash(&tx.info.query) {
                return Err(ContractError::UnknownQueryLog(log_id));
            }
            if log.status == QueryLogStatus::Used {
                return Err(ContractError::QueryAlreadyUsed(log_id));
            }
        }

        // All checks passed; nothing below can fail.
        self.clock = timestamp;
        let transaction_index = self.next_transaction_index;
        self.next_transaction_index += 1;
        let mut emitted = Vec::with_capacity(n);
        for i in 0..n {
            let id = tx.source_ids[i];
            let rec = self.records.get_mut(&id).expect("checked above");
            rec.reliability = tx.new_r[i];
            rec.usefulness = tx.new_u[i];
            rec.timestamp = timestamp;
            let ev = ScoreRecordUpdatedEvent {
                source_id: id,
                new_r: tx.new_r[i],
                new_u: tx.new_u[i],
                timestamp,
                info: tx.info.clone(),
                transaction_index,
                log_index: self.events.len() as u64,
            };
            self.events.push(LedgerEvent::ScoreRecordUpdated(ev.clone()));
            emitted.push(ev);
        }
        if let Some(log) = self.query_logs.get_mut(&log_id) {
            if self.config.replay_guard || log.query_hash == query_hash(&tx.info.query) {
                log.status = QueryLogStatus::Used;
            }
        }
        let gas = self.gas_of(tx);
        self.gas_used = self.gas_used.saturating_add(gas);
        Ok(Receipt {
            transaction_index,
            timestamp,
            gas,
            events: emitted,
        })
    }

    /// Score-update events in emission order, optionally filtered by source
    /// and by an inclusive transaction-index range.
    pub fn query_events(
        &self,
        source: Option<SourceId>,
        range: Option<RangeInclusive<u64>>,
    ) -> Vec<&ScoreRecordUpdatedEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LedgerEvent::ScoreRecordUpdated(u) => Some(u),
                LedgerEvent::SourceRegistered(_) => None,
            })
            .filter(|e| source.is_none_or(|s| e.source_id == s))
            .filter(|e| range.as_ref().is_none_or(|r| r.contains(&e.transaction_index)))
            .collect()
    }

    /// Canonical byte image of the full state.
    pub fn snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("ledger state always serializes")
    }

    /// Restores a snapshot, checking its internal consistency.
    pub fn restore(bytes: &[u8]) -> Result<Ledger> {
        let ledger: Ledger = serde_json::from_slice(bytes)?;
        ledger.check_consistency()?;
        Ok(ledger)
    }

    pub fn check_consistency(&self) -> Result<()> {
        for (k, r) in &self.records {
            if *k != r.source_id {
                return Err(Error::validation(format!(
                    "record keyed {k} holds source {}",
                    r.source_id
                )));
            }
            if r.timestamp > self.clock {
                return Err(Error::validation(format!("source {k} timestamp is ahead of the clock")));
            }
        }
        for (k, l) in &self.query_logs {
            if *k != l.query_log_id || *k >= self.next_query_log_id {
                return Err(Error::validation(format!("query log {k} is inconsistent")));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.log_index() != i as u64 || e.transaction_index() >= self.next_transaction_index {
                return Err(Error::validation(format!("event {i} has inconsistent indexes")));
            }
        }
        if fold_events(&self.events)? != self.records {
            return Err(Error::validation("event log does not reproduce the score table"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.snapshot()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ledger> {
        let path = path.as_ref();
        Ledger::restore(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Builds a signed feedback transaction for `sources` with the given new scores.
///
/// The digest covers the ledger's current records of those sources.
pub fn build_feedback(
    ledger: &Ledger,
    accounts: &BTreeMap<SourceId, Account>,
    info: AuditInfo,
    updates: &[(SourceId, f64, f64)],
) -> Result<FeedbackLog> {
    let ids: Vec<SourceId> = updates.iter().map(|u| u.0).collect();
    let records = ledger.records_for(&ids)?;
    let digest = state_digest(&info.query, info.query_log_id, &records)?;
    let mut tx = FeedbackLog {
        state_digest: digest,
        signatures: Vec::with_capacity(updates.len()),
        source_ids: ids,
        new_r: Vec::with_capacity(updates.len()),
        new_u: Vec::with_capacity(updates.len()),
        info,
    };
    for &(id, r, u) in updates {
        let acct = accounts
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("account for source {id}")))?;
        tx.signatures.push(acct.sign(&digest));
        tx.new_r.push(to_fixed(r)?);
        tx.new_u.push(to_fixed(u)?);
    }
    Ok(tx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(n: u32) -> (Ledger, BTreeMap<SourceId, Account>) {
        let mut l = Ledger::default();
        let mut accts = BTreeMap::new();
        for i in 0..n {
            let a = Account::derive(42, SourceId(i));
            l.register_source(SourceId(i), a.public_key(), 10.0, 10.0).unwrap();
            accts.insert(SourceId(i), a);
        }
        (l, accts)
    }

    fn tx_for(l: &mut Ledger, accts: &BTreeMap<SourceId, Account>, ids: &[u32]) -> FeedbackLog {
        let q = "where?".to_string();
        let sampled: Vec<SourceId> = ids.iter().map(|&i| SourceId(i)).collect();
        let log = l.log_query(query_hash(&q), sampled.clone());
        let info = AuditInfo {
            query: q,
            query_log_id: log,
            report: None,
        };
        let updates: Vec<_> = sampled.iter().map(|&s| (s, 11.5, 9.25)).collect();
        build_feedback(l, accts, info, &updates).unwrap()
    }

    #[test]
    fn registration_defaults_and_duplicates() {
        let (mut l, accts) = setup(6);
        assert_eq!(l.record(SourceId(0)).unwrap().r(), 10.0);
        assert_eq!(l.record(SourceId(0)).unwrap().u(), 10.0);
        let err = l
            .register_source(SourceId(0), accts[&SourceId(0)].public_key(), 10.0, 10.0)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Contract(ContractError::DataSourceAlreadyExists(_))
        ));
        let addrs: std::collections::BTreeSet<_> = l.records().values().map(|r| r.source_address).collect();
        assert_eq!(addrs.len(), 6);
    }

    #[test]
    fn accepted_batch_shares_timestamp_and_marks_log_used() {
        let (mut l, accts) = setup(3);
        let tx = tx_for(&mut l, &accts, &[0, 2]);
        assert_eq!(
            l.query_log(tx.info.query_log_id).unwrap().status,
            QueryLogStatus::Unused
        );
        let receipt = l.submit_feedback(&tx).unwrap();
        assert_eq!(receipt.events.len(), 2);
        let (a, c) = (l.record(SourceId(0)).unwrap(), l.record(SourceId(2)).unwrap());
        assert_eq!(a.timestamp, c.timestamp);
        assert_eq!(a.r(), 11.5);
        assert_eq!(c.u(), 9.25);
        assert_eq!(l.record(SourceId(1)).unwrap().r(), 10.0);
        assert_eq!(l.query_log(tx.info.query_log_id).unwrap().status, QueryLogStatus::Used);
        assert_eq!(receipt.gas, l.gas_of(&tx));
    }

    #[test]
    fn abort_codes_and_rollback() {
        let (mut l, accts) = setup(3);
        let tx = tx_for(&mut l, &accts, &[0, 1]);
        let before = l.snapshot();

        let mut bad = tx.clone();
        bad.signatures.push(bad.signatures[0]);
        assert_eq!(l.submit_feedback(&bad).unwrap_err().code(), "InvalidUpdateCount");

        let mut bad = tx.clone();
        bad.source_ids[1] = SourceId(9);
        assert_eq!(l.submit_feedback(&bad).unwrap_err().code(), "DataSourceNotExists");

        let mut bad = tx.clone();
        bad.signatures[1] = accts[&SourceId(2)].sign(&bad.state_digest);
        assert_eq!(l.submit_feedback(&bad).unwrap_err().code(), "InvalidSignature");

        let mut bad = tx.clone();
        bad.info.query = "other".into();
        assert_eq!(l.submit_feedback(&bad).unwrap_err().code(), "UnknownQueryLog");
        assert_eq!(l.snapshot(), before);

        l.submit_feedback(&tx).unwrap();
        let after = l.snapshot();
        assert_eq!(l.submit_feedback(&tx).unwrap_err().code(), "QueryAlreadyUsed");
        assert_eq!(l.snapshot(), after);
    }

    #[test]
    fn empty_batch_consumes_the_log() {
        let (mut l, accts) = setup(1);
        let tx = tx_for(&mut l, &accts, &[]);
        assert!(l.submit_feedback(&tx).unwrap().events.is_empty());
        assert_eq!(l.submit_feedback(&tx).unwrap_err().code(), "QueryAlreadyUsed");
    }

    #[test]
    fn replay_guard_can_be_disabled() {
        let mut l = Ledger::new(LedgerConfig {
            replay_guard: false,
            ..Default::default()
        });
        let a = Account::derive(1, SourceId(0));
        l.register_source(SourceId(0), a.public_key(), 10.0, 10.0).unwrap();
        let accts: BTreeMap<_, _> = [(SourceId(0), a)].into_iter().collect();
        let tx = tx_for(&mut l, &accts, &[0]);
        l.submit_feedback(&tx).unwrap();
        l.submit_feedback(&tx).unwrap();
        assert_eq!(l.query_events(None, None).len(), 2);
    }

    #[test]
    fn events_fold_filter_and_persist() {
        let (mut l, accts) = setup(3);
        for ids in [&[0u32][..], &[1], &[0, 2]] {
            let tx = tx_for(&mut l, &accts, ids);
            l.submit_feedback(&tx).unwrap();
        }
        assert_eq!(l.query_events(None, None).len(), 4);
        let a: Vec<_> = l.query_events(Some(SourceId(0)), None);
        assert_eq!(a.len(), 2);
        assert!(a[0].log_index < a[1].log_index);
        assert_eq!(l.query_events(None, Some(5..=5)).len(), 2);
        assert_eq!(&fold_events(l.events()).unwrap(), l.records());

        let mut buf = Vec::new();
        write_events_jsonl(l.events(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(parse_events_jsonl(&text).unwrap(), l.events());
        let truncated: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(parse_events_jsonl(&truncated).is_err());

        let restored = Ledger::restore(&l.snapshot()).unwrap();
        assert_eq!(restored, l);
    }

    #[test]
    fn restore_rejects_tampered_scores() {
        let (l, _) = setup(2);
        let mut v: serde_json::Value = serde_json::from_slice(&l.snapshot()).unwrap();
        v["records"]["0"]["reliability"] = serde_json::json!(1);
        assert!(Ledger::restore(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    #[derive(Debug, Clone)]
    enum Tamper {
        None,
        DropSignature,
        UnknownSource,
        SwapSignatures,
        Replay,
        WrongQuery,
        ForeignKey([u8; 32]),
    }

    fn arb_tamper() -> impl Strategy<Value = Tamper> {
        prop_oneof![
            3 => Just(Tamper::None),
            1 => Just(Tamper::DropSignature),
            1 => Just(Tamper::UnknownSource),
            1 => Just(Tamper::SwapSignatures),
            1 => Just(Tamper::Replay),
            1 => Just(Tamper::WrongQuery),
            1 => any::<[u8; 32]>().prop_map(Tamper::ForeignKey),
        ]
    }

    fn arb_ops() -> impl Strategy<Value = Vec<(Vec<bool>, i32, i32, Tamper)>> {
        prop::collection::vec(
            (
                prop::collection::vec(any::<bool>(), 4),
                -500i32..500,
                -500i32..500,
                arb_tamper(),
            ),
            1..12,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aborts_leave_no_trace_and_events_fold_to_state(ops in arb_ops()) {
            let (mut l, accts) = setup(4);
            let mut last_accepted: Option<FeedbackLog> = None;
            for (mask, r, u, tamper) in ops {
                let ids: Vec<SourceId> = (0..4).filter(|&i| mask[i as usize]).map(SourceId).collect();
                let q = format!("q{r}");
                let log = l.log_query(query_hash(&q), ids.clone());
                let info = AuditInfo { query: q, query_log_id: log, report: None };
                let updates: Vec<_> = ids.iter().map(|&s| (s, r as f64 / 7.0, u as f64 / 3.0)).collect();
                let mut tx = build_feedback(&l, &accts, info, &updates).unwrap();
                match &tamper {
                    Tamper::None => {}
                    Tamper::DropSignature => { tx.signatures.pop(); }
                    Tamper::UnknownSource => { tx.source_ids.push(SourceId(99)); tx.signatures.push(accts[&SourceId(0)].sign(&tx.state_digest)); tx.new_r.push(0); tx.new_u.push(0); }
                    Tamper::SwapSignatures => { if tx.signatures.len() >= 2 { tx.signatures.swap(0, 1); } else { tx.signatures.clear(); } }
                    Tamper::Replay => { if let Some(prev) = &last_accepted { tx = prev.clone(); } }
                    Tamper::WrongQuery => { tx.info.query.push('!'); }
                    Tamper::ForeignKey(secret) => {
                        if let (Ok(a), Some(sig)) = (Account::from_secret_bytes(secret), tx.signatures.first_mut()) {
                            if a.public_key() != accts[&tx.source_ids[0]].public_key() {
                                *sig = a.sign(&tx.state_digest);
                            }
                        }
                    }
                }
                let before = l.snapshot();
                match l.submit_feedback(&tx) {
                    Ok(receipt) => {
                        prop_assert_eq!(receipt.events.len(), tx.source_ids.len());
                        for (i, id) in tx.source_ids.iter().enumerate() {
                            let rec = l.record(*id).unwrap();
                            prop_assert_eq!((rec.reliability, rec.usefulness), (tx.new_r[i], tx.new_u[i]));
                            prop_assert_eq!(rec.timestamp, receipt.timestamp);
                        }
                        prop_assert_eq!(l.query_log(tx.info.query_log_id).unwrap().status, QueryLogStatus::Used);
                        last_accepted = Some(tx);
                    }
                    Err(_) => prop_assert_eq!(before, l.snapshot()),
                }
            }
            prop_assert_eq!(&fold_events(l.events()).unwrap(), l.records());
            let restored = Ledger::restore(&l.snapshot()).unwrap();
            prop_assert_eq!(restored, l);
        }

        #[test]
        fn only_the_recorded_key_can_sign(secret in any::<[u8; 32]>(), src in 0u32..4) {
            let (mut l, accts) = setup(4);
            let Ok(forger) = Account::from_secret_bytes(&secret) else { return Ok(()) };
            prop_assume!(forger.public_key() != accts[&SourceId(src)].public_key());
            let mut forged = accts.clone();
            forged.insert(SourceId(src), forger);
            let q = "who?".to_string();
            let log = l.log_query(query_hash(&q), vec![SourceId(src)]);
            let info = AuditInfo { query: q, query_log_id: log, report: None };
            let tx = build_feedback(&l, &forged, info, &[(SourceId(src), 99.0, 99.0)]).unwrap();
            let before = l.snapshot();
            prop_assert_eq!(l.submit_feedback(&tx), Err(ContractError::InvalidSignature(SourceId(src))));
            prop_assert_eq!(before, l.snapshot());
        }
    }
}
