//! TOML run configuration.
//!
//! Every section and key is optional; missing values take the values of
//! [`Config::default`]. Unknown keys are rejected so typos do not silently
//! fall back to defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ledger::gas::GasSchedule;
use crate::ledger::{LedgerConfig, DEFAULT_INITIAL_SCORE};
use crate::retrieval::EMBEDDING_DIM;
use crate::rng::RNG_ALGORITHM;
use crate::scoring::{EntropyBins, ImportanceMethod, LexicalEstimator, ShapleyParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub rng: String,
    pub seeds: Seeds,
    pub retrieval: RetrievalConfig,
    pub scoring: ScoringConfig,
    pub ledger: LedgerSection,
    pub answerer: AnswererConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Source sampling, Shapley sampling and query order.
    pub run: u64,
    /// Source account key derivation.
    pub keys: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Sources sampled per query.
    pub n: usize,
    /// Documents fetched per sampled source.
    pub m: usize,
    /// Documents kept for the answer context.
    pub k: usize,
    /// Weight of normalized reliability in the fused score.
    pub alpha: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub method: ImportanceMethod,
    pub tau: f64,
    pub shapley_samples: usize,
    pub exhaustive_limit: usize,
    pub info: LexicalEstimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub initial_r: f64,
    pub initial_u: f64,
    pub replay_guard: bool,
    pub gas: GasSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswererKind {
    Oracle,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswererConfig {
    pub kind: AnswererKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub queries: usize,
    pub warmup: usize,
    pub bin_size: usize,
    pub entropy: EntropyBins,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            rng: RNG_ALGORITHM.to_string(),
            seeds: Seeds::default(),
            retrieval: RetrievalConfig::default(),
            scoring: ScoringConfig::default(),
            ledger: LedgerSection::default(),
            answerer: AnswererConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { run: 2024, keys: 7 }
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            n: 5,
            m: 3,
            k: 2,
            alpha: 0.5,
            dim: EMBEDDING_DIM,
        }
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let sh = ShapleyParams::default();
        ScoringConfig {
            method: ImportanceMethod::McShapley,
            tau: crate::scoring::DEFAULT_GROUNDING_THRESHOLD,
            shapley_samples: sh.samples,
            exhaustive_limit: sh.exhaustive_limit,
            info: LexicalEstimator::default(),
        }
    }
}

impl Default for LedgerSection {
    fn default() -> Self {
        let lc = LedgerConfig::default();
        LedgerSection {
            initial_r: DEFAULT_INITIAL_SCORE,
            initial_u: DEFAULT_INITIAL_SCORE,
            replay_guard: lc.replay_guard,
            gas: lc.gas,
        }
    }
}

impl Default for AnswererConfig {
    fn default() -> Self {
        AnswererConfig {
            kind: AnswererKind::Oracle,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "llama-3.1-8b-instruct".to_string(),
            timeout_secs: 60,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            queries: 1300,
            warmup: 500,
            bin_size: 100,
            entropy: EntropyBins::default(),
        }
    }
}

impl Config {
    pub fn parse(input: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(input).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| input[..s.start.min(input.len())].lines().count().max(1));
            Error::parse(line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        Config::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.rng != RNG_ALGORITHM {
            return bad(format!("unsupported rng {:?}, expected {RNG_ALGORITHM:?}", self.rng));
        }
        let r = &self.retrieval;
        if r.n == 0 || r.m == 0 || r.k == 0 {
            return bad("retrieval.n, retrieval.m and retrieval.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&r.alpha) {
            return bad(format!("retrieval.alpha {} is outside [0, 1]", r.alpha));
        }
        if r.dim == 0 {
            return bad("retrieval.dim must be positive".into());
        }
        let s = &self.scoring;
        if !(0.0..=1.0).contains(&s.tau) {
            return bad(format!("scoring.tau {} is outside [0, 1]", s.tau));
        }
        if s.shapley_samples == 0 {
            return bad("scoring.shapley_samples must be at least 1".into());
        }
        if !s.info.h0.is_finite() || !s.info.lambda.is_finite() {
            return bad("scoring.info parameters must be finite".into());
        }
        for (name, v) in [
            ("initial_r", self.ledger.initial_r),
            ("initial_u", self.ledger.initial_u),
        ] {
            if crate::ledger::to_fixed(v).is_err() {
                return bad(format!("ledger.{name} {v} is not representable"));
            }
        }
        let e = &self.experiment;
        if e.bin_size == 0 {
            return bad("experiment.bin_size must be positive".into());
        }
        let b = &e.entropy;
        if b.bins == 0 || !b.lo.is_finite() || !b.hi.is_finite() || b.lo >= b.hi {
            return bad("experiment.entropy needs at least one bin and lo < hi".into());
        }
        if self.answerer.kind == AnswererKind::Http && self.answerer.endpoint.is_empty() {
            return bad("answerer.endpoint is required for the http answerer".into());
        }
        Ok(())
    }

    pub fn shapley(&self) -> ShapleyParams {
        ShapleyParams {
            samples: self.scoring.shapley_samples,
            exhaustive_limit: self.scoring.exhaustive_limit,
        }
    }

    pub fn ledger_config(&self) -> LedgerConfig {
        LedgerConfig {
            replay_guard: self.ledger.replay_guard,
            gas: self.ledger.gas,
        }
    }
}
