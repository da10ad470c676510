//! `drag`: generate polluted environments, run episodes, compute metrics and
//! audit ledgers.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drag_core::config::{AnswererKind, Config};
use drag_core::corpus::{PollutionStrategy, SourceId, DEFAULT_LEVELS};
use drag_core::experiment::{self, Mode};
use drag_core::ledger::{self, LedgerEvent};
use drag_core::scoring::ImportanceMethod;

#[derive(Parser)]
#[command(name = "drag", version, about = "Reliability-scored decentralized RAG simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a polluted multi-source environment from a QA corpus.
    Generate(GenerateArgs),
    /// Run an episode and write its trace.
    Run(RunArgs),
    /// Compute binned metrics from a run directory.
    Metrics(MetricsArgs),
    /// Verify a run's ledger and dump its events as JSON lines.
    Audit(AuditArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_strategy, default_value = "token")]
    strategy: PollutionStrategy,
    /// Comma-separated pollution level per source.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read at most this many corpus lines.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Environment directory written by `generate`.
    #[arg(long)]
    env: PathBuf,
    /// TOML config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode, default_value = "decentralized")]
    mode: Mode,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    key_seed: Option<u64>,
    /// Sources sampled per query.
    #[arg(long)]
    n: Option<usize>,
    /// Documents fetched per source.
    #[arg(long)]
    m: Option<usize>,
    /// Documents kept in the context.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<ImportanceMethod>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    shapley_samples: Option<usize>,
    #[arg(long)]
    no_replay_guard: bool,
    /// Use the HTTP answerer at this chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to `<run>/metrics`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bin_size: Option<usize>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    run: PathBuf,
    /// Only dump score updates of this source (A, B, ...).
    #[arg(long, value_parser = parse_source)]
    source: Option<SourceId>,
    /// Print the summary only.
    #[arg(long)]
    quiet: bool,
}

fn parse_strategy(s: &str) -> Result<PollutionStrategy, String> {
    s.parse().map_err(|e: drag_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: drag_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<ImportanceMethod, String> {
    s.parse().map_err(|e: drag_core::Error| e.to_string())
}

fn parse_source(s: &str) -> Result<SourceId, String> {
    SourceId::parse_label(s).ok_or_else(|| format!("not a source label: {s}"))
}

fn run_config(a: &RunArgs) -> drag_core::Result<Config> {
    let mut c = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(v) = a.seed {
        c.seeds.run = v;
    }
    if let Some(v) = a.key_seed {
        c.seeds.keys = v;
    }
    if let Some(v) = a.n {
        c.retrieval.n = v;
    }
    if let Some(v) = a.m {
        c.retrieval.m = v;
    }
    if let Some(v) = a.k {
        c.retrieval.k = v;
    }
    if let Some(v) = a.alpha {
        c.retrieval.alpha = v;
    }
    if let Some(v) = a.method {
        c.scoring.method = v;
    }
    if let Some(v) = a.tau {
        c.scoring.tau = v;
    }
    if let Some(v) = a.shapley_samples {
        c.scoring.shapley_samples = v;
    }
    if a.no_replay_guard {
        c.ledger.replay_guard = false;
    }
    if let Some(v) = &a.endpoint {
        c.answerer.kind = AnswererKind::Http;
        c.answerer.endpoint = v.clone();
    }
    if let Some(v) = &a.model {
        c.answerer.model = v.clone();
    }
    if let Some(v) = a.queries {
        c.experiment.queries = v;
    }
    if let Some(v) = a.warmup {
        c.experiment.warmup = v;
    }
    c.validate()?;
    Ok(c)
}

fn execute(cli: Cli) -> drag_core::Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let levels = a.levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
            let m = experiment::cmd_generate(&a.corpus, a.limit, a.strategy, &levels, a.seed, &a.out)?;
            for s in &m.sources {
                println!(
                    "{}\tlevel={}\tdocuments={}\t{}",
                    s.label, s.pollution_level, s.documents, s.file
                );
            }
        }
        Command::Run(a) => {
            let cfg = run_config(&a)?;
            let out = experiment::cmd_run(
                &a.env,
                &cfg,
                a.mode,
                cfg.experiment.queries,
                cfg.experiment.warmup,
                &a.out,
            )?;
            let acc = out
                .post_warmup_accuracy()
                .map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            println!("mode={} queries={} post_warmup_accuracy={acc}", a.mode, out.rows.len());
        }
        Command::Metrics(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("metrics"));
            let m = experiment::cmd_metrics(&a.run, &out, a.bin_size)?;
            println!("bins={} written to {}", m.num_bins(), out.display());
        }
        Command::Audit(a) => {
            let (report, events) = experiment::audit_run(&a.run)?;
            if !a.quiet {
                let selected: Vec<LedgerEvent> = events
                    .into_iter()
                    .filter(|e| match (a.source, e) {
                        (None, _) => true,
                        (Some(s), LedgerEvent::ScoreRecordUpdated(u)) => u.source_id == s,
                        (Some(_), LedgerEvent::SourceRegistered(_)) => false,
                    })
                    .collect();
                let mut stdout = std::io::stdout().lock();
                ledger::write_events_jsonl(&selected, &mut stdout).map_err(|source| drag_core::Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
            }
            eprintln!(
                "audit ok: {} events, {} score updates, {} trace rows consistent",
                report.events, report.score_updates, report.rows_checked
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
