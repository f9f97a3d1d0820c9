//! `infecta` — command-line front end for the corpus poisoning
//! research toolkit: index anchor statistics, rank hijacking points,
//! inject payloads, measure infection rates, analyze query pools,
//! run the burstiness detector, simulate multi-generation propagation,
//! and merge run artifacts into a report.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad data, failed
//! invariant), 2 on a usage error. All file outputs are written
//! atomically and contain a `config` echo of the inputs that produced
//! them; nothing embeds wall-clock state, so a rerun with the same
//! seed reproduces every artifact byte for byte.

mod artifacts;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};

use infecta_core::corpus::load_corpus;
use infecta_core::detect::{self, DetectionOutcome};
use infecta_core::hps::{build_index, export_index, hps_score, import_index, top_k_anchors, IndexScope, NgramIndex, ScoredAnchor};
use infecta_core::inject::{load_manifest, poison_corpus, save_manifest, PlanRecord, PoisonConfig, PositionStrategy, VictimSelection};
use infecta_core::lm::NgramLm;
use infecta_core::metrics::{conditional_infection_rate, infection_rate, load_topics, SyntheticSet};
use infecta_core::shell::{load_payloads, GlueGenerator, HttpGlueGenerator, WrapMethod};
use infecta_core::sim::{load_query_pool, run_lineage, LineageDoc, SimConfig};
use infecta_core::trace::load_traces;
use infecta_core::{io, Error};

use artifacts::*;

// ---------- top-level parser ----------

#[derive(Parser)]
#[command(
    name = "infecta",
    version,
    about = "Corpus poisoning research toolkit: inject, measure, detect, simulate"
)]
struct Cli {
    /// Cap the worker thread count (0 = automatic).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an n-gram anchor index from a corpus.
    Index(IndexArgs),
    /// Rank hijacking-point anchors by score, or score one anchor.
    Hps(HpsArgs),
    /// Poison a corpus with payloads and write the manifest.
    Inject(InjectArgs),
    /// Measure the infection rate of a response set.
    MeasureIr(MeasureArgs),
    /// Measure topic relevance over a query pool.
    AnalyzeQueries(QueriesArgs),
    /// Flag bursty samples with the smoothed-surprisal detector.
    Detect(DetectArgs),
    /// Run a multi-generation propagation simulation.
    Simulate(SimulateArgs),
    /// Merge manifests, lineages, and detection runs into one report.
    Report(ReportArgs),
}

// CLI-side copies of core enums so clap value parsing stays decoupled
// from the library's serialization names.

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Responses,
    ResponsesAndQueries,
}

impl From<ScopeArg> for IndexScope {
    fn from(s: ScopeArg) -> IndexScope {
        match s {
            ScopeArg::Responses => IndexScope::ResponsesOnly,
            ScopeArg::ResponsesAndQueries => IndexScope::ResponsesAndQueries,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Start,
    End,
    Random,
    Hps,
}

impl From<StrategyArg> for PositionStrategy {
    fn from(s: StrategyArg) -> PositionStrategy {
        match s {
            StrategyArg::Start => PositionStrategy::Start,
            StrategyArg::End => PositionStrategy::End,
            StrategyArg::Random => PositionStrategy::Random,
            StrategyArg::Hps => PositionStrategy::Hps,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectionArg {
    UniformRandom,
    SimilarityRanked,
}

impl From<SelectionArg> for VictimSelection {
    fn from(s: SelectionArg) -> VictimSelection {
        match s {
            SelectionArg::UniformRandom => VictimSelection::UniformRandom,
            SelectionArg::SimilarityRanked => VictimSelection::SimilarityRanked,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WrapArg {
    Fixed,
    LlmGlue,
}

impl From<WrapArg> for WrapMethod {
    fn from(w: WrapArg) -> WrapMethod {
        match w {
            WrapArg::Fixed => WrapMethod::Fixed,
            WrapArg::LlmGlue => WrapMethod::LlmGlue,
        }
    }
}

// ---------- error / exit handling ----------

enum CliError {
    Usage(String),
    Domain(anyhow::Error),
}

type CmdResult = Result<(), CliError>;

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Domain(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> CliError {
        CliError::Domain(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {}", msg);
            std::process::exit(2);
        }
        Err(CliError::Domain(err)) => {
            eprintln!("error: {:#}", err);
            std::process::exit(1);
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        if jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| anyhow!("could not size the worker pool: {}", e))?;
        }
    }
    match &cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Hps(a) => cmd_hps(a),
        Command::Inject(a) => cmd_inject(a),
        Command::MeasureIr(a) => cmd_measure_ir(a),
        Command::AnalyzeQueries(a) => cmd_analyze_queries(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// JSON wire name of a serde-renamed enum value ("hps", "llm_glue", …).
fn wire_name<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "?".into())
}

fn file_checksum(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from(Error::io(path, e)))?;
    Ok(io::sha256_hex(&bytes))
}

// ---------- index ----------

#[derive(clap::Args)]
struct IndexArgs {
    /// Corpus to index (record lines).
    #[arg(long)]
    corpus: PathBuf,
    /// Anchor n-gram size.
    #[arg(long, default_value_t = 3)]
    ngram: usize,
    /// Which text fields feed the index.
    #[arg(long, value_enum, default_value_t = ScopeArg::Responses)]
    scope: ScopeArg,
    /// Output index file.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_index(a: &IndexArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let build = build_index(&corpus, a.ngram, a.scope.into())?;
    if let Some(warning) = &build.warning {
        log::warn!("{}", warning);
    }
    export_index(&build.index, &a.out)?;
    println!(
        "indexed {} anchors (n={}) from {} samples -> {}",
        build.index.anchors.len(),
        a.ngram,
        corpus.len(),
        a.out.display()
    );
    Ok(())
}

// ---------- hps ----------

#[derive(clap::Args)]
struct HpsArgs {
    /// Corpus to index on the fly (and to verify a prebuilt index against).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prebuilt index file.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Anchor n-gram size when building on the fly.
    #[arg(long, default_value_t = 3)]
    ngram: usize,
    /// Index scope when building on the fly.
    #[arg(long, value_enum, default_value_t = ScopeArg::Responses)]
    scope: ScopeArg,
    /// How many ranked anchors to emit.
    #[arg(long, default_value_t = 20)]
    top: usize,
    /// Ignore anchors occurring fewer times than this.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Score this single anchor (space-separated tokens) instead of ranking.
    #[arg(long)]
    anchor: Option<String>,
    /// Accept an index whose checksum does not match the corpus.
    #[arg(long)]
    force: bool,
    /// Output JSON document.
    #[arg(long)]
    out: PathBuf,
}

fn resolve_index(
    corpus: &Option<PathBuf>,
    index: &Option<PathBuf>,
    ngram: usize,
    scope: ScopeArg,
    force: bool,
) -> Result<NgramIndex, CliError> {
    match (corpus, index) {
        (_, Some(index_path)) => {
            let expect = match corpus {
                Some(c) => Some(load_corpus(c)?.checksum),
                None => None,
            };
            Ok(import_index(index_path, expect.as_deref(), force)?)
        }
        (Some(corpus_path), None) => {
            let corpus = load_corpus(corpus_path)?;
            let build = build_index(&corpus, ngram, scope.into())?;
            if let Some(warning) = &build.warning {
                log::warn!("{}", warning);
            }
            Ok(build.index)
        }
        (None, None) => Err(usage("pass --corpus, --index, or both")),
    }
}

fn cmd_hps(a: &HpsArgs) -> CmdResult {
    let index = resolve_index(&a.corpus, &a.index, a.ngram, a.scope, a.force)?;
    let config = HpsConfigEcho {
        corpus_checksum: index.corpus_checksum.clone(),
        ngram: index.n,
        scope: index.scope,
        top: a.top,
        min_count: a.min_count,
    };
    let doc = match &a.anchor {
        Some(anchor_text) => {
            let tokens: Vec<String> =
                anchor_text.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(usage("--anchor must contain at least one token"));
            }
            let score = hps_score(&index, &tokens)?;
            let entry = index.get(&tokens).expect("scored anchors exist");
            let scored = ScoredAnchor {
                anchor: tokens,
                score,
                count: entry.count,
                max_continuation: entry.max_continuation().expect("scored anchors continue"),
            };
            println!(
                "anchor [{}]: score {:.4} (count {}, max continuation {})",
                scored.anchor.join(" "),
                scored.score,
                scored.count,
                scored.max_continuation
            );
            HpsDoc { config, anchor: Some(scored), anchors: vec![] }
        }
        None => {
            let anchors = top_k_anchors(&index, a.top, a.min_count);
            println!("ranked {} anchors (top {} by score):", anchors.len(), a.top);
            for s in anchors.iter().take(10) {
                println!("  {:>8.4}  [{}]  count {}", s.score, s.anchor.join(" "), s.count);
            }
            HpsDoc { config, anchor: None, anchors }
        }
    };
    io::write_json_doc(&a.out, &doc)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------- inject ----------

#[derive(clap::Args)]
struct InjectArgs {
    /// Corpus to poison.
    #[arg(long)]
    corpus: PathBuf,
    /// Payload file (JSON object or array).
    #[arg(long)]
    payloads: PathBuf,
    /// Poison rate in [0, 1]; floor(N * rate) samples change.
    #[arg(long)]
    rate: f64,
    /// Payload position strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Hps)]
    strategy: StrategyArg,
    /// Victim selection policy.
    #[arg(long, value_enum, default_value_t = SelectionArg::UniformRandom)]
    selection: SelectionArg,
    /// Payload shell construction.
    #[arg(long, value_enum, default_value_t = WrapArg::Fixed)]
    wrap: WrapArg,
    /// Mix standalone serialized poison records with spliced ones.
    #[arg(long)]
    mixup: bool,
    /// Anchor index (required for --strategy hps).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Accept an index whose checksum does not match the corpus.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Glue-endpoint timeout for --wrap llm-glue.
    #[arg(long, default_value_t = 30_000)]
    glue_timeout_ms: u64,
    /// Output poisoned corpus.
    #[arg(long)]
    out: PathBuf,
    /// Output manifest file.
    #[arg(long)]
    manifest: PathBuf,
}

fn glue_from_env(wrap: WrapArg, timeout_ms: u64) -> Option<HttpGlueGenerator> {
    if wrap != WrapArg::LlmGlue {
        return None;
    }
    match HttpGlueGenerator::from_env(Duration::from_millis(timeout_ms)) {
        Some(generator) => Some(generator),
        None => {
            log::warn!(
                "--wrap llm-glue requested but {} is not set; every shell will fall back to fixed quoting",
                infecta_core::shell::ENV_LLM_URL
            );
            None
        }
    }
}

fn cmd_inject(a: &InjectArgs) -> CmdResult {
    if a.strategy == StrategyArg::Hps && a.index.is_none() {
        return Err(usage("--strategy hps needs --index (build one with `infecta index`)"));
    }
    let corpus = load_corpus(&a.corpus)?;
    let payloads = load_payloads(&a.payloads)?;
    let index = match &a.index {
        Some(path) => Some(import_index(path, Some(&corpus.checksum), a.force)?),
        None => None,
    };
    let http = glue_from_env(a.wrap, a.glue_timeout_ms);
    let glue: Option<&dyn GlueGenerator> = http.as_ref().map(|g| g as &dyn GlueGenerator);

    let config = PoisonConfig {
        rate: a.rate,
        strategy: a.strategy.into(),
        selection: a.selection.into(),
        wrap: a.wrap.into(),
        mixup: a.mixup,
        anchor_source: vec![],
        seed: a.seed,
    };
    let (poisoned, manifest, plans) =
        poison_corpus(&corpus, &config, &payloads, glue, index.as_ref())?;

    poisoned.save(&a.out)?;
    save_manifest(&manifest, &plans, &a.manifest)?;

    let standalone = plans.iter().filter(|p| matches!(p, PlanRecord::Standalone { .. })).count();
    let fallbacks = plans
        .iter()
        .filter(|p| matches!(p, PlanRecord::Via { plan } if plan.wrapped.fallback_note.is_some()))
        .count();
    println!(
        "poisoned {} of {} samples ({} spliced, {} standalone), {} skipped",
        plans.len(),
        corpus.len(),
        plans.len() - standalone,
        standalone,
        manifest.skipped.len()
    );
    if fallbacks > 0 {
        println!("note: {} shells fell back to fixed quoting", fallbacks);
    }
    println!("corpus {} -> {}", a.out.display(), poisoned.checksum);
    println!("manifest {}", a.manifest.display());
    Ok(())
}

// ---------- measure-ir ----------

#[derive(clap::Args)]
struct MeasureArgs {
    /// Response set to measure (record lines with query/response).
    #[arg(long)]
    input: PathBuf,
    /// Detection key to search for.
    #[arg(long)]
    key: String,
    /// Topic file for conditional rates.
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Output JSON document.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_measure_ir(a: &MeasureArgs) -> CmdResult {
    let set = SyntheticSet::load(&a.input)?;
    let ir = infection_rate(&set, &a.key)?;

    let mut topic_rows = Vec::new();
    if let Some(topics_path) = &a.topics {
        let queries: Vec<String> = set.records.iter().map(|r| r.query.clone()).collect();
        for topic in load_topics(topics_path)? {
            let matched = queries.iter().filter(|q| topic.matches(q)).count();
            let conditional = match conditional_infection_rate(&set, &a.key, &topic) {
                Ok(rate) => Some(rate),
                Err(Error::EmptyConditionMatch { .. }) => None,
                Err(other) => return Err(other.into()),
            };
            topic_rows.push(TopicMeasurement {
                name: topic.name.clone(),
                matched_queries: matched,
                query_relevance: matched as f64 / set.len() as f64,
                conditional_infection_rate: conditional,
            });
        }
    }

    let doc = MeasureDoc {
        config: MeasureConfigEcho {
            input: a.input.display().to_string(),
            input_checksum: file_checksum(&a.input)?,
            detection_key: a.key.clone(),
            topics: a.topics.as_ref().map(|p| p.display().to_string()),
        },
        n_records: set.len(),
        infection_rate: ir,
        topics: topic_rows,
    };
    io::write_json_doc(&a.out, &doc)?;
    println!("infection rate {:.4} over {} records", ir, set.len());
    for row in &doc.topics {
        match row.conditional_infection_rate {
            Some(rate) => println!(
                "  topic {:<20} relevance {:.4}  conditional ir {:.4}",
                row.name, row.query_relevance, rate
            ),
            None => println!(
                "  topic {:<20} relevance {:.4}  conditional ir n/a (no matching queries)",
                row.name, row.query_relevance
            ),
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------- analyze-queries ----------

#[derive(clap::Args)]
struct QueriesArgs {
    /// Query pool (record lines with id/query).
    #[arg(long)]
    queries: PathBuf,
    /// Topic file (JSON array of {name, match_terms}).
    #[arg(long)]
    topics: PathBuf,
    /// Output JSON document.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_analyze_queries(a: &QueriesArgs) -> CmdResult {
    let pool = load_query_pool(&a.queries)?;
    let topics = load_topics(&a.topics)?;
    let texts: Vec<String> = pool.iter().map(|q| q.query.clone()).collect();

    let rows: Vec<TopicRelevanceRow> = topics
        .iter()
        .map(|topic| {
            let matched = texts.iter().filter(|q| topic.matches(q)).count();
            TopicRelevanceRow {
                name: topic.name.clone(),
                matched,
                relevance: matched as f64 / texts.len() as f64,
            }
        })
        .collect();
    let unmatched = texts.iter().filter(|q| !topics.iter().any(|t| t.matches(q))).count();

    let doc = QueryAnalysisDoc {
        config: QueryAnalysisConfigEcho {
            queries: a.queries.display().to_string(),
            queries_checksum: file_checksum(&a.queries)?,
            topics: a.topics.display().to_string(),
        },
        n_queries: texts.len(),
        topics: rows,
        unmatched,
    };
    io::write_json_doc(&a.out, &doc)?;
    println!("{} queries, {} matching no topic", doc.n_queries, doc.unmatched);
    for row in &doc.topics {
        println!("  {:<20} {:>5} queries  relevance {:.4}", row.name, row.matched, row.relevance);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------- detect ----------

#[derive(clap::Args)]
struct DetectArgs {
    /// Precomputed surprisal traces (record lines).
    #[arg(long, requires = "labels", conflicts_with_all = ["score_corpus", "score_fit", "lm_order", "lm_k"])]
    traces: Option<PathBuf>,
    /// Corpus supplying ground-truth labels for --traces, by sample id.
    #[arg(long, requires = "traces")]
    labels: Option<PathBuf>,
    /// Corpus to score with the n-gram surrogate; labels come from its
    /// own label field.
    #[arg(long)]
    score_corpus: Option<PathBuf>,
    /// Corpus to fit the surrogate on (defaults to the scored corpus).
    #[arg(long, requires = "score_corpus")]
    score_fit: Option<PathBuf>,
    #[arg(long, requires = "score_corpus")]
    lm_order: Option<usize>,
    #[arg(long, requires = "score_corpus")]
    lm_k: Option<f64>,
    /// Moving-average kernel (odd).
    #[arg(long, default_value_t = detect::DEFAULT_KERNEL)]
    kernel: usize,
    /// Fixed decision threshold; skips calibration.
    #[arg(long, conflicts_with = "target_fpr")]
    threshold: Option<f64>,
    /// Calibrate the threshold to this false-positive rate on the
    /// clean-labeled traces (default 0.05).
    #[arg(long)]
    target_fpr: Option<f64>,
    /// Output JSON document.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_detect(a: &DetectArgs) -> CmdResult {
    // Assemble traces + labels from whichever mode was selected.
    let (traces, poisoned_by_id, mode, input, input_checksum, fit_checksum, lm_order, lm_k) =
        match (&a.traces, &a.score_corpus) {
            (Some(trace_path), None) => {
                let labels_path = a.labels.as_ref().expect("clap enforces --labels");
                let label_corpus = load_corpus(labels_path)?;
                let by_id: HashMap<String, bool> = label_corpus
                    .samples
                    .iter()
                    .map(|s| (s.id.clone(), s.label.is_poisoned()))
                    .collect();
                let traces = load_traces(trace_path)?;
                for t in &traces {
                    if !by_id.contains_key(&t.sample_id) {
                        return Err(Error::UnlabeledTrace { sample_id: t.sample_id.clone() }.into());
                    }
                }
                let checksum = file_checksum(trace_path)?;
                (traces, by_id, "traces", trace_path.clone(), checksum, None, None, None)
            }
            (None, Some(score_path)) => {
                let score = load_corpus(score_path)?;
                let order = a.lm_order.unwrap_or(infecta_core::lm::DEFAULT_ORDER);
                let k = a.lm_k.unwrap_or(infecta_core::lm::DEFAULT_SMOOTHING);
                let (lm, fit_checksum) = match &a.score_fit {
                    Some(fit_path) => {
                        let fit = load_corpus(fit_path)?;
                        (NgramLm::fit(&fit, order, k)?, Some(fit.checksum))
                    }
                    None => (NgramLm::fit(&score, order, k)?, None),
                };
                let traces: Vec<_> = score
                    .samples
                    .iter()
                    .map(|s| lm.trace_response(&s.id, &s.query, &s.response))
                    .collect();
                let by_id: HashMap<String, bool> = score
                    .samples
                    .iter()
                    .map(|s| (s.id.clone(), s.label.is_poisoned()))
                    .collect();
                let checksum = score.checksum.clone();
                (traces, by_id, "corpus", score_path.clone(), checksum, fit_checksum, Some(order), Some(k))
            }
            (None, None) => {
                return Err(usage("pass --traces with --labels, or --score-corpus"));
            }
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        };

    let statistics: Vec<Option<f64>> = traces
        .iter()
        .map(|t| detect::trace_statistic(&t.surprisal, a.kernel))
        .collect::<infecta_core::Result<_>>()?;

    let (threshold, calibrated, target_used) = match a.threshold {
        Some(threshold) => (threshold, false, None),
        None => {
            let target = a.target_fpr.unwrap_or(0.05);
            let clean_stats: Vec<f64> = traces
                .iter()
                .zip(statistics.iter())
                .filter(|(t, s)| !poisoned_by_id[&t.sample_id] && s.is_some())
                .map(|(_, s)| s.unwrap())
                .collect();
            (detect::calibrate_threshold(&clean_stats, target)?, true, Some(target))
        }
    };

    let outcomes: Vec<DetectOutcomeRow> = traces
        .iter()
        .zip(statistics.iter())
        .map(|(t, statistic)| DetectOutcomeRow {
            outcome: DetectionOutcome {
                sample_id: t.sample_id.clone(),
                statistic: *statistic,
                flagged: matches!(statistic, Some(s) if *s > threshold),
            },
            poisoned: poisoned_by_id[&t.sample_id],
        })
        .collect();
    let report = detect::evaluate(
        &outcomes.iter().map(|o| (o.outcome.flagged, o.poisoned)).collect::<Vec<_>>(),
    );

    let doc = DetectDoc {
        config: DetectConfigEcho {
            mode: mode.into(),
            kernel: a.kernel,
            target_fpr: target_used,
            lm_order,
            lm_k,
            input: input.display().to_string(),
            input_checksum,
            fit_checksum,
        },
        threshold,
        calibrated,
        report,
        outcomes,
    };
    io::write_json_doc(&a.out, &doc)?;

    let flagged = doc.outcomes.iter().filter(|o| o.outcome.flagged).count();
    println!(
        "flagged {} of {} samples at threshold {:.4}{}",
        flagged,
        doc.outcomes.len(),
        threshold,
        if calibrated { " (calibrated)" } else { "" }
    );
    println!(
        "precision {:.2}%  recall {:.2}%  accuracy {:.2}%  fpr {:.2}%  f1 {:.2}%",
        doc.report.precision_pct,
        doc.report.recall_pct,
        doc.report.accuracy_pct,
        doc.report.false_positive_rate_pct,
        doc.report.f1_pct
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------- simulate ----------

#[derive(clap::Args)]
struct SimulateArgs {
    /// Base training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Pool of clean queries; each generation consumes a disjoint slice.
    #[arg(long)]
    query_pool: PathBuf,
    /// Queries per generation.
    #[arg(long)]
    queries: usize,
    #[arg(long, default_value_t = infecta_core::sim::DEFAULT_GENERATIONS)]
    generations: usize,
    #[arg(long, default_value_t = 1)]
    responses_per_query: usize,
    /// Poison rate for the base corpus; 0 runs a clean control lineage.
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Hps)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = SelectionArg::UniformRandom)]
    selection: SelectionArg,
    #[arg(long, value_enum, default_value_t = WrapArg::Fixed)]
    wrap: WrapArg,
    #[arg(long)]
    mixup: bool,
    /// Payload file; required when --rate > 0.
    #[arg(long)]
    payloads: Option<PathBuf>,
    /// Detection key; defaults to the first payload's key.
    #[arg(long)]
    key: Option<String>,
    /// Anchor index (required for --strategy hps when poisoning).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Accept an index whose checksum does not match the corpus.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = infecta_core::lm::DEFAULT_ORDER)]
    lm_order: usize,
    #[arg(long, default_value_t = infecta_core::sim::DEFAULT_SIM_SMOOTHING)]
    lm_k: f64,
    #[arg(long, default_value_t = infecta_core::sim::DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Glue-endpoint timeout for --wrap llm-glue.
    #[arg(long, default_value_t = 30_000)]
    glue_timeout_ms: u64,
    /// Output lineage document.
    #[arg(long)]
    out: PathBuf,
    /// Also write each generation's responses into this directory.
    #[arg(long)]
    sets_dir: Option<PathBuf>,
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let poisoning = a.rate > 0.0;
    if poisoning && a.payloads.is_none() {
        return Err(usage("--rate > 0 needs --payloads"));
    }
    if poisoning && a.strategy == StrategyArg::Hps && a.index.is_none() {
        return Err(usage("--strategy hps needs --index (build one with `infecta index`)"));
    }

    let corpus = load_corpus(&a.corpus)?;
    let pool = load_query_pool(&a.query_pool)?;
    let payloads = match &a.payloads {
        Some(path) => load_payloads(path)?,
        None => vec![],
    };
    let key = match (&a.key, payloads.first()) {
        (Some(key), _) => key.clone(),
        (None, Some(payload)) => payload.detection_key.clone(),
        (None, None) => {
            return Err(usage("a clean run (--rate 0) without --payloads needs --key"));
        }
    };
    let index = match &a.index {
        Some(path) => Some(import_index(path, Some(&corpus.checksum), a.force)?),
        None => None,
    };
    let http = glue_from_env(a.wrap, a.glue_timeout_ms);
    let glue: Option<&dyn GlueGenerator> = http.as_ref().map(|g| g as &dyn GlueGenerator);

    let config = SimConfig {
        generations: a.generations,
        queries_per_generation: a.queries,
        responses_per_query: a.responses_per_query,
        poison: poisoning.then(|| PoisonConfig {
            rate: a.rate,
            strategy: a.strategy.into(),
            selection: a.selection.into(),
            wrap: a.wrap.into(),
            mixup: a.mixup,
            anchor_source: vec![],
            seed: a.seed,
        }),
        lm_order: a.lm_order,
        lm_k: a.lm_k,
        max_tokens: a.max_tokens,
        seed: a.seed,
    };

    let run = run_lineage(&corpus, &pool, &config, &payloads, &key, index.as_ref(), glue)?;
    io::write_json_doc(&a.out, &run.doc)?;

    if let Some(dir) = &a.sets_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::from(Error::io(dir, e)))?;
        for (g, set) in run.synthetic.iter().enumerate() {
            set.save(&dir.join(format!("gen{}.jsonl", g)))?;
        }
    }

    println!(
        "{} lineage over {} generations (seed {}):",
        if poisoning { "poisoned" } else { "clean" },
        a.generations,
        a.seed
    );
    for rec in &run.doc.generations {
        println!(
            "  gen {}: infection rate {:.4} over {} responses",
            rec.generation_index, rec.infection_rate, rec.n_records
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------- report ----------

#[derive(clap::Args)]
struct ReportArgs {
    /// Poisoning manifest (repeatable).
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Lineage document from `simulate` (repeatable).
    #[arg(long = "lineage")]
    lineages: Vec<PathBuf>,
    /// Detection document from `detect` (repeatable).
    #[arg(long = "detection")]
    detections: Vec<PathBuf>,
    /// Output JSON document.
    #[arg(long)]
    out: PathBuf,
}

fn read_json_doc<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::from(Error::io(path, e)))?;
    serde_json::from_str(&raw).map_err(|e| {
        CliError::from(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })
    })
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    if a.manifests.is_empty() && a.lineages.is_empty() && a.detections.is_empty() {
        return Err(usage("pass at least one --manifest, --lineage, or --detection"));
    }

    // Every manifest and lineage must trace back to the same clean
    // corpus; silently merging runs from different corpora would make
    // every cross-run comparison meaningless.
    let mut base: Option<(String, String)> = None; // (checksum, source description)
    let mut check_base = |checksum: &str, source: String| -> Result<(), CliError> {
        match &base {
            None => {
                base = Some((checksum.to_string(), source));
                Ok(())
            }
            Some((expected, first_source)) if expected != checksum => {
                Err(CliError::from(Error::ChecksumMismatch {
                    expected: format!("{} (from {})", expected, first_source),
                    found: format!("{} (from {})", checksum, source),
                    what: "report input".into(),
                }))
            }
            Some(_) => Ok(()),
        }
    };

    let mut poison_runs = Vec::new();
    for path in &a.manifests {
        let (manifest, plans) = load_manifest(path)?;
        check_base(&manifest.corpus_checksum, path.display().to_string())?;
        poison_runs.push(PoisonRunRow {
            rate: manifest.config.rate,
            strategy: wire_name(&manifest.config.strategy),
            selection: wire_name(&manifest.config.selection),
            wrap: wire_name(&manifest.config.wrap),
            mixup: manifest.config.mixup,
            seed: manifest.config.seed,
            plans: plans.len(),
            skipped: manifest.skipped.len(),
            corpus_checksum: manifest.corpus_checksum.clone(),
            output_checksum: manifest.output_checksum.clone(),
        });
    }

    let mut rate_sweep = Vec::new();
    for path in &a.lineages {
        let doc: LineageDoc = read_json_doc(path)?;
        check_base(&doc.base_checksum, path.display().to_string())?;
        let generations: Vec<f64> =
            doc.generations.iter().map(|g| g.infection_rate).collect();
        rate_sweep.push(RateSweepRow {
            rate: doc.config.poison.as_ref().map(|p| p.rate).unwrap_or(0.0),
            seed: doc.config.seed,
            final_infection_rate: generations.last().copied().unwrap_or(0.0),
            generations,
        });
    }
    rate_sweep.sort_by(|a, b| {
        a.rate.partial_cmp(&b.rate).expect("finite rates").then(a.seed.cmp(&b.seed))
    });

    let mut detections = Vec::new();
    for path in &a.detections {
        let doc: DetectDoc = read_json_doc(path)?;
        detections.push(DetectionSummaryRow {
            mode: doc.config.mode,
            kernel: doc.config.kernel,
            threshold: doc.threshold,
            calibrated: doc.calibrated,
            report: doc.report,
        });
    }

    let doc = ReportDoc {
        inputs: ReportInputs {
            manifests: a.manifests.iter().map(|p| p.display().to_string()).collect(),
            lineages: a.lineages.iter().map(|p| p.display().to_string()).collect(),
            detections: a.detections.iter().map(|p| p.display().to_string()).collect(),
        },
        base_checksum: base.map(|(checksum, _)| checksum),
        poison_runs,
        rate_sweep,
        detections,
    };
    io::write_json_doc(&a.out, &doc)?;

    if !doc.rate_sweep.is_empty() {
        println!("rate sweep ({} lineages):", doc.rate_sweep.len());
        println!("  {:>6}  {:>6}  {}", "rate", "seed", "infection rate by generation");
        for row in &doc.rate_sweep {
            let gens: Vec<String> =
                row.generations.iter().map(|g| format!("{:.4}", g)).collect();
            println!("  {:>6.3}  {:>6}  {}", row.rate, row.seed, gens.join(" -> "));
        }
    }
    for row in &doc.detections {
        println!(
            "detection ({}, kernel {}): precision {:.2}%  recall {:.2}%  fpr {:.2}%",
            row.mode,
            row.kernel,
            row.report.precision_pct,
            row.report.recall_pct,
            row.report.false_positive_rate_pct
        );
    }
    println!(
        "merged {} manifests, {} lineages, {} detections -> {}",
        doc.inputs.manifests.len(),
        doc.inputs.lineages.len(),
        doc.inputs.detections.len(),
        a.out.display()
    );
    Ok(())
}
