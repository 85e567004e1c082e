//! `steer` — proxy-difference steering from the command line.
//!
//! Subcommands: `decode` (steered generation), `eval` (conflict-set
//! evaluation), `sweep` (alpha sweep with CSV output), `build-dataset`
//! (conflict construction), `build-sft` (proxy fine-tune files), and
//! `serve` (the HTTP gateway).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend/network
//! error. Logs go to stderr; data goes to stdout or the requested files.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use steer_core::dataset::{
    build_conflict_dataset, build_proxy_sft, closed_book_filter, default_answer_matcher,
    load_choice_qa, load_source_qa, write_provenance, write_sft_records, BuildOptions,
    CachedFrequencyClient, FrequencyClient, GenerationClient, HttpClientConfig,
    HttpGenerationClient, LexicalScorer, LlmScorer, Polarity, RankPlan, RelatednessScorer,
    SftOptions, StubFrequencyClient, StubGenerationClient,
};
use steer_core::decode::{
    steered_generate_tokens, ScoringMode, SourceTriple, StopRule, TemplateSet,
};
use steer_core::error::{Error, ErrorClass};
use steer_core::eval::{
    evaluate_items, load_conflict_items, sweep_point, write_report_csv, write_sweep_csv,
    write_sweep_series, CreditSide, EvalOptions, SweepReport,
};
use steer_core::logits::{SteerMode, SteeringConfig};
use steer_core::sources::{HttpBackendConfig, HttpSource, LogitSource, TableLm, WireMode};
use steer_core::vocab::Vocabulary;

#[derive(Parser)]
#[command(
    name = "steer",
    version,
    about = "Steer a model's context sensitivity with proxy models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate text with steered greedy decoding.
    Decode(DecodeArgs),
    /// Evaluate a conflict dataset at one alpha.
    Eval(EvalArgs),
    /// Evaluate a conflict dataset across several alphas and emit CSV.
    Sweep(SweepArgs),
    /// Build a conflict dataset from source QA pairs.
    BuildDataset(BuildDatasetArgs),
    /// Build proxy fine-tune records from multiple-choice QA.
    BuildSft(BuildSftArgs),
    /// Run the steering gateway service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceTypeArg {
    Table,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Topk,
}

impl From<ModeArg> for SteerMode {
    fn from(m: ModeArg) -> SteerMode {
        match m {
            ModeArg::Full => SteerMode::Full,
            ModeArg::Topk => SteerMode::TopK,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoringArg {
    Generate,
    OptionScore,
}

impl From<ScoringArg> for ScoringMode {
    fn from(s: ScoringArg) -> ScoringMode {
        match s {
            ScoringArg::Generate => ScoringMode::Generate,
            ScoringArg::OptionScore => ScoringMode::OptionScore,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CreditArg {
    Context,
    Parametric,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RankPlanArg {
    Cross,
    Cycle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolarityArg {
    Positive,
    Negative,
}

/// The three distribution sources plus connection settings.
#[derive(Args)]
struct SourceArgs {
    /// Base model: table file path or http(s) endpoint.
    #[arg(long)]
    base: String,
    /// Positive (context-faithful) proxy: path or endpoint.
    #[arg(long)]
    pos: String,
    /// Negative (parametric-faithful) proxy: path or endpoint.
    #[arg(long)]
    neg: String,
    /// Force how source strings are interpreted instead of auto-detecting.
    #[arg(long, value_enum)]
    source_type: Option<SourceTypeArg>,
    /// Vocabulary file (JSON array); required when every source is HTTP.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Per-request timeout for HTTP sources, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Retry count for transient HTTP failures.
    #[arg(long, default_value_t = 0)]
    retries: u32,
}

#[derive(Args)]
struct SteerArgs {
    /// Steering strength; positive favors context, negative parametric.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    alpha: f64,
    /// Full-vocabulary steering or black-box top-k reweighting.
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// Candidate count in top-k mode.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Substitute for -inf proxy entries before differencing.
    #[arg(long, default_value_t = steer_core::DEFAULT_LOGIT_FLOOR, allow_hyphen_values = true)]
    logit_floor: f64,
}

impl SteerArgs {
    fn config(&self) -> SteeringConfig {
        SteeringConfig {
            alpha: self.alpha,
            mode: self.mode.into(),
            k: self.k,
            logit_floor: self.logit_floor,
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    steer: SteerArgs,
    /// Prompt file, or '-' for stdin.
    #[arg(long)]
    prompt: String,
    /// Maximum tokens to generate.
    #[arg(long, default_value_t = 16)]
    max_tokens: usize,
    /// Stop after emitting this token (repeatable).
    #[arg(long)]
    stop: Vec<String>,
    /// Write a per-step JSON trace to this path.
    #[arg(long, num_args = 0..=1, default_missing_value = "trace.json")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCommonArgs {
    /// Conflict dataset (JSON Lines).
    #[arg(long)]
    dataset: PathBuf,
    /// Answer extraction: score the options or generate and match a label.
    #[arg(long, value_enum, default_value_t = ScoringArg::OptionScore)]
    scoring: ScoringArg,
    /// Which option counts as correct.
    #[arg(long, value_enum, default_value_t = CreditArg::Context)]
    credit: CreditArg,
    /// Seed for the per-item option shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Token budget for generate-mode answers.
    #[arg(long, default_value_t = 16)]
    max_tokens: usize,
    /// Directory of template overrides (*.txt named by template id).
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    steer: SteerArgs,
    #[command(flatten)]
    eval: EvalCommonArgs,
    /// Output directory for report.json and report.csv; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    steer: SteerArgs,
    #[command(flatten)]
    eval: EvalCommonArgs,
    /// Comma-separated alpha values, e.g. -2,-1,0,1,2.
    #[arg(long, allow_hyphen_values = true)]
    alphas: String,
    /// Output directory for per-alpha reports, sweep.csv, and series.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Source QA pairs (JSON Lines).
    #[arg(long)]
    source: PathBuf,
    /// Output directory for dataset.jsonl and provenance.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Seed for option shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rank assignment: all four combos per item, or cycle one per item.
    #[arg(long, value_enum, default_value_t = RankPlanArg::Cross)]
    rank_plan: RankPlanArg,
    /// Retry budget for perturbation and context generation.
    #[arg(long, default_value_t = 3)]
    gen_retries: u32,
    /// Cap on concurrent client calls.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Chat-completions endpoint for live generation; stub client when absent.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the live endpoint.
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Environment variable holding the endpoint auth token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Per-call timeout for the live endpoint, in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    client_timeout_ms: u64,
    /// Frequency cache file (JSON Lines {term, count, timestamp}).
    #[arg(long)]
    freq_cache: Option<PathBuf>,
}

#[derive(Args)]
struct BuildSftArgs {
    /// Multiple-choice QA items (JSON Lines with distractors).
    #[arg(long)]
    source: PathBuf,
    /// Which proxy the records train.
    #[arg(long, value_enum)]
    polarity: PolarityArg,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
    /// Cap on emitted records.
    #[arg(long)]
    size: Option<usize>,
    /// Retry budget for context generation.
    #[arg(long, default_value_t = 3)]
    gen_retries: u32,
    /// Chat-completions endpoint for live generation; stub client when absent.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the live endpoint.
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Environment variable holding the endpoint auth token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Per-call timeout for the live endpoint, in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    client_timeout_ms: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Gateway configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Backend => 3,
            },
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    if let Err(e) = run(cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::BuildDataset(args) => cmd_build_dataset(args),
        Command::BuildSft(args) => cmd_build_sft(args),
        Command::Serve(args) => cmd_serve(args),
    }
}

enum ResolvedSource {
    Table(TableLm),
    Http(HttpSource),
}

impl ResolvedSource {
    fn as_dyn(&self) -> &dyn LogitSource {
        match self {
            ResolvedSource::Table(t) => t,
            ResolvedSource::Http(h) => h,
        }
    }
}

fn looks_like_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// Resolve --base/--pos/--neg into live sources; tables are loaded first so
/// HTTP sources can borrow their vocabulary when --vocab is absent.
fn resolve_sources(args: &SourceArgs, steer: &SteerArgs) -> Result<[ResolvedSource; 3], CliError> {
    let specs = [&args.base, &args.pos, &args.neg];
    let kinds: Vec<SourceTypeArg> = specs
        .iter()
        .map(|s| match args.source_type {
            Some(forced) => forced,
            None if looks_like_url(s) => SourceTypeArg::Http,
            None => SourceTypeArg::Table,
        })
        .collect();

    let mut tables: Vec<Option<TableLm>> = Vec::new();
    for (spec, kind) in specs.iter().zip(&kinds) {
        tables.push(match kind {
            SourceTypeArg::Table => Some(TableLm::load(spec).map_err(CliError::Core)?),
            SourceTypeArg::Http => None,
        });
    }

    let vocab: Option<Vocabulary> = match &args.vocab {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?)
        }
        None => tables
            .iter()
            .flatten()
            .next()
            .map(|t| t.vocabulary().clone()),
    };

    let mut resolved = Vec::new();
    for (i, (spec, kind)) in specs.iter().zip(&kinds).enumerate() {
        match kind {
            SourceTypeArg::Table => {
                resolved.push(ResolvedSource::Table(tables[i].take().expect("preloaded")))
            }
            SourceTypeArg::Http => {
                let vocab = vocab.clone().ok_or_else(|| {
                    CliError::Usage("HTTP sources need --vocab or at least one table source".into())
                })?;
                // Only the base is queried in top-k wire mode; proxies must
                // serve full vectors.
                let wire_mode = if i == 0 && steer.mode == ModeArg::Topk {
                    WireMode::TopK
                } else {
                    WireMode::Full
                };
                let cfg = HttpBackendConfig {
                    endpoint: (*spec).clone(),
                    mode: wire_mode,
                    k: steer.k,
                    timeout_ms: args.timeout_ms,
                    retries: args.retries,
                    auth_token: None,
                };
                resolved.push(ResolvedSource::Http(
                    HttpSource::new(cfg, vocab).map_err(CliError::Core)?,
                ));
            }
        }
    }
    Ok(resolved.try_into().unwrap_or_else(|_| unreachable!()))
}

fn read_prompt(spec: &str) -> Result<String, CliError> {
    if spec == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|source| Error::Io {
                path: "<stdin>".into(),
                source,
            })?;
        Ok(text)
    } else {
        std::fs::read_to_string(spec).map_err(|source| {
            CliError::Core(Error::Io {
                path: spec.to_string(),
                source,
            })
        })
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    let cfg = args.steer.config();
    cfg.validate().map_err(CliError::Core)?;
    let sources = resolve_sources(&args.sources, &args.steer)?;
    let triple = SourceTriple::new(
        sources[0].as_dyn(),
        sources[1].as_dyn(),
        sources[2].as_dyn(),
    );
    let vocab = triple.vocabulary();

    let prompt_text = read_prompt(&args.prompt)?;
    let prompt_tokens = vocab.encode_text(&prompt_text).map_err(CliError::Core)?;
    let mut stop_tokens = Vec::new();
    for word in &args.stop {
        stop_tokens.push(
            vocab
                .id_of(word)
                .ok_or_else(|| CliError::Usage(format!("stop token {word:?} not in vocabulary")))?,
        );
    }
    let stop = StopRule {
        max_tokens: args.max_tokens,
        stop_tokens,
    };
    let trace_top = args.trace.as_ref().map(|_| cfg.k.max(5));
    let generation = steered_generate_tokens(&triple, &cfg, &prompt_tokens, &stop, trace_top)
        .map_err(CliError::Core)?;

    if let (Some(path), Some(trace)) = (&args.trace, &generation.trace) {
        let json = serde_json::to_string_pretty(trace).expect("trace serializes");
        std::fs::write(path, json).map_err(|source| {
            CliError::Core(Error::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
        log::info!("trace written to {}", path.display());
    }
    println!("{}", generation.text);
    Ok(())
}

fn load_templates(dir: &Option<PathBuf>) -> Result<TemplateSet, CliError> {
    Ok(match dir {
        Some(path) => TemplateSet::load_dir(path).map_err(CliError::Core)?,
        None => TemplateSet::default(),
    })
}

fn eval_options(common: &EvalCommonArgs) -> EvalOptions {
    EvalOptions {
        scoring: common.scoring.into(),
        credit: match common.credit {
            CreditArg::Context => CreditSide::Context,
            CreditArg::Parametric => CreditSide::Parametric,
        },
        seed: common.seed,
        max_tokens: common.max_tokens,
        ..EvalOptions::default()
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.steer.config();
    let sources = resolve_sources(&args.sources, &args.steer)?;
    let triple = SourceTriple::new(
        sources[0].as_dyn(),
        sources[1].as_dyn(),
        sources[2].as_dyn(),
    );
    let items = load_conflict_items(&args.eval.dataset).map_err(CliError::Core)?;
    let templates = load_templates(&args.eval.templates)?;
    let opts = eval_options(&args.eval);
    let report =
        evaluate_items(&triple, &cfg, &templates, &items, &opts).map_err(CliError::Core)?;

    log::info!(
        "evaluated {} items at alpha {}: accuracy {:.2}%, sensitivity {:.2}",
        report.n_items,
        report.alpha,
        report.accuracy,
        report.sensitivity
    );
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_file(&dir.join("report.json"), &json)?;
            let mut csv = Vec::new();
            write_report_csv(&report, &mut csv).map_err(CliError::Core)?;
            write_file(
                &dir.join("report.csv"),
                std::str::from_utf8(&csv).expect("csv is utf-8"),
            )?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn parse_alphas(raw: &str) -> Result<Vec<f64>, CliError> {
    let alphas: Result<Vec<f64>, _> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let alphas = alphas.map_err(|e| CliError::Usage(format!("bad --alphas value: {e}")))?;
    if alphas.is_empty() {
        return Err(CliError::Usage(
            "--alphas must list at least one value".into(),
        ));
    }
    Ok(alphas)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let alphas = parse_alphas(&args.alphas)?;
    let cfg = args.steer.config();
    let sources = resolve_sources(&args.sources, &args.steer)?;
    let triple = SourceTriple::new(
        sources[0].as_dyn(),
        sources[1].as_dyn(),
        sources[2].as_dyn(),
    );
    let items = load_conflict_items(&args.eval.dataset).map_err(CliError::Core)?;
    let templates = load_templates(&args.eval.templates)?;
    let opts = eval_options(&args.eval);

    // An interrupt stops between alphas; whatever finished is still flushed,
    // with the sweep marked partial.
    let interrupted = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));
    {
        let flag = std::sync::Arc::clone(&interrupted);
        if let Err(e) = ctrlc::set_handler(move || {
            flag.store(true, std::sync::atomic::Ordering::SeqCst);
        }) {
            log::warn!("interrupt handler unavailable: {e}");
        }
    }
    let mut sweep = SweepReport {
        points: Vec::new(),
        partial: false,
    };
    for &alpha in &alphas {
        if interrupted.load(std::sync::atomic::Ordering::SeqCst) {
            sweep.partial = true;
            log::warn!(
                "interrupted after {} of {} alphas; flushing partial reports",
                sweep.points.len(),
                alphas.len()
            );
            break;
        }
        let point = sweep_point(&triple, &cfg, &templates, &items, alpha, &opts);
        match (&point.report, &point.error) {
            (Some(report), _) => log::info!("alpha {alpha}: sensitivity {:.2}", report.sensitivity),
            (None, Some(error)) => log::warn!("alpha {alpha}: {error}"),
            (None, None) => {}
        }
        sweep.points.push(point);
    }

    ensure_dir(&args.out)?;
    for point in &sweep.points {
        if let Some(report) = &point.report {
            let json = serde_json::to_string_pretty(report).expect("report serializes");
            write_file(
                &args.out.join(format!("report_alpha_{}.json", point.alpha)),
                &json,
            )?;
        }
    }
    write_file(
        &args.out.join("sweep.json"),
        &serde_json::to_string_pretty(&sweep).expect("sweep serializes"),
    )?;
    let mut csv = Vec::new();
    write_sweep_csv(&sweep, &mut csv).map_err(CliError::Core)?;
    write_file(
        &args.out.join("sweep.csv"),
        std::str::from_utf8(&csv).expect("csv is utf-8"),
    )?;
    let mut series = Vec::new();
    write_sweep_series(&sweep, &mut series).map_err(CliError::Core)?;
    write_file(
        &args.out.join("series.tsv"),
        std::str::from_utf8(&series).expect("series is utf-8"),
    )?;
    Ok(())
}

fn make_gen_client(
    endpoint: &Option<String>,
    model: &str,
    auth_env: &Option<String>,
    timeout_ms: u64,
) -> Result<Box<dyn GenerationClient>, CliError> {
    Ok(match endpoint {
        Some(url) => Box::new(
            HttpGenerationClient::new(
                HttpClientConfig {
                    endpoint: url.clone(),
                    model: model.to_string(),
                    auth_env: auth_env.clone(),
                    timeout_ms,
                },
                TemplateSet::default(),
            )
            .map_err(CliError::Core)?,
        ),
        None => Box::new(StubGenerationClient::new()),
    })
}

fn cmd_build_dataset(args: BuildDatasetArgs) -> Result<(), CliError> {
    let sources = load_source_qa(&args.source).map_err(CliError::Core)?;
    // Closed-book filtering needs the target model's own answers; offline we
    // credit every item as confidently known.
    let retained = closed_book_filter(&sources, |qa| Ok(qa.answer.clone()), default_answer_matcher);
    log::info!(
        "retained {} of {} source items",
        retained.len(),
        sources.len()
    );

    let gen_client = make_gen_client(
        &args.endpoint,
        &args.model,
        &args.auth_env,
        args.client_timeout_ms,
    )?;
    let stub_freq = StubFrequencyClient::new();
    let freq_client: Box<dyn FrequencyClient> = match &args.freq_cache {
        Some(path) => {
            Box::new(CachedFrequencyClient::with_disk(stub_freq, path).map_err(CliError::Core)?)
        }
        None => Box::new(CachedFrequencyClient::new(stub_freq)),
    };

    let opts = BuildOptions {
        seed: args.seed,
        rank_plan: match args.rank_plan {
            RankPlanArg::Cross => RankPlan::Cross,
            RankPlanArg::Cycle => RankPlan::Cycle,
        },
        max_retries: args.gen_retries,
        max_in_flight: args.max_in_flight,
    };
    let output =
        build_conflict_dataset(&retained, gen_client.as_ref(), freq_client.as_ref(), &opts)
            .map_err(CliError::Core)?;

    ensure_dir(&args.out)?;
    steer_core::eval::write_conflict_items(args.out.join("dataset.jsonl"), &output.items)
        .map_err(CliError::Core)?;
    write_provenance(args.out.join("provenance.jsonl"), &output.provenance)
        .map_err(CliError::Core)?;
    log::info!(
        "built {} items ({} skipped) into {}",
        output.items.len(),
        output.skipped.len(),
        args.out.display()
    );
    for (id, reason) in &output.skipped {
        log::warn!("skipped {id}: {reason}");
    }
    Ok(())
}

fn cmd_build_sft(args: BuildSftArgs) -> Result<(), CliError> {
    let items = load_choice_qa(&args.source).map_err(CliError::Core)?;
    let gen_client = make_gen_client(
        &args.endpoint,
        &args.model,
        &args.auth_env,
        args.client_timeout_ms,
    )?;
    let scorer: Box<dyn RelatednessScorer> = match &args.endpoint {
        Some(_) => Box::new(LlmScorer::new(gen_client.as_ref())),
        None => Box::new(LexicalScorer),
    };
    let polarity = match args.polarity {
        PolarityArg::Positive => Polarity::Positive,
        PolarityArg::Negative => Polarity::Negative,
    };
    let opts = SftOptions {
        size: args.size,
        max_retries: args.gen_retries,
    };
    let records = build_proxy_sft(
        &items,
        polarity,
        gen_client.as_ref(),
        scorer.as_ref(),
        &opts,
    )
    .map_err(CliError::Core)?;
    write_sft_records(&args.out, &records).map_err(CliError::Core)?;
    let side = match polarity {
        Polarity::Positive => "positive",
        Polarity::Negative => "negative",
    };
    log::info!(
        "wrote {} {side} records to {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let config = steer_gateway::GatewayConfig::load(&args.config).map_err(CliError::Core)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| {
            CliError::Core(Error::Io {
                path: "<tokio runtime>".into(),
                source,
            })
        })?;
    runtime
        .block_on(steer_gateway::run(
            config,
            |addr| log::info!("listening on http://{addr}"),
            async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down, draining in-flight requests");
            },
        ))
        .map_err(CliError::Core)
}
