use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use autoform_core::bench::{bench_items, run_benchmark, GatewayProver};
use autoform_core::config::AppConfig;
use autoform_core::corpus::{extract_problems, preprocess, Problem, RawDocument, DEFAULT_HEADER_PATTERN};
use autoform_core::jsonl::{file_sha256, read_all, write_all};
use autoform_core::llm::{ChatBackend, Gateway, HttpBackend, ScriptedBackend, VirtualClock};
use autoform_core::pipeline::{
    corpus_hash, dataset_records, resume, run_corpus, DatasetRecord, JsonlSink, RunLog, RunOptions, Services,
    LOG_FORMAT_VERSION,
};
use autoform_core::prompts::{ExemplarSet, Rating};
use autoform_core::rating::{rate_dataset, rating_distribution, RatingScope};
use autoform_core::report::{
    ablation_table, compute_classifier_metrics, compute_pipeline_stats, confusion_from_labels, verdict_labels,
    LabelRecord,
};
use autoform_core::verify::{ReplPool, StubVerifier, Verifier};

/// Autoformalization of competition mathematics into Lean 4 statements.
#[derive(Debug, Parser)]
#[command(name = "autoform", version)]
struct Cli {
    /// Log verbosity for diagnostics on standard error.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract numbered problems from markdown files.
    Ingest(IngestArgs),
    /// Drop geometry problems and split multi-goal problems.
    Preprocess(PreprocessArgs),
    /// Translate, verify and check problems; writes the dataset and run log.
    Formalize(FormalizeArgs),
    /// Rate dataset statements on the five quality dimensions.
    Rate(RateArgs),
    /// Benchmark a prover on a sample of dataset statements.
    Bench(BenchArgs),
    /// Pipeline statistics, classifier metrics and ablation tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scripted LLM responses instead of live endpoints.
    #[arg(long, value_name = "SCRIPT_JSON")]
    mock_llm: Option<PathBuf>,
    /// Worker count.
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct LeanArgs {
    /// Canned verifier responses instead of a Lean REPL.
    #[arg(long, value_name = "RULES_JSON")]
    stub_verifier: Option<PathBuf>,
    /// REPL launch command, split on whitespace.
    #[arg(long)]
    lean_cmd: Option<String>,
    /// Lean project directory the REPL runs in.
    #[arg(long)]
    lean_dir: Option<PathBuf>,
    /// Per-statement check timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Markdown files, one per source document.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Regex with one capture group for the problem number.
    #[arg(long)]
    pattern: Option<String>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where dropped geometry problems go.
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// Where the count report and review flags go.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct FormalizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    feedback_rounds: Option<u32>,
    #[arg(long, overrides_with = "no_few_shot")]
    few_shot: bool,
    #[arg(long, overrides_with = "few_shot")]
    no_few_shot: bool,
    /// Translator sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the run recorded in --log.
    #[arg(long)]
    resume: bool,
    /// Exemplar JSON replacing the built-in pair.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    lean: LeanArgs,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rate only the first statement of each problem.
    #[arg(long)]
    per_problem: bool,
    /// Where the text histograms go.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    attempts: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file whose `[endpoints.prover]` table configures the prover.
    #[arg(long)]
    prover_config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    lean: LeanArgs,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
struct ReportArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print an aligned text table.
    #[arg(long)]
    table: bool,
    #[command(subcommand)]
    sub: Option<ReportCommand>,
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// Consistency-check metrics against gold labels.
    Metrics {
        /// JSONL of {problem_id, same} human labels.
        #[arg(long)]
        gold: PathBuf,
        /// JSONL of {problem_id, same} predictions, or a run log.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare runs of the same corpus.
    Ablation {
        /// `name=run.log.jsonl`, repeated per arm.
        #[arg(long = "arm", required = true)]
        arms: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        table: bool,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    config: AppConfig,
    input: String,
    input_sha256: String,
    corpus_hash: String,
    versions: BTreeMap<String, String>,
    started_at: u64,
    #[serde(default)]
    finished_at: Option<u64>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn manifest_path(log: &Path) -> PathBuf {
    let mut name = log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    log.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::default()),
    }
}

fn build_gateway(cfg: &AppConfig, mock: Option<&Path>) -> Result<Gateway> {
    let endpoints = cfg.resolved_endpoints();
    Ok(match mock {
        Some(p) => {
            let script = ScriptedBackend::from_file(p).with_context(|| format!("loading script {}", p.display()))?;
            Gateway::new(endpoints, Arc::new(script) as Arc<dyn ChatBackend>).with_clock(Arc::new(VirtualClock::new()))
        }
        None => Gateway::new(endpoints, Arc::new(HttpBackend::new())),
    })
}

fn build_verifier(cfg: &mut AppConfig, lean: &LeanArgs, workers: usize) -> Result<Box<dyn Verifier>> {
    if let Some(p) = &lean.stub_verifier {
        return Ok(Box::new(StubVerifier::from_file(p)?));
    }
    if let Some(cmd) = &lean.lean_cmd {
        cfg.lean.launch_command = cmd.split_whitespace().map(String::from).collect();
    }
    if let Some(dir) = &lean.lean_dir {
        cfg.lean.working_dir = dir.clone();
    }
    if let Some(t) = lean.timeout {
        cfg.lean.check_timeout_s = t;
    }
    cfg.lean.pool_size = cfg.lean.pool_size.max(workers);
    Ok(Box::new(ReplPool::new(cfg.lean.clone())))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let pattern = a.pattern.as_deref().unwrap_or(DEFAULT_HEADER_PATTERN);
    let mut problems = Vec::new();
    for path in &a.input {
        let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let source_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "doc".into());
        problems.extend(extract_problems(&RawDocument { source_id, body }, pattern)?);
    }
    write_all(&a.out, &problems)?;
    eprintln!("extracted {} problems", problems.len());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = load_config(a.model.config.as_deref())?;
    let workers = a.model.concurrency.unwrap_or(cfg.workers);
    let gateway = build_gateway(&cfg, a.model.mock_llm.as_deref())?;
    let problems: Vec<Problem> = read_all(&a.input)?;
    let out = preprocess(&problems, &gateway, workers)?;
    write_all(&a.out, &out.kept)?;
    if let Some(p) = &a.dropped {
        write_all(p, &out.dropped)?;
    }
    let summary = serde_json::json!({"report": out.report, "review": out.review, "usage": gateway.usage_totals()});
    match &a.report {
        Some(p) => write_json(p, &summary)?,
        None => eprintln!("{}", serde_json::to_string(&out.report)?),
    }
    Ok(())
}

fn cmd_formalize(a: FormalizeArgs) -> Result<()> {
    let mut cfg = load_config(a.model.config.as_deref())?;
    if let Some(k) = a.samples {
        cfg.run.samples_per_problem = k;
    }
    if let Some(r) = a.feedback_rounds {
        cfg.run.feedback_rounds = r;
    }
    if a.few_shot {
        cfg.run.few_shot = true;
    }
    if a.no_few_shot {
        cfg.run.few_shot = false;
    }
    if let Some(t) = a.temperature {
        cfg.run.translator_temperature = t;
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = a.model.concurrency {
        cfg.workers = w;
    }
    cfg.run.validate()?;

    let problems: Vec<Problem> = read_all(&a.input)?;
    let input_sha256 = file_sha256(&a.input)?;
    let mpath = manifest_path(&a.log);
    let mut manifest = RunManifest {
        command: "formalize".into(),
        config: cfg.clone(),
        input: a.input.display().to_string(),
        input_sha256,
        corpus_hash: corpus_hash(&problems),
        versions: BTreeMap::from([
            ("autoform".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("run_log_format".to_string(), LOG_FORMAT_VERSION.to_string()),
        ]),
        started_at: unix_now(),
        finished_at: None,
    };
    if a.resume {
        let prior: RunManifest = serde_json::from_str(
            &std::fs::read_to_string(&mpath).with_context(|| format!("reading manifest {}", mpath.display()))?,
        )?;
        if prior.input_sha256 != manifest.input_sha256 {
            bail!(
                "input file changed since the run started (manifest {})",
                mpath.display()
            );
        }
        manifest.started_at = prior.started_at;
    }
    write_json(&mpath, &manifest)?;

    let exemplars = match &a.exemplars {
        Some(p) => ExemplarSet::from_json(&std::fs::read_to_string(p)?)?,
        None => ExemplarSet::builtin(),
    };
    let gateway = build_gateway(&cfg, a.model.mock_llm.as_deref())?;
    let workers = cfg.workers;
    let verifier = build_verifier(&mut cfg, &a.lean, workers)?;
    let services = Services {
        gateway: &gateway,
        verifier: verifier.as_ref(),
        exemplars: &exemplars,
    };
    let opts = RunOptions { workers: cfg.workers };

    let log = if a.resume {
        let prior = RunLog::read(&a.log)?;
        let mut sink = JsonlSink::append_to(&a.log)?;
        resume(prior, &problems, &cfg.run, &services, opts, &mut sink)?
    } else {
        let mut sink = JsonlSink::create(&a.log)?;
        run_corpus(&problems, &cfg.run, &services, opts, &mut sink)?
    };

    let replay = log.replay();
    let records = dataset_records(&replay.outcomes, &problems);
    write_all(&a.out, &records)?;
    manifest.finished_at = Some(unix_now());
    write_json(&mpath, &manifest)?;

    let usage = gateway.usage_totals();
    eprintln!(
        "{} problems: {} accepted, {} incomplete; {} prompt + {} completion tokens",
        problems.len(),
        records.len(),
        replay.incomplete.len(),
        usage.total.prompt_tokens,
        usage.total.completion_tokens
    );
    if !replay.incomplete.is_empty() {
        bail!("{} problems incomplete; rerun with --resume", replay.incomplete.len());
    }
    Ok(())
}

fn cmd_rate(a: RateArgs) -> Result<()> {
    let cfg = load_config(a.model.config.as_deref())?;
    let workers = a.model.concurrency.unwrap_or(cfg.workers);
    let gateway = build_gateway(&cfg, a.model.mock_llm.as_deref())?;
    let records: Vec<DatasetRecord> = read_all(&a.input)?;
    let scope = if a.per_problem {
        RatingScope::PerProblem
    } else {
        RatingScope::PerStatement
    };
    let entries = rate_dataset(&records, &gateway, scope, workers)?;
    write_all(&a.out, &entries)?;
    let dist = rating_distribution(&entries);
    if let Some(p) = &a.report {
        std::fs::write(p, dist.render_text())?;
    }
    match dist.fraction_at_least(Rating::AboveAverage) {
        Some(f) => eprintln!(
            "{} rated, {} unrated; {:.2}% above average or better",
            dist.rated,
            dist.unrated,
            f * 100.0
        ),
        None => eprintln!("no entries rated ({} unrated)", dist.unrated),
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut cfg = load_config(a.model.config.as_deref())?;
    if let Some(p) = &a.prover_config {
        let prover_cfg = AppConfig::load(p)?;
        cfg.endpoints.extend(prover_cfg.endpoints);
    }
    if let Some(n) = a.sample {
        cfg.bench.sample_size = n;
    }
    if let Some(n) = a.attempts {
        cfg.bench.attempts_per_problem = n;
    }
    if let Some(s) = a.seed {
        cfg.bench.seed = s;
    }
    let workers = a.model.concurrency.unwrap_or(cfg.workers);
    let records: Vec<DatasetRecord> = read_all(&a.input)?;
    let items = bench_items(&records);
    let gateway = build_gateway(&cfg, a.model.mock_llm.as_deref())?;
    let verifier = build_verifier(&mut cfg, &a.lean, workers)?;
    let prover = GatewayProver {
        gateway: &gateway,
        seed: cfg.bench.seed,
    };
    let result = run_benchmark(&items, &cfg.bench, &prover, verifier.as_ref(), workers)?;
    write_json(&a.out, &result)?;
    eprintln!(
        "solved {}/{} (pass rate {:.4})",
        result.solved_count,
        result.problems.len(),
        result.pass_rate
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    match a.sub {
        Some(ReportCommand::Metrics { gold, pred, out }) => {
            let gold: Vec<LabelRecord> = read_all(&gold)?;
            let pred = match RunLog::read(&pred) {
                Ok(log) => verdict_labels(&log),
                Err(_) => read_all(&pred)?,
            };
            let (counts, unmatched) = confusion_from_labels(&gold, &pred);
            if unmatched > 0 {
                eprintln!("{unmatched} gold labels had no prediction and were skipped");
            }
            let metrics = compute_classifier_metrics(&counts);
            emit_json(
                out.as_deref(),
                &serde_json::json!({"counts": counts, "metrics": metrics, "unmatched": unmatched}),
            )
        }
        Some(ReportCommand::Ablation { arms, out, table }) => {
            let mut logs = Vec::new();
            for arm in arms {
                let Some((name, path)) = arm.split_once('=') else {
                    bail!("--arm expects name=path, got {arm}");
                };
                logs.push((name.to_string(), RunLog::read(Path::new(path))?));
            }
            let t = ablation_table(&logs)?;
            if table {
                eprint!("{}", t.render_text());
            }
            emit_json(out.as_deref(), &t)
        }
        None => {
            let Some(log) = a.log else {
                bail!(UsageError("report needs --log or a subcommand".into()));
            };
            let stats = compute_pipeline_stats(&RunLog::read(&log)?)?;
            if a.table {
                eprint!("{}", stats.render_text());
            }
            emit_json(a.out.as_deref(), &stats)
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .init();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Formalize(a) => cmd_formalize(a),
        Command::Rate(a) => cmd_rate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
