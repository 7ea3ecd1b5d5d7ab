use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use jargon_bench::corpus::{Corpus, REFERENCE_SENTENCES, REFERENCE_TERMS, REFERENCE_WORDS};
use jargon_bench::evalstat::{wilcoxon_with, WilcoxonMethod};
use jargon_bench::pipeline::{
    cmd_extract, cmd_labels_build, cmd_score, dry_run, ingest_baseline_files, read_bundle, render_report,
    ExtractOptions, PipelineError, RunConfig, BUNDLE_FILE, REPORT_FILE,
};
use jargon_bench::ExecMode;

/// Personalized medical-jargon extraction benchmark.
#[derive(Parser)]
#[command(name = "jargon-bench", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// OpenAI-compatible base URL; the key comes from JARGON_BENCH_API_KEY.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Response cache (JSON Lines).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for fold shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Answer requests from scripted fixtures instead of the endpoint.
    #[arg(long, global = true)]
    mock_fixtures: Option<PathBuf>,
    /// Never call a backend; cache misses fail.
    #[arg(long, global = true)]
    cache_only: bool,
    /// Upper bound on simultaneous backend calls.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Disable data-parallel alignment and scoring.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus checks.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Gold label construction.
    #[command(subcommand)]
    Labels(LabelsCmd),
    /// Prompt inspection.
    #[command(subcommand)]
    Prompts(PromptsCmd),
    /// Run every grid cell through the gateway and write prediction sets.
    Extract {
        /// Print the request plan and exit without contacting a backend.
        #[arg(long)]
        dry_run: bool,
    },
    /// Store external extractor outputs or published scores for scoring.
    IngestBaseline {
        /// JSON Lines of {system, sentence_id, terms}.
        #[arg(long)]
        terms: Option<PathBuf>,
        /// CSV of model,temperature,role,icl,group,f1.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Score predictions against group labels and write the report bundle.
    Score,
    /// Render a bundle as Markdown.
    Report {
        /// Bundle to render; defaults to <out>/bundle.json.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Destination; defaults to <out>/report.md, `-` for stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Standalone statistics.
    #[command(subcommand)]
    Stats(StatsCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse a corpus and compare its totals with the reference counts.
    Validate {
        /// Corpus file; the bundled corpus when omitted.
        path: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LabelsCmd {
    /// Build pooled and per-group majority labels from annotations.
    Build {
        /// Annotator JSON Lines; defaults to the configured annotations path.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Labels file to write; defaults to the configured labels path.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PromptsCmd {
    /// Write every planned request as JSON Lines.
    Dump {
        /// Only prompts for this sentence.
        #[arg(long)]
        sentence: Option<u32>,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Wilcoxon signed-rank test over paired scores.
    Wilcoxon {
        /// Comma-separated differences (b - a).
        #[arg(long, allow_hyphen_values = true, conflicts_with = "pairs")]
        diffs: Option<String>,
        /// CSV file with columns a,b (header optional).
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    NormalApprox,
}

fn load_config(g: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = &g.endpoint {
        cfg.endpoint = Some(e.clone());
    }
    if let Some(c) = &g.cache {
        cfg.cache = Some(c.clone());
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.max_in_flight {
        cfg.max_in_flight = m;
    }
    Ok(cfg)
}

fn exec_mode(g: &GlobalArgs) -> ExecMode {
    if g.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::default()
    }
}

fn compare(actual: usize, reference: usize) -> String {
    match actual.cmp(&reference) {
        std::cmp::Ordering::Equal => "match".into(),
        std::cmp::Ordering::Greater => format!("+{}", actual - reference),
        std::cmp::Ordering::Less => format!("-{}", reference - actual),
    }
}

fn corpus_validate(path: Option<PathBuf>) -> anyhow::Result<i32> {
    let corpus = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Corpus::parse(&text).map_err(PipelineError::from)?
        }
        None => Corpus::bundled(),
    };
    let s = corpus.stats();
    println!(
        "sentences: {} (reference {REFERENCE_SENTENCES}, {})",
        s.sentences,
        compare(s.sentences, REFERENCE_SENTENCES)
    );
    println!(
        "words: {} tokens = {} lexical + {} punctuation-only; lexical vs reference {REFERENCE_WORDS}: {}",
        s.words,
        s.lexical_words,
        s.punctuation_tokens,
        compare(s.lexical_words, REFERENCE_WORDS)
    );
    println!(
        "units: {} term units ({} multi-word, {} lexical, {} punctuation token(s) inside brackets, {} adjacent bracket pair(s))",
        s.units, s.multiword_units, s.lexical_units, s.bracketed_punctuation_tokens, s.adjacent_multiword_pairs
    );
    println!(
        "terms: {} units - {} punctuation tokens - {} adjacent pairs = {}; vs reference {REFERENCE_TERMS}: {}",
        s.units,
        s.punctuation_tokens,
        s.adjacent_multiword_pairs,
        s.reconciled_terms(),
        compare(s.reconciled_terms(), REFERENCE_TERMS)
    );
    println!("digest: {}", corpus.digest());
    Ok(0)
}

fn parse_pairs(diffs: Option<String>, pairs: Option<PathBuf>) -> anyhow::Result<Vec<(f64, f64)>> {
    if let Some(d) = diffs {
        return d
            .split(',')
            .map(|x| {
                let v: f64 = x.trim().parse().with_context(|| format!("difference {x:?}"))?;
                Ok((0.0, v))
            })
            .collect();
    }
    let Some(path) = pairs else {
        bail!("pass --diffs or --pairs");
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("").parse::<f64>();
        match (field(0), field(1)) {
            (Ok(a), Ok(b)) => out.push((a, b)),
            _ if i == 0 => continue,
            _ => bail!("{} row {}: expected two numbers", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let g = &cli.global;
    match cli.command {
        Command::Corpus(CorpusCmd::Validate { path }) => corpus_validate(path),
        Command::Labels(LabelsCmd::Build { annotations, labels_out }) => {
            let cfg = load_config(g)?;
            let annotations = annotations
                .or(cfg.annotations.clone())
                .context("no annotations file; pass --annotations or set `annotations` in the config")?;
            let out = labels_out.unwrap_or_else(|| cfg.labels_path());
            let corpus = cfg.load_corpus()?;
            let outcome = cmd_labels_build(&corpus, &annotations, &out)?;
            println!("annotators: {}", outcome.annotators);
            for (group, size) in &outcome.group_sizes {
                println!("{group}\t{size}");
            }
            println!("wrote {} label sets to {}", outcome.sets.len(), out.display());
            Ok(0)
        }
        Command::Prompts(PromptsCmd::Dump { sentence, output }) => {
            let cfg = load_config(g)?;
            let (_, planned) = dry_run(&cfg)?;
            let mut text = String::new();
            for p in planned.iter().filter(|p| sentence.is_none_or(|s| p.sentence_id == s)) {
                let line = serde_json::json!({
                    "cell": p.cell.key(),
                    "sentence_id": p.sentence_id,
                    "request_key": p.request.request_key,
                    "n": p.request.config.n,
                    "messages": p.request.messages,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            match output {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
            Ok(0)
        }
        Command::Extract { dry_run: true } => {
            let cfg = load_config(g)?;
            let (summary, _) = dry_run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Extract { dry_run: false } => {
            let cfg = load_config(g)?;
            let opts = ExtractOptions {
                mock_fixtures: g.mock_fixtures.clone(),
                cache_only: g.cache_only,
                exec: exec_mode(g),
                ..Default::default()
            };
            let outcome = cmd_extract(&cfg, &opts)?;
            let m = &outcome.manifest;
            println!(
                "{} requests, {} cells: {} cache hits, {} backend calls, {} retries",
                m.requests, m.cells, m.gateway.cache_hits, m.gateway.backend_calls, m.gateway.retries
            );
            Ok(0)
        }
        Command::IngestBaseline { terms, scores } => {
            if terms.is_none() && scores.is_none() {
                bail!("pass --terms and/or --scores");
            }
            let cfg = load_config(g)?;
            let (systems, rows) = ingest_baseline_files(&cfg, terms.as_deref(), scores.as_deref())?;
            println!("ingested {systems} baseline system(s) and {rows} external score row(s)");
            Ok(0)
        }
        Command::Score => {
            let cfg = load_config(g)?;
            let outcome = cmd_score(&cfg, exec_mode(g))?;
            let b = &outcome.bundle;
            println!("{} tables, {} Wilcoxon rows written to {}", b.tables.len(), b.wilcoxon.len(), cfg.out.display());
            if let Some(i) = &b.improvement {
                println!("improved {}/{}", i.improved, i.total);
            }
            if outcome.partial {
                for gap in &b.gaps {
                    eprintln!("gap: {gap}");
                }
                return Ok(3);
            }
            Ok(0)
        }
        Command::Report { bundle, output } => {
            let cfg = load_config(g)?;
            let bundle_path = bundle.unwrap_or_else(|| cfg.out.join(BUNDLE_FILE));
            let bundle = read_bundle(&bundle_path)?;
            let text = render_report(&bundle);
            match output {
                Some(p) if p.as_os_str() == "-" => std::io::stdout().write_all(text.as_bytes())?,
                other => {
                    let path = other.unwrap_or_else(|| cfg.out.join(REPORT_FILE));
                    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
                }
            }
            Ok(if bundle.is_partial() { 3 } else { 0 })
        }
        Command::Stats(StatsCmd::Wilcoxon { diffs, pairs, method }) => {
            let pairs = parse_pairs(diffs, pairs)?;
            let method = method.map(|m| match m {
                MethodArg::Exact => WilcoxonMethod::Exact,
                MethodArg::NormalApprox => WilcoxonMethod::NormalApprox,
            });
            let result = wilcoxon_with(&pairs, method).map_err(PipelineError::from)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
