//! `rq` — command-line front door for the search-augmented generation
//! engine: dataset construction, tree-decoding inference, benchmark
//! evaluation, strategy comparison, and retrieval-source resilience.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::EngineConfig;
use rq_core::dataset;
use rq_core::engine::{self, SearchSource, SelectionStrategy};
use rq_core::evaluation::{self, EvalMetric};
use rq_core::retrieval::RetrieverProvider;
use rq_core::selection::{self, EnsembleDomain, GroupKey, ScoredTrajectory};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rq", version, about = "Query-refining retrieval-augmented generation engine")]
struct Cli {
    /// Path to the engine config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for seeded sampling (dataset retention).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retrieval source override: bm25_corpus | embedding_candidates | web_search.
    #[arg(long, global = true, value_parser = parse_source)]
    source: Option<SearchSource>,
    /// Selection strategy override: ppl | confidence | ensemble.
    #[arg(long, global = true, value_parser = parse_strategy)]
    strategy: Option<SelectionStrategy>,
    /// Exploration width override.
    #[arg(long, global = true)]
    width: Option<usize>,
    /// Exploration depth override.
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// Documents per step override.
    #[arg(long = "top-k", global = true)]
    top_k: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build search-augmented training instances from a task pool.
    BuildDataset {
        /// Line-delimited pool file {id, source, input, output, candidates?, support?}.
        #[arg(long)]
        pool: PathBuf,
        /// Fraction of instances keeping their original answer.
        #[arg(long, default_value_t = 0.0)]
        retention: f64,
    },
    /// Answer one question (or a file of questions) via tree decoding.
    Infer {
        #[arg(long, conflicts_with = "file")]
        question: Option<String>,
        /// File with one question per line.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run a benchmark and write the full report.
    Eval {
        /// Line-delimited benchmark file {id, question, choices?, gold[], candidates?}.
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<EvalMetric>,
    },
    /// Run a benchmark and print the per-strategy score table.
    CompareStrategies {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<EvalMetric>,
    },
    /// Compare scores across retrieval sources (live runs or a rows file).
    Resilience {
        /// JSON file with precomputed rows: [["source", [s1, s2, ...]], ...].
        #[arg(long, conflicts_with_all = ["benchmarks", "sources"])]
        rows: Option<PathBuf>,
        /// Comma-separated benchmark files to run per source.
        #[arg(long)]
        benchmarks: Option<String>,
        /// Comma-separated retrieval sources to compare.
        #[arg(long)]
        sources: Option<String>,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<EvalMetric>,
    },
}

fn parse_source(s: &str) -> Result<SearchSource, String> {
    match s {
        "bm25_corpus" => Ok(SearchSource::Bm25Corpus),
        "embedding_candidates" => Ok(SearchSource::EmbeddingCandidates),
        "web_search" => Ok(SearchSource::WebSearch),
        other => Err(format!(
            "unknown source `{other}` (expected bm25_corpus, embedding_candidates, or web_search)"
        )),
    }
}

fn parse_strategy(s: &str) -> Result<SelectionStrategy, String> {
    match s {
        "ppl" => Ok(SelectionStrategy::Ppl),
        "confidence" => Ok(SelectionStrategy::Confidence),
        "ensemble" => Ok(SelectionStrategy::Ensemble),
        other => Err(format!(
            "unknown strategy `{other}` (expected ppl, confidence, or ensemble)"
        )),
    }
}

fn parse_metric(s: &str) -> Result<EvalMetric, String> {
    match s {
        "accuracy" => Ok(EvalMetric::Accuracy),
        "match" => Ok(EvalMetric::Match),
        "f1" => Ok(EvalMetric::F1),
        other => Err(format!(
            "unknown metric `{other}` (expected accuracy, match, or f1)"
        )),
    }
}

/// Failures split by exit code: config problems exit 3, runtime failures 1.
enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CliError::Config(e) | CliError::Runtime(e) => e,
        }
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {:#}", e.error());
        std::process::exit(e.code());
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config(anyhow!("--config is required for this command")))?;
    let mut config = EngineConfig::load(path).map_err(CliError::Config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(source) = cli.source {
        config.search.source = source;
    }
    if let Some(strategy) = cli.strategy {
        config.search.strategy = strategy;
    }
    if let Some(width) = cli.width {
        config.search.width = width;
    }
    if let Some(depth) = cli.depth {
        config.search.max_depth = depth;
    }
    if let Some(top_k) = cli.top_k {
        config.search.top_k = top_k;
        config.dataset.top_k = top_k;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildDataset { pool, retention } => {
            let config = load_config(&cli)?;
            let pool = pool.clone();
            let retention = *retention;
            with_workers(&config, move |config| build_dataset(config, &pool, retention))
                .map_err(CliError::Runtime)
        }
        Command::Infer { question, file } => {
            let config = load_config(&cli)?;
            let question = question.clone();
            let file = file.clone();
            with_workers(&config, move |config| infer(config, question, file))
                .map_err(CliError::Runtime)
        }
        Command::Eval { benchmark, metric } => {
            let config = load_config(&cli)?;
            let benchmark = benchmark.clone();
            let metric = metric.unwrap_or(config.metric.0);
            with_workers(&config, move |config| {
                let report = eval_benchmark(config, &benchmark, metric)?;
                write_output(config, "report.json", &report.to_json())?;
                print!("{}", report.render_table());
                Ok(())
            })
            .map_err(CliError::Runtime)
        }
        Command::CompareStrategies { benchmark, metric } => {
            let config = load_config(&cli)?;
            let benchmark = benchmark.clone();
            let metric = metric.unwrap_or(config.metric.0);
            with_workers(&config, move |config| {
                let report = eval_benchmark(config, &benchmark, metric)?;
                write_output(config, "compare_strategies.json", &report.to_json())?;
                print!("{}", report.render_table());
                Ok(())
            })
            .map_err(CliError::Runtime)
        }
        Command::Resilience {
            rows,
            benchmarks,
            sources,
            metric,
        } => resilience(&cli, rows, benchmarks, sources, *metric),
    }
}

/// Run `f` inside a worker pool of the configured size.
fn with_workers<F>(config: &EngineConfig, f: F) -> Result<()>
where
    F: FnOnce(&EngineConfig) -> Result<()> + Send,
{
    #[cfg(feature = "parallel")]
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .context("building worker pool")?;
        return pool.install(|| f(config));
    }
    f(config)
}

fn write_output(config: &EngineConfig, name: &str, contents: &str) -> Result<PathBuf> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn build_dataset(config: &EngineConfig, pool_path: &PathBuf, retention: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&retention) {
        bail!("retention must be in [0, 1], got {retention}");
    }
    let text = std::fs::read_to_string(pool_path)
        .with_context(|| format!("reading pool {}", pool_path.display()))?;
    let records = dataset::parse_pool(&text)?;
    let annotator = config.make_annotator()?;
    let provider = config.make_provider()?;

    let mut instances =
        dataset::build_pool(&records, &config.dataset, annotator.as_ref(), &provider);
    if retention > 0.0 {
        instances = dataset::apply_retention(&instances, retention, config.seed);
    }
    let manifest = dataset::build_manifest(records.len(), &instances, config.hash());

    let instances_path = write_output(config, "instances.jsonl", &dataset::render_output(&instances))?;
    let manifest_path = write_output(config, "manifest.json", &manifest.to_json())?;
    println!(
        "built {} instances ({} dropped) -> {}",
        manifest.emitted,
        manifest.total_input - manifest.emitted,
        instances_path.display()
    );
    println!("manifest -> {}", manifest_path.display());
    print!("{}", manifest.to_json());
    println!();
    Ok(())
}

fn infer(config: &EngineConfig, question: Option<String>, file: Option<PathBuf>) -> Result<()> {
    let questions: Vec<String> = match (question, file) {
        (Some(q), None) => vec![q],
        (None, Some(path)) => std::fs::read_to_string(&path)
            .with_context(|| format!("reading questions {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        _ => bail!("infer needs exactly one of --question or --file"),
    };
    if questions.is_empty() {
        bail!("no questions to answer");
    }

    let generator = config.make_generator()?;
    let provider = config.make_provider()?;
    let mut dump = String::new();
    for question in &questions {
        let retriever = provider
            .retriever_for(None)
            .map_err(|e| anyhow!("retriever: {e}"))?;
        let trajectories =
            engine::run(question, &config.search, generator.as_ref(), retriever.as_ref())
                .map_err(|e| anyhow!("engine: {e}"))?;
        let scored: Vec<ScoredTrajectory> = trajectories
            .iter()
            .cloned()
            .filter_map(|t| ScoredTrajectory::score(t).ok())
            .collect();
        if scored.is_empty() {
            bail!("no scorable trajectory for {question:?}");
        }
        let answer = match config.search.strategy {
            SelectionStrategy::Ppl => selection::select_ppl(&scored)
                .map_err(|e| anyhow!(e))?
                .trajectory
                .final_answer
                .clone(),
            SelectionStrategy::Confidence => selection::select_confidence(&scored)
                .map_err(|e| anyhow!(e))?
                .trajectory
                .final_answer
                .clone(),
            SelectionStrategy::Ensemble => selection::select_ensemble_trajectory(
                &scored,
                EnsembleDomain::default(),
                GroupKey::default(),
            )
            .map_err(|e| anyhow!(e))?
            .trajectory
            .final_answer
            .clone(),
        };
        println!("answer: {answer}");
        dump.push_str(&engine::dump_trajectories(&trajectories));
    }
    print!("{dump}");
    write_output(config, "infer_trajectories.jsonl", &dump)?;
    Ok(())
}

fn eval_benchmark(
    config: &EngineConfig,
    benchmark: &PathBuf,
    metric: EvalMetric,
) -> Result<evaluation::Report> {
    let text = std::fs::read_to_string(benchmark)
        .with_context(|| format!("reading benchmark {}", benchmark.display()))?;
    let items = evaluation::parse_benchmark(&text)?;
    let generator = config.make_generator()?;
    let provider = config.make_provider()?;
    evaluation::run_benchmark(&items, &config.search, generator.as_ref(), &provider, metric)
        .map_err(|e| anyhow!("benchmark: {e}"))
}

fn resilience(
    cli: &Cli,
    rows_path: &Option<PathBuf>,
    benchmarks: &Option<String>,
    sources: &Option<String>,
    metric: Option<EvalMetric>,
) -> Result<(), CliError> {
    let rows: Vec<(String, Vec<f64>)> = if let Some(path) = rows_path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading rows {}", path.display()))
            .map_err(CliError::Runtime)?;
        serde_json::from_str(&text)
            .context("parsing rows file")
            .map_err(CliError::Runtime)?
    } else {
        let (benchmarks, sources) = match (benchmarks, sources) {
            (Some(b), Some(s)) => (b, s),
            _ => {
                return Err(CliError::Config(anyhow!(
                    "resilience needs either --rows or both --benchmarks and --sources"
                )))
            }
        };
        let config = load_config(cli)?;
        let metric = metric.unwrap_or(config.metric.0);
        let benchmark_paths: Vec<PathBuf> = benchmarks.split(',').map(PathBuf::from).collect();
        let source_list: Vec<SearchSource> = sources
            .split(',')
            .map(|s| parse_source(s.trim()).map_err(|e| CliError::Config(anyhow!(e))))
            .collect::<Result<_, _>>()?;

        let mut rows = Vec::new();
        for source in source_list {
            let mut per_source = config.clone();
            per_source.search.source = source;
            let label = format!("{source:?}");
            let mut scores = Vec::new();
            for benchmark in &benchmark_paths {
                let report = with_workers(&per_source, |c| {
                    eval_benchmark(c, benchmark, metric).map(|r| {
                        scores.push(
                            r.strategy_scores
                                .get(&c.search.strategy.to_string())
                                .copied()
                                .unwrap_or(0.0),
                        );
                    })
                });
                report.map_err(CliError::Runtime)?;
            }
            rows.push((label, scores));
        }
        rows
    };

    let report = evaluation::source_resilience(&rows)
        .map_err(|e| CliError::Runtime(anyhow!("resilience: {e}")))?;
    print!("{}", report.table);
    println!("avg {:.1}  var {:.1}", report.avg, report.var);

    if cli.config.is_some() {
        let config = load_config(cli)?;
        let json = serde_json::to_string_pretty(&report)
            .context("serializing resilience report")
            .map_err(CliError::Runtime)?;
        write_output(&config, "resilience.json", &json).map_err(CliError::Runtime)?;
    }
    Ok(())
}
