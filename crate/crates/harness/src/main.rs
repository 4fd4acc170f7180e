use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use entailscope_core::archive::{DatasetRef, RunDir, SampleRef};
use entailscope_core::dataset::{DatasetStore, SampleIds};
use entailscope_core::MethodId;
use entailscope_gateway::ResponseCache;
use entailscope_harness::annotate::{self, AnnotatedRun, AppState};
use entailscope_harness::config::Config;
use entailscope_harness::experiment::{run_experiment, RunSpec};
use entailscope_harness::report::{self, AccuracyCell};
use entailscope_harness::HarnessError;

const DEFAULT_CONFIG: &str = "entailscope.toml";

#[derive(Debug, Parser)]
#[command(name = "entailscope", version, about = "Guided entailment reasoning for hallucination detection")]
struct Cli {
    /// Configuration file (defaults to ./entailscope.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a JSONL dataset and add it to the store.
    Ingest { name: String, file: PathBuf },
    /// Draw a balanced sample and write its id list.
    Sample {
        dataset: String,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (defaults to <store>/<dataset>/sample-<n>-<seed>.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one method x model x dataset cell.
    Run(RunArgs),
    #[command(subcommand)]
    Report(ReportCommand),
    #[command(subcommand)]
    Annotate(AnnotateCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, value_parser = parse_method)]
    method: MethodId,
    /// A model name from the config, or `<provider>/<model>`.
    #[arg(long)]
    model: String,
    /// Use this sample id list instead of drawing a fresh sample.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Append the chain-of-thought request (ignored for reasoning models).
    #[arg(long)]
    cot: bool,
    #[arg(long)]
    run_id: Option<String>,
    /// Run directory (defaults to <runs>/<run id>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Response cache file (defaults to cache.jsonl in the run directory).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Jsonl,
}

#[derive(Debug, Args)]
struct CellSource {
    /// Accuracy cells as JSON lines.
    #[arg(long)]
    cells: Vec<PathBuf>,
    /// Run directories.
    #[arg(long)]
    runs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// Treatment minus baseline accuracy with model and family averages.
    Delta {
        #[command(flatten)]
        source: CellSource,
        #[arg(long, value_parser = parse_method, default_value = "baseline")]
        baseline: MethodId,
        #[arg(long, value_parser = parse_method, default_value = "clatter")]
        treatment: MethodId,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Accuracy averaged over models per method and dataset.
    Ablation {
        #[command(flatten)]
        source: CellSource,
        #[arg(long, value_parser = parse_method, value_delimiter = ',',
              default_value = "baseline,ablate_decomp,ablate_3way,ablate_attribution")]
        methods: Vec<MethodId>,
        /// Restrict to one family (LLM or LRM).
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Reasoning-quality metric means over a run's annotations.
    Metrics {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum AnnotateCommand {
    /// Write a run's annotation tasks as JSON lines.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API for one or more runs.
    Serve {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Add annotation records from a JSONL file to a run.
    Import {
        #[arg(long)]
        run: PathBuf,
        file: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.parse::<MethodId>().map_err(|e| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<Config, HarnessError> {
    match path {
        Some(p) => Config::load(p),
        None if Path::new(DEFAULT_CONFIG).exists() => Config::load(Path::new(DEFAULT_CONFIG)),
        None => Ok(Config::default()),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| HarnessError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render(format: Format, text: impl FnOnce() -> String, jsonl: impl FnOnce() -> String) -> String {
    match format {
        Format::Text => text(),
        Format::Jsonl => jsonl(),
    }
}

fn load_cells(source: &CellSource) -> Result<Vec<AccuracyCell>, HarnessError> {
    let mut cells = Vec::new();
    for path in &source.cells {
        cells.extend(report::read_cells(path)?);
    }
    if !source.runs.is_empty() {
        let runs = source
            .runs
            .iter()
            .map(|dir| Ok(RunDir::open(dir)?.load()?))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        report::check_samples(&runs)?;
        cells.extend(report::cells_from_runs(&runs)?);
    }
    if cells.is_empty() {
        return Err(HarnessError::Input("no accuracy cells given (use --cells or --runs)".into()));
    }
    Ok(cells)
}

fn default_run_id(method: MethodId, model: &str, dataset: &str) -> String {
    let model: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{dataset}-{method}-{model}")
}

async fn run_cell(config: &Config, args: &RunArgs) -> Result<(), HarnessError> {
    let store = DatasetStore::new(&config.store);
    let dataset = store.load(&args.dataset)?;
    let (instances, sample) = match &args.sample {
        Some(path) => {
            let ids = SampleIds::read(path)?;
            let instances = dataset.select(&ids)?;
            let sample = SampleRef::of(&instances, None, None);
            (instances, sample)
        }
        None => {
            let n = args.n_per_class.unwrap_or(config.n_per_class);
            let seed = args.seed.unwrap_or(config.seed);
            let instances = dataset.balanced_sample(n, seed)?;
            let sample = SampleRef::of(&instances, Some(n), Some(seed));
            (instances, sample)
        }
    };
    let model = config.model(&args.model)?;
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(args.method, &args.model, &args.dataset));
    let dir = args.out.clone().unwrap_or_else(|| config.runs.join(&run_id));
    std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    let cache_path = args.cache.clone().unwrap_or_else(|| dir.join("cache.jsonl"));
    let cache = ResponseCache::open(&cache_path).map_err(entailscope_gateway::GatewayError::from)?;
    let gateway = config.gateway()?.with_cache(Arc::new(cache));
    let spec = RunSpec {
        run_id,
        method: args.method,
        model,
        cot: args.cot,
        dataset: DatasetRef {
            name: dataset.manifest.name.clone(),
            source_digest: dataset.manifest.source_digest.clone(),
        },
        sample,
        instances,
    };
    let outcome = run_experiment(&gateway, &config.templates()?, &config.parser()?, &spec, &dir).await?;
    let s = &outcome.summary;
    println!("run: {} ({})", spec.run_id, dir.display());
    println!(
        "instances: {}  completed: {}  skipped: {}  parse failures: {}  disagreements: {}",
        s.instances, s.completed, s.skipped, s.parse_failures, s.disagreements
    );
    println!(
        "accuracy: {}  (parsed only: {})",
        s.accuracy.map_or_else(|| "--".into(), |a| a.fmt2()),
        s.accuracy_parsed.map_or_else(|| "--".into(), |a| a.fmt2())
    );
    println!("processed now: {}  provider calls: {}", outcome.processed, outcome.backend_calls);
    if s.degraded {
        println!("warning: more than 5% of instances were skipped");
    }
    Ok(())
}

async fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { name, file } => {
            let report = DatasetStore::new(&config.store).ingest(&name, &file)?;
            let m = &report.dataset.manifest;
            println!("{}: {} records ({})", m.name, m.record_count, m.source_digest);
            for (label, count) in &m.label_counts {
                println!("  {label}: {count}");
            }
            for bad in &report.malformed {
                eprintln!("line {}: {}", bad.line, bad.reason);
            }
            if !report.malformed.is_empty() {
                eprintln!("{} malformed lines rejected", report.malformed.len());
            }
        }
        Command::Sample {
            dataset,
            n_per_class,
            seed,
            out,
        } => {
            let store = DatasetStore::new(&config.store);
            let data = store.load(&dataset)?;
            let n = n_per_class.unwrap_or(config.n_per_class);
            let seed = seed.unwrap_or(config.seed);
            let sample = data.balanced_sample(n, seed)?;
            let ids = SampleIds::from_instances(&data.manifest, &sample);
            let out = out.unwrap_or_else(|| config.store.join(&dataset).join(format!("sample-{n}-{seed}.txt")));
            ids.write(&out)?;
            println!("{} instances -> {}", ids.ids.len(), out.display());
        }
        Command::Run(args) => run_cell(&config, &args).await?,
        Command::Report(ReportCommand::Delta {
            source,
            baseline,
            treatment,
            format,
        }) => {
            let r = report::delta_report(&load_cells(&source)?, baseline, treatment)?;
            print!("{}", render(format, || r.to_text(), || r.to_jsonl()));
        }
        Command::Report(ReportCommand::Ablation {
            source,
            methods,
            family,
            format,
        }) => {
            let r = report::average_report(&load_cells(&source)?, &methods, family.as_deref())?;
            print!("{}", render(format, || r.to_text(), || r.to_jsonl()));
        }
        Command::Report(ReportCommand::Metrics { run, annotator, format }) => {
            let s = AnnotatedRun::open(&run)?.metric_summary(annotator.as_deref())?;
            print!("{}", render(format, || s.to_text(), || s.to_jsonl()));
        }
        Command::Annotate(AnnotateCommand::Export { run, out }) => {
            let run = AnnotatedRun::open(&run)?;
            write_output(out.as_deref(), &run.export_tasks())?;
            if out.is_some() {
                eprintln!("{} tasks exported", run.tasks.len());
            }
        }
        Command::Annotate(AnnotateCommand::Serve { run, addr }) => {
            let runs = run
                .iter()
                .map(|dir| AnnotatedRun::open(dir))
                .collect::<Result<Vec<_>, _>>()?;
            annotate::serve(Arc::new(AppState::new(runs)?), addr).await?;
        }
        Command::Annotate(AnnotateCommand::Import { run, file }) => {
            let run = AnnotatedRun::open(&run)?;
            let text = std::fs::read_to_string(&file).map_err(|source| HarnessError::Io { path: file, source })?;
            println!("{} annotations imported", run.import(&text)?);
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
