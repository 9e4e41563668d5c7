//! Command-line front end: batch ingestion, suggestion, evaluation, simulation and serving.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};

use qsuggest::config::{Config, ConfigError, ProviderKind, BEARER_TOKEN_ENV};
use qsuggest::domain::WorkflowTrace;
use qsuggest::engine::{load_scenario, Engine, EngineError, EngineOptions};
use qsuggest::evalharness::{
    aggregate, crossval_prepared, curve_prepared, export_embeddings, prepare_dataset, scenario_static_examples,
    summarize_seeds, sweep_thresholds, write_agg_csv, write_curve_csv, write_eval_csv, write_sweep_csv, EvalConfig,
    EvalContext, EvalError, Strategy,
};
use qsuggest::prompts::PromptSet;
use qsuggest::providers::{EmbeddingCache, HttpProvider, Provider, SimProvider};
use qsuggest::service::{serve, AppState};
use qsuggest::simulation::{Scenario, ScenarioModel};

#[derive(Debug, Parser)]
#[command(name = "qsuggest", version, about = "Self-learning query suggestions for tool-calling RAG agents")]
struct Cli {
    /// TOML configuration file (required).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Store directory, overriding `[store] dir`.
    #[arg(long, global = true, value_name = "PATH")]
    store: Option<PathBuf>,
    /// Provider backend, overriding `[provider] kind`.
    #[arg(long, global = true, value_parser = ["http", "sim"])]
    provider: Option<String>,
    /// Output directory for generated files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label one trace, learn from it and print suggestions as JSON.
    Suggest {
        /// Trace JSON file; stdin when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        num_suggestions: Option<usize>,
        #[arg(long)]
        verbose: bool,
    },
    /// Label and store a JSON-lines file of traces.
    Ingest {
        #[arg(long)]
        traces: PathBuf,
    },
    /// Cross-validate all strategies on the simulated dataset; writes eval.csv and agg.csv.
    Evaluate(EvalArgs),
    /// Self-learning run; writes curve.csv.
    Curve {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Cross-validate the dynamic strategy over threshold pairs; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma separated `theta_sim:theta_div` pairs.
        #[arg(long, default_value = "0.5:0.9,0.6:0.9,0.7:0.9,0.8:0.9,0.6:0.8,0.6:0.95,1.0:1.0")]
        grid: String,
    },
    /// Generate a labeled synthetic dataset; writes dataset.jsonl.
    Simulate {
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Write an agent's stored embeddings to emb.csv.
    ExportEmbeddings {
        /// Agent id; may be omitted when only one agent is configured.
        #[arg(long)]
        agent: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Comma separated seeds, one run per seed.
    #[arg(long, value_delimiter = ',', required = true)]
    seed: Vec<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Label flip rate for training examples.
    #[arg(long)]
    noise: Option<f64>,
    /// Emit every admitted example without the duplicate vote.
    #[arg(long)]
    no_voting: bool,
    /// Comma separated subset of static_few_shot, retrieval_only, dynamic_few_shot.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// Allow evaluation through the http provider (paid model calls).
    #[arg(long)]
    live: bool,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Provider(String),
    Io(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (tag, msg, code) = match self {
            Failure::Validation(m) => ("validation", m, 1),
            Failure::Provider(m) => ("provider", m, 2),
            Failure::Io(m) => ("io", m, 2),
        };
        eprintln!("error[{tag}]: {msg}");
        ExitCode::from(code)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            e if e.is_validation() => Failure::Validation(e.to_string()),
            EngineError::Store(_) | EngineError::Setup(_) => Failure::Io(e.to_string()),
            e => Failure::Provider(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            e => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Invalid(_) | EvalError::Retrieval(_) => Failure::Validation(e.to_string()),
            EvalError::Provider(_) | EvalError::Labeling(_) => Failure::Provider(e.to_string()),
            EvalError::Store(_) | EvalError::Csv(_) | EvalError::Io(_) => Failure::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let Some(config_path) = cli.config.clone() else {
        eprintln!("error[validation]: --config <PATH> is required");
        eprintln!("{}", Cli::command().render_usage());
        return ExitCode::from(1);
    };
    match run(&cli, &config_path) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn run(cli: &Cli, config_path: &Path) -> Result<(), Failure> {
    let cfg = Config::load(config_path)?;
    let provider = cli.provider.as_deref().map(str::parse::<ProviderKind>).transpose()?;
    let opts = EngineOptions {
        provider,
        store_dir: cli.store.clone(),
    };
    match &cli.command {
        Command::Suggest {
            trace,
            num_suggestions,
            verbose,
        } => {
            let text = match trace {
                Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let trace: WorkflowTrace =
                serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("invalid trace: {e}")))?;
            let engine = Engine::from_config(&cfg, &opts)?;
            let outcome = engine.process(&trace, *num_suggestions, *verbose)?;
            println!("{}", serde_json::to_string_pretty(&outcome).expect("serializable"));
        }
        Command::Ingest { traces } => {
            let engine = Engine::from_config(&cfg, &opts)?;
            let file = File::open(traces).map_err(|e| Failure::Io(format!("{}: {e}", traces.display())))?;
            let (mut stored, mut skipped) = (0usize, 0usize);
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let trace: WorkflowTrace = serde_json::from_str(&line)
                    .map_err(|e| Failure::Validation(format!("{} line {}: {e}", traces.display(), i + 1)))?;
                match engine.ingest(&trace)?.ingested_id {
                    Some(_) => stored += 1,
                    None => skipped += 1,
                }
            }
            println!("{}", serde_json::json!({"stored": stored, "skipped_no_knowledge": skipped}));
        }
        Command::Evaluate(args) => {
            let (ctx_parts, base) = eval_setup(&cfg, args, provider)?;
            let ctx = ctx_parts.context();
            let mut all = Vec::new();
            let mut per_seed = Vec::new();
            for &seed in &args.seed {
                let data = ctx_parts.scenario.generate_dataset(args.n.unwrap_or(cfg.simulation.n), seed);
                let items = prepare_dataset(&data, &ctx)?;
                let records = crossval_prepared(&items, &ctx, &EvalConfig { seed, ..base.clone() })?;
                per_seed.push(aggregate(&records));
                all.extend(records);
            }
            std::fs::create_dir_all(&cli.out)?;
            write_eval_csv(&all, create(&cli.out.join("eval.csv"))?)?;
            let summary = summarize_seeds(&per_seed);
            write_agg_csv(&summary, create(&cli.out.join("agg.csv"))?)?;
            for s in &summary {
                eprintln!(
                    "{:<17} answerable {:5.1}% (sd {:.1})  similarity {:5.1}",
                    s.strategy.as_str(),
                    s.mean.answerable_pct,
                    s.std.answerable_pct,
                    s.mean.similarity_x100
                );
            }
        }
        Command::Curve { eval, window } => {
            let (ctx_parts, base) = eval_setup(&cfg, eval, provider)?;
            let ctx = ctx_parts.context();
            let window = window.unwrap_or(cfg.simulation.window);
            let mut curves = Vec::new();
            for &seed in &eval.seed {
                let data = ctx_parts.scenario.generate_dataset(eval.n.unwrap_or(cfg.simulation.n), seed);
                let items = prepare_dataset(&data, &ctx)?;
                let (_, points) = curve_prepared(&items, &ctx, &EvalConfig { seed, ..base.clone() }, window)?;
                curves.push(points);
            }
            std::fs::create_dir_all(&cli.out)?;
            write_curve_csv(&curves, create(&cli.out.join("curve.csv"))?)?;
        }
        Command::Sweep { eval, grid } => {
            let grid = parse_grid(grid)?;
            let (ctx_parts, base) = eval_setup(&cfg, eval, provider)?;
            let ctx = ctx_parts.context();
            let mut rows = Vec::new();
            for &seed in &eval.seed {
                let data = ctx_parts.scenario.generate_dataset(eval.n.unwrap_or(cfg.simulation.n), seed);
                let items = prepare_dataset(&data, &ctx)?;
                rows.extend(sweep_thresholds(&items, &ctx, &EvalConfig { seed, ..base.clone() }, &grid)?);
            }
            std::fs::create_dir_all(&cli.out)?;
            write_sweep_csv(&rows, create(&cli.out.join("sweep.csv"))?)?;
        }
        Command::Simulate { seed, n } => {
            let scenario = load_scenario(&cfg)?;
            std::fs::create_dir_all(&cli.out)?;
            let mut w = create(&cli.out.join("dataset.jsonl"))?;
            for &s in seed {
                for item in scenario.generate_labeled(n.unwrap_or(cfg.simulation.n), s) {
                    serde_json::to_writer(&mut w, &item).map_err(|e| Failure::Io(e.to_string()))?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
        }
        Command::ExportEmbeddings { agent } => {
            if opts.store_dir.is_none() && cfg.store.dir.is_none() {
                return Err(Failure::Validation("export-embeddings needs --store or [store] dir".into()));
            }
            let engine = Engine::from_config(&cfg, &opts)?;
            let ids: Vec<&str> = engine.agent_ids().collect();
            let agent = match (agent, ids.as_slice()) {
                (Some(a), _) => a.clone(),
                (None, [only]) => only.to_string(),
                (None, _) => return Err(Failure::Validation("several agents configured; pass --agent".into())),
            };
            std::fs::create_dir_all(&cli.out)?;
            let w = create(&cli.out.join("emb.csv"))?;
            engine.with_store(&agent, |s| export_embeddings(s, w))??;
        }
        Command::Serve { addr } => {
            let engine = Arc::new(Engine::from_config(&cfg, &opts)?);
            let state = AppState::new(engine).with_bearer_token(std::env::var(BEARER_TOKEN_ENV).ok());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, *addr))?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn parse_grid(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    text.split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Failure::Validation(format!("grid point `{pair}` is not sim:div")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Failure::Validation(format!("grid point `{pair}` is not numeric")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

/// Provider, scenario and prompts backing an evaluation run.
struct EvalParts {
    scenario: Arc<Scenario>,
    provider: Box<dyn Provider>,
    prompts: PromptSet,
    static_examples: qsuggest::retrieval::ExampleSets,
}

impl EvalParts {
    fn context(&self) -> EvalContext<'_> {
        EvalContext {
            profile: &self.scenario.profile,
            provider: self.provider.as_ref(),
            prompts: &self.prompts,
            executor: self.scenario.as_ref(),
            static_examples: self.static_examples.clone(),
        }
    }
}

fn eval_setup(cfg: &Config, args: &EvalArgs, kind: Option<ProviderKind>) -> Result<(EvalParts, EvalConfig), Failure> {
    let scenario = Arc::new(load_scenario(cfg)?);
    let provider: Box<dyn Provider> = match kind.unwrap_or(cfg.provider.kind) {
        ProviderKind::Sim => Box::new(SimProvider::new(
            cfg.provider.sim_dimension,
            ScenarioModel::new(scenario.clone()),
        )),
        ProviderKind::Http => {
            if !args.live {
                return Err(Failure::Validation(
                    "evaluation through the http provider makes paid model calls; pass --live to allow it".into(),
                ));
            }
            let (http, _) = cfg.http_settings()?;
            let cache = match &cfg.provider.embedding_cache {
                Some(p) => EmbeddingCache::open(p).map_err(|e| Failure::Io(e.to_string()))?,
                None => EmbeddingCache::in_memory(),
            };
            Box::new(HttpProvider::new(http.clone(), cache).map_err(|e| Failure::Validation(e.to_string()))?)
        }
    };
    let prompts = match &cfg.generation.prompts_dir {
        Some(dir) => PromptSet::load(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?,
        None => PromptSet::default(),
    };
    let static_examples = scenario_static_examples(&scenario, provider.as_ref())?;
    let strategies = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies
            .iter()
            .map(|s| s.parse::<Strategy>())
            .collect::<Result<_, _>>()?
    };
    let mut retrieval = cfg.retrieval;
    if args.no_voting {
        retrieval.voting = false;
    }
    let base = EvalConfig {
        retrieval,
        num_suggestions: cfg.generation.num_suggestions,
        mode: cfg.generation.mode,
        folds: args.folds.unwrap_or(cfg.simulation.folds),
        seed: 0,
        noise_rate: args.noise.unwrap_or(cfg.simulation.noise_rate),
        strategies,
    };
    Ok((
        EvalParts {
            scenario,
            provider,
            prompts,
            static_examples,
        },
        base,
    ))
}
