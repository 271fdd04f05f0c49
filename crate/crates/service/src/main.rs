use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use archdisc_core::engine::{Engine, EngineConfig};
use archdisc_core::error::{ConfigError, ModelError, PreferenceError, ProtocolError, ReplayError};
use archdisc_core::experiments::{run_experiment, ExperimentSpec};
use archdisc_core::interaction::{DecisionMaker, ScriptedPolicy};
use archdisc_core::model::{generate_model, minilib, parse_model, AnalysisModel, GeneratorSpec, RelKind};
use archdisc_core::par::Execution;
use archdisc_core::session::{read_events, replay, run_recorded, EventLog, RecordedSession, ReplayMode};

use archdisc::api;
use archdisc::sessions::{ServiceConfig, SessionManager};

#[derive(Parser)]
#[command(name = "archdisc", version, about = "Interactive discovery of component-based architectures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch search without interaction.
    Run(RunArgs),
    /// Interactive search answered by a scripted decision maker.
    Scripted {
        #[command(flatten)]
        run: RunArgs,
        /// Policy file, e.g. {"policy":"fixed_nc","n":4,"likert":5}.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Re-runs a recorded event log and writes its final archive.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Must match the seed the log was recorded with.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs an experiment specification and writes its report.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the output directory named in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Starts the HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Directory with the built web client.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_sessions: usize,
        /// Seconds before an unanswered stop gets "no preference".
        #[arg(long)]
        idle_timeout: Option<u64>,
        /// Allowed CORS origin; any origin when absent.
        #[arg(long)]
        cors_origin: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Writes a random class model.
    Generate(GenerateArgs),
    /// Checks a model file, and optionally a config and policy file.
    Validate {
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Model file, or `minilib` for the bundled model.
    #[arg(long)]
    model: PathBuf,
    /// Engine configuration (JSON); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    associations: usize,
    #[arg(long, default_value_t = 0)]
    aggregations: usize,
    #[arg(long, default_value_t = 0)]
    compositions: usize,
    #[arg(long, default_value_t = 0)]
    generalizations: usize,
    #[arg(long, default_value_t = 0)]
    dependencies: usize,
    /// Probability that an as/ag/co relationship is navigable.
    #[arg(long, default_value_t = 0.5)]
    navigability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// User input that failed validation (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>()
            || cause.is::<ModelError>()
            || cause.is::<ConfigError>()
            || cause.is::<PreferenceError>()
            || cause.is::<ProtocolError>()
            || cause.is::<ReplayError>()
        {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<archdisc_core::Error>() {
            return if matches!(e, archdisc_core::Error::Io { .. }) { 1 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => run(&args, None),
        Command::Scripted { run: args, policy } => {
            let text = fs::read_to_string(&policy).with_context(|| format!("reading {}", policy.display()))?;
            let policy = ScriptedPolicy::from_json(&text).map_err(|e| invalid(format!("{}: {e}", policy.display())))?;
            run(&args, Some(policy))
        }
        Command::Replay { log, seed, out } => replay_log(&log, seed, &out),
        Command::Experiment { spec, out, sequential } => experiment(&spec, out, sequential),
        Command::Serve { port, data_dir, ui_dir, max_sessions, idle_timeout, cors_origin, host } => {
            let mut cfg = ServiceConfig::new(data_dir);
            cfg.max_sessions = max_sessions;
            cfg.idle_timeout = idle_timeout.map(Duration::from_secs);
            let origin = cors_origin.map(|o| o.parse()).transpose().map_err(invalid)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(invalid)?;
            serve(cfg, addr, ui_dir, origin)
        }
        Command::Generate(args) => generate(&args),
        Command::Validate { model, config, policy } => validate(&model, config.as_deref(), policy.as_deref()),
    }
}

fn load_model(path: &Path) -> Result<AnalysisModel> {
    if path.as_os_str() == "minilib" && !path.exists() {
        return Ok(minilib());
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_model(&bytes).with_context(|| format!("in {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    let Some(path) = path else { return Ok(EngineConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn run(args: &RunArgs, policy: Option<ScriptedPolicy>) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if policy.is_none() {
        cfg.interactions = 0;
    }
    let mut engine = Engine::with_execution(Arc::new(model), cfg, execution(args.sequential))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log_path = args.out.join("events.jsonl");
    let file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = EventLog::new(BufWriter::new(file));
    let mut dm: Box<dyn DecisionMaker> = Box::new(policy.unwrap_or(ScriptedPolicy::Noop));
    run_recorded(&mut engine, dm.as_mut(), &mut log)?;
    log.into_inner().flush().context("writing the event log")?;
    write_archive(&engine, &args.out)
}

fn write_archive(engine: &Engine, out: &Path) -> Result<()> {
    let path = out.join("archive.json");
    fs::write(&path, engine.archive_snapshot().to_json()).with_context(|| format!("writing {}", path.display()))?;
    let s = engine.stats();
    println!(
        "generations {} evaluations {} archive {} best combined {:.4} modal components {}",
        s.generation,
        s.evaluations,
        s.archive_size,
        s.best_combined,
        s.modal_component_count()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn replay_log(log: &Path, seed: u64, out: &Path) -> Result<()> {
    let file = File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let events = read_events(BufReader::new(file))?;
    let session = RecordedSession::from_events(&events)?;
    let engine = replay(&session, seed, ReplayMode::Strict, Execution::default(), &mut |_| {})?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_archive(&engine, out)
}

fn experiment(spec_path: &Path, out: Option<PathBuf>, sequential: bool) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", spec_path.display())))?;
    if out.is_some() {
        spec.output_dir = out;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let report = run_experiment(&spec, base, execution(sequential))?;
    println!("{:<12} {:<8} {:>6} {:>16} {:>16} {:>14}", "instance", "algo", "tau0", "hv", "spacing", "archive");
    let fmt = |m: Option<archdisc_core::experiments::MeanStd>, p: usize| {
        m.map_or("-".to_string(), |m| format!("{:.p$} ± {:.p$}", m.mean, m.std))
    };
    for c in &report.configurations {
        println!(
            "{:<12} {:<8} {:>6} {:>16} {:>16} {:>14}",
            c.instance,
            c.algorithm,
            c.tau_initial.map_or("-".into(), |t| t.to_string()),
            fmt(c.hv, 4),
            fmt(c.spacing, 4),
            fmt(c.archive_size, 1)
        );
    }
    if let Some(dir) = &spec.output_dir {
        println!("wrote {}", base.join(dir).display());
    }
    Ok(())
}

fn serve(cfg: ServiceConfig, addr: SocketAddr, ui_dir: Option<PathBuf>, origin: Option<axum::http::HeaderValue>) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let manager = Arc::new(SessionManager::open(cfg).context("opening the data directory")?);
    let app = api::router(manager.clone(), ui_dir, origin);
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    })?;
    manager.shutdown();
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let spec = GeneratorSpec {
        n_classes: args.classes,
        associations: args.associations,
        aggregations: args.aggregations,
        compositions: args.compositions,
        generalizations: args.generalizations,
        dependencies: args.dependencies,
        navigability: args.navigability,
        seed: args.seed,
    };
    let json = generate_model(&spec)?.to_json();
    match &args.out {
        Some(path) => fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn validate(model_path: &Path, config: Option<&Path>, policy: Option<&Path>) -> Result<()> {
    let model = load_model(model_path)?;
    let counts: Vec<String> = RelKind::ALL.iter().map(|k| format!("{} {}", k.as_str(), model.kind_count(*k))).collect();
    println!(
        "{}: {} classes, {} relationships ({}), {} candidate interfaces",
        model_path.display(),
        model.class_count(),
        model.relationships().len(),
        counts.join(", "),
        model.candidate_interface_count()
    );
    if let Some(path) = config {
        let cfg = load_config(Some(path))?;
        cfg.validate(&model).with_context(|| format!("in {}", path.display()))?;
        println!("{}: ok, {} generations", path.display(), cfg.generations());
    }
    if let Some(path) = policy {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ScriptedPolicy::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        println!("{}: ok", path.display());
    }
    if model.class_count() > 0 && model.relationships().is_empty() {
        bail!(invalid("model has no relationships, so no architecture can be feasible"));
    }
    Ok(())
}
