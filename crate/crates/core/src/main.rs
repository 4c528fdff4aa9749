use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use casemem::error::{ConfigError, HarnessError, PersistError};
use casemem::harness::{
    emit_report, generate_synthetic_stream, load_case_stream, load_report, render_report, run_permutations,
    run_stream, CaseRecord, MockAgent, MockAgentConfig, ReportFormat, RunOptions, RunReport, SyntheticSpec,
};
use casemem::persistence::{read_log_file, recover, save_snapshot, EventLog};
use casemem::reflection::{ReflectionEngine, RemoteReflector};
use casemem::{EngineConfig, MemoryHandle, MemoryState, MemoryToggles};

#[derive(Parser)]
#[command(name = "casemem", version, about = "Case memory benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case stream once and write a report.
    Run(RunArgs),
    /// Run shuffled orders of a stream from empty memory and summarize.
    Permute {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        perms: usize,
    },
    /// Rebuild memory from snapshots and the event log.
    Replay {
        /// Directory holding events.jsonl and snapshot files.
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the recovered state as a snapshot here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a JSON report to another format.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic case stream.
    Gen {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 8)]
        modes: usize,
        #[arg(long, default_value_t = 0.8)]
        recurrence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Stores read during assembly: any of e,s,g, or all / none.
    #[arg(long, default_value = "e,s,g")]
    memory: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ks: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Engine configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mock agent configuration JSON.
    #[arg(long)]
    agent_config: Option<PathBuf>,
    /// Persist memory (event log and snapshots) in this directory and
    /// resume from it if it already holds state.
    #[arg(long)]
    state_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownFormat(_) | HarnessError::InvalidSpec(_) => Failure::Config(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

const EVENT_LOG: &str = "events.jsonl";

fn engine_config(args: &RunArgs) -> Result<EngineConfig, Failure> {
    let mut cfg = EngineConfig::load(args.config.as_deref())?;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(ks) = args.ks {
        cfg.k_s = ks;
    }
    if let Some(b) = args.budget {
        cfg.char_budget = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn agent(args: &RunArgs) -> Result<MockAgent, Failure> {
    let mut cfg = match &args.agent_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<MockAgentConfig>(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => MockAgentConfig::default(),
    };
    cfg.seed ^= args.seed;
    Ok(MockAgent::new(cfg))
}

fn reflector(backend: &str, cfg: &EngineConfig) -> Result<ReflectionEngine, Failure> {
    match backend {
        "mock" => Ok(ReflectionEngine::mock(cfg)),
        "remote" => {
            let remote = RemoteReflector::from_env().map_err(|e| Failure::Config(e.to_string()))?;
            Ok(ReflectionEngine::new(Box::new(remote), cfg))
        }
        other => Err(Failure::Config(format!("unknown backend `{other}` (expected mock or remote)"))),
    }
}

fn setup(args: &RunArgs) -> Result<(EngineConfig, RunOptions, ReportFormat, Vec<CaseRecord>), Failure> {
    let cfg = engine_config(args)?;
    let toggles = MemoryToggles::parse(&args.memory).map_err(Failure::Config)?;
    let format: ReportFormat = args.format.parse()?;
    let cases = load_case_stream(&args.stream)?;
    Ok((cfg, RunOptions { toggles, seed: args.seed }, format, cases))
}

fn write_out(report: &RunReport, out: Option<&Path>, format: ReportFormat) -> Result<(), Failure> {
    match out {
        Some(p) => emit_report(report, p, format)?,
        None => print!("{}", render_report(report, format)?),
    }
    Ok(())
}

fn open_memory(dir: &Path, cfg: &EngineConfig) -> Result<MemoryHandle, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let log_path = dir.join(EVENT_LOG);
    let state = recover(dir, &log_path, cfg)?;
    let log = EventLog::open(&log_path, true)?;
    log::info!("resuming at memory version {}", state.version);
    Ok(MemoryHandle::with_log(state, log, Some(dir.to_path_buf()), cfg))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, opts, format, cases) = setup(args)?;
    let mut agent = agent(args)?;
    let mut engine = reflector(&args.backend, &cfg)?;
    let memory = match &args.state_dir {
        Some(dir) => open_memory(dir, &cfg)?,
        None => MemoryHandle::new(MemoryState::new(&cfg)),
    };
    let report = run_stream(&cases, &mut agent, &mut engine, &memory, &cfg, opts)?;
    memory.checkpoint()?;
    eprintln!(
        "{} cases, final accuracy {:.4}, memory version {}",
        report.cases.len(),
        report.final_accuracy,
        memory.version()
    );
    write_out(&report, args.out.as_deref(), format)
}

fn cmd_permute(args: &RunArgs, perms: usize) -> Result<(), Failure> {
    if args.state_dir.is_some() {
        return Err(Failure::Config("permute always starts from empty memory; drop --state-dir".into()));
    }
    let (cfg, opts, format, cases) = setup(args)?;
    let agent = agent(args)?;
    reflector(&args.backend, &cfg)?;
    let mut make = || reflector(&args.backend, &cfg).expect("backend checked above");
    let (summary, mut reports) = run_permutations(&cases, &agent, &mut make, &cfg, opts, perms)?;
    eprintln!("{perms} permutations: mean {:.4}, stddev {:.4}", summary.mean, summary.stddev);
    match reports.first_mut() {
        Some(first) => {
            first.permutations = Some(summary);
            write_out(first, args.out.as_deref(), format)
        }
        None => Ok(()),
    }
}

fn cmd_replay(state_dir: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = EngineConfig::load(config)?;
    let log_path = state_dir.join(EVENT_LOG);
    let events = if log_path.exists() { read_log_file(&log_path)?.len() } else { 0 };
    let state = recover(state_dir, &log_path, &cfg)?;
    println!(
        "version {} episodes {} rules {} tools {} (log events {events})",
        state.version,
        state.episodic.len(),
        state.procedural.len(),
        state.governance.len()
    );
    if let Some(p) = out {
        save_snapshot(&state, p)?;
    }
    Ok(())
}

fn cmd_report(input: &Path, format: &str, out: Option<&Path>) -> Result<(), Failure> {
    let format: ReportFormat = format.parse()?;
    let report = load_report(input)?;
    write_out(&report, out, format)
}

fn cmd_gen(spec: SyntheticSpec, out: &Path) -> Result<(), Failure> {
    let cases = generate_synthetic_stream(&spec)?;
    let file = std::fs::File::create(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    casemem::harness::cases::write_case_stream(std::io::BufWriter::new(file), &cases)
        .map_err(|e| Failure::Data(format!("{}: {e}", out.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Permute { run, perms } => cmd_permute(run, *perms),
        Command::Replay { state_dir, config, out } => cmd_replay(state_dir, config.as_deref(), out.as_deref()),
        Command::Report { input, format, out } => cmd_report(input, format, out.as_deref()),
        Command::Gen { cases, modes, recurrence, seed, out } => {
            cmd_gen(SyntheticSpec::new(*cases, *modes, *recurrence, *seed), out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(2)
        }
    }
}
