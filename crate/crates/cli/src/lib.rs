//! Commands behind the `autotsg` binary. Each returns the process exit code:
//! 0 success, 1 invalid documents, 2 unreadable input or bad configuration.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use autotsg_core::actions::Ticket;
use autotsg_core::clock::{Clock, SystemClock, VirtualClock};
use autotsg_core::diagnostics::{check_document, render_markdown, Engine, ExecuteRequest, TsgRegistry};
use autotsg_core::model::{default_base_keys, validate_document, AutoTsgDoc, ValidationReport};
use autotsg_core::scheduler::{run_scenario, Scenario, Scheduler, TickReport};
use autotsg_core::value::parse_datetime;
use autotsg_core::{Audience, ExecutionContext, Value};
use autotsg_server::{AppState, RankerSpec, ServiceConfig};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const OK: u8 = 0;
pub const INVALID: u8 = 1;
pub const UNREADABLE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "autotsg", version, about = "Author, run and schedule troubleshooting guides")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate documents.
    Validate {
        /// Files or directories of .yaml documents.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run documents against fixture tables and render the response.
    Run(RunArgs),
    /// Play a scenario on a virtual clock.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Run exactly one scheduler tick at a virtual time.
    ScheduleOnce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_time)]
        at: DateTime<Utc>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Document files or directories; defaults to the config's directory.
    pub tsgs: Vec<PathBuf>,
    /// Service config supplying engine settings and defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Table fixture manifest.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Base context as JSON ({"Key": {"type": .., "value": ..}}).
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long, default_value = "InternalTicket")]
    pub audience: Audience,
    /// Ambient ticket as JSON.
    #[arg(long)]
    pub ticket: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_parser = parse_time)]
    pub now: Option<DateTime<Utc>>,
    #[arg(long)]
    pub json: bool,
    #[arg(long, conflicts_with = "replay")]
    pub stub_ranker: bool,
    /// Recorded completions to replay instead of the stub.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    parse_datetime(s).map_err(|e| e.to_string())
}

pub fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match cli.command {
        Command::Validate { paths, json } => cmd_validate(&paths, json, out, err),
        Command::Run(args) => cmd_run(&args, out, err),
        Command::Simulate { scenario, json } => cmd_simulate(&scenario, json, out, err),
        Command::Serve { config, addr } => cmd_serve(&config, addr, err),
        Command::ScheduleOnce { config, at, json } => cmd_schedule_once(&config, at, json, out, err),
    }
}

/// Expands directories into their sorted .yaml/.yml files.
pub fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, String> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| format!("{}: {e}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("yaml" | "yml")))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn stem(p: &Path) -> &str {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("tsg")
}

/// Parses and validates one file; `Err` when unreadable.
pub fn check_file(path: &Path) -> Result<(Option<AutoTsgDoc>, ValidationReport), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let keys = default_base_keys();
    Ok(match check_document(&text, stem(path), &keys) {
        Ok(doc) => {
            let report = validate_document(&doc, &keys);
            (Some(doc), report)
        }
        Err(report) => (None, report),
    })
}

#[derive(Serialize)]
struct FileReport<'a> {
    path: String,
    ok: bool,
    report: &'a ValidationReport,
}

pub fn cmd_validate(paths: &[PathBuf], json: bool, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let files = match expand_paths(paths) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    let mut code = OK;
    let mut reports = Vec::new();
    for f in &files {
        match check_file(f) {
            Ok((_, report)) => {
                if !report.is_ok() && code == OK {
                    code = INVALID;
                }
                reports.push((f.display().to_string(), report));
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = UNREADABLE;
            }
        }
    }
    if json {
        let list: Vec<FileReport> = reports
            .iter()
            .map(|(path, report)| FileReport {
                path: path.clone(),
                ok: report.is_ok(),
                report,
            })
            .collect();
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&list).expect("reports serialize"));
    } else {
        for (path, report) in &reports {
            if report.is_ok() {
                let _ = writeln!(out, "{path}: ok ({} warnings)", report.warnings.len());
            } else {
                let _ = writeln!(out, "{path}: {} errors", report.errors.len());
            }
            let _ = write!(out, "{}", report.render());
        }
    }
    code
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

enum RunError {
    Invalid(String),
    Unreadable(String),
}

fn prepare_run(args: &RunArgs) -> Result<(Engine, ExecuteRequest), RunError> {
    let mut config = match &args.config {
        Some(p) => ServiceConfig::load(p).map_err(|e| RunError::Unreadable(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if !args.tsgs.is_empty() {
        config.tsgs = None;
    }
    if let Some(t) = &args.tables {
        config.tables = Some(t.clone());
    }
    if let Some(r) = &args.replay {
        config.ranker = RankerSpec::Replay(r.clone());
    } else if args.stub_ranker {
        config.ranker = RankerSpec::Stub;
    }
    config.state_dir = None;

    let mut paths = args.tsgs.clone();
    if paths.is_empty() {
        paths.extend(config.tsgs.clone());
    }
    let mut docs = Vec::new();
    let mut invalid = String::new();
    for f in expand_paths(&paths).map_err(RunError::Unreadable)? {
        let (doc, report) = check_file(&f).map_err(RunError::Unreadable)?;
        match doc {
            Some(d) if report.is_ok() => docs.push(d),
            _ => invalid.push_str(&format!("{}:\n{}", f.display(), report.render())),
        }
    }
    if !invalid.is_empty() {
        return Err(RunError::Invalid(invalid));
    }

    let base: ExecutionContext = match &args.context {
        Some(p) => read_json(p).map_err(RunError::Unreadable)?,
        None => ExecutionContext::new(),
    };
    let ticket: Option<Ticket> = match &args.ticket {
        Some(p) => Some(read_json(p).map_err(RunError::Unreadable)?),
        None => None,
    };
    let now = args.now.or(match base.get("EndTime") {
        Some(Value::DateTime(t)) => Some(*t),
        _ => None,
    });
    let clock: Arc<dyn Clock> = match now {
        Some(t) => Arc::new(VirtualClock::new(t)),
        None => Arc::new(SystemClock),
    };
    let engine = Engine::new(
        config.engine.clone(),
        TsgRegistry::from_docs(docs),
        config.store().map_err(|e| RunError::Unreadable(e.to_string()))?,
        &config.sources,
        config.ranker.build().map_err(|e| RunError::Unreadable(e.to_string()))?,
        clock,
    );
    let req = ExecuteRequest {
        problem_statement: args.problem.clone(),
        ticket,
        now: args.now,
        ..ExecuteRequest::new(base, args.audience)
    };
    Ok((engine, req))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let (engine, req) = match prepare_run(args) {
        Ok(x) => x,
        Err(RunError::Invalid(report)) => {
            let _ = write!(err, "{report}");
            return INVALID;
        }
        Err(RunError::Unreadable(e)) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    let resp = match engine.execute(&req) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return INVALID;
        }
    };
    if args.json {
        let _ = writeln!(out, "{}", serde_json::to_string(&resp).expect("response serializes"));
    } else {
        let _ = write!(out, "{}", render_markdown(&resp));
    }
    OK
}

fn tick_line(t: &TickReport) -> String {
    let fired = t.runs.iter().filter(|r| !r.ensembles.is_empty()).count();
    let mut line = format!("{}  runs={} fired={}", t.at.format("%Y-%m-%dT%H:%M:%SZ"), t.runs.len(), fired);
    for r in &t.runs {
        for a in &r.actions {
            line.push_str(&format!(" {}:{}:{:?}", r.tsg_id, a.kind, a.result));
        }
    }
    for op in &t.operations {
        line.push_str(&format!(" op:{}:{:?}", op.kind, op.status));
    }
    if !t.mitigated.is_empty() {
        line.push_str(&format!(" mitigated={}", t.mitigated.join(",")));
    }
    line
}

pub fn cmd_simulate(path: &Path, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let report = match Scenario::load(path).and_then(|s| run_scenario(&s, path)) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    if json {
        for t in &report.ticks {
            let _ = writeln!(out, "{}", serde_json::to_string(t).expect("tick serializes"));
        }
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&serde_json::json!({ "incidents": report.incidents })).expect("incidents serialize")
        );
    } else {
        for t in &report.ticks {
            let _ = writeln!(out, "{}", tick_line(t));
        }
        let _ = writeln!(out, "incidents: {}", report.incidents.len());
        for i in &report.incidents {
            let _ = writeln!(
                out,
                "- {} {} {:?} scoping={} created={} last_detected={} mitigated={} detections={}{}",
                i.id,
                i.tsg_id,
                i.state,
                i.scoping,
                i.created_at.format("%Y-%m-%dT%H:%M:%SZ"),
                i.last_detected.format("%Y-%m-%dT%H:%M:%SZ"),
                i.mitigated_at.map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string()).unwrap_or_else(|| "-".into()),
                i.detections,
                if i.outage { " outage" } else { "" },
            );
        }
    }
    OK
}

fn scheduler_for(config: &ServiceConfig) -> Scheduler {
    match &config.schedule {
        Some(r) => Scheduler::with_registry(r.clone()),
        None => Scheduler::new(),
    }
}

pub fn cmd_schedule_once(
    config: &Path,
    at: DateTime<Utc>,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> u8 {
    let engine = match ServiceConfig::load(config).and_then(|c| {
        let e = c.build_engine(Arc::new(VirtualClock::new(at)))?;
        Ok((c, e))
    }) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    let (config, engine) = engine;
    let mut sched = scheduler_for(&config);
    let report = engine.tick(&mut sched, at);
    if json {
        let _ = writeln!(out, "{}", serde_json::to_string(&report).expect("tick serializes"));
    } else {
        let _ = writeln!(out, "{}", tick_line(&report));
    }
    OK
}

pub fn cmd_serve(config: &Path, addr: SocketAddr, err: &mut dyn Write) -> u8 {
    let loaded = ServiceConfig::load(config).and_then(|c| {
        let e = c.build_engine(Arc::new(SystemClock))?;
        Ok((c, e))
    });
    let (config, engine) = match loaded {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    let tick_every = config
        .tick_every
        .and_then(|t| u64::try_from(t.as_micros()).ok())
        .filter(|m| *m > 0)
        .map(std::time::Duration::from_micros);
    let state = AppState::new(engine, scheduler_for(&config));
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return UNREADABLE;
        }
    };
    match rt.block_on(autotsg_server::serve(state, addr, tick_every)) {
        Ok(()) => OK,
        Err(e) => {
            let _ = writeln!(err, "error: {addr}: {e}");
            UNREADABLE
        }
    }
}
