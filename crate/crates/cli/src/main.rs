use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use clap::{Parser, Subcommand};
use futures::{SinkExt, StreamExt};
use rayon::prelude::*;
use tower_http::services::ServeDir;

use dualguide::harness::{
    compare_modes, compute_metrics, replay, run_episode, Episode, EpisodeLog, Metrics, Scenario,
    ScenarioLoadError, Session,
};
use dualguide::orchestrator::{RobotEvent, Variant};
use dualguide::placement::candidate_costs;

#[derive(Parser)]
#[command(name = "dualguide", version, about = "Dual-mode guide-robot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        /// Defaults to the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-candidate stop-pose costs for every planned task.
        #[arg(long)]
        cost_field: Option<PathBuf>,
    },
    /// Run one variant over a seed range and print per-seed metrics.
    Batch {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write each episode log into this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Compare the full system against the non-adaptive baseline.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_seeds)]
        seeds: Seeds,
        /// Per-run rows; the stage summary goes next to it as `<stem>_summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a log, optionally re-driving the orchestrator.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// WebSocket session service at /ws, plus optional static files.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        scenario_dir: PathBuf,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

/// `A..B` and `A..=B` are both inclusive; `A,B,C` lists seeds.
fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |_| format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(bad)?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(bad)?;
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(bad))
        .collect::<Result<Vec<_>, _>>()
        .map(Seeds)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant `{s}` (full or noadapt)"))
}

/// Failure carrying its exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Mismatch(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ScenarioLoadError> for Failure {
    fn from(e: ScenarioLoadError) -> Self {
        match e {
            ScenarioLoadError::Io(m) => Failure::Runtime(anyhow::anyhow!(m)),
            ScenarioLoadError::Invalid(v) => {
                let mut s = String::from("invalid scenario");
                for p in &v.problems {
                    let _ = write!(s, "\n  {p}");
                }
                Failure::Validation(s)
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summary_line(m: &Metrics) -> String {
    let mut s = format!(
        "time {:.1} s, interventions {}, collisions {}{}",
        m.time_s,
        m.interventions,
        m.collisions,
        if m.timed_out { ", timed out" } else { "" }
    );
    for t in &m.tasks {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let _ = write!(
            s,
            "\n  task {} (object {}): approach {} locate {} interact {}",
            t.index,
            t.object,
            f(t.approach_s),
            f(t.locate_s),
            f(t.interact_s)
        );
    }
    s
}

const COST_FIELD_HEADER: &str = "task,x,y,cost_c,cost_d,cost_m,total,feasible";

/// Runs an episode step by step, evaluating the cost field on the world the
/// orchestrator saw whenever it plans a stop pose.
fn run_with_cost_field(scenario: &Scenario, variant: Variant, seed: u64) -> (Episode, String) {
    let mut ep = Episode::new(scenario, variant, seed);
    let mut csv = format!("{COST_FIELD_HEADER}\n");
    while ep.ended().is_none() {
        let before = ep.world().clone();
        ep.step();
        for e in &ep.last_output().events {
            let RobotEvent::Goals { task, .. } = e else {
                continue;
            };
            let orch = ep.orchestrator();
            let (Some(est), Some(t)) = (orch.estimate(), orch.route().tasks.get(*task)) else {
                continue;
            };
            let Ok(object) = before.object(t.object) else {
                continue;
            };
            let p = &orch.config().params;
            for c in candidate_costs(&before, &est, object, &p.weights, &p.geometry, &p.placement) {
                let _ = writeln!(
                    csv,
                    "{task},{:.3},{:.3},{:.6},{:.6},{:.6},{:.6},{}",
                    c.pose.x, c.pose.y, c.cost_c, c.cost_d, c.cost_m, c.total, c.feasible
                );
            }
        }
    }
    (ep, csv)
}

fn cmd_run(
    scenario: &Path,
    variant: Variant,
    seed: Option<u64>,
    log: Option<&Path>,
    metrics: Option<&Path>,
    cost_field: Option<&Path>,
) -> Result<(), Failure> {
    let s = Scenario::load(scenario)?;
    let seed = seed.unwrap_or(s.file.seed);
    let text = match cost_field {
        Some(path) => {
            let (ep, csv) = run_with_cost_field(&s, variant, seed);
            write_file(path, &csv)?;
            ep.text()
        }
        None => run_episode(&s, variant, seed).text(),
    };
    let parsed = EpisodeLog::parse(&text).map_err(|e| Failure::Runtime(e.into()))?;
    let m = compute_metrics(&parsed).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(p) = log {
        write_file(p, &text)?;
    }
    if let Some(p) = metrics {
        write_file(p, &m.to_csv())?;
    }
    println!("{} {variant} seed {seed}: {}", s.name(), summary_line(&m));
    Ok(())
}

fn cmd_batch(
    scenario: &Path,
    seeds: &[u64],
    variant: Variant,
    out: Option<&Path>,
    log_dir: Option<&Path>,
) -> Result<(), Failure> {
    let s = Scenario::load(scenario)?;
    let runs: Vec<_> = seeds.par_iter().map(|&seed| (seed, run_episode(&s, variant, seed))).collect();
    let mut csv = format!("seed,{}\n", Metrics::CSV_HEADER);
    for (seed, run) in &runs {
        for line in run.metrics.to_csv().lines().skip(1) {
            let _ = writeln!(csv, "{seed},{line}");
        }
        if let Some(dir) = log_dir {
            write_file(&dir.join(format!("{}_{variant}_seed{seed}.jsonl", s.name())), &run.text())?;
        }
    }
    match out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    let done = runs.iter().filter(|(_, r)| !r.metrics.timed_out).count();
    eprintln!("{} {variant}: {done}/{} episodes completed", s.name(), runs.len());
    Ok(())
}

fn cmd_compare(scenario: &Path, seeds: &[u64], out: Option<&Path>) -> Result<(), Failure> {
    if seeds.len() < 2 {
        return Err(Failure::Validation("compare needs at least two seeds".into()));
    }
    let s = Scenario::load(scenario)?;
    let report = compare_modes(&s, seeds);
    if let Some(p) = out {
        write_file(p, &report.rows_csv())?;
        let stem = p.file_stem().and_then(|x| x.to_str()).unwrap_or("report");
        let summary = p.with_file_name(format!("{stem}_summary.csv"));
        write_file(&summary, &report.summary_csv())?;
    }
    print!("{}", report.table());
    Ok(())
}

fn cmd_replay(log: &Path, check: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(log)
        .with_context(|| format!("reading {}", log.display()))?;
    let parsed = EpisodeLog::parse(&text).map_err(|e| Failure::Validation(e.to_string()))?;
    let m = compute_metrics(&parsed).map_err(|e| Failure::Validation(e.to_string()))?;
    let h = &parsed.header;
    println!("{} {} seed {}: {}", h.scenario_name, h.variant, h.seed, summary_line(&m));
    if check {
        let report = replay(&parsed).map_err(|e| Failure::Validation(e.to_string()))?;
        println!("replayed {} ticks, {} mismatches", report.ticks, report.mismatches.len());
        if let Some(first) = report.mismatches.first() {
            return Err(Failure::Mismatch(format!(
                "first mismatch at tick {} in {}: expected {} got {}",
                first.tick, first.field, first.expected, first.actual
            )));
        }
    }
    Ok(())
}

fn cmd_validate(scenario: &Path) -> Result<(), Failure> {
    let s = Scenario::load(scenario)?;
    println!(
        "{}: ok ({} objects, {} tasks)",
        s.name(),
        s.world.objects().len(),
        s.file.tasks.len()
    );
    Ok(())
}

/// Every `*.json` in `dir` keyed by file stem; invalid files are errors.
fn load_catalogue(dir: &Path) -> Result<BTreeMap<String, Scenario>, Failure> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.context("listing scenarios")?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let s = Scenario::load(&path).map_err(|e| match Failure::from(e) {
            Failure::Validation(m) => Failure::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        out.insert(stem.to_string(), s);
    }
    if out.is_empty() {
        return Err(Failure::Validation(format!("no scenarios in {}", dir.display())));
    }
    Ok(out)
}

async fn ws_handler(ws: WebSocketUpgrade, State(catalogue): State<Arc<BTreeMap<String, Scenario>>>) -> Response {
    ws.on_upgrade(move |socket| session_loop(socket, catalogue))
}

async fn session_loop(socket: WebSocket, catalogue: Arc<BTreeMap<String, Scenario>>) {
    let (mut tx, mut rx) = socket.split();
    let mut session = Session::new((*catalogue).clone());
    while let Some(Ok(msg)) = rx.next().await {
        let frames = match msg {
            Message::Text(t) => session.handle(t.as_str()),
            Message::Binary(_) => vec![dualguide::harness::error_frame("bad_request", "binary frames are not supported")],
            Message::Close(_) => break,
            _ => continue,
        };
        for f in frames {
            if tx.send(Message::Text(f.to_string().into())).await.is_err() {
                return;
            }
        }
    }
}

fn cmd_serve(host: &str, port: u16, scenario_dir: &Path, static_dir: Option<&Path>) -> Result<(), Failure> {
    let catalogue = Arc::new(load_catalogue(scenario_dir)?);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::Validation(format!("bad address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let mut app = Router::new().route("/ws", get(ws_handler)).with_state(catalogue);
        if let Some(dir) = static_dir {
            app = app.fallback_service(ServeDir::new(dir));
        }
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app).await.context("serving")?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            variant,
            seed,
            log,
            metrics,
            cost_field,
        } => cmd_run(&scenario, variant, seed, log.as_deref(), metrics.as_deref(), cost_field.as_deref()),
        Command::Batch {
            scenario,
            seeds,
            variant,
            out,
            log_dir,
        } => cmd_batch(&scenario, &seeds.0, variant, out.as_deref(), log_dir.as_deref()),
        Command::Compare { scenario, seeds, out } => cmd_compare(&scenario, &seeds.0, out.as_deref()),
        Command::Replay { log, check } => cmd_replay(&log, check),
        Command::Serve {
            port,
            host,
            scenario_dir,
            static_dir,
        } => cmd_serve(&host, port, &scenario_dir, static_dir.as_deref()),
        Command::Validate { scenario } => cmd_validate(&scenario),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(m) | Failure::Mismatch(m) => eprintln!("error: {m}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
