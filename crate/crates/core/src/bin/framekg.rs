use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use framekg::bench::{run_suite, SuiteConfigs};
use framekg::engine::{Engine, EngineConfig, Mode};
use framekg::knowledge::{init_kb, KgSnapshot, KnowledgeBase};
use framekg::lambda::{CompactionPolicy, LambdaStore};
use framekg::query::{answer_interactive, evaluate_standing, parse, MatchState, QueryBody, UserQuery};
use framekg::service;
use framekg::{TimeWindow, TriplePattern};

#[derive(Parser)]
#[command(name = "framekg", version, about = "Real-time knowledge extraction and retrieval over frame streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and serve the HTTP API while it runs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario named in the config.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the mode named in the config (baseline, streaming).
        #[arg(long)]
        mode: Option<Mode>,
        /// Do not start the HTTP server.
        #[arg(long)]
        no_serve: bool,
        /// Keep serving after the scenario ends, until interrupted.
        #[arg(long)]
        linger: bool,
    },
    /// Run the baseline and streaming configs over a scenario suite.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        /// Baseline config; defaults to baseline.toml next to the suite.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Streaming config; defaults to streaming.toml next to the suite.
        #[arg(long)]
        streaming: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Answer a query from a persisted store.
    Replay {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        query: String,
        /// Knowledge base; defaults to the one copied into the store.
        #[arg(long)]
        kb: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Run {
            config,
            scenario,
            mode,
            no_serve,
            linger,
        } => run(&config, scenario, mode, no_serve, linger),
        Command::Bench {
            suite,
            baseline,
            streaming,
            out,
            parallel,
        } => bench(&suite, baseline, streaming, out, parallel),
        Command::Replay { store, query, kb } => replay(&store, &query, kb),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn run(config: &Path, scenario: Option<PathBuf>, mode: Option<Mode>, no_serve: bool, linger: bool) -> CliResult {
    let mut cfg = EngineConfig::load(config)?;
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let addr: SocketAddr = cfg.listen.parse().map_err(|e| format!("listen address `{}`: {e}", cfg.listen))?;
    let engine = Engine::new(cfg)?;
    let handle = engine.handle();
    let rt = tokio::runtime::Runtime::new()?;
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = (!no_serve).then(|| {
        let h = handle.clone();
        rt.spawn(async move {
            let shutdown = async move {
                let _ = stop_rx.await;
            };
            if let Err(e) = service::serve(h, addr, shutdown).await {
                tracing::error!(error = %e, "server stopped");
            }
        })
    });
    let interrupted = handle.clone();
    rt.spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            interrupted.stop();
        }
    });
    let summary = engine.run()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(server) = server {
        if linger {
            eprintln!("run finished; serving on {addr} until interrupted");
            rt.block_on(async {
                let _ = tokio::signal::ctrl_c().await;
            });
        }
        let _ = stop_tx.send(());
        let _ = rt.block_on(server);
    }
    Ok(())
}

fn bench(suite: &Path, baseline: Option<PathBuf>, streaming: Option<PathBuf>, out: Option<PathBuf>, parallel: bool) -> CliResult {
    let beside = |name: &str| suite.parent().unwrap_or(Path::new(".")).join(name);
    let baseline = baseline.unwrap_or_else(|| beside("baseline.toml"));
    let streaming = streaming.unwrap_or_else(|| beside("streaming.toml"));
    let configs = SuiteConfigs::load(&baseline, &streaming)?;
    let report = run_suite(suite, &configs, parallel)?;
    print!("{}", report.render_table());
    if let Some(out) = out {
        std::fs::write(&out, report.to_json())?;
        eprintln!("report written to {}", out.display());
    }
    Ok(())
}

fn store_kb(store: &Path) -> Result<KnowledgeBase, Box<dyn std::error::Error>> {
    let mut kbs: Vec<PathBuf> = std::fs::read_dir(store)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "kb"))
        .collect();
    kbs.sort();
    let path = kbs
        .first()
        .ok_or_else(|| format!("no .kb file in {}; pass --kb", store.display()))?;
    Ok(init_kb(path)?)
}

fn replay(store: &Path, query: &str, kb: Option<PathBuf>) -> CliResult {
    let kb = match kb {
        Some(p) => init_kb(p)?,
        None => store_kb(store)?,
    };
    let lambda = LambdaStore::open(store, CompactionPolicy::default())?;
    let history = lambda.serve(&TriplePattern::any(), TimeWindow::ALL, None);
    let now = history.iter().map(|t| t.observed_at_ms).max().unwrap_or(0);
    let q = UserQuery::new("replay", parse(query, &kb)?, query);
    match &q.body {
        QueryBody::Interactive(iq) => {
            let answer = answer_interactive(&q.query_id, iq, now, &KgSnapshot::default(), &lambda, &kb);
            println!("{}", answer.text);
            eprintln!("{} supporting triples in [{}, {}] ms", answer.triples.len(), answer.window.start_ms, answer.window.end_ms);
        }
        QueryBody::Standing(_) => {
            let mut ordered = history;
            ordered.sort_by_key(|t| (t.observed_at_ms, t.id));
            let alerts = evaluate_standing(&ordered, std::slice::from_ref(&q), &mut MatchState::new());
            for a in &alerts {
                println!("{}", serde_json::to_string(a)?);
            }
            eprintln!("{} alerts", alerts.len());
        }
    }
    Ok(())
}
