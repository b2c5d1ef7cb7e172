use std::io::{BufRead, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use litscope::report::render_markdown;
use litscope::{ProviderMode, ServiceOptions};
use litscope_core::session::save_snapshot;
use litscope_core::{
    AutoApprove, KeywordSet, NewPipeline, NodePayload, NodeStatus, PipelineConfig, Session, SessionConfig, SessionId,
    SessionState, SessionStore,
};

#[derive(Parser)]
#[command(name = "litscope", version, about = "Agent-assisted literature exploration over arXiv")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Providers {
    /// Use the offline agent, embedder and synthetic arXiv pool.
    #[arg(long)]
    mock: bool,
    /// Directory with prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl Providers {
    fn options(&self) -> ServiceOptions {
        ServiceOptions {
            mode: if self.mock { ProviderMode::Mock } else { ProviderMode::Live },
            templates: self.templates.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        #[command(flatten)]
        providers: Providers,
    },
    /// Run one pipeline from the terminal and write its report.
    Run {
        #[arg(long)]
        query: String,
        /// Approve every checkpoint without asking.
        #[arg(long)]
        auto_approve: bool,
        #[arg(long, default_value = "report.md")]
        out: PathBuf,
        /// Also record the session under this directory.
        #[arg(long, env = "DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        providers: Providers,
    },
    /// Write a canonical snapshot of a recorded session.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "snapshot.json")]
        out: PathBuf,
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            port,
            host,
            data_dir,
            providers,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(litscope::serve(SocketAddr::new(host, port), &data_dir, &providers.options()))
        }
        Command::Run {
            query,
            auto_approve,
            out,
            data_dir,
            providers,
        } => run(&query, auto_approve, &out, data_dir, &providers.options()),
        Command::Export { session, out, data_dir } => export(&session, &out, &data_dir),
    }
}

fn run(
    query: &str,
    auto_approve: bool,
    out: &std::path::Path,
    data_dir: Option<PathBuf>,
    options: &ServiceOptions,
) -> anyhow::Result<()> {
    let store = data_dir.map(SessionStore::open).transpose()?;
    let id = match &store {
        Some(store) => {
            let n = store.sessions()?.iter().filter_map(|s| s.as_str().strip_prefix('s')?.parse::<u64>().ok()).max();
            SessionId(format!("s{}", n.unwrap_or(0) + 1))
        }
        None => SessionId("s1".into()),
    };
    let mut session = Session::create(id, SessionConfig::default(), options.build()?)?;
    let config = PipelineConfig {
        auto_approve: AutoApprove::uniform(auto_approve),
        run_to_next_checkpoint: auto_approve,
    };
    let run = session.create_pipeline(NewPipeline {
        query_text: query.into(),
        config,
        parent: None,
    })?;
    let pid = run.pipeline_id;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    while !session.state().pipeline(&pid)?.is_complete() {
        let node = session.step(&pid)?;
        loop {
            let current = session.state().pipeline(&pid)?.nodes[node.kind.index()].clone();
            match current.status {
                NodeStatus::Failed if auto_approve => {
                    bail!("{:?} failed: {}", current.kind, current.error.unwrap_or_default())
                }
                NodeStatus::AwaitingApproval | NodeStatus::Failed => {}
                _ => break,
            }
            print_node(&current);
            let offer = if current.status == NodeStatus::Failed { "[r]erun [q]uit" } else { "[a]pprove [r]erun [e]dit [q]uit" };
            eprint!("{offer} > ");
            std::io::stderr().flush()?;
            let Some(answer) = lines.next().transpose()? else { bail!("input closed before the pipeline finished") };
            match answer.trim() {
                "a" | "approve" if current.status != NodeStatus::Failed => {
                    session.approve(&pid, &current.node_id)?;
                }
                "r" | "rerun" => {
                    session.rerun(&pid, &current.node_id)?;
                }
                "e" | "edit" if matches!(current.output, Some(NodePayload::KeywordSet(_))) => {
                    eprint!("keywords (comma separated) > ");
                    std::io::stderr().flush()?;
                    let Some(text) = lines.next().transpose()? else { bail!("input closed") };
                    let k: KeywordSet = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                    if let Err(e) = session.edit_output(&pid, &current.node_id, NodePayload::KeywordSet(k)) {
                        eprintln!("edit rejected: {e}");
                    }
                }
                "e" | "edit" => eprintln!("only keyword sets can be edited from the terminal"),
                "q" | "quit" => bail!("stopped before the report was written"),
                other => eprintln!("unrecognized answer {other:?}"),
            }
        }
        if let Some(store) = &store {
            persist(store, session.state(), session.events())?;
        }
    }
    std::fs::write(out, render_markdown(session.state(), &pid)?).with_context(|| format!("writing {}", out.display()))?;
    if let Some(store) = &store {
        persist(store, session.state(), session.events())?;
    }
    eprintln!("wrote {} ({})", out.display(), session.id());
    Ok(())
}

fn print_node(node: &litscope_core::NodeRecord) {
    eprintln!("\n== {:?} [{:?}]", node.kind, node.status);
    if let Some(err) = &node.error {
        eprintln!("error: {err}");
    }
    match &node.output {
        Some(NodePayload::KeywordSet(k)) => eprintln!("keywords: {}", k.iter().collect::<Vec<_>>().join(", ")),
        Some(NodePayload::PaperList(ids)) => eprintln!("{} papers: {}", ids.len(), ids.join(" ")),
        Some(NodePayload::ReviewResult(r)) => {
            for v in &r.verdicts {
                eprintln!("  {:.2} {} {}", v.relevance_score, v.arxiv_id, v.agent_rationale);
            }
        }
        Some(NodePayload::Report(r)) => eprintln!("{}", r.body),
        None => {}
    }
}

/// Rewrites the session log and snapshot from the in-memory session.
fn persist(store: &SessionStore, state: &SessionState, events: &[litscope_core::Event]) -> anyhow::Result<()> {
    let log = store.log_path(&state.session_id);
    let _ = std::fs::remove_file(&log);
    for e in events {
        store.append(&state.session_id, e)?;
    }
    store.write_snapshot(state, events)?;
    Ok(())
}

fn export(session: &str, out: &std::path::Path, data_dir: &std::path::Path) -> anyhow::Result<()> {
    let store = SessionStore::open(data_dir)?;
    let id = SessionId(session.into());
    let events = store.read_log(&id).with_context(|| format!("reading the log of {session}"))?;
    let state = SessionState::replay(&events)?;
    save_snapshot(out, &state, &events)?;
    eprintln!("wrote {} ({} events)", out.display(), events.len());
    Ok(())
}
