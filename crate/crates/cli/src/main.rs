mod eval;
mod setup;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hearth_core::knowledge_base::ingest;
use hearth_core::privacy::{anonymize, detect_pii, AnonymizationMap, RuleBasedDetector, SurrogatePools};
use hearth_core::service::{router, PersistenceStore, SessionManager};
use setup::{ConfigArgs, EngineArgs};
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "hearth", version, about = "Privacy-preserving counseling chat engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed on stdout.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Session storage root. Without it sessions live in memory only.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Terminal conversation over the same pipeline.
    Chat {
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the retrieval trace after every reply.
        #[arg(long)]
        trace: bool,
    },
    /// Embed a corpus CSV and write a knowledge-base snapshot.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        embed: setup::EmbedArgs,
    },
    /// Anonymize text line by line with one shared map.
    Anonymize {
        /// Input file, or `-` for stdin.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the map (original ↔ surrogate) here. It contains raw PII.
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Evaluation tools.
    Eval {
        #[command(subcommand)]
        command: eval::EvalCommand,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("HEARTH_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { host, port, data_dir, engine, config } => serve(&host, port, data_dir, &engine, &config),
        Command::Chat { engine, config, trace } => chat(&engine, &config, trace),
        Command::Ingest { corpus, out, embed } => {
            let embedder = embed.build();
            let kb = ingest(&corpus, embedder.as_ref()).with_context(|| format!("ingesting {}", corpus.display()))?;
            kb.save_snapshot(&out)?;
            println!("{}", serde_json::to_string(&kb.report())?);
            Ok(())
        }
        Command::Anonymize { input, seed, map_out } => anonymize_file(&input, seed, map_out.as_deref()),
        Command::Eval { command } => eval::run(command),
    }
}

fn serve(host: &str, port: u16, data_dir: Option<PathBuf>, engine: &EngineArgs, config: &ConfigArgs) -> Result<()> {
    let defaults = config.resolve()?;
    let engine = engine.build()?;
    let store = data_dir.map(PersistenceStore::open).transpose()?;
    let manager = Arc::new(SessionManager::new(engine, store, defaults));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        axum::serve(listener, router(manager)).await?;
        Ok(())
    })
}

fn chat(engine: &EngineArgs, config: &ConfigArgs, trace: bool) -> Result<()> {
    let defaults = config.resolve()?;
    let manager = SessionManager::new(engine.build()?, None, defaults);
    let id = manager.create_session(None)?;
    eprintln!("session {id}. Type /entities to list memory, /quit to leave.");
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/entities" => {
                for e in manager.get_entities(&id)? {
                    writeln!(out, "{}: {}", e.display_name, e.summary)?;
                }
                continue;
            }
            _ => {}
        }
        match manager.post_message(&id, line) {
            Ok(r) => {
                writeln!(out, "{}", r.reply)?;
                if trace {
                    writeln!(out, "  {}", serde_json::to_string(&r.trace)?)?;
                }
            }
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
    Ok(())
}

fn anonymize_file(input: &std::path::Path, seed: u64, map_out: Option<&std::path::Path>) -> Result<()> {
    let text = if input.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?
    };
    let detector = RuleBasedDetector::builtin();
    let pools = SurrogatePools::builtin();
    let mut map = AnonymizationMap::new("cli", seed);
    let mut out = std::io::stdout().lock();
    for line in text.lines() {
        let spans = detect_pii(line, &detector)?;
        writeln!(out, "{}", anonymize(line, &spans, &mut map, &pools)?.text)?;
    }
    if let Some(path) = map_out {
        std::fs::write(path, serde_json::to_vec_pretty(&map)?)?;
    }
    Ok(())
}
