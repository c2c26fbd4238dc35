use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use cardrewriter::corpus;
use cardrewriter::search::SearchIndex;
use cardrewriter_cli::commands::{self, DatasetOptions, DatasetTask};
use cardrewriter_cli::config::AppConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cardrewriter",
    version,
    about = "Card-based query rewriting for video search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the corpus, query log and query statistics.
    Ingest {
        #[arg(long)]
        videos: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        stats: PathBuf,
    },
    /// Run the live retrieval system for one query.
    Search {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Corpus file; alternatively taken from --config.
        #[arg(long, conflicts_with = "config")]
        videos: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build a training dataset with its manifest.
    BuildDatasets {
        #[arg(long, value_enum)]
        task: DatasetTask,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Plain-text query list (one per line); defaults to the log's distinct queries.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Number of queries sampled for the grpo task.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute hitrate and increment metrics over evaluation cases.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value = "50,300")]
        k: String,
        #[arg(long, default_value = "system")]
        label: String,
    },
    /// Start the HTTP serving front end with the near-line worker.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        config: PathBuf,
    },
    /// Walk the built-in misspelled-creator scenario end to end.
    Demo,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { videos, log, stats } => print_json(&commands::ingest(&videos, &log, &stats)?),
        Command::Search {
            query,
            k,
            videos,
            config,
        } => {
            let index = match (videos, config) {
                (Some(v), _) => Arc::new(SearchIndex::build(Arc::new(corpus::load_video_corpus(&v)?))),
                (None, Some(c)) => AppConfig::load(c)?.index()?,
                (None, None) => anyhow::bail!("pass --videos or --config"),
            };
            print_json(&commands::search(&index, &query, k)?)
        }
        Command::BuildDatasets {
            task,
            out,
            config,
            queries,
            n,
            seed,
        } => {
            let config = AppConfig::load(config)?;
            let (path, manifest) = commands::build_datasets(&config, task, &out, &DatasetOptions { queries, n, seed })?;
            eprintln!("wrote {}", path.display());
            print_json(&manifest)
        }
        Command::Eval { cases, k, label } => {
            let ks = commands::parse_ks(&k)?;
            let (report, table) = commands::eval(&cases, &ks, &label)?;
            eprintln!("{table}");
            print_json(&report)
        }
        Command::Serve { port, config } => {
            let config = AppConfig::load(config)?;
            tokio::runtime::Runtime::new()
                .context("starting the async runtime")?
                .block_on(commands::serve(config, port))
        }
        Command::Demo => print_json(&commands::demo()?),
    }
}
