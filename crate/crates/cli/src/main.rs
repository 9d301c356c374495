//! `mirror`: ingest exports, compute layouts, maintain the store and run
//! the HTTP server.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mirror_core::config::{ApiKeys, MirrorConfig};
use mirror_core::http::UreqClient;
use mirror_core::ingestion::ExportFile;
use mirror_core::layout::Axis;
use mirror_core::model::TopicId;
use mirror_core::pipeline::{self, LayoutRequest, Services};
use mirror_core::store::Store;

#[derive(Parser)]
#[command(name = "mirror", version, about = "Maps of personal watch histories")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true, env = "MIRROR_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the data directory from the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Creates a dataset from export files and runs the full pipeline.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Resumes an interrupted dataset.
    Resume { dataset_id: String },
    /// Computes another layout of a ready dataset.
    Layout {
        dataset_id: String,
        #[arg(long, value_enum, default_value_t = KindArg::SemanticMap)]
        kind: KindArg,
        /// Concept for the x axis, or `time`.
        #[arg(long)]
        x: Option<String>,
        /// Concept for the y axis, or `time`.
        #[arg(long)]
        y: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Topic ids left out of a grid layout.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<u32>,
    },
    /// Lists datasets and their stages.
    List,
    /// Removes unreferenced objects, temporary files and stale locks.
    Gc,
    /// Deletes a dataset and everything stored for it.
    Delete { dataset_id: String },
    /// Runs the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    SemanticMap,
    Grid,
    Axes,
}

fn axis(arg: Option<String>, name: &str) -> Result<Axis> {
    match arg.as_deref().map(str::trim) {
        None | Some("") => bail!("--{name} is required for an axes layout"),
        Some(t) if t.eq_ignore_ascii_case("time") => Ok(Axis::Time),
        Some(c) => Ok(Axis::Concept(c.to_string())),
    }
}

fn load_config(cli: &Cli) -> Result<MirrorConfig> {
    let mut cfg = match &cli.config {
        Some(p) => MirrorConfig::load(p)?,
        None => MirrorConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(d) = &cli.data_dir {
        cfg.server.data_dir = d.clone();
    }
    Ok(cfg)
}

fn services(cfg: &MirrorConfig) -> Result<Services> {
    let http = Arc::new(UreqClient::new(mirror_server::HTTP_TIMEOUT));
    Ok(Services::from_config(&cfg.dataset, &ApiKeys::from_env(), http)?)
}

fn run_pipeline(store: &Store, id: &str, svc: &Services) -> Result<()> {
    pipeline::run(store, id, svc, &|stage| eprintln!("{id}: {stage}"))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let store = || Store::open(&cfg.server.data_dir).with_context(|| format!("opening {}", cfg.server.data_dir.display()));

    match cli.command {
        Command::Ingest { files } => {
            let store = store()?;
            let uploads = files
                .iter()
                .map(|p| {
                    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "export".into());
                    Ok(ExportFile::new(name, std::fs::read(p).with_context(|| format!("reading {}", p.display()))?))
                })
                .collect::<Result<Vec<_>>>()?;
            pipeline::bundle_uploads(uploads.clone())?;
            let id = pipeline::create_from_uploads(&store, &cfg.dataset, &uploads)?;
            run_pipeline(&store, &id, &services(&cfg)?)?;
            println!("{id}");
        }
        Command::Resume { dataset_id } => {
            let store = store()?;
            let dataset_cfg = store.manifest(&dataset_id)?.config;
            let svc = services(&MirrorConfig { dataset: dataset_cfg, ..cfg.clone() })?;
            run_pipeline(&store, &dataset_id, &svc)?;
            println!("{dataset_id}");
        }
        Command::Layout { dataset_id, kind, x, y, seed, exclude } => {
            let req = match kind {
                KindArg::SemanticMap => LayoutRequest::SemanticMap { seed },
                KindArg::Grid => LayoutRequest::Grid { exclude: exclude.into_iter().map(TopicId).collect() },
                KindArg::Axes => LayoutRequest::SemanticAxes { x: axis(x, "x")?, y: axis(y, "y")? },
            };
            let store = store()?;
            let dataset_cfg = store.manifest(&dataset_id)?.config;
            let svc = services(&MirrorConfig { dataset: dataset_cfg, ..cfg.clone() })?;
            let layout = pipeline::create_layout(&store, &dataset_id, &req, &svc)?;
            println!("{}", layout.layout_id);
        }
        Command::List => {
            let store = store()?;
            for id in store.list()? {
                let m = store.manifest(&id)?;
                println!("{id}\t{}\t{}", m.stage, m.created_at.to_rfc3339());
            }
        }
        Command::Gc => {
            let report = store()?.gc()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Delete { dataset_id } => {
            let store = store()?;
            let lock = store.lock(&dataset_id)?;
            store.delete(&dataset_id)?;
            drop(lock);
            println!("deleted {dataset_id}");
        }
        Command::Serve { bind } => {
            let mut cfg = cfg.clone();
            if let Some(b) = bind {
                cfg.server.bind = b;
            }
            tokio::runtime::Runtime::new()?.block_on(mirror_server::serve(cfg, ApiKeys::from_env()))?;
        }
    }
    Ok(())
}
