use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use narrativeplay::evaluation::{evaluate_responses, extraction_metrics, parse_records, ExtractionJudgmentSheet};
use narrativeplay::storyline::{CharacterProfile, Storyline};
use tracing::info;

use crate::app::App;
use crate::clock::SystemClock;
use crate::config::{ProviderFile, ServiceConfig, DEFAULT_MAX_BODY_BYTES, DEFAULT_WORKERS};
use crate::routes::router;
use crate::store::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "narrativeplay", version, about = "Play a story as one of its characters")]
pub struct Cli {
    /// Where storylines, jobs and sessions are stored.
    #[arg(long, global = true, env = "NARRATIVEPLAY_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Where media assets are cached. Defaults to <data-dir>/media.
    #[arg(long, global = true, env = "NARRATIVEPLAY_MEDIA_DIR")]
    pub media_dir: Option<PathBuf>,
    /// Provider configuration (TOML or JSON). The offline mock when absent.
    #[arg(long, global = true, env = "NARRATIVEPLAY_PROVIDER_CONFIG")]
    pub provider_config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract a storyline from a text file.
    Ingest {
        file: PathBuf,
        /// Write the storyline here instead of into the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Title; the file stem by default.
        #[arg(long)]
        title: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Overrides the port of --listen.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value_t = DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
        #[arg(long, default_value_t = DEFAULT_WORKERS)]
        workers: usize,
    },
    /// Judge agent responses with the rubric prompts and print mean scores.
    Eval {
        /// JSON lines of response records.
        #[arg(long)]
        responses: PathBuf,
        /// `mock`, `mock:<seed>`, or a provider configuration file.
        #[arg(long)]
        judge: String,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score extracted characters against an annotation sheet.
    Metrics {
        /// A storyline document or a JSON array of character profiles.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        sheet: PathBuf,
        /// Write an all-correct draft sheet for annotators instead.
        #[arg(long)]
        draft: bool,
    },
}

impl Cli {
    fn provider_file(&self) -> anyhow::Result<ProviderFile> {
        match &self.provider_config {
            Some(path) => ProviderFile::load(path),
            None => Ok(ProviderFile::mock(0)),
        }
    }

    fn service_config(&self, provider: &ProviderFile) -> ServiceConfig {
        let media_dir = self.media_dir.clone().unwrap_or_else(|| self.data_dir.join("media"));
        let mut config = ServiceConfig::new(&self.data_dir, media_dir);
        config.style = provider.media.style.clone();
        config
    }

    fn app(&self, config: ServiceConfig, provider: &ProviderFile) -> anyhow::Result<App> {
        let media = provider.media_store(&config.media_dir)?;
        App::new(config, provider.gateway()?, media, provider.voices(), Arc::new(SystemClock))
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Ingest { file, out, title } => ingest(&cli, file, out.as_deref(), title.as_deref()),
        Command::Serve {
            listen,
            port,
            max_body_bytes,
            workers,
        } => {
            let provider = cli.provider_file()?;
            let mut config = cli.service_config(&provider);
            config.max_body_bytes = *max_body_bytes;
            config.workers = *workers;
            let mut addr = *listen;
            if let Some(p) = port {
                addr.set_port(*p);
            }
            let app = Arc::new(cli.app(config, &provider)?);
            serve(app, addr)
        }
        Command::Eval { responses, judge, out } => eval(responses, judge, out.as_deref()),
        Command::Metrics { registry, sheet, draft } => metrics(registry, sheet, *draft),
    }
}

fn ingest(cli: &Cli, file: &Path, out: Option<&Path>, title: Option<&str>) -> anyhow::Result<()> {
    let body = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let title = title
        .map(str::to_string)
        .or_else(|| file.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let provider = cli.provider_file()?;
    let mut config = cli.service_config(&provider);
    config.max_body_bytes = config.max_body_bytes.max(body.len());
    let app = cli.app(config, &provider)?;
    let submission = app.submit_narrative(&title, &body)?;
    let storyline = if submission.created {
        app.run_ingestion(&submission.job.narrative_id, &submission.job.title, &body)?
    } else {
        app.storyline(&submission.job.narrative_id)?
    };
    if let Some(out) = out {
        let mut text = storyline.to_json();
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
    }
    println!(
        "{}: {} characters, {} events, {} locations",
        storyline.narrative_id,
        storyline.characters.len(),
        storyline.events.len(),
        storyline.environments.len()
    );
    Ok(())
}

fn serve(app: Arc<App>, addr: SocketAddr) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn judge_provider(judge: &str) -> anyhow::Result<ProviderFile> {
    if judge == "mock" {
        return Ok(ProviderFile::mock(0));
    }
    if let Some(seed) = judge.strip_prefix("mock:") {
        return Ok(ProviderFile::mock(seed.parse().context("mock seed must be an integer")?));
    }
    ProviderFile::load(Path::new(judge))
}

fn eval(responses: &Path, judge: &str, out: Option<&Path>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(responses).with_context(|| format!("reading {}", responses.display()))?;
    let records = parse_records(&text)?;
    if records.is_empty() {
        bail!("{} holds no response records", responses.display());
    }
    let gateway = judge_provider(judge)?.gateway()?;
    let report = evaluate_responses(&gateway, &records)?;
    print!("{}", report.table.render());
    if let Some(out) = out {
        let bytes = serde_json::to_vec_pretty(&report)?;
        write_atomic(out, &bytes)?;
    }
    Ok(())
}

/// Characters from a storyline document or a bare profile list.
pub fn read_registry(path: &Path) -> anyhow::Result<Vec<CharacterProfile>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.is_array() {
        return Ok(serde_json::from_value(value)?);
    }
    Ok(Storyline::from_json(&text)?.characters)
}

fn metrics(registry: &Path, sheet: &Path, draft: bool) -> anyhow::Result<()> {
    let characters = read_registry(registry)?;
    if draft {
        let bytes = serde_json::to_vec_pretty(&ExtractionJudgmentSheet::draft(&characters))?;
        write_atomic(sheet, &bytes)?;
        println!("wrote a draft sheet for {} characters to {}", characters.len(), sheet.display());
        return Ok(());
    }
    let text = std::fs::read_to_string(sheet).with_context(|| format!("reading {}", sheet.display()))?;
    let sheet: ExtractionJudgmentSheet = serde_json::from_str(&text)?;
    let label = registry.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    print!("{}", extraction_metrics(&characters, &sheet)?.render(&label));
    Ok(())
}
