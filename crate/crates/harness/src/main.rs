use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use drt_harness::config::{LoadedConfig, StudyConfig, DATA_ENV};
use drt_harness::error::{HarnessError, Result};
use drt_harness::pipeline::{self, to_json_pretty, SIM_DIR, STUDY_DEFINITION_FILE};
use drt_harness::report::{comparison_text, study_text};
use drt_harness::service::{ServiceError, ServiceOptions, StudyService, SystemClock};
use drt_harness::study::StudyDefinition;
use drt_harness::{http, synthetic};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "drt", version, about = "Crowdsourced Diagnostic Rhyme Test harness")]
struct Cli {
    /// Study config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces every configured seed by ones derived from this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Format of what is printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a small synthetic study (word list, raw audio, config) to --out.
    InitDemo {
        #[arg(long, default_value_t = 24)]
        pairs: usize,
        #[arg(long, default_value_t = 6)]
        blocks: usize,
    },
    /// Checks and normalizes raw recordings into the WB test set.
    Curate,
    /// Derives the configured condition from the WB test set.
    ApplyCondition,
    /// Builds blocks, catch trials, practice and digits into a study definition.
    MakeBlocks,
    /// Simulates listener panels and writes exports, reports and a comparison.
    Simulate,
    /// Runs the study service over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Data directory for event logs; falls back to $DRT_HARNESS_DATA.
        #[arg(long, env = DATA_ENV)]
        data: Option<PathBuf>,
        /// Study definitions to register at startup (skipped if already present).
        #[arg(long = "study")]
        studies: Vec<PathBuf>,
        /// Directory with the audio files referenced by studies.
        #[arg(long)]
        audio_root: Option<PathBuf>,
        /// Directory with a static client bundle served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Secret mixed into completion tokens.
        #[arg(long, env = "DRT_TOKEN_SALT", default_value = "")]
        token_salt: String,
    },
    /// Scores an exported study.
    Analyze { export: PathBuf },
    /// Compares the results of two exported studies.
    Compare {
        first: PathBuf,
        second: PathBuf,
        /// Paired test over recordings common to both.
        #[arg(long)]
        paired: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .json()
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<LoadedConfig> {
    let path = cli.config.as_deref().ok_or_else(|| HarnessError::invalid("this command needs --config"))?;
    let mut lc = StudyConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        lc.override_seeds(seed);
    }
    Ok(lc)
}

fn out_dir(cli: &Cli, lc: &LoadedConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| lc.output_dir())
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce(&T) -> String) {
    match format {
        Format::Json => print!("{}", to_json_pretty(value)),
        Format::Text => print!("{}", text(value)),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::InitDemo { pairs, blocks } => {
            let dir = cli.out.clone().ok_or_else(|| HarnessError::invalid("init-demo needs --out"))?;
            let demo = synthetic::write_demo(&dir, *pairs, 6, *blocks)?;
            println!("{}", demo.config.display());
        }
        Command::Curate => {
            let lc = load_config(cli)?;
            let report = pipeline::curate(&lc, &out_dir(cli, &lc))?;
            emit(cli.format, &report, |r| {
                let mut s = format!("{}: {} accepted, {} rejected\n", r.condition, r.accepted, r.rejected);
                for e in r.entries.iter().filter(|e| !e.accepted) {
                    s.push_str(&format!("  {} {:?}\n", e.recording_id, e.rejection));
                }
                for v in &r.violations {
                    s.push_str(&format!("  violation: {v}\n"));
                }
                s
            });
            if !report.violations.is_empty() {
                return Err(HarnessError::invalid(format!("curated set has {} violation(s)", report.violations.len())));
            }
        }
        Command::ApplyCondition => {
            let lc = load_config(cli)?;
            let set = pipeline::apply_configured_condition(&lc, &out_dir(cli, &lc))?;
            emit(cli.format, &serde_json::json!({"condition": set.condition, "recordings": set.recordings.len()}), |_| {
                format!("{}: {} recordings\n", set.condition, set.recordings.len())
            });
        }
        Command::MakeBlocks => {
            let lc = load_config(cli)?;
            let out = out_dir(cli, &lc);
            let def = pipeline::make_blocks(&lc, &out)?;
            let sizes: Vec<usize> = def.blocks.iter().map(|b| b.items.len()).collect();
            emit(cli.format, &serde_json::json!({"study_id": def.study_id, "block_items": sizes}), |_| {
                format!(
                    "{}: {} blocks of {:?} items, written to {}\n",
                    def.study_id,
                    def.blocks.len(),
                    sizes,
                    out.join(STUDY_DEFINITION_FILE).display()
                )
            });
        }
        Command::Simulate => {
            let lc = load_config(cli)?;
            let dir = cli.out.clone().unwrap_or_else(|| lc.output_dir().join(SIM_DIR));
            let outcome = pipeline::simulate(&lc)?;
            pipeline::write_simulation(&dir, &outcome)?;
            let reports: Vec<_> = outcome.studies.iter().map(|s| &s.report).collect();
            let value = serde_json::json!({"reports": reports, "comparison": outcome.comparison});
            emit(cli.format, &value, |_| {
                let mut s: String = reports.iter().map(|r| study_text(r) + "\n").collect();
                if let Some(c) = &outcome.comparison {
                    s.push_str(&comparison_text(c));
                }
                s
            });
        }
        Command::Analyze { export } => {
            let report = pipeline::analyze(&pipeline::load_export(export)?)?;
            if let Some(dir) = &cli.out {
                pipeline::write_report(dir, &report)?;
            }
            emit(cli.format, &report, study_text);
        }
        Command::Compare { first, second, paired } => {
            let a = pipeline::analyze(&pipeline::load_export(first)?)?;
            let b = pipeline::analyze(&pipeline::load_export(second)?)?;
            let c = pipeline::compare(&a, &b, *paired)?;
            if let Some(dir) = &cli.out {
                pipeline::write_comparison(dir, &c)?;
            }
            emit(cli.format, &c, comparison_text);
        }
        Command::Serve { addr, data, studies, audio_root, static_dir, token_salt } => {
            serve(*addr, data.clone(), studies, audio_root.clone(), static_dir.clone(), token_salt.clone())?;
        }
    }
    Ok(())
}

fn service_err(e: ServiceError) -> HarnessError {
    match e {
        ServiceError::Storage(h) => h,
        other => HarnessError::invalid(other),
    }
}

fn read_definition(path: &Path) -> Result<StudyDefinition> {
    let text = drt_harness::error::read_to_string(path)?;
    let def: StudyDefinition = serde_json::from_str(&text).map_err(|e| HarnessError::at_line(e.line(), e).in_file(path))?;
    def.validate().map_err(|e| e.in_file(path))?;
    Ok(def)
}

fn serve(
    addr: SocketAddr,
    data_dir: Option<PathBuf>,
    studies: &[PathBuf],
    audio_root: Option<PathBuf>,
    static_dir: Option<PathBuf>,
    token_salt: String,
) -> Result<()> {
    let defs = studies.iter().map(|p| read_definition(p)).collect::<Result<Vec<_>>>()?;
    let data_dir = data_dir.ok_or_else(|| HarnessError::invalid(format!("serve needs --data or {DATA_ENV}")))?;
    let opts = ServiceOptions { data_dir: Some(data_dir), audio_root, token_salt, ..ServiceOptions::default() };
    let svc = Arc::new(StudyService::new(opts, Arc::new(SystemClock)).map_err(service_err)?);
    let known = svc.study_ids();
    for def in defs {
        if !known.contains(&def.study_id) {
            svc.create_study(def).map_err(service_err)?;
        }
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| HarnessError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| HarnessError::io(addr.to_string(), e))?;
        tracing::info!(%addr, "listening");
        let sweeper = {
            let svc = svc.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(Duration::from_secs(60));
                loop {
                    tick.tick().await;
                    let svc = svc.clone();
                    match tokio::task::spawn_blocking(move || svc.sweep_expired()).await {
                        Ok(Ok(n)) if n > 0 => tracing::info!(expired = n, "swept idle sessions"),
                        Ok(Err(e)) => tracing::error!(error = %e, "expiry sweep failed"),
                        _ => {}
                    }
                }
            })
        };
        let app = http::router(svc.clone(), static_dir);
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await;
        sweeper.abort();
        result.map_err(|e| HarnessError::io(addr.to_string(), e))
    })?;
    svc.snapshot_all().map_err(service_err)
}
