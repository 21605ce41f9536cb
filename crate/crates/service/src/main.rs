use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use explore_service::config::SESSION_DEFAULTS_ENV;
use explore_service::{register, router, AppState, Manifest, ServiceConfig, ServiceError};
use tracing::{error, info};

/// Serves exploration sessions over HTTP.
#[derive(Parser, Debug)]
#[command(name = "explore-service", version)]
struct Args {
    /// Service configuration (TOML).
    #[arg(long, env = "EXPLORE_CONFIG")]
    config: Option<PathBuf>,
    /// Listen address; overrides the config file.
    #[arg(long, env = "EXPLORE_LISTEN")]
    listen: Option<SocketAddr>,
    /// Dataset manifest (TOML or JSON); overrides the config file.
    #[arg(long, env = "EXPLORE_MANIFEST")]
    manifest: Option<PathBuf>,
}

fn load(args: &Args) -> Result<(ServiceConfig, AppState), ServiceError> {
    let mut config = match &args.config {
        Some(p) => ServiceConfig::from_path(p)?,
        None => ServiceConfig::default(),
    };
    if let Ok(json) = std::env::var(SESSION_DEFAULTS_ENV) {
        config.apply_session_overrides(&json)?;
    }
    config.session.validate()?;
    if let Some(l) = args.listen {
        config.listen = l;
    }
    if let Some(m) = &args.manifest {
        config.manifest = Some(m.clone());
    }
    let path = config
        .manifest
        .clone()
        .ok_or_else(|| ServiceError::Manifest("no manifest given".into()))?;
    let manifest = Manifest::from_path(&path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let datasets = register(&manifest, &base)?;
    info!(datasets = datasets.len(), "registered datasets");
    let state = AppState::new(datasets, config.session.clone());
    Ok((config, state))
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let (config, state) = match load(&args) {
        Ok(v) => v,
        Err(e) => {
            error!("startup failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(config.listen).await {
        Ok(l) => l,
        Err(e) => {
            error!("cannot bind {}: {e}", config.listen);
            return ExitCode::FAILURE;
        }
    };
    info!("listening on {}", config.listen);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
        error!("server error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
