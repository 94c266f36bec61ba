//! HTTP service and snapshot storage for story rooms.

pub mod api;
pub mod error;
pub mod state;
pub mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use storyroom_core::provider::{HttpProvider, Provider, ProviderConfig, ScriptedProvider};
use thiserror::Error;
use tokio::net::TcpListener;

pub use api::router;
pub use state::AppState;
pub use store::SnapshotStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderMode {
    Scripted,
    Http,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub provider: ProviderMode,
    /// Script file for the scripted provider.
    pub script: Option<PathBuf>,
    /// TOML provider config for the http provider.
    pub config: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the provider a config asks for.
pub fn build_provider(config: &ServerConfig) -> Result<Arc<dyn Provider>, ServeError> {
    let err = |e: storyroom_core::provider::ProviderError| ServeError::ConfigError(e.to_string());
    match config.provider {
        ProviderMode::Scripted => {
            let provider = match &config.script {
                Some(path) => ScriptedProvider::from_file(path).map_err(err)?,
                None => ScriptedProvider::from_responses(Vec::<String>::new()),
            };
            Ok(Arc::new(provider))
        }
        ProviderMode::Http => {
            if config.script.is_some() {
                return Err(ServeError::ConfigError(
                    "--script only applies to the scripted provider".into(),
                ));
            }
            let provider_config = match &config.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| ServeError::ConfigError(format!("{}: {e}", path.display())))?;
                    ProviderConfig::from_toml(&text).map_err(err)?
                }
                None => ProviderConfig::default(),
            };
            Ok(Arc::new(HttpProvider::new(provider_config).map_err(err)?))
        }
    }
}

pub async fn bind(port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr, source })
}

/// Serves until `shutdown` resolves, then writes snapshots of everything
/// that changed since its last save.
pub async fn serve_on(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let written = state
        .flush()
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    tracing::info!(written, "flushed snapshots");
    Ok(())
}

pub async fn serve(
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let provider = build_provider(&config)?;
    std::fs::create_dir_all(&config.data_dir).map_err(|e| {
        ServeError::ConfigError(format!("data dir {}: {e}", config.data_dir.display()))
    })?;
    let state = AppState::new(provider, SnapshotStore::new(&config.data_dir));
    let listener = bind(config.port).await?;
    serve_on(listener, state, shutdown).await
}
