use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use storyroom_server::{serve, ProviderMode, ServerConfig};

#[derive(Parser, Debug)]
#[command(version, about = "Story room server")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderMode::Http)]
    provider: ProviderMode,
    /// Scripted responses: a JSON array of {"match", "response"} objects.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Provider settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let config = ServerConfig {
        port: args.port,
        data_dir: args.data_dir,
        provider: args.provider,
        script: args.script,
        config: args.config,
    };
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match serve(config, shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
