use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use dynavis_core::gateway::LlmGateway;
use dynavis_service::{http, Engine, EngineConfig};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "dynavis-service", about = "REST service for natural-language chart editing")]
struct Args {
    #[arg(long, env = "DYNAVIS_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory for session logs; sessions are in memory when omitted.
    #[arg(long, env = "DYNAVIS_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Skip model-written dataset descriptions on import.
    #[arg(long)]
    no_enrich: bool,
    /// Do not synthesize a widget with each chart edit.
    #[arg(long)]
    no_auto_widget: bool,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let llm = Arc::new(LlmGateway::from_env()?);
    tracing::info!(mode = ?llm.mode(), model = llm.model_tag(), "gateway ready");
    let config = EngineConfig {
        data_dir: args.data_dir,
        enrich: !args.no_enrich,
        auto_widget: !args.no_auto_widget,
        ..EngineConfig::default()
    };
    let engine = Arc::new(Engine::new(llm, config)?);
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, http::router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
