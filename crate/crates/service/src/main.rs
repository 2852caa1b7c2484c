use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::Parser;
use pedarec_service::{serve, state, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Consultation service for the pedagogical recommender.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML config file. `PEDAREC_*` environment variables override it.
    #[arg(short, long, env = "PEDAREC_CONFIG")]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = ServiceConfig::load(args.config.as_deref())?;
    let state = state(&config)?;

    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.advisor.purge_expired();
            if n > 0 {
                tracing::debug!(expired = n, "dropped idle sessions");
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
