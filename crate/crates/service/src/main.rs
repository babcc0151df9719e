use std::net::SocketAddr;
use std::time::Duration;

use clap::Parser;
use prevmix_service::{app, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "prevmix-service",
    version,
    about = "HTTP service for cohort design calculations"
)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
    /// Per-request compute budget in milliseconds.
    #[arg(long, default_value_t = 5000)]
    budget_ms: u64,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let state = AppState {
        budget: Duration::from_millis(args.budget_ms),
    };
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app(state, &args.cors_origins)).await
}
