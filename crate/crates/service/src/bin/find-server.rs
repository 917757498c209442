use std::path::PathBuf;

use clap::Parser;
use find_service::{start, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Serves the debugging workbench API.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// TOML file with `bind`, `port`, `data_dir` and `workers`; the
    /// FIND_BIND, FIND_PORT, FIND_DATA_DIR and FIND_WORKERS variables win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let result = async {
        let config = ServiceConfig::load(args.config.as_deref())?;
        let server = start(&config).await?;
        println!("listening on {}", server.url());
        server.run_until_signal().await
    }
    .await;
    if let Err(e) = result {
        eprintln!("find-server: {e}");
        std::process::exit(if matches!(e, find_service::ServiceError::Validation(_)) { 2 } else { 3 });
    }
}
