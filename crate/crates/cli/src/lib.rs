//! Service and command-line front end for the litscope core.

pub mod api;
pub mod hub;
pub mod report;
pub mod services;

use std::net::SocketAddr;
use std::sync::Arc;

use litscope_core::SessionStore;

pub use hub::Hub;
pub use services::{ProviderMode, ServiceOptions};

/// Binds `addr` and serves the API until the process is interrupted.
pub async fn serve(addr: SocketAddr, data_dir: &std::path::Path, options: &ServiceOptions) -> anyhow::Result<()> {
    let hub = Arc::new(Hub::open(SessionStore::open(data_dir)?, options.build()?)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %data_dir.display(), "listening");
    axum::serve(listener, api::router(hub))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
