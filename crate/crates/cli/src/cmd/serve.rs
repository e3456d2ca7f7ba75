use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use tokio::net::TcpListener;
use vitalcam_core::fer::load_model;
use vitalcam_service::{http, DetectorKind, Service, ServiceConfig};

use super::analyze::DetectorArg;
use crate::usage;

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// FERW model; without one, results carry no expression.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Consumer threads; defaults to the available parallelism.
    #[arg(long)]
    consumers: Option<usize>,
    #[arg(long, default_value_t = 64)]
    session_cap: usize,
    /// Batches held per session before the oldest is dropped.
    #[arg(long, default_value_t = 8)]
    queue_capacity: usize,
    #[arg(long, default_value_t = 10)]
    fer_every: u64,
    #[arg(long, value_enum, default_value = "static")]
    detector: DetectorArg,
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = ctrl_c => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = ctrl_c.await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

pub fn run(a: ServeArgs) -> anyhow::Result<()> {
    if a.fer_every == 0 {
        return Err(usage("--fer-every must be at least 1"));
    }
    let model = match &a.model {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            let model = load_model(&bytes).with_context(|| format!("{} is not a usable model", path.display()))?;
            Some(Arc::new(model))
        }
        None => None,
    };
    let config = ServiceConfig {
        session_cap: a.session_cap,
        queue_capacity: a.queue_capacity,
        fer_every: a.fer_every,
        detector: match a.detector {
            DetectorArg::Static => DetectorKind::Static,
            DetectorArg::Motion => DetectorKind::Motion,
        },
        model,
        ..ServiceConfig::default()
    };
    let consumers = a
        .consumers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get()));

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("cannot bind {}", a.bind))?;
        let service = Service::new(config);
        let workers = service.spawn_consumers(consumers);
        eprintln!("listening on http://{}", listener.local_addr()?);
        http::serve(listener, service, shutdown_signal()).await?;
        drop(workers);
        eprintln!("shut down");
        Ok(())
    })
}
