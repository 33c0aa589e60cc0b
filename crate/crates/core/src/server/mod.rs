//! The HTTP surface of the rollout service.

pub mod config;
pub mod routes;
pub mod schema;
pub mod service;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

pub use config::{ConfigError, ServerConfig, ENV_BIND, ENV_CONFIG};
pub use routes::{app, serve};
pub use schema::{
    AddBackendRequest, CancelRequest, CancelResponse, ErrorBody, InstanceSpec, LifecycleResponse, PoolSummary,
    ProcessRequest, ProcessResponse, StatusResponse,
};
pub use service::{RolloutService, ServiceError};

use crate::handler::HandlerRegistry;

/// A rollout server running on a local port inside the current runtime.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    service: Arc<RolloutService>,
    shutdown: CancellationToken,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    /// Binds `config.bind:config.port` (port 0 picks one) and serves.
    pub async fn spawn(config: ServerConfig, registry: HandlerRegistry) -> std::io::Result<Self> {
        let addr = config.socket_addr().map_err(std::io::Error::other)?;
        let autostart = config.autostart;
        let service = RolloutService::new(config, registry).map_err(std::io::Error::other)?;
        if autostart {
            service.start().await.map_err(std::io::Error::other)?;
        }
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let shutdown = CancellationToken::new();
        let stop = shutdown.clone();
        let task = tokio::spawn(serve(service.clone(), listener, async move { stop.cancelled().await }));
        Ok(Self { addr, service, shutdown, task: Some(task) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Arc<RolloutService> {
        &self.service
    }

    /// Drains the service and waits for the listener to close.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        self.shutdown.cancel();
        match self.task.take() {
            Some(task) => task.await.map_err(std::io::Error::other)?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown.cancel();
    }
}
