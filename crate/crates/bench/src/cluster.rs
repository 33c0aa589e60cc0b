//! In-process rollout servers on distinct loopback ports. A bench "node"
//! is one of these.

use std::sync::Arc;

use rollout_core::handler::HandlerRegistry;
use rollout_core::pipeline::WorkerPoolConfig;
use rollout_core::server::{RolloutService, ServerConfig, ServerHandle};
use rollout_core::trainer::RolloutClient;

use crate::BenchError;

/// What a finished run left behind. Both counts must be zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub orphan_groups: usize,
    pub leaked_addresses: usize,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.orphan_groups == 0 && self.leaked_addresses == 0
    }
}

pub fn server_config(workers: WorkerPoolConfig) -> ServerConfig {
    ServerConfig { port: 0, autostart: true, grace_seconds: 0.2, workers, ..ServerConfig::default() }
}

#[derive(Debug)]
pub struct Cluster {
    servers: Vec<ServerHandle>,
    services: Vec<Arc<RolloutService>>,
    clients: Vec<RolloutClient>,
}

impl Cluster {
    pub async fn spawn(n: usize, config: ServerConfig) -> Result<Self, BenchError> {
        let mut servers = Vec::with_capacity(n);
        for _ in 0..n {
            servers.push(ServerHandle::spawn(config.clone(), HandlerRegistry::with_builtins()).await?);
        }
        let services = servers.iter().map(|s| s.service().clone()).collect();
        let clients = servers.iter().map(|s| RolloutClient::new(s.url())).collect();
        Ok(Self { servers, services, clients })
    }

    pub fn clients(&self) -> &[RolloutClient] {
        &self.clients
    }

    pub fn servers(&self) -> &[ServerHandle] {
        &self.servers
    }

    pub fn audit(&self) -> Audit {
        let mut a = Audit::default();
        for s in &self.services {
            a.orphan_groups += s.sandbox().orphan_census().len();
            a.leaked_addresses += s.sandbox().allocator().live_count();
        }
        a
    }

    /// Drains every server, then audits. Leaks are an error.
    pub async fn shutdown(self) -> Result<Audit, BenchError> {
        let services = self.services;
        for s in self.servers {
            s.shutdown().await?;
        }
        let mut a = Audit::default();
        for s in &services {
            a.orphan_groups += s.sandbox().orphan_census().len();
            a.leaked_addresses += s.sandbox().allocator().live_count();
        }
        if a.is_clean() {
            Ok(a)
        } else {
            Err(BenchError::Leak(a))
        }
    }
}

/// Fails on the first server that does not answer /status.
pub async fn preflight(clients: &[RolloutClient]) -> Result<(), BenchError> {
    for c in clients {
        c.status().await?;
    }
    Ok(())
}
