use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{RetryConfig, SelectionPolicy};
use crate::pipeline::WorkerPoolConfig;
use crate::sandbox::{CacheMode, DEFAULT_GRACE};

pub const ENV_CONFIG: &str = "ROLLOUT_CONFIG";
pub const ENV_BIND: &str = "ROLLOUT_BIND";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid bind address {0:?}")]
    Bind(String),
    #[error("{0}")]
    Invalid(String),
}

/// Server settings, read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub workers: WorkerPoolConfig,
    pub default_timeout_seconds: f64,
    pub retry: RetryConfig,
    pub policy: SelectionPolicy,
    pub runtime_dir: Option<PathBuf>,
    pub cache_root: Option<PathBuf>,
    pub cache_mode: CacheMode,
    pub grace_seconds: f64,
    pub address_capacity: Option<u32>,
    /// Start the worker pools without waiting for POST /start.
    pub autostart: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8000,
            workers: WorkerPoolConfig::default(),
            default_timeout_seconds: 600.0,
            retry: RetryConfig::default(),
            policy: SelectionPolicy::default(),
            runtime_dir: None,
            cache_root: None,
            cache_mode: CacheMode::Versioned,
            grace_seconds: DEFAULT_GRACE.as_secs_f64(),
            address_capacity: None,
            autostart: false,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    /// File named by `ROLLOUT_CONFIG` (or `path` if given), then `ROLLOUT_BIND`.
    pub fn from_env(path: Option<&Path>) -> Result<Self, ConfigError> {
        let env_path = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let mut config = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        if let Ok(bind) = std::env::var(ENV_BIND) {
            config.apply_bind(&bind)?;
        }
        Ok(config)
    }

    /// Accepts `host:port`, `[v6]:port` or a bare host.
    pub fn apply_bind(&mut self, bind: &str) -> Result<(), ConfigError> {
        if let Ok(addr) = bind.parse::<SocketAddr>() {
            self.bind = addr.ip().to_string();
            self.port = addr.port();
        } else if bind.parse::<std::net::IpAddr>().is_ok() {
            self.bind = bind.to_string();
        } else {
            return Err(ConfigError::Bind(bind.to_string()));
        }
        Ok(())
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, ConfigError> {
        let ip: std::net::IpAddr = self.bind.parse().map_err(|_| ConfigError::Bind(self.bind.clone()))?;
        Ok(SocketAddr::new(ip, self.port))
    }

    pub fn default_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.default_timeout_seconds)
    }

    pub fn grace(&self) -> Duration {
        Duration::from_secs_f64(self.grace_seconds)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.workers;
        if w.init == 0 || w.run == 0 || w.eval == 0 {
            return Err(ConfigError::Invalid("every stage needs at least one worker".into()));
        }
        if !(self.default_timeout_seconds.is_finite() && self.default_timeout_seconds > 0.0) {
            return Err(ConfigError::Invalid("default_timeout_seconds must be positive".into()));
        }
        if !(self.grace_seconds.is_finite() && self.grace_seconds >= 0.0) {
            return Err(ConfigError::Invalid("grace_seconds must be nonnegative".into()));
        }
        self.socket_addr()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ServerConfig::from_toml(
            "port = 9100\npolicy = \"least_in_flight\"\n[workers]\nrun = 4\n[retry]\nbudget_ms = 5000\n",
            Path::new("t.toml"),
        )
        .unwrap();
        assert_eq!(c.port, 9100);
        assert_eq!(c.workers, WorkerPoolConfig { init: 8, run: 4, eval: 8 });
        assert_eq!(c.retry.budget, Duration::from_secs(5));
        assert_eq!(c.retry.base, Duration::from_millis(100));
        assert_eq!(c.policy, SelectionPolicy::LeastInFlight);
        assert_eq!(c.default_timeout(), Duration::from_secs(600));
    }

    #[test]
    fn rejects_unknown_keys_and_zero_workers() {
        assert!(ServerConfig::from_toml("prot = 1", Path::new("t")).is_err());
        assert!(ServerConfig::from_toml("[workers]\ninit = 0", Path::new("t")).is_err());
    }

    #[test]
    fn bind_override() {
        let mut c = ServerConfig::default();
        c.apply_bind("0.0.0.0:7000").unwrap();
        assert_eq!(c.socket_addr().unwrap(), "0.0.0.0:7000".parse().unwrap());
        c.apply_bind("127.0.0.5").unwrap();
        assert_eq!(c.socket_addr().unwrap(), "127.0.0.5:7000".parse().unwrap());
        assert!(c.apply_bind("nope").is_err());
    }
}
