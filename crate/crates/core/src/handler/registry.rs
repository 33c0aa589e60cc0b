use std::collections::HashMap;
use std::sync::Arc;

use super::{AgentHandler, EchoHandler, SleepyHandler, ToolAgentHandler, ToolTask};

pub type HandlerFactory = Arc<dyn Fn() -> Box<dyn AgentHandler> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("task name must be nonempty")]
    EmptyName,
    #[error("task {0:?} is already registered")]
    DuplicateName(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

/// Task name to handler factory. Populated at startup, then read-only.
#[derive(Clone, Default)]
pub struct HandlerRegistry {
    factories: HashMap<String, HandlerFactory>,
}

impl std::fmt::Debug for HandlerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HandlerRegistry").field("tasks", &self.names()).finish()
    }
}

impl HandlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// "echo", "arith", "shell-sim" and "sleepy".
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_fn("echo", || Box::new(EchoHandler::default())).expect("fresh registry");
        r.register_fn("arith", || Box::new(ToolAgentHandler::new(ToolTask::Arith))).expect("fresh registry");
        r.register_fn("shell-sim", || Box::new(ToolAgentHandler::new(ToolTask::ShellSim))).expect("fresh registry");
        r.register_fn("sleepy", || Box::new(SleepyHandler::default())).expect("fresh registry");
        r
    }

    pub fn register(&mut self, name: &str, factory: HandlerFactory) -> Result<(), RegistryError> {
        if name.is_empty() {
            return Err(RegistryError::EmptyName);
        }
        if self.factories.contains_key(name) {
            return Err(RegistryError::DuplicateName(name.to_string()));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn register_fn<F>(&mut self, name: &str, f: F) -> Result<(), RegistryError>
    where
        F: Fn() -> Box<dyn AgentHandler> + Send + Sync + 'static,
    {
        self.register(name, Arc::new(f))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    /// A fresh handler instance for one job.
    pub fn dispatch(&self, name: &str) -> Result<Box<dyn AgentHandler>, RegistryError> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| RegistryError::UnknownTask(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.factories.keys().cloned().collect();
        names.sort();
        names
    }
}
