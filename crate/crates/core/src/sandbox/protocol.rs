use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Bash,
    Ping,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action_id: String,
    pub kind: ActionKind,
    pub payload: String,
    #[serde(rename = "timeout_ms", with = "crate::util::duration_ms")]
    pub timeout: Duration,
}

impl ActionRequest {
    pub fn new(kind: ActionKind, payload: impl Into<String>, timeout: Duration) -> Self {
        Self { action_id: crate::util::short_id("act"), kind, payload: payload.into(), timeout }
    }

    pub fn bash(cmd: impl Into<String>, timeout: Duration) -> Self {
        Self::new(ActionKind::Bash, cmd, timeout)
    }

    pub fn ping() -> Self {
        Self::new(ActionKind::Ping, "", Duration::from_secs(5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub action_id: String,
    pub exit_code: i32,
    pub output: String,
    #[serde(rename = "elapsed_ms", with = "crate::util::duration_ms")]
    pub elapsed: Duration,
}

/// What travels back over the channel for each request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ActionReply {
    Ok(ActionResult),
    Failed { action_id: String, failure: ActionFailure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum ActionFailure {
    Timeout,
    Internal(String),
}

impl ActionReply {
    pub fn action_id(&self) -> &str {
        match self {
            ActionReply::Ok(r) => &r.action_id,
            ActionReply::Failed { action_id, .. } => action_id,
        }
    }
}
