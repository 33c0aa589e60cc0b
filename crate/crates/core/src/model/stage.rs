use std::fmt;

use serde::{Deserialize, Serialize};

/// One of the three rollout lifecycle stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Init,
    Run,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Init, Stage::Run, Stage::Eval];

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Init => Some(Stage::Run),
            Stage::Run => Some(Stage::Eval),
            Stage::Eval => None,
        }
    }

    pub fn prev(self) -> Option<Stage> {
        match self {
            Stage::Init => None,
            Stage::Run => Some(Stage::Init),
            Stage::Eval => Some(Stage::Run),
        }
    }

    /// Dense index, usable for per-stage arrays.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "INIT",
            Stage::Run => "RUN",
            Stage::Eval => "EVAL",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
