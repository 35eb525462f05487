//! Deterministic desk-scale task families with gold labels and graders: a
//! synthetic multi-hop tool-QA generator, a small text world, the scripted
//! policies that drive them through the real runtime, and the evaluation
//! harness.

mod harness;
mod policy;
mod textworld;
mod tooltask;

pub use harness::{
    compare_retrieval_strategies, evaluate_suite, grade, instantiate_task, BackendFactory,
    ComparisonReport, EvalConfig, EvalReport, SuiteManifest, TaskEval,
};
pub use policy::ScriptedPolicyBackend;
pub use textworld::{generate_text_world_task, verb_docs, GoalCondition, TextWorldTask, WorldState};
pub use tooltask::{generate_tool_task, SyntheticToolTask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("registry error: {0}")]
    Registry(#[from] crate::registry::RegistryError),
    #[error("task error: {0}")]
    Task(String),
}

/// Any task file the runtime can execute, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskFile {
    SyntheticTool(SyntheticToolTask),
    TextWorld(TextWorldTask),
    Plain(crate::agent::TaskSpec),
}

impl TaskFile {
    pub fn id(&self) -> &str {
        match self {
            TaskFile::SyntheticTool(t) => &t.id,
            TaskFile::TextWorld(t) => &t.id,
            TaskFile::Plain(t) => &t.id,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EnvError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), EnvError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
