//! Episode records: the ordered account of generated tokens, actions,
//! observations, and fold boundaries for one task. The trajectory file is
//! the sole input to reward and advantage computation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemorySnapshot;
use crate::protocol::{render_observation, ActionEvent, EventKind, Observation};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// One generated token piece with its behavior-policy logprob, if known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedToken {
    pub piece: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

/// One recorded step: the action event, its paired observation (every
/// tool_search/tool_call step has one), and the action's token index range
/// over `generated_tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: ActionEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub step_index: usize,
    pub snapshot: MemorySnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    ActionLimit,
    TokenLimit,
    BackendError,
}

/// Versioned record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub version: u32,
    pub task_id: String,
    pub question: String,
    pub instruction: String,
    pub steps: Vec<Step>,
    pub generated_tokens: Vec<GeneratedToken>,
    pub folds: Vec<FoldRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    pub termination: Termination,
    /// The one timestamp header field; everything else is deterministic
    /// under scripted backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported trajectory format version {0}")]
    UnsupportedVersion(u32),
}

impl Trajectory {
    pub fn new(task_id: &str, question: &str, instruction: &str) -> Self {
        Trajectory {
            version: TRAJECTORY_FORMAT_VERSION,
            task_id: task_id.to_string(),
            question: question.to_string(),
            instruction: instruction.to_string(),
            steps: Vec::new(),
            generated_tokens: Vec::new(),
            folds: Vec::new(),
            final_answer: None,
            termination: Termination::BackendError,
            created_at: None,
        }
    }

    /// The final answer text, present only when the episode answered.
    pub fn answer(&self) -> Option<&str> {
        match self.termination {
            Termination::Answered => self.final_answer.as_deref(),
            _ => None,
        }
    }

    /// Steps that count against the action budget (tool_search, tool_call,
    /// memory_fold).
    pub fn action_count(&self) -> usize {
        self.steps.iter().filter(|s| s.action.kind.is_action()).count()
    }

    /// Tool-call steps in order, with their parsed requests where valid.
    pub fn tool_calls(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| s.action.kind == EventKind::ToolCall)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrajectoryError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrajectoryError> {
        let text = std::fs::read_to_string(path)?;
        let traj: Trajectory = serde_json::from_str(&text)?;
        if traj.version > TRAJECTORY_FORMAT_VERSION {
            return Err(TrajectoryError::UnsupportedVersion(traj.version));
        }
        Ok(traj)
    }
}

/// Human-readable replay. The stream section renders every action in
/// protocol form, so re-scanning it reproduces the action sequence.
pub fn transcript(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(&format!("=== task {} ===\n", trajectory.task_id));
    out.push_str(&format!("question: {}\n", trajectory.question));
    out.push_str(&format!("instruction: {}\n", trajectory.instruction));
    out.push_str("--- stream ---\n");
    for (i, step) in trajectory.steps.iter().enumerate() {
        match step.action.kind {
            EventKind::Think => {
                out.push_str(&step.action.payload);
                out.push('\n');
            }
            EventKind::ToolSearch => {
                out.push_str(&format!("<tool_search>{}</tool_search>\n", step.action.payload));
            }
            EventKind::ToolCall => {
                out.push_str(&format!("<tool_call>{}</tool_call>\n", step.action.payload));
            }
            EventKind::MemoryFold => {
                out.push_str("<fold_thought>\n");
            }
            EventKind::FinalAnswer => {
                out.push_str(&format!("<final_answer>{}</final_answer>\n", step.action.payload));
            }
            EventKind::ToolSearchResult | EventKind::ToolCallResult => {}
        }
        if let Some(obs) = &step.observation {
            out.push_str(&render_observation(obs));
            out.push('\n');
        }
        if let Some(fold) = trajectory.folds.iter().find(|f| f.step_index == i) {
            out.push_str(&format!(
                "[memory folded: {} source tokens -> snapshot at step {}]\n",
                fold.snapshot.source_token_count, fold.snapshot.folded_at_step
            ));
        }
    }
    out.push_str(&format!("--- termination: {} ---\n", termination_label(trajectory.termination)));
    if let Some(answer) = &trajectory.final_answer {
        out.push_str(&format!("final answer: {answer}\n"));
    }
    out
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Answered => "answered",
        Termination::ActionLimit => "action_limit",
        Termination::TokenLimit => "token_limit",
        Termination::BackendError => "backend_error",
    }
}

/// The actionable (kind, payload) sequence a transcript's stream section
/// scans back to; used as a consistency check between recorded steps and
/// their rendered replay.
pub fn actionable_sequence(trajectory: &Trajectory) -> Vec<(EventKind, String)> {
    trajectory
        .steps
        .iter()
        .filter(|s| s.action.kind.is_actionable())
        .map(|s| (s.action.kind, s.action.payload.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{scan_all, Span};

    fn step(kind: EventKind, payload: &str, ordinal: usize) -> Step {
        Step {
            action: ActionEvent {
                kind,
                payload: payload.to_string(),
                span: Span::new(0, 0),
                ordinal,
            },
            observation: None,
            token_span: (0, 0),
        }
    }

    #[test]
    fn transcript_rescans_to_same_actions() {
        let mut traj = Trajectory::new("t1", "q", "i");
        traj.steps.push(step(EventKind::Think, "let me search", 1));
        let mut search = step(EventKind::ToolSearch, "video tools", 2);
        search.observation = Some(Observation {
            kind: crate::protocol::ObservationKind::ToolSearchResult,
            content: "found things".to_string(),
        });
        traj.steps.push(search);
        let mut call = step(EventKind::ToolCall, r#"{"name": "t", "arguments": {}}"#, 3);
        call.observation = Some(Observation {
            kind: crate::protocol::ObservationKind::ToolCallResult,
            content: "ok".to_string(),
        });
        traj.steps.push(call);
        traj.steps.push(step(EventKind::FinalAnswer, "done", 4));
        traj.final_answer = Some("done".to_string());
        traj.termination = Termination::Answered;

        let text = transcript(&traj);
        let stream = text
            .split("--- stream ---\n")
            .nth(1)
            .unwrap()
            .split("--- termination")
            .next()
            .unwrap();
        let (events, errors) = scan_all(stream);
        assert!(errors.is_empty());
        let scanned: Vec<(EventKind, String)> = events
            .into_iter()
            .filter(|e| e.kind.is_actionable())
            .map(|e| (e.kind, e.payload))
            .collect();
        assert_eq!(scanned, actionable_sequence(&traj));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        let mut traj = Trajectory::new("t1", "q", "i");
        traj.generated_tokens.push(GeneratedToken { piece: "hi".into(), logprob: Some(-0.5) });
        traj.termination = Termination::Answered;
        traj.final_answer = Some("42".into());
        traj.save(&path).unwrap();
        let loaded = Trajectory::load(&path).unwrap();
        assert_eq!(loaded, traj);
        assert_eq!(loaded.answer(), Some("42"));
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        let mut traj = Trajectory::new("t1", "q", "i");
        traj.version = 99;
        traj.save(&path).unwrap();
        assert!(matches!(
            Trajectory::load(&path),
            Err(TrajectoryError::UnsupportedVersion(99))
        ));
    }
}
