//! Suite evaluation: run tasks through the real runtime, grade success and
//! path overlap, aggregate metrics, and compare retrieval strategies.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, Backends, EpisodeConfig, TaskSpec, ToolMode};
use crate::protocol::parse_tool_call;
use crate::registry::{DeterministicEmbedder, ToolRegistry};
use crate::toolpo::{call_correctness, ExactMatchGrader, Grader};
use crate::trajectory::{Termination, Trajectory};

use super::textworld::{verb_docs, WorldState};
use super::{EnvError, TaskFile};

/// Evaluation settings: the episode configuration plus harness knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episode: EpisodeConfig,
    pub embedder_dimension: usize,
    pub embedder_seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episode: EpisodeConfig::default(),
            embedder_dimension: 128,
            embedder_seed: 0,
            workers: 4,
        }
    }
}

/// Suite manifest file: task file paths (relative to the manifest) plus
/// optional overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub tasks: Vec<String>,
    #[serde(default)]
    pub mode: Option<ToolMode>,
    #[serde(default)]
    pub fold: Option<bool>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl SuiteManifest {
    pub fn load(path: &std::path::Path) -> Result<(Self, Vec<TaskFile>), EnvError> {
        let manifest: SuiteManifest =
            serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(std::path::Path::new("."));
        let mut tasks = Vec::with_capacity(manifest.tasks.len());
        for rel in &manifest.tasks {
            tasks.push(TaskFile::load(&base.join(rel))?);
        }
        Ok((manifest, tasks))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    pub success: f64,
    pub path: f64,
    pub actions_used: usize,
    pub tokens_used: usize,
    pub folds: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub success_rate: f64,
    pub mean_path: f64,
    pub mean_tokens: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

impl EvalReport {
    fn aggregate(per_task: Vec<TaskEval>) -> Self {
        let n = per_task.len().max(1) as f64;
        let success_rate = per_task.iter().map(|t| t.success).sum::<f64>() / n;
        let mean_path = per_task.iter().map(|t| t.path).sum::<f64>() / n;
        let mean_tokens = per_task.iter().map(|t| t.tokens_used as f64).sum::<f64>() / n;
        EvalReport { per_task, success_rate, mean_path, mean_tokens, created_at: None }
    }

    /// Plain-text metrics table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("task_id\tsuccess\tpath\tactions\ttokens\tfolds\n");
        for t in &self.per_task {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{}\t{}\t{}\n",
                t.task_id, t.success, t.path, t.actions_used, t.tokens_used, t.folds
            ));
        }
        out.push_str(&format!(
            "aggregate\tsuccess_rate={:.4}\tmean_path={:.4}\tmean_tokens={:.1}\n",
            self.success_rate, self.mean_path, self.mean_tokens
        ));
        out
    }
}

/// Build the runtime pieces for one task: the loop's task view, the tool
/// registry (indexed for retrieval), and the live world for text-world
/// tasks.
pub fn instantiate_task(
    task: &TaskFile,
    config: &EvalConfig,
) -> Result<(TaskSpec, ToolRegistry, Option<Arc<Mutex<WorldState>>>), EnvError> {
    let embedder =
        DeterministicEmbedder::new(config.embedder_dimension, config.embedder_seed);
    match task {
        TaskFile::SyntheticTool(t) => {
            let mut registry = t.instantiate()?;
            registry.build_index(&embedder)?;
            let spec = TaskSpec {
                id: t.id.clone(),
                question: t.question.clone(),
                instruction: t.instruction.clone(),
                labeled_tools: t.gold_docs(),
            };
            Ok((spec, registry, None))
        }
        TaskFile::TextWorld(t) => {
            let (mut registry, world) = t.instantiate()?;
            registry.build_index(&embedder)?;
            let spec = TaskSpec {
                id: t.id.clone(),
                question: t.question.clone(),
                instruction: t.instruction.clone(),
                labeled_tools: verb_docs(),
            };
            Ok((spec, registry, Some(world)))
        }
        TaskFile::Plain(spec) => {
            let mut registry = ToolRegistry::new();
            for doc in &spec.labeled_tools {
                registry.register_tool(doc.clone())?;
            }
            if !registry.is_empty() {
                registry.build_index(&embedder)?;
            }
            Ok((spec.clone(), registry, None))
        }
    }
}

/// Grade one finished trajectory against its task: success via the task's
/// answer grader or goal predicate, path via gold-call overlap
/// (matched gold calls / max(gold length, predicted length)).
pub fn grade(trajectory: &Trajectory, task: &TaskFile) -> (f64, f64) {
    let (success, gold_calls) = match task {
        TaskFile::SyntheticTool(t) => {
            let grader = ExactMatchGrader { gold_answer: t.gold_answer.clone() };
            (grader.grade(trajectory), t.gold_calls.clone())
        }
        TaskFile::TextWorld(t) => {
            let calls: Vec<(String, serde_json::Map<String, serde_json::Value>)> = trajectory
                .tool_calls()
                .filter_map(|s| parse_tool_call(&s.action.payload).ok())
                .map(|c| (c.name, c.arguments))
                .collect();
            let success = if t.goal_reached_by(&calls) { 1.0 } else { 0.0 };
            (success, t.gold_calls.clone())
        }
        TaskFile::Plain(_) => (0.0, Vec::new()),
    };

    let matched: usize = call_correctness(trajectory, &gold_calls)
        .iter()
        .map(|c| c.correct as usize)
        .sum();
    let predicted = trajectory.tool_calls().count();
    let denom = gold_calls.len().max(predicted);
    let path = if denom == 0 { 1.0 } else { matched as f64 / denom as f64 };
    (success, path)
}

/// A per-task backend factory: suites that drive scripted policies build
/// one policy per task; scripted/remote suites return the same backends
/// for every task.
pub type BackendFactory<'a> = dyn Fn(&TaskFile) -> Backends + Sync + 'a;

/// Run every task through the runtime with a bounded worker pool. Returns
/// the report plus each task's trajectory, in task order.
pub fn evaluate_suite(
    tasks: &[TaskFile],
    config: &EvalConfig,
    make_backends: &BackendFactory,
) -> Result<(EvalReport, Vec<Trajectory>), EnvError> {
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(TaskEval, Trajectory)>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let workers = config.workers.clamp(1, tasks.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    return;
                }
                let task = &tasks[index];
                match run_one(task, config, make_backends) {
                    Ok(outcome) => {
                        results.lock().expect("results lock")[index] = Some(outcome);
                    }
                    Err(e) => {
                        failure
                            .lock()
                            .expect("failure lock")
                            .get_or_insert_with(|| format!("task {}: {e}", task.id()));
                        return;
                    }
                }
            });
        }
    });

    if let Some(message) = failure.into_inner().expect("failure lock") {
        return Err(EnvError::Task(message));
    }
    let mut evals = Vec::with_capacity(tasks.len());
    let mut trajectories = Vec::with_capacity(tasks.len());
    for slot in results.into_inner().expect("results lock") {
        let (eval, trajectory) = slot.expect("all tasks completed");
        evals.push(eval);
        trajectories.push(trajectory);
    }
    Ok((EvalReport::aggregate(evals), trajectories))
}

fn run_one(
    task: &TaskFile,
    config: &EvalConfig,
    make_backends: &BackendFactory,
) -> Result<(TaskEval, Trajectory), EnvError> {
    let (spec, registry, _world) = instantiate_task(task, config)?;
    let embedder =
        DeterministicEmbedder::new(config.embedder_dimension, config.embedder_seed);
    let backends = make_backends(task);
    let trajectory = run_episode(&spec, &registry, &embedder, &backends, &config.episode);
    let (success, path) = grade(&trajectory, task);
    let eval = TaskEval {
        task_id: spec.id.clone(),
        success,
        path,
        actions_used: trajectory.action_count(),
        tokens_used: trajectory.generated_tokens.len(),
        folds: trajectory.folds.len(),
        termination: trajectory.termination,
    };
    Ok((eval, trajectory))
}

/// Side-by-side comparison of one upfront retrieval against in-loop
/// autonomous retrieval on the same tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub upfront_success_rate: f64,
    pub autonomous_success_rate: f64,
    pub delta: f64,
    pub upfront: EvalReport,
    pub autonomous: EvalReport,
}

impl ComparisonReport {
    pub fn table(&self) -> String {
        format!(
            "strategy\tsuccess_rate\nupfront_retrieval\t{:.4}\nautonomous_retrieval\t{:.4}\ndelta\t{:+.4}\n",
            self.upfront_success_rate, self.autonomous_success_rate, self.delta
        )
    }
}

/// Run the suite once with a single upfront retrieval injected into the
/// prompt (in-loop search disabled) and once with autonomous in-loop
/// retrieval, and report both success rates and the delta.
pub fn compare_retrieval_strategies(
    tasks: &[TaskFile],
    config: &EvalConfig,
    make_backends: &BackendFactory,
) -> Result<ComparisonReport, EnvError> {
    let mut upfront_config = config.clone();
    upfront_config.episode.tool_mode = ToolMode::OpenSet;
    upfront_config.episode.upfront_retrieval = true;
    let (upfront, _) = evaluate_suite(tasks, &upfront_config, make_backends)?;

    let mut auto_config = config.clone();
    auto_config.episode.tool_mode = ToolMode::OpenSet;
    auto_config.episode.upfront_retrieval = false;
    let (autonomous, _) = evaluate_suite(tasks, &auto_config, make_backends)?;

    Ok(ComparisonReport {
        upfront_success_rate: upfront.success_rate,
        autonomous_success_rate: autonomous.success_rate,
        delta: autonomous.success_rate - upfront.success_rate,
        upfront,
        autonomous,
    })
}
