//! Memory folding: fallback aggregation oracles, snapshot round-trips,
//! compression bounds, the aux repair loop, and the full in-episode fold.

use std::sync::Arc;

use agentloop_core::agent::{
    run_episode_observed, Backends, EpisodeConfig, EpisodeObserver, TaskSpec, ToolMode,
};
use agentloop_core::backend::{Role, ScriptedBackend};
use agentloop_core::memory::{
    fallback_fold, fold, render_snapshot, validate_snapshot, FoldInput, FoldOutcome, MemoryError,
};
use agentloop_core::protocol::{ActionEvent, EventKind, Observation, ObservationKind, Span};
use agentloop_core::registry::{DeterministicEmbedder, ParameterSchema, ToolDoc, ToolRegistry};
use agentloop_core::tokens;
use agentloop_core::trajectory::Step;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn call_step(ordinal: usize, name: &str, args: serde_json::Value, ok: bool, content: &str) -> Step {
    let payload = serde_json::json!({"name": name, "arguments": args}).to_string();
    let obs_content =
        if ok { content.to_string() } else { format!("tool_error: {content}") };
    Step {
        action: ActionEvent {
            kind: EventKind::ToolCall,
            payload,
            span: Span::new(0, 0),
            ordinal,
        },
        observation: Some(Observation {
            kind: ObservationKind::ToolCallResult,
            content: obs_content,
        }),
        token_span: (0, 0),
    }
}

fn fold_input<'a>(steps: &'a [Step], history: &'a str) -> FoldInput<'a> {
    FoldInput {
        question: "find the best documentaries",
        instruction: "use the tools",
        prior: None,
        steps,
        rendered_history: history.to_string(),
        source_token_count: tokens::count_tokens(history),
        folded_at_step: steps.len() as u64,
    }
}

/// Oracle: the scripted history has 3 calls to search_videos, 2 ok and 1
/// error, so the fallback tool memory must report success_rate 2/3.
#[test]
fn fallback_counts_per_tool_outcomes() {
    let steps = vec![
        call_step(1, "search_videos", serde_json::json!({"query": "documentary"}), true, "ten results"),
        call_step(2, "search_videos", serde_json::json!({"query": "nature"}), false, "rate limited"),
        call_step(3, "search_videos", serde_json::json!({"query": "space"}), true, "five results"),
    ];
    let history = "q ".repeat(4000);
    let snapshot = fallback_fold(&fold_input(&steps, &history));
    let usage = snapshot
        .tool
        .tools_used
        .iter()
        .find(|u| u.tool_name == "search_videos")
        .expect("search_videos aggregated");
    assert!((usage.success_rate - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(usage.effective_parameters, vec!["query".to_string()]);
    assert!(usage.common_errors.iter().any(|e| e.contains("rate limited")));
}

#[test]
fn empty_history_is_a_precondition_violation() {
    let steps: Vec<Step> = Vec::new();
    let aux = ScriptedBackend::from_script(&[]);
    let err = fold(&fold_input(&steps, "some history"), &aux).unwrap_err();
    assert!(matches!(err, MemoryError::EmptyHistory));
}

#[test]
fn snapshot_render_validate_round_trip() {
    let steps = vec![call_step(1, "t1", serde_json::json!({"a": 1}), true, "ok")];
    let history = "word ".repeat(6000);
    let snapshot = fallback_fold(&fold_input(&steps, &history));
    let rendered = render_snapshot(&snapshot);
    let parsed = validate_snapshot(&rendered).expect("rendered snapshot validates");
    assert_eq!(parsed, snapshot);
}

#[test]
fn validate_accepts_whole_json_form() {
    let steps = vec![call_step(1, "t1", serde_json::json!({}), true, "ok")];
    let snapshot = fallback_fold(&fold_input(&steps, &"w ".repeat(5000)));
    let json = serde_json::to_string_pretty(&snapshot).unwrap();
    assert_eq!(validate_snapshot(&json).unwrap(), snapshot);
    let fenced = format!("```json\n{json}\n```");
    assert_eq!(validate_snapshot(&fenced).unwrap(), snapshot);
}

#[test]
fn validate_lists_every_violation() {
    let raw = r#"{
        "episodic": {"task_description": "", "key_events": [{"step": 3, "description": "d", "outcome": "o"}, {"step": 2, "description": "", "outcome": "o"}], "current_progress": "p"},
        "working": {"immediate_goal": "g", "current_challenges": "c", "next_actions": []},
        "tool": {"tools_used": [{"tool_name": "t", "success_rate": 1.5, "effective_parameters": [], "common_errors": [], "response_pattern": "r", "experience": "e"}], "derived_rules": []},
        "folded_at_step": 1,
        "source_token_count": 10
    }"#;
    let err = validate_snapshot(raw).unwrap_err();
    let MemoryError::Schema(violations) = err else { panic!("expected schema violations") };
    let paths: Vec<&str> = violations.iter().map(|v| v.path.as_str()).collect();
    assert!(paths.iter().any(|p| p.contains("task_description")));
    assert!(paths.iter().any(|p| p.contains("key_events[1].step")));
    assert!(paths.iter().any(|p| p.contains("next_actions")));
    assert!(paths.iter().any(|p| p.contains("success_rate")));
    assert!(violations.len() >= 5, "all violations reported: {violations:?}");
}

/// Aux path: the scripted replayer answers each component request with a
/// snapshot component built from the history's counts.
#[test]
fn aux_fold_assembles_components() {
    let steps = vec![
        call_step(1, "search_videos", serde_json::json!({"query": "documentary"}), true, "ok"),
        call_step(2, "search_videos", serde_json::json!({"query": "cinema"}), false, "boom"),
    ];
    let episodic = r#"{"task_description": "find documentaries", "key_events": [{"step": 1, "description": "searched documentary", "outcome": "ten results"}, {"step": 2, "description": "searched cinema", "outcome": "tool_error: boom"}], "current_progress": "one of two searches succeeded"}"#;
    let working = r#"{"immediate_goal": "retry the cinema search", "current_challenges": "second call failed", "next_actions": [{"type": "tool_call", "description": "call search_videos with the cinema tag"}]}"#;
    let tool = r#"{"tools_used": [{"tool_name": "search_videos", "success_rate": 0.5, "effective_parameters": ["query"], "common_errors": ["boom"], "response_pattern": "result list", "experience": "works for broad queries"}], "derived_rules": ["prefer broad queries first"]}"#;

    let fixtures = agentloop_core::backend::FixtureFile {
        generations: vec![
            component_fixture("episodic", episodic),
            component_fixture("working", working),
            component_fixture("tool", tool),
        ],
        ..Default::default()
    };
    let aux = ScriptedBackend::new(fixtures);
    let history = "h ".repeat(2000);
    let outcome = fold(&fold_input(&steps, &history), &aux).unwrap();
    let FoldOutcome::Folded(snapshot) = outcome else { panic!("fold succeeds") };
    assert_eq!(snapshot.episodic.key_events.len(), 2);
    assert_eq!(snapshot.working.next_actions.len(), 1);
    assert_eq!(snapshot.tool.tools_used[0].success_rate, 0.5);
}

fn component_fixture(component: &str, response: &str) -> agentloop_core::backend::Fixture {
    agentloop_core::backend::Fixture {
        r#match: agentloop_core::backend::FixtureMatch::Suffix(format!(
            "Produce the {component} memory component now as a single JSON object.\n\n"
        )),
        response: response.to_string(),
        logprobs: None,
        once: false,
    }
}

/// Invalid aux output is retried with the violation list; exhausting the
/// budget falls back to the deterministic summary.
#[test]
fn invalid_aux_output_falls_back() {
    let bad = agentloop_core::backend::Fixture {
        r#match: agentloop_core::backend::FixtureMatch::Suffix(String::new()),
        response: "not json at all".to_string(),
        logprobs: None,
        once: false,
    };
    let aux = ScriptedBackend::new(agentloop_core::backend::FixtureFile {
        generations: vec![bad],
        ..Default::default()
    });
    let steps = vec![call_step(1, "t", serde_json::json!({}), true, "fine")];
    let history = "h ".repeat(3000);
    let outcome = fold(&fold_input(&steps, &history), &aux).unwrap();
    let FoldOutcome::Folded(snapshot) = outcome else { panic!("fallback folds") };
    assert_eq!(snapshot.tool.tools_used[0].tool_name, "t");
}

#[test]
fn tiny_history_fold_is_rejected() {
    let steps = vec![call_step(1, "t", serde_json::json!({}), true, "ok")];
    let aux = ScriptedBackend::from_script(&[]);
    let mut input = fold_input(&steps, "short");
    input.source_token_count = 3;
    match fold(&input, &aux).unwrap() {
        FoldOutcome::Rejected { rendered_tokens, source_tokens } => {
            assert_eq!(source_tokens, 3);
            assert!(rendered_tokens >= 3);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Fallback compression: ≤ 40% of source for histories ≥ 5,000 tokens,
    /// and exact per-tool success rates.
    #[test]
    fn fallback_compresses_and_counts_exactly(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tools = ["alpha_tool", "beta_tool", "gamma_tool", "delta_tool"];
        let n_steps = rng.gen_range(3..25);
        let mut expected: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
        let mut steps = Vec::new();
        let mut history = String::new();
        for i in 0..n_steps {
            let tool = tools[rng.gen_range(0..tools.len())];
            let ok = rng.gen_bool(0.7);
            let words = rng.gen_range(200..600);
            let content: String = (0..words).map(|w| format!("w{w} ")).collect();
            let entry = expected.entry(tool).or_insert((0, 0));
            entry.1 += 1;
            if ok {
                entry.0 += 1;
            }
            history.push_str(&content);
            steps.push(call_step(i + 1, tool, serde_json::json!({"p": i}), ok, &content));
        }
        // pad the history to at least 5,000 tokens
        while tokens::count_tokens(&history) < 5_000 {
            history.push_str("pad ");
        }
        let input = fold_input(&steps, &history);
        let snapshot = fallback_fold(&input);
        let rendered = tokens::count_tokens(&render_snapshot(&snapshot));
        prop_assert!(
            rendered * 5 <= input.source_token_count * 2,
            "rendered {rendered} vs source {} exceeds 40%",
            input.source_token_count
        );
        for usage in &snapshot.tool.tools_used {
            let (ok, total) = expected[usage.tool_name.as_str()];
            prop_assert_eq!(usage.success_rate, ok as f64 / total as f64);
        }
    }
}

struct PromptRecorder {
    prompts: Vec<Vec<(Role, String)>>,
}

impl EpisodeObserver for PromptRecorder {
    fn on_generation(&mut self, prompt: &[(Role, String)]) {
        self.prompts.push(prompt.to_vec());
    }
}

fn bulk_registry(marker: &str) -> ToolRegistry {
    let mut registry = ToolRegistry::new();
    let marker = marker.to_string();
    registry
        .register_local(
            ToolDoc::new(
                "bulk_fetch",
                "returns a large record set",
                ParameterSchema::default().with_property("page", "integer", "page").require("page"),
            ),
            Arc::new(move |args| {
                let page = args["page"].as_i64().unwrap_or(0);
                let mut out = String::new();
                for i in 0..6000 {
                    out.push_str(&format!("rec{page}x{i} "));
                    if i == 3000 {
                        out.push_str(&marker);
                        out.push(' ');
                    }
                }
                Ok(out)
            }),
        )
        .unwrap();
    registry
}

fn fold_episode_config() -> EpisodeConfig {
    EpisodeConfig {
        tool_mode: ToolMode::Labeled,
        // keep observations raw so the pre-fold context really is large
        call_result_budget: 100_000,
        ..EpisodeConfig::default()
    }
}

/// Full in-episode fold over a ~12k-token scripted history: the post-fold
/// prompt is smaller, contains the question and all three memory sections,
/// and carries no raw pre-fold observation text.
#[test]
fn episode_fold_shrinks_and_scrubs_context() {
    let marker = "goldfinchquarry77";
    let registry = bulk_registry(marker);
    let task = TaskSpec {
        id: "fold-e2e".into(),
        question: "how many records are there?".into(),
        instruction: "fetch pages then answer".into(),
        labeled_tools: registry.tools().cloned().collect(),
    };
    let backend = Arc::new(ScriptedBackend::from_script(&[
        "fetching first page <tool_call>{\"name\": \"bulk_fetch\", \"arguments\": {\"page\": 1}}</tool_call>",
        "fetching second page <tool_call>{\"name\": \"bulk_fetch\", \"arguments\": {\"page\": 2}}</tool_call>",
        "history is long, folding <fold_thought>",
        "continuing from memory <final_answer>12000</final_answer>",
    ]));
    let mut recorder = PromptRecorder { prompts: Vec::new() };
    let trajectory = run_episode_observed(
        &task,
        &registry,
        &DeterministicEmbedder::default(),
        &Backends::single(backend),
        &fold_episode_config(),
        &mut recorder,
    );

    assert_eq!(trajectory.answer(), Some("12000"));
    assert_eq!(trajectory.folds.len(), 1);
    let snapshot = &trajectory.folds[0].snapshot;
    assert!(
        (12_000..16_000).contains(&snapshot.source_token_count),
        "history should be ~12k tokens, got {}",
        snapshot.source_token_count
    );

    // compression of the snapshot itself
    let rendered = tokens::count_tokens(&render_snapshot(snapshot));
    assert!(
        (rendered as u64) * 5 <= snapshot.source_token_count * 2,
        "rendered {rendered} vs source {}",
        snapshot.source_token_count
    );

    // the prompt for the fold generation vs. the prompt after the fold
    let pre_fold = &recorder.prompts[2];
    let post_fold = &recorder.prompts[3];
    let size = |prompt: &Vec<(Role, String)>| {
        tokens::count_tokens(
            &prompt.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n"),
        )
    };
    assert!(size(post_fold) < size(pre_fold), "post-fold prompt must shrink");

    let post_text: String =
        post_fold.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n");
    assert!(post_text.contains("how many records are there?"), "question survives the fold");
    assert!(post_text.contains("fetch pages then answer"), "instruction survives the fold");
    for heading in ["## Episodic Memory", "## Working Memory", "## Tool Memory"] {
        assert!(post_text.contains(heading), "{heading} present");
    }
    assert!(post_text.contains("Continue the task from this state."));
    assert!(!post_text.contains(marker), "raw pre-fold observation text must be gone");
    assert!(!post_text.contains("<tool_call_result>"), "no raw result blocks after fold");
}

/// Two sequential folds: the second consumes a context that itself starts
/// with a snapshot, and every invariant still holds.
#[test]
fn sequential_folds_preserve_invariants() {
    let marker = "ospreycanyon13";
    let registry = bulk_registry(marker);
    let task = TaskSpec {
        id: "fold-twice".into(),
        question: "count them".into(),
        instruction: "fetch then answer".into(),
        labeled_tools: registry.tools().cloned().collect(),
    };
    let backend = Arc::new(ScriptedBackend::from_script(&[
        "page one <tool_call>{\"name\": \"bulk_fetch\", \"arguments\": {\"page\": 1}}</tool_call>",
        "fold now <fold_thought>",
        "page two <tool_call>{\"name\": \"bulk_fetch\", \"arguments\": {\"page\": 2}}</tool_call>",
        "fold again <fold_thought>",
        "done <final_answer>12000</final_answer>",
    ]));
    let mut recorder = PromptRecorder { prompts: Vec::new() };
    let trajectory = run_episode_observed(
        &task,
        &registry,
        &DeterministicEmbedder::default(),
        &Backends::single(backend),
        &fold_episode_config(),
        &mut recorder,
    );
    assert_eq!(trajectory.folds.len(), 2);
    for fold in &trajectory.folds {
        let rendered = render_snapshot(&fold.snapshot);
        let reparsed = validate_snapshot(&rendered).expect("snapshot survives round-trip");
        assert_eq!(reparsed, fold.snapshot);
    }
    // the second snapshot carries the first fold's tool experience forward
    let second = &trajectory.folds[1].snapshot;
    assert!(second.tool.tools_used.iter().any(|u| u.tool_name == "bulk_fetch"));
    let final_prompt: String =
        recorder.prompts.last().unwrap().iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n");
    assert!(!final_prompt.contains(marker));
    assert_eq!(trajectory.answer(), Some("12000"));
}
