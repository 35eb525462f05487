//! Reward, advantage, and objective computation over recorded
//! trajectories: task-success and action-level rewards, group-relative
//! advantages, the action-token mask, per-token advantage composition, and
//! the clipped surrogate objective. Everything here is a pure function of
//! its inputs; no parameter updates happen in this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::canonical_json;
use crate::protocol::{parse_tool_call, EventKind};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ToolpoError {
    #[error("length mismatch: {name} has {got} entries, expected {expected}")]
    LengthMismatch { name: &'static str, expected: usize, got: usize },
    #[error("group has {0} trajectories; at least 2 are required")]
    GroupTooSmall(usize),
}

/// How per-token objective terms aggregate into the group scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossAggregation {
    /// Mean over trajectories of summed token terms.
    Sum,
    /// Pooled mean over every token in the group.
    TokenMean,
    /// Mean over trajectories of per-trajectory token means (default).
    #[default]
    TrajectoryMean,
}

/// Reward weighting and objective shape. λ1 and λ2 default to 1, the clip
/// width to 0.2. `grpo_only` disables action-advantage attribution
/// entirely, reducing the computation to plain group-relative success
/// advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub clip_epsilon: f64,
    pub grpo_only: bool,
    pub loss_aggregation: LossAggregation,
    /// Include tool_search token spans in the action mask (off by
    /// default: only tool-call and fold tokens carry the local advantage).
    pub mask_tool_search: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            lambda1: 1.0,
            lambda2: 1.0,
            clip_epsilon: 0.2,
            grpo_only: false,
            loss_aggregation: LossAggregation::default(),
            mask_tool_search: false,
        }
    }
}

/// Default rollout group size.
pub const DEFAULT_GROUP_SIZE: usize = 8;

/// A labeled reference call from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, serde_json::Value>,
}

/// Gold labels for one task: the reference answer and the ordered
/// reference call list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoldEntry {
    #[serde(default)]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub gold_calls: Vec<GoldCall>,
}

/// Task-success scoring. Graders may return fractional scores; the
/// defaults are binary.
pub trait Grader {
    fn grade(&self, trajectory: &Trajectory) -> f64;
}

/// Exact-match answer grader for QA-style tasks: 1.0 iff the trimmed
/// answer equals the trimmed gold answer; unanswered scores 0.
pub struct ExactMatchGrader {
    pub gold_answer: String,
}

impl Grader for ExactMatchGrader {
    fn grade(&self, trajectory: &Trajectory) -> f64 {
        match trajectory.answer() {
            Some(answer) if answer.trim() == self.gold_answer.trim() => 1.0,
            _ => 0.0,
        }
    }
}

/// Task success score in [0, 1].
pub fn success_reward(trajectory: &Trajectory, grader: &dyn Grader) -> f64 {
    grader.grade(trajectory).clamp(0.0, 1.0)
}

/// Per-call correctness against the gold call list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCorrectness {
    /// Index of the tool_call step in `trajectory.steps`.
    pub step: usize,
    pub correct: u8,
}

/// Greedy in-order matching: a trajectory call is correct iff it matches
/// the next unmatched gold call on name and canonical-argument equality.
pub fn call_correctness(trajectory: &Trajectory, gold_calls: &[GoldCall]) -> Vec<CallCorrectness> {
    let mut next_gold = 0usize;
    let mut out = Vec::new();
    for (index, step) in trajectory.steps.iter().enumerate() {
        if step.action.kind != EventKind::ToolCall {
            continue;
        }
        let correct = match (parse_tool_call(&step.action.payload), gold_calls.get(next_gold)) {
            (Ok(call), Some(gold)) if calls_match(&call.name, &call.arguments, gold) => {
                next_gold += 1;
                1
            }
            _ => 0,
        };
        out.push(CallCorrectness { step: index, correct });
    }
    out
}

fn calls_match(
    name: &str,
    arguments: &serde_json::Map<String, serde_json::Value>,
    gold: &GoldCall,
) -> bool {
    name == gold.name
        && canonical_json(&serde_json::Value::Object(arguments.clone()))
            == canonical_json(&serde_json::Value::Object(gold.arguments.clone()))
}

/// Preference score for efficient folding:
/// (L_direct − L_fold) / (L_direct + L_fold), where lengths are
/// generated-token counts of the paired rollouts.
pub fn pref_score(len_direct: u64, len_fold: u64) -> f64 {
    pref_score_f(len_direct as f64, len_fold as f64)
}

/// Real-valued form, used when a fold rollout pairs with the mean length
/// of the fold-free sub-group.
pub fn pref_score_f(len_direct: f64, len_fold: f64) -> f64 {
    (len_direct - len_fold) / (len_direct + len_fold)
}

/// Mean-subtracted rewards: each trajectory's reward minus the group mean.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - mean).collect()
}

/// 0/1 mask over generated tokens: 1 exactly for tokens inside tool-call
/// spans and fold token spans (and tool-search spans when
/// `include_search`); think and search tokens are 0 otherwise.
pub fn action_mask(trajectory: &Trajectory, include_search: bool) -> Vec<u8> {
    let mut mask = vec![0u8; trajectory.generated_tokens.len()];
    for step in &trajectory.steps {
        let masked = match step.action.kind {
            EventKind::ToolCall | EventKind::MemoryFold => true,
            EventKind::ToolSearch => include_search,
            _ => false,
        };
        if masked {
            let (start, end) = step.token_span;
            let end = end.min(mask.len());
            for slot in mask.iter_mut().take(end).skip(start) {
                *slot = 1;
            }
        }
    }
    mask
}

/// Per-token advantage: the trajectory's success advantage everywhere,
/// plus the action advantage on masked tokens. With `grpo_only` the action
/// term is treated as 0.
pub fn token_advantages(mask: &[u8], a_succ: f64, a_action: f64, spec: &RewardSpec) -> Vec<f64> {
    let local = if spec.grpo_only { 0.0 } else { a_action };
    mask.iter().map(|&m| a_succ + (m as f64) * local).collect()
}

/// Clipped surrogate objective over one trajectory's tokens. Returns the
/// per-token terms and their token mean — the objective to MAXIMIZE.
/// ρ_i = exp(new_i − old_i); term_i = min(ρ_i·A_i, clip(ρ_i, 1−ε, 1+ε)·A_i).
pub fn surrogate_loss(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<(f64, Vec<f64>), ToolpoError> {
    if old_logprobs.len() != new_logprobs.len() {
        return Err(ToolpoError::LengthMismatch {
            name: "old_logprobs",
            expected: new_logprobs.len(),
            got: old_logprobs.len(),
        });
    }
    if advantages.len() != new_logprobs.len() {
        return Err(ToolpoError::LengthMismatch {
            name: "advantages",
            expected: new_logprobs.len(),
            got: advantages.len(),
        });
    }
    let mut terms = Vec::with_capacity(new_logprobs.len());
    for i in 0..new_logprobs.len() {
        let ratio = (new_logprobs[i] - old_logprobs[i]).exp();
        let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
        terms.push((ratio * advantages[i]).min(clipped * advantages[i]));
    }
    let scalar = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
    Ok((scalar, terms))
}

/// Per-trajectory reward decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScores {
    pub r_succ: f64,
    pub call_correctness: Vec<CallCorrectness>,
    pub s_pref: Option<f64>,
    pub r_action: f64,
}

/// One row of the per-token table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub index: usize,
    pub mask: u8,
    pub advantage: f64,
    pub ratio: f64,
    pub term: f64,
}

/// The full computation output for one K-rollout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub a_succ: Vec<f64>,
    pub a_action: Vec<f64>,
    pub scores: Vec<TrajectoryScores>,
    /// Per trajectory, one entry per generated token.
    pub per_token: Vec<Vec<TokenEntry>>,
    pub loss: f64,
    /// Flat concatenation of per-token objective terms, trajectory order.
    pub per_token_loss_terms: Vec<f64>,
}

/// Compose the full pipeline for one group of K rollouts of the same
/// prompt. Ratios are 1 at the recorded policy snapshot (new = old), so
/// `loss` equals the masked advantage aggregate a trainer would see before
/// its first update step.
///
/// Fold-preference pairing: trajectories without folds form the direct
/// sub-group; each folded trajectory's S_pref compares its length against
/// the mean length of that sub-group. Fold-free trajectories carry no
/// S_pref (treated as 0 in R_action).
pub fn compute_report(
    group: &[Trajectory],
    gold: &GoldEntry,
    spec: &RewardSpec,
    grader: &dyn Grader,
) -> Result<AdvantageReport, ToolpoError> {
    if group.len() < 2 {
        return Err(ToolpoError::GroupTooSmall(group.len()));
    }

    let r_succ: Vec<f64> = group.iter().map(|t| success_reward(t, grader)).collect();

    let scores: Vec<TrajectoryScores> = if spec.grpo_only {
        r_succ
            .iter()
            .map(|&r| TrajectoryScores {
                r_succ: r,
                call_correctness: Vec::new(),
                s_pref: None,
                r_action: 0.0,
            })
            .collect()
    } else {
        let direct_lengths: Vec<f64> = group
            .iter()
            .filter(|t| t.folds.is_empty())
            .map(|t| t.generated_tokens.len() as f64)
            .collect();
        let mean_direct = if direct_lengths.is_empty() {
            None
        } else {
            Some(direct_lengths.iter().sum::<f64>() / direct_lengths.len() as f64)
        };
        group
            .iter()
            .zip(&r_succ)
            .map(|(trajectory, &r)| {
                let correctness = call_correctness(trajectory, &gold.gold_calls);
                let s_pref = match (trajectory.folds.is_empty(), mean_direct) {
                    (false, Some(direct)) => {
                        Some(pref_score_f(direct, trajectory.generated_tokens.len() as f64))
                    }
                    _ => None,
                };
                let correct_sum: f64 =
                    correctness.iter().map(|c| c.correct as f64).sum();
                TrajectoryScores {
                    r_succ: r,
                    call_correctness: correctness,
                    s_pref,
                    r_action: spec.lambda1 * correct_sum + spec.lambda2 * s_pref.unwrap_or(0.0),
                }
            })
            .collect()
    };

    let a_succ = group_advantages(&r_succ);
    let a_action = if spec.grpo_only {
        vec![0.0; group.len()]
    } else {
        group_advantages(&scores.iter().map(|s| s.r_action).collect::<Vec<f64>>())
    };

    let mut per_token = Vec::with_capacity(group.len());
    let mut per_token_loss_terms = Vec::new();
    let mut per_traj_sums: Vec<(f64, usize)> = Vec::with_capacity(group.len());
    for (k, trajectory) in group.iter().enumerate() {
        let mask = action_mask(trajectory, spec.mask_tool_search);
        let advantages = token_advantages(&mask, a_succ[k], a_action[k], spec);
        let old: Vec<f64> = trajectory
            .generated_tokens
            .iter()
            .map(|t| t.logprob.unwrap_or(0.0))
            .collect();
        let (_, terms) = surrogate_loss(&old, &old, &advantages, spec.clip_epsilon)?;
        let rows: Vec<TokenEntry> = (0..mask.len())
            .map(|i| {
                TokenEntry {
                    index: i,
                    mask: mask[i],
                    advantage: advantages[i],
                    // new = old at the recorded snapshot
                    ratio: 1.0,
                    term: terms[i],
                }
            })
            .collect();
        per_traj_sums.push((terms.iter().sum::<f64>(), terms.len()));
        per_token_loss_terms.extend(terms);
        per_token.push(rows);
    }

    let loss = aggregate_loss(&per_traj_sums, spec.loss_aggregation);

    Ok(AdvantageReport { a_succ, a_action, scores, per_token, loss, per_token_loss_terms })
}

fn aggregate_loss(per_traj: &[(f64, usize)], aggregation: LossAggregation) -> f64 {
    if per_traj.is_empty() {
        return 0.0;
    }
    let k = per_traj.len() as f64;
    match aggregation {
        LossAggregation::Sum => per_traj.iter().map(|(sum, _)| sum).sum::<f64>() / k,
        LossAggregation::TokenMean => {
            let total: f64 = per_traj.iter().map(|(sum, _)| sum).sum();
            let count: usize = per_traj.iter().map(|(_, n)| n).sum();
            if count == 0 {
                0.0
            } else {
                total / count as f64
            }
        }
        LossAggregation::TrajectoryMean => {
            per_traj
                .iter()
                .map(|(sum, n)| if *n == 0 { 0.0 } else { sum / *n as f64 })
                .sum::<f64>()
                / k
        }
    }
}

/// Write the flat per-token inspection table (TSV): trajectory, token
/// index, mask, advantage, ratio, term.
pub fn write_token_table(
    report: &AdvantageReport,
    path: &std::path::Path,
) -> std::io::Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "trajectory\ttoken_index\tmask\tadvantage\tratio\tterm")?;
    for (k, rows) in report.per_token.iter().enumerate() {
        for row in rows {
            writeln!(
                w,
                "{k}\t{}\t{}\t{}\t{}\t{}",
                row.index, row.mask, row.advantage, row.ratio, row.term
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ActionEvent, Span};
    use crate::trajectory::{GeneratedToken, Step, Termination};

    fn traj_with_answer(answer: Option<&str>) -> Trajectory {
        let mut t = Trajectory::new("t", "q", "i");
        match answer {
            Some(a) => {
                t.final_answer = Some(a.to_string());
                t.termination = Termination::Answered;
            }
            None => t.termination = Termination::ActionLimit,
        }
        t
    }

    fn call_step(index: usize, name: &str, args: serde_json::Value) -> Step {
        let payload = serde_json::json!({"name": name, "arguments": args}).to_string();
        Step {
            action: ActionEvent {
                kind: EventKind::ToolCall,
                payload,
                span: Span::new(0, 0),
                ordinal: index + 1,
            },
            observation: None,
            token_span: (0, 0),
        }
    }

    #[test]
    fn exact_match_grading() {
        let grader = ExactMatchGrader { gold_answer: "5".into() };
        assert_eq!(success_reward(&traj_with_answer(Some("5")), &grader), 1.0);
        assert_eq!(success_reward(&traj_with_answer(Some(" 5 ")), &grader), 1.0);
        assert_eq!(success_reward(&traj_with_answer(Some("6")), &grader), 0.0);
        assert_eq!(success_reward(&traj_with_answer(None), &grader), 0.0);
    }

    #[test]
    fn correctness_identity_and_vacuous() {
        let gold = vec![
            GoldCall { name: "a".into(), arguments: serde_json::Map::new() },
            GoldCall { name: "b".into(), arguments: serde_json::Map::new() },
        ];
        let mut traj = traj_with_answer(None);
        traj.steps.push(call_step(0, "a", serde_json::json!({})));
        traj.steps.push(call_step(1, "b", serde_json::json!({})));
        let c = call_correctness(&traj, &gold);
        assert_eq!(c.iter().map(|x| x.correct).collect::<Vec<_>>(), vec![1, 1]);

        let none = call_correctness(&traj, &[]);
        assert_eq!(none.iter().map(|x| x.correct).collect::<Vec<_>>(), vec![0, 0]);
    }

    #[test]
    fn correctness_skips_interloper() {
        // trajectory [A, X, B] against gold [A, B] → [1, 0, 1]
        let gold = vec![
            GoldCall { name: "a".into(), arguments: serde_json::Map::new() },
            GoldCall { name: "b".into(), arguments: serde_json::Map::new() },
        ];
        let mut traj = traj_with_answer(None);
        traj.steps.push(call_step(0, "a", serde_json::json!({})));
        traj.steps.push(call_step(1, "x", serde_json::json!({})));
        traj.steps.push(call_step(2, "b", serde_json::json!({})));
        let c = call_correctness(&traj, &gold);
        assert_eq!(c.iter().map(|x| x.correct).collect::<Vec<_>>(), vec![1, 0, 1]);
    }

    #[test]
    fn correctness_normalizes_numbers_and_key_order() {
        let gold = vec![GoldCall {
            name: "t".into(),
            arguments: serde_json::from_value(serde_json::json!({"a": 2, "b": "x"})).unwrap(),
        }];
        let mut traj = traj_with_answer(None);
        traj.steps.push(call_step(0, "t", serde_json::json!({"b": "x", "a": 2.0})));
        let c = call_correctness(&traj, &gold);
        assert_eq!(c[0].correct, 1);
    }

    #[test]
    fn pref_score_examples() {
        assert_eq!(pref_score(3000, 1000), 0.5);
        assert_eq!(pref_score(1234, 1234), 0.0);
        assert_eq!(pref_score(1000, 3000), -0.5);
    }

    #[test]
    fn group_advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 0.0, 0.0, 1.0]), vec![0.5, -0.5, -0.5, 0.5]);
        assert_eq!(group_advantages(&[0.7; 5]), vec![0.0; 5]);
    }

    fn traj_with_masked_call(total_tokens: usize, span: (usize, usize)) -> Trajectory {
        let mut t = traj_with_answer(None);
        t.generated_tokens = (0..total_tokens)
            .map(|i| GeneratedToken { piece: format!("t{i}"), logprob: Some(-0.1) })
            .collect();
        let mut step = call_step(0, "a", serde_json::json!({}));
        step.token_span = span;
        t.steps.push(step);
        t
    }

    #[test]
    fn mask_covers_exactly_the_call_span() {
        let traj = traj_with_masked_call(30, (10, 25));
        let mask = action_mask(&traj, false);
        assert_eq!(mask.len(), 30);
        for (i, &m) in mask.iter().enumerate() {
            assert_eq!(m, u8::from((10..25).contains(&i)), "token {i}");
        }
        assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 15);
    }

    #[test]
    fn empty_trajectory_has_zero_mask() {
        let traj = traj_with_answer(None);
        assert!(action_mask(&traj, false).is_empty());
        let mut with_tokens = traj_with_answer(None);
        with_tokens.generated_tokens =
            vec![GeneratedToken { piece: "x".into(), logprob: None }; 4];
        assert_eq!(action_mask(&with_tokens, false), vec![0, 0, 0, 0]);
    }

    #[test]
    fn surrogate_identity_ratio_gives_mean_advantage() {
        let lp = vec![-0.5, -1.0, -2.0];
        let adv = vec![1.0, -2.0, 0.5];
        let (scalar, terms) = surrogate_loss(&lp, &lp, &adv, 0.2).unwrap();
        assert_eq!(terms, adv);
        assert!((scalar - (1.0 - 2.0 + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn surrogate_worked_example() {
        // single token, A = +1, ρ = 2, ε = 0.2 → min(2·1, 1.2·1) = 1.2
        let (scalar, terms) = surrogate_loss(&[2.0f64.ln()], &[0.0], &[1.0], 0.2).unwrap();
        assert!((terms[0] - 1.2).abs() < 1e-12);
        assert!((scalar - 1.2).abs() < 1e-12);
    }

    #[test]
    fn surrogate_length_mismatch() {
        assert!(matches!(
            surrogate_loss(&[0.0], &[0.0, 0.0], &[1.0], 0.2),
            Err(ToolpoError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn grpo_only_zeroes_action_path() {
        let spec = RewardSpec { grpo_only: true, ..RewardSpec::default() };
        let group = vec![traj_with_masked_call(5, (1, 3)), traj_with_answer(Some("5"))];
        let gold = GoldEntry { gold_answer: Some("5".into()), gold_calls: vec![] };
        let grader = ExactMatchGrader { gold_answer: "5".into() };
        let report = compute_report(&group, &gold, &spec, &grader).unwrap();
        assert_eq!(report.a_action, vec![0.0, 0.0]);
        assert!(report.scores.iter().all(|s| s.r_action == 0.0 && s.call_correctness.is_empty()));
        // masked or not, every token advantage equals a_succ
        for (k, rows) in report.per_token.iter().enumerate() {
            for row in rows {
                assert_eq!(row.advantage, report.a_succ[k]);
            }
        }
    }

    #[test]
    fn fold_pairing_uses_direct_subgroup_mean() {
        let spec = RewardSpec::default();
        let mut folded = traj_with_masked_call(1000, (0, 1));
        folded.folds.push(crate::trajectory::FoldRecord {
            step_index: 0,
            snapshot: minimal_snapshot(),
        });
        let direct_a = traj_with_masked_call(3000, (0, 1));
        let direct_b = traj_with_masked_call(3000, (0, 1));
        let group = vec![folded, direct_a, direct_b];
        let gold = GoldEntry::default();
        let grader = ExactMatchGrader { gold_answer: "never".into() };
        let report = compute_report(&group, &gold, &spec, &grader).unwrap();
        assert_eq!(report.scores[0].s_pref, Some(0.5));
        assert_eq!(report.scores[1].s_pref, None);
        assert_eq!(report.scores[2].s_pref, None);
    }

    fn minimal_snapshot() -> crate::memory::MemorySnapshot {
        crate::memory::MemorySnapshot {
            episodic: crate::memory::EpisodicMemory {
                task_description: "t".into(),
                key_events: vec![],
                current_progress: "p".into(),
            },
            working: crate::memory::WorkingMemory {
                immediate_goal: "g".into(),
                current_challenges: "c".into(),
                next_actions: vec![crate::memory::NextAction {
                    action_type: crate::memory::NextActionType::Planning,
                    description: "d".into(),
                }],
            },
            tool: crate::memory::ToolMemory { tools_used: vec![], derived_rules: vec![] },
            folded_at_step: 1,
            source_token_count: 100,
        }
    }
}
