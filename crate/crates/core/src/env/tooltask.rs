//! Synthetic multi-hop tool-QA tasks: a value-passing chain of lookup
//! tools (each hop's output token is the next hop's required argument)
//! hidden among distractors whose descriptions are near-miss copies.
//! Everything is a pure function of the seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::canonical::fnv1a_64;
use crate::registry::{ParameterSchema, ToolDoc, ToolRegistry};
use crate::toolpo::GoldCall;

use super::EnvError;

const NOUNS: &[&str] = &[
    "archive", "badge", "beacon", "cargo", "cipher", "credential", "dossier", "emblem", "ledger",
    "locket", "manifest", "permit", "quota", "roster", "sigil", "voucher", "waypoint", "zone",
    "parcel", "berth", "carton", "docket", "escrow", "freight", "gantry", "hangar", "invoice",
    "jetty", "keel", "lading", "mooring", "pallet", "quay", "rudder", "stevedore", "tariff",
    "union", "vessel", "wharf", "yard",
];

const DOMAINS: &[&str] =
    &["harbor", "orbital", "municipal", "botanical", "geological", "archival"];

/// One hop of the lookup chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHop {
    pub tool_name: String,
    /// The required parameter carrying the previous hop's output token.
    pub input_key: String,
    /// Stage noun this hop resolves; revealed by the previous hop's output.
    pub noun: String,
    /// Mixed into the output hash so every task's chain is distinct.
    pub salt: String,
}

/// A generated multi-hop task: the tool chain, its distractors, the gold
/// call sequence, and the gold answer that executing the chain yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticToolTask {
    pub id: String,
    pub seed: u64,
    pub question: String,
    pub instruction: String,
    pub depth: usize,
    pub n_tools: usize,
    pub start_token: String,
    pub chain: Vec<ChainHop>,
    pub toolset: Vec<ToolDoc>,
    pub gold_calls: Vec<GoldCall>,
    pub gold_answer: String,
}

/// The deterministic value function of a hop: input token to output token.
pub fn chain_value(salt: &str, input: &str) -> String {
    let h = fnv1a_64(fnv1a_64(7, salt.as_bytes()), input.as_bytes());
    format!("tok_{:012x}", h & 0xffff_ffff_ffff)
}

fn hop_output(hop_index: usize, depth: usize, chain: &[ChainHop], input: &str) -> String {
    let value = chain_value(&chain[hop_index].salt, input);
    if hop_index + 1 == depth {
        // final hop yields the bare answer token
        value
    } else {
        let next = &chain[hop_index + 1];
        format!(
            "Resolved {} entry. The {} token is {value}. Continue with the {} lookup service, parameter {}.",
            chain[hop_index].noun, next.noun, next.noun, next.input_key
        )
    }
}

/// Generate a task with `depth` chained hops among `n_tools` total tools.
/// Fully determined by `seed`.
pub fn generate_tool_task(seed: u64, n_tools: usize, depth: usize) -> SyntheticToolTask {
    assert!((3..=7).contains(&depth), "chain depth must be in [3, 7]");
    assert!(n_tools >= depth, "need at least one tool per hop");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let domain = DOMAINS[rng.gen_range(0..DOMAINS.len())];
    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let stage_nouns: Vec<String> = nouns[..depth + 1].iter().map(|s| s.to_string()).collect();
    let spare_nouns: Vec<String> = nouns[depth + 1..].iter().map(|s| s.to_string()).collect();

    let chain: Vec<ChainHop> = (0..depth)
        .map(|i| ChainHop {
            tool_name: format!("lookup_{}", stage_nouns[i + 1]),
            input_key: format!("{}_token", stage_nouns[i]),
            noun: stage_nouns[i + 1].clone(),
            salt: format!("{seed}-{i}"),
        })
        .collect();

    let mut toolset: Vec<ToolDoc> = Vec::with_capacity(n_tools);
    for (i, hop) in chain.iter().enumerate() {
        let doc = ToolDoc::new(
            &hop.tool_name,
            &format!(
                "Resolve the {} record for a given {} token in the {domain} catalog.",
                hop.noun, stage_nouns[i]
            ),
            ParameterSchema::default()
                .with_property(&hop.input_key, "string", &format!("the {} token", stage_nouns[i]))
                .require(&hop.input_key),
        );
        toolset.push(doc);
    }

    // distractors: near-miss copies of chain tools with one noun perturbed
    for j in 0..n_tools - depth {
        let src = &chain[rng.gen_range(0..depth)];
        let perturbed = &spare_nouns[rng.gen_range(0..spare_nouns.len())];
        let keep_input = rng.gen_bool(0.5);
        let description = format!(
            "Resolve the {} record for a given {} token in the {domain} catalog.",
            perturbed,
            if keep_input { src.input_key.trim_end_matches("_token") } else { perturbed }
        );
        let param = format!("{perturbed}_token");
        toolset.push(ToolDoc::new(
            &format!("probe_{perturbed}_{j:03}"),
            &description,
            ParameterSchema::default()
                .with_property(&param, "string", &format!("the {perturbed} token"))
                .require(&param),
        ));
    }

    let start_token = format!("tok_{:012x}", rng.gen::<u64>() & 0xffff_ffff_ffff);
    let mut gold_calls = Vec::with_capacity(depth);
    let mut value = start_token.clone();
    for (i, hop) in chain.iter().enumerate() {
        let mut arguments = serde_json::Map::new();
        arguments.insert(hop.input_key.clone(), serde_json::Value::String(value.clone()));
        gold_calls.push(GoldCall { name: hop.tool_name.clone(), arguments });
        value = chain_value(&chain[i].salt, &value);
    }
    let gold_answer = value;

    let question = format!(
        "In the {domain} catalog, start from the {} token \"{start_token}\" and resolve the final {} code by following the chain of lookup services one hop at a time.",
        stage_nouns[0],
        stage_nouns[depth]
    );
    let instruction = format!("Answer with the final {} code exactly.", stage_nouns[depth]);

    SyntheticToolTask {
        id: format!("tooltask-{seed}-{n_tools}-{depth}"),
        seed,
        question,
        instruction,
        depth,
        n_tools,
        start_token,
        chain,
        toolset,
        gold_calls,
        gold_answer,
    }
}

impl SyntheticToolTask {
    /// Register the task's tools (chain hops as live local handlers,
    /// distractors as no-result stubs).
    pub fn instantiate(&self) -> Result<ToolRegistry, EnvError> {
        let mut registry = ToolRegistry::new();
        for doc in &self.toolset {
            let is_hop = self.chain.iter().position(|h| h.tool_name == doc.name);
            match is_hop {
                Some(i) => {
                    let chain = self.chain.clone();
                    let depth = self.depth;
                    let key = self.chain[i].input_key.clone();
                    registry.register_local(
                        doc.clone(),
                        Arc::new(move |args| {
                            let input = args
                                .get(&key)
                                .and_then(|v| v.as_str())
                                .ok_or_else(|| format!("parameter {key} must be a string"))?;
                            Ok(hop_output(i, depth, &chain, input))
                        }),
                    )?;
                }
                None => {
                    registry.register_local(
                        doc.clone(),
                        Arc::new(|_args| {
                            Ok("No records found for this query in the catalog.".to_string())
                        }),
                    )?;
                }
            }
        }
        Ok(registry)
    }

    /// The chain tools' docs, for labeled mode.
    pub fn gold_docs(&self) -> Vec<ToolDoc> {
        self.chain
            .iter()
            .filter_map(|h| self.toolset.iter().find(|d| d.name == h.tool_name))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_task() {
        let a = generate_tool_task(1, 8, 3);
        let b = generate_tool_task(1, 8, 3);
        assert_eq!(a, b);
        let c = generate_tool_task(2, 8, 3);
        assert_ne!(a.gold_answer, c.gold_answer);
    }

    #[test]
    fn depth_matches_gold_call_count() {
        for depth in 3..=7 {
            let task = generate_tool_task(11, 16, depth);
            assert_eq!(task.gold_calls.len(), depth);
            assert_eq!(task.chain.len(), depth);
            assert_eq!(task.toolset.len(), 16);
        }
    }

    #[test]
    fn gold_chain_executes_to_gold_answer() {
        let task = generate_tool_task(1, 8, 3);
        let registry = task.instantiate().unwrap();
        let mut last = String::new();
        for call in &task.gold_calls {
            let handler = registry.handler(&call.name).expect("chain tool registered");
            last = handler(&call.arguments).expect("gold call succeeds");
        }
        assert_eq!(last, task.gold_answer);
    }

    #[test]
    fn distractors_absent_from_gold() {
        let task = generate_tool_task(5, 32, 4);
        let chain_names: Vec<&str> = task.chain.iter().map(|h| h.tool_name.as_str()).collect();
        for call in &task.gold_calls {
            assert!(chain_names.contains(&call.name.as_str()));
        }
        let distractors =
            task.toolset.iter().filter(|d| !chain_names.contains(&d.name.as_str())).count();
        assert_eq!(distractors, 32 - 4);
    }

    #[test]
    fn mid_chain_outputs_reveal_next_stage() {
        let task = generate_tool_task(3, 8, 3);
        let registry = task.instantiate().unwrap();
        let first = registry.handler(&task.gold_calls[0].name).unwrap()(
            &task.gold_calls[0].arguments,
        )
        .unwrap();
        // the first hop's output names the second hop's noun
        assert!(first.contains(&task.chain[1].noun), "{first}");
        // but the question does not
        assert!(!task.question.contains(&task.chain[1].noun));
    }
}
