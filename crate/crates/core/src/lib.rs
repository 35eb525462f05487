//! Single-loop reasoning agent runtime: a model emits tagged actions (tool
//! search, tool call, memory fold) inside one continuous generation
//! stream; the runtime executes them against pluggable tool backends,
//! compresses history into structured memory, records token-level
//! trajectories, and computes the rewards, group-relative advantages, and
//! clipped surrogate objective a policy trainer consumes.

pub mod agent;
pub mod backend;
pub mod canonical;
pub mod env;
pub mod exec;
pub mod memory;
pub mod protocol;
pub mod registry;
pub mod tokens;
pub mod toolpo;
pub mod trajectory;

pub use agent::{run_episode, Backends, EpisodeConfig, TaskSpec, ToolMode};
pub use protocol::{parse_tool_call, render_observation, ActionEvent, EventKind, Scanner};
pub use registry::{DeterministicEmbedder, Embedder, ToolDoc, ToolRegistry};
pub use trajectory::{transcript, Trajectory};
