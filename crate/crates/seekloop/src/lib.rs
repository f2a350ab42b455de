//! Agentic long-video question answering.
//!
//! A thinking model investigates a long video through a small toolkit of
//! viewing tools — a whole-video `overview`, interval `skim`s, and a
//! fine-grained `focus` — whose frame budgets all derive from one scale
//! factor. The runtime drives the think–act–observe loop: it parses tool
//! calls out of model replies, samples and fetches frames, asks a vision
//! model to describe them, and feeds the observations back until the model
//! answers (or is forced to).
//!
//! Module map:
//! - [`model`] — shared domain types (tool calls, configuration, episodes).
//! - [`sampling`] — timestamp arithmetic and interval normalization.
//! - [`media`] — frame providers and SRT subtitles.
//! - [`protocol`] — prompt templates, the tool-tag grammar, answer parsing.
//! - [`backend`] — the chat-completion trait plus HTTP and scripted backends.
//! - [`synthworld`] — self-grading synthetic videos and a reference policy.
//! - [`agent`] — the episode loop and its single-pass/replay baselines.
//! - [`harness`] — dataset manifests, benchmark runs, logs, and reports.

pub mod agent;
pub mod backend;
pub mod harness;
pub mod media;
pub mod model;
pub mod protocol;
pub mod sampling;
pub mod synthworld;

pub use agent::{run_episode, run_replay_single_pass, run_single_pass, AgentSession};
pub use backend::{BackendError, ChatBackend, HttpChatBackend, ScriptedBackend};
pub use harness::{load_manifest, run_benchmark, RunMode, RunOptions, RunReport};
pub use model::{
    Episode, EpisodeMetrics, Query, Termination, ToolCall, ToolConfig, ToolKind, ToolMask,
    VideoMeta,
};
pub use protocol::{parse_answer, parse_tool_plan, serialize_tool_call, PromptTemplates};
pub use sampling::Interval;
