//! Shared domain types for the video-agent runtime: videos, questions, tool
//! calls, observations, turns, episodes, and the per-alpha tool budgets.
//!
//! Everything here is plain serializable data. Serialization uses a fixed
//! field order (struct declaration order) so that an [`Episode`] written to
//! JSON and read back re-serializes byte-identically.

use serde::{Deserialize, Serialize};

use crate::media::FrameProvider;
use crate::sampling::Interval;

/// Errors for domain-type construction and validation.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    /// The sampling-granularity knob must be a positive integer.
    #[error("alpha must be >= 1, got {0}")]
    InvalidAlpha(u32),
    /// Multiple-choice labels must be consecutive capital letters from 'A'.
    #[error("option labels must be consecutive letters from 'A', got {0:?}")]
    BadOptionLabels(Vec<char>),
}

/// A video under interrogation: identity, length, and where its frames and
/// subtitles come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    /// Unique id within a dataset manifest.
    pub id: String,
    /// Duration in seconds, strictly positive.
    pub duration: f64,
    /// Where frames for this video are served from.
    pub frame_source: FrameProvider,
    /// Optional path to an SRT subtitle track.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitles: Option<String>,
}

/// One multiple-choice option: a letter label and its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub label: char,
    pub text: String,
}

/// A question about a video, optionally multiple-choice, optionally graded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub question: String,
    /// Present for multiple-choice questions. Labels are consecutive capital
    /// letters starting at 'A'.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<ChoiceOption>>,
    /// Gold answer (an option label for MCQ, free text otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl Query {
    /// Checks that MCQ labels are distinct consecutive letters from 'A'.
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(options) = &self.options {
            let labels: Vec<char> = options.iter().map(|o| o.label).collect();
            let expected = ('A'..).take(options.len());
            if !labels.iter().copied().eq(expected) {
                return Err(ModelError::BadOptionLabels(labels));
            }
        }
        Ok(())
    }

    /// Labels of the multiple-choice options, empty for open-ended questions.
    pub fn option_labels(&self) -> Vec<char> {
        self.options
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|o| o.label)
            .collect()
    }
}

/// The four tools the thinking model can invoke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Overview,
    Skim,
    Focus,
    Answer,
}

impl ToolKind {
    pub fn name(self) -> &'static str {
        match self {
            ToolKind::Overview => "overview",
            ToolKind::Skim => "skim",
            ToolKind::Focus => "focus",
            ToolKind::Answer => "answer",
        }
    }
}

impl std::fmt::Display for ToolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One parsed tool invocation. The variant shape encodes what each tool
/// accepts: `overview` takes nothing, `skim` takes an interval and an
/// optional sub-query, `focus` takes an interval and a mandatory sub-query,
/// `answer` carries only the answer text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum ToolCall {
    Overview,
    Skim {
        interval: Interval,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query: Option<String>,
    },
    Focus {
        interval: Interval,
        query: String,
    },
    Answer {
        text: String,
    },
}

impl ToolCall {
    pub fn kind(&self) -> ToolKind {
        match self {
            ToolCall::Overview => ToolKind::Overview,
            ToolCall::Skim { .. } => ToolKind::Skim,
            ToolCall::Focus { .. } => ToolKind::Focus,
            ToolCall::Answer { .. } => ToolKind::Answer,
        }
    }

    /// The requested interval, for the tools that carry one.
    pub fn interval(&self) -> Option<&Interval> {
        match self {
            ToolCall::Skim { interval, .. } | ToolCall::Focus { interval, .. } => Some(interval),
            _ => None,
        }
    }
}

/// Which view tools the agent may use. `answer` is always available and is
/// deliberately not part of the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolMask {
    pub overview: bool,
    pub skim: bool,
    pub focus: bool,
}

impl Default for ToolMask {
    fn default() -> Self {
        ToolMask { overview: true, skim: true, focus: true }
    }
}

impl ToolMask {
    /// All view tools enabled.
    pub fn full() -> Self {
        Self::default()
    }

    /// The full mask with one view tool removed (answer cannot be removed).
    pub fn without(kind: ToolKind) -> Self {
        let mut mask = Self::full();
        match kind {
            ToolKind::Overview => mask.overview = false,
            ToolKind::Skim => mask.skim = false,
            ToolKind::Focus => mask.focus = false,
            ToolKind::Answer => {}
        }
        mask
    }

    /// Whether a tool may appear in a plan. Answering is always allowed.
    pub fn enabled(&self, kind: ToolKind) -> bool {
        match kind {
            ToolKind::Overview => self.overview,
            ToolKind::Skim => self.skim,
            ToolKind::Focus => self.focus,
            ToolKind::Answer => true,
        }
    }

    /// Parses a comma-separated list such as `overview,skim,focus`.
    pub fn from_names(names: &str) -> Result<Self, String> {
        let mut mask = ToolMask { overview: false, skim: false, focus: false };
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "overview" => mask.overview = true,
                "skim" => mask.skim = true,
                "focus" => mask.focus = true,
                "answer" => {}
                other => return Err(format!("unknown tool name {other:?}")),
            }
        }
        Ok(mask)
    }

    /// The enabled view tools, in canonical order.
    pub fn enabled_view_tools(&self) -> Vec<ToolKind> {
        [ToolKind::Overview, ToolKind::Skim, ToolKind::Focus]
            .into_iter()
            .filter(|k| self.enabled(*k))
            .collect()
    }
}

/// Per-run tool budgets, all derived from the granularity knob `alpha`:
/// overview samples `16 * alpha` frames over the whole video, skim spans at
/// least `4 * alpha` seconds and samples `4 * alpha` frames, focus decodes at
/// 1 FPS over a clip capped at `4 * alpha` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub alpha: u32,
    pub overview_frames: u32,
    pub skim_min_span: f64,
    pub skim_frames: u32,
    pub focus_fps: f64,
    pub focus_max_span: f64,
    /// Maximum think-act-observe turns before the answer is forced.
    pub max_turns: u32,
    pub tool_mask: ToolMask,
    /// Upper bound on tool calls accepted from a single turn's plan.
    pub max_calls_per_turn: u32,
}

impl ToolConfig {
    /// Derives every budget from `alpha`. This is the only constructor, so a
    /// config's derived fields always match its `alpha`.
    pub fn for_alpha(alpha: u32) -> Result<Self, ModelError> {
        if alpha == 0 {
            return Err(ModelError::InvalidAlpha(alpha));
        }
        Ok(ToolConfig {
            alpha,
            overview_frames: 16 * alpha,
            skim_min_span: f64::from(4 * alpha),
            skim_frames: 4 * alpha,
            focus_fps: 1.0,
            focus_max_span: f64::from(4 * alpha),
            max_turns: 20,
            tool_mask: ToolMask::full(),
            max_calls_per_turn: 4,
        })
    }

    pub fn with_max_turns(mut self, max_turns: u32) -> Self {
        self.max_turns = max_turns;
        self
    }

    pub fn with_tool_mask(mut self, mask: ToolMask) -> Self {
        self.tool_mask = mask;
        self
    }
}

/// Token usage reported (or estimated) for one backend reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the backend did not report usage and counts were estimated
    /// from character lengths.
    pub estimated: bool,
}

impl TokenUsage {
    pub fn add(&mut self, other: TokenUsage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.estimated |= other.estimated;
    }
}

/// The result of executing one view-tool call: which call ran (after
/// normalization), what was sampled, and what the vision backend said.
/// `error` is set, and `description` empty, when the call failed; a failed
/// call never terminates the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// The executed call. Intervals here are post-normalization.
    pub tool: ToolCall,
    /// Sampled timestamps in seconds at millisecond resolution, strictly
    /// increasing.
    pub sampled_timestamps: Vec<f64>,
    /// Vision-backend text; empty if and only if `error` is set.
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitle_excerpt: Option<String>,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One think-act-observe triplet. `observations` aligns one-to-one with
/// `plan`, except that a sole answer plan (and a turn consumed by an
/// unrecoverable malformed plan, which has an empty plan) carries none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based, consecutive.
    pub index: u32,
    /// Reply text outside the tool tags.
    pub thought: String,
    pub plan: Vec<ToolCall>,
    pub observations: Vec<Observation>,
    /// Thinking-backend usage for this turn, including a repair retry.
    pub usage: TokenUsage,
    /// Thinking-backend calls spent on this turn: 1, or 2 after a repair.
    pub thinking_calls: u32,
}

/// How an episode ended: the model answered inside the loop, or the turn
/// limit expired and the answer was forced with a direct-answer instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AnsweredInLoop,
    ForcedAnswer,
}

/// A complete agent trajectory for one (video, question) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub video: VideoMeta,
    pub query: Query,
    pub turns: Vec<Turn>,
    /// The parsed answer: an option label for MCQ when one was found,
    /// otherwise the extracted answer text.
    pub final_answer: String,
    pub termination: Termination,
    /// Usage of the extra thinking call made when the answer was forced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_answer_usage: Option<TokenUsage>,
    pub metrics: EpisodeMetrics,
}

/// Cost accounting for one episode. `model_calls` counts thinking-backend
/// invocations (vision interpretation calls are accounted only through
/// token totals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Distinct sampled timestamps at millisecond granularity.
    pub frames_unique: u64,
    /// Sampled timestamps counted with repetition.
    pub frames_total: u64,
    pub turns: u32,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub model_calls: u32,
}

/// Millisecond bucket of a timestamp; frame uniqueness is defined on this.
pub(crate) fn millisecond_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

impl EpisodeMetrics {
    /// Recomputes metrics from an episode's stored turns and usages. The
    /// result equals the episode's own `metrics` for any episode produced by
    /// this runtime.
    pub fn measure(episode: &Episode) -> EpisodeMetrics {
        let mut seen = std::collections::HashSet::new();
        let mut frames_total = 0u64;
        let mut tokens = TokenUsage::default();
        let mut model_calls = 0u32;
        for turn in &episode.turns {
            tokens.add(turn.usage);
            model_calls += turn.thinking_calls;
            for obs in &turn.observations {
                frames_total += obs.sampled_timestamps.len() as u64;
                for &t in &obs.sampled_timestamps {
                    seen.insert(millisecond_key(t));
                }
                tokens.add(obs.usage);
            }
        }
        if let Some(forced) = episode.forced_answer_usage {
            tokens.add(forced);
            model_calls += 1;
        }
        EpisodeMetrics {
            frames_unique: seen.len() as u64,
            frames_total,
            turns: episode.turns.len() as u32,
            tokens_in: tokens.input_tokens,
            tokens_out: tokens.output_tokens,
            model_calls,
        }
    }
}

impl Episode {
    /// Structural sanity checks used by tests and the log reader: turn
    /// indices are 1-based consecutive, observations align with plans,
    /// answers are sole, and the termination kind matches the last turn.
    pub fn validate(&self) -> Result<(), String> {
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index as usize != i + 1 {
                return Err(format!("turn {} has index {}", i + 1, turn.index));
            }
            let answers = turn.plan.iter().filter(|c| c.kind() == ToolKind::Answer).count();
            if answers > 0 && turn.plan.len() > 1 {
                return Err(format!("turn {} mixes answer with other calls", turn.index));
            }
            let expect_obs = if answers == 1 { 0 } else { turn.plan.len() };
            if turn.observations.len() != expect_obs {
                return Err(format!(
                    "turn {} has {} observations for {} planned calls",
                    turn.index,
                    turn.observations.len(),
                    turn.plan.len()
                ));
            }
            if answers == 1 && i + 1 != self.turns.len() {
                return Err(format!("answer plan at non-final turn {}", turn.index));
            }
            for obs in &turn.observations {
                if obs.error.is_some() != obs.description.is_empty() {
                    return Err(format!(
                        "turn {}: observation error/description mismatch",
                        turn.index
                    ));
                }
                if !obs.sampled_timestamps.windows(2).all(|w| w[0] < w[1]) {
                    return Err(format!("turn {}: timestamps not strictly increasing", turn.index));
                }
                if obs
                    .sampled_timestamps
                    .iter()
                    .any(|&t| t < 0.0 || t > self.video.duration)
                {
                    return Err(format!("turn {}: timestamp outside video", turn.index));
                }
            }
        }
        let last_is_sole_answer = self
            .turns
            .last()
            .map(|t| t.plan.len() == 1 && t.plan[0].kind() == ToolKind::Answer)
            .unwrap_or(false);
        match self.termination {
            Termination::AnsweredInLoop if !last_is_sole_answer => {
                Err("answered-in-loop episode must end on a sole answer plan".into())
            }
            Termination::ForcedAnswer if last_is_sole_answer => {
                Err("forced-answer episode must not end on an answer plan".into())
            }
            Termination::ForcedAnswer if self.forced_answer_usage.is_none() => {
                Err("forced-answer episode missing the forced call usage".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::FrameProvider;

    #[test]
    fn budgets_follow_alpha() {
        // (alpha, overview, skim span/frames, focus cap)
        for (alpha, overview, four_alpha) in
            [(1u32, 16u32, 4u32), (2, 32, 8), (4, 64, 16), (8, 128, 32)]
        {
            let c = ToolConfig::for_alpha(alpha).unwrap();
            assert_eq!(c.overview_frames, overview);
            assert_eq!(c.skim_frames, four_alpha);
            assert_eq!(c.skim_min_span, f64::from(four_alpha));
            assert_eq!(c.focus_max_span, f64::from(four_alpha));
            assert_eq!(c.focus_fps, 1.0);
            assert_eq!(c.max_turns, 20);
            assert_eq!(c.max_calls_per_turn, 4);
        }
    }

    #[test]
    fn zero_alpha_rejected() {
        assert_eq!(ToolConfig::for_alpha(0), Err(ModelError::InvalidAlpha(0)));
    }

    #[test]
    fn answer_is_always_enabled() {
        for kind in [ToolKind::Overview, ToolKind::Skim, ToolKind::Focus] {
            let mask = ToolMask::without(kind);
            assert!(mask.enabled(ToolKind::Answer));
            assert!(!mask.enabled(kind));
        }
        let none = ToolMask::from_names("").unwrap();
        assert!(none.enabled(ToolKind::Answer));
    }

    #[test]
    fn option_labels_must_run_from_a() {
        let q = Query {
            question: "pick".into(),
            options: Some(vec![
                ChoiceOption { label: 'A', text: "x".into() },
                ChoiceOption { label: 'C', text: "y".into() },
            ]),
            gold: None,
        };
        assert!(matches!(q.validate(), Err(ModelError::BadOptionLabels(_))));
    }

    fn observation(tool: ToolCall, stamps: Vec<f64>) -> Observation {
        Observation {
            tool,
            sampled_timestamps: stamps,
            description: "ok".into(),
            subtitle_excerpt: None,
            usage: TokenUsage { input_tokens: 10, output_tokens: 5, estimated: true },
            error: None,
        }
    }

    fn dummy_episode(turns: Vec<Turn>, termination: Termination) -> Episode {
        Episode {
            video: VideoMeta {
                id: "v".into(),
                duration: 3600.0,
                frame_source: FrameProvider::Virtual,
                subtitles: None,
            },
            query: Query { question: "q".into(), options: None, gold: None },
            turns,
            final_answer: "A".into(),
            termination,
            forced_answer_usage: None,
            metrics: EpisodeMetrics::default(),
        }
    }

    #[test]
    fn frame_dedup_counts_at_millisecond_granularity() {
        // One overview with 64 distinct stamps, one focus with 17 stamps of
        // which 3 coincide with overview stamps: 81 total, 78 unique.
        let overview_stamps: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) * 56.25).collect();
        let mut focus_stamps: Vec<f64> = (0..14).map(|i| 2000.0 + i as f64).collect();
        focus_stamps.extend_from_slice(&overview_stamps[0..3]);
        focus_stamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let focus_call = ToolCall::Focus {
            interval: Interval::new(28.0, 44.0).unwrap(),
            query: "what happens".into(),
        };
        let turn = Turn {
            index: 1,
            thought: "look".into(),
            plan: vec![ToolCall::Overview, focus_call.clone()],
            observations: vec![
                observation(ToolCall::Overview, overview_stamps),
                observation(focus_call, focus_stamps),
            ],
            usage: TokenUsage { input_tokens: 100, output_tokens: 20, estimated: false },
            thinking_calls: 1,
        };
        let answer = Turn {
            index: 2,
            thought: String::new(),
            plan: vec![ToolCall::Answer { text: "(A)".into() }],
            observations: vec![],
            usage: TokenUsage { input_tokens: 50, output_tokens: 4, estimated: false },
            thinking_calls: 1,
        };
        let ep = dummy_episode(vec![turn, answer], Termination::AnsweredInLoop);
        let m = EpisodeMetrics::measure(&ep);
        assert_eq!(m.frames_total, 81);
        assert_eq!(m.frames_unique, 78);
        assert_eq!(m.turns, 2);
        // 100 + 50 thinking + 2 observations at 10 in / 5 out.
        assert_eq!(m.tokens_in, 170);
        assert_eq!(m.tokens_out, 34);
        assert_eq!(m.model_calls, 2);
    }

    #[test]
    fn empty_episode_measures_zero() {
        let ep = dummy_episode(vec![], Termination::ForcedAnswer);
        let m = EpisodeMetrics::measure(&ep);
        assert_eq!(m.frames_total, 0);
        assert_eq!(m.frames_unique, 0);
        assert_eq!(m.turns, 0);
    }

    #[test]
    fn episode_serialization_round_trips_byte_identically() {
        let call = ToolCall::Skim {
            interval: Interval::new(94.5, 110.5).unwrap(),
            query: Some("the red door".into()),
        };
        let turn = Turn {
            index: 1,
            thought: "check the hallway".into(),
            plan: vec![call.clone()],
            observations: vec![observation(call, vec![95.0, 96.0])],
            usage: TokenUsage::default(),
            thinking_calls: 1,
        };
        let answer = Turn {
            index: 2,
            thought: String::new(),
            plan: vec![ToolCall::Answer { text: "(B)".into() }],
            observations: vec![],
            usage: TokenUsage::default(),
            thinking_calls: 1,
        };
        let mut ep = dummy_episode(vec![turn, answer], Termination::AnsweredInLoop);
        ep.metrics = EpisodeMetrics::measure(&ep);
        let first = serde_json::to_string(&ep).unwrap();
        let back: Episode = serde_json::from_str(&first).unwrap();
        let second = serde_json::to_string(&back).unwrap();
        assert_eq!(first, second);
        assert_eq!(ep, back);
    }

    #[test]
    fn validate_catches_misaligned_observations() {
        let turn = Turn {
            index: 1,
            thought: String::new(),
            plan: vec![ToolCall::Overview],
            observations: vec![],
            usage: TokenUsage::default(),
            thinking_calls: 1,
        };
        let ep = dummy_episode(vec![turn], Termination::ForcedAnswer);
        assert!(ep.validate().unwrap_err().contains("observations"));
    }
}
