//! The think–act–observe episode loop, plus the two non-agentic baselines
//! (a fixed-budget single pass and a replay of another episode's frames).
//!
//! One episode: the thinking backend receives the task and, each turn,
//! a round instruction; it replies with tool tags; the runtime executes
//! every viewing call (sampling timestamps, fetching frames, asking the
//! vision backend to describe them) and appends the observations as a
//! single user message. The loop ends when the model emits a sole answer
//! call, or — after the turn budget — when the runtime forces a direct
//! answer with one final thinking call.

use std::collections::BTreeSet;

use crate::backend::{ChatBackend, Message};
use crate::media::{slice_subtitles, SubtitleCue, INITIAL_QUERY_SUBTITLE_BUDGET, OBSERVATION_SUBTITLE_BUDGET};
use crate::model::{
    millisecond_key, Episode, EpisodeMetrics, Observation, Query, Termination, TokenUsage, Turn,
    VideoMeta,
};
use crate::protocol::{parse_answer, parse_tool_plan, ParsedPlan, PromptTemplates};
use crate::sampling::{
    fps_timestamps, normalize_focus, normalize_skim, round_to_millis, uniform_timestamps,
    uniform_timestamps_in, Interval,
};
use crate::model::{ToolCall, ToolConfig};

/// Everything an episode needs besides the task itself.
pub struct AgentSession<'a> {
    pub config: ToolConfig,
    pub templates: &'a PromptTemplates,
    pub thinking: &'a dyn ChatBackend,
    pub vision: &'a dyn ChatBackend,
}

/// A hard failure that ends an episode early: the thinking backend is
/// unreachable (viewing failures do not abort — they come back to the model
/// as error observations). The turns completed so far are preserved.
#[derive(Debug, thiserror::Error)]
#[error("episode aborted on turn {turn}: {reason}")]
pub struct EpisodeAborted {
    pub turn: u32,
    pub reason: String,
    pub partial: Vec<Turn>,
}

fn abort(turn: u32, reason: impl Into<String>, partial: Vec<Turn>) -> EpisodeAborted {
    EpisodeAborted { turn, reason: reason.into(), partial }
}

/// Renders the subtitle block for the opening message: the whole track when
/// it fits the inline budget, otherwise a note (excerpts still accompany
/// every observation).
fn initial_subtitle_block(subtitles: Option<&[SubtitleCue]>, duration: f64) -> String {
    let Some(cues) = subtitles.filter(|c| !c.is_empty()) else {
        return "(none)".to_string();
    };
    let whole = Interval::new(0.0, duration).expect("positive duration");
    let rendered = slice_subtitles(cues, &whole, usize::MAX);
    if rendered.chars().count() <= INITIAL_QUERY_SUBTITLE_BUDGET {
        format!("\n{rendered}")
    } else {
        "(track too long to inline; excerpts accompany each observation)".to_string()
    }
}

fn timestamps_line(stamps: &[f64]) -> String {
    stamps.iter().map(|t| format!("{t:.1}")).collect::<Vec<_>>().join(", ")
}

/// Rounds to milliseconds and drops duplicate keys, preserving order. The
/// result is strictly increasing for any non-decreasing input.
fn dedup_millis(stamps: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in stamps {
        let rounded = round_to_millis(t);
        if seen.insert(millisecond_key(rounded)) {
            out.push(rounded);
        }
    }
    out
}

struct Executed {
    observation: Observation,
    /// The block appended to the observation message for this call.
    block: String,
}

fn error_observation(tool: ToolCall, stamps: Vec<f64>, ordinal: usize, message: String) -> Executed {
    let block = format!("Observation {ordinal} [{}]: ERROR: {message}", header_label(&tool));
    Executed {
        observation: Observation {
            tool,
            sampled_timestamps: stamps,
            description: String::new(),
            subtitle_excerpt: None,
            usage: TokenUsage::default(),
            error: Some(message),
        },
        block,
    }
}

fn header_label(tool: &ToolCall) -> String {
    match tool.interval() {
        None => tool.kind().name().to_string(),
        Some(iv) => format!("{} {:.1}-{:.1}", tool.kind().name(), iv.start(), iv.end()),
    }
}

/// Executes one viewing call end to end. Interval adjustments are applied
/// silently to the call recorded in the observation and echoed as a note in
/// the message header; frame-fetch and vision failures become error
/// observations rather than runtime errors.
fn execute_tool(
    session: &AgentSession,
    video: &VideoMeta,
    query: &Query,
    subtitles: Option<&[SubtitleCue]>,
    call: &ToolCall,
    ordinal: usize,
) -> Executed {
    let config = &session.config;
    // Normalize the requested interval into an executable one.
    let normalized = match call {
        ToolCall::Overview => ToolCall::Overview,
        ToolCall::Skim { interval, query } => {
            match normalize_skim(interval, config, video.duration) {
                Ok(adjusted) => ToolCall::Skim { interval: adjusted, query: query.clone() },
                Err(e) => {
                    return error_observation(call.clone(), Vec::new(), ordinal, e.to_string())
                }
            }
        }
        ToolCall::Focus { interval, query } => {
            match normalize_focus(interval, config, video.duration) {
                Ok(adjusted) => ToolCall::Focus { interval: adjusted, query: query.clone() },
                Err(e) => {
                    return error_observation(call.clone(), Vec::new(), ordinal, e.to_string())
                }
            }
        }
        ToolCall::Answer { .. } => unreachable!("answer plans never reach tool execution"),
    };
    let adjusted_note = match (call.interval(), normalized.interval()) {
        (Some(a), Some(b)) if a != b => format!(" (requested {a}, adjusted)"),
        _ => String::new(),
    };

    let raw_stamps = match &normalized {
        ToolCall::Overview => uniform_timestamps(video.duration, config.overview_frames as usize),
        ToolCall::Skim { interval, .. } => uniform_timestamps_in(interval, config.skim_frames as usize),
        ToolCall::Focus { interval, .. } => fps_timestamps(interval, config.focus_fps),
        ToolCall::Answer { .. } => unreachable!(),
    };
    let stamps = match raw_stamps {
        Ok(s) => dedup_millis(s),
        Err(e) => return error_observation(normalized, Vec::new(), ordinal, e.to_string()),
    };

    let mut frames = Vec::with_capacity(stamps.len());
    for &t in &stamps {
        match video.frame_source.fetch_frame(video, t) {
            Ok(frame) => frames.push(frame),
            Err(e) => {
                return error_observation(
                    normalized,
                    stamps.clone(),
                    ordinal,
                    format!("frame fetch failed at {t:.1}: {e}"),
                )
            }
        }
    }

    // Subtitles for the covered interval; an overview covers everything.
    let covered = normalized
        .interval()
        .cloned()
        .unwrap_or_else(|| Interval::new(0.0, video.duration).expect("positive duration"));
    let excerpt = subtitles
        .map(|cues| slice_subtitles(cues, &covered, OBSERVATION_SUBTITLE_BUDGET))
        .filter(|s| !s.is_empty());
    let excerpt_text = excerpt.as_deref().unwrap_or("(none)");

    let stamps_text = timestamps_line(&stamps);
    let prompt = match &normalized {
        ToolCall::Overview => {
            session.templates.render_overview_prompt(&stamps_text, excerpt_text)
        }
        ToolCall::Skim { interval, query: sub } => session.templates.render_skim_prompt(
            interval.start(),
            interval.end(),
            &stamps_text,
            sub.as_deref().unwrap_or(&query.question),
            excerpt_text,
        ),
        ToolCall::Focus { interval, query: sub } => session.templates.render_focus_prompt(
            interval.start(),
            interval.end(),
            &stamps_text,
            sub,
            excerpt_text,
        ),
        ToolCall::Answer { .. } => unreachable!(),
    };

    match session.vision.complete(&[Message::user_with_frames(prompt, frames)]) {
        Ok(reply) => {
            let mut block = format!(
                "Observation {ordinal} [{}]{adjusted_note}:\n{}",
                header_label(&normalized),
                reply.text
            );
            if let Some(excerpt) = &excerpt {
                block.push_str("\nSubtitles:\n");
                block.push_str(excerpt);
            }
            Executed {
                observation: Observation {
                    tool: normalized,
                    sampled_timestamps: stamps,
                    description: reply.text,
                    subtitle_excerpt: excerpt,
                    usage: reply.usage,
                    error: None,
                },
                block,
            }
        }
        Err(e) => error_observation(
            normalized,
            stamps,
            ordinal,
            format!("vision call failed: {e}"),
        ),
    }
}

/// One thinking call, with a single corrective re-prompt when the reply's
/// tool tags fail to parse. A second failure yields an empty plan (the turn
/// is spent) and a transcript note telling the model to plan afresh.
fn think_with_repair(
    session: &AgentSession,
    transcript: &mut Vec<Message>,
    turn: u32,
    partial: &[Turn],
) -> Result<(ParsedPlan, TokenUsage, u32), EpisodeAborted> {
    let reply = session
        .thinking
        .complete(transcript)
        .map_err(|e| abort(turn, format!("thinking backend failed: {e}"), partial.to_vec()))?;
    transcript.push(Message::assistant(reply.text.clone()));
    let mut usage = reply.usage;
    let first_error = match parse_tool_plan(&reply.text, &session.config) {
        Ok(plan) => return Ok((plan, usage, 1)),
        Err(e) => e,
    };
    transcript.push(Message::user(format!(
        "Your reply could not be used: {first_error}. Reply again with one valid set of \
         tool tags, or a single answer call."
    )));
    let retry = session
        .thinking
        .complete(transcript)
        .map_err(|e| abort(turn, format!("thinking backend failed: {e}"), partial.to_vec()))?;
    transcript.push(Message::assistant(retry.text.clone()));
    usage.add(retry.usage);
    match parse_tool_plan(&retry.text, &session.config) {
        Ok(plan) => Ok((plan, usage, 2)),
        Err(e) => {
            transcript.push(Message::user(format!(
                "Your reply could not be used twice in a row ({e}); this turn is skipped. \
                 Plan afresh next turn."
            )));
            Ok((
                ParsedPlan {
                    calls: Vec::new(),
                    thought: retry.text.trim().to_string(),
                    notes: vec![format!("turn consumed by unparseable replies: {e}")],
                },
                usage,
                2,
            ))
        }
    }
}

fn finish_episode(
    video: &VideoMeta,
    query: &Query,
    turns: Vec<Turn>,
    answer_text: &str,
    termination: Termination,
    forced_answer_usage: Option<TokenUsage>,
) -> Episode {
    let final_answer = match parse_answer(answer_text, query) {
        Ok(parsed) => parsed.as_text(),
        // No recognizable option label: keep the raw text (graded wrong).
        Err(_) => answer_text.trim().to_string(),
    };
    let mut episode = Episode {
        video: video.clone(),
        query: query.clone(),
        turns,
        final_answer,
        termination,
        forced_answer_usage,
        metrics: EpisodeMetrics::default(),
    };
    episode.metrics = EpisodeMetrics::measure(&episode);
    debug_assert_eq!(episode.validate(), Ok(()));
    episode
}

/// Runs one full agent episode over a video and question.
pub fn run_episode(
    session: &AgentSession,
    video: &VideoMeta,
    query: &Query,
    subtitles: Option<&[SubtitleCue]>,
) -> Result<Episode, EpisodeAborted> {
    query
        .validate()
        .map_err(|e| abort(0, format!("invalid query: {e}"), Vec::new()))?;
    let config = &session.config;
    let mut transcript = vec![
        Message::system(session.templates.render_system_instruction(config)),
        Message::user(session.templates.render_initial_query(
            video.duration,
            query,
            &initial_subtitle_block(subtitles, video.duration),
        )),
    ];
    let mut turns: Vec<Turn> = Vec::new();

    for index in 1..=config.max_turns {
        transcript.push(Message::user(
            session.templates.render_round_instruction(index, config.max_turns),
        ));
        let (plan, usage, thinking_calls) =
            think_with_repair(session, &mut transcript, index, &turns)?;

        if let Some(answer) = plan.sole_answer() {
            let answer = answer.to_string();
            turns.push(Turn {
                index,
                thought: plan.thought,
                plan: plan.calls,
                observations: Vec::new(),
                usage,
                thinking_calls,
            });
            return Ok(finish_episode(
                video,
                query,
                turns,
                &answer,
                Termination::AnsweredInLoop,
                None,
            ));
        }

        let mut observations = Vec::with_capacity(plan.calls.len());
        let mut blocks = Vec::with_capacity(plan.calls.len());
        for (i, call) in plan.calls.iter().enumerate() {
            let executed = execute_tool(session, video, query, subtitles, call, i + 1);
            observations.push(executed.observation);
            blocks.push(executed.block);
        }
        if !blocks.is_empty() {
            transcript.push(Message::user(blocks.join("\n\n")));
        }
        turns.push(Turn {
            index,
            thought: plan.thought,
            plan: plan.calls,
            observations,
            usage,
            thinking_calls,
        });
    }

    // Out of turns: force a direct answer with one final thinking call.
    transcript.push(Message::user(
        session.templates.direct_answer_instruction().to_string(),
    ));
    let reply = session.thinking.complete(&transcript).map_err(|e| {
        abort(
            config.max_turns,
            format!("thinking backend failed on forced answer: {e}"),
            turns.clone(),
        )
    })?;
    // The model may comply with a proper answer tag; accept bare text too.
    let answer_text = match parse_tool_plan(&reply.text, config) {
        Ok(plan) => match plan.sole_answer() {
            Some(answer) => answer.to_string(),
            None => reply.text.clone(),
        },
        Err(_) => reply.text.clone(),
    };
    Ok(finish_episode(
        video,
        query,
        turns,
        &answer_text,
        Termination::ForcedAnswer,
        Some(reply.usage),
    ))
}

/// Runs the non-agentic baseline: one uniform sample of `budget` frames
/// over the whole video, one vision description, one answer. The result is
/// recorded as a two-turn episode (an observation turn with zero thinking
/// calls, then the answer turn) so metrics and grading work unchanged.
pub fn run_single_pass(
    session: &AgentSession,
    video: &VideoMeta,
    query: &Query,
    subtitles: Option<&[SubtitleCue]>,
    budget: u32,
) -> Result<Episode, EpisodeAborted> {
    query
        .validate()
        .map_err(|e| abort(0, format!("invalid query: {e}"), Vec::new()))?;
    let stamps = uniform_timestamps(video.duration, budget as usize)
        .map_err(|e| abort(1, format!("bad sampling request: {e}"), Vec::new()))?;
    run_fixed_stamps(session, video, query, subtitles, dedup_millis(stamps))
}

/// Replays the exact frames another episode sampled (its unique timestamp
/// set, sorted) through the single-pass pipeline. Shows what the seeking
/// behaviour alone was worth: same frames, no iterative reasoning.
pub fn run_replay_single_pass(
    session: &AgentSession,
    source: &Episode,
    subtitles: Option<&[SubtitleCue]>,
) -> Result<Episode, EpisodeAborted> {
    let keys: BTreeSet<i64> = source
        .turns
        .iter()
        .flat_map(|t| &t.observations)
        .flat_map(|o| &o.sampled_timestamps)
        .map(|&t| millisecond_key(t))
        .collect();
    if keys.is_empty() {
        return Err(abort(0, "source episode sampled no frames", Vec::new()));
    }
    let stamps: Vec<f64> = keys.into_iter().map(|k| k as f64 / 1000.0).collect();
    run_fixed_stamps(session, &source.video, &source.query, subtitles, stamps)
}

fn run_fixed_stamps(
    session: &AgentSession,
    video: &VideoMeta,
    query: &Query,
    subtitles: Option<&[SubtitleCue]>,
    stamps: Vec<f64>,
) -> Result<Episode, EpisodeAborted> {
    let mut frames = Vec::with_capacity(stamps.len());
    for &t in &stamps {
        let frame = video.frame_source.fetch_frame(video, t).map_err(|e| {
            abort(1, format!("frame fetch failed at {t:.1}: {e}"), Vec::new())
        })?;
        frames.push(frame);
    }
    let whole = Interval::new(0.0, video.duration).expect("positive duration");
    let excerpt = subtitles
        .map(|cues| slice_subtitles(cues, &whole, OBSERVATION_SUBTITLE_BUDGET))
        .filter(|s| !s.is_empty());
    let prompt = session
        .templates
        .render_overview_prompt(&timestamps_line(&stamps), excerpt.as_deref().unwrap_or("(none)"));
    let described = session
        .vision
        .complete(&[Message::user_with_frames(prompt, frames)])
        .map_err(|e| abort(1, format!("vision call failed: {e}"), Vec::new()))?;

    let observation = Observation {
        tool: ToolCall::Overview,
        sampled_timestamps: stamps,
        description: described.text.clone(),
        subtitle_excerpt: excerpt,
        usage: described.usage,
        error: None,
    };
    let mut obs_block = format!("Observation 1 [overview]:\n{}", described.text);
    if let Some(excerpt) = &observation.subtitle_excerpt {
        obs_block.push_str("\nSubtitles:\n");
        obs_block.push_str(excerpt);
    }

    let transcript = vec![
        Message::system(session.templates.render_system_instruction(&session.config)),
        Message::user(session.templates.render_initial_query(
            video.duration,
            query,
            &initial_subtitle_block(subtitles, video.duration),
        )),
        Message::user(obs_block),
        Message::user(session.templates.direct_answer_instruction().to_string()),
    ];
    let reply = session
        .thinking
        .complete(&transcript)
        .map_err(|e| abort(2, format!("thinking backend failed: {e}"), Vec::new()))?;
    let answer_text = match parse_tool_plan(&reply.text, &session.config) {
        Ok(plan) => match plan.sole_answer() {
            Some(answer) => answer.to_string(),
            None => reply.text.clone(),
        },
        Err(_) => reply.text.clone(),
    };

    let turns = vec![
        Turn {
            index: 1,
            thought: String::new(),
            plan: vec![ToolCall::Overview],
            observations: vec![observation],
            usage: TokenUsage::default(),
            thinking_calls: 0,
        },
        Turn {
            index: 2,
            thought: reply.text.trim().to_string(),
            plan: vec![ToolCall::Answer { text: answer_text.clone() }],
            observations: Vec::new(),
            usage: reply.usage,
            thinking_calls: 1,
        },
    ];
    Ok(finish_episode(
        video,
        query,
        turns,
        &answer_text,
        Termination::AnsweredInLoop,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::media::FrameProvider;
    use crate::model::{ChoiceOption, ToolKind, ToolMask};

    fn video() -> VideoMeta {
        VideoMeta {
            id: "clip".into(),
            duration: 3600.0,
            frame_source: FrameProvider::Virtual,
            subtitles: None,
        }
    }

    fn mcq() -> Query {
        Query {
            question: "Which item appears?".into(),
            options: Some(vec![
                ChoiceOption { label: 'A', text: "a red umbrella".into() },
                ChoiceOption { label: 'B', text: "a brass key".into() },
            ]),
            gold: Some("B".into()),
        }
    }

    /// A vision stub that answers `seen k frames [a, b, ...]`.
    struct EchoVision;
    impl ChatBackend for EchoVision {
        fn name(&self) -> String {
            "echo-vision".into()
        }
        fn complete(
            &self,
            messages: &[Message],
        ) -> Result<crate::backend::BackendReply, crate::backend::BackendError> {
            let stamps = messages.last().unwrap().image_timestamps();
            let text = format!("seen {} frames at {}", stamps.len(), timestamps_line(&stamps));
            Ok(crate::backend::BackendReply {
                text,
                usage: TokenUsage { input_tokens: 10, output_tokens: 5, estimated: true },
            })
        }
    }

    /// A vision stub that always fails.
    struct FailingVision;
    impl ChatBackend for FailingVision {
        fn name(&self) -> String {
            "failing-vision".into()
        }
        fn complete(
            &self,
            _: &[Message],
        ) -> Result<crate::backend::BackendReply, crate::backend::BackendError> {
            Err(crate::backend::BackendError::Transport {
                attempts: 5,
                message: "connection refused".into(),
            })
        }
    }

    /// The full text a backend saw on its `k`-th call.
    fn seen_text(backend: &ScriptedBackend, call: usize) -> String {
        backend.recorded_prompts()[call]
            .iter()
            .map(Message::text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn session<'a>(
        thinking: &'a dyn ChatBackend,
        vision: &'a dyn ChatBackend,
        templates: &'a PromptTemplates,
    ) -> AgentSession<'a> {
        AgentSession {
            config: ToolConfig::for_alpha(4).unwrap(),
            templates,
            thinking,
            vision,
        }
    }

    #[test]
    fn two_turn_scripted_episode_is_reconstructed_exactly() {
        let thinking = ScriptedBackend::new(vec![
            "Look broadly first. <tool name=\"overview\"/>".into(),
            "That settles it. <tool name=\"answer\" text=\"(B)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        assert_eq!(episode.turns.len(), 2);
        assert_eq!(episode.termination, Termination::AnsweredInLoop);
        assert_eq!(episode.final_answer, "B");
        assert_eq!(episode.turns[0].plan, vec![ToolCall::Overview]);
        assert_eq!(episode.turns[0].thought, "Look broadly first.");
        let obs = &episode.turns[0].observations[0];
        assert_eq!(obs.sampled_timestamps.len(), 64);
        assert!(obs.description.starts_with("seen 64 frames"));
        assert_eq!(episode.metrics.frames_unique, 64);
        assert_eq!(episode.metrics.model_calls, 2);
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn never_answering_script_is_forced_after_the_turn_budget() {
        let thinking = ScriptedBackend::new(vec![
            "<tool name=\"overview\"/>".into(),
            "<tool name=\"skim\" start=\"0\" end=\"100\"/>".into(),
            "<tool name=\"skim\" start=\"100\" end=\"200\"/>".into(),
            "Answer: (B)".into(), // consumed by the forced direct-answer call
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let mut s = session(&thinking, &vision, &templates);
        s.config = s.config.clone().with_max_turns(3);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        assert_eq!(episode.turns.len(), 3);
        assert_eq!(episode.termination, Termination::ForcedAnswer);
        assert_eq!(episode.final_answer, "B");
        assert!(episode.forced_answer_usage.is_some());
        // Three loop turns plus the forced call.
        assert_eq!(episode.metrics.model_calls, 4);
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn malformed_reply_is_repaired_with_one_reprompt() {
        let thinking = ScriptedBackend::new(vec![
            "I will watch <tool name=\"rewind\"/> the tape".into(),
            "<tool name=\"overview\"/>".into(),
            "<tool name=\"answer\" text=\"(A)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        assert_eq!(episode.turns.len(), 2);
        assert_eq!(episode.turns[0].thinking_calls, 2);
        assert_eq!(episode.turns[0].plan, vec![ToolCall::Overview]);
        assert_eq!(episode.turns[1].thinking_calls, 1);
        assert_eq!(episode.metrics.model_calls, 3);
        // The corrective re-prompt is visible to the model.
        assert!(seen_text(&thinking, 1).contains("could not be used"));
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn double_malformed_turn_is_consumed_with_empty_plan() {
        let thinking = ScriptedBackend::new(vec![
            "no tags here".into(),
            "still no tags".into(),
            "<tool name=\"answer\" text=\"(A)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        assert_eq!(episode.turns.len(), 2);
        assert!(episode.turns[0].plan.is_empty());
        assert!(episode.turns[0].observations.is_empty());
        assert_eq!(episode.turns[0].thinking_calls, 2);
        assert_eq!(episode.final_answer, "A");
        assert!(seen_text(&thinking, 2).contains("twice in a row"));
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn vision_failure_becomes_an_error_observation_and_the_loop_continues() {
        let thinking = ScriptedBackend::new(vec![
            "<tool name=\"overview\"/>".into(),
            "<tool name=\"answer\" text=\"(B)\"/>".into(),
        ]);
        let vision = FailingVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        let obs = &episode.turns[0].observations[0];
        assert!(obs.error.as_deref().unwrap().contains("vision call failed"));
        assert!(obs.description.is_empty());
        assert_eq!(episode.termination, Termination::AnsweredInLoop);
        // The error text reached the model as its observation message.
        assert!(seen_text(&thinking, 1).contains("ERROR: vision call failed"));
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn thinking_failure_aborts_with_partial_turns() {
        struct DeadBackend;
        impl ChatBackend for DeadBackend {
            fn name(&self) -> String {
                "dead".into()
            }
            fn complete(
                &self,
                _: &[Message],
            ) -> Result<crate::backend::BackendReply, crate::backend::BackendError> {
                Err(crate::backend::BackendError::AuthFailed(401))
            }
        }
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&DeadBackend, &vision, &templates);
        let err = run_episode(&s, &video(), &mcq(), None).unwrap_err();
        assert_eq!(err.turn, 1);
        assert!(err.reason.contains("thinking backend failed"));
        assert!(err.partial.is_empty());
    }

    #[test]
    fn interval_adjustments_are_recorded_and_echoed() {
        let thinking = ScriptedBackend::new(vec![
            "<tool name=\"skim\" start=\"100.0\" end=\"105.0\"/>".into(),
            "<tool name=\"answer\" text=\"(B)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();

        // alpha=4: minimum skim span 16 s, widened about the midpoint.
        match &episode.turns[0].observations[0].tool {
            ToolCall::Skim { interval, .. } => {
                assert!((interval.start() - 94.5).abs() < 1e-9);
                assert!((interval.end() - 110.5).abs() < 1e-9);
            }
            other => panic!("unexpected tool {other:?}"),
        }
        assert!(seen_text(&thinking, 1).contains("(requested 100.0-105.0, adjusted)"));
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn single_pass_episode_counts_one_model_call_and_the_full_budget() {
        let thinking = ScriptedBackend::new(vec!["Answer: (B)".into()]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let episode = run_single_pass(&s, &video(), &mcq(), None, 384).unwrap();

        assert_eq!(episode.turns.len(), 2);
        assert_eq!(episode.metrics.frames_unique, 384);
        assert_eq!(episode.metrics.frames_total, 384);
        assert_eq!(episode.metrics.model_calls, 1);
        assert_eq!(episode.termination, Termination::AnsweredInLoop);
        assert_eq!(episode.final_answer, "B");
        assert_eq!(episode.validate(), Ok(()));
    }

    #[test]
    fn replay_uses_exactly_the_sources_unique_frames() {
        // Source episode: overlapping skims with duplicated stamps.
        let thinking = ScriptedBackend::new(vec![
            "<tool name=\"skim\" start=\"0\" end=\"160\"/> <tool name=\"skim\" start=\"0\" end=\"160\"/>".into(),
            "<tool name=\"answer\" text=\"(B)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let source = run_episode(&s, &video(), &mcq(), None).unwrap();
        assert_eq!(source.metrics.frames_total, 32);
        assert_eq!(source.metrics.frames_unique, 16);

        let answerer = ScriptedBackend::new(vec!["Answer: (A)".into()]);
        let rs = session(&answerer, &vision, &templates);
        let replay = run_replay_single_pass(&rs, &source, None).unwrap();
        assert_eq!(replay.metrics.frames_total, source.metrics.frames_unique);
        assert_eq!(replay.metrics.frames_unique, source.metrics.frames_unique);
        let stamps = &replay.turns[0].observations[0].sampled_timestamps;
        assert!(stamps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(replay.validate(), Ok(()));
    }

    #[test]
    fn replay_of_a_frameless_source_is_rejected() {
        let thinking = ScriptedBackend::new(vec!["<tool name=\"answer\" text=\"(B)\"/>".into()]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let s = session(&thinking, &vision, &templates);
        let source = run_episode(&s, &video(), &mcq(), None).unwrap();
        let err = run_replay_single_pass(&s, &source, None).unwrap_err();
        assert!(err.reason.contains("no frames"));
    }

    #[test]
    fn disabled_tool_in_reply_triggers_repair_not_crash() {
        let thinking = ScriptedBackend::new(vec![
            "<tool name=\"skim\" start=\"0\" end=\"100\"/>".into(),
            "<tool name=\"overview\"/>".into(),
            "<tool name=\"answer\" text=\"(B)\"/>".into(),
        ]);
        let vision = EchoVision;
        let templates = PromptTemplates::builtin();
        let mut s = session(&thinking, &vision, &templates);
        s.config.tool_mask = ToolMask::without(ToolKind::Skim);
        let episode = run_episode(&s, &video(), &mcq(), None).unwrap();
        assert_eq!(episode.turns[0].plan, vec![ToolCall::Overview]);
        assert_eq!(episode.turns[0].thinking_calls, 2);
        assert!(seen_text(&thinking, 1).contains("disabled"));
    }
}
