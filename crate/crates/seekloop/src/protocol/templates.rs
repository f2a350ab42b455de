//! Prompt templates. Every string the runtime ever sends to a model is
//! rendered from one of seven named templates, each with a fixed slot set;
//! a template set either comes from the built-in defaults or from a
//! directory of `.txt` files overriding all seven.

use std::path::Path;

use crate::model::{Query, ToolConfig, ToolKind};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("missing template file {0}")]
    MissingFile(String),
    #[error("failed reading template {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {template} must contain slot {{{slot}}} exactly once, found {count}")]
    SlotCount { template: &'static str, slot: &'static str, count: usize },
}

/// (template name, file stem, required slots — each must appear exactly once)
const TEMPLATE_SPECS: [(&str, &[&str]); 7] = [
    ("system_instruction", &["max_turns", "max_calls", "toolkit"]),
    ("initial_user_query", &["duration", "subtitles", "question"]),
    ("round_instruction", &["turn", "max_turns"]),
    ("overview_prompt", &["timestamps", "subtitle_excerpt"]),
    ("skim_prompt", &["start", "end", "timestamps", "sub_query", "subtitle_excerpt"]),
    ("focus_prompt", &["start", "end", "timestamps", "sub_query", "subtitle_excerpt"]),
    ("direct_answer_instruction", &[]),
];

const DEFAULT_SYSTEM_INSTRUCTION: &str = "\
## Role
You answer questions about a long video. You cannot watch it end to end; you
investigate it by choosing where to look, a few seconds at a time.

## Environment
Viewing tools sample frames from the video and return a textual description
of what they show, together with any subtitles from the sampled interval.
Tool results arrive as observation messages in this conversation.

## State
The conversation is your only memory: the question, every tool call you have
made, and every observation you have received. Build a picture of the video's
storyline from coarse scans before committing to fine ones.

## Workflow
Each turn, reason step by step about what you know and what is missing, then
either emit viewing tool calls (at most {max_calls} per turn) or give the
final answer. Prefer one coarse pass, then narrow to the intervals that could
contain the evidence, then confirm.

## Toolkit
{toolkit}

## Operational Rules
- Emit calls exactly in the self-closing form shown above, with double-quoted
  attributes. Times are seconds from the start of the video.
- The answer call must be the only call in its turn. For multiple-choice
  questions put the option label in the text, e.g. text=\"(B)\".
- You have at most {max_turns} turns. Answer as soon as the evidence is
  sufficient; do not spend turns re-confirming what you already saw.
";

const DEFAULT_INITIAL_USER_QUERY: &str = "\
Video duration: {duration} seconds.
Subtitles: {subtitles}
Question: {question}
";

const DEFAULT_ROUND_INSTRUCTION: &str = "\
Turn {turn} of {max_turns}. Think about what the observations so far tell you,
then emit your next tool calls, or the answer call if you can already answer.
";

const DEFAULT_OVERVIEW_PROMPT: &str = "\
These frames sample the whole video uniformly at the listed timestamps:
{timestamps}
Subtitles for the video:
{subtitle_excerpt}
Describe what each frame shows, keeping the timestamps, so the storyline of
the video can be reconstructed from your description.
";

const DEFAULT_SKIM_PROMPT: &str = "\
These frames sample the interval {start}-{end} s uniformly at the listed
timestamps:
{timestamps}
Subtitles for this interval:
{subtitle_excerpt}
Describe what each frame shows, keeping the timestamps, and note anything
relevant to: {sub_query}
";

const DEFAULT_FOCUS_PROMPT: &str = "\
These frames cover the clip {start}-{end} s at one frame per second, at the
listed timestamps:
{timestamps}
Subtitles for this clip:
{subtitle_excerpt}
Watch the clip closely and answer: {sub_query}
Describe the evidence frame by frame, keeping the timestamps.
";

const DEFAULT_DIRECT_ANSWER_INSTRUCTION: &str = "\
You have used all available turns. Based on everything observed so far, give
your final answer now as a single answer call and nothing else.
";

/// The seven prompt templates used by the runtime, in render order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub system_instruction: String,
    pub initial_user_query: String,
    pub round_instruction: String,
    pub overview_prompt: String,
    pub skim_prompt: String,
    pub focus_prompt: String,
    pub direct_answer_instruction: String,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let templates = PromptTemplates {
            system_instruction: DEFAULT_SYSTEM_INSTRUCTION.to_string(),
            initial_user_query: DEFAULT_INITIAL_USER_QUERY.to_string(),
            round_instruction: DEFAULT_ROUND_INSTRUCTION.to_string(),
            overview_prompt: DEFAULT_OVERVIEW_PROMPT.to_string(),
            skim_prompt: DEFAULT_SKIM_PROMPT.to_string(),
            focus_prompt: DEFAULT_FOCUS_PROMPT.to_string(),
            direct_answer_instruction: DEFAULT_DIRECT_ANSWER_INSTRUCTION.to_string(),
        };
        templates.validate().expect("built-in templates are well-formed");
        templates
    }

    /// Loads all seven templates from `<dir>/<name>.txt`. Every file must
    /// exist and validate; there is no per-file fallback to the defaults.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| -> Result<String, TemplateError> {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                return Err(TemplateError::MissingFile(path.display().to_string()));
            }
            std::fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { name: name.to_string(), source })
        };
        let templates = PromptTemplates {
            system_instruction: read("system_instruction")?,
            initial_user_query: read("initial_user_query")?,
            round_instruction: read("round_instruction")?,
            overview_prompt: read("overview_prompt")?,
            skim_prompt: read("skim_prompt")?,
            focus_prompt: read("focus_prompt")?,
            direct_answer_instruction: read("direct_answer_instruction")?,
        };
        templates.validate()?;
        Ok(templates)
    }

    /// Writes the template set out as the seven `.txt` files `from_dir`
    /// expects, so a run can ship an editable copy of its prompts.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in self.named() {
            std::fs::write(dir.join(format!("{name}.txt")), text)?;
        }
        Ok(())
    }

    /// Template (name, text) pairs in a fixed order; names double as the
    /// per-template file stems used by [`Self::from_dir`] and
    /// [`Self::write_dir`].
    pub fn named(&self) -> [(&'static str, &str); 7] {
        [
            ("system_instruction", &self.system_instruction),
            ("initial_user_query", &self.initial_user_query),
            ("round_instruction", &self.round_instruction),
            ("overview_prompt", &self.overview_prompt),
            ("skim_prompt", &self.skim_prompt),
            ("focus_prompt", &self.focus_prompt),
            ("direct_answer_instruction", &self.direct_answer_instruction),
        ]
    }

    /// Checks that every template contains each of its slots exactly once.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for ((name, slots), (_, text)) in TEMPLATE_SPECS.iter().zip(self.named()) {
            for slot in *slots {
                let marker = format!("{{{slot}}}");
                let count = text.matches(&marker).count();
                if count != 1 {
                    return Err(TemplateError::SlotCount { template: name, slot, count });
                }
            }
        }
        Ok(())
    }

    /// Renders the system instruction for a tool configuration: turn and
    /// call limits plus a toolkit section listing only the enabled viewing
    /// tools, each with its numeric budgets filled in.
    pub fn render_system_instruction(&self, config: &ToolConfig) -> String {
        let mut toolkit = String::new();
        for kind in config.tool_mask.enabled_view_tools() {
            let line = match kind {
                ToolKind::Overview => format!(
                    "- <tool name=\"overview\"/> — scan the whole video as {} uniformly \
                     spaced frames. Use this first to map the storyline.",
                    config.overview_frames
                ),
                ToolKind::Skim => format!(
                    "- <tool name=\"skim\" start=\"S\" end=\"E\" query=\"...\"/> — inspect an \
                     interval as {} uniformly spaced frames; intervals shorter than {:.1} s \
                     are widened to that span. The optional query says what to look for.",
                    config.skim_frames, config.skim_min_span
                ),
                ToolKind::Focus => format!(
                    "- <tool name=\"focus\" start=\"S\" end=\"E\" query=\"...\"/> — watch a \
                     clip at {:.0} frame(s) per second to answer the query; clips longer \
                     than {:.1} s are truncated to their first {:.1} s.",
                    config.focus_fps, config.focus_max_span, config.focus_max_span
                ),
                ToolKind::Answer => continue,
            };
            toolkit.push_str(&line);
            toolkit.push('\n');
        }
        toolkit.push_str(
            "- <tool name=\"answer\" text=\"...\"/> — give the final answer and end the task.",
        );
        self.system_instruction
            .replace("{max_turns}", &config.max_turns.to_string())
            .replace("{max_calls}", &config.max_calls_per_turn.to_string())
            .replace("{toolkit}", &toolkit)
    }

    /// Renders the opening user message. `subtitles` is the pre-rendered
    /// subtitle block (the caller decides between the full track, a
    /// too-long notice, or "(none)").
    pub fn render_initial_query(&self, duration: f64, query: &Query, subtitles: &str) -> String {
        self.initial_user_query
            .replace("{duration}", &format!("{duration:.1}"))
            .replace("{subtitles}", subtitles)
            .replace("{question}", &question_block(query))
    }

    pub fn render_round_instruction(&self, turn: u32, max_turns: u32) -> String {
        self.round_instruction
            .replace("{turn}", &turn.to_string())
            .replace("{max_turns}", &max_turns.to_string())
    }

    pub fn render_overview_prompt(&self, timestamps: &str, subtitle_excerpt: &str) -> String {
        self.overview_prompt
            .replace("{timestamps}", timestamps)
            .replace("{subtitle_excerpt}", subtitle_excerpt)
    }

    pub fn render_skim_prompt(
        &self,
        start: f64,
        end: f64,
        timestamps: &str,
        sub_query: &str,
        subtitle_excerpt: &str,
    ) -> String {
        fill_interval_prompt(&self.skim_prompt, start, end, timestamps, sub_query, subtitle_excerpt)
    }

    pub fn render_focus_prompt(
        &self,
        start: f64,
        end: f64,
        timestamps: &str,
        sub_query: &str,
        subtitle_excerpt: &str,
    ) -> String {
        fill_interval_prompt(
            &self.focus_prompt,
            start,
            end,
            timestamps,
            sub_query,
            subtitle_excerpt,
        )
    }

    pub fn direct_answer_instruction(&self) -> &str {
        &self.direct_answer_instruction
    }
}

fn fill_interval_prompt(
    template: &str,
    start: f64,
    end: f64,
    timestamps: &str,
    sub_query: &str,
    subtitle_excerpt: &str,
) -> String {
    template
        .replace("{start}", &format!("{start:.1}"))
        .replace("{end}", &format!("{end:.1}"))
        .replace("{timestamps}", timestamps)
        .replace("{sub_query}", sub_query)
        .replace("{subtitle_excerpt}", subtitle_excerpt)
}

/// Renders the question together with its lettered options, the form both
/// prompts and answer grading rely on:
///
/// ```text
/// Which item appears?
/// Options:
/// A. a red umbrella
/// B. a brass key
/// ```
pub fn question_block(query: &Query) -> String {
    match &query.options {
        None => query.question.clone(),
        Some(options) => {
            let mut block = query.question.clone();
            block.push_str("\nOptions:");
            for option in options {
                block.push_str(&format!("\n{}. {}", option.label, option.text));
            }
            block
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChoiceOption, ToolMask};

    fn sample_query() -> Query {
        Query {
            question: "Which item appears?".into(),
            options: Some(vec![
                ChoiceOption { label: 'A', text: "a red umbrella".into() },
                ChoiceOption { label: 'B', text: "a brass key".into() },
            ]),
            gold: Some("B".into()),
        }
    }

    #[test]
    fn builtin_templates_validate() {
        PromptTemplates::builtin().validate().unwrap();
    }

    #[test]
    fn system_instruction_carries_scaled_budgets() {
        let config = ToolConfig::for_alpha(4).unwrap();
        let rendered = PromptTemplates::builtin().render_system_instruction(&config);
        assert!(rendered.contains("64 uniformly spaced frames"));
        assert!(rendered.contains("as 16 uniformly spaced frames"));
        assert!(rendered.contains("shorter than 16.0 s"));
        assert!(rendered.contains("truncated to their first 16.0 s"));
        assert!(rendered.contains("at most 20 turns"));
        assert!(rendered.contains("at most 4 per"));
    }

    #[test]
    fn disabled_tools_are_omitted_from_the_toolkit() {
        let mut config = ToolConfig::for_alpha(2).unwrap();
        config.tool_mask = ToolMask::without(crate::model::ToolKind::Skim);
        let rendered = PromptTemplates::builtin().render_system_instruction(&config);
        assert!(!rendered.contains("name=\"skim\""));
        assert!(rendered.contains("name=\"overview\""));
        assert!(rendered.contains("name=\"focus\""));
        assert!(rendered.contains("name=\"answer\""));
    }

    #[test]
    fn initial_query_renders_duration_subtitles_and_options() {
        let rendered = PromptTemplates::builtin().render_initial_query(
            3600.0,
            &sample_query(),
            "(none)",
        );
        assert!(rendered.contains("Video duration: 3600.0 seconds."));
        assert!(rendered.contains("Subtitles: (none)"));
        assert!(rendered.contains("Question: Which item appears?\nOptions:\nA. a red umbrella\nB. a brass key"));
    }

    #[test]
    fn question_block_without_options_is_the_bare_question() {
        let query = Query { question: "what happens?".into(), options: None, gold: None };
        assert_eq!(question_block(&query), "what happens?");
    }

    #[test]
    fn directory_round_trip_preserves_all_templates() {
        let dir = tempfile::tempdir().unwrap();
        let builtin = PromptTemplates::builtin();
        builtin.write_dir(dir.path()).unwrap();
        let loaded = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(loaded, builtin);
    }

    #[test]
    fn missing_file_and_bad_slot_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = PromptTemplates::from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, TemplateError::MissingFile(_)));

        let mut broken = PromptTemplates::builtin();
        broken.round_instruction = "turn {turn} of {max_turns} (again: {turn})".into();
        match broken.validate().unwrap_err() {
            TemplateError::SlotCount { template, slot, count } => {
                assert_eq!(template, "round_instruction");
                assert_eq!(slot, "turn");
                assert_eq!(count, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_and_tool_prompts_fill_their_slots() {
        let t = PromptTemplates::builtin();
        assert!(t.render_round_instruction(3, 20).contains("Turn 3 of 20."));
        let skim = t.render_skim_prompt(94.5, 110.5, "95.0, 96.0", "the red door", "(none)");
        assert!(skim.contains("interval 94.5-110.5 s"));
        assert!(skim.contains("95.0, 96.0"));
        assert!(skim.contains("relevant to: the red door"));
        let focus = t.render_focus_prompt(100.0, 116.0, "100.0", "who opens it", "(none)");
        assert!(focus.contains("clip 100.0-116.0 s"));
        assert!(focus.contains("answer: who opens it"));
    }
}
