//! The text protocol between the thinking model and the runtime: prompt
//! templates, the self-closing tool-tag grammar, plan extraction, and final
//! answer parsing.
//!
//! Tag grammar (attributes double-quoted, `&quot; &amp; &lt; &gt;` escaped):
//!
//! ```text
//! <tool name="overview"/>
//! <tool name="skim" start="94.5" end="110.5" query="the red door"/>
//! <tool name="focus" start="100.0" end="116.0" query="who opens it"/>
//! <tool name="answer" text="(B)"/>
//! ```

mod templates;

pub use templates::{question_block, PromptTemplates, TemplateError};

use crate::model::{Query, ToolCall, ToolConfig, ToolKind};
use crate::sampling::Interval;

/// Errors from plan extraction. Every failure mode is one of these; the
/// parser never panics on arbitrary input.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("no tool call found in reply")]
    NoToolCallFound,
    #[error("an answer call may not be combined with other tool calls")]
    MixedAnswerAndTools,
    #[error("malformed tag at byte {position}: {reason}")]
    MalformedTag { position: usize, reason: String },
    #[error("tool {0} is disabled in this run")]
    DisabledTool(ToolKind),
}

/// Errors from final-answer parsing.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnswerError {
    #[error("no standalone option label found in reply")]
    NoLabelFound,
}

/// A successfully extracted plan: the calls in document order, the reply
/// text outside the tags, and any diagnostics (truncation, recovered bare
/// answers) worth logging.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPlan {
    pub calls: Vec<ToolCall>,
    pub thought: String,
    pub notes: Vec<String>,
}

impl ParsedPlan {
    /// True when the plan is a single answer call.
    pub fn sole_answer(&self) -> Option<&str> {
        match self.calls.as_slice() {
            [ToolCall::Answer { text }] => Some(text),
            _ => None,
        }
    }
}

fn unescape(value: &str) -> String {
    value
        .replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn escape(value: &str) -> String {
    value
        .replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

const TAG_OPEN: &str = "<tool";
const KNOWN_KEYS: [&str; 5] = ["name", "start", "end", "query", "text"];

struct RawTag {
    position: usize,
    end: usize,
    attrs: Vec<(String, String)>,
}

impl RawTag {
    fn get(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn keys(&self) -> impl Iterator<Item = &str> {
        self.attrs.iter().map(|(k, _)| k.as_str())
    }
}

fn malformed(position: usize, reason: impl Into<String>) -> PlanError {
    PlanError::MalformedTag { position, reason: reason.into() }
}

/// Scans one tag starting at `position` (which points at `<tool`). Returns
/// the raw attribute list and the byte offset one past the closing `/>`.
fn scan_tag(text: &str, position: usize) -> Result<RawTag, PlanError> {
    let bytes = text.as_bytes();
    let mut cursor = position + TAG_OPEN.len();
    let mut attrs: Vec<(String, String)> = Vec::new();
    loop {
        let mut saw_space = false;
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
            saw_space = true;
        }
        if cursor >= bytes.len() {
            return Err(malformed(position, "unterminated tag"));
        }
        if bytes[cursor] == b'/' || bytes[cursor] == b'>' {
            return if bytes[cursor] == b'/' && bytes.get(cursor + 1) == Some(&b'>') {
                Ok(RawTag { position, end: cursor + 2, attrs })
            } else {
                Err(malformed(position, "expected `/>` to close the tag"))
            };
        }
        if !saw_space {
            return Err(malformed(position, "expected whitespace before attribute"));
        }
        let key_start = cursor;
        while cursor < bytes.len() && bytes[cursor].is_ascii_lowercase() {
            cursor += 1;
        }
        let key = &text[key_start..cursor];
        if key.is_empty() {
            return Err(malformed(position, "expected an attribute name"));
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(malformed(position, format!("unknown attribute `{key}`")));
        }
        if attrs.iter().any(|(k, _)| k == key) {
            return Err(malformed(position, format!("duplicate attribute `{key}`")));
        }
        if bytes.get(cursor) != Some(&b'=') || bytes.get(cursor + 1) != Some(&b'"') {
            return Err(malformed(position, format!("attribute `{key}` must use key=\"value\"")));
        }
        cursor += 2;
        let value_start = cursor;
        while cursor < bytes.len() && bytes[cursor] != b'"' {
            cursor += 1;
        }
        if cursor >= bytes.len() {
            return Err(malformed(position, format!("unterminated value for `{key}`")));
        }
        attrs.push((key.to_string(), unescape(&text[value_start..cursor])));
        cursor += 1;
    }
}

fn parse_seconds(tag: &RawTag, key: &str) -> Result<f64, PlanError> {
    let raw = tag
        .get(key)
        .ok_or_else(|| malformed(tag.position, format!("missing attribute `{key}`")))?;
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| malformed(tag.position, format!("attribute `{key}` is not a number")))?;
    if !value.is_finite() {
        return Err(malformed(tag.position, format!("attribute `{key}` is not finite")));
    }
    Ok(value)
}

fn reject_keys(tag: &RawTag, allowed: &[&str]) -> Result<(), PlanError> {
    for key in tag.keys() {
        if key != "name" && !allowed.contains(&key) {
            return Err(malformed(
                tag.position,
                format!("tool `{}` does not take attribute `{key}`", tag.get("name").unwrap_or("")),
            ));
        }
    }
    Ok(())
}

fn call_from_tag(tag: &RawTag) -> Result<ToolCall, PlanError> {
    let name = tag
        .get("name")
        .ok_or_else(|| malformed(tag.position, "missing attribute `name`"))?;
    match name {
        "overview" => {
            reject_keys(tag, &[])?;
            Ok(ToolCall::Overview)
        }
        "skim" | "focus" => {
            reject_keys(tag, &["start", "end", "query"])?;
            let (start, end) = (parse_seconds(tag, "start")?, parse_seconds(tag, "end")?);
            let interval = Interval::new(start, end).map_err(|_| {
                malformed(
                    tag.position,
                    format!("interval [{start}, {end}) must satisfy 0 <= start < end"),
                )
            })?;
            let query = tag.get("query").map(str::to_string);
            if name == "skim" {
                Ok(ToolCall::Skim { interval, query })
            } else {
                let query = query.ok_or_else(|| {
                    malformed(tag.position, "focus requires a `query` attribute")
                })?;
                Ok(ToolCall::Focus { interval, query })
            }
        }
        "answer" => {
            reject_keys(tag, &["text"])?;
            let text = tag
                .get("text")
                .ok_or_else(|| malformed(tag.position, "answer requires a `text` attribute"))?;
            Ok(ToolCall::Answer { text: text.to_string() })
        }
        other => Err(malformed(tag.position, format!("unknown tool `{other}`"))),
    }
}

/// Finds the next `<tool` occurrence at or after `from` that is followed by
/// whitespace or `/`, i.e. a tag opener rather than a longer word.
fn next_tag_open(text: &str, from: usize) -> Option<usize> {
    let mut search = from;
    while let Some(rel) = text[search..].find(TAG_OPEN) {
        let pos = search + rel;
        match text.as_bytes().get(pos + TAG_OPEN.len()) {
            Some(b) if b.is_ascii_whitespace() || *b == b'/' => return Some(pos),
            _ => search = pos + TAG_OPEN.len(),
        }
    }
    None
}

/// Extracts the tool plan from a thinking reply: every well-formed tag in
/// document order, capped at `max_calls_per_turn` with a diagnostic note.
/// An answer call must be the only call. A reply with no tags at all is
/// recovered as a sole answer when it contains an `Answer:` marker;
/// otherwise it is `NoToolCallFound`.
pub fn parse_tool_plan(reply: &str, config: &ToolConfig) -> Result<ParsedPlan, PlanError> {
    let mut calls = Vec::new();
    let mut notes = Vec::new();
    let mut thought = String::new();
    let mut cursor = 0;
    while let Some(pos) = next_tag_open(reply, cursor) {
        let tag = scan_tag(reply, pos)?;
        calls.push(call_from_tag(&tag)?);
        thought.push_str(&reply[cursor..pos]);
        cursor = tag.end;
    }
    thought.push_str(&reply[cursor..]);

    if calls.is_empty() {
        if reply.contains("Answer:") {
            notes.push("recovered a bare answer with no tool tag".to_string());
            return Ok(ParsedPlan {
                calls: vec![ToolCall::Answer { text: reply.trim().to_string() }],
                thought: reply.trim().to_string(),
                notes,
            });
        }
        return Err(PlanError::NoToolCallFound);
    }
    let answers = calls.iter().filter(|c| c.kind() == ToolKind::Answer).count();
    if answers > 0 && calls.len() > 1 {
        return Err(PlanError::MixedAnswerAndTools);
    }
    for call in &calls {
        if !config.tool_mask.enabled(call.kind()) {
            return Err(PlanError::DisabledTool(call.kind()));
        }
    }
    let cap = config.max_calls_per_turn as usize;
    if calls.len() > cap {
        notes.push(format!("plan truncated from {} to {cap} calls", calls.len()));
        calls.truncate(cap);
    }
    Ok(ParsedPlan { calls, thought: thought.trim().to_string(), notes })
}

/// Renders a call back to canonical tag text: attributes in a fixed order,
/// seconds with one decimal, special characters escaped. Parsing the result
/// yields the call back exactly (for calls whose interval endpoints sit on
/// the 0.1 s grid the serializer writes).
pub fn serialize_tool_call(call: &ToolCall) -> String {
    match call {
        ToolCall::Overview => "<tool name=\"overview\"/>".to_string(),
        ToolCall::Skim { interval, query } => {
            let query_attr = query
                .as_deref()
                .map(|q| format!(" query=\"{}\"", escape(q)))
                .unwrap_or_default();
            format!(
                "<tool name=\"skim\" start=\"{:.1}\" end=\"{:.1}\"{query_attr}/>",
                interval.start(),
                interval.end()
            )
        }
        ToolCall::Focus { interval, query } => format!(
            "<tool name=\"focus\" start=\"{:.1}\" end=\"{:.1}\" query=\"{}\"/>",
            interval.start(),
            interval.end(),
            escape(query)
        ),
        ToolCall::Answer { text } => {
            format!("<tool name=\"answer\" text=\"{}\"/>", escape(text))
        }
    }
}

/// The parsed final answer: an option label for multiple-choice queries,
/// free text otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedAnswer {
    Label(char),
    Text(String),
}

impl ParsedAnswer {
    pub fn as_text(&self) -> String {
        match self {
            ParsedAnswer::Label(c) => c.to_string(),
            ParsedAnswer::Text(t) => t.clone(),
        }
    }
}

/// Extracts the final answer from reply text. Multiple-choice: the last
/// standalone occurrence of an option label (optionally parenthesized,
/// optionally after `Answer:`); no label is an error. Open-ended: the text
/// after the final `Answer:` marker, or the whole reply trimmed.
pub fn parse_answer(reply: &str, query: &Query) -> Result<ParsedAnswer, AnswerError> {
    match &query.options {
        Some(options) => {
            let labels: Vec<char> = options.iter().map(|o| o.label).collect();
            let chars: Vec<char> = reply.chars().collect();
            let mut found = None;
            for (i, &c) in chars.iter().enumerate() {
                if !labels.contains(&c) {
                    continue;
                }
                let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
                let next_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
                if prev_ok && next_ok {
                    found = Some(c);
                }
            }
            found.map(ParsedAnswer::Label).ok_or(AnswerError::NoLabelFound)
        }
        None => {
            let text = match reply.rfind("Answer:") {
                Some(pos) => reply[pos + "Answer:".len()..].trim(),
                None => reply.trim(),
            };
            Ok(ParsedAnswer::Text(text.to_string()))
        }
    }
}
