//! Frame and subtitle access: serving a frame nearest to a requested
//! timestamp, parsing the SRT subset used by dataset tracks, and slicing
//! subtitle text for prompts under a character budget.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::model::VideoMeta;
use crate::sampling::{round_to_millis, Interval};

/// Character budget for the subtitle excerpt attached to one tool
/// observation.
pub const OBSERVATION_SUBTITLE_BUDGET: usize = 4_000;
/// Character budget for the full subtitle track inlined into the initial
/// query; longer tracks are delivered through per-tool excerpts instead.
pub const INITIAL_QUERY_SUBTITLE_BUDGET: usize = 60_000;

/// Errors from frame fetching.
#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("timestamp {t}s outside video of {duration}s")]
    TimestampOutOfRange { t: f64, duration: f64 },
    #[error("no frame directory for video at {0}")]
    MissingDirectory(PathBuf),
    #[error("no parsable frame files under {0}")]
    NoFramesFound(PathBuf),
    #[error("decoder command exited with {status}: {stderr}")]
    DecoderFailed { status: i32, stderr: String },
    #[error("decoder command produced an empty frame file")]
    DecoderProducedNothing,
    #[error("decoder command template is empty")]
    EmptyDecoderCommand,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where frames come from: a directory of pre-extracted frames named
/// `frame_<milliseconds>.<ext>` under `<root>/<video_id>/`, an external
/// decoder command invoked per timestamp, or a virtual source for synthetic
/// timelines that have no pixels at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrameProvider {
    PreExtractedDirectory { root: PathBuf },
    /// Command template with `{video}`, `{timestamp}` and `{out}`
    /// placeholders, split on whitespace before substitution.
    ExternalDecoder { command: String },
    Virtual,
}

/// One served frame: the timestamp actually delivered (which may differ from
/// the requested one for pre-extracted frames) and the encoded image bytes.
/// Virtual frames carry no bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub bytes: Vec<u8>,
    pub media_type: String,
}

fn media_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/jpeg",
    }
}

/// Parses `frame_<digits>.<jpg|jpeg|png>` into milliseconds.
fn frame_millis(name: &str) -> Option<i64> {
    let stem = name
        .strip_suffix(".jpg")
        .or_else(|| name.strip_suffix(".jpeg"))
        .or_else(|| name.strip_suffix(".png"))?;
    let digits = stem.strip_prefix("frame_")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl FrameProvider {
    /// Serves the frame nearest to `t` seconds, with ties between equally
    /// distant frames resolved toward the earlier one.
    pub fn fetch_frame(&self, video: &VideoMeta, t: f64) -> Result<Frame, MediaError> {
        if !(t.is_finite() && (0.0..=video.duration).contains(&t)) {
            return Err(MediaError::TimestampOutOfRange { t, duration: video.duration });
        }
        match self {
            FrameProvider::PreExtractedDirectory { root } => {
                let dir = root.join(&video.id);
                if !dir.is_dir() {
                    return Err(MediaError::MissingDirectory(dir));
                }
                let target_ms = (t * 1000.0).round() as i64;
                let mut best: Option<(i64, PathBuf)> = None;
                for entry in std::fs::read_dir(&dir)? {
                    let entry = entry?;
                    let Some(ms) = entry.file_name().to_str().and_then(frame_millis) else {
                        continue;
                    };
                    let better = match &best {
                        None => true,
                        Some((best_ms, _)) => {
                            let (d, best_d) = ((ms - target_ms).abs(), (best_ms - target_ms).abs());
                            d < best_d || (d == best_d && ms < *best_ms)
                        }
                    };
                    if better {
                        best = Some((ms, entry.path()));
                    }
                }
                let (ms, path) = best.ok_or(MediaError::NoFramesFound(dir))?;
                Ok(Frame {
                    timestamp: ms as f64 / 1000.0,
                    bytes: std::fs::read(&path)?,
                    media_type: media_type_for(&path).to_string(),
                })
            }
            FrameProvider::ExternalDecoder { command } => {
                let out = tempfile::Builder::new().suffix(".jpg").tempfile()?;
                let out_path = out.path().to_string_lossy().into_owned();
                let stamp = format!("{:.3}", t);
                let tokens: Vec<String> = command
                    .split_whitespace()
                    .map(|tok| {
                        tok.replace("{video}", &video.id)
                            .replace("{timestamp}", &stamp)
                            .replace("{out}", &out_path)
                    })
                    .collect();
                let (program, args) =
                    tokens.split_first().ok_or(MediaError::EmptyDecoderCommand)?;
                let output = Command::new(program).args(args).output()?;
                if !output.status.success() {
                    return Err(MediaError::DecoderFailed {
                        status: output.status.code().unwrap_or(-1),
                        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
                    });
                }
                let bytes = std::fs::read(out.path())?;
                if bytes.is_empty() {
                    return Err(MediaError::DecoderProducedNothing);
                }
                Ok(Frame {
                    timestamp: round_to_millis(t),
                    bytes,
                    media_type: "image/jpeg".to_string(),
                })
            }
            FrameProvider::Virtual => Ok(Frame {
                timestamp: round_to_millis(t),
                bytes: Vec::new(),
                media_type: "image/jpeg".to_string(),
            }),
        }
    }
}

/// Errors from subtitle parsing.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SrtError {
    #[error("line {line}: malformed timestamp line {content:?}")]
    MalformedTimestamp { line: usize, content: String },
    #[error("line {line}: cue block is missing a timestamp line")]
    MissingTimestampLine { line: usize },
}

/// One subtitle cue with times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitleCue {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

fn parse_srt_time(s: &str) -> Option<f64> {
    let mut parts = s.trim().split(':');
    let (h, m, rest) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let (sec, ms) = rest.split_once([',', '.'])?;
    if ms.len() != 3 {
        return None;
    }
    let h: u64 = h.parse().ok()?;
    let m: u64 = m.parse().ok()?;
    let sec: u64 = sec.parse().ok()?;
    let ms: u64 = ms.parse().ok()?;
    if m >= 60 || sec >= 60 {
        return None;
    }
    Some((h * 3600 + m * 60 + sec) as f64 + ms as f64 / 1000.0)
}

/// Parses the SRT subset: blank-line-separated cue blocks of an optional
/// numeric index line, a `HH:MM:SS,mmm --> HH:MM:SS,mmm` line (a dot is
/// accepted in place of the comma), and one or more payload lines joined
/// with a single space. Cues are returned sorted by start time.
pub fn parse_srt(input: &str) -> Result<Vec<SubtitleCue>, SrtError> {
    let mut cues = Vec::new();
    let lines: Vec<&str> = input.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let block_start = i;
        // Optional index line: digits only.
        if !lines[i].trim().is_empty() && lines[i].trim().bytes().all(|b| b.is_ascii_digit()) {
            i += 1;
        }
        let Some(&time_line) = lines.get(i) else {
            return Err(SrtError::MissingTimestampLine { line: block_start + 1 });
        };
        let times = time_line
            .split_once("-->")
            .and_then(|(a, b)| Some((parse_srt_time(a)?, parse_srt_time(b)?)))
            .filter(|(a, b)| a <= b);
        let Some((start, end)) = times else {
            return Err(SrtError::MalformedTimestamp {
                line: i + 1,
                content: time_line.to_string(),
            });
        };
        i += 1;
        let mut payload: Vec<&str> = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            payload.push(lines[i].trim());
            i += 1;
        }
        cues.push(SubtitleCue { start, end, text: payload.join(" ") });
    }
    cues.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
    Ok(cues)
}

fn render_srt_time(t: f64) -> String {
    let total_ms = (t * 1000.0).round() as u64;
    let ms = total_ms % 1000;
    let s = (total_ms / 1000) % 60;
    let m = (total_ms / 60_000) % 60;
    let h = total_ms / 3_600_000;
    format!("{h:02}:{m:02}:{s:02},{ms:03}")
}

/// Renders cues back to SRT text. `parse_srt(render_srt(cues)) == cues` for
/// any parsed cue list.
pub fn render_srt(cues: &[SubtitleCue]) -> String {
    let mut out = String::new();
    for (i, cue) in cues.iter().enumerate() {
        out.push_str(&format!(
            "{}\n{} --> {}\n{}\n\n",
            i + 1,
            render_srt_time(cue.start),
            render_srt_time(cue.end),
            cue.text
        ));
    }
    out
}

/// Appended when a subtitle excerpt was cut to fit its character budget.
pub const SUBTITLE_TRUNCATION_MARKER: &str = "[subtitles truncated]";

fn slice_line_prefix(t: f64) -> String {
    let total = t.max(0.0) as u64;
    let (h, m, s) = (total / 3600, (total / 60) % 60, total % 60);
    if h > 0 {
        format!("[{h}:{m:02}:{s:02}]")
    } else {
        format!("[{m:02}:{s:02}]")
    }
}

/// Renders the cues overlapping `interval`, one `[MM:SS] text` line each
/// (`[H:MM:SS]` at or above one hour), truncating on a cue boundary with a
/// marker once the assembled text would exceed `char_budget` characters.
pub fn slice_subtitles(cues: &[SubtitleCue], interval: &Interval, char_budget: usize) -> String {
    let mut out = String::new();
    let mut used = 0usize;
    let mut truncated = false;
    for cue in cues {
        if cue.end < interval.start() || cue.start > interval.end() {
            continue;
        }
        let line = format!("{} {}", slice_line_prefix(cue.start), cue.text);
        let cost = line.chars().count() + usize::from(!out.is_empty());
        if used + cost > char_budget {
            truncated = true;
            break;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&line);
        used += cost;
    }
    if truncated {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(SUBTITLE_TRUNCATION_MARKER);
    }
    out
}
