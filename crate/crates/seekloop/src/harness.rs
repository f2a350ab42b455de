//! Benchmark harness: dataset manifests, backend factories, parallel runs
//! with per-episode JSONL logs, resumability, reports, and scale sweeps.
//!
//! A run writes one log file per episode under `<out>/episodes/`, each a
//! header record, one record per turn, and a footer with the graded result.
//! Reports are always recomputable from the logs alone; `read_run_dir`
//! rebuilds exactly the report the run returned.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, run_replay_single_pass, run_single_pass, AgentSession};
use crate::backend::{ChatBackend, HttpChatBackend, ScriptedBackend};
use crate::media::{parse_srt, FrameProvider, SrtError, SubtitleCue};
use crate::model::{Episode, EpisodeMetrics, Query, Termination, Turn, VideoMeta};
use crate::protocol::PromptTemplates;
use crate::synthworld::{OracleAnswerer, OracleVision, SeekPolicy, SyntheticWorld};
use crate::ToolConfig;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("failed reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest at {pointer}: {message}")]
    Manifest { pointer: String, message: String },
    #[error("failed parsing subtitles {path}: {source}")]
    Subtitles {
        path: PathBuf,
        #[source]
        source: SrtError,
    },
    #[error("bad episode log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error("run directory mismatch in {path}: {message}")]
    RunMismatch { path: PathBuf, message: String },
    #[error("no backend available: {0}")]
    Backend(String),
    #[error("replay source has no episode for {key}")]
    MissingSource { key: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub video_id: String,
    pub duration: f64,
    pub frame_source: FrameProvider,
    /// Path to an SRT file, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitles: Option<PathBuf>,
    /// Path to a synthetic-world JSON file, relative to the manifest.
    /// Required by oracle backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    pub questions: Vec<DatasetQuestion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetQuestion {
    /// Defaults to `q<index>` within the entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub query: Query,
}

/// One runnable unit: a question against a video, with its media resolved.
#[derive(Debug, Clone)]
pub struct Task {
    pub video: VideoMeta,
    pub question_id: String,
    pub query: Query,
    pub subtitles: Option<Arc<Vec<SubtitleCue>>>,
    pub world: Option<Arc<SyntheticWorld>>,
}

impl Task {
    pub fn key(&self) -> String {
        format!("{}__{}", self.video.id, self.question_id)
    }
}

fn id_is_file_safe(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Loads and validates a manifest, flattening it into per-question tasks.
/// Subtitle tracks and world files are read eagerly so a bad manifest fails
/// here rather than mid-run. Relative paths (including pre-extracted frame
/// roots) resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<Task>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let reject = |pointer: String, message: String| HarnessError::Manifest { pointer, message };

    if manifest.entries.is_empty() {
        return Err(reject("/entries".into(), "manifest has no entries".into()));
    }
    let mut seen_videos = std::collections::HashSet::new();
    let mut tasks = Vec::new();
    for (ei, entry) in manifest.entries.iter().enumerate() {
        let here = |field: &str| format!("/entries/{ei}/{field}");
        if !id_is_file_safe(&entry.video_id) {
            return Err(reject(
                here("video_id"),
                format!("id {:?} must be non-empty [A-Za-z0-9_.-]", entry.video_id),
            ));
        }
        if !seen_videos.insert(entry.video_id.clone()) {
            return Err(reject(here("video_id"), format!("duplicate id {:?}", entry.video_id)));
        }
        if !(entry.duration.is_finite() && entry.duration > 0.0) {
            return Err(reject(
                here("duration"),
                format!("duration must be a positive number, got {}", entry.duration),
            ));
        }
        if entry.questions.is_empty() {
            return Err(reject(here("questions"), "entry has no questions".into()));
        }

        let mut frame_source = entry.frame_source.clone();
        if let FrameProvider::PreExtractedDirectory { root } = &mut frame_source {
            if root.is_relative() {
                *root = base.join(&root);
            }
        }
        let subtitles = match &entry.subtitles {
            None => None,
            Some(rel) => {
                let sub_path = if rel.is_relative() { base.join(rel) } else { rel.clone() };
                let raw = std::fs::read_to_string(&sub_path).map_err(io_err(&sub_path))?;
                let cues = parse_srt(&raw)
                    .map_err(|source| HarnessError::Subtitles { path: sub_path.clone(), source })?;
                Some(Arc::new(cues))
            }
        };
        let world = match &entry.world {
            None => None,
            Some(rel) => {
                let world_path = if rel.is_relative() { base.join(rel) } else { rel.clone() };
                let raw = std::fs::read_to_string(&world_path).map_err(io_err(&world_path))?;
                let world: SyntheticWorld = serde_json::from_str(&raw)
                    .map_err(|source| HarnessError::Json { path: world_path.clone(), source })?;
                Some(Arc::new(world))
            }
        };
        let video = VideoMeta {
            id: entry.video_id.clone(),
            duration: entry.duration,
            frame_source,
            subtitles: entry.subtitles.as_ref().map(|p| p.display().to_string()),
        };

        let mut seen_questions = std::collections::HashSet::new();
        for (qi, question) in entry.questions.iter().enumerate() {
            let qhere = |field: &str| format!("/entries/{ei}/questions/{qi}/{field}");
            let question_id = question.id.clone().unwrap_or_else(|| format!("q{qi}"));
            if !id_is_file_safe(&question_id) {
                return Err(reject(
                    qhere("id"),
                    format!("id {question_id:?} must be non-empty [A-Za-z0-9_.-]"),
                ));
            }
            if !seen_questions.insert(question_id.clone()) {
                return Err(reject(qhere("id"), format!("duplicate id {question_id:?}")));
            }
            question
                .query
                .validate()
                .map_err(|e| reject(qhere("options"), e.to_string()))?;
            if let (Some(gold), Some(options)) = (&question.query.gold, &question.query.options) {
                if !options.iter().any(|o| o.label.to_string() == *gold) {
                    return Err(reject(
                        qhere("gold"),
                        format!("gold {gold:?} is not one of the option labels"),
                    ));
                }
            }
            tasks.push(Task {
                video: video.clone(),
                question_id,
                query: question.query.clone(),
                subtitles: subtitles.clone(),
                world: world.clone(),
            });
        }
    }
    tasks.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(tasks)
}

// ---------------------------------------------------------------------------
// Backend factories

/// Supplies backends per task. `thinking_for` drives the agent loop;
/// `answerer_for` is used by the single-pass and replay baselines (a plain
/// question answerer — by default the same backend).
pub trait BackendFactory: Send + Sync {
    fn thinking_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError>;
    fn vision_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError>;
    fn answerer_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        self.thinking_for(task)
    }
}

/// Live HTTP backends, one shared client for thinking and one for vision.
pub struct HttpBackendFactory {
    thinking: Arc<HttpChatBackend>,
    vision: Arc<HttpChatBackend>,
}

impl HttpBackendFactory {
    pub fn from_env() -> Result<Self, HarnessError> {
        let thinking =
            HttpChatBackend::from_env().map_err(|e| HarnessError::Backend(e.to_string()))?;
        let vision = HttpChatBackend::vision_from_env()
            .map_err(|e| HarnessError::Backend(e.to_string()))?;
        Ok(HttpBackendFactory { thinking: Arc::new(thinking), vision: Arc::new(vision) })
    }
}

impl BackendFactory for HttpBackendFactory {
    fn thinking_for(&self, _: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        Ok(self.thinking.clone())
    }
    fn vision_for(&self, _: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        Ok(self.vision.clone())
    }
}

/// Canned replies per episode, keyed `<video_id>__<question_id>`; the file
/// format is a JSON object of `{key: {"thinking": [...], "vision": [...]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeScript {
    #[serde(default)]
    pub thinking: Vec<String>,
    #[serde(default)]
    pub vision: Vec<String>,
}

pub struct ScriptedBackendFactory {
    scripts: HashMap<String, EpisodeScript>,
}

impl ScriptedBackendFactory {
    pub fn new(scripts: HashMap<String, EpisodeScript>) -> Self {
        ScriptedBackendFactory { scripts }
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let scripts = serde_json::from_str(&text)
            .map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })?;
        Ok(ScriptedBackendFactory { scripts })
    }

    fn script_for(&self, task: &Task) -> Result<&EpisodeScript, HarnessError> {
        self.scripts
            .get(&task.key())
            .ok_or_else(|| HarnessError::Backend(format!("no script for episode {}", task.key())))
    }
}

impl BackendFactory for ScriptedBackendFactory {
    fn thinking_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        let script = self.script_for(task)?;
        Ok(Arc::new(
            ScriptedBackend::new(script.thinking.clone())
                .with_name(format!("scripted-thinking({})", task.key())),
        ))
    }
    fn vision_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        let script = self.script_for(task)?;
        Ok(Arc::new(
            ScriptedBackend::new(script.vision.clone())
                .with_name(format!("scripted-vision({})", task.key())),
        ))
    }
}

/// World-backed oracles: the rule-based seek policy thinks, the world
/// describes its own frames, and single-pass baselines use the one-shot
/// answerer. Tasks must carry a `world`.
pub struct OracleBackendFactory {
    config: ToolConfig,
}

impl OracleBackendFactory {
    pub fn new(config: ToolConfig) -> Self {
        OracleBackendFactory { config }
    }

    fn world_of(task: &Task) -> Result<&SyntheticWorld, HarnessError> {
        task.world.as_deref().ok_or_else(|| {
            HarnessError::Backend(format!(
                "episode {} has no world file; oracle backends need one",
                task.key()
            ))
        })
    }
}

impl BackendFactory for OracleBackendFactory {
    fn thinking_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        Self::world_of(task)?; // fail early when the manifest lacks a world
        Ok(Arc::new(SeekPolicy::new(self.config.clone())))
    }
    fn vision_for(&self, task: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        Ok(Arc::new(OracleVision::new(Self::world_of(task)?.clone())))
    }
    fn answerer_for(&self, _: &Task) -> Result<Arc<dyn ChatBackend>, HarnessError> {
        Ok(Arc::new(OracleAnswerer))
    }
}

// ---------------------------------------------------------------------------
// Episode logs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub video_id: String,
    pub question_id: String,
    pub mode: String,
    pub alpha: u32,
    pub max_turns: u32,
    pub tools: Vec<String>,
    pub thinking_backend: String,
    pub vision_backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFooter {
    pub final_answer: String,
    /// `answered_in_loop`, `forced_answer`, or `aborted`.
    pub termination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub correct: bool,
    pub metrics: EpisodeMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord {
    Header(LogHeader),
    Turn { data: Turn },
    Footer(LogFooter),
}

fn termination_str(t: Termination) -> &'static str {
    match t {
        Termination::AnsweredInLoop => "answered_in_loop",
        Termination::ForcedAnswer => "forced_answer",
    }
}

/// A fully parsed episode log.
#[derive(Debug)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub turns: Vec<Turn>,
    pub footer: LogFooter,
}

fn write_episode_log(
    path: &Path,
    header: &LogHeader,
    turns: &[Turn],
    footer: &LogFooter,
) -> Result<(), HarnessError> {
    let mut out = String::new();
    let mut push = |record: &LogRecord| {
        out.push_str(&serde_json::to_string(record).expect("log records serialize"));
        out.push('\n');
    };
    push(&LogRecord::Header(header.clone()));
    for turn in turns {
        push(&LogRecord::Turn { data: turn.clone() });
    }
    push(&LogRecord::Footer(footer.clone()));
    // Write-then-rename so a crashed run leaves no half-written log behind.
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, &out).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn read_episode_log(path: &Path) -> Result<EpisodeLog, HarnessError> {
    let bad = |message: String| HarnessError::Log { path: path.to_path_buf(), message };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut header = None;
    let mut footer = None;
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(line)
            .map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        match record {
            LogRecord::Header(h) if i == 0 => header = Some(h),
            LogRecord::Header(_) => return Err(bad("header after line 1".into())),
            LogRecord::Turn { data } => turns.push(data),
            LogRecord::Footer(_) if footer.is_some() => {
                return Err(bad("multiple footers".into()))
            }
            LogRecord::Footer(f) => footer = Some(f),
        }
    }
    let header = header.ok_or_else(|| bad("missing header".into()))?;
    let footer = footer.ok_or_else(|| bad("missing footer (incomplete run)".into()))?;
    Ok(EpisodeLog { header, turns, footer })
}

// ---------------------------------------------------------------------------
// Grading and reports

/// Grades a final answer against the gold. Multiple-choice answers must
/// match the gold label exactly; open-ended answers match trimmed and
/// case-insensitively. No gold means no credit.
pub fn grade(query: &Query, final_answer: &str) -> bool {
    match (&query.gold, &query.options) {
        (None, _) => false,
        (Some(gold), Some(_)) => final_answer == gold,
        (Some(gold), None) => final_answer.trim().eq_ignore_ascii_case(gold.trim()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub video_id: String,
    pub question_id: String,
    pub final_answer: String,
    pub termination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub correct: bool,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub accuracy: f64,
    pub mean_frames_unique: f64,
    pub mean_frames_total: f64,
    pub mean_turns: f64,
    pub mean_tokens_in: f64,
    pub mean_tokens_out: f64,
    pub mean_model_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Aggregates,
}

impl RunReport {
    /// Sorts rows by (video, question) and computes the aggregates.
    pub fn from_rows(mut rows: Vec<EpisodeRow>) -> RunReport {
        rows.sort_by(|a, b| {
            (a.video_id.as_str(), a.question_id.as_str())
                .cmp(&(b.video_id.as_str(), b.question_id.as_str()))
        });
        let n = rows.len();
        let mean = |f: &dyn Fn(&EpisodeRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let aggregates = Aggregates {
            episodes: n,
            accuracy: mean(&|r| if r.correct { 1.0 } else { 0.0 }),
            mean_frames_unique: mean(&|r| r.metrics.frames_unique as f64),
            mean_frames_total: mean(&|r| r.metrics.frames_total as f64),
            mean_turns: mean(&|r| f64::from(r.metrics.turns)),
            mean_tokens_in: mean(&|r| r.metrics.tokens_in as f64),
            mean_tokens_out: mean(&|r| r.metrics.tokens_out as f64),
            mean_model_calls: mean(&|r| f64::from(r.metrics.model_calls)),
        };
        RunReport { rows, aggregates }
    }

    /// A human-readable summary table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("video            question  ok  term               frames  turns\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:<9} {}  {:<18} {:>6}  {:>5}\n",
                r.video_id,
                r.question_id,
                if r.correct { "+" } else { "-" },
                r.termination,
                r.metrics.frames_unique,
                r.metrics.turns,
            ));
        }
        let a = &self.aggregates;
        out.push_str(&format!(
            "episodes {}  accuracy {:.3}  mean frames {:.1} unique / {:.1} total  \
             mean turns {:.2}  mean tokens {:.0} in / {:.0} out\n",
            a.episodes,
            a.accuracy,
            a.mean_frames_unique,
            a.mean_frames_total,
            a.mean_turns,
            a.mean_tokens_in,
            a.mean_tokens_out,
        ));
        let aborted: Vec<&EpisodeRow> =
            self.rows.iter().filter(|r| r.termination == "aborted").collect();
        if !aborted.is_empty() {
            out.push_str(&format!("{} episode(s) aborted:", aborted.len()));
            for r in aborted {
                out.push_str(&format!(" {}__{}", r.video_id, r.question_id));
            }
            out.push('\n');
        }
        out
    }
}

fn row_from_footer(header: &LogHeader, footer: &LogFooter) -> EpisodeRow {
    EpisodeRow {
        video_id: header.video_id.clone(),
        question_id: header.question_id.clone(),
        final_answer: footer.final_answer.clone(),
        termination: footer.termination.clone(),
        gold: footer.gold.clone(),
        correct: footer.correct,
        metrics: footer.metrics,
    }
}

/// Rebuilds a run's report purely from its episode logs.
pub fn read_run_dir(out_dir: &Path) -> Result<RunReport, HarnessError> {
    let episodes = out_dir.join("episodes");
    let entries = std::fs::read_dir(&episodes).map_err(io_err(&episodes))?;
    let mut rows = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&episodes))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let log = read_episode_log(&path)?;
        rows.push(row_from_footer(&log.header, &log.footer));
    }
    Ok(RunReport::from_rows(rows))
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    Agent,
    SinglePass { budget: u32 },
    /// Re-answers from the frames each episode of a previous run sampled.
    Replay { source_dir: PathBuf },
}

impl RunMode {
    fn name(&self) -> &'static str {
        match self {
            RunMode::Agent => "agent",
            RunMode::SinglePass { .. } => "single_pass",
            RunMode::Replay { .. } => "replay",
        }
    }
}

pub struct RunOptions {
    pub mode: RunMode,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Skip episodes whose log already has a valid footer.
    pub resume: bool,
}

impl RunOptions {
    pub fn new(mode: RunMode, out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { mode, out_dir: out_dir.into(), workers: 4, resume: true }
    }
}

fn reconstruct_source_episode(log: &EpisodeLog, task: &Task) -> Episode {
    let termination = if log.footer.termination == "forced_answer" {
        Termination::ForcedAnswer
    } else {
        Termination::AnsweredInLoop
    };
    Episode {
        video: task.video.clone(),
        query: task.query.clone(),
        turns: log.turns.clone(),
        final_answer: log.footer.final_answer.clone(),
        termination,
        forced_answer_usage: None,
        metrics: log.footer.metrics,
    }
}

struct PreparedRun<'a> {
    config: &'a ToolConfig,
    templates: &'a PromptTemplates,
    factory: &'a dyn BackendFactory,
    options: &'a RunOptions,
    episodes_dir: PathBuf,
    /// Replay sources keyed by task key; empty for other modes.
    sources: BTreeMap<String, Episode>,
}

fn run_one(run: &PreparedRun, task: &Task) -> Result<EpisodeRow, HarnessError> {
    let log_path = run.episodes_dir.join(format!("{}.jsonl", task.key()));
    if run.options.resume && log_path.exists() {
        if let Ok(log) = read_episode_log(&log_path) {
            if log.header.alpha != run.config.alpha || log.header.mode != run.options.mode.name()
            {
                return Err(HarnessError::RunMismatch {
                    path: log_path,
                    message: format!(
                        "existing log was written by mode={} alpha={}; refusing to mix runs",
                        log.header.mode, log.header.alpha
                    ),
                });
            }
            return Ok(row_from_footer(&log.header, &log.footer));
        }
        // Unreadable or footerless log: fall through and re-run the episode.
    }

    let vision = run.factory.vision_for(task)?;
    let thinking = match run.options.mode {
        RunMode::Agent => run.factory.thinking_for(task)?,
        _ => run.factory.answerer_for(task)?,
    };
    let session = AgentSession {
        config: run.config.clone(),
        templates: run.templates,
        thinking: &*thinking,
        vision: &*vision,
    };
    let subtitles = task.subtitles.as_ref().map(|s| s.as_slice());

    let outcome = match &run.options.mode {
        RunMode::Agent => run_episode(&session, &task.video, &task.query, subtitles),
        RunMode::SinglePass { budget } => {
            run_single_pass(&session, &task.video, &task.query, subtitles, *budget)
        }
        RunMode::Replay { .. } => {
            let source = run
                .sources
                .get(&task.key())
                .ok_or_else(|| HarnessError::MissingSource { key: task.key() })?;
            run_replay_single_pass(&session, source, subtitles)
        }
    };

    let header = LogHeader {
        video_id: task.video.id.clone(),
        question_id: task.question_id.clone(),
        mode: run.options.mode.name().to_string(),
        alpha: run.config.alpha,
        max_turns: run.config.max_turns,
        tools: run
            .config
            .tool_mask
            .enabled_view_tools()
            .iter()
            .map(|k| k.name().to_string())
            .collect(),
        thinking_backend: thinking.name(),
        vision_backend: vision.name(),
    };
    let (turns, footer) = match outcome {
        Ok(episode) => {
            let correct = grade(&task.query, &episode.final_answer);
            let footer = LogFooter {
                final_answer: episode.final_answer.clone(),
                termination: termination_str(episode.termination).to_string(),
                gold: task.query.gold.clone(),
                correct,
                metrics: episode.metrics,
                abort_reason: None,
            };
            (episode.turns, footer)
        }
        Err(aborted) => {
            // Metrics still cover whatever the partial trajectory consumed.
            let scratch = Episode {
                video: task.video.clone(),
                query: task.query.clone(),
                turns: aborted.partial.clone(),
                final_answer: String::new(),
                termination: Termination::ForcedAnswer,
                forced_answer_usage: None,
                metrics: EpisodeMetrics::default(),
            };
            let footer = LogFooter {
                final_answer: String::new(),
                termination: "aborted".to_string(),
                gold: task.query.gold.clone(),
                correct: false,
                metrics: EpisodeMetrics::measure(&scratch),
                abort_reason: Some(aborted.reason.clone()),
            };
            (aborted.partial, footer)
        }
    };
    write_episode_log(&log_path, &header, &turns, &footer)?;
    Ok(row_from_footer(&header, &footer))
}

/// Runs every task, writes per-episode logs plus `report.json` under
/// `options.out_dir`, and returns the report. Episodes run in parallel on
/// `options.workers` threads; each episode is sequential internally.
pub fn run_benchmark(
    tasks: &[Task],
    config: &ToolConfig,
    templates: &PromptTemplates,
    factory: &dyn BackendFactory,
    options: &RunOptions,
) -> Result<RunReport, HarnessError> {
    let episodes_dir = options.out_dir.join("episodes");
    std::fs::create_dir_all(&episodes_dir).map_err(io_err(&episodes_dir))?;

    let mut sources = BTreeMap::new();
    if let RunMode::Replay { source_dir } = &options.mode {
        for task in tasks {
            let path = source_dir.join("episodes").join(format!("{}.jsonl", task.key()));
            if !path.exists() {
                return Err(HarnessError::MissingSource { key: task.key() });
            }
            let log = read_episode_log(&path)?;
            sources.insert(task.key(), reconstruct_source_episode(&log, task));
        }
    }

    let run = PreparedRun {
        config,
        templates,
        factory,
        options,
        episodes_dir,
        sources,
    };
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<EpisodeRow, HarnessError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let workers = options.workers.max(1).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let outcome = run_one(&run, task);
                *results[i].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    let mut rows = Vec::with_capacity(tasks.len());
    for slot in results {
        rows.push(slot.into_inner().expect("result slot")
            .expect("every task was claimed by a worker")?);
    }
    let report = RunReport::from_rows(rows);
    let report_path = options.out_dir.join("report.json");
    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, rendered).map_err(io_err(&report_path))?;
    Ok(report)
}

/// One line of a scale sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: u32,
    pub accuracy: f64,
    pub mean_frames_unique: f64,
    pub mean_frames_total: f64,
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,accuracy,mean_frames_unique,mean_frames_total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.2},{:.2}\n",
            r.alpha, r.accuracy, r.mean_frames_unique, r.mean_frames_total
        ));
    }
    out
}

/// Runs the benchmark once per scale factor (into `<out>/alpha_<k>/`) and
/// writes `sweep.csv` summarising accuracy against frames consumed.
pub fn sweep_alpha(
    tasks: &[Task],
    alphas: &[u32],
    base_config: &ToolConfig,
    templates: &PromptTemplates,
    factory_for: &dyn Fn(&ToolConfig) -> Box<dyn BackendFactory>,
    options: &RunOptions,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let config = ToolConfig::for_alpha(alpha)
            .map_err(|e| HarnessError::Backend(e.to_string()))?
            .with_max_turns(base_config.max_turns)
            .with_tool_mask(base_config.tool_mask);
        let factory = factory_for(&config);
        let sub_options = RunOptions {
            mode: options.mode.clone(),
            out_dir: options.out_dir.join(format!("alpha_{alpha}")),
            workers: options.workers,
            resume: options.resume,
        };
        let report = run_benchmark(tasks, &config, templates, factory.as_ref(), &sub_options)?;
        rows.push(SweepRow {
            alpha,
            accuracy: report.aggregates.accuracy,
            mean_frames_unique: report.aggregates.mean_frames_unique,
            mean_frames_total: report.aggregates.mean_frames_total,
        });
    }
    let csv_path = options.out_dir.join("sweep.csv");
    std::fs::write(&csv_path, render_sweep_csv(&rows)).map_err(io_err(&csv_path))?;
    Ok(rows)
}

/// Writes a synthetic dataset: world files plus a manifest referencing
/// them, one single-needle question per world.
pub fn write_synth_dataset(
    out_dir: &Path,
    task_count: u32,
    base_seed: u64,
    duration: f64,
    scenes: u32,
    needles: u32,
) -> Result<PathBuf, HarnessError> {
    let worlds_dir = out_dir.join("worlds");
    std::fs::create_dir_all(&worlds_dir).map_err(io_err(&worlds_dir))?;
    let mut entries = Vec::with_capacity(task_count as usize);
    for i in 0..u64::from(task_count) {
        let seed = base_seed + i;
        let world = SyntheticWorld::generate(seed, duration, scenes, needles)
            .map_err(|e| HarnessError::Backend(e.to_string()))?;
        let world_file = format!("worlds/world_{seed}.json");
        let rendered = serde_json::to_string_pretty(&world).expect("world serializes");
        std::fs::write(out_dir.join(&world_file), rendered)
            .map_err(io_err(&out_dir.join(&world_file)))?;
        let questions = (0..world.needles.len())
            .map(|q| {
                let query = world.question(q);
                DatasetQuestion { id: Some(format!("q{q}")), query }
            })
            .collect();
        entries.push(DatasetEntry {
            video_id: format!("synth_{seed}"),
            duration,
            frame_source: FrameProvider::Virtual,
            subtitles: None,
            world: Some(PathBuf::from(world_file)),
            questions,
        });
    }
    let manifest = DatasetManifest { entries };
    let manifest_path = out_dir.join("manifest.json");
    let rendered = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, rendered).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}
