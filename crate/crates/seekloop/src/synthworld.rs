//! Self-grading synthetic videos.
//!
//! A [`SyntheticWorld`] is a deterministic timeline: labelled scenes that
//! partition the duration, plus short "needle" intervals during which a
//! distinctive item is visible. Worlds answer for themselves what any frame
//! shows, so a benchmark run over them needs no live vision model and can be
//! graded exactly. The module provides:
//!
//! - [`SyntheticWorld::generate`] — seeded world construction;
//! - [`OracleVision`] — a vision backend that describes sampled frames from
//!   the world definition;
//! - [`OracleAnswerer`] — a thinking backend for single-pass baselines that
//!   answers from whatever frame descriptions are in the conversation;
//! - [`SeekPolicy`] — a rule-based thinking backend that plays the full
//!   agent loop (overview, then a skim ladder over the implicated scene,
//!   then a focus confirmation);
//! - [`dense_oracle_solve`] / [`calibrate_uniform_budget`] — how many
//!   uniformly spaced frames a non-seeking sampler would need to catch the
//!   needle.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{estimate_usage, BackendError, BackendReply, ChatBackend, Message, Role};
use crate::model::{ChoiceOption, Query, ToolConfig, ToolKind};
use crate::protocol::serialize_tool_call;
use crate::sampling::Interval;
use crate::ToolCall;

/// Shortest scene a generated world will contain.
pub const SCENE_MIN_SECONDS: f64 = 60.0;

const SCENE_LABELS: [&str; 24] = [
    "kitchen", "workshop", "rooftop", "library", "greenhouse", "garage", "courtyard", "studio",
    "basement", "market", "office", "hallway", "balcony", "laundry", "stairwell", "attic",
    "cellar", "porch", "lobby", "pantry", "terrace", "gallery", "barn", "dock",
];

const SCENE_HINTS: [&str; 24] = [
    "someone waters a potted fern",
    "a dog chases a striped ball",
    "two people assemble a bookshelf",
    "a kettle whistles on the stove",
    "someone repairs a bicycle wheel",
    "children paint a wooden fence",
    "a courier delivers a large parcel",
    "someone practices the violin",
    "a cat knocks over a vase",
    "workers unload wooden crates",
    "someone irons a checked shirt",
    "a barista steams a jug of milk",
    "someone plants tulip bulbs",
    "a mechanic changes a flat tyre",
    "two friends play a card game",
    "someone hangs framed photographs",
    "a baker kneads a ball of dough",
    "someone sharpens garden shears",
    "a child flies a paper kite",
    "someone polishes a brass trumpet",
    "a clerk stamps a stack of letters",
    "someone untangles fairy lights",
    "a painter mixes shades of blue",
    "someone rewires a desk lamp",
];

const NEEDLE_ATTRIBUTES: [&str; 20] = [
    "a red umbrella",
    "a brass key",
    "a green lantern",
    "a silver whistle",
    "a purple scarf",
    "a wooden mask",
    "a glass marble",
    "a copper coin",
    "a velvet glove",
    "a paper crane",
    "a golden feather",
    "a striped mug",
    "a tiny hourglass",
    "a cracked mirror",
    "a folded map",
    "a leather satchel",
    "a porcelain owl",
    "a knitted beanie",
    "a bronze compass",
    "a jade figurine",
];

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("duration {duration} s is too short for {scenes} scenes of at least 60 s")]
    DurationTooShort { duration: f64, scenes: u32 },
    #[error("a world needs at least one scene and one needle")]
    EmptyWorld,
    #[error("vocabulary supports at most {available} {kind}, requested {requested}")]
    VocabularyExhausted { kind: &'static str, available: usize, requested: usize },
    #[error("needle count {needles} exceeds scene count {scenes}")]
    TooManyNeedles { needles: u32, scenes: u32 },
}

/// One scene: a half-open stretch `[start, end)` of the timeline with a
/// place label and a distinctive background activity (the hint questions
/// refer to).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub label: String,
    pub hint: String,
    pub start: f64,
    pub end: f64,
}

/// One needle: a closed interval `[start, end]` inside a single scene
/// during which `attribute` is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Needle {
    pub start: f64,
    pub end: f64,
    pub scene_index: usize,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub duration: f64,
    pub scenes: Vec<Scene>,
    pub needles: Vec<Needle>,
}

impl SyntheticWorld {
    /// Builds a world deterministically from the seed. Scene boundaries sit
    /// on a jittered grid, which keeps every scene at least 60 s long
    /// whenever the duration allows 60 s per scene at all. Needle spans are
    /// drawn from [3, 10] s and placed inside a randomly chosen scene,
    /// keeping clear of the outer 5% of the video where possible.
    pub fn generate(
        seed: u64,
        duration: f64,
        n_scenes: u32,
        n_needles: u32,
    ) -> Result<Self, WorldError> {
        if n_scenes == 0 || n_needles == 0 {
            return Err(WorldError::EmptyWorld);
        }
        if !duration.is_finite() || duration < SCENE_MIN_SECONDS * f64::from(n_scenes) {
            return Err(WorldError::DurationTooShort { duration, scenes: n_scenes });
        }
        if n_needles > n_scenes {
            return Err(WorldError::TooManyNeedles { needles: n_needles, scenes: n_scenes });
        }
        if n_scenes as usize > SCENE_LABELS.len() {
            return Err(WorldError::VocabularyExhausted {
                kind: "scene labels",
                available: SCENE_LABELS.len(),
                requested: n_scenes as usize,
            });
        }
        // Every question needs its gold attribute plus three distractors
        // distinct from every gold in the world.
        if n_needles as usize + 3 > NEEDLE_ATTRIBUTES.len() {
            return Err(WorldError::VocabularyExhausted {
                kind: "needle attributes",
                available: NEEDLE_ATTRIBUTES.len() - 3,
                requested: n_needles as usize,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_scenes as usize;
        let avg = duration / n as f64;
        let jitter = 0.45 * (avg - SCENE_MIN_SECONDS);
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(0.0);
        for k in 1..n {
            bounds.push(k as f64 * avg + rng.gen_range(-1.0..1.0) * jitter);
        }
        bounds.push(duration);

        let mut labels: Vec<&str> = SCENE_LABELS.to_vec();
        labels.shuffle(&mut rng);
        let mut hints: Vec<&str> = SCENE_HINTS.to_vec();
        hints.shuffle(&mut rng);
        let scenes: Vec<Scene> = (0..n)
            .map(|k| Scene {
                label: labels[k].to_string(),
                hint: hints[k].to_string(),
                start: bounds[k],
                end: bounds[k + 1],
            })
            .collect();

        let mut scene_order: Vec<usize> = (0..n).collect();
        scene_order.shuffle(&mut rng);
        let mut attrs: Vec<&str> = NEEDLE_ATTRIBUTES.to_vec();
        attrs.shuffle(&mut rng);

        let mut needles = Vec::with_capacity(n_needles as usize);
        for (i, &scene_index) in scene_order.iter().take(n_needles as usize).enumerate() {
            let scene = &scenes[scene_index];
            let span = rng.gen_range(3.0..10.0);
            // Keep the needle away from the outer 5% of the video when the
            // scene still has room for it there.
            let lo = scene.start.max(0.05 * duration);
            let hi = scene.end.min(0.95 * duration);
            let (lo, hi) = if hi - lo >= span { (lo, hi) } else { (scene.start, scene.end) };
            let start = rng.gen_range(lo..=(hi - span));
            needles.push(Needle {
                start,
                end: start + span,
                scene_index,
                attribute: attrs[i].to_string(),
            });
        }

        Ok(SyntheticWorld { seed, duration, scenes, needles })
    }

    /// The scene containing `t`; boundary instants belong to the later
    /// scene, and times at or past the end belong to the last scene.
    pub fn scene_at(&self, t: f64) -> &Scene {
        self.scenes
            .iter()
            .rev()
            .find(|s| t >= s.start)
            .unwrap_or(&self.scenes[0])
    }

    /// The needle whose closed interval contains `t`, if any.
    pub fn needle_at(&self, t: f64) -> Option<&Needle> {
        self.needles.iter().find(|n| t >= n.start && t <= n.end)
    }

    /// The ground-truth description of the frame at `t`, one line:
    /// `t=42.0: workshop (a mechanic changes a flat tyre); visible: a brass key.`
    pub fn describe(&self, t: f64) -> String {
        let scene = self.scene_at(t);
        let mut line = format!("t={t:.1}: {}", scene.label);
        if !scene.hint.is_empty() {
            line.push_str(&format!(" ({})", scene.hint));
        }
        if let Some(needle) = self.needle_at(t) {
            line.push_str(&format!("; visible: {}", needle.attribute));
        }
        line.push('.');
        line
    }

    /// The multiple-choice question for needle `index`: the needle scene's
    /// hint is quoted verbatim, the options are the gold attribute plus
    /// three distractor attributes in seeded order, and `gold` is the
    /// correct label.
    pub fn question(&self, index: usize) -> Query {
        let needle = &self.needles[index];
        let hint = &self.scenes[needle.scene_index].hint;
        let golds: Vec<&str> = self.needles.iter().map(|n| n.attribute.as_str()).collect();
        // Distractor choice and option order must not depend on how many
        // questions were generated before, only on the world and index.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0x5eed_0000 + index as u64));
        let mut distractors: Vec<&str> = NEEDLE_ATTRIBUTES
            .iter()
            .copied()
            .filter(|a| !golds.contains(a))
            .collect();
        distractors.shuffle(&mut rng);
        let mut texts: Vec<&str> = distractors.into_iter().take(3).collect();
        texts.push(&needle.attribute);
        texts.shuffle(&mut rng);
        let options: Vec<ChoiceOption> = texts
            .iter()
            .enumerate()
            .map(|(i, text)| ChoiceOption {
                label: (b'A' + i as u8) as char,
                text: text.to_string(),
            })
            .collect();
        let gold = options
            .iter()
            .find(|o| o.text == needle.attribute)
            .map(|o| o.label.to_string());
        Query {
            question: format!(
                "During the segment where {hint}, which distinctive item appears?"
            ),
            options: Some(options),
            gold,
        }
    }
}

/// Whether a uniform midpoint sampling of `budget` frames over the whole
/// video lands at least one frame inside the world's first needle. This is
/// the idealised non-seeking baseline: it grades as correct exactly when
/// the needle is sampled at all.
pub fn dense_oracle_solve(world: &SyntheticWorld, budget: u32) -> bool {
    let needle = &world.needles[0];
    let n = f64::from(budget);
    let d = world.duration;
    // Midpoint stamps are (k + 0.5) * d / n; solve for integer k with
    // needle.start <= stamp <= needle.end.
    let lo = (needle.start * n / d - 0.5).ceil().max(0.0);
    let hi = (needle.end * n / d - 0.5).floor().min(n - 1.0);
    lo <= hi
}

/// The smallest uniform frame budget whose solve rate over `worlds` reaches
/// `target` (a fraction), searching up to `cap`. Returns `cap` if even that
/// budget falls short.
pub fn calibrate_uniform_budget(worlds: &[SyntheticWorld], target: f64, cap: u32) -> u32 {
    for budget in 1..=cap {
        let solved = worlds.iter().filter(|w| dense_oracle_solve(w, budget)).count();
        if solved as f64 >= target * worlds.len() as f64 {
            return budget;
        }
    }
    cap
}

/// A vision backend that answers from the world definition: it reads the
/// timestamps of the frames attached to the last message and returns one
/// description line per frame.
pub struct OracleVision {
    world: SyntheticWorld,
}

impl OracleVision {
    pub fn new(world: SyntheticWorld) -> Self {
        OracleVision { world }
    }
}

impl ChatBackend for OracleVision {
    fn name(&self) -> String {
        format!("oracle-vision(seed={})", self.world.seed)
    }

    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError> {
        let stamps = messages
            .last()
            .map(Message::image_timestamps)
            .unwrap_or_default();
        if stamps.is_empty() {
            return Err(BackendError::InvalidRequest(
                "oracle vision needs at least one attached frame".to_string(),
            ));
        }
        let text = stamps
            .iter()
            .map(|&t| self.world.describe(t))
            .collect::<Vec<_>>()
            .join("\n");
        let usage = estimate_usage(messages, &text);
        Ok(BackendReply { text, usage })
    }
}

/// A thinking backend for single-pass baselines: it reads the option list
/// from the question and answers with the option whose attribute is
/// reported visible in the frame descriptions, or `UNKNOWN` when none (or
/// several) are.
pub struct OracleAnswerer;

fn parse_option_lines(text: &str) -> Vec<(char, String)> {
    let Some(pos) = text.rfind("Options:") else { return Vec::new() };
    let mut options = Vec::new();
    for line in text[pos..].lines().skip(1) {
        let mut chars = line.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(label), Some('.'), Some(' ')) if label.is_ascii_uppercase() => {
                options.push((label, line[3..].trim().to_string()));
            }
            _ => break,
        }
    }
    options
}

impl ChatBackend for OracleAnswerer {
    fn name(&self) -> String {
        "oracle-answerer".to_string()
    }

    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError> {
        let mut all_text = String::new();
        for m in messages.iter().filter(|m| m.role == Role::User) {
            all_text.push_str(&m.text());
            all_text.push('\n');
        }
        let options = parse_option_lines(&all_text);
        let hits: Vec<char> = options
            .iter()
            .filter(|(_, attr)| all_text.contains(&format!("visible: {attr}")))
            .map(|(label, _)| *label)
            .collect();
        let text = match hits.as_slice() {
            [label] => format!("Answer: ({label})"),
            _ => "Answer: UNKNOWN".to_string(),
        };
        let usage = estimate_usage(messages, &text);
        Ok(BackendReply { text, usage })
    }
}

#[derive(Default)]
struct PolicyState {
    duration: Option<f64>,
    hint: String,
    options: Vec<(char, String)>,
    overview_issued: bool,
    ladder: Option<Vec<Interval>>,
    cursor: usize,
    sighting: Option<(f64, char)>,
    sighted_on_final_batch: bool,
    focus_issued: bool,
}

/// A rule-based thinking backend that solves synthetic worlds the way the
/// agent is meant to: map the storyline with an overview, locate the scene
/// the question implicates, ladder skim windows across that scene until the
/// item is sighted, confirm with a focus clip, then answer. It reads only
/// the conversation, so it exercises the real prompt/observation formats.
pub struct SeekPolicy {
    config: ToolConfig,
    state: Mutex<PolicyState>,
}

/// Adjacent ladder windows overlap by this much, so a needle straddling a
/// boundary still has at least this much of itself inside one window.
const LADDER_OVERLAP: f64 = 3.0;
/// Target spacing between skim stamps while laddering: strictly finer than
/// the shortest needle (3 s), with slack for millisecond rounding.
const LADDER_DETECT_SPACING: f64 = 2.75;
/// Half-width of the focus clip used to confirm a sighting.
const CONFIRM_HALF_SPAN: f64 = 2.0;

impl SeekPolicy {
    pub fn new(config: ToolConfig) -> Self {
        SeekPolicy { config, state: Mutex::new(PolicyState::default()) }
    }

    fn absorb_setup(&self, st: &mut PolicyState, messages: &[Message]) {
        if st.duration.is_some() {
            return;
        }
        for m in messages.iter().filter(|m| m.role == Role::User) {
            let text = m.text();
            if let Some(rest) = text.split("Video duration: ").nth(1) {
                if let Some(token) = rest.split_whitespace().next() {
                    st.duration = token.parse().ok();
                }
            }
            if let Some(rest) = text.split("Question: ").nth(1) {
                let line = rest.lines().next().unwrap_or("");
                if let Some(mid) = line.split("where ").nth(1) {
                    if let Some(hint) = mid.split(", which").next() {
                        st.hint = hint.to_string();
                    }
                }
            }
            let options = parse_option_lines(&text);
            if !options.is_empty() {
                st.options = options;
            }
        }
    }

    /// Rescans every observation for a line reporting one of the option
    /// attributes as visible. First sighting wins.
    fn harvest_sightings(&self, st: &mut PolicyState, messages: &[Message]) {
        if st.sighting.is_some() {
            return;
        }
        for m in messages.iter().filter(|m| m.role == Role::User) {
            let text = m.text();
            for line in text.lines() {
                let Some((stamp, body)) = parse_description_line(line) else { continue };
                let Some(pos) = body.find("visible: ") else { continue };
                let attr = body[pos + "visible: ".len()..].trim_end_matches('.');
                if let Some(&(label, _)) = st.options.iter().find(|(_, t)| t == attr) {
                    st.sighting = Some((stamp, label));
                    return;
                }
            }
        }
    }

    /// The interval the question's scene must lie in, bounded by the
    /// overview stamps whose descriptions mention the hint (padded by one
    /// stamp spacing on each side, since the scene extends at most that far
    /// beyond its outermost matching stamp).
    fn estimate_extent(&self, st: &PolicyState, messages: &[Message], duration: f64) -> Interval {
        let whole = Interval::new(0.0, duration).expect("duration is positive");
        if !self.config.tool_mask.enabled(ToolKind::Overview) || st.hint.is_empty() {
            return whole;
        }
        let spacing = duration / self.config.overview_frames as f64;
        let mut lo: Option<f64> = None;
        let mut hi: Option<f64> = None;
        for m in messages.iter().filter(|m| m.role == Role::User) {
            let text = m.text();
            for line in text.lines() {
                let Some((stamp, body)) = parse_description_line(line) else { continue };
                if body.contains(st.hint.as_str()) {
                    lo = Some(lo.map_or(stamp, |v: f64| v.min(stamp)));
                    hi = Some(hi.map_or(stamp, |v: f64| v.max(stamp)));
                }
            }
        }
        match (lo, hi) {
            (Some(lo), Some(hi)) => {
                Interval::new((lo - spacing).max(0.0), (hi + spacing).min(duration))
                    .unwrap_or(whole)
            }
            _ => whole,
        }
    }

    /// Windows that jointly cover `extent`, overlapping neighbours by
    /// `LADDER_OVERLAP`. Skim windows are sized so their sampling grid is
    /// finer than the shortest needle; without skim, focus-length windows
    /// do the same at one frame per second.
    fn build_ladder(&self, extent: &Interval, duration: f64) -> Vec<Interval> {
        let span = extent.span();
        let width = if self.config.tool_mask.enabled(ToolKind::Skim) {
            (LADDER_DETECT_SPACING * f64::from(self.config.skim_frames))
                .max(self.config.skim_min_span)
        } else {
            self.config.focus_max_span
        };
        let step = (width - LADDER_OVERLAP).max(1.0);
        let count = (((span - width) / step).ceil().max(0.0) as usize) + 1;
        let mut windows = Vec::with_capacity(count);
        for i in 0..count {
            let start = (extent.start() + i as f64 * step).min(duration - 1.0).max(0.0);
            let end = (start + width).min(duration);
            if let Ok(iv) = Interval::new(start, end) {
                windows.push(iv);
            }
            if end >= extent.end() {
                break; // coverage reached, later windows add nothing
            }
        }
        windows
    }

    fn viewing_call(&self, interval: Interval) -> ToolCall {
        if self.config.tool_mask.enabled(ToolKind::Skim) {
            ToolCall::Skim { interval, query: Some("the distinctive item".to_string()) }
        } else {
            ToolCall::Focus { interval, query: "name the distinctive item".to_string() }
        }
    }

    fn answer_reply(&self, st: &PolicyState) -> String {
        let text = match st.sighting {
            Some((_, label)) => format!("({label})"),
            None => "UNKNOWN".to_string(),
        };
        format!(
            "No further viewing needed. {}",
            serialize_tool_call(&ToolCall::Answer { text })
        )
    }

    fn step(&self, st: &mut PolicyState, messages: &[Message]) -> String {
        self.absorb_setup(st, messages);
        self.harvest_sightings(st, messages);
        let Some(duration) = st.duration else {
            // No parsable task: answer rather than loop.
            return self.answer_reply(st);
        };
        let forced = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text().contains("final answer now"))
            .unwrap_or(false);
        if forced {
            return self.answer_reply(st);
        }

        if let Some((stamp, label)) = st.sighting {
            let confirm = self.config.tool_mask.enabled(ToolKind::Focus)
                && self.config.tool_mask.enabled(ToolKind::Skim)
                && !st.focus_issued
                && !st.sighted_on_final_batch;
            if confirm {
                st.focus_issued = true;
                let half = CONFIRM_HALF_SPAN.min(self.config.focus_max_span / 2.0);
                let start = (stamp - half).max(0.0);
                let end = (stamp + half).min(duration);
                let interval = Interval::new(start, end)
                    .unwrap_or_else(|_| Interval::new(0.0, duration).expect("positive duration"));
                let call = ToolCall::Focus {
                    interval,
                    query: format!("confirm that {} is visible", option_text(st, label)),
                };
                return format!(
                    "Sighted {} near {stamp:.1} s; confirming close up. {}",
                    option_text(st, label),
                    serialize_tool_call(&call)
                );
            }
            return self.answer_reply(st);
        }

        if self.config.tool_mask.enabled(ToolKind::Overview) && !st.overview_issued {
            st.overview_issued = true;
            return format!(
                "Mapping the storyline first. {}",
                serialize_tool_call(&ToolCall::Overview)
            );
        }

        if st.ladder.is_none() {
            let extent = self.estimate_extent(st, messages, duration);
            st.ladder = Some(self.build_ladder(&extent, duration));
            st.cursor = 0;
        }
        let ladder = st.ladder.as_ref().expect("ladder just built");
        if st.cursor < ladder.len() {
            let batch: Vec<Interval> = ladder
                [st.cursor..(st.cursor + self.config.max_calls_per_turn as usize).min(ladder.len())]
                .to_vec();
            st.cursor += batch.len();
            st.sighted_on_final_batch = st.cursor >= ladder.len();
            let tags: Vec<String> = batch
                .into_iter()
                .map(|iv| serialize_tool_call(&self.viewing_call(iv)))
                .collect();
            return format!("Scanning candidate windows. {}", tags.join(" "));
        }

        // Ladder exhausted without a sighting.
        self.answer_reply(st)
    }
}

fn option_text(st: &PolicyState, label: char) -> String {
    st.options
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, t)| t.clone())
        .unwrap_or_else(|| label.to_string())
}

/// Splits a ground-truth description line `t=42.0: ...` into stamp and body.
fn parse_description_line(line: &str) -> Option<(f64, &str)> {
    let rest = line.trim().strip_prefix("t=")?;
    let colon = rest.find(':')?;
    let stamp: f64 = rest[..colon].parse().ok()?;
    Some((stamp, &rest[colon + 1..]))
}

impl ChatBackend for SeekPolicy {
    fn name(&self) -> String {
        format!("seek-policy(alpha={})", self.config.alpha)
    }

    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError> {
        let mut st = self.state.lock().expect("policy state lock");
        let text = self.step(&mut st, messages);
        let usage = estimate_usage(messages, &text);
        Ok(BackendReply { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A tiny hand-built world used by the oracle tests: two scenes with no
    /// hints, one needle.
    fn hand_world() -> SyntheticWorld {
        SyntheticWorld {
            seed: 0,
            duration: 60.0,
            scenes: vec![
                Scene { label: "kitchen".into(), hint: String::new(), start: 0.0, end: 30.0 },
                Scene { label: "workshop".into(), hint: String::new(), start: 30.0, end: 60.0 },
            ],
            needles: vec![Needle {
                start: 40.0,
                end: 45.0,
                scene_index: 1,
                attribute: "a brass key".into(),
            }],
        }
    }

    #[test]
    fn describe_matches_hand_values() {
        let world = hand_world();
        assert_eq!(world.describe(10.0), "t=10.0: kitchen.");
        assert_eq!(world.describe(30.0), "t=30.0: workshop.");
        assert_eq!(world.describe(42.0), "t=42.0: workshop; visible: a brass key.");
        assert_eq!(world.describe(45.0), "t=45.0: workshop; visible: a brass key.");
        assert_eq!(world.describe(45.001), "t=45.0: workshop.");
    }

    #[test]
    fn describe_includes_the_hint_in_parentheses() {
        let mut world = hand_world();
        world.scenes[0].hint = "a kettle whistles on the stove".into();
        assert_eq!(world.describe(5.0), "t=5.0: kitchen (a kettle whistles on the stove).");
    }

    #[test]
    fn dense_solver_matches_hand_values() {
        let world = hand_world();
        // budget 6 over 60 s: stamps 5, 15, 25, 35, 45, 55 — 45 is inside.
        assert!(dense_oracle_solve(&world, 6));
        // budget 4: stamps 7.5, 22.5, 37.5, 52.5 — all outside [40, 45].
        assert!(!dense_oracle_solve(&world, 4));
        assert!(dense_oracle_solve(&world, 12));
    }

    #[test]
    fn dense_solver_agrees_with_exhaustive_scan() {
        for seed in 0..20u64 {
            let world = SyntheticWorld::generate(seed, 3600.0, 12, 1).unwrap();
            let needle = &world.needles[0];
            for budget in [1u32, 7, 64, 384, 999] {
                let scanned = (0..budget).any(|k| {
                    let t = (f64::from(k) + 0.5) * world.duration / f64::from(budget);
                    t >= needle.start && t <= needle.end
                });
                assert_eq!(dense_oracle_solve(&world, budget), scanned, "seed {seed} budget {budget}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = SyntheticWorld::generate(7, 3600.0, 12, 1).unwrap();
        let b = SyntheticWorld::generate(7, 3600.0, 12, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = SyntheticWorld::generate(8, 3600.0, 12, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_worlds_satisfy_layout_invariants() {
        for seed in 0..50u64 {
            let world = SyntheticWorld::generate(seed, 3600.0, 12, 2).unwrap();
            assert_eq!(world.scenes.len(), 12);
            assert_eq!(world.scenes[0].start, 0.0);
            assert_eq!(world.scenes.last().unwrap().end, 3600.0);
            for pair in world.scenes.windows(2) {
                assert_eq!(pair[0].end, pair[1].start, "scenes are contiguous");
            }
            for scene in &world.scenes {
                assert!(
                    scene.end - scene.start >= SCENE_MIN_SECONDS,
                    "seed {seed}: scene {} is {:.1} s",
                    scene.label,
                    scene.end - scene.start
                );
            }
            let labels: std::collections::HashSet<&str> =
                world.scenes.iter().map(|s| s.label.as_str()).collect();
            assert_eq!(labels.len(), 12, "labels are unique");
            for needle in &world.needles {
                let span = needle.end - needle.start;
                assert!((2.0..=10.0).contains(&span), "needle span {span}");
                let scene = &world.scenes[needle.scene_index];
                assert!(needle.start >= scene.start && needle.end <= scene.end);
                assert!(needle.start >= 0.05 * world.duration);
                assert!(needle.end <= 0.95 * world.duration);
            }
        }
    }

    #[test]
    fn questions_quote_the_hint_and_carry_a_correct_gold_label() {
        for seed in 0..50u64 {
            let world = SyntheticWorld::generate(seed, 3600.0, 12, 2).unwrap();
            for (i, needle) in world.needles.iter().enumerate() {
                let query = world.question(i);
                query.validate().unwrap();
                let hint = &world.scenes[needle.scene_index].hint;
                assert!(query.question.contains(hint.as_str()));
                let options = query.options.as_ref().unwrap();
                assert_eq!(options.len(), 4);
                let gold = query.gold.as_ref().unwrap();
                let gold_option = options
                    .iter()
                    .find(|o| o.label.to_string() == *gold)
                    .expect("gold label among options");
                assert_eq!(gold_option.text, needle.attribute);
                // Distractors never collide with any needle in the world.
                for option in options {
                    if option.label.to_string() != *gold {
                        assert!(world.needles.iter().all(|n| n.attribute != option.text));
                    }
                }
            }
        }
    }

    #[test]
    fn vocabulary_pools_do_not_leak_into_each_other() {
        // An attribute string must never occur inside a scene description
        // unless the needle is actually visible, so no attribute may be a
        // substring of any label/hint rendering.
        for attr in NEEDLE_ATTRIBUTES {
            for label in SCENE_LABELS {
                for hint in SCENE_HINTS {
                    let line = format!("{label} ({hint})");
                    assert!(!line.contains(attr), "{attr:?} leaks into {line:?}");
                }
            }
        }
        // Hints must identify their scene uniquely in question text.
        for (i, a) in SCENE_HINTS.iter().enumerate() {
            for (j, b) in SCENE_HINTS.iter().enumerate() {
                if i != j {
                    assert!(!a.contains(b));
                }
            }
        }
    }

    #[test]
    fn infeasible_worlds_are_rejected() {
        assert!(matches!(
            SyntheticWorld::generate(0, 500.0, 12, 1),
            Err(WorldError::DurationTooShort { .. })
        ));
        assert!(matches!(
            SyntheticWorld::generate(0, 3600.0, 12, 13),
            Err(WorldError::TooManyNeedles { .. })
        ));
        assert!(matches!(SyntheticWorld::generate(0, 3600.0, 12, 0), Err(WorldError::EmptyWorld)));
        assert!(matches!(
            SyntheticWorld::generate(0, 90_000.0, 30, 1),
            Err(WorldError::VocabularyExhausted { .. })
        ));
    }

    #[test]
    fn oracle_vision_describes_attached_frames() {
        let world = hand_world();
        let vision = OracleVision::new(world);
        let frames = vec![
            crate::media::Frame { timestamp: 10.0, bytes: Vec::new(), media_type: "image/jpeg".into() },
            crate::media::Frame { timestamp: 42.0, bytes: Vec::new(), media_type: "image/jpeg".into() },
        ];
        let reply = vision
            .complete(&[Message::user_with_frames("describe", frames)])
            .unwrap();
        assert_eq!(reply.text, "t=10.0: kitchen.\nt=42.0: workshop; visible: a brass key.");
        assert!(reply.usage.estimated);
        let err = vision.complete(&[Message::user("no frames")]).unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)));
    }

    #[test]
    fn oracle_answerer_picks_the_reported_option() {
        let answerer = OracleAnswerer;
        let messages = vec![
            Message::user(
                "Question: which?\nOptions:\nA. a red umbrella\nB. a brass key\nC. a folded map\nD. a glass marble",
            ),
            Message::user("t=42.0: workshop; visible: a brass key."),
        ];
        assert_eq!(answerer.complete(&messages).unwrap().text, "Answer: (B)");
        // No sighting at all: UNKNOWN.
        let messages = vec![
            Message::user("Question: which?\nOptions:\nA. a red umbrella\nB. a brass key"),
            Message::user("t=42.0: workshop."),
        ];
        assert_eq!(answerer.complete(&messages).unwrap().text, "Answer: UNKNOWN");
    }

    #[test]
    fn policy_opens_with_an_overview_and_parses_the_task() {
        let config = ToolConfig::for_alpha(4).unwrap();
        let policy = SeekPolicy::new(config);
        let initial = "Video duration: 3600.0 seconds.\nSubtitles: (none)\nQuestion: During the segment where a cat knocks over a vase, which distinctive item appears?\nOptions:\nA. a red umbrella\nB. a brass key\nC. a folded map\nD. a glass marble";
        let reply = policy.complete(&[Message::user(initial)]).unwrap();
        assert_eq!(reply.text, "Mapping the storyline first. <tool name=\"overview\"/>");
        let st = policy.state.lock().unwrap();
        assert_eq!(st.duration, Some(3600.0));
        assert_eq!(st.hint, "a cat knocks over a vase");
        assert_eq!(st.options.len(), 4);
    }

    #[test]
    fn policy_ladders_the_implicated_scene_after_the_overview() {
        let config = ToolConfig::for_alpha(4).unwrap();
        let policy = SeekPolicy::new(config.clone());
        let initial = "Video duration: 3600.0 seconds.\nSubtitles: (none)\nQuestion: During the segment where a cat knocks over a vase, which distinctive item appears?\nOptions:\nA. a red umbrella\nB. a brass key";
        let mut messages = vec![Message::user(initial)];
        let first = policy.complete(&messages).unwrap();
        messages.push(Message::assistant(first.text));
        // Overview observation placing the hint around 900-1000 s.
        messages.push(Message::user(
            "Observation 1 [overview]:\nt=900.0: library (a cat knocks over a vase).\nt=956.2: library (a cat knocks over a vase).\nt=1012.5: garage (someone plants tulip bulbs).",
        ));
        let second = policy.complete(&messages).unwrap();
        let plan = crate::protocol::parse_tool_plan(&second.text, &config).unwrap();
        assert_eq!(plan.calls.len(), 4);
        for call in &plan.calls {
            match call {
                ToolCall::Skim { interval, .. } => {
                    let spacing = 3600.0 / 64.0;
                    assert!(interval.start() >= 900.0 - spacing - 1e-9);
                    assert!(interval.end() <= 956.2 + spacing + 1e-9);
                }
                other => panic!("expected skim calls, got {other:?}"),
            }
        }
    }

    #[test]
    fn policy_answers_unknown_when_nothing_is_sighted() {
        let config = ToolConfig::for_alpha(4).unwrap();
        let policy = SeekPolicy::new(config);
        {
            let mut st = policy.state.lock().unwrap();
            st.duration = Some(3600.0);
            st.overview_issued = true;
            st.ladder = Some(Vec::new());
        }
        let reply = policy.complete(&[Message::user("Turn 9 of 20.")]).unwrap();
        assert!(reply.text.contains("<tool name=\"answer\" text=\"UNKNOWN\"/>"));
    }

    #[test]
    fn skim_ladder_windows_cover_the_extent_densely() {
        let config = ToolConfig::for_alpha(4).unwrap();
        let policy = SeekPolicy::new(config.clone());
        let extent = Interval::new(843.75, 1068.75).unwrap();
        let ladder = policy.build_ladder(&extent, 3600.0);
        assert_eq!(ladder.len(), 6); // span 225, 44 s windows, 41 s steps
        assert!((ladder[0].start() - extent.start()).abs() < 1e-9);
        assert!(ladder.last().unwrap().end() >= extent.end());
        for pair in ladder.windows(2) {
            // Neighbouring windows overlap, so a needle of at least
            // LADDER_OVERLAP seconds cannot hide across a boundary.
            assert!(pair[1].start() <= pair[0].end() - LADDER_OVERLAP + 1e-9);
        }
        // And each window's sampling grid is finer than the shortest needle.
        for window in &ladder {
            let spacing = window.span() / f64::from(config.skim_frames);
            assert!(spacing <= LADDER_DETECT_SPACING + 1e-9, "stamp spacing {spacing:.2}");
        }
    }

    #[test]
    fn focus_ladder_is_used_when_skim_is_disabled() {
        let mut config = ToolConfig::for_alpha(4).unwrap();
        config.tool_mask = crate::model::ToolMask::without(ToolKind::Skim);
        let policy = SeekPolicy::new(config);
        let extent = Interval::new(800.0, 1100.0).unwrap();
        let ladder = policy.build_ladder(&extent, 3600.0);
        // Focus windows are capped at 16 s, so covering 300 s takes many.
        assert!(ladder.len() >= 20, "{} windows", ladder.len());
        for window in &ladder {
            assert!(window.span() <= 16.0 + 1e-9);
        }
        assert!(ladder.last().unwrap().end() >= 1100.0 - 1e-9);
    }

    proptest! {
        // The extent estimate plus ladder construction never loses coverage:
        // every point of the extent lies in some window.
        #[test]
        fn ladder_covers_every_point(start in 0.0f64..3000.0, span in 50.0f64..700.0) {
            let config = ToolConfig::for_alpha(4).unwrap();
            let policy = SeekPolicy::new(config);
            let extent = Interval::new(start, (start + span).min(3600.0)).unwrap();
            let ladder = policy.build_ladder(&extent, 3600.0);
            for i in 0..=200 {
                let t = extent.start() + extent.span() * f64::from(i) / 200.0;
                prop_assert!(
                    ladder.iter().any(|w| w.start() - 1e-6 <= t && t <= w.end() + 1e-6),
                    "point {t} uncovered (extent {extent:?})"
                );
            }
        }
    }

    proptest! {
        // Frame descriptions are consistent with the layout: the label of
        // the containing scene appears, and the attribute appears exactly
        // when the stamp is inside the needle.
        #[test]
        fn descriptions_are_consistent_with_layout(seed in 0u64..30, frac in 0.0f64..1.0) {
            let world = SyntheticWorld::generate(seed, 3600.0, 12, 1).unwrap();
            let t = frac * world.duration;
            let line = world.describe(t);
            let scene = world.scene_at(t);
            prop_assert!(line.contains(&scene.label));
            let needle = &world.needles[0];
            let inside = t >= needle.start && t <= needle.end;
            prop_assert_eq!(line.contains(&needle.attribute), inside);
        }
    }
}
