//! Timestamp sampling: pure interval math shared by every view tool.
//!
//! All sampling is deterministic. Uniform sampling uses the midpoint rule
//! `t_i = (i + 0.5) * span / n`, which never lands on frame zero or the end
//! of stream; dense sampling walks a fixed FPS grid from the interval start.

use serde::{Deserialize, Serialize};

use crate::model::ToolConfig;

/// Errors from sampling and interval normalization.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid interval [{start}, {end}): need finite 0 <= start < end")]
    InvalidInterval { start: f64, end: f64 },
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("sample count must be >= 1")]
    ZeroCount,
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("interval [{start}, {end}) lies outside the video (duration {duration})")]
    OutsideVideo { start: f64, end: f64, duration: f64 },
}

/// Comparisons against derived spans tolerate this much float noise; it is
/// far below the millisecond resolution timestamps are stored at.
const SPAN_SLACK: f64 = 1e-9;

#[derive(Deserialize)]
struct RawInterval {
    start: f64,
    end: f64,
}

/// A half-open time interval in seconds with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct Interval {
    start: f64,
    end: f64,
}

impl TryFrom<RawInterval> for Interval {
    type Error = SamplingError;

    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        Interval::new(raw.start, raw.end)
    }
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, SamplingError> {
        if !start.is_finite() || !end.is_finite() || start < 0.0 || start >= end {
            return Err(SamplingError::InvalidInterval { start, end });
        }
        Ok(Interval { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn span(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}-{:.1}", self.start, self.end)
    }
}

/// Rounds a timestamp to millisecond resolution, the storage granularity.
pub fn round_to_millis(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// `n` timestamps uniformly covering the whole video by the midpoint rule.
pub fn uniform_timestamps(duration: f64, n: usize) -> Result<Vec<f64>, SamplingError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(SamplingError::InvalidDuration(duration));
    }
    if n == 0 {
        return Err(SamplingError::ZeroCount);
    }
    Ok((0..n).map(|i| (i as f64 + 0.5) * duration / n as f64).collect())
}

/// `n` midpoint-rule timestamps inside an interval.
pub fn uniform_timestamps_in(interval: &Interval, n: usize) -> Result<Vec<f64>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::ZeroCount);
    }
    let span = interval.span();
    Ok((0..n)
        .map(|i| interval.start + (i as f64 + 0.5) * span / n as f64)
        .collect())
}

/// Dense timestamps on an FPS grid: `floor(span * fps) + 1` stamps starting
/// at the interval start, so both endpoints of a whole-second span are hit.
pub fn fps_timestamps(interval: &Interval, fps: f64) -> Result<Vec<f64>, SamplingError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(SamplingError::InvalidFps(fps));
    }
    let count = (interval.span() * fps).floor() as usize + 1;
    Ok((0..count).map(|i| interval.start + i as f64 / fps).collect())
}

/// Clamps a requested interval to the video, failing when nothing is left.
fn clamp_to_video(interval: &Interval, duration: f64) -> Result<Interval, SamplingError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(SamplingError::InvalidDuration(duration));
    }
    let start = interval.start.max(0.0);
    let end = interval.end.min(duration);
    if start >= end {
        return Err(SamplingError::OutsideVideo {
            start: interval.start,
            end: interval.end,
            duration,
        });
    }
    Ok(Interval { start, end })
}

/// Widens a skim request to the configured minimum span, symmetrically about
/// its midpoint, shifting back inside the video if the expansion overruns an
/// edge. A video shorter than the minimum span falls back to the whole
/// video. Applying this twice gives the same interval as applying it once.
pub fn normalize_skim(
    interval: &Interval,
    config: &ToolConfig,
    duration: f64,
) -> Result<Interval, SamplingError> {
    let clamped = clamp_to_video(interval, duration)?;
    let min_span = config.skim_min_span;
    if duration < min_span {
        return Ok(Interval { start: 0.0, end: duration });
    }
    if clamped.span() + SPAN_SLACK >= min_span {
        return Ok(clamped);
    }
    let mid = (clamped.start + clamped.end) / 2.0;
    let mut start = mid - min_span / 2.0;
    let mut end = mid + min_span / 2.0;
    if start < 0.0 {
        start = 0.0;
        end = min_span;
    } else if end > duration {
        end = duration;
        start = duration - min_span;
    }
    Ok(Interval { start, end })
}

/// Clamps a focus request to the video and truncates it to the configured
/// maximum span, keeping the start. Idempotent like skim normalization.
pub fn normalize_focus(
    interval: &Interval,
    config: &ToolConfig,
    duration: f64,
) -> Result<Interval, SamplingError> {
    let clamped = clamp_to_video(interval, duration)?;
    if clamped.span() > config.focus_max_span + SPAN_SLACK {
        return Ok(Interval { start: clamped.start, end: clamped.start + config.focus_max_span });
    }
    Ok(clamped)
}
