//! Shared data model: frame features, attention scores, segments and
//! merge provenance.
//!
//! Storage is frame-major `(frame, token, dim)` so that a frame is one
//! contiguous slice. Values are stored as `f32`; every reduction in the
//! crate accumulates in `f64`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `frames x tokens_per_frame x dim` feature block.
#[derive(Clone, PartialEq)]
pub struct FeatureTensor {
    frames: usize,
    tokens_per_frame: usize,
    dim: usize,
    data: Vec<f32>,
}

impl fmt::Debug for FeatureTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureTensor")
            .field("frames", &self.frames)
            .field("tokens_per_frame", &self.tokens_per_frame)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

/// Checks the raw parts of a feature tensor, returning the first violation.
pub fn validate(frames: usize, tokens_per_frame: usize, dim: usize, data: &[f32]) -> Result<()> {
    if frames == 0 || tokens_per_frame == 0 || dim == 0 {
        return Err(Error::shape(
            "all dimensions >= 1",
            format!("({frames}, {tokens_per_frame}, {dim})"),
        ));
    }
    let expected = frames
        .checked_mul(tokens_per_frame)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::shape("addressable size", "overflow"))?;
    if data.len() != expected {
        return Err(Error::shape(
            format!("{expected} values ({frames}x{tokens_per_frame}x{dim})"),
            format!("{} values", data.len()),
        ));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    Ok(())
}

impl FeatureTensor {
    pub fn new(frames: usize, tokens_per_frame: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        validate(frames, tokens_per_frame, dim, &data)?;
        Ok(Self {
            frames,
            tokens_per_frame,
            dim,
            data,
        })
    }

    /// Builds a tensor from per-frame slices, all of which must be `tokens_per_frame * dim` long.
    pub fn from_frames<'a, I>(tokens_per_frame: usize, dim: usize, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut data = Vec::new();
        let mut count = 0;
        for frame in frames {
            if frame.len() != tokens_per_frame * dim {
                return Err(Error::shape(
                    format!("frame of {} values", tokens_per_frame * dim),
                    format!("{} values", frame.len()),
                ));
            }
            data.extend_from_slice(frame);
            count += 1;
        }
        Self::new(count, tokens_per_frame, dim, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame_len(&self) -> usize {
        self.tokens_per_frame * self.dim
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        let len = self.frame_len();
        &self.data[index * len..(index + 1) * len]
    }

    pub fn token(&self, frame: usize, token: usize) -> &[f32] {
        let start = (frame * self.tokens_per_frame + token) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn iter_frames(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.frame_len())
    }

    /// Re-checks the tensor invariants.
    pub fn validate(&self) -> Result<()> {
        validate(self.frames, self.tokens_per_frame, self.dim, &self.data)
    }
}

/// Per-token importance scores, `frames x tokens_per_frame`, all finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    frames: usize,
    tokens_per_frame: usize,
    scores: Vec<f32>,
}

impl AttentionScores {
    pub fn new(frames: usize, tokens_per_frame: usize, scores: Vec<f32>) -> Result<Self> {
        validate(frames, tokens_per_frame, 1, &scores)?;
        if let Some(index) = scores.iter().position(|v| *v < 0.0) {
            return Err(Error::NegativeScore { index });
        }
        Ok(Self {
            frames,
            tokens_per_frame,
            scores,
        })
    }

    pub fn from_rows<'a, I>(tokens_per_frame: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut scores = Vec::new();
        let mut frames = 0;
        for row in rows {
            if row.len() != tokens_per_frame {
                return Err(Error::shape(
                    format!("row of {tokens_per_frame} scores"),
                    format!("{} scores", row.len()),
                ));
            }
            scores.extend_from_slice(row);
            frames += 1;
        }
        Self::new(frames, tokens_per_frame, scores)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        let l = self.tokens_per_frame;
        &self.scores[frame * l..(frame + 1) * l]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.scores.chunks_exact(self.tokens_per_frame)
    }

    /// Ensures these scores annotate `features` (same frame and token counts).
    pub fn check_matches(&self, features: &FeatureTensor) -> Result<()> {
        if self.frames != features.frames() || self.tokens_per_frame != features.tokens_per_frame() {
            return Err(Error::shape(
                format!("attention ({}, {})", features.frames(), features.tokens_per_frame()),
                format!("({}, {})", self.frames, self.tokens_per_frame),
            ));
        }
        Ok(())
    }

    /// Views the scores as a `frames x tokens x 1` tensor so they can follow frame merges.
    pub(crate) fn as_tensor(&self) -> FeatureTensor {
        FeatureTensor {
            frames: self.frames,
            tokens_per_frame: self.tokens_per_frame,
            dim: 1,
            data: self.scores.clone(),
        }
    }
}

/// Contiguous half-open frame intervals covering `[0, frames)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[usize; 2]>", into = "Vec<[usize; 2]>")]
pub struct SegmentList {
    segments: Vec<Range<usize>>,
}

impl SegmentList {
    pub fn new(segments: Vec<Range<usize>>) -> Result<Self> {
        let mut expected_start = 0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.start != expected_start {
                return Err(Error::InvalidSegments(format!(
                    "segment {i} starts at {} but previous ended at {expected_start}",
                    seg.start
                )));
            }
            if seg.end <= seg.start {
                return Err(Error::InvalidSegments(format!("segment {i} is empty")));
            }
            expected_start = seg.end;
        }
        if segments.is_empty() {
            return Err(Error::InvalidSegments("no segments".into()));
        }
        Ok(Self { segments })
    }

    /// Builds the list from segment start frames; `starts` must begin with 0 and increase strictly.
    pub fn from_starts(starts: &[usize], frames: usize) -> Result<Self> {
        let mut segments = Vec::with_capacity(starts.len());
        for (i, &start) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(frames);
            segments.push(start..end);
        }
        let list = Self::new(segments)?;
        if list.frames() != frames {
            return Err(Error::InvalidSegments(format!(
                "segments cover {} frames, expected {frames}",
                list.frames()
            )));
        }
        Ok(list)
    }

    pub fn single(frames: usize) -> Result<Self> {
        Self::new(vec![0..frames])
    }

    /// Number of frames covered.
    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Range<usize>> + '_ {
        self.segments.iter()
    }

    pub fn as_slice(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }
}

impl TryFrom<Vec<[usize; 2]>> for SegmentList {
    type Error = Error;

    fn try_from(value: Vec<[usize; 2]>) -> Result<Self> {
        Self::new(value.into_iter().map(|[a, b]| a..b).collect())
    }
}

impl From<SegmentList> for Vec<[usize; 2]> {
    fn from(value: SegmentList) -> Self {
        value.segments.into_iter().map(|r| [r.start, r.end]).collect()
    }
}

/// One merge pass of the Stage-I schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergePassSpec {
    /// Encoder layer after which the pass runs; used for FLOPs accounting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_seg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_merge: Option<f64>,
}

impl MergePassSpec {
    pub fn at_layer(layer: usize) -> Self {
        Self {
            layer: Some(layer),
            ..Self::default()
        }
    }
}

/// Thresholds resolved for one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassParams {
    pub alpha: f64,
    pub tau_seg: f64,
    pub tau_merge: f64,
    pub weight_floor: f64,
}

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-6;

/// All compression hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub alpha: f64,
    pub tau_seg: f64,
    pub tau_merge: f64,
    pub retain_ratio: f64,
    /// Frame count before Stage I; `None` takes it from the input features.
    pub initial_frames: Option<usize>,
    pub merge_passes: Vec<MergePassSpec>,
    pub weight_floor: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            tau_seg: 0.8,
            tau_merge: 0.8,
            retain_ratio: 0.25,
            initial_frames: None,
            merge_passes: [6, 14, 20].into_iter().map(MergePassSpec::at_layer).collect(),
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        }
    }
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::InvalidConfig(format!("{name} must lie in [-1, 1], got {v}")));
    }
    Ok(())
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.retain_ratio > 0.0 && self.retain_ratio <= 1.0) {
            return Err(Error::InvalidRatio(self.retain_ratio));
        }
        check_threshold("tau_seg", self.tau_seg)?;
        check_threshold("tau_merge", self.tau_merge)?;
        if self.initial_frames == Some(0) {
            return Err(Error::InvalidConfig("initial_frames must be >= 1".into()));
        }
        if self.merge_passes.is_empty() {
            return Err(Error::InvalidConfig("merge_passes must not be empty".into()));
        }
        for (i, pass) in self.merge_passes.iter().enumerate() {
            if let Some(t) = pass.tau_seg {
                check_threshold(&format!("merge_passes[{i}].tau_seg"), t)?;
            }
            if let Some(t) = pass.tau_merge {
                check_threshold(&format!("merge_passes[{i}].tau_merge"), t)?;
            }
        }
        let layers: Vec<usize> = self.merge_passes.iter().filter_map(|p| p.layer).collect();
        if layers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "merge pass layers must be strictly increasing".into(),
            ));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_floor must be a small positive number, got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }

    pub fn pass_params(&self, pass: &MergePassSpec) -> PassParams {
        PassParams {
            alpha: self.alpha,
            tau_seg: pass.tau_seg.unwrap_or(self.tau_seg),
            tau_merge: pass.tau_merge.unwrap_or(self.tau_merge),
            weight_floor: self.weight_floor,
        }
    }
}

/// For each output frame, the original frames it aggregates and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProvenance {
    frames: Vec<Vec<(usize, f64)>>,
}

impl FrameProvenance {
    pub fn identity(frames: usize) -> Self {
        Self {
            frames: (0..frames).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub(crate) fn from_entries(frames: Vec<Vec<(usize, f64)>>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sources(&self, output_frame: usize) -> &[(usize, f64)] {
        &self.frames[output_frame]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[(usize, f64)]> + '_ {
        self.frames.iter().map(Vec::as_slice)
    }

    /// Number of original frames referenced.
    pub fn original_frames(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Checks that sources partition `{0..originals}` and weights sum to one.
    pub fn validate(&self, originals: usize) -> Result<()> {
        let mut seen = vec![false; originals];
        for (i, sources) in self.frames.iter().enumerate() {
            let mut total = 0.0;
            for &(src, w) in sources {
                if src >= originals || seen[src] {
                    return Err(Error::InvalidSegments(format!(
                        "provenance of frame {i} repeats or exceeds original frame {src}"
                    )));
                }
                seen[src] = true;
                if !(w > 0.0) {
                    return Err(Error::InvalidSegments(format!(
                        "non-positive weight in frame {i}"
                    )));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidSegments(format!(
                    "weights of frame {i} sum to {total}"
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSegments(format!("original frame {missing} unaccounted")));
        }
        Ok(())
    }
}
