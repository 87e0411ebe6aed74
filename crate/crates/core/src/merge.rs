//! Stage I: streaming frame segmentation and weighted middle-frame merging.
//!
//! A pass computes the similarity of every consecutive frame pair,
//! splits the video into segments where the EMA-smoothed similarity
//! drops below `tau_seg`, and inside each segment greedily merges
//! adjacent middle frames whose similarity beats both `tau_merge` and
//! the following pair. Segment heads and tails are never merged.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{AttentionScores, FeatureTensor, FrameProvenance, PassParams, SegmentList};
use crate::Execution;

const NORM_EPS: f64 = 1e-12;

/// Mean cosine similarity of tokens at matching positions of two frames.
///
/// Both slices hold `L x dim` values. A token pair where either vector
/// has norm below `1e-12` contributes 0.
pub fn frame_similarity(a: &[f32], b: &[f32], dim: usize) -> Result<f64> {
    if dim == 0 || a.len() != b.len() || a.len() % dim != 0 || a.is_empty() {
        return Err(Error::shape(
            format!("two frames of equal length divisible by {dim}"),
            format!("{} and {} values", a.len(), b.len()),
        ));
    }
    let tokens = a.len() / dim;
    let mut total = 0.0f64;
    for (ta, tb) in a.chunks_exact(dim).zip(b.chunks_exact(dim)) {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in ta.iter().zip(tb) {
            let (x, y) = (f64::from(x), f64::from(y));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (na, nb) = (na.sqrt(), nb.sqrt());
        if na >= NORM_EPS && nb >= NORM_EPS {
            total += (dot / (na * nb)).clamp(-1.0, 1.0);
        }
    }
    Ok(total / tokens as f64)
}

/// `pair[j] = frame_similarity(F_j, F_{j+1})` for `j in 0..N-1`.
pub fn pair_similarities(features: &FeatureTensor, exec: Execution) -> Vec<f64> {
    let n = features.frames();
    let dim = features.dim();
    let pair = |j: usize| {
        frame_similarity(features.frame(j), features.frame(j + 1), dim)
            .expect("frames of one tensor share a shape")
    };
    match exec {
        Execution::Sequential => (0..n.saturating_sub(1)).map(pair).collect(),
        Execution::Concurrent => (0..n.saturating_sub(1)).into_par_iter().map(pair).collect(),
    }
}

/// Streaming EMA boundary detector.
///
/// The first similarity observed in a segment seeds the average; after a
/// break the state is cleared so the next observation seeds it again.
#[derive(Debug, Clone)]
pub struct EmaSegmenter {
    alpha: f64,
    tau: f64,
    smoothed: Option<f64>,
}

impl EmaSegmenter {
    pub fn new(alpha: f64, tau: f64) -> Self {
        Self {
            alpha,
            tau,
            smoothed: None,
        }
    }

    /// Feeds the next similarity; returns the smoothed value and whether it breaks the segment.
    pub fn observe(&mut self, s: f64) -> (f64, bool) {
        let ema = match self.smoothed {
            None => s,
            Some(prev) => self.alpha * s + (1.0 - self.alpha) * prev,
        };
        if ema < self.tau {
            self.smoothed = None;
            (ema, true)
        } else {
            self.smoothed = Some(ema);
            (ema, false)
        }
    }
}

/// Smoothed similarities and segment starts for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTrace {
    pub similarities: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Frame indices where segments begin; always starts with 0.
    pub starts: Vec<usize>,
}

/// Segments a video given its consecutive-pair similarities (`N - 1` values).
pub fn segment_from_similarities(similarities: &[f64], alpha: f64, tau_seg: f64) -> SegmentTrace {
    let mut seg = EmaSegmenter::new(alpha, tau_seg);
    let mut smoothed = Vec::with_capacity(similarities.len());
    let mut starts = vec![0];
    for (j, &s) in similarities.iter().enumerate() {
        let (ema, brk) = seg.observe(s);
        smoothed.push(ema);
        if brk {
            starts.push(j + 1);
        }
    }
    SegmentTrace {
        similarities: similarities.to_vec(),
        smoothed,
        starts,
    }
}

pub fn stream_segment(features: &FeatureTensor, alpha: f64, tau_seg: f64) -> SegmentList {
    let sims = pair_similarities(features, Execution::Sequential);
    let trace = segment_from_similarities(&sims, alpha, tau_seg);
    SegmentList::from_starts(&trace.starts, features.frames()).expect("starts are increasing from 0")
}

/// One output frame of a segment scan, indices relative to the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MergeStep {
    Keep(usize),
    Merge {
        first: usize,
        first_weight: f64,
        second_weight: f64,
    },
}

/// Scans one segment's middle frames.
///
/// `sims[j]` is the similarity of segment frames `j` and `j + 1`, so a
/// segment of `k + 1` frames has `k` values.
pub fn plan_segment(sims: &[f64], tau_merge: f64, weight_floor: f64) -> Vec<MergeStep> {
    let k = sims.len();
    let mut steps = vec![MergeStep::Keep(0)];
    if k == 0 {
        return steps;
    }
    let mut i = 1;
    while i < k {
        // (i, i + 1) is a pair of middle frames only while i + 1 < k.
        if i + 1 < k {
            let (s_i, s_next) = (sims[i], sims[i + 1]);
            if s_i > tau_merge && s_i > s_next {
                steps.push(MergeStep::Merge {
                    first: i,
                    first_weight: s_i.max(weight_floor),
                    second_weight: s_next.max(weight_floor),
                });
                i += 2;
                continue;
            }
        }
        steps.push(MergeStep::Keep(i));
        i += 1;
    }
    steps.push(MergeStep::Keep(k));
    steps
}

/// Convex combination of two frames, computed in f64.
pub fn weighted_merge(a: &[f32], b: &[f32], wa: f64, wb: f64, out: &mut Vec<f32>) {
    let total = wa + wb;
    out.extend(a.iter().zip(b).map(|(&x, &y)| {
        ((wa * f64::from(x) + wb * f64::from(y)) / total) as f32
    }));
}

fn apply_steps(
    steps: &[MergeStep],
    offset: usize,
    tensor: &FeatureTensor,
    out: &mut Vec<f32>,
) {
    for step in steps {
        match *step {
            MergeStep::Keep(i) => out.extend_from_slice(tensor.frame(offset + i)),
            MergeStep::Merge {
                first,
                first_weight,
                second_weight,
            } => weighted_merge(
                tensor.frame(offset + first),
                tensor.frame(offset + first + 1),
                first_weight,
                second_weight,
                out,
            ),
        }
    }
}

fn compose_provenance(
    steps: &[MergeStep],
    offset: usize,
    prior: &FrameProvenance,
) -> Vec<Vec<(usize, f64)>> {
    steps
        .iter()
        .map(|step| match *step {
            MergeStep::Keep(i) => prior.sources(offset + i).to_vec(),
            MergeStep::Merge {
                first,
                first_weight,
                second_weight,
            } => {
                let total = first_weight + second_weight;
                let (wa, wb) = (first_weight / total, second_weight / total);
                prior
                    .sources(offset + first)
                    .iter()
                    .map(|&(src, w)| (src, w * wa))
                    .chain(prior.sources(offset + first + 1).iter().map(|&(src, w)| (src, w * wb)))
                    .collect()
            }
        })
        .collect()
}

/// Merges the middle frames of a single segment.
///
/// Returns the merged segment and, per output frame, the segment-relative
/// source frames with their normalized weights.
pub fn merge_segment_middle(
    segment: &FeatureTensor,
    tau_merge: f64,
    weight_floor: f64,
) -> (FeatureTensor, Vec<Vec<(usize, f64)>>) {
    let sims = pair_similarities(segment, Execution::Sequential);
    let steps = plan_segment(&sims, tau_merge, weight_floor);
    let mut data = Vec::with_capacity(steps.len() * segment.frame_len());
    apply_steps(&steps, 0, segment, &mut data);
    let provenance = compose_provenance(&steps, 0, &FrameProvenance::identity(segment.frames()));
    let merged = FeatureTensor::new(steps.len(), segment.tokens_per_frame(), segment.dim(), data)
        .expect("merged frames keep the input shape");
    (merged, provenance)
}

/// Inputs to one Stage-I pass.
#[derive(Debug, Clone, Copy)]
pub struct PassInput<'a> {
    pub features: &'a FeatureTensor,
    /// Scores that follow the same merges as the features.
    pub attention: Option<&'a AttentionScores>,
    /// Provenance of `features` relative to the original video.
    pub prior: Option<&'a FrameProvenance>,
    /// Precomputed segments; when absent the pass segments by itself.
    pub segments: Option<&'a SegmentList>,
}

impl<'a> PassInput<'a> {
    pub fn new(features: &'a FeatureTensor) -> Self {
        Self {
            features,
            attention: None,
            prior: None,
            segments: None,
        }
    }

    pub fn with_attention(mut self, attention: &'a AttentionScores) -> Self {
        self.attention = Some(attention);
        self
    }

    pub fn with_prior(mut self, prior: &'a FrameProvenance) -> Self {
        self.prior = Some(prior);
        self
    }

    pub fn with_segments(mut self, segments: &'a SegmentList) -> Self {
        self.segments = Some(segments);
        self
    }
}

#[derive(Debug, Clone)]
pub struct MergePassResult {
    pub features: FeatureTensor,
    pub attention: Option<AttentionScores>,
    /// Segments over the output frames.
    pub segments: SegmentList,
    /// Segments over the input frames.
    pub input_segments: SegmentList,
    pub provenance: FrameProvenance,
    pub pair_similarities: Vec<f64>,
    /// EMA-smoothed similarities (empty when segments were supplied).
    pub smoothed_similarities: Vec<f64>,
}

struct SegmentOutput {
    features: Vec<f32>,
    attention: Vec<f32>,
    provenance: Vec<Vec<(usize, f64)>>,
}

pub fn merge_pass(input: PassInput<'_>, params: &PassParams, exec: Execution) -> Result<MergePassResult> {
    let features = input.features;
    let n = features.frames();
    if let Some(att) = input.attention {
        att.check_matches(features)?;
    }
    let identity;
    let prior = match input.prior {
        Some(p) => {
            if p.len() != n {
                return Err(Error::shape(
                    format!("provenance for {n} frames"),
                    format!("{} frames", p.len()),
                ));
            }
            p
        }
        None => {
            identity = FrameProvenance::identity(n);
            &identity
        }
    };

    let sims = pair_similarities(features, exec);
    let (input_segments, smoothed) = match input.segments {
        Some(s) => {
            if s.frames() != n {
                return Err(Error::InvalidSegments(format!(
                    "segments cover {} frames, features have {n}",
                    s.frames()
                )));
            }
            (s.clone(), Vec::new())
        }
        None => {
            let trace = segment_from_similarities(&sims, params.alpha, params.tau_seg);
            (SegmentList::from_starts(&trace.starts, n)?, trace.smoothed)
        }
    };

    let att_tensor = input.attention.map(AttentionScores::as_tensor);
    let run_segment = |range: &std::ops::Range<usize>| {
        let seg_sims = &sims[range.start..range.end - 1];
        let steps = plan_segment(seg_sims, params.tau_merge, params.weight_floor);
        let mut out = SegmentOutput {
            features: Vec::with_capacity(steps.len() * features.frame_len()),
            attention: Vec::new(),
            provenance: compose_provenance(&steps, range.start, prior),
        };
        apply_steps(&steps, range.start, features, &mut out.features);
        if let Some(att) = &att_tensor {
            apply_steps(&steps, range.start, att, &mut out.attention);
        }
        out
    };
    let outputs: Vec<SegmentOutput> = match exec {
        Execution::Sequential => input_segments.iter().map(run_segment).collect(),
        Execution::Concurrent => input_segments.as_slice().par_iter().map(run_segment).collect(),
    };

    let mut data = Vec::new();
    let mut att_data = Vec::new();
    let mut provenance = Vec::new();
    let mut starts = Vec::with_capacity(outputs.len());
    for out in outputs {
        starts.push(provenance.len());
        data.extend(out.features);
        att_data.extend(out.attention);
        provenance.extend(out.provenance);
    }
    let n_out = provenance.len();
    let merged = FeatureTensor::new(n_out, features.tokens_per_frame(), features.dim(), data)?;
    let attention = match input.attention {
        Some(_) => Some(AttentionScores::new(n_out, features.tokens_per_frame(), att_data)?),
        None => None,
    };
    Ok(MergePassResult {
        features: merged,
        attention,
        segments: SegmentList::from_starts(&starts, n_out)?,
        input_segments,
        provenance: FrameProvenance::from_entries(provenance),
        pair_similarities: sims,
        smoothed_similarities: smoothed,
    })
}
