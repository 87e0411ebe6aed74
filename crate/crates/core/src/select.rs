//! Stage II: decoupled spatial token selection.
//!
//! Segment heads and tails ("dynamic" frames) keep their highest-attention
//! tokens. Segment middles ("static" frames) keep one winner per local
//! window, which spreads the picks across positions and dampens sink tokens.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{AttentionScores, FeatureTensor, SegmentList};
use crate::Execution;

/// Nominal per-frame keep count: `clamp(round(r * B * L / N), 1, L)`.
pub fn keep_count_per_frame(
    retain_ratio: f64,
    initial_frames: usize,
    frames: usize,
    tokens_per_frame: usize,
) -> Result<usize> {
    check_budget_inputs(retain_ratio, initial_frames, frames, tokens_per_frame)?;
    let per_frame = retain_ratio * (initial_frames * tokens_per_frame) as f64 / frames as f64;
    Ok((per_frame.round() as usize).clamp(1, tokens_per_frame))
}

fn check_budget_inputs(r: f64, b: usize, n: usize, l: usize) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidRatio(r));
    }
    if n == 0 || l == 0 || n > b {
        return Err(Error::InvalidConfig(format!(
            "budget needs 1 <= frames <= initial_frames and tokens >= 1, got N={n}, B={b}, L={l}"
        )));
    }
    Ok(())
}

/// Token budget for the frames that survive Stage I.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenBudget {
    /// `round(r * B * L)`.
    pub target: usize,
    /// Nominal per-frame count.
    pub keep_per_frame: usize,
    /// Tokens actually kept per frame, in frame order.
    pub per_frame: Vec<usize>,
    /// The one-token-per-frame floor was raised above `target`.
    pub floor_applied: bool,
    /// `target` exceeded the `N * L` tokens available.
    pub capped: bool,
}

impl TokenBudget {
    pub fn total(&self) -> usize {
        self.per_frame.iter().sum()
    }
}

/// Distributes `round(r * B * L)` tokens over `N` frames of `L` tokens.
///
/// Every frame starts at the nominal keep count; the remainder is added to
/// the earliest frames or removed from the latest ones, one token each,
/// until the total is exact. The total is clamped to `[N, N * L]`.
pub fn token_budget(
    retain_ratio: f64,
    initial_frames: usize,
    frames: usize,
    tokens_per_frame: usize,
) -> Result<TokenBudget> {
    let keep = keep_count_per_frame(retain_ratio, initial_frames, frames, tokens_per_frame)?;
    let target = (retain_ratio * (initial_frames * tokens_per_frame) as f64).round() as usize;
    let total = target.clamp(frames, frames * tokens_per_frame);
    let mut per_frame = vec![keep; frames];
    let mut current = keep * frames;
    while current < total {
        for slot in per_frame.iter_mut() {
            if current == total {
                break;
            }
            if *slot < tokens_per_frame {
                *slot += 1;
                current += 1;
            }
        }
    }
    while current > total {
        for slot in per_frame.iter_mut().rev() {
            if current == total {
                break;
            }
            if *slot > 1 {
                *slot -= 1;
                current -= 1;
            }
        }
    }
    Ok(TokenBudget {
        target,
        keep_per_frame: keep,
        per_frame,
        floor_applied: target < frames,
        capped: target > frames * tokens_per_frame,
    })
}

/// Frame roles derived from a segment list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecoupledFrames {
    /// Segment heads and tails, ascending.
    pub dynamic_idx: Vec<usize>,
    /// Segment middles, ascending.
    pub static_idx: Vec<usize>,
}

pub fn decouple(segments: &SegmentList) -> DecoupledFrames {
    let mut dynamic_idx = Vec::new();
    let mut static_idx = Vec::new();
    for seg in segments.iter() {
        dynamic_idx.push(seg.start);
        if seg.end - seg.start > 1 {
            static_idx.extend(seg.start + 1..seg.end - 1);
            dynamic_idx.push(seg.end - 1);
        }
    }
    DecoupledFrames {
        dynamic_idx,
        static_idx,
    }
}

// -0.0 and 0.0 compare equal; NaN sorts above everything.
fn score_cmp(a: f32, b: f32) -> Ordering {
    let canon = |v: f32| if v == 0.0 { 0.0 } else { v };
    canon(a).total_cmp(&canon(b))
}

/// Higher score first, then lower index.
fn rank_cmp(row: &[f32], i: usize, j: usize) -> Ordering {
    score_cmp(row[j], row[i]).then(i.cmp(&j))
}

fn check_k(k: usize, len: usize) -> Result<()> {
    if k > len {
        return Err(Error::BudgetExceedsFrame { k, len });
    }
    Ok(())
}

/// Indices of the `k` highest scores (lower index wins ties), ascending.
pub fn global_topk_select(row: &[f32], k: usize) -> Result<Vec<usize>> {
    check_k(k, row.len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&i, &j| rank_cmp(row, i, j));
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// One argmax per window of width `floor(L / k)`, trimmed back to `k` picks.
///
/// The last window may be short. When there are more windows than `k`, the
/// lowest-scoring winners are dropped (lower index dropped first on ties).
pub fn local_window_select(row: &[f32], k: usize) -> Result<Vec<usize>> {
    check_k(k, row.len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let width = row.len() / k;
    let mut winners: Vec<usize> = (0..row.len())
        .step_by(width)
        .map(|start| {
            let end = (start + width).min(row.len());
            (start + 1..end).fold(start, |best, i| {
                if score_cmp(row[i], row[best]) == Ordering::Greater {
                    i
                } else {
                    best
                }
            })
        })
        .collect();
    if winners.len() > k {
        let mut by_score = winners.clone();
        by_score.sort_unstable_by(|&i, &j| score_cmp(row[i], row[j]).then(i.cmp(&j)));
        let dropped = &by_score[..winners.len() - k];
        winners.retain(|i| !dropped.contains(i));
    }
    Ok(winners)
}

/// Per-token scores from an `L x L` attention matrix: mean attention received (column mean).
pub fn attention_from_matrix(matrix: &[f32], tokens: usize) -> Result<Vec<f32>> {
    if tokens == 0 || matrix.len() != tokens * tokens {
        return Err(Error::shape(
            format!("{tokens}x{tokens} matrix"),
            format!("{} values", matrix.len()),
        ));
    }
    if let Some(index) = matrix.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    if let Some(index) = matrix.iter().position(|v| *v < 0.0) {
        return Err(Error::NegativeScore { index });
    }
    let mut sums = vec![0.0f64; tokens];
    for row in matrix.chunks_exact(tokens) {
        for (acc, &v) in sums.iter_mut().zip(row) {
            *acc += f64::from(v);
        }
    }
    Ok(sums.into_iter().map(|s| (s / tokens as f64) as f32).collect())
}

/// Which selector to apply to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    GlobalTopK,
    LocalWindow,
}

impl Selector {
    pub fn select(self, row: &[f32], k: usize) -> Result<Vec<usize>> {
        match self {
            Selector::GlobalTopK => global_topk_select(row, k),
            Selector::LocalWindow => local_window_select(row, k),
        }
    }
}

/// Kept token indices of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameSelection {
    pub frame: usize,
    pub indices: Vec<usize>,
}

/// Kept tokens of every frame, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub frames: Vec<FrameSelection>,
    pub dim: usize,
    /// Gathered feature rows, `total_kept x dim`, frame by frame.
    pub tokens: Vec<f32>,
}

impl SelectionResult {
    pub fn total_kept(&self) -> usize {
        self.frames.iter().map(|f| f.indices.len()).sum()
    }

    pub fn kept_per_frame(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.indices.len()).collect()
    }

    /// `(frame, token)` for every emitted row.
    pub fn index_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.frames
            .iter()
            .flat_map(|f| f.indices.iter().map(move |&t| (f.frame, t)))
    }
}

/// Orders both selection sets by original frame and token index and gathers the rows.
pub fn gather_reorder(
    dynamic: Vec<FrameSelection>,
    statics: Vec<FrameSelection>,
    features: &FeatureTensor,
) -> Result<SelectionResult> {
    let n = features.frames();
    let l = features.tokens_per_frame();
    let mut slots: Vec<Option<Vec<usize>>> = vec![None; n];
    for sel in dynamic.into_iter().chain(statics) {
        let slot = slots.get_mut(sel.frame).ok_or_else(|| {
            Error::CoverageGap(format!("frame {} outside 0..{n}", sel.frame))
        })?;
        if slot.is_some() {
            return Err(Error::CoverageGap(format!("frame {} selected twice", sel.frame)));
        }
        let mut indices = sel.indices;
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::CoverageGap(format!(
                "frame {} repeats a token index",
                sel.frame
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&t| t >= l) {
            return Err(Error::CoverageGap(format!(
                "frame {} selects token {bad} outside 0..{l}",
                sel.frame
            )));
        }
        *slot = Some(indices);
    }
    let mut frames = Vec::with_capacity(n);
    for (frame, slot) in slots.into_iter().enumerate() {
        let indices = slot.ok_or_else(|| Error::CoverageGap(format!("frame {frame} has no selection")))?;
        frames.push(FrameSelection { frame, indices });
    }
    let dim = features.dim();
    let mut tokens = Vec::with_capacity(frames.iter().map(|f| f.indices.len()).sum::<usize>() * dim);
    for f in &frames {
        for &t in &f.indices {
            tokens.extend_from_slice(features.token(f.frame, t));
        }
    }
    Ok(SelectionResult { frames, dim, tokens })
}

fn select_frames(
    attention: &AttentionScores,
    frames: &[usize],
    budgets: &[usize],
    selector: Selector,
    exec: Execution,
) -> Result<Vec<FrameSelection>> {
    let one = |&frame: &usize| {
        selector
            .select(attention.row(frame), budgets[frame])
            .map(|indices| FrameSelection { frame, indices })
    };
    match exec {
        Execution::Sequential => frames.iter().map(one).collect(),
        Execution::Concurrent => frames.par_iter().map(one).collect(),
    }
}

/// Runs the dynamic and static selection paths and gathers the result.
///
/// `budgets[i]` is the keep count of frame `i`. Under
/// [`Execution::Concurrent`] the two paths run as independent tasks; the
/// result is identical to the sequential schedule.
pub fn decoupled_select(
    features: &FeatureTensor,
    attention: &AttentionScores,
    segments: &SegmentList,
    budgets: &[usize],
    exec: Execution,
) -> Result<SelectionResult> {
    attention.check_matches(features)?;
    if segments.frames() != features.frames() || budgets.len() != features.frames() {
        return Err(Error::CoverageGap(format!(
            "{} frames, segments cover {}, {} budgets",
            features.frames(),
            segments.frames(),
            budgets.len()
        )));
    }
    let roles = decouple(segments);
    let (dynamic, statics) = match exec {
        Execution::Sequential => (
            select_frames(attention, &roles.dynamic_idx, budgets, Selector::GlobalTopK, exec)?,
            select_frames(attention, &roles.static_idx, budgets, Selector::LocalWindow, exec)?,
        ),
        Execution::Concurrent => {
            let (d, s) = rayon::join(
                || select_frames(attention, &roles.dynamic_idx, budgets, Selector::GlobalTopK, exec),
                || select_frames(attention, &roles.static_idx, budgets, Selector::LocalWindow, exec),
            );
            (d?, s?)
        }
    };
    gather_reorder(dynamic, statics, features)
}

/// Applies one selector to every frame (used for distribution comparisons).
pub fn select_uniform(
    attention: &AttentionScores,
    budgets: &[usize],
    selector: Selector,
) -> Result<Vec<FrameSelection>> {
    let frames: Vec<usize> = (0..attention.frames()).collect();
    select_frames(attention, &frames, budgets, selector, Execution::Sequential)
}
