//! Brute-force references and positional-distribution metrics.
//!
//! The references here deliberately avoid the code paths they check:
//! they sort, rescan and recompute from scratch instead of streaming.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::select::FrameSelection;

/// Full stable sort by descending score, take `k`, return ascending indices.
pub fn oracle_topk(scores: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort();
    picked
}

/// Positions `j` of the similarity sequence where a segment break occurs
/// (the next segment starts at frame `j + 1`).
///
/// Each smoothed value is recomputed from its segment start, with the
/// first similarity of a segment seeding the average.
pub fn oracle_segment(sims: &[f64], alpha: f64, tau: f64) -> BTreeSet<usize> {
    let mut breaks = BTreeSet::new();
    let mut seg_start = 0;
    for j in 0..sims.len() {
        let mut smoothed = sims[seg_start];
        for s in &sims[seg_start + 1..=j] {
            smoothed = alpha * s + (1.0 - alpha) * smoothed;
        }
        if smoothed < tau {
            breaks.insert(j);
            seg_start = j + 1;
        }
    }
    breaks
}

/// Windowed argmax reference for local-window selection.
pub fn oracle_window_argmax(scores: &[f32], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let l = scores.len();
    let w = l / k;
    let windows = l.div_ceil(w);
    let mut winners = Vec::with_capacity(windows);
    for m in 0..windows {
        let lo = m * w;
        let hi = ((m + 1) * w).min(l);
        let best = scores[lo..hi].iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let first = (lo..hi).find(|&i| scores[i] == best).expect("window is non-empty");
        winners.push(first);
    }
    while winners.len() > k {
        let mut drop_at = 0;
        for (pos, &i) in winners.iter().enumerate() {
            if scores[i] < scores[winners[drop_at]] {
                drop_at = pos;
            }
        }
        winners.remove(drop_at);
    }
    winners
}

/// Selection counts per original token position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PositionHistogram {
    pub bins: Vec<u64>,
    pub total: u64,
}

impl PositionHistogram {
    pub fn from_bins(bins: Vec<u64>) -> Self {
        let total = bins.iter().sum();
        Self { bins, total }
    }

    /// One count per position: the distribution of raw, unselected tokens.
    pub fn uniform(tokens: usize) -> Self {
        Self::from_bins(vec![1; tokens])
    }
}

pub fn position_histogram<'a, I>(selections: I, tokens: usize) -> PositionHistogram
where
    I: IntoIterator<Item = &'a FrameSelection>,
{
    let mut bins = vec![0u64; tokens];
    for sel in selections {
        for &t in &sel.indices {
            bins[t] += 1;
        }
    }
    PositionHistogram::from_bins(bins)
}

/// Total-variation distance `0.5 * sum |p_i - q_i|` between normalized histograms.
pub fn tv_distance(a: &PositionHistogram, b: &PositionHistogram) -> Result<f64> {
    if a.bins.len() != b.bins.len() || a.total == 0 || b.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let (ta, tb) = (a.total as f64, b.total as f64);
    let sum: f64 = a
        .bins
        .iter()
        .zip(&b.bins)
        .map(|(&x, &y)| (x as f64 / ta - y as f64 / tb).abs())
        .sum();
    Ok(0.5 * sum)
}
