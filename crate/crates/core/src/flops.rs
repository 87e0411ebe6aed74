//! Analytic FLOPs for the vision encoder and LLM prefill.
//!
//! Per layer, a transformer over `L` tokens with hidden size `D` and FFN
//! size `M` costs `4 L D^2 + 2 L^2 D + 2 L D M`: the four attention
//! projections, the score and value products, and the FFN. Softmax,
//! normalization and projector costs are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `4 L D^2 + 2 L^2 D + 2 L D M`, evaluated in integers and converted once.
///
/// Exact for every result below 2^53.
pub fn layer_flops(tokens: u64, hidden: u64, ffn: u64) -> f64 {
    layer_flops_exact(tokens, hidden, ffn) as f64
}

/// Exact integer form of [`layer_flops`].
pub fn layer_flops_exact(tokens: u64, hidden: u64, ffn: u64) -> u128 {
    let (l, d, m) = (u128::from(tokens), u128::from(hidden), u128::from(ffn));
    4 * l * d * d + 2 * l * l * d + 2 * l * d * m
}

/// Layer count and widths of a transformer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerShape {
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
}

impl TransformerShape {
    pub fn new(layers: usize, hidden: usize, ffn: usize) -> Self {
        Self { layers, hidden, ffn }
    }

    fn layer(&self, tokens: usize) -> u128 {
        layer_flops_exact(tokens as u64, self.hidden as u64, self.ffn as u64)
    }

    /// Total over a per-layer sequence-length schedule.
    pub fn scheduled_flops(&self, tokens_per_layer: &[usize]) -> Result<f64> {
        if tokens_per_layer.len() != self.layers {
            return Err(Error::ScheduleMismatch {
                expected: self.layers,
                found: tokens_per_layer.len(),
            });
        }
        Ok(tokens_per_layer.iter().map(|&t| self.layer(t)).sum::<u128>() as f64)
    }
}

/// How the encoder's attention spans frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScope {
    /// All frames' tokens form one sequence per layer (`L_i = frames * tokens`).
    #[default]
    Joint,
    /// Each frame is an independent sequence of `tokens` tokens.
    PerFrame,
}

/// Encoder FLOPs given the number of frames alive at each layer.
pub fn encoder_flops(
    shape: &TransformerShape,
    frames_alive: &[usize],
    tokens_per_frame: usize,
    scope: AttentionScope,
) -> Result<f64> {
    if frames_alive.len() != shape.layers {
        return Err(Error::ScheduleMismatch {
            expected: shape.layers,
            found: frames_alive.len(),
        });
    }
    let total: u128 = match scope {
        AttentionScope::Joint => frames_alive
            .iter()
            .map(|&f| shape.layer(f * tokens_per_frame))
            .sum(),
        AttentionScope::PerFrame => {
            let per_frame = shape.layer(tokens_per_frame);
            frames_alive.iter().map(|&f| f as u128 * per_frame).sum()
        }
    };
    Ok(total as f64)
}

/// LLM prefill FLOPs with a constant sequence length across layers.
pub fn prefill_flops(shape: &TransformerShape, visual_tokens: usize, text_tokens: usize) -> f64 {
    (shape.layers as u128 * shape.layer(visual_tokens + text_tokens)) as f64
}

/// Frames alive at each encoder layer.
///
/// `passes` holds `(layer, frames_after)`; a pass at layer `l` shrinks the
/// frame count for layers `> l`. Passes beyond the last layer do not
/// change the encoder schedule.
pub fn frames_alive_schedule(layers: usize, initial_frames: usize, passes: &[(usize, usize)]) -> Vec<usize> {
    let mut schedule = vec![initial_frames; layers];
    for &(layer, frames_after) in passes {
        for slot in schedule.iter_mut().skip(layer + 1) {
            *slot = frames_after;
        }
    }
    schedule
}

/// Architecture constants for both halves of a video LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsSetup {
    pub encoder: TransformerShape,
    pub llm: TransformerShape,
    /// Encoder sequence length per frame; `None` uses the feature token count.
    pub encoder_tokens_per_frame: Option<usize>,
    /// Visual tokens per frame handed to the LLM at full retention; `None`
    /// uses the feature token count.
    pub llm_tokens_per_frame: Option<usize>,
    pub text_tokens: usize,
    pub encoder_attention: AttentionScope,
}

/// Token accounting of one compressed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAccounting {
    pub initial_frames: usize,
    /// Tokens per frame of the features the run operated on.
    pub tokens_per_frame: usize,
    /// `(encoder layer, frames after the pass)` per Stage-I pass.
    pub passes: Vec<(Option<usize>, usize)>,
    pub kept_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub encoder: f64,
    pub prefill: f64,
    pub total: f64,
}

impl FlopsBreakdown {
    fn new(encoder: f64, prefill: f64) -> Self {
        Self {
            encoder,
            prefill,
            total: encoder + prefill,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub compressed: FlopsBreakdown,
    pub baseline: FlopsBreakdown,
    /// `compressed.total / baseline.total`.
    pub ratio_vs_baseline: f64,
    pub encoder_frames_alive: Vec<usize>,
    pub llm_visual_tokens: usize,
    pub baseline_llm_visual_tokens: usize,
    pub text_tokens: usize,
}

/// Compressed-vs-baseline FLOPs for a run.
///
/// The baseline encodes every initial frame at every layer and hands
/// `B * llm_tokens_per_frame` visual tokens to the LLM. When the LLM
/// per-frame count differs from the features' token count, kept tokens
/// are rescaled proportionally.
pub fn pipeline_report(setup: &FlopsSetup, run: &RunAccounting) -> Result<FlopsReport> {
    let l = run.tokens_per_frame;
    let enc_tokens = setup.encoder_tokens_per_frame.unwrap_or(l);
    let llm_tokens = setup.llm_tokens_per_frame.unwrap_or(l);
    let layer_passes: Vec<(usize, usize)> = run
        .passes
        .iter()
        .filter_map(|&(layer, frames)| layer.map(|ly| (ly, frames)))
        .collect();
    let alive = frames_alive_schedule(setup.encoder.layers, run.initial_frames, &layer_passes);
    let baseline_alive = vec![run.initial_frames; setup.encoder.layers];

    let visual = if llm_tokens == l {
        run.kept_tokens
    } else {
        (run.kept_tokens as f64 * llm_tokens as f64 / l as f64).round() as usize
    };
    let baseline_visual = run.initial_frames * llm_tokens;

    let compressed = FlopsBreakdown::new(
        encoder_flops(&setup.encoder, &alive, enc_tokens, setup.encoder_attention)?,
        prefill_flops(&setup.llm, visual, setup.text_tokens),
    );
    let baseline = FlopsBreakdown::new(
        encoder_flops(&setup.encoder, &baseline_alive, enc_tokens, setup.encoder_attention)?,
        prefill_flops(&setup.llm, baseline_visual, setup.text_tokens),
    );
    let ratio_vs_baseline = if baseline.total > 0.0 {
        compressed.total / baseline.total
    } else {
        1.0
    };
    Ok(FlopsReport {
        compressed,
        baseline,
        ratio_vs_baseline,
        encoder_frames_alive: alive,
        llm_visual_tokens: visual,
        baseline_llm_visual_tokens: baseline_visual,
        text_tokens: setup.text_tokens,
    })
}
