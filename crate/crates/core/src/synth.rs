//! Reproducible synthetic videos with controllable frame similarity and
//! attention sinks.
//!
//! Randomness comes from xoshiro256++ whose 256-bit state is expanded
//! from the 64-bit seed with four SplitMix64 outputs (little-endian),
//! the construction recommended by the generator's authors. Uniform
//! doubles take the top 53 bits of an output; normals use the Box-Muller
//! cosine branch. Any language with those three primitives reproduces
//! the fixtures.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttentionScores, FeatureTensor};

/// A run of frames around a shared base; consecutive frames have cosine
/// similarity close to `similarity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub frames: usize,
    pub similarity: f64,
}

/// Token positions whose attention is multiplied by `factor` in every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    #[serde(default)]
    pub columns: Vec<usize>,
    #[serde(default = "one")]
    pub factor: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SinkSpec {
    fn default() -> Self {
        Self {
            columns: Vec::new(),
            factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub tokens_per_frame: usize,
    pub dim: usize,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub sink: SinkSpec,
}

impl SynthSpec {
    pub fn frames(&self) -> usize {
        self.blocks.iter().map(|b| b.frames).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens_per_frame == 0 || self.dim == 0 {
            return Err(Error::InvalidSpec("tokens_per_frame and dim must be >= 1".into()));
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.frames == 0) {
            return Err(Error::InvalidSpec("every block needs at least one frame".into()));
        }
        if let Some(b) = self.blocks.iter().find(|b| !(0.0..=1.0).contains(&b.similarity)) {
            return Err(Error::InvalidSpec(format!(
                "block similarity must lie in [0, 1], got {}",
                b.similarity
            )));
        }
        if let Some(c) = self.sink.columns.iter().find(|&&c| c >= self.tokens_per_frame) {
            return Err(Error::InvalidSpec(format!(
                "sink column {c} outside 0..{}",
                self.tokens_per_frame
            )));
        }
        if !(self.sink.factor > 0.0 && self.sink.factor.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sink factor must be positive, got {}",
                self.sink.factor
            )));
        }
        Ok(())
    }
}

/// Seedable generator used for all fixtures.
pub struct FixtureRng {
    inner: Xoshiro256PlusPlus,
}

impl FixtureRng {
    pub fn new(seed: u64) -> Self {
        let mut expand = SplitMix64::seed_from_u64(seed);
        let mut state = [0u8; 32];
        for chunk in state.chunks_exact_mut(8) {
            chunk.copy_from_slice(&expand.next_u64().to_le_bytes());
        }
        Self {
            inner: Xoshiro256PlusPlus::from_seed(state),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.uniform() * (hi - lo + 1) as f64) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.gaussian()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Generates features and attention for `spec`.
///
/// Within a block each token is `sqrt(rho) * base + sqrt(1 - rho) * noise`
/// with unit base and noise, renormalized, so consecutive frames have
/// cosine close to `rho` (exactly 1 when `rho = 1`). Blocks draw
/// independent bases. Attention rows are uniform in `[0, 1)` with sink
/// columns multiplied by the sink factor.
pub fn synth_video(spec: &SynthSpec) -> Result<(FeatureTensor, AttentionScores)> {
    spec.validate()?;
    let (l, d) = (spec.tokens_per_frame, spec.dim);
    let mut rng = FixtureRng::new(spec.seed);
    let mut data = Vec::with_capacity(spec.frames() * l * d);
    for block in &spec.blocks {
        let base: Vec<Vec<f64>> = (0..l).map(|_| rng.unit_vector(d)).collect();
        let (keep, noise) = (block.similarity.sqrt(), (1.0 - block.similarity).sqrt());
        for _ in 0..block.frames {
            for b in &base {
                let mut token: Vec<f64> = if noise == 0.0 {
                    b.clone()
                } else {
                    let n = rng.unit_vector(d);
                    b.iter().zip(&n).map(|(x, y)| keep * x + noise * y).collect()
                };
                normalize(&mut token);
                data.extend(token.into_iter().map(|x| x as f32));
            }
        }
    }
    let frames = spec.frames();
    let mut scores = Vec::with_capacity(frames * l);
    for _ in 0..frames {
        let start = scores.len();
        scores.extend((0..l).map(|_| rng.uniform() as f32));
        for &c in &spec.sink.columns {
            scores[start + c] = (f64::from(scores[start + c]) * spec.sink.factor) as f32;
        }
    }
    Ok((
        FeatureTensor::new(frames, l, d, data)?,
        AttentionScores::new(frames, l, scores)?,
    ))
}
