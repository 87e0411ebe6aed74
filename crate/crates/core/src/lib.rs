//! Deterministic video-token compression.
//!
//! Two stages operate on pre-extracted frame features:
//!
//! 1. [`merge`]: streaming segmentation of the frame sequence by
//!    EMA-smoothed similarity, then weighted merging of redundant
//!    middle frames inside each segment. Runs as a schedule of passes.
//! 2. [`select`]: segment heads and tails keep their top-K tokens by
//!    attention; segment middles keep one token per local window. The
//!    per-frame budget is rescaled so the total matches the requested
//!    retention of the original token count.
//!
//! [`flops`] prices a run analytically, [`oracle`] holds brute-force
//! references and distribution metrics, [`synth`] generates fixtures and
//! [`pipeline`] ties everything to files.

pub mod config;
pub mod error;
pub mod flops;
pub mod merge;
pub mod npy;
pub mod oracle;
pub mod pipeline;
pub mod select;
pub mod synth;
pub mod types;

pub use config::{RunConfig, ShapePreset};
pub use error::{Error, ErrorKind, Result};
pub use pipeline::{run_compress, CompressionOutput, CompressionReport};
pub use types::{
    AttentionScores, CompressionConfig, FeatureTensor, FrameProvenance, MergePassSpec, SegmentList,
};

/// How independent work inside a run is scheduled. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Per-segment merging, per-frame selection and the dynamic/static
    /// paths run on the rayon pool.
    Concurrent,
}
