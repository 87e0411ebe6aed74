#![allow(dead_code)]

use std::path::PathBuf;

use earlytom::synth::{BlockSpec, FixtureRng, SinkSpec, SynthSpec};
use earlytom::{AttentionScores, FeatureTensor, RunConfig};

/// Golden fixture directories shipped under `tests/fixtures`.
pub const GOLDEN: &[&str] = &["two_block", "sink_pattern", "mvbench_32", "matrix_attention"];

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn fixture_config(name: &str) -> RunConfig {
    RunConfig::from_file(fixture_dir(name).join("config.toml")).expect("fixture config parses")
}

pub fn random_features(rng: &mut FixtureRng, frames: usize, tokens: usize, dim: usize) -> FeatureTensor {
    let data = (0..frames * tokens * dim).map(|_| rng.gaussian() as f32).collect();
    FeatureTensor::new(frames, tokens, dim, data).unwrap()
}

pub fn random_attention(rng: &mut FixtureRng, frames: usize, tokens: usize) -> AttentionScores {
    let scores = (0..frames * tokens).map(|_| rng.uniform() as f32).collect();
    AttentionScores::new(frames, tokens, scores).unwrap()
}

/// A synthetic video split into blocks of random length and similarity.
pub fn random_spec(rng: &mut FixtureRng, frames_range: (usize, usize), tokens: usize, dim: usize) -> SynthSpec {
    let total = rng.range(frames_range.0, frames_range.1);
    let mut blocks = Vec::new();
    let mut left = total;
    while left > 0 {
        let len = rng.range(1, left);
        blocks.push(BlockSpec {
            frames: len,
            similarity: 0.5 + 0.5 * rng.uniform(),
        });
        left -= len;
    }
    SynthSpec {
        seed: rng.next_u64(),
        tokens_per_frame: tokens,
        dim,
        blocks,
        sink: SinkSpec::default(),
    }
}

fn npy_v1(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

fn f32_payload(values: usize) -> Vec<u8> {
    (0..values).flat_map(|i| (i as f32).to_le_bytes()).collect()
}

const GOOD_HEADER: &str = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 2), }";

/// Malformed NPY files with the error code each must produce.
///
/// Cases marked `features` go through the feature loader (rank and value
/// checks); the rest through the raw parser.
pub fn corrupt_npy_corpus() -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let good = npy_v1(GOOD_HEADER, &f32_payload(12));
    let mut nan_payload = f32_payload(12);
    nan_payload[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut bad_version = good.clone();
    bad_version[6] = 3;
    let mut long_len = good.clone();
    long_len[8..10].copy_from_slice(&u16::MAX.to_le_bytes());
    let mut non_ascii = good.clone();
    non_ascii[12] = 0xC3;
    vec![
        ("empty file", Vec::new(), "CorruptHeader"),
        ("wrong magic", b"PK\x03\x04\x14\x00\x00\x00\x08\x00".to_vec(), "CorruptHeader"),
        ("unknown version", bad_version, "CorruptHeader"),
        ("missing header length", b"\x93NUMPY\x01\x00\x40".to_vec(), "CorruptHeader"),
        ("header length past end", long_len, "CorruptHeader"),
        ("non-ascii header", non_ascii, "CorruptHeader"),
        (
            "float64",
            npy_v1("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3, 2), }", &[0; 96]),
            "UnsupportedDtype",
        ),
        (
            "big-endian float32",
            npy_v1("{'descr': '>f4', 'fortran_order': False, 'shape': (2, 3, 2), }", &f32_payload(12)),
            "UnsupportedDtype",
        ),
        (
            "int32",
            npy_v1("{'descr': '<i4', 'fortran_order': False, 'shape': (2, 3, 2), }", &f32_payload(12)),
            "UnsupportedDtype",
        ),
        (
            "fortran order",
            npy_v1("{'descr': '<f4', 'fortran_order': True, 'shape': (2, 3, 2), }", &f32_payload(12)),
            "UnsupportedShape",
        ),
        (
            "missing shape",
            npy_v1("{'descr': '<f4', 'fortran_order': False, }", &f32_payload(12)),
            "CorruptHeader",
        ),
        (
            "unknown key",
            npy_v1(
                "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 2), 'extra': 1, }",
                &f32_payload(12),
            ),
            "CorruptHeader",
        ),
        (
            "negative dimension",
            npy_v1("{'descr': '<f4', 'fortran_order': False, 'shape': (2, -3, 2), }", &f32_payload(12)),
            "CorruptHeader",
        ),
        (
            "float dimension",
            npy_v1("{'descr': '<f4', 'fortran_order': False, 'shape': (2.5, 3, 2), }", &f32_payload(12)),
            "CorruptHeader",
        ),
        (
            "unterminated dict",
            npy_v1("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 2)", &f32_payload(12)),
            "CorruptHeader",
        ),
        ("truncated payload", npy_v1(GOOD_HEADER, &f32_payload(11)), "TruncatedData"),
        ("trailing bytes", npy_v1(GOOD_HEADER, &f32_payload(13)), "CorruptHeader"),
        (
            "overflowing shape",
            npy_v1(
                "{'descr': '<f4', 'fortran_order': False, 'shape': (4294967296, 4294967296, 4), }",
                &f32_payload(12),
            ),
            "CorruptHeader",
        ),
        (
            "features: rank 2",
            npy_v1("{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }", &f32_payload(12)),
            "UnsupportedShape",
        ),
        ("features: NaN value", npy_v1(GOOD_HEADER, &nan_payload), "NonFiniteValue"),
    ]
}

/// Parses a corpus entry the way the CLI would.
pub fn load_corpus_entry(name: &str, bytes: &[u8]) -> earlytom::Result<()> {
    let array = earlytom::npy::read_npy(bytes)?;
    if name.starts_with("features") {
        earlytom::npy::features_from_npy(array)?;
    }
    Ok(())
}
