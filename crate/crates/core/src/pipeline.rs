//! End-to-end compression run: Stage I passes, Stage II selection, the
//! JSON report, plot data and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flops::{pipeline_report, FlopsReport, RunAccounting};
use crate::merge::{merge_pass, PassInput};
use crate::npy;
use crate::oracle::{position_histogram, tv_distance, PositionHistogram};
use crate::select::{decouple, decoupled_select, select_uniform, token_budget, Selector, SelectionResult};
use crate::types::{AttentionScores, CompressionConfig, FeatureTensor, FrameProvenance};
use crate::Execution;

pub const REPORT_SCHEMA: &str = "earlytom.report/1";
pub const MANIFEST_SCHEMA: &str = "earlytom.manifest/1";

pub const TOKENS_FILE: &str = "tokens.npy";
pub const INDEX_FILE: &str = "tokens_index.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIMILARITY_CSV: &str = "plot_similarity.csv";
pub const HISTOGRAM_CSV: &str = "plot_position_histogram.csv";
pub const FLOPS_CSV: &str = "plot_flops.csv";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub layer: Option<usize>,
    pub tau_seg: f64,
    pub tau_merge: f64,
    pub frames_in: usize,
    pub frames_out: usize,
    /// Segments over the pass's input frames.
    pub segments: Vec<[usize; 2]>,
    pub similarities: Vec<f64>,
    pub smoothed: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub target: usize,
    pub keep_per_frame: usize,
    pub total: usize,
    pub floor_applied: bool,
    pub capped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorStats<T> {
    pub engine: T,
    pub global_topk: T,
    pub local_window: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsAssumptions {
    pub encoder_preset: String,
    pub llm_preset: String,
    pub encoder_attention: String,
    pub encoder_tokens_per_frame: usize,
    pub llm_tokens_per_frame: usize,
    pub text_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsSection {
    pub assumptions: FlopsAssumptions,
    #[serde(flatten)]
    pub report: FlopsReport,
}

/// Everything a run reports. Field order is the JSON key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub schema_version: String,
    pub config: CompressionConfig,
    pub input: InputShape,
    pub initial_frames: usize,
    pub passes: Vec<PassSummary>,
    /// Segments over the frames that survive Stage I.
    pub segments: Vec<[usize; 2]>,
    /// Per surviving frame: `[original frame, weight]` pairs.
    pub provenance: Vec<Vec<(usize, f64)>>,
    pub dynamic_frames: Vec<usize>,
    pub static_frames: Vec<usize>,
    pub budget: BudgetSummary,
    pub kept_per_frame: Vec<usize>,
    pub total_kept: usize,
    pub flops: Option<FlopsSection>,
    pub position_histograms: SelectorStats<Vec<u64>>,
    pub tv_to_uniform: SelectorStats<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CompressionOutput {
    pub merged_features: FeatureTensor,
    pub merged_attention: AttentionScores,
    pub provenance: FrameProvenance,
    pub selection: SelectionResult,
    pub report: CompressionReport,
}

/// Runs both stages on in-memory inputs.
pub fn run_compress(
    config: &RunConfig,
    features: &FeatureTensor,
    attention: &AttentionScores,
    exec: Execution,
) -> Result<CompressionOutput> {
    let cc = &config.compression;
    cc.validate()?;
    features.validate()?;
    attention.check_matches(features)?;
    let initial = cc.initial_frames.unwrap_or(features.frames());
    if initial != features.frames() {
        return Err(Error::InvalidConfig(format!(
            "initial_frames = {initial} but the input has {} frames",
            features.frames()
        )));
    }

    let mut current = features.clone();
    let mut current_att = attention.clone();
    let mut provenance = FrameProvenance::identity(features.frames());
    let mut segments = None;
    let mut passes = Vec::with_capacity(cc.merge_passes.len());
    for spec in &cc.merge_passes {
        let params = cc.pass_params(spec);
        let result = merge_pass(
            PassInput::new(&current)
                .with_attention(&current_att)
                .with_prior(&provenance),
            &params,
            exec,
        )?;
        passes.push(PassSummary {
            layer: spec.layer,
            tau_seg: params.tau_seg,
            tau_merge: params.tau_merge,
            frames_in: current.frames(),
            frames_out: result.features.frames(),
            segments: result.input_segments.clone().into(),
            similarities: result.pair_similarities,
            smoothed: result.smoothed_similarities,
        });
        current = result.features;
        current_att = result.attention.expect("attention follows every pass");
        provenance = result.provenance;
        segments = Some(result.segments);
    }
    let segments = segments.expect("at least one merge pass");

    let l = features.tokens_per_frame();
    let n = current.frames();
    let budget = token_budget(cc.retain_ratio, initial, n, l)?;
    let mut warnings = Vec::new();
    if budget.floor_applied {
        warnings.push(format!(
            "ConfigConflict: round(r*B*L) = {} is below the {n} surviving frames; kept one token per frame",
            budget.target
        ));
    }
    if budget.capped {
        warnings.push(format!(
            "budget round(r*B*L) = {} exceeds the {} tokens left after Stage I; kept every token",
            budget.target,
            n * l
        ));
    }

    let selection = decoupled_select(&current, &current_att, &segments, &budget.per_frame, exec)?;
    let roles = decouple(&segments);

    let topk = select_uniform(&current_att, &budget.per_frame, Selector::GlobalTopK)?;
    let window = select_uniform(&current_att, &budget.per_frame, Selector::LocalWindow)?;
    let hists = SelectorStats {
        engine: position_histogram(&selection.frames, l),
        global_topk: position_histogram(&topk, l),
        local_window: position_histogram(&window, l),
    };
    let uniform = PositionHistogram::uniform(l);
    let tv = SelectorStats {
        engine: tv_distance(&hists.engine, &uniform)?,
        global_topk: tv_distance(&hists.global_topk, &uniform)?,
        local_window: tv_distance(&hists.local_window, &uniform)?,
    };

    let setup = config.flops_setup()?;
    let flops = pipeline_report(
        &setup,
        &RunAccounting {
            initial_frames: initial,
            tokens_per_frame: l,
            passes: passes.iter().map(|p| (p.layer, p.frames_out)).collect(),
            kept_tokens: selection.total_kept(),
        },
    )?;
    let flops = FlopsSection {
        assumptions: FlopsAssumptions {
            encoder_preset: config.encoder_preset.clone(),
            llm_preset: config.llm_preset.clone(),
            encoder_attention: match setup.encoder_attention {
                crate::flops::AttentionScope::Joint => "joint".into(),
                crate::flops::AttentionScope::PerFrame => "per_frame".into(),
            },
            encoder_tokens_per_frame: setup.encoder_tokens_per_frame.unwrap_or(l),
            llm_tokens_per_frame: setup.llm_tokens_per_frame.unwrap_or(l),
            text_tokens: setup.text_tokens,
        },
        report: flops,
    };

    let report = CompressionReport {
        schema_version: REPORT_SCHEMA.into(),
        config: cc.clone(),
        input: InputShape {
            frames: features.frames(),
            tokens_per_frame: l,
            dim: features.dim(),
        },
        initial_frames: initial,
        passes,
        segments: segments.clone().into(),
        provenance: provenance.iter().map(<[_]>::to_vec).collect(),
        dynamic_frames: roles.dynamic_idx,
        static_frames: roles.static_idx,
        budget: BudgetSummary {
            target: budget.target,
            keep_per_frame: budget.keep_per_frame,
            total: budget.total(),
            floor_applied: budget.floor_applied,
            capped: budget.capped,
        },
        kept_per_frame: selection.kept_per_frame(),
        total_kept: selection.total_kept(),
        flops: Some(flops),
        position_histograms: SelectorStats {
            engine: hists.engine.bins,
            global_topk: hists.global_topk.bins,
            local_window: hists.local_window.bins,
        },
        tv_to_uniform: tv,
        warnings,
    };

    Ok(CompressionOutput {
        merged_features: current,
        merged_attention: current_att,
        provenance,
        selection,
        report,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the similarity curves, position histograms and FLOPs rows as CSV.
pub fn emit_plot_data(report: &CompressionReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let sim_path = dir.join(SIMILARITY_CSV);
    let mut w = csv_writer(&sim_path)?;
    w.write_record(["pass", "layer", "pair_index", "similarity", "smoothed"])
        .map_err(csv_err)?;
    for (p, pass) in report.passes.iter().enumerate() {
        let layer = pass.layer.map(|l| l.to_string()).unwrap_or_default();
        for (j, s) in pass.similarities.iter().enumerate() {
            let smoothed = pass.smoothed.get(j).map(f64::to_string).unwrap_or_default();
            w.write_record([p.to_string(), layer.clone(), j.to_string(), s.to_string(), smoothed])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let hist_path = dir.join(HISTOGRAM_CSV);
    let mut w = csv_writer(&hist_path)?;
    w.write_record(["position", "engine", "global_topk", "local_window"])
        .map_err(csv_err)?;
    let h = &report.position_histograms;
    for (pos, engine) in h.engine.iter().enumerate() {
        w.write_record([
            pos.to_string(),
            engine.to_string(),
            h.global_topk.get(pos).copied().unwrap_or(0).to_string(),
            h.local_window.get(pos).copied().unwrap_or(0).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let flops_path = dir.join(FLOPS_CSV);
    let mut w = csv_writer(&flops_path)?;
    w.write_record(["component", "baseline", "compressed"]).map_err(csv_err)?;
    if let Some(f) = &report.flops {
        let (b, c) = (&f.report.baseline, &f.report.compressed);
        for (name, base, comp) in [
            ("encoder", b.encoder, c.encoder),
            ("prefill", b.prefill, c.prefill),
            ("total", b.total, c.total),
        ] {
            w.write_record([name.to_string(), base.to_string(), comp.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(vec![sim_path, hist_path, flops_path])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Inputs and hashed outputs of one run. Artifact paths are relative to
/// the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub inputs: Vec<(String, String)>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Hashes `files` (relative to `dir`) and writes `manifest.json` there.
    pub fn write(dir: &Path, inputs: Vec<(String, String)>, files: &[String]) -> Result<Self> {
        let mut artifacts = Vec::with_capacity(files.len());
        for rel in files {
            let bytes = fs::read(dir.join(rel))?;
            artifacts.push(ArtifactEntry {
                path: rel.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = Self {
            schema_version: MANIFEST_SCHEMA.into(),
            inputs,
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }

    /// Checks that every listed artifact exists and matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let bytes = fs::read(dir.join(&a.path))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::CorruptRun(format!(
                    "artifact {} does not match its recorded hash",
                    a.path
                )));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CorruptRun(format!("manifest: {e}")))
    }
}

pub fn report_json(report: &CompressionReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

fn index_csv(selection: &SelectionResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame_id", "token_id"]).map_err(csv_err)?;
    for (f, t) in selection.index_pairs() {
        w.write_record([f.to_string(), t.to_string()]).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Writes tokens, index, report, plot data and the manifest under `dir`.
pub fn write_outputs(
    output: &CompressionOutput,
    dir: &Path,
    inputs: Vec<(String, String)>,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let sel = &output.selection;
    let mut f = fs::File::create(dir.join(TOKENS_FILE))?;
    npy::write_npy(&mut f, &[sel.total_kept(), sel.dim], &sel.tokens)?;
    f.flush()?;
    fs::write(dir.join(INDEX_FILE), index_csv(sel)?)?;
    fs::write(dir.join(REPORT_FILE), report_json(&output.report))?;
    emit_plot_data(&output.report, dir)?;
    let files: Vec<String> = [
        TOKENS_FILE,
        INDEX_FILE,
        REPORT_FILE,
        SIMILARITY_CSV,
        HISTOGRAM_CSV,
        FLOPS_CSV,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    RunManifest::write(dir, inputs, &files)
}

/// Loads inputs from NPY files and runs [`run_compress`].
pub fn compress_files(
    config: &RunConfig,
    features_path: &Path,
    attention_path: &Path,
    exec: Execution,
) -> Result<CompressionOutput> {
    let features = npy::load_features(features_path)?;
    let attention = npy::load_attention(attention_path)?;
    run_compress(config, &features, &attention, exec)
}

/// Reads `(frame_id, token_id)` rows back from an index file.
pub fn read_index(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.deserialize::<(usize, usize)>() {
        rows.push(rec.map_err(csv_err)?);
    }
    Ok(rows)
}
