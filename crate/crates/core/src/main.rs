use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use earlytom::config::{RunConfig, ShapePreset};
use earlytom::flops::{pipeline_report, FlopsSetup, RunAccounting};
use earlytom::pipeline::{self, CompressionReport, RunManifest};
use earlytom::synth::{synth_video, SynthSpec};
use earlytom::{npy, Error, ErrorKind, Execution};

const EXIT_INPUT: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "earlytom", version, about = "Video-token compression: frame merging and decoupled token selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Sequential,
    Concurrent,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a video's frame features and write tokens, report and plot data.
    Compress {
        #[arg(long)]
        config: Option<PathBuf>,
        /// NPY float32 array of shape (frames, tokens, dim).
        #[arg(long)]
        features: PathBuf,
        /// NPY float32 array of shape (frames, tokens) or (frames, tokens, tokens).
        #[arg(long)]
        attention: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "concurrent")]
        schedule: Schedule,
    },
    /// Analytic FLOPs of a compression schedule on the configured presets.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initial frame count.
        #[arg(long, default_value_t = 32)]
        frames: usize,
        /// Retention ratio; defaults to the config's.
        #[arg(long)]
        retain: Option<f64>,
        /// Frames left after each merge pass, comma separated, one per configured pass.
        #[arg(long, value_delimiter = ',')]
        frames_after: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic video (features.npy, attention.npy) from a fixture spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a run directory, print its summary and re-emit plot data.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Directory for the plot CSVs; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> earlytom::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn compress(
    config: Option<PathBuf>,
    features: PathBuf,
    attention: PathBuf,
    out: PathBuf,
    schedule: Schedule,
) -> earlytom::Result<()> {
    let cfg = load_config(config.as_deref())?;
    let exec = match schedule {
        Schedule::Sequential => Execution::Sequential,
        Schedule::Concurrent => Execution::Concurrent,
    };
    let output = pipeline::compress_files(&cfg, &features, &attention, exec)?;
    for w in &output.report.warnings {
        eprintln!("warning: {w}");
    }
    let mut inputs = vec![
        ("features".to_string(), path_str(&features)),
        ("attention".to_string(), path_str(&attention)),
    ];
    if let Some(c) = &config {
        inputs.push(("config".to_string(), path_str(c)));
    }
    pipeline::write_outputs(&output, &out, inputs)?;
    let r = &output.report;
    let ratio = r.flops.as_ref().map_or(1.0, |f| f.report.ratio_vs_baseline);
    println!(
        "frames {} -> {}, kept {} tokens (target {}), FLOPs ratio {:.4}",
        r.input.frames,
        r.segments.last().map_or(0, |s| s[1]),
        r.total_kept,
        r.budget.target,
        ratio
    );
    Ok(())
}

fn flops(
    config: Option<PathBuf>,
    frames: usize,
    retain: Option<f64>,
    frames_after: Vec<usize>,
    out: Option<PathBuf>,
) -> earlytom::Result<()> {
    let cfg = load_config(config.as_deref())?;
    let enc = ShapePreset::resolve(&cfg.encoder_preset)?;
    let llm = ShapePreset::resolve(&cfg.llm_preset)?;
    let r = retain.unwrap_or(cfg.compression.retain_ratio);
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidRatio(r));
    }
    let passes = &cfg.compression.merge_passes;
    if !frames_after.is_empty() && frames_after.len() != passes.len() {
        return Err(Error::ConfigConflict(format!(
            "--frames-after has {} entries for {} merge passes",
            frames_after.len(),
            passes.len()
        )));
    }
    let enc_tokens = cfg
        .encoder_tokens_per_frame
        .or(enc.tokens_per_frame)
        .ok_or_else(|| Error::InvalidConfig("encoder tokens per frame unknown".into()))?;
    let llm_tokens = cfg
        .llm_tokens_per_frame
        .or(enc.llm_tokens_per_frame)
        .unwrap_or(enc_tokens);
    let setup = FlopsSetup {
        encoder: enc.shape(),
        llm: llm.shape(),
        encoder_tokens_per_frame: Some(enc_tokens),
        llm_tokens_per_frame: Some(llm_tokens),
        text_tokens: cfg.text_tokens,
        encoder_attention: cfg.encoder_attention,
    };
    let run = RunAccounting {
        initial_frames: frames,
        tokens_per_frame: llm_tokens,
        passes: passes
            .iter()
            .zip(frames_after.iter().copied().chain(std::iter::repeat(frames)))
            .map(|(p, f)| (p.layer, f))
            .collect(),
        kept_tokens: (r * (frames * llm_tokens) as f64).round() as usize,
    };
    let report = pipeline_report(&setup, &run)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("flops.json"), format!("{text}\n"))?;
    }
    Ok(())
}

fn synth(spec: PathBuf, seed: Option<u64>, out: PathBuf) -> earlytom::Result<()> {
    let text = fs::read_to_string(&spec)?;
    let mut spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.message().to_owned()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (features, attention) = synth_video(&spec)?;
    fs::create_dir_all(&out)?;
    let shape = [features.frames(), features.tokens_per_frame(), features.dim()];
    fs::write(out.join("features.npy"), npy::to_npy_bytes(&shape, features.data())?)?;
    let shape = [attention.frames(), attention.tokens_per_frame()];
    fs::write(out.join("attention.npy"), npy::to_npy_bytes(&shape, attention.scores())?)?;
    let echo = toml::to_string(&spec).expect("spec serializes");
    fs::write(out.join("spec.toml"), echo)?;
    let files = ["features.npy", "attention.npy", "spec.toml"].map(String::from);
    RunManifest::write(&out, vec![("seed".into(), spec.seed.to_string())], &files)?;
    println!(
        "wrote {} frames x {} tokens x {} dims to {}",
        shape[0],
        shape[1],
        features.dim(),
        out.display()
    );
    Ok(())
}

fn report(run: PathBuf, out: Option<PathBuf>) -> earlytom::Result<()> {
    let manifest = RunManifest::load(&run)?;
    manifest.verify(&run)?;
    let text = fs::read_to_string(run.join(pipeline::REPORT_FILE))?;
    let report: CompressionReport = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptRun(format!("report.json: {e}")))?;
    println!("schema          {}", report.schema_version);
    println!(
        "input           {} frames x {} tokens x {} dims",
        report.input.frames, report.input.tokens_per_frame, report.input.dim
    );
    for (i, p) in report.passes.iter().enumerate() {
        println!(
            "pass {i:<10} layer {:>3}  {} -> {} frames, {} segments",
            p.layer.map_or("-".to_string(), |l| l.to_string()),
            p.frames_in,
            p.frames_out,
            p.segments.len()
        );
    }
    println!(
        "budget          target {} kept {} (K_f = {})",
        report.budget.target, report.total_kept, report.budget.keep_per_frame
    );
    println!(
        "tv to uniform   engine {:.4}  global top-k {:.4}  local window {:.4}",
        report.tv_to_uniform.engine, report.tv_to_uniform.global_topk, report.tv_to_uniform.local_window
    );
    if let Some(f) = &report.flops {
        println!(
            "flops           {:.3} T vs {:.3} T baseline (ratio {:.4})",
            f.report.compressed.total / 1e12,
            f.report.baseline.total / 1e12,
            f.report.ratio_vs_baseline
        );
    }
    for w in &report.warnings {
        println!("warning         {w}");
    }
    pipeline::emit_plot_data(&report, out.as_deref().unwrap_or(&run))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compress {
            config,
            features,
            attention,
            out,
            schedule,
        } => compress(config, features, attention, out, schedule),
        Command::Flops {
            config,
            frames,
            retain,
            frames_after,
            out,
        } => flops(config, frames, retain, frames_after, out),
        Command::Synth { spec, seed, out } => synth(spec, seed, out),
        Command::Report { run, out } => report(run, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Io => EXIT_IO,
            })
        }
    }
}
