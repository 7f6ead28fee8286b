use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use decaf::client::{ChildTransport, HANDSHAKE_TIMEOUT};
use decaf::conformance::{parse_transcript, replay, Strictness};
use decaf::config::{Config, EvalModeKey, ModalitiesKey, OtsuScopeKey};
use decaf::dump::{read_map, write_map};
use decaf::eval::{evaluate_dirs, report_json, report_table};
use decaf::frames::write_mask;
use decaf::fuse::{build_fused_map, FuseOptions};
use decaf::par::default_jobs;
use decaf::protocol::RleJson;
use decaf::results::SegmentEcho;
use decaf::segment::run_segment;
use decaf::server::OracleServer;
use decaf_core::coarse::{attn_mask, mask_upscale, OtsuScope};
use decaf_core::fusion::{FusionConfig, Modalities};
use decaf_core::metrics::ObjectMode;
use decaf_core::sampling::{uniform_sample, DEFAULT_SAMPLED_FRAMES};
use decaf_core::tracklet::PromptingConfig;
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_FUSE: u8 = 2;
const EXIT_SEGMENT: u8 = 3;
const EXIT_EVAL: u8 = 4;

/// Attention-guided video object segmentation from MLLM attention dumps.
#[derive(Parser)]
#[command(name = "decaf", version)]
struct Cli {
    /// `key = value` config file, or a results JSON whose config echo is reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a manifest's attention dumps into a grounding map.
    Fuse(FuseArgs),
    /// Prompt a segmenter from a grounding map and write a results file.
    Segment(SegmentArgs),
    /// Score results files against ground-truth label PNGs.
    Eval(EvalArgs),
    /// Threshold a grounding map into coarse masks.
    Attnmask(AttnmaskArgs),
    /// Print uniformly sampled frame indices.
    Sample(SampleArgs),
    /// Serve the label-video oracle segmenter on stdin/stdout.
    ServeOracle,
    /// Write a synthetic suite: label videos, ground truth, dumps, manifests.
    Synth(SynthArgs),
    /// Replay protocol transcripts against a segmenter command.
    CheckProtocol(CheckProtocolArgs),
}

#[derive(Args)]
struct FuseArgs {
    manifest: PathBuf,
    out: PathBuf,
    #[arg(long)]
    start_layer: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Object maps only, no background subtraction.
    #[arg(long)]
    no_contrastive: bool,
    /// Video map only.
    #[arg(long, conflicts_with = "frame_only")]
    no_complementary: bool,
    /// Frame maps only.
    #[arg(long)]
    frame_only: bool,
    #[arg(long)]
    video_weight: Option<f64>,
    /// Skip row renormalization after head weighting.
    #[arg(long)]
    no_renormalize: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Grounding map written by `decaf fuse`.
    map: Option<String>,
    /// Frames locator handed to the segmenter.
    frames: Option<String>,
    /// Shell command starting the segmenter process.
    #[arg(long)]
    segmenter_cmd: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau_pq: Option<f64>,
    #[arg(long)]
    tau_trk: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    dedup_iou: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score each ground-truth object separately instead of the union.
    #[arg(long)]
    per_object: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AttnmaskArgs {
    map: PathBuf,
    out_dir: PathBuf,
    #[arg(long)]
    per_frame_otsu: bool,
}

#[derive(Args)]
struct SampleArgs {
    total: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLED_FRAMES)]
    count: usize,
}

#[derive(Args)]
struct SynthArgs {
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckProtocolArgs {
    transcripts: Vec<PathBuf>,
    /// Label frames directory substituted for `{frames}`.
    #[arg(long)]
    frames: String,
    #[arg(long)]
    segmenter_cmd: String,
    /// Compare message structure only, not mask contents.
    #[arg(long)]
    structural: bool,
}

fn cmd_fuse(a: FuseArgs, cfg: &Config) -> Result<()> {
    let defaults = FusionConfig::default();
    let modalities = if a.no_complementary {
        Modalities::VideoOnly
    } else if a.frame_only {
        Modalities::FrameOnly
    } else {
        match cfg.modalities {
            Some(ModalitiesKey::Video) => Modalities::VideoOnly,
            Some(ModalitiesKey::Frame) => Modalities::FrameOnly,
            Some(ModalitiesKey::Both) | None => Modalities::Both,
        }
    };
    let opts = FuseOptions {
        start_layer: a.start_layer.or(cfg.start_layer),
        renormalize_rows: !a.no_renormalize && cfg.renormalize_rows.unwrap_or(true),
        fusion: FusionConfig {
            sigma: a.sigma.or(cfg.sigma).unwrap_or(defaults.sigma),
            contrastive: !a.no_contrastive && cfg.contrastive.unwrap_or(true),
            modalities,
            video_weight: a.video_weight.or(cfg.video_weight).unwrap_or(defaults.video_weight),
            ..defaults
        },
        jobs: a.jobs.or(cfg.jobs).unwrap_or_else(default_jobs),
    };
    let map = build_fused_map(&a.manifest, &opts)?;
    write_map(&map, &a.out)?;
    Ok(())
}

fn cmd_segment(a: SegmentArgs, cfg: &Config) -> Result<()> {
    let d = PromptingConfig::default();
    let need = |flag: Option<String>, file: &Option<String>, name: &str| {
        flag.or_else(|| file.clone())
            .ok_or_else(|| anyhow!("missing {name} (argument or config key)"))
    };
    let echo = SegmentEcho {
        map: need(a.map, &cfg.map, "map")?,
        frames: need(a.frames, &cfg.frames, "frames")?,
        segmenter: need(a.segmenter_cmd, &cfg.segmenter, "segmenter")?,
        tau_pq: a.tau_pq.or(cfg.tau_pq).unwrap_or(d.tau_pq),
        tau_trk: a.tau_trk.or(cfg.tau_trk).unwrap_or(d.tau_trk),
        nms_iou: a.nms_iou.or(cfg.nms_iou).unwrap_or(d.nms_iou),
        dedup_iou: a.dedup_iou.or(cfg.dedup_iou).unwrap_or(d.dedup_iou),
    };
    let results = run_segment(echo)?;
    results.write(&a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, cfg: &Config) -> Result<()> {
    let mode = if a.per_object || cfg.eval_mode == Some(EvalModeKey::PerObject) {
        ObjectMode::PerObject
    } else {
        ObjectMode::Union
    };
    let jobs = a.jobs.or(cfg.jobs).unwrap_or_else(default_jobs);
    let report = evaluate_dirs(&a.pred_dir, &a.gt_dir, mode, jobs)?;
    let table = report_table(&report);
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("report.json"), report_json(&report, mode))?;
        fs::write(out.join("report.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct AttnmaskJson {
    video_id: String,
    scope: &'static str,
    frames: Vec<usize>,
    masks: Vec<RleJson>,
}

fn cmd_attnmask(a: AttnmaskArgs, cfg: &Config) -> Result<()> {
    let file = read_map(&a.map)?;
    let per_frame = a.per_frame_otsu || cfg.otsu_scope == Some(OtsuScopeKey::PerFrame);
    let scope = if per_frame { OtsuScope::PerFrame } else { OtsuScope::Global };
    let cells = attn_mask(&file.map, scope);
    let [h, w] = file.video.frame_size;
    let masks = mask_upscale(&cells, file.map.scale, (h, w))?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (m, &t) in masks.iter().zip(&file.video.sampled_frame_indices) {
        write_mask(&a.out_dir.join(format!("{t:05}.png")), m)?;
    }
    let doc = AttnmaskJson {
        video_id: file.video.video_id.clone(),
        scope: if per_frame { "per_frame" } else { "global" },
        frames: file.video.sampled_frame_indices.clone(),
        masks: masks.iter().map(RleJson::encode).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(a.out_dir.join("masks.json"), text)?;
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    if a.total == 0 {
        bail!("video has no frames");
    }
    println!("{}", serde_json::to_string(&uniform_sample(a.total, a.count))?);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let layout = decaf::synth::write_suite(&a.out_dir, a.seed, a.videos)?;
    for id in &layout.ids {
        println!("{}", layout.manifest(id).display());
    }
    Ok(())
}

fn cmd_check_protocol(a: CheckProtocolArgs) -> Result<()> {
    let strictness = if a.structural {
        Strictness::Structural
    } else {
        Strictness::Exact
    };
    for path in &a.transcripts {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let lines = parse_transcript(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let mut transport = ChildTransport::spawn(&a.segmenter_cmd)?;
        let n = replay(&lines, &a.frames, &mut transport, strictness, HANDSHAKE_TIMEOUT)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        println!("ok {} ({n} replies)", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> (Result<()>, u8) {
    let cfg = match cli.config.as_deref().map(Config::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return (Err(e.into()), EXIT_USAGE),
    };
    match cli.command {
        Command::Fuse(a) => (cmd_fuse(a, &cfg), EXIT_FUSE),
        Command::Attnmask(a) => (cmd_attnmask(a, &cfg), EXIT_FUSE),
        Command::Segment(a) => (cmd_segment(a, &cfg), EXIT_SEGMENT),
        Command::Eval(a) => (cmd_eval(a, &cfg), EXIT_EVAL),
        Command::Sample(a) => (cmd_sample(a), EXIT_USAGE),
        Command::Synth(a) => (cmd_synth(a), EXIT_USAGE),
        Command::CheckProtocol(a) => (cmd_check_protocol(a), EXIT_SEGMENT),
        Command::ServeOracle => {
            let r = OracleServer::new().serve(io::stdin().lock(), io::stdout().lock());
            (r.map_err(Into::into), EXIT_USAGE)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DECAF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        (Ok(()), _) => ExitCode::SUCCESS,
        (Err(e), code) => {
            eprintln!("decaf: {e:#}");
            ExitCode::from(code)
        }
    }
}

