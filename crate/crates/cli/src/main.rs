//! Command-line harness for the multispectral optical flow toolkit.
//!
//! Subcommands: `flow` (dense flow estimation), `gt` (ground-truth
//! construction from NIR pairs), `eval` (error statistics and reports),
//! `entropy` (pairwise channel joint entropy) and `synth` (seeded synthetic
//! RGB-NIR pairs with exact ground truth). Every run writes a provenance
//! record next to its outputs, sufficient to reproduce it.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msflow_core::entropy::{joint_entropy, EntropyConfig};
use msflow_core::flow::{read_flow, write_flow, FlowField};
use msflow_core::gt::{build_ground_truth, occlusion_raster, GtConfig};
use msflow_core::metrics::{
    accumulate_sequence, angle_error, compute_stats, endpoint_error, render_error_map,
    render_flow, ErrorStats,
};
use msflow_core::pnm::{load_pnm, save_pnm8};
use msflow_core::raster::{MultispectralImage, Raster};
use msflow_core::report::{write_csv, write_json, EvalReport, FrameReport, MethodReport, SequenceReport};
use msflow_core::solver::{compute_flow, SolverParams};
use msflow_core::synth::{self, SynthConfig, WarpKind};

use config::{apply_config_file, mode_label, parse_mode};

/// Failure taxonomy mapped to exit codes: validation errors exit 1,
/// computation failures exit 2.
#[derive(Debug)]
pub enum AppError {
    Validation(String),
    Computation(String),
}

impl AppError {
    fn validation(msg: impl Into<String>) -> Self {
        AppError::Validation(msg.into())
    }

    fn computation(msg: impl Into<String>) -> Self {
        AppError::Computation(msg.into())
    }
}

#[derive(Parser)]
#[command(name = "msflow", version, about = "Multispectral RGB-NIR dense optical flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate dense flow for consecutive frame pairs.
    Flow(FlowArgs),
    /// Construct ground-truth flow from NIR frame pairs.
    Gt(GtArgs),
    /// Evaluate flow estimates against ground truth.
    Eval(EvalArgs),
    /// Pairwise channel joint-entropy analysis.
    Entropy(EntropyArgs),
    /// Generate a synthetic RGB-NIR pair with exact ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FlowArgs {
    /// Visible frames in order (P5/P6).
    #[arg(long, num_args = 2.., required = true)]
    vis: Vec<PathBuf>,
    /// NIR frames in order (P5), aligned with --vis.
    #[arg(long, num_args = 1..)]
    nir: Vec<PathBuf>,
    /// Channel mode: da, fixed:<lambda>, rgb or nir.
    #[arg(long, default_value = "da")]
    mode: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-level energy traces and the weight map.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct GtArgs {
    /// NIR frames in order (P5).
    #[arg(long, num_args = 2.., required = true)]
    nir: Vec<PathBuf>,
    /// Maximum expected motion in pixels (search half-window).
    #[arg(long)]
    mp: Option<usize>,
    /// Forward-backward intensity difference threshold.
    #[arg(long)]
    fb_threshold: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth flow files in frame order.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    /// Method estimates: NAME=file[,file...], repeatable.
    #[arg(long, required = true)]
    est: Vec<String>,
    /// Sequence name recorded in the report.
    #[arg(long, default_value = "sequence")]
    sequence: String,
    #[arg(long)]
    out: PathBuf,
    /// Also render error maps and color-coded flows.
    #[arg(long)]
    verbose: bool,
    /// Scale mapping error to full brightness in rendered maps.
    #[arg(long, default_value_t = 2.0)]
    error_scale: f64,
}

#[derive(Args)]
struct EntropyArgs {
    /// Visible image (P5 gray or P6 color).
    #[arg(long)]
    vis: PathBuf,
    /// NIR image (P5).
    #[arg(long)]
    nir: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    bins: usize,
    #[arg(long, default_value_t = 20_000)]
    patches: usize,
    #[arg(long, default_value_t = 3)]
    patch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Warp spec: translation:<dx>,<dy> | rotation:<degrees> |
    /// bump:<ax>,<ay>,<sigma>.
    #[arg(long, default_value = "translation:2,0")]
    warp: String,
    /// Visible channel count (1 or 3).
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 0.25)]
    rgb_amplitude: f64,
    #[arg(long, default_value_t = 0.25)]
    nir_amplitude: f64,
    /// Per-frame uniform sensor-noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Suppress visible texture on the left half.
    #[arg(long)]
    rgb_flat_left: bool,
    /// Suppress NIR speckle on the right half.
    #[arg(long)]
    nir_flat_right: bool,
    /// Apply a soft shadow to frame 2's visible channels.
    #[arg(long)]
    shadow: bool,
    /// Gaussian blur sigma for frame 2's visible channels.
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    /// Reject warps larger than this motion bound.
    #[arg(long)]
    mp: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Flow(args) => cmd_flow(args),
        Command::Gt(args) => cmd_gt(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Entropy(args) => cmd_entropy(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Computation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn ensure_out_dir(path: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(path)
        .map_err(|e| AppError::validation(format!("cannot create {}: {e}", path.display())))
}

fn load_raster(path: &Path) -> Result<Raster, AppError> {
    load_pnm(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))
}

fn load_multispectral(vis: &Path, nir: Option<&Path>) -> Result<MultispectralImage, AppError> {
    let visible = load_raster(vis)?;
    let nir = nir.map(load_raster).transpose()?;
    MultispectralImage::new(visible, nir)
        .map_err(|e| AppError::validation(format!("{}: {e}", vis.display())))
}

fn write_provenance(out: &Path, value: serde_json::Value) -> Result<(), AppError> {
    let path = out.join("provenance.json");
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| AppError::computation(format!("provenance: {e}")))?;
    std::fs::write(&path, text)
        .map_err(|e| AppError::computation(format!("{}: {e}", path.display())))
}

fn cmd_flow(args: FlowArgs) -> Result<(), AppError> {
    let mut params = SolverParams::default();
    let mut gt_cfg = GtConfig::default();
    if let Some(cfg) = &args.config {
        apply_config_file(cfg, &mut params, &mut gt_cfg)?;
    }
    params.mode = parse_mode(&args.mode)?;
    if let Some(g) = args.gamma {
        params.gamma = g;
    }
    if let Some(t) = args.theta {
        params.theta = t;
    }
    params
        .validate()
        .map_err(|e| AppError::validation(e.to_string()))?;

    if !args.nir.is_empty() && args.nir.len() != args.vis.len() {
        return Err(AppError::validation(format!(
            "{} visible frames but {} NIR frames",
            args.vis.len(),
            args.nir.len()
        )));
    }
    // Validate channel availability before loading anything heavy.
    use msflow_core::solver::ChannelMode;
    if args.nir.is_empty() && !matches!(params.mode, ChannelMode::RgbOnly) {
        return Err(AppError::validation(format!(
            "mode {} needs NIR frames but none were given",
            mode_label(&params.mode)
        )));
    }
    for p in args.vis.iter().chain(&args.nir) {
        if !p.exists() {
            return Err(AppError::validation(format!("missing input {}", p.display())));
        }
    }
    ensure_out_dir(&args.out)?;

    let nir_of = |i: usize| -> Option<&Path> { args.nir.get(i).map(PathBuf::as_path) };
    let mut frames = Vec::with_capacity(args.vis.len());
    for (i, vis) in args.vis.iter().enumerate() {
        frames.push(load_multispectral(vis, nir_of(i))?);
    }

    for pair in 0..frames.len() - 1 {
        let result = compute_flow(&frames[pair], &frames[pair + 1], &params)
            .map_err(|e| AppError::computation(format!("pair {pair}: {e}")))?;
        let flow_path = args.out.join(format!("flow_{pair:04}.flo"));
        write_flow(&result.flow, &flow_path)
            .map_err(|e| AppError::computation(format!("{}: {e}", flow_path.display())))?;
        if args.verbose {
            let lambda_path = args.out.join(format!("lambda_{pair:04}.pgm"));
            save_pnm8(&result.lambda.to_raster(), &lambda_path)
                .map_err(|e| AppError::computation(format!("{}: {e}", lambda_path.display())))?;
            let mut trace = String::from("level,width,height,outer_iter,e_visible,e_nir,e_smooth,e_total\n");
            for rec in &result.trace {
                let _ = writeln!(
                    trace,
                    "{},{},{},{},{},{},{},{}",
                    rec.level,
                    rec.width,
                    rec.height,
                    rec.outer_iter,
                    rec.energy.e_visible,
                    rec.energy.e_nir,
                    rec.energy.e_smooth,
                    rec.energy.e_total
                );
            }
            let trace_path = args.out.join(format!("energy_{pair:04}.csv"));
            std::fs::write(&trace_path, trace)
                .map_err(|e| AppError::computation(format!("{}: {e}", trace_path.display())))?;
        }
        println!("pair {pair}: wrote {}", flow_path.display());
    }

    write_provenance(
        &args.out,
        serde_json::json!({
            "command": "flow",
            "vis": args.vis,
            "nir": args.nir,
            "params": params,
        }),
    )
}

fn cmd_gt(args: GtArgs) -> Result<(), AppError> {
    let mut params = SolverParams::default();
    let mut cfg = GtConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(path, &mut params, &mut cfg)?;
    }
    if let Some(mp) = args.mp {
        cfg.m_p = mp;
    }
    if let Some(t) = args.fb_threshold {
        cfg.fb_threshold = t;
    }
    cfg.validate().map_err(|e| AppError::validation(e.to_string()))?;
    for p in &args.nir {
        if !p.exists() {
            return Err(AppError::validation(format!("missing input {}", p.display())));
        }
    }
    ensure_out_dir(&args.out)?;

    let mut frames = Vec::with_capacity(args.nir.len());
    for p in &args.nir {
        let r = load_raster(p)?;
        if r.channels() != 1 {
            return Err(AppError::validation(format!(
                "{}: NIR frames must be single-channel",
                p.display()
            )));
        }
        frames.push(r);
    }

    for pair in 0..frames.len() - 1 {
        let out = build_ground_truth(&frames[pair], &frames[pair + 1], &cfg)
            .map_err(|e| AppError::computation(format!("pair {pair}: {e}")))?;
        let flow_path = args.out.join(format!("gt_{pair:04}.flo"));
        write_flow(&out.flow, &flow_path)
            .map_err(|e| AppError::computation(format!("{}: {e}", flow_path.display())))?;
        let occ = occlusion_raster(&out.occlusion, frames[pair].width(), frames[pair].height());
        let occ_path = args.out.join(format!("occ_{pair:04}.pgm"));
        save_pnm8(&occ, &occ_path)
            .map_err(|e| AppError::computation(format!("{}: {e}", occ_path.display())))?;
        println!("pair {pair}: wrote {}", flow_path.display());
    }

    write_provenance(
        &args.out,
        serde_json::json!({
            "command": "gt",
            "nir": args.nir,
            "config": cfg,
        }),
    )
}

/// Parse an estimate spec `NAME=file[,file...]`.
fn parse_est_spec(spec: &str) -> Result<(String, Vec<PathBuf>), AppError> {
    let (name, files) = spec
        .split_once('=')
        .ok_or_else(|| AppError::validation(format!("estimate spec '{spec}' is not NAME=files")))?;
    let files: Vec<PathBuf> = files.split(',').map(PathBuf::from).collect();
    if name.is_empty() || files.is_empty() {
        return Err(AppError::validation(format!("estimate spec '{spec}' is empty")));
    }
    Ok((name.to_string(), files))
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let methods: Vec<(String, Vec<PathBuf>)> = args
        .est
        .iter()
        .map(|s| parse_est_spec(s))
        .collect::<Result<_, _>>()?;
    for (name, files) in &methods {
        if files.len() != args.gt.len() {
            return Err(AppError::validation(format!(
                "method {name}: {} estimates vs {} ground-truth frames",
                files.len(),
                args.gt.len()
            )));
        }
    }
    ensure_out_dir(&args.out)?;

    let gt_fields: Vec<FlowField> = args
        .gt
        .iter()
        .map(|p| read_flow(p).map_err(|e| AppError::validation(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;

    let mut report = EvalReport::new(serde_json::json!({
        "sequence": args.sequence,
        "gt": args.gt,
        "error_scale": args.error_scale,
    }));

    for (name, files) in &methods {
        let mut frames = Vec::new();
        let mut ee_stats: Vec<ErrorStats> = Vec::new();
        for (idx, (path, gt)) in files.iter().zip(&gt_fields).enumerate() {
            let est = read_flow(path)
                .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
            if est.width() != gt.width() || est.height() != gt.height() {
                return Err(AppError::validation(format!(
                    "{}: estimate is {}x{} but ground truth is {}x{}",
                    path.display(),
                    est.width(),
                    est.height(),
                    gt.width(),
                    gt.height()
                )));
            }
            let ee_map = endpoint_error(gt, &est)
                .map_err(|e| AppError::computation(format!("frame {idx}: {e}")))?;
            let ae_map = angle_error(gt, &est)
                .map_err(|e| AppError::computation(format!("frame {idx}: {e}")))?;
            let ee = compute_stats(&ee_map, ee_map.kind.default_thresholds())
                .map_err(|e| AppError::computation(format!("frame {idx}: {e}")))?;
            let ae = compute_stats(&ae_map, ae_map.kind.default_thresholds())
                .map_err(|e| AppError::computation(format!("frame {idx}: {e}")))?;
            if args.verbose {
                let base = format!("{name}_{idx:04}");
                save_pnm8(&render_error_map(&ee_map, args.error_scale), &args.out.join(format!("err_ee_{base}.pgm")))
                    .map_err(|e| AppError::computation(e.to_string()))?;
                save_pnm8(&render_error_map(&ae_map, 90.0), &args.out.join(format!("err_ae_{base}.pgm")))
                    .map_err(|e| AppError::computation(e.to_string()))?;
                save_pnm8(&render_flow(&est), &args.out.join(format!("flow_{base}.ppm")))
                    .map_err(|e| AppError::computation(e.to_string()))?;
            }
            ee_stats.push(ee.clone());
            frames.push(FrameReport { frame: idx, ee, ae });
        }
        let seq = accumulate_sequence(&ee_stats)
            .map_err(|e| AppError::computation(e.to_string()))?;
        report.methods.push(MethodReport {
            method: name.clone(),
            sequences: vec![SequenceReport {
                sequence: args.sequence.clone(),
                frames,
                acc_ee: seq.acc_ee,
            }],
        });
    }

    write_csv(&report, &args.out.join("report.csv"))
        .map_err(|e| AppError::computation(e.to_string()))?;
    write_json(&report, &args.out.join("report.json"))
        .map_err(|e| AppError::computation(e.to_string()))?;
    print!("{}", report.ranking_table());
    Ok(())
}

fn cmd_entropy(args: EntropyArgs) -> Result<(), AppError> {
    let vis = load_raster(&args.vis)?;
    let nir = args.nir.as_deref().map(load_raster).transpose()?;
    if let Some(n) = &nir {
        if n.width() != vis.width() || n.height() != vis.height() {
            return Err(AppError::validation("visible and NIR dimensions differ".to_string()));
        }
    }
    ensure_out_dir(&args.out)?;

    // Channel set: R/G/B when color, plus the gray average, plus NIR.
    let mut channels: Vec<(String, Raster)> = Vec::new();
    if vis.channels() == 3 {
        for (c, name) in ["r", "g", "b"].iter().enumerate() {
            channels.push((name.to_string(), vis.channel(c)));
        }
    }
    let mut gray = Raster::new(vis.width(), vis.height(), 1)
        .map_err(|e| AppError::computation(e.to_string()))?;
    for y in 0..vis.height() {
        for x in 0..vis.width() {
            let p = vis.pixel(x, y);
            gray.set(x, y, 0, p.iter().sum::<f64>() / p.len() as f64);
        }
    }
    channels.push(("gray".to_string(), gray));
    if let Some(n) = nir {
        channels.push(("nir".to_string(), n));
    }

    let cfg = EntropyConfig {
        n_patches: args.patches,
        patch_size: args.patch_size,
        bins: args.bins,
        seed: args.seed,
    };
    let mut csv = String::from("pair,bins,n_patches,seed,h_bits\n");
    for i in 0..channels.len() {
        for j in i + 1..channels.len() {
            let h = joint_entropy(&channels[i].1, &channels[j].1, &cfg)
                .map_err(|e| AppError::computation(e.to_string()))?;
            let _ = writeln!(
                csv,
                "{}-{},{},{},{},{}",
                channels[i].0, channels[j].0, cfg.bins, cfg.n_patches, cfg.seed, h
            );
        }
    }
    let csv_path = args.out.join("entropy.csv");
    std::fs::write(&csv_path, &csv)
        .map_err(|e| AppError::computation(format!("{}: {e}", csv_path.display())))?;
    print!("{csv}");

    write_provenance(
        &args.out,
        serde_json::json!({
            "command": "entropy",
            "vis": args.vis,
            "nir": args.nir,
            "bins": cfg.bins,
            "n_patches": cfg.n_patches,
            "patch_size": cfg.patch_size,
            "seed": cfg.seed,
        }),
    )
}

/// Parse a warp spec: `translation:<dx>,<dy>`, `rotation:<degrees>` or
/// `bump:<ax>,<ay>,<sigma>`.
fn parse_warp(text: &str) -> Result<WarpKind, AppError> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| AppError::validation(format!("warp spec '{text}' has no parameters")))?;
    let nums: Vec<f64> = rest
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| AppError::validation(format!("bad number in warp spec '{text}'")))?;
    match (kind, nums.as_slice()) {
        ("translation", [dx, dy]) => Ok(WarpKind::Translation { dx: *dx, dy: *dy }),
        ("rotation", [degrees]) => Ok(WarpKind::Rotation { degrees: *degrees }),
        ("bump", [ax, ay, sigma]) => Ok(WarpKind::Bump {
            amp_x: *ax,
            amp_y: *ay,
            sigma: *sigma,
        }),
        _ => Err(AppError::validation(format!(
            "warp spec '{text}' (expected translation:dx,dy | rotation:deg | bump:ax,ay,sigma)"
        ))),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), AppError> {
    let warp = parse_warp(&args.warp)?;
    if let Some(mp) = args.mp {
        let max = warp.max_magnitude(args.width, args.height);
        if max > mp as f64 {
            return Err(AppError::validation(format!(
                "warp magnitude {max:.2} px exceeds configured m_p {mp}"
            )));
        }
    }
    let cfg = SynthConfig {
        width: args.width,
        height: args.height,
        seed: args.seed,
        warp,
        visible_channels: args.channels,
        rgb_amplitude: args.rgb_amplitude,
        nir_amplitude: args.nir_amplitude,
        noise_amplitude: args.noise,
        rgb_flat_left: args.rgb_flat_left,
        nir_flat_right: args.nir_flat_right,
        shadow: args.shadow,
        blur_sigma: args.blur,
    };
    let pair = synth::generate(&cfg).map_err(|e| AppError::validation(e.to_string()))?;
    ensure_out_dir(&args.out)?;

    let vis_ext = if args.channels == 3 { "ppm" } else { "pgm" };
    let writes: [(String, &Raster); 4] = [
        (format!("frame1_vis.{vis_ext}"), &pair.frame1.visible),
        (format!("frame2_vis.{vis_ext}"), &pair.frame2.visible),
        ("frame1_nir.pgm".to_string(), pair.frame1.nir.as_ref().unwrap()),
        ("frame2_nir.pgm".to_string(), pair.frame2.nir.as_ref().unwrap()),
    ];
    for (name, raster) in writes {
        let path = args.out.join(name);
        save_pnm8(raster, &path)
            .map_err(|e| AppError::computation(format!("{}: {e}", path.display())))?;
    }
    let gt_path = args.out.join("gt.flo");
    write_flow(&pair.gt, &gt_path)
        .map_err(|e| AppError::computation(format!("{}: {e}", gt_path.display())))?;

    write_provenance(
        &args.out,
        serde_json::json!({
            "command": "synth",
            "width": args.width,
            "height": args.height,
            "seed": args.seed,
            "warp": args.warp,
            "channels": args.channels,
            "rgb_amplitude": args.rgb_amplitude,
            "nir_amplitude": args.nir_amplitude,
            "noise": args.noise,
            "rgb_flat_left": args.rgb_flat_left,
            "nir_flat_right": args.nir_flat_right,
            "shadow": args.shadow,
            "blur": args.blur,
        }),
    )?;
    println!("wrote synthetic pair to {}", args.out.display());
    Ok(())
}
