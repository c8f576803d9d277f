use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use endodepth::bundle_adjust::{estimate_trajectory, JacobianMode, TrajectoryConfig};
use endodepth::coverage::{assess, map_to_image, CoverageConfig};
use endodepth::depth_eval::{evaluate, AlignmentDomain, BootstrapConfig, ResampleUnit};
use endodepth::io::{self, json as jsonio, ply, png};
use endodepth::pipeline::{
    exit, exit_code, manifest_path_for, run_pipeline, validate_formats, AtomicFiles, CheckStatus, PipelineConfig, RunManifest,
    Staging,
};
use endodepth::preprocess::{preprocess_frame, HistMatchConfig, PreprocessSteps, StyleReference, DEFAULT_PATCH, DEFAULT_SIGMA_K};
use endodepth::reconstruct::{fuse, voxel_downsample};
use endodepth::synthcolon::{export_dataset, generate, Scene};

mod help;

#[derive(Parser)]
#[command(name = "endodepth", version, about = "Depth, pose, reconstruction and coverage tools for endoscopic video")]
#[command(after_long_help = help::FORMATS)]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print a JSON summary to standard output.
    #[arg(long, global = true)]
    print_json: bool,
    /// Log more (-v debug, -vv trace). Logs go to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic colon fly-through and export it.
    Render(RenderArgs),
    /// Specular removal, style matching and attenuation of PNG frames.
    Preprocess(PreprocessArgs),
    /// Score predicted depth against ground truth after scale-shift alignment.
    Eval(EvalArgs),
    /// Estimate camera poses from point tracks by windowed bundle adjustment.
    Poses(PosesArgs),
    /// Fuse depth maps and poses into a point cloud.
    Reconstruct(ReconstructArgs),
    /// Unroll a point cloud around its principal axis and measure coverage.
    Coverage(CoverageArgs),
    /// Render, evaluate, estimate poses, reconstruct and measure coverage.
    Pipeline(PipelineArgs),
    /// Check every artifact file below a directory.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy)]
struct Size(u32, u32);

fn parse_size(s: &str) -> Result<Size, String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let h = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    if w == 0 || h == 0 {
        return Err("both dimensions must be positive".into());
    }
    Ok(Size(w, h))
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected x,y,z".to_string())
}

#[derive(Args)]
struct RenderArgs {
    /// Scene JSON with `phantom`, `trajectory` and `lighting` sections.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    size: Option<Size>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of PNG frames.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Save the specular mask of each frame as `<name>_mask.png`.
    #[arg(long)]
    specular_mask: bool,
    /// Fill specular pixels by harmonic inpainting.
    #[arg(long)]
    inpaint: bool,
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    patch: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA_K)]
    sigma_k: f64,
    /// Match per-channel mean and standard deviation to this image.
    #[arg(long, conflicts_with = "hist_ref")]
    adain_ref: Option<PathBuf>,
    /// Directory of reference frames for local histogram matching, paired
    /// with the inputs in name order (cycled if shorter).
    #[arg(long)]
    hist_ref: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    tile: usize,
    /// Multiply intensities by this factor in (0, 1].
    #[arg(long)]
    attenuate: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Depth,
    Disparity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnitArg {
    Frame,
    Pixel,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted depth maps (PFM, or 16-bit PNG with sidecars).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "depth")]
    domain: DomainArg,
    /// Bootstrap resamples for confidence intervals; 0 reports point values only.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, value_enum, default_value = "frame")]
    resample: UnitArg,
    /// Output metrics JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JacobianArg {
    Fd,
    Analytic,
}

#[derive(Args)]
struct PosesArgs {
    /// Tracks in JSON lines.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Number of frames; defaults to one past the largest tracked frame.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 16)]
    window: usize,
    #[arg(long, default_value_t = 4)]
    overlap: usize,
    /// Weight of the depth residual relative to pixels (px/mm).
    #[arg(long, default_value_t = 1.0)]
    depth_weight: f64,
    /// Huber threshold; 0 disables the robust kernel.
    #[arg(long, default_value_t = 2.0)]
    huber: f64,
    #[arg(long, value_enum, default_value = "fd")]
    jacobian: JacobianArg,
    /// Output poses JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Directory of depth maps.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Directory of color frames (files ending in `_intensity.png` if any, else all PNGs).
    #[arg(long)]
    rgb: Option<PathBuf>,
    /// Directory of label frames (files ending in `_label.png` if any, else all PNGs).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Voxel edge in mm for downsampling.
    #[arg(long)]
    voxel: Option<f64>,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    ascii: bool,
    /// Output PLY.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Map size as N_SxN_THETA.
    #[arg(long, value_parser = parse_size, default_value = "256x64")]
    bins: Size,
    #[arg(long, default_value_t = 1)]
    open: usize,
    #[arg(long, default_value_t = 2)]
    close: usize,
    /// Direction of travel as x,y,z; fixes the sign of the axis.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    hint: Option<[f64; 3]>,
    /// Output map PNG.
    #[arg(long)]
    out: PathBuf,
    /// Output summary JSON.
    #[arg(long)]
    summary: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_size)]
    size: Option<Size>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    dir: PathBuf,
}

struct Failure {
    code: i32,
    message: String,
    /// Printed with `--print-json` even though the command failed.
    summary: Option<Value>,
}

impl From<endodepth::Error> for Failure {
    fn from(e: endodepth::Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
            summary: None,
        }
    }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("cannot size the thread pool: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    let result = match &cli.command {
        Command::Render(a) => render(a, cli.seed),
        Command::Preprocess(a) => preprocess(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Poses(a) => poses(a, cli.seed),
        Command::Reconstruct(a) => reconstruct(a, cli.seed),
        Command::Coverage(a) => coverage(a, cli.seed),
        Command::Pipeline(a) => pipeline(a, cli.seed),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(summary) => {
            if cli.print_json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("JSON value"));
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let (true, Some(s)) = (cli.print_json, &f.summary) {
                println!("{}", serde_json::to_string_pretty(s).expect("JSON value"));
            }
            log::error!("{}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: exit::CONFIG,
        message: message.into(),
        summary: None,
    }
}

fn require_dir(dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure {
            code: exit::IO,
            message: format!("{}: no such directory", dir.display()),
            summary: None,
        })
    }
}

/// PNGs of `dir`, restricted to names ending in `suffix` if any do.
fn pngs_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, Failure> {
    require_dir(dir)?;
    let all = io::list_files(dir, "png")?;
    let matching: Vec<_> = all
        .iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .cloned()
        .collect();
    Ok(if matching.is_empty() { all } else { matching })
}

fn render(a: &RenderArgs, seed: u64) -> CmdResult {
    let mut scene: Scene = match &a.scene {
        Some(p) => jsonio::read_json(p)?,
        None => Scene::default(),
    };
    if let Some(n) = a.frames {
        scene.trajectory.n_frames = n;
    }
    if let Some(Size(w, h)) = a.size {
        scene.trajectory.width = w;
        scene.trajectory.height = h;
    }
    let scene = scene.with_seed(seed);
    log::info!("rendering {} frames", scene.trajectory.n_frames);
    let seq = generate(&scene)?;
    let staging = Staging::new(&a.out)?;
    let mut manifest = RunManifest::new("render", &scene, Some(seed))?;
    if let Some(p) = &a.scene {
        manifest.add_input(p)?;
    }
    export_dataset(&seq.rendered.frames, staging.path(), Some(&scene), Some(seq.rendered.exposure))?;
    manifest.summary = json!({
        "n_frames": seq.rendered.frames.len(),
        "exposure": seq.rendered.exposure,
        "attenuation": seq.rendered.attenuation,
        "intrinsics": jsonio::IntrinsicsRecord::from(&seq.trajectory.intrinsics),
    });
    Ok(staging.commit(manifest)?.summary)
}

fn preprocess(a: &PreprocessArgs, seed: u64) -> CmdResult {
    require_dir(&a.input)?;
    let inputs = io::list_files(&a.input, "png")?;
    if inputs.is_empty() {
        return Err(config_error(format!("no PNG files in {}", a.input.display())));
    }
    let adain_ref = a.adain_ref.as_deref().map(png::read_image).transpose()?;
    let hist_refs = match &a.hist_ref {
        Some(dir) => {
            require_dir(dir)?;
            let files = io::list_files(dir, "png")?;
            if files.is_empty() {
                return Err(config_error(format!("no PNG files in {}", dir.display())));
            }
            files.iter().map(|p| png::read_image(p)).collect::<Result<Vec<_>, _>>()?
        }
        None => Vec::new(),
    };
    let steps = PreprocessSteps {
        specular: (a.specular_mask || a.inpaint).then_some((a.patch, a.sigma_k)),
        inpaint: a.inpaint,
        attenuation: a.attenuate,
    };
    let hist_cfg = HistMatchConfig {
        tile: a.tile,
        ..Default::default()
    };
    let staging = Staging::new(&a.out)?;
    let mut manifest = RunManifest::new(
        "preprocess",
        &json!({
            "specular_mask": a.specular_mask, "inpaint": a.inpaint, "patch": a.patch, "sigma_k": a.sigma_k,
            "adain_ref": a.adain_ref, "hist_ref": a.hist_ref, "tile": a.tile, "attenuate": a.attenuate,
        }),
        Some(seed),
    )?;
    manifest.add_input(&a.input)?;
    for r in [&a.adain_ref, &a.hist_ref].into_iter().flatten() {
        manifest.add_input(r)?;
    }
    let mut masked = 0usize;
    for (i, path) in inputs.iter().enumerate() {
        let img = png::read_image(path)?;
        let style = match (&adain_ref, hist_refs.is_empty()) {
            (Some(s), _) => Some(StyleReference::Adain(s)),
            (None, false) => Some(StyleReference::HistMatch(&hist_refs[i % hist_refs.len()], hist_cfg)),
            (None, true) => None,
        };
        let (out, mask) = preprocess_frame(&img, &steps, style)?;
        let name = path.file_name().expect("listed file");
        png::write_image(&staging.path().join(name), &out)?;
        if let (Some(m), true) = (&mask, a.specular_mask) {
            let stem = path.file_stem().expect("listed file").to_string_lossy();
            png::write_mask(&staging.path().join(format!("{stem}_mask.png")), m)?;
        }
        masked += mask.map_or(0, |m| m.as_slice().iter().filter(|&&x| x).count());
        log::debug!("{}", path.display());
    }
    manifest.summary = json!({ "n_images": inputs.len(), "specular_pixels": masked });
    Ok(staging.commit(manifest)?.summary)
}

fn eval(a: &EvalArgs, seed: u64) -> CmdResult {
    require_dir(&a.pred)?;
    require_dir(&a.gt)?;
    let pred = io::load_depth_dir(&a.pred)?.cast::<f64>();
    let gt = io::load_depth_dir(&a.gt)?.cast::<f64>();
    let domain = match a.domain {
        DomainArg::Depth => AlignmentDomain::Depth,
        DomainArg::Disparity => AlignmentDomain::Disparity,
    };
    let bootstrap = (a.bootstrap > 0).then(|| BootstrapConfig {
        n_resamples: a.bootstrap,
        seed,
        unit: match a.resample {
            UnitArg::Frame => ResampleUnit::Frame,
            UnitArg::Pixel => ResampleUnit::Pixel,
        },
        ..Default::default()
    });
    let report = evaluate(&pred, &gt, domain, bootstrap.as_ref())?;
    let mut manifest = RunManifest::new("eval", &json!({ "domain": domain, "bootstrap": bootstrap }), Some(seed))?;
    manifest.add_input(&a.pred)?;
    manifest.add_input(&a.gt)?;
    let mut files = AtomicFiles::new();
    jsonio::write_json(&files.stage(&a.out)?, &report)?;
    manifest.summary = serde_json::to_value(&report).expect("serializable");
    Ok(files.commit(manifest, &manifest_path_for(&a.out))?.summary)
}

fn poses(a: &PosesArgs, seed: u64) -> CmdResult {
    let tracks = jsonio::read_tracks(&a.tracks)?;
    let k = jsonio::read_intrinsics(&a.intrinsics)?;
    let n = match (a.frames, tracks.max_frame()) {
        (Some(n), _) => n,
        (None, Some(m)) => m + 1,
        (None, None) => return Err(config_error("no tracks and no --frames given")),
    };
    let mut config = TrajectoryConfig {
        window: a.window,
        overlap: a.overlap,
        depth_weight: a.depth_weight,
        huber_delta: (a.huber > 0.0).then_some(a.huber),
        ..Default::default()
    };
    config.solver.jacobian = match a.jacobian {
        JacobianArg::Fd => JacobianMode::FiniteDifference,
        JacobianArg::Analytic => JacobianMode::Analytic,
    };
    log::info!("{} tracks over {n} frames", tracks.len());
    let estimate = estimate_trajectory(&tracks, &vec![k; n], &config)?;
    if let Some(w) = estimate.windows.iter().find(|w| !w.converged) {
        return Err(Failure {
            code: exit::NUMERICAL,
            message: format!("bundle adjustment of frames {}..{} did not converge", w.start, w.start + w.len),
            summary: None,
        });
    }
    let mut manifest = RunManifest::new("poses", &config, Some(seed))?;
    manifest.add_input(&a.tracks)?;
    manifest.add_input(&a.intrinsics)?;
    let mut files = AtomicFiles::new();
    jsonio::write_poses(&files.stage(&a.out)?, &estimate.poses)?;
    manifest.summary = json!({ "n_frames": n, "n_tracks": tracks.len(), "windows": estimate.windows });
    Ok(files.commit(manifest, &manifest_path_for(&a.out))?.summary)
}

fn reconstruct(a: &ReconstructArgs, seed: u64) -> CmdResult {
    require_dir(&a.depth)?;
    let depths = io::load_depth_dir(&a.depth)?;
    let poses = jsonio::read_poses(&a.poses)?;
    let k = jsonio::read_intrinsics(&a.intrinsics)?;
    let colors = match &a.rgb {
        Some(dir) => Some(
            pngs_with_suffix(dir, "_intensity.png")?
                .iter()
                .map(|p| png::read_rgb8(p))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let labels = match &a.labels {
        Some(dir) => Some(
            pngs_with_suffix(dir, "_label.png")?
                .iter()
                .map(|p| png::read_gray8(p))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let mut cloud = fuse(&depths, &poses, &k, colors.as_deref(), labels.as_deref(), a.stride)?;
    let fused = cloud.len();
    if let Some(v) = a.voxel {
        cloud = voxel_downsample(&cloud, v)?;
    }
    let mut manifest = RunManifest::new(
        "reconstruct",
        &json!({ "stride": a.stride, "voxel": a.voxel, "ascii": a.ascii }),
        Some(seed),
    )?;
    for p in [Some(&a.depth), Some(&a.poses), Some(&a.intrinsics), a.rgb.as_ref(), a.labels.as_ref()].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    let encoding = if a.ascii { ply::PlyEncoding::Ascii } else { ply::PlyEncoding::BinaryLittleEndian };
    let mut files = AtomicFiles::new();
    ply::write(&files.stage(&a.out)?, &cloud, encoding)?;
    manifest.summary = json!({ "n_fused": fused, "n_points": cloud.len() });
    Ok(files.commit(manifest, &manifest_path_for(&a.out))?.summary)
}

fn coverage(a: &CoverageArgs, seed: u64) -> CmdResult {
    let cloud = ply::read(&a.cloud)?;
    let config = CoverageConfig {
        n_s: a.bins.0 as usize,
        n_theta: a.bins.1 as usize,
        open_radius: a.open,
        close_radius: a.close,
    };
    let hint = a.hint.map(|[x, y, z]| endodepth::nalgebra::Vector3::new(x, y, z));
    let (map, summary) = assess(&cloud, hint.as_ref(), &config)?;
    let mut manifest = RunManifest::new("coverage", &json!({ "config": config, "hint": a.hint }), Some(seed))?;
    manifest.add_input(&a.cloud)?;
    let mut files = AtomicFiles::new();
    png::write_gray8(&files.stage(&a.out)?, &map_to_image(&map))?;
    jsonio::write_json(&files.stage(&a.summary)?, &summary)?;
    manifest.summary = serde_json::to_value(summary).expect("serializable");
    Ok(files.commit(manifest, &manifest_path_for(&a.summary))?.summary)
}

fn pipeline(a: &PipelineArgs, seed: u64) -> CmdResult {
    let mut config: PipelineConfig = match &a.config {
        Some(p) => jsonio::read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = a.frames {
        config.scene.trajectory.n_frames = n;
    }
    if let Some(Size(w, h)) = a.size {
        config.scene.trajectory.width = w;
        config.scene.trajectory.height = h;
    }
    let config = config.with_seed(seed);
    match run_pipeline(&config, &a.out, Some(seed)) {
        Ok((manifest, _)) => Ok(manifest.summary),
        Err(e) => Err(Failure {
            code: e.exit_code(),
            message: format!("pipeline stopped at stage {}: {e}", e.stage()),
            summary: None,
        }),
    }
}

fn validate(a: &ValidateArgs) -> CmdResult {
    require_dir(&a.dir)?;
    let report = validate_formats(&a.dir);
    for f in &report.files {
        match f.status {
            CheckStatus::Pass => log::info!("pass {}: {}", f.path.display(), f.message),
            CheckStatus::Warn => log::warn!("warn {}: {}", f.path.display(), f.message),
            CheckStatus::Fail => log::error!("FAIL {}: {}", f.path.display(), f.message),
        }
    }
    let summary = serde_json::to_value(&report).expect("serializable");
    if report.passed() {
        Ok(summary)
    } else {
        Err(Failure {
            code: exit::VALIDATION,
            message: format!("{} of {} files failed validation", report.count(CheckStatus::Fail), report.files.len()),
            summary: Some(summary),
        })
    }
}
