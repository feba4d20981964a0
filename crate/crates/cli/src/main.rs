use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use vesselseg::data::{
    extract_patch_grid, filter_by_label_area, normalize, read_gray, read_manifest, read_patch_cache, read_pgm,
    split_train_val, write_manifest, write_patch_cache, write_pgm, Domain, GrayImage, ManifestEntry, PatchRecord,
};
use vesselseg::harness::{
    run_consistency, run_robustness, run_subcumulative, RobustnessOptions, Segmenter, Transform, DEFAULT_GATES,
};
use vesselseg::mask::BinaryMask;
use vesselseg::nn::gradcheck::check_all_ops;
use vesselseg::phantom::{gen_phantom, gen_stream, MotionModel, PhantomParams, StreamParams, Style};
use vesselseg::segresnet::{gradcheck_network, load_weights, Model, ModelConfig};
use vesselseg::stream::{
    accumulate, measure_latency, read_stream, roi_crop_centered, subcumulative_windows, write_stream, FrameStream,
    GateSpec,
};
use vesselseg::trainer::{finetune, train, TrainConfig};
use vesselseg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vesselseg",
    version,
    about = "Vessel segmentation pipeline: phantoms, training, streams, experiments"
)]
struct Cli {
    /// Seed for every random draw; overrides seeds from config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic phantoms with exact masks and a manifest.
    GenPhantom(GenPhantomArgs),
    /// Render a 16-bit frame stream from a phantom image.
    GenStream(GenStreamArgs),
    /// Cut manifest images into a filtered patch cache.
    PreparePatches(PrepareArgs),
    /// Train from scratch on source-domain patches.
    Pretrain(TrainArgs),
    /// Fine-tune pretrained weights on target-domain patches.
    Finetune(TrainArgs),
    /// Segment one image.
    Infer(InferArgs),
    /// Segment the cumulative and gated sub-cumulative images of a stream.
    Stream(StreamArgs),
    /// Prediction stability under rotation and noise.
    EvalRobustness(RobustnessArgs),
    /// Agreement between repeated independent runs.
    EvalConsistency(ConsistencyArgs),
    /// Segmentation of gated accumulations against the full accumulation.
    EvalSubcum(SubcumArgs),
    /// Finite-difference check of every op and the tiny network.
    Gradcheck,
    /// Per-patch inference latency.
    Latency(LatencyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Source,
    Target,
}

#[derive(Args)]
struct GenPhantomArgs {
    #[arg(long, value_enum)]
    style: StyleArg,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    Static,
    Sin,
}

#[derive(Args)]
struct GenStreamArgs {
    #[arg(long)]
    phantom: PathBuf,
    /// Ground-truth mask copied next to the stream as `<out>.mask.pgm`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = 19.6)]
    fps: f32,
    #[arg(long, value_enum, default_value_t = MotionArg::Static)]
    motion: MotionArg,
    #[arg(long, default_value_t = 0.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 4.0)]
    period: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.25)]
    gain: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 6)]
    grid: usize,
    #[arg(long, default_value_t = 224)]
    patch: usize,
    #[arg(long, default_value_t = 0.05)]
    min_label: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// `key=value` file with training and model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Patch cache; a `source/` or `target/` subdirectory is used when present.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long)]
    out: PathBuf,
    /// Pretrained weights (required for fine-tuning).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value_t = 10)]
    gate: usize,
    /// Defaults to the gate (disjoint windows).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Directory of test images (`*.pgm`/`*.ppm`, masks excluded).
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    noise: f64,
    /// Compare whole masks instead of their largest components.
    #[arg(long)]
    no_largest_component: bool,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SubcumArgs {
    #[arg(long)]
    weights: PathBuf,
    /// `NAME=FILE`, repeatable.
    #[arg(long = "stream", required = true)]
    streams: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    gates: Option<Vec<usize>>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct LatencyArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenPhantom(a) => gen_phantoms(a, seed.unwrap_or(0)),
        Command::GenStream(a) => gen_stream_cmd(a, seed.unwrap_or(0)),
        Command::PreparePatches(a) => prepare(a),
        Command::Pretrain(a) => train_cmd(a, seed, false),
        Command::Finetune(a) => train_cmd(a, seed, true),
        Command::Infer(a) => infer(a),
        Command::Stream(a) => stream_cmd(a),
        Command::EvalRobustness(a) => robustness(a, seed.unwrap_or(0)),
        Command::EvalConsistency(a) => consistency(a, seed.unwrap_or(0)),
        Command::EvalSubcum(a) => subcum(a, seed.unwrap_or(0)),
        Command::Gradcheck => gradcheck(seed.unwrap_or(0)),
        Command::Latency(a) => latency(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn gen_phantoms(a: GenPhantomArgs, seed: u64) -> Result<()> {
    create_dir(&a.out)?;
    let style = match a.style {
        StyleArg::Source => Style::Source,
        StyleArg::Target => Style::Target,
    };
    let domain = match style {
        Style::Source => Domain::Source,
        Style::Target => Domain::Target,
    };
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count as u64 {
        let params = PhantomParams {
            size: a.size,
            style,
            seed: seed + i,
            ..PhantomParams::default()
        };
        let ph = gen_phantom(&params)?;
        let id = format!("{style}{}", params.seed);
        let (img, msk) = (format!("{id}.img.pgm"), format!("{id}.mask.pgm"));
        write_pgm(&ph.image.to_raw(65535), a.out.join(&img))?;
        write_pgm(&ph.mask.to_raw(), a.out.join(&msk))?;
        entries.push(ManifestEntry {
            image_path: img.into(),
            mask_path: msk.into(),
            domain,
            source_id: id,
        });
    }
    write_manifest(a.out.join("manifest.csv"), &entries)?;
    info!("wrote {} {style} phantoms to {}", a.count, a.out.display());
    Ok(())
}

fn gen_stream_cmd(a: GenStreamArgs, seed: u64) -> Result<()> {
    let phantom = read_gray(&a.phantom)?;
    let motion = match a.motion {
        MotionArg::Static => MotionModel::still(),
        MotionArg::Sin => MotionModel::sinusoidal(a.amplitude, a.period),
    };
    let params = StreamParams {
        n_frames: a.frames,
        fps: a.fps,
        motion,
        noise_scale: a.noise,
        gain: a.gain,
        seed,
    };
    let stream = gen_stream(&phantom, &params)?;
    write_stream(&stream, &a.out)?;
    if let Some(mask) = &a.mask {
        let raw = read_pgm(mask)?;
        if (raw.height, raw.width) != phantom.shape() {
            return Err(Error::Contract(format!(
                "mask {}x{} does not match phantom {:?}",
                raw.height,
                raw.width,
                phantom.shape()
            )));
        }
        write_pgm(&raw, sibling(&a.out, "mask.pgm"))?;
    }
    info!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

/// `dir/stem.ext` next to `path`, e.g. `s.cvs` -> `s.mask.pgm`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{ext}"))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let mut kept = [0usize; 2];
    let mut total = 0;
    for e in &entries {
        let image = normalize(&read_gray(&e.image_path)?);
        let mask = BinaryMask::from_raw(&read_pgm(&e.mask_path)?)?;
        let grid = extract_patch_grid(&image, &mask, a.grid, a.patch, true, &e.source_id, e.domain)?;
        total += grid.len();
        let records = filter_by_label_area(grid, a.min_label);
        kept[(e.domain == Domain::Target) as usize] += records.len();
        write_patch_cache(a.out.join(e.domain.to_string()), &records)?;
    }
    info!("kept {} source and {} target patches of {total}", kept[0], kept[1]);
    Ok(())
}

/// Splits a combined `key=value` file into training and model settings.
fn load_configs(path: Option<&Path>, base: TrainConfig) -> Result<(TrainConfig, ModelConfig, bool)> {
    let mut train_cfg = base;
    let mut model_cfg = ModelConfig::default();
    let mut model_keys = false;
    let Some(path) = path else {
        return Ok((train_cfg, model_cfg, false));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}: expected key=value, got {line:?}", path.display())))?;
        let k = k.trim();
        if model_cfg.set_kv(k, v)? {
            model_keys = true;
        } else if !train_cfg.set_kv(k, v)? {
            return Err(Error::Config(format!("{}: unknown key {k:?}", path.display())));
        }
    }
    Ok((train_cfg, model_cfg, model_keys))
}

fn train_cmd(a: TrainArgs, seed: Option<u64>, fine: bool) -> Result<()> {
    let base = if fine {
        TrainConfig::finetune()
    } else {
        TrainConfig::default()
    };
    let (mut cfg, model_cfg, model_keys) = load_configs(a.config.as_deref(), base)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let domain = if fine { Domain::Target } else { Domain::Source };
    let sub = a.data.join(domain.to_string());
    let dir = if sub.is_dir() { sub } else { a.data.clone() };
    let records: Vec<PatchRecord> = read_patch_cache(&dir, domain)?;
    let (train_set, val_set) = split_train_val(records, a.val_frac, cfg.seed)?;
    info!(
        "{} training / {} validation patches from {}",
        train_set.len(),
        val_set.len(),
        dir.display()
    );
    let outcome = if fine {
        let init = a
            .init
            .as_ref()
            .ok_or_else(|| Error::Config("finetune needs --init WEIGHTS".into()))?;
        finetune(init, model_keys.then_some(&model_cfg), &train_set, &val_set, &cfg)?
    } else {
        if a.init.is_some() {
            return Err(Error::Config(
                "pretrain starts from scratch; use finetune with --init".into(),
            ));
        }
        let mut model = Model::build(&model_cfg, cfg.seed)?;
        train(&mut model, &train_set, &val_set, &cfg)?
    };
    outcome.write_artifacts(&a.out)?;
    info!(
        "best epoch {}: val loss {:.5}, val Dice {:.4}",
        outcome.best.log.epoch, outcome.best.log.val_loss, outcome.best.log.val_dice
    );
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let (roi, anchor) = roi_crop_centered(&read_gray(&a.image)?, model.config().patch_size)?;
    let mask = model.segment(&roi)?;
    write_pgm(&mask.to_raw(), &a.out)?;
    info!(
        "{}x{} ROI at {anchor:?}: {:.2}% vessel",
        roi.height(),
        roi.width(),
        100.0 * mask.fraction()
    );
    Ok(())
}

fn stream_roi(stream: &FrameStream, start: usize, count: usize, patch: usize) -> Result<GrayImage> {
    Ok(roi_crop_centered(&accumulate(stream, start, count)?, patch)?.0)
}

fn stream_cmd(a: StreamArgs) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let patch = model.config().patch_size;
    let stream = read_stream(&a.stream)?;
    create_dir(&a.out)?;
    let full = model.segment(&stream_roi(&stream, 0, stream.n_frames(), patch)?)?;
    write_pgm(&full.to_raw(), a.out.join("cumulative.mask.pgm"))?;
    let spec = GateSpec {
        gate_frames: a.gate,
        stride_frames: a.stride.unwrap_or(a.gate),
    };
    let path = a.out.join("windows.csv");
    let csv_err = |e: csv::Error| Error::Io {
        path: path.clone(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["start", "frames", "duration_s", "vessel_fraction", "mask"])
        .map_err(csv_err)?;
    for win in subcumulative_windows(&stream, spec)? {
        let (roi, _) = roi_crop_centered(&win.image, patch)?;
        let mask = model.segment(&roi)?;
        let name = format!("window_{:05}.mask.pgm", win.start);
        write_pgm(&mask.to_raw(), a.out.join(&name))?;
        w.write_record([
            win.start.to_string(),
            win.frames.to_string(),
            format!("{:.4}", win.duration_s),
            format!("{:.6}", mask.fraction()),
            name,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(())
}

/// Test images of a directory in name order, skipping masks.
fn load_images(dir: &Path, patch: usize) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name.ends_with(".pgm") || name.ends_with(".ppm")) && !name.ends_with(".mask.pgm")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Contract(format!("no images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok(roi_crop_centered(&read_gray(p)?, patch)?.0))
        .collect()
}

fn robustness(a: RobustnessArgs, seed: u64) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let images = load_images(&a.images, model.config().patch_size)?;
    let opts = RobustnessOptions {
        transforms: vec![Transform::Rot90(1), Transform::Rot90(2), Transform::Noise(a.noise)],
        largest_component: !a.no_largest_component,
        seed,
        ..RobustnessOptions::default()
    };
    let report = run_robustness(&model, &images, &opts)?;
    for t in &opts.transforms {
        let g = t.to_string();
        info!(
            "{g}: Dice {:.3} ± {:.3}",
            report.summary_value(&g, "dice_mean").unwrap_or(f64::NAN),
            report.summary_value(&g, "dice_std").unwrap_or(f64::NAN)
        );
    }
    report.write_csv(&a.report)
}

fn consistency(a: ConsistencyArgs, seed: u64) -> Result<()> {
    let patch = load_weights(&a.weights)?.config().patch_size;
    let images = load_images(&a.images, patch)?;
    let report = run_consistency(|| load_weights(&a.weights), &images, a.repeats, seed)?;
    if let Some(d) = report.summary_value("pairwise", "dice_mean") {
        info!("mean pairwise Dice {d:.4}");
    }
    report.write_csv(&a.report)
}

fn subcum(a: SubcumArgs, seed: u64) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let patch = model.config().patch_size;
    let mut named = Vec::new();
    for s in &a.streams {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--stream expects NAME=FILE, got {s:?}")))?;
        let stream = read_stream(path)?;
        let (h, w) = (stream.height(), stream.width());
        if h % patch != 0 || w % patch != 0 {
            return Err(Error::Contract(format!(
                "stream {name} is {h}x{w}; sub-cumulative evaluation needs multiples of {patch}"
            )));
        }
        named.push((name.to_string(), stream));
    }
    let gates = a.gates.unwrap_or_else(|| DEFAULT_GATES.to_vec());
    let refs: Vec<(&str, &FrameStream)> = named.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let report = run_subcumulative(&model, &refs, &gates, seed)?;
    for (name, _) in &refs {
        info!(
            "{name}: Spearman(gate, Dice) {:.3}",
            report.summary_value(name, "spearman_gate_dice").unwrap_or(f64::NAN)
        );
    }
    report.write_csv(&a.report)
}

fn gradcheck(seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    for c in check_all_ops(seed)? {
        println!("{:<12} seed {seed}: max rel err {:.3e}", c.op, c.max_rel_error);
        worst = worst.max(c.max_rel_error);
    }
    let net = gradcheck_network(&ModelConfig::tiny(), seed, 40, 1e-4)?;
    println!("{:<12} seed {seed}: max rel err {net:.3e}", "network");
    if worst >= 1e-3 || net >= 3e-3 {
        return Err(Error::Contract(format!(
            "gradient check failed: ops {worst:.3e} (tol 1e-3), network {net:.3e} (tol 3e-3)"
        )));
    }
    Ok(())
}

fn latency(a: LatencyArgs) -> Result<()> {
    let model = match &a.weights {
        Some(p) => load_weights(p)?,
        None => Model::build(&ModelConfig::tiny(), 0)?,
    };
    let stats = measure_latency(&model, a.warmup, a.trials)?;
    println!("{}", stats.summary());
    if let Some(out) = &a.out {
        stats.write_csv(out)?;
    }
    Ok(())
}
