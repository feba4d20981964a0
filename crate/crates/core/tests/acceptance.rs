//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vesselseg::data::{
    augment, extract_patch_grid, filter_by_label_area,
    pnm::{decode_pnm, encode_pgm},
    AugmentPolicy, Domain, GrayImage, PatchRecord, RawImage,
};
use vesselseg::harness::{run_consistency, run_robustness, run_subcumulative, RobustnessOptions, DEFAULT_GATES};
use vesselseg::loss::{bce_loss, combined_loss, dice_loss, LossWeights};
use vesselseg::mask::BinaryMask;
use vesselseg::metrics::{dice_score, iou_score};
use vesselseg::nn::gradcheck::check_all_ops;
use vesselseg::nn::Tensor;
use vesselseg::phantom::{gen_phantom, gen_stream, phantom_patches, MotionModel, PhantomParams, StreamParams, Style};
use vesselseg::segresnet::{decode_weights, encode_weights, gradcheck_network, save_weights, Model, ModelConfig};
use vesselseg::stream::{decode_stream, encode_stream, measure_latency, roi_crop_multiple, tiled_infer, FrameStream};
use vesselseg::trainer::{evaluate_dataset, finetune_from_bytes, train, TrainConfig};

const OP_GRAD_TOL: f64 = 1e-3;
const NET_GRAD_TOL: f64 = 3e-3;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const PERFECT_DICE_LOSS_MAX: f64 = 1e-4;
const LN2_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-12;

const SOURCE_TRAIN: usize = 512;
const SOURCE_VAL: usize = 64;
const TARGET_TRAIN: usize = 64;
const TARGET_VAL: usize = 32;
const PRETRAIN_EPOCHS: usize = 6;
const FINETUNE_EPOCHS: usize = 10;
const TRANSFER_DICE_MIN: f64 = 0.75;
const TRANSFER_BUDGET: Duration = Duration::from_secs(15 * 60);

const ROBUST_IMAGES: u64 = 20;
const ROBUST_DICE_MIN: f64 = 0.70;

const STREAM_NOISE: f64 = 0.25;
const STREAM_SEED: u64 = 7;
const MOTION_AMPLITUDE_PX: f64 = 3.0;
const MOTION_PERIOD_S: f64 = 4.0;
/// Long enough that a 120-frame gate is not the whole stream.
const MOTION_FRAMES: usize = 240;
const SPEARMAN_MIN: f64 = 0.8;

const STREAM_RATE_FPS: f64 = 19.6;
const AUG_TRIALS: u64 = 10_000;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lift<T>(r: vesselseg::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("error[{}]: {e}", e.category()))
}

// 1
fn gradients() -> Check {
    let t = Instant::now();
    let mut worst_op = 0.0f64;
    let mut worst_net = 0.0f64;
    for seed in 0..GRAD_SEEDS {
        for c in lift(check_all_ops(seed))? {
            worst_op = worst_op.max(c.max_rel_error);
        }
        worst_net = worst_net.max(lift(gradcheck_network(&ModelConfig::tiny(), seed, 40, 1e-4))?);
    }
    let el = t.elapsed();
    ensure(
        worst_op < OP_GRAD_TOL && worst_net < NET_GRAD_TOL && el < GRAD_BUDGET,
        format!("ops max rel err {worst_op:.2e} (< {OP_GRAD_TOL:.0e}), network {worst_net:.2e} (< {NET_GRAD_TOL:.0e}), {GRAD_SEEDS} seeds, {:.1} s", el.as_secs_f64()),
    )
}

// 2
fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth: Vec<BinaryMask> = (0..3)
        .map(|_| BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(0.3)))
        .collect();
    let perfect: Tensor = lift(Tensor::from_vec(
        &[3, 1, 16, 16],
        truth.iter().flat_map(|m| m.to_values::<f32>()).collect(),
    ))?;
    let dl = lift(dice_loss(&perfect, &truth, 1e-5))?.value;
    let half: Tensor = Tensor::full(&[3, 1, 16, 16], 0.5);
    let bce = lift(bce_loss(&half, &truth))?.value;
    let pred: Tensor<f64> = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.random_range(0.01..0.99));
    let w = LossWeights::default();
    let c = lift(combined_loss(&pred, &truth, &w))?;
    let recomposed =
        1.0 * lift(dice_loss(&pred, &truth, w.dice_smooth))?.value + 0.1 * lift(bce_loss(&pred, &truth))?.value;
    let comb_err = (c.total - recomposed).abs();
    let mut id_err = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(0.05..0.95);
        let a = BinaryMask::from_fn(12, 12, |_, _| rng.random_bool(p));
        let b = BinaryMask::from_fn(12, 12, |_, _| rng.random_bool(p));
        let (d, i) = (lift(dice_score(&a, &b))?, lift(iou_score(&a, &b))?);
        id_err = id_err.max((d - 2.0 * i / (1.0 + i)).abs());
    }
    ensure(
        dl <= PERFECT_DICE_LOSS_MAX
            && (bce - std::f64::consts::LN_2).abs() <= LN2_TOL
            && comb_err <= IDENTITY_TOL
            && id_err <= IDENTITY_TOL,
        format!(
            "dice_loss(perfect) {dl:.2e}, bce(0.5) - ln2 {:.2e}, recomposition err {comb_err:.1e}, Dice/IoU identity err {id_err:.1e} over 100 pairs",
            bce - std::f64::consts::LN_2
        ),
    )
}

struct Pipeline {
    pretrained: Vec<u8>,
    finetuned: Vec<u8>,
    scratch: Vec<u8>,
    ft_dice: f64,
    scratch_dice: f64,
    zero_shot_dice: f64,
    n_source: usize,
    masks: Vec<BinaryMask>,
    elapsed: Duration,
}

fn target_params(seed: u64) -> PhantomParams {
    PhantomParams {
        style: Style::Target,
        seed,
        ..PhantomParams::default()
    }
}

fn run_pipeline() -> Result<Pipeline, String> {
    let t = Instant::now();
    let source = lift(phantom_patches(&PhantomParams::default(), 80, 32, 0.05))?;
    let target = lift(phantom_patches(&target_params(10_000), 40, 32, 0.05))?;
    let test = lift(phantom_patches(&target_params(20_000), 30, 32, 0.05))?;
    if source.len() < SOURCE_TRAIN + SOURCE_VAL || target.len() < TARGET_TRAIN + TARGET_VAL {
        return Err(format!(
            "too few patches: {} source, {} target",
            source.len(),
            target.len()
        ));
    }
    let (s_train, rest) = source.split_at(SOURCE_TRAIN);
    let s_val = &rest[..SOURCE_VAL];
    let (t_train, rest) = target.split_at(TARGET_TRAIN);
    let t_val = &rest[..TARGET_VAL];

    let config = ModelConfig::tiny();
    let mut model = lift(Model::build(&config, 0))?;
    let pre = lift(train(&mut model, s_train, s_val, &TrainConfig::desk(PRETRAIN_EPOCHS)))?;
    let ft_cfg = TrainConfig::desk(FINETUNE_EPOCHS);
    let ft = lift(finetune_from_bytes(
        &pre.best.weights,
        "pretrained",
        Some(&config),
        t_train,
        t_val,
        &ft_cfg,
    ))?;
    let mut scratch_model = lift(Model::build(&config, 0))?;
    let scratch = lift(train(&mut scratch_model, t_train, t_val, &ft_cfg))?;

    let ft_model = lift(ft.best.model())?;
    let dice = |m: &Model| lift(evaluate_dataset(m, &test)).map(|r| r.dice.mean);
    let masks = test
        .iter()
        .map(|r| lift(tiled_infer(&ft_model, &r.image, 32)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pipeline {
        ft_dice: dice(&ft_model)?,
        scratch_dice: dice(&lift(scratch.best.model())?)?,
        zero_shot_dice: dice(&lift(pre.best.model())?)?,
        pretrained: pre.best.weights,
        finetuned: ft.best.weights,
        scratch: scratch.best.weights,
        n_source: s_train.len(),
        masks,
        elapsed: t.elapsed(),
    })
}

// 3
fn transfer(p: &Pipeline) -> Check {
    ensure(
        p.n_source >= SOURCE_TRAIN
            && p.ft_dice >= TRANSFER_DICE_MIN
            && p.ft_dice >= p.scratch_dice
            && p.elapsed < TRANSFER_BUDGET,
        format!(
            "{} source / {TARGET_TRAIN} target patches; held-out target Dice fine-tuned {:.4} (>= {TRANSFER_DICE_MIN}), scratch {:.4}, pretrained only {:.4}; {:.0} s",
            p.n_source,
            p.ft_dice,
            p.scratch_dice,
            p.zero_shot_dice,
            p.elapsed.as_secs_f64()
        ),
    )
}

// 4
fn robustness(model: &Model) -> Check {
    let images = (0..ROBUST_IMAGES)
        .map(|i| lift(gen_phantom(&target_params(30_000 + i))).map(|p| p.image))
        .collect::<Result<Vec<_>, _>>()?;
    let report = lift(run_robustness(model, &images, &RobustnessOptions::default()))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("robustness.csv");
    lift(report.write_csv(&path))?;
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for t in ["rot90", "rot180", "noise0.1"] {
        let mean = report.summary_value(t, "dice_mean").unwrap_or(f64::NAN);
        let std = report.summary_value(t, "dice_std").unwrap_or(f64::NAN);
        let in_csv = text.contains(&format!("summary,{t},all,dice_mean,"))
            && text.contains(&format!("summary,{t},all,dice_std,"));
        ok &= mean >= ROBUST_DICE_MIN && in_csv && report.case_values(t, "dice").len() == ROBUST_IMAGES as usize;
        parts.push(format!("{t} {mean:.3} ± {std:.3}"));
    }
    ensure(
        ok,
        format!(
            "{ROBUST_IMAGES} target images, Dice vs reference: {} (min {ROBUST_DICE_MIN})",
            parts.join(", ")
        ),
    )
}

// 5
fn subcumulative(model: &Model) -> Check {
    let phantom = lift(gen_phantom(&target_params(40_000)))?.image;
    let base = StreamParams {
        noise_scale: STREAM_NOISE,
        seed: STREAM_SEED,
        ..StreamParams::default()
    };
    let fixed = lift(gen_stream(&phantom, &StreamParams { n_frames: 120, ..base }))?;
    let motion = MotionModel::sinusoidal(MOTION_AMPLITUDE_PX, MOTION_PERIOD_S);
    let moving = lift(gen_stream(
        &phantom,
        &StreamParams {
            n_frames: MOTION_FRAMES,
            motion,
            ..base
        },
    ))?;
    let r = lift(run_subcumulative(
        model,
        &[("static", &fixed), ("motion", &moving)],
        &DEFAULT_GATES,
        STREAM_SEED,
    ))?;
    let full = r.case_values("static/g120", "dice");
    let rho = r.summary_value("static", "spearman_gate_dice").unwrap_or(f64::NAN);
    let motion_dice = r.summary_value("motion/g120", "dice_mean").unwrap_or(f64::NAN);
    let static_dice = r.summary_value("static/g120", "dice_mean").unwrap_or(f64::NAN);
    let d10 = r.summary_value("static/g10", "duration_s").unwrap_or(f64::NAN);
    let d120 = r.summary_value("static/g120", "duration_s").unwrap_or(f64::NAN);
    let durations = format!("{d10:.2}/{d120:.2}");
    let curve: Vec<String> = DEFAULT_GATES
        .iter()
        .map(|g| {
            format!(
                "{:.3}",
                r.summary_value(&format!("static/g{g}"), "dice_mean")
                    .unwrap_or(f64::NAN)
            )
        })
        .collect();
    ensure(
        full == [1.0] && rho >= SPEARMAN_MIN && motion_dice < static_dice && durations == "0.51/6.12",
        format!(
            "static Dice(120) {:?}, Spearman {rho:.3} (>= {SPEARMAN_MIN}), gate-120 Dice motion {motion_dice:.4} < static {static_dice:.4}, durations {durations} s; static curve [{}]",
            full,
            curve.join(" ")
        ),
    )
}

// 6
fn determinism(a: &Pipeline, b: &Pipeline) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("best.srw");
    std::fs::write(&path, &a.finetuned).map_err(|e| e.to_string())?;
    let images = (0..3)
        .map(|i| lift(gen_phantom(&target_params(50_000 + i))).map(|p| p.image))
        .collect::<Result<Vec<_>, _>>()?;
    let report = lift(run_consistency(
        || vesselseg::segresnet::load_weights(&path),
        &images,
        3,
        0,
    ))?;
    let pair_dice = report.case_values("pairwise", "dice");
    let pair_biou = report.case_values("pairwise", "boundary_iou");
    let all_one = !pair_dice.is_empty() && pair_dice.iter().chain(&pair_biou).all(|&v| v == 1.0);
    let same = a.pretrained == b.pretrained && a.finetuned == b.finetuned && a.scratch == b.scratch;
    ensure(
        same && a.masks == b.masks && all_one,
        format!(
            "checkpoints identical: {same}, {} masks identical: {}, {} pairwise Dice/boundary IoU all 1.0: {all_one}",
            a.masks.len(),
            a.masks == b.masks,
            pair_dice.len()
        ),
    )
}

// 7
fn throughput() -> Check {
    let model = lift(Model::build(&ModelConfig::tiny(), 0))?;
    let stats = lift(measure_latency(&model, 20, 200))?;
    let summary = stats.summary();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    lift(stats.write_csv(dir.path().join("latency.csv")))?;
    let labeled = summary.contains("0.7 ms") && summary.contains("reference") && summary.contains("GPU");
    ensure(
        stats.throughput() >= STREAM_RATE_FPS && labeled && stats.p50 <= stats.p99,
        format!(
            "tiny config: mean {:.3} ms, p50 {:.3} ms, p99 {:.3} ms, {:.0} patches/s (>= {STREAM_RATE_FPS}); GPU figure labeled as reference: {labeled}",
            stats.mean * 1e3,
            stats.p50 * 1e3,
            stats.p99 * 1e3,
            stats.throughput()
        ),
    )
}

// 8
fn formats(weights: &[u8]) -> Check {
    let model = lift(decode_weights(weights, "mem"))?;
    let srw_ok = encode_weights(&model) == weights;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let wpath = dir.path().join("w.srw");
    lift(save_weights(&model, &wpath))?;
    let file_ok = std::fs::read(&wpath).map_err(|e| e.to_string())? == weights;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pgm_ok = true;
    for maxval in [255u16, 65535] {
        let samples: Vec<u16> = (0..37 * 23).map(|_| rng.random_range(0..=maxval)).collect();
        let raw = lift(RawImage::new(37, 23, 1, maxval, samples))?;
        let back = lift(decode_pnm(&lift(encode_pgm(&raw))?, "mem"))?;
        pgm_ok &= back == raw;
    }
    let frames: Vec<Vec<u16>> = (0..3)
        .map(|i| (0..65536u32).map(|v| (v as u16).wrapping_add(i)).collect())
        .collect();
    let stream = lift(FrameStream::new(256, 256, 19.6, frames))?;
    let cvs_ok = lift(decode_stream(&encode_stream(&stream), "mem"))? == stream;

    let mut bad = weights.to_vec();
    bad[0] = b'X';
    let srw_bad = decode_weights(&bad, "mem").err().map(|e| e.category());
    let mut bad = encode_stream(&stream);
    bad[3] = b'0';
    let cvs_bad = decode_stream(&bad, "mem").err().map(|e| e.category());
    let pgm_bad = decode_pnm(b"Q5\n1 1\n255\n\0", "mem").err().map(|e| e.category());
    let rejected = [srw_bad, cvs_bad, pgm_bad].iter().all(|c| *c == Some("format"));
    ensure(
        srw_ok && file_ok && pgm_ok && cvs_ok && rejected,
        format!("SRW1 byte-identical: {}, PGM 8/16-bit lossless: {pgm_ok}, CVS1 lossless over all u16: {cvs_ok}, bad magic -> format: {rejected}", srw_ok && file_ok),
    )
}

// 9
fn pipeline_rules() -> Check {
    let mk = |count: usize| {
        let mask = BinaryMask::from_fn(20, 20, |y, x| y * 20 + x < count);
        lift(PatchRecord::new(
            GrayImage::filled(20, 20, 0.5),
            mask,
            "r",
            (0, 0),
            Domain::Source,
        ))
    };
    // 20 of 400 pixels is exactly 5%
    let kept = filter_by_label_area(vec![mk(20)?, mk(21)?], 0.05);
    let strict = kept.len() == 1 && kept[0].mask.count() == 21;

    let img = GrayImage::filled(1400, 1350, 0.3);
    let grid = lift(extract_patch_grid(
        &img,
        &BinaryMask::zeros(1400, 1350),
        6,
        224,
        true,
        "g",
        Domain::Source,
    ))?;
    let grid_ok = grid.len() == 36 && grid.iter().all(|r| r.image.shape() == (224, 224));

    let roi_img = GrayImage::filled(1000, 1000, 0.1);
    let roi_ok = lift(roi_crop_multiple(&roi_img, (0, 0), (4, 4), 224))?.shape() == (896, 896)
        && roi_crop_multiple(&roi_img, (0, 0), (5, 1), 224).is_err()
        && roi_crop_multiple(&roi_img, (0, 0), (1, 0), 224).is_err();

    // every one of the 8 flip/rotation outcomes is distinct on this mask
    let mask = BinaryMask::from_fn(4, 4, |y, x| (y, x) == (0, 1) || (y, x) == (0, 0) || (y, x) == (2, 0));
    let rec = lift(PatchRecord::new(
        GrayImage::from_fn(4, 4, |y, x| 0.25 + 0.5 * mask.get(y, x) as u8 as f32),
        mask.clone(),
        "a",
        (0, 0),
        Domain::Source,
    ))?;
    let policy = AugmentPolicy {
        seed: 9,
        ..AugmentPolicy::default()
    };
    let mut counts = [0u64; 6]; // flip, rot, noise, 90, 180, 270
    for i in 0..AUG_TRIALS {
        let out = augment(&rec, &policy, &mut policy.rng_for(i));
        let (flip, k) = (0..8)
            .map(|c| (c >= 4, c % 4))
            .find(|&(f, k)| {
                let m = if f { mask.flip_horizontal() } else { mask.clone() };
                m.rot90(k) == out.mask
            })
            .ok_or("unrecognised augmentation outcome")?;
        let clean = {
            let im = if flip {
                rec.image.flip_horizontal()
            } else {
                rec.image.clone()
            };
            im.rot90(k)
        };
        counts[0] += flip as u64;
        counts[1] += (k != 0) as u64;
        counts[2] += (out.image != clean) as u64;
        if k != 0 {
            counts[2 + k] += 1;
        }
    }
    let n = AUG_TRIALS as f64;
    let within = |count: u64, p: f64| ((count as f64) - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt();
    let p_angle = policy.p_rot / 3.0;
    let aug_ok = within(counts[0], policy.p_hflip)
        && within(counts[1], policy.p_rot)
        && within(counts[2], policy.p_noise)
        && (3..6).all(|j| within(counts[j], p_angle));
    ensure(
        strict && grid_ok && roi_ok && aug_ok,
        format!(
            "5% filter strict: {strict}, 6x6 grid -> 36 x 224^2: {grid_ok}, ROI N<=4: {roi_ok}, augmentation counts flip/rot/noise/90/180/270 = {counts:?} of {AUG_TRIALS} within 3 sigma: {aug_ok}"
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut record = |id: u32, name: &'static str, c: Check| results.push((id, name, c));
    record(1, "gradient correctness", gradients());
    record(2, "loss and metric identities", loss_identities());
    let first = run_pipeline();
    let second = run_pipeline();
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            record(3, "desk-scale transfer", transfer(a));
            match decode_weights(&a.finetuned, "fine-tuned") {
                Ok(m) => {
                    record(4, "robustness", robustness(&m));
                    record(5, "sub-cumulative behavior", subcumulative(&m));
                }
                Err(e) => {
                    record(4, "robustness", Err(e.to_string()));
                    record(5, "sub-cumulative behavior", Err(e.to_string()));
                }
            }
            record(6, "determinism and consistency", determinism(a, b));
            record(8, "format fidelity", formats(&a.finetuned));
        }
        (Err(e), _) | (_, Err(e)) => {
            for (id, name) in [
                (3, "desk-scale transfer"),
                (4, "robustness"),
                (5, "sub-cumulative behavior"),
                (6, "determinism and consistency"),
                (8, "format fidelity"),
            ] {
                record(id, name, Err(format!("pipeline failed: {e}")));
            }
        }
    }
    record(7, "throughput reporting", throughput());
    record(9, "pipeline rules", pipeline_rules());

    results.sort_by_key(|r| r.0);
    for (id, name, c) in &results {
        match c {
            Ok(d) => println!("PASS [{id}] {name}: {d}"),
            Err(d) => println!("FAIL [{id}] {name}: {d}"),
        }
    }
    let failed = results.iter().filter(|(_, _, c)| c.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
