use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{spearman, ExperimentReport, Section};
use crate::data::{add_gaussian_noise, GrayImage};
use crate::error::{Error, Result};
use crate::mask::{largest_component, BinaryMask, Connectivity};
use crate::metrics::{boundary_iou, dice_score, DEFAULT_BOUNDARY_DISTANCE};
use crate::segresnet::Model;
use crate::stream::{accumulate, gate_duration, subcumulative_windows, tiled_infer, FrameStream, GateSpec};

/// Anything that turns a patch-multiple image into a binary mask.
pub trait Segmenter {
    fn segment(&self, image: &GrayImage) -> Result<BinaryMask>;
}

impl Segmenter for Model {
    fn segment(&self, image: &GrayImage) -> Result<BinaryMask> {
        tiled_infer(self, image, self.config().patch_size)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn segment(&self, image: &GrayImage) -> Result<BinaryMask> {
        (**self).segment(image)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Identity,
    /// Counter-clockwise rotation by `k · 90°`.
    Rot90(usize),
    /// Additive Gaussian noise with this σ, clipped to `[0, 1]`.
    Noise(f64),
}

impl Transform {
    fn apply(self, image: &GrayImage, rng: &mut ChaCha8Rng) -> GrayImage {
        match self {
            Transform::Identity => image.clone(),
            Transform::Rot90(k) => image.rot90(k),
            Transform::Noise(sigma) => add_gaussian_noise(image, sigma, rng),
        }
    }

    /// Maps a prediction on the transformed input back to the original frame.
    fn invert(self, mask: &BinaryMask) -> BinaryMask {
        match self {
            Transform::Rot90(k) => mask.rot90((4 - k % 4) % 4),
            _ => mask.clone(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::Identity => write!(f, "identity"),
            Transform::Rot90(k) => write!(f, "rot{}", 90 * (k % 4)),
            Transform::Noise(s) => write!(f, "noise{s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessOptions {
    pub transforms: Vec<Transform>,
    /// Compare largest connected components instead of whole masks.
    pub largest_component: bool,
    pub connectivity: Connectivity,
    pub seed: u64,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        RobustnessOptions {
            transforms: vec![Transform::Rot90(1), Transform::Rot90(2), Transform::Noise(0.10)],
            largest_component: true,
            connectivity: Connectivity::Eight,
            seed: 0,
        }
    }
}

/// Dice of each transformed prediction against the untransformed one, with
/// per-transform mean, std and standard error.
pub fn run_robustness(
    model: &impl Segmenter,
    images: &[GrayImage],
    opts: &RobustnessOptions,
) -> Result<ExperimentReport> {
    let post = |m: BinaryMask| {
        if opts.largest_component {
            largest_component(&m, opts.connectivity)
        } else {
            m
        }
    };
    let mut report = ExperimentReport::new("robustness", opts.seed)
        .with_config(
            "transforms",
            opts.transforms
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        )
        .with_config("largest_component", opts.largest_component)
        .with_config("images", images.len());
    for (i, image) in images.iter().enumerate() {
        let reference = post(model.segment(image)?);
        for (t_idx, &t) in opts.transforms.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream((i * opts.transforms.len() + t_idx) as u64);
            let pred = post(t.invert(&model.segment(&t.apply(image, &mut rng))?));
            report.push(
                Section::Case,
                &t.to_string(),
                &i.to_string(),
                "dice",
                dice_score(&pred, &reference)?,
            );
        }
    }
    for t in &opts.transforms {
        report.summarize(&t.to_string(), "dice");
    }
    Ok(report)
}

/// Runs `n_repeats` independent pipelines per image, each with a freshly
/// loaded segmenter, and scores every pair of repeats against each other.
pub fn run_consistency<S: Segmenter>(
    mut load: impl FnMut() -> Result<S>,
    images: &[GrayImage],
    n_repeats: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if n_repeats == 0 {
        return Err(Error::contract("run_consistency needs at least one repeat"));
    }
    let mut report = ExperimentReport::new("consistency", seed)
        .with_config("n_repeats", n_repeats)
        .with_config("images", images.len());
    for (i, image) in images.iter().enumerate() {
        let mut masks = Vec::with_capacity(n_repeats);
        for r in 0..n_repeats {
            let t = Instant::now();
            let seg = load()?;
            masks.push(seg.segment(image)?);
            report.push(
                Section::Timing,
                "segment",
                &format!("{i}:{r}"),
                "seconds",
                t.elapsed().as_secs_f64(),
            );
        }
        for a in 0..n_repeats {
            for b in a + 1..n_repeats {
                let case = format!("{i}:{a}-{b}");
                report.push(
                    Section::Case,
                    "pairwise",
                    &case,
                    "dice",
                    dice_score(&masks[a], &masks[b])?,
                );
                let biou = boundary_iou(&masks[a], &masks[b], DEFAULT_BOUNDARY_DISTANCE)?;
                report.push(Section::Case, "pairwise", &case, "boundary_iou", biou);
            }
        }
    }
    if n_repeats > 1 {
        report.summarize("pairwise", "dice");
        report.summarize("pairwise", "boundary_iou");
    }
    Ok(report)
}

/// Gates of 10, 20, …, 120 frames.
pub const DEFAULT_GATES: [usize; 12] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];

/// For each named stream: the reference mask comes from the whole
/// accumulation; every disjoint window of every gate is scored against it.
/// Summary rows per `<stream>/g<gate>` hold the Dice mean and standard
/// error plus the gate duration; each stream also gets the Spearman
/// correlation between gate and mean Dice.
pub fn run_subcumulative(
    model: &impl Segmenter,
    streams: &[(&str, &FrameStream)],
    gates: &[usize],
    seed: u64,
) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("subcumulative", seed)
        .with_config(
            "gates",
            gates.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(";"),
        )
        .with_config("streams", streams.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(";"));
    for &(name, stream) in streams {
        let reference = model.segment(&accumulate(stream, 0, stream.n_frames())?)?;
        let mut means = Vec::with_capacity(gates.len());
        for &gate in gates {
            let group = format!("{name}/g{gate}");
            for w in subcumulative_windows(stream, GateSpec::disjoint(gate))? {
                let dice = dice_score(&model.segment(&w.image)?, &reference)?;
                report.push(Section::Case, &group, &w.start.to_string(), "dice", dice);
            }
            means.push(report.summarize(&group, "dice").mean);
            report.push(
                Section::Summary,
                &group,
                "all",
                "duration_s",
                gate_duration(gate, stream.fps()),
            );
        }
        let gates_f: Vec<f64> = gates.iter().map(|&g| g as f64).collect();
        report.push(
            Section::Summary,
            name,
            "all",
            "spearman_gate_dice",
            spearman(&gates_f, &means),
        );
    }
    Ok(report)
}
