use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::data::{images_to_tensor, GrayImage};
use crate::error::{Error, Result};
use crate::mask::{binarize, BinaryMask};
use crate::nn::Tensor;
use crate::segresnet::Model;

/// Largest grid side accepted by [`roi_crop_multiple`].
pub const MAX_ROI_PATCHES: usize = 4;

/// Per-patch GPU latency reported for the full-size network, in seconds.
/// Shown next to desk measurements for context; not a target.
pub const GPU_REFERENCE_SECONDS: f64 = 0.7e-3;

/// Tiles per inference batch in [`tiled_probabilities`].
const TILE_BATCH: usize = 8;

/// The `(nr·patch) × (nc·patch)` sub-image whose top-left corner is `anchor`.
pub fn roi_crop_multiple(
    image: &GrayImage,
    anchor: (usize, usize),
    n_patches: (usize, usize),
    patch: usize,
) -> Result<GrayImage> {
    let (nr, nc) = n_patches;
    if !(1..=MAX_ROI_PATCHES).contains(&nr) || !(1..=MAX_ROI_PATCHES).contains(&nc) {
        return Err(Error::contract(format!(
            "ROI grid {nr}x{nc} outside 1..={MAX_ROI_PATCHES} per side"
        )));
    }
    let (h, w) = (nr * patch, nc * patch);
    let (ih, iw) = image.shape();
    if anchor.0 + h > ih || anchor.1 + w > iw {
        return Err(Error::contract(format!(
            "ROI {h}x{w} at {anchor:?} exceeds image {ih}x{iw}: anchor row must be <= {}, col <= {}",
            ih as isize - h as isize,
            iw as isize - w as isize
        )));
    }
    image.crop(anchor.0, anchor.1, h, w)
}

/// The largest centered ROI of at most [`MAX_ROI_PATCHES`] patches per side.
/// Returns the crop and its top-left anchor.
pub fn roi_crop_centered(image: &GrayImage, patch: usize) -> Result<(GrayImage, (usize, usize))> {
    let (h, w) = image.shape();
    let (nr, nc) = (
        (h / patch.max(1)).min(MAX_ROI_PATCHES),
        (w / patch.max(1)).min(MAX_ROI_PATCHES),
    );
    if nr == 0 || nc == 0 {
        return Err(Error::contract(format!(
            "image {h}x{w} is smaller than one {patch}px patch"
        )));
    }
    let anchor = ((h - nr * patch) / 2, (w - nc * patch) / 2);
    Ok((roi_crop_multiple(image, anchor, (nr, nc), patch)?, anchor))
}

/// Runs each non-overlapping `patch × patch` tile through the model and
/// reassembles the probabilities in place.
pub fn tiled_probabilities(model: &Model, image: &GrayImage, patch: usize) -> Result<GrayImage> {
    let (h, w) = image.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 || h == 0 || w == 0 {
        return Err(Error::contract(format!(
            "tiled inference needs dims that are multiples of {patch}, got {h}x{w}; crop the ROI first"
        )));
    }
    let tiles: Vec<(usize, usize)> = (0..h / patch)
        .flat_map(|r| (0..w / patch).map(move |c| (r * patch, c * patch)))
        .collect();
    let mut out = GrayImage::filled(h, w, 0.0);
    for chunk in tiles.chunks(TILE_BATCH) {
        let crops = chunk
            .iter()
            .map(|&(y, x)| image.crop(y, x, patch, patch))
            .collect::<Result<Vec<_>>>()?;
        let prob: Tensor = model.predict(&images_to_tensor(&crops)?)?;
        for (k, &(y0, x0)) in chunk.iter().enumerate() {
            let tile = &prob.data()[k * patch * patch..(k + 1) * patch * patch];
            for y in 0..patch {
                for x in 0..patch {
                    out.set(y0 + y, x0 + x, tile[y * patch + x]);
                }
            }
        }
    }
    Ok(out)
}

/// [`tiled_probabilities`] binarized at 0.5.
pub fn tiled_infer(model: &Model, image: &GrayImage, patch: usize) -> Result<BinaryMask> {
    let prob = tiled_probabilities(model, image, patch)?;
    let (h, w) = prob.shape();
    binarize(&Tensor::from_vec(&[h, w], prob.data().to_vec())?, 0.5)
}

/// Wall-clock timings of single-patch inference.
#[derive(Clone, Debug)]
pub struct LatencyStats {
    /// Seconds per trial, in trial order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("latency stats need at least one sample"));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Ok(LatencyStats {
            mean,
            p50: percentile(&sorted, 50.0),
            p99: percentile(&sorted, 99.0),
            samples,
        })
    }

    /// Sustained patches per second implied by the mean.
    pub fn throughput(&self) -> f64 {
        1.0 / self.mean
    }

    /// CSV with header `trial,seconds`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["trial", "seconds"])
            .map_err(|e| Error::io(path, e.into()))?;
        for (i, s) in self.samples.iter().enumerate() {
            w.write_record([i.to_string(), format!("{s:.9}")])
                .map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        let mut out = Vec::new();
        let _ = writeln!(
            out,
            "latency over {} trials: mean {:.3} ms, p50 {:.3} ms, p99 {:.3} ms ({:.1} patches/s)",
            self.samples.len(),
            self.mean * 1e3,
            self.p50 * 1e3,
            self.p99 * 1e3,
            self.throughput()
        );
        let _ = write!(
            out,
            "reference: {:.1} ms per patch published for GPU inference of the full-size network",
            GPU_REFERENCE_SECONDS * 1e3
        );
        String::from_utf8(out).unwrap_or_default()
    }
}

/// Nearest-rank percentile of ascending `sorted`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times infer-mode forward passes on one patch of the model's size.
pub fn measure_latency(model: &Model, n_warmup: usize, n_trials: usize) -> Result<LatencyStats> {
    if n_trials < 10 {
        return Err(Error::contract(format!(
            "measure_latency needs >= 10 trials, got {n_trials}"
        )));
    }
    let p = model.config().patch_size;
    let c = model.config().in_channels;
    let input = Tensor::from_fn(&[1, c, p, p], |i| ((i * 2_654_435_761) % 1000) as f32 / 1000.0);
    for _ in 0..n_warmup {
        std::hint::black_box(model.predict(&input)?);
    }
    let mut samples = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let t = Instant::now();
        std::hint::black_box(model.predict(std::hint::black_box(&input))?);
        samples.push(t.elapsed().as_secs_f64());
    }
    LatencyStats::from_samples(samples)
}
