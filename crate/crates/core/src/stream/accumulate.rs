use super::FrameStream;
use crate::data::GrayImage;
use crate::error::{Error, Result};

/// Per-pixel 64-bit sum of frames `start .. start + count`.
pub fn accumulate_raw(stream: &FrameStream, start: usize, count: usize) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::contract("accumulate: empty frame range"));
    }
    if start + count > stream.n_frames() {
        return Err(Error::contract(format!(
            "accumulate: frames {start}..{} exceed stream length {}",
            start + count,
            stream.n_frames()
        )));
    }
    let mut sum = vec![0u64; stream.width() * stream.height()];
    for f in &stream.frames()[start..start + count] {
        for (acc, &s) in sum.iter_mut().zip(f) {
            *acc += s as u64;
        }
    }
    Ok(sum)
}

/// Min-max normalization of an integer image; a constant image maps to zeros.
pub fn normalize_counts(counts: &[u64], width: usize, height: usize) -> Result<GrayImage> {
    let lo = counts.iter().copied().min().unwrap_or(0);
    let hi = counts.iter().copied().max().unwrap_or(0);
    let range = (hi - lo) as f64;
    let data = counts
        .iter()
        .map(|&c| {
            if range > 0.0 {
                ((c - lo) as f64 / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    GrayImage::new(height, width, data)
}

/// Sum of frames `start .. start + count`, min-max normalized to `[0, 1]`.
pub fn accumulate(stream: &FrameStream, start: usize, count: usize) -> Result<GrayImage> {
    let sum = accumulate_raw(stream, start, count)?;
    normalize_counts(&sum, stream.width(), stream.height())
}

/// Time gate for sub-cumulative images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateSpec {
    pub gate_frames: usize,
    pub stride_frames: usize,
}

impl GateSpec {
    /// Disjoint windows of `gate` frames.
    pub fn disjoint(gate: usize) -> Self {
        GateSpec {
            gate_frames: gate,
            stride_frames: gate,
        }
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.gate_frames == 0 || self.gate_frames > n_frames {
            return Err(Error::contract(format!(
                "gate of {} frames outside 1..={n_frames}",
                self.gate_frames
            )));
        }
        if self.stride_frames == 0 {
            return Err(Error::contract("gate stride must be >= 1"));
        }
        Ok(())
    }
}

/// One sub-cumulative image.
#[derive(Clone, Debug)]
pub struct Window {
    pub start: usize,
    pub frames: usize,
    /// `frames / fps`.
    pub duration_s: f64,
    pub image: GrayImage,
}

/// Windows starting at `0, stride, 2·stride, …` while the whole gate fits.
pub fn subcumulative_windows(stream: &FrameStream, spec: GateSpec) -> Result<Vec<Window>> {
    spec.validate(stream.n_frames())?;
    let duration_s = gate_duration(spec.gate_frames, stream.fps());
    (0..=stream.n_frames() - spec.gate_frames)
        .step_by(spec.stride_frames)
        .map(|start| {
            Ok(Window {
                start,
                frames: spec.gate_frames,
                duration_s,
                image: accumulate(stream, start, spec.gate_frames)?,
            })
        })
        .collect()
}

/// Seconds covered by `frames` frames at `fps`.
pub fn gate_duration(frames: usize, fps: f32) -> f64 {
    frames as f64 / fps as f64
}
