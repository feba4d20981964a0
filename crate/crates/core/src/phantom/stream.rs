use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::stream::FrameStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionKind {
    /// No motion (breath hold).
    Static,
    /// Periodic vertical displacement (free breathing).
    Sinusoidal,
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Static => "static",
            MotionKind::Sinusoidal => "sinusoidal",
        })
    }
}

impl FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "static" => Ok(MotionKind::Static),
            "sinusoidal" => Ok(MotionKind::Sinusoidal),
            other => Err(Error::Config(format!(
                "unknown motion {other:?} (expected static|sinusoidal)"
            ))),
        }
    }
}

/// Rigid vertical motion `amplitude · sin(2πt / period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionModel {
    pub kind: MotionKind,
    pub amplitude_px: f64,
    pub period_s: f64,
}

impl MotionModel {
    pub fn still() -> Self {
        MotionModel {
            kind: MotionKind::Static,
            amplitude_px: 0.0,
            period_s: 1.0,
        }
    }

    pub fn sinusoidal(amplitude_px: f64, period_s: f64) -> Self {
        MotionModel {
            kind: MotionKind::Sinusoidal,
            amplitude_px,
            period_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_px >= 0.0 && self.amplitude_px.is_finite()) {
            return Err(Error::contract(format!(
                "motion amplitude {} must be >= 0",
                self.amplitude_px
            )));
        }
        if self.kind == MotionKind::Sinusoidal && !(self.period_s > 0.0) {
            return Err(Error::contract(format!("motion period {} must be > 0", self.period_s)));
        }
        Ok(())
    }

    /// Displacement in pixels at time `t` seconds.
    pub fn displacement(&self, t: f64) -> f64 {
        match self.kind {
            MotionKind::Static => 0.0,
            MotionKind::Sinusoidal => self.amplitude_px * (std::f64::consts::TAU * t / self.period_s).sin(),
        }
    }

    /// Displacement rounded to whole pixels.
    pub fn row_shift(&self, t: f64) -> i64 {
        self.displacement(t).round() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamParams {
    pub n_frames: usize,
    pub fps: f32,
    pub motion: MotionModel,
    /// Noise σ in counts is `noise_scale · 65535 · sqrt(signal / 65535)`.
    pub noise_scale: f64,
    /// Fraction of full scale a unit-intensity pixel reaches in one frame.
    pub gain: f64,
    pub seed: u64,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams {
            n_frames: 120,
            fps: 19.6,
            motion: MotionModel::still(),
            noise_scale: 0.02,
            gain: 0.25,
            seed: 0,
        }
    }
}

/// Shifts rows down by `shift` (up when negative), replicating edge rows.
pub fn shift_rows(image: &GrayImage, shift: i64) -> GrayImage {
    let h = image.height() as i64;
    GrayImage::from_fn(image.height(), image.width(), |y, x| {
        let src = (y as i64 - shift).clamp(0, h - 1);
        image.get(src as usize, x)
    })
}

/// Renders `n_frames` noisy, possibly moving 16-bit frames of `phantom`.
///
/// Frame `i` is the phantom shifted by the motion at `t = i / fps`, scaled by
/// `gain` onto the 16-bit range, plus zero-mean Gaussian noise whose variance
/// is proportional to the signal, then rounded and clipped.
pub fn gen_stream(phantom: &GrayImage, params: &StreamParams) -> Result<FrameStream> {
    if params.n_frames == 0 {
        return Err(Error::contract("gen_stream needs at least one frame"));
    }
    if !(params.gain > 0.0 && params.gain <= 1.0) {
        return Err(Error::contract(format!("gain {} outside (0, 1]", params.gain)));
    }
    if !(params.noise_scale >= 0.0) {
        return Err(Error::contract("noise_scale must be >= 0"));
    }
    params.motion.validate()?;
    let full = u16::MAX as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut frames = Vec::with_capacity(params.n_frames);
    for i in 0..params.n_frames {
        let t = i as f64 / params.fps as f64;
        let shifted = shift_rows(phantom, params.motion.row_shift(t));
        let frame = shifted
            .data()
            .iter()
            .map(|&p| {
                let signal = (p as f64).clamp(0.0, 1.0) * params.gain;
                let mut v = signal * full;
                if params.noise_scale > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v += params.noise_scale * full * signal.sqrt() * z;
                }
                v.round().clamp(0.0, full) as u16
            })
            .collect();
        frames.push(frame);
    }
    FrameStream::new(phantom.width(), phantom.height(), params.fps, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_peaks_at_quarter_period() {
        let m = MotionModel::sinusoidal(3.0, 4.0);
        assert!((m.displacement(1.0) - 3.0).abs() < 1e-12);
        assert_eq!(m.row_shift(1.0), 3);
        assert_eq!(MotionModel::still().row_shift(1.0), 0);
        assert!(MotionModel::sinusoidal(1.0, 0.0).validate().is_err());
    }

    #[test]
    fn shift_replicates_edges() {
        let img = GrayImage::from_fn(3, 1, |y, _| y as f32);
        assert_eq!(shift_rows(&img, 1).data(), &[0.0, 0.0, 1.0]);
        assert_eq!(shift_rows(&img, -1).data(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn static_stream_frames_identical_without_noise() {
        let img = GrayImage::from_fn(4, 4, |y, x| (y * 4 + x) as f32 / 15.0);
        let p = StreamParams {
            n_frames: 5,
            noise_scale: 0.0,
            ..StreamParams::default()
        };
        let s = gen_stream(&img, &p).unwrap();
        assert!(s.frames().windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.frame(0)[15], (0.25f64 * 65535.0).round() as u16);
    }
}
