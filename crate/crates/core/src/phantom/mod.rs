//! Synthetic vessel phantoms with exact ground truth, and frame streams
//! rendered from them.
//!
//! A phantom is a set of vessel trees. Each tree is a smoothed random walk
//! whose radius tapers as it grows and which occasionally forks. The mask is
//! the exact tube support (pixel centers within the local radius of the
//! centerline). The image darkens the background in proportion to a
//! one-pixel-wide anti-aliased coverage that crosses 0.5 exactly on the mask
//! edge.

mod stream;
mod tree;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use stream::{gen_stream, shift_rows, MotionKind, MotionModel, StreamParams};

use crate::data::{extract_patch_grid, filter_by_label_area, Domain, GrayImage, PatchRecord};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use tree::{grow_tree, DepthField, Region};

/// Rendering style of a phantom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Dark vessels on a bright, smoothly textured field covering the image.
    Source,
    /// Dark vessels inside a bright elliptical beam on a dark surround, with
    /// signal-dependent grain.
    Target,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Source => "source",
            Style::Target => "target",
        })
    }
}

impl FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "source" => Ok(Style::Source),
            "target" => Ok(Style::Target),
            other => Err(Error::Config(format!(
                "unknown phantom style {other:?} (expected source|target)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub size: usize,
    pub n_trees: usize,
    /// Probability of forking at each walk step.
    pub branch_prob: f64,
    /// `(min, max)` vessel radius in pixels.
    pub radius_px: (f64, f64),
    /// Fractional darkening at full vessel coverage.
    pub vessel_contrast: f64,
    /// Left-to-right brightness slope across the image.
    pub background_gradient: f64,
    pub style: Style,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            size: 128,
            n_trees: 4,
            branch_prob: 0.03,
            radius_px: (1.0, 3.0),
            vessel_contrast: 0.6,
            background_gradient: 0.2,
            style: Style::Source,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(format!("invalid phantom params: {m}")));
        if self.size < 32 {
            return bad(format!("size {} < 32", self.size));
        }
        let (lo, hi) = self.radius_px;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("radius range ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        if !(self.vessel_contrast > 0.0 && self.vessel_contrast <= 1.0) {
            return bad(format!("contrast {} outside (0, 1]", self.vessel_contrast));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return bad(format!("branch_prob {} outside [0, 1]", self.branch_prob));
        }
        if !self.background_gradient.is_finite() {
            return bad("background_gradient must be finite".into());
        }
        Ok(())
    }
}

/// A rendered phantom and its exact vessel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: BinaryMask,
}

const GRAIN: f64 = 0.06;

pub fn gen_phantom(params: &PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.size;
    let sz = n as f64;

    let region = match params.style {
        Style::Source => Region::Frame { size: sz },
        Style::Target => Region::Beam {
            cy: sz * (0.5 + rng.random_range(-0.06..0.06)),
            cx: sz * (0.5 + rng.random_range(-0.06..0.06)),
            ry: sz * rng.random_range(0.32..0.44),
            rx: sz * rng.random_range(0.32..0.44),
        },
    };
    let background = render_background(params, &region, &mut rng);

    let mut depth = DepthField::new(n);
    for _ in 0..params.n_trees {
        grow_tree(params, &region, &mut depth, &mut rng);
    }

    let mask = BinaryMask::from_fn(n, n, |y, x| depth.get(y, x) >= 0.0);
    let mut image = GrayImage::from_fn(n, n, |y, x| {
        let coverage = (depth.get(y, x) + 0.5).clamp(0.0, 1.0);
        (background[y * n + x] * (1.0 - params.vessel_contrast * coverage)) as f32
    });
    if params.style == Style::Target {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for v in image.data_mut() {
            let s = (*v as f64).max(0.0);
            *v = (s + GRAIN * s.sqrt() * unit.sample(&mut rng)) as f32;
        }
    }
    image.clamp01();
    Ok(Phantom { image, mask })
}

/// Cuts `n_images` phantoms (seeds `base.seed`, `base.seed + 1`, …) into
/// non-overlapping `patch`-sized records and keeps those whose label
/// fraction exceeds `min_label`.
pub fn phantom_patches(
    base: &PhantomParams,
    n_images: usize,
    patch: usize,
    min_label: f64,
) -> Result<Vec<PatchRecord>> {
    let domain = match base.style {
        Style::Source => Domain::Source,
        Style::Target => Domain::Target,
    };
    let mut out = Vec::new();
    for i in 0..n_images as u64 {
        let params = PhantomParams {
            seed: base.seed.wrapping_add(i),
            ..base.clone()
        };
        let ph = gen_phantom(&params)?;
        let id = format!("{}{}", params.style, params.seed);
        let grid = extract_patch_grid(&ph.image, &ph.mask, params.size / patch, patch, true, &id, domain)?;
        out.extend(filter_by_label_area(grid, min_label));
    }
    Ok(out)
}

fn render_background(params: &PhantomParams, region: &Region, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = params.size;
    let sz = n as f64;
    let slope = |x: usize| params.background_gradient * (x as f64 / sz - 0.5);
    match *region {
        Region::Frame { .. } => {
            // a few low-frequency plane waves give a smooth texture
            let waves: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let freq = std::f64::consts::TAU / (sz * rng.random_range(0.15..0.5));
                    (
                        theta.cos() * freq,
                        theta.sin() * freq,
                        rng.random_range(0.0..std::f64::consts::TAU),
                        0.04,
                    )
                })
                .collect();
            let mut out = Vec::with_capacity(n * n);
            for y in 0..n {
                for x in 0..n {
                    let tex: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin())
                        .sum();
                    out.push((0.75 + slope(x) + tex).clamp(0.0, 1.0));
                }
            }
            out
        }
        Region::Beam { .. } => {
            let mut out = Vec::with_capacity(n * n);
            for y in 0..n {
                for x in 0..n {
                    let e = region.radius_at(y as f64 + 0.5, x as f64 + 0.5);
                    let beam = 1.0 / (1.0 + ((e - 1.0) / 0.04).exp());
                    out.push((0.08 + 0.62 * beam * (1.0 + slope(x))).clamp(0.0, 1.0));
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_phantom() {
        for style in [Style::Source, Style::Target] {
            let p = PhantomParams {
                style,
                seed: 9,
                ..PhantomParams::default()
            };
            assert_eq!(gen_phantom(&p).unwrap(), gen_phantom(&p).unwrap());
        }
    }

    #[test]
    fn no_trees_gives_empty_mask() {
        let p = PhantomParams {
            n_trees: 0,
            ..PhantomParams::default()
        };
        let ph = gen_phantom(&p).unwrap();
        assert!(ph.mask.is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = PhantomParams {
            size: 16,
            ..PhantomParams::default()
        };
        assert!(gen_phantom(&p).is_err());
        p.size = 64;
        p.radius_px = (0.5, 2.0);
        assert!(gen_phantom(&p).is_err());
        p.radius_px = (1.0, 2.0);
        p.vessel_contrast = 0.0;
        assert!(gen_phantom(&p).is_err());
    }
}
