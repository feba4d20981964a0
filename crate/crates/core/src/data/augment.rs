use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GrayImage, PatchRecord};
use crate::error::{Error, Result};

/// Random training-time augmentation. Each transform fires independently.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub p_hflip: f64,
    pub p_rot: f64,
    /// Counter-clockwise angles in degrees, each a multiple of 90.
    pub rot_angles: Vec<u32>,
    pub p_noise: f64,
    /// Noise σ is drawn uniformly from `(0, noise_max_magnitude]`.
    pub noise_max_magnitude: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_hflip: 0.33,
            p_rot: 0.33,
            rot_angles: vec![90, 180, 270],
            p_noise: 0.5,
            noise_max_magnitude: 0.25,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// Policy that leaves every record unchanged.
    pub fn none() -> Self {
        AugmentPolicy {
            p_hflip: 0.0,
            p_rot: 0.0,
            p_noise: 0.0,
            ..AugmentPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_rot", self.p_rot),
            ("p_noise", self.p_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if let Some(a) = self.rot_angles.iter().find(|&&a| a % 90 != 0) {
            return Err(Error::Config(format!("rotation angle {a} is not a multiple of 90")));
        }
        if self.p_rot > 0.0 && self.rot_angles.is_empty() {
            return Err(Error::Config("p_rot > 0 but rot_angles is empty".into()));
        }
        if !(self.noise_max_magnitude >= 0.0) {
            return Err(Error::Config("noise_max_magnitude must be >= 0".into()));
        }
        Ok(())
    }

    /// Generator for record `index`: the policy seed selects the key and the
    /// index selects an independent stream.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every pixel, then clips to `[0, 1]`.
pub fn add_gaussian_noise(image: &GrayImage, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    let mut out = image.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        for v in out.data_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    out.clamp01();
    out
}

/// Applies the policy's flip, rotation and noise draws. Geometric transforms
/// act on image and mask together; the mask is never noised.
pub fn augment(record: &PatchRecord, policy: &AugmentPolicy, rng: &mut impl Rng) -> PatchRecord {
    let mut out = record.clone();
    if rng.random_bool(policy.p_hflip) {
        out.image = out.image.flip_horizontal();
        out.mask = out.mask.flip_horizontal();
    }
    if rng.random_bool(policy.p_rot) && !policy.rot_angles.is_empty() {
        let angle = policy.rot_angles[rng.random_range(0..policy.rot_angles.len())];
        let k = (angle / 90) as usize;
        out.image = out.image.rot90(k);
        out.mask = out.mask.rot90(k);
    }
    if rng.random_bool(policy.p_noise) {
        // 1 − U[0, 1) lies in (0, 1], so σ never collapses to zero
        let sigma = policy.noise_max_magnitude * (1.0 - rng.random::<f64>());
        out.image = add_gaussian_noise(&out.image, sigma, rng);
    }
    out
}
