//! Residual encoder-decoder segmentation network.
//!
//! Stem conv3×3, then per encoder level an optional stride-2 conv that
//! doubles the width followed by pre-activation residual blocks. Each decoder
//! level halves the width with a 1×1 conv, upsamples 2×, adds the matching
//! encoder output and runs its residual blocks. A 1×1 conv and a sigmoid
//! produce the per-pixel probability map.

mod config;
mod model;
mod weights;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use model::Model;
pub use weights::{decode as decode_weights, encode as encode_weights, load_weights, save_weights, MAGIC};

use crate::error::{Error, Result};
use crate::nn::gradcheck::{finite_diff_check_at, inner};
use crate::nn::{Mode, Tensor};

/// End-to-end finite-difference check of the network gradient.
///
/// Runs the model in `f64` train mode on a random batch of two, with
/// objective `Σ(out · R)`, and compares `n_coords` randomly chosen parameter
/// coordinates. Coordinates whose perturbation would move any ReLU input
/// across zero are redrawn. Returns the max relative error.
pub fn gradcheck_network(config: &ModelConfig, seed: u64, n_coords: usize, eps: f64) -> Result<f64> {
    let base = Model::<f64>::build_as(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let p = config.patch_size;
    let input = Tensor::from_fn(&[2, config.in_channels, p, p], |_| rng.random::<f64>());
    let r = Tensor::from_fn(&[2, config.out_channels, p, p], |_| rng.random::<f64>() * 2.0 - 1.0);

    // A coordinate whose ±eps stencil flips any ReLU input sign straddles a
    // kink, where a central difference does not estimate the derivative.
    // Such coordinates are redrawn.
    let inputs: Vec<Tensor<f64>> = base.params().to_vec();
    let mut probe = base.clone();
    probe.forward(&input, Mode::Train)?;
    let reference = probe.relu_signature();
    // The bias of a conv whose only consumer is a train-mode batch norm is
    // subtracted out with the batch mean; its gradient is identically zero and
    // a relative error against zero measures only roundoff.
    let candidates: Vec<usize> = (0..inputs.len())
        .filter(|&i| !base.param_names()[i].ends_with(".conv1.bias"))
        .collect();
    let mut coords = Vec::with_capacity(n_coords);
    let mut draws = 0;
    while coords.len() < n_coords {
        draws += 1;
        if draws > 100 * n_coords.max(1) {
            return Err(Error::contract(format!(
                "gradcheck: found only {} of {n_coords} kink-free coordinates",
                coords.len()
            )));
        }
        let i = candidates[rng.random_range(0..candidates.len())];
        let j = rng.random_range(0..inputs[i].numel());
        let mut smooth = true;
        for step in [eps, -eps] {
            let mut m = base.clone();
            m.params_mut()[i].data_mut()[j] += step;
            m.forward(&input, Mode::Train)?;
            smooth &= m.relu_signature() == reference;
        }
        if smooth {
            coords.push((i, j));
        }
    }
    let model = RefCell::new(base);
    let objective = |params: &[Tensor<f64>]| {
        let mut m = model.borrow_mut();
        for (dst, src) in m.params_mut().iter_mut().zip(params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let out = m.forward(&input, Mode::Train)?;
        m.backward(&r)?;
        let grads = m
            .params()
            .iter()
            .map(|p| Tensor::from_vec(p.shape(), p.grad().unwrap_or_default().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok((inner(&out, &r), grads))
    };
    finite_diff_check_at(&inputs, eps, &coords, &objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let err = gradcheck_network(&ModelConfig::tiny(), seed, 10, 1e-4).unwrap();
            assert!(err < 3e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn bias_ahead_of_batch_norm_has_zero_gradient() {
        let mut m = Model::<f64>::build_as(&ModelConfig::tiny(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 31) % 97) as f64 / 97.0);
        m.forward(&x, Mode::Train).unwrap();
        m.backward(&Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 13) % 7) as f64 - 3.0))
            .unwrap();
        for (name, p) in m.param_names().iter().zip(m.params()) {
            if name.ends_with(".conv1.bias") {
                assert!(p.grad().unwrap().iter().all(|g| g.abs() < 1e-9), "{name}");
            }
        }
    }
}
