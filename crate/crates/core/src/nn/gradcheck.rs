//! Central finite-difference oracle for the analytic backward passes.
//!
//! Every check runs in `f64`. The scalar objective of an op check is
//! `Σ(out · R)` for a fixed random `R`, so the analytic gradient is the op's
//! backward seeded with `R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::{self, Mode, RunningStats};
use super::Tensor;
use crate::error::{Error, Result};

/// Objective evaluated by the checker: returns the scalar value and the
/// analytic gradient with respect to each input.
pub type Objective<'a> = dyn Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)> + 'a;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Max over all coordinates of all inputs of `|a−n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check(inputs: &[Tensor<f64>], eps: f64, f: &Objective<'_>) -> Result<f64> {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    finite_diff_check_at(inputs, eps, &coords, f)
}

/// Same as [`finite_diff_check`], restricted to `(input, flat index)` coordinates.
pub fn finite_diff_check_at(
    inputs: &[Tensor<f64>],
    eps: f64,
    coords: &[(usize, usize)],
    f: &Objective<'_>,
) -> Result<f64> {
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::contract(format!(
            "finite_diff_check: eps {eps} outside [1e-4, 1e-2]"
        )));
    }
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(Error::contract(
            "finite_diff_check: objective returned wrong gradient count",
        ));
    }
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, j) in coords {
        let orig = inputs[i].data()[j];
        probe[i].data_mut()[j] = orig + eps;
        let (fp, _) = f(&probe)?;
        probe[i].data_mut()[j] = orig - eps;
        let (fm, _) = f(&probe)?;
        probe[i].data_mut()[j] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i].data()[j], numeric));
    }
    Ok(worst)
}

/// `Σ a·b` with Neumaier compensation, so the objective differences stay
/// accurate for exactly linear ops.
pub fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let v = x * y;
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

fn rand_dims(rng: &mut ChaCha8Rng, min_hw: usize) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(min_hw..=8),
        rng.random_range(min_hw..=8),
    )
}

/// One named op check result.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
}

pub fn check_conv2d(seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, cin, h, w) = rand_dims(&mut rng, 3);
    let cout = rng.random_range(1..=3);
    let k = if rng.random_bool(0.7) { 3 } else { 1 };
    let stride = rng.random_range(1..=2);
    let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
    let inputs = vec![
        randn(&mut rng, &[n, cin, h, w]),
        randn(&mut rng, &[cout, cin, k, k]),
        randn(&mut rng, &[cout]),
    ];
    let probe = ops::conv2d(&inputs[0], &inputs[1], &inputs[2], stride, pad)?;
    let r = randn(&mut rng, probe.shape());
    let f = |t: &[Tensor<f64>]| {
        let (y, ctx) = ops::conv2d_with_ctx(&t[0], &t[1], &t[2], stride, pad)?;
        let g = ops::conv2d_backward(&ctx, &r)?;
        Ok((inner(&y, &r), vec![g.input, g.weight, g.bias]))
    };
    Ok(OpCheck {
        op: "conv2d",
        seed,
        max_rel_error: finite_diff_check(&inputs, 1e-3, &f)?,
    })
}

pub fn check_batchnorm2d(seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = rand_dims(&mut rng, 2);
    let inputs = vec![
        randn(&mut rng, &[n, c, h, w]),
        randn(&mut rng, &[c]),
        randn(&mut rng, &[c]),
    ];
    let r = randn(&mut rng, &[n, c, h, w]);
    let f = |t: &[Tensor<f64>]| {
        let mut stats = RunningStats::new(c);
        let (y, ctx) = ops::batchnorm2d(&t[0], &t[1], &t[2], &mut stats, Mode::Train, 0.1, 1e-5)?;
        let g = ops::batchnorm2d_backward(&ctx, &r)?;
        Ok((inner(&y, &r), vec![g.input, g.gamma, g.beta]))
    };
    Ok(OpCheck {
        op: "batchnorm2d",
        seed,
        max_rel_error: finite_diff_check(&inputs, 1e-3, &f)?,
    })
}

pub fn check_relu(seed: u64) -> Result<OpCheck> {
    const EPS: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = rand_dims(&mut rng, 1);
    let mut x = randn(&mut rng, &[n, c, h, w]);
    // keep every coordinate off the kink
    for v in x.data_mut() {
        while v.abs() <= EPS {
            *v = rng.sample(StandardNormal);
        }
    }
    let r = randn(&mut rng, &[n, c, h, w]);
    let f = |t: &[Tensor<f64>]| {
        let y = ops::relu(&t[0]);
        Ok((inner(&y, &r), vec![ops::relu_backward(&t[0], &r)?]))
    };
    Ok(OpCheck {
        op: "relu",
        seed,
        max_rel_error: finite_diff_check(&[x], EPS, &f)?,
    })
}

pub fn check_add_residual(seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = rand_dims(&mut rng, 1);
    let inputs = vec![randn(&mut rng, &[n, c, h, w]), randn(&mut rng, &[n, c, h, w])];
    let r = randn(&mut rng, &[n, c, h, w]);
    let f = |t: &[Tensor<f64>]| {
        let y = ops::add_residual(&t[0], &t[1])?;
        let (ga, gb) = ops::add_residual_backward(&r);
        Ok((inner(&y, &r), vec![ga, gb]))
    };
    Ok(OpCheck {
        op: "add_residual",
        seed,
        max_rel_error: finite_diff_check(&inputs, 1e-3, &f)?,
    })
}

pub fn check_upsample2x(seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = rand_dims(&mut rng, 1);
    let x = randn(&mut rng, &[n, c, h, w]);
    let r = randn(&mut rng, &[n, c, 2 * h, 2 * w]);
    let f = |t: &[Tensor<f64>]| {
        let y = ops::upsample2x(&t[0])?;
        Ok((inner(&y, &r), vec![ops::upsample2x_backward(&r)?]))
    };
    Ok(OpCheck {
        op: "upsample2x",
        seed,
        max_rel_error: finite_diff_check(&[x], 1e-3, &f)?,
    })
}

pub fn check_sigmoid(seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = rand_dims(&mut rng, 1);
    let x = randn(&mut rng, &[n, c, h, w]);
    let r = randn(&mut rng, &[n, c, h, w]);
    let f = |t: &[Tensor<f64>]| {
        let y = ops::sigmoid(&t[0]);
        Ok((inner(&y, &r), vec![ops::sigmoid_backward(&y, &r)?]))
    };
    Ok(OpCheck {
        op: "sigmoid",
        seed,
        max_rel_error: finite_diff_check(&[x], 1e-3, &f)?,
    })
}

/// Every op check for one seed.
pub fn check_all_ops(seed: u64) -> Result<Vec<OpCheck>> {
    Ok(vec![
        check_conv2d(seed)?,
        check_batchnorm2d(seed)?,
        check_relu(seed)?,
        check_add_residual(seed)?,
        check_upsample2x(seed)?,
        check_sigmoid(seed)?,
    ])
}
