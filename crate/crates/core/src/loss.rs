//! Training objective: soft Dice plus binary cross-entropy.
//!
//! Every function takes predicted probabilities shaped `[N, 1, H, W]` and one
//! target mask per sample, and returns the scalar loss together with its
//! gradient with respect to the predictions.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::{Scalar, Tensor};

pub const BCE_CLAMP: f64 = 1e-7;

/// Weights of the combined objective `lambda1·dice + lambda2·bce`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.1,
            dice_smooth: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config(format!(
                "dice_smooth must be > 0, got {}",
                self.dice_smooth
            )));
        }
        Ok(())
    }
}

/// A loss value and its gradient with respect to the predictions.
#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// Components of [`combined_loss`].
#[derive(Clone, Debug)]
pub struct CombinedLoss<T> {
    pub total: f64,
    pub dice: f64,
    pub bce: f64,
    pub grad: Tensor<T>,
}

fn check_batch<T: Scalar>(pred: &Tensor<T>, target: &[BinaryMask]) -> Result<(usize, usize)> {
    let (n, c, h, w) = pred.dims4()?;
    if c != 1 {
        return Err(Error::contract(format!("loss: expected 1 channel, got {c}")));
    }
    if target.len() != n {
        return Err(Error::contract(format!(
            "loss: {n} predictions but {} targets",
            target.len()
        )));
    }
    if let Some(m) = target.iter().find(|m| m.shape() != (h, w)) {
        return Err(Error::contract(format!(
            "loss: target {:?} does not match prediction {h}x{w}",
            m.shape()
        )));
    }
    Ok((n, h * w))
}

/// Soft Dice loss `1 − (2Σpt + s)/(Σp + Σt + s)` per sample, averaged over the batch.
pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &[BinaryMask], smooth: f64) -> Result<Loss<T>> {
    let (n, plane) = check_batch(pred, target)?;
    let mut grad = vec![T::zero(); pred.numel()];
    let mut total = 0.0;
    for (s, mask) in target.iter().enumerate() {
        let p = &pred.data()[s * plane..(s + 1) * plane];
        let t = mask.data();
        let (mut inter, mut sum_p, mut sum_t) = (0.0, 0.0, 0.0);
        for (&pi, &ti) in p.iter().zip(t) {
            let pi = pi.as_f64();
            let ti = ti as f64;
            inter += pi * ti;
            sum_p += pi;
            sum_t += ti;
        }
        let num = 2.0 * inter + smooth;
        let den = sum_p + sum_t + smooth;
        total += 1.0 - num / den;
        let g = &mut grad[s * plane..(s + 1) * plane];
        for (gi, &ti) in g.iter_mut().zip(t) {
            // d/dp_i of −num/den
            *gi = T::lit(-(2.0 * ti as f64 * den - num) / (den * den) / n as f64);
        }
    }
    Ok(Loss {
        value: total / n as f64,
        grad: Tensor::from_vec(pred.shape(), grad)?,
    })
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &[BinaryMask]) -> Result<Loss<T>> {
    let (_, plane) = check_batch(pred, target)?;
    let count = pred.numel() as f64;
    let mut grad = vec![T::zero(); pred.numel()];
    let mut total = 0.0;
    for (s, mask) in target.iter().enumerate() {
        let p = &pred.data()[s * plane..(s + 1) * plane];
        for (k, (&pi, &ti)) in p.iter().zip(mask.data()).enumerate() {
            let pc = pi.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let (value, g) = if ti == 1 {
                (-pc.ln(), -1.0 / pc)
            } else {
                (-(1.0 - pc).ln(), 1.0 / (1.0 - pc))
            };
            total += value;
            grad[s * plane + k] = T::lit(g / count);
        }
    }
    Ok(Loss {
        value: total / count,
        grad: Tensor::from_vec(pred.shape(), grad)?,
    })
}

/// `lambda1·dice_loss + lambda2·bce_loss`, with the matching weighted gradient.
pub fn combined_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &[BinaryMask],
    weights: &LossWeights,
) -> Result<CombinedLoss<T>> {
    weights.validate()?;
    let dice = dice_loss(pred, target, weights.dice_smooth)?;
    let bce = bce_loss(pred, target)?;
    let (l1, l2) = (T::lit(weights.lambda1), T::lit(weights.lambda2));
    let grad: Vec<T> = dice
        .grad
        .data()
        .iter()
        .zip(bce.grad.data())
        .map(|(&d, &b)| l1 * d + l2 * b)
        .collect();
    Ok(CombinedLoss {
        total: weights.lambda1 * dice.value + weights.lambda2 * bce.value,
        dice: dice.value,
        bce: bce.value,
        grad: Tensor::from_vec(pred.shape(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(values: &[f64], h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[values.len() / (h * w), 1, h, w], values.to_vec()).unwrap()
    }

    #[test]
    fn perfect_overlap_and_empty_pair() {
        let t = BinaryMask::from_vec(2, 2, vec![1, 0, 1, 1]).unwrap();
        let l = dice_loss(&batch(&[1.0, 0.0, 1.0, 1.0], 2, 2), &[t], 1e-5).unwrap();
        assert!(l.value <= 1e-4);
        let e = BinaryMask::zeros(2, 2);
        let l = dice_loss(&batch(&[0.0; 4], 2, 2), &[e], 1e-5).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn half_overlap_gives_half() {
        let t = BinaryMask::from_vec(1, 4, vec![1, 1, 0, 0]).unwrap();
        let p = batch(&[1.0, 0.0, 1.0, 0.0], 1, 4);
        let l = dice_loss(&p, &[t], 1e-12).unwrap();
        assert!((l.value - 0.5).abs() < 1e-9, "{}", l.value);
    }

    #[test]
    fn bce_reference_values() {
        let t = BinaryMask::from_vec(2, 2, vec![1, 0, 1, 0]).unwrap();
        let l = bce_loss(&batch(&[0.5; 4], 2, 2), &[t.clone()]).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-6);
        let l = bce_loss(&batch(&[1.0, 0.0, 1.0, 0.0], 2, 2), &[t]).unwrap();
        assert!(l.value <= 2e-6);
        let one = BinaryMask::from_vec(1, 1, vec![1]).unwrap();
        let l = bce_loss(&batch(&[0.9], 1, 1), &[one]).unwrap();
        assert!((l.value - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn lambda2_zero_is_pure_dice() {
        let t = BinaryMask::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        let p = batch(&[0.3, 0.6, 0.2, 0.8], 2, 2);
        let w = LossWeights {
            lambda2: 0.0,
            ..LossWeights::default()
        };
        let c = combined_loss(&p, &[t.clone()], &w).unwrap();
        let d = dice_loss(&p, &[t], w.dice_smooth).unwrap();
        assert_eq!(c.total, d.value);
        assert_eq!(c.grad.data(), d.grad.data());
    }

    #[test]
    fn rejects_mismatched_targets() {
        let p = batch(&[0.5; 8], 2, 2);
        assert!(dice_loss(&p, &[BinaryMask::zeros(2, 2)], 1e-5).is_err());
        assert!(bce_loss(&p, &[BinaryMask::zeros(2, 2), BinaryMask::zeros(1, 4)]).is_err());
        let bad = LossWeights {
            lambda1: -1.0,
            ..LossWeights::default()
        };
        assert!(combined_loss(&p, &[BinaryMask::zeros(2, 2), BinaryMask::zeros(2, 2)], &bad).is_err());
    }
}
