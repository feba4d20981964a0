use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::segresnet::Model;

/// One RMSProp update with L2 decay folded into the gradient:
///
/// ```text
/// g' = g + l2·θ
/// v  = α·v + (1 − α)·g'²
/// θ  = θ − lr·g' / (√v + eps)
/// ```
pub fn rmsprop_step<T: Scalar>(param: &mut [T], grad: &[T], v: &mut [T], config: &TrainConfig) -> Result<()> {
    if param.len() != grad.len() || param.len() != v.len() {
        return Err(Error::contract(format!(
            "rmsprop_step: param {} / grad {} / state {} lengths differ",
            param.len(),
            grad.len(),
            v.len()
        )));
    }
    let a = config.rmsprop_alpha;
    for ((p, &g), s) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
        let theta = p.as_f64();
        let g = g.as_f64() + config.l2_decay * theta;
        let state = a * s.as_f64() + (1.0 - a) * g * g;
        *s = T::lit(state);
        *p = T::lit(theta - config.lr * g / (state.sqrt() + config.rmsprop_eps));
    }
    Ok(())
}

/// Per-parameter RMSProp state for a whole model.
#[derive(Clone, Debug)]
pub struct RmsProp<T = f32> {
    v: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(model: &Model<T>) -> Self {
        RmsProp {
            v: model.params().iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Applies one update to every parameter, consuming its gradient.
    /// Parameters without a gradient are still decayed.
    pub fn step(&mut self, model: &mut Model<T>, config: &TrainConfig) -> Result<()> {
        for (p, v) in model.params_mut().iter_mut().zip(&mut self.v) {
            let grad = p.take_grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            rmsprop_step(p.data_mut(), &grad, v, config)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &[Vec<T>] {
        &self.v
    }
}
