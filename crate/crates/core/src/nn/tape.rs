use super::ops::{self, BatchNormCtx, Conv2dCtx, Mode, RunningStats};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A value produced while running a graph. `id` indexes the tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    id: usize,
    pub value: Tensor<T>,
}

impl<T> Var<T> {
    pub fn id(&self) -> usize {
        self.id
    }
}

/// Parameter reference: index into the caller's parameter list plus the tensor.
pub type ParamRef<'a, T> = (usize, &'a Tensor<T>);

#[derive(Debug)]
enum Record<T> {
    Conv {
        input: usize,
        weight: usize,
        bias: usize,
        out: usize,
        ctx: Conv2dCtx<T>,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        out: usize,
        ctx: BatchNormCtx<T>,
    },
    Relu {
        input: usize,
        out: usize,
        saved: Tensor<T>,
    },
    Add {
        a: usize,
        b: usize,
        out: usize,
    },
    Upsample {
        input: usize,
        out: usize,
    },
    Sigmoid {
        input: usize,
        out: usize,
        saved: Tensor<T>,
    },
}

impl<T> Record<T> {
    fn name(&self) -> &'static str {
        match self {
            Record::Conv { .. } => "conv2d",
            Record::BatchNorm { .. } => "batchnorm2d",
            Record::Relu { .. } => "relu",
            Record::Add { .. } => "add_residual",
            Record::Upsample { .. } => "upsample2x",
            Record::Sigmoid { .. } => "sigmoid",
        }
    }
}

/// Ordered record of executed ops. When `recording` is false the ops only
/// compute their outputs and nothing is saved for a backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    recording: bool,
    next_id: usize,
    records: Vec<Record<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(recording: bool) -> Self {
        Tape {
            recording,
            next_id: 0,
            records: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn fresh(&mut self, value: Tensor<T>) -> Var<T> {
        let id = self.next_id;
        self.next_id += 1;
        Var { id, value }
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var<T> {
        self.fresh(value)
    }

    /// Fingerprint of which ReLU inputs were strictly positive. Two forward
    /// passes with equal fingerprints took the same linear piece of every ReLU.
    pub fn relu_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for rec in &self.records {
            if let Record::Relu { saved, .. } = rec {
                for v in saved.data() {
                    (*v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.records.iter().map(Record::name).collect()
    }

    pub fn conv2d(
        &mut self,
        x: &Var<T>,
        weight: ParamRef<'_, T>,
        bias: ParamRef<'_, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<T>> {
        if !self.recording {
            let y = ops::conv2d(&x.value, weight.1, bias.1, stride, padding)?;
            return Ok(self.fresh(y));
        }
        let (y, ctx) = ops::conv2d_with_ctx(&x.value, weight.1, bias.1, stride, padding)?;
        let out = self.fresh(y);
        self.records.push(Record::Conv {
            input: x.id,
            weight: weight.0,
            bias: bias.0,
            out: out.id,
            ctx,
        });
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: &Var<T>,
        gamma: ParamRef<'_, T>,
        beta: ParamRef<'_, T>,
        stats: &mut RunningStats<T>,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var<T>> {
        let (y, ctx) = ops::batchnorm2d(&x.value, gamma.1, beta.1, stats, mode, momentum, eps)?;
        let out = self.fresh(y);
        if self.recording {
            self.records.push(Record::BatchNorm {
                input: x.id,
                gamma: gamma.0,
                beta: beta.0,
                out: out.id,
                ctx,
            });
        }
        Ok(out)
    }

    pub fn relu(&mut self, x: &Var<T>) -> Var<T> {
        let out = self.fresh(ops::relu(&x.value));
        if self.recording {
            self.records.push(Record::Relu {
                input: x.id,
                out: out.id,
                saved: x.value.clone(),
            });
        }
        out
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = self.fresh(ops::add_residual(&a.value, &b.value)?);
        if self.recording {
            self.records.push(Record::Add {
                a: a.id,
                b: b.id,
                out: out.id,
            });
        }
        Ok(out)
    }

    pub fn upsample2x(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let out = self.fresh(ops::upsample2x(&x.value)?);
        if self.recording {
            self.records.push(Record::Upsample {
                input: x.id,
                out: out.id,
            });
        }
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: &Var<T>) -> Var<T> {
        let y = ops::sigmoid(&x.value);
        let out = self.fresh(y);
        if self.recording {
            self.records.push(Record::Sigmoid {
                input: x.id,
                out: out.id,
                saved: out.value.clone(),
            });
        }
        out
    }

    /// Reverse pass from `output` seeded with `grad_out`.
    ///
    /// Returns one gradient per entry of `params` (zeros for parameters the
    /// graph never touched), in the same order.
    pub fn backward(self, output: &Var<T>, grad_out: &Tensor<T>, params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if !self.recording {
            return Err(Error::contract(
                "backward on a tape that did not record the forward pass",
            ));
        }
        if grad_out.shape() != output.value.shape() {
            return Err(Error::contract(format!(
                "backward: seed gradient {:?} does not match output {:?}",
                grad_out.shape(),
                output.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.next_id).map(|_| None).collect();
        grads[output.id] = Some(grad_out.clone());
        let mut pgrads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }
        let param_slot = |pgrads: &mut Vec<Tensor<T>>, idx: usize, g: &Tensor<T>| -> Result<()> {
            pgrads
                .get_mut(idx)
                .ok_or_else(|| Error::contract(format!("backward: parameter index {idx} out of range")))?
                .add_assign(g)
        };

        for rec in self.records.into_iter().rev() {
            match rec {
                Record::Conv {
                    input,
                    weight,
                    bias,
                    out,
                    ctx,
                } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    let g = ops::conv2d_backward(&ctx, &gy)?;
                    param_slot(&mut pgrads, weight, &g.weight)?;
                    param_slot(&mut pgrads, bias, &g.bias)?;
                    acc(&mut grads[input], g.input)?;
                }
                Record::BatchNorm {
                    input,
                    gamma,
                    beta,
                    out,
                    ctx,
                } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    let g = ops::batchnorm2d_backward(&ctx, &gy)?;
                    param_slot(&mut pgrads, gamma, &g.gamma)?;
                    param_slot(&mut pgrads, beta, &g.beta)?;
                    acc(&mut grads[input], g.input)?;
                }
                Record::Relu { input, out, saved } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    acc(&mut grads[input], ops::relu_backward(&saved, &gy)?)?;
                }
                Record::Add { a, b, out } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    let (ga, gb) = ops::add_residual_backward(&gy);
                    acc(&mut grads[a], ga)?;
                    acc(&mut grads[b], gb)?;
                }
                Record::Upsample { input, out } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    acc(&mut grads[input], ops::upsample2x_backward(&gy)?)?;
                }
                Record::Sigmoid { input, out, saved } => {
                    let Some(gy) = grads[out].take() else {
                        continue;
                    };
                    acc(&mut grads[input], ops::sigmoid_backward(&saved, &gy)?)?;
                }
            }
        }
        Ok(pgrads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_in_execution_order() {
        let w = Tensor::<f64>::full(&[1, 1, 1, 1], 2.0);
        let b = Tensor::<f64>::zeros(&[1]);
        let mut tape = Tape::new(true);
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 2, 2], |i| i as f64 - 1.5));
        let h = tape.conv2d(&x, (0, &w), (1, &b), 1, 0).unwrap();
        let r = tape.relu(&h);
        let u = tape.upsample2x(&r).unwrap();
        let s = tape.sigmoid(&u);
        assert_eq!(tape.op_names(), vec!["conv2d", "relu", "upsample2x", "sigmoid"]);
        let grads = tape
            .backward(&s, &Tensor::full(s.value.shape(), 1.0), &[&w, &b])
            .unwrap();
        assert_eq!(grads.len(), 2);
        assert!(grads[0].data()[0] > 0.0);
    }

    #[test]
    fn non_recording_tape_refuses_backward() {
        let mut tape = Tape::<f32>::new(false);
        let x = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        let y = tape.relu(&x);
        assert!(tape.op_names().is_empty());
        assert!(matches!(
            tape.backward(&y, &Tensor::zeros(&[1, 1, 2, 2]), &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn shared_input_accumulates() {
        // y = x + x  =>  dy/dx = 2, routed through a 1x1 conv to expose it
        let w = Tensor::<f64>::full(&[1, 1, 1, 1], 3.0);
        let b = Tensor::<f64>::zeros(&[1]);
        let mut tape = Tape::new(true);
        let x = tape.leaf(Tensor::full(&[1, 1, 1, 2], 1.0));
        let h = tape.conv2d(&x, (0, &w), (1, &b), 1, 0).unwrap();
        let y = tape.add(&h, &h).unwrap();
        let g = tape.backward(&y, &Tensor::full(&[1, 1, 1, 2], 1.0), &[&w, &b]).unwrap();
        // d/dw of sum(2·w·x) = 2·Σx = 4
        assert_eq!(g[0].data(), &[4.0]);
        assert_eq!(g[1].data(), &[4.0]);
    }
}
