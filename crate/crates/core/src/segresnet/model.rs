use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::ops::{BN_EPS, BN_MOMENTUM};
use crate::nn::{Mode, RunningStats, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    stats: usize,
}

/// Pre-activation residual block: BN → ReLU → conv3 → BN → ReLU → conv3, plus identity.
#[derive(Clone, Debug)]
struct BlockIdx {
    bn1: BnIdx,
    conv1: ConvIdx,
    bn2: BnIdx,
    conv2: ConvIdx,
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    down: Option<ConvIdx>,
    blocks: Vec<BlockIdx>,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    reduce: ConvIdx,
    blocks: Vec<BlockIdx>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: ConvIdx,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: ConvIdx,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Parameter and buffer names/shapes implied by a config, in canonical order.
pub(crate) struct Plan {
    layout: Layout,
    pub params: Vec<ParamSpec>,
    /// `(layer name, channels)` for each batch-norm layer.
    pub norms: Vec<(String, usize)>,
}

struct Planner {
    params: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl Planner {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvIdx {
        let weight = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            init: Init::He { fan_in: cin * k * k },
        });
        self.params.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            init: Init::Zeros,
        });
        ConvIdx {
            weight,
            bias: weight + 1,
            stride,
            pad: (k - 1) / 2,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnIdx {
        let gamma = self.params.len();
        self.params.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![c],
            init: Init::Ones,
        });
        self.params.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![c],
            init: Init::Zeros,
        });
        let stats = self.norms.len();
        self.norms.push((name.to_string(), c));
        BnIdx {
            gamma,
            beta: gamma + 1,
            stats,
        }
    }

    fn block(&mut self, name: &str, c: usize) -> BlockIdx {
        BlockIdx {
            bn1: self.bn(&format!("{name}.bn1"), c),
            conv1: self.conv(&format!("{name}.conv1"), c, c, 3, 1),
            bn2: self.bn(&format!("{name}.bn2"), c),
            conv2: self.conv(&format!("{name}.conv2"), c, c, 3, 1),
        }
    }
}

impl Plan {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut p = Planner {
            params: Vec::new(),
            norms: Vec::new(),
        };
        let f = config.init_filters;
        let stem = p.conv("stem", config.in_channels, f, 3, 1);
        let mut encoder = Vec::new();
        for (i, &nb) in config.blocks_down.iter().enumerate() {
            let c = config.channels_at(i);
            let down = (i > 0).then(|| p.conv(&format!("enc{i}.down"), c / 2, c, 3, 2));
            let blocks = (0..nb).map(|b| p.block(&format!("enc{i}.block{b}"), c)).collect();
            encoder.push(EncoderLevel { down, blocks });
        }
        let mut decoder = Vec::new();
        for (j, &nb) in config.blocks_up.iter().enumerate() {
            let level = config.levels() - 2 - j;
            let c = config.channels_at(level);
            let reduce = p.conv(&format!("dec{level}.reduce"), 2 * c, c, 1, 1);
            let blocks = (0..nb).map(|b| p.block(&format!("dec{level}.block{b}"), c)).collect();
            decoder.push(DecoderLevel { reduce, blocks });
        }
        let head = p.conv("head", f, config.out_channels, 1, 1);
        Ok(Plan {
            layout: Layout {
                stem,
                encoder,
                decoder,
                head,
            },
            params: p.params,
            norms: p.norms,
        })
    }
}

/// The residual encoder-decoder segmentation network.
///
/// Parameters are kept in a fixed canonical order (see [`Model::param_names`]);
/// gradients from [`Model::backward`] land in each parameter's `grad` buffer.
#[derive(Debug)]
pub struct Model<T = f32> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    norm_names: Vec<String>,
    stats: Vec<RunningStats<T>>,
    tape: Option<(Tape<T>, Var<T>)>,
}

impl<T: Scalar> Clone for Model<T> {
    /// Clones weights and buffers; a pending forward tape is not carried over.
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.clone(),
            norm_names: self.norm_names.clone(),
            stats: self.stats.clone(),
            tape: None,
        }
    }
}

impl Model<f32> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_as(config, seed)
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model: He fan-in normal conv weights,
    /// zero biases, BN gamma 1 / beta 0.
    pub fn build_as(config: &ModelConfig, seed: u64) -> Result<Self> {
        let plan = Plan::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = plan
            .params
            .iter()
            .map(|spec| match spec.init {
                Init::He { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&spec.shape, |_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
                }
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, T::one()),
            })
            .collect();
        Ok(Self::assemble(config.clone(), plan, params, None))
    }

    pub(crate) fn assemble(
        config: ModelConfig,
        plan: Plan,
        params: Vec<Tensor<T>>,
        stats: Option<Vec<RunningStats<T>>>,
    ) -> Self {
        let stats = stats.unwrap_or_else(|| plan.norms.iter().map(|(_, c)| RunningStats::new(*c)).collect());
        Model {
            config,
            layout: plan.layout,
            names: plan.params.into_iter().map(|p| p.name).collect(),
            params,
            norm_names: plan.norms.into_iter().map(|(n, _)| n).collect(),
            stats,
            tape: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn norm_names(&self) -> &[String] {
        &self.norm_names
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            norm_names: self.norm_names.clone(),
            stats: self.stats.iter().map(RunningStats::cast).collect(),
            tape: None,
        }
    }

    /// `(name, gradient)` for every parameter that has one.
    pub fn gradients(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.names
            .iter()
            .zip(&self.params)
            .filter_map(|(n, p)| p.grad().map(|g| (n.as_str(), g)))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.clear_grad();
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = input.dims4()?;
        let p = self.config.patch_size;
        if c != self.config.in_channels || h != p || w != p {
            return Err(Error::contract(format!(
                "model expects input (n, {}, {p}, {p}), got {:?}",
                self.config.in_channels,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass. Train mode records a tape for [`Model::backward`] and
    /// updates BN running statistics; infer mode is a pure function of the
    /// weights and the input.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(input)?;
        match mode {
            Mode::Infer => {
                self.tape = None;
                self.predict(input)
            }
            Mode::Train => {
                let mut tape = Tape::new(true);
                let out = run(
                    &self.layout,
                    &self.params,
                    &mut self.stats,
                    &mut tape,
                    input,
                    Mode::Train,
                )?;
                let value = out.value.clone();
                self.tape = Some((tape, out));
                Ok(value)
            }
        }
    }

    /// Infer-mode forward through a shared reference.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut stats = self.stats.clone();
        let mut tape = Tape::new(false);
        let out = run(&self.layout, &self.params, &mut stats, &mut tape, input, Mode::Infer)?;
        Ok(out.value)
    }

    /// ReLU sign fingerprint of the pending train-mode tape.
    pub fn relu_signature(&self) -> Option<u64> {
        self.tape.as_ref().map(|(t, _)| t.relu_signature())
    }

    /// Back-propagates `loss_grad` (gradient of the loss w.r.t. the forward
    /// output) and stores each parameter gradient in its `grad` buffer.
    pub fn backward(&mut self, loss_grad: &Tensor<T>) -> Result<()> {
        let (tape, out) = self
            .tape
            .take()
            .ok_or_else(|| Error::contract("backward called without a train-mode forward tape"))?;
        let refs: Vec<&Tensor<T>> = self.params.iter().collect();
        let grads = tape.backward(&out, loss_grad, &refs)?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.set_grad(g.into_data())?;
        }
        Ok(())
    }
}

fn conv<T: Scalar>(tape: &mut Tape<T>, x: &Var<T>, params: &[Tensor<T>], c: ConvIdx) -> Result<Var<T>> {
    tape.conv2d(
        x,
        (c.weight, &params[c.weight]),
        (c.bias, &params[c.bias]),
        c.stride,
        c.pad,
    )
}

fn norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Var<T>,
    params: &[Tensor<T>],
    stats: &mut [RunningStats<T>],
    b: BnIdx,
    mode: Mode,
) -> Result<Var<T>> {
    tape.batchnorm2d(
        x,
        (b.gamma, &params[b.gamma]),
        (b.beta, &params[b.beta]),
        &mut stats[b.stats],
        mode,
        BN_MOMENTUM,
        BN_EPS,
    )
}

fn block<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Var<T>,
    params: &[Tensor<T>],
    stats: &mut [RunningStats<T>],
    b: &BlockIdx,
    mode: Mode,
) -> Result<Var<T>> {
    let h = norm(tape, x, params, stats, b.bn1, mode)?;
    let h = tape.relu(&h);
    let h = conv(tape, &h, params, b.conv1)?;
    let h = norm(tape, &h, params, stats, b.bn2, mode)?;
    let h = tape.relu(&h);
    let h = conv(tape, &h, params, b.conv2)?;
    tape.add(&h, x)
}

fn run<T: Scalar>(
    layout: &Layout,
    params: &[Tensor<T>],
    stats: &mut [RunningStats<T>],
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<Var<T>> {
    let x = tape.leaf(input.clone());
    let mut x = conv(tape, &x, params, layout.stem)?;
    let mut skips: Vec<Var<T>> = Vec::with_capacity(layout.encoder.len());
    for level in &layout.encoder {
        if let Some(down) = level.down {
            x = conv(tape, &x, params, down)?;
        }
        for b in &level.blocks {
            x = block(tape, &x, params, stats, b, mode)?;
        }
        skips.push(x.clone());
    }
    // the deepest level feeds the decoder directly
    skips.pop();
    for level in &layout.decoder {
        let skip = skips
            .pop()
            .ok_or_else(|| Error::contract("decoder deeper than encoder"))?;
        x = conv(tape, &x, params, level.reduce)?;
        x = tape.upsample2x(&x)?;
        x = tape.add(&x, &skip)?;
        for b in &level.blocks {
            x = block(tape, &x, params, stats, b, mode)?;
        }
    }
    let logits = conv(tape, &x, params, layout.head)?;
    Ok(tape.sigmoid(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_builds_with_256_deepest_channels() {
        let m = Model::build(&ModelConfig::default(), 0).unwrap();
        let deepest = m.param("enc3.block0.conv1.weight").unwrap();
        assert_eq!(deepest.shape(), &[256, 256, 3, 3]);
        assert_eq!(m.parameter_count(), ModelConfig::default().parameter_count());
    }

    #[test]
    fn names_are_unique() {
        let m = Model::build(&ModelConfig::default(), 0).unwrap();
        let mut names = m.param_names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.param_names().len());
    }

    #[test]
    fn same_seed_same_params() {
        let a = Model::build(&ModelConfig::tiny(), 7).unwrap();
        let b = Model::build(&ModelConfig::tiny(), 7).unwrap();
        let c = Model::build(&ModelConfig::tiny(), 8).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_ne!(a.params()[0], c.params()[0]);
    }

    #[test]
    fn output_in_open_unit_interval_and_same_size() {
        let mut m = Model::build(&ModelConfig::tiny(), 1).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 31) % 97) as f32 / 97.0);
        let y = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_spatial_size_rejected() {
        let m = Model::build(&ModelConfig::tiny(), 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(m.predict(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_without_forward_is_contract_violation() {
        let mut m = Model::build(&ModelConfig::tiny(), 1).unwrap();
        let g = Tensor::zeros(&[1, 1, 32, 32]);
        assert!(matches!(m.backward(&g), Err(Error::Contract(_))));
        // infer-mode forward does not leave a tape behind either
        m.forward(&Tensor::zeros(&[1, 1, 32, 32]), Mode::Infer).unwrap();
        assert!(matches!(m.backward(&g), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_loss_grad_gives_zero_param_grads() {
        let mut m = Model::build(&ModelConfig::tiny(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 13) as f32 / 13.0);
        m.forward(&x, Mode::Train).unwrap();
        m.backward(&Tensor::zeros(&[2, 1, 32, 32])).unwrap();
        let mut count = 0;
        for (_, g) in m.gradients() {
            assert!(g.iter().all(|&v| v == 0.0));
            count += 1;
        }
        assert_eq!(count, m.params().len());
    }
}
