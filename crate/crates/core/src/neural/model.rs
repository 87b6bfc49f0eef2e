//! The five-layer EMI regression network.
//!
//! Layers 1-4 are conv(same) -> batch norm -> ReLU. Layer 5 is a bare
//! convolution whose kernel spans the whole sensing-coil axis, mapping an
//! `N_FE x N_s x 2` input stack to an `N_FE x 1 x 2` prediction.

use rand::Rng;

use super::act::{relu_backward, relu_in_place};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use super::norm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNorm, BatchNormCache, Mode};
use super::tensor::Tensor;
use super::train::TrainHyper;
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Channel counts and kernel heights of the full-size network.
pub const FULL_CHANNELS: [usize; 5] = [128, 64, 32, 32, 2];
pub const FULL_KERNELS: [usize; 5] = [11, 9, 5, 1, 7];

/// Network shape. Kernels are square for layers 1-4; layer 5 uses
/// `kernels[4]` on the FE axis and `n_sense` on the sensing axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub n_sense: usize,
    pub channels: [usize; 5],
    pub kernels: [usize; 5],
}

impl CnnConfig {
    pub fn full(n_sense: usize) -> Self {
        Self { n_sense, channels: FULL_CHANNELS, kernels: FULL_KERNELS }
    }

    /// Hidden channel counts divided by `divisor` (at least 1 each); the two
    /// output channels are kept.
    pub fn scaled(n_sense: usize, divisor: usize) -> Self {
        let d = divisor.max(1);
        let mut channels = FULL_CHANNELS.map(|c| (c / d).max(1));
        channels[4] = 2;
        Self { n_sense, channels, kernels: FULL_KERNELS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sense == 0 {
            return Err(Error::Shape("network needs at least one sensing coil".into()));
        }
        if self.channels[4] != 2 {
            return Err(Error::Shape("final layer must have 2 channels (real, imaginary)".into()));
        }
        if self.channels.contains(&0) || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Shape(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }

    pub fn geometries(&self) -> [ConvGeometry; 5] {
        let mut in_c = 2;
        std::array::from_fn(|l| {
            let last = l == 4;
            let g = ConvGeometry {
                in_channels: in_c,
                out_channels: self.channels[l],
                kernel_h: self.kernels[l],
                kernel_w: if last { self.n_sense } else { self.kernels[l] },
                padding: if last { Padding::ValidWidth } else { Padding::Same },
            };
            in_c = self.channels[l];
            g
        })
    }

    /// Trainable parameters: conv weights and biases plus batch-norm scale
    /// and shift.
    pub fn param_count(&self) -> usize {
        let convs: usize = self.geometries().iter().map(|g| g.weight_len() + g.out_channels).sum();
        let norms: usize = self.channels[..4].iter().map(|c| 2 * c).sum();
        convs + norms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Statistics used by batch norm when the model runs in inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceStats {
    Running,
    Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub convs: Vec<ConvLayer>,
    pub norms: Vec<BatchNorm>,
    pub hyper: TrainHyper,
    pub inference_stats: InferenceStats,
}

/// Activations kept by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each convolution; for layers 2-5 this is the previous ReLU output.
    conv_inputs: Vec<Tensor>,
    norm_caches: Vec<BatchNormCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_weight: Vec<Vec<f64>>,
    pub conv_bias: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub input: Tensor,
}

impl CnnModel {
    /// Fresh model with weights and biases uniform in `+/- 1/sqrt(fan_in)`,
    /// drawn from `hyper.seed`.
    pub fn new(config: CnnConfig, hyper: TrainHyper) -> Result<Self> {
        config.validate()?;
        let convs = config
            .geometries()
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let mut rng = substream(hyper.seed, Domain::WeightInit, l as u64);
                let bound = 1.0 / (g.fan_in() as f64).sqrt();
                let weight = (0..g.weight_len()).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..g.out_channels).map(|_| rng.random_range(-bound..bound)).collect();
                ConvLayer { geometry: *g, weight, bias }
            })
            .collect();
        let norms = config.channels[..4].iter().map(|&c| BatchNorm::new(c)).collect();
        Ok(Self { config, convs, norms, hyper, inference_stats: InferenceStats::Running })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let [_, c, h, w] = input.shape();
        if c != 2 || w != self.config.n_sense || h == 0 {
            return Err(Error::Shape(format!(
                "network expects batch x 2 x N_FE x {} input, got {:?}",
                self.config.n_sense,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass; batch norm uses `self.inference_stats`.
    pub fn forward_infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in 0..4 {
            let conv = &self.convs[l];
            let y = conv2d_forward(&x, &conv.weight, &conv.bias, &conv.geometry)?;
            let mut y = match self.inference_stats {
                InferenceStats::Running => batchnorm_infer(&y, &self.norms[l])?,
                InferenceStats::Batch if y.batch() >= 2 => batchnorm_train(&y, &self.norms[l])?.0,
                InferenceStats::Batch => batchnorm_infer(&y, &self.norms[l])?,
            };
            relu_in_place(&mut y);
            x = y;
        }
        let last = &self.convs[4];
        conv2d_forward(&x, &last.weight, &last.bias, &last.geometry)
    }

    /// Training pass with batch statistics. Running statistics are updated.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut conv_inputs = Vec::with_capacity(5);
        let mut norm_caches = Vec::with_capacity(4);
        let mut x = input.clone();
        for l in 0..4 {
            let conv = &self.convs[l];
            let y = conv2d_forward(&x, &conv.weight, &conv.bias, &conv.geometry)?;
            let (mut y, stats, cache) = batchnorm_train(&y, &self.norms[l])?;
            self.norms[l].update_running(&stats);
            relu_in_place(&mut y);
            conv_inputs.push(x);
            norm_caches.push(cache);
            x = y;
        }
        let last = &self.convs[4];
        let out = conv2d_forward(&x, &last.weight, &last.bias, &last.geometry)?;
        conv_inputs.push(x);
        Ok((out, ForwardCache { conv_inputs, norm_caches }))
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(output)` for the
    /// train-mode pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<Gradients> {
        let mut conv_weight = vec![Vec::new(); 5];
        let mut conv_bias = vec![Vec::new(); 5];
        let mut gamma = vec![Vec::new(); 4];
        let mut beta = vec![Vec::new(); 4];

        let last = &self.convs[4];
        let g = conv2d_backward(grad_out, &cache.conv_inputs[4], &last.weight, &last.geometry)?;
        conv_weight[4] = g.weight;
        conv_bias[4] = g.bias;
        let mut grad = g.input;
        for l in (0..4).rev() {
            // the next layer's input is this layer's ReLU output
            grad = relu_backward(&grad, &cache.conv_inputs[l + 1])?;
            let bn = batchnorm_backward(&grad, &self.norms[l], &cache.norm_caches[l])?;
            gamma[l] = bn.gamma;
            beta[l] = bn.beta;
            let conv = &self.convs[l];
            let g = conv2d_backward(&bn.input, &cache.conv_inputs[l], &conv.weight, &conv.geometry)?;
            conv_weight[l] = g.weight;
            conv_bias[l] = g.bias;
            grad = g.input;
        }
        Ok(Gradients { conv_weight, conv_bias, gamma, beta, input: grad })
    }

    /// Trainable parameter groups in a fixed order, paired with gradients by
    /// [`Gradients::groups`].
    pub fn param_groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(18);
        let mut norms = self.norms.iter_mut();
        for conv in self.convs.iter_mut() {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
            if let Some(n) = norms.next() {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    /// Every stored array (trainable and running statistics) with a stable name.
    pub fn named_arrays(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", l + 1), conv.weight.as_slice()));
            out.push((format!("conv{}.bias", l + 1), conv.bias.as_slice()));
            if let Some(n) = self.norms.get(l) {
                out.push((format!("bn{}.gamma", l + 1), n.gamma.as_slice()));
                out.push((format!("bn{}.beta", l + 1), n.beta.as_slice()));
                out.push((format!("bn{}.running_mean", l + 1), n.running_mean.as_slice()));
                out.push((format!("bn{}.running_var", l + 1), n.running_var.as_slice()));
            }
        }
        out
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (l, conv) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{}.weight", l + 1), &mut conv.weight));
            out.push((format!("conv{}.bias", l + 1), &mut conv.bias));
            if let Some(n) = norms.next() {
                out.push((format!("bn{}.gamma", l + 1), &mut n.gamma));
                out.push((format!("bn{}.beta", l + 1), &mut n.beta));
                out.push((format!("bn{}.running_mean", l + 1), &mut n.running_mean));
                out.push((format!("bn{}.running_var", l + 1), &mut n.running_var));
            }
        }
        out
    }
}

impl Gradients {
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(18);
        for l in 0..5 {
            out.push(&self.conv_weight[l]);
            out.push(&self.conv_bias[l]);
            if l < 4 {
                out.push(&self.gamma[l]);
                out.push(&self.beta[l]);
            }
        }
        out
    }
}

/// Run the network. Train mode uses and updates batch statistics.
pub fn model_forward(model: &mut CnnModel, input: &Tensor, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => Ok(model.forward_train(input)?.0),
        Mode::Infer => model.forward_infer(input),
    }
}
