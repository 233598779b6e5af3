//! The shared-parameter image encoder:
//! `conv1 → relu → pool → conv2 → relu → pool → dense1 → relu → dense2`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_backward, dense, dense_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, sgd_update, Param, Pooled, Tensor,
};

pub const CONV1: usize = 0;
pub const CONV2: usize = 1;
pub const DENSE1: usize = 2;
pub const DENSE2: usize = 3;
pub const LAYER_NAMES: [&str; 4] = ["conv1", "conv2", "dense1", "dense2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub image_size: usize,
    pub kernel: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    /// Feature dimension `d`.
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: 3,
            image_size: 24,
            kernel: 3,
            conv1: 8,
            conv2: 16,
            hidden: 64,
            embed_dim: 32,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.in_channels, self.kernel, self.conv1, self.conv2, self.hidden, self.embed_dim];
        if dims.contains(&0) || self.kernel.is_multiple_of(2) || self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn flattened(&self) -> usize {
        let s = self.image_size / 4;
        self.conv2 * s * s
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.image_size, self.image_size]
    }

    /// `(weight shape, bias length)` for each layer.
    pub fn layer_shapes(&self) -> [(Vec<usize>, usize); 4] {
        let k = self.kernel;
        [
            (vec![self.conv1, self.in_channels, k, k], self.conv1),
            (vec![self.conv2, self.conv1, k, k], self.conv2),
            (vec![self.hidden, self.flattened()], self.hidden),
            (vec![self.embed_dim, self.hidden], self.embed_dim),
        ]
    }

    fn fan_in(weight_shape: &[usize]) -> usize {
        weight_shape[1..].iter().product()
    }
}

/// Which layers receive updates during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FreezeMode {
    /// Only the two dense layers train.
    FcOnly,
    /// Dense layers plus the last convolution.
    FcPlusLastConv,
    All,
}

impl FreezeMode {
    pub fn first_trainable(self) -> usize {
        match self {
            FreezeMode::FcOnly => DENSE1,
            FreezeMode::FcPlusLastConv => CONV2,
            FreezeMode::All => CONV1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FreezeMode::FcOnly => "fc_only",
            FreezeMode::FcPlusLastConv => "fc_plus_lastconv",
            FreezeMode::All => "all",
        }
    }
}

impl fmt::Display for FreezeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreezeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc_only" => Ok(FreezeMode::FcOnly),
            "fc_plus_lastconv" => Ok(FreezeMode::FcPlusLastConv),
            "all" => Ok(FreezeMode::All),
            other => Err(Error::Config(format!(
                "unknown freeze mode `{other}` (fc_only, fc_plus_lastconv, all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Param,
    pub bias: Param,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Gradients for every encoder layer, same shapes as the weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl LayerGradients {
    pub fn zeros(arch: &Architecture) -> Self {
        LayerGradients {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(w, b)| (Tensor::zeros(&w), Tensor::zeros(&[b])))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, a: f64, other: &LayerGradients) -> Result<()> {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.axpy(a, ow)?;
            b.axpy(a, ob)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for (w, b) in &mut self.layers {
            w.data_mut().iter_mut().for_each(|v| *v *= a);
            b.data_mut().iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.is_finite() && b.is_finite())
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    conv1: Tensor,
    pool1: Pooled,
    conv2: Tensor,
    pool2: Pooled,
    flat: Tensor,
    hidden: Tensor,
    hidden_act: Tensor,
    pub output: Tensor,
}

impl ForwardCache {
    /// Relu signs and pooling winners of this pass. Two passes with equal
    /// patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self, out: &mut Vec<u64>) {
        for t in [&self.conv1, &self.conv2, &self.hidden] {
            out.extend(t.data().iter().map(|&v| u64::from(v > 0.0)));
        }
        for p in [&self.pool1, &self.pool2] {
            out.extend(p.argmax.iter().map(|&i| i as u64));
        }
    }
}

impl EncoderParams {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases, zero velocities.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, freeze: FreezeMode, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .zip(LAYER_NAMES)
            .map(|((w, b), name)| {
                let std = (2.0 / Architecture::fan_in(&w) as f64).sqrt();
                Layer {
                    name: name.to_string(),
                    weight: Param::new(Tensor::randn(&w, std, rng)),
                    bias: Param::new(Tensor::zeros(&[b])),
                    frozen: false,
                }
            })
            .collect();
        let mut p = EncoderParams { arch, layers };
        p.set_freeze(freeze);
        Ok(p)
    }

    /// Assemble from weight/bias pairs in layer order, checking every shape.
    pub fn from_tensors(arch: Architecture, tensors: Vec<(String, Tensor, Tensor)>) -> Result<Self> {
        arch.validate()?;
        if tensors.len() != 4 {
            return Err(Error::Malformed(format!(
                "encoder has 4 layers, got {}",
                tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(4);
        for (((name, w, b), (ws, bs)), expected) in tensors.into_iter().zip(arch.layer_shapes()).zip(LAYER_NAMES) {
            if name != expected {
                return Err(Error::Malformed(format!(
                    "expected layer `{expected}`, found `{name}`"
                )));
            }
            if w.shape() != ws.as_slice() || b.shape() != [bs] {
                let mut got = w.shape().to_vec();
                got.push(b.len());
                let mut want = ws;
                want.push(bs);
                return Err(Error::LayerShape {
                    layer: name,
                    expected: want,
                    got,
                });
            }
            layers.push(Layer {
                name,
                weight: Param::new(w),
                bias: Param::new(b),
                frozen: false,
            });
        }
        Ok(EncoderParams { arch, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn set_freeze(&mut self, mode: FreezeMode) {
        let first = mode.first_trainable();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.frozen = i < first;
        }
    }

    /// Index of the first layer that is not frozen, or the layer count.
    pub fn first_trainable(&self) -> usize {
        self.layers.iter().position(|l| !l.frozen).unwrap_or(self.layers.len())
    }

    pub fn zero_velocities(&mut self) {
        for l in &mut self.layers {
            l.weight.velocity.fill(0.0);
            l.bias.velocity.fill(0.0);
        }
    }

    fn w(&self, i: usize) -> &Tensor {
        &self.layers[i].weight.value
    }

    fn b(&self, i: usize) -> &Tensor {
        &self.layers[i].bias.value
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        input.expect_shape("encoder input", &self.arch.input_shape())?;
        let conv1 = conv2d(input, self.w(CONV1), self.b(CONV1))?;
        let pool1 = maxpool2d(&relu(&conv1))?;
        let conv2 = conv2d(&pool1.output, self.w(CONV2), self.b(CONV2))?;
        let pool2 = maxpool2d(&relu(&conv2))?;
        let flat = pool2.output.clone().reshape(&[self.arch.flattened()])?;
        let hidden = dense(&flat, self.w(DENSE1), self.b(DENSE1))?;
        let hidden_act = relu(&hidden);
        let output = dense(&hidden_act, self.w(DENSE2), self.b(DENSE2))?;
        Ok(ForwardCache {
            input: input.clone(),
            conv1,
            pool1,
            conv2,
            pool2,
            flat,
            hidden,
            hidden_act,
            output,
        })
    }

    /// Feature vector `X` of a preprocessed image.
    pub fn encode(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input)?.output)
    }

    /// Accumulate `d output` back through the network into `grads`, for
    /// layers `first_layer..`. Earlier layers are neither differentiated nor
    /// passed through.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &Tensor,
        first_layer: usize,
        grads: &mut LayerGradients,
    ) -> Result<()> {
        if first_layer > DENSE2 {
            return Ok(());
        }
        let g = dense_backward(&cache.hidden_act, self.w(DENSE2), d_output, first_layer < DENSE2)?;
        accumulate(grads, DENSE2, &g.dweight, &g.dbias)?;
        let Some(d_act) = g.dx else { return Ok(()) };

        let d_hidden = relu_backward(&cache.hidden, &d_act)?;
        let g = dense_backward(&cache.flat, self.w(DENSE1), &d_hidden, first_layer < DENSE1)?;
        accumulate(grads, DENSE1, &g.dweight, &g.dbias)?;
        let Some(d_flat) = g.dx else { return Ok(()) };

        let d_pool2 = d_flat.reshape(cache.pool2.output.shape())?;
        let d_relu2 = maxpool2d_backward(cache.conv2.shape(), &cache.pool2, &d_pool2)?;
        let d_conv2 = relu_backward(&cache.conv2, &d_relu2)?;
        let g = conv2d_backward(&cache.pool1.output, self.w(CONV2), &d_conv2, first_layer < CONV2)?;
        accumulate(grads, CONV2, &g.dkernels, &g.dbias)?;
        let Some(d_pool1) = g.dx else { return Ok(()) };

        let d_relu1 = maxpool2d_backward(cache.conv1.shape(), &cache.pool1, &d_pool1)?;
        let d_conv1 = relu_backward(&cache.conv1, &d_relu1)?;
        let g = conv2d_backward(&cache.input, self.w(CONV1), &d_conv1, false)?;
        accumulate(grads, CONV1, &g.dkernels, &g.dbias)
    }

    /// Momentum SGD on every non-frozen layer.
    pub fn sgd_update(&mut self, grads: &LayerGradients, lr: f64, momentum: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_update layers",
                expected: vec![self.layers.len()],
                got: vec![grads.layers.len()],
            });
        }
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            sgd_update(&mut l.weight, gw, lr, momentum, l.frozen)?;
            sgd_update(&mut l.bias, gb, lr, momentum, l.frozen)?;
        }
        Ok(())
    }

    /// Multiply every weight and bias by `a`; velocities untouched.
    pub fn scale_layer(&mut self, layer: usize, a: f64) {
        let l = &mut self.layers[layer];
        l.weight.value = l.weight.value.scale(a);
        l.bias.value = l.bias.value.scale(a);
    }
}

fn accumulate(grads: &mut LayerGradients, layer: usize, dw: &Tensor, db: &Tensor) -> Result<()> {
    let (w, b) = &mut grads.layers[layer];
    w.axpy(1.0, dw)?;
    b.axpy(1.0, db)
}
