//! Model architectures: layer building blocks, the elevation U-Net, the
//! scale/angle regressor, and the autoencoder.

mod autoencoder;
mod scale_angle;
mod unet;

pub use autoencoder::{Autoencoder, AutoencoderConfig};
pub use scale_angle::{ScaleAngleConfig, ScaleAngleModel};
pub use unet::{UNet, UNetConfig};

use std::collections::HashMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm, conv2d, dense, he_uniform, load_checkpoint, maxpool2, relu, save_checkpoint,
    BnStats, Mode, Padding, Tensor,
};

/// Anything with named parameters and buffers. Parameters are trainable;
/// buffers (running statistics, normalization constants) ride along in
/// checkpoints but are excluded from [`count_params`].
pub trait Network {
    fn params(&self) -> Vec<(String, Tensor)>;
    fn buffers(&self) -> Vec<(String, Tensor)> {
        Vec::new()
    }
}

/// Exact number of trainable scalars.
pub fn count_params(net: &impl Network) -> usize {
    net.params().iter().map(|(_, t)| t.numel()).sum()
}

/// Parameter tensors only, in declaration order (what the optimizer sees).
pub fn param_tensors(net: &impl Network) -> Vec<Tensor> {
    net.params().into_iter().map(|(_, t)| t).collect()
}

/// Saves parameters and buffers to a GPW1 checkpoint.
pub fn save_model(path: &Path, net: &impl Network) -> Result<()> {
    let mut entries = Vec::new();
    for (name, t) in net.params().into_iter().chain(net.buffers()) {
        entries.push((name, t.shape().to_vec(), t.data().clone()));
    }
    save_checkpoint(path, &entries)
}

/// Loads a checkpoint into an already-built model, matching tensors by name
/// and validating shapes.
pub fn load_model(path: &Path, net: &impl Network) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    let mut by_name: HashMap<String, (Vec<usize>, Vec<f32>)> = loaded
        .into_iter()
        .map(|t| (t.name, (t.shape, t.data)))
        .collect();
    for (name, t) in net.params().into_iter().chain(net.buffers()) {
        let (shape, data) = by_name.remove(&name).ok_or_else(|| {
            Error::format(path.display().to_string(), format!("missing tensor `{name}`"))
        })?;
        if shape != t.shape() {
            return Err(Error::shape(
                "load_model",
                format!("tensor `{}`: checkpoint {:?} vs model {:?}", name, shape, t.shape()),
            ));
        }
        let mut dst = t.data_mut();
        for (d, s) in dst.iter_mut().zip(&data) {
            *d = f64::from(*s);
        }
    }
    Ok(())
}

/// Convolution layer with He-uniform kernel and zero bias.
pub struct Conv2dLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
}

impl Conv2dLayer {
    pub fn new(k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Conv2dLayer {
        Conv2dLayer {
            kernel: he_uniform(&[k, k, cin, cout], k * k * cin, rng).requires_grad(),
            bias: Tensor::zeros(&[cout]).requires_grad(),
            padding: Padding::Same,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.kernel, &self.bias, self.padding)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.kernel"), self.kernel.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Per-channel batch normalization layer.
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: BnStats,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Tensor::full(&[channels], 1.0).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
            stats: BnStats::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        batchnorm(x, &self.gamma, &self.beta, mode, &self.stats)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.running_mean"), self.stats.mean.clone()));
        out.push((format!("{prefix}.running_var"), self.stats.var.clone()));
    }
}

/// conv -> batch norm -> ReLU.
pub struct ConvBlock {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
}

impl ConvBlock {
    pub fn new(k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> ConvBlock {
        ConvBlock {
            conv: Conv2dLayer::new(k, cin, cout, rng),
            bn: BatchNorm2d::new(cout),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(relu(&self.bn.forward(&self.conv.forward(x)?, mode)?))
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv.collect(&format!("{prefix}.conv"), out);
        self.bn.collect(&format!("{prefix}.bn"), out);
    }

    fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.bn.collect_buffers(&format!("{prefix}.bn"), out);
    }
}

/// Two stacked conv blocks, the repeated motif in all three architectures.
pub struct DoubleConv {
    pub first: ConvBlock,
    pub second: ConvBlock,
}

impl DoubleConv {
    pub fn new(k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> DoubleConv {
        DoubleConv {
            first: ConvBlock::new(k, cin, cout, rng),
            second: ConvBlock::new(k, cout, cout, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.second.forward(&self.first.forward(x, mode)?, mode)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.first.collect(&format!("{prefix}.0"), out);
        self.second.collect(&format!("{prefix}.1"), out);
    }

    fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.first.collect_buffers(&format!("{prefix}.0"), out);
        self.second.collect_buffers(&format!("{prefix}.1"), out);
    }
}

/// Fully connected layer with He-uniform weights and zero bias.
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
        DenseLayer {
            weights: he_uniform(&[fan_in, fan_out], fan_in, rng).requires_grad(),
            bias: Tensor::zeros(&[fan_out]).requires_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dense(x, &self.weights, &self.bias)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weights"), self.weights.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub(crate) fn pool(x: &Tensor) -> Result<Tensor> {
    maxpool2(x)
}
