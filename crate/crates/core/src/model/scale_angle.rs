//! Convolutional regressor for the scale and angle components of pose.
//!
//! Five double-convolution blocks with max pooling in between, then six
//! fully connected layers ending in two linear outputs. Targets are
//! z-scored per training split; the stored mean/std buffers map network
//! outputs back to physical units.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pool, DenseLayer, DoubleConv, Network};
use crate::error::{Error, Result};
use crate::tensor::{relu, reshape, Mode, Tensor};

pub const CONV_BLOCKS: usize = 5;
pub const FC_LAYERS: usize = 6;

#[derive(Debug, Clone)]
pub struct ScaleAngleConfig {
    pub input_size: usize,
    /// 1 (elevation only), 3 (RGB only) or 4 (RGB + elevation).
    pub input_channels: usize,
    /// Output widths of the five conv blocks.
    pub conv_channels: Vec<usize>,
    /// Output widths of the six dense layers; the last must be 2.
    pub fc_sizes: Vec<usize>,
    pub kernel: usize,
}

impl ScaleAngleConfig {
    /// Desk-scale configuration for the given channel variant.
    pub fn toy(input_channels: usize) -> Self {
        ScaleAngleConfig {
            input_size: 64,
            input_channels,
            conv_channels: vec![8, 16, 32, 64, 128],
            fc_sizes: vec![256, 128, 64, 32, 16, 2],
            kernel: 3,
        }
    }

    /// Full-scale configuration. With 224-px inputs the five poolings leave
    /// a 7x7x256 grid (12544 flattened); a 256-px input would instead leave
    /// 8x8x256, so both shapes cannot hold at once under same-padding.
    pub fn full_scale() -> Self {
        ScaleAngleConfig {
            input_size: 224,
            input_channels: 4,
            conv_channels: vec![16, 32, 64, 128, 256],
            fc_sizes: vec![512, 128, 64, 32, 16, 2],
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != CONV_BLOCKS {
            return Err(Error::Config(format!(
                "scale-angle model needs exactly {} conv blocks, got {}",
                CONV_BLOCKS,
                self.conv_channels.len()
            )));
        }
        if self.fc_sizes.len() != FC_LAYERS || *self.fc_sizes.last().unwrap() != 2 {
            return Err(Error::Config(format!(
                "scale-angle model needs {} dense layers ending in width 2, got {:?}",
                FC_LAYERS, self.fc_sizes
            )));
        }
        if !matches!(self.input_channels, 1 | 3 | 4) {
            return Err(Error::Config(format!(
                "scale-angle input channels must be 1, 3 or 4, got {}",
                self.input_channels
            )));
        }
        let div = 1usize << CONV_BLOCKS;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "scale-angle input size {} must be divisible by {}",
                self.input_size, div
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("scale-angle kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Flattened feature count after the conv stack.
    pub fn flat_features(&self) -> usize {
        let side = self.input_size >> CONV_BLOCKS;
        side * side * self.conv_channels[CONV_BLOCKS - 1]
    }
}

pub struct ScaleAngleModel {
    pub cfg: ScaleAngleConfig,
    blocks: Vec<DoubleConv>,
    fcs: Vec<DenseLayer>,
    /// Mean of (scale, angle) over the training split, physical units.
    pub target_mean: Tensor,
    /// Standard deviation of (scale, angle) over the training split.
    pub target_std: Tensor,
}

impl ScaleAngleModel {
    pub fn build(cfg: &ScaleAngleConfig, seed: u64) -> Result<ScaleAngleModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(CONV_BLOCKS);
        let mut cin = cfg.input_channels;
        for &cout in &cfg.conv_channels {
            blocks.push(DoubleConv::new(cfg.kernel, cin, cout, &mut rng));
            cin = cout;
        }
        let mut fcs = Vec::with_capacity(FC_LAYERS);
        let mut fan_in = cfg.flat_features();
        for &width in &cfg.fc_sizes {
            fcs.push(DenseLayer::new(fan_in, width, &mut rng));
            fan_in = width;
        }
        Ok(ScaleAngleModel {
            cfg: cfg.clone(),
            blocks,
            fcs,
            target_mean: Tensor::zeros(&[2]),
            target_std: Tensor::full(&[2], 1.0),
        })
    }

    /// `[N,S,S,C]` in, `[N,2]` out in standardized target space. The channel
    /// count is enforced, which is how the input-variant experiments differ.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.cfg.input_size;
        let c = self.cfg.input_channels;
        if x.shape().len() != 4 || x.shape()[1] != s || x.shape()[2] != s || x.shape()[3] != c {
            return Err(Error::shape(
                "scale_angle",
                format!("expected [N,{s},{s},{c}], got {:?}", x.shape()),
            ));
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = pool(&block.forward(&h, mode)?)?;
        }
        let n = h.shape()[0];
        h = reshape(&h, &[n, self.cfg.flat_features()])?;
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(&h)?;
            if i + 1 < self.fcs.len() {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    /// Eval-mode predictions in physical units: (scale px/cm, angle rad).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<(f64, f64)>> {
        let out = self.forward(x, Mode::Eval)?;
        let mean = self.target_mean.data();
        let std = self.target_std.data();
        let pairs: Vec<(f64, f64)> = out
            .data()
            .chunks_exact(2)
            .map(|row| (row[0] * std[0] + mean[0], row[1] * std[1] + mean[1]))
            .collect();
        Ok(pairs)
    }

    /// Stores the training-split standardization constants.
    pub fn set_target_stats(&self, mean: [f64; 2], std: [f64; 2]) {
        self.target_mean.data_mut().copy_from_slice(&mean);
        self.target_std.data_mut().copy_from_slice(&std);
    }
}

impl Network for ScaleAngleModel {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("block{i}"), &mut out);
        }
        for (i, fc) in self.fcs.iter().enumerate() {
            fc.collect(&format!("fc{i}"), &mut out);
        }
        out
    }

    fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_buffers(&format!("block{i}"), &mut out);
        }
        out.push(("target_mean".to_string(), self.target_mean.clone()));
        out.push(("target_std".to_string(), self.target_std.clone()));
        out
    }
}
