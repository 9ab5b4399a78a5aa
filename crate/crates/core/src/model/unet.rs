//! U-Net that regresses a per-pixel elevation map from an RGB image.
//!
//! Encoder: `depth` levels of double conv + max pool, filter count doubling
//! per level. Decoder: nearest-neighbor upsample followed by a 1x1 conv
//! block halving the channels, concatenation with the matching encoder
//! skip, then a double conv. The 1-channel head ends in ReLU so predicted
//! elevations are never negative.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pool, ConvBlock, Conv2dLayer, DoubleConv, Network};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, relu, upsample2_nearest, Mode, Tensor};

#[derive(Debug, Clone)]
pub struct UNetConfig {
    /// Input height and width (the network is square).
    pub input_size: usize,
    /// Filters at the first level; doubled per downsampling level.
    pub base_filters: usize,
    /// Number of down/up levels.
    pub depth: usize,
    /// Odd convolution kernel size.
    pub kernel: usize,
}

impl Default for UNetConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        UNetConfig {
            input_size: 64,
            base_filters: 8,
            depth: 4,
            kernel: 3,
        }
    }
}

impl UNetConfig {
    /// Full-scale configuration: 256-px inputs, 32 base filters, 5x5 kernels.
    pub fn full_scale() -> Self {
        UNetConfig {
            input_size: 256,
            base_filters: 32,
            depth: 4,
            kernel: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("unet kernel {} must be odd", self.kernel)));
        }
        if self.depth == 0 || self.base_filters == 0 {
            return Err(Error::Config("unet depth and base_filters must be positive".to_string()));
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "unet input size {} must be divisible by 2^depth = {}",
                self.input_size, div
            )));
        }
        Ok(())
    }
}

struct UpStage {
    /// 1x1 conv block applied after upsampling, halving the channels.
    reduce: ConvBlock,
    /// Double conv applied after the skip concatenation.
    fuse: DoubleConv,
}

pub struct UNet {
    pub cfg: UNetConfig,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up: Vec<UpStage>,
    head: Conv2dLayer,
}

impl UNet {
    pub fn build(cfg: &UNetConfig, seed: u64) -> Result<UNet> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.base_filters;
        let k = cfg.kernel;

        let mut enc = Vec::with_capacity(cfg.depth);
        let mut cin = 3;
        for level in 0..cfg.depth {
            let cout = f << level;
            enc.push(DoubleConv::new(k, cin, cout, &mut rng));
            cin = cout;
        }
        let bottleneck = DoubleConv::new(k, cin, f << cfg.depth, &mut rng);

        let mut up = Vec::with_capacity(cfg.depth);
        for level in (0..cfg.depth).rev() {
            let c = f << level;
            up.push(UpStage {
                reduce: ConvBlock::new(1, 2 * c, c, &mut rng),
                fuse: DoubleConv::new(k, 2 * c, c, &mut rng),
            });
        }
        let head = Conv2dLayer::new(1, f, 1, &mut rng);
        // A ReLU head with zero bias can start dead (all pre-activations
        // negative kills every gradient); a small positive bias keeps it live.
        head.bias.data_mut()[0] = 0.05;
        Ok(UNet {
            cfg: cfg.clone(),
            enc,
            bottleneck,
            up,
            head,
        })
    }

    /// `[N,S,S,3]` RGB in, `[N,S,S,1]` non-negative elevation out.
    pub fn forward(&self, rgb: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.cfg.input_size;
        if rgb.shape().len() != 4 || rgb.shape()[1] != s || rgb.shape()[2] != s || rgb.shape()[3] != 3
        {
            return Err(Error::shape(
                "unet",
                format!("expected [N,{s},{s},3], got {:?}", rgb.shape()),
            ));
        }
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut h = rgb.clone();
        for stage in &self.enc {
            let activated = stage.forward(&h, mode)?;
            skips.push(activated.clone());
            h = pool(&activated)?;
        }
        h = self.bottleneck.forward(&h, mode)?;
        for stage in &self.up {
            let skip = skips.pop().expect("one skip per up stage");
            h = upsample2_nearest(&h)?;
            h = stage.reduce.forward(&h, mode)?;
            h = concat_channels(&skip, &h)?;
            h = stage.fuse.forward(&h, mode)?;
        }
        Ok(relu(&self.head.forward(&h)?))
    }

    /// Channel width entering the decoder's fuse stage at up-stage `i`
    /// (after the skip concatenation).
    pub fn fuse_in_channels(&self, i: usize) -> usize {
        self.up[i].fuse.first.conv.kernel.shape()[2]
    }
}

impl Network for UNet {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.enc.iter().enumerate() {
            stage.collect(&format!("enc{i}"), &mut out);
        }
        self.bottleneck.collect("bottleneck", &mut out);
        for (i, stage) in self.up.iter().enumerate() {
            stage.reduce.collect(&format!("up{i}.reduce"), &mut out);
            stage.fuse.collect(&format!("up{i}.fuse"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }

    fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.enc.iter().enumerate() {
            stage.collect_buffers(&format!("enc{i}"), &mut out);
        }
        self.bottleneck.collect_buffers("bottleneck", &mut out);
        for (i, stage) in self.up.iter().enumerate() {
            stage.reduce.collect_buffers(&format!("up{i}.reduce"), &mut out);
            stage.fuse.collect_buffers(&format!("up{i}.fuse"), &mut out);
        }
        out
    }
}
